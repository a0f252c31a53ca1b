//! Attribute-conditioned zero-shot classification over precomputed
//! image and text embeddings.
//!
//! Prompts are rendered from an [`AttributeSchema`], embedded elsewhere,
//! and averaged into one anchor per `(class, attribute combination)`.
//! Each image is scored against every anchor, and classification either
//! conditions on known attribute values or first infers them from the
//! image.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod inference;
pub mod numeric;
pub mod par;
pub mod schema;
pub mod scoring;
pub mod store;
pub mod synthetic;

pub use error::{Error, Result};
pub use evaluation::{evaluate, ConditioningSource, EvaluationReport};
pub use inference::{predict, Estimator, InferenceConfig, Mode, Prediction, TemperaturePlacement};
pub use schema::{AttributeCombination, AttributeSchema, PromptManifest, RenderingMode};
pub use scoring::{build_anchors, score_all, AnchorSet, ScoreRow};
pub use store::{load_normalized, save_bundle, EmbeddingMatrix, EmbeddingSet};
