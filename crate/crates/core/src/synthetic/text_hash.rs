//! A toy text encoder and a caption-driven image generator.
//!
//! The encoder maps lowercase tokens and unordered token pairs to seeded
//! Gaussian vectors and sums them. Pair features let a phrase like
//! "dog, dark" differ from the sum of its words, so prompts whose
//! descriptions match an image's caption score higher than prompts with
//! scrambled descriptions, which only share the class tokens.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{truth_to_set, GroundTruth};
use crate::error::{Error, Result};
use crate::par;
use crate::schema::{
    description_choice_count, render_prompt, AttributeCombination, AttributeSchema, AttributeValue,
    ContextualAttribute, PromptManifest, RenderingMode,
};
use crate::store::{EmbeddingMatrix, EmbeddingSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HashTextEncoder {
    pub dim: usize,
    /// Weight of the token-pair features relative to single tokens.
    pub pair_weight: f64,
    pub seed: u64,
}

impl Default for HashTextEncoder {
    fn default() -> Self {
        Self {
            dim: 64,
            pair_weight: 1.0,
            seed: 0,
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl HashTextEncoder {
    fn feature(&self, key: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key.as_bytes());
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(bytes));
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect()
    }

    /// Unnormalized feature sum.
    fn raw(&self, text: &str) -> Vec<f64> {
        let tokens = tokenize(text);
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            for (a, b) in v.iter_mut().zip(self.feature(t)) {
                *a += b;
            }
        }
        if self.pair_weight != 0.0 {
            let unique: Vec<&String> = tokens.iter().collect::<BTreeSet<_>>().into_iter().collect();
            for i in 0..unique.len() {
                for j in i + 1..unique.len() {
                    let f = self.feature(&format!("{}|{}", unique[i], unique[j]));
                    for (a, b) in v.iter_mut().zip(f) {
                        *a += self.pair_weight * b;
                    }
                }
            }
        }
        v
    }

    /// Unit-norm embedding of `text`.
    pub fn encode(&self, text: &str) -> Result<Vec<f32>> {
        let v = self.raw(text);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-12 {
            return Err(Error::Invalid(format!("text `{text}` has no tokens")));
        }
        Ok(v.iter().map(|x| (x / n) as f32).collect())
    }

    /// Encodes every manifest entry, keyed by its id.
    pub fn encode_manifest(&self, manifest: &PromptManifest) -> Result<EmbeddingMatrix> {
        let rows = par::try_map_indexed(manifest.len(), |i| self.encode(&manifest.entries[i].text))?;
        let ids = manifest.entries.iter().map(|e| e.id.clone()).collect();
        EmbeddingMatrix::new(self.dim, ids, rows.concat())
    }
}

/// Parameters for images drawn from rendered captions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextPipelineSpec {
    pub encoder: HashTextEncoder,
    pub n_images: usize,
    /// Per-coordinate noise added to the caption embedding.
    pub noise: f64,
    pub seed: u64,
}

impl Default for TextPipelineSpec {
    fn default() -> Self {
        Self {
            encoder: HashTextEncoder::default(),
            n_images: 1000,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Each image is the encoding of a true caption: a uniform class and
/// combination, one uniformly chosen description per attribute, rendered
/// with `schema`, plus noise.
pub fn generate_from_captions(
    schema: &AttributeSchema,
    spec: &TextPipelineSpec,
) -> Result<(EmbeddingSet, Vec<GroundTruth>)> {
    if !(spec.noise >= 0.0) {
        return Err(Error::Invalid(format!("noise must be ≥ 0, got {}", spec.noise)));
    }
    let sizes = schema.attribute_sizes();
    let n_classes = schema.classes().len();
    let dim = spec.encoder.dim;
    let rows = par::try_map_indexed(spec.n_images, |i| -> Result<(Vec<f32>, GroundTruth)> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64 + 1);
        let class_id = rng.random_range(0..n_classes);
        let combo: Vec<usize> = sizes.iter().map(|&n| rng.random_range(0..n)).collect();
        let combination = AttributeCombination(combo.clone());
        let combo_index = schema.combo_index(&combination)?;
        let desc_index = rng.random_range(0..description_choice_count(schema, &combination));
        let caption = render_prompt(schema, class_id, &combination, desc_index)?;
        let mut v = spec.encoder.raw(&caption);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in v.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *x = *x / n + spec.noise * e;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok((
            v.iter().map(|x| (x / n) as f32).collect(),
            GroundTruth {
                id: format!("img{i:06}"),
                class_id,
                combo,
                combo_index,
            },
        ))
    })?;
    let (vectors, truth): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let set = truth_to_set(dim, schema, &truth, vectors.concat())?;
    Ok((set, truth))
}

/// Ten animal classes with orientation, illumination, and background.
pub fn demo_text_schema() -> AttributeSchema {
    let value = |name: &str, descs: &[&str]| AttributeValue {
        name: name.into(),
        descriptions: descs.iter().map(|s| s.to_string()).collect(),
    };
    let attributes = vec![
        ContextualAttribute {
            name: "orientation".into(),
            values: vec![
                value("upright", &["upright", "the photo is upright"]),
                value("upside-down", &["upside-down", "the photo is upside-down"]),
            ],
        },
        ContextualAttribute {
            name: "illumination".into(),
            values: vec![
                value("bright", &["bright", "the photo is bright"]),
                value("dark", &["dark", "the photo is dark"]),
            ],
        },
        ContextualAttribute {
            name: "background".into(),
            values: vec![
                value("indoor", &["indoor", "the photo is indoor"]),
                value("natural", &["natural", "in nature"]),
                value("urban", &["urban", "in the city"]),
            ],
        },
    ];
    let classes = ["dog", "cat", "bird", "fish", "horse", "sheep", "cow", "bear", "frog", "snake"];
    AttributeSchema::new(
        "a photo of a {class}".into(),
        RenderingMode::Concat,
        classes.iter().map(|s| s.to_string()).collect(),
        attributes,
    )
    .expect("demo schema is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::dot;
    use crate::schema::render_manifest;

    #[test]
    fn tokens_keep_hyphens() {
        assert_eq!(tokenize("A photo of a Dog, upside-down."), ["a", "photo", "of", "a", "dog", "upside-down"]);
    }

    #[test]
    fn encoding_is_deterministic_and_unit() {
        let enc = HashTextEncoder::default();
        let a = enc.encode("a photo of a dog.").unwrap();
        assert_eq!(a, enc.encode("A photo of a dog").unwrap());
        let n = dot(&a, &a);
        assert!((n - 1.0).abs() < 1e-5);
        let other = HashTextEncoder { seed: 1, ..enc };
        assert_ne!(a, other.encode("a photo of a dog.").unwrap());
        assert!(enc.encode(", .").is_err());
    }

    #[test]
    fn pair_features_separate_word_order_free_phrases() {
        let enc = HashTextEncoder::default();
        let base = enc.encode("a photo of a dog, dark.").unwrap();
        let near = enc.encode("a photo of a dog, the photo is dark.").unwrap();
        let far = enc.encode("a photo of a cat, bright.").unwrap();
        assert!(dot(&base, &near) > dot(&base, &far));
    }

    #[test]
    fn manifest_encoding_follows_ids() {
        let schema = demo_text_schema();
        let manifest = render_manifest(&schema).unwrap();
        let m = HashTextEncoder::default().encode_manifest(&manifest).unwrap();
        assert_eq!(m.rows(), 10 * 12 * 8);
        assert_eq!(m.ids()[0], "0:0:0");
    }

    #[test]
    fn caption_images_carry_truth() {
        let schema = demo_text_schema();
        let spec = TextPipelineSpec {
            n_images: 50,
            ..TextPipelineSpec::default()
        };
        let (set, truth) = generate_from_captions(&schema, &spec).unwrap();
        assert_eq!(set.matrix.rows(), 50);
        assert_eq!(truth.len(), 50);
        set.check_labels(10).unwrap();
        let again = generate_from_captions(&schema, &spec).unwrap();
        assert_eq!(set, again.0);
    }
}
