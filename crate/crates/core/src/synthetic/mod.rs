//! Synthetic embedding bundles with known generating factors.
//!
//! Images follow `Y → X ← {Z_i}`: each image is built from a class
//! prototype, one offset per attribute value, and a class × combination
//! interaction term, plus Gaussian noise:
//!
//! ```text
//! x = normalize(u_y + Σ_i v_{i, z_i} + w_{y, z} + σ · ε),   ε ~ N(0, I)
//! ```
//!
//! The attribute-aware anchor for `(y, z)` is the noiseless version of the
//! same vector, so at `σ = 0` every image's best-scoring anchor is its own
//! generating pair. Class-only anchors describe each class in its typical
//! context (the spurious value for the designated attribute, value 0
//! elsewhere), which is what an attribute-free prompt implicitly encodes.
//! Class-agnostic anchors replace the class prototype with a fixed
//! placeholder direction.

pub mod oracle;
pub mod text_hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::schema::{
    enumerate_combinations, render_manifest, AttributeCombination, AttributeSchema, AttributeValue,
    ContextualAttribute, RenderingMode,
};
use crate::scoring::AnchorSet;
use crate::store::{EmbeddingMatrix, EmbeddingSet, GroupValues, ImageMetadata};

pub use oracle::{brute_force_posteriors, OracleResult};
pub use text_hash::{demo_text_schema, generate_from_captions, HashTextEncoder, TextPipelineSpec};

/// Parameters of the generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSpec {
    pub dim: usize,
    pub n_classes: usize,
    pub attribute_sizes: Vec<usize>,
    /// Magnitude of each attribute-value offset (γ).
    pub attribute_strength: f64,
    /// Magnitude of each class × combination interaction term.
    pub interaction_strength: f64,
    /// Attribute whose value co-occurs with the class.
    pub spurious_attribute: Option<usize>,
    /// Probability (ρ) that the spurious attribute takes the class's
    /// typical value; otherwise it is drawn uniformly.
    pub spurious_correlation: f64,
    /// Per-coordinate standard deviation of the image noise (σ).
    pub noise: f64,
    /// Miscalibration of the text side: for every class, one randomly
    /// chosen attribute-aware anchor is pulled toward the next class's
    /// prototype by this amount. Images are unaffected.
    #[serde(default)]
    pub anchor_leak: f64,
    pub seed: u64,
}

impl Default for GenerativeSpec {
    fn default() -> Self {
        Self {
            dim: 64,
            n_classes: 5,
            attribute_sizes: vec![2, 3],
            attribute_strength: 1.0,
            interaction_strength: 1.0,
            spurious_attribute: Some(0),
            spurious_correlation: 0.0,
            noise: 0.0,
            anchor_leak: 0.0,
            seed: 0,
        }
    }
}

impl GenerativeSpec {
    /// Two classes and one binary background-like attribute that agrees
    /// with the class with probability `rho` (plus chance).
    pub fn spurious(rho: f64) -> Self {
        Self {
            n_classes: 2,
            attribute_sizes: vec![2],
            spurious_attribute: Some(0),
            spurious_correlation: rho,
            noise: 0.1,
            ..Self::default()
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("generative spec: {m}")));
        if self.dim == 0 || self.n_classes == 0 {
            return bad("dim and n_classes must be positive".into());
        }
        if self.attribute_sizes.contains(&0) {
            return bad("every attribute needs at least one value".into());
        }
        if !(self.attribute_strength > 0.0) {
            return bad(format!("attribute strength must be > 0, got {}", self.attribute_strength));
        }
        if !(self.interaction_strength >= 0.0) {
            return bad("interaction strength must be ≥ 0".into());
        }
        if !(self.anchor_leak >= 0.0) {
            return bad(format!("anchor leak must be ≥ 0, got {}", self.anchor_leak));
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise must be ≥ 0, got {}", self.noise));
        }
        if !(0.0..=1.0).contains(&self.spurious_correlation) {
            return bad(format!("ρ must lie in [0, 1], got {}", self.spurious_correlation));
        }
        if let Some(a) = self.spurious_attribute {
            if a >= self.attribute_sizes.len() {
                return bad(format!("spurious attribute {a} does not exist"));
            }
        }
        Ok(())
    }

    pub fn combination_count(&self) -> usize {
        self.attribute_sizes.iter().product()
    }

    /// Schema whose names match the generated metadata: classes `class{y}`,
    /// attributes `attr{i}` with values `v{j}`, one description per value.
    pub fn schema(&self) -> AttributeSchema {
        let attributes = self
            .attribute_sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| ContextualAttribute {
                name: attribute_name(i),
                values: (0..n)
                    .map(|j| AttributeValue {
                        name: value_name(j),
                        descriptions: vec![format!("attr{i} {}", value_name(j))],
                    })
                    .collect(),
            })
            .collect();
        AttributeSchema::new(
            "a photo of a {class}".into(),
            RenderingMode::Concat,
            (0..self.n_classes).map(|y| format!("class{y}")).collect(),
            attributes,
        )
        .expect("generated schema is valid")
    }

    /// Typical attribute values of a class.
    pub fn typical_combo(&self, class_id: usize) -> Vec<usize> {
        self.attribute_sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                if Some(i) == self.spurious_attribute {
                    class_id % n
                } else {
                    0
                }
            })
            .collect()
    }
}

pub fn attribute_name(i: usize) -> String {
    format!("attr{i}")
}

pub fn value_name(j: usize) -> String {
    format!("v{j}")
}

/// Ground truth for one generated image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    pub class_id: usize,
    pub combo: Vec<usize>,
    pub combo_index: usize,
}

/// Generated images, anchors, and the matching schema.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: GenerativeSpec,
    pub schema: AttributeSchema,
    pub images: EmbeddingSet,
    pub anchors: AnchorSet,
    pub truth: Vec<GroundTruth>,
}

impl SyntheticDataset {
    /// Text bundles carrying the anchors under manifest ids, so the
    /// standard anchor-building path reproduces them: attribute-aware,
    /// class-only, and class-agnostic, in that order.
    pub fn text_sets(&self) -> Result<(EmbeddingSet, EmbeddingSet, EmbeddingSet)> {
        let dim = self.anchors.dim();
        let (n_classes, n_combos) = (self.anchors.n_classes(), self.anchors.n_combos());

        let full = render_manifest(&self.schema)?;
        let mut rows = Vec::with_capacity(full.len() * dim);
        for y in 0..n_classes {
            for k in 0..n_combos {
                rows.extend_from_slice(self.anchors.anchor(y, k));
            }
        }
        let ids = full.entries.iter().map(|e| e.id.clone()).collect();
        let aware = EmbeddingSet::texts(EmbeddingMatrix::new(dim, ids, rows)?);

        let plain = render_manifest(&self.schema.without_attributes())?;
        let mut rows = Vec::with_capacity(n_classes * dim);
        for y in 0..n_classes {
            rows.extend_from_slice(self.anchors.class_only(y).expect("generated"));
        }
        let ids = plain.entries.iter().map(|e| e.id.clone()).collect();
        let class_only = EmbeddingSet::texts(EmbeddingMatrix::new(dim, ids, rows)?);

        let agnostic = render_manifest(&self.schema.class_agnostic(PLACEHOLDER_CLASS)?)?;
        let mut rows = Vec::with_capacity(n_combos * dim);
        for k in 0..n_combos {
            rows.extend_from_slice(self.anchors.class_agnostic(k).expect("generated"));
        }
        let ids = agnostic.entries.iter().map(|e| e.id.clone()).collect();
        let class_agnostic = EmbeddingSet::texts(EmbeddingMatrix::new(dim, ids, rows)?);

        Ok((aware, class_only, class_agnostic))
    }
}

/// Placeholder class word for class-agnostic prompts.
pub const PLACEHOLDER_CLASS: &str = "object";

fn random_direction(rng: &mut ChaCha8Rng, dim: usize, magnitude: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x * magnitude / n).collect()
}

fn unit_f32(v: &[f64]) -> Result<Vec<f32>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-12 {
        return Err(Error::Invalid("generated vector has zero norm".into()));
    }
    Ok(v.iter().map(|x| (x / n) as f32).collect())
}

/// Per-row generator, independent of how rows are scheduled.
fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64 + 1);
    rng
}

/// Latent vectors drawn once per spec.
struct Latents {
    prototypes: Vec<Vec<f64>>,
    offsets: Vec<Vec<Vec<f64>>>,
    interactions: Vec<Vec<f64>>,
    placeholder: Vec<f64>,
    leaky_combos: Vec<usize>,
}

impl Latents {
    fn draw(spec: &GenerativeSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let prototypes: Vec<_> = (0..spec.n_classes)
            .map(|_| random_direction(&mut rng, spec.dim, 1.0))
            .collect();
        for i in 0..prototypes.len() {
            for j in 0..i {
                let d: f64 = prototypes[i].iter().zip(&prototypes[j]).map(|(a, b)| a * b).sum();
                if d > 1.0 - 1e-9 {
                    return Err(Error::Invalid(format!(
                        "generative spec: prototypes {j} and {i} coincide"
                    )));
                }
            }
        }
        let offsets = spec
            .attribute_sizes
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| random_direction(&mut rng, spec.dim, spec.attribute_strength))
                    .collect()
            })
            .collect();
        let interactions = (0..spec.n_classes * spec.combination_count())
            .map(|_| random_direction(&mut rng, spec.dim, spec.interaction_strength))
            .collect();
        let placeholder = random_direction(&mut rng, spec.dim, 1.0);
        let leaky_combos = (0..spec.n_classes)
            .map(|_| rng.random_range(0..spec.combination_count()))
            .collect();
        Ok(Self {
            prototypes,
            offsets,
            interactions,
            placeholder,
            leaky_combos,
        })
    }

    /// Noiseless embedding of `(class, combo)`.
    fn signal(&self, spec: &GenerativeSpec, class_id: usize, combo: &[usize], combo_index: usize) -> Vec<f64> {
        let mut v = self.prototypes[class_id].clone();
        for (i, &z) in combo.iter().enumerate() {
            for (a, b) in v.iter_mut().zip(&self.offsets[i][z]) {
                *a += b;
            }
        }
        let w = &self.interactions[class_id * spec.combination_count() + combo_index];
        for (a, b) in v.iter_mut().zip(w) {
            *a += b;
        }
        v
    }

    fn agnostic(&self, combo: &[usize]) -> Vec<f64> {
        let mut v = self.placeholder.clone();
        for (i, &z) in combo.iter().enumerate() {
            for (a, b) in v.iter_mut().zip(&self.offsets[i][z]) {
                *a += b;
            }
        }
        v
    }
}

/// Draws `n_images` images with ground truth, plus the anchors that match
/// the generating process. Deterministic in `spec.seed` for any thread
/// count.
pub fn generate(spec: &GenerativeSpec, n_images: usize) -> Result<SyntheticDataset> {
    spec.validate()?;
    let schema = spec.schema();
    let latents = Latents::draw(spec)?;
    let combos: Vec<AttributeCombination> = enumerate_combinations(&schema).collect();
    let n_combos = combos.len();

    let mut anchor_data = Vec::with_capacity(spec.n_classes * n_combos * spec.dim);
    for y in 0..spec.n_classes {
        for (k, combo) in combos.iter().enumerate() {
            let mut v = latents.signal(spec, y, combo.indices(), k);
            if spec.anchor_leak > 0.0 && latents.leaky_combos[y] == k {
                let target = &latents.prototypes[(y + 1) % spec.n_classes];
                for (a, b) in v.iter_mut().zip(target) {
                    *a += spec.anchor_leak * b;
                }
            }
            anchor_data.extend(unit_f32(&v)?);
        }
    }
    let mut class_only = Vec::with_capacity(spec.n_classes * spec.dim);
    for y in 0..spec.n_classes {
        let typical = AttributeCombination(spec.typical_combo(y));
        let k = schema.combo_index(&typical)?;
        class_only.extend(unit_f32(&latents.signal(spec, y, typical.indices(), k))?);
    }
    let mut agnostic = Vec::with_capacity(n_combos * spec.dim);
    for combo in &combos {
        agnostic.extend(unit_f32(&latents.agnostic(combo.indices()))?);
    }
    let anchors = AnchorSet::from_vectors(spec.dim, spec.n_classes, n_combos, anchor_data)?
        .with_class_only(class_only)?
        .with_class_agnostic(agnostic)?;

    let rows = par::try_map_indexed(n_images, |i| -> Result<(Vec<f32>, GroundTruth)> {
        let mut rng = row_rng(spec.seed, i);
        let class_id = rng.random_range(0..spec.n_classes);
        let mut combo: Vec<usize> = spec
            .attribute_sizes
            .iter()
            .map(|&n| rng.random_range(0..n))
            .collect();
        if let Some(a) = spec.spurious_attribute {
            if rng.random::<f64>() < spec.spurious_correlation {
                combo[a] = spec.typical_combo(class_id)[a];
            }
        }
        let combo_index = schema.combo_index(&AttributeCombination(combo.clone()))?;
        let mut v = latents.signal(spec, class_id, &combo, combo_index);
        if spec.noise > 0.0 {
            for x in v.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *x += spec.noise * e;
            }
        }
        let id = format!("img{i:06}");
        Ok((
            unit_f32(&v)?,
            GroundTruth {
                id,
                class_id,
                combo,
                combo_index,
            },
        ))
    })?;

    let (vectors, truth): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let images = truth_to_set(spec.dim, &schema, &truth, vectors.concat())?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        schema,
        images,
        anchors,
        truth,
    })
}

/// Packs vectors and ground truth into a labeled bundle with group values
/// named after `schema`.
pub(crate) fn truth_to_set(
    dim: usize,
    schema: &AttributeSchema,
    truth: &[GroundTruth],
    data: Vec<f32>,
) -> Result<EmbeddingSet> {
    let ids = truth.iter().map(|t| t.id.clone()).collect();
    let labels = truth.iter().map(|t| Some(t.class_id)).collect();
    let groups = truth
        .iter()
        .map(|t| {
            let mut g = GroupValues::new();
            for (attr, &z) in schema.attributes().iter().zip(&t.combo) {
                g.insert(attr.name.clone(), attr.values[z].name.clone());
            }
            Some(g)
        })
        .collect();
    EmbeddingSet::new(
        EmbeddingMatrix::new(dim, ids, data)?,
        ImageMetadata {
            labels: Some(labels),
            groups: Some(groups),
        },
    )
}
