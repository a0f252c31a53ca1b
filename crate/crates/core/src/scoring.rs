//! Image–text similarity scores.
//!
//! Text anchors are the normalized mean of the text embeddings of every
//! description choice for a `(class, combination)` pair. Image rows and
//! anchors are unit vectors, so every score is a plain inner product in
//! `[-1, 1]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric;
use crate::par;
use crate::schema::{AttributeSchema, PromptManifest};
use crate::store::EmbeddingMatrix;

/// Default ceiling on `|classes| × |combinations|`.
pub const DEFAULT_ANCHOR_BUDGET: usize = 5_000_000;

/// Tolerance on anchor norms.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// Mean of `rows`, rescaled to unit norm. `None` when the mean is (nearly)
/// the zero vector.
pub fn mean_direction<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f32]>) -> Option<Vec<f32>> {
    let mut acc = vec![0f64; dim];
    let mut n = 0usize;
    for row in rows {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return None;
    }
    Some(acc.iter().map(|a| (a / norm) as f32).collect())
}

/// Cached anchors for every `(class, combination)` pair, plus the optional
/// class-only anchors used by single-template scoring and the
/// class-agnostic anchors used by the PureAttr estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    dim: usize,
    n_classes: usize,
    n_combos: usize,
    data: Vec<f32>,
    class_only: Option<Vec<f32>>,
    class_agnostic: Option<Vec<f32>>,
}

impl AnchorSet {
    /// Wraps precomputed unit vectors laid out class-major:
    /// `data[(class * n_combos + combo) * dim ..]`.
    pub fn from_vectors(dim: usize, n_classes: usize, n_combos: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || n_combos == 0 {
            return Err(Error::Invalid("anchor set needs dim > 0 and at least one combination".into()));
        }
        if data.len() != dim * n_classes * n_combos {
            return Err(Error::Invalid(format!(
                "anchor data has {} values, expected {}",
                data.len(),
                dim * n_classes * n_combos
            )));
        }
        check_unit_rows(dim, &data)?;
        Ok(Self {
            dim,
            n_classes,
            n_combos,
            data,
            class_only: None,
            class_agnostic: None,
        })
    }

    /// Attaches class-only anchors (one per class) for single-template scoring.
    pub fn with_class_only(mut self, data: Vec<f32>) -> Result<Self> {
        if data.len() != self.dim * self.n_classes {
            return Err(Error::Invalid(format!(
                "class-only anchors: expected {} values, found {}",
                self.dim * self.n_classes,
                data.len()
            )));
        }
        check_unit_rows(self.dim, &data)?;
        self.class_only = Some(data);
        Ok(self)
    }

    /// Attaches class-agnostic anchors (one per combination).
    pub fn with_class_agnostic(mut self, data: Vec<f32>) -> Result<Self> {
        if data.len() != self.dim * self.n_combos {
            return Err(Error::Invalid(format!(
                "class-agnostic anchors: expected {} values, found {}",
                self.dim * self.n_combos,
                data.len()
            )));
        }
        check_unit_rows(self.dim, &data)?;
        self.class_agnostic = Some(data);
        Ok(self)
    }

    /// Takes the class-only anchors from a set built over a schema with no
    /// attributes.
    pub fn attach_class_only(self, plain: &AnchorSet) -> Result<Self> {
        if plain.n_combos != 1 || plain.n_classes != self.n_classes {
            return Err(Error::Invalid(format!(
                "class-only anchors need {} classes × 1 combination, found {} × {}",
                self.n_classes, plain.n_classes, plain.n_combos
            )));
        }
        self.with_class_only(plain.data.clone())
    }

    /// Takes the class-agnostic anchors from a set built over the
    /// placeholder-class version of the schema.
    pub fn attach_class_agnostic(self, agnostic: &AnchorSet) -> Result<Self> {
        if agnostic.n_classes != 1 || agnostic.n_combos != self.n_combos {
            return Err(Error::Invalid(format!(
                "class-agnostic anchors need 1 class × {} combinations, found {} × {}",
                self.n_combos, agnostic.n_classes, agnostic.n_combos
            )));
        }
        self.with_class_agnostic(agnostic.data.clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_combos(&self) -> usize {
        self.n_combos
    }

    pub fn len(&self) -> usize {
        self.n_classes * self.n_combos
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn anchor(&self, class_id: usize, combo_index: usize) -> &[f32] {
        let start = (class_id * self.n_combos + combo_index) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn class_only(&self, class_id: usize) -> Option<&[f32]> {
        self.class_only
            .as_ref()
            .map(|d| &d[class_id * self.dim..(class_id + 1) * self.dim])
    }

    pub fn class_agnostic(&self, combo_index: usize) -> Option<&[f32]> {
        self.class_agnostic
            .as_ref()
            .map(|d| &d[combo_index * self.dim..(combo_index + 1) * self.dim])
    }

    pub fn has_class_only(&self) -> bool {
        self.class_only.is_some()
    }

    pub fn has_class_agnostic(&self) -> bool {
        self.class_agnostic.is_some()
    }

    /// Same shape, every anchor replaced by an independent random unit
    /// vector. Used for chance-level baselines.
    pub fn randomized(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |len: usize| -> Vec<f32> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len / self.dim {
                let row: Vec<f32> = (0..self.dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let n = numeric::norm(&row);
                out.extend(row.iter().map(|v| (f64::from(*v) / n) as f32));
            }
            out
        };
        let data = fill(self.data.len());
        let class_only = self.class_only.as_ref().map(|d| fill(d.len()));
        let class_agnostic = self.class_agnostic.as_ref().map(|d| fill(d.len()));
        Self {
            data,
            class_only,
            class_agnostic,
            ..*self
        }
    }
}

fn check_unit_rows(dim: usize, data: &[f32]) -> Result<()> {
    for (i, row) in data.chunks_exact(dim).enumerate() {
        let n = numeric::norm(row);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Invalid(format!(
                "anchor row {i} has norm {n}, expected unit norm"
            )));
        }
    }
    Ok(())
}

/// Builds anchors for every `(class, combination)` of `schema` from text
/// embeddings keyed by manifest id. Text rows are expected to be
/// unit-normalized already; their mean is renormalized.
pub fn build_anchors(
    texts: &EmbeddingMatrix,
    manifest: &PromptManifest,
    schema: &AttributeSchema,
    budget: usize,
) -> Result<AnchorSet> {
    let n_classes = schema.classes().len();
    let n_combos = schema.combination_count().ok_or(Error::AnchorBudget {
        count: usize::MAX,
        budget,
    })?;
    let count = n_classes.saturating_mul(n_combos);
    if count > budget {
        return Err(Error::AnchorBudget { count, budget });
    }

    let index = texts.index();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); count];
    for entry in &manifest.entries {
        if entry.class_id >= n_classes || entry.combo_index >= n_combos {
            return Err(Error::Invalid(format!(
                "manifest entry `{}` is outside the schema ({n_classes} classes × {n_combos} combinations)",
                entry.id
            )));
        }
        let row = *index
            .get(entry.id.as_str())
            .ok_or_else(|| Error::MissingText { id: entry.id.clone() })?;
        groups[entry.class_id * n_combos + entry.combo_index].push(row);
    }

    let dim = texts.dim();
    let rows = par::try_map_indexed(count, |slot| {
        let (class_id, combo_index) = (slot / n_combos, slot % n_combos);
        if groups[slot].is_empty() {
            return Err(Error::Invalid(format!(
                "manifest has no prompts for class {class_id}, combination {combo_index}"
            )));
        }
        mean_direction(dim, groups[slot].iter().map(|&r| texts.row(r))).ok_or(
            Error::DegenerateAnchor {
                class_id,
                combo_index,
            },
        )
    })?;
    AnchorSet::from_vectors(dim, n_classes, n_combos, rows.concat())
}

/// Anchors for an arbitrary encoder: renders the manifest for `schema`,
/// embeds it with `encode`, and builds the anchor set.
pub fn build_anchors_with<F>(schema: &AttributeSchema, budget: usize, encode: F) -> Result<AnchorSet>
where
    F: Fn(&PromptManifest) -> Result<EmbeddingMatrix>,
{
    let manifest = crate::schema::render_manifest(schema)?;
    let texts = encode(&manifest)?;
    build_anchors(&texts, &manifest, schema, budget)
}

fn check_dims(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// Single-template similarity between an image and a class anchor.
pub fn clip1_score(image: &[f32], anchor: &[f32]) -> Result<f64> {
    check_dims(image, anchor)?;
    Ok(numeric::dot(image, anchor))
}

/// Template-ensemble similarity: the image against the normalized mean of
/// the template embeddings for one class.
pub fn ensemble_score(image: &[f32], templates: &[&[f32]]) -> Result<f64> {
    for t in templates {
        check_dims(image, t)?;
    }
    let anchor = mean_direction(image.len(), templates.iter().copied())
        .ok_or_else(|| Error::Invalid("template embeddings average to zero".into()))?;
    Ok(numeric::dot(image, &anchor))
}

/// All scores for one image: the `(class, combination)` table and, when
/// the anchor set carries them, class-only and class-agnostic scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    n_classes: usize,
    n_combos: usize,
    values: Vec<f64>,
    class_only: Option<Vec<f64>>,
    class_agnostic: Option<Vec<f64>>,
}

impl ScoreRow {
    /// Table laid out class-major: `values[class * n_combos + combo]`.
    pub fn new(n_classes: usize, n_combos: usize, values: Vec<f64>) -> Result<Self> {
        if n_classes == 0 || n_combos == 0 || values.len() != n_classes * n_combos {
            return Err(Error::Invalid(format!(
                "score table of {} values does not match {n_classes} × {n_combos}",
                values.len()
            )));
        }
        Ok(Self {
            n_classes,
            n_combos,
            values,
            class_only: None,
            class_agnostic: None,
        })
    }

    pub fn with_class_agnostic(mut self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.n_combos {
            return Err(Error::Invalid(format!(
                "{} class-agnostic scores for {} combinations",
                scores.len(),
                self.n_combos
            )));
        }
        self.class_agnostic = Some(scores);
        Ok(self)
    }

    pub fn with_class_only(mut self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.n_classes {
            return Err(Error::Invalid(format!(
                "{} class-only scores for {} classes",
                scores.len(),
                self.n_classes
            )));
        }
        self.class_only = Some(scores);
        Ok(self)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_combos(&self) -> usize {
        self.n_combos
    }

    pub fn get(&self, class_id: usize, combo_index: usize) -> f64 {
        self.values[class_id * self.n_combos + combo_index]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Scores of every class at one combination.
    pub fn at_combo(&self, combo_index: usize) -> Vec<f64> {
        (0..self.n_classes).map(|y| self.get(y, combo_index)).collect()
    }

    /// Scores of one class across combinations.
    pub fn for_class(&self, class_id: usize) -> &[f64] {
        &self.values[class_id * self.n_combos..(class_id + 1) * self.n_combos]
    }

    pub fn class_only(&self) -> Option<&[f64]> {
        self.class_only.as_deref()
    }

    pub fn class_agnostic(&self) -> Option<&[f64]> {
        self.class_agnostic.as_deref()
    }

    /// Every table value plus `offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        let shift = |v: &Vec<f64>| v.iter().map(|x| x + offset).collect::<Vec<_>>();
        Self {
            n_classes: self.n_classes,
            n_combos: self.n_combos,
            values: shift(&self.values),
            class_only: self.class_only.as_ref().map(shift),
            class_agnostic: self.class_agnostic.as_ref().map(shift),
        }
    }

    /// Every table value times `factor`, as a logit scale would apply.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: &Vec<f64>| v.iter().map(|x| x * factor).collect::<Vec<_>>();
        Self {
            n_classes: self.n_classes,
            n_combos: self.n_combos,
            values: scale(&self.values),
            class_only: self.class_only.as_ref().map(scale),
            class_agnostic: self.class_agnostic.as_ref().map(scale),
        }
    }
}

/// Scores one image against every anchor.
pub fn score_tensor(image: &[f32], anchors: &AnchorSet) -> Result<ScoreRow> {
    check_dims(image, &anchors.data[..anchors.dim])?;
    let values: Vec<f64> = anchors
        .data
        .chunks_exact(anchors.dim)
        .map(|a| numeric::dot(image, a))
        .collect();
    debug_assert!(values.iter().all(|v| v.abs() <= 1.0 + 1e-6));
    let mut row = ScoreRow::new(anchors.n_classes, anchors.n_combos, values)?;
    if let Some(d) = &anchors.class_only {
        row.class_only = Some(d.chunks_exact(anchors.dim).map(|a| numeric::dot(image, a)).collect());
    }
    if let Some(d) = &anchors.class_agnostic {
        row.class_agnostic = Some(d.chunks_exact(anchors.dim).map(|a| numeric::dot(image, a)).collect());
    }
    Ok(row)
}

/// Scores every image row, in row order.
pub fn score_all(images: &EmbeddingMatrix, anchors: &AnchorSet) -> Result<Vec<ScoreRow>> {
    if images.dim() != anchors.dim {
        return Err(Error::DimMismatch {
            expected: anchors.dim,
            found: images.dim(),
        });
    }
    par::try_map_indexed(images.rows(), |i| score_tensor(images.row(i), anchors))
}
