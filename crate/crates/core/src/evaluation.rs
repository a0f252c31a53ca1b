//! Accuracy, group robustness, attribute inference, and ablations.
//!
//! Counts are kept as integers and turned into fractions only for the
//! report. Average accuracy is sample-weighted; worst-group accuracy is
//! the minimum over non-empty `(class, group values)` cells.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{
    infer_attributes, predict, Estimator, InferenceConfig, Mode, Prediction, TemperaturePlacement,
};
use crate::par;
use crate::schema::{
    enumerate_combinations, randomize_descriptions, uses_description_sampling, AttributeSchema,
    PromptManifest,
};
use crate::scoring::{build_anchors_with, score_all, AnchorSet};
use crate::store::{EmbeddingMatrix, EmbeddingSet};
use crate::synthetic::PLACEHOLDER_CLASS;

/// Where conditioned mode takes its attribute values from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditioningSource {
    /// The ground-truth values in the bundle metadata.
    #[default]
    True,
    /// A deliberately wrong value for every conditioned attribute: the
    /// next value in schema order, wrapping around.
    Wrong,
}

/// What to run and how to group the results.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalOptions {
    pub config: InferenceConfig,
    pub conditioning: ConditioningSource,
    /// Attributes whose values are supplied in conditioned mode; `None`
    /// means every schema attribute.
    pub true_attrs: Option<Vec<String>>,
    /// Metadata attributes that define groups alongside the class; `None`
    /// means every schema attribute present in the metadata.
    pub group_attrs: Option<Vec<String>>,
    /// Also report per-attribute inference accuracy.
    pub attribute_inference: bool,
    /// Marks the report as coming from randomized descriptions.
    pub ablation: bool,
    /// Multiplies every score before inference; `None` leaves raw
    /// cosine similarities.
    pub logit_scale: Option<f64>,
}

/// A class together with the values of the grouping attributes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub class_id: usize,
    pub values: BTreeMap<String, String>,
}

impl std::fmt::Display for GroupKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "class {}", self.class_id)?;
        for (k, v) in &self.values {
            write!(f, ", {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub group: GroupKey,
    pub size: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Settings echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub mode: Mode,
    pub estimator: Estimator,
    pub temperature: f64,
    pub placement: TemperaturePlacement,
    pub conditioning: ConditioningSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_attrs: Option<Vec<String>>,
    pub schema_hash: String,
    pub ablation: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logit_scale: Option<f64>,
    /// Whether any description cross product was sampled down.
    pub description_sampling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_images: usize,
    pub correct: usize,
    pub top1_accuracy: f64,
    pub average_accuracy: f64,
    pub worst_group_accuracy: f64,
    pub gap: f64,
    pub per_group_accuracy: Vec<GroupAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribute_inference_accuracy: Option<BTreeMap<String, f64>>,
    pub warnings: Vec<String>,
    pub config: ReportConfig,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn labels(images: &EmbeddingSet, n_classes: usize) -> Result<Vec<usize>> {
    images.check_labels(n_classes)?;
    (0..images.matrix.rows())
        .map(|i| {
            images.metadata.label(i).ok_or_else(|| Error::Metadata {
                id: images.matrix.ids()[i].clone(),
                message: "no class label".into(),
            })
        })
        .collect()
}

/// Value index of `attr` for row `i`, read from the group metadata.
fn attribute_value(images: &EmbeddingSet, schema: &AttributeSchema, i: usize, attr: usize) -> Result<usize> {
    let a = &schema.attributes()[attr];
    let id = &images.matrix.ids()[i];
    let name = images
        .metadata
        .group(i)
        .and_then(|g| g.get(&a.name))
        .ok_or_else(|| Error::Metadata {
            id: id.clone(),
            message: format!("no value for attribute `{}`", a.name),
        })?;
    a.value_index(name).ok_or_else(|| Error::Metadata {
        id: id.clone(),
        message: format!("`{name}` is not a value of attribute `{}`", a.name),
    })
}

fn resolve_attrs(schema: &AttributeSchema, names: &Option<Vec<String>>) -> Result<Vec<usize>> {
    match names {
        None => Ok((0..schema.attributes().len()).collect()),
        Some(names) => names
            .iter()
            .map(|n| {
                schema
                    .attribute_index(n)
                    .ok_or_else(|| Error::schema("attributes", format!("no attribute named `{n}`")))
            })
            .collect(),
    }
}

/// Combinations consistent with the conditioning values of row `i`.
fn allowed_combos(
    images: &EmbeddingSet,
    schema: &AttributeSchema,
    i: usize,
    fixed: &[usize],
    source: ConditioningSource,
) -> Result<Vec<usize>> {
    let sizes = schema.attribute_sizes();
    let mut wanted = Vec::with_capacity(fixed.len());
    for &a in fixed {
        let v = attribute_value(images, schema, i, a)?;
        wanted.push(match source {
            ConditioningSource::True => v,
            ConditioningSource::Wrong => (v + 1) % sizes[a],
        });
    }
    Ok(enumerate_combinations(schema)
        .enumerate()
        .filter(|(_, c)| fixed.iter().zip(&wanted).all(|(&a, &v)| c.0[a] == v))
        .map(|(k, _)| k)
        .collect())
}

fn group_key(images: &EmbeddingSet, group_attrs: &[String], i: usize, class_id: usize) -> GroupKey {
    let mut values = BTreeMap::new();
    if let Some(g) = images.metadata.group(i) {
        for name in group_attrs {
            if let Some(v) = g.get(name) {
                values.insert(name.clone(), v.clone());
            }
        }
    }
    GroupKey { class_id, values }
}

/// Cells expected from the schema: every class crossed with every value of
/// the grouping attributes that the schema defines.
fn expected_groups(schema: &AttributeSchema, group_attrs: &[String]) -> Vec<GroupKey> {
    let mut keys = vec![BTreeMap::new()];
    for name in group_attrs {
        let Some(a) = schema.attribute_index(name).map(|i| &schema.attributes()[i]) else {
            continue;
        };
        keys = keys
            .into_iter()
            .flat_map(|k| {
                a.values.iter().map(move |v| {
                    let mut k = k.clone();
                    k.insert(name.clone(), v.name.clone());
                    k
                })
            })
            .collect();
    }
    (0..schema.classes().len())
        .flat_map(|class_id| {
            keys.iter().map(move |values| GroupKey {
                class_id,
                values: values.clone(),
            })
        })
        .collect()
}

/// Per-image predictions in input order.
pub fn classify(
    images: &EmbeddingSet,
    anchors: &AnchorSet,
    schema: &AttributeSchema,
    options: &EvalOptions,
) -> Result<Vec<Prediction>> {
    let n_classes = schema.classes().len();
    if anchors.n_classes() != n_classes || Some(anchors.n_combos()) != schema.combination_count() {
        return Err(Error::Invalid(format!(
            "anchors ({} classes × {} combinations) do not match the schema ({n_classes} classes × {} combinations)",
            anchors.n_classes(),
            anchors.n_combos(),
            schema.combination_count().unwrap_or(usize::MAX)
        )));
    }
    if let Some(scale) = options.logit_scale {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Invalid(format!("logit scale must be positive, got {scale}")));
        }
    }
    let fixed = resolve_attrs(schema, &options.true_attrs)?;
    let mut rows = score_all(&images.matrix, anchors)?;
    if let Some(scale) = options.logit_scale {
        rows = rows.iter().map(|r| r.scaled(scale)).collect();
    }
    par::try_map_indexed(rows.len(), |i| {
        let known = if options.config.mode == Mode::Conditioned {
            Some(allowed_combos(images, schema, i, &fixed, options.conditioning)?)
        } else {
            None
        };
        predict(&rows[i], &options.config, known.as_deref())
    })
}

/// Rounds to 9 significant digits so serialized floats are stable.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    class_id: usize,
    class: &'a str,
    class_posterior: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attr_posterior: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attributes: Option<BTreeMap<&'a str, &'a str>>,
}

/// One JSON object per prediction, in input order. Posteriors are rounded
/// to 9 significant digits; `attributes` names the most probable
/// combination when an attribute posterior is present.
pub fn predictions_jsonl(images: &EmbeddingSet, schema: &AttributeSchema, predictions: &[Prediction]) -> String {
    let mut out = String::new();
    for (id, p) in images.matrix.ids().iter().zip(predictions) {
        let attributes = p.attr_posterior.as_ref().filter(|_| !schema.attributes().is_empty()).map(|a| {
            let combo = schema.combination(crate::numeric::argmax(a));
            schema
                .attributes()
                .iter()
                .zip(&combo.0)
                .map(|(attr, &v)| (attr.name.as_str(), attr.values[v].name.as_str()))
                .collect()
        });
        let line = PredictionLine {
            id,
            class_id: p.class_id,
            class: schema.classes().name(p.class_id).unwrap_or_default(),
            class_posterior: p.class_posterior.iter().map(|&x| round_sig9(x)).collect(),
            attr_posterior: p.attr_posterior.as_ref().map(|a| a.iter().map(|&x| round_sig9(x)).collect()),
            attributes,
        };
        out.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

/// Runs the configured mode on every image and aggregates exact counts.
pub fn evaluate(
    images: &EmbeddingSet,
    anchors: &AnchorSet,
    schema: &AttributeSchema,
    options: &EvalOptions,
) -> Result<EvaluationReport> {
    let labels = labels(images, schema.classes().len())?;
    let predictions = classify(images, anchors, schema, options)?;
    let outcomes: Vec<bool> = predictions.iter().zip(&labels).map(|(p, &y)| p.class_id == y).collect();

    let group_attrs: Vec<String> = match &options.group_attrs {
        Some(g) => g.clone(),
        None => schema
            .attributes()
            .iter()
            .map(|a| a.name.clone())
            .filter(|n| (0..images.matrix.rows()).any(|i| images.metadata.group(i).is_some_and(|g| g.contains_key(n))))
            .collect(),
    };

    let mut cells: BTreeMap<GroupKey, (usize, usize)> = expected_groups(schema, &group_attrs)
        .into_iter()
        .map(|k| (k, (0, 0)))
        .collect();
    for (i, &ok) in outcomes.iter().enumerate() {
        let cell = cells.entry(group_key(images, &group_attrs, i, labels[i])).or_default();
        cell.0 += 1;
        cell.1 += ok as usize;
    }

    let mut warnings = Vec::new();
    let mut per_group = Vec::new();
    for (group, (size, correct)) in cells {
        if size == 0 {
            warnings.push(format!("group `{group}` is empty and was excluded from the worst-group accuracy"));
            continue;
        }
        per_group.push(GroupAccuracy {
            accuracy: fraction(correct, size),
            group,
            size,
            correct,
        });
    }

    let n = outcomes.len();
    let correct = outcomes.iter().filter(|&&ok| ok).count();
    debug_assert_eq!(per_group.iter().map(|g| g.correct).sum::<usize>(), correct);
    let average = fraction(correct, n);
    // Compare by integer cross-multiplication so ties resolve exactly.
    let worst = per_group
        .iter()
        .min_by(|a, b| (a.correct * b.size).cmp(&(b.correct * a.size)))
        .map(|g| g.accuracy)
        .unwrap_or(0.0);
    if n == 0 {
        warnings.push("bundle has no images".into());
    }

    let attribute_inference_accuracy = if options.attribute_inference {
        Some(evaluate_attribute_inference(images, anchors, schema, options.config.estimator, None)?)
    } else {
        None
    };

    Ok(EvaluationReport {
        n_images: n,
        correct,
        top1_accuracy: average,
        average_accuracy: average,
        worst_group_accuracy: worst,
        gap: average - worst,
        per_group_accuracy: per_group,
        attribute_inference_accuracy,
        warnings,
        config: ReportConfig {
            mode: options.config.mode,
            estimator: options.config.estimator,
            temperature: options.config.temperature,
            placement: options.config.placement,
            conditioning: options.conditioning,
            true_attrs: options.true_attrs.clone(),
            schema_hash: schema.content_hash(),
            ablation: options.ablation,
            logit_scale: options.logit_scale,
            description_sampling: uses_description_sampling(schema),
        },
    })
}

/// Fraction of rows whose inferred combination (at `τ = 1`) recovers each
/// attribute's true value. `attributes` restricts the attributes scored;
/// `None` scores all of them.
pub fn evaluate_attribute_inference(
    images: &EmbeddingSet,
    anchors: &AnchorSet,
    schema: &AttributeSchema,
    estimator: Estimator,
    attributes: Option<&[String]>,
) -> Result<BTreeMap<String, f64>> {
    let attrs = resolve_attrs(schema, &attributes.map(|a| a.to_vec()))?;
    let rows = score_all(&images.matrix, anchors)?;
    let hits = par::try_map_indexed(rows.len(), |i| -> Result<Vec<bool>> {
        let combo = schema.combination(infer_attributes(&rows[i], estimator)?);
        attrs
            .iter()
            .map(|&a| Ok(attribute_value(images, schema, i, a)? == combo.0[a]))
            .collect()
    })?;
    Ok(attrs
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let correct = hits.iter().filter(|h| h[j]).count();
            (schema.attributes()[a].name.clone(), fraction(correct, hits.len()))
        })
        .collect())
}

/// Anchors for `schema` from an encoder, with class-only and
/// class-agnostic anchors attached.
pub fn anchors_from_encoder<F>(schema: &AttributeSchema, budget: usize, encode: &F) -> Result<AnchorSet>
where
    F: Fn(&PromptManifest) -> Result<EmbeddingMatrix>,
{
    let aware = build_anchors_with(schema, budget, encode)?;
    let plain = build_anchors_with(&schema.without_attributes(), budget, encode)?;
    let agnostic = build_anchors_with(&schema.class_agnostic(PLACEHOLDER_CLASS)?, budget, encode)?;
    aware.attach_class_only(&plain)?.attach_class_agnostic(&agnostic)
}

/// Evaluates with the real descriptions and with word-length-preserving
/// random ones drawn from `seed`. The second report has the ablation flag
/// set.
pub fn run_ablation<F>(
    images: &EmbeddingSet,
    schema: &AttributeSchema,
    options: &EvalOptions,
    seed: u64,
    budget: usize,
    encode: F,
) -> Result<(EvaluationReport, EvaluationReport)>
where
    F: Fn(&PromptManifest) -> Result<EmbeddingMatrix>,
{
    let real = evaluate(images, &anchors_from_encoder(schema, budget, &encode)?, schema, options)?;
    let scrambled = randomize_descriptions(schema, seed);
    let ablated = EvalOptions {
        ablation: true,
        ..options.clone()
    };
    let random = evaluate(
        images,
        &anchors_from_encoder(&scrambled, budget, &encode)?,
        &scrambled,
        &ablated,
    )?;
    Ok((real, random))
}

/// Temperatures tried by a sweep unless told otherwise.
pub const TAU_GRID: [f64; 4] = [1.0, 3.0, 5.0, 10.0];

/// One report per temperature, all other settings fixed.
pub fn sweep_temperature(
    images: &EmbeddingSet,
    anchors: &AnchorSet,
    schema: &AttributeSchema,
    options: &EvalOptions,
    grid: &[f64],
) -> Result<Vec<EvaluationReport>> {
    grid.iter()
        .map(|&tau| {
            let config = InferenceConfig::new(options.config.mode, options.config.estimator, tau)?
                .with_placement(options.config.placement);
            evaluate(
                images,
                anchors,
                schema,
                &EvalOptions {
                    config,
                    ..options.clone()
                },
            )
        })
        .collect()
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Plain-text summary: headline accuracies, then one line per group.
pub fn render_table(report: &EvaluationReport) -> String {
    let c = &report.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "mode={} estimator={} tau={} ablation={}",
        serde_json::to_value(c.mode).expect("serializes").as_str().unwrap_or_default(),
        serde_json::to_value(c.estimator).expect("serializes").as_str().unwrap_or_default(),
        c.temperature,
        c.ablation
    );
    let _ = writeln!(out, "{:<40} {:>8}", "metric", "acc (%)");
    let _ = writeln!(out, "{:<40} {:>8}", "top-1", pct(report.top1_accuracy));
    let _ = writeln!(out, "{:<40} {:>8}", "worst group", pct(report.worst_group_accuracy));
    let _ = writeln!(out, "{:<40} {:>8}", "gap", pct(report.gap));
    if let Some(attrs) = &report.attribute_inference_accuracy {
        for (name, acc) in attrs {
            let _ = writeln!(out, "{:<40} {:>8}", format!("infer {name}"), pct(*acc));
        }
    }
    let _ = writeln!(out, "{:<40} {:>8} {:>8}", "group", "acc (%)", "n");
    for g in &report.per_group_accuracy {
        let _ = writeln!(out, "{:<40} {:>8} {:>8}", g.group.to_string(), pct(g.accuracy), g.size);
    }
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{AttributeValue, ContextualAttribute, RenderingMode};
    use crate::store::{GroupValues, ImageMetadata};
    use crate::synthetic::{generate, GenerativeSpec};

    fn config(mode: Mode) -> EvalOptions {
        EvalOptions {
            config: InferenceConfig::new(mode, Estimator::ClassAttr, 1.0).unwrap(),
            ..EvalOptions::default()
        }
    }

    #[test]
    fn perfect_predictions_have_no_gap() {
        let data = generate(&GenerativeSpec::default(), 200).unwrap();
        let r = evaluate(&data.images, &data.anchors, &data.schema, &config(Mode::Conditioned)).unwrap();
        assert_eq!(r.top1_accuracy, 1.0);
        assert_eq!(r.gap, 0.0);
        assert_eq!(r.correct, 200);
        let total: usize = r.per_group_accuracy.iter().map(|g| g.size).sum();
        assert_eq!(total, 200);
    }

    /// Two classes, one attribute with two values: four cells of ten images
    /// each, with hand-placed anchors so that exactly 9, 8, 2, 7 are right.
    #[test]
    fn worst_group_arithmetic() {
        let schema = AttributeSchema::new(
            "a photo of a {class}".into(),
            RenderingMode::Concat,
            vec!["a".into(), "b".into()],
            vec![ContextualAttribute {
                name: "bg".into(),
                values: ["x", "y"]
                    .iter()
                    .map(|v| AttributeValue {
                        name: v.to_string(),
                        descriptions: vec![v.to_string()],
                    })
                    .collect(),
            }],
        )
        .unwrap();
        // Anchors: class a → e0, class b → e1 at every combination.
        let anchors = AnchorSet::from_vectors(2, 2, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
            .unwrap()
            .with_class_only(vec![1.0, 0.0, 0.0, 1.0])
            .unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        let mut ids = Vec::new();
        for (cell, right) in [(0usize, 9usize), (1, 8), (2, 2), (3, 7)] {
            let (class_id, bg) = (cell / 2, ["x", "y"][cell % 2]);
            for j in 0..10 {
                let predicted = if j < right { class_id } else { 1 - class_id };
                data.extend(if predicted == 0 { [1.0f32, 0.0] } else { [0.0, 1.0] });
                labels.push(Some(class_id));
                let mut g = GroupValues::new();
                g.insert("bg".into(), bg.into());
                groups.push(Some(g));
                ids.push(format!("r{cell}_{j}"));
            }
        }
        let images = EmbeddingSet::new(
            EmbeddingMatrix::new(2, ids, data).unwrap(),
            ImageMetadata {
                labels: Some(labels),
                groups: Some(groups),
            },
        )
        .unwrap();
        let r = evaluate(&images, &anchors, &schema, &config(Mode::Simple)).unwrap();
        let accs: Vec<f64> = r.per_group_accuracy.iter().map(|g| g.accuracy).collect();
        assert_eq!(accs, [0.9, 0.8, 0.2, 0.7]);
        assert_eq!(r.worst_group_accuracy, 0.2);
        assert!((r.average_accuracy - 0.65).abs() < 1e-15);
        assert!((r.gap - 0.45).abs() < 1e-15);
        assert_eq!(r.correct, 26);
    }

    #[test]
    fn empty_groups_warn_and_are_excluded() {
        let spec = GenerativeSpec {
            spurious_correlation: 1.0,
            ..GenerativeSpec::spurious(1.0)
        };
        let data = generate(&spec, 100).unwrap();
        let r = evaluate(&data.images, &data.anchors, &data.schema, &config(Mode::Simple)).unwrap();
        assert_eq!(r.per_group_accuracy.len(), 2);
        assert_eq!(r.warnings.len(), 2);
        assert!(r.warnings[0].contains("empty"));
    }

    #[test]
    fn missing_labels_are_an_error() {
        let data = generate(&GenerativeSpec::default(), 5).unwrap();
        let mut images = data.images.clone();
        images.metadata.labels.as_mut().unwrap()[3] = None;
        let err = evaluate(&images, &data.anchors, &data.schema, &config(Mode::TwoStep)).unwrap_err();
        assert!(err.to_string().contains("img000003"), "{err}");
    }

    #[test]
    fn wrong_conditioning_hurts() {
        let spec = GenerativeSpec::default().with_noise(0.1);
        let data = generate(&spec, 500).unwrap();
        let right = evaluate(&data.images, &data.anchors, &data.schema, &config(Mode::Conditioned)).unwrap();
        let wrong = EvalOptions {
            conditioning: ConditioningSource::Wrong,
            ..config(Mode::Conditioned)
        };
        let wrong = evaluate(&data.images, &data.anchors, &data.schema, &wrong).unwrap();
        assert!(wrong.top1_accuracy < right.top1_accuracy, "{} vs {}", wrong.top1_accuracy, right.top1_accuracy);
    }

    #[test]
    fn noiseless_attribute_inference_is_exact() {
        let data = generate(&GenerativeSpec::default(), 300).unwrap();
        for est in [Estimator::ClassAttr, Estimator::PureAttr] {
            let acc = evaluate_attribute_inference(&data.images, &data.anchors, &data.schema, est, None).unwrap();
            assert_eq!(acc.len(), 2);
            assert!(acc.values().all(|&a| a == 1.0), "{est:?}: {acc:?}");
        }
        let only = ["attr1".to_string()];
        let acc = evaluate_attribute_inference(
            &data.images,
            &data.anchors,
            &data.schema,
            Estimator::ClassAttr,
            Some(&only),
        )
        .unwrap();
        assert_eq!(acc.keys().collect::<Vec<_>>(), ["attr1"]);
    }

    #[test]
    fn zero_attribute_ablation_reports_match() {
        let schema = crate::synthetic::demo_text_schema().without_attributes();
        let encoder = crate::synthetic::HashTextEncoder::default();
        let spec = crate::synthetic::TextPipelineSpec {
            n_images: 100,
            ..Default::default()
        };
        let (images, _) = crate::synthetic::generate_from_captions(&schema, &spec).unwrap();
        let (real, random) = run_ablation(&images, &schema, &config(Mode::TwoStep), 1, 1_000_000, |m| {
            encoder.encode_manifest(m)
        })
        .unwrap();
        assert!(random.config.ablation && !real.config.ablation);
        let unflag = EvaluationReport {
            config: ReportConfig {
                ablation: false,
                ..random.config.clone()
            },
            ..random
        };
        assert_eq!(real, unflag);
    }

    #[test]
    fn simple_equals_empty_conditioning_without_attributes() {
        let schema = crate::synthetic::demo_text_schema().without_attributes();
        let encoder = crate::synthetic::HashTextEncoder::default();
        let spec = crate::synthetic::TextPipelineSpec {
            n_images: 100,
            noise: 0.3,
            ..Default::default()
        };
        let (images, _) = crate::synthetic::generate_from_captions(&schema, &spec).unwrap();
        let anchors = anchors_from_encoder(&schema, 1000, &|m: &PromptManifest| encoder.encode_manifest(m)).unwrap();
        let a = evaluate(&images, &anchors, &schema, &config(Mode::Simple)).unwrap();
        let b = evaluate(&images, &anchors, &schema, &config(Mode::Conditioned)).unwrap();
        assert_eq!(a.correct, b.correct);
        assert_eq!(a.per_group_accuracy, b.per_group_accuracy);
    }

    #[test]
    fn report_json_is_deterministic_across_threads() {
        let data = generate(&GenerativeSpec::default().with_noise(0.1), 300).unwrap();
        let run = |t| {
            par::with_threads(Some(t), || {
                evaluate(&data.images, &data.anchors, &data.schema, &config(Mode::TwoStep))
                    .unwrap()
                    .to_json()
            })
        };
        assert_eq!(run(1), run(3));
        assert!(render_table(&data_report(&data)).contains("worst group"));
    }

    fn data_report(data: &crate::synthetic::SyntheticDataset) -> EvaluationReport {
        evaluate(&data.images, &data.anchors, &data.schema, &config(Mode::OneStep)).unwrap()
    }

    #[test]
    fn sweep_covers_grid() {
        let data = generate(&GenerativeSpec::default().with_noise(0.1), 50).unwrap();
        let r = sweep_temperature(&data.images, &data.anchors, &data.schema, &config(Mode::TwoStep), &TAU_GRID).unwrap();
        let taus: Vec<f64> = r.iter().map(|r| r.config.temperature).collect();
        assert_eq!(taus, TAU_GRID);
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(round_sig9(0.123456789123), 0.123456789);
        assert_eq!(round_sig9(1.0 / 3.0), 0.333333333);
        assert_eq!(round_sig9(2.5e-20), 2.5e-20);
        assert_eq!(round_sig9(0.0), 0.0);
    }

    #[test]
    fn prediction_lines_follow_input_order() {
        let data = generate(&GenerativeSpec::default().with_noise(0.1), 20).unwrap();
        let opts = config(Mode::TwoStep);
        let preds = classify(&data.images, &data.anchors, &data.schema, &opts).unwrap();
        let text = predictions_jsonl(&data.images, &data.schema, &preds);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 20);
        for (i, line) in lines.iter().enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["id"], format!("img{i:06}"));
            let total: f64 = v["attr_posterior"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-6);
            assert_eq!(v["attributes"].as_object().unwrap().len(), 2);
        }
    }
}
