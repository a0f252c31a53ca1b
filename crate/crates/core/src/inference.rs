//! From score tables to probabilities and predictions.
//!
//! With `S(y, z)` the score of class `y` at attribute combination `z`:
//!
//! * joint: `p(y, z | x) ∝ exp S(y, z)` over the whole table;
//! * class given attributes: `p(y | x, z) ∝ exp S(y, z)` over classes at fixed `z`;
//! * attributes given image, ClassAttr: `p̂(z | x) ∝ Σ_y exp(S(y, z) / τ)`;
//! * attributes given image, PureAttr: `p̂(z | x) ∝ exp(S(z) / τ)` with
//!   class-agnostic scores `S(z)`.
//!
//! Two-step prediction marginalizes `p(y | x, z)` against `p̂(z | x)`; the
//! one-step form ranks classes by `log Σ_z exp S(y, z)`. The temperature
//! only enters the attribute step.
//!
//! All exponentials are max-shifted and accumulated in `f64`. Ties go to
//! the lowest index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{argmax, logsumexp, softmax};
use crate::scoring::ScoreRow;

/// Estimator for the attribute distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Sum the exponentiated class-aware scores over classes.
    #[default]
    ClassAttr,
    /// Use scores against class-agnostic prompts.
    PureAttr,
}

/// Where the temperature enters the ClassAttr estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperaturePlacement {
    /// `Σ_y exp(S(y, z) / τ)`: the temperature divides each score before
    /// the class sum.
    #[default]
    InsideClassSum,
    /// `(Σ_y exp S(y, z))^(1/τ)`: the temperature divides the class-summed
    /// log-mass.
    AfterClassSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Single class-only template per class.
    Simple,
    /// Template ensemble (anchor set with one pseudo-combination).
    Ensemble,
    /// Fixed, externally supplied attribute values.
    Conditioned,
    /// `argmax_y log Σ_z exp S(y, z)`.
    OneStep,
    /// Infer `p̂(z | x)`, then marginalize `p(y | x, z)`.
    #[default]
    TwoStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub mode: Mode,
    pub estimator: Estimator,
    pub temperature: f64,
    #[serde(default)]
    pub placement: TemperaturePlacement,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mode: Mode::TwoStep,
            estimator: Estimator::ClassAttr,
            temperature: 1.0,
            placement: TemperaturePlacement::InsideClassSum,
        }
    }
}

impl InferenceConfig {
    pub fn new(mode: Mode, estimator: Estimator, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(Self {
            mode,
            estimator,
            temperature,
            placement: TemperaturePlacement::default(),
        })
    }

    pub fn with_placement(mut self, placement: TemperaturePlacement) -> Self {
        self.placement = placement;
        self
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Temperature(tau))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorKind {
    Joint,
    ClassGivenAttrs,
    AttrsGivenImage,
}

/// A normalized probability table.
///
/// Joint tables are class-major (`values[class * n_combos + combo]`);
/// class tables are indexed by class; attribute tables by combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    pub kind: PosteriorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<Estimator>,
    pub values: Vec<f64>,
}

impl PosteriorTable {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_id: usize,
    pub class_posterior: Vec<f64>,
    /// Attribute distribution behind the prediction: the inferred
    /// `p̂(z | x)` for one- and two-step modes, a point mass for
    /// conditioned mode, absent for modes that ignore attributes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attr_posterior: Option<Vec<f64>>,
}

fn check_finite(row: &ScoreRow) -> Result<()> {
    for y in 0..row.n_classes() {
        for (z, v) in row.for_class(y).iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    class_id: y,
                    combo_index: z,
                });
            }
        }
    }
    Ok(())
}

fn check_combo(row: &ScoreRow, combo_index: usize) -> Result<()> {
    if combo_index >= row.n_combos() {
        return Err(Error::Invalid(format!(
            "combination {combo_index} out of range ({} combinations)",
            row.n_combos()
        )));
    }
    Ok(())
}

/// `p(y, z | x)`: softmax over the whole table.
pub fn joint_posterior(row: &ScoreRow) -> Result<PosteriorTable> {
    check_finite(row)?;
    Ok(PosteriorTable {
        kind: PosteriorKind::Joint,
        estimator: None,
        values: softmax(row.values()),
    })
}

/// `p(y | x, z)` at one combination.
pub fn class_posterior(row: &ScoreRow, combo_index: usize) -> Result<PosteriorTable> {
    check_finite(row)?;
    check_combo(row, combo_index)?;
    Ok(PosteriorTable {
        kind: PosteriorKind::ClassGivenAttrs,
        estimator: None,
        values: softmax(&row.at_combo(combo_index)),
    })
}

/// Per-combination log-masses whose softmax is `p̂(z | x)`.
fn attr_logits(
    row: &ScoreRow,
    estimator: Estimator,
    tau: f64,
    placement: TemperaturePlacement,
) -> Result<Vec<f64>> {
    check_temperature(tau)?;
    check_finite(row)?;
    match estimator {
        Estimator::ClassAttr => Ok((0..row.n_combos())
            .map(|z| {
                let col = row.at_combo(z);
                match placement {
                    TemperaturePlacement::InsideClassSum => {
                        let scaled: Vec<f64> = col.iter().map(|s| s / tau).collect();
                        logsumexp(&scaled)
                    }
                    TemperaturePlacement::AfterClassSum => logsumexp(&col) / tau,
                }
            })
            .collect()),
        Estimator::PureAttr => {
            let scores = row.class_agnostic().ok_or_else(|| {
                Error::Invalid("PureAttr needs class-agnostic scores; none were supplied".into())
            })?;
            if let Some(z) = scores.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    class_id: 0,
                    combo_index: z,
                });
            }
            Ok(scores.iter().map(|s| s / tau).collect())
        }
    }
}

/// `p̂(z | x)` with the given estimator and temperature.
pub fn attr_posterior(
    row: &ScoreRow,
    estimator: Estimator,
    tau: f64,
    placement: TemperaturePlacement,
) -> Result<PosteriorTable> {
    let logits = attr_logits(row, estimator, tau, placement)?;
    Ok(PosteriorTable {
        kind: PosteriorKind::AttrsGivenImage,
        estimator: Some(estimator),
        values: softmax(&logits),
    })
}

/// Classification with the attribute values fixed to `combo_index`.
pub fn conditioned_predict(row: &ScoreRow, combo_index: usize) -> Result<Prediction> {
    let posterior = class_posterior(row, combo_index)?;
    let class_id = argmax(&row.at_combo(combo_index));
    let mut point = vec![0.0; row.n_combos()];
    point[combo_index] = 1.0;
    Ok(Prediction {
        class_id,
        class_posterior: posterior.values,
        attr_posterior: Some(point),
    })
}

/// Classification with some attributes fixed: only the combinations in
/// `allowed` remain, and the free attributes are marginalized with
/// `p(y | x, z_known) ∝ Σ_{z ∈ allowed} exp S(y, z)`. A single allowed
/// combination gives the same argmax as [`conditioned_predict`].
pub fn partially_conditioned_predict(row: &ScoreRow, allowed: &[usize]) -> Result<Prediction> {
    check_finite(row)?;
    if allowed.is_empty() {
        return Err(Error::Invalid("no combination is consistent with the known attributes".into()));
    }
    for &z in allowed {
        check_combo(row, z)?;
    }
    if let [z] = allowed {
        return conditioned_predict(row, *z);
    }
    let aggregate: Vec<f64> = (0..row.n_classes())
        .map(|y| {
            let s: Vec<f64> = allowed.iter().map(|&z| row.get(y, z)).collect();
            logsumexp(&s)
        })
        .collect();
    let class_posterior = softmax(&aggregate);
    let mut restricted = vec![f64::NEG_INFINITY; row.n_combos()];
    for &z in allowed {
        restricted[z] = logsumexp(&row.at_combo(z));
    }
    Ok(Prediction {
        class_id: argmax(&class_posterior),
        class_posterior,
        attr_posterior: Some(softmax(&restricted)),
    })
}

/// Most probable combination under `p̂(z | x)` at `τ = 1`.
pub fn infer_attributes(row: &ScoreRow, estimator: Estimator) -> Result<usize> {
    let logits = attr_logits(row, estimator, 1.0, TemperaturePlacement::InsideClassSum)?;
    Ok(argmax(&logits))
}

/// Infer the attribute distribution, then marginalize the class-conditional
/// distributions against it.
pub fn two_step_predict(row: &ScoreRow, config: &InferenceConfig) -> Result<Prediction> {
    let attrs = attr_posterior(row, config.estimator, config.temperature, config.placement)?;
    let mut class_posterior = vec![0.0; row.n_classes()];
    for (z, &pz) in attrs.values.iter().enumerate() {
        if pz == 0.0 {
            continue;
        }
        let conditional = softmax(&row.at_combo(z));
        for (acc, p) in class_posterior.iter_mut().zip(conditional) {
            *acc += p * pz;
        }
    }
    Ok(Prediction {
        class_id: argmax(&class_posterior),
        class_posterior,
        attr_posterior: Some(attrs.values),
    })
}

/// `argmax_y log Σ_z exp S(y, z)`; the class posterior is the softmax of
/// those aggregates.
pub fn one_step_predict(row: &ScoreRow) -> Result<Prediction> {
    check_finite(row)?;
    let aggregate: Vec<f64> = (0..row.n_classes())
        .map(|y| logsumexp(row.for_class(y)))
        .collect();
    let class_posterior = softmax(&aggregate);
    let attrs = attr_posterior(row, Estimator::ClassAttr, 1.0, TemperaturePlacement::InsideClassSum)?;
    Ok(Prediction {
        class_id: argmax(&class_posterior),
        class_posterior,
        attr_posterior: Some(attrs.values),
    })
}

/// Single-template prediction from class-only scores. Falls back to the
/// lone combination when the table has exactly one.
pub fn simple_predict(row: &ScoreRow) -> Result<Prediction> {
    let scores = match row.class_only() {
        Some(s) => s.to_vec(),
        None if row.n_combos() == 1 => row.at_combo(0),
        None => {
            return Err(Error::Invalid(
                "simple mode needs class-only anchors or a table with a single combination".into(),
            ))
        }
    };
    if let Some(y) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            class_id: y,
            combo_index: 0,
        });
    }
    Ok(Prediction {
        class_id: argmax(&scores),
        class_posterior: softmax(&scores),
        attr_posterior: None,
    })
}

/// Template-ensemble prediction: the table must hold exactly one
/// pseudo-combination whose anchors are the per-class template means.
pub fn ensemble_predict(row: &ScoreRow) -> Result<Prediction> {
    if row.n_combos() != 1 {
        return Err(Error::Invalid(format!(
            "ensemble mode needs a single template-ensemble combination, found {}",
            row.n_combos()
        )));
    }
    let mut p = conditioned_predict(row, 0)?;
    p.attr_posterior = None;
    Ok(p)
}

/// Dispatches on `config.mode`. `known` lists the combinations consistent
/// with the externally supplied attribute values and is required for
/// conditioned mode only.
pub fn predict(row: &ScoreRow, config: &InferenceConfig, known: Option<&[usize]>) -> Result<Prediction> {
    match config.mode {
        Mode::Simple => simple_predict(row),
        Mode::Ensemble => ensemble_predict(row),
        Mode::Conditioned => {
            let allowed = known.ok_or_else(|| {
                Error::Invalid("conditioned mode needs known attribute values".into())
            })?;
            partially_conditioned_predict(row, allowed)
        }
        Mode::OneStep => one_step_predict(row),
        Mode::TwoStep => two_step_predict(row, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::entropy;

    fn row(n_classes: usize, n_combos: usize, values: &[f64]) -> ScoreRow {
        ScoreRow::new(n_classes, n_combos, values.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn joint_uniform_and_hand_softmax() {
        let p = joint_posterior(&row(2, 2, &[0.3; 4])).unwrap();
        assert!(p.values.iter().all(|&v| close(v, 0.25, 1e-15)));

        let p = joint_posterior(&row(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        let e = std::f64::consts::E;
        assert!(close(p.values[0], e / (e + 3.0), 1e-15));
        assert!(close(p.values[0], 0.4754, 1e-4));
        for v in &p.values[1..] {
            assert!(close(*v, 1.0 / (e + 3.0), 1e-15));
            assert!(close(*v, 0.1749, 1e-4));
        }

        let shifted = joint_posterior(&row(2, 2, &[8.0, 7.0, 7.0, 7.0])).unwrap();
        for (a, b) in p.values.iter().zip(&shifted.values) {
            assert!(close(*a, *b, 1e-15));
        }
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        let r = row(2, 1, &[0.1, f64::NAN]);
        assert!(matches!(
            joint_posterior(&r),
            Err(Error::NonFinite { class_id: 1, combo_index: 0 })
        ));
    }

    #[test]
    fn class_posterior_hand_case() {
        // classes × combos = 2 × 1, scores (2, 0).
        let p = class_posterior(&row(2, 1, &[2.0, 0.0]), 0).unwrap();
        let e2 = 2f64.exp();
        assert!(close(p.values[0], e2 / (e2 + 1.0), 1e-15));
        assert!(close(p.values[0], 0.8808, 1e-4));
        assert!(close(p.values[1], 0.1192, 1e-4));

        let p = class_posterior(&row(3, 2, &[0.5, 0.1, 0.5, 0.2, 0.5, 0.3]), 0).unwrap();
        assert!(p.values.iter().all(|&v| close(v, 1.0 / 3.0, 1e-15)));
        assert!(class_posterior(&row(1, 1, &[0.0]), 1).is_err());
    }

    #[test]
    fn huge_temperature_flattens_attributes() {
        let r = row(2, 3, &[0.9, -0.4, 0.2, 0.1, 0.7, -0.9]);
        for est_row in [r.clone(), r.clone().with_class_agnostic(vec![0.3, -0.2, 0.8]).unwrap()] {
            for est in [Estimator::ClassAttr, Estimator::PureAttr] {
                if est == Estimator::PureAttr && est_row.class_agnostic().is_none() {
                    assert!(attr_posterior(&est_row, est, 1.0, Default::default()).is_err());
                    continue;
                }
                let p = attr_posterior(&est_row, est, 1e9, Default::default()).unwrap();
                assert!(p.values.iter().all(|&v| close(v, 1.0 / 3.0, 1e-6)));
            }
        }
    }

    #[test]
    fn temperature_must_be_positive() {
        let r = row(1, 2, &[0.0, 1.0]);
        for tau in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                attr_posterior(&r, Estimator::ClassAttr, tau, Default::default()),
                Err(Error::Temperature(_))
            ));
        }
        assert!(InferenceConfig::new(Mode::TwoStep, Estimator::ClassAttr, 0.0).is_err());
    }

    #[test]
    fn single_class_classattr_is_plain_softmax() {
        let scores = [0.3, -0.1, 0.7];
        let p = attr_posterior(&row(1, 3, &scores), Estimator::ClassAttr, 3.0, Default::default()).unwrap();
        let expected = softmax(&scores.map(|s| s / 3.0));
        for (a, b) in p.values.iter().zip(expected) {
            assert!(close(*a, b, 1e-15));
        }
    }

    #[test]
    fn placements_agree_at_unit_temperature() {
        let r = row(3, 2, &[0.9, -0.4, 0.2, 0.1, 0.7, -0.9]);
        let a = attr_posterior(&r, Estimator::ClassAttr, 1.0, TemperaturePlacement::InsideClassSum).unwrap();
        let b = attr_posterior(&r, Estimator::ClassAttr, 1.0, TemperaturePlacement::AfterClassSum).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!(close(*x, *y, 1e-15));
        }
        let c = attr_posterior(&r, Estimator::ClassAttr, 5.0, TemperaturePlacement::AfterClassSum).unwrap();
        let d = attr_posterior(&r, Estimator::ClassAttr, 5.0, TemperaturePlacement::InsideClassSum).unwrap();
        assert!(c.values.iter().zip(&d.values).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn conditioned_examples() {
        let p = conditioned_predict(&row(2, 1, &[0.9, 0.1]), 0).unwrap();
        assert_eq!(p.class_id, 0);
        let p = conditioned_predict(&row(2, 1, &[0.5, 0.5]), 0).unwrap();
        assert_eq!(p.class_id, 0);
        assert_eq!(p.attr_posterior, Some(vec![1.0]));
    }

    #[test]
    fn partial_conditioning_with_one_combo_matches_conditioned() {
        let r = row(2, 3, &[0.1, 0.4, 0.3, 0.2, 0.35, 0.9]);
        let a = partially_conditioned_predict(&r, &[1]).unwrap();
        assert_eq!(a, conditioned_predict(&r, 1).unwrap());
        let all = partially_conditioned_predict(&r, &[0, 1, 2]).unwrap();
        let one = one_step_predict(&r).unwrap();
        assert_eq!(all.class_id, one.class_id);
        for (x, y) in all.class_posterior.iter().zip(&one.class_posterior) {
            assert!(close(*x, *y, 1e-15));
        }
        assert!(partially_conditioned_predict(&r, &[]).is_err());
    }

    #[test]
    fn infer_attributes_examples() {
        assert_eq!(infer_attributes(&row(3, 1, &[0.1, 0.2, 0.3]), Estimator::ClassAttr).unwrap(), 0);
        let r = row(2, 2, &[0.1, 0.8, 0.2, 0.7]).with_class_agnostic(vec![0.9, 0.1]).unwrap();
        assert_eq!(infer_attributes(&r, Estimator::ClassAttr).unwrap(), 1);
        assert_eq!(infer_attributes(&r, Estimator::PureAttr).unwrap(), 0);
    }

    #[test]
    fn two_step_with_one_combo_is_conditioned() {
        let r = row(3, 1, &[0.2, 0.9, 0.4]);
        let cfg = InferenceConfig::new(Mode::TwoStep, Estimator::ClassAttr, 3.0).unwrap();
        let two = two_step_predict(&r, &cfg).unwrap();
        let cond = conditioned_predict(&r, 0).unwrap();
        assert_eq!(two.class_id, cond.class_id);
        for (a, b) in two.class_posterior.iter().zip(&cond.class_posterior) {
            assert!(close(*a, *b, 1e-15));
        }
    }

    #[test]
    fn one_step_examples() {
        let r = row(3, 1, &[0.2, 0.9, 0.4]);
        assert_eq!(one_step_predict(&r).unwrap().class_id, conditioned_predict(&r, 0).unwrap().class_id);

        // Every combination gives the same per-class scores.
        let r = row(3, 2, &[0.2, 0.2, 0.9, 0.9, 0.4, 0.4]);
        assert_eq!(one_step_predict(&r).unwrap().class_id, 1);
    }

    #[test]
    fn simple_and_ensemble_need_the_right_shape() {
        let r = row(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        assert!(simple_predict(&r).is_err());
        assert!(ensemble_predict(&r).is_err());
        let r = r.with_class_only(vec![0.8, 0.2]).unwrap();
        assert_eq!(simple_predict(&r).unwrap().class_id, 0);
        let single = row(2, 1, &[0.1, 0.3]);
        assert_eq!(simple_predict(&single).unwrap().class_id, 1);
        assert_eq!(ensemble_predict(&single).unwrap().class_id, 1);
    }

    #[test]
    fn step_two_ignores_temperature_at_fixed_combo() {
        let r = row(2, 2, &[0.3, 0.1, -0.2, 0.5]);
        let base = class_posterior(&r, 1).unwrap();
        for tau in [0.5, 1.0, 3.0, 10.0] {
            let cfg = InferenceConfig::new(Mode::TwoStep, Estimator::ClassAttr, tau).unwrap();
            // Two-step with a point mass reduces to p(y | x, z); its conditional
            // factor is computed without τ.
            let p = two_step_predict(&r, &cfg).unwrap();
            assert!(p.class_posterior.iter().all(|v| v.is_finite()));
            assert_eq!(class_posterior(&r, 1).unwrap(), base);
        }
    }

    #[test]
    fn classattr_entropy_is_not_monotone_in_general() {
        // One combination has a single sharp class, the other many flat ones:
        // the estimate swings from the sharp combo (small τ) to the flat combo
        // (τ = 1) and back towards uniform.
        let mut values = vec![-1.0; 2 * 40];
        values[0] = 1.0; // class 0 at combo 0
        for y in 0..40 {
            values[y * 2 + 1] = 0.9;
        }
        let r = row(40, 2, &values);
        let h = |tau: f64| {
            entropy(&attr_posterior(&r, Estimator::ClassAttr, tau, Default::default()).unwrap().values)
        };
        assert!(h(0.01) < h(0.027));
        assert!(h(0.027) > h(1.0));
        assert!(h(1.0) < h(1e6));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_row() -> impl Strategy<Value = ScoreRow> {
            (1usize..6, 1usize..8).prop_flat_map(|(c, z)| {
                (
                    prop::collection::vec(-1.0f64..1.0, c * z),
                    prop::collection::vec(-1.0f64..1.0, z),
                )
                    .prop_map(move |(v, a)| {
                        ScoreRow::new(c, z, v).unwrap().with_class_agnostic(a).unwrap()
                    })
            })
        }

        proptest! {
            #[test]
            fn tables_are_normalized(r in arb_row(), tau in 0.1f64..20.0) {
                let tables = [
                    joint_posterior(&r).unwrap(),
                    class_posterior(&r, r.n_combos() - 1).unwrap(),
                    attr_posterior(&r, Estimator::ClassAttr, tau, TemperaturePlacement::InsideClassSum).unwrap(),
                    attr_posterior(&r, Estimator::ClassAttr, tau, TemperaturePlacement::AfterClassSum).unwrap(),
                    attr_posterior(&r, Estimator::PureAttr, tau, Default::default()).unwrap(),
                ];
                for t in tables {
                    prop_assert!((t.sum() - 1.0).abs() < 1e-9);
                    prop_assert!(t.values.iter().all(|&v| v >= 0.0));
                }
            }

            #[test]
            fn shift_changes_nothing(r in arb_row(), offset in -50.0f64..50.0) {
                let s = r.shifted(offset);
                let cfg = InferenceConfig::new(Mode::TwoStep, Estimator::ClassAttr, 3.0).unwrap();
                let (a, b) = (two_step_predict(&r, &cfg).unwrap(), two_step_predict(&s, &cfg).unwrap());
                prop_assert_eq!(a.class_id, b.class_id);
                for (x, y) in a.class_posterior.iter().zip(&b.class_posterior) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
                let (a, b) = (joint_posterior(&r).unwrap(), joint_posterior(&s).unwrap());
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
                prop_assert_eq!(one_step_predict(&r).unwrap().class_id, one_step_predict(&s).unwrap().class_id);
            }

            #[test]
            fn two_step_at_unit_temperature_is_one_step(r in arb_row()) {
                let cfg = InferenceConfig::default();
                let two = two_step_predict(&r, &cfg).unwrap();
                let one = one_step_predict(&r).unwrap();
                prop_assert_eq!(two.class_id, one.class_id);
                for (x, y) in two.class_posterior.iter().zip(&one.class_posterior) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }

            #[test]
            fn conditioned_argmax_matches_raw_scores(r in arb_row()) {
                for z in 0..r.n_combos() {
                    let p = conditioned_predict(&r, z).unwrap();
                    prop_assert_eq!(p.class_id, argmax(&p.class_posterior));
                    prop_assert_eq!(p.class_id, argmax(&r.at_combo(z)));
                }
            }

            #[test]
            fn entropy_grows_with_temperature(r in arb_row()) {
                let grid = [0.5, 1.0, 3.0, 5.0, 10.0];
                for est in [(Estimator::PureAttr, TemperaturePlacement::InsideClassSum),
                            (Estimator::ClassAttr, TemperaturePlacement::AfterClassSum)] {
                    let hs: Vec<f64> = grid
                        .iter()
                        .map(|&t| entropy(&attr_posterior(&r, est.0, t, est.1).unwrap().values))
                        .collect();
                    for w in hs.windows(2) {
                        prop_assert!(w[1] >= w[0] - 1e-12, "{:?}", hs);
                    }
                }
            }
        }
    }
}
