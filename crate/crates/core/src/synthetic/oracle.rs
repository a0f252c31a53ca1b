//! Reference posteriors by direct enumeration.
//!
//! Every quantity is computed straight from its definition: unshifted
//! exponentials, compensated `f64` sums, explicit loops over `(y, z)`.
//! Nothing here shares code with the inference module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoreRow;

/// All posteriors for one score table at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// `p(y, z | x)`, class-major.
    pub joint: Vec<f64>,
    /// `p(y | x, z)`, one vector per combination.
    pub class_given_attrs: Vec<Vec<f64>>,
    /// ClassAttr `p̂(z | x)` with the temperature inside the class sum.
    pub attrs_class_attr: Vec<f64>,
    /// PureAttr `p̂(z | x)`, when class-agnostic scores are present.
    pub attrs_pure_attr: Option<Vec<f64>>,
    /// `Σ_z p(y | x, z) p̂(z | x)` with the ClassAttr estimate.
    pub marginal_class_attr: Vec<f64>,
    pub marginal_pure_attr: Option<Vec<f64>>,
}

/// Neumaier summation.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn checked_exp(x: f64) -> Result<f64> {
    let e = x.exp();
    if !e.is_finite() || !x.is_finite() {
        return Err(Error::OracleOverflow(x));
    }
    Ok(e)
}

fn normalize(masses: Vec<f64>) -> Result<Vec<f64>> {
    let total = compensated_sum(masses.iter().copied());
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::OracleOverflow(total));
    }
    Ok(masses.into_iter().map(|m| m / total).collect())
}

fn marginal(class_given_attrs: &[Vec<f64>], attrs: &[f64], n_classes: usize) -> Vec<f64> {
    (0..n_classes)
        .map(|y| compensated_sum(attrs.iter().enumerate().map(|(z, pz)| class_given_attrs[z][y] * pz)))
        .collect()
}

/// Enumerates every posterior of `row` at temperature `tau`. Fails with
/// [`Error::OracleOverflow`] when a direct exponential leaves `f64` range.
pub fn brute_force_posteriors(row: &ScoreRow, tau: f64) -> Result<OracleResult> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Temperature(tau));
    }
    let (n_y, n_z) = (row.n_classes(), row.n_combos());

    let mut exp_s = vec![0.0; n_y * n_z];
    let mut exp_scaled = vec![0.0; n_y * n_z];
    for y in 0..n_y {
        for z in 0..n_z {
            let s = row.get(y, z);
            exp_s[y * n_z + z] = checked_exp(s)?;
            exp_scaled[y * n_z + z] = checked_exp(s / tau)?;
        }
    }

    let joint = normalize(exp_s.clone())?;

    let mut class_given_attrs = Vec::with_capacity(n_z);
    for z in 0..n_z {
        let column: Vec<f64> = (0..n_y).map(|y| exp_s[y * n_z + z]).collect();
        class_given_attrs.push(normalize(column)?);
    }

    let masses: Vec<f64> = (0..n_z)
        .map(|z| compensated_sum((0..n_y).map(|y| exp_scaled[y * n_z + z])))
        .collect();
    let attrs_class_attr = normalize(masses)?;
    let marginal_class_attr = marginal(&class_given_attrs, &attrs_class_attr, n_y);

    let attrs_pure_attr = match row.class_agnostic() {
        Some(scores) => {
            let masses = scores
                .iter()
                .map(|s| checked_exp(s / tau))
                .collect::<Result<Vec<_>>>()?;
            Some(normalize(masses)?)
        }
        None => None,
    };
    let marginal_pure_attr = attrs_pure_attr
        .as_ref()
        .map(|a| marginal(&class_given_attrs, a, n_y));

    Ok(OracleResult {
        joint,
        class_given_attrs,
        attrs_class_attr,
        attrs_pure_attr,
        marginal_class_attr,
        marginal_pure_attr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let row = ScoreRow::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let r = brute_force_posteriors(&row, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((r.joint[0] - e / (e + 3.0)).abs() < 1e-15);
        assert!((r.class_given_attrs[0][0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((r.class_given_attrs[1][0] - 0.5).abs() < 1e-15);
        assert!((r.attrs_class_attr[0] - (e + 1.0) / (e + 3.0)).abs() < 1e-15);
        assert!(r.attrs_pure_attr.is_none());
    }

    #[test]
    fn sums_are_one() {
        let values: Vec<f64> = (0..320).map(|i| ((i * 37) % 101) as f64 * 0.3).collect();
        let row = ScoreRow::new(10, 32, values)
            .unwrap()
            .with_class_agnostic((0..32).map(|z| z as f64).collect())
            .unwrap();
        for tau in [0.5, 1.0, 3.0] {
            let r = brute_force_posteriors(&row, tau).unwrap();
            assert!((compensated_sum(r.joint.iter().copied()) - 1.0).abs() <= 1e-14);
            assert!((compensated_sum(r.attrs_class_attr.iter().copied()) - 1.0).abs() <= 1e-14);
            assert!((compensated_sum(r.marginal_class_attr.iter().copied()) - 1.0).abs() <= 1e-14);
            let pure = r.attrs_pure_attr.unwrap();
            assert!((compensated_sum(pure.iter().copied()) - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn overflow_is_reported() {
        let row = ScoreRow::new(1, 1, vec![800.0]).unwrap();
        assert!(matches!(
            brute_force_posteriors(&row, 1.0),
            Err(Error::OracleOverflow(_))
        ));
        let row = ScoreRow::new(1, 1, vec![400.0]).unwrap();
        assert!(brute_force_posteriors(&row, 1.0).is_ok());
        assert!(brute_force_posteriors(&row, 0.5).is_err());
    }
}
