//! Scalar and vector primitives shared by the rest of the crate.
//!
//! Everything accumulates in `f64` with a fixed left-to-right summation order,
//! so results are reproducible bit-for-bit.

use std::cmp::Ordering;

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Returns `a / ‖a‖`, or `ZeroNormVector` (reported at index 0) for a zero vector.
pub fn normalized(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 {
        return Err(Error::ZeroNormVector { index: 0 });
    }
    Ok(a.iter().map(|x| x / n).collect())
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Cosine similarity clamped to `[-1, 1]`.
///
/// The product `‖a‖·‖b‖` is formed symmetrically so that
/// `cosine(a, b) == cosine(b, a)` holds exactly.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let aa = dot(a, a);
    if aa == 0.0 {
        return Err(Error::ZeroNormVector { index: 0 });
    }
    let bb = dot(b, b);
    if bb == 0.0 {
        return Err(Error::ZeroNormVector { index: 1 });
    }
    Ok((dot(a, b) / joint_norm(aa, bb)).clamp(-1.0, 1.0))
}

/// Angle between two vectors in radians, `arccos` of the clamped cosine.
pub fn angle(a: &[f64], b: &[f64]) -> Result<f64> {
    cosine(a, b).map(f64::acos)
}

/// `log Σ exp(v)` evaluated with a max shift.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let max = values
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |m| m.max(v)))
        })
        .ok_or(Error::EmptySequence)?;
    if !max.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| {
        values[i]
            .partial_cmp(&values[j])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// `√(aa·bb)`; a single square root keeps `x·x / √(x·x · x·x)` exactly 1.
fn joint_norm(aa: f64, bb: f64) -> f64 {
    let p = aa * bb;
    if p.is_finite() && p > 0.0 {
        p.sqrt()
    } else {
        aa.sqrt() * bb.sqrt()
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("constant sequence"));
    }
    Ok((sxy / joint_norm(sxx, syy)).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput("fewer than two observations"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn cosine_fixtures() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine(&[1.0, 2.0], &[2.0, 1.0]).unwrap(),
            0.8,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNormVector { index: 0 })
        ));
        assert!(matches!(
            cosine(&[1.0, 0.0], &[0.0, 0.0]),
            Err(Error::ZeroNormVector { index: 1 })
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine(&[f64::NAN], &[1.0]),
            Err(Error::NonFiniteInput)
        ));
    }

    #[test]
    fn cosine_clamps_overshoot() {
        let a = [0.1, 0.2, 0.3, 1e-9];
        let c = cosine(&a, &a).unwrap();
        assert!(c <= 1.0);
        assert!(!angle(&a, &a).unwrap().is_nan());
    }

    #[test]
    fn angle_fixtures() {
        assert_eq!(angle(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            angle(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            angle(&[1.0, 2.0], &[2.0, 1.0]).unwrap(),
            0.643501108793284,
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_sum_exp_fixtures() {
        assert_eq!(log_sum_exp(&[0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            log_sum_exp(&[100.0, 100.0]).unwrap(),
            100.693147180559945,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            log_sum_exp(&[1.0, 2.0, 3.0]).unwrap(),
            3.40760596444438,
            epsilon = 1e-12
        );
        assert!(matches!(log_sum_exp(&[]), Err(Error::EmptySequence)));
        assert!(log_sum_exp(&[1e4, -1e4, 9999.0]).unwrap().is_finite());
    }

    #[test]
    fn spearman_fixtures() {
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
            1.0
        );
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap(),
            0.6,
            epsilon = 1e-15
        );
    }

    #[test]
    fn spearman_errors() {
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            spearman(&[1.0], &[1.0]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim).prop_filter("non-zero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric(a in vec_strategy(5), b in vec_strategy(5)) {
            prop_assert_eq!(cosine(&a, &b).unwrap(), cosine(&b, &a).unwrap());
        }

        #[test]
        fn cosine_positive_scale(a in vec_strategy(4), b in vec_strategy(4), s in 1e-3f64..1e3) {
            let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
            prop_assert!((cosine(&scaled, &b).unwrap() - cosine(&a, &b).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn angle_roundtrip(a in vec_strategy(3), b in vec_strategy(3)) {
            let c = cosine(&a, &b).unwrap();
            prop_assume!(c.abs() <= 1.0 - 1e-9);
            prop_assert!((angle(&a, &b).unwrap().cos() - c).abs() <= 1e-9);
        }

        #[test]
        fn log_sum_exp_bounds(v in prop::collection::vec(-1e4f64..1e4, 1..20), c in -100.0f64..100.0) {
            let lse = log_sum_exp(&v).unwrap();
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= max);
            prop_assert!(lse <= max + (v.len() as f64).ln() + 1e-12 * (1.0 + max.abs()));
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            prop_assert!((log_sum_exp(&shifted).unwrap() - (lse + c)).abs() <= 1e-10 * (1.0 + lse.abs()));
        }

        #[test]
        fn spearman_monotone_invariance(
            x in prop::collection::vec(-5.0f64..5.0, 3..30),
            seed in any::<u64>(),
        ) {
            let y: Vec<f64> = x.iter().enumerate()
                .map(|(i, v)| v.sin() + ((seed.wrapping_mul(i as u64 + 1)) % 7) as f64)
                .collect();
            let xt: Vec<f64> = x.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            match (spearman(&x, &y), spearman(&xt, &y)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "inconsistent degeneracy"),
            }
        }
    }
}
