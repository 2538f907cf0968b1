//! Forecast error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::shape(format!(
            "{} actual values vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check(actual, predicted)?;
    let sse: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check(actual, predicted)?;
    let sae: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p).abs()).sum();
    Ok(sae / actual.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check(actual, predicted)?;
    if let Some(i) = actual.iter().position(|&y| y == 0.0) {
        return Err(Error::ZeroActual(i));
    }
    let s: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| ((y - p) / y).abs())
        .sum();
    Ok(100.0 * s / actual.len() as f64)
}

/// Relative MAPE improvement over a baseline, in percent. Negative when worse.
pub fn error_reduction(baseline_mape: f64, proposed_mape: f64) -> Result<f64> {
    if baseline_mape == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(100.0 * (baseline_mape - proposed_mape) / baseline_mape)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    /// `100 - mape`.
    pub accuracy: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn compute(actual: &[f64], predicted: &[f64]) -> Result<Self> {
        let mape = mape(actual, predicted)?;
        Ok(Self {
            rmse: rmse(actual, predicted)?,
            mae: mae(actual, predicted)?,
            mape,
            accuracy: 100.0 - mape,
            n: actual.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 3.5);
        assert!((mape(&[100.0], &[90.0]).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::ShapeError(_))));
        assert!(matches!(mae(&[], &[]), Err(Error::EmptyInput)));
        assert!(matches!(mape(&[1.0, 0.0], &[1.0, 1.0]), Err(Error::ZeroActual(1))));
        assert!(matches!(error_reduction(0.0, 1.0), Err(Error::ZeroBaseline)));
    }

    #[test]
    fn reduction_examples() {
        assert!((error_reduction(7.51, 4.27).unwrap() - 43.14).abs() < 0.01);
        assert_eq!(error_reduction(3.0, 3.0).unwrap(), 0.0);
        assert!(error_reduction(3.0, 4.0).unwrap() < 0.0);
    }

    #[test]
    fn report_accuracy() {
        let r = MetricReport::compute(&[100.0, 200.0], &[90.0, 210.0]).unwrap();
        assert!((r.mape - 7.5).abs() < 1e-12);
        assert!((r.accuracy - 92.5).abs() < 1e-12);
        assert_eq!(r.n, 2);
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(1.0..1e4f64, n),
                prop::collection::vec(-1e4..1e4f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn mae_le_rmse((y, p) in pairs()) {
            prop_assert!(mae(&y, &p).unwrap() <= rmse(&y, &p).unwrap() * (1.0 + 1e-12));
        }

        #[test]
        fn mape_scale_invariant((y, p) in pairs(), c in 1e-3..1e3f64) {
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let (a, b) = (mape(&y, &p).unwrap(), mape(&ys, &ps).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn permutation_invariant((y, p) in pairs(), rot in 0usize..40) {
            let n = y.len();
            let k = rot % n;
            let (mut yr, mut pr) = (y.clone(), p.clone());
            yr.rotate_left(k);
            pr.rotate_left(k);
            prop_assert!((rmse(&y, &p).unwrap() - rmse(&yr, &pr).unwrap()).abs() < 1e-9 * rmse(&y, &p).unwrap().max(1.0));
        }

        #[test]
        fn zero_iff_equal(y in prop::collection::vec(1.0..1e4f64, 1..30)) {
            prop_assert_eq!(rmse(&y, &y).unwrap(), 0.0);
            prop_assert_eq!(mae(&y, &y).unwrap(), 0.0);
            prop_assert_eq!(mape(&y, &y).unwrap(), 0.0);
            let mut q = y.clone();
            q[0] += 1.0;
            prop_assert!(rmse(&y, &q).unwrap() > 0.0 && mae(&y, &q).unwrap() > 0.0 && mape(&y, &q).unwrap() > 0.0);
        }
    }
}
