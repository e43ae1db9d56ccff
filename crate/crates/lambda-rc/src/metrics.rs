//! Closed-loop evaluation metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::EncodeReport;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
}

/// Relative bit miss `|actual - target| / target`.
pub fn rate_error(actual: f64, target: f64) -> Result<f64, MetricError> {
    if !(target.is_finite() && target > 0.0) {
        return Err(MetricError::NonPositive { name: "target", value: target });
    }
    Ok((actual - target).abs() / target)
}

/// Mean absolute deviation of per-frame MSE around its mean, normalized by
/// the mean. Zero means perfectly constant quality; scale-free.
pub fn quality_fluctuation(mse: &[f64]) -> Result<f64, MetricError> {
    if mse.is_empty() {
        return Err(MetricError::Empty("mse values"));
    }
    let mean = mse.iter().sum::<f64>() / mse.len() as f64;
    if !(mean.is_finite() && mean > 0.0) {
        return Err(MetricError::NonPositive { name: "mean mse", value: mean });
    }
    Ok(mse.iter().map(|m| (m - mean).abs()).sum::<f64>() / mse.len() as f64 / mean)
}

/// Controlled-over-reference fluctuation; below 1 means smoother quality
/// than the fixed-λ reference run.
pub fn fluctuation_ratio(controlled: f64, reference: f64) -> Result<f64, MetricError> {
    if !(reference.is_finite() && reference > 0.0) {
        return Err(MetricError::NonPositive { name: "reference fluctuation", value: reference });
    }
    if !(controlled.is_finite() && controlled >= 0.0) {
        return Err(MetricError::NonPositive { name: "controlled fluctuation", value: controlled });
    }
    Ok(controlled / reference)
}

/// Codec calls spent probing per codec call spent producing output.
pub fn invocation_ratio(control: u64, encode: u64) -> Result<f64, MetricError> {
    if encode == 0 {
        return Err(MetricError::NonPositive { name: "encode invocations", value: 0.0 });
    }
    Ok(control as f64 / encode as f64)
}

/// Aggregated outcome of one method at one target over a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: String,
    pub target_bpp: f64,
    /// Mean per-mini-GOP relative rate error.
    pub mean_rate_error: f64,
    /// Relative error of the whole-sequence bit total.
    pub cumulative_rate_error: f64,
    /// Mean per-mini-GOP quality fluctuation.
    pub mean_q_f: f64,
    /// Fluctuation relative to a fixed-λ reference, when one was run.
    pub fluctuation_ratio: Option<f64>,
    pub control_invocations: u64,
    pub encode_invocations: u64,
    pub invocation_ratio: f64,
    /// Wall-clock totals; excluded from CSV output to keep runs byte-stable.
    pub prediction_secs: f64,
    pub encode_secs: f64,
}

/// Collapse per-mini-GOP reports into one record. `reference_q_f` is the
/// fluctuation of a fixed-λ run of the same content at the same target.
pub fn summarize(
    method: &str,
    target_bpp: f64,
    reports: &[EncodeReport],
    reference_q_f: Option<f64>,
) -> Result<MetricRecord, MetricError> {
    if reports.is_empty() {
        return Err(MetricError::Empty("reports"));
    }
    let n = reports.len() as f64;
    let mut mean_rate_error = 0.0;
    let mut mean_q_f = 0.0;
    let mut total = 0.0;
    let mut target_total = 0.0;
    let mut control = 0u64;
    let mut encode = 0u64;
    let mut prediction_secs = 0.0;
    let mut encode_secs = 0.0;
    for r in reports {
        mean_rate_error += rate_error(r.total_bpp, r.target_bpp)?;
        mean_q_f += quality_fluctuation(&r.mse_values())?;
        total += r.total_bpp;
        target_total += r.target_bpp;
        control += r.control_invocations;
        encode += r.encode_invocations;
        prediction_secs += r.prediction_secs;
        encode_secs += r.encode_secs;
    }
    Ok(MetricRecord {
        method: method.to_string(),
        target_bpp,
        mean_rate_error: mean_rate_error / n,
        cumulative_rate_error: rate_error(total, target_total)?,
        mean_q_f: mean_q_f / n,
        fluctuation_ratio: match reference_q_f {
            Some(q) => Some(fluctuation_ratio(mean_q_f / n, q)?),
            None => None,
        },
        control_invocations: control,
        encode_invocations: encode,
        invocation_ratio: invocation_ratio(control, encode)?,
        prediction_secs,
        encode_secs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rate_error_basics() {
        assert!((rate_error(0.11, 0.1).unwrap() - 0.1).abs() < 1e-12);
        assert!((rate_error(0.09, 0.1).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(rate_error(0.1, 0.1).unwrap(), 0.0);
        assert!(rate_error(0.1, 0.0).is_err());
        assert!(rate_error(0.1, -1.0).is_err());
    }

    #[test]
    fn fluctuation_known_values() {
        // Constant quality: zero fluctuation.
        assert_eq!(quality_fluctuation(&[0.04, 0.04, 0.04]).unwrap(), 0.0);
        // mean = 0.05, deviations 0.01 each: Q_F = 0.01/0.05 = 0.2.
        let q = quality_fluctuation(&[0.04, 0.06]).unwrap();
        assert!((q - 0.2).abs() < 1e-12);
        assert!(quality_fluctuation(&[]).is_err());
    }

    #[test]
    fn invocation_ratio_known_values() {
        assert_eq!(invocation_ratio(32, 4).unwrap(), 8.0);
        assert_eq!(invocation_ratio(0, 4).unwrap(), 0.0);
        assert!(invocation_ratio(1, 0).is_err());
    }

    #[test]
    fn ratio_below_one_means_smoother() {
        let r = fluctuation_ratio(0.05, 0.2).unwrap();
        assert!((r - 0.25).abs() < 1e-12);
        assert!(fluctuation_ratio(0.05, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn rate_error_scale_invariant(
            actual in 1e-6f64..10.0,
            target in 1e-6f64..10.0,
            scale in 1e-3f64..1e3,
        ) {
            let a = rate_error(actual, target).unwrap();
            let b = rate_error(actual * scale, target * scale).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn fluctuation_scale_invariant(
            values in proptest::collection::vec(1e-6f64..1.0, 1..16),
            scale in 1e-3f64..1e3,
        ) {
            let a = quality_fluctuation(&values).unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let b = quality_fluctuation(&scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn fluctuation_nonnegative_and_zero_iff_constant(
            value in 1e-6f64..1.0,
            n in 1usize..16,
        ) {
            // Summation rounding can leave a few ULPs of deviation.
            let values = vec![value; n];
            prop_assert!(quality_fluctuation(&values).unwrap() < 1e-12);
        }
    }
}
