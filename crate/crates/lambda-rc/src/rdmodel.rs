//! Power-law rate and distortion models in the lambda domain.
//!
//! Per frame, bitrate and distortion follow `R(λ) = α₁·λ^β₁` (β₁ > 0) and
//! `D(λ) = α₂·λ^β₂` (β₂ < 0). Eliminating λ yields the hyperbolic curve
//! `D(R) = c·R^(-k)`, which is what the allocator searches over.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponents closer to zero than this make the model non-invertible in
/// practice.
pub const MIN_EXPONENT_MAG: f64 = 1e-6;

/// Minimum sample count accepted by [`fit_power_law`].
pub const MIN_FIT_SAMPLES: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("need at least {min} samples with distinct lambdas, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("sample {index} is not strictly positive (lambda={lambda}, value={value})")]
    NonPositiveSample { index: usize, lambda: f64, value: f64 },
    #[error("duplicate lambda {lambda} in fit input")]
    DuplicateLambda { lambda: f64 },
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("exponent {beta} too close to zero to invert")]
    DegenerateExponent { beta: f64 },
    #[error("rate model needs a positive exponent, got {beta}")]
    RateExponentSign { beta: f64 },
    #[error("distortion model needs a negative exponent, got {beta}")]
    DistortionExponentSign { beta: f64 },
    #[error("bad serialized model record `{0}`")]
    BadRecord(String),
}

fn check_positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if !value.is_finite() {
        return Err(ModelError::NonFinite { name, value });
    }
    if value <= 0.0 {
        return Err(ModelError::NonPositive { name, value });
    }
    Ok(())
}

/// `value(λ) = alpha · λ^beta` with `alpha > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawModel {
    pub alpha: f64,
    pub beta: f64,
}

impl PowerLawModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ModelError> {
        check_positive("alpha", alpha)?;
        if !beta.is_finite() {
            return Err(ModelError::NonFinite { name: "beta", value: beta });
        }
        Ok(Self { alpha, beta })
    }

    pub fn eval(&self, lambda: f64) -> Result<f64, ModelError> {
        check_positive("lambda", lambda)?;
        Ok(self.alpha * lambda.powf(self.beta))
    }

    /// Solve `value = alpha · λ^beta` for λ.
    pub fn invert(&self, value: f64) -> Result<f64, ModelError> {
        check_positive("value", value)?;
        if self.beta.abs() < MIN_EXPONENT_MAG {
            return Err(ModelError::DegenerateExponent { beta: self.beta });
        }
        Ok((value / self.alpha).powf(1.0 / self.beta))
    }
}

impl fmt::Display for PowerLawModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "alpha={};beta={}", self.alpha, self.beta)
    }
}

impl FromStr for PowerLawModel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        let (alpha, beta) = parse_record(s, "alpha", "beta")?;
        PowerLawModel::new(alpha, beta)
    }
}

/// Hyperbolic distortion-rate curve `D(R) = c · R^(-k)` with `c, k > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RDCurve {
    pub c: f64,
    pub k: f64,
}

impl RDCurve {
    pub fn new(c: f64, k: f64) -> Result<Self, ModelError> {
        check_positive("c", c)?;
        check_positive("k", k)?;
        Ok(Self { c, k })
    }

    pub fn distortion_of_rate(&self, rate: f64) -> Result<f64, ModelError> {
        check_positive("rate", rate)?;
        Ok(self.c * rate.powf(-self.k))
    }

    /// Rate that reaches a given distortion: `R = (c / d)^(1/k)`.
    pub fn rate_of_distortion(&self, distortion: f64) -> Result<f64, ModelError> {
        check_positive("distortion", distortion)?;
        Ok((self.c / distortion).powf(1.0 / self.k))
    }

    /// Magnitude of the curve slope, `λ = -dD/dR = c·k·R^(-k-1)`.
    pub fn slope_lambda(&self, rate: f64) -> Result<f64, ModelError> {
        check_positive("rate", rate)?;
        Ok(self.c * self.k * rate.powf(-self.k - 1.0))
    }
}

impl fmt::Display for RDCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c={};k={}", self.c, self.k)
    }
}

impl FromStr for RDCurve {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        let (c, k) = parse_record(s, "c", "k")?;
        RDCurve::new(c, k)
    }
}

fn parse_record(s: &str, first: &str, second: &str) -> Result<(f64, f64), ModelError> {
    let bad = || ModelError::BadRecord(s.to_string());
    let (a, b) = s.split_once(';').ok_or_else(bad)?;
    let a = a.trim().strip_prefix(first).and_then(|r| r.strip_prefix('=')).ok_or_else(bad)?;
    let b = b.trim().strip_prefix(second).and_then(|r| r.strip_prefix('=')).ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

/// Least-squares power-law fit in log-log space.
///
/// Minimizes squared residuals of `ln v = ln α + β·ln λ`. Requires at least
/// [`MIN_FIT_SAMPLES`] samples with distinct lambdas, all strictly positive.
pub fn fit_power_law(samples: &[(f64, f64)]) -> Result<PowerLawModel, ModelError> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(ModelError::TooFewSamples {
            min: MIN_FIT_SAMPLES,
            got: samples.len(),
        });
    }
    for (index, &(lambda, value)) in samples.iter().enumerate() {
        if !(lambda.is_finite() && value.is_finite()) || lambda <= 0.0 || value <= 0.0 {
            return Err(ModelError::NonPositiveSample { index, lambda, value });
        }
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(ModelError::DuplicateLambda { lambda: samples[0].0 });
    }
    let beta = sxy / sxx;
    let alpha = (mean_y - beta * mean_x).exp();
    PowerLawModel::new(alpha, beta)
}

/// Eliminate λ from an (R, D) model pair.
///
/// With `R = α₁·λ^β₁` and `D = α₂·λ^β₂`: `k = -β₂/β₁` and `c = α₂·α₁^k`.
pub fn derive_rd_curve(r: &PowerLawModel, d: &PowerLawModel) -> Result<RDCurve, ModelError> {
    if r.beta.abs() < MIN_EXPONENT_MAG {
        return Err(ModelError::DegenerateExponent { beta: r.beta });
    }
    if r.beta < 0.0 {
        return Err(ModelError::RateExponentSign { beta: r.beta });
    }
    if d.beta >= 0.0 {
        return Err(ModelError::DistortionExponentSign { beta: d.beta });
    }
    let k = -d.beta / r.beta;
    let c = d.alpha * r.alpha.powf(k);
    RDCurve::new(c, k)
}

/// Per-frame model bundle with the λ-range endpoints pre-evaluated.
///
/// `r_min`/`r_max` and `d_min`/`d_max` are the achievable bpp and MSE spans
/// over `[lambda_min, lambda_max]`; the signs of the exponents guarantee
/// `r_min < r_max` and `d_min < d_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameModelSet {
    pub r_lambda: PowerLawModel,
    pub d_lambda: PowerLawModel,
    pub rd: RDCurve,
    pub r_min: f64,
    pub r_max: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl FrameModelSet {
    /// Build the bundle, enforcing exponent signs.
    ///
    /// A distortion exponent within `MIN_EXPONENT_MAG` of zero is clamped to
    /// `-MIN_EXPONENT_MAG` (a nearly flat frame still needs a usable curve);
    /// a degenerate rate exponent is rejected outright.
    pub fn new(
        r_lambda: PowerLawModel,
        d_lambda: PowerLawModel,
        lambda_min: f64,
        lambda_max: f64,
    ) -> Result<Self, ModelError> {
        check_positive("lambda_min", lambda_min)?;
        check_positive("lambda_max", lambda_max)?;
        if lambda_max <= lambda_min {
            return Err(ModelError::NonPositive {
                name: "lambda_max - lambda_min",
                value: lambda_max - lambda_min,
            });
        }
        if r_lambda.beta.abs() < MIN_EXPONENT_MAG {
            return Err(ModelError::DegenerateExponent { beta: r_lambda.beta });
        }
        if r_lambda.beta < 0.0 {
            return Err(ModelError::RateExponentSign { beta: r_lambda.beta });
        }
        let mut d_lambda = d_lambda;
        if d_lambda.beta > MIN_EXPONENT_MAG {
            return Err(ModelError::DistortionExponentSign { beta: d_lambda.beta });
        }
        if d_lambda.beta > -MIN_EXPONENT_MAG {
            d_lambda.beta = -MIN_EXPONENT_MAG;
        }
        let rd = derive_rd_curve(&r_lambda, &d_lambda)?;
        Ok(Self {
            r_lambda,
            d_lambda,
            rd,
            r_min: r_lambda.eval(lambda_min)?,
            r_max: r_lambda.eval(lambda_max)?,
            d_min: d_lambda.eval(lambda_max)?,
            d_max: d_lambda.eval(lambda_min)?,
        })
    }
}
