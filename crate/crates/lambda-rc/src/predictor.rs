//! Per-frame R-D prediction ahead of any encoding.
//!
//! Predictions are sampled on a geometric λ grid. Two predictors exist: an
//! oracle that queries the virtual codec's noiseless response (upper bound for
//! controller studies), and a linear feature predictor that maps cheap frame
//! statistics to power-law parameters after a one-time calibration.
//!
//! Because the controller never sees a real encode of the current frame, the
//! reference quality a frame will be decoded against has to be assumed: the
//! previous pair's predicted distortion extremes are folded into a scale
//! `s = sqrt(ln((e^d_max + e^d_min) / 2))`, and a surrogate reference is
//! built by adding that much zero-mean noise to the clean previous frame.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec_sim::{CodecError, VirtualCodec};
use crate::frameio::{mean_abs_gradient, Frame, FrameError, FramePair};
use crate::rdmodel::{fit_power_law, FrameModelSet, ModelError, PowerLawModel};

/// Grid points used by default, spanning the default λ range.
pub const DEFAULT_GRID_SIZE: usize = 8;
pub const DEFAULT_LAMBDA_MIN: f64 = 0.1;
pub const DEFAULT_LAMBDA_MAX: f64 = 409.6;

/// Training pairs required before a calibration is accepted.
pub const MIN_CALIBRATION_PAIRS: usize = 8;

const DOWNSAMPLE_TARGET_HEIGHT: usize = 240;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),
    #[error("grid bounds must satisfy 0 < min < max, got [{min}, {max}]")]
    GridBounds { min: f64, max: f64 },
    #[error("sample vectors must match grid length {expected}, got {got}")]
    SampleLength { expected: usize, got: usize },
    #[error("sample {index} must be strictly positive, got {value}")]
    NonPositiveSample { index: usize, value: f64 },
    #[error("distortion extremes must satisfy 0 < d_min <= d_max <= 1, got [{d_min}, {d_max}]")]
    DistortionDomain { d_min: f64, d_max: f64 },
    #[error("calibration needs at least {min} frame pairs, got {got}")]
    TooFewPairs { min: usize, got: usize },
    #[error("calibration design matrix is rank deficient (pivot {pivot:.3e})")]
    RankDeficient { pivot: f64 },
    #[error("grids differ, cannot compare sample sets")]
    GridMismatch,
    #[error("predictor file: {0}")]
    Io(#[from] std::io::Error),
    #[error("predictor file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Codec(#[from] Box<CodecError>),
}

/// Geometric λ ladder: `values[i] = min · (max/min)^(i/(m-1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn geometric(lambda_min: f64, lambda_max: f64, m: usize) -> Result<Self, PredictError> {
        if m < 2 {
            return Err(PredictError::GridTooSmall(m));
        }
        if !(lambda_min.is_finite() && lambda_max.is_finite())
            || lambda_min <= 0.0
            || lambda_max <= lambda_min
        {
            return Err(PredictError::GridBounds { min: lambda_min, max: lambda_max });
        }
        let ratio = lambda_max / lambda_min;
        let mut values: Vec<f64> = (0..m)
            .map(|i| lambda_min * ratio.powf(i as f64 / (m - 1) as f64))
            .collect();
        // Endpoints are exact by definition; do not let powf drift them.
        values[0] = lambda_min;
        values[m - 1] = lambda_max;
        Ok(Self { values })
    }

    /// Default 8-point ladder over [0.1, 409.6].
    pub fn default_grid() -> Self {
        Self::geometric(DEFAULT_LAMBDA_MIN, DEFAULT_LAMBDA_MAX, DEFAULT_GRID_SIZE)
            .expect("default grid parameters are valid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lambda_min(&self) -> f64 {
        self.values[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Predicted (bpp, mse) at every grid λ, repaired to be monotone.
///
/// bpp is non-decreasing and mse non-increasing in λ index; construction
/// enforces this with a pool-adjacent-violators pass so that noisy
/// predictions still fit clean power laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDSampleSet {
    pub grid: LambdaGrid,
    pub bpp: Vec<f64>,
    pub mse: Vec<f64>,
}

impl RDSampleSet {
    pub fn new(grid: LambdaGrid, bpp: Vec<f64>, mse: Vec<f64>) -> Result<Self, PredictError> {
        let m = grid.len();
        for v in [&bpp, &mse] {
            if v.len() != m {
                return Err(PredictError::SampleLength { expected: m, got: v.len() });
            }
            if let Some((index, &value)) =
                v.iter().enumerate().find(|(_, s)| !s.is_finite() || **s <= 0.0)
            {
                return Err(PredictError::NonPositiveSample { index, value });
            }
        }
        let mut bpp = bpp;
        let mut mse = mse;
        isotonic_increasing(&mut bpp);
        let mut neg: Vec<f64> = mse.iter().map(|&x| -x).collect();
        isotonic_increasing(&mut neg);
        for (dst, &src) in mse.iter_mut().zip(&neg) {
            *dst = -src;
        }
        // Pooling averages positive values, so positivity survives the repair.
        Ok(Self { grid, bpp, mse })
    }

    /// Distortion extremes over the grid: (largest mse, smallest mse).
    pub fn mse_extremes(&self) -> (f64, f64) {
        (self.mse[0], *self.mse.last().unwrap())
    }

    /// Fit the power-law pair and bundle it with the grid's λ endpoints.
    pub fn fit_models(&self) -> Result<FrameModelSet, ModelError> {
        let r_samples: Vec<(f64, f64)> =
            self.grid.values().iter().copied().zip(self.bpp.iter().copied()).collect();
        let d_samples: Vec<(f64, f64)> =
            self.grid.values().iter().copied().zip(self.mse.iter().copied()).collect();
        let r = fit_power_law(&r_samples)?;
        let d = fit_power_law(&d_samples)?;
        FrameModelSet::new(r, d, self.grid.lambda_min(), self.grid.lambda_max())
    }
}

/// Pool adjacent violators with unit weights: least-squares non-decreasing
/// projection.
fn isotonic_increasing(values: &mut [f64]) {
    let mut sums: Vec<f64> = Vec::with_capacity(values.len());
    let mut counts: Vec<usize> = Vec::with_capacity(values.len());
    for &v in values.iter() {
        sums.push(v);
        counts.push(1);
        while sums.len() >= 2 {
            let n = sums.len();
            let mean_prev = sums[n - 2] / counts[n - 2] as f64;
            let mean_last = sums[n - 1] / counts[n - 1] as f64;
            if mean_prev <= mean_last {
                break;
            }
            let s = sums.pop().unwrap();
            let c = counts.pop().unwrap();
            *sums.last_mut().unwrap() += s;
            *counts.last_mut().unwrap() += c;
        }
    }
    let mut i = 0;
    for (s, c) in sums.into_iter().zip(counts) {
        let mean = s / c as f64;
        for _ in 0..c {
            values[i] = mean;
            i += 1;
        }
    }
}

/// Noise scale for a surrogate reference, from the previous pair's predicted
/// distortion extremes: `s = sqrt(ln((e^d_max + e^d_min) / 2))`.
pub fn distortion_scale(prev_d_max: f64, prev_d_min: f64) -> Result<f64, PredictError> {
    if !(prev_d_max.is_finite() && prev_d_min.is_finite())
        || prev_d_min <= 0.0
        || prev_d_max < prev_d_min
        || prev_d_max > 1.0
    {
        return Err(PredictError::DistortionDomain { d_min: prev_d_min, d_max: prev_d_max });
    }
    Ok(((prev_d_max.exp() + prev_d_min.exp()) / 2.0).ln().sqrt())
}

/// Build a surrogate decoded reference: clean frame plus seeded Gaussian noise
/// at the scale of [`distortion_scale`], clamped back to `[0, 1]`.
pub fn distortion_addition(
    reference: &Frame,
    prev_d_max: f64,
    prev_d_min: f64,
    seed: u64,
) -> Result<Frame, PredictError> {
    let s = distortion_scale(prev_d_max, prev_d_min)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let luma: Vec<f64> = reference
        .luma()
        .iter()
        .map(|&v| {
            let t: f64 = StandardNormal.sample(&mut rng);
            (v + t * s).clamp(0.0, 1.0)
        })
        .collect();
    Ok(Frame::new(reference.width(), reference.height(), luma)?)
}

/// Clamp predicted distortion extremes into the valid normalized-MSE domain
/// before they feed [`distortion_scale`]. Power-law tails can exceed 1.
pub fn clamp_mse_extremes(d_max: f64, d_min: f64) -> (f64, f64) {
    let d_max = d_max.clamp(1e-9, 1.0);
    let d_min = d_min.clamp(1e-9, d_max);
    (d_max, d_min)
}

/// Area-average a frame down to 240 rows (width scaled to preserve aspect,
/// rounded to even). Frames already at or below 240 rows pass through.
pub fn downsample_240p(frame: &Frame) -> Frame {
    let (w, h) = (frame.width(), frame.height());
    if h <= DOWNSAMPLE_TARGET_HEIGHT {
        return frame.clone();
    }
    let dh = DOWNSAMPLE_TARGET_HEIGHT;
    let dw = (2.0 * (w as f64 * dh as f64 / h as f64 / 2.0).round()).max(2.0) as usize;
    resample_area(frame, dw, dh)
}

/// Exact box-filter resample: each destination pixel averages the source area
/// it covers. Separable, done as a horizontal then a vertical pass.
fn resample_area(frame: &Frame, dw: usize, dh: usize) -> Frame {
    let (sw, sh) = (frame.width(), frame.height());
    let pass = |src: &[f64], rows: usize, src_len: usize, dst_len: usize| -> Vec<f64> {
        let scale = src_len as f64 / dst_len as f64;
        let mut out = vec![0.0; rows * dst_len];
        for r in 0..rows {
            let line = &src[r * src_len..(r + 1) * src_len];
            for d in 0..dst_len {
                let lo = d as f64 * scale;
                let hi = (d + 1) as f64 * scale;
                let mut acc = 0.0;
                let mut weight = 0.0;
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(src_len);
                for (s, &v) in line.iter().enumerate().take(last).skip(first) {
                    let cover = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                    acc += v * cover;
                    weight += cover;
                }
                out[r * dst_len + d] = acc / weight;
            }
        }
        out
    };
    let horizontal = pass(frame.luma(), sh, sw, dw);
    // Transpose, run the same pass over columns, transpose back.
    let mut transposed = vec![0.0; dw * sh];
    for y in 0..sh {
        for x in 0..dw {
            transposed[x * sh + y] = horizontal[y * dw + x];
        }
    }
    let vertical = pass(&transposed, dw, sh, dh);
    let mut luma = vec![0.0; dw * dh];
    for x in 0..dw {
        for y in 0..dh {
            luma[y * dw + x] = vertical[x * dh + y].clamp(0.0, 1.0);
        }
    }
    Frame::new(dw, dh, luma).expect("averaging stays within sample range")
}

/// Cheap statistics driving the linear predictor, computed at 240p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub temporal_mad: f64,
    pub spatial_grad: f64,
    pub log_downsample_ratio: f64,
}

impl FeatureVector {
    /// Design-matrix row with leading intercept.
    pub fn to_row(self) -> [f64; 4] {
        [1.0, self.temporal_mad, self.spatial_grad, self.log_downsample_ratio]
    }
}

/// Temporal MAD, spatial gradient and the pixel-count reduction factor for a
/// frame pair.
pub fn extract_features(pair: &FramePair) -> FeatureVector {
    let cur = downsample_240p(&pair.current);
    let refr = downsample_240p(&pair.reference);
    let n = cur.luma().len() as f64;
    let temporal_mad = cur
        .luma()
        .iter()
        .zip(refr.luma())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let spatial_grad = mean_abs_gradient(&cur);
    let full = pair.current.pixel_count() as f64;
    let log_downsample_ratio = (full / n).ln();
    FeatureVector { temporal_mad, spatial_grad, log_downsample_ratio }
}

/// Anything that can produce grid samples for a frame pair.
pub trait Predictor {
    fn predict(&self, pair: &FramePair, grid: &LambdaGrid) -> Result<RDSampleSet, PredictError>;
}

/// Linear map from features to power-law parameters.
///
/// One coefficient row (intercept + three feature weights) per target:
/// `ln α₁`, `β₁`, `ln α₂`, `β₂`. Calibrated by ordinary least squares on
/// frame pairs with known ground-truth models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePredictor {
    pub ln_alpha1: [f64; 4],
    pub beta1: [f64; 4],
    pub ln_alpha2: [f64; 4],
    pub beta2: [f64; 4],
}

impl FeaturePredictor {
    /// Least-squares calibration on (features, ground-truth models) pairs.
    pub fn calibrate(training: &[(FeatureVector, FrameModelSet)]) -> Result<Self, PredictError> {
        if training.len() < MIN_CALIBRATION_PAIRS {
            return Err(PredictError::TooFewPairs {
                min: MIN_CALIBRATION_PAIRS,
                got: training.len(),
            });
        }
        let rows: Vec<[f64; 4]> = training.iter().map(|(f, _)| f.to_row()).collect();
        // Normal equations: X'X w = X'y, one solve per target column.
        let mut xtx = [[0.0f64; 4]; 4];
        for row in &rows {
            for i in 0..4 {
                for j in 0..4 {
                    xtx[i][j] += row[i] * row[j];
                }
            }
        }
        let targets = |f: &dyn Fn(&FrameModelSet) -> f64| -> [f64; 4] {
            let mut xty = [0.0f64; 4];
            for (row, (_, models)) in rows.iter().zip(training) {
                let y = f(models);
                for i in 0..4 {
                    xty[i] += row[i] * y;
                }
            }
            xty
        };
        let solve = |xty: [f64; 4]| solve4(xtx, xty);
        Ok(Self {
            ln_alpha1: solve(targets(&|m| m.r_lambda.alpha.ln()))?,
            beta1: solve(targets(&|m| m.r_lambda.beta))?,
            ln_alpha2: solve(targets(&|m| m.d_lambda.alpha.ln()))?,
            beta2: solve(targets(&|m| m.d_lambda.beta))?,
        })
    }

    /// Predicted power-law parameters for a feature vector.
    ///
    /// Exponents are nudged away from zero and onto their required signs so a
    /// poorly extrapolated input still yields usable curves.
    pub fn predict_params(&self, features: FeatureVector) -> (PowerLawModel, PowerLawModel) {
        let row = features.to_row();
        let dot = |w: &[f64; 4]| -> f64 { w.iter().zip(&row).map(|(a, b)| a * b).sum() };
        let beta1 = dot(&self.beta1).max(1e-3);
        let beta2 = dot(&self.beta2).min(-1e-3);
        let r = PowerLawModel { alpha: dot(&self.ln_alpha1).exp(), beta: beta1 };
        let d = PowerLawModel { alpha: dot(&self.ln_alpha2).exp(), beta: beta2 };
        (r, d)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PredictError> {
        Ok(fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PredictError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

impl Predictor for FeaturePredictor {
    fn predict(&self, pair: &FramePair, grid: &LambdaGrid) -> Result<RDSampleSet, PredictError> {
        let (r, d) = self.predict_params(extract_features(pair));
        let mut bpp = Vec::with_capacity(grid.len());
        let mut mse = Vec::with_capacity(grid.len());
        for &lambda in grid.values() {
            bpp.push(r.eval(lambda)?);
            mse.push(d.eval(lambda)?);
        }
        RDSampleSet::new(grid.clone(), bpp, mse)
    }
}

/// Gaussian elimination with partial pivoting for the 4x4 normal equations.
fn solve4(a: [[f64; 4]; 4], b: [f64; 4]) -> Result<[f64; 4], PredictError> {
    let mut m = [[0.0f64; 5]; 4];
    for i in 0..4 {
        m[i][..4].copy_from_slice(&a[i]);
        m[i][4] = b[i];
    }
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
        .max(1.0);
    for col in 0..4 {
        let (pivot_row, pivot) = (col..4)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if pivot < 1e-10 * scale {
            return Err(PredictError::RankDeficient { pivot });
        }
        m.swap(col, pivot_row);
        let pivot_vals = m[col];
        for row in m.iter_mut().skip(col + 1) {
            let factor = row[col] / pivot_vals[col];
            for (k, &p) in pivot_vals.iter().enumerate().skip(col) {
                row[k] -= factor * p;
            }
        }
    }
    let mut x = [0.0f64; 4];
    for row in (0..4).rev() {
        let mut acc = m[row][4];
        for k in row + 1..4 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Ok(x)
}

/// Ground-truth prediction: the virtual codec's noiseless response at every
/// grid λ. Does not consume an encode invocation.
pub fn oracle_predict(
    codec: &VirtualCodec,
    frame_index: usize,
    ref_quality: f64,
    grid: &LambdaGrid,
) -> Result<RDSampleSet, PredictError> {
    codec
        .ground_truth_samples(frame_index, ref_quality, grid)
        .map_err(|e| PredictError::Codec(Box::new(e)))
}

/// Mean absolute relative error of predicted vs actual samples, (bpp, mse).
pub fn prediction_mae(
    predicted: &RDSampleSet,
    actual: &RDSampleSet,
) -> Result<(f64, f64), PredictError> {
    if predicted.grid != actual.grid {
        return Err(PredictError::GridMismatch);
    }
    let rel = |p: &[f64], a: &[f64]| -> f64 {
        p.iter().zip(a).map(|(p, a)| (p - a).abs() / a).sum::<f64>() / p.len() as f64
    };
    Ok((rel(&predicted.bpp, &actual.bpp), rel(&predicted.mse, &actual.mse)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frameio::synth_frame;
    use rand::Rng;

    #[test]
    fn grid_endpoints_and_log_spacing() {
        let grid = LambdaGrid::default_grid();
        assert_eq!(grid.len(), 8);
        assert_eq!(grid.lambda_min(), 0.1);
        assert_eq!(grid.lambda_max(), 409.6);
        let v = grid.values();
        let step = (v[1] / v[0]).ln();
        for w in v.windows(2) {
            assert!(((w[1] / w[0]).ln() - step).abs() < 1e-12);
        }
        // 4096^(1/7) per step.
        assert!(((v[1] / v[0]) - 4096f64.powf(1.0 / 7.0)).abs() < 1e-9);
    }

    #[test]
    fn grid_rejects_bad_bounds() {
        assert!(LambdaGrid::geometric(0.0, 1.0, 8).is_err());
        assert!(LambdaGrid::geometric(2.0, 1.0, 8).is_err());
        assert!(LambdaGrid::geometric(0.1, 409.6, 1).is_err());
    }

    #[test]
    fn sample_set_repairs_monotonicity() {
        let grid = LambdaGrid::geometric(1.0, 128.0, 5).unwrap();
        let set = RDSampleSet::new(
            grid,
            vec![0.1, 0.3, 0.25, 0.5, 0.9],
            vec![0.9, 0.5, 0.55, 0.2, 0.1],
        )
        .unwrap();
        for w in set.bpp.windows(2) {
            assert!(w[0] <= w[1]);
        }
        for w in set.mse.windows(2) {
            assert!(w[0] >= w[1]);
        }
        // Violating neighbors pool to their mean.
        assert!((set.bpp[1] - 0.275).abs() < 1e-12);
        assert!((set.bpp[2] - 0.275).abs() < 1e-12);
        assert!((set.mse[1] - 0.525).abs() < 1e-12);
    }

    #[test]
    fn isotonic_projection_preserves_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let v: Vec<f64> = (0..12).map(|_| rng.gen_range(0.01..2.0)).collect();
            let mut w = v.clone();
            isotonic_increasing(&mut w);
            let sv: f64 = v.iter().sum();
            let sw: f64 = w.iter().sum();
            assert!((sv - sw).abs() < 1e-9);
            for pair in w.windows(2) {
                assert!(pair[0] <= pair[1] + 1e-12);
            }
        }
    }

    #[test]
    fn monotone_input_unchanged() {
        let grid = LambdaGrid::geometric(1.0, 8.0, 4).unwrap();
        let bpp = vec![0.1, 0.2, 0.4, 0.8];
        let mse = vec![0.8, 0.4, 0.2, 0.1];
        let set = RDSampleSet::new(grid, bpp.clone(), mse.clone()).unwrap();
        assert_eq!(set.bpp, bpp);
        assert_eq!(set.mse, mse);
    }

    #[test]
    fn distortion_scale_known_values() {
        // Equal extremes at 0.04: s = sqrt(ln(e^0.04)) = 0.2.
        let s = distortion_scale(0.04, 0.04).unwrap();
        assert!((s - 0.2).abs() < 1e-12);
        let s = distortion_scale(0.09, 0.01).unwrap();
        let expected = ((0.09f64.exp() + 0.01f64.exp()) / 2.0).ln().sqrt();
        assert!((s - expected).abs() < 1e-15);
        assert!((s - 0.225389).abs() < 1e-6);
    }

    #[test]
    fn distortion_scale_domain_checks() {
        assert!(distortion_scale(0.5, 0.0).is_err());
        assert!(distortion_scale(0.01, 0.09).is_err());
        assert!(distortion_scale(1.5, 0.01).is_err());
    }

    #[test]
    fn distortion_addition_statistics() {
        let frame = Frame::constant(400, 300, 0.5).unwrap();
        let noisy = distortion_addition(&frame, 0.04, 0.04, 77).unwrap();
        let n = noisy.luma().len() as f64;
        let mean: f64 = noisy.luma().iter().sum::<f64>() / n;
        let var: f64 = noisy.luma().iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        // s = 0.2; clamping at [0, 1] trims ~2.5% of the variance at mid-gray.
        assert!((mean - 0.5).abs() < 0.005);
        assert!((var - 0.04).abs() / 0.04 < 0.05);
        assert!(noisy.luma().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn distortion_addition_deterministic() {
        let frame = synth_frame(32, 32, 0.5, 0.0, 5).unwrap();
        let a = distortion_addition(&frame, 0.05, 0.02, 9).unwrap();
        let b = distortion_addition(&frame, 0.05, 0.02, 9).unwrap();
        assert_eq!(a.luma(), b.luma());
        let c = distortion_addition(&frame, 0.05, 0.02, 10).unwrap();
        assert_ne!(a.luma(), c.luma());
    }

    #[test]
    fn downsample_passthrough_and_hd() {
        let small = synth_frame(320, 180, 0.5, 0.0, 1).unwrap();
        let out = downsample_240p(&small);
        assert_eq!((out.width(), out.height()), (320, 180));

        let hd = Frame::constant(1920, 1080, 0.25).unwrap();
        let out = downsample_240p(&hd);
        assert_eq!((out.width(), out.height()), (426, 240));
        assert!(out.luma().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn downsample_preserves_mean() {
        let frame = synth_frame(640, 480, 0.8, 0.3, 21).unwrap();
        let out = downsample_240p(&frame);
        let mean_in: f64 = frame.luma().iter().sum::<f64>() / frame.luma().len() as f64;
        let mean_out: f64 = out.luma().iter().sum::<f64>() / out.luma().len() as f64;
        // Box filtering is an average of averages with equal-area cells.
        assert!((mean_in - mean_out).abs() < 1e-3);
    }

    #[test]
    fn features_flat_pair_are_zero() {
        let f = Frame::constant(64, 64, 0.5).unwrap();
        let pair = FramePair::new(f.clone(), f).unwrap();
        let feat = extract_features(&pair);
        assert_eq!(feat.temporal_mad, 0.0);
        assert_eq!(feat.spatial_grad, 0.0);
        assert_eq!(feat.log_downsample_ratio, 0.0);
    }

    #[test]
    fn features_see_motion_and_texture() {
        let a = synth_frame(64, 64, 0.6, 0.0, 4).unwrap();
        let b = synth_frame(64, 64, 0.6, 2.0, 4).unwrap();
        let moving = extract_features(&FramePair::new(a.clone(), b).unwrap());
        let still = extract_features(&FramePair::new(a.clone(), a).unwrap());
        assert!(moving.temporal_mad > still.temporal_mad);
        assert!(moving.spatial_grad > 0.0);
    }

    #[test]
    fn solve4_inverts_known_system() {
        let a = [
            [4.0, 1.0, 0.0, 2.0],
            [1.0, 5.0, 1.0, 0.0],
            [0.0, 1.0, 3.0, 1.0],
            [2.0, 0.0, 1.0, 6.0],
        ];
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let mut b = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 {
                b[i] += a[i][j] * x_true[j];
            }
        }
        let x = solve4(a, b).unwrap();
        for (got, want) in x.iter().zip(&x_true) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn calibration_recovers_linear_map() {
        // Synthetic truth: parameters exactly linear in the features.
        let w_la1 = [-2.0, 3.0, 1.5, 0.1];
        let w_b1 = [0.5, 0.8, -0.3, 0.02];
        let w_la2 = [-3.0, -1.0, 2.0, 0.05];
        let w_b2 = [-0.8, -0.5, 0.4, -0.01];
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut training = Vec::new();
        for _ in 0..20 {
            let f = FeatureVector {
                temporal_mad: rng.gen_range(0.0..0.3),
                spatial_grad: rng.gen_range(0.0..0.4),
                log_downsample_ratio: rng.gen_range(0.0..3.0),
            };
            let row = f.to_row();
            let dot = |w: &[f64; 4]| w.iter().zip(&row).map(|(a, b)| a * b).sum::<f64>();
            let r = PowerLawModel::new(dot(&w_la1).exp(), dot(&w_b1).max(0.05)).unwrap();
            let d = PowerLawModel::new(dot(&w_la2).exp(), dot(&w_b2).min(-0.05)).unwrap();
            let set = FrameModelSet::new(r, d, 0.1, 409.6).unwrap();
            training.push((f, set));
        }
        let predictor = FeaturePredictor::calibrate(&training).unwrap();
        for (f, truth) in &training {
            let (r, d) = predictor.predict_params(*f);
            assert!((r.alpha.ln() - truth.r_lambda.alpha.ln()).abs() < 1e-6);
            assert!((r.beta - truth.r_lambda.beta).abs() < 1e-6);
            assert!((d.alpha.ln() - truth.d_lambda.alpha.ln()).abs() < 1e-6);
            assert!((d.beta - truth.d_lambda.beta).abs() < 1e-6);
        }
    }

    #[test]
    fn calibration_needs_enough_pairs() {
        let f = Frame::constant(32, 32, 0.5).unwrap();
        let pair = FramePair::new(f.clone(), f).unwrap();
        let feat = extract_features(&pair);
        let set = FrameModelSet::new(
            PowerLawModel::new(0.2, 0.6).unwrap(),
            PowerLawModel::new(0.05, -0.8).unwrap(),
            0.1,
            409.6,
        )
        .unwrap();
        let training: Vec<_> = (0..7).map(|_| (feat, set)).collect();
        assert!(matches!(
            FeaturePredictor::calibrate(&training),
            Err(PredictError::TooFewPairs { min: 8, got: 7 })
        ));
    }

    #[test]
    fn degenerate_calibration_is_rank_deficient() {
        // Identical feature rows cannot determine four coefficients.
        let feat = FeatureVector { temporal_mad: 0.1, spatial_grad: 0.2, log_downsample_ratio: 1.0 };
        let set = FrameModelSet::new(
            PowerLawModel::new(0.2, 0.6).unwrap(),
            PowerLawModel::new(0.05, -0.8).unwrap(),
            0.1,
            409.6,
        )
        .unwrap();
        let training: Vec<_> = (0..10).map(|_| (feat, set)).collect();
        assert!(matches!(
            FeaturePredictor::calibrate(&training),
            Err(PredictError::RankDeficient { .. })
        ));
    }

    #[test]
    fn predictor_save_load_round_trip() {
        let p = FeaturePredictor {
            ln_alpha1: [-2.0, 3.0, 1.5, 0.1],
            beta1: [0.5, 0.8, -0.3, 0.02],
            ln_alpha2: [-3.0, -1.0, 2.0, 0.05],
            beta2: [-0.8, -0.5, 0.4, -0.01],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictor.json");
        p.save(&path).unwrap();
        assert_eq!(FeaturePredictor::load(&path).unwrap(), p);
    }

    #[test]
    fn prediction_mae_matches_hand_computation() {
        let grid = LambdaGrid::geometric(1.0, 8.0, 4).unwrap();
        let a = RDSampleSet::new(grid.clone(), vec![0.1, 0.2, 0.4, 0.8], vec![0.8, 0.4, 0.2, 0.1])
            .unwrap();
        let b = RDSampleSet::new(grid, vec![0.11, 0.2, 0.4, 0.8], vec![0.8, 0.4, 0.2, 0.12])
            .unwrap();
        let (mae_bpp, mae_mse) = prediction_mae(&b, &a).unwrap();
        assert!((mae_bpp - 0.025).abs() < 1e-12);
        assert!((mae_mse - 0.05).abs() < 1e-12);
    }

    #[test]
    fn prediction_mae_rejects_grid_mismatch() {
        let g1 = LambdaGrid::geometric(1.0, 8.0, 4).unwrap();
        let g2 = LambdaGrid::geometric(1.0, 16.0, 4).unwrap();
        let a = RDSampleSet::new(g1, vec![0.1, 0.2, 0.4, 0.8], vec![0.8, 0.4, 0.2, 0.1]).unwrap();
        let b = RDSampleSet::new(g2, vec![0.1, 0.2, 0.4, 0.8], vec![0.8, 0.4, 0.2, 0.1]).unwrap();
        assert!(matches!(prediction_mae(&b, &a), Err(PredictError::GridMismatch)));
    }

    #[test]
    fn clamp_extremes_stays_ordered() {
        let (dmax, dmin) = clamp_mse_extremes(3.2, 0.5);
        assert_eq!(dmax, 1.0);
        assert_eq!(dmin, 0.5);
        let (dmax, dmin) = clamp_mse_extremes(0.08, 0.02);
        assert_eq!((dmax, dmin), (0.08, 0.02));
    }
}
