//! Mini-GOP bit allocation by binary search on a shared target distortion.
//!
//! Every frame in a mini-GOP should land on (approximately) the same
//! distortion. The search finds the distortion `d_tar`, common to all frames,
//! whose summed per-frame rates match the bit target; per-frame rates at
//! `d_tar` become allocation ratios, and a carry buffer absorbs the
//! difference between granted and spent bits so the sequence stays on budget
//! even when individual encodes miss their model.
//!
//! Bit conservation is exact by construction: with persistent buffering,
//! `sum(actual) = target + buffer_in - buffer_out` regardless of encoder
//! noise or λ clamping, because every budget is `share + buffer` and every
//! buffer update is `budget - actual`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec_sim::{splitmix64, CodecError, VirtualCodec};
use crate::frameio::Sequence;
use crate::predictor::{
    clamp_mse_extremes, distortion_addition, distortion_scale, FeaturePredictor, LambdaGrid,
    PredictError, Predictor,
};
use crate::rdmodel::{FrameModelSet, ModelError};

pub const DEFAULT_MINIGOP_SIZE: usize = 4;
pub const DEFAULT_MAX_ITERS: u32 = 100;
pub const DEFAULT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("frames have no shared distortion interval (lower {d_lb} > upper {d_ub})")]
    InfeasibleBracket { d_lb: f64, d_ub: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocatorConfig {
    pub minigop_size: usize,
    pub max_iters: u32,
    pub tolerance: f64,
    /// Zero the carry buffer at each mini-GOP boundary instead of letting
    /// surpluses flow across.
    pub reset_buffer_per_minigop: bool,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            minigop_size: DEFAULT_MINIGOP_SIZE,
            max_iters: DEFAULT_MAX_ITERS,
            tolerance: DEFAULT_TOLERANCE,
            reset_buffer_per_minigop: false,
        }
    }
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<(), AllocError> {
        if self.minigop_size == 0 {
            return Err(AllocError::Config("minigop_size must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(AllocError::Config("max_iters must be >= 1".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(AllocError::Config(format!(
                "tolerance must be in (0, 1), got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Where a rate target sits relative to what the frames can deliver over the
/// λ range. Boundaries count as in range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feasibility {
    InRange,
    AboveMax,
    BelowMin,
}

/// Whether a whole mini-GOP had to be pinned to a λ endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClampStatus {
    InRange,
    ClampedHigh,
    ClampedLow,
}

/// Per-frame λ clamp marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LambdaClamp {
    None,
    Low,
    High,
}

impl LambdaClamp {
    pub fn as_str(self) -> &'static str {
        match self {
            LambdaClamp::None => "none",
            LambdaClamp::Low => "low",
            LambdaClamp::High => "high",
        }
    }
}

/// Bit carry across frames: surplus when an encode undershoots its budget,
/// deficit when it overshoots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BufferState {
    pub bits: f64,
}

/// Classify a total-rate target against the summed per-frame rate spans.
pub fn feasibility(models: &[FrameModelSet], r_tar: f64) -> Feasibility {
    let sum_min: f64 = models.iter().map(|m| m.r_min).sum();
    let sum_max: f64 = models.iter().map(|m| m.r_max).sum();
    if r_tar > sum_max {
        Feasibility::AboveMax
    } else if r_tar < sum_min {
        Feasibility::BelowMin
    } else {
        Feasibility::InRange
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub d_tar: f64,
    /// Per-frame rates at `d_tar`.
    pub frame_rates: Vec<f64>,
    pub iterations_used: u32,
    pub converged: bool,
}

/// Bisect for the shared distortion whose summed rates hit `r_tar`.
///
/// The bracket is the intersection of the per-frame distortion spans:
/// `[max d_min, min d_max]`. Lowering distortion raises rate, so an
/// undershoot moves the upper bound down. If `max_iters` runs out the best
/// visited point is returned with `converged = false`; the caller decides
/// whether that is acceptable.
pub fn search_target_distortion(
    models: &[FrameModelSet],
    r_tar: f64,
    cfg: &AllocatorConfig,
) -> Result<SearchResult, AllocError> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(AllocError::Argument("no frame models".into()));
    }
    if !(r_tar.is_finite() && r_tar > 0.0) {
        return Err(AllocError::Argument(format!("r_tar must be > 0, got {r_tar}")));
    }
    let d_lb0 = models.iter().map(|m| m.d_min).fold(f64::MIN, f64::max);
    let d_ub0 = models.iter().map(|m| m.d_max).fold(f64::MAX, f64::min);
    if d_lb0 > d_ub0 {
        return Err(AllocError::InfeasibleBracket { d_lb: d_lb0, d_ub: d_ub0 });
    }
    let (mut d_lb, mut d_ub) = (d_lb0, d_ub0);
    let mut best: Option<(f64, SearchResult)> = None;
    for iter in 1..=cfg.max_iters {
        let d_tar = 0.5 * (d_lb + d_ub);
        let mut rates = Vec::with_capacity(models.len());
        for m in models {
            rates.push(m.rd.rate_of_distortion(d_tar)?);
        }
        let total: f64 = rates.iter().sum();
        let rel = (total - r_tar).abs() / r_tar;
        let candidate = SearchResult {
            d_tar,
            frame_rates: rates,
            iterations_used: iter,
            converged: rel < cfg.tolerance,
        };
        if best.as_ref().is_none_or(|(b, _)| rel < *b) {
            best = Some((rel, candidate.clone()));
        }
        if candidate.converged {
            return Ok(candidate);
        }
        if total < r_tar {
            d_ub = d_tar;
        } else {
            d_lb = d_tar;
        }
    }
    let (_, mut result) = best.expect("max_iters >= 1 guarantees at least one visit");
    result.iterations_used = cfg.max_iters;
    result.converged = false;
    Ok(result)
}

/// Normalize per-frame rates into allocation ratios (sums to 1).
pub fn derive_ratios(frame_rates: &[f64]) -> Result<Vec<f64>, AllocError> {
    if frame_rates.is_empty() {
        return Err(AllocError::Argument("no frame rates".into()));
    }
    if frame_rates.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(AllocError::Argument("frame rates must be strictly positive".into()));
    }
    let total: f64 = frame_rates.iter().sum();
    Ok(frame_rates.iter().map(|r| r / total).collect())
}

/// Bit budget for one frame: its proportional share of the target plus
/// whatever the buffer carries.
pub fn frame_budget(ratio: f64, ratio_sum: f64, r_tar: f64, buffer: &BufferState) -> f64 {
    r_tar * ratio / ratio_sum + buffer.bits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// Shared target distortion; absent for clamped and equal-split plans.
    pub d_tar: Option<f64>,
    pub frame_rates: Vec<f64>,
    pub ratios: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub clamp: ClampStatus,
    pub iterations_used: u32,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub lambda: f64,
    pub budget_bpp: f64,
    pub actual_bpp: f64,
    pub actual_mse: f64,
    pub buffer_after: f64,
    pub lambda_clamp: LambdaClamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub minigop_index: usize,
    pub start_frame: usize,
    pub target_bpp: f64,
    pub plan: AllocationPlan,
    pub frames: Vec<FrameRecord>,
    pub total_bpp: f64,
    pub mean_mse: f64,
    pub final_mse: f64,
    pub buffer_in: f64,
    pub buffer_out: f64,
    /// Codec calls spent probing (pre-encodes); zero for predictive control.
    pub control_invocations: u64,
    pub encode_invocations: u64,
    pub prediction_secs: f64,
    pub encode_secs: f64,
}

impl EncodeReport {
    pub fn rate_error(&self) -> f64 {
        (self.total_bpp - self.target_bpp).abs() / self.target_bpp
    }

    pub fn mse_values(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.actual_mse).collect()
    }
}

enum Strategy {
    SharedDistortion,
    EqualBits,
}

/// Allocate and encode one mini-GOP with the shared-distortion plan.
///
/// `ref_mse` is the decoded quality the first frame references; the chain
/// continues with each frame's own result. The buffer is read and updated in
/// place; infeasible targets pin λ to the nearest endpoint and leave the
/// buffer alone.
pub fn run_minigop(
    models: &[FrameModelSet],
    r_tar: f64,
    codec: &mut VirtualCodec,
    start_index: usize,
    ref_mse: f64,
    buffer: &mut BufferState,
    cfg: &AllocatorConfig,
) -> Result<EncodeReport, AllocError> {
    run_minigop_inner(models, r_tar, codec, start_index, ref_mse, buffer, cfg, Strategy::SharedDistortion)
}

/// Equal-bit variant: every frame gets `r_tar / n` before buffering, no
/// distortion search. Baseline for fluctuation comparisons.
pub fn run_minigop_equal_bits(
    models: &[FrameModelSet],
    r_tar: f64,
    codec: &mut VirtualCodec,
    start_index: usize,
    ref_mse: f64,
    buffer: &mut BufferState,
    cfg: &AllocatorConfig,
) -> Result<EncodeReport, AllocError> {
    run_minigop_inner(models, r_tar, codec, start_index, ref_mse, buffer, cfg, Strategy::EqualBits)
}

#[allow(clippy::too_many_arguments)]
fn run_minigop_inner(
    models: &[FrameModelSet],
    r_tar: f64,
    codec: &mut VirtualCodec,
    start_index: usize,
    ref_mse: f64,
    buffer: &mut BufferState,
    cfg: &AllocatorConfig,
    strategy: Strategy,
) -> Result<EncodeReport, AllocError> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(AllocError::Argument("no frame models".into()));
    }
    if !(r_tar.is_finite() && r_tar > 0.0) {
        return Err(AllocError::Argument(format!("r_tar must be > 0, got {r_tar}")));
    }
    let n = models.len();
    let buffer_in = buffer.bits;
    let started = Instant::now();
    let invocations_before = codec.invocation_count();

    let feas = feasibility(models, r_tar);
    let report = match feas {
        Feasibility::AboveMax | Feasibility::BelowMin => {
            // Target unreachable: encode the whole mini-GOP at the nearest λ
            // endpoint and report honestly. The buffer cannot help here.
            let (lambda, clamp, flag) = if feas == Feasibility::AboveMax {
                (codec.lambda_max(), ClampStatus::ClampedHigh, LambdaClamp::High)
            } else {
                (codec.lambda_min(), ClampStatus::ClampedLow, LambdaClamp::Low)
            };
            let rates: Vec<f64> = models
                .iter()
                .map(|m| if feas == Feasibility::AboveMax { m.r_max } else { m.r_min })
                .collect();
            let ratios = derive_ratios(&rates)?;
            let mut frames = Vec::with_capacity(n);
            let mut chain_ref = ref_mse;
            for i in 0..n {
                let (bpp, mse) = codec.encode_frame(start_index + i, lambda, chain_ref)?;
                frames.push(FrameRecord {
                    frame_index: start_index + i,
                    lambda,
                    budget_bpp: bpp,
                    actual_bpp: bpp,
                    actual_mse: mse,
                    buffer_after: buffer.bits,
                    lambda_clamp: flag,
                });
                chain_ref = mse;
            }
            build_report(
                AllocationPlan {
                    d_tar: None,
                    frame_rates: rates,
                    ratios,
                    lambdas: vec![lambda; n],
                    clamp,
                    iterations_used: 0,
                    converged: true,
                },
                frames,
                r_tar,
                start_index,
                buffer_in,
                buffer.bits,
            )
        }
        Feasibility::InRange => {
            let (plan_seed, ratios) = match strategy {
                Strategy::SharedDistortion => {
                    let search = search_target_distortion(models, r_tar, cfg)?;
                    let ratios = derive_ratios(&search.frame_rates)?;
                    (Some(search), ratios)
                }
                Strategy::EqualBits => (None, vec![1.0 / n as f64; n]),
            };
            let ratio_sum: f64 = ratios.iter().sum();
            let mut frames = Vec::with_capacity(n);
            let mut lambdas = Vec::with_capacity(n);
            let mut chain_ref = ref_mse;
            for (i, model) in models.iter().enumerate() {
                let budget = frame_budget(ratios[i], ratio_sum, r_tar, buffer);
                let (lambda, flag) = if budget <= 0.0 {
                    // A drained buffer can push the budget negative; spend as
                    // little as the codec allows and recover on later frames.
                    (codec.lambda_min(), LambdaClamp::Low)
                } else {
                    let raw = model.r_lambda.invert(budget)?;
                    if raw < codec.lambda_min() {
                        (codec.lambda_min(), LambdaClamp::Low)
                    } else if raw > codec.lambda_max() {
                        (codec.lambda_max(), LambdaClamp::High)
                    } else {
                        (raw, LambdaClamp::None)
                    }
                };
                let (bpp, mse) = codec.encode_frame(start_index + i, lambda, chain_ref)?;
                buffer.bits = budget - bpp;
                frames.push(FrameRecord {
                    frame_index: start_index + i,
                    lambda,
                    budget_bpp: budget,
                    actual_bpp: bpp,
                    actual_mse: mse,
                    buffer_after: buffer.bits,
                    lambda_clamp: flag,
                });
                lambdas.push(lambda);
                chain_ref = mse;
            }
            let (d_tar, frame_rates, iterations_used, converged) = match plan_seed {
                Some(s) => (Some(s.d_tar), s.frame_rates, s.iterations_used, s.converged),
                None => (None, ratios.iter().map(|r| r * r_tar).collect(), 0, true),
            };
            build_report(
                AllocationPlan {
                    d_tar,
                    frame_rates,
                    ratios,
                    lambdas,
                    clamp: ClampStatus::InRange,
                    iterations_used,
                    converged,
                },
                frames,
                r_tar,
                start_index,
                buffer_in,
                buffer.bits,
            )
        }
    };

    let mut report = report;
    report.encode_invocations = codec.invocation_count() - invocations_before;
    report.encode_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

fn build_report(
    plan: AllocationPlan,
    frames: Vec<FrameRecord>,
    target_bpp: f64,
    start_frame: usize,
    buffer_in: f64,
    buffer_out: f64,
) -> EncodeReport {
    let total_bpp: f64 = frames.iter().map(|f| f.actual_bpp).sum();
    let mean_mse: f64 =
        frames.iter().map(|f| f.actual_mse).sum::<f64>() / frames.len() as f64;
    let final_mse = frames.last().map(|f| f.actual_mse).unwrap_or(0.0);
    EncodeReport {
        minigop_index: 0,
        start_frame,
        target_bpp,
        plan,
        frames,
        total_bpp,
        mean_mse,
        final_mse,
        buffer_in,
        buffer_out,
        control_invocations: 0,
        encode_invocations: 0,
        prediction_secs: 0.0,
        encode_secs: 0.0,
    }
}

/// Which prediction source feeds the controller.
pub enum PredictorChoice<'a> {
    /// Ground truth from the codec model, noiseless. Isolates controller
    /// behavior from prediction error.
    Oracle,
    /// Calibrated feature predictor over real pixel frames.
    Feature { predictor: &'a FeaturePredictor, frames: &'a Sequence },
}

/// Per-mini-GOP bit totals.
#[derive(Debug, Clone, Copy)]
pub enum TargetSchedule<'a> {
    /// Same total for every full mini-GOP; trailing partial groups get a
    /// proportional share.
    Constant(f64),
    /// Explicit totals, one per mini-GOP.
    PerMinigop(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationStrategy {
    SharedDistortion,
    EqualBits,
}

pub struct SequenceOptions<'a> {
    pub grid: &'a LambdaGrid,
    pub targets: TargetSchedule<'a>,
    pub cfg: &'a AllocatorConfig,
    /// Seeds the surrogate-reference noise on the feature path.
    pub seed: u64,
    pub strategy: AllocationStrategy,
}

/// Partition `n` frames into mini-GOPs of `size` (last one may be shorter).
pub fn minigop_spans(n: usize, size: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(size).map(|start| (start, size.min(n - start))).collect()
}

/// Drive a whole sequence: predict each mini-GOP, allocate, encode, and
/// carry reference quality and the bit buffer forward.
///
/// Prediction never touches the real encode path. The reference quality a
/// prediction assumes comes from the previous pair's predicted distortion
/// extremes (via the surrogate-noise scale), while the encode chain uses the
/// previous frame's actual distortion. Frame 0 references itself cleanly.
pub fn run_sequence(
    codec: &mut VirtualCodec,
    predictor: &PredictorChoice<'_>,
    opts: &SequenceOptions<'_>,
) -> Result<Vec<EncodeReport>, AllocError> {
    let cfg = opts.cfg;
    cfg.validate()?;
    let n = codec.n_frames();
    if n < cfg.minigop_size {
        return Err(AllocError::Argument(format!(
            "sequence has {n} frames, need at least one mini-GOP of {}",
            cfg.minigop_size
        )));
    }
    if opts.grid.lambda_min() < codec.lambda_min() - 1e-12
        || opts.grid.lambda_max() > codec.lambda_max() + 1e-12
    {
        return Err(AllocError::Config(format!(
            "grid [{}, {}] exceeds codec lambda range [{}, {}]",
            opts.grid.lambda_min(),
            opts.grid.lambda_max(),
            codec.lambda_min(),
            codec.lambda_max()
        )));
    }
    if let PredictorChoice::Feature { frames, .. } = predictor {
        if frames.len() != n {
            return Err(AllocError::Argument(format!(
                "feature predictor has {} frames for a {n}-frame script",
                frames.len()
            )));
        }
    }
    let spans = minigop_spans(n, cfg.minigop_size);
    if let TargetSchedule::PerMinigop(v) = opts.targets {
        if v.len() != spans.len() {
            return Err(AllocError::Argument(format!(
                "{} targets for {} mini-GOPs",
                v.len(),
                spans.len()
            )));
        }
    }

    let mut reports = Vec::with_capacity(spans.len());
    let mut buffer = BufferState::default();
    let mut actual_ref_mse = 0.0f64;
    // Predicted distortion extremes of the previous pair, already clamped to
    // the normalized-MSE domain.
    let mut prev_extremes: Option<(f64, f64)> = None;

    for (g, &(start, len)) in spans.iter().enumerate() {
        if cfg.reset_buffer_per_minigop {
            buffer.bits = 0.0;
        }
        let predict_start = Instant::now();
        let mut models = Vec::with_capacity(len);
        for f in start..start + len {
            let assumed_ref = match prev_extremes {
                None => 0.0,
                Some((d_max, d_min)) => distortion_scale(d_max, d_min)?.powi(2),
            };
            let samples = match predictor {
                PredictorChoice::Oracle => {
                    codec.ground_truth_samples(f, assumed_ref, opts.grid)?
                }
                PredictorChoice::Feature { predictor, frames } => {
                    let current = frames.frames()[f].clone();
                    let reference = if f == 0 {
                        current.clone()
                    } else {
                        match prev_extremes {
                            Some((d_max, d_min)) => distortion_addition(
                                &frames.frames()[f - 1],
                                d_max,
                                d_min,
                                opts.seed ^ splitmix64(f as u64),
                            )?,
                            None => frames.frames()[f - 1].clone(),
                        }
                    };
                    let pair = crate::frameio::FramePair::new(reference, current)
                        .map_err(PredictError::from)?;
                    predictor.predict(&pair, opts.grid)?
                }
            };
            let (d_max, d_min) = samples.mse_extremes();
            prev_extremes = Some(clamp_mse_extremes(d_max, d_min));
            models.push(samples.fit_models()?);
        }
        let prediction_secs = predict_start.elapsed().as_secs_f64();

        let target = match opts.targets {
            TargetSchedule::Constant(t) => t * len as f64 / cfg.minigop_size as f64,
            TargetSchedule::PerMinigop(v) => v[g],
        };
        let mut report = match opts.strategy {
            AllocationStrategy::SharedDistortion => {
                run_minigop(&models, target, codec, start, actual_ref_mse, &mut buffer, cfg)?
            }
            AllocationStrategy::EqualBits => run_minigop_equal_bits(
                &models,
                target,
                codec,
                start,
                actual_ref_mse,
                &mut buffer,
                cfg,
            )?,
        };
        report.minigop_index = g;
        report.prediction_secs = prediction_secs;
        actual_ref_mse = report.final_mse;
        reports.push(report);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec_sim::{ContentScript, FrameTruth};
    use crate::rdmodel::PowerLawModel;

    fn model(a1: f64, b1: f64, a2: f64, b2: f64) -> FrameModelSet {
        FrameModelSet::new(
            PowerLawModel::new(a1, b1).unwrap(),
            PowerLawModel::new(a2, b2).unwrap(),
            0.1,
            409.6,
        )
        .unwrap()
    }

    fn truth(a1: f64, b1: f64, a2: f64, b2: f64) -> FrameTruth {
        FrameTruth { alpha1: a1, beta1: b1, alpha2: a2, beta2: b2, is_scene_change: false }
    }

    fn codec_for(truths: Vec<FrameTruth>) -> VirtualCodec {
        let script =
            ContentScript { seed: 5, truths, coupling_gamma: 0.0, noise_sigma: 0.0 };
        VirtualCodec::new(script, 0.1, 409.6).unwrap()
    }

    fn two_frame_models() -> Vec<FrameModelSet> {
        vec![model(0.1, 0.5, 0.08, -0.8), model(0.3, 0.6, 0.05, -0.6)]
    }

    #[test]
    fn search_converges_and_brackets() {
        let models = two_frame_models();
        let cfg = AllocatorConfig::default();
        let sum_min: f64 = models.iter().map(|m| m.r_min).sum();
        let sum_max: f64 = models.iter().map(|m| m.r_max).sum();
        let r_tar = (sum_min * sum_max).sqrt();
        let res = search_target_distortion(&models, r_tar, &cfg).unwrap();
        assert!(res.converged);
        let total: f64 = res.frame_rates.iter().sum();
        assert!((total - r_tar).abs() / r_tar < cfg.tolerance);
        let d_lb = models.iter().map(|m| m.d_min).fold(f64::MIN, f64::max);
        let d_ub = models.iter().map(|m| m.d_max).fold(f64::MAX, f64::min);
        assert!(res.d_tar >= d_lb && res.d_tar <= d_ub);
        // Per-frame rates are consistent with the shared distortion.
        for (m, r) in models.iter().zip(&res.frame_rates) {
            assert!((m.rd.distortion_of_rate(*r).unwrap() - res.d_tar).abs() / res.d_tar < 1e-9);
        }
    }

    #[test]
    fn search_monotone_in_target() {
        let models = two_frame_models();
        let cfg = AllocatorConfig { tolerance: 1e-6, ..Default::default() };
        let lo = search_target_distortion(&models, 0.2, &cfg).unwrap();
        let hi = search_target_distortion(&models, 0.8, &cfg).unwrap();
        // More bits, less distortion.
        assert!(hi.d_tar < lo.d_tar);
    }

    #[test]
    fn search_reports_exhaustion() {
        let models = two_frame_models();
        let cfg = AllocatorConfig { max_iters: 2, tolerance: 1e-12, ..Default::default() };
        let res = search_target_distortion(&models, 0.5, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations_used, 2);
        assert!(res.d_tar > 0.0);
    }

    /// Distortion model hitting exactly `d_hi` at λ=0.1 and `d_lo` at
    /// λ=409.6.
    fn model_with_d_span(d_lo: f64, d_hi: f64) -> FrameModelSet {
        let beta2 = (d_lo / d_hi).ln() / (409.6f64 / 0.1).ln();
        let alpha2 = d_hi / 0.1f64.powf(beta2);
        model(1.0, 1.0, alpha2, beta2)
    }

    #[test]
    fn search_rejects_disjoint_spans() {
        // Frame A: d in [0.5, 0.9]; frame B: d in [0.1, 0.3]. No overlap.
        let a = model_with_d_span(0.5, 0.9);
        let b = model_with_d_span(0.1, 0.3);
        assert!((a.d_min - 0.5).abs() < 1e-9 && (a.d_max - 0.9).abs() < 1e-9);
        assert!(a.d_min > b.d_max);
        match search_target_distortion(&[a, b], 10.0, &AllocatorConfig::default()) {
            Err(AllocError::InfeasibleBracket { d_lb, d_ub }) => {
                assert!((d_lb - 0.5).abs() < 1e-9);
                assert!((d_ub - 0.3).abs() < 1e-9);
            }
            other => panic!("expected infeasible bracket, got {other:?}"),
        }
    }

    #[test]
    fn ratios_normalize() {
        let ratios = derive_ratios(&[1.0, 3.0]).unwrap();
        assert_eq!(ratios, vec![0.25, 0.75]);
        assert!(derive_ratios(&[]).is_err());
        assert!(derive_ratios(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn budget_formula() {
        let b = BufferState { bits: 0.05 };
        assert!((frame_budget(0.25, 1.0, 0.4, &b) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn feasibility_boundaries_inclusive() {
        let models = two_frame_models();
        let sum_min: f64 = models.iter().map(|m| m.r_min).sum();
        let sum_max: f64 = models.iter().map(|m| m.r_max).sum();
        assert_eq!(feasibility(&models, sum_max), Feasibility::InRange);
        assert_eq!(feasibility(&models, sum_min), Feasibility::InRange);
        assert_eq!(feasibility(&models, sum_max * 1.0001), Feasibility::AboveMax);
        assert_eq!(feasibility(&models, sum_min * 0.9999), Feasibility::BelowMin);
    }

    #[test]
    fn noiseless_minigop_delivers_target_exactly() {
        let truths = vec![
            truth(0.1, 0.5, 0.08, -0.8),
            truth(0.3, 0.6, 0.05, -0.6),
            truth(0.2, 0.4, 0.1, -0.9),
            truth(0.15, 0.7, 0.06, -0.5),
        ];
        let models: Vec<FrameModelSet> = truths
            .iter()
            .map(|t| model(t.alpha1, t.beta1, t.alpha2, t.beta2))
            .collect();
        let mut codec = codec_for(truths);
        let mut buffer = BufferState::default();
        let cfg = AllocatorConfig::default();
        let r_tar = 0.8;
        let report =
            run_minigop(&models, r_tar, &mut codec, 0, 0.0, &mut buffer, &cfg).unwrap();
        assert_eq!(report.plan.clamp, ClampStatus::InRange);
        // Exact models and a noiseless codec: every budget is hit, so the
        // total is the target to machine precision.
        assert!((report.total_bpp - r_tar).abs() < 1e-12);
        assert!(report.frames.iter().all(|f| f.lambda_clamp == LambdaClamp::None));
        // All frames land near the shared distortion.
        let d_tar = report.plan.d_tar.unwrap();
        for f in &report.frames {
            assert!((f.actual_mse - d_tar).abs() / d_tar < 3.0 * cfg.tolerance);
        }
        assert_eq!(report.encode_invocations, 4);
        assert_eq!(report.control_invocations, 0);
    }

    #[test]
    fn conservation_holds_under_noise() {
        let truths = vec![
            truth(0.1, 0.5, 0.08, -0.8),
            truth(0.3, 0.6, 0.05, -0.6),
            truth(0.2, 0.4, 0.1, -0.9),
            truth(0.15, 0.7, 0.06, -0.5),
        ];
        let models: Vec<FrameModelSet> = truths
            .iter()
            .map(|t| model(t.alpha1, t.beta1, t.alpha2, t.beta2))
            .collect();
        let script = ContentScript {
            seed: 17,
            truths,
            coupling_gamma: 0.3,
            noise_sigma: 0.1,
        };
        let mut codec = VirtualCodec::new(script, 0.1, 409.6).unwrap();
        let mut buffer = BufferState { bits: 0.012 };
        let cfg = AllocatorConfig::default();
        let r_tar = 0.6;
        let report =
            run_minigop(&models, r_tar, &mut codec, 0, 0.01, &mut buffer, &cfg).unwrap();
        let conserved = r_tar + report.buffer_in - report.buffer_out;
        assert!((report.total_bpp - conserved).abs() < 1e-9);
        assert_eq!(report.buffer_in, 0.012);
        assert_eq!(report.buffer_out, buffer.bits);
    }

    #[test]
    fn infeasible_high_pins_lambda_max() {
        let truths = vec![truth(0.1, 0.5, 0.08, -0.8), truth(0.3, 0.6, 0.05, -0.6)];
        let models: Vec<FrameModelSet> = truths
            .iter()
            .map(|t| model(t.alpha1, t.beta1, t.alpha2, t.beta2))
            .collect();
        let sum_max: f64 = models.iter().map(|m| m.r_max).sum();
        let mut codec = codec_for(truths);
        let mut buffer = BufferState { bits: 0.25 };
        let report = run_minigop(
            &models,
            sum_max * 1.5,
            &mut codec,
            0,
            0.0,
            &mut buffer,
            &AllocatorConfig::default(),
        )
        .unwrap();
        assert_eq!(report.plan.clamp, ClampStatus::ClampedHigh);
        assert!(report.plan.d_tar.is_none());
        assert!(report.frames.iter().all(|f| f.lambda == 409.6));
        assert!(report.frames.iter().all(|f| f.lambda_clamp == LambdaClamp::High));
        // Buffer is untouched by a clamped group.
        assert_eq!(buffer.bits, 0.25);
        // Achieves exactly the max deliverable rate (noiseless).
        assert!((report.total_bpp - sum_max).abs() < 1e-12);
    }

    #[test]
    fn infeasible_low_pins_lambda_min() {
        let truths = vec![truth(0.1, 0.5, 0.08, -0.8), truth(0.3, 0.6, 0.05, -0.6)];
        let models: Vec<FrameModelSet> = truths
            .iter()
            .map(|t| model(t.alpha1, t.beta1, t.alpha2, t.beta2))
            .collect();
        let sum_min: f64 = models.iter().map(|m| m.r_min).sum();
        let mut codec = codec_for(truths);
        let mut buffer = BufferState::default();
        let report = run_minigop(
            &models,
            sum_min * 0.5,
            &mut codec,
            0,
            0.0,
            &mut buffer,
            &AllocatorConfig::default(),
        )
        .unwrap();
        assert_eq!(report.plan.clamp, ClampStatus::ClampedLow);
        assert!(report.frames.iter().all(|f| f.lambda == 0.1));
        assert!((report.total_bpp - sum_min).abs() < 1e-12);
    }

    #[test]
    fn negative_budget_clamps_low_and_recovers() {
        let truths = vec![truth(0.2, 0.6, 0.05, -0.8)];
        let models = vec![model(0.2, 0.6, 0.05, -0.8)];
        let mut codec = codec_for(truths);
        // Deficit larger than the whole target.
        let mut buffer = BufferState { bits: -0.5 };
        let r_tar = 0.1;
        let report =
            run_minigop(&models, r_tar, &mut codec, 0, 0.0, &mut buffer, &AllocatorConfig::default())
                .unwrap();
        assert_eq!(report.frames[0].lambda_clamp, LambdaClamp::Low);
        assert_eq!(report.frames[0].lambda, 0.1);
        // Conservation still holds through the clamp.
        let conserved = r_tar + report.buffer_in - report.buffer_out;
        assert!((report.total_bpp - conserved).abs() < 1e-12);
    }

    #[test]
    fn minigop_partition() {
        assert_eq!(minigop_spans(8, 4), vec![(0, 4), (4, 4)]);
        assert_eq!(minigop_spans(10, 4), vec![(0, 4), (4, 4), (8, 2)]);
        assert_eq!(minigop_spans(3, 4), vec![(0, 3)]);
    }

    #[test]
    fn sequence_oracle_noiseless_hits_every_target() {
        let script = crate::codec_sim::generate_script(21, 16, 2, 0.05)
            .unwrap()
            .with_coupling(0.0);
        let mut codec = VirtualCodec::new(script, 0.1, 409.6).unwrap();
        // Per-group targets at the geometric middle of each frame's
        // deliverable rate span are always strictly feasible.
        let mut totals = Vec::new();
        for (start, len) in minigop_spans(16, 4) {
            let mut t = 0.0;
            for f in start..start + len {
                let m = codec.truth_models(f, 0.0).unwrap();
                t += (m.r_min * m.r_max).sqrt();
            }
            totals.push(t);
        }
        let grid = LambdaGrid::default_grid();
        let cfg = AllocatorConfig::default();
        let opts = SequenceOptions {
            grid: &grid,
            targets: TargetSchedule::PerMinigop(&totals),
            cfg: &cfg,
            seed: 1,
            strategy: AllocationStrategy::SharedDistortion,
        };
        let reports = run_sequence(&mut codec, &PredictorChoice::Oracle, &opts).unwrap();
        assert_eq!(reports.len(), 4);
        for r in &reports {
            assert_eq!(r.plan.clamp, ClampStatus::InRange);
            assert!(r.rate_error() < 1e-9, "rate error {}", r.rate_error());
        }
        assert_eq!(codec.invocation_count(), 16);
    }

    #[test]
    fn sequence_carries_buffer_and_reference() {
        let script = crate::codec_sim::generate_script(33, 12, 2, 0.05)
            .unwrap()
            .with_coupling(0.3)
            .with_noise(0.05);
        let mut codec = VirtualCodec::new(script, 0.1, 409.6).unwrap();
        let grid = LambdaGrid::default_grid();
        let cfg = AllocatorConfig::default();
        let opts = SequenceOptions {
            grid: &grid,
            targets: TargetSchedule::Constant(0.4),
            cfg: &cfg,
            seed: 2,
            strategy: AllocationStrategy::SharedDistortion,
        };
        let reports = run_sequence(&mut codec, &PredictorChoice::Oracle, &opts).unwrap();
        // Buffers chain across mini-GOP boundaries.
        for pair in reports.windows(2) {
            assert_eq!(pair[0].buffer_out, pair[1].buffer_in);
        }
        // Whole-sequence conservation telescopes when every group is in range.
        if reports.iter().all(|r| r.plan.clamp == ClampStatus::InRange) {
            let total: f64 = reports.iter().map(|r| r.total_bpp).sum();
            let targets: f64 = reports.iter().map(|r| r.target_bpp).sum();
            let drift = reports.first().unwrap().buffer_in - reports.last().unwrap().buffer_out;
            assert!((total - (targets + drift)).abs() < 1e-9);
        }
    }

    #[test]
    fn sequence_partial_trailing_minigop_scales_target() {
        let script = crate::codec_sim::generate_script(8, 6, 1, 0.0)
            .unwrap()
            .with_coupling(0.0);
        let mut codec = VirtualCodec::new(script, 0.1, 409.6).unwrap();
        let grid = LambdaGrid::default_grid();
        let cfg = AllocatorConfig::default();
        let opts = SequenceOptions {
            grid: &grid,
            targets: TargetSchedule::Constant(0.4),
            cfg: &cfg,
            seed: 3,
            strategy: AllocationStrategy::SharedDistortion,
        };
        let reports = run_sequence(&mut codec, &PredictorChoice::Oracle, &opts).unwrap();
        assert_eq!(reports.len(), 2);
        assert!((reports[0].target_bpp - 0.4).abs() < 1e-15);
        assert!((reports[1].target_bpp - 0.2).abs() < 1e-15);
        assert_eq!(reports[1].frames.len(), 2);
    }

    #[test]
    fn sequence_validates_inputs() {
        let script = crate::codec_sim::generate_script(4, 2, 1, 0.0).unwrap();
        let mut codec = VirtualCodec::new(script, 0.1, 409.6).unwrap();
        let grid = LambdaGrid::default_grid();
        let cfg = AllocatorConfig::default();
        let opts = SequenceOptions {
            grid: &grid,
            targets: TargetSchedule::Constant(0.4),
            cfg: &cfg,
            seed: 0,
            strategy: AllocationStrategy::SharedDistortion,
        };
        // Two frames cannot fill a four-frame mini-GOP.
        assert!(run_sequence(&mut codec, &PredictorChoice::Oracle, &opts).is_err());

        let script = crate::codec_sim::generate_script(4, 8, 1, 0.0).unwrap();
        let mut codec = VirtualCodec::new(script, 0.1, 409.6).unwrap();
        let bad_targets = [0.4];
        let opts = SequenceOptions {
            grid: &grid,
            targets: TargetSchedule::PerMinigop(&bad_targets),
            cfg: &cfg,
            seed: 0,
            strategy: AllocationStrategy::SharedDistortion,
        };
        // 8 frames of size-4 groups need 2 targets.
        assert!(run_sequence(&mut codec, &PredictorChoice::Oracle, &opts).is_err());
    }

    #[test]
    fn buffer_reset_policy() {
        let script = crate::codec_sim::generate_script(51, 8, 1, 0.1)
            .unwrap()
            .with_noise(0.1);
        let grid = LambdaGrid::default_grid();
        let cfg = AllocatorConfig { reset_buffer_per_minigop: true, ..Default::default() };
        let mut codec = VirtualCodec::new(script, 0.1, 409.6).unwrap();
        let opts = SequenceOptions {
            grid: &grid,
            targets: TargetSchedule::Constant(0.4),
            cfg: &cfg,
            seed: 4,
            strategy: AllocationStrategy::SharedDistortion,
        };
        let reports = run_sequence(&mut codec, &PredictorChoice::Oracle, &opts).unwrap();
        for r in &reports {
            assert_eq!(r.buffer_in, 0.0);
        }
    }

    #[test]
    fn equal_bits_strategy_splits_evenly() {
        let truths = vec![truth(0.1, 0.5, 0.08, -0.8), truth(0.3, 0.6, 0.05, -0.6)];
        let models: Vec<FrameModelSet> = truths
            .iter()
            .map(|t| model(t.alpha1, t.beta1, t.alpha2, t.beta2))
            .collect();
        let mut codec = codec_for(truths);
        let mut buffer = BufferState::default();
        let report = run_minigop_equal_bits(
            &models,
            0.6,
            &mut codec,
            0,
            0.0,
            &mut buffer,
            &AllocatorConfig::default(),
        )
        .unwrap();
        assert!(report.plan.d_tar.is_none());
        assert!((report.frames[0].budget_bpp - 0.3).abs() < 1e-12);
        // Noiseless: each frame spends exactly its equal share.
        assert!((report.total_bpp - 0.6).abs() < 1e-12);
    }
}
