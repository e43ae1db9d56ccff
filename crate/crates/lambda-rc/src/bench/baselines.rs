//! Baseline controllers the predictive allocator is compared against.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::allocator::{
    run_minigop, AllocError, AllocationPlan, AllocatorConfig, BufferState, ClampStatus,
    EncodeReport, FrameRecord, LambdaClamp,
};
use crate::codec_sim::VirtualCodec;
use crate::predictor::{LambdaGrid, RDSampleSet};
use crate::rdmodel::PowerLawModel;

/// Multi-pass control: actually encode every frame of the group at every
/// grid λ (the invocations a predictive controller avoids), fit per-frame
/// models from those measurements, then allocate and re-encode exactly like
/// the predictive path.
///
/// Costs `len * grid.len()` control invocations plus `len` output encodes.
#[allow(clippy::too_many_arguments)]
pub fn run_multipass(
    codec: &mut VirtualCodec,
    grid: &LambdaGrid,
    r_tar: f64,
    start_index: usize,
    len: usize,
    ref_mse: f64,
    buffer: &mut BufferState,
    cfg: &AllocatorConfig,
) -> Result<EncodeReport, AllocError> {
    if len == 0 {
        return Err(AllocError::Argument("empty mini-GOP".into()));
    }
    let probe_start = Instant::now();
    let invocations_before = codec.invocation_count();
    let mut bpp_samples = vec![Vec::with_capacity(grid.len()); len];
    let mut mse_samples = vec![Vec::with_capacity(grid.len()); len];
    for &lambda in grid.values() {
        let mut chain_ref = ref_mse;
        for i in 0..len {
            let (bpp, mse) = codec.encode_frame(start_index + i, lambda, chain_ref)?;
            bpp_samples[i].push(bpp);
            mse_samples[i].push(mse);
            chain_ref = mse;
        }
    }
    let control_invocations = codec.invocation_count() - invocations_before;
    let mut models = Vec::with_capacity(len);
    for (bpp, mse) in bpp_samples.into_iter().zip(mse_samples) {
        // Measured samples can be noisy; the sample-set repair and the
        // log-log fit absorb that exactly as on the predictive path.
        let samples = RDSampleSet::new(grid.clone(), bpp, mse)?;
        models.push(samples.fit_models()?);
    }
    let probe_secs = probe_start.elapsed().as_secs_f64();

    let mut report = run_minigop(&models, r_tar, codec, start_index, ref_mse, buffer, cfg)?;
    report.control_invocations = control_invocations;
    report.prediction_secs = probe_secs;
    Ok(report)
}

/// Running single-model rate controller state.
///
/// One global `R = alpha·λ^beta` model, multiplicatively corrected after
/// every frame from the log-domain rate miss. No lookahead, no per-frame
/// models, no distortion search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnePassState {
    pub alpha: f64,
    pub beta: f64,
    pub delta_alpha: f64,
    pub delta_beta: f64,
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
}

impl Default for OnePassState {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.6,
            delta_alpha: 0.1,
            delta_beta: 0.05,
            alpha_range: (1e-4, 10.0),
            beta_range: (0.05, 3.0),
        }
    }
}

impl OnePassState {
    /// Update from one observed (λ, bpp) outcome.
    fn observe(&mut self, lambda: f64, actual_bpp: f64) {
        let model_bpp = self.alpha * lambda.powf(self.beta);
        let err = (actual_bpp / model_bpp).ln();
        self.alpha = (self.alpha * (self.delta_alpha * err).exp())
            .clamp(self.alpha_range.0, self.alpha_range.1);
        self.beta = (self.beta + self.delta_beta * err * lambda.ln())
            .clamp(self.beta_range.0, self.beta_range.1);
    }
}

/// One-pass baseline over one mini-GOP: equal split plus buffer, λ from the
/// running model, model corrected after each frame.
#[allow(clippy::too_many_arguments)]
pub fn run_onepass(
    codec: &mut VirtualCodec,
    state: &mut OnePassState,
    r_tar: f64,
    start_index: usize,
    len: usize,
    ref_mse: f64,
    buffer: &mut BufferState,
) -> Result<EncodeReport, AllocError> {
    if len == 0 {
        return Err(AllocError::Argument("empty mini-GOP".into()));
    }
    if !(r_tar.is_finite() && r_tar > 0.0) {
        return Err(AllocError::Argument(format!("r_tar must be > 0, got {r_tar}")));
    }
    let started = Instant::now();
    let invocations_before = codec.invocation_count();
    let buffer_in = buffer.bits;
    let share = r_tar / len as f64;
    let mut frames = Vec::with_capacity(len);
    let mut lambdas = Vec::with_capacity(len);
    let mut chain_ref = ref_mse;
    for i in 0..len {
        let budget = share + buffer.bits;
        let (lambda, flag) = if budget <= 0.0 {
            (codec.lambda_min(), LambdaClamp::Low)
        } else {
            let model = PowerLawModel { alpha: state.alpha, beta: state.beta };
            let raw = model.invert(budget)?;
            if raw < codec.lambda_min() {
                (codec.lambda_min(), LambdaClamp::Low)
            } else if raw > codec.lambda_max() {
                (codec.lambda_max(), LambdaClamp::High)
            } else {
                (raw, LambdaClamp::None)
            }
        };
        let (bpp, mse) = codec.encode_frame(start_index + i, lambda, chain_ref)?;
        state.observe(lambda, bpp);
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
    let total_bpp: f64 = frames.iter().map(|f| f.actual_bpp).sum();
    let mean_mse: f64 = frames.iter().map(|f| f.actual_mse).sum::<f64>() / len as f64;
    let final_mse = frames.last().unwrap().actual_mse;
    Ok(EncodeReport {
        minigop_index: 0,
        start_frame: start_index,
        target_bpp: r_tar,
        plan: AllocationPlan {
            d_tar: None,
            frame_rates: vec![share; len],
            ratios: vec![1.0 / len as f64; len],
            lambdas,
            clamp: ClampStatus::InRange,
            iterations_used: 0,
            converged: true,
        },
        frames,
        total_bpp,
        mean_mse,
        final_mse,
        buffer_in,
        buffer_out: buffer.bits,
        control_invocations: 0,
        encode_invocations: codec.invocation_count() - invocations_before,
        prediction_secs: 0.0,
        encode_secs: started.elapsed().as_secs_f64(),
    })
}

/// Uncontrolled reference: every frame at the same λ. The buffer is not
/// involved; budgets equal actuals by definition.
pub fn run_fixed_lambda(
    codec: &mut VirtualCodec,
    lambda: f64,
    r_tar: f64,
    start_index: usize,
    len: usize,
    ref_mse: f64,
) -> Result<EncodeReport, AllocError> {
    if len == 0 {
        return Err(AllocError::Argument("empty mini-GOP".into()));
    }
    if !(lambda >= codec.lambda_min() && lambda <= codec.lambda_max()) {
        return Err(AllocError::Argument(format!(
            "lambda {lambda} outside codec range [{}, {}]",
            codec.lambda_min(),
            codec.lambda_max()
        )));
    }
    let started = Instant::now();
    let invocations_before = codec.invocation_count();
    let mut frames = Vec::with_capacity(len);
    let mut chain_ref = ref_mse;
    for i in 0..len {
        let (bpp, mse) = codec.encode_frame(start_index + i, lambda, chain_ref)?;
        frames.push(FrameRecord {
            frame_index: start_index + i,
            lambda,
            budget_bpp: bpp,
            actual_bpp: bpp,
            actual_mse: mse,
            buffer_after: 0.0,
            lambda_clamp: LambdaClamp::None,
        });
        chain_ref = mse;
    }
    let total_bpp: f64 = frames.iter().map(|f| f.actual_bpp).sum();
    let mean_mse: f64 = frames.iter().map(|f| f.actual_mse).sum::<f64>() / len as f64;
    let final_mse = frames.last().unwrap().actual_mse;
    Ok(EncodeReport {
        minigop_index: 0,
        start_frame: start_index,
        target_bpp: r_tar,
        plan: AllocationPlan {
            d_tar: None,
            frame_rates: vec![r_tar / len as f64; len],
            ratios: vec![1.0 / len as f64; len],
            lambdas: vec![lambda; len],
            clamp: ClampStatus::InRange,
            iterations_used: 0,
            converged: true,
        },
        frames,
        total_bpp,
        mean_mse,
        final_mse,
        buffer_in: 0.0,
        buffer_out: 0.0,
        control_invocations: 0,
        encode_invocations: codec.invocation_count() - invocations_before,
        prediction_secs: 0.0,
        encode_secs: started.elapsed().as_secs_f64(),
    })
}

/// λ whose mean noiseless per-frame bpp over the whole script matches the
/// target, found by bisection (bpp is increasing in λ). Clamps to a range
/// endpoint when the target is outside what the content can produce.
pub fn solve_fixed_lambda(codec: &VirtualCodec, target_mean_bpp: f64) -> Result<f64, AllocError> {
    if !(target_mean_bpp.is_finite() && target_mean_bpp > 0.0) {
        return Err(AllocError::Argument(format!(
            "target mean bpp must be > 0, got {target_mean_bpp}"
        )));
    }
    let n = codec.n_frames();
    let mean_bpp = |lambda: f64| -> Result<f64, AllocError> {
        let mut sum = 0.0;
        for f in 0..n {
            sum += codec.expected(f, lambda, 0.0)?.0;
        }
        Ok(sum / n as f64)
    };
    let (mut lo, mut hi) = (codec.lambda_min(), codec.lambda_max());
    if mean_bpp(lo)? >= target_mean_bpp {
        return Ok(lo);
    }
    if mean_bpp(hi)? <= target_mean_bpp {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mean_bpp(mid)? < target_mean_bpp {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}
