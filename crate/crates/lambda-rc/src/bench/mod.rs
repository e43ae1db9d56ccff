//! Closed-loop benchmark harness: baseline controllers, experiment
//! configuration, and the compare pipeline producing CSV and SVG artifacts.

mod baselines;
mod compare;
pub mod svg;

pub use baselines::{
    run_fixed_lambda, run_multipass, run_onepass, solve_fixed_lambda, OnePassState,
};
pub use compare::{
    calibrate_synthetic_predictor, frame_csv_row, run_compare, write_frame_rows, CompareOutput,
    FRAME_CSV_HEADER,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{minigop_spans, AllocError, AllocatorConfig};
use crate::codec_sim::{CodecError, VirtualCodec};
use crate::frameio::FrameError;
use crate::metrics::MetricError;
use crate::predictor::PredictError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    /// Predict, search shared distortion, allocate, encode once.
    Ours,
    /// Pre-encode every frame at every grid λ, then allocate like `Ours`.
    Multipass,
    /// Single running R-λ model updated after each frame.
    Onepass,
    /// Constant λ solved from the target, no control at all.
    Fixed,
    /// Predicted models but equal bits per frame.
    Uniform,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Ours => "ours",
            MethodKind::Multipass => "multipass",
            MethodKind::Onepass => "onepass",
            MethodKind::Fixed => "fixed",
            MethodKind::Uniform => "uniform",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ours" => Ok(MethodKind::Ours),
            "multipass" => Ok(MethodKind::Multipass),
            "onepass" => Ok(MethodKind::Onepass),
            "fixed" => Ok(MethodKind::Fixed),
            "uniform" => Ok(MethodKind::Uniform),
            other => Err(format!(
                "unknown method `{other}` (expected ours, multipass, onepass, fixed, uniform)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Oracle,
    Feature,
}

impl FromStr for PredictorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "oracle" => Ok(PredictorKind::Oracle),
            "feature" => Ok(PredictorKind::Feature),
            other => Err(format!("unknown predictor `{other}` (expected oracle, feature)")),
        }
    }
}

fn d_n_frames() -> usize {
    32
}
fn d_n_scenes() -> usize {
    2
}
fn d_drift() -> f64 {
    0.05
}
fn d_gamma() -> f64 {
    0.3
}
fn d_lambda_min() -> f64 {
    crate::predictor::DEFAULT_LAMBDA_MIN
}
fn d_lambda_max() -> f64 {
    crate::predictor::DEFAULT_LAMBDA_MAX
}
fn d_grid_size() -> usize {
    crate::predictor::DEFAULT_GRID_SIZE
}
fn d_minigop() -> usize {
    crate::allocator::DEFAULT_MINIGOP_SIZE
}
fn d_max_iters() -> u32 {
    crate::allocator::DEFAULT_MAX_ITERS
}
fn d_tolerance() -> f64 {
    crate::allocator::DEFAULT_TOLERANCE
}
fn d_targets() -> Vec<f64> {
    vec![0.1, 0.2, 0.4]
}
fn d_methods() -> Vec<MethodKind> {
    vec![
        MethodKind::Ours,
        MethodKind::Multipass,
        MethodKind::Onepass,
        MethodKind::Fixed,
        MethodKind::Uniform,
    ]
}
fn d_predictor() -> PredictorKind {
    PredictorKind::Oracle
}
fn d_render_width() -> usize {
    320
}
fn d_render_height() -> usize {
    192
}

/// Everything a compare run needs. Loaded from TOML; only `seed` is
/// mandatory, all other fields default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "d_n_frames")]
    pub n_frames: usize,
    #[serde(default = "d_n_scenes")]
    pub n_scenes: usize,
    #[serde(default = "d_drift")]
    pub drift: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "d_gamma")]
    pub coupling_gamma: f64,
    #[serde(default = "d_lambda_min")]
    pub lambda_min: f64,
    #[serde(default = "d_lambda_max")]
    pub lambda_max: f64,
    #[serde(default = "d_grid_size")]
    pub grid_size: usize,
    #[serde(default = "d_minigop")]
    pub minigop_size: usize,
    #[serde(default = "d_max_iters")]
    pub max_iters: u32,
    #[serde(default = "d_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub reset_buffer_per_minigop: bool,
    /// Per-frame average bpp targets; each becomes a separate run.
    #[serde(default = "d_targets")]
    pub targets: Vec<f64>,
    /// Derive one guaranteed-attainable target schedule from the script
    /// instead of using `targets`.
    #[serde(default)]
    pub auto_targets: bool,
    #[serde(default = "d_methods")]
    pub methods: Vec<MethodKind>,
    #[serde(default = "d_predictor")]
    pub predictor: PredictorKind,
    /// Fixed-λ baseline operating point; solved from the target when absent.
    #[serde(default)]
    pub fixed_lambda: Option<f64>,
    #[serde(default = "d_render_width")]
    pub render_width: usize,
    #[serde(default = "d_render_height")]
    pub render_height: usize,
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            n_frames: d_n_frames(),
            n_scenes: d_n_scenes(),
            drift: d_drift(),
            noise_sigma: 0.0,
            coupling_gamma: d_gamma(),
            lambda_min: d_lambda_min(),
            lambda_max: d_lambda_max(),
            grid_size: d_grid_size(),
            minigop_size: d_minigop(),
            max_iters: d_max_iters(),
            tolerance: d_tolerance(),
            reset_buffer_per_minigop: false,
            targets: d_targets(),
            auto_targets: false,
            methods: d_methods(),
            predictor: d_predictor(),
            fixed_lambda: None,
            render_width: d_render_width(),
            render_height: d_render_height(),
        }
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.as_ref().display())))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn allocator_config(&self) -> AllocatorConfig {
        AllocatorConfig {
            minigop_size: self.minigop_size,
            max_iters: self.max_iters,
            tolerance: self.tolerance,
            reset_buffer_per_minigop: self.reset_buffer_per_minigop,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let err = |msg: String| Err(BenchError::Config(msg));
        if self.n_frames == 0 {
            return err("n_frames must be >= 1".into());
        }
        if self.n_scenes == 0 || self.n_scenes > self.n_frames {
            return err(format!(
                "n_scenes must be in [1, n_frames], got {}",
                self.n_scenes
            ));
        }
        if self.n_frames < self.minigop_size {
            return err(format!(
                "n_frames {} is smaller than one mini-GOP of {}",
                self.n_frames, self.minigop_size
            ));
        }
        if !(self.drift.is_finite() && self.drift >= 0.0) {
            return err(format!("drift must be >= 0, got {}", self.drift));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return err(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.coupling_gamma.is_finite() && self.coupling_gamma >= 0.0) {
            return err(format!("coupling_gamma must be >= 0, got {}", self.coupling_gamma));
        }
        if !(self.lambda_min > 0.0 && self.lambda_max > self.lambda_min) {
            return err(format!(
                "lambda range must satisfy 0 < min < max, got [{}, {}]",
                self.lambda_min, self.lambda_max
            ));
        }
        if self.grid_size < 2 {
            return err(format!("grid_size must be >= 2, got {}", self.grid_size));
        }
        self.allocator_config().validate()?;
        if !self.auto_targets {
            if self.targets.is_empty() {
                return err("targets must not be empty (or set auto_targets)".into());
            }
            if self.targets.iter().any(|t| !t.is_finite() || *t <= 0.0) {
                return err("targets must be strictly positive".into());
            }
        }
        if self.methods.is_empty() {
            return err("methods must not be empty".into());
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= self.lambda_min && l <= self.lambda_max) {
                return err(format!(
                    "fixed_lambda {l} outside [{}, {}]",
                    self.lambda_min, self.lambda_max
                ));
            }
        }
        if self.render_width < 16 || self.render_height < 16 {
            return err(format!(
                "render dimensions must be >= 16, got {}x{}",
                self.render_width, self.render_height
            ));
        }
        Ok(())
    }
}

/// Attainable per-mini-GOP bit totals straight from the script's truth: the
/// rate sum at the geometric middle of each group's shared distortion span.
pub fn midrange_targets(
    codec: &VirtualCodec,
    cfg: &AllocatorConfig,
) -> Result<Vec<f64>, AllocError> {
    let spans = minigop_spans(codec.n_frames(), cfg.minigop_size);
    let mut targets = Vec::with_capacity(spans.len());
    for (start, len) in spans {
        let mut models = Vec::with_capacity(len);
        for f in start..start + len {
            models.push(codec.truth_models(f, 0.0)?);
        }
        let d_lb = models.iter().map(|m| m.d_min).fold(f64::MIN, f64::max);
        let d_ub = models.iter().map(|m| m.d_max).fold(f64::MAX, f64::min);
        if d_lb > d_ub {
            return Err(AllocError::InfeasibleBracket { d_lb, d_ub });
        }
        let d_mid = (d_lb * d_ub).sqrt();
        let mut total = 0.0;
        for m in &models {
            total += m.rd.rate_of_distortion(d_mid)?;
        }
        targets.push(total);
    }
    Ok(targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec_sim::generate_script;

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ExperimentConfig::with_seed(42);
        cfg.validate().unwrap();
        assert_eq!(cfg.minigop_size, 4);
        assert_eq!(cfg.grid_size, 8);
        assert_eq!(cfg.targets, vec![0.1, 0.2, 0.4]);

        let mut bad = cfg.clone();
        bad.targets = vec![];
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.lambda_max = bad.lambda_min;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.n_frames = 2;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.fixed_lambda = Some(1000.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = ExperimentConfig::with_seed(7);
        let text = cfg.to_toml_string();
        let parsed: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn minimal_toml_needs_only_seed() {
        let parsed: ExperimentConfig = toml::from_str("seed = 9").unwrap();
        assert_eq!(parsed.seed, 9);
        assert_eq!(parsed.n_frames, 32);
        // Unknown keys are configuration mistakes, not silently ignored.
        assert!(toml::from_str::<ExperimentConfig>("seed = 9\nbogus = 1").is_err());
        assert!(toml::from_str::<ExperimentConfig>("n_frames = 8").is_err());
    }

    #[test]
    fn midrange_targets_are_attainable() {
        let script = generate_script(3, 16, 2, 0.1).unwrap();
        let codec = VirtualCodec::new(script, 0.1, 409.6).unwrap();
        let cfg = AllocatorConfig::default();
        let targets = midrange_targets(&codec, &cfg).unwrap();
        assert_eq!(targets.len(), 4);
        // Each target sits strictly inside the group's deliverable span.
        for ((start, len), t) in minigop_spans(16, 4).into_iter().zip(&targets) {
            let mut sum_min = 0.0;
            let mut sum_max = 0.0;
            for f in start..start + len {
                let m = codec.truth_models(f, 0.0).unwrap();
                sum_min += m.r_min;
                sum_max += m.r_max;
            }
            assert!(*t > sum_min && *t < sum_max);
        }
    }
}
