//! Parametric virtual codec.
//!
//! Closed-loop validation needs thousands of encodes, so instead of a real
//! encoder each frame carries ground-truth power-law parameters and "encoding"
//! evaluates them: `bpp = α₁·λ^β₁·(1 + γ·ref_mse)`, `mse = α₂·λ^β₂·(1 + γ·ref_mse)`,
//! optionally times a lognormal noise factor `exp(ε)`, `ε ~ N(0, σ²)`.
//! The coupling term γ models reference-quality propagation: a worse reference
//! costs bits and quality downstream.
//!
//! Scripts describe content: per-scene base parameters drawn from wide ranges,
//! a log-domain random walk inside each scene, and scene-change flags at
//! evenly spaced boundaries.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frameio::{synth_frame, FrameError, Sequence};
use crate::predictor::{LambdaGrid, PredictError, RDSampleSet};
use crate::rdmodel::{FrameModelSet, ModelError, PowerLawModel};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("frame index {index} out of range (script has {len} frames)")]
    FrameIndex { index: usize, len: usize },
    #[error("lambda {lambda} outside codec range [{min}, {max}]; clamp before encoding")]
    LambdaRange { lambda: f64, min: f64, max: f64 },
    #[error("reference mse must be finite and >= 0, got {0}")]
    BadRefMse(f64),
    #[error("invalid script: {0}")]
    BadScript(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("script file: {0}")]
    Io(#[from] std::io::Error),
    #[error("script file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Predict(#[from] Box<PredictError>),
}

/// Ground-truth response of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub is_scene_change: bool,
}

impl FrameTruth {
    fn validate(&self, index: usize) -> Result<(), CodecError> {
        let ok = self.alpha1.is_finite()
            && self.alpha1 > 0.0
            && self.beta1.is_finite()
            && self.beta1 > 0.0
            && self.alpha2.is_finite()
            && self.alpha2 > 0.0
            && self.beta2.is_finite()
            && self.beta2 < 0.0;
        if !ok {
            return Err(CodecError::BadScript(format!(
                "frame {index}: need alpha1, beta1, alpha2 > 0 and beta2 < 0, got \
                 ({}, {}, {}, {})",
                self.alpha1, self.beta1, self.alpha2, self.beta2
            )));
        }
        Ok(())
    }

    pub fn r_model(&self) -> PowerLawModel {
        PowerLawModel { alpha: self.alpha1, beta: self.beta1 }
    }

    pub fn d_model(&self) -> PowerLawModel {
        PowerLawModel { alpha: self.alpha2, beta: self.beta2 }
    }
}

/// Parameter draw ranges for script generation. `beta2_mag` is the magnitude
/// of the (negative) distortion exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub alpha1: (f64, f64),
    pub beta1: (f64, f64),
    pub alpha2: (f64, f64),
    pub beta2_mag: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            alpha1: (0.05, 0.5),
            beta1: (0.3, 0.8),
            alpha2: (0.01, 0.2),
            beta2_mag: (0.4, 1.2),
        }
    }
}

impl ParamRanges {
    fn validate(&self) -> Result<(), CodecError> {
        for (name, (lo, hi)) in [
            ("alpha1", self.alpha1),
            ("beta1", self.beta1),
            ("alpha2", self.alpha2),
            ("beta2_mag", self.beta2_mag),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi < lo {
                return Err(CodecError::Argument(format!(
                    "range {name} must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Full description of a synthetic clip: per-frame truth plus the noise and
/// coupling the codec applies on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentScript {
    pub seed: u64,
    pub truths: Vec<FrameTruth>,
    pub coupling_gamma: f64,
    pub noise_sigma: f64,
}

impl ContentScript {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.truths.is_empty() {
            return Err(CodecError::BadScript("script has no frames".into()));
        }
        for (i, t) in self.truths.iter().enumerate() {
            t.validate(i)?;
        }
        if !(self.coupling_gamma.is_finite() && self.coupling_gamma >= 0.0) {
            return Err(CodecError::BadScript(format!(
                "coupling_gamma must be >= 0, got {}",
                self.coupling_gamma
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(CodecError::BadScript(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_coupling(mut self, gamma: f64) -> Self {
        self.coupling_gamma = gamma;
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        Ok(fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        let script: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        script.validate()?;
        Ok(script)
    }
}

/// Scene start frame for even partitioning, `s * n_frames / n_scenes`.
fn scene_start(scene: usize, n_frames: usize, n_scenes: usize) -> usize {
    scene * n_frames / n_scenes
}

/// Scene index of a frame under the even partition.
pub fn scene_of_frame(frame: usize, n_frames: usize, n_scenes: usize) -> usize {
    (1..n_scenes)
        .take_while(|&s| scene_start(s, n_frames, n_scenes) <= frame)
        .count()
}

/// Generate a script: per-scene base parameters drawn log-uniformly from
/// `ranges`, then a per-frame log-domain random walk with step `drift`,
/// clamped back into the ranges. Scene starts (except frame 0) are flagged
/// as scene changes. Coupling defaults to 0.3; noise to 0.
pub fn generate_script(
    seed: u64,
    n_frames: usize,
    n_scenes: usize,
    drift: f64,
) -> Result<ContentScript, CodecError> {
    generate_script_with(seed, n_frames, n_scenes, drift, &ParamRanges::default())
}

pub fn generate_script_with(
    seed: u64,
    n_frames: usize,
    n_scenes: usize,
    drift: f64,
    ranges: &ParamRanges,
) -> Result<ContentScript, CodecError> {
    if n_frames == 0 {
        return Err(CodecError::Argument("n_frames must be >= 1".into()));
    }
    if n_scenes == 0 || n_scenes > n_frames {
        return Err(CodecError::Argument(format!(
            "n_scenes must be in [1, n_frames], got {n_scenes} for {n_frames} frames"
        )));
    }
    if !(drift.is_finite() && drift >= 0.0) {
        return Err(CodecError::Argument(format!("drift must be >= 0, got {drift}")));
    }
    ranges.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| -> f64 {
        if lo == hi {
            lo.ln()
        } else {
            rng.gen_range(lo.ln()..hi.ln())
        }
    };

    let mut truths = Vec::with_capacity(n_frames);
    for scene in 0..n_scenes {
        let start = scene_start(scene, n_frames, n_scenes);
        let end = scene_start(scene + 1, n_frames, n_scenes);
        // Walk state in log domain: [ln α₁, ln β₁, ln α₂, ln |β₂|].
        let mut state = [
            log_uniform(&mut rng, ranges.alpha1),
            log_uniform(&mut rng, ranges.beta1),
            log_uniform(&mut rng, ranges.alpha2),
            log_uniform(&mut rng, ranges.beta2_mag),
        ];
        let bounds = [ranges.alpha1, ranges.beta1, ranges.alpha2, ranges.beta2_mag];
        for frame in start..end {
            if frame > start {
                for (s, (lo, hi)) in state.iter_mut().zip(bounds) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *s = (*s + drift * z).clamp(lo.ln(), hi.ln());
                }
            }
            truths.push(FrameTruth {
                alpha1: state[0].exp(),
                beta1: state[1].exp(),
                alpha2: state[2].exp(),
                beta2: -state[3].exp(),
                is_scene_change: frame == start && scene > 0,
            });
        }
    }

    Ok(ContentScript { seed, truths, coupling_gamma: 0.3, noise_sigma: 0.0 })
}

/// Deterministic stand-in encoder driven by a script.
///
/// Every `encode_frame` call counts one invocation; ground-truth queries do
/// not. Lambda must already be inside the codec range.
#[derive(Debug, Clone)]
pub struct VirtualCodec {
    script: ContentScript,
    lambda_min: f64,
    lambda_max: f64,
    invocation_count: u64,
    rng: ChaCha8Rng,
}

impl VirtualCodec {
    pub fn new(script: ContentScript, lambda_min: f64, lambda_max: f64) -> Result<Self, CodecError> {
        script.validate()?;
        if !(lambda_min.is_finite() && lambda_max.is_finite())
            || lambda_min <= 0.0
            || lambda_max <= lambda_min
        {
            return Err(CodecError::Argument(format!(
                "lambda range must satisfy 0 < min < max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        // Dedicated noise stream, decorrelated from script generation.
        let rng = ChaCha8Rng::seed_from_u64(script.seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Self { script, lambda_min, lambda_max, invocation_count: 0, rng })
    }

    pub fn script(&self) -> &ContentScript {
        &self.script
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn n_frames(&self) -> usize {
        self.script.len()
    }

    pub fn invocation_count(&self) -> u64 {
        self.invocation_count
    }

    fn truth(&self, index: usize) -> Result<&FrameTruth, CodecError> {
        self.script
            .truths
            .get(index)
            .ok_or(CodecError::FrameIndex { index, len: self.script.len() })
    }

    fn check_inputs(&self, lambda: f64, ref_mse: f64) -> Result<(), CodecError> {
        if !lambda.is_finite() || lambda < self.lambda_min || lambda > self.lambda_max {
            return Err(CodecError::LambdaRange {
                lambda,
                min: self.lambda_min,
                max: self.lambda_max,
            });
        }
        if !ref_mse.is_finite() || ref_mse < 0.0 {
            return Err(CodecError::BadRefMse(ref_mse));
        }
        Ok(())
    }

    /// Noiseless model response `(bpp, mse)` at a given λ and reference
    /// quality.
    pub fn expected(&self, frame_index: usize, lambda: f64, ref_mse: f64) -> Result<(f64, f64), CodecError> {
        self.check_inputs(lambda, ref_mse)?;
        let t = self.truth(frame_index)?;
        let couple = 1.0 + self.script.coupling_gamma * ref_mse;
        let bpp = t.alpha1 * lambda.powf(t.beta1) * couple;
        let mse = t.alpha2 * lambda.powf(t.beta2) * couple;
        Ok((bpp, mse))
    }

    /// One encode: the expected response times lognormal noise. Counts one
    /// invocation. Two independent noise draws are consumed per call, in
    /// (bpp, mse) order, so call sequences are replayable.
    pub fn encode_frame(
        &mut self,
        frame_index: usize,
        lambda: f64,
        ref_mse: f64,
    ) -> Result<(f64, f64), CodecError> {
        let (mut bpp, mut mse) = self.expected(frame_index, lambda, ref_mse)?;
        if self.script.noise_sigma > 0.0 {
            let sigma = self.script.noise_sigma;
            let z_bpp: f64 = StandardNormal.sample(&mut self.rng);
            let z_mse: f64 = StandardNormal.sample(&mut self.rng);
            bpp *= (sigma * z_bpp).exp();
            mse *= (sigma * z_mse).exp();
        }
        self.invocation_count += 1;
        Ok((bpp, mse))
    }

    /// Noiseless grid sweep for one frame, for oracle prediction and truth
    /// extraction. Does not touch the invocation counter.
    pub fn ground_truth_samples(
        &self,
        frame_index: usize,
        ref_mse: f64,
        grid: &LambdaGrid,
    ) -> Result<RDSampleSet, CodecError> {
        let mut bpp = Vec::with_capacity(grid.len());
        let mut mse = Vec::with_capacity(grid.len());
        for &lambda in grid.values() {
            let (b, m) = self.expected(frame_index, lambda, ref_mse)?;
            bpp.push(b);
            mse.push(m);
        }
        RDSampleSet::new(grid.clone(), bpp, mse).map_err(|e| CodecError::Predict(Box::new(e)))
    }

    /// Exact power-law bundle for one frame at a given reference quality,
    /// over the codec's λ range.
    pub fn truth_models(&self, frame_index: usize, ref_mse: f64) -> Result<FrameModelSet, CodecError> {
        if !ref_mse.is_finite() || ref_mse < 0.0 {
            return Err(CodecError::BadRefMse(ref_mse));
        }
        let t = self.truth(frame_index)?;
        let couple = 1.0 + self.script.coupling_gamma * ref_mse;
        let r = PowerLawModel::new(t.alpha1 * couple, t.beta1)?;
        let d = PowerLawModel::new(t.alpha2 * couple, t.beta2)?;
        Ok(FrameModelSet::new(r, d, self.lambda_min, self.lambda_max)?)
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Render a pixel sequence matching a script: texture energy follows the
/// frame's rate parameter, motion phase advances within a scene and resets at
/// scene changes, and each scene gets its own texture seed.
pub fn render_script_frames(
    script: &ContentScript,
    width: usize,
    height: usize,
) -> Result<Sequence, FrameError> {
    let mut frames = Vec::with_capacity(script.len());
    let mut scene_idx = 0usize;
    let mut phase = 0.0f64;
    for t in &script.truths {
        if t.is_scene_change {
            scene_idx += 1;
            phase = 0.0;
        }
        // Busier content costs more bits; reuse α₁'s position in its range.
        let energy = (t.alpha1 / 0.05).ln().max(0.0);
        let seed = script.seed ^ splitmix64(scene_idx as u64);
        frames.push(synth_frame(width, height, energy, phase, seed)?);
        phase += 1.0;
    }
    Sequence::new(frames, 30.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_script(n: usize) -> ContentScript {
        ContentScript {
            seed: 1,
            truths: vec![
                FrameTruth {
                    alpha1: 0.2,
                    beta1: 0.6,
                    alpha2: 0.05,
                    beta2: -0.8,
                    is_scene_change: false,
                };
                n
            ],
            coupling_gamma: 0.0,
            noise_sigma: 0.0,
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let a = generate_script(42, 16, 2, 0.05).unwrap();
        let b = generate_script(42, 16, 2, 0.05).unwrap();
        assert_eq!(a, b);
        let c = generate_script(43, 16, 2, 0.05).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scene_partition_and_flags() {
        let s = generate_script(7, 8, 2, 0.0).unwrap();
        let flags: Vec<bool> = s.truths.iter().map(|t| t.is_scene_change).collect();
        let expected = [false, false, false, false, true, false, false, false];
        assert_eq!(flags, expected);
        assert_eq!(scene_of_frame(3, 8, 2), 0);
        assert_eq!(scene_of_frame(4, 8, 2), 1);
    }

    #[test]
    fn zero_drift_freezes_scene_parameters() {
        let s = generate_script(11, 12, 3, 0.0).unwrap();
        for scene in 0..3 {
            let start = scene * 4;
            let first = s.truths[start];
            for f in start..start + 4 {
                assert_eq!(s.truths[f].alpha1, first.alpha1);
                assert_eq!(s.truths[f].beta2, first.beta2);
            }
        }
        // Scenes differ from each other.
        assert_ne!(s.truths[0].alpha1, s.truths[4].alpha1);
    }

    #[test]
    fn parameters_stay_in_ranges() {
        let r = ParamRanges::default();
        let s = generate_script(3, 200, 4, 0.3).unwrap();
        for t in &s.truths {
            assert!(t.alpha1 >= r.alpha1.0 && t.alpha1 <= r.alpha1.1);
            assert!(t.beta1 >= r.beta1.0 && t.beta1 <= r.beta1.1);
            assert!(t.alpha2 >= r.alpha2.0 && t.alpha2 <= r.alpha2.1);
            assert!(-t.beta2 >= r.beta2_mag.0 && -t.beta2 <= r.beta2_mag.1);
        }
    }

    #[test]
    fn generate_validates_arguments() {
        assert!(generate_script(1, 0, 1, 0.1).is_err());
        assert!(generate_script(1, 4, 0, 0.1).is_err());
        assert!(generate_script(1, 4, 5, 0.1).is_err());
        assert!(generate_script(1, 4, 2, -0.1).is_err());
    }

    #[test]
    fn noiseless_encode_matches_model() {
        let mut codec = VirtualCodec::new(flat_script(4), 0.1, 409.6).unwrap();
        let (bpp, mse) = codec.encode_frame(0, 10.0, 0.0).unwrap();
        assert!((bpp - 0.2 * 10f64.powf(0.6)).abs() < 1e-15);
        assert!((mse - 0.05 * 10f64.powf(-0.8)).abs() < 1e-15);
    }

    #[test]
    fn coupling_scales_both_outputs() {
        let script = flat_script(4).with_coupling(0.3);
        let mut codec = VirtualCodec::new(script, 0.1, 409.6).unwrap();
        let (b0, m0) = codec.encode_frame(0, 10.0, 0.0).unwrap();
        let (b1, m1) = codec.encode_frame(0, 10.0, 0.1).unwrap();
        assert!((b1 / b0 - 1.03).abs() < 1e-12);
        assert!((m1 / m0 - 1.03).abs() < 1e-12);
    }

    #[test]
    fn noise_is_lognormal_and_seeded() {
        let script = flat_script(1).with_noise(0.1);
        let mut a = VirtualCodec::new(script.clone(), 0.1, 409.6).unwrap();
        let mut b = VirtualCodec::new(script, 0.1, 409.6).unwrap();
        for _ in 0..10 {
            let (ba, ma) = a.encode_frame(0, 5.0, 0.0).unwrap();
            let (bb, mb) = b.encode_frame(0, 5.0, 0.0).unwrap();
            assert_eq!(ba, bb);
            assert_eq!(ma, mb);
            assert!(ba > 0.0 && ma > 0.0);
        }
        // Mean log deviation is near zero over many draws.
        let expected = 0.2 * 5f64.powf(0.6);
        let mut sum = 0.0;
        for _ in 0..2000 {
            let (bpp, _) = a.encode_frame(0, 5.0, 0.0).unwrap();
            sum += (bpp / expected).ln();
        }
        assert!((sum / 2000.0).abs() < 0.01);
    }

    #[test]
    fn invocation_counter_semantics() {
        let mut codec = VirtualCodec::new(flat_script(2), 0.1, 409.6).unwrap();
        assert_eq!(codec.invocation_count(), 0);
        codec.encode_frame(0, 1.0, 0.0).unwrap();
        codec.encode_frame(1, 2.0, 0.0).unwrap();
        assert_eq!(codec.invocation_count(), 2);
        let grid = LambdaGrid::default_grid();
        codec.ground_truth_samples(0, 0.0, &grid).unwrap();
        codec.expected(0, 1.0, 0.0).unwrap();
        assert_eq!(codec.invocation_count(), 2);
        // Failed calls do not count.
        assert!(codec.encode_frame(0, 1000.0, 0.0).is_err());
        assert_eq!(codec.invocation_count(), 2);
    }

    #[test]
    fn lambda_range_is_enforced() {
        let mut codec = VirtualCodec::new(flat_script(1), 1.0, 100.0).unwrap();
        assert!(matches!(
            codec.encode_frame(0, 0.5, 0.0),
            Err(CodecError::LambdaRange { .. })
        ));
        assert!(matches!(
            codec.encode_frame(0, 100.5, 0.0),
            Err(CodecError::LambdaRange { .. })
        ));
        // Boundaries are inclusive.
        assert!(codec.encode_frame(0, 1.0, 0.0).is_ok());
        assert!(codec.encode_frame(0, 100.0, 0.0).is_ok());
    }

    #[test]
    fn bad_frame_index_reports_range() {
        let mut codec = VirtualCodec::new(flat_script(3), 0.1, 409.6).unwrap();
        match codec.encode_frame(3, 1.0, 0.0).unwrap_err() {
            CodecError::FrameIndex { index, len } => {
                assert_eq!((index, len), (3, 3));
            }
            other => panic!("expected frame index error, got {other:?}"),
        }
    }

    #[test]
    fn ground_truth_matches_encode_when_noiseless() {
        let mut codec = VirtualCodec::new(flat_script(2), 0.1, 409.6).unwrap();
        let grid = LambdaGrid::default_grid();
        let samples = codec.ground_truth_samples(1, 0.02, &grid).unwrap();
        for (i, &lambda) in grid.values().iter().enumerate() {
            let (bpp, mse) = codec.encode_frame(1, lambda, 0.02).unwrap();
            assert!((samples.bpp[i] - bpp).abs() < 1e-15);
            assert!((samples.mse[i] - mse).abs() < 1e-15);
        }
    }

    #[test]
    fn truth_models_round_trip() {
        let codec = VirtualCodec::new(flat_script(1), 0.1, 409.6).unwrap();
        let set = codec.truth_models(0, 0.0).unwrap();
        assert_eq!(set.r_lambda.alpha, 0.2);
        assert_eq!(set.d_lambda.beta, -0.8);
        assert!((set.r_max - 0.2 * 409.6f64.powf(0.6)).abs() < 1e-12);
    }

    #[test]
    fn script_json_round_trip() {
        let script = generate_script(5, 10, 2, 0.1).unwrap().with_noise(0.05);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        script.save(&path).unwrap();
        let loaded = ContentScript::load(&path).unwrap();
        assert_eq!(script, loaded);
    }

    #[test]
    fn rendered_frames_follow_script() {
        let script = generate_script(9, 8, 2, 0.0).unwrap();
        let seq = render_script_frames(&script, 32, 32).unwrap();
        assert_eq!(seq.len(), 8);
        // Within a zero-drift scene, consecutive frames differ only by phase.
        let f0 = &seq.frames()[0];
        let f1 = &seq.frames()[1];
        assert_ne!(f0.luma(), f1.luma());
        // Scene change introduces a new texture seed.
        let f4 = &seq.frames()[4];
        assert_ne!(f0.luma(), f4.luma());
        // Determinism.
        let again = render_script_frames(&script, 32, 32).unwrap();
        assert_eq!(seq.frames()[3].luma(), again.frames()[3].luma());
    }
}
