//! λ-domain rate control for variable-rate video coding, validated in closed
//! loop against a parametric virtual codec.
//!
//! The controller predicts each frame's rate and distortion as power laws of
//! the codec quality knob λ, then splits a mini-GOP bit budget by searching
//! for the single distortion level every frame can share. A carry-over bit
//! buffer absorbs per-frame misses so sequence totals stay exact.
//!
//! Crate layout:
//!
//! - [`frameio`]: Y4M/raw luma frame I/O and synthetic frame rendering
//! - [`rdmodel`]: power-law R(λ)/D(λ) models and the derived D(R) curve
//! - [`predictor`]: λ-grid sampling, monotonic repair, feature-based
//!   prediction of model parameters from downsampled pixels
//! - [`codec_sim`]: scripted virtual codec with reference coupling and
//!   lognormal encode noise
//! - [`allocator`]: mini-GOP bit allocation via bisection on a shared
//!   target distortion, plus closed-loop sequence control
//! - [`metrics`]: rate accuracy and quality-fluctuation summaries
//! - [`bench`]: baseline controllers (multi-pass, one-pass, fixed-λ,
//!   uniform split) and the method-comparison harness
//! - [`cli`]: the `lambda-rc` command-line tool
//!
//! Each capability has a runnable demo under `examples/`:
//!
//! ```text
//! cargo run --example fit_power_law        # model fitting and inversion
//! cargo run --example lambda_grid          # grid sampling + monotonic repair
//! cargo run --example virtual_codec        # scripted codec behaviour
//! cargo run --example minigop_allocation   # one mini-GOP, step by step
//! cargo run --example closed_loop         # full sequence under the controller
//! cargo run --example baseline_comparison # all methods side by side
//! cargo run --example feature_predictor   # pixels -> model parameters
//! cargo run --example synth_frames        # render a script to Y4M
//! ```

pub mod allocator;
pub mod bench;
pub mod cli;
pub mod codec_sim;
pub mod frameio;
pub mod metrics;
pub mod predictor;
pub mod rdmodel;
