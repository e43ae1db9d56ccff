//! Method comparison pipeline: run every configured controller on the same
//! content and targets, then write per-frame, per-mini-GOP and summary CSVs
//! plus rate/MSE plots. All outputs are byte-deterministic for a fixed
//! config; wall-clock timings deliberately never reach the files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::allocator::{
    minigop_spans, run_sequence, AllocationStrategy, AllocatorConfig, BufferState, ClampStatus,
    EncodeReport, FrameRecord, PredictorChoice, SequenceOptions, TargetSchedule,
};
use crate::codec_sim::{generate_script, render_script_frames, ContentScript, VirtualCodec};
use crate::frameio::Sequence;
use crate::metrics::{quality_fluctuation, summarize, MetricRecord};
use crate::predictor::{extract_features, FeaturePredictor, LambdaGrid};

use super::baselines::{
    run_fixed_lambda, run_multipass, run_onepass, solve_fixed_lambda, OnePassState,
};
use super::svg::{line_plot, Series};
use super::{midrange_targets, BenchError, ExperimentConfig, MethodKind, PredictorKind};

pub struct CompareOutput {
    pub summary: Vec<MetricRecord>,
    pub summary_csv: PathBuf,
    pub minigops_csv: PathBuf,
    pub frames_csv: PathBuf,
    pub svg_paths: Vec<PathBuf>,
}

pub const FRAME_CSV_HEADER: &str =
    "sequence_id,minigop_index,frame_index,lambda,budget_bpp,actual_bpp,actual_mse,buffer_after,clamp_flag";

pub fn frame_csv_row(sequence_id: &str, minigop_index: usize, fr: &FrameRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        sequence_id,
        minigop_index,
        fr.frame_index,
        fr.lambda,
        fr.budget_bpp,
        fr.actual_bpp,
        fr.actual_mse,
        fr.buffer_after,
        fr.lambda_clamp.as_str()
    )
}

/// Append the spec'd frame rows for a run to a CSV body.
pub fn write_frame_rows(out: &mut String, sequence_id: &str, reports: &[EncodeReport]) {
    for report in reports {
        for fr in &report.frames {
            out.push_str(&frame_csv_row(sequence_id, report.minigop_index, fr));
            out.push('\n');
        }
    }
}

fn clamp_str(c: ClampStatus) -> &'static str {
    match c {
        ClampStatus::InRange => "in_range",
        ClampStatus::ClampedHigh => "clamped_high",
        ClampStatus::ClampedLow => "clamped_low",
    }
}

struct MethodRun {
    method: MethodKind,
    reports: Vec<EncodeReport>,
}

/// Feature-predictor assets: calibrated coefficients plus the rendered frames
/// of the sequence under test.
struct FeatureAssets {
    predictor: FeaturePredictor,
    frames: Sequence,
}

/// Calibrate a feature predictor on synthetic training content: render a
/// generated script, pair consecutive clean frames, and use the script's
/// truth models as regression targets.
pub fn calibrate_synthetic_predictor(
    seed: u64,
    coupling_gamma: f64,
    lambda_min: f64,
    lambda_max: f64,
    width: usize,
    height: usize,
) -> Result<FeaturePredictor, BenchError> {
    let training_script =
        generate_script(seed, 64, 4, 0.1)?.with_coupling(coupling_gamma);
    let training_frames = render_script_frames(&training_script, width, height)?;
    let training_codec =
        VirtualCodec::new(training_script.clone(), lambda_min, lambda_max)?;
    let mut pairs = Vec::with_capacity(training_frames.len() + 16);
    for f in 0..training_frames.len() {
        let cur = training_frames.frames()[f].clone();
        let reference =
            if f == 0 { cur.clone() } else { training_frames.frames()[f - 1].clone() };
        let pair = crate::frameio::FramePair::new(reference, cur)?;
        let features = extract_features(&pair);
        let models = training_codec.truth_models(f, 0.0)?;
        pairs.push((features, models));
    }
    // A single resolution gives every pair the same downsample ratio, which
    // makes the regression singular. Add a short pass above the 240-line
    // threshold so that feature carries information.
    let (mut w2, mut h2) = (width, height);
    loop {
        w2 *= 2;
        h2 *= 2;
        if h2 > 240 {
            break;
        }
    }
    let mut big_script = training_script;
    big_script.truths.truncate(16);
    let big_frames = render_script_frames(&big_script, w2, h2)?;
    for f in 0..big_frames.len() {
        let cur = big_frames.frames()[f].clone();
        let reference = if f == 0 { cur.clone() } else { big_frames.frames()[f - 1].clone() };
        let pair = crate::frameio::FramePair::new(reference, cur)?;
        let features = extract_features(&pair);
        let models = training_codec.truth_models(f, 0.0)?;
        pairs.push((features, models));
    }
    Ok(FeaturePredictor::calibrate(&pairs)?)
}

fn calibrate_feature_predictor(
    cfg: &ExperimentConfig,
    script: &ContentScript,
) -> Result<FeatureAssets, BenchError> {
    // Train on separate content drawn from the same generator family.
    let predictor = calibrate_synthetic_predictor(
        cfg.seed ^ 0x7fe2_91a4,
        cfg.coupling_gamma,
        cfg.lambda_min,
        cfg.lambda_max,
        cfg.render_width,
        cfg.render_height,
    )?;
    let frames = render_script_frames(script, cfg.render_width, cfg.render_height)?;
    Ok(FeatureAssets { predictor, frames })
}

#[allow(clippy::too_many_arguments)]
fn run_one_method(
    method: MethodKind,
    script: &ContentScript,
    cfg: &ExperimentConfig,
    alloc_cfg: &AllocatorConfig,
    grid: &LambdaGrid,
    totals: &[f64],
    label_bpp: f64,
    feature: Option<&FeatureAssets>,
) -> Result<Vec<EncodeReport>, BenchError> {
    let mut codec = VirtualCodec::new(script.clone(), cfg.lambda_min, cfg.lambda_max)?;
    let seq_seed = cfg.seed ^ 0x5eed_cafe;
    match method {
        MethodKind::Ours | MethodKind::Uniform => {
            let strategy = if method == MethodKind::Ours {
                AllocationStrategy::SharedDistortion
            } else {
                AllocationStrategy::EqualBits
            };
            let opts = SequenceOptions {
                grid,
                targets: TargetSchedule::PerMinigop(totals),
                cfg: alloc_cfg,
                seed: seq_seed,
                strategy,
            };
            let choice = match feature {
                Some(assets) => PredictorChoice::Feature {
                    predictor: &assets.predictor,
                    frames: &assets.frames,
                },
                None => PredictorChoice::Oracle,
            };
            Ok(run_sequence(&mut codec, &choice, &opts)?)
        }
        MethodKind::Multipass => {
            let spans = minigop_spans(codec.n_frames(), alloc_cfg.minigop_size);
            let mut buffer = BufferState::default();
            let mut ref_mse = 0.0;
            let mut reports = Vec::with_capacity(spans.len());
            for (g, (start, len)) in spans.into_iter().enumerate() {
                if alloc_cfg.reset_buffer_per_minigop {
                    buffer.bits = 0.0;
                }
                let mut report = run_multipass(
                    &mut codec,
                    grid,
                    totals[g],
                    start,
                    len,
                    ref_mse,
                    &mut buffer,
                    alloc_cfg,
                )?;
                report.minigop_index = g;
                ref_mse = report.final_mse;
                reports.push(report);
            }
            Ok(reports)
        }
        MethodKind::Onepass => {
            let spans = minigop_spans(codec.n_frames(), alloc_cfg.minigop_size);
            let mut state = OnePassState::default();
            let mut buffer = BufferState::default();
            let mut ref_mse = 0.0;
            let mut reports = Vec::with_capacity(spans.len());
            for (g, (start, len)) in spans.into_iter().enumerate() {
                if alloc_cfg.reset_buffer_per_minigop {
                    buffer.bits = 0.0;
                }
                let mut report = run_onepass(
                    &mut codec,
                    &mut state,
                    totals[g],
                    start,
                    len,
                    ref_mse,
                    &mut buffer,
                )?;
                report.minigop_index = g;
                ref_mse = report.final_mse;
                reports.push(report);
            }
            Ok(reports)
        }
        MethodKind::Fixed => {
            let lambda = match cfg.fixed_lambda {
                Some(l) => l,
                None => solve_fixed_lambda(&codec, label_bpp)?,
            };
            let spans = minigop_spans(codec.n_frames(), alloc_cfg.minigop_size);
            let mut ref_mse = 0.0;
            let mut reports = Vec::with_capacity(spans.len());
            for (g, (start, len)) in spans.into_iter().enumerate() {
                let mut report =
                    run_fixed_lambda(&mut codec, lambda, totals[g], start, len, ref_mse)?;
                report.minigop_index = g;
                ref_mse = report.final_mse;
                reports.push(report);
            }
            Ok(reports)
        }
    }
}

/// Run every configured method at every target and write all artifacts into
/// `out_dir` (created if needed).
pub fn run_compare(cfg: &ExperimentConfig, out_dir: &Path) -> Result<CompareOutput, BenchError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;

    let script = generate_script(cfg.seed, cfg.n_frames, cfg.n_scenes, cfg.drift)?
        .with_coupling(cfg.coupling_gamma)
        .with_noise(cfg.noise_sigma);
    let alloc_cfg = cfg.allocator_config();
    let grid = LambdaGrid::geometric(cfg.lambda_min, cfg.lambda_max, cfg.grid_size)
        .map_err(BenchError::Predict)?;

    let feature = match cfg.predictor {
        PredictorKind::Oracle => None,
        PredictorKind::Feature => Some(calibrate_feature_predictor(cfg, &script)?),
    };

    // Target schedules: per-frame label plus explicit per-mini-GOP totals.
    let spans = minigop_spans(cfg.n_frames, cfg.minigop_size);
    let mut schedules: Vec<(f64, Vec<f64>)> = Vec::new();
    if cfg.auto_targets {
        let probe = VirtualCodec::new(script.clone(), cfg.lambda_min, cfg.lambda_max)?;
        let totals = midrange_targets(&probe, &alloc_cfg)?;
        let label = totals.iter().sum::<f64>() / cfg.n_frames as f64;
        schedules.push((label, totals));
    } else {
        for &t in &cfg.targets {
            let totals: Vec<f64> = spans.iter().map(|&(_, len)| t * len as f64).collect();
            schedules.push((t, totals));
        }
    }

    let mut summary = Vec::new();
    let mut minigops_body = String::new();
    let mut frames_body = String::new();
    let mut svg_paths = Vec::new();

    for (label, totals) in &schedules {
        let mut runs: Vec<MethodRun> = Vec::with_capacity(cfg.methods.len());
        for &method in &cfg.methods {
            let reports = run_one_method(
                method, &script, cfg, &alloc_cfg, &grid, totals, *label, feature.as_ref(),
            )?;
            runs.push(MethodRun { method, reports });
        }

        let fixed_q_f = runs
            .iter()
            .find(|r| r.method == MethodKind::Fixed)
            .map(|r| {
                let mut acc = 0.0;
                for rep in &r.reports {
                    acc += quality_fluctuation(&rep.mse_values())?;
                }
                Ok::<f64, BenchError>(acc / r.reports.len() as f64)
            })
            .transpose()?;

        for run in &runs {
            summary.push(summarize(run.method.as_str(), *label, &run.reports, fixed_q_f)?);

            for rep in &run.reports {
                let q_f = quality_fluctuation(&rep.mse_values())?;
                let _ = writeln!(
                    minigops_body,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    run.method,
                    label,
                    rep.minigop_index,
                    rep.start_frame,
                    rep.frames.len(),
                    rep.target_bpp,
                    rep.total_bpp,
                    rep.rate_error(),
                    q_f,
                    rep.plan.d_tar.map(|d| d.to_string()).unwrap_or_default(),
                    rep.plan.iterations_used,
                    rep.plan.converged,
                    clamp_str(rep.plan.clamp),
                    rep.control_invocations,
                    rep.encode_invocations,
                    rep.buffer_in,
                    rep.buffer_out,
                );
            }

            let sequence_id = format!("seed{}", cfg.seed);
            for rep in &run.reports {
                for fr in &rep.frames {
                    frames_body.push_str(&format!(
                        "{},{},{}\n",
                        run.method,
                        label,
                        frame_csv_row(&sequence_id, rep.minigop_index, fr)
                    ));
                }
            }
        }

        // Rate plot: cumulative bits by mini-GOP, one series per method plus
        // the cumulative target.
        let mut rate_series = Vec::new();
        for run in &runs {
            let mut acc = 0.0;
            let points = run
                .reports
                .iter()
                .map(|r| {
                    acc += r.total_bpp;
                    (r.minigop_index as f64, acc)
                })
                .collect();
            rate_series.push(Series { name: run.method.to_string(), points });
        }
        let mut acc = 0.0;
        rate_series.push(Series {
            name: "target".into(),
            points: totals
                .iter()
                .enumerate()
                .map(|(g, t)| {
                    acc += t;
                    (g as f64, acc)
                })
                .collect(),
        });
        let rate_path = out_dir.join(format!("rate_bpp{label:.4}.svg"));
        fs::write(
            &rate_path,
            line_plot(
                &format!("cumulative bits at {label:.4} bpp"),
                "mini-GOP",
                "cumulative bpp",
                &rate_series,
            ),
        )?;
        svg_paths.push(rate_path);

        // MSE plot: per-frame distortion, one series per method.
        let mse_series: Vec<Series> = runs
            .iter()
            .map(|run| Series {
                name: run.method.to_string(),
                points: run
                    .reports
                    .iter()
                    .flat_map(|r| r.frames.iter())
                    .map(|f| (f.frame_index as f64, f.actual_mse))
                    .collect(),
            })
            .collect();
        let mse_path = out_dir.join(format!("mse_bpp{label:.4}.svg"));
        fs::write(
            &mse_path,
            line_plot(
                &format!("per-frame MSE at {label:.4} bpp"),
                "frame",
                "MSE",
                &mse_series,
            ),
        )?;
        svg_paths.push(mse_path);
    }

    let summary_csv = out_dir.join("summary.csv");
    let mut body = String::from(
        "method,target_bpp,mean_rate_error,cumulative_rate_error,mean_q_f,fluctuation_ratio,\
         invocation_ratio,control_invocations,encode_invocations\n",
    );
    for rec in &summary {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{},{}",
            rec.method,
            rec.target_bpp,
            rec.mean_rate_error,
            rec.cumulative_rate_error,
            rec.mean_q_f,
            rec.fluctuation_ratio.map(|r| r.to_string()).unwrap_or_default(),
            rec.invocation_ratio,
            rec.control_invocations,
            rec.encode_invocations,
        );
    }
    fs::write(&summary_csv, body)?;

    let minigops_csv = out_dir.join("minigops.csv");
    let header = "method,target_bpp,minigop_index,start_frame,n_frames,target_total_bpp,\
                  actual_bpp,rate_error,q_f,d_tar,iterations,converged,clamp,\
                  control_invocations,encode_invocations,buffer_in,buffer_out\n";
    fs::write(&minigops_csv, format!("{header}{minigops_body}"))?;

    let frames_csv = out_dir.join("frames.csv");
    fs::write(
        &frames_csv,
        format!("method,target_bpp,{FRAME_CSV_HEADER}\n{frames_body}"),
    )?;

    Ok(CompareOutput { summary, summary_csv, minigops_csv, frames_csv, svg_paths })
}
