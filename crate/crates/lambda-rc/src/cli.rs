//! Command-line interface.
//!
//! Exit codes: 0 on success, 2 for configuration or input errors, 3 when a
//! rate target is infeasible for the content (no shared distortion interval,
//! or a mini-GOP had to be pinned to a λ endpoint).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::allocator::{
    run_sequence, AllocError, AllocationStrategy, AllocatorConfig, ClampStatus, EncodeReport,
    PredictorChoice, SequenceOptions, TargetSchedule,
};
use crate::bench::{
    calibrate_synthetic_predictor, frame_csv_row, midrange_targets, run_compare, BenchError,
    ExperimentConfig, PredictorKind, FRAME_CSV_HEADER,
};
use crate::bench::svg::{line_plot, Series};
use crate::codec_sim::{generate_script, render_script_frames, ContentScript, VirtualCodec};
use crate::frameio::{load_y4m, write_y4m, Sequence};
use crate::predictor::{FeaturePredictor, LambdaGrid};
use crate::rdmodel::{derive_rd_curve, fit_power_law};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Parser)]
#[command(name = "lambda-rc", version, about = "Lambda-domain rate control sandbox")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a content script (and optionally render it to Y4M).
    Simulate(SimulateArgs),
    /// Run the predictive controller over a script and emit frames.csv.
    Control(ControlArgs),
    /// Fit power-law models to (lambda, value) samples from a CSV.
    Fit(FitArgs),
    /// Run all configured methods and write CSV/SVG reports.
    Compare(CompareArgs),
    /// Re-render the SVG plots from an existing compare output directory.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator seed; runs are fully reproducible from it.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long, default_value_t = 2)]
    scenes: usize,
    /// Log-domain random-walk step for within-scene parameter drift.
    #[arg(long, default_value_t = 0.05)]
    drift: f64,
    /// Lognormal encode noise sigma.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Reference-quality coupling strength.
    #[arg(long, default_value_t = 0.3)]
    coupling_gamma: f64,
    /// Output script path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also render the script to this Y4M file.
    #[arg(long)]
    y4m: Option<PathBuf>,
    #[arg(long, default_value_t = 320)]
    width: usize,
    #[arg(long, default_value_t = 192)]
    height: usize,
}

#[derive(Args)]
struct ControlArgs {
    /// Content script produced by `simulate`.
    #[arg(long)]
    script: PathBuf,
    /// Per-frame average bpp target.
    #[arg(long, conflicts_with = "auto_targets")]
    target: Option<f64>,
    /// Derive an attainable target for every mini-GOP from the script.
    #[arg(long)]
    auto_targets: bool,
    #[arg(long, default_value = "oracle")]
    predictor: PredictorKind,
    /// Calibrated predictor coefficients (JSON); synthesized when absent.
    #[arg(long)]
    predictor_params: Option<PathBuf>,
    /// Pixel frames for the feature predictor; rendered from the script when
    /// absent.
    #[arg(long)]
    frames_y4m: Option<PathBuf>,
    #[arg(long, default_value_t = 320)]
    width: usize,
    #[arg(long, default_value_t = 192)]
    height: usize,
    #[arg(long, default_value_t = crate::predictor::DEFAULT_LAMBDA_MIN)]
    lambda_min: f64,
    #[arg(long, default_value_t = crate::predictor::DEFAULT_LAMBDA_MAX)]
    lambda_max: f64,
    #[arg(long, default_value_t = crate::predictor::DEFAULT_GRID_SIZE)]
    grid_size: usize,
    #[arg(long, default_value_t = crate::allocator::DEFAULT_MINIGOP_SIZE)]
    minigop_size: usize,
    #[arg(long, default_value_t = crate::allocator::DEFAULT_MAX_ITERS)]
    max_iters: u32,
    #[arg(long, default_value_t = crate::allocator::DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Zero the bit buffer at each mini-GOP boundary.
    #[arg(long)]
    reset_buffer: bool,
    /// Seed for surrogate-reference noise; defaults to the script seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// CSV of samples: `lambda,value` or `lambda,bpp,mse` (header optional).
    #[arg(long)]
    samples: PathBuf,
    /// Write the fitted parameters as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory containing minigops.csv and frames.csv from `compare`.
    #[arg(long)]
    dir: PathBuf,
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Control(args) => cmd_control(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match &e {
                BenchError::Alloc(AllocError::InfeasibleBracket { .. }) => EXIT_INFEASIBLE,
                _ => EXIT_CONFIG,
            }
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32, BenchError> {
    let script = generate_script(args.seed, args.frames, args.scenes, args.drift)?
        .with_noise(args.noise_sigma)
        .with_coupling(args.coupling_gamma);
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    script.save(&args.out)?;
    let changes: Vec<usize> = script
        .truths
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_scene_change)
        .map(|(i, _)| i)
        .collect();
    println!(
        "script: {} frames, scene changes at {:?}, noise_sigma {}, coupling_gamma {}",
        script.len(),
        changes,
        script.noise_sigma,
        script.coupling_gamma
    );
    println!("wrote {}", args.out.display());
    if let Some(y4m) = args.y4m {
        let seq = render_script_frames(&script, args.width, args.height)?;
        write_y4m(&seq, &y4m)?;
        println!("wrote {} ({}x{}, {} frames)", y4m.display(), args.width, args.height, seq.len());
    }
    Ok(EXIT_OK)
}

fn cmd_control(args: ControlArgs) -> Result<i32, BenchError> {
    let script = ContentScript::load(&args.script)?;
    let cfg = AllocatorConfig {
        minigop_size: args.minigop_size,
        max_iters: args.max_iters,
        tolerance: args.tolerance,
        reset_buffer_per_minigop: args.reset_buffer,
    };
    let grid = LambdaGrid::geometric(args.lambda_min, args.lambda_max, args.grid_size)?;
    let mut codec = VirtualCodec::new(script.clone(), args.lambda_min, args.lambda_max)?;

    let auto_totals;
    let targets = if args.auto_targets {
        auto_totals = midrange_targets(&codec, &cfg)?;
        TargetSchedule::PerMinigop(&auto_totals)
    } else {
        let per_frame = args.target.ok_or_else(|| {
            BenchError::Config("either --target or --auto-targets is required".into())
        })?;
        if !(per_frame.is_finite() && per_frame > 0.0) {
            return Err(BenchError::Config(format!(
                "--target must be > 0, got {per_frame}"
            )));
        }
        TargetSchedule::Constant(per_frame * args.minigop_size as f64)
    };

    let feature_assets = match args.predictor {
        PredictorKind::Oracle => None,
        PredictorKind::Feature => {
            let predictor = match &args.predictor_params {
                Some(path) => FeaturePredictor::load(path)?,
                None => {
                    eprintln!("note: no --predictor-params, calibrating on synthetic content");
                    calibrate_synthetic_predictor(
                        script.seed ^ 0x7fe2_91a4,
                        script.coupling_gamma,
                        args.lambda_min,
                        args.lambda_max,
                        args.width,
                        args.height,
                    )?
                }
            };
            let frames: Sequence = match &args.frames_y4m {
                Some(path) => load_y4m(path)?,
                None => render_script_frames(&script, args.width, args.height)?,
            };
            Some((predictor, frames))
        }
    };

    let opts = SequenceOptions {
        grid: &grid,
        targets,
        cfg: &cfg,
        seed: args.seed.unwrap_or(script.seed),
        strategy: AllocationStrategy::SharedDistortion,
    };
    let choice = match &feature_assets {
        Some((predictor, frames)) => PredictorChoice::Feature { predictor, frames },
        None => PredictorChoice::Oracle,
    };
    let reports = run_sequence(&mut codec, &choice, &opts)?;

    fs::create_dir_all(&args.out_dir)?;
    let frames_csv = args.out_dir.join("frames.csv");
    let mut body = format!("{FRAME_CSV_HEADER}\n");
    let sequence_id = format!("seed{}", script.seed);
    for report in &reports {
        for fr in &report.frames {
            body.push_str(&frame_csv_row(&sequence_id, report.minigop_index, fr));
            body.push('\n');
        }
    }
    fs::write(&frames_csv, body)?;

    let mut clamped = false;
    for r in &reports {
        let clamp = match r.plan.clamp {
            ClampStatus::InRange => "in_range",
            ClampStatus::ClampedHigh => {
                clamped = true;
                "clamped_high"
            }
            ClampStatus::ClampedLow => {
                clamped = true;
                "clamped_low"
            }
        };
        let d_tar = r.plan.d_tar.map(|d| format!("{d:.6}")).unwrap_or_else(|| "-".into());
        println!(
            "minigop {:>3}: frames {:>3}..{:<3} target {:.4} actual {:.4} err {:>6.2}% \
             d_tar {} iters {:>3} {}",
            r.minigop_index,
            r.start_frame,
            r.start_frame + r.frames.len(),
            r.target_bpp,
            r.total_bpp,
            r.rate_error() * 100.0,
            d_tar,
            r.plan.iterations_used,
            clamp
        );
        if !r.plan.converged {
            eprintln!(
                "warning: mini-GOP {} search stopped at max_iters with the best visited point",
                r.minigop_index
            );
        }
    }
    let total: f64 = reports.iter().map(|r| r.total_bpp).sum();
    let target_total: f64 = reports.iter().map(|r| r.target_bpp).sum();
    println!(
        "sequence: target {:.4} actual {:.4} err {:.3}% buffer_out {:+.5}",
        target_total,
        total,
        (total - target_total).abs() / target_total * 100.0,
        reports.last().map(|r| r.buffer_out).unwrap_or(0.0)
    );
    println!("wrote {}", frames_csv.display());
    if clamped {
        eprintln!("warning: target infeasible for at least one mini-GOP (lambda pinned)");
        return Ok(EXIT_INFEASIBLE);
    }
    Ok(EXIT_OK)
}

fn cmd_fit(args: FitArgs) -> Result<i32, BenchError> {
    let text = fs::read_to_string(&args.samples)
        .map_err(|e| BenchError::Config(format!("{}: {e}", args.samples.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                if !(2..=3).contains(&values.len()) {
                    return Err(BenchError::Config(format!(
                        "line {}: expected 2 or 3 columns, got {}",
                        lineno + 1,
                        values.len()
                    )));
                }
                rows.push(values);
            }
            Err(_) if lineno == 0 => {} // header
            Err(e) => {
                return Err(BenchError::Config(format!("line {}: {e}", lineno + 1)));
            }
        }
    }
    if rows.is_empty() {
        return Err(BenchError::Config("no samples".into()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(BenchError::Config("inconsistent column counts".into()));
    }

    let fit_col = |idx: usize| -> Result<crate::rdmodel::PowerLawModel, BenchError> {
        let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[idx])).collect();
        fit_power_law(&samples).map_err(|e| BenchError::Config(e.to_string()))
    };

    let json = if cols == 2 {
        let model = fit_col(1)?;
        println!("model: {model}");
        serde_json::json!({ "model": model })
    } else {
        let r = fit_col(1)?;
        let d = fit_col(2)?;
        let curve = derive_rd_curve(&r, &d).map_err(|e| BenchError::Config(e.to_string()))?;
        println!("r_lambda: {r}");
        println!("d_lambda: {d}");
        println!("rd_curve: {curve}");
        serde_json::json!({ "r_lambda": r, "d_lambda": d, "rd": curve })
    };
    if let Some(out) = args.out {
        fs::write(&out, serde_json::to_string_pretty(&json).expect("json serializes"))?;
        println!("wrote {}", out.display());
    }
    Ok(EXIT_OK)
}

fn cmd_compare(args: CompareArgs) -> Result<i32, BenchError> {
    let mut cfg = ExperimentConfig::from_toml_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = run_compare(&cfg, &args.out_dir)?;
    println!(
        "{:<10} {:>10} {:>12} {:>12} {:>10} {:>12} {:>10}",
        "method", "target", "mean_dR", "cum_dR", "mean_QF", "QF_ratio", "inv_ratio"
    );
    for rec in &out.summary {
        println!(
            "{:<10} {:>10.4} {:>11.3}% {:>11.3}% {:>10.4} {:>12} {:>10.2}",
            rec.method,
            rec.target_bpp,
            rec.mean_rate_error * 100.0,
            rec.cumulative_rate_error * 100.0,
            rec.mean_q_f,
            rec.fluctuation_ratio.map(|r| format!("{r:.3}")).unwrap_or_else(|| "-".into()),
            rec.invocation_ratio
        );
    }
    for path in [&out.summary_csv, &out.minigops_csv, &out.frames_csv] {
        println!("wrote {}", path.display());
    }
    for path in &out.svg_paths {
        println!("wrote {}", path.display());
    }
    Ok(EXIT_OK)
}

struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Result<CsvTable, BenchError> {
    let text = fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| BenchError::Config(format!("{}: empty file", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(BenchError::Config(format!(
                "{}: row has {} fields, header has {}",
                path.display(),
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

fn column(table: &CsvTable, name: &str, path: &Path) -> Result<usize, BenchError> {
    table.header.iter().position(|h| h == name).ok_or_else(|| {
        BenchError::Config(format!("{}: missing column `{name}`", path.display()))
    })
}

fn parse_f64(s: &str, what: &str) -> Result<f64, BenchError> {
    s.parse().map_err(|_| BenchError::Config(format!("bad {what} value `{s}`")))
}

/// Rebuild the rate and MSE SVGs from compare's CSV output, byte-identical
/// to what `compare` wrote for the same data.
fn cmd_plot(args: PlotArgs) -> Result<i32, BenchError> {
    let minigops_path = args.dir.join("minigops.csv");
    let frames_path = args.dir.join("frames.csv");
    let minigops = read_csv(&minigops_path)?;
    let frames = read_csv(&frames_path)?;

    let mg_method = column(&minigops, "method", &minigops_path)?;
    let mg_target = column(&minigops, "target_bpp", &minigops_path)?;
    let mg_total = column(&minigops, "target_total_bpp", &minigops_path)?;
    let mg_actual = column(&minigops, "actual_bpp", &minigops_path)?;
    let mg_index = column(&minigops, "minigop_index", &minigops_path)?;
    let fr_method = column(&frames, "method", &frames_path)?;
    let fr_target = column(&frames, "target_bpp", &frames_path)?;
    let fr_index = column(&frames, "frame_index", &frames_path)?;
    let fr_mse = column(&frames, "actual_mse", &frames_path)?;

    // Targets in file order.
    let mut targets: Vec<String> = Vec::new();
    for row in &minigops.rows {
        if !targets.contains(&row[mg_target]) {
            targets.push(row[mg_target].clone());
        }
    }

    let mut written = 0usize;
    for target in &targets {
        let label = parse_f64(target, "target_bpp")?;
        // Methods in file order for this target.
        let mut methods: Vec<String> = Vec::new();
        for row in minigops.rows.iter().filter(|r| &r[mg_target] == target) {
            if !methods.contains(&row[mg_method]) {
                methods.push(row[mg_method].clone());
            }
        }

        let mut rate_series = Vec::new();
        for method in &methods {
            let mut acc = 0.0;
            let mut points = Vec::new();
            for row in minigops
                .rows
                .iter()
                .filter(|r| &r[mg_target] == target && &r[mg_method] == method)
            {
                acc += parse_f64(&row[mg_actual], "actual_bpp")?;
                points.push((parse_f64(&row[mg_index], "minigop_index")?, acc));
            }
            rate_series.push(Series { name: method.clone(), points });
        }
        if let Some(first) = methods.first() {
            let mut acc = 0.0;
            let mut points = Vec::new();
            for row in minigops
                .rows
                .iter()
                .filter(|r| &r[mg_target] == target && &r[mg_method] == first)
            {
                acc += parse_f64(&row[mg_total], "target_total_bpp")?;
                points.push((parse_f64(&row[mg_index], "minigop_index")?, acc));
            }
            rate_series.push(Series { name: "target".into(), points });
        }
        let rate_path = args.dir.join(format!("rate_bpp{label:.4}.svg"));
        fs::write(
            &rate_path,
            line_plot(
                &format!("cumulative bits at {label:.4} bpp"),
                "mini-GOP",
                "cumulative bpp",
                &rate_series,
            ),
        )?;
        println!("wrote {}", rate_path.display());
        written += 1;

        let mut mse_series = Vec::new();
        for method in &methods {
            let mut points = Vec::new();
            for row in frames
                .rows
                .iter()
                .filter(|r| &r[fr_target] == target && &r[fr_method] == method)
            {
                points.push((
                    parse_f64(&row[fr_index], "frame_index")?,
                    parse_f64(&row[fr_mse], "actual_mse")?,
                ));
            }
            mse_series.push(Series { name: method.clone(), points });
        }
        let mse_path = args.dir.join(format!("mse_bpp{label:.4}.svg"));
        fs::write(
            &mse_path,
            line_plot(
                &format!("per-frame MSE at {label:.4} bpp"),
                "frame",
                "MSE",
                &mse_series,
            ),
        )?;
        println!("wrote {}", mse_path.display());
        written += 1;
    }
    if written == 0 {
        return Err(BenchError::Config("no data rows to plot".into()));
    }
    Ok(EXIT_OK)
}

/// Render an EncodeReport list as a compact table (used by examples).
pub fn format_reports(reports: &[EncodeReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>8} {:>9} {:>9} {:>8} {:>6}",
        "minigop", "frames", "target", "actual", "err%", "iters"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>9.4} {:>9.4} {:>8.3} {:>6}",
            r.minigop_index,
            format!("{}..{}", r.start_frame, r.start_frame + r.frames.len()),
            r.target_bpp,
            r.total_bpp,
            r.rate_error() * 100.0,
            r.plan.iterations_used
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn fit_subcommand_parses_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        // alpha=2, beta=0.5 and alpha=8, beta=-1.
        let mut body = String::from("lambda,bpp,mse\n");
        for lambda in [0.5f64, 1.0, 2.0, 4.0, 8.0] {
            body.push_str(&format!(
                "{},{},{}\n",
                lambda,
                2.0 * lambda.sqrt(),
                8.0 / lambda
            ));
        }
        fs::write(&path, body).unwrap();
        let out = dir.path().join("models.json");
        let code = cmd_fit(FitArgs { samples: path, out: Some(out.clone()) }).unwrap();
        assert_eq!(code, EXIT_OK);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
        let r_beta = json["r_lambda"]["beta"].as_f64().unwrap();
        let k = json["rd"]["k"].as_f64().unwrap();
        assert!((r_beta - 0.5).abs() < 1e-9);
        assert!((k - 2.0).abs() < 1e-9);
    }
}
