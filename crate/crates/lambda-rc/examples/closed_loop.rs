//! Run the full controller over a sequence: per-mini-GOP targets, oracle
//! prediction, buffer carry-over, and summary metrics at the end.

use lambda_rc::allocator::{
    run_sequence, AllocationStrategy, AllocatorConfig, PredictorChoice, SequenceOptions,
    TargetSchedule,
};
use lambda_rc::bench::midrange_targets;
use lambda_rc::cli::format_reports;
use lambda_rc::codec_sim::{generate_script, VirtualCodec};
use lambda_rc::metrics::{quality_fluctuation, summarize};
use lambda_rc::predictor::LambdaGrid;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Two scenes, mild drift, reference coupling on and a little encode
    // noise: the regime the buffer exists for.
    let script = generate_script(17, 24, 2, 0.06)?.with_noise(0.03);
    let mut codec = VirtualCodec::new(script, 0.1, 409.6)?;
    let cfg = AllocatorConfig::default();

    // A deliverable target for every group, from the middle of its span.
    let totals = midrange_targets(&codec, &cfg)?;
    println!(
        "auto targets per mini-GOP: {:?}\n",
        totals.iter().map(|t| (t * 1e3).round() / 1e3).collect::<Vec<_>>()
    );

    let grid = LambdaGrid::default_grid();
    let opts = SequenceOptions {
        grid: &grid,
        targets: TargetSchedule::PerMinigop(&totals),
        cfg: &cfg,
        seed: 99,
        strategy: AllocationStrategy::SharedDistortion,
    };
    let reports = run_sequence(&mut codec, &PredictorChoice::Oracle, &opts)?;
    print!("{}", format_reports(&reports));

    let target_total: f64 = totals.iter().sum();
    let actual_total: f64 = reports.iter().map(|r| r.total_bpp).sum();
    println!(
        "\nsequence: {actual_total:.4} bpp spent against {target_total:.4} target \
         ({:+.3}% cumulative)",
        (actual_total / target_total - 1.0) * 100.0
    );
    let last = reports.last().unwrap();
    println!("buffer at end of sequence: {:+.5} bpp", last.buffer_out);

    let mean_bpp = target_total / codec.n_frames() as f64;
    let record = summarize("ours", mean_bpp, &reports, None)?;
    println!(
        "mean rate error {:.3}%, quality fluctuation {:.4}",
        record.mean_rate_error * 100.0,
        record.mean_q_f
    );
    println!(
        "control invocations {} / encode invocations {} (ratio {})",
        record.control_invocations, record.encode_invocations, record.invocation_ratio
    );

    // The same content with one fixed λ everywhere fluctuates more.
    let all_mse: Vec<f64> =
        reports.iter().flat_map(|r| r.mse_values()).collect();
    println!(
        "whole-sequence MSE fluctuation under control: {:.4}",
        quality_fluctuation(&all_mse)?
    );
    Ok(())
}
