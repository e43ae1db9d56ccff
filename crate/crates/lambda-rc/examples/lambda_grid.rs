//! Sample a frame on the geometric λ grid, repair non-monotonic noise, and
//! fit per-frame models from the repaired samples.

use lambda_rc::predictor::{prediction_mae, LambdaGrid, RDSampleSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = LambdaGrid::default_grid();
    println!("default grid ({} points):", grid.len());
    for (i, l) in grid.values().iter().enumerate() {
        println!("  [{i}] lambda = {l:>9.4}");
    }
    let step = grid.values()[1] / grid.values()[0];
    println!("geometric step {step:.5} (constant across the grid)\n");

    // Noisy measurements of R = 0.2 λ^0.5, D = 0.1 λ^-0.8. The wiggle makes
    // bpp dip and mse bump mid-grid, which a power-law fit cannot absorb.
    let wiggle = [1.0, 1.08, 0.93, 1.0, 1.06, 0.95, 1.0, 1.0];
    let bpp: Vec<f64> = grid
        .values()
        .iter()
        .zip(&wiggle)
        .map(|(&l, &w)| 0.2 * l.powf(0.5) * w)
        .collect();
    let mse: Vec<f64> = grid
        .values()
        .iter()
        .zip(&wiggle)
        .map(|(&l, &w)| 0.1 * l.powf(-0.8) / w)
        .collect();

    let raw_bpp = bpp.clone();
    let samples = RDSampleSet::new(grid.clone(), bpp, mse)?;
    println!("{:>9} {:>11} {:>11} {:>11}", "lambda", "raw bpp", "repaired", "mse");
    for (i, &l) in grid.values().iter().enumerate() {
        println!(
            "{l:>9.4} {:>11.6} {:>11.6} {:>11.6}",
            raw_bpp[i], samples.bpp[i], samples.mse[i]
        );
    }
    for w in samples.bpp.windows(2) {
        assert!(w[0] <= w[1], "bpp must be non-decreasing after repair");
    }
    for w in samples.mse.windows(2) {
        assert!(w[0] >= w[1], "mse must be non-increasing after repair");
    }

    let models = samples.fit_models()?;
    println!("\nfitted rate model       {}", models.r_lambda);
    println!("fitted distortion model {}", models.d_lambda);
    println!("deliverable rate span   [{:.5}, {:.5}] bpp", models.r_min, models.r_max);
    println!("deliverable mse span    [{:.6}, {:.6}]", models.d_min, models.d_max);

    // How well the fit reproduces the (repaired) samples.
    let refit = RDSampleSet::new(
        grid.clone(),
        grid.values().iter().map(|&l| models.r_lambda.eval(l).unwrap()).collect(),
        grid.values().iter().map(|&l| models.d_lambda.eval(l).unwrap()).collect(),
    )?;
    let (bpp_mae, mse_mae) = prediction_mae(&refit, &samples)?;
    println!("fit residual MAE        bpp {bpp_mae:.4}, mse {mse_mae:.4}");
    Ok(())
}
