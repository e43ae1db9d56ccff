//! Predict R-D model parameters from pixels alone: calibrate the linear
//! feature map on synthetic training content, then compare its predictions
//! against the ground truth of an unseen sequence.

use lambda_rc::bench::calibrate_synthetic_predictor;
use lambda_rc::codec_sim::{generate_script, render_script_frames, VirtualCodec};
use lambda_rc::frameio::FramePair;
use lambda_rc::predictor::{extract_features, oracle_predict, prediction_mae, LambdaGrid, Predictor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Calibration renders its own training scripts; seed 1000 keeps it
    // disjoint from the test content below.
    let predictor = calibrate_synthetic_predictor(1000, 0.3, 0.1, 409.6, 320, 192)?;
    println!("calibrated coefficient rows (intercept, mad, grad, log_ratio):");
    println!("  ln_alpha1 {:?}", predictor.ln_alpha1.map(|c| (c * 1e4).round() / 1e4));
    println!("  beta1     {:?}", predictor.beta1.map(|c| (c * 1e4).round() / 1e4));
    println!("  ln_alpha2 {:?}", predictor.ln_alpha2.map(|c| (c * 1e4).round() / 1e4));
    println!("  beta2     {:?}", predictor.beta2.map(|c| (c * 1e4).round() / 1e4));

    let script = generate_script(5, 8, 2, 0.05)?;
    let frames = render_script_frames(&script, 320, 192)?;
    let codec = VirtualCodec::new(script, 0.1, 409.6)?;
    let grid = LambdaGrid::default_grid();

    println!(
        "\n{:>6} {:>10} {:>10} {:>12} {:>12}",
        "frame", "mad", "grad", "bpp MAE", "mse MAE"
    );
    for f in 1..frames.len() {
        let pair = FramePair::new(
            frames.frames()[f - 1].clone(),
            frames.frames()[f].clone(),
        )?;
        let features = extract_features(&pair);
        let predicted = predictor.predict(&pair, &grid)?;
        let truth = oracle_predict(&codec, f, 0.0, &grid)?;
        let (bpp_mae, mse_mae) = prediction_mae(&predicted, &truth)?;
        println!(
            "{f:>6} {:>10.5} {:>10.5} {bpp_mae:>12.4} {mse_mae:>12.4}",
            features.temporal_mad, features.spatial_grad
        );
    }
    println!("\nMAE is relative; 0.3 means predictions are off by 30% on average.");
    println!("The controller's buffer absorbs that error in closed loop.");
    Ok(())
}
