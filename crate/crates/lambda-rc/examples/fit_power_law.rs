//! Fit R(λ) and D(λ) power laws from samples, derive the D(R) curve, and
//! check that inversion recovers the sampled operating points.

use lambda_rc::rdmodel::{derive_rd_curve, fit_power_law};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Ground truth: R = 0.25 λ^0.55, D = 0.12 λ^-0.9.
    let lambdas = [0.5f64, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let rate: Vec<(f64, f64)> =
        lambdas.iter().map(|&l| (l, 0.25 * l.powf(0.55))).collect();
    let dist: Vec<(f64, f64)> =
        lambdas.iter().map(|&l| (l, 0.12 * l.powf(-0.9))).collect();

    let r_model = fit_power_law(&rate)?;
    let d_model = fit_power_law(&dist)?;
    println!("rate model       {r_model}");
    println!("distortion model {d_model}");

    let rd = derive_rd_curve(&r_model, &d_model)?;
    println!("derived D(R)     {rd}");

    println!("\n{:>8} {:>10} {:>10} {:>12} {:>12}", "lambda", "bpp", "mse", "D(R(l))", "slope");
    for &l in &lambdas {
        let bpp = r_model.eval(l)?;
        let mse = d_model.eval(l)?;
        let from_curve = rd.distortion_of_rate(bpp)?;
        let slope = rd.slope_lambda(bpp)?;
        println!("{l:>8.2} {bpp:>10.5} {mse:>10.6} {from_curve:>12.6} {slope:>12.5}");
        assert!((from_curve - mse).abs() / mse < 1e-9);
    }

    // Inverting the rate model at a target budget returns the λ to encode at.
    let budget = 0.6;
    let l = r_model.invert(budget)?;
    println!("\nbudget {budget} bpp -> lambda {l:.4} -> bpp {:.6}", r_model.eval(l)?);
    Ok(())
}
