//! Runs the full dithered loop: probing signal, gradient estimator, and
//! unit-vector law together, writing the trace to a CSV for plotting.

use nalgebra::DVector;
use uves::dither::DitherConfig;
use uves::linalg::SymMatrix;
use uves::polytope::HessianPolytope;
use uves::simulator::{measure_settling, simulate_full, GradientEstimator, MapSpec, SimConfig};
use uves::synthesis::{solve, ClarabelBackend, Objective, SynthesisProblem};

fn main() -> uves::Result<()> {
    let h0 = SymMatrix::from_rows(&[vec![100.0, 30.0], vec![30.0, 20.0]])?;
    let poly = HessianPolytope::scaled(&h0, 0.1)?;

    // A larger mu buys a faster closed loop, which the dithered system
    // needs to separate its time scales within a 10 s horizon.
    let problem = SynthesisProblem::new(poly.clone(), 60.0, 0.4, Objective::MinimizeRho)?;
    let gain = solve(&problem, &ClarabelBackend)?.k;

    let thetastar = DVector::from_row_slice(&[2.0, 4.0]);
    let hessian = poly.evaluate(&poly.sample_uniform(0))?;
    let cfg = SimConfig {
        map: MapSpec::new(10.0, thetastar.clone(), hessian)?,
        dither: DitherConfig::new(vec![0.1, 0.1], vec![1, 7], 10.0)?,
        gain,
        theta0: DVector::from_row_slice(&[2.5, 6.0]),
        t_end: 10.0,
        dt: 4e-4,
        uv_epsilon: 0.5,
        record_stride: 20,
        estimator: GradientEstimator::default(),
    };

    let trace = simulate_full(&cfg)?;
    let theta_hat = trace.final_theta_hat().unwrap();
    println!("final estimate      : {:.4}", theta_hat.transpose());
    println!("estimation error    : {:.4}", (theta_hat - &thetastar).norm());
    println!(
        "final output        : {:.4} (optimum {:.1})",
        trace.y.as_ref().unwrap().last().unwrap(),
        10.0
    );
    match measure_settling(&trace, &thetastar, 0.3)? {
        Some(t) => println!("settled in 0.3-ball : t = {t:.3} s"),
        None => println!("settled in 0.3-ball : not within the horizon"),
    }

    let path = std::env::temp_dir().join("full_loop_trace.csv");
    let file = std::fs::File::create(&path)?;
    trace.write_csv(std::io::BufWriter::new(file))?;
    println!("trace ({} samples)  : {}", trace.len(), path.display());
    Ok(())
}
