//! Measures how fast the full dithered loop converges to its average
//! system as the base frequency grows: the gap shrinks like 1/omega.

use nalgebra::DVector;
use uves::dither::DitherConfig;
use uves::linalg::SymMatrix;
use uves::polytope::HessianPolytope;
use uves::simulator::{averaging_gap, GradientEstimator, MapSpec, SimConfig};
use uves::synthesis::{solve, ClarabelBackend, Objective, SynthesisProblem};

fn main() -> uves::Result<()> {
    let h0 = SymMatrix::from_rows(&[vec![100.0, 30.0], vec![30.0, 20.0]])?;
    let poly = HessianPolytope::scaled(&h0, 0.1)?;
    let problem = SynthesisProblem::new(poly.clone(), 60.0, 0.4, Objective::MinimizeRho)?;
    let gain = solve(&problem, &ClarabelBackend)?.k;

    let cfg = SimConfig {
        map: MapSpec::new(10.0, DVector::from_row_slice(&[2.0, 4.0]), h0)?,
        dither: DitherConfig::new(vec![0.1, 0.1], vec![1, 7], 10.0)?,
        gain,
        theta0: DVector::from_row_slice(&[2.5, 6.0]),
        t_end: 4.0,
        // The sweep quadruples the fastest tone, so the step must
        // resolve it: dt <= 2 pi / (200 * 4 * 70).
        dt: 1e-4,
        uv_epsilon: 0.5,
        record_stride: 1,
        estimator: GradientEstimator::default(),
    };

    let gaps = averaging_gap(&cfg, &[10.0, 20.0, 40.0])?;
    println!("{:>10} {:>14}", "omega", "gap");
    for (omega, gap) in &gaps {
        println!("{omega:>10.1} {gap:>14.6}");
    }
    for pair in gaps.windows(2) {
        let ratio = pair[1].1 / pair[0].1;
        println!(
            "omega {} -> {}: gap ratio {ratio:.3} (1/omega predicts 0.5)",
            pair[0].0, pair[1].0
        );
        assert!(ratio < 1.0);
    }
    Ok(())
}
