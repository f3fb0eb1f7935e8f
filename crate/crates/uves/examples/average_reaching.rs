//! Integrates the average gradient system from several starting points
//! and compares measured reaching times against the certificate bound.

use nalgebra::DVector;
use uves::linalg::SymMatrix;
use uves::polytope::HessianPolytope;
use uves::simulator::simulate_average;
use uves::synthesis::{reaching_time_bound, solve, ClarabelBackend, Objective, SynthesisProblem};

fn main() -> uves::Result<()> {
    let h0 = SymMatrix::from_rows(&[vec![100.0, 30.0], vec![30.0, 20.0]])?;
    let poly = HessianPolytope::scaled(&h0, 0.1)?;
    let problem = SynthesisProblem::new(poly.clone(), 32.9034, 0.4, Objective::MinimizeRho)?;
    let result = solve(&problem, &ClarabelBackend)?;
    println!("rho = {:.4} (bound for starts with V0 <= 1)\n", result.rho.unwrap());

    // The certificate covers every Hessian in the family; exercise a
    // vertex, the nominal midpoint, and a sampled interior member.
    let members = [
        ("vertex 0", poly.vertices()[0].clone()),
        ("nominal", h0),
        ("sampled", poly.evaluate(&poly.sample_uniform(42))?),
    ];
    let starts = [
        DVector::from_row_slice(&[0.3, -0.1]),
        DVector::from_row_slice(&[-2.0, 1.5]),
        DVector::from_row_slice(&[8.0, 6.0]),
    ];

    println!("{:<10} {:>12} {:>10} {:>10} {:>10}", "hessian", "|g0|", "V0", "reach", "bound");
    let (dt, eps_stop) = (5e-4, 0.02);
    for (name, h) in &members {
        for g0 in &starts {
            let (v0, bound) = reaching_time_bound(&result.p, &result.q, g0)?;
            let (_, reach) =
                simulate_average(&result.k, h, g0, 1.0, dt, 2.0 * bound + 1.0, eps_stop)?;
            let reach = reach.expect("certified trajectories reach the ball");
            assert!(reach <= bound + dt);
            println!(
                "{name:<10} {:>12.3} {v0:>10.4} {reach:>10.4} {bound:>10.4}",
                g0.norm()
            );
        }
    }
    Ok(())
}
