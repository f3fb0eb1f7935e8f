//! Synthesizes a unit-vector gain for an interval Hessian family and
//! prints the certificate the solver returned.

use uves::linalg::SymMatrix;
use uves::polytope::HessianPolytope;
use uves::synthesis::{solve, ClarabelBackend, Objective, SynthesisProblem};

fn main() -> uves::Result<()> {
    let h0 = SymMatrix::from_rows(&[vec![100.0, 30.0], vec![30.0, 20.0]])?;
    let poly = HessianPolytope::scaled(&h0, 0.1)?;

    let problem = SynthesisProblem::new(poly.clone(), 32.9034, 0.4, Objective::MinimizeRho)?;
    let result = solve(&problem, &ClarabelBackend)?;

    println!("solver status : {}", result.solver_status);
    println!("gain K        : {:.4}", result.k);
    println!("rho           : {:.6}", result.rho.unwrap());
    println!(
        "P spectrum    : [{:.6}, {:.6}]  (varphi = {})",
        result.p.lambda_min(),
        result.p.lambda_max(),
        result.varphi
    );
    println!("Q lambda_min  : {:.6}", result.q.lambda_min());

    // The closed-loop matrix H K must be Hurwitz at every vertex; the
    // gain makes it so uniformly over the whole family.
    for (i, vertex) in poly.vertices().iter().enumerate() {
        let hk = vertex.as_matrix() * &result.k;
        let sym = SymMatrix::symmetrize(&(&hk + hk.transpose()));
        println!(
            "vertex {i}: lambda_max(HK + K'H) = {:.4}",
            sym.lambda_max()
        );
    }

    let feasibility = SynthesisProblem::new(poly, 32.9034, 0.4, Objective::Feasibility)?;
    let plain = solve(&feasibility, &ClarabelBackend)?;
    println!(
        "plain feasibility also solves: status {}, |K| = {:.4}",
        plain.solver_status,
        plain.k.norm()
    );
    Ok(())
}
