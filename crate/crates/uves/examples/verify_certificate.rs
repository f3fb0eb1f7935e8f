//! Runs the independent eigenvalue verifier against a synthesized
//! certificate, then tampers with the gain to show the rejection path.

use uves::linalg::SymMatrix;
use uves::polytope::HessianPolytope;
use uves::synthesis::{solve, ClarabelBackend, Objective, SynthesisProblem};
use uves::verifier::{check_certificate, check_descent_condition, check_finite_time_decrease};

fn main() -> uves::Result<()> {
    let h0 = SymMatrix::from_rows(&[vec![100.0, 30.0], vec![30.0, 20.0]])?;
    let poly = HessianPolytope::scaled(&h0, 0.1)?;
    let mu = 32.9034;

    let problem = SynthesisProblem::new(poly.clone(), mu, 0.4, Objective::MinimizeRho)?;
    let result = solve(&problem, &ClarabelBackend)?;

    // Route 1: the full LMI certificate, re-checked from eigenvalues.
    let certificate = check_certificate(&result, &poly, mu, None)?;
    println!("certificate : {}", certificate.summary());

    // Route 2: the Schur-complemented descent matrix at vertices and
    // interior samples, using only (K, P, Q).
    let descent = check_descent_condition(&result.k, &result.p, &result.q, mu, &poly, None)?;
    println!("descent     : {}", descent.summary());

    // Route 3: sampled Lyapunov derivative of the average flow.
    let decrease = check_finite_time_decrease(&result.k, &result.p, &poly, 200, 7)?;
    println!("decrease    : {}", decrease.summary());

    let tightest = certificate
        .blocks
        .iter()
        .min_by(|a, b| a.margin.total_cmp(&b.margin))
        .unwrap();
    println!(
        "tightest block '{}': margin {:.3e}",
        tightest.label, tightest.margin
    );

    // A gain the solver never produced must not pass. Scaling K breaks
    // the K = L X^-1 consistency relation and the verifier notices.
    let mut tampered = result;
    tampered.k *= 1.5;
    let verdict = check_certificate(&tampered, &poly, mu, None)?;
    println!("tampered K  : {}", verdict.summary());
    assert!(!verdict.pass);
    Ok(())
}
