//! Independent certificate verification by dense eigenvalue
//! computation.
//!
//! Nothing here calls the solver or reuses the assembly code from
//! [`crate::synthesis`]: every block is rebuilt from the claimed `K`,
//! `X`, `M` (with `L = K X` back-substituted, so a wrong gain cannot
//! hide behind a correct raw `L`) and judged by symmetric eigenvalue
//! decomposition. A synthesis bug and a verification bug would have to
//! agree before a bad certificate passes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{symmetrize_checked, SymMatrix};
use crate::polytope::HessianPolytope;
use crate::synthesis::SynthesisResult;
use crate::{Error, Result};

/// Asymmetry guard applied before every eigenvalue decomposition.
const SYMMETRY_GUARD: f64 = 1e-10;

/// Interior simplex samples drawn in addition to the vertices.
const INTERIOR_SAMPLES: usize = 50;
const INTERIOR_SEED: u64 = 0x5eed_1e55;

/// Outcome of one checked block or consistency relation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockCheck {
    pub label: String,
    /// Requirement the block was tested against.
    pub requirement: String,
    /// Worst eigenvalue (lambda_max for negative senses, lambda_min for
    /// positive ones) or the measured residual for consistency checks.
    pub worst: f64,
    /// Threshold the worst value was compared to.
    pub threshold: f64,
    /// Distance to the threshold; the check passes iff margin >= 0.
    pub margin: f64,
    pub pass: bool,
}

/// Full verification verdict: passes iff every block does.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    pub blocks: Vec<BlockCheck>,
    pub pass: bool,
}

impl CertificateReport {
    fn from_blocks(blocks: Vec<BlockCheck>) -> Self {
        let pass = blocks.iter().all(|b| b.pass);
        CertificateReport { blocks, pass }
    }

    /// The failing block with the most negative margin, if any.
    pub fn worst_failure(&self) -> Option<&BlockCheck> {
        self.blocks
            .iter()
            .filter(|b| !b.pass)
            .min_by(|a, b| a.margin.total_cmp(&b.margin))
    }

    pub fn summary(&self) -> String {
        match self.worst_failure() {
            None => format!("pass ({} blocks)", self.blocks.len()),
            Some(b) => format!(
                "fail at '{}': worst {:.6e} vs threshold {:.6e}",
                b.label, b.worst, b.threshold
            ),
        }
    }
}

fn block_tolerance(explicit: Option<f64>, block: &DMatrix<f64>) -> f64 {
    explicit.unwrap_or_else(|| 1e-7 * block.norm().max(1.0))
}

/// Negative-definite check: passes iff lambda_max <= -tol.
fn check_nd(label: &str, block: &DMatrix<f64>, tol: Option<f64>) -> Result<BlockCheck> {
    let tol = block_tolerance(tol, block);
    let sym = symmetrize_checked(block, SYMMETRY_GUARD)?;
    let worst = sym.lambda_max();
    Ok(BlockCheck {
        label: label.to_string(),
        requirement: format!("lambda_max <= {:.3e}", -tol),
        worst,
        threshold: -tol,
        margin: -tol - worst,
        pass: worst <= -tol,
    })
}

/// Positive-(semi)definite check: passes iff lambda_min >= threshold,
/// where threshold is `tol` for strict and `-tol` for semidefinite.
fn check_pd(label: &str, block: &DMatrix<f64>, tol: Option<f64>, strict: bool) -> Result<BlockCheck> {
    let tol = block_tolerance(tol, block);
    let threshold = if strict { tol } else { -tol };
    let sym = symmetrize_checked(block, SYMMETRY_GUARD)?;
    let worst = sym.lambda_min();
    Ok(BlockCheck {
        label: label.to_string(),
        requirement: format!("lambda_min >= {threshold:.3e}"),
        worst,
        threshold,
        margin: worst - threshold,
        pass: worst >= threshold,
    })
}

fn check_residual(label: &str, residual: f64, threshold: f64) -> BlockCheck {
    BlockCheck {
        label: label.to_string(),
        requirement: format!("residual <= {threshold:.3e}"),
        worst: residual,
        threshold,
        margin: threshold - residual,
        pass: residual <= threshold,
    }
}

/// Rebuilds the vertex block from `(K, X, M)` with `L = K X`.
fn vertex_block_from_gain(
    h: &SymMatrix,
    k: &DMatrix<f64>,
    x: &SymMatrix,
    m: &SymMatrix,
    mu: f64,
) -> DMatrix<f64> {
    let n = x.dim();
    let l = k * x.as_matrix();
    let hl = h.as_matrix() * &l;
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block
        .view_mut((0, 0), (n, n))
        .copy_from(&(&hl + hl.transpose() + m.as_matrix()));
    for i in 0..n {
        block[(i, i)] += mu / 4.0;
        block[(n + i, n + i)] = -mu;
    }
    block.view_mut((n, 0), (n, n)).copy_from(&hl);
    block.view_mut((0, n), (n, n)).copy_from(&hl.transpose());
    block
}

/// Checks the full certificate: positivity of `X`, `M`, `P`, `Q`, the
/// vertex blocks (with the gain back-substituted), the reaching-time
/// couplings when `rho` is claimed, and the internal consistency of the
/// derived quantities. `tol = None` uses the scale-aware default
/// `1e-7 * |block|` per block.
pub fn check_certificate(
    result: &SynthesisResult,
    poly: &HessianPolytope,
    mu: f64,
    tol: Option<f64>,
) -> Result<CertificateReport> {
    let n = poly.dim();
    if result.x.dim() != n
        || result.m.dim() != n
        || result.k.nrows() != n
        || result.k.ncols() != n
        || result.p.dim() != n
        || result.q.dim() != n
    {
        return Err(Error::Domain(format!(
            "certificate dimensions do not match the {n}-dimensional polytope"
        )));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }

    let mut blocks = Vec::new();
    blocks.push(check_pd("X_pd", result.x.as_matrix(), tol, true)?);
    blocks.push(check_pd("M_pd", result.m.as_matrix(), tol, true)?);
    blocks.push(check_pd("P_pd", result.p.as_matrix(), tol, true)?);
    blocks.push(check_pd("Q_pd", result.q.as_matrix(), tol, true)?);

    for (i, h) in poly.vertices().iter().enumerate() {
        let block = vertex_block_from_gain(h, &result.k, &result.x, &result.m, mu);
        blocks.push(check_nd(&format!("vertex_{i}"), &block, tol)?);
    }

    if let Some(rho) = result.rho {
        let varphi = result.varphi;
        let mut phi_block = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            phi_block[(i, i)] = varphi;
            phi_block[(i, n + i)] = 1.0;
            phi_block[(n + i, i)] = 1.0;
        }
        phi_block
            .view_mut((n, n), (n, n))
            .copy_from(result.x.as_matrix());
        blocks.push(check_pd("varphi_coupling", &phi_block, tol, false)?);

        let mut rho_block = DMatrix::zeros(2 * n, 2 * n);
        rho_block
            .view_mut((0, 0), (n, n))
            .copy_from(result.m.as_matrix());
        rho_block
            .view_mut((0, n), (n, n))
            .copy_from(result.x.as_matrix());
        rho_block
            .view_mut((n, 0), (n, n))
            .copy_from(result.x.as_matrix());
        for i in 0..n {
            rho_block[(n + i, n + i)] = rho;
        }
        blocks.push(check_pd("rho_coupling", &rho_block, tol, false)?);
    }

    // Consistency of the derived fields, relative to their scale.
    let l_res = (&result.k * result.x.as_matrix() - &result.l).norm();
    blocks.push(check_residual(
        "gain_consistency",
        l_res,
        1e-9 * result.l.norm().max(1.0),
    ));
    let eye = DMatrix::identity(n, n);
    let p_res = (result.p.as_matrix() * result.x.as_matrix() - &eye).norm();
    blocks.push(check_residual("p_consistency", p_res, 1e-9 * (n as f64)));
    let q_expect = result.p.as_matrix() * result.m.as_matrix() * result.p.as_matrix();
    let q_res = (result.q.as_matrix() - &q_expect).norm();
    blocks.push(check_residual(
        "q_consistency",
        q_res,
        1e-9 * q_expect.norm().max(1.0),
    ));

    Ok(CertificateReport::from_blocks(blocks))
}

/// Evaluates the Schur-complemented descent condition
/// `(1/mu) K' H' H K + P H K + K' H' P + (mu/4) P^2 + Q < 0` at every
/// vertex and at 50 seeded interior points of the polytope. The
/// condition is quadratic in `H`, so vertex satisfaction only covers
/// the interior through the linear block form; the interior samples
/// guard that step.
pub fn check_descent_condition(
    k: &DMatrix<f64>,
    p: &SymMatrix,
    q: &SymMatrix,
    mu: f64,
    poly: &HessianPolytope,
    tol: Option<f64>,
) -> Result<CertificateReport> {
    let n = poly.dim();
    if k.nrows() != n || k.ncols() != n || p.dim() != n || q.dim() != n {
        return Err(Error::Domain(format!(
            "descent check needs {n}x{n} K, P, Q"
        )));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }
    if !p.is_positive_definite() || !q.is_positive_definite() {
        return Err(Error::Domain("P and Q must be positive definite".into()));
    }

    let descent = |h: &SymMatrix| -> DMatrix<f64> {
        let hk = h.as_matrix() * k;
        let phk = p.as_matrix() * &hk;
        hk.transpose() * &hk / mu
            + &phk
            + phk.transpose()
            + p.as_matrix() * p.as_matrix() * (mu / 4.0)
            + q.as_matrix()
    };

    let mut blocks = Vec::new();
    for (i, h) in poly.vertices().iter().enumerate() {
        blocks.push(check_nd(&format!("vertex_{i}"), &descent(h), tol)?);
    }
    for s in 0..INTERIOR_SAMPLES {
        let alpha = poly.sample_uniform(INTERIOR_SEED.wrapping_add(s as u64));
        let h = poly.evaluate(&alpha)?;
        blocks.push(check_nd(&format!("interior_{s}"), &descent(&h), tol)?);
    }
    Ok(CertificateReport::from_blocks(blocks))
}

/// Samples the Lyapunov derivative of `V(g) = g' P g / |g|` along the
/// average flow `dg = H K g / |g|` on the unit sphere: at `|g| = 1`,
/// `dV = 2 g' P H K g - (g' P g)(g' H K g)`. Reports the worst (least
/// negative) value over `samples` random pairs `(g, H(alpha))`; the
/// margin is the uniform decrease rate `c`.
pub fn check_finite_time_decrease(
    k: &DMatrix<f64>,
    p: &SymMatrix,
    poly: &HessianPolytope,
    samples: usize,
    seed: u64,
) -> Result<CertificateReport> {
    let n = poly.dim();
    if k.nrows() != n || k.ncols() != n || p.dim() != n {
        return Err(Error::Domain(format!("decrease check needs {n}x{n} K, P")));
    }
    if samples < 100 {
        return Err(Error::Domain(format!(
            "at least 100 samples required, got {samples}"
        )));
    }
    if !p.is_positive_definite() {
        return Err(Error::Domain("P must be positive definite".into()));
    }

    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = (DVector::zeros(n), 0usize);
    for s in 0..samples {
        let g = crate::linalg::unit_sphere_sample(&mut rng, n);
        let alpha = poly.sample_uniform(seed.wrapping_add(s as u64).wrapping_mul(0x9e37_79b9));
        let h = poly.evaluate(&alpha)?;
        let hkg = h.as_matrix() * k * &g;
        let pg = p.as_matrix() * &g;
        let dv = 2.0 * pg.dot(&hkg) - pg.dot(&g) * g.dot(&hkg);
        if dv > worst {
            worst = dv;
            worst_at = (g.clone(), s);
        }
    }
    let block = BlockCheck {
        label: format!("finite_time_decrease ({} samples, worst at sample {})", samples, worst_at.1),
        requirement: "dV/dtau < 0 on the unit sphere".to_string(),
        worst,
        threshold: 0.0,
        margin: -worst,
        pass: worst < 0.0,
    };
    Ok(CertificateReport::from_blocks(vec![block]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{solve, ClarabelBackend, Objective, SynthesisProblem};
    use approx::assert_relative_eq;

    fn h0() -> SymMatrix {
        SymMatrix::from_rows(&[vec![100.0, 30.0], vec![30.0, 20.0]]).unwrap()
    }

    fn iv_polytope() -> HessianPolytope {
        HessianPolytope::scaled(&h0(), 0.1).unwrap()
    }

    fn iv_result() -> SynthesisResult {
        let problem =
            SynthesisProblem::new(iv_polytope(), 32.9034, 0.4, Objective::MinimizeRho).unwrap();
        solve(&problem, &ClarabelBackend).unwrap()
    }

    #[test]
    fn solved_certificate_passes() {
        let result = iv_result();
        let report = check_certificate(&result, &iv_polytope(), result.mu, None).unwrap();
        assert!(report.pass, "{}", report.summary());
        assert!(report.blocks.iter().all(|b| b.margin >= 0.0));
    }

    #[test]
    fn perturbed_gain_fails_on_a_vertex_block() {
        let mut result = iv_result();
        result.k += DMatrix::identity(2, 2) * 10.0;
        let report = check_certificate(&result, &iv_polytope(), result.mu, None).unwrap();
        assert!(!report.pass);
        let vertex_failed = report
            .blocks
            .iter()
            .any(|b| b.label.starts_with("vertex_") && !b.pass && b.worst > 0.0);
        assert!(vertex_failed, "{}", report.summary());
    }

    #[test]
    fn injected_negative_x_fails_positivity() {
        let mut result = iv_result();
        result.x = SymMatrix::symmetrize(&(DMatrix::identity(2, 2) * -1.0));
        let report = check_certificate(&result, &iv_polytope(), result.mu, None).unwrap();
        assert!(!report.pass);
        let x_block = report.blocks.iter().find(|b| b.label == "X_pd").unwrap();
        assert!(!x_block.pass);
    }

    #[test]
    fn descent_scalar_example() {
        // K = -I, P = I, Q = 0.5 I, mu = 4, H = I:
        // (1/4)I - 2I + I + 0.5I = -0.25I.
        let poly = HessianPolytope::new(vec![SymMatrix::identity(2)]).unwrap();
        let k = DMatrix::identity(2, 2) * -1.0;
        let p = SymMatrix::identity(2);
        let q = SymMatrix::symmetrize(&(DMatrix::identity(2, 2) * 0.5));
        let report = check_descent_condition(&k, &p, &q, 4.0, &poly, None).unwrap();
        assert!(report.pass, "{}", report.summary());
        let v0 = &report.blocks[0];
        assert_relative_eq!(v0.worst, -0.25, epsilon = 1e-12);
    }

    #[test]
    fn zero_gain_cannot_descend() {
        let poly = iv_polytope();
        let k = DMatrix::zeros(2, 2);
        let p = SymMatrix::identity(2);
        let q = SymMatrix::identity(2);
        let report = check_descent_condition(&k, &p, &q, 4.0, &poly, None).unwrap();
        assert!(!report.pass);
        assert!(report.blocks.iter().all(|b| b.worst > 0.0));
    }

    #[test]
    fn certificate_pass_implies_descent_pass() {
        let result = iv_result();
        let cert = check_certificate(&result, &iv_polytope(), result.mu, None).unwrap();
        assert!(cert.pass);
        let descent = check_descent_condition(
            &result.k,
            &result.p,
            &result.q,
            result.mu,
            &iv_polytope(),
            None,
        )
        .unwrap();
        assert!(descent.pass, "{}", descent.summary());
        // Interior sampling finds no violation when the vertices pass.
        assert!(descent.blocks.iter().all(|b| b.pass));
    }

    #[test]
    fn printed_gain_matches_inverse_hessian_shape() {
        // The printed design-study gain is, to 4 digits, -13.163 H0^-1.
        let k = DMatrix::from_row_slice(2, 2, &[-0.2393, 0.3589, 0.3589, -1.1965]);
        let hk = h0().as_matrix() * &k;
        let diag = &hk + DMatrix::identity(2, 2) * 13.163;
        let worst = diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst <= 0.02, "|H0 K + 13.163 I|_inf = {worst}");
    }

    #[test]
    fn radial_contraction_decreases_uniformly() {
        // P = I, H = I, K = -I: dV = -1 at every unit vector.
        let poly = HessianPolytope::new(vec![SymMatrix::identity(3)]).unwrap();
        let k = DMatrix::identity(3, 3) * -1.0;
        let p = SymMatrix::identity(3);
        let report = check_finite_time_decrease(&k, &p, &poly, 500, 42).unwrap();
        assert!(report.pass);
        assert_relative_eq!(report.blocks[0].worst, -1.0, epsilon = 1e-12);
        assert_relative_eq!(report.blocks[0].margin, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ascent_gain_fails_decrease() {
        let poly = iv_polytope();
        let k = DMatrix::identity(2, 2);
        let p = SymMatrix::identity(2);
        let report = check_finite_time_decrease(&k, &p, &poly, 200, 1).unwrap();
        assert!(!report.pass);
        assert!(report.blocks[0].worst > 0.0);
    }

    #[test]
    fn synthesized_gain_decreases_with_margin() {
        let result = iv_result();
        let report =
            check_finite_time_decrease(&result.k, &result.p, &iv_polytope(), 1000, 7).unwrap();
        assert!(report.pass);
        assert!(report.blocks[0].margin > 0.0);
    }

    #[test]
    fn reports_are_deterministic() {
        let result = iv_result();
        let a = check_finite_time_decrease(&result.k, &result.p, &iv_polytope(), 300, 9).unwrap();
        let b = check_finite_time_decrease(&result.k, &result.p, &iv_polytope(), 300, 9).unwrap();
        assert_eq!(a.blocks[0].worst, b.blocks[0].worst);
        assert_eq!(a.blocks[0].label, b.blocks[0].label);
    }

    #[test]
    fn insufficient_samples_rejected() {
        let poly = iv_polytope();
        let k = DMatrix::identity(2, 2) * -1.0;
        let p = SymMatrix::identity(2);
        assert!(matches!(
            check_finite_time_decrease(&k, &p, &poly, 99, 0),
            Err(Error::Domain(_))
        ));
    }
}
