//! LMI assembly and gain synthesis over the Hessian polytope.
//!
//! The design problem: find `X > 0`, `M > 0` and a full matrix `L` such
//! that for every vertex `H_i` of the polytope
//!
//! ```text
//! [ H_i L + L' H_i' + (mu/4) I + M    L' H_i' ]
//! [ H_i L                             -mu I   ]  < 0,
//! ```
//!
//! which by a Schur complement is the descent condition
//! `H_i L + L' H_i' + (mu/4) I + M + (1/mu) L' H_i' H_i L < 0`. The
//! unit-vector gain is recovered as `K = L X^-1`, the Lyapunov
//! certificate as `P = X^-1`, `Q = X^-1 M X^-1`, and the average
//! gradient estimate then reaches the origin in at most
//! `V(G(0)) / lambda_min(Q)` time units.
//!
//! The reaching-time program adds two semidefinite couplings,
//! `[[varphi I, I], [I, X]] >= 0` (i.e. `P <= varphi I`) and
//! `[[M, X], [X, rho I]] >= 0` (i.e. `lambda_min(Q) >= 1/rho`), and
//! minimizes `rho`: for any start with `V(G(0)) <= 1` the reaching time
//! is then at most `rho`.
//!
//! Assembly is plain data ([`LmiBlock`]), solving goes through the
//! [`SolverBackend`] interface, and every returned [`SynthesisResult`]
//! is re-checked by the independent eigenvalue verifier before it
//! reaches the caller; a backend cannot vouch for itself.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::SymMatrix;
use crate::polytope::HessianPolytope;
use crate::verifier;
use crate::{Error, Result};

/// Definiteness requirement on an assembled block. Strict senses are
/// realized by the backend as a shift of `eps_strict` (see
/// [`strictness_epsilon`]); semidefinite blocks get no shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSense {
    NegativeDefinite,
    PositiveSemidefinite,
    PositiveDefinite,
}

/// What the solver is asked to do with the assembled blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Feasibility,
    MinimizeRho,
}

/// Enumeration of the scalar decision variables: the upper triangle of
/// `X` (column-major), the upper triangle of `M`, the entries of `L`
/// (column-major), and `rho` when the objective asks for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionLayout {
    n: usize,
    with_rho: bool,
}

impl DecisionLayout {
    pub fn new(n: usize, with_rho: bool) -> Self {
        DecisionLayout { n, with_rho }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn tri(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    /// Total number of scalar decision variables.
    pub fn len(&self) -> usize {
        2 * self.tri() + self.n * self.n + usize::from(self.with_rho)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn tri_index(i: usize, j: usize) -> usize {
        debug_assert!(i <= j);
        j * (j + 1) / 2 + i
    }

    /// Index of X[i,j] (i <= j).
    pub fn x_index(&self, i: usize, j: usize) -> usize {
        Self::tri_index(i.min(j), i.max(j))
    }

    /// Index of M[i,j] (i <= j).
    pub fn m_index(&self, i: usize, j: usize) -> usize {
        self.tri() + Self::tri_index(i.min(j), i.max(j))
    }

    /// Index of L[r,c].
    pub fn l_index(&self, r: usize, c: usize) -> usize {
        2 * self.tri() + c * self.n + r
    }

    pub fn rho_index(&self) -> Option<usize> {
        self.with_rho.then(|| 2 * self.tri() + self.n * self.n)
    }

    pub fn extract_x(&self, z: &DVector<f64>) -> SymMatrix {
        let mut m = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for i in 0..=j {
                m[(i, j)] = z[self.x_index(i, j)];
                m[(j, i)] = m[(i, j)];
            }
        }
        SymMatrix::symmetrize(&m)
    }

    pub fn extract_m(&self, z: &DVector<f64>) -> SymMatrix {
        let mut m = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for i in 0..=j {
                m[(i, j)] = z[self.m_index(i, j)];
                m[(j, i)] = m[(i, j)];
            }
        }
        SymMatrix::symmetrize(&m)
    }

    pub fn extract_l(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for c in 0..self.n {
            for r in 0..self.n {
                m[(r, c)] = z[self.l_index(r, c)];
            }
        }
        m
    }

    pub fn extract_rho(&self, z: &DVector<f64>) -> Option<f64> {
        self.rho_index().map(|i| z[i])
    }
}

/// One affine symmetric-matrix constraint
/// `B(z) = base + sum_k z[k] * coeffs[k]` with a definiteness sense.
/// `coeffs` is indexed by the [`DecisionLayout`] that produced the
/// block; entries for unused variables are zero matrices.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub label: String,
    pub dim: usize,
    pub base: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
    pub sense: BlockSense,
}

impl LmiBlock {
    fn zeroed(label: &str, dim: usize, nvars: usize, sense: BlockSense) -> Self {
        LmiBlock {
            label: label.to_string(),
            dim,
            base: DMatrix::zeros(dim, dim),
            coeffs: vec![DMatrix::zeros(dim, dim); nvars],
            sense,
        }
    }

    /// Evaluates the affine map at an assignment.
    pub fn evaluate(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        if z.len() != self.coeffs.len() {
            return Err(Error::Domain(format!(
                "block '{}' expects {} variables, got {}",
                self.label,
                self.coeffs.len(),
                z.len()
            )));
        }
        let mut b = self.base.clone();
        for (zk, ck) in z.iter().zip(&self.coeffs) {
            if *zk != 0.0 {
                b += ck * *zk;
            }
        }
        Ok(b)
    }
}

/// Strictness shift for definite senses: `1e-6` times the problem
/// scale, taken as the largest vertex spectral norm (at least 1).
pub fn strictness_epsilon(poly: &HessianPolytope) -> f64 {
    let scale = poly
        .vertices()
        .iter()
        .map(|h| h.spectral_norm())
        .fold(1.0_f64, f64::max);
    1e-6 * scale
}

/// Symmetric basis matrix for entry (i, j): `e_i e_j' + e_j e_i'` off
/// the diagonal, `e_i e_i'` on it.
fn sym_basis(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

fn pd_block(label: &str, layout: &DecisionLayout, index: impl Fn(usize, usize) -> usize) -> LmiBlock {
    let n = layout.dim();
    let mut block = LmiBlock::zeroed(label, n, layout.len(), BlockSense::PositiveDefinite);
    for j in 0..n {
        for i in 0..=j {
            block.coeffs[index(i, j)] = sym_basis(n, i, j);
        }
    }
    block
}

fn vertex_block(layout: &DecisionLayout, vertex: usize, h: &SymMatrix, mu: f64) -> LmiBlock {
    let n = layout.dim();
    let dim = 2 * n;
    let mut block = LmiBlock::zeroed(
        &format!("vertex_{vertex}"),
        dim,
        layout.len(),
        BlockSense::NegativeDefinite,
    );
    for i in 0..n {
        block.base[(i, i)] = mu / 4.0;
        block.base[(n + i, n + i)] = -mu;
    }
    for j in 0..n {
        for i in 0..=j {
            let mut c = DMatrix::zeros(dim, dim);
            c.view_mut((0, 0), (n, n)).copy_from(&sym_basis(n, i, j));
            block.coeffs[layout.m_index(i, j)] = c;
        }
    }
    let hm = h.as_matrix();
    for c in 0..n {
        for r in 0..n {
            // d/dL[r,c] of H L is (H e_r) e_c'.
            let mut he = DMatrix::zeros(n, n);
            for p in 0..n {
                he[(p, c)] = hm[(p, r)];
            }
            let mut cm = DMatrix::zeros(dim, dim);
            cm.view_mut((0, 0), (n, n)).copy_from(&(&he + he.transpose()));
            cm.view_mut((n, 0), (n, n)).copy_from(&he);
            cm.view_mut((0, n), (n, n)).copy_from(&he.transpose());
            block.coeffs[layout.l_index(r, c)] = cm;
        }
    }
    block
}

/// Emits the Theorem-1 feasibility blocks: `X > 0`, `M > 0`, and one
/// 2n-by-2n negative-definite block per polytope vertex. The layout is
/// `DecisionLayout::new(n, false)`.
pub fn assemble_feasibility(poly: &HessianPolytope, mu: f64) -> Result<Vec<LmiBlock>> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }
    let layout = DecisionLayout::new(poly.dim(), false);
    Ok(blocks_with_layout(poly, mu, &layout))
}

fn blocks_with_layout(poly: &HessianPolytope, mu: f64, layout: &DecisionLayout) -> Vec<LmiBlock> {
    let mut blocks = Vec::with_capacity(2 + poly.num_vertices());
    blocks.push(pd_block("X_pd", layout, |i, j| layout.x_index(i, j)));
    blocks.push(pd_block("M_pd", layout, |i, j| layout.m_index(i, j)));
    for (v, h) in poly.vertices().iter().enumerate() {
        blocks.push(vertex_block(layout, v, h, mu));
    }
    blocks
}

/// Emits the feasibility blocks plus the two reaching-time couplings
/// `[[varphi I, I], [I, X]] >= 0` and `[[M, X], [X, rho I]] >= 0`, with
/// `rho` as an extra scalar decision variable. The layout is
/// `DecisionLayout::new(n, true)`.
pub fn assemble_min_rho(
    poly: &HessianPolytope,
    mu: f64,
    varphi: f64,
) -> Result<Vec<LmiBlock>> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }
    if !(varphi > 0.0 && varphi.is_finite()) {
        return Err(Error::Domain(format!("varphi must be positive, got {varphi}")));
    }
    let n = poly.dim();
    let layout = DecisionLayout::new(n, true);
    let mut blocks = blocks_with_layout(poly, mu, &layout);

    let dim = 2 * n;
    let mut varphi_block = LmiBlock::zeroed(
        "varphi_coupling",
        dim,
        layout.len(),
        BlockSense::PositiveSemidefinite,
    );
    for i in 0..n {
        varphi_block.base[(i, i)] = varphi;
        varphi_block.base[(i, n + i)] = 1.0;
        varphi_block.base[(n + i, i)] = 1.0;
    }
    for j in 0..n {
        for i in 0..=j {
            let mut c = DMatrix::zeros(dim, dim);
            c.view_mut((n, n), (n, n)).copy_from(&sym_basis(n, i, j));
            varphi_block.coeffs[layout.x_index(i, j)] = c;
        }
    }
    blocks.push(varphi_block);

    let mut rho_block = LmiBlock::zeroed(
        "rho_coupling",
        dim,
        layout.len(),
        BlockSense::PositiveSemidefinite,
    );
    for j in 0..n {
        for i in 0..=j {
            let basis = sym_basis(n, i, j);
            let mut cm = DMatrix::zeros(dim, dim);
            cm.view_mut((0, 0), (n, n)).copy_from(&basis);
            rho_block.coeffs[layout.m_index(i, j)] = cm;
            let mut cx = DMatrix::zeros(dim, dim);
            cx.view_mut((0, n), (n, n)).copy_from(&basis);
            cx.view_mut((n, 0), (n, n)).copy_from(&basis);
            rho_block.coeffs[layout.x_index(i, j)] = cx;
        }
    }
    let mut cr = DMatrix::zeros(dim, dim);
    for i in 0..n {
        cr[(n + i, n + i)] = 1.0;
    }
    rho_block.coeffs[layout.rho_index().unwrap()] = cr;
    blocks.push(rho_block);

    Ok(blocks)
}

/// The full design problem handed to [`solve`].
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub polytope: HessianPolytope,
    pub mu: f64,
    /// Bound `P <= varphi I` used by the reaching-time program; ignored
    /// by plain feasibility.
    pub varphi: f64,
    pub objective: Objective,
}

impl SynthesisProblem {
    pub fn new(
        polytope: HessianPolytope,
        mu: f64,
        varphi: f64,
        objective: Objective,
    ) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Domain(format!("mu must be positive, got {mu}")));
        }
        if !(varphi > 0.0 && varphi.is_finite()) {
            return Err(Error::Domain(format!(
                "varphi must be positive, got {varphi}"
            )));
        }
        Ok(SynthesisProblem {
            polytope,
            mu,
            varphi,
            objective,
        })
    }

    /// Assembles the blocks for the configured objective.
    pub fn assemble(&self) -> Result<(DecisionLayout, Vec<LmiBlock>)> {
        match self.objective {
            Objective::Feasibility => Ok((
                DecisionLayout::new(self.polytope.dim(), false),
                assemble_feasibility(&self.polytope, self.mu)?,
            )),
            Objective::MinimizeRho => Ok((
                DecisionLayout::new(self.polytope.dim(), true),
                assemble_min_rho(&self.polytope, self.mu, self.varphi)?,
            )),
        }
    }
}

/// Synthesized gain plus its certificate. `p = x^-1` and
/// `q = x^-1 m x^-1` are the Lyapunov pair; `rho` is present for the
/// reaching-time objective.
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub x: SymMatrix,
    pub m: SymMatrix,
    pub l: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub p: SymMatrix,
    pub q: SymMatrix,
    pub rho: Option<f64>,
    pub mu: f64,
    pub varphi: f64,
    pub eps_strict: f64,
    pub solver_status: String,
}

/// Raw assignment returned by a backend.
#[derive(Debug, Clone)]
pub struct BackendSolution {
    pub assignment: DVector<f64>,
    pub status: String,
}

/// Conic solver contract: affine symmetric blocks with definiteness
/// senses and an optional linear objective over the same variables.
/// One backend instance serves one solve at a time.
pub trait SolverBackend {
    /// Human-readable descriptor of the backend and its capabilities.
    fn capability(&self) -> String;

    /// Finds an assignment satisfying every block, with strict senses
    /// shifted by `eps_strict`, minimizing `rho` when the objective
    /// asks for it.
    fn solve_blocks(
        &self,
        layout: &DecisionLayout,
        blocks: &[LmiBlock],
        objective: Objective,
        eps_strict: f64,
    ) -> Result<BackendSolution>;
}

/// Solves the design problem and re-verifies the returned certificate
/// with the independent eigenvalue checker at threshold
/// `eps_strict / 2`; a solver answer the verifier rejects surfaces as
/// [`Error::Tolerance`], never as a result.
pub fn solve(problem: &SynthesisProblem, backend: &dyn SolverBackend) -> Result<SynthesisResult> {
    let (layout, blocks) = problem.assemble()?;
    let eps_strict = strictness_epsilon(&problem.polytope);
    let sol = backend.solve_blocks(&layout, &blocks, problem.objective, eps_strict)?;
    if sol.assignment.len() != layout.len() {
        return Err(Error::Solver(format!(
            "backend returned {} variables, expected {}",
            sol.assignment.len(),
            layout.len()
        )));
    }
    if sol.assignment.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("backend returned non-finite values".into()));
    }

    let x = layout.extract_x(&sol.assignment);
    let m = layout.extract_m(&sol.assignment);
    let l = layout.extract_l(&sol.assignment);
    let rho = layout.extract_rho(&sol.assignment);
    let k = recover_gain(&x, &l)?;
    let p = x.inverse_pd()?;
    let q = SymMatrix::symmetrize(&(p.as_matrix() * m.as_matrix() * p.as_matrix()));

    let result = SynthesisResult {
        x,
        m,
        l,
        k,
        p,
        q,
        rho,
        mu: problem.mu,
        varphi: problem.varphi,
        eps_strict,
        solver_status: sol.status,
    };

    let report = verifier::check_certificate(
        &result,
        &problem.polytope,
        problem.mu,
        Some(eps_strict / 2.0),
    )?;
    if !report.pass {
        return Err(Error::Tolerance(format!(
            "solver assignment rejected: {}",
            report.summary()
        )));
    }
    Ok(result)
}

/// Recovers `K = L X^-1` through a Cholesky solve of `X K' = L'`.
pub fn recover_gain(x: &SymMatrix, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.dim();
    if l.nrows() != n || l.ncols() != n {
        return Err(Error::Domain(format!(
            "L is {}x{}, expected {n}x{n}",
            l.nrows(),
            l.ncols()
        )));
    }
    let kt = x.solve_pd(&l.transpose())?;
    Ok(kt.transpose())
}

/// Reaching-time certificate at a concrete start: returns
/// `V0 = g0' P g0 / |g0|` and the bound `V0 / lambda_min(Q)`.
pub fn reaching_time_bound(
    p: &SymMatrix,
    q: &SymMatrix,
    g0: &DVector<f64>,
) -> Result<(f64, f64)> {
    let n = p.dim();
    if q.dim() != n || g0.len() != n {
        return Err(Error::Domain(format!(
            "dimension mismatch: P is {n}x{n}, Q is {}x{}, g0 has {}",
            q.dim(),
            q.dim(),
            g0.len()
        )));
    }
    let norm = g0.norm();
    if norm == 0.0 {
        return Err(Error::Domain("g0 must be nonzero".into()));
    }
    if !p.is_positive_definite() || !q.is_positive_definite() {
        return Err(Error::Domain("P and Q must be positive definite".into()));
    }
    let v0 = (p.as_matrix() * g0).dot(g0) / norm;
    Ok((v0, v0 / q.lambda_min()))
}

/// Golden-section search over `ln mu` minimizing the optimal `rho` of
/// the reaching-time program. Infeasible probes count as infinite.
/// Returns the best `(mu, result)` seen; errors with
/// [`Error::Infeasible`] when no probe is feasible.
pub fn tune_mu(
    poly: &HessianPolytope,
    varphi: f64,
    mu_range: (f64, f64),
    iterations: usize,
    backend: &dyn SolverBackend,
) -> Result<(f64, SynthesisResult)> {
    let (lo, hi) = mu_range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Domain(format!(
            "mu range must satisfy 0 < lo < hi, got ({lo}, {hi})"
        )));
    }
    let mut best: Option<(f64, SynthesisResult)> = None;
    let eval = |ln_mu: f64, best: &mut Option<(f64, SynthesisResult)>| -> f64 {
        let mu = ln_mu.exp();
        let problem = match SynthesisProblem::new(poly.clone(), mu, varphi, Objective::MinimizeRho)
        {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        match solve(&problem, backend) {
            Ok(result) => {
                let rho = result.rho.unwrap_or(f64::INFINITY);
                if best.as_ref().is_none_or(|(_, b)| rho < b.rho.unwrap_or(f64::INFINITY)) {
                    *best = Some((mu, result));
                }
                rho
            }
            Err(_) => f64::INFINITY,
        }
    };

    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut a = lo.ln();
    let mut b = hi.ln();
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c, &mut best);
    let mut fd = eval(d, &mut best);
    for _ in 0..iterations {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d, &mut best);
        }
    }
    best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no feasible mu in [{lo}, {hi}] for the reaching-time program"
        ))
    })
}

pub mod clarabel_backend {
    //! [`SolverBackend`] implementation on the Clarabel interior-point
    //! solver. Each block becomes one scaled-triangle PSD cone; strict
    //! senses are shifted by `eps_strict` before being handed over.

    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{
        DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
    };
    use nalgebra::{DMatrix, DVector};

    use super::{BackendSolution, BlockSense, DecisionLayout, LmiBlock, Objective, SolverBackend};
    use crate::{Error, Result};

    #[derive(Debug, Clone, Copy, Default)]
    pub struct ClarabelBackend;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    /// Scaled upper-triangle (column-major) vectorization; off-diagonal
    /// entries carry sqrt(2) so inner products are preserved.
    fn svec(m: &DMatrix<f64>) -> Vec<f64> {
        let n = m.nrows();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for col in 0..n {
            for row in 0..=col {
                if row == col {
                    out.push(m[(row, col)]);
                } else {
                    out.push(SQRT2 * 0.5 * (m[(row, col)] + m[(col, row)]));
                }
            }
        }
        out
    }

    impl SolverBackend for ClarabelBackend {
        fn capability(&self) -> String {
            "clarabel interior-point solver; PSD triangle cones, linear objective".into()
        }

        fn solve_blocks(
            &self,
            layout: &DecisionLayout,
            blocks: &[LmiBlock],
            objective: Objective,
            eps_strict: f64,
        ) -> Result<BackendSolution> {
            let nvars = layout.len();
            let total_rows: usize = blocks.iter().map(|b| b.dim * (b.dim + 1) / 2).sum();

            // Row block data: for sense >= (shifted), s = svec(B(z) - shift I)
            // must be PSD, i.e. b_vec = svec(base - shift I), A[:, k] = -svec(coeff_k).
            // For sense <= -eps I, negate the block first.
            let mut b_vec = Vec::with_capacity(total_rows);
            let mut cones = Vec::with_capacity(blocks.len());
            for block in blocks {
                let (sign, shift) = match block.sense {
                    BlockSense::PositiveDefinite => (1.0, eps_strict),
                    BlockSense::PositiveSemidefinite => (1.0, 0.0),
                    BlockSense::NegativeDefinite => (-1.0, eps_strict),
                };
                let mut shifted = &block.base * sign;
                for i in 0..block.dim {
                    shifted[(i, i)] -= shift;
                }
                b_vec.extend(svec(&shifted));
                cones.push(SupportedConeT::PSDTriangleConeT(block.dim));
            }

            // A is assembled column by column (CSC order).
            let mut colptr = Vec::with_capacity(nvars + 1);
            let mut rowval = Vec::new();
            let mut nzval = Vec::new();
            colptr.push(0);
            for k in 0..nvars {
                let mut row_offset = 0;
                for block in blocks {
                    let sign = match block.sense {
                        BlockSense::NegativeDefinite => -1.0,
                        _ => 1.0,
                    };
                    let coeff = &block.coeffs[k];
                    if coeff.iter().any(|v| *v != 0.0) {
                        for (r, v) in svec(coeff).into_iter().enumerate() {
                            if v != 0.0 {
                                rowval.push(row_offset + r);
                                nzval.push(-sign * v);
                            }
                        }
                    }
                    row_offset += block.dim * (block.dim + 1) / 2;
                }
                colptr.push(rowval.len());
            }
            let a = CscMatrix::new(total_rows, nvars, colptr, rowval, nzval);

            let p = CscMatrix::zeros((nvars, nvars));
            let mut q = vec![0.0; nvars];
            if objective == Objective::MinimizeRho {
                match layout.rho_index() {
                    Some(i) => q[i] = 1.0,
                    None => {
                        return Err(Error::Domain(
                            "minimize-rho objective needs a layout with rho".into(),
                        ));
                    }
                }
            }

            let settings = DefaultSettingsBuilder::default()
                .verbose(false)
                .build()
                .map_err(|e| Error::Solver(format!("settings rejected: {e}")))?;
            let mut solver = DefaultSolver::new(&p, &q, &a, &b_vec, &cones, settings)
                .map_err(|e| Error::Solver(format!("problem rejected at setup: {e:?}")))?;
            solver.solve();

            let status = solver.solution.status;
            let status_text = format!("{status:?}");
            match status {
                SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(BackendSolution {
                    assignment: DVector::from_vec(solver.solution.x.clone()),
                    status: status_text,
                }),
                SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                    Err(Error::Infeasible(format!(
                        "backend reported {status_text}"
                    )))
                }
                _ => Err(Error::Solver(format!(
                    "backend terminated with {status_text}"
                ))),
            }
        }
    }
}

pub use clarabel_backend::ClarabelBackend;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h0() -> SymMatrix {
        SymMatrix::from_rows(&[vec![100.0, 30.0], vec![30.0, 20.0]]).unwrap()
    }

    fn iv_polytope() -> HessianPolytope {
        HessianPolytope::scaled(&h0(), 0.1).unwrap()
    }

    fn iv_problem() -> SynthesisProblem {
        SynthesisProblem::new(iv_polytope(), 32.9034, 0.4, Objective::MinimizeRho).unwrap()
    }

    #[test]
    fn feasibility_block_shapes() {
        let blocks = assemble_feasibility(&iv_polytope(), 32.9034).unwrap();
        assert_eq!(blocks.len(), 4);
        assert_eq!(blocks[0].label, "X_pd");
        assert_eq!(blocks[0].dim, 2);
        assert_eq!(blocks[0].sense, BlockSense::PositiveDefinite);
        assert_eq!(blocks[1].label, "M_pd");
        for b in &blocks[2..] {
            assert_eq!(b.dim, 4);
            assert_eq!(b.sense, BlockSense::NegativeDefinite);
        }
    }

    #[test]
    fn min_rho_adds_two_blocks() {
        let blocks = assemble_min_rho(&iv_polytope(), 32.9034, 0.4).unwrap();
        assert_eq!(blocks.len(), 6);
        assert_eq!(blocks[4].label, "varphi_coupling");
        assert_eq!(blocks[5].label, "rho_coupling");
        for b in &blocks[4..] {
            assert_eq!(b.sense, BlockSense::PositiveSemidefinite);
        }
    }

    #[test]
    fn vertex_block_plug_in_evaluation() {
        // X = I, M = I, L = -H^-1 and mu = 8: upper-left becomes
        // -2I + 2I + I = I and the block is indefinite, so this
        // assignment is infeasible; assembly itself stays agnostic.
        let h = SymMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let poly = HessianPolytope::new(vec![h.clone()]).unwrap();
        let layout = DecisionLayout::new(2, false);
        let blocks = assemble_feasibility(&poly, 8.0).unwrap();
        let mut z = DVector::zeros(layout.len());
        for i in 0..2 {
            z[layout.x_index(i, i)] = 1.0;
            z[layout.m_index(i, i)] = 1.0;
        }
        let h_inv = h.inverse_pd().unwrap();
        for c in 0..2 {
            for r in 0..2 {
                z[layout.l_index(r, c)] = -h_inv.as_matrix()[(r, c)];
            }
        }
        let b = blocks[2].evaluate(&z).unwrap();
        let mut expect = DMatrix::zeros(4, 4);
        for i in 0..2 {
            expect[(i, i)] = 1.0;
            expect[(i, 2 + i)] = -1.0;
            expect[(2 + i, i)] = -1.0;
            expect[(2 + i, 2 + i)] = -8.0;
        }
        assert_relative_eq!(b, expect, epsilon = 1e-12);
        let lmax = SymMatrix::symmetrize(&b).lambda_max();
        assert!(lmax > 0.0, "plug-in block should not be negative definite");
    }

    #[test]
    fn blocks_evaluate_symmetric_at_random_assignments() {
        let problem = iv_problem();
        let (layout, blocks) = problem.assemble().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let z = DVector::from_fn(layout.len(), |_, _| rng.random::<f64>() * 4.0 - 2.0);
            for b in &blocks {
                let m = b.evaluate(&z).unwrap();
                assert!((&m - m.transpose()).norm() < 1e-12, "block {}", b.label);
            }
        }
    }

    #[test]
    fn coupling_blocks_hit_psd_boundary_cases() {
        let poly = iv_polytope();
        let blocks = assemble_min_rho(&poly, 32.9034, 1.0).unwrap();
        let layout = DecisionLayout::new(2, true);
        let mut z = DVector::zeros(layout.len());
        for i in 0..2 {
            z[layout.x_index(i, i)] = 1.0;
            z[layout.m_index(i, i)] = 1.0;
        }
        z[layout.rho_index().unwrap()] = 1.0;
        // [[I, I], [I, I]] is PSD with lambda_min = 0 for both couplings.
        for idx in [4, 5] {
            let b = blocks[idx].evaluate(&z).unwrap();
            let eigs = SymMatrix::symmetrize(&b).eigenvalues();
            assert!(eigs.iter().all(|e| *e >= -1e-12), "{}: {eigs:?}", blocks[idx].label);
            assert!(eigs.iter().any(|e| e.abs() < 1e-12));
        }
    }

    #[test]
    fn solve_iv_problem_and_check_gain() {
        let problem = iv_problem();
        let result = solve(&problem, &ClarabelBackend).unwrap();
        assert!(result.rho.is_some());
        assert!(result.rho.unwrap() > 0.0);
        // Gain invariant K = L X^-1 to 1e-9 relative.
        let residual = (&result.k * result.x.as_matrix() - &result.l).norm();
        assert!(residual <= 1e-9 * result.l.norm().max(1.0));
        // P = X^-1, Q = P M P.
        let eye = DMatrix::identity(2, 2);
        assert!((result.p.as_matrix() * result.x.as_matrix() - &eye).norm() < 1e-9);
        let q_expect = result.p.as_matrix() * result.m.as_matrix() * result.p.as_matrix();
        assert!((result.q.as_matrix() - &q_expect).norm() <= 1e-9 * q_expect.norm());
        // The closed-loop symmetric part is negative definite at both vertices.
        for h in problem.polytope.vertices() {
            let hk = h.as_matrix() * &result.k;
            let sym = SymMatrix::symmetrize(&(&hk + hk.transpose()));
            assert!(sym.lambda_max() < 0.0);
        }
    }

    #[test]
    fn wide_vertex_spread_is_infeasible() {
        // Schur complement of each vertex block against the -mu I corner:
        // H L + L' H + (mu/4) I + M + (1/mu) L' H^2 L < 0. For any unit v
        // with a = v' (H L + L' H) v and b = v' L' H^2 L v, Cauchy-Schwarz
        // gives a^2 <= 4 b, so a necessary condition is
        // a^2 + 4 mu a + mu^2 < 0, i.e. a in mu (-2 - sqrt 3, -2 + sqrt 3).
        // Vertices c1 H and c2 H scale a linearly, so a shared L exists
        // only if c2 / c1 < (2 + sqrt 3)^2 < 14. A two-vertex polytope
        // {I, 20 I} violates that for every mu.
        let lo = SymMatrix::identity(2);
        let hi = SymMatrix::symmetrize(&(DMatrix::identity(2, 2) * 20.0));
        let poly = HessianPolytope::new(vec![lo, hi]).unwrap();
        let problem = SynthesisProblem::new(poly, 8.0, 0.4, Objective::Feasibility).unwrap();
        match solve(&problem, &ClarabelBackend) {
            Err(Error::Infeasible(_)) => {}
            other => panic!("expected infeasibility, got {other:?}"),
        }

        // Blowing the design family up to delta_bar 0.99 puts scalings
        // 0.01 and 1.99 of the same nominal Hessian in the vertex set,
        // a ratio of 199, so the same argument applies.
        let wide = HessianPolytope::scaled(&h0(), 0.99).unwrap();
        let problem = SynthesisProblem::new(wide, 32.9034, 0.4, Objective::MinimizeRho).unwrap();
        match solve(&problem, &ClarabelBackend) {
            Err(Error::Infeasible(_)) => {}
            other => panic!("expected infeasibility, got {other:?}"),
        }

        // A single vertex decouples channel by channel, so spread inside
        // one matrix is harmless: diag(1, 20) alone synthesizes fine.
        let spread = SymMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 20.0]]).unwrap();
        let poly = HessianPolytope::new(vec![spread]).unwrap();
        let problem = SynthesisProblem::new(poly, 8.0, 0.4, Objective::Feasibility).unwrap();
        let result = solve(&problem, &ClarabelBackend).unwrap();
        let hk = spread_matrix_times(&result.k);
        assert!(SymMatrix::symmetrize(&(&hk + hk.transpose())).lambda_max() < 0.0);
    }

    fn spread_matrix_times(k: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 20.0]) * k
    }

    #[test]
    fn recover_gain_examples() {
        let x = SymMatrix::identity(2);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(recover_gain(&x, &l).unwrap(), l, epsilon = 1e-14);
        let zero = DMatrix::zeros(2, 2);
        assert_eq!(recover_gain(&x, &zero).unwrap(), zero);
        let x2 = SymMatrix::symmetrize(&(DMatrix::identity(2, 2) * 2.0));
        let k = recover_gain(&x2, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(k, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-14);
        let singular = SymMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            recover_gain(&singular, &l),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn gain_is_invariant_under_certificate_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let raw = DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let x = SymMatrix::symmetrize(&(&raw * raw.transpose() + DMatrix::identity(2, 2)));
            let l = DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let c = rng.random::<f64>() * 10.0 + 0.1;
            let xc = SymMatrix::symmetrize(&(x.as_matrix() * c));
            let k1 = recover_gain(&x, &l).unwrap();
            let k2 = recover_gain(&xc, &(&l * c)).unwrap();
            assert_relative_eq!(k1, k2, epsilon = 1e-9);
        }
    }

    #[test]
    fn reaching_time_bound_examples() {
        let p = SymMatrix::identity(2);
        let q = SymMatrix::identity(2);
        let g0 = DVector::from_row_slice(&[3.0, 4.0]);
        let (v0, bound) = reaching_time_bound(&p, &q, &g0).unwrap();
        assert_relative_eq!(v0, 5.0, epsilon = 1e-12);
        assert_relative_eq!(bound, 5.0, epsilon = 1e-12);

        let p2 = SymMatrix::symmetrize(&(DMatrix::identity(2, 2) * 2.0));
        let q2 = SymMatrix::symmetrize(&(DMatrix::identity(2, 2) * 0.5));
        let unit = DVector::from_row_slice(&[1.0, 0.0]);
        let (v0, bound) = reaching_time_bound(&p2, &q2, &unit).unwrap();
        assert_relative_eq!(v0, 2.0, epsilon = 1e-12);
        assert_relative_eq!(bound, 4.0, epsilon = 1e-12);

        assert!(matches!(
            reaching_time_bound(&p, &q, &DVector::zeros(2)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn rho_grows_with_polytope_size() {
        let mut last = 0.0_f64;
        for delta in [0.05, 0.1, 0.2] {
            let poly = HessianPolytope::scaled(&h0(), delta).unwrap();
            let problem =
                SynthesisProblem::new(poly, 32.9034, 0.4, Objective::MinimizeRho).unwrap();
            let rho = solve(&problem, &ClarabelBackend).unwrap().rho.unwrap();
            assert!(
                rho >= last - 1e-6 * last.abs(),
                "rho decreased from {last} to {rho} at delta_bar = {delta}"
            );
            last = rho;
        }
    }

    #[test]
    fn tune_mu_beats_fixed_choice() {
        let poly = iv_polytope();
        let fixed = solve(&iv_problem(), &ClarabelBackend).unwrap().rho.unwrap();
        let (mu, result) = tune_mu(&poly, 0.4, (1.0, 500.0), 24, &ClarabelBackend).unwrap();
        assert!(mu > 0.0);
        let tuned = result.rho.unwrap();
        assert!(
            tuned <= fixed * 1.001,
            "tuned rho {tuned} worse than fixed-mu rho {fixed}"
        );
    }
}
