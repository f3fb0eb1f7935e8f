//! Dense symmetric matrix helpers shared by every module.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative asymmetry accepted silently at construction; anything above
/// is an error rather than something to paper over.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Scale-invariant positive definiteness threshold: lambda_min must
/// exceed `PD_REL_TOL * lambda_max`.
pub const PD_REL_TOL: f64 = 1e-10;

/// A square matrix that is symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Accepts `m` if its relative asymmetry `|A - A^T|_F / max(1, |A|_F)`
    /// is below [`SYMMETRY_TOL`], storing the symmetrized `(A + A^T)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Domain(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("matrix has non-finite entries".into()));
        }
        let asym = (&m - m.transpose()).norm() / m.norm().max(1.0);
        if asym > SYMMETRY_TOL {
            return Err(Error::Domain(format!(
                "matrix asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:.0e}"
            )));
        }
        Ok(Self::symmetrize(&m))
    }

    /// Symmetrizes unconditionally. Callers that need the asymmetry guard
    /// go through [`SymMatrix::new`] or [`symmetrize_checked`].
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        SymMatrix((m + m.transpose()) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Domain("matrix rows have unequal lengths".into()));
        }
        SymMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .0
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues().last().expect("nonempty spectrum")
    }

    /// Scale-invariant check `lambda_min > PD_REL_TOL * lambda_max`.
    pub fn is_positive_definite(&self) -> bool {
        let ev = self.eigenvalues();
        let (min, max) = (ev[0], ev[ev.len() - 1]);
        min > PD_REL_TOL * max && min > 0.0
    }

    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }

    /// Inverse through a Cholesky factorization, never an explicit
    /// adjugate. Fails when the matrix is not positive definite.
    pub fn inverse_pd(&self) -> Result<SymMatrix> {
        let chol = self
            .0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("Cholesky failed: matrix not positive definite".into()))?;
        Ok(SymMatrix::symmetrize(&chol.inverse()))
    }

    /// Solves `self * X = rhs` through Cholesky.
    pub fn solve_pd(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let chol = self
            .0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("Cholesky failed: matrix not positive definite".into()))?;
        Ok(chol.solve(rhs))
    }
}

/// Symmetrizes `m` after checking the relative asymmetry against `rel_tol`.
/// Used by the verifier with a looser guard than the constructor.
pub fn symmetrize_checked(m: &DMatrix<f64>, rel_tol: f64) -> Result<SymMatrix> {
    let asym = (m - m.transpose()).norm() / m.norm().max(1.0);
    if asym > rel_tol {
        return Err(Error::Numerical(format!(
            "asymmetry {asym:.3e} above guard {rel_tol:.0e}; refusing to symmetrize"
        )));
    }
    Ok(SymMatrix::symmetrize(m))
}

/// One standard normal draw via Box-Muller; keeps the RNG dependency
/// down to uniform sampling.
pub fn standard_normal<R: rand::RngExt>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform draw from the unit sphere in `R^n`.
pub fn unit_sphere_sample<R: rand::RngExt>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| standard_normal(rng));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 1.0]);
        assert!(matches!(SymMatrix::new(m), Err(Error::Domain(_))));
    }

    #[test]
    fn symmetrizes_roundoff() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0 + 1e-15, 2.0, 1.0]);
        let s = SymMatrix::new(m).unwrap();
        assert_eq!(s.as_matrix()[(0, 1)], s.as_matrix()[(1, 0)]);
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        // [[100, 30], [30, 20]] has eigenvalues 10 and 110.
        let h = SymMatrix::from_rows(&[vec![100.0, 30.0], vec![30.0, 20.0]]).unwrap();
        let ev = h.eigenvalues();
        assert!((ev[0] - 10.0).abs() < 1e-9);
        assert!((ev[1] - 110.0).abs() < 1e-9);
        assert!(h.is_positive_definite());
    }

    #[test]
    fn pd_check_is_scale_invariant() {
        let tiny = SymMatrix::from_rows(&[vec![1e-30, 0.0], vec![0.0, 2e-30]]).unwrap();
        assert!(tiny.is_positive_definite());
        let indef = SymMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1e-8]]).unwrap();
        assert!(!indef.is_positive_definite());
    }

    #[test]
    fn inverse_pd_matches_identity() {
        let h = SymMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let inv = h.inverse_pd().unwrap();
        let prod = h.as_matrix() * inv.as_matrix();
        assert!((prod - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn sphere_samples_are_unit() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let v = unit_sphere_sample(&mut rng, 3);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }
}
