//! Polytopic Hessian uncertainty sets.
//!
//! The unknown map curvature `H` is only known to live in the convex
//! hull of finitely many symmetric positive definite vertices. Synthesis
//! imposes its LMIs at the vertices; everything downstream evaluates
//! interior points as convex combinations.

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::SymMatrix;
use crate::{Error, Result};

/// Tolerance on `sum(alpha) - 1` for simplex membership.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A point of the unit simplex: nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    weights: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("simplex point needs at least one weight".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain(format!(
                "simplex weights must be finite and nonnegative, got {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!(
                "simplex weights sum to {sum}, expected 1 within {SIMPLEX_TOL:.0e}"
            )));
        }
        Ok(SimplexPoint { weights })
    }

    /// The i-th vertex of the standard simplex with `n` coordinates.
    pub fn vertex(i: usize, n: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        SimplexPoint { weights: w }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Convex hull of symmetric positive definite vertex matrices, all of
/// one dimension.
#[derive(Debug, Clone)]
pub struct HessianPolytope {
    dim: usize,
    vertices: Vec<SymMatrix>,
}

impl HessianPolytope {
    /// Builds a polytope from explicit vertices. Every vertex must pass
    /// the scale-invariant positive definiteness check.
    pub fn new(vertices: Vec<SymMatrix>) -> Result<Self> {
        let first = vertices
            .first()
            .ok_or_else(|| Error::Domain("polytope needs at least one vertex".into()))?;
        let dim = first.dim();
        for (i, v) in vertices.iter().enumerate() {
            if v.dim() != dim {
                return Err(Error::Domain(format!(
                    "vertex {i} is {}x{} but vertex 0 is {dim}x{dim}",
                    v.dim(),
                    v.dim()
                )));
            }
            if !v.is_positive_definite() {
                return Err(Error::Domain(format!(
                    "vertex {i} is not positive definite (lambda_min = {:.3e})",
                    v.lambda_min()
                )));
            }
        }
        Ok(HessianPolytope { dim, vertices })
    }

    /// The two-vertex interval polytope `{(1 - delta_bar) H0, (1 + delta_bar) H0}`
    /// describing a relative curvature uncertainty of `delta_bar`.
    pub fn scaled(h0: &SymMatrix, delta_bar: f64) -> Result<Self> {
        if !(delta_bar > 0.0 && delta_bar < 1.0) {
            return Err(Error::Domain(format!(
                "delta_bar must lie in (0, 1), got {delta_bar}"
            )));
        }
        if !h0.is_positive_definite() {
            return Err(Error::Domain(
                "nominal Hessian is not positive definite".into(),
            ));
        }
        let lo = SymMatrix::symmetrize(&(h0.as_matrix() * (1.0 - delta_bar)));
        let hi = SymMatrix::symmetrize(&(h0.as_matrix() * (1.0 + delta_bar)));
        HessianPolytope::new(vec![lo, hi])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[SymMatrix] {
        &self.vertices
    }

    /// Convex combination `sum_i alpha_i H_i`.
    pub fn evaluate(&self, alpha: &SimplexPoint) -> Result<SymMatrix> {
        if alpha.len() != self.vertices.len() {
            return Err(Error::Domain(format!(
                "simplex point has {} weights for {} vertices",
                alpha.len(),
                self.vertices.len()
            )));
        }
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for (w, v) in alpha.weights().iter().zip(&self.vertices) {
            acc += v.as_matrix() * *w;
        }
        Ok(SymMatrix::symmetrize(&acc))
    }

    /// Uniform sample from the simplex over the vertices: normalized
    /// i.i.d. exponentials (the spacings construction), seeded so the
    /// draw is reproducible.
    pub fn sample_uniform(&self, seed: u64) -> SimplexPoint {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.vertices.len();
        loop {
            let raw: Vec<f64> = (0..n)
                .map(|_| {
                    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
                    -u.ln()
                })
                .collect();
            let sum: f64 = raw.iter().sum();
            if sum <= 0.0 || !sum.is_finite() {
                continue;
            }
            let mut w: Vec<f64> = raw.iter().map(|e| e / sum).collect();
            // Compensate rounding so the invariant holds exactly.
            let correction: f64 = 1.0 - w.iter().sum::<f64>();
            w[n - 1] += correction;
            if w[n - 1] >= 0.0 {
                return SimplexPoint { weights: w };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h0() -> SymMatrix {
        SymMatrix::from_rows(&[vec![100.0, 30.0], vec![30.0, 20.0]]).unwrap()
    }

    #[test]
    fn scaled_polytope_vertices() {
        let p = HessianPolytope::scaled(&h0(), 0.1).unwrap();
        assert_eq!(p.num_vertices(), 2);
        let lo = p.vertices()[0].as_matrix();
        let hi = p.vertices()[1].as_matrix();
        let expect_lo = [[90.0, 27.0], [27.0, 18.0]];
        let expect_hi = [[110.0, 33.0], [33.0, 22.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((lo[(i, j)] - expect_lo[i][j]).abs() < 1e-12 * 110.0);
                assert!((hi[(i, j)] - expect_hi[i][j]).abs() < 1e-12 * 110.0);
            }
        }
    }

    #[test]
    fn midpoint_recovers_nominal() {
        let p = HessianPolytope::scaled(&h0(), 0.1).unwrap();
        let alpha = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        let mid = p.evaluate(&alpha).unwrap();
        assert!((mid.as_matrix() - h0().as_matrix()).norm() < 1e-12);
    }

    #[test]
    fn vertex_weight_recovers_vertex() {
        let p = HessianPolytope::scaled(&h0(), 0.1).unwrap();
        for i in 0..2 {
            let v = p.evaluate(&SimplexPoint::vertex(i, 2)).unwrap();
            assert!((v.as_matrix() - p.vertices()[i].as_matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_semidefinite_nominal() {
        let psd = SymMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(HessianPolytope::scaled(&psd, 0.1).is_err());
    }

    #[test]
    fn rejects_delta_bar_out_of_range() {
        assert!(HessianPolytope::scaled(&h0(), 1.0).is_err());
        assert!(HessianPolytope::scaled(&h0(), 0.0).is_err());
        assert!(HessianPolytope::scaled(&h0(), -0.2).is_err());
    }

    #[test]
    fn evaluate_rejects_length_mismatch() {
        let p = HessianPolytope::scaled(&h0(), 0.1).unwrap();
        let alpha = SimplexPoint::new(vec![1.0]).unwrap();
        assert!(matches!(p.evaluate(&alpha), Err(Error::Domain(_))));
    }

    #[test]
    fn sample_uniform_is_deterministic_and_on_simplex() {
        let p = HessianPolytope::scaled(&h0(), 0.1).unwrap();
        let a = p.sample_uniform(42);
        let b = p.sample_uniform(42);
        assert_eq!(a.weights(), b.weights());
        assert!(a.weights().iter().all(|w| *w >= 0.0));
        assert!((a.weights().iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
        let c = p.sample_uniform(43);
        assert_ne!(a.weights(), c.weights());
    }

    #[test]
    fn simplex_point_validation() {
        assert!(SimplexPoint::new(vec![0.5, 0.5]).is_ok());
        assert!(SimplexPoint::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexPoint::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexPoint::new(vec![]).is_err());
    }
}
