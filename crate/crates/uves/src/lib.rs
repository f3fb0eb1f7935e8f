//! Unit-vector extremum seeking: LMI gain synthesis, certificate
//! verification, and closed-loop simulation.
//!
//! The toolkit is organized around three independent routes to the same
//! controller:
//!
//! * [`synthesis`] poses the vertex LMIs of the polytopic design problem
//!   and solves them through a conic solver backend, recovering the
//!   unit-vector gain `K = L X^-1` together with the Lyapunov pair
//!   `(P, Q)` and the reaching-time budget `rho`.
//! * [`verifier`] re-derives every certificate from scratch with dense
//!   symmetric eigenvalue computations. It never talks to the solver, so
//!   a synthesis bug and a verification bug have to agree before a bad
//!   gain slips through.
//! * [`simulator`] integrates both the average system (finite-time
//!   reaching) and the full dithered loop, and measures how fast the two
//!   drift apart as the dither frequency grows.
//!
//! Supporting modules: [`polytope`] (Hessian uncertainty sets),
//! [`dither`] (perturbation and demodulation signals), [`config`] and
//! [`pipeline`] (JSON experiment configs and the command front ends used
//! by the thin CLI).
//!
//! Start with the runnable examples:
//!
//! ```text
//! cargo run --release --example synthesize_gain
//! cargo run --release --example verify_certificate
//! cargo run --release --example average_reaching
//! cargo run --release --example full_loop
//! cargo run --release --example dither_signals
//! cargo run --release --example averaging_sweep
//! cargo run --release --example tune_mu
//! ```

pub mod config;
pub mod dither;
pub mod linalg;
pub mod pipeline;
pub mod polytope;
pub mod simulator;
pub mod synthesis;
pub mod verifier;

use thiserror::Error;

/// Crate-wide error type. The CLI maps these onto process exit codes,
/// so the variants mirror failure classes rather than call sites.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition (dimensions, signs,
    /// simplex membership, step-size limits, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// A computation produced non-finite values or an ill-conditioned
    /// intermediate (failed factorization, asymmetry above guard, ...).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// The conic solver backend gave up without a verdict.
    #[error("solver failure: {0}")]
    Solver(String),
    /// The solver proved the synthesis problem infeasible.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// The solver claimed success but the independent verifier rejected
    /// the assignment.
    #[error("certificate rejected by verifier: {0}")]
    Tolerance(String),
    /// Config file missing, malformed, or self-inconsistent.
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
