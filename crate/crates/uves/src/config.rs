//! Experiment configuration: the JSON schema the command line consumes
//! and the builders that turn it into domain objects.
//!
//! A config file is a single JSON document. Matrices are row-major
//! nested arrays, angles and frequencies are in rad and rad/s, times in
//! seconds. A full example:
//!
//! ```json
//! {
//!   "polytope": { "scaled": { "h0": [[100.0, 30.0], [30.0, 20.0]], "delta_bar": 0.1 } },
//!   "mu": 32.9034,
//!   "varphi": 0.4,
//!   "objective": "minimize_rho",
//!   "dither": { "amplitudes": [0.1, 0.1], "multipliers": [1, 7], "base_frequency": 10.0 },
//!   "map": {
//!     "qstar": 10.0,
//!     "thetastar": [2.0, 4.0],
//!     "hessian": { "sampled": { "seed": 7 } }
//!   },
//!   "simulation": {
//!     "theta0": [2.5, 6.0],
//!     "t_end": 10.0,
//!     "dt": 0.0004,
//!     "uv_epsilon": 0.5,
//!     "record_stride": 20
//!   }
//! }
//! ```
//!
//! Unknown fields are rejected so that typos surface as config errors
//! instead of silently falling back to defaults.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dither::DitherConfig;
use crate::linalg::SymMatrix;
use crate::polytope::HessianPolytope;
use crate::simulator::{GradientEstimator, MapSpec, SimConfig};
use crate::synthesis::{Objective, SynthesisProblem};
use crate::{Error, Result};

/// Converts a row-major nested array into a dense matrix. Rejects
/// ragged and empty input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Config("matrix has no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config("matrix rows are ragged or empty".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Row-major nested array view of a matrix, for reports.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Uncertainty set selection for synthesis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PolytopeSpec {
    /// Nominal Hessian `h0` blown up entrywise by `1 +- delta_bar` sign
    /// patterns.
    Scaled { h0: Vec<Vec<f64>>, delta_bar: f64 },
    /// Explicit list of symmetric positive definite vertices.
    Vertices { vertices: Vec<Vec<Vec<f64>>> },
}

impl PolytopeSpec {
    pub fn build(&self) -> Result<HessianPolytope> {
        match self {
            PolytopeSpec::Scaled { h0, delta_bar } => {
                let h0 = SymMatrix::new(matrix_from_rows(h0)?)?;
                HessianPolytope::scaled(&h0, *delta_bar)
            }
            PolytopeSpec::Vertices { vertices } => {
                let vs = vertices
                    .iter()
                    .map(|rows| SymMatrix::new(matrix_from_rows(rows)?))
                    .collect::<Result<Vec<_>>>()?;
                HessianPolytope::new(vs)
            }
        }
    }
}

/// How the simulated plant picks its true Hessian.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HessianSelection {
    /// Fixed matrix, row-major.
    Explicit { matrix: Vec<Vec<f64>> },
    /// Uniform vertex-weight sample from the synthesis polytope.
    Sampled { seed: u64 },
}

/// The quadratic map under test: `qstar` is the extremum value,
/// `thetastar` its location.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSection {
    pub qstar: f64,
    pub thetastar: Vec<f64>,
    pub hessian: HessianSelection,
}

/// Dither tones: amplitudes `a_i`, integer frequency multipliers, and
/// the base frequency in rad/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DitherSection {
    pub amplitudes: Vec<f64>,
    pub multipliers: Vec<u32>,
    pub base_frequency: f64,
}

impl DitherSection {
    pub fn build(&self) -> Result<DitherConfig> {
        DitherConfig::new(self.amplitudes.clone(), self.multipliers.clone(), self.base_frequency)
    }
}

fn default_stride() -> usize {
    1
}

/// Integration horizon and resolution. `t_end` and `dt` are in seconds;
/// `uv_epsilon` is the unit-vector regularization radius; `eps_stop`
/// (average mode) defaults to `10 * uv_epsilon`; `gain`, when present,
/// bypasses synthesis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub theta0: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub uv_epsilon: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub estimator: GradientEstimator,
    #[serde(default)]
    pub eps_stop: Option<f64>,
    #[serde(default)]
    pub gain: Option<Vec<Vec<f64>>>,
}

/// Top-level experiment description shared by every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub polytope: PolytopeSpec,
    /// Reaching-rate parameter of the vertex LMIs.
    pub mu: f64,
    /// Upper bound on the Lyapunov matrix `P`.
    pub varphi: f64,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    pub dither: DitherSection,
    pub map: MapSection,
    pub simulation: SimulationSection,
    /// Where reports and traces go; the CLI `--out` flag overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_objective() -> Objective {
    Objective::MinimizeRho
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))
    }

    pub fn polytope(&self) -> Result<HessianPolytope> {
        self.polytope.build()
    }

    pub fn synthesis_problem(&self) -> Result<SynthesisProblem> {
        SynthesisProblem::new(self.polytope()?, self.mu, self.varphi, self.objective)
    }

    /// Resolves the plant Hessian against the given polytope: either
    /// the explicit matrix or a seeded uniform sample.
    pub fn hessian(&self, poly: &HessianPolytope) -> Result<SymMatrix> {
        match &self.map.hessian {
            HessianSelection::Explicit { matrix } => SymMatrix::new(matrix_from_rows(matrix)?),
            HessianSelection::Sampled { seed } => poly.evaluate(&poly.sample_uniform(*seed)),
        }
    }

    pub fn map(&self, poly: &HessianPolytope) -> Result<MapSpec> {
        MapSpec::new(
            self.map.qstar,
            DVector::from_row_slice(&self.map.thetastar),
            self.hessian(poly)?,
        )
    }

    /// Gain from the config, when one is pinned there.
    pub fn gain_override(&self) -> Result<Option<DMatrix<f64>>> {
        match &self.simulation.gain {
            None => Ok(None),
            Some(rows) => Ok(Some(matrix_from_rows(rows)?)),
        }
    }

    /// Stop radius for average-system runs.
    pub fn eps_stop(&self) -> f64 {
        self.simulation.eps_stop.unwrap_or(10.0 * self.simulation.uv_epsilon)
    }

    /// Assembles a validated full-loop simulation config around `gain`.
    pub fn sim_config(&self, poly: &HessianPolytope, gain: DMatrix<f64>) -> Result<SimConfig> {
        let cfg = SimConfig {
            map: self.map(poly)?,
            dither: self.dither.build()?,
            gain,
            theta0: DVector::from_row_slice(&self.simulation.theta0),
            t_end: self.simulation.t_end,
            dt: self.simulation.dt,
            uv_epsilon: self.simulation.uv_epsilon,
            record_stride: self.simulation.record_stride,
            estimator: self.simulation.estimator,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the Hessian sampling seed. Explicit selections are left
    /// alone, so `--seed` only acts where sampling happens.
    pub fn override_seed(&mut self, seed: u64) {
        if let HessianSelection::Sampled { seed: s } = &mut self.map.hessian {
            *s = seed;
        }
    }

    /// Multiplies the dither base frequency, for `--omega-scale`.
    pub fn scale_omega(&mut self, factor: f64) -> Result<()> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!(
                "omega scale must be positive and finite, got {factor}"
            )));
        }
        self.dither.base_frequency *= factor;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv_json() -> String {
        r#"{
            "polytope": { "scaled": { "h0": [[100.0, 30.0], [30.0, 20.0]], "delta_bar": 0.1 } },
            "mu": 32.9034,
            "varphi": 0.4,
            "dither": { "amplitudes": [0.1, 0.1], "multipliers": [1, 7], "base_frequency": 10.0 },
            "map": {
                "qstar": 10.0,
                "thetastar": [2.0, 4.0],
                "hessian": { "sampled": { "seed": 7 } }
            },
            "simulation": {
                "theta0": [2.5, 6.0],
                "t_end": 10.0,
                "dt": 0.0004,
                "uv_epsilon": 0.5,
                "record_stride": 20
            }
        }"#
        .to_string()
    }

    #[test]
    fn parses_the_design_study_config() {
        let cfg = ExperimentConfig::from_json(&iv_json()).unwrap();
        assert_eq!(cfg.objective, Objective::MinimizeRho);
        assert_eq!(cfg.simulation.record_stride, 20);
        assert!(cfg.simulation.gain.is_none());
        assert_eq!(cfg.eps_stop(), 5.0);
        let poly = cfg.polytope().unwrap();
        assert_eq!(poly.num_vertices(), 2);
        let map = cfg.map(&poly).unwrap();
        assert_eq!(map.dim(), 2);
        let problem = cfg.synthesis_problem().unwrap();
        assert_eq!(problem.objective, Objective::MinimizeRho);
    }

    #[test]
    fn sampled_hessian_is_deterministic_and_inside_the_polytope() {
        let cfg = ExperimentConfig::from_json(&iv_json()).unwrap();
        let poly = cfg.polytope().unwrap();
        let h1 = cfg.hessian(&poly).unwrap();
        let h2 = cfg.hessian(&poly).unwrap();
        assert_eq!(h1.as_matrix(), h2.as_matrix());
        assert!(h1.is_positive_definite());
        let mut other = cfg.clone();
        other.override_seed(8);
        let h3 = other.hessian(&poly).unwrap();
        assert_ne!(h1.as_matrix(), h3.as_matrix());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = iv_json().replace("\"mu\":", "\"typo\": 1.0, \"mu\":");
        match ExperimentConfig::from_json(&text) {
            Err(Error::Config(msg)) => assert!(msg.contains("typo"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_matrices_are_rejected() {
        let text = iv_json().replace("[30.0, 20.0]", "[30.0]");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert!(matches!(cfg.polytope(), Err(Error::Config(_))));
    }

    #[test]
    fn explicit_hessian_and_pinned_gain() {
        let text = iv_json()
            .replace(
                r#""hessian": { "sampled": { "seed": 7 } }"#,
                r#""hessian": { "explicit": { "matrix": [[100.0, 30.0], [30.0, 20.0]] } }"#,
            )
            .replace(
                r#""record_stride": 20"#,
                r#""record_stride": 20,
                   "gain": [[-0.2393, 0.3589], [0.3589, -1.1965]],
                   "eps_stop": 0.02"#,
            );
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg.eps_stop(), 0.02);
        let poly = cfg.polytope().unwrap();
        let gain = cfg.gain_override().unwrap().expect("gain pinned");
        let sim = cfg.sim_config(&poly, gain).unwrap();
        assert_eq!(sim.map.hessian.as_matrix()[(0, 0)], 100.0);
        let mut scaled = cfg.clone();
        scaled.scale_omega(4.0).unwrap();
        assert_eq!(scaled.dither.base_frequency, 40.0);
        assert!(scaled.scale_omega(0.0).is_err());
    }

    #[test]
    fn round_trips_through_serde() {
        let cfg = ExperimentConfig::from_json(&iv_json()).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back.mu, cfg.mu);
        assert_eq!(back.simulation.theta0, cfg.simulation.theta0);
        assert_eq!(back.dither.multipliers, cfg.dither.multipliers);
    }
}
