//! Dither signal generation: the perturbation `S(t)`, the demodulation
//! vector `M(t)`, and the oscillation matrix `Delta(t)`.
//!
//! With `S(t)_i = a_i sin(w_i t)` and `M(t)_i = (2/a_i) sin(w_i t)` the
//! outer product satisfies the exact identity
//!
//! ```text
//! M(t) S(t)^T = I + Delta(t)
//! Delta_ii(t) = -cos(2 w_i t)
//! Delta_ij(t) = (a_j/a_i) [cos((w_i - w_j) t) - cos((w_i + w_j) t)], i != j
//! ```
//!
//! so the demodulated map curvature is `(I + Delta(t)) H` with `Delta`
//! averaging to zero over the common period. The frequencies are integer
//! multiples `w_i = w_i' * w` of a base frequency, with the multipliers
//! kept away from each other's sums, differences and half-sums so that
//! no cross term demodulates into a bias.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Default quadrature resolution for period averages.
pub const DEFAULT_AVERAGE_POINTS: usize = 4096;

/// How a set of integer frequency multipliers violates the exclusion
/// rules. Indices refer to positions in the multiplier list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrequencyViolation {
    /// `w_i' == w_j'` for distinct positions.
    Duplicate { i: usize, j: usize },
    /// `w_i' == (w_j' + w_k') / 2` with `j != k`.
    HalfSum { i: usize, j: usize, k: usize },
    /// `w_i' == w_k' + w_l'`.
    Sum { i: usize, k: usize, l: usize },
    /// `w_i' == w_k' - w_l'`.
    Difference { i: usize, k: usize, l: usize },
}

impl std::fmt::Display for FrequencyViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FrequencyViolation::Duplicate { i, j } => {
                write!(f, "multipliers {i} and {j} are equal")
            }
            FrequencyViolation::HalfSum { i, j, k } => {
                write!(f, "multiplier {i} equals the half-sum of {j} and {k}")
            }
            FrequencyViolation::Sum { i, k, l } => {
                write!(f, "multiplier {i} equals the sum of {k} and {l}")
            }
            FrequencyViolation::Difference { i, k, l } => {
                write!(f, "multiplier {i} equals the difference of {k} and {l}")
            }
        }
    }
}

/// Outcome of [`validate_frequencies`]; empty violation list means the
/// multipliers are admissible.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<FrequencyViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the exclusion set for every multiplier: `w_i'` must differ
/// from every other multiplier, from every half-sum of a distinct pair,
/// and from every pairwise sum and difference. All arithmetic is exact
/// in integers; validation itself never fails.
pub fn validate_frequencies(multipliers: &[u32]) -> ValidationReport {
    let m: Vec<u64> = multipliers.iter().map(|&v| v as u64).collect();
    let n = m.len();
    let mut violations = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if m[i] == m[j] {
                violations.push(FrequencyViolation::Duplicate { i, j });
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in (j + 1)..n {
                if 2 * m[i] == m[j] + m[k] {
                    violations.push(FrequencyViolation::HalfSum { i, j, k });
                }
            }
        }
        for k in 0..n {
            for l in k..n {
                if m[i] == m[k] + m[l] {
                    violations.push(FrequencyViolation::Sum { i, k, l });
                }
            }
            for l in 0..n {
                if l != k && m[k] > m[l] && m[i] == m[k] - m[l] {
                    violations.push(FrequencyViolation::Difference { i, k, l });
                }
            }
        }
    }
    ValidationReport { violations }
}

/// Common period of tones at `multiplier * base` rad/s, together with
/// the repetition frequency `2 pi / T = base * gcd(multipliers)`.
pub fn common_period_of(multipliers: &[u32], base_frequency: f64) -> (f64, f64) {
    let g = multipliers
        .iter()
        .copied()
        .fold(0u32, gcd);
    let omega = base_frequency * g as f64;
    (std::f64::consts::TAU / omega, omega)
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Amplitudes, integer frequency multipliers and the base frequency of
/// the dither tones. Construction enforces the exclusion rules.
#[derive(Debug, Clone)]
pub struct DitherConfig {
    amplitudes: Vec<f64>,
    multipliers: Vec<u32>,
    base_frequency: f64,
}

impl DitherConfig {
    pub fn new(amplitudes: Vec<f64>, multipliers: Vec<u32>, base_frequency: f64) -> Result<Self> {
        if amplitudes.is_empty() || amplitudes.len() != multipliers.len() {
            return Err(Error::Domain(format!(
                "need matching nonempty amplitude/multiplier lists, got {} and {}",
                amplitudes.len(),
                multipliers.len()
            )));
        }
        if amplitudes.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::Domain(format!(
                "amplitudes must be positive and finite, got {amplitudes:?}"
            )));
        }
        if multipliers.iter().any(|m| *m < 1) {
            return Err(Error::Domain("multipliers must be >= 1".into()));
        }
        if !(base_frequency > 0.0 && base_frequency.is_finite()) {
            return Err(Error::Domain(format!(
                "base frequency must be positive, got {base_frequency}"
            )));
        }
        let report = validate_frequencies(&multipliers);
        if !report.is_valid() {
            let list: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::Domain(format!(
                "multipliers {multipliers:?} violate the frequency exclusion rules: {}",
                list.join("; ")
            )));
        }
        Ok(DitherConfig {
            amplitudes,
            multipliers,
            base_frequency,
        })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn multipliers(&self) -> &[u32] {
        &self.multipliers
    }

    pub fn base_frequency(&self) -> f64 {
        self.base_frequency
    }

    /// Same tones at a different base frequency.
    pub fn with_base_frequency(&self, base_frequency: f64) -> Result<Self> {
        DitherConfig::new(
            self.amplitudes.clone(),
            self.multipliers.clone(),
            base_frequency,
        )
    }

    /// Tone frequencies `w_i = w_i' * w` in rad/s.
    pub fn frequencies(&self) -> Vec<f64> {
        self.multipliers
            .iter()
            .map(|m| *m as f64 * self.base_frequency)
            .collect()
    }

    pub fn max_frequency(&self) -> f64 {
        self.multipliers
            .iter()
            .copied()
            .max()
            .expect("nonempty multipliers") as f64
            * self.base_frequency
    }

    /// Root sum of squared amplitudes, the worst-case perturbation norm.
    pub fn amplitude_norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Perturbation `S(t)_i = a_i sin(w_i t)`.
    pub fn perturbation(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            self.amplitudes[i] * (self.multipliers[i] as f64 * self.base_frequency * t).sin()
        })
    }

    /// Demodulation `M(t)_i = (2/a_i) sin(w_i t)`.
    pub fn demodulation(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            2.0 / self.amplitudes[i]
                * (self.multipliers[i] as f64 * self.base_frequency * t).sin()
        })
    }

    /// Oscillation matrix satisfying `M(t) S(t)^T = I + Delta(t)`.
    ///
    /// The diagonal is `-cos(2 w_i t)`: the product-to-sum identity
    /// `2 sin^2(w t) = 1 - cos(2 w t)` already contains the identity
    /// matrix contribution, so only the cosine part lands in `Delta`.
    pub fn delta(&self, t: f64) -> DMatrix<f64> {
        let w: Vec<f64> = self.frequencies();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                -(2.0 * w[i] * t).cos()
            } else {
                self.amplitudes[j] / self.amplitudes[i]
                    * (((w[i] - w[j]) * t).cos() - ((w[i] + w[j]) * t).cos())
            }
        })
    }

    /// Common period of all tones and the matching repetition frequency.
    pub fn common_period(&self) -> (f64, f64) {
        common_period_of(&self.multipliers, self.base_frequency)
    }
}

/// Values the quadrature helper can accumulate.
pub trait Averageable: Clone {
    fn zero_like(&self) -> Self;
    fn accumulate(&mut self, x: &Self, w: f64);
    fn scale_mut(&mut self, c: f64);
    fn finite(&self) -> bool;
}

impl Averageable for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn accumulate(&mut self, x: &Self, w: f64) {
        *self += x * w;
    }
    fn scale_mut(&mut self, c: f64) {
        *self *= c;
    }
    fn finite(&self) -> bool {
        self.is_finite()
    }
}

impl Averageable for DVector<f64> {
    fn zero_like(&self) -> Self {
        DVector::zeros(self.len())
    }
    fn accumulate(&mut self, x: &Self, w: f64) {
        self.axpy(w, x, 1.0);
    }
    fn scale_mut(&mut self, c: f64) {
        *self *= c;
    }
    fn finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl Averageable for DMatrix<f64> {
    fn zero_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn accumulate(&mut self, x: &Self, w: f64) {
        *self += x * w;
    }
    fn scale_mut(&mut self, c: f64) {
        *self *= c;
    }
    fn finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Average of `f` over `[0, period]` by the composite trapezoid rule.
/// `points` is the subinterval count and must be a power of two of at
/// least 64; for periodic integrands the rule converges exponentially,
/// so [`DEFAULT_AVERAGE_POINTS`] is far more than enough.
pub fn signal_average<T: Averageable>(
    f: impl Fn(f64) -> T,
    period: f64,
    points: usize,
) -> Result<T> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::Domain(format!("period must be positive, got {period}")));
    }
    if points < 64 || !points.is_power_of_two() {
        return Err(Error::Domain(format!(
            "quadrature points must be a power of two >= 64, got {points}"
        )));
    }
    let h = period / points as f64;
    let first = f(0.0);
    let mut acc = first.zero_like();
    acc.accumulate(&first, 0.5);
    for k in 1..points {
        let sample = f(k as f64 * h);
        if !sample.finite() {
            return Err(Error::Numerical(format!(
                "non-finite sample at t = {}",
                k as f64 * h
            )));
        }
        acc.accumulate(&sample, 1.0);
    }
    acc.accumulate(&f(period), 0.5);
    acc.scale_mut(1.0 / points as f64);
    if !acc.finite() {
        return Err(Error::Numerical("non-finite quadrature result".into()));
    }
    Ok(acc)
}
