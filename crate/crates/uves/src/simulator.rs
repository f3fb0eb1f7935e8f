//! Closed-loop simulation of the dithered system and its average.
//!
//! Three loops share one fixed-step RK4 core:
//!
//! * the full dithered loop with a configurable gradient-estimate
//!   realization (see [`GradientEstimator`]),
//! * the average system `dG/dtau = (1/omega) H K phi(G)` that the gain
//!   certificate speaks about, integrated in the fast time scale (pass
//!   `omega = 1` to read reaching times in tau units), and
//! * the frequency-independent average prediction used by
//!   [`averaging_gap`].
//!
//! `phi` is the regularized unit vector: exact direction outside an
//! `eps`-ball, linear inside, so the right-hand side stays defined at
//! the origin without changing the field anywhere that matters.
//!
//! # Gradient-estimate realizations
//!
//! The algebraic estimate `G = M(t) y(t)` looks like the obvious loop
//! to integrate, but it cannot work as a feedback signal on its own:
//! the output is scalar, so `M(t) y(t)` is always parallel to `M(t)`,
//! and while `y` keeps one sign (it does: `y >= Q*` for a convex map)
//! the unit vector of the estimate equals `unit(M(t)) sign(y)`, which
//! does not depend on the state at all. Over each dither period the
//! control then integrates to exactly zero and the estimate orbits its
//! starting point forever. [`GradientEstimator::Demodulated`] realizes
//! this loop anyway (optionally washing the slowly varying part of `y`
//! out before demodulating, which restores state feedback but leaves
//! an O(1) distortion in the average), because it is the natural
//! control experiment.
//!
//! The certificate analysis instead governs the gradient-estimate
//! dynamics `dG/dt = (I + Delta(t)) H u`, obtained by differentiating
//! `M(t) y(t)` and discarding the state-independent carrier terms that
//! average to zero. [`GradientEstimator::Integrated`] integrates that
//! realization from `G(0) = H (theta_hat(0) - thetastar)`; its
//! trajectories track the average system with an O(1/omega) ripple,
//! which is exactly the regime the reaching-time certificates and the
//! averaging checks are about. It is the default.
//!
//! Integrating the estimate leaves one loose end. Exactly,
//! `G(t) = H theta_tilde(t) + R(t)` with the ripple
//! `R = integral of Delta(s) H u(s) ds`; the discarded terms are what
//! anchors `R` to a bounded oscillation. Without them, once the origin
//! is reached the control chatters at the dither frequencies,
//! correlates with `Delta(t)`, and the integral picks up a secular
//! drift: the estimate stays near zero while `theta_hat` random-walks
//! away. The realization therefore damps the ripple state with a leak
//! proportional to the base frequency,
//! `dG/dt = (I + Delta) H u - leak_ratio * omega * (G - H theta_tilde)`,
//! which suppresses exactly the spurious secular component while
//! leaving the O(1/omega) ripple (and with it the averaging-gap
//! scaling) intact. `leak_ratio = 0` recovers the undamped dynamics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dither::DitherConfig;
use crate::linalg::SymMatrix;
use crate::{Error, Result};

/// Fixed-step resolution: at least this many RK4 steps per period of
/// the fastest tone and per common period.
pub const MIN_STEPS_PER_PERIOD: f64 = 200.0;

/// Regularized unit vector: `g / |g|` outside the `eps`-ball, `g / eps`
/// inside. Continuous everywhere, exact outside the ball.
pub fn unit_vector(g: &DVector<f64>, eps: f64) -> DVector<f64> {
    assert!(eps > 0.0, "regularization radius must be positive");
    let n = g.norm();
    if n >= eps { g / n } else { g / eps }
}

/// Quadratic static map `y = qstar + 0.5 (theta - thetastar)^T H (theta - thetastar)`.
#[derive(Debug, Clone)]
pub struct MapSpec {
    pub qstar: f64,
    pub thetastar: DVector<f64>,
    pub hessian: SymMatrix,
}

impl MapSpec {
    pub fn new(qstar: f64, thetastar: DVector<f64>, hessian: SymMatrix) -> Result<Self> {
        if thetastar.len() != hessian.dim() {
            return Err(Error::Domain(format!(
                "optimum has {} coordinates but the Hessian is {}x{}",
                thetastar.len(),
                hessian.dim(),
                hessian.dim()
            )));
        }
        if !hessian.is_positive_definite() {
            return Err(Error::Domain("map Hessian must be positive definite".into()));
        }
        if !qstar.is_finite() || thetastar.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("map parameters must be finite".into()));
        }
        Ok(MapSpec {
            qstar,
            thetastar,
            hessian,
        })
    }

    pub fn dim(&self) -> usize {
        self.thetastar.len()
    }

    pub fn eval(&self, theta: &DVector<f64>) -> f64 {
        let d = theta - &self.thetastar;
        self.qstar + 0.5 * (self.hessian.as_matrix() * &d).dot(&d)
    }
}

/// Washout high-pass applied to the output before demodulation in
/// [`GradientEstimator::Demodulated`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Washout {
    /// No filtering: demodulate the raw output. The loop then has no
    /// state feedback while the output keeps one sign; useful as a
    /// control experiment, not as a working controller.
    Off,
    /// Cutoff at `ratio * base_frequency`; scales with the dither.
    Relative(f64),
    /// Fixed cutoff in rad/s.
    Absolute(f64),
}

impl Default for Washout {
    fn default() -> Self {
        Washout::Relative(0.2)
    }
}

impl Washout {
    /// Cutoff in rad/s for a given base frequency, `None` when off.
    pub fn cutoff(&self, base_frequency: f64) -> Option<f64> {
        match *self {
            Washout::Off => None,
            Washout::Relative(r) => Some(r * base_frequency),
            Washout::Absolute(c) => Some(c),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Washout::Off => true,
            Washout::Relative(r) => r > 0.0 && r.is_finite(),
            Washout::Absolute(c) => c > 0.0 && c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("washout cutoff must be positive: {self:?}")))
        }
    }
}

/// How the full loop forms the signal handed to the unit vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientEstimator {
    /// Algebraic demodulation of the measured output, `G = M(t) y(t)`,
    /// with an optional washout high-pass on `y` first. Without the
    /// washout this loop provably cannot drift (see the module doc);
    /// with it the loop closes but its average keeps an O(1)
    /// distortion.
    Demodulated { washout: Washout },
    /// Dynamic estimate
    /// `dG/dt = (I + Delta(t)) H u - leak_ratio * omega * (G - H theta_tilde)`
    /// started at `G(0) = H (theta_hat(0) - thetastar)`: the
    /// realization whose average is certified, with O(1/omega) ripple
    /// around it. The leak keeps the ripple anchored once the origin is
    /// reached (see the module doc); `leak_ratio = 0` disables it.
    Integrated {
        #[serde(default = "default_leak_ratio")]
        leak_ratio: f64,
    },
}

fn default_leak_ratio() -> f64 {
    0.2
}

impl Default for GradientEstimator {
    fn default() -> Self {
        GradientEstimator::Integrated { leak_ratio: default_leak_ratio() }
    }
}

/// Everything a full-loop run needs.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub map: MapSpec,
    pub dither: DitherConfig,
    /// Unit-vector gain `K`.
    pub gain: DMatrix<f64>,
    /// Initial estimate `theta_hat(0)`; the probed input starts at the
    /// same point because `S(0) = 0`.
    pub theta0: DVector<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub uv_epsilon: f64,
    /// Record every this-many steps (the final state is always kept).
    pub record_stride: usize,
    pub estimator: GradientEstimator,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.map.dim();
        if self.dither.dim() != n {
            return Err(Error::Domain(format!(
                "dither has {} tones for a {n}-dimensional map",
                self.dither.dim()
            )));
        }
        if self.gain.nrows() != n || self.gain.ncols() != n {
            return Err(Error::Domain(format!(
                "gain is {}x{}, expected {n}x{n}",
                self.gain.nrows(),
                self.gain.ncols()
            )));
        }
        if self.theta0.len() != n {
            return Err(Error::Domain(format!(
                "initial estimate has {} coordinates, expected {n}",
                self.theta0.len()
            )));
        }
        if self.gain.iter().any(|v| !v.is_finite()) || self.theta0.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Domain("gain and initial estimate must be finite".into()));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Domain(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        let (t_period, _) = self.dither.common_period();
        let dt_max = (t_period / MIN_STEPS_PER_PERIOD)
            .min(std::f64::consts::TAU / (MIN_STEPS_PER_PERIOD * self.dither.max_frequency()));
        if self.dt > dt_max {
            return Err(Error::Domain(format!(
                "dt = {} exceeds the resolution limit {dt_max:.6e} for the fastest tone",
                self.dt
            )));
        }
        if !(self.uv_epsilon > 0.0) {
            return Err(Error::Domain("uv_epsilon must be positive".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::Domain("record_stride must be >= 1".into()));
        }
        match self.estimator {
            GradientEstimator::Demodulated { washout } => washout.validate()?,
            GradientEstimator::Integrated { leak_ratio } => {
                if !(leak_ratio >= 0.0 && leak_ratio.is_finite()) {
                    return Err(Error::Domain(format!(
                        "leak_ratio must be finite and >= 0, got {leak_ratio}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Time-aligned series from one run. Full-loop runs carry every column;
/// average-system runs only carry the gradient state and the control.
#[derive(Debug, Clone)]
pub struct Trace {
    pub times: Vec<f64>,
    pub theta_hat: Option<Vec<DVector<f64>>>,
    pub theta: Option<Vec<DVector<f64>>>,
    pub y: Option<Vec<f64>>,
    /// Gradient estimate handed to the unit vector; the average state
    /// for average-system runs.
    pub g: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.g.first().map_or(0, |v| v.len())
    }

    pub fn final_theta_hat(&self) -> Option<&DVector<f64>> {
        self.theta_hat.as_ref().and_then(|s| s.last())
    }

    /// CSV export in full double precision (17 significant digits).
    /// Full traces use the header `t,theta_hat_1..n,theta_1..n,y,g_1..n,u_1..n`;
    /// average traces drop the columns they do not have.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        if self.theta_hat.is_some() {
            header.extend((1..=n).map(|i| format!("theta_hat_{i}")));
        }
        if self.theta.is_some() {
            header.extend((1..=n).map(|i| format!("theta_{i}")));
        }
        if self.y.is_some() {
            header.push("y".into());
        }
        header.extend((1..=n).map(|i| format!("g_{i}")));
        header.extend((1..=n).map(|i| format!("u_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for row in 0..self.len() {
            let mut fields = vec![fmt_f64(self.times[row])];
            if let Some(th) = &self.theta_hat {
                fields.extend(th[row].iter().map(|v| fmt_f64(*v)));
            }
            if let Some(th) = &self.theta {
                fields.extend(th[row].iter().map(|v| fmt_f64(*v)));
            }
            if let Some(y) = &self.y {
                fields.push(fmt_f64(y[row]));
            }
            fields.extend(self.g[row].iter().map(|v| fmt_f64(*v)));
            fields.extend(self.u[row].iter().map(|v| fmt_f64(*v)));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One classical RK4 step of `x' = f(t, x)`.
fn rk4_step<F>(f: &F, t: f64, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Splits `[0, t_end]` into fixed steps of `dt` plus one truncated
/// final step so the last sample lands exactly on `t_end`.
fn step_times(t_end: f64, dt: f64) -> Vec<(f64, f64)> {
    let mut steps = Vec::new();
    let mut t = 0.0;
    while t + dt < t_end - 1e-12 * t_end.max(1.0) {
        steps.push((t, dt));
        t += dt;
    }
    if t_end > t {
        steps.push((t, t_end - t));
    }
    steps
}

/// Integrates the full dithered loop. The recorded gradient column is
/// the signal actually handed to the unit vector; the `y` column is
/// the raw measurement along the trajectory in every mode.
pub fn simulate_full(cfg: &SimConfig) -> Result<Trace> {
    cfg.validate()?;
    let n = cfg.map.dim();

    // State layout: theta_hat first, then the estimator state (the
    // washout scalar eta, or the integrated gradient estimate).
    enum Extra {
        None,
        Eta(f64),
        GradState { leak: f64 },
    }
    let extra = match cfg.estimator {
        GradientEstimator::Demodulated { washout } => match washout.cutoff(cfg.dither.base_frequency()) {
            None => Extra::None,
            Some(wh) => Extra::Eta(wh),
        },
        GradientEstimator::Integrated { leak_ratio } => {
            Extra::GradState { leak: leak_ratio * cfg.dither.base_frequency() }
        }
    };
    let state_len = match extra {
        Extra::None => n,
        Extra::Eta(_) => n + 1,
        Extra::GradState { .. } => 2 * n,
    };

    let mut state = DVector::zeros(state_len);
    state.rows_mut(0, n).copy_from(&cfg.theta0);
    match extra {
        Extra::None => {}
        Extra::Eta(_) => state[n] = cfg.map.eval(&cfg.theta0),
        Extra::GradState { .. } => {
            let g0 = cfg.map.hessian.as_matrix() * (&cfg.theta0 - &cfg.map.thetastar);
            state.rows_mut(n, n).copy_from(&g0);
        }
    }

    // The gradient estimate visible to the controller at (t, state).
    let estimate = |t: f64, x: &DVector<f64>| -> DVector<f64> {
        match extra {
            Extra::None | Extra::Eta(_) => {
                let theta_hat = x.rows(0, n);
                let theta = &theta_hat + cfg.dither.perturbation(t);
                let y = cfg.map.eval(&theta.into_owned());
                let y_demod = match extra {
                    Extra::Eta(_) => y - x[n],
                    _ => y,
                };
                cfg.dither.demodulation(t) * y_demod
            }
            Extra::GradState { .. } => x.rows(n, n).into_owned(),
        }
    };

    let rhs = |t: f64, x: &DVector<f64>| -> DVector<f64> {
        let ghat = estimate(t, x);
        let u = &cfg.gain * unit_vector(&ghat, cfg.uv_epsilon);
        let mut dx = DVector::zeros(state_len);
        dx.rows_mut(0, n).copy_from(&u);
        match extra {
            Extra::None => {}
            Extra::Eta(wh) => {
                let theta = &x.rows(0, n) + cfg.dither.perturbation(t);
                let y = cfg.map.eval(&theta.into_owned());
                dx[n] = wh * (y - x[n]);
            }
            Extra::GradState { leak } => {
                let mut omega_t = cfg.dither.delta(t);
                for i in 0..n {
                    omega_t[(i, i)] += 1.0;
                }
                let mut dg = omega_t * cfg.map.hessian.as_matrix() * &u;
                if leak > 0.0 {
                    let anchor =
                        cfg.map.hessian.as_matrix() * (&x.rows(0, n) - &cfg.map.thetastar);
                    dg += (anchor - x.rows(n, n)) * leak;
                }
                dx.rows_mut(n, n).copy_from(&dg);
            }
        }
        dx
    };

    let mut trace = Trace {
        times: Vec::new(),
        theta_hat: Some(Vec::new()),
        theta: Some(Vec::new()),
        y: Some(Vec::new()),
        g: Vec::new(),
        u: Vec::new(),
    };
    let mut record = |t: f64, x: &DVector<f64>| {
        let theta_hat = x.rows(0, n).into_owned();
        let theta = &theta_hat + cfg.dither.perturbation(t);
        let y = cfg.map.eval(&theta);
        let ghat = estimate(t, x);
        let u = &cfg.gain * unit_vector(&ghat, cfg.uv_epsilon);
        trace.times.push(t);
        trace.theta_hat.as_mut().unwrap().push(theta_hat);
        trace.theta.as_mut().unwrap().push(theta);
        trace.y.as_mut().unwrap().push(y);
        trace.g.push(ghat);
        trace.u.push(u);
    };

    record(0.0, &state);
    let steps = step_times(cfg.t_end, cfg.dt);
    let total = steps.len();
    for (k, (t, h)) in steps.into_iter().enumerate() {
        state = rk4_step(&rhs, t, &state, h);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "state became non-finite at t = {:.6}",
                t + h
            )));
        }
        if (k + 1) % cfg.record_stride == 0 || k + 1 == total {
            record(t + h, &state);
        }
    }
    Ok(trace)
}

/// Integrates the average system `dG/dtau = (1/omega) H K phi(G)` and
/// reports the first time `|G|` enters the `eps_stop` ball, stopping
/// there. Pass `omega = 1` for the fast time scale; reaching times then
/// convert to seconds as `t = tau / omega`.
///
/// Entry into the ball is only checked at step boundaries, so pick
/// `eps_stop` comfortably above the per-step travel
/// `dt * |H K| / omega`; otherwise the discrete trajectory can orbit
/// the origin with no sample ever landing inside the ball. The unit
/// vector is regularized at `eps_stop / 10`.
pub fn simulate_average(
    gain: &DMatrix<f64>,
    hessian: &SymMatrix,
    g0: &DVector<f64>,
    omega: f64,
    dt: f64,
    t_end: f64,
    eps_stop: f64,
) -> Result<(Trace, Option<f64>)> {
    let n = hessian.dim();
    if gain.nrows() != n || gain.ncols() != n || g0.len() != n {
        return Err(Error::Domain(format!(
            "dimension mismatch: H is {n}x{n}, K is {}x{}, g0 has {}",
            gain.nrows(),
            gain.ncols(),
            g0.len()
        )));
    }
    if !(omega > 0.0 && dt > 0.0 && t_end >= 0.0 && eps_stop > 0.0) {
        return Err(Error::Domain(
            "omega, dt and eps_stop must be positive and t_end >= 0".into(),
        ));
    }
    let eps_reg = eps_stop / 10.0;
    let hk = hessian.as_matrix() * gain;
    let rhs = |_t: f64, g: &DVector<f64>| -> DVector<f64> {
        &hk * unit_vector(g, eps_reg) / omega
    };

    let mut trace = Trace {
        times: Vec::new(),
        theta_hat: None,
        theta: None,
        y: None,
        g: Vec::new(),
        u: Vec::new(),
    };
    let mut record = |t: f64, g: &DVector<f64>| {
        trace.times.push(t);
        trace.g.push(g.clone());
        trace.u.push(gain * unit_vector(g, eps_reg));
    };

    let mut g = g0.clone();
    let mut reach = if g.norm() <= eps_stop { Some(0.0) } else { None };
    record(0.0, &g);
    if reach.is_none() {
        for (t, h) in step_times(t_end, dt) {
            g = rk4_step(&rhs, t, &g, h);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "average state became non-finite at t = {:.6}",
                    t + h
                )));
            }
            record(t + h, &g);
            if g.norm() <= eps_stop {
                reach = Some(t + h);
                break;
            }
        }
    }
    Ok((trace, reach))
}

/// First time after which the estimate stays inside the `band`-ball
/// around `target` for the rest of the trace. Operates on `theta_hat`
/// when present, on the gradient state otherwise.
pub fn measure_settling(
    trace: &Trace,
    target: &DVector<f64>,
    band: f64,
) -> Result<Option<f64>> {
    if !(band > 0.0) {
        return Err(Error::Domain(format!("band must be positive, got {band}")));
    }
    let series: &[DVector<f64>] = match &trace.theta_hat {
        Some(s) => s,
        None => &trace.g,
    };
    if series.is_empty() {
        return Ok(None);
    }
    if series[0].len() != target.len() {
        return Err(Error::Domain(format!(
            "target has {} coordinates, trace has {}",
            target.len(),
            series[0].len()
        )));
    }
    let mut last_outside = None;
    for (i, x) in series.iter().enumerate() {
        if (x - target).norm() > band {
            last_outside = Some(i);
        }
    }
    Ok(match last_outside {
        None => Some(trace.times[0]),
        Some(i) if i + 1 >= trace.len() => None,
        Some(i) => Some(trace.times[i + 1]),
    })
}

/// Runs the full loop at each base frequency and measures the largest
/// deviation from the average-system prediction over the horizon.
/// The prediction integrates `d/dt theta_av = K phi(H (theta_av - thetastar))`,
/// which is what averaging the gradient-estimate loop leaves behind,
/// and is frequency independent; the returned gaps shrink like
/// `1/omega` once the dither is fast enough (for the integrated
/// estimator; the washed-out demodulated loop keeps an O(1) defect).
pub fn averaging_gap(cfg: &SimConfig, omegas: &[f64]) -> Result<Vec<(f64, f64)>> {
    if omegas.len() < 2 {
        return Err(Error::Domain("need at least two frequencies to compare".into()));
    }
    if omegas.windows(2).any(|w| w[1] <= w[0]) || omegas[0] <= 0.0 {
        return Err(Error::Domain(format!(
            "frequencies must be positive and increasing, got {omegas:?}"
        )));
    }
    cfg.validate()?;

    // Frequency-independent average prediction on the same grid.
    let h_mat = cfg.map.hessian.as_matrix().clone();
    let rhs = |_t: f64, th: &DVector<f64>| -> DVector<f64> {
        &cfg.gain * unit_vector(&(&h_mat * th), cfg.uv_epsilon)
    };
    let mut theta_av = &cfg.theta0 - &cfg.map.thetastar;
    let mut prediction = vec![theta_av.clone()];
    for (t, h) in step_times(cfg.t_end, cfg.dt) {
        theta_av = rk4_step(&rhs, t, &theta_av, h);
        if theta_av.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "average prediction became non-finite at t = {:.6}",
                t + h
            )));
        }
        prediction.push(theta_av.clone());
    }

    let mut gaps = Vec::with_capacity(omegas.len());
    for &omega in omegas {
        let mut run = cfg.clone();
        run.dither = cfg.dither.with_base_frequency(omega)?;
        run.record_stride = 1;
        let trace = simulate_full(&run)?;
        let series = trace.theta_hat.as_ref().expect("full trace has theta_hat");
        if series.len() != prediction.len() {
            return Err(Error::Numerical(
                "trace and prediction grids disagree".into(),
            ));
        }
        let mut sup = 0.0f64;
        for (th, pred) in series.iter().zip(&prediction) {
            let err = (th - (pred + &cfg.map.thetastar)).norm();
            sup = sup.max(err);
        }
        gaps.push((omega, sup));
    }
    Ok(gaps)
}
