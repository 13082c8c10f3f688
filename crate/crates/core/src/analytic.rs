//! Closed-form oracles: Barenblatt profiles, the compact-support barrier,
//! and the focusing (hole-filling) annulus with its integrability classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::grid::Grid;
use crate::model::{ModelParams, ReactionSpec};
use crate::monitors::MonitorConfig;
use crate::quadrature::{ln_gamma, GaussLegendre};
use crate::solver::{self, InitialData, NutrientInit, RunConfig, State, Trajectory};

/// Support threshold used by every containment check.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Barenblatt

/// Self-similar source solution of `u_t = kappa * Lap(u^m)`.
///
/// With `s = kappa (t + t0)`:
/// `u = s^-a (C - k |x|^2 s^(-2a/d))_+^(1/(m-1))`, `a = d / (d(m-1) + 2)`,
/// `k = a (m-1) / (2 m d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarenblattParams {
    pub m: f64,
    pub dim: usize,
    pub kappa: f64,
    pub t0: f64,
    /// Profile constant `C`, fixed by the mass.
    pub c: f64,
}

impl BarenblattParams {
    /// Profile for the density equation at stiffness `gamma`: `m = gamma + 1`,
    /// `kappa = gamma / (gamma + 1)`.
    pub fn for_gamma(gamma: f64, dim: usize, mass: f64, t0: f64) -> Result<Self> {
        Self::from_mass(gamma + 1.0, dim, mass, gamma / (gamma + 1.0), t0)
    }

    pub fn from_mass(m: f64, dim: usize, mass: f64, kappa: f64, t0: f64) -> Result<Self> {
        if !(m > 1.0 && mass > 0.0 && t0 > 0.0 && kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Barenblatt needs m > 1, M > 0, t0 > 0, kappa > 0 (got m={m}, M={mass}, t0={t0}, kappa={kappa})"
            )));
        }
        let mut p = Self {
            m,
            dim,
            kappa,
            t0,
            c: 1.0,
        };
        // M = C^(q + d/2) * unit_mass, where unit_mass is the mass at C = 1.
        let q = 1.0 / (m - 1.0);
        let e = q + dim as f64 / 2.0;
        p.c = (mass / p.unit_mass()).powf(1.0 / e);
        Ok(p)
    }

    pub fn with_constant(m: f64, dim: usize, c: f64, kappa: f64, t0: f64) -> Self {
        Self {
            m,
            dim,
            kappa,
            t0,
            c,
        }
    }

    pub fn alpha(&self) -> f64 {
        let d = self.dim as f64;
        d / (d * (self.m - 1.0) + 2.0)
    }

    pub fn k(&self) -> f64 {
        let d = self.dim as f64;
        self.alpha() * (self.m - 1.0) / (2.0 * self.m * d)
    }

    fn unit_mass(&self) -> f64 {
        let d = self.dim as f64;
        let q = 1.0 / (self.m - 1.0);
        let log =
            -0.5 * d * self.k().ln() + 0.5 * d * std::f64::consts::PI.ln() + ln_gamma(q + 1.0)
                - ln_gamma(q + 1.0 + 0.5 * d);
        log.exp()
    }

    /// `int u dx`, independent of time.
    pub fn mass(&self) -> f64 {
        let q = 1.0 / (self.m - 1.0);
        self.c.powf(q + self.dim as f64 / 2.0) * self.unit_mass()
    }

    fn similarity_time(&self, t: f64) -> f64 {
        self.kappa * (t + self.t0)
    }

    /// Support radius at time `t`.
    pub fn support_radius(&self, t: f64) -> f64 {
        let s = self.similarity_time(t);
        (self.c / self.k()).sqrt() * s.powf(self.alpha() / self.dim as f64)
    }
}

/// Barenblatt density at squared radius `r2` and time `t`.
pub fn barenblatt_density(r2: f64, t: f64, params: &BarenblattParams) -> f64 {
    let s = params.similarity_time(t);
    assert!(s > 0.0, "t + t0 must be positive");
    let a = params.alpha();
    let inner = params.c - params.k() * r2 * s.powf(-2.0 * a / params.dim as f64);
    if inner <= 0.0 {
        0.0
    } else {
        s.powf(-a) * inner.powf(1.0 / (params.m - 1.0))
    }
}

/// Mean of the profile over cell `k`. In 1D the front singularity is
/// removed by the substitution `x = e - (e - s) v^(m-1)`; 2D cells use a
/// tensor Gauss rule.
pub fn barenblatt_cell_average(grid: &Grid, k: usize, t: f64, params: &BarenblattParams) -> f64 {
    let h = grid.h();
    let [x, y] = grid.coords(k);
    let gl = GaussLegendre::new(16);
    if grid.dim() == 2 {
        let g6 = GaussLegendre::new(6);
        let inner = |yy: f64| {
            g6.integrate(x - 0.5 * h, x + 0.5 * h, |xx| {
                barenblatt_density(xx * xx + yy * yy, t, params)
            })
        };
        return g6.integrate(y - 0.5 * h, y + 0.5 * h, inner) / (h * h);
    }
    let radius = params.support_radius(t);
    let a = (x - 0.5 * h).max(-radius);
    let b = (x + 0.5 * h).min(radius);
    if a >= b {
        return 0.0;
    }
    let f = |x: f64| barenblatt_density(x * x, t, params);
    let q = params.m - 1.0;
    // Integral over [s, e] with a front at `e`.
    let toward = |s: f64, e: f64| {
        gl.integrate(0.0, 1.0, |v| {
            let xv = e - (e - s) * v.powf(q);
            f(xv) * (e - s).abs() * q * v.powf(q - 1.0)
        })
    };
    let integral = match (a <= -radius, b >= radius) {
        (false, false) => gl.integrate(a, b, f),
        (false, true) => toward(a, b),
        (true, false) => toward(b, a),
        (true, true) => toward(0.0, b) + toward(0.0, a),
    };
    integral / h
}

// ---------------------------------------------------------------------------
// Compact-support barrier

/// Barrier `Pi = G(0, c_B) |S(t) - |x|^2/2|_+` with `S = S0 exp(2 G(0, c_B) t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    pub s0: f64,
    /// `G(0, c_B)`.
    pub rate: f64,
}

impl BarrierParams {
    pub fn new(s0: f64, rate: f64) -> Result<Self> {
        if !(s0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "S0 > 0 required (got {s0})"
            )));
        }
        if !(rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "barrier needs G(0, c_B) > 0 (got {rate})"
            )));
        }
        Ok(Self { s0, rate })
    }

    /// Smallest `S0` with `Pi(., 0) >= p0` on every cell where `n0` is positive.
    /// This also places the initial support inside `B(sqrt(2 S0))`.
    pub fn from_initial(initial: &State, rate: f64) -> Result<Self> {
        let grid = initial.n.grid();
        let n = initial.n.values();
        let p = initial.p.values();
        let mut s0: f64 = 0.0;
        for k in 0..grid.len() {
            if n[k] > SUPPORT_THRESHOLD {
                s0 = s0.max(p[k] / rate + 0.5 * grid.radius_sq(k));
            }
        }
        Self::new(s0.max(f64::MIN_POSITIVE), rate)
    }

    pub fn s(&self, t: f64) -> f64 {
        self.s0 * (2.0 * self.rate * t).exp()
    }
}

/// `sqrt(2 S(t))`.
pub fn barrier_radius(t: f64, params: &BarrierParams) -> f64 {
    (2.0 * params.s(t)).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierSnapshot {
    pub t: f64,
    pub radius: f64,
    /// Largest cell-center radius with `n > SUPPORT_THRESHOLD`.
    pub support_radius: f64,
    pub offending_cells: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierReport {
    pub snapshots: Vec<BarrierSnapshot>,
}

impl BarrierReport {
    pub fn passed(&self) -> bool {
        self.snapshots.iter().all(|s| s.offending_cells.is_empty())
    }
}

pub fn barrier_check_state(state: &State, params: &BarrierParams) -> BarrierSnapshot {
    let grid = state.n.grid();
    let radius = barrier_radius(state.t, params);
    let mut support_radius: f64 = 0.0;
    let mut offending = Vec::new();
    for (k, &v) in state.n.values().iter().enumerate() {
        if v > SUPPORT_THRESHOLD {
            let r = grid.radius_sq(k).sqrt();
            support_radius = support_radius.max(r);
            if r >= radius {
                offending.push(k);
            }
        }
    }
    BarrierSnapshot {
        t: state.t,
        radius,
        support_radius,
        offending_cells: offending,
    }
}

pub fn barrier_check(trajectory: &Trajectory, params: &BarrierParams) -> BarrierReport {
    BarrierReport {
        snapshots: trajectory
            .snapshots
            .iter()
            .map(|s| barrier_check_state(s, params))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Focusing annulus, d = 2: -Lap p = 1 on R(t) < |x| < R1, p = 0 on both circles.

/// Coefficients of `p = -r^2/4 + a ln r + b` vanishing at `r` and `r1`.
pub fn shell_coefficients(r: f64, r1: f64) -> Result<(f64, f64)> {
    if !(r > 0.0 && r < r1) {
        return Err(Error::InvalidParameter(format!(
            "annulus needs 0 < R < R1 (got R = {r}, R1 = {r1})"
        )));
    }
    let a = (r1 * r1 - r * r) / (4.0 * (r1 / r).ln());
    let b = 0.25 * r1 * r1 - a * r1.ln();
    Ok((a, b))
}

pub fn shell_pressure(r: f64, a: f64, b: f64) -> f64 {
    -0.25 * r * r + a * r.ln() + b
}

pub fn shell_pressure_slope(r: f64, a: f64) -> f64 {
    -0.5 * r + a / r
}

/// Inner-radius velocity `dR/dt = -p'(R)`.
pub fn hole_velocity(r: f64, r1: f64) -> f64 {
    let a = (r1 * r1 - r * r) / (4.0 * (r1 / r).ln());
    -shell_pressure_slope(r, a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoleControl {
    /// Target relative decrease of `R` per step.
    pub rel_step: f64,
    /// Stop once `R <= stop_fraction * R1`.
    pub stop_fraction: f64,
}

impl Default for HoleControl {
    fn default() -> Self {
        Self {
            rel_step: 1e-3,
            stop_fraction: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FocusingTrace {
    pub r1: f64,
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Extinction time from the `R^2`-vs-`t` extrapolation of the last step.
    pub t_ext: f64,
    pub r_stop: f64,
    /// Number of step halvings taken.
    pub halvings: usize,
}

impl FocusingTrace {
    pub fn r0(&self) -> f64 {
        self.radii[0]
    }
}

fn rk4(r: f64, r1: f64, dt: f64) -> f64 {
    let k1 = hole_velocity(r, r1);
    let k2 = hole_velocity(r + 0.5 * dt * k1, r1);
    let k3 = hole_velocity(r + 0.5 * dt * k2, r1);
    let k4 = hole_velocity(r + dt * k3, r1);
    r + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Integrates the inner radius until it falls below `stop_fraction * R1`.
pub fn evolve_hole(r0: f64, r1: f64, control: HoleControl) -> Result<FocusingTrace> {
    let (a0, b0) = shell_coefficients(r0, r1)?;
    if hole_velocity(r0, r1) >= 0.0 {
        return Err(Error::Focusing(format!(
            "hole does not shrink at R0 = {r0}"
        )));
    }
    let r_stop = control.stop_fraction * r1;
    let mut trace = FocusingTrace {
        r1,
        times: vec![0.0],
        radii: vec![r0],
        a: vec![a0],
        b: vec![b0],
        t_ext: f64::NAN,
        r_stop,
        halvings: 0,
    };
    let mut t = 0.0;
    let mut r = r0;
    while r > r_stop {
        let v = hole_velocity(r, r1);
        let mut dt = control.rel_step * r / v.abs();
        let next = loop {
            let trial = rk4(r, r1, dt);
            // Halve when an intermediate stage would cross zero or the decrease overshoots.
            if trial > 0.0 && trial >= r * (1.0 - 4.0 * control.rel_step) && trial.is_finite() {
                break trial;
            }
            dt *= 0.5;
            trace.halvings += 1;
            if dt < 1e-300 {
                return Err(Error::Focusing(format!("step underflow at R = {r}")));
            }
        };
        if next >= r {
            return Err(Error::Focusing(format!(
                "radius not decreasing at t = {t}: {r} -> {next}"
            )));
        }
        t += dt;
        r = next;
        let (a, b) = shell_coefficients(r, r1)?;
        let residual = shell_pressure(r, a, b);
        if residual.abs() > 1e-12 {
            return Err(Error::Focusing(format!(
                "inner boundary pressure {residual:e} at R = {r}"
            )));
        }
        trace.times.push(t);
        trace.radii.push(r);
        trace.a.push(a);
        trace.b.push(b);
    }
    let k = trace.times.len() - 1;
    let slope = (trace.radii[k].powi(2) - trace.radii[k - 1].powi(2))
        / (trace.times[k] - trace.times[k - 1]);
    trace.t_ext = trace.times[k] - trace.radii[k].powi(2) / slope;
    Ok(trace)
}

/// Remaining time until extinction from radius `r`, `int_0^r ds / |dR/dt|(s)`.
/// Independent of any trace.
pub fn time_to_extinction(r: f64, r1: f64) -> f64 {
    let gl = GaussLegendre::new(12);
    // Log-graded panels in s = r e^-u, u in [0, 80].
    let ln_r = r.ln();
    gl.integrate_composite(ln_r - 80.0, ln_r, 0.5, |u| {
        let s = u.exp();
        s / hole_velocity(s, r1).abs()
    })
}

/// Ratios of the measured `dR/dt` (trace differences) to
/// `R1^2 / (4 R ln(R / R1))` for every step with `R <= max_fraction * R1`.
pub fn asymptotic_law_ratios(trace: &FocusingTrace, max_fraction: f64) -> Vec<(f64, f64)> {
    let r1 = trace.r1;
    trace
        .times
        .windows(2)
        .zip(trace.radii.windows(2))
        .filter_map(|(t, r)| {
            let mid = 0.5 * (r[0] + r[1]);
            if mid > max_fraction * r1 {
                return None;
            }
            let measured = (r[1] - r[0]) / (t[1] - t[0]);
            let law = r1 * r1 / (4.0 * mid * (mid / r1).ln());
            Some((mid, measured / law))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Integrability of |grad p|^alpha near extinction

/// `eps_j = eps0_fraction * T_rem(R0) * ratio^j`, until the cutoff radius
/// drops below the end of the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSchedule {
    pub eps0_fraction: f64,
    pub ratio: f64,
}

impl Default for CutoffSchedule {
    fn default() -> Self {
        Self {
            eps0_fraction: 0.5,
            ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Convergent,
    Divergent,
    Inconclusive,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::Convergent => "convergent",
            Classification::Divergent => "divergent",
            Classification::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityResult {
    pub alpha: f64,
    pub eps: Vec<f64>,
    /// `R(T_ext - eps)`.
    pub r_cut: Vec<f64>,
    /// `I_eps`.
    pub values: Vec<f64>,
    /// `I_eps(j+1) - I_eps(j)`.
    pub increments: Vec<f64>,
    /// Least-squares slope of `ln(increment)` against `j` over the tail.
    pub tail_slope: f64,
    pub classification: Classification,
}

/// Tail slopes within this band of zero are not classified.
pub const SLOPE_BAND: f64 = 0.02;

/// Classifies a sequence of cutoff increments of an improper integral.
///
/// Convergent when the tail increments decrease monotonically and their
/// log-slope is below `-SLOPE_BAND`; this accepts the logarithmically slow
/// decay of borderline integrands. Divergent when they increase monotonically
/// with slope above `SLOPE_BAND`.
pub fn classify_increments(increments: &[f64]) -> (Classification, f64) {
    let n = increments.len();
    if n < 6 || increments.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return (Classification::Inconclusive, f64::NAN);
    }
    let tail = &increments[n / 2..];
    let logs: Vec<f64> = tail.iter().map(|d| d.ln()).collect();
    let m = logs.len() as f64;
    let xbar = (m - 1.0) / 2.0;
    let ybar = logs.iter().sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in logs.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    let increasing = tail.windows(2).all(|w| w[1] > w[0]);
    let class = if decreasing && slope < -SLOPE_BAND {
        Classification::Convergent
    } else if increasing && slope > SLOPE_BAND {
        Classification::Divergent
    } else {
        Classification::Inconclusive
    };
    (class, slope)
}

/// `J(R) = int_R^R1 |p'(r)|^alpha r dr` on log-graded panels, split at the
/// root of `p'`.
fn shell_gradient_moment(r: f64, r1: f64, alpha: f64, gl: &GaussLegendre) -> f64 {
    let (a, _) = shell_coefficients(r, r1).expect("R inside annulus");
    let integrand = |s: f64| {
        let x = s.exp();
        shell_pressure_slope(x, a).abs().powf(alpha) * x * x
    };
    let (lo, hi) = (r.ln(), r1.ln());
    let root = (2.0 * a).sqrt().ln();
    if root > lo && root < hi {
        gl.integrate_composite(lo, root, 0.25, integrand)
            + gl.integrate_composite(root, hi, 0.25, integrand)
    } else {
        gl.integrate_composite(lo, hi, 0.25, integrand)
    }
}

/// Radius at which the remaining time equals `eps` (bisection in `ln R`).
fn cutoff_radius(eps: f64, r0: f64, r1: f64) -> f64 {
    let (mut lo, mut hi) = ((r0 * 1e-30).ln(), r0.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if time_to_extinction(mid.exp(), r1) < eps {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// `I_eps(alpha) = int_0^(T_ext - eps) int_R(t)^R1 |p'(r)|^alpha r dr dt` over
/// the cutoff schedule, and the classification of its increments.
///
/// The time integral is taken in the radius variable, `dt = dR / |dR/dt|`,
/// which is exact for the autonomous radius equation.
pub fn integrability_exponent(
    trace: &FocusingTrace,
    alpha: f64,
    schedule: CutoffSchedule,
) -> Result<IntegrabilityResult> {
    if !(alpha >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha >= 1 required (got {alpha})"
        )));
    }
    let r1 = trace.r1;
    let r0 = trace.r0();
    if trace.radii.last().copied().unwrap_or(r0) > trace.r_stop {
        return Err(Error::Focusing(
            "trace did not reach the stop radius".into(),
        ));
    }
    let gl = GaussLegendre::new(8);
    let remaining0 = time_to_extinction(r0, r1);

    let mut eps = Vec::new();
    let mut r_cut = Vec::new();
    let mut e = schedule.eps0_fraction * remaining0;
    loop {
        let rc = cutoff_radius(e, r0, r1);
        if rc < trace.r_stop {
            break;
        }
        eps.push(e);
        r_cut.push(rc);
        e *= schedule.ratio;
    }
    if eps.len() < 2 {
        return Err(Error::Focusing("cutoff schedule too short".into()));
    }

    let outer = GaussLegendre::new(16);
    let segment = |lo: f64, hi: f64| {
        outer.integrate_composite(lo.ln(), hi.ln(), 0.25, |u| {
            let x = u.exp();
            shell_gradient_moment(x, r1, alpha, &gl) * x / hole_velocity(x, r1).abs()
        })
    };

    let mut values = Vec::with_capacity(eps.len());
    let mut acc = segment(r_cut[0], r0);
    values.push(acc);
    let mut increments = Vec::with_capacity(eps.len() - 1);
    for w in r_cut.windows(2) {
        let d = segment(w[1], w[0]);
        increments.push(d);
        acc += d;
        values.push(acc);
    }
    let (classification, tail_slope) = classify_increments(&increments);
    Ok(IntegrabilityResult {
        alpha,
        eps,
        r_cut,
        values,
        increments,
        tail_slope,
        classification,
    })
}

/// Classifies every exponent of `alphas` against one shared trace.
pub fn integrability_table(
    trace: &FocusingTrace,
    alphas: &[f64],
    schedule: CutoffSchedule,
    exec: Execution,
) -> Result<Vec<IntegrabilityResult>> {
    exec::map_tasks(alphas, exec, |&a| {
        integrability_exponent(trace, a, schedule)
    })
    .into_iter()
    .collect()
}

/// Exponent grid emitted by default.
pub const DEFAULT_ALPHAS: [f64; 6] = [2.0, 3.0, 3.5, 4.0, 4.5, 6.0];

/// The asymptotic law is checked for `R <= LAW_FRACTION * R1`.
pub const LAW_FRACTION: f64 = 1e-2;
/// Allowed relative deviation from the asymptotic law.
pub const LAW_TOLERANCE: f64 = 0.1;

/// Trace, integrability table and asymptotic-law ratios of one hole.
#[derive(Debug, Clone, Serialize)]
pub struct FocusingStudy {
    pub trace: FocusingTrace,
    pub table: Vec<IntegrabilityResult>,
    /// `(R, measured / law)`.
    pub law: Vec<(f64, f64)>,
}

impl FocusingStudy {
    /// Finite for `alpha <= 4`, infinite above.
    pub fn expected(alpha: f64) -> Classification {
        if alpha <= 4.0 {
            Classification::Convergent
        } else {
            Classification::Divergent
        }
    }

    pub fn classification_matches(&self) -> bool {
        self.table
            .iter()
            .all(|r| r.classification == Self::expected(r.alpha))
    }

    /// `max |ratio - 1|` over the checked steps.
    pub fn law_deviation(&self) -> f64 {
        self.law
            .iter()
            .map(|(_, q)| (q - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn law_holds(&self) -> bool {
        !self.law.is_empty() && self.law_deviation() <= LAW_TOLERANCE
    }
}

pub fn focusing_study(
    r0: f64,
    r1: f64,
    control: HoleControl,
    alphas: &[f64],
    schedule: CutoffSchedule,
    exec_mode: Execution,
) -> Result<FocusingStudy> {
    let trace = evolve_hole(r0, r1, control)?;
    let table = integrability_table(&trace, alphas, schedule, exec_mode)?;
    let law = asymptotic_law_ratios(&trace, LAW_FRACTION);
    Ok(FocusingStudy { trace, table, law })
}

// ---------------------------------------------------------------------------
// Solver-vs-oracle refinement

/// Pure porous-medium refinement study against the Barenblatt profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarenblattSetup {
    pub gammas: Vec<f64>,
    pub cells: Vec<usize>,
    /// Box half-width as a multiple of the support radius at `t_final`.
    pub box_factor: f64,
    pub mass: f64,
    pub t0: f64,
    pub t_final: f64,
    pub safety: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarenblattCase {
    pub gamma: f64,
    pub cells: usize,
    pub half_width: f64,
    pub h: f64,
    /// `||n_h(T) - n_exact(T)||_1`.
    pub l1_error: f64,
    pub steps: usize,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarenblattOrder {
    pub gamma: f64,
    /// Least-squares slope of `log error` against `log h`.
    pub order: f64,
    /// Orders between consecutive resolutions.
    pub pairwise: Vec<f64>,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarenblattStudy {
    pub cases: Vec<BarenblattCase>,
    pub orders: Vec<BarenblattOrder>,
}

impl BarenblattStudy {
    pub fn passed(&self, min_order: f64) -> bool {
        self.orders
            .iter()
            .all(|o| o.monotone && o.order >= min_order)
    }
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// One solver run with `G = H = K = 0` in 1D, compared at `t_final`.
pub fn barenblatt_case(
    setup: &BarenblattSetup,
    gamma: f64,
    cells: usize,
) -> Result<BarenblattCase> {
    let start = std::time::Instant::now();
    let params = ModelParams::new(gamma, 1.0, 2.0, 1.0, 1.0, 0.5)?;
    let exact = BarenblattParams::for_gamma(gamma, 1, setup.mass, setup.t0)?;
    let grid = Grid::new(
        1,
        setup.box_factor * exact.support_radius(setup.t_final),
        cells,
    )?;
    let config = RunConfig {
        params,
        spec: ReactionSpec::inert(&params),
        grid,
        initial: InitialData::Barenblatt {
            mass: setup.mass,
            t0: setup.t0,
            nutrient: NutrientInit::Uniform,
        },
        t_final: setup.t_final,
        snapshot_every: setup.t_final.max(f64::MIN_POSITIVE),
        safety: setup.safety,
        monitors: MonitorConfig::none(),
        monitor_stride: usize::MAX,
    };
    let out = solver::run(&config)?;
    let last = out
        .trajectory
        .snapshots
        .last()
        .expect("run keeps its initial snapshot");
    let l1_error = exec::sum_by(grid.len(), |k| {
        (last.n.values()[k] - barenblatt_cell_average(&grid, k, last.t, &exact)).abs()
    }) * grid.cell_volume();
    Ok(BarenblattCase {
        gamma,
        cells,
        half_width: grid.half_width(),
        h: grid.h(),
        l1_error,
        steps: out.steps,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Every `(gamma, N)` case, run as independent tasks, with measured orders.
pub fn barenblatt_study(setup: &BarenblattSetup, exec_mode: Execution) -> Result<BarenblattStudy> {
    if setup.cells.len() < 2 {
        return Err(Error::InvalidParameter(
            "refinement needs at least two resolutions".into(),
        ));
    }
    let jobs: Vec<(f64, usize)> = setup
        .gammas
        .iter()
        .flat_map(|&g| setup.cells.iter().map(move |&n| (g, n)))
        .collect();
    let cases = exec::map_tasks(&jobs, exec_mode, |&(g, n)| barenblatt_case(setup, g, n))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let orders = setup
        .gammas
        .iter()
        .map(|&gamma| {
            let mut rows: Vec<&BarenblattCase> =
                cases.iter().filter(|c| c.gamma == gamma).collect();
            rows.sort_by(|a, b| b.h.total_cmp(&a.h));
            let hs: Vec<f64> = rows.iter().map(|c| c.h).collect();
            let es: Vec<f64> = rows.iter().map(|c| c.l1_error).collect();
            let pairwise = rows
                .windows(2)
                .map(|w| (w[0].l1_error / w[1].l1_error).ln() / (w[0].h / w[1].h).ln())
                .collect();
            BarenblattOrder {
                gamma,
                order: log_slope(&hs, &es),
                pairwise,
                monotone: es.windows(2).all(|w| w[1] < w[0]),
            }
        })
        .collect();
    Ok(BarenblattStudy { cases, orders })
}
