//! Time stepping of the coupled density / nutrient system: explicit
//! conservative finite volumes for `n`, backward-Euler diffusion with
//! explicit reaction for `c`.

use serde::{Deserialize, Serialize};

use crate::analytic::{barenblatt_cell_average, BarenblattParams, SUPPORT_THRESHOLD};
use crate::error::{Error, Result};
use crate::grid::{self, Bc, Field, Grid};
use crate::linalg;
use crate::model::{self, pow_nonneg, ModelParams, ReactionSpec};
use crate::monitors::{MonitorAccumulator, MonitorConfig, MonitorReport, StepRow};

/// Negative densities smaller than this are clipped (and accounted); larger ones abort.
pub const CLIP_TOLERANCE: f64 = 1e-10;
/// Nutrient bounds are checked with this slack.
pub const NUTRIENT_TOLERANCE: f64 = 1e-9;
/// Relative residual required from the nutrient linear solve.
pub const LINEAR_TOLERANCE: f64 = 1e-10;
pub const LINEAR_MAX_ITER: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub n: Field,
    /// Always `n^gamma`.
    pub p: Field,
    pub c: Field,
}

impl State {
    pub fn new(t: f64, n: Field, c: Field, gamma: f64) -> Result<Self> {
        n.grid().ensure_same(c.grid())?;
        let p = model::pressure_field(&n, gamma)?;
        Ok(Self { t, n, p, c })
    }

    pub fn grid(&self) -> &Grid {
        self.n.grid()
    }

    pub fn mass(&self) -> f64 {
        grid::integral(&self.n)
    }

    /// Checks the invariants every accepted step must satisfy.
    pub fn check(&self, params: &ModelParams) -> Result<()> {
        for (name, f) in [("n", &self.n), ("p", &self.p), ("c", &self.c)] {
            if let Some(cell) = f.first_non_finite() {
                return Err(Error::NonFinite { field: name, cell });
            }
        }
        let n_h = params.n_h();
        let grid = self.grid();
        for (k, &v) in self.n.values().iter().enumerate() {
            if v < 0.0 || v > n_h + CLIP_TOLERANCE {
                return Err(Error::Invariant {
                    t: self.t,
                    detail: format!("n = {v} outside [0, {n_h}] at cell {k}"),
                });
            }
            if v > SUPPORT_THRESHOLD && grid.is_boundary_cell(k) {
                return Err(Error::Invariant {
                    t: self.t,
                    detail: format!("support reached the box boundary at cell {k}"),
                });
            }
        }
        for (k, &v) in self.c.values().iter().enumerate() {
            if v < -NUTRIENT_TOLERANCE || v > params.c_b + NUTRIENT_TOLERANCE {
                return Err(Error::Invariant {
                    t: self.t,
                    detail: format!("c = {v} outside [0, {}] at cell {k}", params.c_b),
                });
            }
        }
        Ok(())
    }
}

/// Time-ordered snapshots of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: ModelParams,
    pub spec: ReactionSpec,
    pub snapshots: Vec<State>,
    /// Every accepted time step, in order.
    pub dts: Vec<f64>,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        self.snapshots[0].grid()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn final_time(&self) -> f64 {
        self.snapshots.last().map_or(0.0, |s| s.t)
    }

    /// Snapshot closest to time `t`.
    pub fn at_time(&self, t: f64) -> &State {
        self.snapshots
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("trajectory has an initial snapshot")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NutrientInit {
    /// `c0 = c_B`.
    Uniform,
    /// `c0 = c_B (1 - amplitude * bump(|x| / radius))`.
    Deficit { amplitude: f64, radius: f64 },
}

impl NutrientInit {
    fn build(&self, grid: Grid, c_b: f64) -> Field {
        match *self {
            NutrientInit::Uniform => Field::constant(grid, c_b),
            NutrientInit::Deficit { amplitude, radius } => Field::from_fn(grid, |x, y| {
                let r = (x * x + y * y).sqrt();
                c_b * (1.0 - amplitude * grid::mollifier(r / radius) * std::f64::consts::E)
            }),
        }
    }
}

/// Initial-data builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case")]
pub enum InitialData {
    /// Plateau of pressure `pressure_fraction * p_H` on the ball of radius
    /// `radius - edge`, smoothly decaying to zero at `radius`;
    /// the density is `(p0)^(1/gamma)`, i.e. `theta * n_H` on the plateau.
    Plateau {
        radius: f64,
        edge: f64,
        pressure_fraction: f64,
        nutrient: NutrientInit,
    },
    /// Barenblatt profile of the density equation at `t = 0`.
    Barenblatt {
        mass: f64,
        t0: f64,
        nutrient: NutrientInit,
    },
    /// Density values per cell (e.g. loaded from a snapshot file).
    Values { n: Vec<f64>, c: Option<Vec<f64>> },
}

/// Smooth step from 1 (at `s <= 0`) to 0 (at `s >= 1`).
fn smooth_step_down(s: f64) -> f64 {
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let f = |x: f64| (-1.0 / x).exp();
        f(1.0 - s) / (f(1.0 - s) + f(s))
    }
}

/// Norms of the initial pressure reported alongside the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialReport {
    pub grad_p_l2: f64,
    pub lap_p_l2: f64,
    pub grad_c_l2: f64,
    pub mass: f64,
}

impl InitialData {
    pub fn build(&self, grid: Grid, params: &ModelParams) -> Result<State> {
        let gamma = params.gamma;
        let state = match self {
            InitialData::Plateau {
                radius,
                edge,
                pressure_fraction,
                nutrient,
            } => {
                if !(*radius > *edge
                    && *edge > 0.0
                    && *pressure_fraction > 0.0
                    && *pressure_fraction <= 1.0)
                {
                    return Err(Error::InvalidParameter(format!(
                        "plateau needs radius > edge > 0 and 0 < pressure_fraction <= 1 (got {radius}, {edge}, {pressure_fraction})"
                    )));
                }
                let p_top = pressure_fraction * params.p_h;
                let inner = radius - edge;
                let p = Field::from_fn(grid, |x, y| {
                    let r = (x * x + y * y).sqrt();
                    p_top * smooth_step_down((r - inner) / edge)
                });
                let n = model::density_field(&p, gamma)?;
                let c = nutrient.build(grid, params.c_b);
                // Keep p exactly consistent with the stored density.
                State::new(0.0, n, c, gamma)?
            }
            InitialData::Barenblatt { mass, t0, nutrient } => {
                let b = BarenblattParams::for_gamma(gamma, grid.dim(), *mass, *t0)?;
                let n = Field::from_vec(
                    grid,
                    (0..grid.len())
                        .map(|k| barenblatt_cell_average(&grid, k, 0.0, &b))
                        .collect(),
                )?;
                State::new(0.0, n, nutrient.build(grid, params.c_b), gamma)?
            }
            InitialData::Values { n, c } => {
                let n = Field::from_vec(grid, n.clone())?;
                let c = match c {
                    Some(c) => Field::from_vec(grid, c.clone())?,
                    None => Field::constant(grid, params.c_b),
                };
                State::new(0.0, n, c, gamma)?
            }
        };
        if state.n.max() > params.n_h() * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "initial density exceeds n_H = {}",
                params.n_h()
            )));
        }
        if state.n.min() < 0.0 || state.c.min() < 0.0 || state.c.max() > params.c_b * (1.0 + 1e-12)
        {
            return Err(Error::InvalidParameter(
                "initial data must satisfy 0 <= n0 and 0 <= c0 <= c_B".into(),
            ));
        }
        Ok(state)
    }
}

pub fn initial_report(state: &State) -> InitialReport {
    let grad = grid::grad_norm_sq(&state.p, Bc::ZERO);
    let lap = grid::laplacian(&state.p, Bc::ZERO);
    let c_b = state.c.values()[0].max(state.c.max());
    InitialReport {
        grad_p_l2: grid::integral(&grad).sqrt(),
        lap_p_l2: grid::abs_pow_integral(&lap, 2.0).sqrt(),
        grad_c_l2: grid::integral(&grid::grad_norm_sq(&state.c, Bc::Dirichlet(c_b))).sqrt(),
        mass: state.mass(),
    }
}

/// Stable explicit step: `safety * h^2 / (2 d gamma max p)`, also capped by
/// `safety / |G|_inf` and the explicit nutrient reaction rate.
pub fn cfl_dt(
    state: &State,
    params: &ModelParams,
    spec: &ReactionSpec,
    safety: f64,
) -> Result<f64> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "CFL safety must lie in (0, 1] (got {safety})"
        )));
    }
    for (name, f) in [("n", &state.n), ("p", &state.p), ("c", &state.c)] {
        if let Some(cell) = f.first_non_finite() {
            return Err(Error::NonFinite { field: name, cell });
        }
    }
    let grid = state.grid();
    let h = grid.h();
    let p_max = state.p.max();
    if !p_max.is_finite() {
        return Err(Error::NonFinite {
            field: "p",
            cell: 0,
        });
    }
    let diffusion = if p_max > 0.0 {
        safety * h * h / (2.0 * grid.dim() as f64 * params.gamma * p_max)
    } else {
        f64::INFINITY
    };
    let n = state.n.values();
    let p = state.p.values();
    let c = state.c.values();
    let g_max = crate::exec::max_by(n.len(), |k| spec.g(p[k], c[k]).abs());
    let uptake = crate::exec::max_by(n.len(), |k| n[k] + spec.k(p[k]));
    let mut dt = diffusion;
    if g_max > 0.0 {
        dt = dt.min(safety / g_max);
    }
    if uptake > 0.0
        && !matches!(
            spec.family,
            model::ReactionFamily::Constant { .. } | model::ReactionFamily::Inert
        )
    {
        dt = dt.min(safety / uptake);
    }
    if dt <= 0.0 || dt.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "degenerate time step {dt}"
        )));
    }
    Ok(dt)
}

#[derive(Debug, Clone)]
pub struct DensityStep {
    pub n: Field,
    pub p: Field,
    /// Mass removed (or added) by clipping to `[0, n_H]`.
    pub clipped_mass: f64,
}

/// One explicit step of `n_t - div(n grad p) = n G(p, c)`.
///
/// Face flux `F = -n_face (p_+ - p) / h` with arithmetic-mean mobility;
/// ghost cells carry `n = p = 0`.
pub fn step_density(
    state: &State,
    dt: f64,
    params: &ModelParams,
    spec: &ReactionSpec,
) -> Result<DensityStep> {
    let grid = *state.grid();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let n = state.n.values();
    let p = state.p.values();
    let c = state.c.values();
    let mut out = vec![0.0; grid.len()];
    crate::exec::fill_with(&mut out, |k| {
        let mut transport = 0.0;
        for axis in 0..grid.dim() {
            let (n_up, p_up) = grid
                .neighbor(k, axis, true)
                .map_or((0.0, 0.0), |m| (n[m], p[m]));
            let (n_dn, p_dn) = grid
                .neighbor(k, axis, false)
                .map_or((0.0, 0.0), |m| (n[m], p[m]));
            transport += 0.5 * (n[k] + n_up) * (p_up - p[k]) - 0.5 * (n[k] + n_dn) * (p[k] - p_dn);
        }
        n[k] + dt * (transport * inv_h2 + n[k] * spec.g(p[k], c[k]))
    });
    let n_h = params.n_h();
    let vol = grid.cell_volume();
    let mut clipped = 0.0;
    for (k, v) in out.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                field: "n",
                cell: k,
            });
        }
        if *v < 0.0 {
            if *v < -CLIP_TOLERANCE {
                return Err(Error::Invariant {
                    t: state.t + dt,
                    detail: format!("density {v:e} below clip tolerance at cell {k}"),
                });
            }
            clipped += v.abs() * vol;
            *v = 0.0;
        } else if *v > n_h {
            clipped += (*v - n_h) * vol;
            *v = n_h;
        }
    }
    let n_new = Field::from_vec(grid, out)?;
    let gamma = params.gamma;
    let p_new = n_new.map(|v| pow_nonneg(v, gamma));
    Ok(DensityStep {
        n: n_new,
        p: p_new,
        clipped_mass: clipped,
    })
}

/// Solves `(I - dt Lap) c+ = c + dt (-n H(c) + (c_B - c) K(p))` with `c = c_B`
/// in the ghost cells.
pub fn step_nutrient(
    state: &State,
    dt: f64,
    params: &ModelParams,
    spec: &ReactionSpec,
) -> Result<Field> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time step must be positive (got {dt})"
        )));
    }
    let grid = *state.grid();
    let c_b = params.c_b;
    let r = dt / (grid.h() * grid.h());
    let n = state.n.values();
    let p = state.p.values();
    let c = state.c.values();
    // Unknown is the deviation `c - c_B`, whose ghosts are zero.
    let mut rhs = vec![0.0; grid.len()];
    crate::exec::fill_with(&mut rhs, |k| {
        (c[k] - c_b) + dt * (-n[k] * spec.h(c[k]) + (c_b - c[k]) * spec.k(p[k]))
    });
    let mut x: Vec<f64> = c.iter().map(|&v| v - c_b).collect();
    if grid.dim() == 1 {
        solve_tridiagonal_1d(r, &rhs, &mut x);
        let mut ax = vec![0.0; x.len()];
        apply_implicit(&grid, r, &x, &mut ax);
        let res = (0..x.len())
            .map(|i| (rhs[i] - ax[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res > LINEAR_TOLERANCE * norm {
            return Err(Error::LinearSolver {
                iterations: 1,
                residual: res / norm,
                tol: LINEAR_TOLERANCE,
            });
        }
    } else {
        linalg::conjugate_gradient(
            |v, out| apply_implicit(&grid, r, v, out),
            &rhs,
            &mut x,
            LINEAR_TOLERANCE,
            LINEAR_MAX_ITER,
        )?;
    }
    Field::from_vec(grid, x.into_iter().map(|d| c_b + d).collect())
}

/// `out = (I - r h^2 Lap_0) v`, zero ghosts.
fn apply_implicit(grid: &Grid, r: f64, v: &[f64], out: &mut [f64]) {
    let grid = *grid;
    crate::exec::fill_with(out, |k| {
        let mut acc = 0.0;
        for axis in 0..grid.dim() {
            let up = grid.neighbor(k, axis, true).map_or(0.0, |m| v[m]);
            let dn = grid.neighbor(k, axis, false).map_or(0.0, |m| v[m]);
            acc += up - 2.0 * v[k] + dn;
        }
        v[k] - r * acc
    });
}

/// Thomas algorithm for `(1 + 2r) x_i - r (x_{i-1} + x_{i+1}) = b_i`.
fn solve_tridiagonal_1d(r: f64, b: &[f64], x: &mut [f64]) {
    let n = b.len();
    let diag = 1.0 + 2.0 * r;
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    c_prime[0] = -r / diag;
    d_prime[0] = b[0] / diag;
    for i in 1..n {
        let m = diag + r * c_prime[i - 1];
        c_prime[i] = -r / m;
        d_prime[i] = (b[i] + r * d_prime[i - 1]) / m;
    }
    x[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d_prime[i] - c_prime[i] * x[i + 1];
    }
}

/// Everything needed for one trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: ModelParams,
    pub spec: ReactionSpec,
    pub grid: Grid,
    pub initial: InitialData,
    pub t_final: f64,
    /// Snapshot spacing in time.
    pub snapshot_every: f64,
    pub safety: f64,
    pub monitors: MonitorConfig,
    /// Write a monitor CSV row every this many steps.
    pub monitor_stride: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub report: MonitorReport,
    pub step_rows: Vec<StepRow>,
    pub initial: InitialReport,
    pub steps: usize,
    pub clipped_mass: f64,
    /// Largest initial-or-current mass seen, the reference for clip accounting.
    pub reference_mass: f64,
}

impl RunOutput {
    pub fn clipped_fraction(&self) -> f64 {
        if self.reference_mass > 0.0 {
            self.clipped_mass / self.reference_mass
        } else {
            0.0
        }
    }
}

/// A failed run with everything computed before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub partial: Box<RunOutput>,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run failed at t = {}: {}",
            self.partial.trajectory.final_time(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<RunFailure> for Error {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

/// Integrates from `t = 0` to `t_final`, recording snapshots and monitors.
pub fn run(config: &RunConfig) -> std::result::Result<RunOutput, RunFailure> {
    let params = config.params;
    let spec = config.spec;
    let early = |error: Error, grid: Grid| RunFailure {
        partial: Box::new(RunOutput {
            trajectory: Trajectory {
                params,
                spec,
                snapshots: Vec::new(),
                dts: Vec::new(),
            },
            report: MonitorReport::empty(grid.dim()),
            step_rows: Vec::new(),
            initial: InitialReport {
                grad_p_l2: f64::NAN,
                lap_p_l2: f64::NAN,
                grad_c_l2: f64::NAN,
                mass: f64::NAN,
            },
            steps: 0,
            clipped_mass: 0.0,
            reference_mass: 0.0,
        }),
        error,
    };
    if let Err(e) = params.check() {
        return Err(early(e, config.grid));
    }
    if !(config.t_final >= 0.0 && config.snapshot_every > 0.0) {
        return Err(early(
            Error::InvalidParameter("t_final >= 0 and snapshot_every > 0 required".into()),
            config.grid,
        ));
    }
    let state = match config
        .initial
        .build(config.grid, &params)
        .and_then(|s| s.check(&params).map(|_| s))
    {
        Ok(s) => s,
        Err(e) => return Err(early(e, config.grid)),
    };
    let mut acc = match MonitorAccumulator::new(
        &config.monitors,
        &params,
        &spec,
        config.grid,
        config.t_final,
    ) {
        Ok(a) => a,
        Err(e) => return Err(early(e, config.grid)),
    };
    let initial = initial_report(&state);
    let mut out = RunOutput {
        trajectory: Trajectory {
            params,
            spec,
            snapshots: vec![state.clone()],
            dts: Vec::new(),
        },
        report: MonitorReport::empty(config.grid.dim()),
        step_rows: Vec::new(),
        initial,
        steps: 0,
        clipped_mass: 0.0,
        reference_mass: state.mass(),
    };
    acc.observe_snapshot(&state);

    let t_final = config.t_final;
    let every = config.snapshot_every;
    let stride = config.monitor_stride.max(1);
    let mut next_index = 1usize;
    let mut state = state;
    let time_eps = 1e-12 * t_final.max(1.0);

    let result: Result<()> = (|| {
        while state.t < t_final - time_eps {
            let target = (next_index as f64 * every).min(t_final);
            let mut dt = cfl_dt(&state, &params, &spec, config.safety)?;
            let mut hits_snapshot = false;
            if state.t + dt >= target - time_eps {
                dt = target - state.t;
                hits_snapshot = true;
            }
            let density = step_density(&state, dt, &params, &spec)?;
            let c_new = step_nutrient(&state, dt, &params, &spec)?;
            let t_new = if hits_snapshot { target } else { state.t + dt };
            let next = State {
                t: t_new,
                n: density.n,
                p: density.p,
                c: c_new,
            };
            next.check(&params)?;
            out.clipped_mass += density.clipped_mass;
            acc.observe_step(&state, &next, dt);
            out.trajectory.dts.push(dt);
            out.steps += 1;
            if out.steps.is_multiple_of(stride) {
                out.step_rows.push(acc.step_row(&next, dt));
            }
            out.reference_mass = out.reference_mass.max(next.mass());
            state = next;
            if hits_snapshot {
                acc.observe_snapshot(&state);
                out.trajectory.snapshots.push(state.clone());
                next_index += 1;
            }
        }
        Ok(())
    })();

    out.report = acc.finish();
    match result {
        Ok(()) => Ok(out),
        Err(error) => Err(RunFailure {
            partial: Box::new(out),
            error,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReactionFamily;
    use approx::assert_relative_eq;

    fn params(gamma: f64) -> ModelParams {
        ModelParams::new(gamma, 1.0, 2.0, 1.0, 0.1, 0.3).unwrap()
    }

    fn state_from(grid: Grid, n: impl Fn(f64) -> f64 + Sync + Send, c: f64, gamma: f64) -> State {
        State::new(
            0.0,
            Field::from_fn(grid, |x, _| n(x)),
            Field::constant(grid, c),
            gamma,
        )
        .unwrap()
    }

    #[test]
    fn cfl_examples() {
        // h = 0.01, gamma = 50, max p = 1, d = 1, safety = 0.4 -> 4e-7.
        let grid = Grid::new(1, 1.0, 200).unwrap();
        let pr = params(50.0);
        let inert = ReactionSpec::inert(&pr);
        let s = state_from(grid, |x| if x.abs() < 0.5 { 1.0 } else { 0.0 }, 1.0, 50.0);
        assert_relative_eq!(
            cfl_dt(&s, &pr, &inert, 0.4).unwrap(),
            4e-7,
            max_relative = 1e-12
        );
        // Doubling gamma halves the step.
        let s2 = State::new(0.0, s.n.clone(), s.c.clone(), 100.0).unwrap();
        assert_relative_eq!(
            cfl_dt(&s2, &params(100.0), &inert, 0.4).unwrap(),
            2e-7,
            max_relative = 1e-12
        );
        // Zero density: reaction caps alone, here the vessel supply K(0) = 1 over G(0, 1) = 0.6.
        let std = ReactionSpec::standard(&pr, 1.0, 0.1, 0.5);
        let empty = state_from(grid, |_| 0.0, 1.0, 50.0);
        let dt = cfl_dt(&empty, &pr, &std, 0.4).unwrap();
        assert_relative_eq!(dt, 0.4, max_relative = 1e-12);
        let growth = ReactionSpec::constant(&pr, 0.6);
        assert_relative_eq!(
            cfl_dt(&empty, &pr, &growth, 0.4).unwrap(),
            0.4 / 0.6,
            max_relative = 1e-12
        );
        assert!(cfl_dt(&empty, &pr, &std, 0.0).is_err());
        let mut bad = empty.clone();
        bad.c.values_mut()[3] = f64::NAN;
        assert!(matches!(
            cfl_dt(&bad, &pr, &std, 0.4),
            Err(Error::NonFinite {
                field: "c",
                cell: 3
            })
        ));
    }

    #[test]
    fn zero_density_is_a_fixed_point() {
        let grid = Grid::new(2, 1.0, 16).unwrap();
        let pr = params(10.0);
        let spec = ReactionSpec::standard(&pr, 1.0, 0.1, 0.5);
        let s = State::new(0.0, Field::zeros(grid), Field::constant(grid, 0.7), 10.0).unwrap();
        let out = step_density(&s, 0.1, &pr, &spec).unwrap();
        assert_eq!(out.n.abs_max(), 0.0);
        assert_eq!(out.clipped_mass, 0.0);
    }

    #[test]
    fn nutrient_fixed_point_and_maximum_principle() {
        let grid = Grid::new(1, 1.0, 50).unwrap();
        let pr = params(10.0);
        let spec = ReactionSpec::standard(&pr, 1.0, 0.1, 0.5);
        let s = State::new(0.0, Field::zeros(grid), Field::constant(grid, 1.0), 10.0).unwrap();
        let c = step_nutrient(&s, 1e-3, &pr, &spec).unwrap();
        assert!(c.values().iter().all(|&v| v == 1.0));
        let s2 = State::new(
            0.0,
            Field::zeros(Grid::new(2, 1.0, 12).unwrap()),
            Field::constant(Grid::new(2, 1.0, 12).unwrap(), 1.0),
            10.0,
        )
        .unwrap();
        assert!(step_nutrient(&s2, 1e-2, &pr, &spec)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 1.0));

        for grid in [
            Grid::new(1, 1.0, 64).unwrap(),
            Grid::new(2, 1.0, 24).unwrap(),
        ] {
            let n = Field::from_fn(grid, |x, y| (0.8 - x * x - y * y).max(0.0));
            let c0 = Field::from_fn(grid, |x, y| 0.3 + 0.6 * (x * y + 0.5 * x).abs().min(1.0));
            let s = State::new(0.0, n, c0.clone(), 10.0).unwrap();
            let c = step_nutrient(&s, 1e-2, &pr, &spec).unwrap();
            let lo = c0.min();
            for &v in c.values() {
                assert!(v >= lo - 1e-12 && v <= pr.c_b + 1e-12, "{v}");
            }
        }
        assert!(step_nutrient(&s, 0.0, &pr, &spec).is_err());
    }

    #[test]
    fn heat_equation_against_separable_solution() {
        // n = 0, K = 0: pure diffusion toward c_B. The ghost-value boundary sits at
        // +-(L + h/2), so the lowest mode is sin(pi (x + L + h/2) / (2L + h)).
        let pi = std::f64::consts::PI;
        let run_err = |cells: usize, dt: f64| {
            let grid = Grid::new(1, 1.0, cells).unwrap();
            let h = grid.h();
            let width = 2.0 + h;
            let mode = |x: f64| (pi * (x + 1.0 + 0.5 * h) / width).sin();
            let lambda = (pi / width).powi(2);
            let pr = params(10.0);
            let spec = ReactionSpec::inert(&pr);
            let amp = 0.4;
            let mut s = State::new(
                0.0,
                Field::zeros(grid),
                Field::from_fn(grid, |x, _| 1.0 - amp * mode(x)),
                10.0,
            )
            .unwrap();
            let t_end = 0.1;
            let steps = (t_end / dt).round() as usize;
            for _ in 0..steps {
                let c = step_nutrient(&s, dt, &pr, &spec).unwrap();
                s.c = c;
                s.t += dt;
            }
            (0..cells)
                .map(|k| {
                    let x = grid.center(k);
                    let exact = 1.0 - amp * (-lambda * t_end).exp() * mode(x);
                    (s.c.values()[k] - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let e1 = run_err(50, 1e-3);
        let e2 = run_err(100, 5e-4);
        assert!(e1 < 5e-3, "{e1}");
        // First order in time dominates: halving dt (and h) roughly halves the error.
        assert!(e1 / e2 > 1.7, "{e1} {e2}");
    }

    #[test]
    fn plateau_interior_follows_exponential_growth() {
        let grid = Grid::new(1, 2.0, 200).unwrap();
        let pr = ModelParams::new(4.0, 1.0, 2.0, 1.0, 0.1, 0.3).unwrap();
        let g = 0.5;
        let spec = ReactionSpec::constant(&pr, g);
        let n0 = 0.3;
        let mut s = state_from(grid, |x| if x.abs() < 1.0 { n0 } else { 0.0 }, 1.0, 4.0);
        let dt = 1e-3;
        for _ in 0..200 {
            let d = step_density(&s, dt, &pr, &spec).unwrap();
            s.n = d.n;
            s.p = d.p;
            s.t += dt;
        }
        let exact = n0 * (g * s.t).exp();
        let center = grid.cells() / 2;
        let disc = n0 * (1.0 + g * dt).powi(200);
        assert_relative_eq!(s.n.values()[center], disc, max_relative = 1e-12);
        assert!((s.n.values()[center] - exact).abs() <= g * g * s.t * dt * exact);
    }

    #[test]
    fn negative_undershoot_beyond_tolerance_aborts() {
        let grid = Grid::new(1, 1.0, 16).unwrap();
        let pr = params(2.0);
        let spec = ReactionSpec::constant(&pr, -2.0);
        let s = state_from(grid, |x| if x.abs() < 0.5 { 0.5 } else { 0.0 }, 1.0, 2.0);
        // dt * G < -1 drives n negative.
        let err = step_density(&s, 1.0, &pr, &spec).unwrap_err();
        assert!(matches!(err, Error::Invariant { .. }));
    }

    #[test]
    fn excess_over_homeostatic_density_is_clipped_and_counted() {
        let grid = Grid::new(1, 1.0, 16).unwrap();
        let pr = params(2.0);
        let spec = ReactionSpec::constant(&pr, 1.0);
        let s = state_from(grid, |x| if x.abs() < 0.5 { 0.9995 } else { 0.0 }, 1.0, 2.0);
        let dt = cfl_dt(&s, &pr, &spec, 0.4).unwrap();
        let out = step_density(&s, dt, &pr, &spec).unwrap();
        assert!(out.n.max() <= pr.n_h());
        assert!(out.clipped_mass > 0.0);
        let _ = ReactionFamily::Inert;
    }

    #[test]
    fn plateau_builder_respects_bounds() {
        let grid = Grid::new(1, 2.0, 100).unwrap();
        let pr = params(20.0);
        let init = InitialData::Plateau {
            radius: 0.5,
            edge: 0.25,
            pressure_fraction: 0.5,
            nutrient: NutrientInit::Uniform,
        };
        let s = init.build(grid, &pr).unwrap();
        assert_relative_eq!(s.p.max(), 0.5, max_relative = 1e-12);
        assert_relative_eq!(s.n.max(), 0.5f64.powf(1.0 / 20.0), max_relative = 1e-12);
        assert!(s
            .n
            .values()
            .iter()
            .zip(grid_centers(&grid))
            .all(|(&n, x)| x.abs() < 0.5 || n == 0.0));
        let report = initial_report(&s);
        assert!(report.grad_p_l2.is_finite() && report.lap_p_l2.is_finite());
        let bad = InitialData::Plateau {
            radius: 0.5,
            edge: 0.6,
            pressure_fraction: 0.5,
            nutrient: NutrientInit::Uniform,
        };
        assert!(bad.build(grid, &pr).is_err());
        let deficit = InitialData::Plateau {
            radius: 0.5,
            edge: 0.25,
            pressure_fraction: 0.5,
            nutrient: NutrientInit::Deficit {
                amplitude: 0.5,
                radius: 1.0,
            },
        };
        let s = deficit.build(grid, &pr).unwrap();
        assert_relative_eq!(s.c.min(), 0.5, max_relative = 1e-3);
        assert!(s.c.max() <= 1.0);
    }

    fn grid_centers(grid: &Grid) -> Vec<f64> {
        (0..grid.cells()).map(|i| grid.center(i)).collect()
    }
}
