//! Estimate quantities along a trajectory: per-snapshot norms and
//! space-time accumulators (left-endpoint rule in time, midpoint in space).

use serde::{Deserialize, Serialize};

use crate::analytic::SUPPORT_THRESHOLD;
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{self, Bc, Field, Grid, TestFunction};
use crate::model::{ModelParams, ReactionSpec};
use crate::solver::{State, Trajectory};

/// Which monitors a run evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    /// Accumulate the space-time integrals at every step.
    pub accumulate: bool,
    /// Require the Aronson-Benilan hypothesis on `gamma`.
    pub aronson_benilan: bool,
    /// Also accumulate the weighted `|w|_-^3` integral.
    pub weighted: bool,
    /// Test functions for the complementarity identity.
    pub tests: Vec<TestFunction>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            accumulate: true,
            aronson_benilan: true,
            weighted: true,
            tests: Vec::new(),
        }
    }
}

impl MonitorConfig {
    /// Snapshot rows only.
    pub fn none() -> Self {
        Self {
            accumulate: false,
            aronson_benilan: false,
            weighted: false,
            tests: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Weight

/// `Phi = exp(-sqrt(1 + |x|^2))` with its analytic gradient norm and Laplacian.
#[derive(Debug, Clone)]
pub struct WeightFunction {
    pub phi: Field,
    pub grad_norm: Field,
    pub laplacian: Field,
    /// Measured `max |Lap Phi| / Phi`.
    pub c_phi: f64,
}

impl WeightFunction {
    pub fn standard(grid: Grid) -> Result<Self> {
        let d = grid.dim() as f64;
        let s = |x: f64, y: f64| (1.0 + x * x + y * y).sqrt();
        let phi = Field::from_fn(grid, move |x, y| (-s(x, y)).exp());
        let grad_norm = Field::from_fn(grid, move |x, y| {
            let s = s(x, y);
            (-s).exp() * (x * x + y * y).sqrt() / s
        });
        let laplacian = Field::from_fn(grid, move |x, y| {
            let r2 = x * x + y * y;
            let s = s(x, y);
            (-s).exp() * (r2 / (s * s) - 1.0 / (s * s * s) - (d - 1.0) / s)
        });
        Self::from_fields(phi, grad_norm, laplacian)
    }

    /// Checks `|grad Phi| <= Phi` and `Phi > 0` cell by cell and measures `C_Phi`.
    pub fn from_fields(phi: Field, grad_norm: Field, laplacian: Field) -> Result<Self> {
        phi.grid().ensure_same(grad_norm.grid())?;
        phi.grid().ensure_same(laplacian.grid())?;
        let mut c_phi: f64 = 0.0;
        for (k, ((&f, &g), &l)) in phi
            .values()
            .iter()
            .zip(grad_norm.values())
            .zip(laplacian.values())
            .enumerate()
        {
            if !(f > 0.0 && f.is_finite() && g.is_finite() && l.is_finite()) {
                return Err(Error::Weight {
                    cell: k,
                    detail: format!("Phi = {f}, |grad Phi| = {g}, Lap Phi = {l}"),
                });
            }
            if g > f {
                return Err(Error::Weight {
                    cell: k,
                    detail: format!("|grad Phi| = {g:e} exceeds Phi = {f:e}"),
                });
            }
            c_phi = c_phi.max(l.abs() / f);
        }
        Ok(Self {
            phi,
            grad_norm,
            laplacian,
            c_phi,
        })
    }

    /// True when `|grad Phi| <= Phi` and `|Lap Phi| <= C_Phi Phi` at every node.
    pub fn bounds_hold(&self) -> bool {
        let f = self.phi.values();
        let g = self.grad_norm.values();
        let l = self.laplacian.values();
        (0..f.len()).all(|k| g[k] <= f[k] && l[k].abs() <= self.c_phi * f[k] * (1.0 + 1e-15))
    }
}

// ---------------------------------------------------------------------------
// Pointwise functionals

/// `w = Lap p + G(p, c)` with Dirichlet-zero `p`.
pub fn ab_field(state: &State, spec: &ReactionSpec) -> Field {
    let lap = grid::laplacian(&state.p, Bc::ZERO);
    let g = spec.g_field(&state.p, &state.c);
    lap.zip_map(&g, |a, b| a + b)
}

/// `max_cells p (1 - n)`.
pub fn graph_residual(state: &State) -> f64 {
    let p = state.p.values();
    let n = state.n.values();
    exec::max_by(p.len(), |k| p[k] * (1.0 - n[k])).max(0.0)
}

/// `int |grad p|^2 / 2 - Gbar(p, c)` with `Gbar = int_0^p G(q, c) dq`.
pub fn energy(state: &State, spec: &ReactionSpec) -> f64 {
    let grad = grid::grad_norm_sq(&state.p, Bc::ZERO);
    let g = grad.values();
    let p = state.p.values();
    let c = state.c.values();
    exec::sum_by(g.len(), |k| 0.5 * g[k] - spec.g_primitive(p[k], c[k]))
        * state.grid().cell_volume()
}

/// Norms of one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub t: f64,
    pub n_l1: f64,
    pub n_l2: f64,
    pub n_linf: f64,
    pub p_l1: f64,
    pub p_l2: f64,
    pub p_linf: f64,
    /// Norms of `c - c_B`.
    pub c_dev_l1: f64,
    pub c_dev_l2: f64,
    pub c_dev_linf: f64,
    pub grad_c_l2: f64,
    pub grad_c_linf: f64,
    pub grad_p_l2: f64,
    pub grad_p_linf: f64,
    pub energy: f64,
    pub graph_residual: f64,
    /// Largest cell-center radius with `n > SUPPORT_THRESHOLD`.
    pub support_radius: f64,
}

impl SnapshotRow {
    pub fn of(state: &State, params: &ModelParams, spec: &ReactionSpec) -> Self {
        let grid = *state.grid();
        let vol = grid.cell_volume();
        let n = state.n.values();
        let p = state.p.values();
        let c = state.c.values();
        let c_b = params.c_b;
        let gc = grid::grad_norm_sq(&state.c, Bc::Dirichlet(c_b));
        let gp = grid::grad_norm_sq(&state.p, Bc::ZERO);
        let (gc, gp) = (gc.values(), gp.values());
        let [n1, n2, p1, p2, c1, c2, gc2, gp2, e] = exec::sum_many(n.len(), |k| {
            let dc = c[k] - c_b;
            [
                n[k].abs(),
                n[k] * n[k],
                p[k].abs(),
                p[k] * p[k],
                dc.abs(),
                dc * dc,
                gc[k],
                gp[k],
                0.5 * gp[k] - spec.g_primitive(p[k], c[k]),
            ]
        });
        let support_radius = exec::max_by(n.len(), |k| {
            if n[k] > SUPPORT_THRESHOLD {
                grid.radius_sq(k).sqrt()
            } else {
                0.0
            }
        });
        Self {
            t: state.t,
            n_l1: n1 * vol,
            n_l2: (n2 * vol).sqrt(),
            n_linf: state.n.abs_max(),
            p_l1: p1 * vol,
            p_l2: (p2 * vol).sqrt(),
            p_linf: state.p.abs_max(),
            c_dev_l1: c1 * vol,
            c_dev_l2: (c2 * vol).sqrt(),
            c_dev_linf: exec::max_by(c.len(), |k| (c[k] - c_b).abs()),
            grad_c_l2: (gc2 * vol).sqrt(),
            grad_c_linf: exec::max_by(gc.len(), |k| gc[k]).sqrt(),
            grad_p_l2: (gp2 * vol).sqrt(),
            grad_p_linf: exec::max_by(gp.len(), |k| gp[k]).sqrt(),
            energy: e * vol,
            graph_residual: graph_residual(state),
            support_radius,
        }
    }

    /// `||p||_1 <= p_H^((gamma-1)/gamma) ||n||_1`, up to roundoff.
    pub fn pressure_l1_bound_holds(&self, params: &ModelParams) -> bool {
        let factor = params.p_h.powf((params.gamma - 1.0) / params.gamma);
        self.p_l1 <= factor * self.n_l1 * (1.0 + 1e-12)
    }
}

// ---------------------------------------------------------------------------
// Space-time accumulators

/// Space-time integrals `int_0^T int ... dx dt`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeTotals {
    /// Time covered.
    pub time: f64,
    /// `int int |w|_-^3`.
    pub ab_neg_l3: f64,
    pub w_pos_l1: f64,
    pub w_neg_l1: f64,
    pub w_abs_l1: f64,
    /// `int int w`, signed.
    pub w_signed: f64,
    pub lap_p_l1: f64,
    pub g_l1: f64,
    pub grad_p_l4: f64,
    /// `int int |grad p|^2`, centered differences.
    pub grad_p_l2sq: f64,
    /// Same with one-sided differences on every face.
    pub grad_p_face_l2sq: f64,
    pub p_l1: f64,
    pub n_l1: f64,
    /// `(gamma - 1) int int p |w|^2`.
    pub dissipation_w: f64,
    /// `int int p sum_ij (d_ij p)^2`.
    pub dissipation_hessian: f64,
    pub grad_c_l4: f64,
    pub lap_c_l2sq: f64,
    pub dt_c_l2sq: f64,
    pub dt_n_l1: f64,
    pub dt_p_l1: f64,
    /// `int int |w|_-^3 Phi`, zero unless the weight is enabled.
    pub weighted_ab_l3: f64,
}

impl SpacetimeTotals {
    pub const COLUMNS: [&'static str; 21] = [
        "time",
        "ab_neg_l3",
        "w_pos_l1",
        "w_neg_l1",
        "w_abs_l1",
        "w_signed",
        "lap_p_l1",
        "g_l1",
        "grad_p_l4",
        "grad_p_l2sq",
        "grad_p_face_l2sq",
        "p_l1",
        "n_l1",
        "dissipation_w",
        "dissipation_hessian",
        "grad_c_l4",
        "lap_c_l2sq",
        "dt_c_l2sq",
        "dt_n_l1",
        "dt_p_l1",
        "weighted_ab_l3",
    ];

    pub fn values(&self) -> [f64; 21] {
        [
            self.time,
            self.ab_neg_l3,
            self.w_pos_l1,
            self.w_neg_l1,
            self.w_abs_l1,
            self.w_signed,
            self.lap_p_l1,
            self.g_l1,
            self.grad_p_l4,
            self.grad_p_l2sq,
            self.grad_p_face_l2sq,
            self.p_l1,
            self.n_l1,
            self.dissipation_w,
            self.dissipation_hessian,
            self.grad_c_l4,
            self.lap_c_l2sq,
            self.dt_c_l2sq,
            self.dt_n_l1,
            self.dt_p_l1,
            self.weighted_ab_l3,
        ]
    }

    fn from_values(v: [f64; 21]) -> Self {
        Self {
            time: v[0],
            ab_neg_l3: v[1],
            w_pos_l1: v[2],
            w_neg_l1: v[3],
            w_abs_l1: v[4],
            w_signed: v[5],
            lap_p_l1: v[6],
            g_l1: v[7],
            grad_p_l4: v[8],
            grad_p_l2sq: v[9],
            grad_p_face_l2sq: v[10],
            p_l1: v[11],
            n_l1: v[12],
            dissipation_w: v[13],
            dissipation_hessian: v[14],
            grad_c_l4: v[15],
            lap_c_l2sq: v[16],
            dt_c_l2sq: v[17],
            dt_n_l1: v[18],
            dt_p_l1: v[19],
            weighted_ab_l3: v[20],
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        let (a, b) = (self.values(), other.values());
        Self::from_values(std::array::from_fn(|i| a[i] + b[i]))
    }

    /// `int int |w|_+ <= |int int w| + int int |w|_-`.
    pub fn ab_chain_holds(&self) -> bool {
        self.w_pos_l1 <= (self.w_signed.abs() + self.w_neg_l1) * (1.0 + 1e-12) + 1e-300
    }

    /// `int int |Lap p| <= int int |w| + int int |G|`.
    pub fn laplacian_chain_holds(&self) -> bool {
        self.lap_p_l1 <= (self.w_abs_l1 + self.g_l1) * (1.0 + 1e-12) + 1e-300
    }

    /// `(1/4) int int |grad c|^4 <= (9/2) c_B^2 int int |Lap c|^2`.
    pub fn nutrient_inequality_holds(&self, c_b: f64) -> bool {
        0.25 * self.grad_c_l4 <= 4.5 * c_b * c_b * self.lap_c_l2sq
    }
}

/// Both sides of the weak complementarity identity for one test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complementarity {
    pub test: TestFunction,
    pub gamma: f64,
    /// `-(1/gamma) int int (p d_t zeta + |grad p|^2 zeta)`.
    pub lhs: f64,
    /// `int int p zeta (Lap p + G)`.
    pub rhs: f64,
    /// `||p||_{L1(Q_T)}`.
    pub p_l1: f64,
    /// `||grad p||^2_{L2(Q_T)}`, face differences.
    pub grad_p_l2sq: f64,
    /// Measured `sup |d_t zeta|` and `sup |zeta|` over the quadrature nodes.
    pub dt_zeta_sup: f64,
    pub zeta_sup: f64,
}

impl Complementarity {
    fn empty(test: TestFunction, gamma: f64) -> Self {
        Self {
            test,
            gamma,
            lhs: 0.0,
            rhs: 0.0,
            p_l1: 0.0,
            grad_p_l2sq: 0.0,
            dt_zeta_sup: 0.0,
            zeta_sup: 0.0,
        }
    }

    /// `(1/gamma) (||p||_1 sup|d_t zeta| + ||grad p||_2^2 sup|zeta|)`.
    pub fn lhs_bound(&self) -> f64 {
        (self.p_l1 * self.dt_zeta_sup + self.grad_p_l2sq * self.zeta_sup) / self.gamma
    }

    pub fn bound_holds(&self) -> bool {
        self.lhs.abs() <= self.lhs_bound() * (1.0 + 1e-12)
    }

    /// Discrete consistency defect `|lhs - rhs|`.
    pub fn defect(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Everything the monitors measured over one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub dim: usize,
    pub rows: Vec<SnapshotRow>,
    pub totals: SpacetimeTotals,
    pub complementarity: Vec<Complementarity>,
    /// `C_Phi` of the weight, when enabled.
    pub weight_constant: Option<f64>,
    /// Largest graph residual over every observed state.
    pub graph_residual_max: f64,
}

impl MonitorReport {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            totals: SpacetimeTotals::default(),
            complementarity: Vec::new(),
            weight_constant: None,
            graph_residual_max: 0.0,
        }
    }
}

/// One row of the per-step monitor CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRow {
    pub t: f64,
    pub dt: f64,
    pub graph_residual: f64,
    pub totals: SpacetimeTotals,
}

impl StepRow {
    pub fn header() -> Vec<&'static str> {
        let mut h = vec!["t", "dt", "graph_residual"];
        h.extend_from_slice(&SpacetimeTotals::COLUMNS);
        h
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.t, self.dt, self.graph_residual];
        v.extend_from_slice(&self.totals.values());
        v
    }
}

/// Streams states in time order and accumulates every monitor.
#[derive(Debug, Clone)]
pub struct MonitorAccumulator {
    config: MonitorConfig,
    params: ModelParams,
    spec: ReactionSpec,
    zetas: Vec<(TestFunction, Field, f64)>,
    weight: Option<WeightFunction>,
    report: MonitorReport,
}

impl MonitorAccumulator {
    pub fn new(
        config: &MonitorConfig,
        params: &ModelParams,
        spec: &ReactionSpec,
        grid: Grid,
        t_final: f64,
    ) -> Result<Self> {
        if config.aronson_benilan {
            params.check_ab_hypothesis(grid.dim())?;
        }
        let mut zetas = Vec::new();
        for test in &config.tests {
            test.check_support(&grid, t_final)?;
            let field = test.spatial_field(grid);
            let sup = field.max();
            zetas.push((*test, field, sup));
        }
        let weight = if config.weighted && config.accumulate {
            Some(WeightFunction::standard(grid)?)
        } else {
            None
        };
        let mut report = MonitorReport::empty(grid.dim());
        report.weight_constant = weight.as_ref().map(|w| w.c_phi);
        report.complementarity = config
            .tests
            .iter()
            .map(|t| Complementarity::empty(*t, params.gamma))
            .collect();
        Ok(Self {
            config: config.clone(),
            params: *params,
            spec: *spec,
            zetas,
            weight,
            report,
        })
    }

    pub fn observe_snapshot(&mut self, state: &State) {
        let row = SnapshotRow::of(state, &self.params, &self.spec);
        self.report.graph_residual_max = self.report.graph_residual_max.max(row.graph_residual);
        self.report.rows.push(row);
    }

    /// Adds the contribution of `[old.t, old.t + dt]`, integrands frozen at `old`.
    pub fn observe_step(&mut self, old: &State, new: &State, dt: f64) {
        self.report.graph_residual_max = self.report.graph_residual_max.max(graph_residual(new));
        if !self.config.accumulate {
            return;
        }
        let totals = step_totals(old, new, dt, &self.params, &self.spec, self.weight.as_ref());
        self.report.totals = self.report.totals.plus(&totals);
        for ((test, zeta, sup), comp) in self
            .zetas
            .iter()
            .zip(self.report.complementarity.iter_mut())
        {
            let (psi, dpsi) = test.temporal_factor(old.t);
            comp.p_l1 += totals.p_l1;
            comp.grad_p_l2sq += totals.grad_p_face_l2sq;
            if psi == 0.0 && dpsi == 0.0 {
                continue;
            }
            let (lhs, rhs) = complementarity_step(old, zeta, psi, dpsi, &self.params, &self.spec);
            comp.lhs += lhs * dt;
            comp.rhs += rhs * dt;
            comp.zeta_sup = comp.zeta_sup.max(psi.abs() * sup);
            comp.dt_zeta_sup = comp.dt_zeta_sup.max(dpsi.abs() * sup);
        }
    }

    pub fn step_row(&self, state: &State, dt: f64) -> StepRow {
        StepRow {
            t: state.t,
            dt,
            graph_residual: graph_residual(state),
            totals: self.report.totals,
        }
    }

    pub fn report(&self) -> &MonitorReport {
        &self.report
    }

    pub fn finish(self) -> MonitorReport {
        self.report
    }
}

fn step_totals(
    old: &State,
    new: &State,
    dt: f64,
    params: &ModelParams,
    spec: &ReactionSpec,
    weight: Option<&WeightFunction>,
) -> SpacetimeTotals {
    let grid = *old.grid();
    let vol = grid.cell_volume();
    let inv_h = 1.0 / grid.h();
    let gamma = params.gamma;
    let (n, p, c) = (old.n.values(), old.p.values(), old.c.values());
    let (n1, p1, c1) = (new.n.values(), new.p.values(), new.c.values());
    let lap = grid::laplacian(&old.p, Bc::ZERO);
    let gp = grid::grad_norm_sq(&old.p, Bc::ZERO);
    let hess = grid::hessian_norm_sq(&old.p, Bc::ZERO);
    let gc = grid::grad_norm_sq(&old.c, Bc::Dirichlet(params.c_b));
    let lapc = grid::laplacian(&old.c, Bc::Dirichlet(params.c_b));
    let (lap, gp, hess, gc, lapc) = (
        lap.values(),
        gp.values(),
        hess.values(),
        gc.values(),
        lapc.values(),
    );
    let phi = weight.map(|w| w.phi.values());
    let sums: [f64; 20] = exec::sum_many(grid.len(), |k| {
        let g = spec.g(p[k], c[k]);
        let w = lap[k] + g;
        let w_neg = (-w).max(0.0);
        let w_neg3 = w_neg * w_neg * w_neg;
        let mut face = 0.0;
        for axis in 0..grid.dim() {
            let up = grid.neighbor(k, axis, true).map_or(0.0, |m| p[m]);
            let d = (up - p[k]) * inv_h;
            face += d * d;
            if grid.neighbor(k, axis, false).is_none() {
                let d = p[k] * inv_h;
                face += d * d;
            }
        }
        let dc = c1[k] - c[k];
        [
            w_neg3,
            w.max(0.0),
            w_neg,
            w.abs(),
            w,
            lap[k].abs(),
            g.abs(),
            gp[k] * gp[k],
            gp[k],
            face,
            p[k].abs(),
            n[k].abs(),
            (gamma - 1.0) * p[k] * w * w,
            p[k] * hess[k],
            gc[k] * gc[k],
            lapc[k] * lapc[k],
            dc * dc,
            (n1[k] - n[k]).abs(),
            (p1[k] - p[k]).abs(),
            phi.map_or(0.0, |phi| w_neg3 * phi[k]),
        ]
    });
    let s = |i: usize| sums[i] * vol * dt;
    SpacetimeTotals {
        time: dt,
        ab_neg_l3: s(0),
        w_pos_l1: s(1),
        w_neg_l1: s(2),
        w_abs_l1: s(3),
        w_signed: s(4),
        lap_p_l1: s(5),
        g_l1: s(6),
        grad_p_l4: s(7),
        grad_p_l2sq: s(8),
        grad_p_face_l2sq: s(9),
        p_l1: s(10),
        n_l1: s(11),
        dissipation_w: s(12),
        dissipation_hessian: s(13),
        grad_c_l4: s(14),
        lap_c_l2sq: s(15),
        dt_c_l2sq: sums[16] * vol / dt,
        dt_n_l1: sums[17] * vol,
        dt_p_l1: sums[18] * vol,
        weighted_ab_l3: s(19),
    }
}

/// Spatial integrands of both sides at one time, `zeta = psi(t) zeta_s(x)`.
///
/// The gradient term lives on faces with `zeta` averaged to the face, so that
/// summation by parts turns `sum p zeta Lap p` into `-sum (zeta |D+ p|^2 + pbar D+p D+zeta)`.
fn complementarity_step(
    state: &State,
    zeta: &Field,
    psi: f64,
    dpsi: f64,
    params: &ModelParams,
    spec: &ReactionSpec,
) -> (f64, f64) {
    let grid = *state.grid();
    let inv_h = 1.0 / grid.h();
    let inv_h2 = inv_h * inv_h;
    let p = state.p.values();
    let c = state.c.values();
    let z = zeta.values();
    let [pz, face, pzw] = exec::sum_many(grid.len(), |k| {
        if z[k] == 0.0
            && (0..grid.dim()).all(|a| grid.neighbor(k, a, true).is_none_or(|m| z[m] == 0.0))
        {
            return [0.0; 3];
        }
        let mut lap = 0.0;
        let mut face = 0.0;
        for axis in 0..grid.dim() {
            let (up, z_up) = grid
                .neighbor(k, axis, true)
                .map_or((0.0, 0.0), |m| (p[m], z[m]));
            let dn = grid.neighbor(k, axis, false).map_or(0.0, |m| p[m]);
            lap += up - 2.0 * p[k] + dn;
            let d = (up - p[k]) * inv_h;
            face += 0.5 * (z[k] + z_up) * d * d;
            if grid.neighbor(k, axis, false).is_none() {
                face += 0.5 * z[k] * p[k] * p[k] * inv_h2;
            }
        }
        let w = lap * inv_h2 + spec.g(p[k], c[k]);
        [p[k] * z[k], face, p[k] * z[k] * w]
    });
    let vol = grid.cell_volume();
    let lhs = -(dpsi * pz + psi * face) * vol / params.gamma;
    let rhs = psi * pzw * vol;
    (lhs, rhs)
}

// ---------------------------------------------------------------------------
// Trajectory replays: snapshot windows `[t_i, t_{i+1}]`, integrands at `t_i`.

/// Recomputes every monitor from the stored snapshots of a trajectory.
pub fn replay(trajectory: &Trajectory, config: &MonitorConfig) -> Result<MonitorReport> {
    let first = trajectory
        .snapshots
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty trajectory".into()))?;
    let grid = *first.grid();
    let mut acc = MonitorAccumulator::new(
        config,
        &trajectory.params,
        &trajectory.spec,
        grid,
        trajectory.final_time(),
    )?;
    acc.observe_snapshot(first);
    for pair in trajectory.snapshots.windows(2) {
        pair[1].grid().ensure_same(&grid)?;
        let dt = pair[1].t - pair[0].t;
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "snapshot times not increasing at t = {}",
                pair[1].t
            )));
        }
        acc.observe_step(&pair[0], &pair[1], dt);
        acc.observe_snapshot(&pair[1]);
    }
    Ok(acc.finish())
}

fn replay_totals(trajectory: &Trajectory, weighted: bool) -> Result<SpacetimeTotals> {
    let config = MonitorConfig {
        accumulate: true,
        aronson_benilan: false,
        weighted,
        tests: Vec::new(),
    };
    Ok(replay(trajectory, &config)?.totals)
}

/// `int_0^T int |w|_-^3`.
pub fn ab_negative_l3(trajectory: &Trajectory) -> Result<f64> {
    Ok(replay_totals(trajectory, false)?.ab_neg_l3)
}

/// `int_0^T int |Lap p|`.
pub fn laplacian_l1(trajectory: &Trajectory) -> Result<f64> {
    Ok(replay_totals(trajectory, false)?.lap_p_l1)
}

/// `int_0^T int |grad p|^4`.
pub fn grad_p_l4(trajectory: &Trajectory) -> Result<f64> {
    Ok(replay_totals(trajectory, false)?.grad_p_l4)
}

/// `((gamma - 1) int int p |w|^2, int int p sum_ij (d_ij p)^2)`.
pub fn dissipation(trajectory: &Trajectory) -> Result<(f64, f64)> {
    let t = replay_totals(trajectory, false)?;
    Ok((t.dissipation_w, t.dissipation_hessian))
}

/// `int_0^T int |w|_-^3 Phi` with the weight checked on the trajectory's grid.
pub fn weighted_ab_l3(trajectory: &Trajectory, weight: &WeightFunction) -> Result<f64> {
    let grid = *trajectory.grid();
    grid.ensure_same(weight.phi.grid())?;
    WeightFunction::from_fields(
        weight.phi.clone(),
        weight.grad_norm.clone(),
        weight.laplacian.clone(),
    )?;
    let mut total = SpacetimeTotals::default();
    for pair in trajectory.snapshots.windows(2) {
        let dt = pair[1].t - pair[0].t;
        let s = step_totals(
            &pair[0],
            &pair[1],
            dt,
            &trajectory.params,
            &trajectory.spec,
            Some(weight),
        );
        total = total.plus(&s);
    }
    Ok(total.weighted_ab_l3)
}

pub fn complementarity_residual(
    trajectory: &Trajectory,
    test: &TestFunction,
) -> Result<Complementarity> {
    let config = MonitorConfig {
        accumulate: true,
        aronson_benilan: false,
        weighted: false,
        tests: vec![*test],
    };
    Ok(replay(trajectory, &config)?.complementarity[0])
}

/// Per-snapshot rows plus the accumulated direct estimates.
pub fn direct_estimates(trajectory: &Trajectory) -> Result<(Vec<SnapshotRow>, SpacetimeTotals)> {
    let config = MonitorConfig {
        accumulate: true,
        aronson_benilan: false,
        weighted: false,
        tests: Vec::new(),
    };
    let report = replay(trajectory, &config)?;
    Ok((report.rows, report.totals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::graph_bound;
    use approx::assert_relative_eq;

    fn params(gamma: f64) -> ModelParams {
        ModelParams::new(gamma, 1.0, 2.0, 1.0, 0.1, 0.3).unwrap()
    }

    fn standard(pr: &ModelParams) -> ReactionSpec {
        ReactionSpec::standard(pr, 1.0, 0.1, 0.5)
    }

    /// Builds a state directly from a pressure field (density `p^(1/gamma)`).
    fn state_from_p(t: f64, p: Field, c: Field, gamma: f64) -> State {
        let n = p.map(|v| v.powf(1.0 / gamma));
        State { t, n, p, c }
    }

    fn frozen(
        grid: Grid,
        p: impl Fn(f64, f64) -> f64 + Sync + Send + Copy,
        times: &[f64],
        gamma: f64,
        spec: ReactionSpec,
    ) -> Trajectory {
        let pr = params(gamma);
        Trajectory {
            params: pr,
            spec,
            snapshots: times
                .iter()
                .map(|&t| {
                    state_from_p(
                        t,
                        Field::from_fn(grid, p),
                        Field::constant(grid, 1.0),
                        gamma,
                    )
                })
                .collect(),
            dts: times.windows(2).map(|w| w[1] - w[0]).collect(),
        }
    }

    #[test]
    fn ab_field_examples() {
        let grid = Grid::new(1, 2.0, 400).unwrap();
        let pr = params(10.0);
        let spec = standard(&pr);
        // Plateau: w = G(p0, c) well inside.
        let s = state_from_p(
            0.0,
            Field::from_fn(grid, |x, _| if x.abs() < 1.0 { 0.4 } else { 0.0 }),
            Field::constant(grid, 0.7),
            10.0,
        );
        let w = ab_field(&s, &spec);
        let mid = grid.cells() / 2;
        assert_relative_eq!(w.values()[mid], spec.g(0.4, 0.7), epsilon = 1e-12);
        // Parabola with G = 0: w = -2 where p > 0, away from the kink.
        let inert = ReactionSpec::inert(&pr);
        let s = state_from_p(
            0.0,
            Field::from_fn(grid, |x, _| (1.0 - x * x).max(0.0)),
            Field::constant(grid, 1.0),
            10.0,
        );
        let w = ab_field(&s, &inert);
        for k in 0..grid.cells() {
            if grid.center(k).abs() < 0.95 {
                assert_relative_eq!(w.values()[k], -2.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn static_parabola_gradient_l4() {
        let at = |cells| {
            let grid = Grid::new(1, 2.0, cells).unwrap();
            let traj = frozen(
                grid,
                |x, _| (1.0 - x * x).max(0.0),
                &[0.0, 1.0],
                10.0,
                ReactionSpec::inert(&params(10.0)),
            );
            grad_p_l4(&traj).unwrap()
        };
        let (coarse, fine) = (at(2000), at(4000));
        // First order from the kink cells at |x| = 1; Richardson removes it.
        assert_relative_eq!((6.4 - coarse) / (6.4 - fine), 2.0, max_relative = 1e-2);
        assert_relative_eq!(2.0 * fine - coarse, 6.4, max_relative = 1e-5);
    }

    #[test]
    fn zero_pressure_trajectory() {
        let grid = Grid::new(2, 1.0, 20).unwrap();
        let pr = params(10.0);
        let spec = standard(&pr);
        let c = Field::from_fn(grid, |x, y| 0.05 + 0.2 * (x * x + y * y));
        let snaps: Vec<State> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&t| State::new(t, Field::zeros(grid), c.clone(), 10.0).unwrap())
            .collect();
        let traj = Trajectory {
            params: pr,
            spec,
            snapshots: snaps,
            dts: vec![0.5, 0.5],
        };
        assert_eq!(laplacian_l1(&traj).unwrap(), 0.0);
        assert_eq!(grad_p_l4(&traj).unwrap(), 0.0);
        assert_eq!(dissipation(&traj).unwrap(), (0.0, 0.0));
        // |G(0, c)|_-^3 by direct quadrature.
        let direct: f64 = c
            .values()
            .iter()
            .map(|&c| (-spec.g(0.0, c)).max(0.0).powi(3))
            .sum::<f64>()
            * grid.cell_volume()
            * 1.0;
        assert!(direct > 0.0);
        assert_relative_eq!(ab_negative_l3(&traj).unwrap(), direct, max_relative = 1e-13);
        let weight = WeightFunction::standard(grid).unwrap();
        let weighted: f64 = c
            .values()
            .iter()
            .zip(weight.phi.values())
            .map(|(&c, &phi)| (-spec.g(0.0, c)).max(0.0).powi(3) * phi)
            .sum::<f64>()
            * grid.cell_volume();
        assert_relative_eq!(
            weighted_ab_l3(&traj, &weight).unwrap(),
            weighted,
            max_relative = 1e-13
        );
        let test = TestFunction::new([0.0, 0.0], 0.5, 0.1, 0.9);
        let comp = complementarity_residual(&traj, &test).unwrap();
        assert_eq!((comp.lhs, comp.rhs), (0.0, 0.0));
    }

    #[test]
    fn nutrient_monitors_vanish_at_rest() {
        let grid = Grid::new(1, 1.0, 50).unwrap();
        let pr = params(10.0);
        let snaps: Vec<State> = [0.0, 1.0]
            .iter()
            .map(|&t| State::new(t, Field::zeros(grid), Field::constant(grid, 1.0), 10.0).unwrap())
            .collect();
        let traj = Trajectory {
            params: pr,
            spec: standard(&pr),
            snapshots: snaps,
            dts: vec![1.0],
        };
        let (rows, totals) = direct_estimates(&traj).unwrap();
        assert_eq!(totals.grad_c_l4, 0.0);
        assert_eq!(totals.lap_c_l2sq, 0.0);
        assert_eq!(totals.dt_c_l2sq, 0.0);
        assert!(rows.iter().all(|r| r.c_dev_l1 == 0.0 && r.grad_c_l2 == 0.0));
    }

    #[test]
    fn energy_examples() {
        let grid = Grid::new(1, 1.0, 10).unwrap();
        let pr = params(10.0);
        let spec = standard(&pr);
        let zero = State::new(0.0, Field::zeros(grid), Field::constant(grid, 1.0), 10.0).unwrap();
        assert_eq!(energy(&zero, &spec), 0.0);
        // p = 1, c = 1, no gradient: the energy density is -Gbar = -0.05.
        assert_relative_eq!(-spec.g_primitive(1.0, 1.0), -0.05, epsilon = 1e-15);
    }

    #[test]
    fn graph_residual_examples() {
        let grid = Grid::new(1, 1.0, 1000).unwrap();
        let full = State::new(
            0.0,
            Field::constant(grid, 1.0),
            Field::constant(grid, 1.0),
            10.0,
        )
        .unwrap();
        assert_eq!(graph_residual(&full), 0.0);
        let ramp = State::new(
            0.0,
            Field::from_fn(grid, |x, _| 0.5 * (x + 1.0)),
            Field::constant(grid, 1.0),
            10.0,
        )
        .unwrap();
        let r = graph_residual(&ramp);
        assert!(r <= graph_bound(10.0) && r > graph_bound(10.0) * 0.999);
        assert_relative_eq!(graph_bound(10.0), 0.0350494, epsilon = 1e-7);
    }

    fn synthetic(grid: Grid, scale: f64) -> Trajectory {
        let pr = params(10.0);
        let times: Vec<f64> = (0..=8).map(|i| i as f64 * 0.125).collect();
        Trajectory {
            params: pr,
            spec: standard(&pr),
            snapshots: times
                .iter()
                .map(|&t| {
                    let p = Field::from_fn(grid, move |x, y| {
                        scale * (0.6 + 0.3 * t - x * x - y * y).max(0.0).powf(1.5)
                    });
                    let c =
                        Field::from_fn(grid, move |x, y| 1.0 - 0.3 * (-(x * x + y * y) - t).exp());
                    state_from_p(t, p, c, 10.0)
                })
                .collect(),
            dts: vec![0.125; 8],
        }
    }

    #[test]
    fn accumulators_are_additive_over_time() {
        let grid = Grid::new(2, 1.5, 30).unwrap();
        let traj = synthetic(grid, 1.0);
        let whole = replay_totals(&traj, true).unwrap();
        let split = |range: std::ops::RangeInclusive<usize>| Trajectory {
            snapshots: traj.snapshots[range].to_vec(),
            ..traj.clone()
        };
        let a = replay_totals(&split(0..=4), true).unwrap();
        let b = replay_totals(&split(4..=8), true).unwrap();
        let sum = a.plus(&b);
        for (x, y) in whole.values().iter().zip(sum.values()) {
            assert_relative_eq!(*x, y, max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn chain_inequalities_and_lhs_bound() {
        let grid = Grid::new(2, 1.5, 30).unwrap();
        let traj = synthetic(grid, 1.0);
        let t = replay_totals(&traj, false).unwrap();
        assert!(t.ab_chain_holds());
        assert!(t.laplacian_chain_holds());
        let comp =
            complementarity_residual(&traj, &TestFunction::new([0.1, 0.0], 0.8, 0.1, 0.9)).unwrap();
        assert!(comp.lhs != 0.0);
        assert!(comp.bound_holds());
        // Out-of-window support is rejected.
        assert!(
            complementarity_residual(&traj, &TestFunction::new([0.0, 0.0], 1.45, 0.1, 0.9))
                .is_err()
        );
        assert!(
            complementarity_residual(&traj, &TestFunction::new([0.0, 0.0], 0.5, 0.0, 0.9)).is_err()
        );
    }

    #[test]
    fn amplitude_homogeneity() {
        let grid = Grid::new(1, 1.5, 100).unwrap();
        let lam = 3.0;
        let a = synthetic(grid, 1.0);
        let b = synthetic(grid, lam);
        assert_relative_eq!(
            grad_p_l4(&b).unwrap(),
            lam.powi(4) * grad_p_l4(&a).unwrap(),
            max_relative = 1e-12
        );
        let inert = ReactionSpec::inert(&a.params);
        let lap_a = ab_field(&a.snapshots[3], &inert);
        let lap_b = ab_field(&b.snapshots[3], &inert);
        for (x, y) in lap_a.values().iter().zip(lap_b.values()) {
            assert_relative_eq!(lam * x, *y, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn weighted_value_is_dominated_by_peak_weight() {
        let grid = Grid::new(2, 1.5, 30).unwrap();
        let traj = synthetic(grid, 1.0);
        let weight = WeightFunction::standard(grid).unwrap();
        assert!(weight.bounds_hold());
        let weighted = weighted_ab_l3(&traj, &weight).unwrap();
        let plain = ab_negative_l3(&traj).unwrap();
        assert!(weighted <= plain * (-1.0f64).exp() * (1.0 + 1e-12));
    }

    #[test]
    fn weight_violation_names_the_cell() {
        let grid = Grid::new(1, 1.0, 10).unwrap();
        let phi = Field::constant(grid, 1.0);
        let mut grad = Field::constant(grid, 0.5);
        grad.values_mut()[4] = 2.0;
        let err = WeightFunction::from_fields(phi, grad, Field::zeros(grid)).unwrap_err();
        assert!(matches!(err, Error::Weight { cell: 4, .. }));
    }

    #[test]
    fn pressure_l1_bound_on_snapshots() {
        let grid = Grid::new(1, 1.5, 100).unwrap();
        let traj = synthetic(grid, 1.0);
        let (rows, _) = direct_estimates(&traj).unwrap();
        assert!(rows.iter().all(|r| r.pressure_l1_bound_holds(&traj.params)));
    }
}
