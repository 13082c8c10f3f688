//! The incompressible limit: gamma sweeps with decay fits, the elliptic
//! Hele-Shaw reference on the positivity set, and Cauchy-in-gamma tables.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::grid::{self, Bc, Field, Grid};
use crate::linalg;
use crate::model::ReactionSpec;
use crate::monitors::{MonitorReport, SpacetimeTotals};
use crate::solver::{self, RunConfig, RunOutput, Trajectory};

/// Mask threshold relative to `p_H`.
pub const POSITIVITY_FRACTION: f64 = 1e-3;
pub const FIXED_POINT_TOLERANCE: f64 = 1e-8;
pub const FIXED_POINT_MAX_ITER: usize = 500;
/// Relative residual of each inner elliptic solve.
pub const REFERENCE_CG_TOLERANCE: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Fits

/// `y ~ A gamma^(-exponent)` by least squares in log-log coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    /// Decay exponent (minus the log-log slope).
    pub exponent: f64,
    pub log_prefactor: f64,
    /// Half-width of the 95% confidence interval of the exponent.
    pub ci95: f64,
    /// Root-mean-square residual in log space.
    pub rms_residual: f64,
    pub points: usize,
}

pub fn power_fit(xs: &[f64], ys: &[f64]) -> Result<PowerFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "a decay fit needs at least 3 points (got {})",
            xs.len().min(ys.len())
        )));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "decay fit needs positive finite data".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = lx.len() - 2;
    let se = (sse / dof as f64 / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof as f64)
        .expect("dof >= 1")
        .inverse_cdf(0.975);
    Ok(PowerFit {
        exponent: -slope,
        log_prefactor: intercept,
        ci95: t * se,
        rms_residual: (sse / n).sqrt(),
        points: lx.len(),
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Spearman rank correlation with a one-sided exact permutation p-value
/// for a positive association.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    pub p_value: f64,
}

impl Spearman {
    pub fn significantly_positive(&self, level: f64) -> bool {
        self.p_value < level
    }
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Spearman> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.len() > 9 {
        return Err(Error::InvalidParameter(format!(
            "exact Spearman test supports 2..=9 paired points (got {})",
            xs.len()
        )));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let rho = pearson(&rx, &ry);
    let mut perm: Vec<usize> = (0..ry.len()).collect();
    let (mut total, mut extreme) = (0usize, 0usize);
    let mut permuted = ry.clone();
    loop {
        for (i, &j) in perm.iter().enumerate() {
            permuted[i] = ry[j];
        }
        total += 1;
        if pearson(&rx, &permuted) >= rho - 1e-12 {
            extreme += 1;
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(Spearman {
        rho,
        p_value: extreme as f64 / total as f64,
    })
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

// ---------------------------------------------------------------------------
// Sweep

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub gamma: f64,
    /// `None` when the run succeeded.
    pub error: Option<String>,
    pub output: RunOutput,
    pub runtime_secs: f64,
}

impl SweepEntry {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    pub fn report(&self) -> &MonitorReport {
        &self.output.report
    }

    pub fn totals(&self) -> &SpacetimeTotals {
        &self.output.report.totals
    }

    /// `|rhs|` of the first configured test function.
    pub fn complementarity_rhs(&self) -> Option<f64> {
        self.output
            .report
            .complementarity
            .first()
            .map(|c| c.rhs.abs())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepFits {
    pub graph_residual: Option<PowerFit>,
    pub complementarity_rhs: Option<PowerFit>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub gammas: Vec<f64>,
    pub entries: Vec<SweepEntry>,
    pub fits: SweepFits,
    /// Set when fewer than three runs succeeded, so no fit was attempted.
    pub flagged: bool,
}

impl SweepReport {
    pub fn succeeded(&self) -> impl Iterator<Item = &SweepEntry> {
        self.entries.iter().filter(|e| e.succeeded())
    }

    pub fn entry(&self, gamma: f64) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.gamma == gamma)
    }

    /// `(gamma, value)` over successful runs.
    pub fn series(&self, f: impl Fn(&SweepEntry) -> f64) -> (Vec<f64>, Vec<f64>) {
        self.succeeded().map(|e| (e.gamma, f(e))).unzip()
    }
}

/// Ratio `max / min` of a series; the uniform-in-gamma band.
pub fn band_ratio(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Runs `base` at every `gamma` and fits the decay of the limit residuals.
pub fn gamma_sweep(base: &RunConfig, gammas: &[f64], exec_mode: Execution) -> Result<SweepReport> {
    if gammas.is_empty() {
        return Err(Error::InvalidParameter("empty gamma list".into()));
    }
    let floor = (2.0 - 4.0 / base.grid.dim() as f64).max(1.0);
    for w in gammas.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidParameter(
                "gamma list must be strictly increasing".into(),
            ));
        }
    }
    if let Some(g) = gammas.iter().find(|&&g| !(g > floor)) {
        return Err(Error::InvalidParameter(format!(
            "every gamma must exceed {floor} (got {g})"
        )));
    }
    let entries = exec::map_tasks(gammas, exec_mode, |&gamma| {
        let mut config = base.clone();
        config.params = config.params.with_gamma(gamma);
        let start = Instant::now();
        let (output, error) = match solver::run(&config) {
            Ok(out) => (out, None),
            Err(fail) => (*fail.partial, Some(fail.error.to_string())),
        };
        SweepEntry {
            gamma,
            error,
            output,
            runtime_secs: start.elapsed().as_secs_f64(),
        }
    });
    let ok = entries.iter().filter(|e| e.succeeded()).count();
    let mut report = SweepReport {
        gammas: gammas.to_vec(),
        entries,
        fits: SweepFits::default(),
        flagged: ok < 3,
    };
    if !report.flagged {
        let (g, r) = report.series(|e| e.report().graph_residual_max);
        report.fits.graph_residual = power_fit(&g, &r).ok();
        let (g, r) = report.series(|e| e.complementarity_rhs().unwrap_or(f64::NAN));
        report.fits.complementarity_rhs = power_fit(&g, &r).ok();
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Positivity set and the Hele-Shaw reference

#[derive(Debug, Clone, PartialEq)]
pub struct PositivitySet {
    grid: Grid,
    pub mask: Vec<bool>,
    /// Cells outside the mask with a neighbor inside it.
    pub boundary_layer: Vec<usize>,
}

impl PositivitySet {
    /// `O = {p > threshold}`; must stay off the box boundary.
    pub fn new(p: &Field, threshold: f64) -> Result<Self> {
        let grid = *p.grid();
        let mask: Vec<bool> = p.values().iter().map(|&v| v > threshold).collect();
        if let Some(k) = (0..grid.len()).find(|&k| mask[k] && grid.is_boundary_cell(k)) {
            return Err(Error::InvalidParameter(format!(
                "positivity set touches the box boundary at cell {k}"
            )));
        }
        let boundary_layer = (0..grid.len())
            .filter(|&k| {
                !mask[k]
                    && (0..grid.dim()).any(|a| {
                        [true, false]
                            .iter()
                            .any(|&f| grid.neighbor(k, a, f).is_some_and(|m| mask[m]))
                    })
            })
            .collect();
        Ok(Self {
            grid,
            mask,
            boundary_layer,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub fn measure(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 * self.grid.cell_volume()
    }

    /// Measure of `O` symmetric-difference `{n > n_level}`.
    pub fn symmetric_difference(&self, n: &Field, n_level: f64) -> f64 {
        let count = self
            .mask
            .iter()
            .zip(n.values())
            .filter(|(&m, &v)| m != (v > n_level))
            .count();
        count as f64 * self.grid.cell_volume()
    }

    /// `||a - b||_{L2(O)}`.
    pub fn l2_distance(&self, a: &Field, b: &Field) -> f64 {
        let (a, b) = (a.values(), b.values());
        let s: f64 = (0..a.len())
            .filter(|&k| self.mask[k])
            .map(|k| (a[k] - b[k]).powi(2))
            .sum();
        (s * self.grid.cell_volume()).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct HeleShawReference {
    pub p: Field,
    pub set: PositivitySet,
    pub iterations: usize,
    /// `||p^(k+1) - p^k||_2` per iteration.
    pub updates: Vec<f64>,
    /// Largest ratio of successive updates after the first.
    pub contraction: f64,
    /// `max_O |Lap p + G(p, c)|`.
    pub residual: f64,
}

/// `(-Lap + shift) v` on the mask, zero outside; identity on cells outside.
fn apply_masked(grid: &Grid, mask: &[bool], shift: f64, v: &[f64], out: &mut [f64]) {
    let grid = *grid;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    exec::fill_with(out, |k| {
        if !mask[k] {
            return v[k];
        }
        let mut acc = 0.0;
        for axis in 0..grid.dim() {
            for f in [true, false] {
                let nb = grid
                    .neighbor(k, axis, f)
                    .filter(|&m| mask[m])
                    .map_or(0.0, |m| v[m]);
                acc += v[k] - nb;
            }
        }
        acc * inv_h2 + shift * v[k]
    });
}

/// Masked discrete `Lap v` with zero outside the mask.
fn masked_laplacian(grid: &Grid, mask: &[bool], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    apply_masked(grid, mask, 0.0, v, &mut out);
    for (k, o) in out.iter_mut().enumerate() {
        *o = if mask[k] { -*o } else { 0.0 };
    }
    out
}

/// Solves `-Lap p = G(p, c)` on `O = {p_num > eps_o}`, `p = 0` off `O`, by
/// iterating `(-Lap + beta) p+ = G(p, c) + beta p` from `p_num`.
pub fn heleshaw_reference(
    p_num: &Field,
    c_num: &Field,
    spec: &ReactionSpec,
    beta: f64,
    eps_o: f64,
) -> Result<HeleShawReference> {
    p_num.grid().ensure_same(c_num.grid())?;
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "shift beta > 0 required (got {beta})"
        )));
    }
    let grid = *p_num.grid();
    let set = PositivitySet::new(p_num, eps_o)?;
    if set.is_empty() {
        return Ok(HeleShawReference {
            p: Field::zeros(grid),
            set,
            iterations: 0,
            updates: Vec::new(),
            contraction: 0.0,
            residual: 0.0,
        });
    }
    let mask = &set.mask;
    let c = c_num.values();
    let vol = grid.cell_volume();
    let mut p: Vec<f64> = p_num
        .values()
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    let mut updates = Vec::new();
    let mut growth_streak = 0;
    let mut rhs = vec![0.0; p.len()];
    let mut converged = false;
    for _ in 0..FIXED_POINT_MAX_ITER {
        for k in 0..p.len() {
            rhs[k] = if mask[k] {
                spec.g(p[k], c[k]) + beta * p[k]
            } else {
                0.0
            };
        }
        let mut next = p.clone();
        linalg::conjugate_gradient(
            |v, out| apply_masked(&grid, mask, beta, v, out),
            &rhs,
            &mut next,
            REFERENCE_CG_TOLERANCE,
            20 * grid.len().max(100),
        )?;
        let du = (exec::sum_by(p.len(), |k| (next[k] - p[k]).powi(2)) * vol).sqrt();
        let norm = (exec::sum_by(p.len(), |k| next[k] * next[k]) * vol).sqrt();
        if let Some(&last) = updates.last() {
            if du > last {
                growth_streak += 1;
                if growth_streak >= 3 {
                    return Err(Error::NonContraction {
                        iterations: updates.len() + 1,
                    });
                }
            } else {
                growth_streak = 0;
            }
        }
        updates.push(du);
        p = next;
        if du <= FIXED_POINT_TOLERANCE * norm.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(FIXED_POINT_MAX_ITER));
    }
    let contraction = updates
        .windows(2)
        .skip(1)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .fold(0.0, f64::max);
    let lap = masked_laplacian(&grid, mask, &p);
    let residual = (0..p.len())
        .filter(|&k| mask[k])
        .map(|k| (lap[k] + spec.g(p[k], c[k])).abs())
        .fold(0.0, f64::max);
    Ok(HeleShawReference {
        p: Field::from_vec(grid, p)?,
        set,
        iterations: updates.len(),
        updates,
        contraction,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Cauchy-in-gamma comparison

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitComparison {
    pub gamma_a: f64,
    pub gamma_b: f64,
    /// `||p_a - p_b||_{L1(Q_T)}`.
    pub p_l1: f64,
    /// `||grad p_a - grad p_b||_{L2(Q_T)}`.
    pub grad_p_l2: f64,
    /// `||c_a - c_b||_{L1(Q_T)}`.
    pub c_l1: f64,
}

/// Space-time distances between two runs with matching snapshots
/// (left endpoint over the snapshot windows).
pub fn limit_compare(a: &Trajectory, b: &Trajectory) -> Result<LimitComparison> {
    if a.snapshots.len() != b.snapshots.len() || a.snapshots.is_empty() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} snapshots",
            a.snapshots.len(),
            b.snapshots.len()
        )));
    }
    let (mut p_l1, mut g_l2, mut c_l1) = (0.0, 0.0, 0.0);
    for i in 0..a.snapshots.len() {
        let (sa, sb) = (&a.snapshots[i], &b.snapshots[i]);
        sa.grid().ensure_same(sb.grid())?;
        if (sa.t - sb.t).abs() > 1e-12 * sa.t.abs().max(1.0) {
            return Err(Error::GridMismatch(format!(
                "snapshot times {} vs {}",
                sa.t, sb.t
            )));
        }
        let Some(next) = a.snapshots.get(i + 1) else {
            break;
        };
        let dt = next.t - sa.t;
        let dp = sa.p.axpby(1.0, &sb.p, -1.0);
        let dc = sa.c.axpby(1.0, &sb.c, -1.0);
        p_l1 += grid::abs_pow_integral(&dp, 1.0) * dt;
        c_l1 += grid::abs_pow_integral(&dc, 1.0) * dt;
        g_l2 += grid::integral(&grid::grad_norm_sq(&dp, Bc::ZERO)) * dt;
    }
    Ok(LimitComparison {
        gamma_a: a.params.gamma,
        gamma_b: b.params.gamma,
        p_l1,
        grad_p_l2: g_l2.sqrt(),
        c_l1,
    })
}

// ---------------------------------------------------------------------------
// Sweep assessment

/// One named pass/fail verdict with the numbers behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Hele-Shaw reference at the final snapshot of one sweep run.
#[derive(Debug, Clone)]
pub struct ReferenceRow {
    pub gamma: f64,
    pub reference: std::result::Result<HeleShawReference, String>,
    /// `||p_num - p_ref||_{L2(O)}`.
    pub l2_error: f64,
    /// `|O (sym. diff.) {n > n_H - 0.05}|`.
    pub symmetric_difference: f64,
}

/// Level of the density set compared against `O`.
pub const DENSITY_SET_MARGIN: f64 = 0.05;

/// References at `T` for every successful run, in parallel.
pub fn sweep_references(sweep: &SweepReport, exec_mode: Execution) -> Vec<ReferenceRow> {
    let ok: Vec<&SweepEntry> = sweep.succeeded().collect();
    exec::map_tasks(&ok, exec_mode, |e| {
        let traj = &e.output.trajectory;
        let last = traj.snapshots.last().expect("successful run has snapshots");
        let params = traj.params;
        let reference = heleshaw_reference(
            &last.p,
            &last.c,
            &traj.spec,
            params.beta,
            POSITIVITY_FRACTION * params.p_h,
        )
        .map_err(|e| e.to_string());
        let (l2_error, symmetric_difference) = match &reference {
            Ok(r) => (
                r.set.l2_distance(&last.p, &r.p),
                r.set
                    .symmetric_difference(&last.n, params.n_h() - DENSITY_SET_MARGIN),
            ),
            Err(_) => (f64::NAN, f64::NAN),
        };
        ReferenceRow {
            gamma: e.gamma,
            reference,
            l2_error,
            symmetric_difference,
        }
    })
}

/// Largest relative clipped mass tolerated.
pub const CLIP_BUDGET: f64 = 1e-6;
/// Band width of the uniform-in-gamma accumulators.
pub const BAND: f64 = 2.0;
/// Significance level of the growth-trend test.
pub const TREND_LEVEL: f64 = 0.05;
/// Required decay of `|rhs|` between the extreme gammas.
pub const RHS_DECAY: f64 = 4.0;
/// Accepted range of the graph-residual decay exponent.
pub const GRAPH_EXPONENT_RANGE: (f64, f64) = (0.8, 1.2);

/// Factor-`BAND` spread across the sweep; with `trend` also no significant rise in gamma.
fn band_check(
    name: &str,
    sweep: &SweepReport,
    trend_gate: bool,
    f: impl Fn(&SweepEntry) -> f64,
) -> Assertion {
    let (g, v) = sweep.series(f);
    let ratio = band_ratio(&v);
    let trend = spearman(&g, &v);
    let rising = trend
        .as_ref()
        .is_ok_and(|s| s.significantly_positive(TREND_LEVEL));
    let (rho, pv) = trend.map_or((f64::NAN, f64::NAN), |s| (s.rho, s.p_value));
    Assertion::new(
        name,
        v.len() == sweep.gammas.len() && ratio <= BAND && !(trend_gate && rising),
        format!("values {v:?}, max/min = {ratio:.4}, spearman rho = {rho:.3} (p = {pv:.4})"),
    )
}

/// Acceptance verdicts over a finished sweep: a-priori bounds, uniform
/// accumulators, complementarity, graph relation, the Hele-Shaw
/// reference, the support barrier and the weighted accumulator.
pub fn assess_sweep(sweep: &SweepReport, references: &[ReferenceRow]) -> Vec<Assertion> {
    let mut out = Vec::new();
    let failed: Vec<String> = sweep
        .entries
        .iter()
        .filter_map(|e| e.error.as_ref().map(|m| format!("gamma {}: {m}", e.gamma)))
        .collect();
    out.push(Assertion::new(
        "runs completed",
        failed.is_empty(),
        failed.join("; "),
    ));

    let mut detail = Vec::new();
    let mut ok = failed.is_empty();
    for e in sweep.succeeded() {
        let params = e.output.trajectory.params;
        let clip = e.output.clipped_fraction();
        let rows_ok = e
            .report()
            .rows
            .iter()
            .all(|r| r.pressure_l1_bound_holds(&params));
        let nutrient = e.totals().nutrient_inequality_holds(params.c_b);
        ok &= clip <= CLIP_BUDGET && rows_ok && nutrient;
        detail.push(format!(
            "gamma {}: clipped {clip:.2e}, p_l1 bound {rows_ok}, nutrient inequality {nutrient}",
            e.gamma
        ));
    }
    out.push(Assertion::new("a-priori bounds", ok, detail.join("; ")));

    out.push(band_check("uniform |w|_-^3", sweep, true, |e| {
        e.totals().ab_neg_l3
    }));
    out.push(band_check("uniform |grad p|^4", sweep, true, |e| {
        e.totals().grad_p_l4
    }));

    let comps: Vec<_> = sweep
        .succeeded()
        .flat_map(|e| e.report().complementarity.iter())
        .collect();
    let bound_ok = !comps.is_empty() && comps.iter().all(|c| c.bound_holds());
    out.push(Assertion::new(
        "complementarity lhs bound",
        bound_ok,
        comps
            .iter()
            .map(|c| {
                format!(
                    "gamma {}: |lhs| {:.3e} <= {:.3e}",
                    c.gamma,
                    c.lhs.abs(),
                    c.lhs_bound()
                )
            })
            .collect::<Vec<_>>()
            .join("; "),
    ));
    let (g, rhs) = sweep.series(|e| e.complementarity_rhs().unwrap_or(f64::NAN));
    let decay_ok = rhs.len() >= 2 && rhs[rhs.len() - 1] * RHS_DECAY <= rhs[0];
    out.push(Assertion::new(
        "complementarity rhs decay",
        decay_ok,
        format!("|rhs| at gamma {g:?}: {rhs:?}"),
    ));

    let mut detail = Vec::new();
    let mut ok = true;
    for e in sweep.succeeded() {
        let h = e.output.trajectory.grid().h();
        let bound = crate::model::graph_bound(e.gamma) + 10.0 * h * h;
        let r = e.report().graph_residual_max;
        ok &= r <= bound;
        detail.push(format!("gamma {}: {r:.6} <= {bound:.6}", e.gamma));
    }
    let exponent = sweep.fits.graph_residual.as_ref().map(|f| f.exponent);
    let (lo, hi) = GRAPH_EXPONENT_RANGE;
    ok &= exponent.is_some_and(|x| (lo..=hi).contains(&x));
    detail.push(format!("decay exponent {exponent:?}"));
    out.push(Assertion::new("graph relation", ok, detail.join("; ")));

    let mut detail = Vec::new();
    let mut ok = references.len() >= 2;
    for r in references {
        match &r.reference {
            Ok(h) => {
                ok &= h.iterations <= FIXED_POINT_MAX_ITER && h.contraction < 1.0;
                detail.push(format!(
                    "gamma {}: L2(O) error {:.4e}, {} iterations, contraction {:.3}, |O sym. diff. n-set| {:.4}",
                    r.gamma, r.l2_error, h.iterations, h.contraction, r.symmetric_difference
                ));
            }
            Err(e) => {
                ok = false;
                detail.push(format!("gamma {}: {e}", r.gamma));
            }
        }
    }
    if let [.., a, b] = references {
        ok &= b.l2_error <= a.l2_error;
    }
    out.push(Assertion::new("Hele-Shaw reference", ok, detail.join("; ")));

    let mut detail = Vec::new();
    let mut ok = failed.is_empty();
    for e in sweep.succeeded() {
        let traj = &e.output.trajectory;
        let rate = traj.spec.g(0.0, traj.params.c_b);
        match crate::analytic::BarrierParams::from_initial(&traj.snapshots[0], rate) {
            Ok(b) => {
                let report = crate::analytic::barrier_check(traj, &b);
                let bad = report
                    .snapshots
                    .iter()
                    .filter(|s| !s.offending_cells.is_empty())
                    .count();
                ok &= bad == 0;
                detail.push(format!(
                    "gamma {}: {bad} snapshots outside the barrier",
                    e.gamma
                ));
            }
            Err(err) => {
                ok = false;
                detail.push(format!("gamma {}: {err}", e.gamma));
            }
        }
    }
    out.push(Assertion::new("support barrier", ok, detail.join("; ")));

    let mut weighted = band_check("weighted |w|_-^3", sweep, false, |e| {
        e.totals().weighted_ab_l3
    });
    if let Some(e) = sweep.succeeded().next() {
        let grid = *e.output.trajectory.grid();
        let bounds =
            crate::monitors::WeightFunction::standard(grid).map(|w| (w.bounds_hold(), w.c_phi));
        match bounds {
            Ok((holds, c_phi)) => {
                weighted.passed &= holds;
                weighted
                    .detail
                    .push_str(&format!("; weight bounds {holds} with C_Phi = {c_phi:.4}"));
            }
            Err(err) => {
                weighted.passed = false;
                weighted.detail.push_str(&format!("; {err}"));
            }
        }
    }
    out.push(weighted);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use approx::assert_relative_eq;

    #[test]
    fn power_fit_recovers_exponent() {
        let g = [10.0, 20.0, 40.0, 80.0];
        let y: Vec<f64> = g.iter().map(|x: &f64| 3.0 * x.powf(-1.1)).collect();
        let fit = power_fit(&g, &y).unwrap();
        assert_relative_eq!(fit.exponent, 1.1, epsilon = 1e-12);
        assert!(fit.ci95 < 1e-10);
        assert!(power_fit(&g[..2], &y[..2]).is_err());
    }

    #[test]
    fn spearman_exact_test() {
        let x = [10.0, 20.0, 40.0, 80.0];
        let up = spearman(&x, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_relative_eq!(up.rho, 1.0);
        assert_relative_eq!(up.p_value, 1.0 / 24.0);
        assert!(up.significantly_positive(0.05));
        let mixed = spearman(&x, &[2.0, 1.0, 3.0, 4.0]).unwrap();
        assert!(!mixed.significantly_positive(0.05));
        let down = spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_relative_eq!(down.rho, -1.0);
        assert_relative_eq!(down.p_value, 1.0);
    }

    #[test]
    fn empty_positivity_set_gives_zero() {
        let grid = Grid::new(1, 1.0, 32).unwrap();
        let pr = ModelParams::new(10.0, 1.0, 2.0, 1.0, 0.1, 0.3).unwrap();
        let spec = ReactionSpec::standard(&pr, 1.0, 0.1, 0.5);
        let r = heleshaw_reference(
            &Field::zeros(grid),
            &Field::constant(grid, 1.0),
            &spec,
            0.1,
            1e-3,
        )
        .unwrap();
        assert_eq!(r.p.abs_max(), 0.0);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn poisson_on_interval_matches_parabola() {
        // O = (-1, 1), G = 1: p = (1 - x^2) / 2. With cell centers at +-1 the
        // ghost values sit exactly on the boundary.
        for cells in [82, 162] {
            let grid = Grid::new(1, 2.0, cells).unwrap();
            let h = grid.h();
            let pr = ModelParams::new(10.0, 1.0, 2.0, 1.0, 0.1, 0.3).unwrap();
            let spec = ReactionSpec::constant(&pr, 1.0);
            let guess = Field::from_fn(grid, |x, _| (0.3 * (1.0 - x * x)).max(0.0));
            let r =
                heleshaw_reference(&guess, &Field::constant(grid, 1.0), &spec, 0.1, 1e-3).unwrap();
            assert!(r.contraction < 1.0);
            assert!(
                r.residual <= 10.0 * FIXED_POINT_TOLERANCE * 0.1,
                "{}",
                r.residual
            );
            let err = (0..grid.cells())
                .map(|k| {
                    let x = grid.center(k);
                    (r.p.values()[k] - 0.5 * (1.0 - x * x).max(0.0)).abs()
                })
                .fold(0.0, f64::max);
            assert!(err <= h * h, "{cells}: {err}");
        }
    }

    #[test]
    fn standard_reaction_reference_contracts() {
        let grid = Grid::new(2, 2.0, 40).unwrap();
        let pr = ModelParams::new(10.0, 1.0, 2.0, 1.0, 0.1, 0.3).unwrap();
        let spec = ReactionSpec::standard(&pr, 1.0, 0.1, 0.5);
        let p = Field::from_fn(grid, |x, y| (0.8 - x * x - y * y).max(0.0));
        let c = Field::from_fn(grid, |x, y| 0.6 + 0.3 * (x * x + y * y).min(1.0));
        let r = heleshaw_reference(&p, &c, &spec, pr.beta, 1e-3).unwrap();
        assert!(r.iterations <= FIXED_POINT_MAX_ITER);
        assert!(r.contraction < 1.0);
        assert!(r.updates.windows(2).skip(1).all(|w| w[1] <= w[0]));
        assert!(
            r.residual <= 10.0 * FIXED_POINT_TOLERANCE * pr.beta,
            "{}",
            r.residual
        );
        let inv = PositivitySet::new(&p, 1e-3).unwrap();
        assert!(inv.measure() > 0.0);
    }

    #[test]
    fn positivity_set_must_avoid_the_boundary() {
        let grid = Grid::new(1, 1.0, 16).unwrap();
        assert!(PositivitySet::new(&Field::constant(grid, 1.0), 1e-3).is_err());
    }

    #[test]
    fn identical_trajectories_compare_to_zero() {
        let grid = Grid::new(1, 1.0, 16).unwrap();
        let pr = ModelParams::new(10.0, 1.0, 2.0, 1.0, 0.1, 0.3).unwrap();
        let snaps: Vec<_> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&t| {
                crate::solver::State::new(
                    t,
                    Field::from_fn(grid, |x, _| (0.5 - x * x).max(0.0)),
                    Field::constant(grid, 1.0),
                    10.0,
                )
                .unwrap()
            })
            .collect();
        let traj = Trajectory {
            params: pr,
            spec: ReactionSpec::inert(&pr),
            snapshots: snaps,
            dts: vec![0.5, 0.5],
        };
        let cmp = limit_compare(&traj, &traj).unwrap();
        assert_eq!((cmp.p_l1, cmp.grad_p_l2, cmp.c_l1), (0.0, 0.0, 0.0));
    }
}
