//! Uniform cell-centered grids on `[-L, L]^d`, `d` in {1, 2}, and the
//! second-order operators and quadratures every monitor is built on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    cells: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, cells: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::InvalidParameter(format!(
                "dimension must be 1 or 2 (got {dim})"
            )));
        }
        if cells < 8 {
            return Err(Error::InvalidParameter(format!(
                "at least 8 cells per axis (got {cells})"
            )));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "box half-width must be positive (got {half_width})"
            )));
        }
        Ok(Self {
            dim,
            half_width,
            cells,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Cells per axis.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.cells as f64
    }

    /// Cell measure `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.h()
    }

    /// Per-axis indices of a flat cell index (`x` fastest).
    #[inline]
    pub fn unflatten(&self, k: usize) -> [usize; 2] {
        if self.dim == 1 {
            [k, 0]
        } else {
            [k % self.cells, k / self.cells]
        }
    }

    /// Coordinates of the cell center (unused components are zero).
    #[inline]
    pub fn coords(&self, k: usize) -> [f64; 2] {
        let [i, j] = self.unflatten(k);
        if self.dim == 1 {
            [self.center(i), 0.0]
        } else {
            [self.center(i), self.center(j)]
        }
    }

    #[inline]
    pub fn radius_sq(&self, k: usize) -> f64 {
        let [x, y] = self.coords(k);
        x * x + y * y
    }

    /// True when the cell touches the box boundary.
    pub fn is_boundary_cell(&self, k: usize) -> bool {
        let [i, j] = self.unflatten(k);
        let last = self.cells - 1;
        i == 0 || i == last || (self.dim == 2 && (j == 0 || j == last))
    }

    /// Distance from the cell center to the nearest box face.
    pub fn boundary_distance(&self, k: usize) -> f64 {
        let [x, y] = self.coords(k);
        let m = if self.dim == 1 {
            x.abs()
        } else {
            x.abs().max(y.abs())
        };
        self.half_width - m
    }

    /// Neighbor of cell `k` along `axis` at offset `+1`/`-1`, `None` outside.
    #[inline]
    pub fn neighbor(&self, k: usize, axis: usize, forward: bool) -> Option<usize> {
        let idx = self.unflatten(k);
        let stride = if axis == 0 { 1 } else { self.cells };
        if forward {
            (idx[axis] + 1 < self.cells).then(|| k + stride)
        } else {
            (idx[axis] > 0).then(|| k - stride)
        }
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Boundary condition used to fill ghost cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bc {
    /// Ghost cells carry this value.
    Dirichlet(f64),
    /// Ghost cells mirror the adjacent cell.
    NeumannZero,
}

impl Bc {
    pub const ZERO: Bc = Bc::Dirichlet(0.0);

    #[inline]
    fn ghost(self, inner: f64) -> f64 {
        match self {
            Bc::Dirichlet(v) => v,
            Bc::NeumannZero => inner,
        }
    }
}

/// One value per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    grid: Grid,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    /// Samples `f(x, y)` at cell centers (`y = 0` in 1D).
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64 + Sync + Send) -> Self {
        let mut data = vec![0.0; grid.len()];
        exec::fill_with(&mut data, |k| {
            let [x, y] = grid.coords(k);
            f(x, y)
        });
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync + Send) -> Field {
        let mut data = vec![0.0; self.data.len()];
        exec::fill_with(&mut data, |k| f(self.data[k]));
        Field {
            grid: self.grid,
            data,
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64 + Sync + Send) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        let mut data = vec![0.0; self.data.len()];
        exec::fill_with(&mut data, |k| f(self.data[k], other.data[k]));
        Field {
            grid: self.grid,
            data,
        }
    }

    pub fn max(&self) -> f64 {
        let d = &self.data;
        exec::max_by(d.len(), |k| d[k])
    }

    pub fn min(&self) -> f64 {
        let d = &self.data;
        -exec::max_by(d.len(), |k| -d[k])
    }

    pub fn abs_max(&self) -> f64 {
        let d = &self.data;
        exec::max_by(d.len(), |k| d[k].abs())
    }

    /// First non-finite cell, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn scaled(&self, a: f64) -> Field {
        self.map(|v| a * v)
    }

    pub fn axpby(&self, a: f64, other: &Field, b: f64) -> Field {
        self.zip_map(other, |x, y| a * x + b * y)
    }
}

/// Value of `f` at cell `k` shifted by one along `axis`, ghost-filled from `bc`.
#[inline]
fn shifted(f: &Field, k: usize, axis: usize, forward: bool, bc: Bc) -> f64 {
    match f.grid.neighbor(k, axis, forward) {
        Some(m) => f.data[m],
        None => bc.ghost(f.data[k]),
    }
}

/// 3-point (1D) / 5-point (2D) Laplacian.
pub fn laplacian(f: &Field, bc: Bc) -> Field {
    let grid = f.grid;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut out = vec![0.0; grid.len()];
    exec::fill_with(&mut out, |k| {
        let mut acc = 0.0;
        for axis in 0..grid.dim() {
            acc += shifted(f, k, axis, true, bc) - 2.0 * f.data[k] + shifted(f, k, axis, false, bc);
        }
        acc * inv_h2
    });
    Field { grid, data: out }
}

/// Centered first differences, one field per axis.
pub fn gradient(f: &Field, bc: Bc) -> Vec<Field> {
    let grid = f.grid;
    let inv_2h = 0.5 / grid.h();
    (0..grid.dim())
        .map(|axis| {
            let mut out = vec![0.0; grid.len()];
            exec::fill_with(&mut out, |k| {
                (shifted(f, k, axis, true, bc) - shifted(f, k, axis, false, bc)) * inv_2h
            });
            Field { grid, data: out }
        })
        .collect()
}

/// `|grad f|^2` with centered differences.
pub fn grad_norm_sq(f: &Field, bc: Bc) -> Field {
    let grid = f.grid;
    let inv_2h = 0.5 / grid.h();
    let mut out = vec![0.0; grid.len()];
    exec::fill_with(&mut out, |k| {
        (0..grid.dim())
            .map(|axis| {
                let d = (shifted(f, k, axis, true, bc) - shifted(f, k, axis, false, bc)) * inv_2h;
                d * d
            })
            .sum()
    });
    Field { grid, data: out }
}

/// `sum_ij (d_ij f)^2`; pure second derivatives use the 3-point stencil,
/// mixed ones successive centered first differences.
pub fn hessian_norm_sq(f: &Field, bc: Bc) -> Field {
    let grid = f.grid;
    let h = grid.h();
    let inv_h2 = 1.0 / (h * h);
    if grid.dim() == 1 {
        return laplacian(f, bc).map(|v| v * v);
    }
    let grads = gradient(f, bc);
    // d_y of d_x f; the ghost of a derivative of a Dirichlet field is taken as zero slope
    // for Dirichlet-zero data and mirrored otherwise.
    let inner_bc = match bc {
        Bc::Dirichlet(_) => Bc::ZERO,
        Bc::NeumannZero => Bc::NeumannZero,
    };
    let mixed = gradient(&grads[0], inner_bc).swap_remove(1);
    let mut out = vec![0.0; grid.len()];
    exec::fill_with(&mut out, |k| {
        let fxx =
            (shifted(f, k, 0, true, bc) - 2.0 * f.data[k] + shifted(f, k, 0, false, bc)) * inv_h2;
        let fyy =
            (shifted(f, k, 1, true, bc) - 2.0 * f.data[k] + shifted(f, k, 1, false, bc)) * inv_h2;
        let fxy = mixed.data[k];
        fxx * fxx + 2.0 * fxy * fxy + fyy * fyy
    });
    Field { grid, data: out }
}

/// Sum over every face (boundary faces included, ghost 0) of `(D+ f)^2 h^d`.
/// Satisfies `integral(f * laplacian(f, 0)) == -dirichlet_energy(f)` up to roundoff.
pub fn dirichlet_energy(f: &Field) -> f64 {
    let grid = f.grid;
    let inv_h = 1.0 / grid.h();
    let vol = grid.cell_volume();
    exec::sum_by(grid.len(), |k| {
        let mut acc = 0.0;
        for axis in 0..grid.dim() {
            let d = (shifted(f, k, axis, true, Bc::ZERO) - f.data[k]) * inv_h;
            acc += d * d;
            if grid.neighbor(k, axis, false).is_none() {
                let d = f.data[k] * inv_h;
                acc += d * d;
            }
        }
        acc
    }) * vol
}

/// Midpoint rule: `sum f_k h^d`.
pub fn integral(f: &Field) -> f64 {
    let d = &f.data;
    exec::sum_by(d.len(), |k| d[k]) * f.grid.cell_volume()
}

/// `sum |f|^q h^d`.
pub fn abs_pow_integral(f: &Field, q: f64) -> f64 {
    let d = &f.data;
    exec::sum_by(d.len(), |k| d[k].abs().powf(q)) * f.grid.cell_volume()
}

/// `(sum_k sum_i |f_k|^q h^d dt_k)^(1/q)`: midpoint in space, left endpoint in time.
pub fn lp_spacetime<'a>(
    series: impl IntoIterator<Item = &'a Field>,
    q: f64,
    dts: &[f64],
) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "exponent q >= 1 required (got {q})"
        )));
    }
    let mut total = 0.0;
    let mut count = 0;
    for (f, &dt) in series.into_iter().zip(dts) {
        total += abs_pow_integral(f, q) * dt;
        count += 1;
    }
    if count != dts.len() {
        return Err(Error::InvalidParameter(format!(
            "{count} fields for {} time steps",
            dts.len()
        )));
    }
    Ok(total.powf(1.0 / q))
}

/// Smooth bump `exp(-1/(1 - s^2))` on `|s| < 1`.
#[inline]
pub fn mollifier(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Derivative of [`mollifier`].
#[inline]
pub fn mollifier_prime(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        mollifier(s) * (-2.0 * s / (q * q))
    }
}

/// Space-time bump `zeta(x, t) = psi(|x - x0| / r) psi((t - t0) / tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub center: [f64; 2],
    pub radius: f64,
    pub t_center: f64,
    pub t_half_width: f64,
}

impl TestFunction {
    /// Bump supported on `[t_start, t_end]` in time.
    pub fn new(center: [f64; 2], radius: f64, t_start: f64, t_end: f64) -> Self {
        Self {
            center,
            radius,
            t_center: 0.5 * (t_start + t_end),
            t_half_width: 0.5 * (t_end - t_start),
        }
    }

    /// Checks the support lies strictly inside the box and inside `(0, t_final)`.
    pub fn check_support(&self, grid: &Grid, t_final: f64) -> Result<()> {
        if !(self.radius > 0.0 && self.t_half_width > 0.0) {
            return Err(Error::Support(
                "radius and time window must be positive".into(),
            ));
        }
        let reach = (0..grid.dim())
            .map(|a| self.center[a].abs())
            .fold(0.0, f64::max)
            + self.radius;
        if reach >= grid.half_width() - grid.h() {
            return Err(Error::Support(format!(
                "spatial support reaches {reach}, box half-width {}",
                grid.half_width()
            )));
        }
        let (t0, t1) = (
            self.t_center - self.t_half_width,
            self.t_center + self.t_half_width,
        );
        if !(t0 > 0.0 && t1 < t_final) {
            return Err(Error::Support(format!(
                "time window [{t0}, {t1}] not inside (0, {t_final})"
            )));
        }
        Ok(())
    }

    fn spatial(&self, x: [f64; 2], dim: usize) -> f64 {
        let r2: f64 = (0..dim).map(|a| (x[a] - self.center[a]).powi(2)).sum();
        mollifier(r2.sqrt() / self.radius)
    }

    fn temporal(&self, t: f64) -> f64 {
        mollifier((t - self.t_center) / self.t_half_width)
    }

    fn temporal_prime(&self, t: f64) -> f64 {
        mollifier_prime((t - self.t_center) / self.t_half_width) / self.t_half_width
    }

    pub fn value(&self, x: [f64; 2], dim: usize, t: f64) -> f64 {
        self.spatial(x, dim) * self.temporal(t)
    }

    pub fn time_derivative(&self, x: [f64; 2], dim: usize, t: f64) -> f64 {
        self.spatial(x, dim) * self.temporal_prime(t)
    }

    /// Spatial profile sampled at cell centers.
    pub fn spatial_field(&self, grid: Grid) -> Field {
        let dim = grid.dim();
        Field::from_fn(grid, |x, y| self.spatial([x, y], dim))
    }

    pub fn temporal_factor(&self, t: f64) -> (f64, f64) {
        (self.temporal(t), self.temporal_prime(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid1(n: usize) -> Grid {
        Grid::new(1, 1.0, n).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(3, 1.0, 16).is_err());
        assert!(Grid::new(1, 1.0, 7).is_err());
        assert!(Grid::new(2, 0.0, 16).is_err());
    }

    #[test]
    fn constant_field_has_zero_laplacian_and_gradient() {
        let g = Grid::new(2, 1.0, 16).unwrap();
        let f = Field::constant(g, 3.5);
        assert_eq!(laplacian(&f, Bc::NeumannZero).abs_max(), 0.0);
        assert_eq!(laplacian(&f, Bc::Dirichlet(3.5)).abs_max(), 0.0);
        for d in gradient(&f, Bc::Dirichlet(3.5)) {
            assert_eq!(d.abs_max(), 0.0);
        }
    }

    #[test]
    fn stencils_exact_on_low_degree_polynomials() {
        let g = grid1(64);
        let quad = Field::from_fn(g, |x, _| x * x);
        let lap = laplacian(&quad, Bc::NeumannZero);
        for k in 1..63 {
            assert_relative_eq!(lap.values()[k], 2.0, epsilon = 1e-9);
        }
        let lin = Field::from_fn(g, |x, _| x);
        let d = gradient(&lin, Bc::NeumannZero).remove(0);
        for k in 1..63 {
            assert_relative_eq!(d.values()[k], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn centered_difference_of_square_at_half() {
        // h = 0.2: cell 7 is centered at x = 0.5.
        for n in [10, 30] {
            let g = grid1(n);
            let k = (0..n).find(|&k| (g.center(k) - 0.5).abs() < 1e-12).unwrap();
            let f = Field::from_fn(g, |x, _| x * x);
            let d = gradient(&f, Bc::NeumannZero).remove(0);
            assert_relative_eq!(d.values()[k], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn laplacian_of_sine_within_taylor_bound() {
        let pi = std::f64::consts::PI;
        let g = grid1(200);
        let h = g.h();
        let f = Field::from_fn(g, |x, _| (pi * x).sin());
        let lap = laplacian(&f, Bc::NeumannZero);
        let bound = pi.powi(4) * h * h / 12.0 + 1e-10;
        for k in 1..199 {
            let exact = -pi * pi * (pi * g.center(k)).sin();
            assert!((lap.values()[k] - exact).abs() <= bound);
        }
    }

    #[test]
    fn quadrature_examples() {
        let g = Grid::new(2, 0.5, 16).unwrap();
        // Box of measure 1.
        assert_relative_eq!(integral(&Field::constant(g, 1.0)), 1.0, epsilon = 1e-14);
        for q in [1.0, 2.5, 4.0] {
            let dts = [0.25, 0.75];
            let f = Field::constant(g, 1.0);
            assert_relative_eq!(
                lp_spacetime([&f, &f], q, &dts).unwrap(),
                1.0,
                epsilon = 1e-13
            );
        }
        let g1 = Grid::new(1, 0.5, 32).unwrap();
        let two = Field::constant(g1, 2.0);
        assert_relative_eq!(
            lp_spacetime([&two], 4.0, &[1.0]).unwrap(),
            2.0,
            epsilon = 1e-13
        );
        // f(x) = x on [0, 1] via the shifted box [-1/2, 1/2].
        for n in [16, 64] {
            let g = Grid::new(1, 0.5, n).unwrap();
            let f = Field::from_fn(g, |x, _| x + 0.5);
            assert!((integral(&f) - 0.5).abs() <= g.h() * g.h());
        }
        assert!(lp_spacetime([&two], 0.5, &[1.0]).is_err());
    }

    #[test]
    fn summation_by_parts_is_exact() {
        for g in [grid1(40), Grid::new(2, 1.0, 24).unwrap()] {
            let f = Field::from_fn(g, |x, y| {
                (1.0 - x * x) * (2.0 + (3.0 * y).cos()) + 0.1 * x.powi(3)
            });
            let u = Field::from_fn(g, |x, y| (x * 2.0).sin() * (1.0 + y * y));
            let a = integral(&f.zip_map(&laplacian(&u, Bc::ZERO), |a, b| a * b));
            let b = integral(&u.zip_map(&laplacian(&f, Bc::ZERO), |a, b| a * b));
            assert_relative_eq!(a, b, max_relative = 1e-11);
            let e = integral(&f.zip_map(&laplacian(&f, Bc::ZERO), |a, b| a * b));
            assert_relative_eq!(e, -dirichlet_energy(&f), max_relative = 1e-11);
        }
    }

    #[test]
    fn second_order_refinement() {
        // Measured order of the Laplacian and gradient errors over a dyadic triple.
        let errs = |n: usize| {
            let g = grid1(n);
            let f = Field::from_fn(g, |x, _| (1.3 * x).sin() + x.powi(3) / 7.0);
            let lap = laplacian(&f, Bc::NeumannZero);
            let grad = gradient(&f, Bc::NeumannZero).remove(0);
            let mut el: f64 = 0.0;
            let mut eg: f64 = 0.0;
            for k in 2..n - 2 {
                let x = g.center(k);
                el = el.max((lap.values()[k] - (-1.69 * (1.3 * x).sin() + 6.0 * x / 7.0)).abs());
                eg = eg.max((grad.values()[k] - (1.3 * (1.3 * x).cos() + 3.0 * x * x / 7.0)).abs());
            }
            (el, eg)
        };
        let e: Vec<_> = [50, 100, 200].iter().map(|&n| errs(n)).collect();
        for w in e.windows(2) {
            assert!((w[0].0 / w[1].0).log2() >= 1.9);
            assert!((w[0].1 / w[1].1).log2() >= 1.9);
        }
    }

    #[test]
    fn hessian_of_quadratic_in_2d() {
        let g = Grid::new(2, 1.0, 20).unwrap();
        let f = Field::from_fn(g, |x, y| x * x + 3.0 * x * y - y * y);
        let hs = hessian_norm_sq(&f, Bc::NeumannZero);
        // fxx = 2, fyy = -2, fxy = 3 -> 4 + 18 + 4 on cells two layers in.
        for k in 0..g.len() {
            let [i, j] = g.unflatten(k);
            if (2..18).contains(&i) && (2..18).contains(&j) {
                assert_relative_eq!(hs.values()[k], 26.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn test_function_support_rules() {
        let g = grid1(64);
        let z = TestFunction::new([0.0, 0.0], 0.5, 0.1, 0.9);
        z.check_support(&g, 1.0).unwrap();
        assert!(z.check_support(&g, 0.8).is_err());
        assert!(TestFunction::new([0.6, 0.0], 0.5, 0.1, 0.9)
            .check_support(&g, 1.0)
            .is_err());
        assert!(TestFunction::new([0.0, 0.0], 0.5, 0.0, 0.9)
            .check_support(&g, 1.0)
            .is_err());
        assert_eq!(z.value([0.5, 0.0], 1, 0.5), 0.0);
        assert_eq!(z.value([0.0, 0.0], 1, 0.95), 0.0);
        assert_eq!(z.time_derivative([0.0, 0.0], 1, 0.95), 0.0);
        assert!(z.value([0.1, 0.0], 1, 0.4) > 0.0);
    }

    #[test]
    fn mollifier_derivative_matches_difference_quotient() {
        for s in [-0.9, -0.4, 0.0, 0.3, 0.77] {
            let e = 1e-6;
            let fd = (mollifier(s + e) - mollifier(s - e)) / (2.0 * e);
            assert_relative_eq!(mollifier_prime(s), fd, epsilon = 1e-8);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn operators_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, s in 0.1f64..3.0) {
                let g = Grid::new(2, 1.0, 12).unwrap();
                let f = Field::from_fn(g, |x, y| (s * x).sin() * y);
                let u = Field::from_fn(g, |x, y| x * x - s * y);
                let comb = f.axpby(a, &u, b);
                let lhs = laplacian(&comb, Bc::ZERO);
                let rhs = laplacian(&f, Bc::ZERO).axpby(a, &laplacian(&u, Bc::ZERO), b);
                for k in 0..g.len() {
                    prop_assert!((lhs.values()[k] - rhs.values()[k]).abs() <= 1e-9 * (1.0 + rhs.values()[k].abs()));
                }
                let gl = gradient(&comb, Bc::ZERO);
                let gf = gradient(&f, Bc::ZERO);
                let gu = gradient(&u, Bc::ZERO);
                for axis in 0..2 {
                    for k in 0..g.len() {
                        let expect = a * gf[axis].values()[k] + b * gu[axis].values()[k];
                        prop_assert!((gl[axis].values()[k] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
                    }
                }
            }
        }
    }
}
