//! Constitutive law `p = n^gamma` and the reaction terms `G`, `H`, `K`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;

/// Physical constants of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Stiffness exponent of the pressure law.
    pub gamma: f64,
    /// Homeostatic pressure.
    pub p_h: f64,
    /// Vessel reference pressure.
    pub p_b: f64,
    /// Far-field nutrient concentration.
    pub c_b: f64,
    /// Lower bound on `-dG/dp`.
    pub beta: f64,
    /// Declared necrosis threshold: `G(p, c) < 0` for all `c < c_star`.
    pub c_star: f64,
}

impl ModelParams {
    pub fn new(gamma: f64, p_h: f64, p_b: f64, c_b: f64, beta: f64, c_star: f64) -> Result<Self> {
        let params = Self {
            gamma,
            p_h,
            p_b,
            c_b,
            beta,
            c_star,
        };
        params.check()?;
        Ok(params)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma > 1 required (got {})",
                self.gamma
            )));
        }
        for (name, v) in [
            ("p_h", self.p_h),
            ("p_b", self.p_b),
            ("c_b", self.c_b),
            ("beta", self.beta),
            ("c_star", self.c_star),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} > 0 required (got {v})"
                )));
            }
        }
        Ok(())
    }

    /// Extra hypothesis of the Aronson-Benilan monitors: `gamma > max(1, 2 - 4/d)`.
    pub fn check_ab_hypothesis(&self, dim: usize) -> Result<()> {
        let bound = (2.0 - 4.0 / dim as f64).max(1.0);
        if self.gamma > bound {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "AB monitors need gamma > {bound} in dimension {dim} (got {})",
                self.gamma
            )))
        }
    }

    /// Density at the homeostatic pressure, `p_h^(1/gamma)`.
    pub fn n_h(&self) -> f64 {
        density_from_pressure(self.p_h, self.gamma).expect("p_h > 0 by construction")
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }
}

/// The reaction-term family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ReactionFamily {
    /// `G = g0 (p_h - p)(c + c1) - c2`, `H(c) = c`, `K(p) = |1 - p/p_b|_+`.
    Standard { g0: f64, c1: f64, c2: f64 },
    /// `G` constant, no nutrient coupling (`H = K = 0`).
    Constant { growth: f64 },
    /// `G = H = K = 0`: the pure porous medium equation.
    Inert,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionSpec {
    pub family: ReactionFamily,
    pub p_h: f64,
    pub p_b: f64,
}

impl ReactionSpec {
    pub fn standard(params: &ModelParams, g0: f64, c1: f64, c2: f64) -> Self {
        Self {
            family: ReactionFamily::Standard { g0, c1, c2 },
            p_h: params.p_h,
            p_b: params.p_b,
        }
    }

    pub fn constant(params: &ModelParams, growth: f64) -> Self {
        Self {
            family: ReactionFamily::Constant { growth },
            p_h: params.p_h,
            p_b: params.p_b,
        }
    }

    pub fn inert(params: &ModelParams) -> Self {
        Self {
            family: ReactionFamily::Inert,
            p_h: params.p_h,
            p_b: params.p_b,
        }
    }

    /// Growth rate `G(p, c)`.
    #[inline]
    pub fn g(&self, p: f64, c: f64) -> f64 {
        match self.family {
            ReactionFamily::Standard { g0, c1, c2 } => g0 * (self.p_h - p) * (c + c1) - c2,
            ReactionFamily::Constant { growth } => growth,
            ReactionFamily::Inert => 0.0,
        }
    }

    /// Nutrient consumption `H(c)`.
    #[inline]
    pub fn h(&self, c: f64) -> f64 {
        match self.family {
            ReactionFamily::Standard { .. } => c,
            _ => 0.0,
        }
    }

    /// Vessel supply `K(p)`.
    #[inline]
    pub fn k(&self, p: f64) -> f64 {
        match self.family {
            ReactionFamily::Standard { .. } => (1.0 - p / self.p_b).max(0.0),
            _ => 0.0,
        }
    }

    /// `int_0^p G(q, c) dq`, the potential entering the energy functional.
    #[inline]
    pub fn g_primitive(&self, p: f64, c: f64) -> f64 {
        match self.family {
            ReactionFamily::Standard { g0, c1, c2 } => {
                (c + c1) * g0 * (self.p_h * p - 0.5 * p * p) - c2 * p
            }
            ReactionFamily::Constant { growth } => growth * p,
            ReactionFamily::Inert => 0.0,
        }
    }

    /// Lipschitz bound of `G` in `p` over `c in [0, c_b]`.
    pub fn lipschitz_p(&self, c_b: f64) -> f64 {
        match self.family {
            ReactionFamily::Standard { g0, c1, .. } => g0 * (c_b + c1),
            _ => 0.0,
        }
    }

    pub fn g_field(&self, p: &Field, c: &Field) -> Field {
        p.zip_map(c, |p, c| self.g(p, c))
    }
}

/// `n^gamma`, with an explicit zero branch in front of `exp(gamma ln n)`.
pub fn pressure_from_density(n: f64, gamma: f64) -> Result<f64> {
    if n < 0.0 {
        return Err(Error::Domain {
            quantity: "density",
            cell: 0,
            value: n,
        });
    }
    Ok(pow_nonneg(n, gamma))
}

/// `p^(1/gamma)`.
pub fn density_from_pressure(p: f64, gamma: f64) -> Result<f64> {
    if p < 0.0 {
        return Err(Error::Domain {
            quantity: "pressure",
            cell: 0,
            value: p,
        });
    }
    Ok(pow_nonneg(p, 1.0 / gamma))
}

#[inline]
pub(crate) fn pow_nonneg(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        (e * x.ln()).exp()
    }
}

pub fn pressure_field(n: &Field, gamma: f64) -> Result<Field> {
    if let Some((cell, &value)) = n.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::Domain {
            quantity: "density",
            cell,
            value,
        });
    }
    Ok(n.map(|v| pow_nonneg(v, gamma)))
}

pub fn density_field(p: &Field, gamma: f64) -> Result<Field> {
    if let Some((cell, &value)) = p.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::Domain {
            quantity: "pressure",
            cell,
            value,
        });
    }
    Ok(p.map(|v| pow_nonneg(v, 1.0 / gamma)))
}

/// `max_{n in [0,1]} n^gamma (1 - n) = gamma^gamma / (gamma+1)^(gamma+1)`.
pub fn graph_bound(gamma: f64) -> f64 {
    (gamma * gamma.ln() - (gamma + 1.0) * (gamma + 1.0).ln()).exp()
}

/// One structural assumption, with the worst sample found.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// `(p, c)` where the margin was smallest.
    pub worst_at: (f64, f64),
    /// Smallest margin; negative means violated.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// `min -dG/dp` over the sampled lattice.
    pub measured_beta: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<24} {}  margin {:+.3e} at (p, c) = ({:.4}, {:.4})",
                c.name,
                if c.passed { "ok  " } else { "FAIL" },
                c.margin,
                c.worst_at.0,
                c.worst_at.1
            )?;
        }
        write!(f, "measured beta = {:.6}", self.measured_beta)
    }
}

/// Lattice resolution per axis; 100 x 100 = 10^4 samples.
pub const VALIDATION_LATTICE: usize = 100;
const VALIDATION_TOL: f64 = 1e-12;

struct Worst {
    margin: f64,
    at: (f64, f64),
}

impl Worst {
    fn new() -> Self {
        Self {
            margin: f64::INFINITY,
            at: (f64::NAN, f64::NAN),
        }
    }

    fn see(&mut self, margin: f64, p: f64, c: f64) {
        if margin < self.margin {
            self.margin = margin;
            self.at = (p, c);
        }
    }

    fn into_check(self, name: &'static str) -> Check {
        Check {
            name,
            passed: self.margin >= -VALIDATION_TOL,
            worst_at: self.at,
            margin: self.margin,
        }
    }
}

/// Samples the reaction family and reports every violated structural assumption.
pub fn validate(params: &ModelParams, spec: &ReactionSpec) -> ValidationReport {
    let m = VALIDATION_LATTICE;
    let dp = params.p_h / (m - 1) as f64;
    let dc = params.c_b / (m - 1) as f64;
    let lattice = |i: usize, j: usize| (i as f64 * dp, j as f64 * dc);

    let mut checks = Vec::new();

    let mut params_ok = Worst::new();
    params_ok.see(
        if params.check().is_ok() { 0.0 } else { -1.0 },
        params.p_h,
        params.c_b,
    );
    checks.push(params_ok.into_check("parameters"));

    // dG/dp <= -beta, by forward difference quotients.
    let mut monotone = Worst::new();
    let mut measured_beta = f64::INFINITY;
    for i in 0..m - 1 {
        for j in 0..m {
            let (p, c) = lattice(i, j);
            let slope = (spec.g(p + dp, c) - spec.g(p, c)) / dp;
            measured_beta = measured_beta.min(-slope);
            monotone.see(-slope - params.beta, p, c);
        }
    }
    checks.push(monotone.into_check("dG/dp <= -beta"));

    // G(p, c_b) <= 0 above the homeostatic pressure.
    let mut homeostatic = Worst::new();
    let p_top = 2.0 * params.p_h.max(params.p_b);
    for i in 0..m {
        let p = params.p_h + (p_top - params.p_h) * i as f64 / (m - 1) as f64;
        homeostatic.see(-spec.g(p, params.c_b), p, params.c_b);
    }
    checks.push(homeostatic.into_check("G(p >= p_H, c_B) <= 0"));

    // 0 <= K <= 1, nonincreasing, zero beyond p_b.
    let mut k_range = Worst::new();
    let mut k_monotone = Worst::new();
    let mut k_vanish = Worst::new();
    let p_span = 2.0 * params.p_b;
    let mut prev: Option<f64> = None;
    for i in 0..m {
        let p = p_span * i as f64 / (m - 1) as f64;
        let k = spec.k(p);
        k_range.see(k.min(1.0 - k), p, f64::NAN);
        if let Some(prev) = prev {
            k_monotone.see(prev - k, p, f64::NAN);
        }
        if p >= params.p_b {
            k_vanish.see(-k.abs(), p, f64::NAN);
        }
        prev = Some(k);
    }
    k_vanish.see(-spec.k(params.p_b).abs(), params.p_b, f64::NAN);
    checks.push(k_range.into_check("0 <= K <= 1"));
    checks.push(k_monotone.into_check("K nonincreasing"));
    checks.push(k_vanish.into_check("K = 0 for p >= p_B"));

    // H(0) = 0, H >= 0, nondecreasing.
    let mut h_zero = Worst::new();
    h_zero.see(-spec.h(0.0).abs(), f64::NAN, 0.0);
    let mut h_sign = Worst::new();
    let mut h_monotone = Worst::new();
    for j in 0..m {
        let (_, c) = lattice(0, j);
        h_sign.see(spec.h(c), f64::NAN, c);
        if j > 0 {
            h_monotone.see(spec.h(c) - spec.h(c - dc), f64::NAN, c);
        }
    }
    checks.push(h_zero.into_check("H(0) = 0"));
    checks.push(h_sign.into_check("H >= 0"));
    checks.push(h_monotone.into_check("H nondecreasing"));

    // Necrosis: G < 0 for every c below the declared threshold.
    let mut necrosis = Worst::new();
    if params.c_star > params.c_b {
        necrosis.see(params.c_b - params.c_star, f64::NAN, params.c_star);
    }
    let c_top = params.c_star.min(params.c_b);
    for i in 0..m {
        for j in 0..m {
            let p = p_top * i as f64 / (m - 1) as f64;
            // Right endpoint excluded: the condition is strict below c_star.
            let c = c_top * j as f64 / m as f64;
            let g = spec.g(p, c);
            // Strict inequality: a zero margin fails.
            necrosis.see(
                if g < 0.0 {
                    -g
                } else {
                    -g - 2.0 * VALIDATION_TOL
                },
                p,
                c,
            );
        }
    }
    checks.push(necrosis.into_check("G < 0 for c < c_*"));

    ValidationReport {
        checks,
        measured_beta,
    }
}
