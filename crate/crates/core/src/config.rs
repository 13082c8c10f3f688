//! Experiment configuration: TOML sections, environment overrides and
//! validation errors that point at the offending line.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytic::{
    self, barenblatt_density as barenblatt_at, BarenblattParams, BarenblattSetup, BarrierParams,
    CutoffSchedule, HoleControl,
};
use crate::grid::{Grid, TestFunction};
use crate::model::{self, ModelParams, ReactionSpec};
use crate::monitors::MonitorConfig;
use crate::solver::{InitialData, NutrientInit, RunConfig};

/// Prefix of environment overrides: `HELESHAW_<SECTION>__<KEY>=<toml value>`.
pub const ENV_PREFIX: &str = "HELESHAW_";

/// Snapshot spacing may not exceed this many CFL steps.
pub const MAX_STEPS_PER_SNAPSHOT: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line in the configuration text, when it could be located.
    pub line: Option<usize>,
    /// Dotted key, e.g. `model.gamma`.
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors {
    pub errors: Vec<ConfigError>,
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

// ---------------------------------------------------------------------------
// Sections

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub gamma: f64,
    pub p_h: f64,
    pub p_b: f64,
    pub c_b: f64,
    /// Defaults to the `beta` measured by the validator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub c_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSection {
    /// `standard`, `constant` or `inert`.
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub half_width: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NutrientSection {
    /// `uniform` or `deficit`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl Default for NutrientSection {
    fn default() -> Self {
        Self {
            kind: "uniform".into(),
            amplitude: None,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// `plateau`, `barenblatt` or `file`.
    pub builder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    /// Density values, one per cell (last column of each line), for `file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub nutrient: NutrientSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    pub snapshot_every: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_safety() -> f64 {
    0.4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSection {
    #[serde(default)]
    pub center: [f64; 2],
    pub radius: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl TestSection {
    pub fn test_function(&self) -> TestFunction {
        TestFunction::new(self.center, self.radius, self.t_start, self.t_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorsSection {
    pub accumulate: bool,
    pub aronson_benilan: bool,
    pub weighted: bool,
    /// Monitor CSV row every this many steps.
    pub stride: usize,
    pub tests: Vec<TestSection>,
}

impl Default for MonitorsSection {
    fn default() -> Self {
        Self {
            accumulate: true,
            aronson_benilan: true,
            weighted: true,
            stride: 100,
            tests: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub gammas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocusingSection {
    pub r1: f64,
    /// `R0 / R1`.
    pub r0_fraction: f64,
    pub rel_step: f64,
    pub stop_fraction: f64,
    pub alphas: Vec<f64>,
    pub eps0_fraction: f64,
    pub ratio: f64,
}

impl Default for FocusingSection {
    fn default() -> Self {
        let control = HoleControl::default();
        let schedule = CutoffSchedule::default();
        Self {
            r1: 1.0,
            r0_fraction: 1e-2,
            rel_step: control.rel_step,
            stop_fraction: control.stop_fraction,
            alphas: analytic::DEFAULT_ALPHAS.to_vec(),
            eps0_fraction: schedule.eps0_fraction,
            ratio: schedule.ratio,
        }
    }
}

impl FocusingSection {
    pub fn control(&self) -> HoleControl {
        HoleControl {
            rel_step: self.rel_step,
            stop_fraction: self.stop_fraction,
        }
    }

    pub fn schedule(&self) -> CutoffSchedule {
        CutoffSchedule {
            eps0_fraction: self.eps0_fraction,
            ratio: self.ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarenblattSection {
    pub gammas: Vec<f64>,
    pub cells: Vec<usize>,
    /// Box half-width over the support radius at `t_final`.
    pub box_factor: f64,
    pub mass: f64,
    pub t0: f64,
    pub t_final: f64,
    pub safety: f64,
}

impl Default for BarenblattSection {
    fn default() -> Self {
        Self {
            gammas: vec![3.0, 5.0, 9.0],
            cells: vec![200, 400, 800],
            box_factor: 1.2,
            mass: 1.0,
            t0: 0.1,
            t_final: 1.0,
            safety: 0.4,
        }
    }
}

impl BarenblattSection {
    pub fn setup(&self) -> BarenblattSetup {
        BarenblattSetup {
            gammas: self.gammas.clone(),
            cells: self.cells.clone(),
            box_factor: self.box_factor,
            mass: self.mass,
            t0: self.t0,
            t_final: self.t_final,
            safety: self.safety,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write one CSV per snapshot.
    pub csv_snapshots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            csv_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Echoed and hashed; the simulator itself is deterministic.
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSection,
    pub reaction: ReactionSection,
    pub grid: GridSection,
    pub initial: InitialSection,
    pub time: TimeSection,
    #[serde(default)]
    pub monitors: MonitorsSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub focusing: FocusingSection,
    #[serde(default)]
    pub barenblatt: BarenblattSection,
    #[serde(default)]
    pub output: OutputSection,
}

// ---------------------------------------------------------------------------
// Parsing

/// Line of `key` inside `[section]`, or of the section header itself.
fn locate(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            current = h
                .trim_start_matches('[')
                .trim_end_matches(']')
                .trim()
                .to_string();
            if current == section && header_line.is_none() {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current != section {
            continue;
        }
        if let Some(key) = key {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Applies `HELESHAW_<SECTION>__<KEY>` overrides; values are TOML literals,
/// falling back to plain strings.
fn apply_overrides(
    table: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<bool, ConfigError> {
    let mut changed = false;
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.clone()),
        };
        let (last, parents) = path.split_last().expect("split yields one element");
        let mut node = &mut *table;
        for p in parents {
            let entry = node
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry.as_table_mut().ok_or_else(|| ConfigError {
                line: None,
                key: path.join("."),
                message: format!("{name} overrides a non-table value"),
            })?;
        }
        node.insert(last.clone(), value);
        changed = true;
    }
    Ok(changed)
}

impl ExperimentConfig {
    pub fn parse_file(path: &Path) -> Result<Self, ConfigErrors> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigErrors {
            errors: vec![ConfigError {
                line: None,
                key: path.display().to_string(),
                message: e.to_string(),
            }],
        })?;
        let mut config = Self::parse_with_env(&text, std::env::vars())?;
        if let Some(p) = &config.initial.path {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    config.initial.path = Some(dir.join(p));
                }
            }
        }
        config.validate_in(&text)?;
        Ok(config)
    }

    /// Parses and validates `text` without consulting the environment.
    pub fn parse(text: &str) -> Result<Self, ConfigErrors> {
        let config = Self::parse_with_env(text, std::iter::empty())?;
        config.validate_in(text)?;
        Ok(config)
    }

    /// Parses `text` with the given overrides applied; no invariant checks.
    pub fn parse_with_env(
        text: &str,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigErrors> {
        let one = |e: ConfigError| ConfigErrors { errors: vec![e] };
        let mut table: toml::Table = toml::from_str(text).map_err(|e: toml::de::Error| {
            one(ConfigError {
                line: e.span().map(|s| line_of_offset(text, s.start)),
                key: "syntax".into(),
                message: e.message().to_string(),
            })
        })?;
        let overridden = apply_overrides(&mut table, vars).map_err(one)?;
        let effective = if overridden {
            toml::to_string(&table).expect("a parsed table serializes")
        } else {
            text.to_string()
        };
        toml::from_str::<Self>(&effective).map_err(|e| {
            let msg = e.message().to_string();
            let line = if overridden {
                None
            } else {
                e.span().map(|s| line_of_offset(text, s.start))
            };
            one(ConfigError {
                line,
                key: if overridden {
                    "environment override".into()
                } else {
                    "schema".into()
                },
                message: msg,
            })
        })
    }

    /// Every invariant violation, located in `text` where possible.
    pub fn validate_in(&self, text: &str) -> Result<(), ConfigErrors> {
        let errors = self
            .violations()
            .into_iter()
            .map(|(section, key, message)| ConfigError {
                line: locate(text, section, key),
                key: match key {
                    Some(k) => format!("{section}.{k}"),
                    None => section.to_string(),
                },
                message,
            })
            .collect::<Vec<_>>();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors { errors })
        }
    }

    pub fn validate(&self) -> Result<(), ConfigErrors> {
        self.validate_in("")
    }

    /// Gammas a run of this config may use: the model value plus the sweep list.
    pub fn all_gammas(&self) -> Vec<f64> {
        let mut g = vec![self.model.gamma];
        g.extend(&self.sweep.gammas);
        g
    }

    fn violations(&self) -> Vec<(&'static str, Option<&'static str>, String)> {
        let mut v: Vec<(&'static str, Option<&'static str>, String)> = Vec::new();
        let m = &self.model;
        if !(m.gamma > 1.0) {
            v.push((
                "model",
                Some("gamma"),
                format!("gamma > 1 required (got {})", m.gamma),
            ));
        }
        for (key, val) in [
            ("p_h", m.p_h),
            ("p_b", m.p_b),
            ("c_b", m.c_b),
            ("c_star", m.c_star),
        ] {
            if !(val > 0.0 && val.is_finite()) {
                v.push((
                    "model",
                    Some(key),
                    format!("{key} > 0 required (got {val})"),
                ));
            }
        }
        if let Some(b) = m.beta {
            if !(b > 0.0) {
                v.push((
                    "model",
                    Some("beta"),
                    format!("beta > 0 required (got {b})"),
                ));
            }
        }
        for &g in &self.sweep.gammas {
            if !(g > 1.0) {
                v.push((
                    "sweep",
                    Some("gammas"),
                    format!("gamma > 1 required (got {g})"),
                ));
            }
        }
        if self.sweep.gammas.windows(2).any(|w| !(w[1] > w[0])) {
            v.push((
                "sweep",
                Some("gammas"),
                "gamma list must be strictly increasing".into(),
            ));
        }
        if let Err(e) = self.reaction_family() {
            v.push(("reaction", None, e));
        }
        let grid = Grid::new(self.grid.dim, self.grid.half_width, self.grid.cells);
        if let Err(e) = &grid {
            v.push(("grid", None, e.to_string()));
        }
        let t = &self.time;
        if !(t.t_final >= 0.0 && t.t_final.is_finite()) {
            v.push((
                "time",
                Some("t_final"),
                format!("t_final >= 0 required (got {})", t.t_final),
            ));
        }
        if !(t.snapshot_every > 0.0) {
            v.push((
                "time",
                Some("snapshot_every"),
                "snapshot_every > 0 required".into(),
            ));
        }
        if !(t.safety > 0.0 && t.safety <= 1.0) {
            v.push((
                "time",
                Some("safety"),
                format!("safety must lie in (0, 1] (got {})", t.safety),
            ));
        }
        if !v.is_empty() {
            return v;
        }
        let grid = grid.expect("checked above");
        let gammas = self.all_gammas();
        if self.monitors.aronson_benilan {
            for &g in &gammas {
                if let Err(e) = self
                    .params_for(g)
                    .and_then(|p| p.check_ab_hypothesis(grid.dim()).map_err(|e| e.to_string()))
                {
                    v.push(("monitors", Some("aronson_benilan"), e));
                }
            }
        }
        // Time-difference quotients of snapshots need a cadence within 10^3 CFL steps.
        let gamma_max = gammas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let h = grid.h();
        let cfl = t.safety * h * h / (2.0 * grid.dim() as f64 * gamma_max * m.p_h);
        if t.snapshot_every > MAX_STEPS_PER_SNAPSHOT * cfl {
            v.push((
                "time",
                Some("snapshot_every"),
                format!(
                    "snapshot spacing {} exceeds 10^3 x the CFL step estimate {cfl:e} at gamma = {gamma_max}; the monitors' time-difference quotients need a finer cadence",
                    t.snapshot_every
                ),
            ));
        }
        for test in &self.monitors.tests {
            if let Err(e) = test.test_function().check_support(&grid, t.t_final) {
                v.push(("monitors", Some("tests"), e.to_string()));
            }
        }
        for &g in &gammas {
            let params = match self.params_for(g) {
                Ok(p) => p,
                Err(e) => {
                    v.push(("model", None, e));
                    continue;
                }
            };
            let spec = self.reaction_spec(&params).expect("family checked above");
            let report = model::validate(&params, &spec);
            for f in report.failures() {
                v.push((
                    "reaction",
                    None,
                    format!("assumption '{}' fails at (p, c) = {:?}", f.name, f.worst_at),
                ));
            }
            if let Some(beta) = m.beta {
                if report.measured_beta < beta * (1.0 - 1e-12) {
                    v.push((
                        "model",
                        Some("beta"),
                        format!(
                            "declared beta {beta} exceeds the measured -dG/dp bound {}",
                            report.measured_beta
                        ),
                    ));
                }
            }
            match self
                .initial_data(&params)
                .and_then(|init| init.build(grid, &params).map_err(|e| e.to_string()))
            {
                Err(e) => v.push(("initial", None, e)),
                Ok(state) => {
                    if let Some(e) =
                        containment(&state, &params, &spec, grid, t.t_final, &self.initial)
                    {
                        v.push(("grid", Some("half_width"), e));
                    }
                }
            }
        }
        let f = &self.focusing;
        if !(f.r1 > 0.0 && f.r0_fraction > 0.0 && f.r0_fraction < 1.0) {
            v.push((
                "focusing",
                None,
                "need r1 > 0 and 0 < r0_fraction < 1".into(),
            ));
        }
        if f.alphas.iter().any(|a| !(*a >= 1.0)) {
            v.push(("focusing", Some("alphas"), "alpha >= 1 required".into()));
        }
        if !(f.ratio > 0.0 && f.ratio < 1.0 && f.eps0_fraction > 0.0 && f.eps0_fraction < 1.0) {
            v.push((
                "focusing",
                None,
                "cutoff schedule needs ratio and eps0_fraction in (0, 1)".into(),
            ));
        }
        let b = &self.barenblatt;
        if b.gammas.iter().any(|g| !(*g > 1.0))
            || b.cells.len() < 2
            || b.cells.iter().any(|&c| c < 8)
        {
            v.push((
                "barenblatt",
                None,
                "need gammas > 1 and at least two resolutions of >= 8 cells".into(),
            ));
        } else if !(b.mass > 0.0
            && b.t0 > 0.0
            && b.t_final > 0.0
            && b.safety > 0.0
            && b.safety <= 1.0)
        {
            v.push((
                "barenblatt",
                None,
                "need mass, t0, t_final > 0 and safety in (0, 1]".into(),
            ));
        } else {
            // The support at T must stay off the boundary cell of the coarsest grid.
            let coarsest = *b.cells.iter().min().expect("nonempty") as f64;
            if !(b.box_factor * (1.0 - 2.0 / coarsest) > 1.0) {
                v.push((
                    "barenblatt",
                    Some("box_factor"),
                    format!(
                        "box_factor {} leaves no margin around the support",
                        b.box_factor
                    ),
                ));
            }
            for &g in &b.gammas {
                let n_max = BarenblattParams::for_gamma(g, 1, b.mass, b.t0)
                    .map(|p| barenblatt_density_max(&p))
                    .unwrap_or(f64::INFINITY);
                if n_max > 1.0 {
                    v.push((
                        "barenblatt",
                        Some("mass"),
                        format!("initial peak density {n_max:.4} exceeds n_H = 1 at gamma = {g}"),
                    ));
                }
            }
        }
        if self.monitors.stride == 0 {
            v.push(("monitors", Some("stride"), "stride >= 1 required".into()));
        }
        v
    }

    fn reaction_family(&self) -> Result<model::ReactionFamily, String> {
        let r = &self.reaction;
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| format!("family '{}' needs {name}", r.family))
        };
        match r.family.as_str() {
            "standard" => {
                let (g0, c1, c2) = (need("g0", r.g0)?, need("c1", r.c1)?, need("c2", r.c2)?);
                if !(g0 > 0.0 && c1 > 0.0 && c2 > 0.0) {
                    return Err(format!("g0, c1, c2 > 0 required (got {g0}, {c1}, {c2})"));
                }
                Ok(model::ReactionFamily::Standard { g0, c1, c2 })
            }
            "constant" => Ok(model::ReactionFamily::Constant {
                growth: need("growth", r.growth)?,
            }),
            "inert" => Ok(model::ReactionFamily::Inert),
            other => Err(format!(
                "unknown reaction family '{other}' (standard, constant, inert)"
            )),
        }
    }

    pub fn reaction_spec(&self, params: &ModelParams) -> Result<ReactionSpec, String> {
        Ok(ReactionSpec {
            family: self.reaction_family()?,
            p_h: params.p_h,
            p_b: params.p_b,
        })
    }

    /// Model parameters at stiffness `gamma`; `beta` defaults to the measured one.
    pub fn params_for(&self, gamma: f64) -> Result<ModelParams, String> {
        let m = &self.model;
        let mut params = ModelParams {
            gamma,
            p_h: m.p_h,
            p_b: m.p_b,
            c_b: m.c_b,
            beta: m.beta.unwrap_or(1.0),
            c_star: m.c_star,
        };
        if m.beta.is_none() {
            let spec = self.reaction_spec(&params)?;
            let measured = model::validate(&params, &spec).measured_beta;
            // Families without p-dependence have no contraction margin; keep a nominal shift.
            params.beta = if measured > 0.0 { measured } else { 1.0 };
        }
        params.check().map_err(|e| e.to_string())?;
        Ok(params)
    }

    pub fn initial_data(&self, params: &ModelParams) -> Result<InitialData, String> {
        let i = &self.initial;
        let nutrient = match i.nutrient.kind.as_str() {
            "uniform" => NutrientInit::Uniform,
            "deficit" => NutrientInit::Deficit {
                amplitude: i
                    .nutrient
                    .amplitude
                    .ok_or("deficit nutrient needs amplitude")?,
                radius: i.nutrient.radius.ok_or("deficit nutrient needs radius")?,
            },
            other => {
                return Err(format!(
                    "unknown nutrient kind '{other}' (uniform, deficit)"
                ))
            }
        };
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| format!("builder '{}' needs {name}", i.builder))
        };
        match i.builder.as_str() {
            "plateau" => Ok(InitialData::Plateau {
                radius: need("radius", i.radius)?,
                edge: need("edge", i.edge)?,
                pressure_fraction: i.pressure_fraction.unwrap_or(1.0),
                nutrient,
            }),
            "barenblatt" => Ok(InitialData::Barenblatt {
                mass: need("mass", i.mass)?,
                t0: need("t0", i.t0)?,
                nutrient,
            }),
            "file" => {
                let path = i.path.as_ref().ok_or("builder 'file' needs path")?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                let mut n = Vec::new();
                for (ln, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let last = line.rsplit(',').next().unwrap_or(line).trim();
                    match last.parse::<f64>() {
                        Ok(v) => n.push(v),
                        // A header row.
                        Err(_) if n.is_empty() => continue,
                        Err(_) => {
                            return Err(format!(
                                "{}:{}: not a number: {last}",
                                path.display(),
                                ln + 1
                            ))
                        }
                    }
                }
                let _ = params;
                Ok(InitialData::Values { n, c: None })
            }
            other => Err(format!(
                "unknown builder '{other}' (plateau, barenblatt, file)"
            )),
        }
    }

    pub fn grid(&self) -> Result<Grid, String> {
        Grid::new(self.grid.dim, self.grid.half_width, self.grid.cells).map_err(|e| e.to_string())
    }

    pub fn monitor_config(&self) -> MonitorConfig {
        MonitorConfig {
            accumulate: self.monitors.accumulate,
            aronson_benilan: self.monitors.aronson_benilan,
            weighted: self.monitors.weighted,
            tests: self
                .monitors
                .tests
                .iter()
                .map(TestSection::test_function)
                .collect(),
        }
    }

    /// Solver input at the model's gamma.
    pub fn run_config(&self) -> Result<RunConfig, String> {
        self.run_config_for(self.model.gamma)
    }

    pub fn run_config_for(&self, gamma: f64) -> Result<RunConfig, String> {
        let params = self.params_for(gamma)?;
        Ok(RunConfig {
            params,
            spec: self.reaction_spec(&params)?,
            grid: self.grid()?,
            initial: self.initial_data(&params)?,
            t_final: self.time.t_final,
            snapshot_every: self.time.snapshot_every,
            safety: self.time.safety,
            monitors: self.monitor_config(),
            monitor_stride: self.monitors.stride,
        })
    }

    /// Same experiment at another gamma.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        let mut c = self.clone();
        c.model.gamma = gamma;
        c.sweep.gammas.clear();
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The standard 1D experiment: default reactions, a half-homeostatic
    /// plateau of radius 0.5, `T = 1`, `gamma` in {10, 20, 40, 80}.
    pub fn standard_1d() -> Self {
        Self {
            seed: 0,
            model: ModelSection {
                gamma: 40.0,
                p_h: 1.0,
                p_b: 2.0,
                c_b: 1.0,
                beta: Some(0.1),
                c_star: 0.3,
            },
            reaction: ReactionSection {
                family: "standard".into(),
                g0: Some(1.0),
                c1: Some(0.1),
                c2: Some(0.5),
                growth: None,
            },
            grid: GridSection {
                dim: 1,
                half_width: 2.5,
                cells: 200,
            },
            initial: InitialSection {
                builder: "plateau".into(),
                radius: Some(0.5),
                edge: Some(0.25),
                pressure_fraction: Some(0.1),
                mass: None,
                t0: None,
                path: None,
                nutrient: NutrientSection::default(),
            },
            time: TimeSection {
                t_final: 1.0,
                snapshot_every: 1e-3,
                safety: 0.4,
            },
            monitors: MonitorsSection {
                tests: vec![TestSection {
                    center: [0.0, 0.0],
                    radius: 0.4,
                    t_start: 0.25,
                    t_end: 0.75,
                }],
                ..MonitorsSection::default()
            },
            sweep: SweepSection {
                gammas: vec![10.0, 20.0, 40.0, 80.0],
            },
            focusing: FocusingSection::default(),
            barenblatt: BarenblattSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn barenblatt_density_max(p: &BarenblattParams) -> f64 {
    barenblatt_at(0.0, 0.0, p)
}

/// Box containment: the barrier ball at `T` (growing tumors) or the
/// Barenblatt support at `T` (pure porous medium) must stay inside the box.
fn containment(
    state: &crate::solver::State,
    params: &ModelParams,
    spec: &ReactionSpec,
    grid: Grid,
    t_final: f64,
    initial: &InitialSection,
) -> Option<String> {
    let margin = grid.half_width() - grid.h();
    let rate = spec.g(0.0, params.c_b);
    if rate > 0.0 {
        let barrier = BarrierParams::from_initial(state, rate).ok()?;
        let r = analytic::barrier_radius(t_final, &barrier);
        if r >= margin {
            return Some(format!(
                "barrier radius sqrt(2 S(T)) = {r:.4} at gamma = {} does not fit in the box (need < {margin:.4})",
                params.gamma
            ));
        }
    } else if let (Some(mass), Some(t0)) = (initial.mass, initial.t0) {
        if initial.builder == "barenblatt" {
            let b = BarenblattParams::for_gamma(params.gamma, grid.dim(), mass, t0).ok()?;
            let r = b.support_radius(t_final);
            if r >= margin {
                return Some(format!(
                    "Barenblatt support {r:.4} at T leaves the box (need < {margin:.4})"
                ));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
gamma = 10.0
p_h = 1.0
p_b = 2.0
c_b = 1.0
c_star = 0.3

[reaction]
family = "standard"
g0 = 1.0
c1 = 0.1
c2 = 0.5

[grid]
dim = 1
half_width = 2.5
cells = 100

[initial]
builder = "plateau"
radius = 0.5
edge = 0.25

[time]
t_final = 0.1
snapshot_every = 0.01
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.time.safety, 0.4);
        assert_eq!(c.monitors.stride, 100);
        assert_eq!(c.focusing.alphas, analytic::DEFAULT_ALPHAS.to_vec());
        let params = c.params_for(10.0).unwrap();
        assert!((params.beta - 0.1).abs() < 1e-12);
        let rc = c.run_config().unwrap();
        assert_eq!(rc.grid.cells(), 100);
        // The echo parses back to the same config.
        let again = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn gamma_below_one_is_rejected_with_its_line() {
        let text = MINIMAL.replace("gamma = 10.0", "gamma = 0.5");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        let e = err.errors.iter().find(|e| e.key == "model.gamma").unwrap();
        assert!(e.message.contains("gamma > 1 required"));
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = MINIMAL.replace("c_star = 0.3", "c_star = 0.3\ngama = 3.0");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
        assert!(err.errors[0].line.is_some());
        let text = MINIMAL.replace("[time]", "[tme]");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn type_mismatch_is_located() {
        let text = MINIMAL.replace("cells = 100", "cells = \"many\"");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert_eq!(err.errors[0].line, Some(18));
    }

    #[test]
    fn coarse_cadence_is_rejected() {
        let text = MINIMAL
            .replace("snapshot_every = 0.01", "snapshot_every = 0.5")
            .replace("t_final = 0.1", "t_final = 1.0");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        let e = err
            .errors
            .iter()
            .find(|e| e.key == "time.snapshot_every")
            .unwrap();
        assert!(e.message.contains("10^3"), "{}", e.message);
    }

    #[test]
    fn small_box_fails_the_barrier_check() {
        let text = MINIMAL.replace("half_width = 2.5", "half_width = 1.0");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(
            err.errors.iter().any(|e| e.key == "grid.half_width"),
            "{err}"
        );
    }

    #[test]
    fn necrosis_violation_is_reported() {
        let text = MINIMAL.replace("c_star = 0.3", "c_star = 0.9");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.errors.iter().any(|e| e.key == "reaction"), "{err}");
    }

    #[test]
    fn environment_overrides_apply() {
        let vars = vec![
            ("HELESHAW_MODEL__GAMMA".to_string(), "20".to_string()),
            (
                "HELESHAW_INITIAL__BUILDER".to_string(),
                "plateau".to_string(),
            ),
            ("UNRELATED".to_string(), "1".to_string()),
        ];
        let c = ExperimentConfig::parse_with_env(MINIMAL, vars).unwrap();
        assert_eq!(c.model.gamma, 20.0);
        c.validate().unwrap();
        let bad = vec![("HELESHAW_MODEL__GAMA".to_string(), "20".to_string())];
        assert!(ExperimentConfig::parse_with_env(MINIMAL, bad).is_err());
    }

    #[test]
    fn standard_experiment_is_valid() {
        let c = ExperimentConfig::standard_1d();
        c.validate().unwrap();
        let shipped = include_str!("../../../configs/standard_1d.toml");
        assert_eq!(ExperimentConfig::parse(shipped).unwrap(), c);
    }
}
