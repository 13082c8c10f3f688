//! Deterministic on-disk layout: one content-addressed directory per run,
//! sweep summaries, and aggregation of run summaries.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::limit::{Assertion, ReferenceRow, SweepFits, SweepReport};
use crate::monitors::{Complementarity, SnapshotRow, SpacetimeTotals, StepRow};
use crate::solver::{InitialReport, RunOutput, State};

/// Bumped whenever a file below changes shape.
pub const FORMAT_VERSION: u32 = 1;

pub fn version_stamp() -> String {
    format!(
        "heleshaw {} format {}",
        env!("CARGO_PKG_VERSION"),
        FORMAT_VERSION
    )
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn content_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}

fn write_csv<R: AsRef<[String]>>(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = R>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r.as_ref()).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip representation.
fn num(v: f64) -> String {
    format!("{v:e}")
}

/// One field block inside `fields.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldBlock {
    pub name: String,
    pub t: f64,
    /// Byte offset of the first value.
    pub offset: u64,
    /// Number of `f64` values.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub run_id: String,
    pub gamma: f64,
    pub dim: usize,
    pub half_width: f64,
    pub cells: usize,
    pub h: f64,
    /// Little-endian `f64`, row-major with `x` fastest.
    pub binary: String,
    pub field_names: Vec<String>,
    pub snapshot_times: Vec<f64>,
    pub blocks: Vec<FieldBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub run_id: String,
    pub gamma: f64,
    pub completed: bool,
    pub error: Option<String>,
    pub t_reached: f64,
    pub steps: usize,
    pub clipped_mass: f64,
    pub clipped_fraction: f64,
    pub graph_residual_max: f64,
    pub graph_bound: f64,
    pub totals: SpacetimeTotals,
    pub complementarity: Vec<Complementarity>,
    pub weight_constant: Option<f64>,
    pub initial: InitialReport,
    pub runtime_secs: f64,
}

impl RunSummary {
    pub fn of(run_id: &str, output: &RunOutput, error: Option<&str>, runtime_secs: f64) -> Self {
        let gamma = output.trajectory.params.gamma;
        Self {
            version: version_stamp(),
            run_id: run_id.to_string(),
            gamma,
            completed: error.is_none(),
            error: error.map(str::to_string),
            t_reached: output.trajectory.final_time(),
            steps: output.steps,
            clipped_mass: output.clipped_mass,
            clipped_fraction: output.clipped_fraction(),
            graph_residual_max: output.report.graph_residual_max,
            graph_bound: crate::model::graph_bound(gamma),
            totals: output.report.totals,
            complementarity: output.report.complementarity.clone(),
            weight_constant: output.report.weight_constant,
            initial: output.initial,
            runtime_secs,
        }
    }
}

/// Run directory name for `config` (content hash of the echoed config).
pub fn run_id(config: &ExperimentConfig) -> String {
    format!("run-{}", content_hash(&config.to_toml()))
}

/// Writes the snapshot fields as one binary block per (snapshot, field).
fn write_fields(dir: &Path, snapshots: &[State]) -> Result<Vec<FieldBlock>> {
    let mut w = BufWriter::new(fs::File::create(dir.join("fields.bin"))?);
    let mut blocks = Vec::new();
    let mut offset = 0u64;
    for s in snapshots {
        for (name, f) in [("n", &s.n), ("p", &s.p), ("c", &s.c)] {
            for v in f.values() {
                w.write_all(&v.to_le_bytes())?;
            }
            blocks.push(FieldBlock {
                name: name.into(),
                t: s.t,
                offset,
                len: f.values().len(),
            });
            offset += 8 * f.values().len() as u64;
        }
    }
    w.flush()?;
    Ok(blocks)
}

/// One row per cell: coordinates, then one column per field.
pub fn write_fields_csv(path: &Path, names: &[&str], fields: &[&Field]) -> Result<()> {
    let grid = *fields[0].grid();
    let mut header: Vec<&str> = if grid.dim() == 1 {
        vec!["x"]
    } else {
        vec!["x", "y"]
    };
    header.extend_from_slice(names);
    let rows = (0..grid.len()).map(|k| {
        let xy = grid.coords(k);
        let mut r: Vec<String> = xy[..grid.dim()].iter().map(|&v| num(v)).collect();
        r.extend(fields.iter().map(|f| num(f.values()[k])));
        r
    });
    write_csv(path, &header, rows)
}

/// Reads one field block back from a run directory.
pub fn read_field(dir: &Path, block: &FieldBlock) -> Result<Vec<f64>> {
    let bytes = fs::read(dir.join("fields.bin"))?;
    let start = block.offset as usize;
    let end = start + 8 * block.len;
    let slice = bytes.get(start..end).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "block {} at t = {} beyond fields.bin",
            block.name, block.t
        ))
    })?;
    Ok(slice
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Writes a complete run directory under `root` and returns its path.
/// A failed run still gets its partial outputs and a summary with the error.
pub fn write_run(
    root: &Path,
    config: &ExperimentConfig,
    output: &RunOutput,
    error: Option<&str>,
    runtime_secs: f64,
) -> Result<PathBuf> {
    let id = run_id(config);
    let dir = root.join(&id);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), config.to_toml())?;
    fs::write(dir.join("VERSION"), version_stamp() + "\n")?;

    let snapshots = &output.trajectory.snapshots;
    let blocks = write_fields(&dir, snapshots)?;
    let grid = config.grid().map_err(Error::InvalidParameter)?;
    let manifest = Manifest {
        version: version_stamp(),
        run_id: id.clone(),
        gamma: config.model.gamma,
        dim: grid.dim(),
        half_width: grid.half_width(),
        cells: grid.cells(),
        h: grid.h(),
        binary: "fields.bin".into(),
        field_names: vec!["n".into(), "p".into(), "c".into()],
        snapshot_times: snapshots.iter().map(|s| s.t).collect(),
        blocks,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;

    write_csv(
        &dir.join("monitors.csv"),
        &StepRow::header(),
        output
            .step_rows
            .iter()
            .map(|r| r.values().into_iter().map(num).collect::<Vec<_>>()),
    )?;
    write_snapshot_rows(&dir.join("snapshots.csv"), &output.report.rows)?;
    write_json(
        &dir.join("summary.json"),
        &RunSummary::of(&id, output, error, runtime_secs),
    )?;

    if config.output.csv_snapshots {
        let sub = dir.join("snapshots");
        fs::create_dir_all(&sub)?;
        for (i, s) in snapshots.iter().enumerate() {
            write_fields_csv(
                &sub.join(format!("{i:06}.csv")),
                &["n", "p", "c"],
                &[&s.n, &s.p, &s.c],
            )?;
        }
    }
    Ok(dir)
}

fn write_snapshot_rows(path: &Path, rows: &[SnapshotRow]) -> Result<()> {
    let header = [
        "t",
        "n_l1",
        "n_l2",
        "n_linf",
        "p_l1",
        "p_l2",
        "p_linf",
        "c_dev_l1",
        "c_dev_l2",
        "c_dev_linf",
        "grad_c_l2",
        "grad_c_linf",
        "grad_p_l2",
        "grad_p_linf",
        "energy",
        "graph_residual",
        "support_radius",
    ];
    write_csv(
        path,
        &header,
        rows.iter().map(|r| {
            [
                r.t,
                r.n_l1,
                r.n_l2,
                r.n_linf,
                r.p_l1,
                r.p_l2,
                r.p_linf,
                r.c_dev_l1,
                r.c_dev_l2,
                r.c_dev_linf,
                r.grad_c_l2,
                r.grad_c_linf,
                r.grad_p_l2,
                r.grad_p_linf,
                r.energy,
                r.graph_residual,
                r.support_radius,
            ]
            .into_iter()
            .map(num)
            .collect::<Vec<_>>()
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub run_id: String,
    pub completed: bool,
    pub graph_residual_max: f64,
    pub ab_neg_l3: f64,
    pub grad_p_l4: f64,
    pub weighted_ab_l3: f64,
    pub complementarity_lhs: Option<f64>,
    pub complementarity_rhs: Option<f64>,
    pub complementarity_bound: Option<f64>,
    pub clipped_fraction: f64,
    pub reference_l2: Option<f64>,
    pub reference_iterations: Option<usize>,
    pub reference_contraction: Option<f64>,
    pub symmetric_difference: Option<f64>,
    pub runtime_secs: f64,
}

impl SweepRow {
    const HEADER: [&'static str; 16] = [
        "gamma",
        "run_id",
        "completed",
        "graph_residual_max",
        "ab_neg_l3",
        "grad_p_l4",
        "weighted_ab_l3",
        "complementarity_lhs",
        "complementarity_rhs",
        "complementarity_bound",
        "clipped_fraction",
        "reference_l2",
        "reference_iterations",
        "reference_contraction",
        "symmetric_difference",
        "runtime_secs",
    ];

    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        vec![
            num(self.gamma),
            self.run_id.clone(),
            self.completed.to_string(),
            num(self.graph_residual_max),
            num(self.ab_neg_l3),
            num(self.grad_p_l4),
            num(self.weighted_ab_l3),
            opt(self.complementarity_lhs),
            opt(self.complementarity_rhs),
            opt(self.complementarity_bound),
            num(self.clipped_fraction),
            opt(self.reference_l2),
            self.reference_iterations
                .map(|i| i.to_string())
                .unwrap_or_default(),
            opt(self.reference_contraction),
            opt(self.symmetric_difference),
            num(self.runtime_secs),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub version: String,
    pub gammas: Vec<f64>,
    pub flagged: bool,
    pub fits: SweepFits,
    pub rows: Vec<SweepRow>,
    pub assertions: Vec<Assertion>,
}

/// Writes every sweep run plus `sweep-<hash>/summary.{csv,json}` and the
/// reference pressures; returns the summary directory.
pub fn write_sweep(
    root: &Path,
    config: &ExperimentConfig,
    sweep: &SweepReport,
    references: &[ReferenceRow],
    assertions: &[Assertion],
) -> Result<PathBuf> {
    let mut rows = Vec::new();
    for e in &sweep.entries {
        let run_config = config.with_gamma(e.gamma);
        let dir = write_run(
            root,
            &run_config,
            &e.output,
            e.error.as_deref(),
            e.runtime_secs,
        )?;
        let reference = references.iter().find(|r| r.gamma == e.gamma);
        let href = reference.and_then(|r| r.reference.as_ref().ok());
        if let (Some(h), Some(last)) = (href, e.output.trajectory.snapshots.last()) {
            write_fields_csv(
                &dir.join("reference.csv"),
                &["p_num", "p_ref"],
                &[&last.p, &h.p],
            )?;
        }
        let comp = e.output.report.complementarity.first();
        rows.push(SweepRow {
            gamma: e.gamma,
            run_id: run_id(&run_config),
            completed: e.succeeded(),
            graph_residual_max: e.report().graph_residual_max,
            ab_neg_l3: e.totals().ab_neg_l3,
            grad_p_l4: e.totals().grad_p_l4,
            weighted_ab_l3: e.totals().weighted_ab_l3,
            complementarity_lhs: comp.map(|c| c.lhs),
            complementarity_rhs: comp.map(|c| c.rhs),
            complementarity_bound: comp.map(|c| c.lhs_bound()),
            clipped_fraction: e.output.clipped_fraction(),
            reference_l2: reference.filter(|_| href.is_some()).map(|r| r.l2_error),
            reference_iterations: href.map(|h| h.iterations),
            reference_contraction: href.map(|h| h.contraction),
            symmetric_difference: reference
                .filter(|_| href.is_some())
                .map(|r| r.symmetric_difference),
            runtime_secs: e.runtime_secs,
        });
    }
    let dir = root.join(format!("sweep-{}", content_hash(&config.to_toml())));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), config.to_toml())?;
    fs::write(dir.join("VERSION"), version_stamp() + "\n")?;
    write_csv(
        &dir.join("summary.csv"),
        &SweepRow::HEADER,
        rows.iter().map(SweepRow::record),
    )?;
    let summary = SweepSummary {
        version: version_stamp(),
        gammas: sweep.gammas.clone(),
        flagged: sweep.flagged,
        fits: sweep.fits.clone(),
        rows,
        assertions: assertions.to_vec(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(dir)
}

/// Writes `header` and rows of numbers to a CSV file.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_csv(
        path,
        header,
        rows.iter()
            .map(|r| r.iter().copied().map(num).collect::<Vec<_>>()),
    )
}

/// Writes a CSV with preformatted cells.
pub fn write_records(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_csv(path, header, rows)
}

/// Run summaries found in `dirs` (each a run directory or a directory of them).
pub fn collect_summaries(dirs: &[PathBuf]) -> Result<Vec<(PathBuf, RunSummary)>> {
    let mut found = Vec::new();
    for d in dirs {
        let direct = d.join("summary.json");
        if direct.is_file() && d.join("manifest.json").is_file() {
            found.push(d.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(d)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("summary.json").is_file() && p.join("manifest.json").is_file())
            .collect();
        subs.sort();
        found.extend(subs);
    }
    let mut out = Vec::new();
    for dir in found {
        let text = fs::read_to_string(dir.join("summary.json"))?;
        let summary: RunSummary = serde_json::from_str(&text)?;
        out.push((dir, summary));
    }
    Ok(out)
}

/// Aggregates run summaries into `report.csv` plus plot-ready `<run_id>.csv`
/// monitor copies under `out`. Refuses summaries from other versions.
pub fn report(dirs: &[PathBuf], out: &Path) -> Result<Vec<RunSummary>> {
    let summaries = collect_summaries(dirs)?;
    if summaries.is_empty() {
        return Err(Error::InvalidParameter("no run summaries found".into()));
    }
    let mine = version_stamp();
    let foreign: Vec<String> = summaries
        .iter()
        .filter(|(_, s)| s.version != mine)
        .map(|(d, s)| format!("{} ({})", d.display(), s.version))
        .collect();
    if !foreign.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "refusing mixed-version aggregation; expected '{mine}', found {}",
            foreign.join(", ")
        )));
    }
    fs::create_dir_all(out)?;
    let mut header = vec![
        "run_id",
        "gamma",
        "completed",
        "t_reached",
        "steps",
        "clipped_fraction",
        "graph_residual_max",
        "graph_bound",
    ];
    header.extend_from_slice(&SpacetimeTotals::COLUMNS);
    header.extend_from_slice(&[
        "complementarity_lhs",
        "complementarity_rhs",
        "complementarity_bound",
    ]);
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|(_, s)| {
            let mut r = vec![
                s.run_id.clone(),
                num(s.gamma),
                s.completed.to_string(),
                num(s.t_reached),
                s.steps.to_string(),
                num(s.clipped_fraction),
                num(s.graph_residual_max),
                num(s.graph_bound),
            ];
            r.extend(s.totals.values().into_iter().map(num));
            let c = s.complementarity.first();
            r.extend(
                [c.map(|c| c.lhs), c.map(|c| c.rhs), c.map(|c| c.lhs_bound())]
                    .map(|v| v.map(num).unwrap_or_default()),
            );
            r
        })
        .collect();
    write_csv(&out.join("report.csv"), &header, &rows)?;
    for (dir, s) in &summaries {
        for name in ["monitors.csv", "snapshots.csv"] {
            let src = dir.join(name);
            if src.is_file() {
                let stem = name.trim_end_matches(".csv");
                fs::copy(&src, out.join(format!("{}-{stem}.csv", s.run_id)))?;
            }
        }
    }
    Ok(summaries.into_iter().map(|(_, s)| s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::standard_1d();
        c.grid.cells = 50;
        c.time.t_final = 0.01;
        c.time.snapshot_every = 0.005;
        c.model.gamma = 10.0;
        c.sweep.gammas.clear();
        c.monitors.tests.clear();
        c.monitors.stride = 1;
        c
    }

    #[test]
    fn run_directory_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let config = tiny();
        let out = solver::run(&config.run_config().unwrap()).unwrap();
        let dir = write_run(tmp.path(), &config, &out, None, 0.0).unwrap();
        for f in [
            "config.toml",
            "VERSION",
            "manifest.json",
            "fields.bin",
            "monitors.csv",
            "summary.json",
        ] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest.snapshot_times, vec![0.0, 0.005, 0.01]);
        let last = manifest
            .blocks
            .iter()
            .rev()
            .find(|b| b.name == "p")
            .unwrap();
        let p = read_field(&dir, last).unwrap();
        assert_eq!(p, out.trajectory.snapshots[2].p.values());
        let echoed =
            ExperimentConfig::parse(&fs::read_to_string(dir.join("config.toml")).unwrap()).unwrap();
        assert_eq!(echoed, config);
        assert_eq!(dir.file_name().unwrap().to_str().unwrap(), run_id(&config));
        let lines = fs::read_to_string(dir.join("monitors.csv"))
            .unwrap()
            .lines()
            .count();
        assert_eq!(lines, out.steps + 1);
    }

    #[test]
    fn report_refuses_mixed_versions() {
        let tmp = tempfile::tempdir().unwrap();
        let config = tiny();
        let out = solver::run(&config.run_config().unwrap()).unwrap();
        write_run(tmp.path(), &config, &out, None, 0.0).unwrap();
        let other = config.with_gamma(20.0);
        let out2 = solver::run(&other.run_config().unwrap()).unwrap();
        let dir2 = write_run(tmp.path(), &other, &out2, None, 0.0).unwrap();
        let agg = tmp.path().join("agg");
        let summaries = report(&[tmp.path().to_path_buf()], &agg).unwrap();
        assert_eq!(summaries.len(), 2);
        assert!(agg.join("report.csv").is_file());

        let path = dir2.join("summary.json");
        let mut s: RunSummary = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        s.version = "heleshaw 0.0.0 format 0".into();
        fs::write(&path, serde_json::to_string(&s).unwrap()).unwrap();
        let err = report(&[tmp.path().to_path_buf()], &agg).unwrap_err();
        assert!(err.to_string().contains("mixed-version"), "{err}");
    }

    #[test]
    fn hashes_are_stable() {
        assert_eq!(content_hash("abc"), "ba7816bf8f01cfea");
        assert_ne!(run_id(&tiny()), run_id(&tiny().with_gamma(20.0)));
    }
}
