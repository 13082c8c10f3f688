use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use heleshaw::analytic::{self, FocusingStudy};
use heleshaw::config::ExperimentConfig;
use heleshaw::{limit, model, output, Execution};

#[derive(Parser)]
#[command(
    name = "heleshaw",
    version,
    about = "Stiff-pressure tumor growth simulator"
)]
struct Cli {
    /// Worker threads for independent runs; 1 forces sequential execution.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output root; defaults to `output.dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit nonzero when any assertion fails.
    #[arg(long)]
    assert: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a config and check the reaction hypotheses for every gamma.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// One run at `model.gamma`.
    Run(Common),
    /// The gamma sweep with its limit assertions.
    Sweep(Common),
    /// Radial hole focusing: trajectory and the integrability table.
    Focusing(Common),
    /// Porous-medium refinement study against the Barenblatt profile.
    BarenblattConvergence(Common),
    /// Aggregate run directories into one report.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::parse_file(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn out_root(common: &Common, config: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| config.output.dir.clone())
}

fn print_assertions(assertions: &[limit::Assertion]) -> bool {
    for a in assertions {
        println!(
            "{} {}: {}",
            if a.passed { "PASS" } else { "FAIL" },
            a.name,
            a.detail
        );
    }
    assertions.iter().all(|a| a.passed)
}

fn validate(path: &Path) -> Result<bool> {
    let config = load(path)?;
    let mut ok = true;
    for gamma in config.all_gammas() {
        let params = config.params_for(gamma).map_err(anyhow::Error::msg)?;
        let spec = config.reaction_spec(&params).map_err(anyhow::Error::msg)?;
        let report = model::validate(&params, &spec);
        println!("gamma {gamma}: measured beta {:.6}", report.measured_beta);
        for c in &report.checks {
            println!(
                "  {} {}: margin {:.3e} at (p, c) = ({:.4}, {:.4})",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                c.margin,
                c.worst_at.0,
                c.worst_at.1
            );
        }
        ok &= report.passed();
    }
    Ok(ok)
}

fn run(common: &Common) -> Result<bool> {
    let config = load(&common.config)?;
    let rc = config.run_config().map_err(anyhow::Error::msg)?;
    let start = Instant::now();
    let (out, error) = match heleshaw::run(&rc) {
        Ok(out) => (out, None),
        Err(f) => (*f.partial, Some(f.error.to_string())),
    };
    let dir = output::write_run(
        &out_root(common, &config),
        &config,
        &out,
        error.as_deref(),
        start.elapsed().as_secs_f64(),
    )?;
    println!("{}", dir.display());
    if let Some(e) = &error {
        eprintln!("run failed: {e}");
    }
    Ok(error.is_none())
}

fn sweep(common: &Common, exec: Execution) -> Result<bool> {
    let config = load(&common.config)?;
    if config.sweep.gammas.is_empty() {
        bail!("sweep.gammas is empty");
    }
    let base = config.run_config().map_err(anyhow::Error::msg)?;
    let report = limit::gamma_sweep(&base, &config.sweep.gammas, exec)?;
    let references = limit::sweep_references(&report, exec);
    let assertions = limit::assess_sweep(&report, &references);
    let dir = output::write_sweep(
        &out_root(common, &config),
        &config,
        &report,
        &references,
        &assertions,
    )?;
    println!("{}", dir.display());
    Ok(print_assertions(&assertions))
}

fn focusing(common: &Common, exec: Execution) -> Result<bool> {
    let config = load(&common.config)?;
    let f = &config.focusing;
    let study = analytic::focusing_study(
        f.r0_fraction * f.r1,
        f.r1,
        f.control(),
        &f.alphas,
        f.schedule(),
        exec,
    )?;
    let dir = out_root(common, &config).join(format!(
        "focusing-{}",
        output::content_hash(&config.to_toml())
    ));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), config.to_toml())?;
    let tr = &study.trace;
    let trace: Vec<Vec<f64>> = (0..tr.times.len())
        .map(|i| vec![tr.times[i], tr.radii[i], tr.a[i], tr.b[i]])
        .collect();
    output::write_table(&dir.join("trace.csv"), &["t", "R", "a", "b"], &trace)?;
    let mut rows = Vec::new();
    for r in &study.table {
        for (e, v) in r.eps.iter().zip(&r.values) {
            rows.push(vec![
                r.alpha.to_string(),
                format!("{e:e}"),
                format!("{v:e}"),
                r.classification.to_string(),
            ]);
        }
    }
    output::write_records(
        &dir.join("alpha_table.csv"),
        &["alpha", "eps", "I_eps", "classification"],
        &rows,
    )?;
    let law: Vec<Vec<f64>> = study.law.iter().map(|&(r, q)| vec![r, q]).collect();
    output::write_table(&dir.join("law.csv"), &["R", "ratio"], &law)?;
    println!("{}", dir.display());
    println!("extinction time {:.6e}, {} steps", tr.t_ext, tr.times.len());
    for r in &study.table {
        let mark = if r.classification == FocusingStudy::expected(r.alpha) {
            "ok  "
        } else {
            "FAIL"
        };
        println!(
            "  {mark} alpha {}: {} (tail slope {:.4})",
            r.alpha, r.classification, r.tail_slope
        );
    }
    println!("asymptotic law deviation {:.4}", study.law_deviation());
    Ok(study.classification_matches() && study.law_holds())
}

fn barenblatt(common: &Common, exec: Execution) -> Result<bool> {
    let config = load(&common.config)?;
    let setup = config.barenblatt.setup();
    let study = analytic::barenblatt_study(&setup, exec)?;
    let dir = out_root(common, &config).join(format!(
        "barenblatt-{}",
        output::content_hash(&config.to_toml())
    ));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), config.to_toml())?;
    let cases: Vec<Vec<f64>> = study
        .cases
        .iter()
        .map(|c| {
            vec![
                c.gamma,
                c.cells as f64,
                c.half_width,
                c.h,
                c.l1_error,
                c.steps as f64,
                c.runtime_secs,
            ]
        })
        .collect();
    output::write_table(
        &dir.join("cases.csv"),
        &[
            "gamma",
            "cells",
            "half_width",
            "h",
            "l1_error",
            "steps",
            "runtime_secs",
        ],
        &cases,
    )?;
    let orders: Vec<Vec<f64>> = study
        .orders
        .iter()
        .map(|o| vec![o.gamma, o.order, f64::from(u8::from(o.monotone))])
        .collect();
    output::write_table(
        &dir.join("orders.csv"),
        &["gamma", "order", "monotone"],
        &orders,
    )?;
    println!("{}", dir.display());
    for o in &study.orders {
        println!(
            "  gamma {}: order {:.3}, monotone {}",
            o.gamma, o.order, o.monotone
        );
    }
    Ok(study.passed(0.8))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
        #[cfg(not(feature = "parallel"))]
        let _ = n;
    }
    let exec = if cli.workers == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let (result, strict) = match &cli.command {
        Command::Validate { config } => (validate(config), true),
        Command::Run(c) => (run(c), true),
        Command::Sweep(c) => (sweep(c, exec), c.assert),
        Command::Focusing(c) => (focusing(c, exec), c.assert),
        Command::BarenblattConvergence(c) => (barenblatt(c, exec), c.assert),
        Command::Report { dirs, out } => (
            output::report(dirs, out)
                .map(|s| {
                    println!("aggregated {} runs into {}", s.len(), out.display());
                    true
                })
                .context("report"),
            true,
        ),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) if !strict => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
