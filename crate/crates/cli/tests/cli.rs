use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn heleshaw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heleshaw"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn dirs_with_prefix(root: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    v.sort();
    v
}

#[test]
fn run_twice_gives_identical_monitor_csv() {
    let cfg = configs().join("quick_1d.toml");
    let tmp = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(i.to_string());
        let o = heleshaw(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let dir = PathBuf::from(stdout(&o).trim());
        csvs.push(fs::read(dir.join("monitors.csv")).unwrap());
    }
    assert!(!csvs[0].is_empty());
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn sweep_writes_one_dir_per_gamma_and_one_summary() {
    let cfg = configs().join("quick_1d.toml");
    let tmp = tempfile::tempdir().unwrap();
    let o = heleshaw(&[
        "--workers",
        "2",
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let runs = dirs_with_prefix(tmp.path(), "run-");
    let sweeps = dirs_with_prefix(tmp.path(), "sweep-");
    assert_eq!(runs.len(), 4);
    assert_eq!(sweeps.len(), 1);
    let summary = fs::read_to_string(sweeps[0].join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    for r in &runs {
        assert!(r.join("summary.json").is_file());
        assert!(r.join("monitors.csv").is_file());
    }
}

#[test]
fn sequential_and_parallel_sweeps_agree() {
    let cfg = configs().join("quick_1d.toml");
    let tmp = tempfile::tempdir().unwrap();
    let mut sums = Vec::new();
    for w in ["1", "3"] {
        let out = tmp.path().join(w);
        let o = heleshaw(&[
            "--workers",
            w,
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let sweep = dirs_with_prefix(&out, "sweep-").remove(0);
        let csv = fs::read_to_string(sweep.join("summary.csv")).unwrap();
        // Drop the runtime column.
        let cut: Vec<String> = csv
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect();
        sums.push(cut);
    }
    assert_eq!(sums[0], sums[1]);
}

#[test]
fn focusing_emits_the_alpha_table() {
    let cfg = configs().join("standard_1d.toml");
    let tmp = tempfile::tempdir().unwrap();
    let o = heleshaw(&[
        "focusing",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--assert",
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    let dir = dirs_with_prefix(tmp.path(), "focusing-").remove(0);
    let table = fs::read_to_string(dir.join("alpha_table.csv")).unwrap();
    let mut alphas: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    alphas.dedup();
    assert_eq!(alphas, vec![2.0, 3.0, 3.5, 4.0, 4.5, 6.0]);
    for line in table.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let alpha: f64 = cols[0].parse().unwrap();
        let expected = if alpha <= 4.0 {
            "convergent"
        } else {
            "divergent"
        };
        assert_eq!(cols[3], expected, "{line}");
    }
    let trace = fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("t,R,a,b"));
}

#[test]
fn validate_rejects_gamma_below_one() {
    let text = fs::read_to_string(configs().join("standard_1d.toml")).unwrap();
    let bad = text.replacen("gamma = 40.0", "gamma = 0.5", 1);
    assert_ne!(bad, text);
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, bad).unwrap();
    let o = heleshaw(&["validate", "--config", path.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("model.gamma"), "{err}");
    assert!(err.contains("line 5"), "{err}");
}

#[test]
fn validate_accepts_the_standard_config() {
    let cfg = configs().join("standard_1d.toml");
    let o = heleshaw(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("gamma 80"));
}

#[test]
fn report_aggregates_runs() {
    let cfg = configs().join("quick_1d.toml");
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    assert!(heleshaw(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        runs.to_str().unwrap()
    ])
    .status
    .success());
    let dirs = dirs_with_prefix(&runs, "run-");
    let rep = tmp.path().join("report");
    let mut args = vec![
        "report".to_string(),
        "--out".into(),
        rep.to_str().unwrap().into(),
    ];
    args.extend(dirs.iter().map(|d| d.to_str().unwrap().to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = heleshaw(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(rep.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 5);
}
