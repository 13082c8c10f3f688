use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use heleshaw::analytic::{self, BarenblattSetup, DEFAULT_ALPHAS};
use heleshaw::{limit, Execution, ExperimentConfig};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn sweep(c: &mut Criterion) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick_1d.toml");
    let config = ExperimentConfig::parse_file(&path).unwrap();
    let base = config.run_config().unwrap();
    let mut g = c.benchmark_group("gamma_sweep");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| limit::gamma_sweep(&base, &config.sweep.gammas, mode).unwrap())
        });
    }
    g.finish();
}

fn alpha_table(c: &mut Criterion) {
    let f = ExperimentConfig::standard_1d().focusing;
    let trace = analytic::evolve_hole(f.r0_fraction * f.r1, f.r1, f.control()).unwrap();
    let mut g = c.benchmark_group("alpha_table");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                analytic::integrability_table(&trace, &DEFAULT_ALPHAS, f.schedule(), mode).unwrap()
            })
        });
    }
    g.finish();
}

fn barenblatt_batch(c: &mut Criterion) {
    let setup = BarenblattSetup {
        cells: vec![50, 100],
        ..ExperimentConfig::standard_1d().barenblatt.setup()
    };
    let mut g = c.benchmark_group("barenblatt_batch");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| analytic::barenblatt_study(&setup, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sweep, alpha_table, barenblatt_batch);
criterion_main!(benches);
