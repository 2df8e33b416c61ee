//! Sequential against rayon-parallel execution of a batch of short runs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sea_smc::par;
use sea_smc::scenario::{bundled, Scenario};
use sea_smc::sweep::with_override;
use sea_smc::{run_scenario, Trace};

fn batch(n: usize) -> Vec<Scenario> {
    let mut base = bundled("fig4b").expect("bundled");
    base.sim.duration = 0.2;
    base.settle = 0.1;
    (0..n).map(|k| with_override(&base, "control.rho_torque", &format!("{:?}", 1e-4 * (k + 1) as f64)).expect("valid")).collect()
}

fn one(sc: &Scenario) -> Trace {
    run_scenario(sc).expect("run completes")
}

fn bench(c: &mut Criterion) {
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    for n in [4, 16] {
        let runs = batch(n);
        g.bench_with_input(BenchmarkId::new("sequential", n), &runs, |b, r| b.iter(|| par::map_sequential(r, one)));
        #[cfg(feature = "parallel")]
        g.bench_with_input(BenchmarkId::new("parallel", n), &runs, |b, r| b.iter(|| par::map_parallel(r, one)));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
