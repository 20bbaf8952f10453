use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use roadlaw_bench::{constrained_plan, free_plan, tracking};
use roadlaw_core::mpc::{mpc_step, Input};
use roadlaw_core::{scenarios, sim};

fn mpc(c: &mut Criterion) {
    let mut g = c.benchmark_group("mpc_step");
    for (np, nc) in [(10, 3), (30, 5), (50, 10)] {
        let tr = tracking(np, nc);
        for (name, plan) in [("free", free_plan()), ("constrained", constrained_plan())] {
            g.bench_with_input(BenchmarkId::new(name, format!("np{np}_nc{nc}")), &plan, |b, plan| {
                b.iter(|| mpc_step(plan, &tr.reference, 0.0, &tr.ego, &Input::zeros(), &tr.cfg, &tr.params).unwrap())
            });
        }
    }
    g.finish();
}

fn closed_loop(c: &mut Criterion) {
    let mut g = c.benchmark_group("closed_loop");
    g.sample_size(10);
    for sc in [scenarios::lane_change_abort(), scenarios::overtaking()] {
        for compliance in [false, true] {
            let id = BenchmarkId::new(if compliance { "stack" } else { "replay" }, &sc.name);
            g.bench_function(id, |b| b.iter(|| sim::run_default(&sc, compliance).unwrap()));
        }
    }
    g.finish();
}

criterion_group!(benches, mpc, closed_loop);
criterion_main!(benches);
