use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use navprobe::agent::{gru_forward, rollout_forced};
use navprobe::gbt::{fit, GbtParams, Objective};
use navprobe::shap::{brute_force_shapley, tree_shap};
use navprobe::Intervention;
use navprobe_bench::{agent_fixture, fitted_probe, probe_rows};

fn gbt(c: &mut Criterion) {
    let (x, y) = probe_rows(2000, 64, 1);
    let params = GbtParams { rounds: 10, max_depth: 6, ..GbtParams::default() };
    c.bench_function("gbt_fit_2000x64_10x6", |b| {
        b.iter(|| fit(&x, &y, Objective::SquaredError, &params).unwrap())
    });
}

fn shap(c: &mut Criterion) {
    let (e, x) = fitted_probe(2000, 64, &GbtParams { rounds: 100, max_depth: 10, ..GbtParams::default() });
    c.bench_function("tree_shap_100x10_h64", |b| b.iter(|| tree_shap(&e, &x[7]).unwrap()));

    let (small, xs) = fitted_probe(300, 10, &GbtParams { rounds: 10, max_depth: 4, ..GbtParams::default() });
    let mut g = c.benchmark_group("shap_m10");
    g.bench_function("tree_shap", |b| b.iter(|| tree_shap(&small, &xs[0]).unwrap()));
    g.bench_function("brute_force", |b| b.iter(|| brute_force_shapley(&small, &xs[0]).unwrap()));
    g.finish();
}

fn agent(c: &mut Criterion) {
    let fx = agent_fixture();
    let x = vec![0.5; fx.params.input_dim()];
    let h = vec![0.1; fx.params.hidden_dim()];
    c.bench_function("gru_step_h64", |b| b.iter(|| gru_forward(&fx.params, &x, &h).unwrap()));
    let ep = &fx.episode;
    c.bench_function("rollout_forced_episode", |b| {
        b.iter_batched(
            Intervention::default,
            |interv| rollout_forced(&fx.scenes[0], &ep.task, &fx.params, &ep.actions, &interv, &fx.cfg.world, &ep.id).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, gbt, shap, agent);
criterion_main!(benches);
