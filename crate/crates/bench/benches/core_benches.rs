//! Criterion benchmarks for the hot numerical paths.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::{DMatrix, DVector};

use rc_denoise_core::dynamics::{integrate_lorenz, LorenzParams};
use rc_denoise_core::metrics::welch_psd;
use rc_denoise_core::noise::colored_noise;
use rc_denoise_core::pruning::node_scores;
use rc_denoise_core::reservoir::{build_reservoir, run, spectral_radius, HyperParams};
use rc_denoise_core::training::{ridge_fit, select_lambda, RidgeConfig};
use rc_denoise_core::trajectory::Trajectory;

fn hyper(n: usize) -> HyperParams {
    HyperParams {
        n_nodes: n,
        leakage: 0.3,
        spectral_radius: 0.85,
        input_scaling: 0.2,
        connectivity: 0.3,
    }
}

fn lorenz_inputs(rows: usize) -> Trajectory {
    integrate_lorenz(&LorenzParams::default(), 0.005, rows as f64 * 0.005 + 0.01)
        .unwrap()
        .select_channels(&["x".into(), "y".into()])
        .unwrap()
        .slice_rows(0, rows)
        .unwrap()
}

fn bench_build(c: &mut Criterion) {
    c.bench_function("build_reservoir_n200", |b| {
        b.iter(|| build_reservoir(&hyper(200), 2, 7).unwrap())
    });
}

fn bench_spectral_radius(c: &mut Criterion) {
    let esn = build_reservoir(&hyper(200), 2, 7).unwrap();
    let m = esn.reservoir_matrix().clone();
    c.bench_function("spectral_radius_n200", |b| {
        b.iter_batched(
            || m.clone(),
            |m| spectral_radius(&m).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_run(c: &mut Criterion) {
    let esn = build_reservoir(&hyper(200), 2, 7).unwrap();
    let inputs = lorenz_inputs(2000);
    c.bench_function("reservoir_run_2000x200", |b| {
        b.iter(|| run(&esn, &inputs, None).unwrap())
    });
}

fn bench_ridge(c: &mut Criterion) {
    let esn = build_reservoir(&hyper(200), 2, 7).unwrap();
    let inputs = lorenz_inputs(2000);
    let states = run(&esn, &inputs, None).unwrap();
    let targets = DMatrix::from_fn(2000, 3, |i, j| ((i + j) as f64 * 0.01).sin());
    c.bench_function("ridge_fit_2000x200", |b| {
        b.iter(|| ridge_fit(&states, &targets, 1e-6).unwrap())
    });
    let config = RidgeConfig::default();
    c.bench_function("select_lambda_36grid_5fold", |b| {
        b.iter(|| select_lambda(&states, &targets, &config).unwrap())
    });
}

fn bench_node_scores(c: &mut Criterion) {
    let esn = build_reservoir(&hyper(200), 2, 7).unwrap();
    let inputs = lorenz_inputs(2000);
    let states = run(&esn, &inputs, None).unwrap();
    c.bench_function("node_scores_n200", |b| {
        b.iter(|| node_scores(&esn, &states).unwrap())
    });
}

fn bench_noise_and_psd(c: &mut Criterion) {
    c.bench_function("colored_noise_65536", |b| {
        b.iter(|| colored_noise(1 << 16, -1.0, 3).unwrap())
    });
    let xs = colored_noise(1 << 16, 0.0, 3).unwrap();
    c.bench_function("welch_psd_65536_seg1024", |b| {
        b.iter(|| welch_psd(&xs, 1.0, 1024, 0.5).unwrap())
    });
}

fn bench_step(c: &mut Criterion) {
    let esn = build_reservoir(&hyper(200), 2, 7).unwrap();
    let r = DVector::from_element(200, 0.1);
    let u = DVector::from_vec(vec![1.0, -0.5]);
    c.bench_function("reservoir_step_n200", |b| {
        b.iter(|| rc_denoise_core::reservoir::step(&esn, &r, &u).unwrap())
    });
}

criterion_group!(
    benches,
    bench_build,
    bench_spectral_radius,
    bench_run,
    bench_ridge,
    bench_node_scores,
    bench_noise_and_psd,
    bench_step
);
criterion_main!(benches);
