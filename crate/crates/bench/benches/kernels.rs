use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use proxycal_bench::{fit_window, network};
use proxycal_core::report::{idw_grid, GridSpec};
use proxycal_core::stats::{kl_masses, ks_two_sample};
use proxycal_core::{fit_params, init_params, kl_objective, run_pipeline_on, InitVariant, PipelineInput, RunOptions};

fn kernels(c: &mut Criterion) {
    let (c_ox, c_o3, z) = fit_window(1);
    let hist = Default::default();
    let cal = Default::default();
    let init = init_params(&z, &c_ox, &c_o3, InitVariant::SlopeConsistent).unwrap();

    c.bench_function("ks_72x72", |b| {
        b.iter(|| ks_two_sample(black_box(&c_ox), black_box(&z)).unwrap())
    });

    let p: Vec<f64> = (0..50).map(|i| 1.0 + (i % 7) as f64).collect();
    let q: Vec<f64> = (0..50).map(|i| 1.0 + (i % 5) as f64).collect();
    let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
    let p: Vec<f64> = p.iter().map(|x| x / sp).collect();
    let q: Vec<f64> = q.iter().map(|x| x / sq).collect();
    c.bench_function("kl_50_bins", |b| b.iter(|| kl_masses(black_box(&p), black_box(&q))));

    c.bench_function("kl_objective_72h", |b| {
        b.iter(|| kl_objective(black_box(&init), &c_ox, &c_o3, &z, &hist).unwrap())
    });

    c.bench_function("fit_params_72h", |b| {
        b.iter(|| fit_params(black_box(&init), &c_ox, &c_o3, &z, &hist, &cal).unwrap())
    });

    let sites: Vec<(f64, f64, f64)> = (0..9)
        .map(|i| (33.8 + 0.05 * i as f64, -118.3 + 0.07 * i as f64, 10.0 + i as f64))
        .collect();
    let grid = GridSpec {
        ncols: 100,
        nrows: 100,
        xllcorner: -118.4,
        yllcorner: 33.7,
        cellsize: 0.01,
    };
    c.bench_function("idw_100x100_9_sites", |b| {
        b.iter(|| idw_grid(black_box(&sites), &grid, 2.0).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let (cfg, scenario) = network(30.0, 2);
    let input = PipelineInput::from_scenario(&scenario, false);
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("run_9_sites_30_days", |b| {
        b.iter_batched(
            || input.clone(),
            |input| run_pipeline_on(&cfg, &input, &RunOptions::default()).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, kernels, pipeline);
criterion_main!(benches);
