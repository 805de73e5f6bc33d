use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fpd_core::geometry::straight_path;
use fpd_core::mc::{run_trials, Conditioning, McConfig, Monitoring};
use fpd_core::multipath::first_passage_pmf;
use fpd_core::volterra::solve_upcrossing_fpd;
use fpd_core::{ChannelParams, Multipath, PathLossProfile, RecursionConfig, StraightGeometry, VolterraGrid};

fn geometry() -> StraightGeometry {
    StraightGeometry::new(550.0, 0.0).unwrap()
}

fn volterra(c: &mut Criterion) {
    let p = ChannelParams::san_francisco();
    let prof = PathLossProfile::Straight(geometry());
    let mut g = c.benchmark_group("volterra_upcrossing");
    g.sample_size(10);
    for n in [500usize, 1000, 2000] {
        let grid = VolterraGrid::new(0.03 * n as f64, n).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &grid, |b, grid| {
            b.iter(|| solve_upcrossing_fpd(&p, &prof, 0.1, black_box(grid.clone())).unwrap())
        });
    }
    g.finish();
}

fn recursion(c: &mut Criterion) {
    let p = ChannelParams::san_francisco().with_multipath(Multipath::Rician { k_ric: 1.59 });
    let prof = PathLossProfile::Straight(geometry());
    let mut g = c.benchmark_group("recursion_100_steps");
    g.sample_size(10);
    for m in [1024usize, 2048, 4096, 8192] {
        let rc = RecursionConfig { m_points: m, start_margin_db: 0.1, ..Default::default() };
        g.bench_with_input(BenchmarkId::from_parameter(m), &rc, |b, rc| {
            b.iter(|| first_passage_pmf(&p, &prof, 0.03, 100, black_box(rc)).unwrap())
        });
    }
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let p = ChannelParams::san_francisco();
    let path = straight_path(geometry(), 15.0, 0.03).unwrap();
    let cfg = McConfig {
        trials: 2000,
        seed: 3,
        horizon_steps: 500,
        conditioning: Conditioning::BelowThresholdMargin { eps_db: 0.1 },
        monitoring: Monitoring::BrownianBridge,
    };
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    g.bench_function("straight_2000_trials_500_steps", |b| b.iter(|| run_trials(&path, &p, black_box(&cfg)).unwrap()));
    g.finish();
}

criterion_group!(benches, volterra, recursion, monte_carlo);
criterion_main!(benches);
