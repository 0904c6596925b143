use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use sketchlidar::baselines::{coarse_hist_test, ks_interarrival_test};
use sketchlidar::estimation::{default_grid_points, matched_filter_init, wls_refine};
use sketchlidar::simulator::{sample_photons, substream};
use sketchlidar::{
    irf_transform, sketch_of, DetectionConfig, Detector, FrequencyGrid, Irf, PhotonStream, PixelEstimator, SceneParams,
    SketchAccumulator, WeightMode,
};

const BINS: u32 = 5000;

fn photons(n: usize) -> PhotonStream {
    let irf = Irf::gaussian_circular(BINS, 50.0, 0.0).unwrap();
    let theta = SceneParams::from_sbr(1.0, 1700.0, BINS).unwrap();
    sample_photons(&theta, &irf, n, &mut substream(1, 0, n as u64)).unwrap()
}

fn sketch_update(c: &mut Criterion) {
    let stream = photons(10_000);
    let mut g = c.benchmark_group("sketch_update");
    g.throughput(Throughput::Elements(stream.len() as u64));
    for m in [5, 10, 20] {
        let grid = FrequencyGrid::new(m, BINS).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(m), &grid, |b, grid| {
            b.iter(|| {
                let mut acc = SketchAccumulator::new(grid);
                acc.extend(stream.timestamps().iter().copied()).unwrap();
                black_box(acc.finalize())
            })
        });
    }
    g.finish();
}

fn sketch_path(c: &mut Criterion) {
    let mut g = c.benchmark_group("detect_estimate");
    let irf = Irf::gaussian_circular(BINS, 50.0, 0.0).unwrap();
    for m in [5, 10, 20] {
        let grid = FrequencyGrid::new(m, BINS).unwrap();
        let hat = irf_transform(&irf, &grid).unwrap();
        let det = Detector::new(DetectionConfig::for_sketch(m, 0.05).unwrap()).unwrap();
        let est = PixelEstimator::new(det, grid.clone(), hat.clone()).unwrap();
        for n in [100, 10_000] {
            let sketch = sketch_of(photons(n).timestamps(), &grid).unwrap();
            g.bench_with_input(BenchmarkId::new(format!("m{m}"), n), &sketch, |b, s| {
                b.iter(|| black_box(est.estimate(black_box(s)).unwrap()))
            });
        }
        let sketch = sketch_of(photons(1000).timestamps(), &grid).unwrap();
        g.bench_function(BenchmarkId::new("init_only", m), |b| {
            b.iter(|| black_box(matched_filter_init(&sketch, &hat, &grid, default_grid_points(m)).unwrap()))
        });
        let init = matched_filter_init(&sketch, &hat, &grid, default_grid_points(m)).unwrap();
        g.bench_function(BenchmarkId::new("refine_only", m), |b| {
            b.iter(|| black_box(wls_refine(&sketch, &init, &hat, &grid, WeightMode::default()).unwrap()))
        });
    }
    g.finish();
}

fn baselines(c: &mut Criterion) {
    let mut g = c.benchmark_group("full_data");
    for n in [100, 10_000] {
        let stream = photons(n);
        g.bench_with_input(BenchmarkId::new("ks", n), &stream, |b, s| {
            b.iter(|| black_box(ks_interarrival_test(s, 0.05).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("hist_tr100", n), &stream, |b, s| {
            b.iter(|| black_box(coarse_hist_test(s, 100, 0.05).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, sketch_update, sketch_path, baselines);
criterion_main!(benches);
