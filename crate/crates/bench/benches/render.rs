use criterion::{black_box, criterion_group, criterion_main, Criterion};
use snhq_core::aggregator::{train_object_field, FusionConfig};
use snhq_core::geometry::ray_for_pixel;
use snhq_core::masks::project_gt_masks;
use snhq_core::render::{composite, render_mask, RaySamples, RenderOptions};
use snhq_core::synthetic::{orbit_cameras, two_sphere_scene};
use snhq_core::{TrainableGrid, Vec3};

fn bench_composite(c: &mut Criterion) {
    let k = 128;
    let samples = RaySamples {
        t: (0..k).map(|i| i as f64 * 0.01).collect(),
        delta: vec![0.01; k],
        sigma: (0..k).map(|i| (i % 17) as f64).collect(),
        payload: (0..k * 3).map(|i| (i % 5) as f64 * 0.2).collect(),
        dim: 3,
    };
    c.bench_function("composite_128x3", |b| b.iter(|| composite(black_box(&samples))));
}

fn bench_grid_query(c: &mut Criterion) {
    let scene = two_sphere_scene();
    let mut grid = TrainableGrid::new(scene.bbox, &[32, 128], 3).unwrap();
    grid.fill_with(|i| (i % 7) as f64);
    let points: Vec<Vec3> = (0..1024).map(|i| Vec3::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), (i as f64 * 0.05).sin())).collect();
    let mut out = vec![0.0; 3];
    c.bench_function("grid_query_1024", |b| {
        b.iter(|| {
            for p in &points {
                grid.query_into(black_box(p), &mut out);
            }
        })
    });
}

fn bench_render_mask(c: &mut Criterion) {
    let scene = two_sphere_scene();
    let cam = &orbit_cameras(0, 1, 3.0, 64, 90.0, 0.0)[0];
    let grid = TrainableGrid::new(scene.bbox, &[32, 128], 3).unwrap();
    let opts = RenderOptions::midpoint(128);
    let ray = ray_for_pixel(cam, (30.0, 32.0), &scene.bbox).unwrap();
    c.bench_function("render_mask_128", |b| b.iter(|| render_mask(&scene, &grid, black_box(&ray), &opts)));
}

fn bench_train_iterations(c: &mut Criterion) {
    let scene = two_sphere_scene();
    let cams = orbit_cameras(0, 8, 3.0, 64, 90.0, 0.0);
    let masks = project_gt_masks(&scene, &cams, 128).unwrap();
    let cfg = FusionConfig {
        labels: 3,
        iterations: 4,
        warmup_iters: 2,
        ..FusionConfig::default()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("four_iterations", |b| b.iter(|| train_object_field(&scene, &masks, &cams, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_composite, bench_grid_query, bench_render_mask, bench_train_iterations);
criterion_main!(benches);
