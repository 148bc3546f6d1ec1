use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use evrecon_core::depth_opt::{photometric_loss, smoothness_loss};
use evrecon_core::events::{partition_events, pseudo_intensity_with_history, PseudoIntensitySettings};
use evrecon_core::flow::{estimate_flow, FlowSettings};
use evrecon_core::metrics::{psnr, ssim};
use evrecon_core::pose_opt::{pose_photometric_loss, regularizer_loss};
use evrecon_core::renderer::render_intermediate;
use evrecon_core::forward_splat;

fn stages(c: &mut Criterion) {
    let seq = evrecon_bench::sequence();
    let k = seq.config.camera;
    let times = seq.config.frame_times();
    let (a, b) = (&seq.frames[0], &seq.frames[1]);
    let (d0, d1) = (&seq.depths[0], &seq.depths[1]);
    let xi = seq.relative_pose(times[0], times[1]);
    let mid = 0.5 * (times[0] + times[1]);
    let pa = seq.relative_pose(times[0], mid);
    let pb = seq.relative_pose(times[1], mid);

    c.bench_function("flow_64x64", |bench| {
        bench.iter(|| estimate_flow(black_box(&a.image), black_box(&b.image), &FlowSettings::default()).unwrap())
    });
    c.bench_function("photometric_loss_64x64", |bench| {
        bench.iter(|| photometric_loss(black_box(a), black_box(b), d0, d1, &xi, &k).unwrap())
    });
    c.bench_function("smoothness_loss_64x64", |bench| {
        bench.iter(|| smoothness_loss(black_box(d0), &a.image, 10.0).unwrap())
    });
    c.bench_function("pose_losses_64x64", |bench| {
        bench.iter(|| {
            let l = pose_photometric_loss(&a.image, &b.image, d0, black_box(&pa), &k).unwrap();
            let r = regularizer_loss(&a.image, &b.image, d0, &pa, &pb, &k).unwrap();
            (l.value, r.value)
        })
    });
    c.bench_function("forward_splat_64x64", |bench| {
        bench.iter(|| forward_splat(black_box(a), d0, &pa, &k, 10.0))
    });
    c.bench_function("render_intermediate_64x64", |bench| {
        bench.iter(|| render_intermediate(a, b, d0, d1, black_box(&pa), &pb, 0.5, &k, 10.0, mid).unwrap())
    });
    c.bench_function("psnr_ssim_64x64", |bench| {
        bench.iter(|| (psnr(black_box(&a.image), &b.image).unwrap(), ssim(&a.image, &b.image).unwrap()))
    });

    let events = seq.events.events();
    let range = seq.events.window_range(times[0], times[1]);
    let blocks = partition_events(&events[range.clone()], 2000).unwrap();
    let first = range.start..range.start + blocks.blocks[0].len();
    let settings = PseudoIntensitySettings::default();
    c.bench_function("pseudo_intensity_block_with_history", |bench| {
        bench.iter(|| pseudo_intensity_with_history(events, black_box(first.clone()), 10, 2000, 64, 64, 1, &settings).unwrap())
    });
}

criterion_group!(benches, stages);
criterion_main!(benches);
