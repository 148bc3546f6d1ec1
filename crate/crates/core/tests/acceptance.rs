//! End-to-end acceptance checks on simulator ground truth. Each test prints
//! one `criterion N ...: PASS|FAIL` line before asserting.

use std::path::Path;
use std::sync::OnceLock;

use evrecon_core::config::PipelineConfig;
use evrecon_core::depth_opt::{decode_pfm, encode_pfm, photometric_loss, smoothness_loss};
use evrecon_core::events::{parse_events, partition_events, Event, EventStream, Polarity};
use evrecon_core::flow::{decode_flo, encode_flo, FlowField};
use evrecon_core::io::Dataset;
use evrecon_core::metrics::{mean_scores, read_metrics_csv, MetricsRow};
use evrecon_core::pipeline::{self, Reconstruction, RunReport};
use evrecon_core::pose_opt::{composed_pose, pose_photometric_loss, regularizer_loss};
use evrecon_core::renderer::{render_intermediate, render_sequence, BlockPose, RenderWindow};
use evrecon_core::sim::{corrupt_events, GroundTruth, SimConfig, SimulatedSequence};
use evrecon_core::{CameraIntrinsics, DepthMap, Image, IntensityFrame, Pose, Twist};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 1;
const NOISE_RATE: f64 = 0.1;

fn report(n: usize, name: &str, pass: bool, detail: String) {
    println!("criterion {n} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn rotation_error_deg(est: &Pose, gt: &Pose) -> f64 {
    Pose::from_rt(est.rotation() * gt.rotation().transpose(), nalgebra::Vector3::zeros())
        .rotation_angle()
        .to_degrees()
}

fn direction_error_deg(est: &Pose, gt: &Pose) -> f64 {
    est.translation()
        .normalize()
        .dot(&gt.translation().normalize())
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees()
}

/// Config used for every simulator run: paper defaults, with the
/// complementary filter told the simulator's contrast threshold.
fn config(sim: &SimConfig) -> PipelineConfig {
    PipelineConfig {
        seed: SEED,
        cf_contrast: sim.sensor.contrast_threshold,
        ..PipelineConfig::default()
    }
}

struct Run {
    _dir: tempfile::TempDir,
    path: std::path::PathBuf,
    report: RunReport,
}

struct Fixture {
    seq: SimulatedSequence,
    truth: GroundTruth,
    config: PipelineConfig,
    clean: Dataset,
    rec: Reconstruction,
    run: Run,
}

fn run_into(ds: &Dataset, cfg: &PipelineConfig, cf: bool) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(if cf { "cf" } else { "pipeline" });
    let report = if cf {
        pipeline::run_baseline_cf_on(ds, cfg, &path).unwrap()
    } else {
        pipeline::run_pipeline_on(ds, cfg, &path).unwrap()
    };
    Run {
        _dir: dir,
        path,
        report,
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let sim = SimConfig::two_plane(SEED);
        let seq = SimulatedSequence::generate(&sim).unwrap();
        let truth = GroundTruth::new(&sim).unwrap();
        let config = config(&sim);
        let clean = Dataset::from_simulation(&seq);
        let rec = pipeline::reconstruct(&clean, &config).unwrap();
        let run = run_into(&clean, &config, false);
        Fixture {
            seq,
            truth,
            config,
            clean,
            rec,
            run,
        }
    })
}

fn mean_psnr(rows: &[MetricsRow]) -> f64 {
    mean_scores(rows, &rows[0].method).unwrap().0
}

// ---------------------------------------------------------------------------
// 1. gradients

/// Central difference of `f` at 0 whose step is halved until two successive
/// estimates agree, so a stencil straddling a bilinear cell boundary (where
/// the loss has a kink) is shrunk until it no longer does.
fn kink_aware_derivative(f: &dyn Fn(f64) -> f64, h0: f64) -> f64 {
    let cd = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    let mut h = h0;
    let mut prev = cd(h);
    while h > 1e-9 {
        h *= 0.5;
        let next = cd(h);
        if (next - prev).abs() <= 1e-4 * next.abs().max(prev.abs()) + 1e-10 {
            return next;
        }
        prev = next;
    }
    prev
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let num: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

fn texture(rng: &mut ChaCha8Rng) -> Image {
    let n = Image::from_fn(16, 16, |_, _| rng.random::<f64>());
    let b = n.gaussian_blur(2.0);
    let (lo, hi) = b.min_max();
    b.map(|v| 0.1 + 0.8 * (v - lo) / (hi - lo))
}

fn random_twist(rng: &mut ChaCha8Rng) -> Twist {
    Twist::from_fn(|i, _| if i < 3 { rng.random_range(-0.03..0.03) } else { rng.random_range(-0.1..0.1) })
}

fn random_depth(rng: &mut ChaCha8Rng) -> DepthMap {
    DepthMap::new(Image::from_fn(16, 16, |_, _| rng.random_range(0.5..1.5)))
}

fn twist_fd(f: &dyn Fn(&Twist) -> f64, at: &Twist) -> Vec<f64> {
    (0..6)
        .map(|i| {
            kink_aware_derivative(
                &|s| {
                    let mut t = *at;
                    t[i] += s;
                    f(&t)
                },
                1e-6,
            )
        })
        .collect()
}

fn depth_fd(f: &dyn Fn(&DepthMap) -> f64, at: &DepthMap) -> Vec<f64> {
    (0..at.inv_depth.len())
        .map(|i| {
            kink_aware_derivative(
                &|s| {
                    let mut d = at.clone();
                    d.inv_depth.data_mut()[i] += s;
                    f(&d)
                },
                1e-4,
            )
        })
        .collect()
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = std::time::Instant::now();
    let k = CameraIntrinsics::new(16.0, 16.0, 7.5, 7.5, 16, 16).unwrap();
    let frame = |img: Image| IntensityFrame::new(img, 0.0).unwrap();
    let mut worst = [0.0f64; 4];
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (a, b) = (frame(texture(&mut rng)), frame(texture(&mut rng)));
        let (dk, dk1) = (random_depth(&mut rng), random_depth(&mut rng));
        let (ta, tb) = (random_twist(&mut rng), random_twist(&mut rng));
        let (pa, pb) = (Pose::exp(&ta).unwrap(), Pose::exp(&tb).unwrap());

        // two-frame photometric loss: both depth maps and the twist
        let l = photometric_loss(&a, &b, &dk, &dk1, &pa, &k).unwrap();
        let e_dk = rel_err(&l.grad_d_k, &depth_fd(&|d| photometric_loss(&a, &b, d, &dk1, &pa, &k).unwrap().value, &dk));
        let e_dk1 = rel_err(&l.grad_d_k1, &depth_fd(&|d| photometric_loss(&a, &b, &dk, d, &pa, &k).unwrap().value, &dk1));
        let e_xi = rel_err(
            l.grad_xi.as_slice(),
            &twist_fd(&|t| photometric_loss(&a, &b, &dk, &dk1, &Pose::exp(t).unwrap(), &k).unwrap().value, &ta),
        );
        worst[0] = worst[0].max(e_dk).max(e_dk1).max(e_xi);

        // edge-aware smoothness
        let (_, g) = smoothness_loss(&dk, &a.image, 10.0).unwrap();
        let e_sm = rel_err(&g, &depth_fd(&|d| smoothness_loss(d, &a.image, 10.0).unwrap().0, &dk));
        worst[1] = worst[1].max(e_sm);

        // block alignment against a pseudo-intensity reference
        let p = pose_photometric_loss(&a.image, &b.image, &dk, &pa, &k).unwrap();
        let e_pose = rel_err(
            p.grad.as_slice(),
            &twist_fd(&|t| pose_photometric_loss(&a.image, &b.image, &dk, &Pose::exp(t).unwrap(), &k).unwrap().value, &ta),
        );
        worst[2] = worst[2].max(e_pose);

        // composed-pose regularizer, both twists
        let r = regularizer_loss(&a.image, &b.image, &dk, &pa, &pb, &k).unwrap();
        let e_ra = rel_err(
            r.grad_k_j.as_slice(),
            &twist_fd(&|t| regularizer_loss(&a.image, &b.image, &dk, &Pose::exp(t).unwrap(), &pb, &k).unwrap().value, &ta),
        );
        let e_rb = rel_err(
            r.grad_k1_j.as_slice(),
            &twist_fd(&|t| regularizer_loss(&a.image, &b.image, &dk, &pa, &Pose::exp(t).unwrap(), &k).unwrap().value, &tb),
        );
        worst[3] = worst[3].max(e_ra).max(e_rb);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst.iter().all(|&e| e < 1e-3) && elapsed < 60.0;
    report(
        1,
        "gradient correctness",
        pass,
        format!(
            "max rel err photometric {:.2e}, smoothness {:.2e}, block alignment {:.2e}, regularizer {:.2e}; {elapsed:.1}s",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. depth recovery

#[test]
fn criterion_2_depth_recovery_on_first_pair() {
    let start = std::time::Instant::now();
    let f = fixture();
    let w = &f.rec.windows[0];
    let est = w.depth.as_ref().expect("depth stage ran");
    let gt_depth = &f.seq.depths[0];
    let valid: Vec<usize> = (0..gt_depth.inv_depth.len()).filter(|&i| est.d_k.valid[i]).collect();
    let (q, g) = (est.d_k.inv_depth.data(), gt_depth.inv_depth.data());
    let scale = median(valid.iter().map(|&i| g[i] / q[i]).collect());
    let depth_err = median(valid.iter().map(|&i| (scale * q[i] - g[i]).abs() / g[i]).collect());
    let gt = f.seq.relative_pose(w.t_k, w.t_k1);
    let rot = rotation_error_deg(&est.xi, &gt);
    let dir = direction_error_deg(&est.xi, &gt);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = depth_err < 0.10 && rot < 0.5 && dir < 5.0;
    report(
        2,
        "depth recovery",
        pass,
        format!(
            "median inverse-depth rel err {:.2}%, rotation {rot:.3} deg, translation direction {dir:.3} deg; fixture {elapsed:.1}s",
            100.0 * depth_err
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. intermediate poses

#[test]
fn criterion_3_intermediate_pose_recovery() {
    let f = fixture();
    let w = &f.rec.windows[0];
    let est = w.depth.as_ref().expect("depth stage ran");
    let window_t = f.seq.relative_pose(w.t_k, w.t_k1).translation().norm();
    let (mut rot, mut comp, mut dir) = (Vec::new(), Vec::new(), Vec::new());
    for b in &w.render.blocks {
        assert!(b.failure.is_none(), "block at {} failed: {:?}", b.t_mid, b.failure);
        let gt = f.seq.relative_pose(w.t_k, b.t_mid);
        rot.push(rotation_error_deg(&b.xi_k_j, &gt));
        comp.push(rotation_error_deg(&composed_pose(&b.xi_k_j, &b.xi_k1_j), &est.xi));
        // the direction of a near-zero translation is undefined
        if gt.translation().norm() >= 0.3 * window_t {
            dir.push(direction_error_deg(&b.xi_k_j, &gt));
        }
    }
    let n = rot.len();
    let dir_med = median(dir.clone());
    let pass = n >= 10 && max(&rot) < 0.5 && dir_med < 5.0 && max(&comp) < 1.0;
    report(
        3,
        "intermediate pose recovery",
        pass,
        format!(
            "{n} blocks: rotation max {:.3} deg; translation direction median {dir_med:.2} deg (max {:.2}) over {} blocks; composed rotation max {:.3} deg",
            max(&rot),
            max(&dir),
            dir.len(),
            max(&comp)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4. reconstruction quality

fn ground_truth_fed(f: &Fixture) -> Vec<MetricsRow> {
    let windows: Vec<RenderWindow> = f
        .rec
        .windows
        .iter()
        .map(|w| RenderWindow {
            d_k: f.seq.depths[w.index].clone(),
            d_k1: f.seq.depths[w.index + 1].clone(),
            blocks: w
                .render
                .blocks
                .iter()
                .map(|b| BlockPose {
                    t_mid: b.t_mid,
                    xi_k_j: f.seq.relative_pose(w.t_k, b.t_mid),
                    xi_k1_j: f.seq.relative_pose(w.t_k1, b.t_mid),
                    failure: None,
                })
                .collect(),
        })
        .collect();
    let frames = render_sequence(&f.clean.frames, &windows, &f.clean.camera, &f.config.render).unwrap();
    pipeline::score(&frames, &f.truth, "ground_truth_fed").unwrap()
}

fn endpoint_error(f: &Fixture) -> f64 {
    let w = &f.rec.windows[0];
    let (a, b) = (&f.clean.frames[0], &f.clean.frames[1]);
    let k = &f.clean.camera;
    let (d_k, d_k1) = (&w.render.d_k, &w.render.d_k1);
    let far = w.render.blocks[0].xi_k1_j;
    let near = w.render.blocks[0].xi_k_j;
    let at_k = render_intermediate(a, b, d_k, d_k1, &Pose::identity(), &far, 1.0, k, f.config.render.gamma, a.timestamp).unwrap();
    let at_k1 = render_intermediate(a, b, d_k, d_k1, &near, &Pose::identity(), 0.0, k, f.config.render.gamma, b.timestamp).unwrap();
    let mut worst: f64 = 0.0;
    for y in 1..k.height - 1 {
        for x in 1..k.width - 1 {
            worst = worst
                .max((at_k.image.get(x, y) - a.image.get(x, y)).abs())
                .max((at_k1.image.get(x, y) - b.image.get(x, y)).abs());
        }
    }
    worst
}

#[test]
fn criterion_4_end_to_end_reconstruction() {
    let f = fixture();
    let pipeline_psnr = mean_psnr(&f.run.report.metrics);
    let gt_rows = ground_truth_fed(f);
    let gt_psnr = mean_psnr(&gt_rows);
    let endpoint = endpoint_error(f);
    let pass = pipeline_psnr >= 30.0 && gt_psnr >= 35.0 && endpoint <= 1e-6;
    report(
        4,
        "end-to-end reconstruction",
        pass,
        format!(
            "mean PSNR {pipeline_psnr:.2} dB estimated, {gt_psnr:.2} dB ground-truth fed over {} frames; endpoint max interior err {endpoint:.1e}",
            gt_rows.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 5. baseline comparison

#[test]
fn criterion_5_pipeline_beats_complementary_filter() {
    let f = fixture();
    let cf = run_into(&f.clean, &f.config, true);
    let times = |rows: &[MetricsRow]| rows.iter().map(|r| r.timestamp).collect::<Vec<_>>();
    assert_eq!(times(&cf.report.metrics), times(&f.run.report.metrics));
    let (p, c) = (mean_psnr(&f.run.report.metrics), mean_psnr(&cf.report.metrics));
    let pass = p >= c;
    report(
        5,
        "baseline comparison",
        pass,
        format!("pipeline {p:.2} dB vs complementary filter {c:.2} dB at {} timestamps", cf.report.metrics.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6. noise robustness

#[test]
fn criterion_6_noise_robustness() {
    let f = fixture();
    let noisy = Dataset {
        events: corrupt_events(&f.clean.events, NOISE_RATE, f.config.seed).unwrap(),
        ..f.clean.clone()
    };
    let run = run_into(&noisy, &f.config, false);
    let cf = run_into(&noisy, &f.config, true);
    let clean_psnr = mean_psnr(&f.run.report.metrics);
    let (p, c) = (mean_psnr(&run.report.metrics), mean_psnr(&cf.report.metrics));
    let drop = clean_psnr - p;
    let pass = drop < 3.0 && p >= c;
    report(
        6,
        "noise robustness",
        pass,
        format!(
            "{:.0}% spurious events: pipeline {p:.2} dB (clean {clean_psnr:.2}, drop {drop:.2} dB), complementary filter {c:.2} dB",
            100.0 * NOISE_RATE
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 7. plumbing

#[test]
fn criterion_7_event_and_file_plumbing_exactness() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut t = 0.0;
    let events: Vec<Event> = (0..1_000_000)
        .map(|_| {
            t += rng.random_range(0.0..2e-6);
            let p = if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative };
            Event::new(t, rng.random_range(0..240), rng.random_range(0..180), p)
        })
        .collect();
    let stream = EventStream::new(240, 180, events).unwrap();

    // partition: disjoint, ordered, lossless
    let all = stream.events();
    let blocks = partition_events(all, 2000).unwrap();
    let mut offset = 0usize;
    let mut partition_ok = true;
    for b in &blocks.blocks {
        let expected = &all[offset..offset + b.len()];
        partition_ok &= std::ptr::eq(b.as_ptr(), expected.as_ptr());
        offset += b.len();
    }
    partition_ok &= offset == all.len();
    partition_ok &= blocks.blocks.windows(2).all(|w| w[0].last().unwrap().t <= w[1][0].t);

    // text roundtrip
    let text = stream.to_text();
    let parsed = parse_events(&text, 240, 180).unwrap();
    let events_ok = parsed.dropped == 0
        && parsed.stream.events().len() == all.len()
        && parsed
            .stream
            .events()
            .iter()
            .zip(all)
            .all(|(a, b)| a.t.to_bits() == b.t.to_bits() && a.x == b.x && a.y == b.y && a.polarity == b.polarity)
        && parsed.stream.to_text() == text;

    // .flo and PFM roundtrips
    let flow = FlowField {
        du: Image::from_fn(37, 23, |_, _| rng.random_range(-20.0..20.0f32) as f64),
        dv: Image::from_fn(37, 23, |_, _| rng.random_range(-20.0..20.0f32) as f64),
        valid: vec![true; 37 * 23],
        low_confidence: false,
    };
    let flo = encode_flo(&flow);
    let back = decode_flo(&flo).unwrap();
    let flo_ok = back.du == flow.du && back.dv == flow.dv && encode_flo(&back) == flo;
    let depth = DepthMap::new(Image::from_fn(37, 23, |_, _| 1.0 / rng.random_range(0.5..20.0f32) as f64));
    let pfm = encode_pfm(&depth);
    let dback = decode_pfm(&pfm).unwrap();
    let pfm_ok = encode_pfm(&dback) == pfm && dback.valid == depth.valid;

    let elapsed = start.elapsed().as_secs_f64();
    let pass = partition_ok && events_ok && flo_ok && pfm_ok && elapsed < 30.0;
    report(
        7,
        "event plumbing exactness",
        pass,
        format!(
            "partition {partition_ok} ({} blocks), events {events_ok}, flo {flo_ok}, pfm {pfm_ok}; {elapsed:.1}s",
            blocks.blocks.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 8. determinism

fn output_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = vec![
        ("frames.txt".to_string(), std::fs::read(dir.join("frames.txt")).unwrap()),
        ("metrics.csv".to_string(), std::fs::read(dir.join("metrics.csv")).unwrap()),
    ];
    let mut frames: Vec<_> = std::fs::read_dir(dir.join("frames")).unwrap().map(|e| e.unwrap().path()).collect();
    frames.sort();
    for p in frames {
        files.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
    }
    files
}

#[test]
fn criterion_8_determinism() {
    let f = fixture();
    // an independent simulation and run from the same config and seed
    let seq = SimulatedSequence::generate(&SimConfig::two_plane(SEED)).unwrap();
    let second = run_into(&Dataset::from_simulation(&seq), &f.config, false);
    let (a, b) = (output_files(&f.run.path), output_files(&second.path));
    let same = a == b;
    let rows_same = read_metrics_csv(&f.run.path.join("metrics.csv")).unwrap()
        == read_metrics_csv(&second.path.join("metrics.csv")).unwrap();
    let pass = same && rows_same;
    report(
        8,
        "determinism",
        pass,
        format!("{} files compared, bitwise identical: {same}", a.len()),
    );
    assert!(pass);
}
