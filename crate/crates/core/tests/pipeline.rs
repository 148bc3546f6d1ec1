use std::path::Path;

use evrecon_core::config::PipelineConfig;
use evrecon_core::events::EventStream;
use evrecon_core::io::{parse_manifest, Dataset};
use evrecon_core::metrics::read_metrics_csv;
use evrecon_core::pipeline::{self, window_blocks};
use evrecon_core::sim::{Keyframe, PlaneSpec, SensorSpec, SimConfig, SimulatedSequence, TextureSpec};
use evrecon_core::{CameraIntrinsics, Error};

fn small_sim(num_frames: usize) -> SimConfig {
    SimConfig {
        seed: 5,
        camera: CameraIntrinsics::new(30.0, 30.0, 15.5, 15.5, 32, 32).unwrap(),
        planes: vec![PlaneSpec {
            depth: 2.0,
            rect: None,
            texture: TextureSpec::Noise {
                texel: 2.0 / 30.0,
                blur: 1.0,
                low: 0.1,
                high: 0.9,
            },
        }],
        keyframes: vec![
            Keyframe { t: 0.0, twist: [0.0; 6] },
            Keyframe {
                t: 0.2,
                twist: [0.0, 0.01, 0.0, 0.3, 0.0, 0.0],
            },
        ],
        sensor: SensorSpec {
            num_frames,
            ..SensorSpec::default()
        },
    }
}

fn fast_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.flow.iterations = 20;
    c.depth_optimizer.max_iterations = 40;
    c.pose.optimizer.max_iterations = 20;
    c.pose.pyramid_levels = 2;
    c
}

/// Two frames and a block size that cuts the window into exactly 3 blocks.
fn three_block_case() -> (Dataset, PipelineConfig) {
    let seq = SimulatedSequence::generate(&small_sim(2)).unwrap();
    let ds = Dataset::from_simulation(&seq);
    let n = ds.events.window(ds.frames[0].timestamp, ds.frames[1].timestamp).len();
    assert!(n >= 30, "scene produced only {n} events");
    let mut cfg = fast_config();
    cfg.block_size = n / 3;
    (ds, cfg)
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn two_frames_three_blocks_give_five_frames_and_three_metric_rows() {
    let (ds, cfg) = three_block_case();
    let out = tempfile::tempdir().unwrap();
    let report = pipeline::run_pipeline_on(&ds, &cfg, out.path()).unwrap();
    assert_eq!(report.frame_count, 5);
    assert_eq!(report.intermediate_count, 3);

    let rows = read_metrics_csv(&out.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.method == "pipeline" && r.psnr > 0.0));

    let manifest = parse_manifest(&std::fs::read_to_string(out.path().join("frames.txt")).unwrap()).unwrap();
    assert_eq!(manifest.len(), 5);
    for (name, _) in &manifest {
        assert!(out.path().join(name).is_file(), "{name}");
    }
    for file in ["trajectory.txt", "run.log", "config.toml", "depth/window_0000_k.pfm", "depth/window_0000_k1.pfm"] {
        assert!(out.path().join(file).is_file(), "{file}");
    }
}

#[test]
fn manifest_timestamps_are_the_block_midpoints() {
    let (ds, cfg) = three_block_case();
    let out = tempfile::tempdir().unwrap();
    pipeline::run_pipeline_on(&ds, &cfg, out.path()).unwrap();
    let manifest = parse_manifest(&std::fs::read_to_string(out.path().join("frames.txt")).unwrap()).unwrap();
    let spans = window_blocks(&ds.events, &ds.frames, cfg.block_size).unwrap();
    let mut expected = vec![ds.frames[0].timestamp];
    expected.extend(spans[0].iter().map(|s| s.t_mid));
    expected.push(ds.frames[1].timestamp);
    let got: Vec<f64> = manifest.iter().map(|(_, t)| *t).collect();
    assert_eq!(got, expected);
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let (ds, cfg) = three_block_case();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline::run_pipeline_on(&ds, &cfg, a.path()).unwrap();
    pipeline::run_pipeline_on(&ds, &cfg, b.path()).unwrap();
    assert_eq!(read_dir_bytes(a.path()), read_dir_bytes(b.path()));
}

#[test]
fn invalid_beta_fails_validation_and_writes_nothing() {
    let data = tempfile::tempdir().unwrap();
    let (ds, mut cfg) = three_block_case();
    ds.write(data.path()).unwrap();
    let out = data.path().join("out");
    cfg.beta = -1.0;
    cfg.paths.input = Some(data.path().to_path_buf());
    cfg.paths.output = Some(out.clone());
    let err = pipeline::run_pipeline(&cfg).unwrap_err();
    match &err {
        Error::Stage { stage, source } => {
            assert_eq!(*stage, "config");
            assert!(matches!(&**source, Error::Config { field, .. } if field == "beta"), "{source}");
        }
        other => panic!("unexpected error {other}"),
    }
    assert!(!out.exists());
}

#[test]
fn missing_input_is_reported_by_stage() {
    let mut cfg = fast_config();
    let dir = tempfile::tempdir().unwrap();
    cfg.paths.input = Some(dir.path().join("nope"));
    cfg.paths.output = Some(dir.path().join("out"));
    let err = pipeline::run_pipeline(&cfg).unwrap_err();
    assert!(err.to_string().starts_with("input: "), "{err}");
}

#[test]
fn baseline_matches_pipeline_frame_count_and_timestamps() {
    let (ds, cfg) = three_block_case();
    let rec = pipeline::reconstruct(&ds, &cfg).unwrap();
    let cf = pipeline::baseline_cf(&ds, &cfg).unwrap();
    let times = |v: &[evrecon_core::renderer::OutputFrame]| v.iter().map(|f| f.frame.timestamp).collect::<Vec<_>>();
    assert_eq!(times(&rec.frames), times(&cf));

    let out = tempfile::tempdir().unwrap();
    let report = pipeline::run_baseline_cf_on(&ds, &cfg, out.path()).unwrap();
    assert_eq!(report.frame_count, 5);
    let rows = read_metrics_csv(&out.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.method == "cf"));
}

#[test]
fn zero_event_dataset_passes_input_frames_through() {
    let seq = SimulatedSequence::generate(&small_sim(3)).unwrap();
    let mut ds = Dataset::from_simulation(&seq);
    ds.events = EventStream::empty(32, 32);
    let cfg = fast_config();
    let cf = pipeline::baseline_cf(&ds, &cfg).unwrap();
    assert_eq!(cf.len(), 3);
    for (o, f) in cf.iter().zip(&ds.frames) {
        assert_eq!(&o.frame, f);
    }
    let rec = pipeline::reconstruct(&ds, &cfg).unwrap();
    assert_eq!(rec.frames.len(), 3);
}

#[test]
fn dataset_directory_and_simulator_file_inputs_agree() {
    let sim = small_sim(2);
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("scene.toml");
    std::fs::write(&toml_path, sim.to_toml()).unwrap();
    let from_toml = pipeline::load_input(&toml_path).unwrap();

    let data = dir.path().join("data");
    from_toml.write(&data).unwrap();
    let from_dir = pipeline::load_input(&data).unwrap();
    assert_eq!(from_dir.frames, from_toml.frames);
    assert_eq!(from_dir.events, from_toml.events);
    assert_eq!(from_dir.simulation, Some(sim));
}
