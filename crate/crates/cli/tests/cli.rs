use std::path::Path;
use std::process::{Command, Output};

use evrecon_core::config::PipelineConfig;
use evrecon_core::flow::import_flow;
use evrecon_core::io::Dataset;
use evrecon_core::metrics::read_metrics_csv;
use evrecon_core::sim::{Keyframe, PlaneSpec, SensorSpec, SimConfig, TextureSpec};
use evrecon_core::CameraIntrinsics;

fn evrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evrecon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_scene() -> SimConfig {
    SimConfig {
        seed: 3,
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
            num_frames: 3,
            ..SensorSpec::default()
        },
    }
}

fn fast_config() -> PipelineConfig {
    let mut c = PipelineConfig {
        block_size: 300,
        ..PipelineConfig::default()
    };
    c.flow.iterations = 20;
    c.depth_optimizer.max_iterations = 40;
    c.pose.optimizer.max_iterations = 20;
    c.pose.pyramid_levels = 2;
    c
}

/// Scene and config files plus a simulated dataset under `dir`.
fn setup(dir: &Path) -> (String, String, String) {
    let scene = dir.join("scene.toml");
    std::fs::write(&scene, small_scene().to_toml()).unwrap();
    let config = dir.join("config.toml");
    std::fs::write(&config, fast_config().to_toml()).unwrap();
    let data = dir.join("data");
    let out = evrecon(&["simulate", "--scene", s(&scene), "--output", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (s(&scene).into(), s(&config).into(), s(&data).into())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_the_dataset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, data) = setup(dir.path());
    let data = Path::new(&data);
    for f in ["frames.txt", "events.txt", "calib.txt", "sim.toml", "trajectory.txt", "depth/frame_00000002.pfm"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let ds = Dataset::load(data).unwrap();
    assert_eq!(ds.frames.len(), 3);
    assert!(!ds.events.is_empty());
}

#[test]
fn simulate_with_noise_adds_events() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _, data) = setup(dir.path());
    let noisy = dir.path().join("noisy");
    let out = evrecon(&["simulate", "--scene", &scene, "--noise-rate", "0.1", "--output", s(&noisy)]);
    assert!(out.status.success());
    let clean = Dataset::load(Path::new(&data)).unwrap().events.len();
    let corrupted = Dataset::load(&noisy).unwrap().events.len();
    assert_eq!(corrupted, clean + (clean as f64 * 0.1).round() as usize);
}

#[test]
fn reconstruct_baseline_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config, data) = setup(dir.path());
    let run = dir.path().join("run");
    let cf = dir.path().join("cf");
    let out = evrecon(&["reconstruct", "--config", &config, "--input", &data, "--output", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = evrecon(&["baseline-cf", "--config", &config, "--input", &data, "--output", s(&cf)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let a = std::fs::read_to_string(run.join("frames.txt")).unwrap();
    let b = std::fs::read_to_string(cf.join("frames.txt")).unwrap();
    assert_eq!(a, b);
    let rows = read_metrics_csv(&run.join("metrics.csv")).unwrap();
    assert!(!rows.is_empty());

    let out = evrecon(&["metrics", s(&run), s(&cf.join("metrics.csv"))]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("pipeline") && text.contains("cf"), "{text}");
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config, data) = setup(dir.path());
    let run = dir.path().join("run");
    let out = evrecon(&[
        "reconstruct", "--config", &config, "--input", &data, "--output", s(&run),
        "--beta", "7.5", "--lambda-sm", "0.5", "--lambda-r", "0.02", "--block-size", "400",
        "--cf-cutoff", "3.0", "--seed", "9",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let used = PipelineConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(
        (used.beta, used.lambda_sm, used.lambda_r, used.block_size, used.cf_cutoff, used.seed),
        (7.5, 0.5, 0.02, 400, 3.0, 9)
    );
    assert_eq!(used.depth_optimizer.max_iterations, 40);
}

#[test]
fn negative_beta_exits_nonzero_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config, data) = setup(dir.path());
    let run = dir.path().join("run");
    let out = evrecon(&["reconstruct", "--config", &config, "--input", &data, "--output", s(&run), "--beta=-1"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config") && err.contains("beta"), "{err}");
    assert!(!run.exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "lambda = 3\n").unwrap();
    let out = evrecon(&["reconstruct", "--config", s(&bad), "--input", "x", "--output", "y"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}

#[test]
fn missing_input_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = evrecon(&[
        "reconstruct",
        "--input",
        s(&dir.path().join("absent")),
        "--output",
        s(&dir.path().join("run")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("input:"));
}

#[test]
fn export_flow_writes_a_readable_flo() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, config, _) = setup(dir.path());
    let flo = dir.path().join("f.flo");
    let out = evrecon(&["export-flow", "--input", &scene, "--config", &config, "--frame", "1", "--output", s(&flo)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let flow = import_flow(&flo).unwrap();
    assert_eq!((flow.width(), flow.height()), (32, 32));

    let out = evrecon(&["export-flow", "--input", &scene, "--frame", "2", "--output", s(&flo)]);
    assert!(!out.status.success());
}
