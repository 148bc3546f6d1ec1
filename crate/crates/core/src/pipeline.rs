//! Batch orchestration: per frame pair, depth and pose from the two frames,
//! pseudo-intensity frames from event blocks, per-block poses, rendering.
//! Also the complementary-filter baseline on the same timestamps, scoring
//! against simulator ground truth, and the output directory layout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::depth_opt::{estimate_depth_and_pose, export_depth, DepthPoseEstimate};
use crate::error::{Error, Result};
use crate::events::{
    block_t_mid, complementary_filter, partition_events, pseudo_intensity_with_history, Event,
    EventStream, PseudoIntensityFrame,
};
use crate::flow::{depth_from_flow, edge_aware_refine, estimate_flow};
use crate::image::{DepthMap, Image, IntensityFrame};
use crate::io::{self, Dataset};
use crate::metrics::{mean_scores, psnr, ssim, write_metrics_csv, MetricsRow};
use crate::pose_opt::{estimate_intermediate_pose, trajectory_to_text, PoseInputs};
use crate::renderer::{render_sequence, BlockPose, FrameSource, OutputFrame, RenderWindow};
use crate::se3::Pose;
use crate::sim::{GroundTruth, SimConfig, SimulatedSequence};

pub const METHOD_PIPELINE: &str = "pipeline";
pub const METHOD_CF: &str = "cf";

/// Index range and timestamp of one event block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpan {
    pub range: std::ops::Range<usize>,
    pub t_mid: f64,
}

/// Blocks of every window `frames[w]..frames[w + 1]`, as index ranges into
/// `events.events()`.
pub fn window_blocks(events: &EventStream, frames: &[IntensityFrame], block_size: usize) -> Result<Vec<Vec<BlockSpan>>> {
    frames
        .windows(2)
        .map(|pair| {
            let range = events.window_range(pair[0].timestamp, pair[1].timestamp);
            let blocks = partition_events(&events.events()[range.clone()], block_size)?;
            let mut start = range.start;
            Ok(blocks
                .blocks
                .iter()
                .map(|b| {
                    let span = BlockSpan {
                        range: start..start + b.len(),
                        t_mid: block_t_mid(b).expect("blocks are non-empty"),
                    };
                    start += b.len();
                    span
                })
                .collect())
        })
        .collect()
}

/// Pseudo-intensity frame at an input frame time: a block of `block_size`
/// events centered on `t`, with history.
fn pseudo_at_frame(events: &[Event], t: f64, config: &PipelineConfig, w: usize, h: usize) -> Result<PseudoIntensityFrame> {
    let bs = config.block_size;
    let idx = events.partition_point(|e| e.t < t);
    let range = idx.saturating_sub(bs / 2)..(idx + bs.div_ceil(2)).min(events.len());
    let mut f = pseudo_intensity_with_history(events, range, config.history, bs, w, h, 0, &config.pseudo_intensity)?;
    f.t_mid = t;
    Ok(f)
}

/// Flow-based inverse depth of `a`, refined with `a` as guide.
fn initial_depth(a: &Image, b: &Image, config: &PipelineConfig) -> Result<DepthMap> {
    let flow = estimate_flow(a, b, &config.flow)?;
    let d = depth_from_flow(&flow, config.init.flow_epsilon)?;
    edge_aware_refine(&d, a, config.init.spatial_sigma, config.init.range_sigma, config.init.iterations)
}

/// Everything estimated for one frame pair.
#[derive(Debug, Clone)]
pub struct WindowResult {
    pub index: usize,
    pub t_k: f64,
    pub t_k1: f64,
    /// Events strictly inside the window.
    pub event_count: usize,
    /// Stage-(a) estimate; `None` when it failed outright.
    pub depth: Option<DepthPoseEstimate>,
    pub render: RenderWindow,
    /// Per-window warnings, in stage order.
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub frames: Vec<OutputFrame>,
    pub windows: Vec<WindowResult>,
}

fn process_window(
    ds: &Dataset,
    config: &PipelineConfig,
    w: usize,
    blocks: &[BlockSpan],
) -> WindowResult {
    let k = &ds.camera;
    let (a, b) = (&ds.frames[w], &ds.frames[w + 1]);
    let (width, height) = (k.width, k.height);
    let events = ds.events.events();
    let mut diagnostics = Vec::new();
    let mut note = |stage: &str, msg: String| {
        log::warn!("window {w}: {stage}: {msg}");
        diagnostics.push(format!("{stage}: {msg}"));
    };

    let mut init = |img_a: &Image, img_b: &Image, which: &str| {
        initial_depth(img_a, img_b, config).unwrap_or_else(|e| {
            note("flow", format!("{which}: {e}; starting from constant inverse depth"));
            DepthMap::constant(width, height, 1.0)
        })
    };
    let init_k = init(&a.image, &b.image, "d_k");
    let init_k1 = init(&b.image, &a.image, "d_k1");

    let depth = match estimate_depth_and_pose(a, b, &init_k, &init_k1, k, &config.depth_optimizer, &config.objective()) {
        Ok(est) => Some(est),
        Err(Error::DepthDiverged(best)) => {
            note("depth", format!("diverged, keeping the best iterate (loss {})", best.final_loss));
            Some(*best)
        }
        Err(e) => {
            note("depth", e.to_string());
            None
        }
    };

    let block_poses = match &depth {
        None => blocks
            .iter()
            .map(|s| BlockPose {
                t_mid: s.t_mid,
                xi_k_j: Pose::identity(),
                xi_k1_j: Pose::identity(),
                failure: Some("depth stage failed for this window".into()),
            })
            .collect(),
        Some(est) => estimate_block_poses(ds, config, w, blocks, est, &mut note, events, width, height),
    };
    let (d_k, d_k1) = match &depth {
        Some(est) => (est.d_k.clone(), est.d_k1.clone()),
        None => (init_k, init_k1),
    };
    WindowResult {
        index: w,
        t_k: a.timestamp,
        t_k1: b.timestamp,
        event_count: blocks.iter().map(|s| s.range.len()).sum(),
        depth,
        render: RenderWindow {
            d_k,
            d_k1,
            blocks: block_poses,
        },
        diagnostics,
    }
}

#[allow(clippy::too_many_arguments)]
fn estimate_block_poses(
    ds: &Dataset,
    config: &PipelineConfig,
    w: usize,
    blocks: &[BlockSpan],
    est: &DepthPoseEstimate,
    note: &mut impl FnMut(&str, String),
    events: &[Event],
    width: usize,
    height: usize,
) -> Vec<BlockPose> {
    let (a, b) = (&ds.frames[w], &ds.frames[w + 1]);
    let anchors = pseudo_at_frame(events, a.timestamp, config, width, height)
        .and_then(|e0| Ok((e0, pseudo_at_frame(events, b.timestamp, config, width, height)?)));
    let (e_k0, e_k1_0) = match anchors {
        Ok(pair) => pair,
        Err(e) => {
            note("pseudo-intensity", e.to_string());
            return blocks
                .iter()
                .map(|s| BlockPose {
                    t_mid: s.t_mid,
                    xi_k_j: Pose::identity(),
                    xi_k1_j: Pose::identity(),
                    failure: Some(format!("pseudo-intensity: {e}")),
                })
                .collect();
        }
    };
    let start = (Pose::identity(), est.xi.inverse());
    let mut prev = start;
    let mut out = Vec::with_capacity(blocks.len());
    for (j, span) in blocks.iter().enumerate() {
        let init = if config.warm_start { prev } else { start };
        let result = pseudo_intensity_with_history(
            events,
            span.range.clone(),
            config.history,
            config.block_size,
            width,
            height,
            j + 1,
            &config.pseudo_intensity,
        )
        .map_err(|e| e.in_stage("pseudo-intensity"))
        .and_then(|e_kj| {
            let inputs = PoseInputs {
                e_k0: &e_k0.pixels,
                e_k1_0: &e_k1_0.pixels,
                e_kj: &e_kj.pixels,
                d_k: &est.d_k,
                d_k1: &est.d_k1,
                i_k: &a.image,
                i_k1: &b.image,
            };
            estimate_intermediate_pose(&inputs, &ds.camera, config.lambda_r, &config.pose, (&init.0, &init.1))
                .map_err(|e| e.in_stage("pose"))
        });
        out.push(match result {
            Ok(r) => {
                prev = (r.xi_k_j, r.xi_k1_j);
                BlockPose {
                    t_mid: span.t_mid,
                    xi_k_j: r.xi_k_j,
                    xi_k1_j: r.xi_k1_j,
                    failure: None,
                }
            }
            Err(e) => {
                note("pose", format!("block {j}: {e}"));
                BlockPose {
                    t_mid: span.t_mid,
                    xi_k_j: init.0,
                    xi_k1_j: init.1,
                    failure: Some(e.to_string()),
                }
            }
        });
    }
    out
}

/// Run every stage on every window. Windows are processed in parallel; the
/// result does not depend on scheduling.
pub fn reconstruct(ds: &Dataset, config: &PipelineConfig) -> Result<Reconstruction> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    ds.validate().map_err(|e| e.in_stage("input"))?;
    let spans = window_blocks(&ds.events, &ds.frames, config.block_size).map_err(|e| e.in_stage("events"))?;
    let windows: Vec<WindowResult> = spans
        .par_iter()
        .enumerate()
        .map(|(w, blocks)| process_window(ds, config, w, blocks))
        .collect();
    let render_windows: Vec<RenderWindow> = windows.iter().map(|w| w.render.clone()).collect();
    let frames =
        render_sequence(&ds.frames, &render_windows, &ds.camera, &config.render).map_err(|e| e.in_stage("render"))?;
    Ok(Reconstruction { frames, windows })
}

/// Complementary-filter reconstructions at the block timestamps, with the
/// input frames passed through, in the same order as [`reconstruct`].
pub fn baseline_cf(ds: &Dataset, config: &PipelineConfig) -> Result<Vec<OutputFrame>> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    ds.validate().map_err(|e| e.in_stage("input"))?;
    let spans = window_blocks(&ds.events, &ds.frames, config.block_size).map_err(|e| e.in_stage("events"))?;
    let times: Vec<f64> = spans.iter().flatten().map(|s| s.t_mid).collect();
    let mut filtered = complementary_filter(&ds.events, &ds.frames, config.cf_cutoff, config.cf_contrast, &times)
        .map_err(|e| e.in_stage("baseline"))?
        .into_iter();
    let mut out = vec![OutputFrame {
        frame: ds.frames[0].clone(),
        source: FrameSource::Input { index: 0 },
    }];
    for (w, blocks) in spans.iter().enumerate() {
        for j in 0..blocks.len() {
            out.push(OutputFrame {
                frame: filtered.next().expect("one filtered frame per block"),
                source: FrameSource::Rendered { window: w, block: j },
            });
        }
        out.push(OutputFrame {
            frame: ds.frames[w + 1].clone(),
            source: FrameSource::Input { index: w + 1 },
        });
    }
    Ok(out)
}

/// PSNR/SSIM of every intermediate frame against the unquantized ground
/// truth render at its timestamp.
pub fn score(frames: &[OutputFrame], truth: &GroundTruth, method: &str) -> Result<Vec<MetricsRow>> {
    frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.is_intermediate())
        .map(|(i, f)| {
            let t = f.frame.timestamp;
            let gt = truth.frame(t)?;
            Ok(MetricsRow {
                frame_index: i,
                timestamp: t,
                method: method.to_string(),
                psnr: psnr(&f.frame.image, &gt.image)?,
                ssim: ssim(&f.frame.image, &gt.image)?,
            })
        })
        .collect()
}

/// Input given either as a dataset directory or as a simulator TOML file,
/// which is simulated in memory.
pub fn load_input(path: &Path) -> Result<Dataset> {
    if path.is_file() && path.extension().is_some_and(|e| e == "toml") {
        let sim = SimConfig::load(path)?;
        Ok(Dataset::from_simulation(&SimulatedSequence::generate(&sim)?))
    } else {
        Dataset::load(path)
    }
}

/// Summary of a completed run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub output: PathBuf,
    pub frame_count: usize,
    pub intermediate_count: usize,
    pub substituted_count: usize,
    /// Empty when the input carries no ground truth.
    pub metrics: Vec<MetricsRow>,
}

impl RunReport {
    pub fn mean_psnr(&self) -> Option<f64> {
        self.metrics.first().and_then(|r| mean_scores(&self.metrics, &r.method)).map(|(p, _)| p)
    }
}

fn required_paths(config: &PipelineConfig) -> Result<(PathBuf, PathBuf)> {
    let missing = |field: &str| {
        Error::Config {
            field: field.into(),
            reason: "required".into(),
        }
        .in_stage("config")
    };
    let input = config.paths.input.clone().ok_or_else(|| missing("paths.input"))?;
    let output = config.paths.output.clone().ok_or_else(|| missing("paths.output"))?;
    Ok((input, output))
}

/// Reconstruct `config.paths.input` into `config.paths.output`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let (input, output) = required_paths(config)?;
    let ds = load_input(&input).map_err(|e| e.in_stage("input"))?;
    run_pipeline_on(&ds, config, &output)
}

/// Complementary-filter baseline of `config.paths.input` into
/// `config.paths.output`.
pub fn run_baseline_cf(config: &PipelineConfig) -> Result<RunReport> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let (input, output) = required_paths(config)?;
    let ds = load_input(&input).map_err(|e| e.in_stage("input"))?;
    run_baseline_cf_on(&ds, config, &output)
}

fn ground_truth(ds: &Dataset) -> Result<Option<GroundTruth>> {
    ds.simulation
        .as_ref()
        .map(GroundTruth::new)
        .transpose()
        .map_err(|e| e.in_stage("metrics"))
}

pub fn run_pipeline_on(ds: &Dataset, config: &PipelineConfig, output: &Path) -> Result<RunReport> {
    let rec = reconstruct(ds, config)?;
    let truth = ground_truth(ds)?;
    let metrics = match &truth {
        Some(gt) => score(&rec.frames, gt, METHOD_PIPELINE).map_err(|e| e.in_stage("metrics"))?,
        None => Vec::new(),
    };
    write_common(output, config, &rec.frames, &metrics).map_err(|e| e.in_stage("output"))?;
    write_pipeline_extras(output, &rec).map_err(|e| e.in_stage("output"))?;
    let log = run_log(config, ds, &rec.frames, Some(&rec.windows), &metrics, METHOD_PIPELINE);
    io::write_text(&output.join("run.log"), &log).map_err(|e| e.in_stage("output"))?;
    Ok(report(output, &rec.frames, metrics))
}

pub fn run_baseline_cf_on(ds: &Dataset, config: &PipelineConfig, output: &Path) -> Result<RunReport> {
    let frames = baseline_cf(ds, config)?;
    let truth = ground_truth(ds)?;
    let metrics = match &truth {
        Some(gt) => score(&frames, gt, METHOD_CF).map_err(|e| e.in_stage("metrics"))?,
        None => Vec::new(),
    };
    write_common(output, config, &frames, &metrics).map_err(|e| e.in_stage("output"))?;
    let log = run_log(config, ds, &frames, None, &metrics, METHOD_CF);
    io::write_text(&output.join("run.log"), &log).map_err(|e| e.in_stage("output"))?;
    Ok(report(output, &frames, metrics))
}

fn report(output: &Path, frames: &[OutputFrame], metrics: Vec<MetricsRow>) -> RunReport {
    RunReport {
        output: output.to_path_buf(),
        frame_count: frames.len(),
        intermediate_count: frames.iter().filter(|f| f.is_intermediate()).count(),
        substituted_count: frames
            .iter()
            .filter(|f| matches!(f.source, FrameSource::Substituted { .. }))
            .count(),
        metrics,
    }
}

fn write_common(output: &Path, config: &PipelineConfig, frames: &[OutputFrame], metrics: &[MetricsRow]) -> Result<()> {
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let images: Vec<IntensityFrame> = frames.iter().map(|f| f.frame.clone()).collect();
    io::write_frames(output, &images)?;
    write_metrics_csv(metrics, &output.join("metrics.csv"))?;
    io::write_text(&output.join("config.toml"), &config.to_toml())
}

fn write_pipeline_extras(output: &Path, rec: &Reconstruction) -> Result<()> {
    let mut traj = String::new();
    let depth_dir = output.join("depth");
    std::fs::create_dir_all(&depth_dir).map_err(|e| Error::io(&depth_dir, e))?;
    for w in &rec.windows {
        let _ = writeln!(
            traj,
            "# window {}: poses relative to the frame at t = {}",
            w.index, w.t_k
        );
        let mut entries: Vec<(f64, Pose)> = w.render.blocks.iter().map(|b| (b.t_mid, b.xi_k_j)).collect();
        if let Some(est) = &w.depth {
            entries.push((w.t_k1, est.xi));
        }
        traj.push_str(&trajectory_to_text(&entries));
        export_depth(&w.render.d_k, &depth_dir.join(format!("window_{:04}_k.pfm", w.index)))?;
        export_depth(&w.render.d_k1, &depth_dir.join(format!("window_{:04}_k1.pfm", w.index)))?;
    }
    io::write_text(&output.join("trajectory.txt"), &traj)
}

fn run_log(
    config: &PipelineConfig,
    ds: &Dataset,
    frames: &[OutputFrame],
    windows: Option<&[WindowResult]>,
    metrics: &[MetricsRow],
    method: &str,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method {method}");
    let _ = writeln!(s, "seed {}", config.seed);
    if let Some(sim) = &ds.simulation {
        let _ = writeln!(s, "simulator seed {}", sim.seed);
    }
    let _ = writeln!(
        s,
        "input {} frames, {} events, camera {}",
        ds.frames.len(),
        ds.events.len(),
        ds.camera.to_calibration_string().trim()
    );
    for w in windows.unwrap_or_default() {
        let _ = writeln!(
            s,
            "window {} [{}, {}): {} events, {} blocks",
            w.index,
            w.t_k,
            w.t_k1,
            w.event_count,
            w.render.blocks.len()
        );
        if let Some(d) = &w.depth {
            let _ = writeln!(
                s,
                "  depth loss {} -> {} in {} iterations",
                d.initial_loss, d.final_loss, d.iterations_run
            );
        }
        for d in &w.diagnostics {
            let _ = writeln!(s, "  warning: {d}");
        }
    }
    for (i, f) in frames.iter().enumerate() {
        if let FrameSource::Substituted { window, block, reason } = &f.source {
            let _ = writeln!(s, "frame {i} (window {window} block {block}) substituted: {reason}");
        }
    }
    let _ = writeln!(
        s,
        "output {} frames, {} intermediate",
        frames.len(),
        frames.iter().filter(|f| f.is_intermediate()).count()
    );
    match mean_scores(metrics, method) {
        Some((p, q)) => {
            let _ = writeln!(s, "mean psnr {p} ssim {q} over {} frames", metrics.len());
        }
        None => {
            let _ = writeln!(s, "no ground truth, metrics not computed");
        }
    }
    s
}

