use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evrecon_core::config::PipelineConfig;
use evrecon_core::depth_opt::export_depth;
use evrecon_core::flow::{estimate_flow, export_flow};
use evrecon_core::io::Dataset;
use evrecon_core::metrics::{mean_scores, read_metrics_csv};
use evrecon_core::pipeline::{self, RunReport};
use evrecon_core::pose_opt::export_trajectory;
use evrecon_core::sim::{corrupt_events, SimConfig, SimulatedSequence};
use evrecon_core::{Error, Result};

#[derive(Parser)]
#[command(name = "evrecon", version, about = "High-frame-rate reconstruction from intensity frames and events")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with ground truth.
    Simulate(SimulateArgs),
    /// Reconstruct intermediate frames at every event block.
    Reconstruct(RunArgs),
    /// Complementary-filter baseline at the same timestamps.
    BaselineCf(RunArgs),
    /// Summarize metrics CSVs (or run directories holding one).
    Metrics(MetricsArgs),
    /// Estimate optical flow between two dataset frames and write it as `.flo`.
    ExportFlow(ExportFlowArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (TOML); flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda_sm: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    cf_cutoff: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory or simulator scene file.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path).map_err(|e| e.in_stage("config"))?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.lambda_sm {
            cfg.lambda_sm = v;
        }
        if let Some(v) = self.lambda_r {
            cfg.lambda_r = v;
        }
        if let Some(v) = self.block_size {
            cfg.block_size = v;
        }
        if let Some(v) = self.cf_cutoff {
            cfg.cf_cutoff = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(p) = &self.input {
            cfg.paths.input = Some(p.clone());
        }
        if let Some(p) = &self.output {
            cfg.paths.output = Some(p.clone());
        }
        cfg.validate().map_err(|e| e.in_stage("config"))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene config (TOML); the built-in two-plane scene when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Overrides the scene seed; also seeds event corruption.
    #[arg(long)]
    seed: Option<u64>,
    /// Spurious events to inject, as a fraction of the clean count.
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// `metrics.csv` files or run directories.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

#[derive(Args)]
struct ExportFlowArgs {
    /// Dataset directory or simulator scene file.
    #[arg(long)]
    input: PathBuf,
    /// Flow from frame `frame` to frame `frame + 1`.
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Pipeline config supplying the flow settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut scene = match &args.scene {
        Some(p) => SimConfig::load(p).map_err(|e| e.in_stage("config"))?,
        None => SimConfig::two_plane(args.seed.unwrap_or(1)),
    };
    if let Some(seed) = args.seed {
        scene.seed = seed;
    }
    let seq = SimulatedSequence::generate(&scene).map_err(|e| e.in_stage("simulate"))?;
    let mut ds = Dataset::from_simulation(&seq);
    if args.noise_rate > 0.0 {
        ds.events = corrupt_events(&ds.events, args.noise_rate, scene.seed).map_err(|e| e.in_stage("simulate"))?;
    }
    let out = &args.output;
    let write = || -> Result<()> {
        ds.write(out)?;
        let depth_dir = out.join("depth");
        std::fs::create_dir_all(&depth_dir).map_err(|e| Error::Io {
            path: depth_dir.clone(),
            source: e,
        })?;
        for (i, d) in seq.depths.iter().enumerate() {
            export_depth(d, &depth_dir.join(format!("frame_{i:08}.pfm")))?;
        }
        let t0 = ds.frames[0].timestamp;
        let poses: Vec<_> = ds
            .frames
            .iter()
            .map(|f| (f.timestamp, seq.relative_pose(t0, f.timestamp)))
            .collect();
        export_trajectory(&poses, &out.join("trajectory.txt"))
    };
    write().map_err(|e| e.in_stage("output"))?;
    println!(
        "wrote {} frames and {} events to {} (seed {})",
        ds.frames.len(),
        ds.events.len(),
        out.display(),
        scene.seed
    );
    Ok(())
}

fn print_report(report: &RunReport) {
    println!(
        "wrote {} frames ({} intermediate, {} substituted) to {}",
        report.frame_count,
        report.intermediate_count,
        report.substituted_count,
        report.output.display()
    );
    if let Some(p) = report.mean_psnr() {
        println!("mean psnr {p:.3} dB over {} frames", report.metrics.len());
    }
}

fn metrics(args: &MetricsArgs) -> Result<()> {
    println!("{:<40} {:<10} {:>6} {:>10} {:>8}", "file", "method", "frames", "psnr", "ssim");
    for path in &args.paths {
        let csv = if path.is_dir() { path.join("metrics.csv") } else { path.clone() };
        let rows = read_metrics_csv(&csv)?;
        let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        methods.sort_unstable();
        methods.dedup();
        for m in methods {
            let n = rows.iter().filter(|r| r.method == m).count();
            let (psnr, ssim) = mean_scores(&rows, m).expect("method has rows");
            println!("{:<40} {:<10} {:>6} {:>10.3} {:>8.4}", csv.display(), m, n, psnr, ssim);
        }
    }
    Ok(())
}

fn export_flow_cmd(args: &ExportFlowArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| e.in_stage("config"))?,
        None => PipelineConfig::default(),
    };
    let ds = pipeline::load_input(&args.input).map_err(|e| e.in_stage("input"))?;
    let (a, b) = match (ds.frames.get(args.frame), ds.frames.get(args.frame + 1)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidInput(format!(
                "frame {} has no successor among {} frames",
                args.frame,
                ds.frames.len()
            ))
            .in_stage("input"))
        }
    };
    let flow = estimate_flow(&a.image, &b.image, &cfg.flow).map_err(|e| e.in_stage("flow"))?;
    export_flow(&flow, &args.output).map_err(|e| e.in_stage("output"))?;
    println!("wrote {}x{} flow to {}", flow.width(), flow.height(), args.output.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Reconstruct(a) => pipeline::run_pipeline(&a.resolve()?).map(|r| print_report(&r)),
        Command::BaselineCf(a) => pipeline::run_baseline_cf(&a.resolve()?).map(|r| print_report(&r)),
        Command::Metrics(a) => metrics(a),
        Command::ExportFlow(a) => export_flow_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

