//! Command-line surface. Exit codes: 0 success, 1 internal error, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backend::{parse_backend, write_detections};
use crate::checkpoint::Checkpoint;
use crate::codec_ext::{CodecSpec, EncoderTemplate, ENCODER_ENV};
use crate::error::{Result, VcmError};
use crate::evaluate::{evaluate, write_metrics_csv, EvalOptions};
use crate::postprocess::{postprocess_manifest, postprocess_sequence};
use crate::prepare::{prepare, JobStatus, PrepareOptions};
use crate::report::write_report;
use crate::synth::{synthesize, SynthOptions};
use crate::trainer::{plan, train, RunConfig};
use crate::video::{frame_file_name, load_sequence};

#[derive(Debug, Parser)]
#[command(name = "vcm", version, about = "Detection-oriented post-processing of decoded video")]
pub struct Cli {
    /// Seed for every random choice [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode and decode every sequence of a manifest across a QP sweep.
    Prepare(PrepareArgs),
    /// Train the post-processing network.
    Train(TrainArgs),
    /// Run a trained network over decoded frames.
    Postprocess(PostprocessArgs),
    /// Write per-frame detection dumps for one sequence.
    Detect(DetectArgs),
    /// Score decoded (and post-processed) sequences into a metrics CSV.
    Evaluate(EvaluateArgs),
    /// Plot rate-accuracy curves and the mAP gap table.
    Report(ReportArgs),
    /// Generate a synthetic dataset of moving coloured rectangles.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated QPs; defaults to each sequence's class preset.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(0..=63))]
    pub qps: Option<Vec<u8>>,
    /// `mock` or `external:<template>` [default: external when an encoder
    /// command is set, else mock].
    #[arg(long)]
    pub codec: Option<String>,
    /// Encoder command template for the external codec.
    #[arg(long, env = ENCODER_ENV)]
    pub encoder_cmd: Option<String>,
    /// Encoder configuration file substituted for `{config}`.
    #[arg(long)]
    pub encoder_config: Option<PathBuf>,
    /// Print the plan without encoding.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prepared manifest (overrides the config).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Adam learning rate [default: 1e-5].
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(0..=63))]
    pub qps: Option<Vec<u8>>,
    /// Checkpoint to resume from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print the plan without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Single decoded sequence (Y4M or PNG directory).
    #[arg(long, conflicts_with = "manifest", requires = "output")]
    pub input: Option<PathBuf>,
    /// Output PNG directory, or a `.y4m` file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Prepared manifest; every decoded entry is processed.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(0..=63))]
    pub qps: Option<Vec<u8>>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Sequence to run on (Y4M or PNG directory).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "toy")]
    pub backend: String,
    #[arg(long, default_value_t = 0.25)]
    pub conf: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Manifest written by `postprocess --manifest`.
    #[arg(long)]
    pub post_manifest: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    pub backend: String,
    #[arg(long, default_value_t = 0.25)]
    pub conf: f64,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(0..=63))]
    pub qps: Option<Vec<u8>>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSV files written by `evaluate`.
    #[arg(long, required = true, num_args = 1..)]
    pub metrics: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub sequences: usize,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 20)]
    pub scene_length: usize,
}

fn jobs(cli: &Cli) -> Result<usize> {
    match cli.jobs {
        Some(0) => Err(VcmError::Usage("--jobs must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn run_prepare(cli: &Cli, a: &PrepareArgs) -> Result<()> {
    let codec = match (a.codec.as_deref(), &a.encoder_cmd) {
        (None | Some("external"), Some(t)) => CodecSpec::External(EncoderTemplate::new(t)?),
        (Some(c), _) => CodecSpec::parse(c)?,
        (None, None) => CodecSpec::Mock,
    };
    let summary = prepare(&PrepareOptions {
        manifest: a.manifest.clone(),
        out: out_dir(cli),
        qps: a.qps.clone(),
        codec,
        encoder_config: a.encoder_config.clone(),
        jobs: jobs(cli)?,
        dry_run: a.dry_run,
    })?;
    for j in &summary.jobs {
        let status = match j.status {
            JobStatus::Ran => "ran",
            JobStatus::Skipped => "up to date",
            JobStatus::Planned => "would run",
        };
        println!("{} qp{:02}: {status} ({})", j.sequence, j.qp, j.dir.display());
    }
    if !a.dry_run {
        println!(
            "{} ran, {} up to date; manifest {}",
            summary.count(JobStatus::Ran),
            summary.count(JobStatus::Skipped),
            summary.manifest.display()
        );
    }
    Ok(())
}

fn train_config(cli: &Cli, a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig {
            out: out_dir(cli),
            ..RunConfig::default()
        },
    };
    if a.config.is_none() && a.manifest.is_none() {
        return Err(VcmError::Usage("train needs --config or --manifest".into()));
    }
    if let Some(m) = &a.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.lr {
        cfg.optimizer.learning_rate = v;
    }
    if let Some(v) = a.steps {
        cfg.max_steps = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.patch_size {
        cfg.patch_size = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = &a.backend {
        cfg.backend = v.clone();
    }
    if let Some(v) = &a.qps {
        cfg.qps = Some(v.clone());
    }
    if let Some(v) = &a.resume {
        cfg.resume = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = train_config(cli, a)?;
    if a.dry_run {
        print!("{}", plan(&cfg)?);
        return Ok(());
    }
    let jobs = jobs(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| VcmError::Environment(e.to_string()))?;
    let summary = pool.install(|| train(&cfg))?;
    let loss = summary.final_loss.map_or("-".to_string(), |l| format!("{l:.6e}"));
    println!(
        "trained {} steps (now at step {}), final loss {loss}",
        summary.steps_run, summary.final_step
    );
    if let Some(c) = summary.checkpoints.last() {
        println!("checkpoint {}", c.display());
    }
    Ok(())
}

fn run_postprocess(cli: &Cli, a: &PostprocessArgs) -> Result<()> {
    match (&a.input, &a.manifest) {
        (Some(input), None) => {
            let output = a.output.as_ref().expect("clap requires --output");
            let net = Checkpoint::load(&a.checkpoint)?.net;
            let n = postprocess_sequence(&net, input, output, None)?;
            println!("{n} frames -> {}", output.display());
        }
        (None, Some(m)) => {
            let p = postprocess_manifest(&a.checkpoint, m, &out_dir(cli), a.qps.as_deref(), jobs(cli)?)?;
            println!("post manifest {}", p.display());
        }
        _ => return Err(VcmError::Usage("postprocess needs --input or --manifest".into())),
    }
    Ok(())
}

fn run_detect(cli: &Cli, a: &DetectArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.conf) {
        return Err(VcmError::Usage("--conf must lie in [0, 1]".into()));
    }
    let backend = parse_backend(&a.backend)?;
    let seq = load_sequence(&a.input, None)?;
    let out = out_dir(cli);
    std::fs::create_dir_all(&out).map_err(|e| VcmError::io(&out, e))?;
    let mut total = 0;
    for (i, f) in seq.frames.iter().enumerate() {
        let dets = backend.detect(f, a.conf)?;
        total += dets.len();
        let name = Path::new(&frame_file_name(i)).with_extension("txt");
        write_detections(&out.join(name), &dets)?;
    }
    println!("{total} detections in {} frames -> {}", seq.len(), out.display());
    Ok(())
}

fn run_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let rows = evaluate(&EvalOptions {
        manifest: a.manifest.clone(),
        post_manifest: a.post_manifest.clone(),
        backend: a.backend.clone(),
        conf: a.conf,
        iou: a.iou,
        qps: a.qps.clone(),
        jobs: jobs(cli)?,
    })?;
    let out = out_dir(cli);
    std::fs::create_dir_all(&out).map_err(|e| VcmError::io(&out, e))?;
    let path = out.join("metrics.csv");
    write_metrics_csv(&path, &rows)?;
    for r in &rows {
        let map = r.map.map_or("-".to_string(), |m| format!("{m:.2}"));
        println!("{} {} qp{:02}: {:.1} kbps, mAP {map}", r.sequence, r.label.as_str(), r.qp, r.kbps);
    }
    println!("metrics {}", path.display());
    Ok(())
}

fn run_report(cli: &Cli, a: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for p in &a.metrics {
        rows.extend(crate::evaluate::read_metrics_csv(p)?);
    }
    let files = write_report(&rows, &out_dir(cli))?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn run_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let path = synthesize(&SynthOptions {
        out: out_dir(cli),
        seed: cli.seed.unwrap_or(0),
        sequences: a.sequences,
        frames: a.frames,
        width: a.width,
        height: a.height,
        fps: a.fps,
        scene_length: a.scene_length,
    })?;
    println!("manifest {}", path.display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare(a) => run_prepare(cli, a),
        Command::Train(a) => run_train(cli, a),
        Command::Postprocess(a) => run_postprocess(cli, a),
        Command::Detect(a) => run_detect(cli, a),
        Command::Evaluate(a) => run_evaluate(cli, a),
        Command::Report(a) => run_report(cli, a),
        Command::Synth(a) => run_synth(cli, a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
