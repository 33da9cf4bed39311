//! Training loop over manifest pairs.
//!
//! Batches for step `s` come from `step_rng(seed, s)`, so a resumed run draws
//! exactly the batches an uninterrupted run would. A producer thread fills a
//! bounded queue with batches; the consumer computes per-pair gradients in
//! parallel and reduces them in pair order.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vcm_core::data::{sample_offset, step_rng, PatchPair};
use vcm_core::detector::DetectorBackend;
use vcm_core::net::{NetConfig, PostProcNet};
use vcm_core::training::{apply_gradient, pair_gradient, reduce_gradients, AdamConfig, OptimizerState};
use vcm_core::Frame;

use crate::backend::{parse_backend, Backend};
use crate::checkpoint::Checkpoint;
use crate::error::{IoContext, Result, VcmError};
use crate::manifest::Manifest;
use crate::video::load_sequence;

pub const LOG_FILE: &str = "train_log.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub backend: String,
    /// Decoded QPs to train on; all manifest entries when absent.
    pub qps: Option<Vec<u8>>,
    pub seed: u64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub max_steps: u64,
    pub checkpoint_every: u64,
    pub queue_capacity: usize,
    pub resume: Option<PathBuf>,
    pub net: NetConfig,
    pub optimizer: AdamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            out: PathBuf::from("train"),
            backend: "toy".into(),
            qps: None,
            seed: 0,
            batch_size: 8,
            patch_size: 256,
            max_steps: 1000,
            checkpoint_every: 100,
            queue_capacity: 4,
            resume: None,
            net: NetConfig::default(),
            optimizer: AdamConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML run config; relative paths are taken from the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(VcmError::Usage(format!(
                "run config not found: {}",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).at(path)?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| VcmError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.out = base.join(&cfg.out);
        cfg.resume = cfg.resume.map(|r| base.join(r));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(VcmError::Config(format!("{field}: {reason}")));
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.patch_size == 0 {
            return bad("patch_size", "must be at least 1");
        }
        if self.max_steps == 0 {
            return bad("max_steps", "must be at least 1");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every", "must be at least 1");
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity", "must be at least 1");
        }
        if self.qps.as_ref().is_some_and(|q| q.is_empty()) {
            return bad("qps", "must not be empty");
        }
        self.net.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

/// Aligned raw/decoded frames of one sequence at one QP.
#[derive(Debug, Clone)]
pub struct PairSource {
    pub sequence: String,
    pub qp: u8,
    pub raw: Vec<Frame<f32>>,
    pub decoded: Vec<Frame<f32>>,
}

/// Loads every selected (sequence, QP) pair, restricted to each entry's frame
/// range. Unreadable media are collected and reported together.
pub fn load_pair_sources(manifest: &Manifest, qps: Option<&[u8]>) -> Result<Vec<PairSource>> {
    let mut sources = Vec::new();
    let mut failed = Vec::new();
    for seq in &manifest.sequences {
        let raw = match load_sequence(&seq.raw, Some(seq.fps)) {
            Ok(r) => r,
            Err(_) => {
                failed.push(seq.raw.clone());
                continue;
            }
        };
        if raw.len() != seq.frame_count {
            return Err(VcmError::manifest(
                &seq.id,
                format!("raw has {} frames, manifest says {}", raw.len(), seq.frame_count),
            ));
        }
        let range = seq.frames();
        for (&qp, entry) in &seq.decoded {
            if qps.is_some_and(|q| !q.contains(&qp)) {
                continue;
            }
            let dec = match load_sequence(&entry.path, Some(seq.fps)) {
                Ok(d) => d,
                Err(_) => {
                    failed.push(entry.path.clone());
                    continue;
                }
            };
            if dec.len() != raw.len() || dec.size() != raw.size() {
                return Err(VcmError::manifest(
                    &seq.id,
                    format!("decoded qp {qp} does not align with the raw sequence"),
                ));
            }
            sources.push(PairSource {
                sequence: seq.id.clone(),
                qp,
                raw: raw.frames[range.clone()].to_vec(),
                decoded: dec.frames[range.clone()].to_vec(),
            });
        }
    }
    if !failed.is_empty() {
        return Err(VcmError::Ingestion(failed));
    }
    if sources.is_empty() {
        return Err(VcmError::Usage("manifest selects no decoded pairs to train on".into()));
    }
    Ok(sources)
}

/// The batch for 1-based `step`: pick a source, then a co-located crop.
pub fn sample_batch(
    sources: &[PairSource],
    seed: u64,
    step: u64,
    batch_size: usize,
    patch: usize,
) -> Result<Vec<PatchPair<f32>>> {
    let mut rng = step_rng(seed, step);
    (0..batch_size)
        .map(|_| {
            let src = &sources[rng.random_range(0..sources.len())];
            let (_, h, w) = src.raw[0].shape();
            if patch > h.min(w) {
                return Err(VcmError::Config(format!(
                    "patch_size: {patch} exceeds the {w}x{h} frames of `{}`",
                    src.sequence
                )));
            }
            let o = sample_offset(&mut rng, src.raw.len(), h, w, patch);
            Ok(PatchPair {
                decoded: src.decoded[o.frame_index].crop(o.y, o.x, patch, patch)?,
                raw: src.raw[o.frame_index].crop(o.y, o.x, patch, patch)?,
                frame_index: o.frame_index,
                y: o.y,
                x: o.x,
            })
        })
        .collect()
}

/// Mean loss and gradient over a batch, per-pair work in parallel.
pub fn parallel_batch_gradient(
    net: &PostProcNet<f32>,
    backend: &dyn DetectorBackend<f32>,
    batch: &[PatchPair<f32>],
) -> Result<(f32, Vec<f32>)> {
    if batch.is_empty() {
        return Err(vcm_core::Error::Usage("training batch is empty".into()).into());
    }
    let parts = batch
        .par_iter()
        .map(|p| pair_gradient(net, backend, p))
        .collect::<vcm_core::Result<Vec<_>>>()?;
    Ok(reduce_gradients(parts)?)
}

pub struct Trainer {
    pub net: PostProcNet<f32>,
    pub opt: OptimizerState<f32>,
    pub backend: Backend,
}

impl Trainer {
    pub fn step(&mut self, batch: &[PatchPair<f32>]) -> Result<f32> {
        let (loss, grad) = parallel_batch_gradient(&self.net, self.backend.as_ref(), batch)?;
        apply_gradient(&mut self.net, &mut self.opt, &grad)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps_run: u64,
    pub final_step: u64,
    pub final_loss: Option<f32>,
    pub checkpoints: Vec<PathBuf>,
    pub log: PathBuf,
}

pub fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join("checkpoints").join(format!("step_{step:06}.ckpt"))
}

fn starting_point(cfg: &RunConfig) -> Result<(PostProcNet<f32>, OptimizerState<f32>)> {
    match &cfg.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let opt = ck.optimizer_state().ok_or_else(|| VcmError::Checkpoint {
                path: path.clone(),
                reason: "no optimizer state to resume from".into(),
            })?;
            if ck.train.is_some_and(|t| t.seed != cfg.seed) {
                return Err(VcmError::Config(format!(
                    "seed: resume checkpoint was trained with seed {}",
                    ck.train.map_or(0, |t| t.seed)
                )));
            }
            if ck.net.config() != &cfg.net {
                return Err(VcmError::Config(
                    "net: resume checkpoint has a different network config".into(),
                ));
            }
            Ok((ck.net, opt))
        }
        None => {
            let net = PostProcNet::build(cfg.net, cfg.seed)?;
            let opt = OptimizerState::new(cfg.optimizer, net.parameters().len())?;
            Ok((net, opt))
        }
    }
}

/// Human-readable execution plan for `--dry-run`.
pub fn plan(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let manifest = Manifest::load(&cfg.manifest)?;
    let mut s = format!(
        "train {} steps (batch {}, patch {}) with backend {} seed {}\n",
        cfg.max_steps, cfg.batch_size, cfg.patch_size, cfg.backend, cfg.seed
    );
    for seq in &manifest.sequences {
        for qp in seq.decoded.keys() {
            if cfg.qps.as_ref().is_none_or(|q| q.contains(qp)) {
                s.push_str(&format!("  pair {} qp {qp} frames {:?}\n", seq.id, seq.frames()));
            }
        }
    }
    s.push_str(&format!(
        "  network {} parameters, checkpoints every {} steps into {}\n",
        vcm_core::net::parameter_count(&cfg.net),
        cfg.checkpoint_every,
        cfg.out.join("checkpoints").display()
    ));
    Ok(s)
}

/// Runs (or resumes) training to `max_steps`.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let backend = parse_backend(&cfg.backend)?;
    if !backend.capabilities().differentiable {
        return Err(vcm_core::Error::Capability {
            backend: backend.name().to_string(),
            capability: "feature gradients",
        }
        .into());
    }
    let manifest = Manifest::load(&cfg.manifest)?;
    let sources = load_pair_sources(&manifest, cfg.qps.as_deref())?;
    // fail before any side effect if the patch cannot be cut
    sample_batch(&sources, cfg.seed, 1, 1, cfg.patch_size)?;
    let (net, opt) = starting_point(cfg)?;

    std::fs::create_dir_all(&cfg.out).at(&cfg.out)?;
    let log_path = cfg.out.join(LOG_FILE);
    let fresh = cfg.resume.is_none() || !log_path.exists();
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .at(&log_path)?;
    if fresh {
        writeln!(log, "step,loss,seconds").at(&log_path)?;
    }

    let mut trainer = Trainer { net, opt, backend };
    let first = trainer.opt.step + 1;
    let mut summary = TrainSummary {
        steps_run: 0,
        final_step: trainer.opt.step,
        final_loss: None,
        checkpoints: Vec::new(),
        log: log_path.clone(),
    };
    let started = Instant::now();
    std::thread::scope(|scope| -> Result<()> {
        // the receiver lives in this closure, so an early error return
        // unblocks the producer before the scope joins it
        let (tx, rx) = sync_channel::<Result<Vec<PatchPair<f32>>>>(cfg.queue_capacity);
        let sources = &sources;
        scope.spawn(move || {
            for step in first..=cfg.max_steps {
                let b = sample_batch(sources, cfg.seed, step, cfg.batch_size, cfg.patch_size);
                if tx.send(b).is_err() {
                    break;
                }
            }
        });
        for step in first..=cfg.max_steps {
            let batch = rx
                .recv()
                .map_err(|_| VcmError::Environment("batch producer stopped".into()))??;
            let loss = trainer.step(&batch)?;
            writeln!(log, "{step},{loss:.8},{:.3}", started.elapsed().as_secs_f64()).at(&log_path)?;
            summary.steps_run += 1;
            summary.final_step = step;
            summary.final_loss = Some(loss);
            if step % cfg.checkpoint_every == 0 || step == cfg.max_steps {
                let p = checkpoint_path(&cfg.out, step);
                Checkpoint::training(trainer.net.clone(), &trainer.opt, cfg.seed).save(&p)?;
                summary.checkpoints.push(p);
            }
        }
        Ok(())
    })?;
    log.flush().at(&log_path)?;
    Ok(summary)
}
