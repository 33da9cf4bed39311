//! QP sweeps: one job directory per sequence and QP holding the decoded Y4M,
//! the bitstream and a `job.json` log. Jobs whose log and outputs still match
//! their inputs are skipped.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec_ext::{run_codec, CodecSpec};
use crate::error::{IoContext, Result, VcmError};
use crate::hash::sha256_path;
use crate::manifest::{DecodedEntry, Manifest, SequenceEntry};
use crate::video::{load_yuv420, write_y4m};

pub const JOB_LOG: &str = "job.json";
pub const DECODED_FILE: &str = "decoded.y4m";

#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// `None` uses each sequence's class preset.
    pub qps: Option<Vec<u8>>,
    pub codec: CodecSpec,
    pub encoder_config: Option<PathBuf>,
    pub jobs: usize,
    pub dry_run: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobLog {
    pub sequence: String,
    pub qp: u8,
    pub codec: String,
    pub command: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    pub input: FileRecord,
    pub decoded: FileRecord,
    pub bitstream: FileRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobStatus {
    Ran,
    Skipped,
    Planned,
}

#[derive(Debug, Clone)]
pub struct JobReport {
    pub sequence: String,
    pub qp: u8,
    pub dir: PathBuf,
    pub status: JobStatus,
}

#[derive(Debug, Clone)]
pub struct PrepareSummary {
    pub jobs: Vec<JobReport>,
    /// Output manifest (not written on dry runs).
    pub manifest: PathBuf,
}

impl PrepareSummary {
    pub fn count(&self, status: JobStatus) -> usize {
        self.jobs.iter().filter(|j| j.status == status).count()
    }
}

pub fn job_dir(out: &Path, sequence: &str, qp: u8) -> PathBuf {
    out.join("jobs").join(sequence).join(format!("qp{qp:02}"))
}

fn record(path: &Path) -> Result<FileRecord> {
    Ok(FileRecord {
        path: path.to_path_buf(),
        sha256: sha256_path(path)?,
        bytes: std::fs::metadata(path).at(path)?.len(),
    })
}

fn up_to_date(dir: &Path, seq: &SequenceEntry, qp: u8, codec: &str, input_sha: &str) -> bool {
    let Ok(text) = std::fs::read_to_string(dir.join(JOB_LOG)) else {
        return false;
    };
    let Ok(log) = serde_json::from_str::<JobLog>(&text) else {
        return false;
    };
    log.sequence == seq.id
        && log.qp == qp
        && log.codec == codec
        && log.input.sha256 == input_sha
        && [&log.decoded, &log.bitstream]
            .iter()
            .all(|r| sha256_path(&r.path).is_ok_and(|s| s == r.sha256))
}

fn run_job(
    opts: &PrepareOptions,
    seq: &SequenceEntry,
    qp: u8,
    input_sha: &str,
) -> Result<JobReport> {
    let dir = job_dir(&opts.out, &seq.id, qp);
    let codec = opts.codec.describe();
    let report = |status| JobReport {
        sequence: seq.id.clone(),
        qp,
        dir: dir.clone(),
        status,
    };
    if up_to_date(&dir, seq, qp, &codec, input_sha) {
        return Ok(report(JobStatus::Skipped));
    }
    if opts.dry_run {
        return Ok(report(JobStatus::Planned));
    }
    let (frames, fps) = load_yuv420(&seq.raw, Some(seq.fps))?;
    if frames.len() != seq.frame_count {
        return Err(VcmError::manifest(
            &seq.id,
            format!(
                "raw has {} frames, manifest says {}",
                frames.len(),
                seq.frame_count
            ),
        ));
    }
    let out = run_codec(
        &opts.codec,
        &frames,
        fps,
        qp,
        &dir,
        opts.encoder_config.as_deref(),
    )?;
    let decoded = dir.join(DECODED_FILE);
    write_y4m(&decoded, &out.decoded, fps)?;
    let log = JobLog {
        sequence: seq.id.clone(),
        qp,
        codec,
        command: out.command,
        width: frames[0].width(),
        height: frames[0].height(),
        frames: frames.len(),
        fps,
        input: FileRecord {
            path: seq.raw.clone(),
            sha256: input_sha.to_string(),
            bytes: std::fs::metadata(&seq.raw).at(&seq.raw)?.len(),
        },
        decoded: record(&decoded)?,
        bitstream: record(&out.bitstream)?,
    };
    let p = dir.join(JOB_LOG);
    let mut text = serde_json::to_string_pretty(&log).expect("job log serializes");
    text.push('\n');
    std::fs::write(&p, text).at(&p)?;
    Ok(report(JobStatus::Ran))
}

/// Runs every sequence x QP job and writes `<out>/manifest.json` listing the
/// decoded outputs.
pub fn prepare(opts: &PrepareOptions) -> Result<PrepareSummary> {
    let manifest = Manifest::load(&opts.manifest)?;
    if let Some(qps) = &opts.qps {
        if qps.is_empty() {
            return Err(VcmError::Usage("QP list is empty".into()));
        }
        if let Some(q) = qps.iter().find(|&&q| q > vcm_core::codec::MAX_QP) {
            return Err(VcmError::Usage(format!("qp {q} outside [0, 63]")));
        }
    }
    if opts.jobs == 0 {
        return Err(VcmError::Usage("--jobs must be at least 1".into()));
    }
    let out = crate::manifest::absolute(&opts.out)?;
    let opts = PrepareOptions {
        out,
        ..opts.clone()
    };

    let mut work = Vec::new();
    for seq in &manifest.sequences {
        let input_sha = sha256_path(&seq.raw)?;
        let qps: Vec<u8> = opts.qps.clone().unwrap_or_else(|| seq.class.qps().to_vec());
        for qp in qps {
            work.push((seq, qp, input_sha.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| VcmError::Environment(e.to_string()))?;
    let jobs: Vec<JobReport> = pool.install(|| {
        work.par_iter()
            .map(|(seq, qp, sha)| run_job(&opts, seq, *qp, sha))
            .collect::<Result<_>>()
    })?;

    let manifest_path = opts.out.join("manifest.json");
    if !opts.dry_run {
        let mut m = manifest.clone();
        for s in &mut m.sequences {
            for j in jobs.iter().filter(|j| j.sequence == s.id) {
                s.decoded.insert(
                    j.qp,
                    DecodedEntry {
                        path: j.dir.join(DECODED_FILE),
                        bitstream: j.dir.join("bitstream.bin"),
                    },
                );
            }
        }
        m.save(&manifest_path)?;
    }
    Ok(PrepareSummary {
        jobs,
        manifest: manifest_path,
    })
}
