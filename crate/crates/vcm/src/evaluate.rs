//! Detection accuracy of decoded and post-processed sequences against the
//! ground truth, written as one CSV row per (sequence, label, QP).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use vcm_core::codec::measure_bitrate;
use vcm_core::data::GroundTruthObject;
use vcm_core::detector::{Detection, DetectorBackend};
use vcm_core::metrics::{average_precision_frames, f1_at_threshold, mean_ap, CurveLabel, FrameEval};
use vcm_core::Frame;

use crate::annotations::load_annotations;
use crate::backend::parse_backend;
use crate::error::{IoContext, Result, VcmError};
use crate::manifest::{Manifest, SequenceEntry};
use crate::video::load_sequence;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub manifest: PathBuf,
    /// Manifest of post-processed outputs (label `postprocessed`).
    pub post_manifest: Option<PathBuf>,
    pub backend: String,
    pub conf: f64,
    pub iou: f64,
    pub qps: Option<Vec<u8>>,
    pub jobs: usize,
}

/// Accuracy of one sequence at one operating point. AP values are on a
/// 0-100 scale; `None` marks classes absent from the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub sequence: String,
    pub label: CurveLabel,
    pub qp: u8,
    pub kbps: f64,
    pub map: Option<f64>,
    pub ap: BTreeMap<u32, Option<f64>>,
    pub f1: BTreeMap<u32, Option<f64>>,
}

/// Class id to score; `None` for classes absent from the ground truth.
pub type ClassScores = BTreeMap<u32, Option<f64>>;

/// Per-class AP (0-1) and F1 of a detector over aligned frames.
pub fn score_frames(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<GroundTruthObject>],
    classes: &BTreeSet<u32>,
    conf: f64,
    iou: f64,
) -> Result<(ClassScores, ClassScores)> {
    let mut ap = BTreeMap::new();
    let mut f1 = BTreeMap::new();
    for &c in classes {
        let dets: Vec<Vec<Detection>> = detections
            .iter()
            .map(|d| d.iter().copied().filter(|d| d.class_id == c).collect())
            .collect();
        let gts: Vec<Vec<GroundTruthObject>> = ground_truth
            .iter()
            .map(|g| g.iter().copied().filter(|g| g.class_id == c).collect())
            .collect();
        let frames: Vec<FrameEval<'_>> = dets
            .iter()
            .zip(&gts)
            .map(|(d, g)| FrameEval {
                detections: d,
                ground_truth: g,
            })
            .collect();
        let class_ap = average_precision_frames(&frames, iou)?;
        ap.insert(c, class_ap);
        let stats = f1_at_threshold(&frames, conf, iou)?;
        f1.insert(c, class_ap.map(|_| stats.f1));
    }
    Ok((ap, f1))
}

pub fn detect_all(
    backend: &dyn DetectorBackend<f32>,
    frames: &[Frame<f32>],
    conf: f64,
) -> Result<Vec<Vec<Detection>>> {
    Ok(frames
        .iter()
        .map(|f| backend.detect(f, conf))
        .collect::<vcm_core::Result<_>>()?)
}

struct Job<'a> {
    seq: &'a SequenceEntry,
    label: CurveLabel,
    qp: u8,
    media: PathBuf,
    bitstream: PathBuf,
}

fn run_job(
    job: &Job<'_>,
    backend: &dyn DetectorBackend<f32>,
    gts: &[Vec<GroundTruthObject>],
    opts: &EvalOptions,
) -> Result<MetricsRow> {
    let seq = job.seq;
    let video = load_sequence(&job.media, Some(seq.fps))?;
    if video.len() != seq.frame_count {
        return Err(VcmError::manifest(
            &seq.id,
            format!(
                "{} has {} frames, manifest says {}",
                job.media.display(),
                video.len(),
                seq.frame_count
            ),
        ));
    }
    let frames = &video.frames[seq.frames()];
    let detections = detect_all(backend, frames, opts.conf)?;
    let classes: BTreeSet<u32> = gts.iter().flatten().map(|g| g.class_id).collect();
    let (ap, f1) = score_frames(&detections, gts, &classes, opts.conf, opts.iou)?;
    let map = if classes.is_empty() {
        None
    } else {
        Some(mean_ap(&ap)?)
    };
    let size = std::fs::metadata(&job.bitstream).at(&job.bitstream)?.len();
    Ok(MetricsRow {
        sequence: seq.id.clone(),
        label: job.label,
        qp: job.qp,
        kbps: measure_bitrate(size, seq.frame_count, seq.fps)?,
        map,
        ap: ap.into_iter().map(|(c, v)| (c, v.map(|a| a * 100.0))).collect(),
        f1,
    })
}

/// Evaluates every decoded entry (and post-processed entry) of the manifests.
/// Rows are ordered by manifest order, label, then QP.
pub fn evaluate(opts: &EvalOptions) -> Result<Vec<MetricsRow>> {
    if !(0.0..=1.0).contains(&opts.conf) || !(0.0..=1.0).contains(&opts.iou) {
        return Err(VcmError::Usage("--conf and --iou must lie in [0, 1]".into()));
    }
    if opts.jobs == 0 {
        return Err(VcmError::Usage("--jobs must be at least 1".into()));
    }
    let backend = parse_backend(&opts.backend)?;
    let manifest = Manifest::load(&opts.manifest)?;
    let post = opts.post_manifest.as_deref().map(Manifest::load).transpose()?;

    let keep = |qp: &u8| opts.qps.as_ref().is_none_or(|q| q.contains(qp));
    let mut jobs = Vec::new();
    for seq in &manifest.sequences {
        for (qp, d) in seq.decoded.iter().filter(|(q, _)| keep(q)) {
            jobs.push(Job {
                seq,
                label: CurveLabel::Encoded,
                qp: *qp,
                media: d.path.clone(),
                bitstream: d.bitstream.clone(),
            });
        }
        if let Some(p) = post.as_ref().and_then(|p| p.sequence(&seq.id)) {
            for (qp, d) in p.decoded.iter().filter(|(q, _)| keep(q)) {
                jobs.push(Job {
                    seq,
                    label: CurveLabel::Postprocessed,
                    qp: *qp,
                    media: d.path.clone(),
                    bitstream: d.bitstream.clone(),
                });
            }
        }
    }
    if jobs.is_empty() {
        return Err(VcmError::Usage("nothing to evaluate: no decoded entries selected".into()));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| VcmError::Environment(e.to_string()))?;
    let backend = backend.as_ref();
    pool.install(|| {
        // ground truth is loaded once per sequence, then shared by its jobs
        let gts: BTreeMap<&str, Vec<Vec<GroundTruthObject>>> = manifest
            .sequences
            .par_iter()
            .map(|seq| {
                let first = load_sequence(&seq.raw, Some(seq.fps))?;
                let (h, w) = first.size().unwrap_or((0, 0));
                let all = load_annotations(&seq.annotations, &seq.id, seq.frame_count, w, h)?;
                Ok((seq.id.as_str(), all[seq.frames()].to_vec()))
            })
            .collect::<Result<_>>()?;
        let mut rows: Vec<(usize, MetricsRow)> = jobs
            .par_iter()
            .enumerate()
            .map(|(i, j)| Ok((i, run_job(j, backend, &gts[j.seq.id.as_str()], opts)?)))
            .collect::<Result<_>>()?;
        let order: BTreeMap<&str, usize> = manifest
            .sequences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        rows.sort_by_key(|(i, r)| (order[r.sequence.as_str()], r.label, r.qp, *i));
        Ok(rows.into_iter().map(|(_, r)| r).collect())
    })
}

fn classes_of(rows: &[MetricsRow]) -> BTreeSet<u32> {
    rows.iter().flat_map(|r| r.ap.keys().copied()).collect()
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|v| format!("{v:.decimals$}")).unwrap_or_default()
}

/// `sequence,label,qp,kbps,map,ap_<class>...,f1_<class>...`
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let classes = classes_of(rows);
    let mut s = String::from("sequence,label,qp,kbps,map");
    for c in &classes {
        s.push_str(&format!(",ap_{c}"));
    }
    for c in &classes {
        s.push_str(&format!(",f1_{c}"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.3},{}",
            r.sequence,
            r.label.as_str(),
            r.qp,
            r.kbps,
            opt(r.map, 4)
        ));
        for c in &classes {
            s.push(',');
            s.push_str(&opt(r.ap.get(c).copied().flatten(), 4));
        }
        for c in &classes {
            s.push(',');
            s.push_str(&opt(r.f1.get(c).copied().flatten(), 6));
        }
        s.push('\n');
    }
    s
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    std::fs::write(path, metrics_csv(rows)).at(path)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| VcmError::format(path, "empty metrics file"))?
        .split(',')
        .collect();
    if header.len() < 5 || header[..5] != ["sequence", "label", "qp", "kbps", "map"] {
        return Err(VcmError::format(path, "not a metrics CSV header"));
    }
    let mut cols = Vec::new();
    for h in &header[5..] {
        let (kind, class) = h
            .split_once('_')
            .ok_or_else(|| VcmError::format(path, format!("bad column `{h}`")))?;
        let class: u32 = class
            .parse()
            .map_err(|_| VcmError::format(path, format!("bad column `{h}`")))?;
        if kind != "ap" && kind != "f1" {
            return Err(VcmError::format(path, format!("bad column `{h}`")));
        }
        cols.push((kind == "ap", class));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| VcmError::format(path, format!("line {}: {what}", n + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(bad("wrong number of fields"));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("bad number"))
            }
        };
        let mut row = MetricsRow {
            sequence: f[0].to_string(),
            label: CurveLabel::parse(f[1]).ok_or_else(|| bad("bad label"))?,
            qp: f[2].parse().map_err(|_| bad("bad qp"))?,
            kbps: num(f[3])?.ok_or_else(|| bad("missing kbps"))?,
            map: num(f[4])?,
            ap: BTreeMap::new(),
            f1: BTreeMap::new(),
        };
        for (&(is_ap, c), v) in cols.iter().zip(&f[5..]) {
            let target = if is_ap { &mut row.ap } else { &mut row.f1 };
            target.insert(c, num(v)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vcm_core::detector::BBox;

    fn gt(frame: usize, class: u32, x: f64) -> GroundTruthObject {
        GroundTruthObject {
            frame_index: frame,
            class_id: class,
            bbox: BBox::new(x, 0.0, x + 10.0, 10.0),
        }
    }

    #[test]
    fn perfect_and_empty_detections() {
        let gts = vec![vec![gt(0, 0, 0.0)], vec![gt(1, 0, 5.0), gt(1, 1, 30.0)]];
        let perfect: Vec<Vec<Detection>> = gts
            .iter()
            .map(|f| f.iter().map(|g| Detection::new(g.class_id, g.bbox, 0.9).unwrap()).collect())
            .collect();
        let classes = BTreeSet::from([0, 1, 2]);
        let (ap, f1) = score_frames(&perfect, &gts, &classes, 0.25, 0.5).unwrap();
        assert_eq!(ap[&0], Some(1.0));
        assert_eq!(ap[&2], None);
        assert_eq!(f1[&1], Some(1.0));
        assert_eq!(mean_ap(&ap).unwrap(), 100.0);
        let (ap, f1) = score_frames(&[vec![], vec![]], &gts, &classes, 0.25, 0.5).unwrap();
        assert_eq!(mean_ap(&ap).unwrap(), 0.0);
        assert_eq!(f1[&0], Some(0.0));
    }

    #[test]
    fn csv_round_trip() {
        let row = |label, qp, map| MetricsRow {
            sequence: "s".into(),
            label,
            qp,
            kbps: 12.5,
            map: Some(map),
            ap: BTreeMap::from([(0, Some(map)), (1, None)]),
            f1: BTreeMap::from([(0, Some(0.5)), (1, None)]),
        };
        let rows = vec![row(CurveLabel::Encoded, 40, 50.0), row(CurveLabel::Postprocessed, 40, 75.0)];
        let text = metrics_csv(&rows);
        assert_eq!(
            text.lines().next().unwrap(),
            "sequence,label,qp,kbps,map,ap_0,ap_1,f1_0,f1_1"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "s,encoded,40,12.500,50.0000,50.0000,,0.500000,");
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.csv");
        write_metrics_csv(&p, &rows).unwrap();
        assert_eq!(read_metrics_csv(&p).unwrap(), rows);
    }
}
