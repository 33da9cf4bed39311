//! Detection accuracy: IoU, greedy matching, all-point AP, mAP, F1 and
//! rate-accuracy curve assembly.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::GroundTruthObject;
use crate::detector::{BBox, Detection};
use crate::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;

pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for bx in [a, b] {
        if !bx.is_valid() {
            return Err(Error::Usage(format!("degenerate box {bx:?}")));
        }
    }
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Indexed like the input detections: the matched ground truth, if any.
    pub detection_match: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.detection_match.iter().filter(|m| m.is_some()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.detection_match.len() - self.true_positives()
    }
}

fn check_homogeneous(dets: &[Detection], gts: &[GroundTruthObject]) -> Result<()> {
    let mut classes = dets
        .iter()
        .map(|d| d.class_id)
        .chain(gts.iter().map(|g| g.class_id));
    if let Some(first) = classes.next() {
        if let Some(other) = classes.find(|&c| c != first) {
            return Err(Error::Usage(format!(
                "matching needs a single class, found {first} and {other}"
            )));
        }
    }
    Ok(())
}

/// Stable order of detection indices by descending confidence.
fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Greedy matching: in descending confidence, each detection claims the
/// unmatched ground truth with the highest IoU `>= iou_thr` (lowest index on
/// ties), or is a false positive.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    iou_thr: f64,
) -> Result<MatchResult> {
    check_homogeneous(dets, gts)?;
    let mut detection_match = vec![None; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for di in confidence_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_matched[gi] {
                continue;
            }
            let v = iou(&dets[di].bbox, &gt.bbox)?;
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            gt_matched[gi] = true;
            detection_match[di] = Some(gi);
        }
    }
    Ok(MatchResult {
        detection_match,
        gt_matched,
    })
}

/// Detections and ground truth of one frame, restricted to one class.
#[derive(Debug, Clone, Copy)]
pub struct FrameEval<'a> {
    pub detections: &'a [Detection],
    pub ground_truth: &'a [GroundTruthObject],
}

/// All-point interpolated AP over a sequence of frames. `None` when the class
/// has no ground truth anywhere.
pub fn average_precision_frames(frames: &[FrameEval<'_>], iou_thr: f64) -> Result<Option<f64>> {
    let n_gt: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    // (confidence, frame, index-in-frame, is_tp)
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        let m = match_detections(f.detections, f.ground_truth, iou_thr)?;
        for (di, d) in f.detections.iter().enumerate() {
            ranked.push((d.confidence, fi, di, m.detection_match[di].is_some()));
        }
    }
    if n_gt == 0 {
        return Ok(None);
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    // Sentinel-padded recall/precision lists, envelope, then sum over recall steps.
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut tp = 0usize;
    for (k, r) in ranked.iter().enumerate() {
        if r.3 {
            tp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let ap = (1..recall.len())
        .filter(|&i| recall[i] != recall[i - 1])
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum::<f64>();
    Ok(Some(ap.clamp(0.0, 1.0)))
}

/// Single-frame convenience wrapper of [`average_precision_frames`].
pub fn average_precision(
    dets: &[Detection],
    gts: &[GroundTruthObject],
    iou_thr: f64,
) -> Result<Option<f64>> {
    average_precision_frames(
        &[FrameEval {
            detections: dets,
            ground_truth: gts,
        }],
        iou_thr,
    )
}

/// Mean AP over classes present in the ground truth, on a 0-100 scale.
pub fn mean_ap(per_class: &BTreeMap<u32, Option<f64>>) -> Result<f64> {
    let present: Vec<f64> = per_class.values().filter_map(|v| *v).collect();
    if present.is_empty() {
        return Err(Error::Usage(String::from(
            "mAP needs at least one class present in the ground truth",
        )));
    }
    Ok(100.0 * present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct F1Stats {
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truth: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged F1 over frames after dropping detections below `conf_thr`.
pub fn f1_at_threshold(frames: &[FrameEval<'_>], conf_thr: f64, iou_thr: f64) -> Result<F1Stats> {
    let mut s = F1Stats::default();
    for f in frames {
        let kept: Vec<Detection> = f
            .detections
            .iter()
            .copied()
            .filter(|d| d.confidence >= conf_thr)
            .collect();
        let m = match_detections(&kept, f.ground_truth, iou_thr)?;
        s.true_positives += m.true_positives();
        s.false_positives += m.false_positives();
        s.ground_truth += f.ground_truth.len();
    }
    let predicted = s.true_positives + s.false_positives;
    s.precision = if predicted == 0 {
        0.0
    } else {
        s.true_positives as f64 / predicted as f64
    };
    s.recall = if s.ground_truth == 0 {
        0.0
    } else {
        s.true_positives as f64 / s.ground_truth as f64
    };
    s.f1 = if s.precision + s.recall == 0.0 {
        0.0
    } else {
        2.0 * s.precision * s.recall / (s.precision + s.recall)
    };
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CurveLabel {
    Encoded,
    Postprocessed,
}

impl CurveLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveLabel::Encoded => "encoded",
            CurveLabel::Postprocessed => "postprocessed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "encoded" => Some(CurveLabel::Encoded),
            "postprocessed" => Some(CurveLabel::Postprocessed),
            _ => None,
        }
    }
}

/// One operating point of a rate-accuracy curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub label: CurveLabel,
    pub qp: u8,
    pub bitrate_kbps: f64,
    /// 0-100 scale.
    pub map_value: f64,
    /// Per-class AP on a 0-100 scale; absent classes are omitted.
    pub per_class_ap: BTreeMap<u32, f64>,
    pub f1: BTreeMap<u32, f64>,
}

impl RatePoint {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::Validation(format!("rate point {what} {v} out of range"));
        if !(self.bitrate_kbps >= 0.0 && self.bitrate_kbps.is_finite()) {
            return Err(bad("bitrate", self.bitrate_kbps));
        }
        if !(0.0..=100.0).contains(&self.map_value) {
            return Err(bad("mAP", self.map_value));
        }
        if let Some(v) = self.per_class_ap.values().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(bad("AP", *v));
        }
        if let Some(v) = self.f1.values().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(bad("F1", *v));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    pub label: CurveLabel,
    pub points: Vec<RatePoint>,
}

/// Groups points by label (encoded first) and sorts each group by bitrate,
/// keeping insertion order among equal bitrates.
pub fn build_rate_curve(points: Vec<RatePoint>) -> Result<Vec<RateCurve>> {
    if points.is_empty() {
        return Err(Error::Usage(String::from("rate curve needs at least one point")));
    }
    let mut groups: BTreeMap<CurveLabel, Vec<RatePoint>> = BTreeMap::new();
    for p in points {
        p.validate()?;
        groups.entry(p.label).or_default().push(p);
    }
    Ok(groups
        .into_iter()
        .map(|(label, mut points)| {
            points.sort_by(|a, b| a.bitrate_kbps.total_cmp(&b.bitrate_kbps));
            RateCurve { label, points }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt(x0: f64, y0: f64, x1: f64, y1: f64) -> GroundTruthObject {
        GroundTruthObject {
            frame_index: 0,
            class_id: 0,
            bbox: BBox::new(x0, y0, x1, y1),
        }
    }

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, conf: f64) -> Detection {
        Detection {
            class_id: 0,
            bbox: BBox::new(x0, y0, x1, y1),
            confidence: conf,
        }
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
        let v = iou(&a, &BBox::new(1.0, 1.0, 3.0, 3.0)).unwrap();
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
        assert!(iou(&a, &BBox::new(1.0, 1.0, 1.0, 3.0)).is_err());
    }

    #[test]
    fn matching_examples() {
        let g = [gt(0.0, 0.0, 10.0, 10.0)];
        let m = match_detections(&[det(0.0, 0.0, 10.0, 10.0, 0.9)], &g, 0.5).unwrap();
        assert_eq!((m.true_positives(), m.false_positives()), (1, 0));

        let dets = [det(0.0, 0.0, 10.0, 9.0, 0.6), det(0.0, 0.0, 10.0, 10.0, 0.8)];
        let m = match_detections(&dets, &g, 0.5).unwrap();
        assert_eq!(m.detection_match, vec![None, Some(0)]);

        let mut other = det(0.0, 0.0, 1.0, 1.0, 0.5);
        other.class_id = 1;
        assert!(match_detections(&[other], &g, 0.5).is_err());
    }

    #[test]
    fn matching_prefers_best_iou_then_lowest_index() {
        let gts = [gt(0.0, 0.0, 10.0, 10.0), gt(1.0, 0.0, 11.0, 10.0), gt(1.0, 0.0, 11.0, 10.0)];
        let m = match_detections(&[det(1.0, 0.0, 11.0, 10.0, 0.9)], &gts, 0.5).unwrap();
        assert_eq!(m.detection_match, vec![Some(1)]);
    }

    #[test]
    fn ap_examples() {
        let g = [gt(0.0, 0.0, 10.0, 10.0)];
        let tp = |c| det(0.0, 0.0, 10.0, 10.0, c);
        let fp = |c| det(50.0, 50.0, 60.0, 60.0, c);
        assert_eq!(average_precision(&[tp(0.9), fp(0.8)], &g, 0.5).unwrap(), Some(1.0));
        assert_eq!(average_precision(&[fp(0.9), tp(0.8)], &g, 0.5).unwrap(), Some(0.5));
        assert_eq!(average_precision(&[fp(0.9)], &g, 0.5).unwrap(), Some(0.0));
        assert_eq!(average_precision(&[fp(0.9)], &[], 0.5).unwrap(), None);

        let gts = [gt(0.0, 0.0, 10.0, 10.0), gt(20.0, 0.0, 30.0, 10.0)];
        let exact = [det(0.0, 0.0, 10.0, 10.0, 0.7), det(20.0, 0.0, 30.0, 10.0, 0.6)];
        assert_eq!(average_precision(&exact, &gts, 0.5).unwrap(), Some(1.0));
    }

    #[test]
    fn mean_ap_examples() {
        let m: BTreeMap<u32, Option<f64>> = [(0, Some(1.0)), (1, Some(0.5)), (2, None)].into();
        assert_eq!(mean_ap(&m).unwrap(), 75.0);
        let m: BTreeMap<u32, Option<f64>> = [(0, Some(0.3))].into();
        assert!((mean_ap(&m).unwrap() - 30.0).abs() < 1e-12);
        let m: BTreeMap<u32, Option<f64>> = [(0, None)].into();
        assert!(mean_ap(&m).is_err());
    }

    #[test]
    fn f1_examples() {
        let g = [gt(0.0, 0.0, 10.0, 10.0), gt(20.0, 0.0, 30.0, 10.0)];
        let perfect = [det(0.0, 0.0, 10.0, 10.0, 0.9), det(20.0, 0.0, 30.0, 10.0, 0.9)];
        let f = |d: &[Detection]| {
            f1_at_threshold(&[FrameEval { detections: d, ground_truth: &g }], 0.25, 0.5).unwrap()
        };
        assert_eq!(f(&perfect).f1, 1.0);
        assert_eq!(f(&[]).f1, 0.0);
        let mixed = [det(0.0, 0.0, 10.0, 10.0, 0.9), det(50.0, 50.0, 60.0, 60.0, 0.9)];
        let s = f(&mixed);
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        // below the confidence threshold: ignored
        let low = [det(0.0, 0.0, 10.0, 10.0, 0.9), det(50.0, 50.0, 60.0, 60.0, 0.1)];
        assert!((f(&low).f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    fn point(label: CurveLabel, kbps: f64, map: f64) -> RatePoint {
        RatePoint {
            label,
            qp: 0,
            bitrate_kbps: kbps,
            map_value: map,
            per_class_ap: BTreeMap::new(),
            f1: BTreeMap::new(),
        }
    }

    #[test]
    fn rate_curve_grouping() {
        let pts = vec![
            point(CurveLabel::Postprocessed, 30.0, 1.0),
            point(CurveLabel::Encoded, 50.0, 2.0),
            point(CurveLabel::Encoded, 10.0, 3.0),
            point(CurveLabel::Encoded, 50.0, 4.0),
        ];
        let curves = build_rate_curve(pts).unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].label, CurveLabel::Encoded);
        let maps: Vec<f64> = curves[0].points.iter().map(|p| p.map_value).collect();
        assert_eq!(maps, vec![3.0, 2.0, 4.0]);
        assert!(build_rate_curve(Vec::new()).is_err());
        let single = build_rate_curve(vec![point(CurveLabel::Encoded, 1.0, 1.0)]).unwrap();
        assert_eq!(single[0].points.len(), 1);
        assert!(build_rate_curve(vec![point(CurveLabel::Encoded, 1.0, 101.0)]).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0f64..50.0, 0.0f64..50.0, 0.5f64..30.0, 0.5f64..30.0)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded_translation_invariant(a in arb_box(), b in arb_box(), dx in -20.0f64..20.0, dy in -20.0f64..20.0) {
            let v = iou(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - iou(&b, &a).unwrap()).abs() < 1e-12);
            let sh = |r: &BBox| BBox::new(r.x_min + dx, r.y_min + dy, r.x_max + dx, r.y_max + dy);
            prop_assert!((v - iou(&sh(&a), &sh(&b)).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn unmatched_lowest_confidence_detection_keeps_ap(
            boxes in proptest::collection::vec((arb_box(), 0.05f64..1.0), 0..8),
            gts in proptest::collection::vec(arb_box(), 1..5),
        ) {
            let dets: Vec<Detection> = boxes.iter().map(|(b, c)| Detection { class_id: 0, bbox: *b, confidence: *c }).collect();
            let gts: Vec<GroundTruthObject> = gts.iter().map(|b| GroundTruthObject { frame_index: 0, class_id: 0, bbox: *b }).collect();
            let before = average_precision(&dets, &gts, 0.5).unwrap().unwrap();
            let mut more = dets.clone();
            // far from every ground truth box
            more.push(Detection { class_id: 0, bbox: BBox::new(500.0, 500.0, 510.0, 510.0), confidence: 0.01 });
            let after = average_precision(&more, &gts, 0.5).unwrap().unwrap();
            prop_assert!((before - after).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&before));
        }

        #[test]
        fn f1_bounded_by_arithmetic_mean(
            boxes in proptest::collection::vec((arb_box(), 0.0f64..1.0), 0..8),
            gts in proptest::collection::vec(arb_box(), 0..5),
        ) {
            let dets: Vec<Detection> = boxes.iter().map(|(b, c)| Detection { class_id: 0, bbox: *b, confidence: *c }).collect();
            let gts: Vec<GroundTruthObject> = gts.iter().map(|b| GroundTruthObject { frame_index: 0, class_id: 0, bbox: *b }).collect();
            let s = f1_at_threshold(&[FrameEval { detections: &dets, ground_truth: &gts }], 0.25, 0.5).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.f1));
            prop_assert!(s.f1 <= (s.precision + s.recall) / 2.0 + 1e-12);
        }

        #[test]
        fn mean_ap_permutation_invariant(aps in proptest::collection::vec(0.0f64..1.0, 1..6), shift in 0usize..6) {
            let a: BTreeMap<u32, Option<f64>> = aps.iter().enumerate().map(|(i, v)| (i as u32, Some(*v))).collect();
            let n = aps.len();
            let b: BTreeMap<u32, Option<f64>> = aps.iter().enumerate().map(|(i, v)| (((i + shift) % n) as u32 + 10, Some(*v))).collect();
            prop_assert!((mean_ap(&a).unwrap() - mean_ap(&b).unwrap()).abs() < 1e-9);
        }
    }
}
