//! Brute-force reference implementations for the metric code, working on
//! integer boxes so IoU can be computed by counting unit cells. Shared with
//! the acceptance harness of the `vcm` crate.

#![allow(dead_code)]

use vcm_core::data::GroundTruthObject;
use vcm_core::detector::{BBox, Detection};

/// Integer box `[x0, x1) x [y0, y1)`.
pub type IBox = [i64; 4];

pub fn to_bbox(b: IBox) -> BBox {
    BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64)
}

fn covers(b: IBox, x: i64, y: i64) -> bool {
    x >= b[0] && x < b[2] && y >= b[1] && y < b[3]
}

/// IoU by enumerating every unit cell of the bounding region.
pub fn raster_iou(a: IBox, b: IBox) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for y in a[1].min(b[1])..a[3].max(b[3]) {
        for x in a[0].min(b[0])..a[2].max(b[2]) {
            let (ia, ib) = (covers(a, x, y), covers(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy)]
pub struct ODet {
    pub frame: usize,
    pub class: u32,
    pub conf: f64,
    pub bbox: IBox,
}

#[derive(Debug, Clone, Copy)]
pub struct OGt {
    pub frame: usize,
    pub class: u32,
    pub bbox: IBox,
}

impl ODet {
    pub fn detection(&self) -> Detection {
        Detection::new(self.class, to_bbox(self.bbox), self.conf).unwrap()
    }
}

impl OGt {
    pub fn object(&self) -> GroundTruthObject {
        GroundTruthObject {
            frame_index: self.frame,
            class_id: self.class,
            bbox: to_bbox(self.bbox),
        }
    }
}

/// Detection indices in ranking order: confidence descending, then frame,
/// then original position.
pub fn ranking(dets: &[ODet]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    // insertion sort, kept deliberately naive
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (&dets[idx[j - 1]], &dets[idx[j]]);
            let swap = a.conf < b.conf || (a.conf == b.conf && a.frame > b.frame);
            if !swap {
                break;
            }
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    idx
}

/// True-positive flags of `ranked` detections under greedy matching: within
/// each frame, a detection takes the unmatched ground truth of highest IoU
/// (lowest index on ties) if that IoU reaches `thr`.
pub fn greedy_tp(dets: &[ODet], ranked: &[usize], gts: &[OGt], thr: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    ranked
        .iter()
        .map(|&d| {
            let det = dets[d];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || gt.frame != det.frame || gt.class != det.class {
                    continue;
                }
                let v = raster_iou(det.bbox, gt.bbox);
                if v >= thr && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            best.is_some()
        })
        .collect()
}

/// All-point AP of one class by enumerating every confidence cut-off and
/// re-matching the retained prefix from scratch. `None` without ground truth.
pub fn brute_force_ap(dets: &[ODet], gts: &[OGt], class: u32, thr: f64) -> Option<f64> {
    let dets: Vec<ODet> = dets.iter().copied().filter(|d| d.class == class).collect();
    let gts: Vec<OGt> = gts.iter().copied().filter(|g| g.class == class).collect();
    if gts.is_empty() {
        return None;
    }
    let order = ranking(&dets);
    let mut pr = Vec::new();
    for k in 1..=order.len() {
        let tp = greedy_tp(&dets, &order[..k], &gts, thr)
            .iter()
            .filter(|&&t| t)
            .count();
        pr.push((tp as f64 / k as f64, tp as f64 / gts.len() as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..pr.len() {
        let r = pr[k].1;
        if r > prev_recall {
            let best = pr[k..].iter().map(|p| p.0).fold(0.0, f64::max);
            ap += (r - prev_recall) * best;
            prev_recall = r;
        }
    }
    Some(ap)
}
