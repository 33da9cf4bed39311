//! Annotation boxes and co-located patch sampling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::BBox;
use crate::{Error, Frame, Real, Result};

/// Ground-truth object in pixel coordinates. Frame indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundTruthObject {
    pub frame_index: usize,
    pub class_id: u32,
    pub bbox: BBox,
}

/// Snaps values within a micro-pixel of an integer onto it, so that
/// normalized coordinates written at 6 decimals map back exactly.
fn snap(v: f64) -> f64 {
    let r = libm::round(v);
    if (v - r).abs() < 1e-6 {
        r
    } else {
        v
    }
}

/// Parses one `class_id cx cy w h` line (normalized coordinates) into a pixel
/// box clamped to the frame. Blank lines yield `None`.
pub fn parse_annotation_line(
    line: &str,
    frame_index: usize,
    width: usize,
    height: usize,
) -> Result<Option<GroundTruthObject>> {
    let line = line.trim();
    if line.is_empty() {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(Error::Format(format!(
            "expected `class_id cx cy w h`, found {} fields",
            fields.len()
        )));
    }
    let class_id: u32 = fields[0]
        .parse()
        .map_err(|_| Error::Format(format!("invalid class id `{}`", fields[0])))?;
    let mut v = [0.0f64; 4];
    for (slot, text) in v.iter_mut().zip(&fields[1..]) {
        *slot = text
            .parse()
            .map_err(|_| Error::Format(format!("invalid number `{text}`")))?;
        if !(0.0..=1.0).contains(slot) {
            return Err(Error::Validation(format!(
                "normalized value {text} outside [0, 1]"
            )));
        }
    }
    let [cx, cy, w, h] = v;
    let (fw, fh) = (width as f64, height as f64);
    let bbox = BBox::new(
        snap(((cx - w / 2.0) * fw).max(0.0)),
        snap(((cy - h / 2.0) * fh).max(0.0)),
        snap(((cx + w / 2.0) * fw).min(fw)),
        snap(((cy + h / 2.0) * fh).min(fh)),
    );
    if !bbox.is_valid() {
        return Err(Error::Validation(format!(
            "box has no area inside the {width}x{height} frame"
        )));
    }
    Ok(Some(GroundTruthObject {
        frame_index,
        class_id,
        bbox,
    }))
}

/// Inverse of [`parse_annotation_line`], with 6 decimal places.
pub fn format_annotation_line(obj: &GroundTruthObject, width: usize, height: usize) -> String {
    let (fw, fh) = (width as f64, height as f64);
    let b = &obj.bbox;
    format!(
        "{} {:.6} {:.6} {:.6} {:.6}",
        obj.class_id,
        (b.x_min + b.x_max) / 2.0 / fw,
        (b.y_min + b.y_max) / 2.0 / fh,
        b.width() / fw,
        b.height() / fh
    )
}

/// Aligned crops of a decoded frame and its raw source.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair<T> {
    pub decoded: Frame<T>,
    pub raw: Frame<T>,
    pub frame_index: usize,
    pub y: usize,
    pub x: usize,
}

/// Where a patch is cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOffset {
    pub frame_index: usize,
    pub y: usize,
    pub x: usize,
}

/// RNG for sampling step `step` of a seeded run; independent of how many
/// earlier steps were drawn.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Draws one uniform `(frame, y, x)` position for a `patch x patch` crop.
pub fn sample_offset<R: Rng>(
    rng: &mut R,
    frames: usize,
    height: usize,
    width: usize,
    patch: usize,
) -> PatchOffset {
    PatchOffset {
        frame_index: rng.random_range(0..frames),
        y: rng.random_range(0..=height - patch),
        x: rng.random_range(0..=width - patch),
    }
}

pub(crate) fn check_aligned<T: Real>(raw: &[Frame<T>], decoded: &[Frame<T>]) -> Result<()> {
    if raw.len() != decoded.len() {
        return Err(Error::Alignment(format!(
            "raw has {} frames, decoded has {}",
            raw.len(),
            decoded.len()
        )));
    }
    if raw.is_empty() {
        return Err(Error::Alignment(String::from("sequences are empty")));
    }
    let shape = raw[0].shape();
    for (i, (r, d)) in raw.iter().zip(decoded).enumerate() {
        if r.shape() != shape || d.shape() != shape {
            return Err(Error::Alignment(format!(
                "frame {i}: raw {:?} / decoded {:?} differ from {:?}",
                r.shape(),
                d.shape(),
                shape
            )));
        }
    }
    Ok(())
}

/// Cuts `count` seeded patch pairs at identical positions in both sequences.
pub fn make_patch_pairs<T: Real>(
    raw: &[Frame<T>],
    decoded: &[Frame<T>],
    patch: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PatchPair<T>>> {
    check_aligned(raw, decoded)?;
    let (_, h, w) = raw[0].shape();
    if patch == 0 || patch > h.min(w) {
        return Err(Error::Usage(format!(
            "patch size {patch} must lie in 1..={}",
            h.min(w)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let o = sample_offset(&mut rng, raw.len(), h, w, patch);
            Ok(PatchPair {
                decoded: decoded[o.frame_index].crop(o.y, o.x, patch, patch)?,
                raw: raw[o.frame_index].crop(o.y, o.x, patch, patch)?,
                frame_index: o.frame_index,
                y: o.y,
                x: o.x,
            })
        })
        .collect()
}
