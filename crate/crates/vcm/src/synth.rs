//! Seeded synthetic dataset: gray gradient backgrounds with moving,
//! saturated rectangles whose dominant colour channel is the class id.
//! Writes PNG sequences, per-frame annotations and a manifest.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcm_core::data::GroundTruthObject;
use vcm_core::detector::BBox;
use vcm_core::Frame;

use crate::annotations::write_annotations;
use crate::error::{Result, VcmError};
use crate::manifest::{ClassPreset, Manifest, SequenceEntry};
use crate::video::{save_png_dir, VideoSequence};

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub out: PathBuf,
    pub seed: u64,
    pub sequences: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    /// Frames between scene changes.
    pub scene_length: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            out: PathBuf::from("synth"),
            seed: 0,
            sequences: 1,
            frames: 200,
            width: 64,
            height: 64,
            fps: 30.0,
            scene_length: 20,
        }
    }
}

const GAP: i64 = 2;

#[derive(Debug, Clone, Copy)]
struct Rect {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    vx: i64,
    vy: i64,
    class: u32,
    color: [f32; 3],
}

impl Rect {
    fn overlaps(&self, o: &Rect) -> bool {
        self.x < o.x + o.w + GAP
            && o.x < self.x + self.w + GAP
            && self.y < o.y + o.h + GAP
            && o.y < self.y + self.h + GAP
    }
}

struct Scene {
    base: f32,
    slope: [f32; 2],
    rects: Vec<Rect>,
}

fn velocity(rng: &mut ChaCha8Rng) -> i64 {
    let v = rng.random_range(1..=2);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

fn new_scene(rng: &mut ChaCha8Rng, w: i64, h: i64) -> Scene {
    let count = rng.random_range(1..=3);
    let mut rects: Vec<Rect> = Vec::new();
    let side_max = 22.min(w.min(h) / 2).max(10);
    for _ in 0..count {
        for _attempt in 0..50 {
            let rw = rng.random_range(10..=side_max);
            let rh = rng.random_range(10..=side_max);
            let class = rng.random_range(0..3u32);
            let mut color = [0.0f32; 3];
            for (c, v) in color.iter_mut().enumerate() {
                *v = if c as u32 == class {
                    rng.random_range(0.82..=0.95)
                } else {
                    rng.random_range(0.05..=0.18)
                };
            }
            let r = Rect {
                x: rng.random_range(0..=w - rw),
                y: rng.random_range(0..=h - rh),
                w: rw,
                h: rh,
                vx: velocity(rng),
                vy: velocity(rng),
                class,
                color,
            };
            if rects.iter().all(|o| !r.overlaps(o)) {
                rects.push(r);
                break;
            }
        }
    }
    Scene {
        base: rng.random_range(0.3..=0.6),
        slope: [rng.random_range(-0.1..=0.1), rng.random_range(-0.1..=0.1)],
        rects,
    }
}

fn advance(scene: &mut Scene, w: i64, h: i64) {
    for i in 0..scene.rects.len() {
        let mut r = scene.rects[i];
        if r.x + r.vx < 0 || r.x + r.w + r.vx > w {
            r.vx = -r.vx;
        }
        if r.y + r.vy < 0 || r.y + r.h + r.vy > h {
            r.vy = -r.vy;
        }
        let mut moved = r;
        moved.x += r.vx;
        moved.y += r.vy;
        let in_bounds = moved.x >= 0 && moved.x + moved.w <= w && moved.y >= 0 && moved.y + moved.h <= h;
        let clear = scene
            .rects
            .iter()
            .enumerate()
            .all(|(j, o)| j == i || !moved.overlaps(o));
        scene.rects[i] = if in_bounds && clear {
            moved
        } else {
            Rect {
                vx: -r.vx,
                vy: -r.vy,
                ..r
            }
        };
    }
}

fn render(scene: &Scene, frame_index: usize, w: usize, h: usize) -> (Frame<f32>, Vec<GroundTruthObject>) {
    let frame = Frame::from_fn(3, h, w, |c, y, x| {
        let (xi, yi) = (x as i64, y as i64);
        for r in &scene.rects {
            if xi >= r.x && xi < r.x + r.w && yi >= r.y && yi < r.y + r.h {
                return r.color[c];
            }
        }
        let gx = x as f32 / w as f32 - 0.5;
        let gy = y as f32 / h as f32 - 0.5;
        (scene.base + scene.slope[0] * gx + scene.slope[1] * gy).clamp(0.0, 1.0)
    })
    .expect("values lie in [0, 1]");
    let gts = scene
        .rects
        .iter()
        .map(|r| GroundTruthObject {
            frame_index,
            class_id: r.class,
            bbox: BBox::new(r.x as f64, r.y as f64, (r.x + r.w) as f64, (r.y + r.h) as f64),
        })
        .collect();
    (frame, gts)
}

/// Frames and ground truth of one sequence.
pub fn generate_sequence(
    seed: u64,
    frames: usize,
    width: usize,
    height: usize,
    scene_length: usize,
) -> (Vec<Frame<f32>>, Vec<Vec<GroundTruthObject>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as i64, height as i64);
    let mut scene = new_scene(&mut rng, w, h);
    let mut out_frames = Vec::with_capacity(frames);
    let mut out_gts = Vec::with_capacity(frames);
    for i in 0..frames {
        if i > 0 && i % scene_length == 0 {
            scene = new_scene(&mut rng, w, h);
        } else if i > 0 {
            advance(&mut scene, w, h);
        }
        let (f, g) = render(&scene, i, width, height);
        out_frames.push(f);
        out_gts.push(g);
    }
    (out_frames, out_gts)
}

/// Writes `raw/<seq>/`, `annotations/<seq>/` and `manifest.json` under
/// `opts.out`; returns the manifest path.
pub fn synthesize(opts: &SynthOptions) -> Result<PathBuf> {
    if opts.sequences == 0 || opts.frames == 0 || opts.scene_length == 0 {
        return Err(VcmError::Usage(
            "sequences, frames and scene length must be positive".into(),
        ));
    }
    if opts.width < 24 || opts.height < 24 || !opts.width.is_multiple_of(2) || !opts.height.is_multiple_of(2) {
        return Err(VcmError::Usage(format!(
            "frame size {}x{} must be even and at least 24x24",
            opts.width, opts.height
        )));
    }
    if !(opts.fps > 0.0 && opts.fps.is_finite()) {
        return Err(VcmError::Usage(format!("fps {} must be positive", opts.fps)));
    }
    let out = crate::manifest::absolute(&opts.out)?;
    let mut sequences = Vec::new();
    for s in 0..opts.sequences {
        let id = format!("synth{s:02}");
        let (frames, gts) = generate_sequence(
            opts.seed.wrapping_add(s as u64),
            opts.frames,
            opts.width,
            opts.height,
            opts.scene_length,
        );
        let raw = out.join("raw").join(&id);
        save_png_dir(&raw, &VideoSequence { frames, fps: opts.fps })?;
        let annotations = out.join("annotations").join(&id);
        write_annotations(&annotations, &id, &gts, opts.width, opts.height)?;
        sequences.push(SequenceEntry {
            id,
            raw,
            fps: opts.fps,
            frame_count: opts.frames,
            class: ClassPreset::A,
            annotations,
            frame_range: None,
            decoded: Default::default(),
        });
    }
    let path = out.join("manifest.json");
    Manifest { sequences }.save(&path)?;
    Ok(path)
}

/// Convenience for tests and the acceptance harness.
pub fn synthesize_into(dir: &Path, seed: u64, frames: usize) -> Result<PathBuf> {
    synthesize(&SynthOptions {
        out: dir.to_path_buf(),
        seed,
        frames,
        ..SynthOptions::default()
    })
}
