//! Applies a trained network frame by frame to decoded sequences.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use vcm_core::net::PostProcNet;
use vcm_core::Frame;

use crate::checkpoint::Checkpoint;
use crate::error::{Result, VcmError};
use crate::manifest::{DecodedEntry, Manifest};
use crate::video::{load_sequence, save_png_dir, write_y4m, VideoSequence};

fn run_frames(net: &PostProcNet<f32>, frames: &[Frame<f32>]) -> Result<Vec<Frame<f32>>> {
    Ok(frames
        .par_iter()
        .map(|f| net.forward(f))
        .collect::<vcm_core::Result<_>>()?)
}

fn check_channels(net: &PostProcNet<f32>, seq: &VideoSequence, origin: &Path) -> Result<()> {
    match seq.frames.first() {
        Some(f) if f.tensor().channels() != net.config().in_channels => Err(VcmError::Usage(format!(
            "{}: frames have {} channels, network expects {}",
            origin.display(),
            f.tensor().channels(),
            net.config().in_channels
        ))),
        _ => Ok(()),
    }
}

/// Writes a Y4M file when `output` ends in `.y4m`, otherwise a PNG directory.
pub fn save_sequence(output: &Path, seq: &VideoSequence) -> Result<()> {
    if output.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m")) {
        write_y4m(output, &seq.to_yuv420()?, seq.fps)
    } else {
        save_png_dir(output, seq)
    }
}

pub fn postprocess_sequence(
    net: &PostProcNet<f32>,
    input: &Path,
    output: &Path,
    fps: Option<f64>,
) -> Result<usize> {
    let seq = load_sequence(input, fps)?;
    check_channels(net, &seq, input)?;
    let frames = run_frames(net, &seq.frames)?;
    let n = frames.len();
    save_sequence(output, &VideoSequence { frames, fps: seq.fps })?;
    Ok(n)
}

/// Post-processes every decoded entry of a prepared manifest into
/// `<out>/post/<sequence>/qpNN/` and writes `<out>/post_manifest.json`, whose
/// entries keep the original bitstreams so bitrates stay comparable.
pub fn postprocess_manifest(
    checkpoint: &Path,
    manifest: &Path,
    out: &Path,
    qps: Option<&[u8]>,
    jobs: usize,
) -> Result<PathBuf> {
    if jobs == 0 {
        return Err(VcmError::Usage("--jobs must be at least 1".into()));
    }
    let net = Checkpoint::load(checkpoint)?.net;
    let src = Manifest::load(manifest)?;
    if src.sequences.iter().all(|s| s.decoded.is_empty()) {
        return Err(VcmError::Usage(format!(
            "{}: no decoded entries (run `prepare` first)",
            manifest.display()
        )));
    }
    let out = crate::manifest::absolute(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| VcmError::Environment(e.to_string()))?;
    let mut post = src.clone();
    pool.install(|| -> Result<()> {
        for s in &mut post.sequences {
            let mut decoded = std::collections::BTreeMap::new();
            for (qp, d) in &s.decoded {
                if qps.is_some_and(|q| !q.contains(qp)) {
                    continue;
                }
                let dir = out.join("post").join(&s.id).join(format!("qp{qp:02}"));
                postprocess_sequence(&net, &d.path, &dir, Some(s.fps))?;
                decoded.insert(
                    *qp,
                    DecodedEntry {
                        path: dir,
                        bitstream: d.bitstream.clone(),
                    },
                );
            }
            s.decoded = decoded;
        }
        Ok(())
    })?;
    let path = out.join("post_manifest.json");
    post.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::save_png_dir;
    use vcm_core::net::NetConfig;

    #[test]
    fn fresh_network_is_identity_on_png_frames() {
        let d = tempfile::tempdir().unwrap();
        let frames: Vec<Frame<f32>> = (0..3)
            .map(|i| {
                Frame::from_fn(3, 12, 10, |c, y, x| ((c * 31 + y * 7 + x * 3 + i * 11) % 256) as f32 / 255.0)
                    .unwrap()
            })
            .collect();
        let input = d.path().join("in");
        save_png_dir(&input, &VideoSequence { frames, fps: 25.0 }).unwrap();
        let net = PostProcNet::<f32>::build(NetConfig::default(), 3).unwrap();
        let output = d.path().join("out");
        assert_eq!(postprocess_sequence(&net, &input, &output, None).unwrap(), 3);
        for i in 0..3 {
            let name = crate::video::frame_file_name(i);
            assert_eq!(
                std::fs::read(input.join(&name)).unwrap(),
                std::fs::read(output.join(&name)).unwrap()
            );
        }
    }
}
