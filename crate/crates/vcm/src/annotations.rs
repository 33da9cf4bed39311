//! Per-frame annotation files `<seq>_<index:06>.txt` holding normalized
//! `class_id cx cy w h` lines. A missing file is an empty frame.

use std::path::Path;

use vcm_core::data::{format_annotation_line, parse_annotation_line, GroundTruthObject};

use crate::error::{IoContext, Result, VcmError};

pub fn annotation_file_name(sequence: &str, frame_index: usize) -> String {
    format!("{sequence}_{frame_index:06}.txt")
}

/// Parses one annotation file; errors carry the file and 1-based line.
pub fn load_annotation_file(
    path: &Path,
    frame_index: usize,
    width: usize,
    height: usize,
) -> Result<Vec<GroundTruthObject>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        match parse_annotation_line(line, frame_index, width, height) {
            Ok(Some(obj)) => out.push(obj),
            Ok(None) => {}
            Err(e) => return Err(VcmError::format(path, format!("line {}: {e}", n + 1))),
        }
    }
    Ok(out)
}

/// Ground truth of frames `0..frame_count` of `sequence`, indexed by frame.
pub fn load_annotations(
    dir: &Path,
    sequence: &str,
    frame_count: usize,
    width: usize,
    height: usize,
) -> Result<Vec<Vec<GroundTruthObject>>> {
    if !dir.is_dir() {
        return Err(VcmError::Ingestion(vec![dir.to_path_buf()]));
    }
    (0..frame_count)
        .map(|i| {
            let p = dir.join(annotation_file_name(sequence, i));
            if p.exists() {
                load_annotation_file(&p, i, width, height)
            } else {
                Ok(Vec::new())
            }
        })
        .collect()
}

pub fn write_annotations(
    dir: &Path,
    sequence: &str,
    frames: &[Vec<GroundTruthObject>],
    width: usize,
    height: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    for (i, objs) in frames.iter().enumerate() {
        let mut text = String::new();
        for o in objs {
            text.push_str(&format_annotation_line(o, width, height));
            text.push('\n');
        }
        let p = dir.join(annotation_file_name(sequence, i));
        std::fs::write(&p, text).at(&p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use vcm_core::detector::BBox;

    #[test]
    fn empty_and_missing_files_are_empty_frames() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(annotation_file_name("s", 0)), "").unwrap();
        let frames = load_annotations(dir.path(), "s", 2, 100, 100).unwrap();
        assert_eq!(frames, vec![vec![], vec![]]);
    }

    #[test]
    fn errors_name_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(annotation_file_name("s", 0));
        std::fs::write(&p, "0 0.5 0.5 0.5 0.5\n\n0 1.5 0.5 0.1 0.1\n").unwrap();
        let msg = load_annotation_file(&p, 0, 100, 100).unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("s_000000.txt"), "{msg}");
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let obj = GroundTruthObject {
            frame_index: 1,
            class_id: 2,
            bbox: BBox::new(25.0, 25.0, 75.0, 75.0),
        };
        write_annotations(dir.path(), "s", &[vec![], vec![obj]], 100, 100).unwrap();
        let back = load_annotations(dir.path(), "s", 2, 100, 100).unwrap();
        assert_eq!(back[1], vec![obj]);
        assert!(back[0].is_empty());
    }
}
