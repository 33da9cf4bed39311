//! Backend selection and detection dumps.
//!
//! `--backend` accepts `toy` (luminance features), `toy:rgb` (per-channel
//! features) or `external:<template>`. An external backend runs its template
//! once per frame with `{input}` replaced by a PNG of the frame and `{output}`
//! by the dump file it must write; it supplies detections only.

use std::path::Path;
use std::process::Command;

use vcm_core::detector::{
    finalize_detections, BBox, Capabilities, Detection, DetectorBackend, ToyBackend, ToyColor,
};
use vcm_core::Frame;

use crate::error::{IoContext, Result, VcmError};
use crate::video::save_png;

pub type Backend = Box<dyn DetectorBackend<f32>>;

pub fn parse_backend(spec: &str) -> Result<Backend> {
    match spec {
        "toy" => Ok(Box::new(ToyBackend::with_color(ToyColor::Luma))),
        "toy:rgb" => Ok(Box::new(ToyBackend::with_color(ToyColor::Rgb))),
        s => match s.strip_prefix("external:") {
            Some(t) => Ok(Box::new(ExternalDetector::new(t)?)),
            None => Err(VcmError::Usage(format!(
                "unknown backend `{s}` (expected toy, toy:rgb or external:<template>)"
            ))),
        },
    }
}

#[derive(Debug, Clone)]
pub struct ExternalDetector {
    template: String,
    name: String,
}

impl ExternalDetector {
    pub fn new(template: &str) -> Result<Self> {
        for p in ["{input}", "{output}"] {
            if !template.contains(p) {
                return Err(VcmError::Template(format!(
                    "detector template lacks {p}"
                )));
            }
        }
        Ok(Self {
            template: template.to_string(),
            name: format!("external:{template}"),
        })
    }

    fn run(&self, frame: &Frame<f32>) -> Result<Vec<Detection>> {
        let dir = tempfile_dir()?;
        let input = dir.join("frame.png");
        let output = dir.join("detections.txt");
        save_png(&input, frame)?;
        let cmd = self
            .template
            .replace("{input}", &input.display().to_string())
            .replace("{output}", &output.display().to_string());
        let res = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .output()
            .map_err(|e| VcmError::Environment(format!("cannot start `sh`: {e}")))?;
        let result = match res.status.code() {
            Some(0) => read_detections(&output),
            Some(127) => Err(VcmError::Environment(format!("detector not found: `{cmd}`"))),
            _ => Err(VcmError::Codec {
                status: res.status.to_string(),
                output: String::from_utf8_lossy(&res.stderr).trim().to_string(),
            }),
        };
        let _ = std::fs::remove_dir_all(&dir);
        result
    }
}

fn tempfile_dir() -> Result<std::path::PathBuf> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static NEXT: AtomicU64 = AtomicU64::new(0);
    let dir = std::env::temp_dir().join(format!(
        "vcm-detect-{}-{}",
        std::process::id(),
        NEXT.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&dir).at(&dir)?;
    Ok(dir)
}

impl DetectorBackend<f32> for ExternalDetector {
    fn name(&self) -> &str {
        &self.name
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            features: false,
            detection: true,
            differentiable: false,
        }
    }

    fn detect(&self, frame: &Frame<f32>, conf_threshold: f64) -> vcm_core::Result<Vec<Detection>> {
        if !(0.0..=1.0).contains(&conf_threshold) {
            return Err(vcm_core::Error::Usage(format!(
                "confidence threshold {conf_threshold} outside [0, 1]"
            )));
        }
        let dets = self
            .run(frame)
            .map_err(|e| vcm_core::Error::Validation(format!("{}: {e}", self.name)))?;
        Ok(finalize_detections(dets, conf_threshold))
    }
}

pub fn format_detection(d: &Detection) -> String {
    format!(
        "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
        d.class_id, d.confidence, d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max
    )
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let mut text = String::new();
    for d in dets {
        text.push_str(&format_detection(d));
        text.push('\n');
    }
    std::fs::write(path, text).at(path)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |r: String| VcmError::format(path, format!("line {}: {r}", n + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let class_id: u32 = f[0].parse().map_err(|_| bad(format!("bad class `{}`", f[0])))?;
        let mut v = [0.0f64; 5];
        for (slot, t) in v.iter_mut().zip(&f[1..]) {
            *slot = t.parse().map_err(|_| bad(format!("bad number `{t}`")))?;
        }
        let d = Detection::new(class_id, BBox::new(v[1], v[2], v[3], v[4]), v[0])
            .map_err(|e| bad(e.to_string()))?;
        out.push(d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_specs() {
        assert_eq!(parse_backend("toy").unwrap().name(), "toy");
        assert_eq!(parse_backend("toy:rgb").unwrap().name(), "toy:rgb");
        assert!(parse_backend("yolo").is_err());
        assert!(parse_backend("external:det {input}").is_err());
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.txt");
        let d = Detection::new(1, BBox::new(1.0, 2.0, 10.5, 20.25), 0.875).unwrap();
        write_detections(&p, &[d]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "1 0.875000 1.000000 2.000000 10.500000 20.250000\n"
        );
        assert_eq!(read_detections(&p).unwrap(), vec![d]);
    }

    #[test]
    fn external_detector_reads_its_dump() {
        let det = ExternalDetector::new(
            "test -s {input} && printf '0 0.9 1 1 5 5\\n2 0.1 0 0 2 2\\n' > {output}",
        )
        .unwrap();
        let frame = Frame::filled(3, 8, 8, 0.5f32).unwrap();
        let out = det.detect(&frame, 0.25).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].class_id, 0);
        assert!(det.extract_features(&frame).is_err());
    }
}
