//! Dataset manifest (JSON). Paths in the file are relative to the manifest's
//! directory; in memory they are absolute.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result, VcmError};

pub const QP_PRESET_FULL: [u8; 5] = [27, 32, 37, 42, 47];
pub const QP_PRESET_HIGH: [u8; 3] = [37, 42, 47];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassPreset {
    A,
    B,
    C,
}

impl ClassPreset {
    /// Evaluation QP sweep of the preset.
    pub fn qps(self) -> &'static [u8] {
        match self {
            ClassPreset::A => &QP_PRESET_FULL,
            ClassPreset::B | ClassPreset::C => &QP_PRESET_HIGH,
        }
    }
}

/// A standard test sequence: size and length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequencePreset {
    pub name: &'static str,
    pub class: ClassPreset,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

const fn seq(name: &'static str, class: ClassPreset, width: usize, height: usize, frames: usize) -> SequencePreset {
    SequencePreset {
        name,
        class,
        width,
        height,
        frames,
    }
}

pub const TEST_SEQUENCES: [SequencePreset; 9] = [
    seq("PeopleOnStreet", ClassPreset::A, 2560, 1600, 150),
    seq("Traffic", ClassPreset::A, 2560, 1600, 150),
    seq("BQTerrace", ClassPreset::B, 1920, 1080, 600),
    seq("BasketballDrive", ClassPreset::B, 1920, 1080, 500),
    seq("ParkScene", ClassPreset::B, 1920, 1080, 240),
    seq("BQMall", ClassPreset::C, 832, 480, 600),
    seq("BasketballDrill", ClassPreset::C, 832, 480, 500),
    seq("PartyScene", ClassPreset::C, 832, 480, 500),
    seq("RaceHorsesC", ClassPreset::C, 832, 480, 300),
];

/// Looks up a test sequence by name.
pub fn sequence_preset(name: &str) -> Option<SequencePreset> {
    TEST_SEQUENCES.iter().copied().find(|p| p.name == name)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodedEntry {
    pub path: PathBuf,
    pub bitstream: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub id: String,
    pub raw: PathBuf,
    pub fps: f64,
    pub frame_count: usize,
    pub class: ClassPreset,
    /// Directory of per-frame annotation files.
    pub annotations: PathBuf,
    /// Half-open `[start, end)` frame selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_range: Option<[usize; 2]>,
    #[serde(default)]
    pub decoded: BTreeMap<u8, DecodedEntry>,
}

impl SequenceEntry {
    pub fn frames(&self) -> std::ops::Range<usize> {
        match self.frame_range {
            Some([a, b]) => a..b,
            None => 0..self.frame_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sequences: Vec<SequenceEntry>,
}

impl Manifest {
    /// Reads, resolves and validates a manifest. A missing file is a usage
    /// error.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(VcmError::Usage(format!(
                "manifest not found: {}",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).at(path)?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|e| VcmError::format(path, e.to_string()))?;
        let base = absolute(path.parent().unwrap_or(Path::new(".")))?;
        for s in &mut m.sequences {
            s.raw = normalize(&base.join(&s.raw));
            s.annotations = normalize(&base.join(&s.annotations));
            for d in s.decoded.values_mut() {
                d.path = normalize(&base.join(&d.path));
                d.bitstream = normalize(&base.join(&d.bitstream));
            }
        }
        m.validate(true)?;
        Ok(m)
    }

    /// Checks field ranges; with `check_paths`, also that every referenced
    /// path exists. Each error names its entry.
    pub fn validate(&self, check_paths: bool) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(VcmError::Config("manifest lists no sequences".into()));
        }
        let mut seen = BTreeSet::new();
        for (i, s) in self.sequences.iter().enumerate() {
            let name = if s.id.is_empty() {
                format!("#{i}")
            } else {
                s.id.clone()
            };
            let err = |reason: String| VcmError::manifest(name.clone(), reason);
            if s.id.is_empty()
                || !s
                    .id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            {
                return Err(err("id must be non-empty [A-Za-z0-9._-]".into()));
            }
            if !seen.insert(&s.id) {
                return Err(err("duplicate id".into()));
            }
            if !(s.fps > 0.0 && s.fps.is_finite()) {
                return Err(err(format!("fps must be positive, got {}", s.fps)));
            }
            if s.frame_count == 0 {
                return Err(err("frame_count must be at least 1".into()));
            }
            if let Some([a, b]) = s.frame_range {
                if a >= b || b > s.frame_count {
                    return Err(err(format!(
                        "frame_range [{a}, {b}) outside [0, {})",
                        s.frame_count
                    )));
                }
            }
            if let Some(qp) = s.decoded.keys().find(|&&q| q > vcm_core::codec::MAX_QP) {
                return Err(err(format!("decoded qp {qp} outside [0, 63]")));
            }
            if check_paths {
                let mut missing: Vec<&Path> = Vec::new();
                if !s.raw.exists() {
                    missing.push(&s.raw);
                }
                if !s.annotations.is_dir() {
                    missing.push(&s.annotations);
                }
                for d in s.decoded.values() {
                    for p in [&d.path, &d.bitstream] {
                        if !p.exists() {
                            missing.push(p);
                        }
                    }
                }
                if !missing.is_empty() {
                    let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
                    return Err(err(format!("missing paths: {}", list.join(", "))));
                }
            }
        }
        Ok(())
    }

    /// Writes the manifest with paths relative to `path`'s directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = absolute(path.parent().unwrap_or(Path::new(".")))?;
        std::fs::create_dir_all(&dir).at(&dir)?;
        let mut out = self.clone();
        for s in &mut out.sequences {
            s.raw = relative_to(&s.raw, &dir);
            s.annotations = relative_to(&s.annotations, &dir);
            for d in s.decoded.values_mut() {
                d.path = relative_to(&d.path, &dir);
                d.bitstream = relative_to(&d.bitstream, &dir);
            }
        }
        let mut text = serde_json::to_string_pretty(&out).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).at(path)
    }

    pub fn sequence(&self, id: &str) -> Option<&SequenceEntry> {
        self.sequences.iter().find(|s| s.id == id)
    }
}

pub(crate) fn absolute(p: &Path) -> Result<PathBuf> {
    let p = if p.as_os_str().is_empty() {
        Path::new(".")
    } else {
        p
    };
    let abs = std::path::absolute(p).at(p)?;
    Ok(normalize(&abs))
}

fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// `target` expressed relative to directory `base`; both absolute.
pub(crate) fn relative_to(target: &Path, base: &Path) -> PathBuf {
    let target = normalize(target);
    let base = normalize(base);
    let t: Vec<_> = target.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return target;
    }
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c);
    }
    if out.as_os_str().is_empty() {
        out.push(".");
    }
    out
}
