//! Codec selection and the external-encoder wrapper.
//!
//! An external codec is a shell command template. Required placeholders are
//! `{input}` (raw planar 4:2:0 file), `{output}` (decoded planar 4:2:0 file the
//! command must write), `{bitstream}` and `{qp}`; `{width}`, `{height}`,
//! `{fps}`, `{frames}` and `{config}` are optional.

use std::path::{Path, PathBuf};
use std::process::Command;

use vcm_core::codec::{mock_codec, Yuv420Frame};

use crate::error::{IoContext, Result, VcmError};
use crate::hash::sha256_path;
use crate::video::{read_yuv, write_yuv};

pub const ENCODER_ENV: &str = "VCM_ENCODER_CMD";
const REQUIRED: [&str; 4] = ["input", "output", "bitstream", "qp"];
const OPTIONAL: [&str; 5] = ["width", "height", "fps", "frames", "config"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderTemplate {
    template: String,
}

impl EncoderTemplate {
    pub fn new(template: &str) -> Result<Self> {
        let names = placeholders(template)?;
        for n in &names {
            if !REQUIRED.contains(&n.as_str()) && !OPTIONAL.contains(&n.as_str()) {
                return Err(VcmError::Template(format!("unknown placeholder {{{n}}}")));
            }
        }
        if let Some(missing) = REQUIRED.iter().find(|r| !names.iter().any(|n| n == *r)) {
            return Err(VcmError::Template(format!(
                "missing required placeholder {{{missing}}}"
            )));
        }
        Ok(Self {
            template: template.to_string(),
        })
    }

    pub fn as_str(&self) -> &str {
        &self.template
    }

    /// Substitutes placeholders; values are single-quoted for the shell.
    pub fn render(&self, vars: &[(&str, String)]) -> Result<String> {
        let mut out = String::new();
        let mut rest = self.template.as_str();
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let end = rest[start..]
                .find('}')
                .map(|e| start + e)
                .ok_or_else(|| VcmError::Template("unclosed `{`".into()))?;
            let name = &rest[start + 1..end];
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| v)
                .ok_or_else(|| VcmError::Template(format!("no value for {{{name}}}")))?;
            out.push_str(&shell_quote(value));
            rest = &rest[end + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn placeholders(template: &str) -> Result<Vec<String>> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let end = rest[start..]
            .find('}')
            .ok_or_else(|| VcmError::Template("unclosed `{`".into()))?;
        names.push(rest[start + 1..start + end].to_string());
        rest = &rest[start + end + 1..];
    }
    Ok(names)
}

fn shell_quote(s: &str) -> String {
    if !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || "/._-+=:,".contains(c))
    {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodecSpec {
    Mock,
    External(EncoderTemplate),
}

impl CodecSpec {
    /// `mock` or `external:<template>`; a bare `external` takes the template
    /// from `VCM_ENCODER_CMD`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec {
            "mock" => Ok(CodecSpec::Mock),
            "external" => {
                let t = std::env::var(ENCODER_ENV).map_err(|_| {
                    VcmError::Usage(format!("codec `external` needs {ENCODER_ENV} to be set"))
                })?;
                Ok(CodecSpec::External(EncoderTemplate::new(&t)?))
            }
            s => match s.strip_prefix("external:") {
                Some(t) => Ok(CodecSpec::External(EncoderTemplate::new(t)?)),
                None => Err(VcmError::Usage(format!(
                    "unknown codec `{s}` (expected mock or external:<template>)"
                ))),
            },
        }
    }

    pub fn describe(&self) -> String {
        match self {
            CodecSpec::Mock => "mock".into(),
            CodecSpec::External(t) => format!("external:{}", t.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecOutput {
    pub decoded: Vec<Yuv420Frame>,
    pub bitstream: PathBuf,
    pub size_bytes: u64,
    /// Exact command line, or `mock` for the built-in codec.
    pub command: String,
}

/// Encodes and decodes `frames` at `qp` inside `workdir`.
pub fn run_codec(
    spec: &CodecSpec,
    frames: &[Yuv420Frame],
    fps: f64,
    qp: u8,
    workdir: &Path,
    config: Option<&Path>,
) -> Result<CodecOutput> {
    std::fs::create_dir_all(workdir).at(workdir)?;
    let bitstream = workdir.join("bitstream.bin");
    match spec {
        CodecSpec::Mock => {
            let out = mock_codec(frames, qp)?;
            std::fs::write(&bitstream, &out.bitstream).at(&bitstream)?;
            Ok(CodecOutput {
                decoded: out.decoded,
                size_bytes: out.bitstream.len() as u64,
                bitstream,
                command: "mock".into(),
            })
        }
        CodecSpec::External(t) => encode_decode_external(t, frames, fps, qp, workdir, config),
    }
}

pub fn encode_decode_external(
    template: &EncoderTemplate,
    frames: &[Yuv420Frame],
    fps: f64,
    qp: u8,
    workdir: &Path,
    config: Option<&Path>,
) -> Result<CodecOutput> {
    vcm_core::codec::quant_step(qp)?;
    let first = frames
        .first()
        .ok_or_else(|| VcmError::Usage("cannot encode an empty sequence".into()))?;
    let (w, h) = (first.width(), first.height());
    std::fs::create_dir_all(workdir).at(workdir)?;
    let input = workdir.join("input.yuv");
    let output = workdir.join("output.yuv");
    let bitstream = workdir.join("bitstream.bin");
    let _ = std::fs::remove_file(&output);
    write_yuv(&input, frames)?;
    let before = sha256_path(&input)?;

    let s = |p: &Path| p.display().to_string();
    let vars = [
        ("input", s(&input)),
        ("output", s(&output)),
        ("bitstream", s(&bitstream)),
        ("qp", qp.to_string()),
        ("width", w.to_string()),
        ("height", h.to_string()),
        ("fps", fps.to_string()),
        ("frames", frames.len().to_string()),
        ("config", config.map(s).unwrap_or_default()),
    ];
    let command = template.render(&vars)?;
    let result = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .current_dir(workdir)
        .output()
        .map_err(|e| VcmError::Environment(format!("cannot start `sh`: {e}")))?;
    let captured = format!(
        "{}{}",
        String::from_utf8_lossy(&result.stdout),
        String::from_utf8_lossy(&result.stderr)
    );
    match result.status.code() {
        Some(0) => {}
        Some(127) => {
            return Err(VcmError::Environment(format!(
                "encoder not found running `{command}`: {}",
                captured.trim()
            )))
        }
        _ => {
            return Err(VcmError::Codec {
                status: result.status.to_string(),
                output: captured.trim().to_string(),
            })
        }
    }
    if sha256_path(&input)? != before {
        return Err(VcmError::Codec {
            status: "success".into(),
            output: "encoder modified its input file".into(),
        });
    }
    if !output.is_file() {
        return Err(VcmError::Codec {
            status: "success".into(),
            output: format!("no decoded output at {}", output.display()),
        });
    }
    let decoded = read_yuv(&output, w, h)?;
    if decoded.len() != frames.len() {
        return Err(VcmError::Codec {
            status: "success".into(),
            output: format!("decoded {} frames, expected {}", decoded.len(), frames.len()),
        });
    }
    let size_bytes = std::fs::metadata(&bitstream)
        .at(&bitstream)
        .map_err(|_| VcmError::Codec {
            status: "success".into(),
            output: format!("no bitstream at {}", bitstream.display()),
        })?
        .len();
    for p in [&input, &output] {
        std::fs::remove_file(p).at(p)?;
    }
    Ok(CodecOutput {
        decoded,
        bitstream,
        size_bytes,
        command,
    })
}
