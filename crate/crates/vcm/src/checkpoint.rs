//! Single-file network checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "VCMPOST1"
//! u32 header length, header JSON (network config, optional training state)
//! u32 tensor count
//! per tensor: u16 name length, name, u8 rank, u32 dims.., f32 values..
//! 32-byte SHA-256 of everything above
//! ```
//!
//! Optimizer moments are stored as tensors named `adam.m.<param>` and
//! `adam.v.<param>`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vcm_core::net::{NetConfig, PostProcNet};
use vcm_core::training::{AdamConfig, OptimizerState};

use crate::error::{IoContext, Result, VcmError};

const MAGIC: &[u8; 8] = b"VCMPOST1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    /// Completed optimizer steps.
    pub step: u64,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    net: NetConfig,
    #[serde(default)]
    train: Option<TrainState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: PostProcNet<f32>,
    pub train: Option<TrainState>,
    /// First and second Adam moments, flat like the parameters.
    pub moments: Option<(Vec<f32>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn network(net: PostProcNet<f32>) -> Self {
        Self {
            net,
            train: None,
            moments: None,
        }
    }

    pub fn training(net: PostProcNet<f32>, opt: &OptimizerState<f32>, seed: u64) -> Self {
        Self {
            net,
            train: Some(TrainState {
                step: opt.step,
                seed,
                optimizer: opt.config,
            }),
            moments: Some((opt.m.clone(), opt.v.clone())),
        }
    }

    /// Optimizer state to resume from, when the checkpoint carries one.
    pub fn optimizer_state(&self) -> Option<OptimizerState<f32>> {
        let train = self.train?;
        let (m, v) = self.moments.clone()?;
        Some(OptimizerState {
            config: train.optimizer,
            step: train.step,
            m,
            v,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            net: *self.net.config(),
            train: self.train,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);

        let params = self.net.parameters();
        let mut tensors: Vec<(String, &[usize], &[f32])> = Vec::new();
        for info in self.net.param_info() {
            tensors.push((
                info.name.clone(),
                &info.shape,
                &params[info.offset..info.offset + info.len()],
            ));
        }
        if let Some((m, v)) = &self.moments {
            for (prefix, buf) in [("adam.m.", m), ("adam.v.", v)] {
                for info in self.net.param_info() {
                    tensors.push((
                        format!("{prefix}{}", info.name),
                        &info.shape,
                        &buf[info.offset..info.offset + info.len()],
                    ));
                }
            }
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, values) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: String| VcmError::Checkpoint {
            path: origin.to_path_buf(),
            reason,
        };
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch".into()));
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let hlen = r.u32().ok_or_else(|| bad("truncated header".into()))? as usize;
        let header: Header = serde_json::from_slice(
            r.take(hlen).ok_or_else(|| bad("truncated header".into()))?,
        )
        .map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        header.net.validate()?;

        let count = r.u32().ok_or_else(|| bad("truncated tensor table".into()))?;
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
        for _ in 0..count {
            let trunc = || bad("truncated tensor".into());
            let nlen = r.u16().ok_or_else(trunc)? as usize;
            let name = std::str::from_utf8(r.take(nlen).ok_or_else(trunc)?)
                .map_err(|_| bad("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8().ok_or_else(trunc)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32().ok_or_else(trunc)? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4).ok_or_else(trunc)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if tensors.insert(name.clone(), (shape, values)).is_some() {
                return Err(bad(format!("duplicate tensor `{name}`")));
            }
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after tensor table".into()));
        }

        let n_params = vcm_core::net::parameter_count(&header.net);
        let template = PostProcNet::<f32>::from_parameters(header.net, vec![0.0; n_params])?;
        let mut gather = |prefix: &str| -> Result<Option<Vec<f32>>> {
            let mut flat = vec![0.0f32; n_params];
            let mut found = 0;
            for info in template.param_info() {
                let key = format!("{prefix}{}", info.name);
                match tensors.remove(&key) {
                    Some((shape, values)) => {
                        if shape != info.shape {
                            return Err(bad(format!(
                                "tensor `{key}` has shape {shape:?}, expected {:?}",
                                info.shape
                            )));
                        }
                        flat[info.offset..info.offset + info.len()].copy_from_slice(&values);
                        found += 1;
                    }
                    None if prefix.is_empty() => {
                        return Err(bad(format!("missing tensor `{key}`")));
                    }
                    None => {}
                }
            }
            match found {
                0 => Ok(None),
                n if n == template.param_info().len() => Ok(Some(flat)),
                _ => Err(bad(format!("incomplete `{prefix}*` tensor set"))),
            }
        };
        let params = gather("")?.expect("parameters are mandatory");
        let m = gather("adam.m.")?;
        let v = gather("adam.v.")?;
        if let Some(extra) = tensors.keys().next() {
            return Err(bad(format!("unknown tensor `{extra}`")));
        }
        let moments = match (m, v) {
            (Some(m), Some(v)) => Some((m, v)),
            (None, None) => None,
            _ => return Err(bad("only one of the Adam moment sets is present".into())),
        };
        Ok(Self {
            net: PostProcNet::from_parameters(header.net, params)?,
            train: header.train,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).at(dir)?;
        }
        std::fs::write(path, self.to_bytes()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetConfig {
        NetConfig {
            base_width: 4,
            growth: 2,
            num_rrdb: 1,
            dense_layers_per_block: 2,
            dense_blocks_per_rrdb: 1,
            ..NetConfig::default()
        }
    }

    fn trained_net() -> PostProcNet<f32> {
        let mut net = PostProcNet::build(small(), 3).unwrap();
        for (i, p) in net.parameters_mut().iter_mut().enumerate() {
            *p += (i as f32 * 0.37).sin() * 1e-3;
        }
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = trained_net();
        let ck = Checkpoint::network(net.clone());
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back.net.config(), net.config());
        let bits = |n: &PostProcNet<f32>| n.parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.net), bits(&net));
        assert!(back.train.is_none() && back.moments.is_none());
    }

    #[test]
    fn optimizer_state_survives() {
        let net = trained_net();
        let mut opt = OptimizerState::new(AdamConfig::default(), net.parameters().len()).unwrap();
        opt.step = 7;
        opt.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 1e-4);
        opt.v.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 1e-7);
        let ck = Checkpoint::training(net, &opt, 42);
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back.optimizer_state().unwrap(), opt);
        assert_eq!(back.train.unwrap().seed, 42);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = Checkpoint::network(trained_net()).to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        let err = Checkpoint::from_bytes(&bytes, Path::new("x.ckpt")).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
        assert!(Checkpoint::from_bytes(b"short", Path::new("x")).is_err());
    }
}
