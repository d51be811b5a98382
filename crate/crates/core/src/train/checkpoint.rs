//! Binary checkpoint: `XCNN`, version (u32 LE), manifest length (u32 LE) and
//! UTF-8 manifest, tensor count (u32 LE), then per tensor a u16 LE name
//! length, the name, a u8 rank, u32 LE dims and little-endian f32 values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, XcnnError};
use crate::model::ModelSpec;

pub const MAGIC: &[u8; 4] = b"XCNN";
pub const VERSION: u32 = 1;

const MODEL_HEADER: &str = "[model]";
const STATE_HEADER: &str = "[training]";

/// Counters and hyperparameters needed to continue a run exactly. Sampling
/// randomness is derived from `(seed, epoch)`, so these double as RNG state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub lr_gamma: f64,
}

impl TrainState {
    fn write(&self, out: &mut String) {
        let milestones: Vec<String> = self.milestones.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(out, "epoch={}", self.epoch);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "batch_size={}", self.batch_size);
        let _ = writeln!(out, "base_lr={}", self.base_lr);
        let _ = writeln!(out, "momentum={}", self.momentum);
        let _ = writeln!(out, "weight_decay={}", self.weight_decay);
        let _ = writeln!(out, "milestones={}", milestones.join(","));
        let _ = writeln!(out, "lr_gamma={}", self.lr_gamma);
    }

    fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| XcnnError::Format(format!("bad training line {line:?}")))?;
            if kv.insert(k, v).is_some() {
                return Err(XcnnError::Format(format!("duplicate training key {k:?}")));
            }
        }
        fn take<T: std::str::FromStr>(kv: &mut BTreeMap<&str, &str>, k: &str) -> Result<T> {
            let v = kv
                .remove(k)
                .ok_or_else(|| XcnnError::Format(format!("training state missing {k}")))?;
            v.parse()
                .map_err(|_| XcnnError::Format(format!("bad value for {k}: {v:?}")))
        }
        let milestones: String = take(&mut kv, "milestones")?;
        let state = TrainState {
            epoch: take(&mut kv, "epoch")?,
            seed: take(&mut kv, "seed")?,
            batch_size: take(&mut kv, "batch_size")?,
            base_lr: take(&mut kv, "base_lr")?,
            momentum: take(&mut kv, "momentum")?,
            weight_decay: take(&mut kv, "weight_decay")?,
            milestones: milestones
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| XcnnError::Format(format!("bad milestones {milestones:?}")))?,
            lr_gamma: take(&mut kv, "lr_gamma")?,
        };
        if let Some(k) = kv.keys().next() {
            return Err(XcnnError::Format(format!("unknown training key {k:?}")));
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub state: TrainState,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn manifest(&self) -> String {
        let mut m = format!("{MODEL_HEADER}\n{}{STATE_HEADER}\n", self.spec);
        self.state.write(&mut m);
        m
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = self.manifest();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(manifest.len()).map_err(too_big)?.to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(&u32::try_from(self.tensors.len()).map_err(too_big)?.to_le_bytes());
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(XcnnError::InvalidShape(format!(
                    "{}: shape {:?} does not hold {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            out.extend_from_slice(&u16::try_from(t.name.len()).map_err(too_big)?.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(u8::try_from(t.shape.len()).map_err(too_big)?);
            for &d in &t.shape {
                out.extend_from_slice(&u32::try_from(d).map_err(too_big)?.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(XcnnError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(XcnnError::Format(format!(
                "checkpoint version {version}, expected {VERSION}"
            )));
        }
        let mlen = r.u32()? as usize;
        let manifest = std::str::from_utf8(r.take(mlen)?)
            .map_err(|_| XcnnError::Format("manifest is not UTF-8".into()))?;
        let (spec, state) = parse_manifest(manifest)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| XcnnError::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| XcnnError::Format("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(XcnnError::Format(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { spec, state, tensors })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, &bytes).map_err(|e| XcnnError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| XcnnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| XcnnError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn too_big<E>(_: E) -> XcnnError {
    XcnnError::Format("value does not fit the checkpoint field width".into())
}

fn parse_manifest(text: &str) -> Result<(ModelSpec, TrainState)> {
    let body = text
        .strip_prefix(MODEL_HEADER)
        .ok_or_else(|| XcnnError::Format(format!("manifest must start with {MODEL_HEADER}")))?;
    let (model, state) = body
        .split_once(STATE_HEADER)
        .ok_or_else(|| XcnnError::Format(format!("manifest lacks {STATE_HEADER}")))?;
    Ok((model.parse()?, TrainState::parse(state)?))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| XcnnError::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}
