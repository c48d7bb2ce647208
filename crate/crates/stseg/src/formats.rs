//! Binary tensor records ("STT1") and checkpoints ("STCK1").
//!
//! STT1: magic, u8 dtype (0 f32, 1 f64), u8 rank, rank × u32 LE dims, then
//! LE values row-major. STCK1: magic, u32 count, then per entry a u16 name
//! length, the UTF-8 name and an embedded STT1 record.

use std::fs;
use std::path::Path;

use stseg_core::model::SegModel;
use stseg_core::optim::AdamState;
use stseg_core::{numel, DType, Scalar, Tensor};

use crate::error::{Error, IoContext, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"STT1";
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"STCK1";

/// A decoded record in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    /// The tensor at precision `S`; the stored dtype must match.
    pub fn into_scalar<S: Scalar>(self) -> std::result::Result<Tensor<S>, String> {
        if self.dtype() != S::DTYPE {
            return Err(format!("stored {:?}, expected {:?}", self.dtype(), S::DTYPE));
        }
        // same dtype, so the casts are exact
        Ok(match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        })
    }

    pub fn from_scalar<S: Scalar>(t: &Tensor<S>) -> Self {
        match S::DTYPE {
            DType::F32 => AnyTensor::F32(t.cast()),
            DType::F64 => AnyTensor::F64(t.cast()),
        }
    }
}

pub fn encode_tensor<S: Scalar>(t: &Tensor<S>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(S::DTYPE as u8);
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match S::DTYPE {
        DType::F32 => t.data().iter().for_each(|v| out.extend_from_slice(&(v.f64() as f32).to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.f64().to_le_bytes())),
    }
}

fn encode_any(t: &AnyTensor, out: &mut Vec<u8>) {
    match t {
        AnyTensor::F32(t) => encode_tensor(t, out),
        AnyTensor::F64(t) => encode_tensor(t, out),
    }
}

/// Little-endian cursor over a byte slice.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated {what} at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> std::result::Result<u8, String> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn decode_tensor_at(r: &mut Reader<'_>) -> std::result::Result<AnyTensor, String> {
    if r.take(4, "magic")? != TENSOR_MAGIC {
        return Err("bad tensor magic (expected STT1)".into());
    }
    let dtype = r.u8("dtype")?;
    let rank = r.u8("rank")? as usize;
    let shape: Vec<usize> = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<std::result::Result<_, _>>()?;
    let n = numel(&shape);
    let tensor = match dtype {
        0 => {
            let raw = r.take(n.checked_mul(4).ok_or("size overflow")?, "f32 payload")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            AnyTensor::F32(Tensor::new(&shape, data).map_err(|e| e.to_string())?)
        }
        1 => {
            let raw = r.take(n.checked_mul(8).ok_or("size overflow")?, "f64 payload")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            AnyTensor::F64(Tensor::new(&shape, data).map_err(|e| e.to_string())?)
        }
        other => return Err(format!("unknown dtype tag {other}")),
    };
    Ok(tensor)
}

/// Decodes one record occupying the whole slice.
pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<AnyTensor, String> {
    let mut r = Reader { bytes, pos: 0 };
    let t = decode_tensor_at(&mut r)?;
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(t)
}

pub fn save_tensor<S: Scalar>(path: impl AsRef<Path>, t: &Tensor<S>) -> Result<()> {
    let mut out = Vec::new();
    encode_tensor(t, &mut out);
    fs::write(path.as_ref(), out).at(path)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let bytes = fs::read(path.as_ref()).at(path.as_ref())?;
    decode_tensor(&bytes).map_err(|m| Error::format(path, m))
}

const ADAM_STEP: &str = "adam.step";

/// Named records in file order: every registry entry (parameters and
/// buffers), optionally followed by `adam.step`, `adam.m.<name>` and
/// `adam.v.<name>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, AnyTensor)>,
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(model: &SegModel<S>, adam: Option<&AdamState<S>>) -> Self {
        let reg = model.registry();
        let mut entries: Vec<(String, AnyTensor)> =
            reg.entries().iter().map(|e| (e.name.clone(), AnyTensor::from_scalar(&e.tensor))).collect();
        if let Some(adam) = adam {
            entries.push((ADAM_STEP.into(), AnyTensor::F64(Tensor::scalar(adam.step as f64))));
            for (k, &id) in adam.param_ids().iter().enumerate() {
                let shape = reg.get(id).shape();
                let name = reg.name(id);
                for (tag, moments) in [("m", &adam.m[k]), ("v", &adam.v[k])] {
                    let t = Tensor::new(shape, moments.clone()).expect("moment shape matches its parameter");
                    entries.push((format!("adam.{tag}.{name}"), AnyTensor::from_scalar(&t)));
                }
            }
        }
        Self { entries }
    }

    pub fn has_optimizer(&self) -> bool {
        self.entries.iter().any(|(n, _)| n == ADAM_STEP)
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            encode_any(t, &mut out);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5, "magic")? != CHECKPOINT_MAGIC {
            return Err("bad checkpoint magic (expected STCK1)".into());
        }
        let count = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| "entry name is not UTF-8".to_string())?;
            entries.push((name.to_string(), decode_tensor_at(&mut r)?));
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.encode()).at(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref()).at(path.as_ref())?;
        Self::decode(&bytes).map_err(|m| Error::format(path, m))
    }

    /// Copies the stored tensors into `model` (and `adam` when given). Names,
    /// order, shapes and dtype must all match the model's registry.
    pub fn restore<S: Scalar>(&self, model: &mut SegModel<S>, adam: Option<&mut AdamState<S>>) -> std::result::Result<(), String> {
        let n = model.registry().len();
        if self.entries.len() < n {
            return Err(format!("checkpoint holds {} entries, model has {n}", self.entries.len()));
        }
        let mut tensors = Vec::with_capacity(n);
        for (entry, (name, t)) in model.registry().entries().iter().zip(&self.entries) {
            if &entry.name != name || entry.tensor.shape() != t.shape() {
                return Err(format!(
                    "entry {name:?} {:?} does not match model entry {:?} {:?}",
                    t.shape(),
                    entry.name,
                    entry.tensor.shape()
                ));
            }
            tensors.push(t.clone().into_scalar::<S>().map_err(|e| format!("{name}: {e}"))?);
        }
        let extra = &self.entries[n..];
        if let Some((name, _)) = extra.iter().find(|(name, _)| !name.starts_with("adam.")) {
            return Err(format!("unexpected entry {name:?}"));
        }
        let state = match adam {
            Some(adam) => {
                if !self.has_optimizer() {
                    return Err("checkpoint has no optimizer state".into());
                }
                let step = match self.get(ADAM_STEP) {
                    Some(AnyTensor::F64(t)) if t.len() == 1 => t.data()[0],
                    _ => return Err("malformed adam.step".into()),
                };
                let mut m = Vec::new();
                let mut v = Vec::new();
                for &id in adam.param_ids() {
                    let name = model.registry().name(id);
                    for (tag, dst) in [("m", &mut m), ("v", &mut v)] {
                        let key = format!("adam.{tag}.{name}");
                        let t = self.get(&key).ok_or_else(|| format!("missing {key}"))?;
                        if t.shape() != model.registry().get(id).shape() {
                            return Err(format!("{key} has shape {:?}", t.shape()));
                        }
                        dst.push(t.clone().into_scalar::<S>().map_err(|e| format!("{key}: {e}"))?.into_data());
                    }
                }
                Some((adam, step as u64, m, v))
            }
            None => None,
        };
        for (entry, t) in model.registry_mut().entries_mut().iter_mut().zip(tensors) {
            entry.tensor = t;
        }
        if let Some((adam, step, m, v)) = state {
            adam.step = step;
            adam.m = m;
            adam.v = v;
        }
        Ok(())
    }
}
