//! LCKP1: magic, u32 parameter count, then records
//! `{u16 path length, UTF-8 path, u8 rank, u32 dims..., f64 data...}`;
//! the Adam first and second moments follow as two more blocks (each a u32
//! count plus records in the same layout), then u64 step and u64 seed.
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{AdamState, NnError, ParamStore, Result, Tensor, ToyCodecModel, TrainState};

const MAGIC: &[u8; 5] = b"LCKP1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub adam: AdamState,
    pub step: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        let mut params = state.model.params.clone();
        params.zero_grads();
        Self { params, adam: state.adam.clone(), step: state.step, seed: state.seed }
    }

    /// Loads the stored values into a freshly initialized model of the same
    /// architecture; every parameter must match by path and shape.
    pub fn restore(self, mut template: ToyCodecModel) -> Result<TrainState> {
        if template.params.len() != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                template.params.len()
            )));
        }
        for p in self.params.iter() {
            template
                .params
                .set_value(&p.id, p.value.clone())
                .map_err(|e| NnError::Checkpoint(format!("{}: {e}", p.id)))?;
        }
        let order: Vec<&str> = template.params.iter().map(|p| p.id.as_str()).collect();
        let saved: Vec<&str> = self.params.iter().map(|p| p.id.as_str()).collect();
        if order != saved {
            return Err(NnError::Checkpoint("parameter order differs from the model".into()));
        }
        Ok(TrainState { step: self.step, model: template, adam: self.adam, seed: self.seed, history: Vec::new() })
    }
}

fn write_block<'a>(out: &mut Vec<u8>, records: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (path, t) in records {
        let len = u16::try_from(path.len()).map_err(|_| NnError::Checkpoint(format!("path too long: {path}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(path.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    let ids: Vec<&str> = ckpt.params.iter().map(|p| p.id.as_str()).collect();
    if ckpt.adam.m.len() != ids.len() || ckpt.adam.v.len() != ids.len() {
        return Err(NnError::Checkpoint("moment count differs from parameter count".into()));
    }
    write_block(&mut out, ckpt.params.iter().map(|p| (p.id.as_str(), &p.value)))?;
    write_block(&mut out, ids.iter().copied().zip(&ckpt.adam.m))?;
    write_block(&mut out, ids.iter().copied().zip(&ckpt.adam.v))?;
    out.extend_from_slice(&ckpt.step.to_le_bytes());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NnError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn block(&mut self) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
            let path =
                std::str::from_utf8(self.take(len)?).map_err(|_| NnError::Checkpoint("path is not UTF-8".into()))?;
            let rank = self.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = self.take(n.checked_mul(8).ok_or_else(|| NnError::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            out.push((path.to_string(), Tensor::new(data, shape)?));
        }
        Ok(out)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let values = r.block()?;
    let m = r.block()?;
    let v = r.block()?;
    let step = r.u64()?;
    let seed = r.u64()?;
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let names: Vec<&String> = values.iter().map(|p| &p.0).collect();
    for block in [&m, &v] {
        if block.iter().map(|p| &p.0).collect::<Vec<_>>() != names {
            return Err(NnError::Checkpoint("moment paths differ from parameter paths".into()));
        }
        if block.iter().zip(&values).any(|(a, b)| a.1.shape() != b.1.shape()) {
            return Err(NnError::Checkpoint("moment shapes differ from parameter shapes".into()));
        }
    }
    let mut params = ParamStore::new();
    for (id, t) in values {
        params.insert(id, t);
    }
    let adam = AdamState { m: m.into_iter().map(|p| p.1).collect(), v: v.into_iter().map(|p| p.1).collect() };
    Ok(Checkpoint { params, adam, step, seed })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
