//! Checkpoint file format.
//!
//! Little-endian binary with a section table and SHA-256 checksums:
//!
//! ```text
//! magic    8 bytes  "ALIGNCK1"
//! version  u32
//! count    u32                      number of sections
//! table    count x {u16 name_len, name, u64 offset, u64 len, [u8;32] sha256}
//! payload  section bytes at the recorded offsets
//! trailer  [u8;32] sha256 of every byte before it
//! ```
//!
//! Sections: `meta` (JSON: config, epoch, rng seed), `params` (named
//! tensors), `optimizer` (step, hyper, moments), `loss_history`. A flipped
//! byte anywhere fails the trailer or a section hash; nothing is ever
//! partially loaded.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderParams;
use crate::error::{CoreError, Result};
use crate::numeric::{AdamWHyper, AdamWState, Tensor};
use crate::trainer::{Checkpoint, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ALIGNCK1";

#[derive(Serialize, Deserialize)]
struct MetaSection {
    config: TrainConfig,
    epoch: usize,
    rng_seed: u64,
}

// ── little-endian write helpers ─────────────────────────────────────────

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::Integrity("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u16(buf, name.len() as u16);
    buf.extend_from_slice(name.as_bytes());
    buf.push(t.shape().len() as u8);
    for &d in t.shape() {
        put_u64(buf, d as u64);
    }
    for &v in t.data() {
        put_f64(buf, v);
    }
}

fn read_tensor(r: &mut Reader) -> Result<(String, Tensor)> {
    let name_len = r.u16()? as usize;
    let name = String::from_utf8(r.take(name_len)?.to_vec())
        .map_err(|_| CoreError::Integrity("bad tensor name".into()))?;
    let ndim = r.take(1)?[0] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u64()? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(r.f64()?);
    }
    let tensor = Tensor::new(shape, data)
        .map_err(|e| CoreError::Integrity(format!("tensor '{name}': {e}")))?;
    Ok((name, tensor))
}

fn params_section(params: &EncoderParams) -> Vec<u8> {
    let named = params.named();
    let mut buf = Vec::new();
    put_u32(&mut buf, named.len() as u32);
    for (name, t) in named {
        put_tensor(&mut buf, &name, t);
    }
    buf
}

fn optimizer_section(state: &AdamWState) -> Vec<u8> {
    let mut buf = Vec::new();
    put_u64(&mut buf, state.step);
    put_f64(&mut buf, state.hyper.lr);
    put_f64(&mut buf, state.hyper.beta1);
    put_f64(&mut buf, state.hyper.beta2);
    put_f64(&mut buf, state.hyper.eps);
    put_f64(&mut buf, state.hyper.weight_decay);
    put_u32(&mut buf, state.m.len() as u32);
    for t in state.m.iter().chain(&state.v) {
        put_tensor(&mut buf, "", t);
    }
    buf
}

fn history_section(history: &[f64]) -> Vec<u8> {
    let mut buf = Vec::new();
    put_u64(&mut buf, history.len() as u64);
    for &v in history {
        put_f64(&mut buf, v);
    }
    buf
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let meta = serde_json::to_vec(&MetaSection {
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        rng_seed: ckpt.rng_seed,
    })?;
    let sections: Vec<(&str, Vec<u8>)> = vec![
        ("meta", meta),
        ("params", params_section(&ckpt.params)),
        ("optimizer", optimizer_section(&ckpt.optimizer)),
        ("loss_history", history_section(&ckpt.loss_history)),
    ];

    let mut header = Vec::new();
    header.extend_from_slice(MAGIC);
    put_u32(&mut header, ckpt.version);
    put_u32(&mut header, sections.len() as u32);

    let table_len: usize = sections
        .iter()
        .map(|(name, _)| 2 + name.len() + 8 + 8 + 32)
        .sum();
    let mut offset = header.len() + table_len;

    let mut table = Vec::new();
    for (name, payload) in &sections {
        put_u16(&mut table, name.len() as u16);
        table.extend_from_slice(name.as_bytes());
        put_u64(&mut table, offset as u64);
        put_u64(&mut table, payload.len() as u64);
        table.extend_from_slice(&Sha256::digest(payload));
        offset += payload.len();
    }

    let mut file = header;
    file.extend_from_slice(&table);
    for (_, payload) in &sections {
        file.extend_from_slice(payload);
    }
    let trailer = Sha256::digest(&file);
    file.extend_from_slice(&trailer);
    std::fs::write(path, file)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| CoreError::validation(format!("checkpoint {}: {e}", path.display())))?;
    if bytes.len() < MAGIC.len() + 8 + 32 {
        return Err(CoreError::Integrity("checkpoint too small".into()));
    }

    // whole-file integrity first: nothing is parsed from a corrupt file
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(CoreError::Integrity("checkpoint checksum mismatch".into()));
    }

    let mut r = Reader::new(body);
    if r.take(8)? != MAGIC {
        return Err(CoreError::Integrity("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CoreError::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;

    struct Entry {
        name: String,
        offset: usize,
        len: usize,
        sha: [u8; 32],
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CoreError::Integrity("bad section name".into()))?;
        let offset = r.u64()? as usize;
        let len = r.u64()? as usize;
        let sha: [u8; 32] = r.take(32)?.try_into().unwrap();
        entries.push(Entry {
            name,
            offset,
            len,
            sha,
        });
    }

    let section = |name: &str| -> Result<&[u8]> {
        let e = entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CoreError::Integrity(format!("missing section '{name}'")))?;
        if e.offset + e.len > body.len() {
            return Err(CoreError::Integrity(format!(
                "section '{name}' out of range"
            )));
        }
        let payload = &body[e.offset..e.offset + e.len];
        if Sha256::digest(payload).as_slice() != e.sha {
            return Err(CoreError::Integrity(format!(
                "section '{name}' checksum mismatch"
            )));
        }
        Ok(payload)
    };

    let meta: MetaSection = serde_json::from_slice(section("meta")?)
        .map_err(|e| CoreError::Integrity(format!("meta section: {e}")))?;

    // params
    let mut r = Reader::new(section("params")?);
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        tensors.push(read_tensor(&mut r)?.1);
    }
    if !r.done() {
        return Err(CoreError::Integrity(
            "trailing bytes in params section".into(),
        ));
    }
    let params = EncoderParams::from_tensors(&meta.config.encoder, tensors)
        .map_err(|e| CoreError::Integrity(format!("params section: {e}")))?;

    // optimizer
    let mut r = Reader::new(section("optimizer")?);
    let step = r.u64()?;
    let hyper = AdamWHyper {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
        weight_decay: r.f64()?,
    };
    let n = r.u32()? as usize;
    let mut moments = Vec::with_capacity(2 * n);
    for _ in 0..2 * n {
        moments.push(read_tensor(&mut r)?.1);
    }
    if !r.done() {
        return Err(CoreError::Integrity(
            "trailing bytes in optimizer section".into(),
        ));
    }
    let v = moments.split_off(n);
    let optimizer = AdamWState {
        step,
        m: moments,
        v,
        hyper,
    };

    // loss history
    let mut r = Reader::new(section("loss_history")?);
    let n = r.u64()? as usize;
    let mut loss_history = Vec::with_capacity(n);
    for _ in 0..n {
        loss_history.push(r.f64()?);
    }
    if !r.done() {
        return Err(CoreError::Integrity(
            "trailing bytes in loss_history section".into(),
        ));
    }

    Ok(Checkpoint {
        version,
        config: meta.config,
        params,
        optimizer,
        epoch: meta.epoch,
        rng_seed: meta.rng_seed,
        loss_history,
    })
}
