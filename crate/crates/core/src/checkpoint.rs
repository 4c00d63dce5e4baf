//! Binary checkpoints: everything needed to resume training bit-exactly.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "HALI" | version u32 | total length u64 | config digest [32]
//! config text (u32 length + UTF-8)
//! step u64 | rng seed u64 | rng stream u64 | rng word position u128
//! manifest: count u32, then per parameter: name, group u8, rank u8, dims u64...
//! parameter blobs (f32), in manifest order
//! batch-norm statistics: count u32, then name, channels u32, momentum f64, eps f64, mean f32..., var f32...
//! three optimizer states (discriminator, generator, classifier): step u64, then m and v blobs per parameter
//! sha256 of everything above [32]
//! ```

use std::path::Path;

use hali_tensor::{RngState, RunningStats, SeededRng, Tensor};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{HaliError, Result};
use crate::networks::{Group, Model};
use crate::trainer::{Adam, Trainer};

pub const MAGIC: &[u8; 4] = b"HALI";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 32;
const CHECKSUM_LEN: usize = 32;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend(s.as_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend(x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(HaliError::CheckpointFormat(format!("record overruns the payload at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| HaliError::CheckpointFormat("string is not UTF-8".into()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| HaliError::CheckpointFormat("blob size overflows".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Serialize a trainer.
pub fn to_bytes(t: &Trainer) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend(MAGIC);
    w.u32(VERSION);
    w.u64(0); // total length, patched below
    w.0.extend(t.config.digest());
    w.str(&t.config.canonical());
    w.u64(t.step);
    let rng = t.rng.state();
    w.u64(rng.seed);
    w.u64(rng.stream);
    w.0.extend(rng.word_pos.to_le_bytes());
    let store = &t.model.store;
    w.u32(store.params.len() as u32);
    for p in &store.params {
        w.str(&p.name);
        w.u8(p.group.code());
        w.u8(p.value.shape().len() as u8);
        for d in p.value.shape() {
            w.u64(*d as u64);
        }
    }
    for p in &store.params {
        w.f32s(p.value.data());
    }
    w.u32(store.stats.len() as u32);
    for (name, s) in &store.stats {
        w.str(name);
        w.u32(s.mean.len() as u32);
        w.f64(s.momentum);
        w.f64(s.eps);
        w.f32s(&s.mean);
        w.f32s(&s.var);
    }
    for opt in [&t.opt_d, &t.opt_g, &t.opt_c] {
        w.u64(opt.step);
        for (m, v) in opt.m.iter().zip(&opt.v) {
            w.f32s(m);
            w.f32s(v);
        }
    }
    let total = (w.0.len() + CHECKSUM_LEN) as u64;
    w.0[8..16].copy_from_slice(&total.to_le_bytes());
    let sum = Sha256::digest(&w.0);
    w.0.extend(sum);
    w.0
}

/// Check the envelope (magic, version, length, checksum) and return the payload.
fn open_envelope(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 8 {
        return Err(HaliError::CheckpointTruncated(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(HaliError::CheckpointFormat("missing HALI magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(HaliError::CheckpointVersion { found: version, expected: VERSION });
    }
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(HaliError::CheckpointTruncated(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let total = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if (bytes.len() as u64) < total {
        return Err(HaliError::CheckpointTruncated(format!("{} of {total} bytes present", bytes.len())));
    }
    if bytes.len() as u64 != total {
        return Err(HaliError::CheckpointFormat(format!("{} trailing bytes", bytes.len() as u64 - total)));
    }
    let (payload, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(payload).as_slice() != sum {
        return Err(HaliError::CheckpointChecksum);
    }
    Ok(payload)
}

/// Deserialize a trainer. The embedded config is re-validated and must match
/// the stored digest; every tensor must match the rebuilt network layout.
pub fn from_bytes(bytes: &[u8]) -> Result<Trainer> {
    let payload = open_envelope(bytes)?;
    let mut r = Reader { buf: payload, pos: 16 };
    let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    let config = Config::parse(&r.str()?)?;
    if config.digest() != digest {
        return Err(HaliError::CheckpointFormat("embedded config does not match its digest".into()));
    }
    let mut t = Trainer::new(config)?;
    t.step = r.u64()?;
    let state = RngState { seed: r.u64()?, stream: r.u64()?, word_pos: r.u128()? };
    t.rng = SeededRng::from_state(state);

    let count = r.u32()? as usize;
    let store = &mut t.model.store;
    if count != store.params.len() {
        return Err(HaliError::CheckpointFormat(format!("{count} parameters stored, model has {}", store.params.len())));
    }
    let mut shapes = Vec::with_capacity(count);
    for p in &store.params {
        let name = r.str()?;
        let group = Group::from_code(r.u8()?).ok_or_else(|| HaliError::CheckpointFormat(format!("{name}: unknown group")))?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if name != p.name || group != p.group || dims != p.value.shape() {
            return Err(HaliError::CheckpointFormat(format!("manifest entry {name} {dims:?} does not match {} {:?}", p.name, p.value.shape())));
        }
        shapes.push(dims);
    }
    for (p, dims) in store.params.iter_mut().zip(shapes) {
        let n = dims.iter().product();
        p.value = Tensor::new(dims, r.f32s(n)?)?;
    }
    let count = r.u32()? as usize;
    if count != store.stats.len() {
        return Err(HaliError::CheckpointFormat(format!("{count} statistics stored, model has {}", store.stats.len())));
    }
    for (name, s) in store.stats.iter_mut() {
        let stored = r.str()?;
        let c = r.u32()? as usize;
        if stored != *name || c != s.mean.len() {
            return Err(HaliError::CheckpointFormat(format!("statistics {stored} do not match {name}")));
        }
        let momentum = r.f64()?;
        let eps = r.f64()?;
        *s = RunningStats { mean: r.f32s(c)?, var: r.f32s(c)?, momentum, eps };
    }
    for opt in [&mut t.opt_d, &mut t.opt_g, &mut t.opt_c] {
        read_adam(&mut r, opt)?;
    }
    if r.pos != payload.len() {
        return Err(HaliError::CheckpointFormat(format!("{} unread bytes", payload.len() - r.pos)));
    }
    Ok(t)
}

fn read_adam(r: &mut Reader<'_>, opt: &mut Adam) -> Result<()> {
    opt.step = r.u64()?;
    for (m, v) in opt.m.iter_mut().zip(opt.v.iter_mut()) {
        let n = m.len();
        *m = r.f32s(n)?;
        *v = r.f32s(n)?;
    }
    Ok(())
}

pub fn save(t: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(t)).map_err(|e| HaliError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Trainer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| HaliError::io(path, e))?;
    from_bytes(&bytes)
}

/// Load only the model.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    Ok(load(path)?.model)
}
