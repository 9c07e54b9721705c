//! Binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       b"GMCK"
//! version     u16
//! step        u64
//! model cfg   u32 len + UTF-8 key=value text
//! run cfg     u32 len + UTF-8 key=value text
//! groups      u32 count, then per group: name (u16 len + UTF-8), u32 tensor count,
//!             then per tensor: name, u8 rank, u32 dims, f64 values
//! optimizer   u8 present flag; if set: u64 step count, u32 entry count, then per
//!             entry: name, u8 rank, u32 dims, f64 first moment, f64 second moment
//! checksum    u32 CRC-32 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use geomeld_autograd::Tensor;

use super::{ModelConfig, ModelError, ModelState, ParamStore};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// AdamW moments keyed by `group/param`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub t: u64,
    pub moments: Vec<(String, Tensor, Tensor)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub run_config: String,
    pub model: ModelState,
    pub optimizer: Option<OptimizerSnapshot>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&ck.step.to_le_bytes());
    put_str32(&mut buf, &ck.model.config.to_text());
    put_str32(&mut buf, &ck.run_config);
    let groups = ck.model.groups();
    buf.extend_from_slice(&(groups.len() as u32).to_le_bytes());
    for (name, store) in groups {
        put_str16(&mut buf, &name);
        buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
        for (pname, t) in store.iter() {
            put_str16(&mut buf, pname);
            put_shape(&mut buf, t.shape());
            put_values(&mut buf, t.data());
        }
    }
    match &ck.optimizer {
        None => buf.push(0),
        Some(opt) => {
            buf.push(1);
            buf.extend_from_slice(&opt.t.to_le_bytes());
            buf.extend_from_slice(&(opt.moments.len() as u32).to_le_bytes());
            for (name, m, v) in &opt.moments {
                put_str16(&mut buf, name);
                put_shape(&mut buf, m.shape());
                put_values(&mut buf, m.data());
                put_values(&mut buf, v.data());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic bytes".into()));
    }
    if bytes.len() < 10 {
        return Err(ModelError::Checkpoint("truncated header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ModelError::Checkpoint(format!(
            "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }
    let mut r = Reader { buf: body, pos: 6 };
    let step = r.u64()?;
    let config = ModelConfig::from_text(&r.str32()?)?;
    let run_config = r.str32()?;
    let mut model = ModelState::new(config)?;
    let n_groups = r.u32()? as usize;
    let mut seen = Vec::new();
    for _ in 0..n_groups {
        let gname = r.str16()?;
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let pname = r.str16()?;
            let shape = r.shape()?;
            let n = shape.iter().product();
            store.insert(pname, Tensor::new(shape, r.values(n)?)?);
        }
        let slot = group_mut(&mut model, &gname)?;
        if !slot.same_layout(&store) {
            return Err(ModelError::Checkpoint(format!("group {gname} does not match the model layout")));
        }
        *slot = store;
        seen.push(gname);
    }
    let expected: Vec<String> = model.groups().into_iter().map(|(n, _)| n).collect();
    if seen != expected {
        return Err(ModelError::Checkpoint(format!("expected groups {expected:?}, found {seen:?}")));
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let t = r.u64()?;
            let count = r.u32()? as usize;
            let mut moments = Vec::with_capacity(count);
            for _ in 0..count {
                let name = r.str16()?;
                let shape = r.shape()?;
                let n = shape.iter().product();
                let m = Tensor::new(shape.clone(), r.values(n)?)?;
                let v = Tensor::new(shape, r.values(n)?)?;
                moments.push((name, m, v));
            }
            Some(OptimizerSnapshot { t, moments })
        }
        f => return Err(ModelError::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    if r.pos != body.len() {
        return Err(ModelError::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint { step, run_config, model, optimizer })
}

fn group_mut<'a>(model: &'a mut ModelState, name: &str) -> Result<&'a mut ParamStore, ModelError> {
    let store = match name {
        "theta" => &mut model.theta,
        "xi" => &mut model.xi,
        "phi" => &mut model.phi,
        "dec" => &mut model.dec,
        "psi" => &mut model.psi,
        "proj_v" => &mut model.proj_v,
        "proj_t" => &mut model.proj_t,
        other => {
            return other
                .strip_prefix("dec.")
                .and_then(super::Modality::from_key)
                .and_then(|m| model.decoders.get_mut(&m))
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter group {other}")));
        }
    };
    Ok(store)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), ModelError> {
    let io = |source| ModelError::Io { path: path.display().to_string(), source };
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&encode_checkpoint(ck)).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    decode_checkpoint(&bytes)
}

fn put_str16(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_str32(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_shape(buf: &mut Vec<u8>, shape: &[usize]) {
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn put_values(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::Checkpoint(format!("need {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn utf8(&mut self, n: usize) -> Result<String, ModelError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelError::Checkpoint("invalid UTF-8".into()))
    }

    fn str16(&mut self) -> Result<String, ModelError> {
        let n = u16::from_le_bytes(self.array()?) as usize;
        self.utf8(n)
    }

    fn str32(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        self.utf8(n)
    }

    fn shape(&mut self) -> Result<Vec<usize>, ModelError> {
        let rank = self.u8()? as usize;
        (0..rank).map(|_| self.u32().map(|d| d as usize)).collect()
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| ModelError::Checkpoint("tensor too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}
