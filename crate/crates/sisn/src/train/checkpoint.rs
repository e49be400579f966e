//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! ```text
//! magic    8 bytes  b"SISNCKPT"
//! version  u32
//! cfg_len  u64, then cfg_len bytes of JSON-serialized TrainConfig
//! epoch    u64
//! n_params u64
//! n_params tensor records, in ModelParams::named() order:
//!   name_len u64, name bytes, dtype u8 (2 = f64), dims 4×u64, payload f64 LE
//! adam     u8 (0 = absent, 1 = present)
//!   if present: t u64, then n_params f64 payloads for m, then for v
//!   (moment shapes mirror the parameter list)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, SisnError};
use crate::model::ModelParams;
use crate::tensor::{AdamState, Tensor};

use super::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SISNCKPT";
const DTYPE_F64: u8 = 2;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub epoch: usize,
}

fn ck_err(msg: impl Into<String>) -> SisnError {
    SisnError::Checkpoint(msg.into())
}

fn write_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_payload(out: &mut Vec<u8>, t: &Tensor) {
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ck.version.to_le_bytes());
    let cfg = serde_json::to_vec(&ck.config)
        .map_err(|e| ck_err(format!("config serialization failed: {e}")))?;
    write_u64(&mut out, cfg.len() as u64);
    out.extend_from_slice(&cfg);
    write_u64(&mut out, ck.epoch as u64);

    let named = ck.params.named();
    write_u64(&mut out, named.len() as u64);
    for (name, t) in &named {
        write_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        for d in t.shape {
            write_u64(&mut out, d as u64);
        }
        write_payload(&mut out, t);
    }

    match &ck.adam {
        None => out.push(0),
        Some(adam) => {
            if adam.m.len() != named.len() {
                return Err(ck_err(format!(
                    "adam state has {} moment slots for {} parameters",
                    adam.m.len(),
                    named.len()
                )));
            }
            out.push(1);
            write_u64(&mut out, adam.t);
            for t in &adam.m {
                write_payload(&mut out, t);
            }
            for t in &adam.v {
                write_payload(&mut out, t);
            }
        }
    }
    Ok(out)
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let mut f = std::fs::File::create(path)
        .map_err(|e| SisnError::Io { path: path.into(), source: e })?;
    f.write_all(&bytes)
        .map_err(|e| SisnError::Io { path: path.into(), source: e })?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(ck_err("file truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn payload(&mut self, numel: usize) -> Result<Vec<f64>> {
        let mut r = self.take(numel * 8)?;
        let mut data = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        while r.read_exact(&mut b).is_ok() {
            data.push(f64::from_le_bytes(b));
        }
        Ok(data)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != MAGIC {
        return Err(ck_err("bad magic; not a checkpoint file"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ck_err(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let cfg_len = r.u64()? as usize;
    let config: TrainConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| ck_err(format!("bad embedded config: {e}")))?;
    config.validate()?;
    let epoch = r.u64()? as usize;

    // The architecture config fixes the parameter skeleton; stored tensors
    // must match it name-for-name and shape-for-shape.
    let mut params = ModelParams::init(&config.model, config.seed);
    let expected: Vec<(String, [usize; 4])> = params
        .named()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape))
        .collect();

    let n_params = r.u64()? as usize;
    if n_params != expected.len() {
        return Err(ck_err(format!(
            "checkpoint stores {n_params} tensors but the config implies {}",
            expected.len()
        )));
    }
    let mut slots = params.flat_mut();
    for (i, (exp_name, exp_shape)) in expected.iter().enumerate() {
        let name_len = r.u64()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ck_err("tensor name is not UTF-8"))?;
        if name != exp_name {
            return Err(ck_err(format!(
                "tensor {i} is named '{name}' but the config implies '{exp_name}'"
            )));
        }
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(ck_err(format!("tensor '{name}' has unsupported dtype {dtype}")));
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u64()? as usize;
        }
        if shape != *exp_shape {
            return Err(ck_err(format!(
                "tensor '{name}' has shape {shape:?} but the config implies {exp_shape:?}"
            )));
        }
        slots[i].data = r.payload(slots[i].numel())?;
    }

    let adam = match r.u8()? {
        0 => None,
        1 => {
            let refs: Vec<&Tensor> = slots.iter().map(|t| &**t).collect();
            let mut adam = AdamState::new(&refs);
            adam.t = r.u64()?;
            for t in &mut adam.m {
                t.data = r.payload(t.numel())?;
            }
            for t in &mut adam.v {
                t.data = r.payload(t.numel())?;
            }
            Some(adam)
        }
        flag => return Err(ck_err(format!("bad adam presence flag {flag}"))),
    };
    // drop the mutable view before moving params out
    drop(slots);
    if !r.buf.is_empty() {
        return Err(ck_err(format!("{} trailing bytes after checkpoint", r.buf.len())));
    }
    Ok(Checkpoint { version, config, params, adam, epoch })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes =
        std::fs::read(path).map_err(|e| SisnError::Io { path: path.into(), source: e })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SisnConfig;
    use tempfile::tempdir;

    fn toy_checkpoint() -> Checkpoint {
        let config = TrainConfig::defaults(SisnConfig::toy(2));
        let params = ModelParams::init(&config.model, config.seed);
        let named = params.named();
        let refs: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        let mut adam = AdamState::new(&refs);
        adam.t = 17;
        adam.m[0].data[0] = 0.25;
        adam.v[3].data[0] = 1.5;
        drop(named);
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            params,
            adam: Some(adam),
            epoch: 42,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = toy_checkpoint();
        let bytes = encode_checkpoint(&ck).unwrap();
        let decoded = decode_checkpoint(&bytes).unwrap();
        let bytes2 = encode_checkpoint(&decoded).unwrap();
        assert_eq!(bytes, bytes2);
        assert_eq!(decoded.epoch, 42);
        assert_eq!(decoded.adam.as_ref().unwrap().t, 17);
        assert_eq!(decoded.adam.as_ref().unwrap().m[0].data[0], 0.25);
    }

    #[test]
    fn save_and_load_via_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = toy_checkpoint();
        save_checkpoint(&ck, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        for ((na, ta), (nb, tb)) in ck.params.named().iter().zip(loaded.params.named().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data, tb.data);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_checkpoint(&toy_checkpoint()).unwrap();
        bytes[0] = b'X';
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert_eq!(err.class(), "checkpoint");
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = encode_checkpoint(&toy_checkpoint()).unwrap();
        bytes[8] = 99;
        assert!(decode_checkpoint(&bytes).is_err());
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode_checkpoint(&toy_checkpoint()).unwrap();
        let err = decode_checkpoint(&bytes[..bytes.len() - 9]).unwrap_err();
        assert_eq!(err.class(), "checkpoint");
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        // Encode under one architecture, decode claiming another.
        let mut ck = toy_checkpoint();
        let bytes = encode_checkpoint(&ck).unwrap();
        ck.config.model.channels = 32;
        let other = serde_json::to_vec(&ck.config).unwrap();
        // splice: magic+version, new cfg, rest unchanged
        let cfg_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let mut spliced = bytes[..12].to_vec();
        spliced.extend_from_slice(&(other.len() as u64).to_le_bytes());
        spliced.extend_from_slice(&other);
        spliced.extend_from_slice(&bytes[20 + cfg_len..]);
        let err = decode_checkpoint(&spliced).unwrap_err();
        assert!(err.to_string().contains("coarse.w"), "{err}");
    }

    #[test]
    fn adam_absent_round_trips() {
        let mut ck = toy_checkpoint();
        ck.adam = None;
        let bytes = encode_checkpoint(&ck).unwrap();
        let decoded = decode_checkpoint(&bytes).unwrap();
        assert!(decoded.adam.is_none());
    }
}
