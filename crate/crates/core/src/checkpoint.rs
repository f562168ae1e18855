//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `RANCKPT\0`, u32 version, u32 config length, config JSON, u64 seed,
//! u32 tensor count, then per tensor: u32 name length, name, u32 ndim,
//! u64 dims, f32 payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ArchConfig, ModelParams, Network};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"RANCKPT\0";
pub const VERSION: u32 = 1;

/// Serializes `params` into checkpoint bytes.
pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(&params.config).expect("config serializes");
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&params.seed.to_le_bytes());
    let named = params.named();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads and checks that the stored architecture expects rows of length `m`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, m: usize) -> Result<ModelParams> {
    let params = load_checkpoint(path)?;
    if params.config.m != m {
        return Err(Error::InvalidShape(format!(
            "checkpoint built for m = {} but data has m = {m}",
            params.config.m
        )));
    }
    Ok(params)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Integrity(format!(
                "checkpoint truncated while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses checkpoint bytes; nothing is returned unless every check passes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Integrity("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint version {version}, this build reads version {VERSION}"
        )));
    }
    let config_len = r.u32("config length")? as usize;
    let config_bytes = r.take(config_len, "config")?;
    let config: ArchConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| Error::Integrity(format!("unreadable architecture config: {e}")))?;
    let seed = r.u64("seed")?;
    let shapes = config.param_shapes()?;

    let count = r.u32("tensor count")? as usize;
    let expected = shapes.encoder.len() + shapes.decoder.len() + shapes.discriminator.len();
    if count != expected {
        return Err(Error::InvalidShape(format!(
            "checkpoint holds {count} tensors, architecture needs {expected}"
        )));
    }

    let mut nets: [Vec<Tensor<f32>>; 3] = Default::default();
    let groups = [
        (Network::Encoder, &shapes.encoder),
        (Network::Decoder, &shapes.decoder),
        (Network::Discriminator, &shapes.discriminator),
    ];
    for (slot, (net, group)) in nets.iter_mut().zip(groups) {
        for (i, want) in group.iter().enumerate() {
            let name_len = r.u32("tensor name length")? as usize;
            let name = String::from_utf8_lossy(r.take(name_len, "tensor name")?).into_owned();
            let expected_name = format!("{}.{i}", net.name());
            if name != expected_name {
                return Err(Error::Integrity(format!(
                    "expected tensor {expected_name}, found {name}"
                )));
            }
            let ndim = r.u32("tensor rank")? as usize;
            if ndim > 8 {
                return Err(Error::Integrity(format!("tensor {name} has rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64("tensor dims")? as usize);
            }
            if &shape != want {
                return Err(Error::InvalidShape(format!(
                    "tensor {name} has shape {shape:?}, architecture needs {want:?}"
                )));
            }
            let numel: usize = shape.iter().product();
            let payload = r.take(numel * 4, "tensor payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            slot.push(Tensor::new(shape, data)?);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Integrity(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    let [encoder, decoder, discriminator] = nets;
    Ok(ModelParams {
        config,
        seed,
        encoder,
        decoder,
        discriminator,
    })
}
