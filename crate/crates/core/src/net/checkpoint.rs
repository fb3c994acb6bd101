//! Binary checkpoints.
//!
//! ```text
//! magic     8 bytes  "RBKCKPT\0"
//! version   u32 LE
//! json_len  u32 LE
//! json      header: configs, metadata and a manifest of (name, shape, offset)
//! payload   little-endian f32 blobs, offsets in elements from payload start
//! ```

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{Generator, GeneratorConfig};
use super::params::{Param, Params};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RBKCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Training steps taken.
    pub step: u64,
    pub seed: u64,
    /// SHA-256 over the loss history, hex encoded.
    pub loss_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub generator: Generator<f32>,
    pub discriminator: Option<Discriminator<f32>>,
    pub opt_g: Option<AdamState<f32>>,
    pub opt_d: Option<AdamState<f32>>,
    /// Counter of the next random stream to draw from.
    pub rng_state: u64,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    generator: GeneratorConfig,
    discriminator: Option<DiscriminatorConfig>,
    opt_g: Option<OptHeader>,
    opt_d: Option<OptHeader>,
    rng_state: u64,
    meta: CheckpointMeta,
    manifest: Vec<ManifestEntry>,
}

fn push_group(prefix: &str, params: &Params<f32>, manifest: &mut Vec<ManifestEntry>, blob: &mut Vec<f32>) {
    for p in &params.entries {
        manifest.push(ManifestEntry {
            name: format!("{prefix}/{}", p.name),
            shape: p.shape.clone(),
            offset: blob.len(),
        });
        blob.extend_from_slice(&p.data);
    }
}

/// Serialize a checkpoint to bytes.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut manifest = Vec::new();
    let mut blob = Vec::new();
    push_group("generator", ck.generator.params(), &mut manifest, &mut blob);
    if let Some(d) = &ck.discriminator {
        push_group("discriminator", d.params(), &mut manifest, &mut blob);
    }
    for (name, opt) in [("opt_g", &ck.opt_g), ("opt_d", &ck.opt_d)] {
        if let Some(o) = opt {
            push_group(&format!("{name}.m"), &o.m, &mut manifest, &mut blob);
            push_group(&format!("{name}.v"), &o.v, &mut manifest, &mut blob);
        }
    }
    let opt_header = |o: &Option<AdamState<f32>>| {
        o.as_ref().map(|o| OptHeader {
            config: o.config,
            step: o.step,
        })
    };
    let header = Header {
        generator: *ck.generator.config(),
        discriminator: ck.discriminator.as_ref().map(|d| d.config().clone()),
        opt_g: opt_header(&ck.opt_g),
        opt_d: opt_header(&ck.opt_d),
        rng_state: ck.rng_state,
        meta: ck.meta.clone(),
        manifest,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let start = out.len();
    out.resize(start + 4 * blob.len(), 0);
    LittleEndian::write_f32_into(&blob, &mut out[start..]);
    Ok(out)
}

struct Reader<'a> {
    manifest: std::slice::Iter<'a, ManifestEntry>,
    payload: &'a [f32],
}

impl Reader<'_> {
    /// Rebuild `template`'s layout under `prefix` from the next manifest entries.
    fn group(&mut self, prefix: &str, template: &Params<f32>) -> Result<Params<f32>> {
        let mut entries = Vec::with_capacity(template.entries.len());
        for t in &template.entries {
            let e = self
                .manifest
                .next()
                .ok_or_else(|| Error::BadCheckpoint("manifest too short".into()))?;
            let want = format!("{prefix}/{}", t.name);
            if e.name != want || e.shape != t.shape {
                return Err(Error::BadCheckpoint(format!("expected {want} {:?}, found {} {:?}", t.shape, e.name, e.shape)));
            }
            let data = self
                .payload
                .get(e.offset..e.offset + t.data.len())
                .ok_or_else(|| Error::BadCheckpoint(format!("{} runs past the payload", e.name)))?;
            entries.push(Param {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: data.to_vec(),
            });
        }
        Ok(Params { entries })
    }
}

/// Parse a checkpoint from bytes.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::BadCheckpoint("missing magic".into()));
    }
    let version = LittleEndian::read_u32(&bytes[8..12]);
    if version != FORMAT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let json_len = LittleEndian::read_u32(&bytes[12..16]) as usize;
    let json = bytes
        .get(16..16 + json_len)
        .ok_or_else(|| Error::BadCheckpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    let raw = &bytes[16 + json_len..];
    if raw.len() % 4 != 0 {
        return Err(Error::BadCheckpoint("payload is not a whole number of f32".into()));
    }
    let mut payload = vec![0f32; raw.len() / 4];
    LittleEndian::read_f32_into(raw, &mut payload);
    let expected: usize = header
        .manifest
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if expected != payload.len() {
        return Err(Error::BadCheckpoint(format!(
            "payload holds {} values, manifest describes {expected}",
            payload.len()
        )));
    }

    let bad = |e: Error| Error::BadCheckpoint(e.to_string());
    let mut reader = Reader {
        manifest: header.manifest.iter(),
        payload: &payload,
    };
    let g_template = Generator::<f32>::new(header.generator, 0).map_err(bad)?;
    let generator =
        Generator::from_params(header.generator, reader.group("generator", g_template.params())?).map_err(bad)?;
    let discriminator = match &header.discriminator {
        Some(c) => {
            let t = Discriminator::<f32>::new(c.clone(), 0).map_err(bad)?;
            Some(Discriminator::from_params(c.clone(), reader.group("discriminator", t.params())?).map_err(bad)?)
        }
        None => None,
    };
    let mut read_opt = |name: &str, h: &Option<OptHeader>, template: Option<&Params<f32>>| -> Result<_> {
        match (h, template) {
            (None, _) => Ok(None),
            (Some(_), None) => Err(Error::BadCheckpoint(format!("{name} without its model"))),
            (Some(h), Some(t)) => Ok(Some(AdamState {
                config: h.config,
                step: h.step,
                m: reader.group(&format!("{name}.m"), t)?,
                v: reader.group(&format!("{name}.v"), t)?,
            })),
        }
    };
    let opt_g = read_opt("opt_g", &header.opt_g, Some(generator.params()))?;
    let opt_d = read_opt("opt_d", &header.opt_d, discriminator.as_ref().map(|d| d.params()))?;
    if reader.manifest.next().is_some() {
        return Err(Error::BadCheckpoint("unused manifest entries".into()));
    }
    Ok(Checkpoint {
        generator,
        discriminator,
        opt_g,
        opt_d,
        rng_state: header.rng_state,
        meta: header.meta,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ck)?).map_err(Error::Write)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    decode_checkpoint(&bytes)
}
