use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::matrix::DenseMatrix;
use super::mlp::{Activation, Layer, MlpModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DGRLCKPT";
const VERSION: u32 = 1;

/// Section kind tags inside the checkpoint container.
pub const SECTION_MLP: [u8; 4] = *b"MLP\0";
pub const SECTION_CODEBOOK: [u8; 4] = *b"VQCB";

/// One named payload inside a checkpoint.
#[derive(Debug, Clone)]
pub struct Section {
    pub kind: [u8; 4],
    pub name: String,
    pub payload: Vec<u8>,
}

/// Versioned container: self-describing header with the total MLP parameter
/// count, followed by named sections. All scalars little-endian, all real
/// arrays raw 64-bit.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_model(&mut self, name: &str, model: &MlpModel) {
        self.sections.push(Section {
            kind: SECTION_MLP,
            name: name.to_string(),
            payload: encode_mlp(model),
        });
    }

    pub fn add_raw(&mut self, kind: [u8; 4], name: &str, payload: Vec<u8>) {
        self.sections.push(Section {
            kind,
            name: name.to_string(),
            payload,
        });
    }

    pub fn model(&self, name: &str) -> Result<MlpModel> {
        let section = self
            .sections
            .iter()
            .find(|s| s.kind == SECTION_MLP && s.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no model section '{name}'")))?;
        decode_mlp(&section.payload)
    }

    pub fn raw(&self, kind: [u8; 4], name: &str) -> Result<&[u8]> {
        self.sections
            .iter()
            .find(|s| s.kind == kind && s.name == name)
            .map(|s| s.payload.as_slice())
            .ok_or_else(|| Error::Format(format!("checkpoint has no section '{name}'")))
    }

    fn declared_param_count(&self) -> u64 {
        self.sections
            .iter()
            .filter(|s| s.kind == SECTION_MLP)
            .map(|s| {
                decode_mlp(&s.payload)
                    .map(|m| m.param_count() as u64)
                    .unwrap_or(0)
            })
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.declared_param_count().to_le_bytes())?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for s in &self.sections {
            w.write_all(&s.kind)?;
            let name = s.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(s.payload.len() as u64).to_le_bytes())?;
            w.write_all(&s.payload)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let declared = read_u64(&mut r)?;
        let n_sections = read_u32(&mut r)? as usize;
        let mut sections = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            let mut kind = [0u8; 4];
            r.read_exact(&mut kind)?;
            let name_len = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let payload_len = read_u64(&mut r)? as usize;
            let mut payload = vec![0u8; payload_len];
            r.read_exact(&mut payload)?;
            sections.push(Section {
                kind,
                name: String::from_utf8(name)
                    .map_err(|_| Error::Format("non-utf8 section name".into()))?,
                payload,
            });
        }
        let ckpt = Self { sections };
        let actual = ckpt.declared_param_count();
        if actual != declared {
            return Err(Error::Format(format!(
                "checkpoint declares {declared} parameters but sections hold {actual}"
            )));
        }
        Ok(ckpt)
    }
}

fn encode_mlp(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        out.push(layer.activation.tag());
        write_f64s(&mut out, layer.weights.as_slice());
        write_f64s(&mut out, &layer.bias);
    }
    out
}

fn decode_mlp(payload: &[u8]) -> Result<MlpModel> {
    let mut cur = payload;
    let n_layers = take_u32(&mut cur)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = take_u32(&mut cur)? as usize;
        let out_dim = take_u32(&mut cur)? as usize;
        let act = Activation::from_tag(take_u8(&mut cur)?)?;
        let weights = take_f64s(&mut cur, in_dim * out_dim)?;
        let bias = take_f64s(&mut cur, out_dim)?;
        layers.push(Layer {
            weights: DenseMatrix::from_vec(out_dim, in_dim, weights)?,
            bias,
            activation: act,
        });
    }
    MlpModel::from_layers(layers)
}

pub(crate) fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn take_f64s(cur: &mut &[u8], count: usize) -> Result<Vec<f64>> {
    let bytes = count * 8;
    if cur.len() < bytes {
        return Err(Error::Format("checkpoint section truncated".into()));
    }
    let (head, rest) = cur.split_at(bytes);
    *cur = rest;
    Ok(head
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn take_u32(cur: &mut &[u8]) -> Result<u32> {
    if cur.len() < 4 {
        return Err(Error::Format("checkpoint section truncated".into()));
    }
    let (head, rest) = cur.split_at(4);
    *cur = rest;
    Ok(u32::from_le_bytes(head.try_into().unwrap()))
}

pub(crate) fn take_u8(cur: &mut &[u8]) -> Result<u8> {
    if cur.is_empty() {
        return Err(Error::Format("checkpoint section truncated".into()));
    }
    let v = cur[0];
    *cur = &cur[1..];
    Ok(v)
}

pub(crate) fn write_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn take_f64(cur: &mut &[u8]) -> Result<f64> {
    Ok(take_f64s(cur, 1)?[0])
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
