//! Named-tensor container used for checkpoints and exported features.
//!
//! Layout: `GPCTNS`, version byte, u32 metadata length, metadata as
//! `key = value` text, u32 tensor count, then per tensor: u16 name length,
//! name, dtype byte (1 = f32, 2 = f64), u8 rank, u32 dims, little-endian
//! payload.

use crate::binio::{put_u32, Reader};
use crate::error::{Error, Result};
use crate::keyvalue::{parse_entries, render, Entry};

pub const MAGIC: &[u8] = b"GPCTNS";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<Tensor>,
}

impl TensorFile {
    pub fn meta_entries(&self) -> Vec<Entry> {
        self.meta
            .iter()
            .enumerate()
            .map(|(i, (k, v))| Entry { line: i + 1, key: k.clone(), value: v.clone() })
            .collect()
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(format!("tensor '{name}' is missing")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.push(VERSION);
        let pairs: Vec<(&str, String)> = self.meta.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        let text = render(&pairs);
        put_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        put_u32(&mut out, self.tensors.len())?;
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::format(format!("tensor '{}' shape does not match its data", t.name)));
            }
            let name_len = u16::try_from(t.name.len()).map_err(|_| Error::format("tensor name too long"))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.data.dtype());
            out.push(u8::try_from(t.shape.len()).map_err(|_| Error::format("tensor rank too large"))?);
            for &d in &t.shape {
                put_u32(&mut out, d)?;
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "tensor file");
        r.header(MAGIC, VERSION)?;
        let meta_len = r.len_u32()?;
        let text = std::str::from_utf8(r.take(meta_len)?).map_err(|_| Error::format("tensor file metadata is not UTF-8"))?;
        let meta = parse_entries(text)?.into_iter().map(|e| (e.key, e.value)).collect();
        let count = r.len_u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::format("tensor name is not UTF-8"))?;
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.len_u32()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format("tensor shape overflows"))?;
            let data = match dtype {
                1 => TensorData::F32(r.take(n.checked_mul(4).ok_or_else(|| Error::format("tensor too large"))?)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect()),
                2 => TensorData::F64(r.take(n.checked_mul(8).ok_or_else(|| Error::format("tensor too large"))?)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                    .collect()),
                other => return Err(Error::format(format!("tensor '{name}' has unknown dtype {other}"))),
            };
            tensors.push(Tensor { name, shape, data });
        }
        r.finish()?;
        Ok(TensorFile { meta, tensors })
    }
}
