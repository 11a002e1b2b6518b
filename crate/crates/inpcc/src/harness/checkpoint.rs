//! Checkpoint container: length-prefixed named-tensor records. Fixed layout,
//! little-endian throughout, so saves are bit-reproducible and diffable.
//!
//! File = magic `INPCKPT1`, u32 record count, then per record:
//! u16 name length, name bytes, u8 dtype tag (1 = f64), u8 rank,
//! rank × u32 dims, u64 element count, elements as f64.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

const MAGIC: &[u8; 8] = b"INPCKPT1";
const DTYPE_F64: u8 = 1;

pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<Scalar>,
}

pub fn save(path: &Path, params: &[(String, Tensor)]) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::Format(format!("tensor name too long: {name}")));
        }
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(DTYPE_F64);
        let shape = tensor.shape();
        out.push(shape.len() as u8);
        for &dim in shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        let data = tensor.to_vec();
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for x in &data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Reads all records. Truncation or any malformed field is a format error;
/// nothing is applied to model state here.
pub fn load_raw(path: &Path) -> Result<Vec<(String, StoredTensor)>> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(8)? != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let count = cur.u32()?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".to_string()))?;
        let dtype = cur.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::Format(format!(
                "tensor {name} has unsupported dtype tag {dtype}"
            )));
        }
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel = cur.u64()? as usize;
        if numel != shape.iter().product::<usize>() {
            return Err(Error::Format(format!(
                "tensor {name}: element count {numel} does not match shape {shape:?}"
            )));
        }
        let raw = cur.take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        records.push((name, StoredTensor { shape, data }));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok(records)
}

/// Loads a checkpoint into an existing parameter list. Every name and shape
/// is validated before any tensor is written, so a failed load leaves the
/// model untouched.
pub fn load_into(path: &Path, params: &[(String, Tensor)]) -> Result<()> {
    let records = load_raw(path)?;
    let expected: BTreeMap<&str, &Tensor> =
        params.iter().map(|(n, t)| (n.as_str(), t)).collect();

    let unknown: Vec<&str> = records
        .iter()
        .map(|(n, _)| n.as_str())
        .filter(|n| !expected.contains_key(n))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Format(format!(
            "checkpoint contains unknown tensor names: {}",
            unknown.join(", ")
        )));
    }
    let present: std::collections::BTreeSet<&str> =
        records.iter().map(|(n, _)| n.as_str()).collect();
    let missing: Vec<&str> = expected
        .keys()
        .copied()
        .filter(|n| !present.contains(n))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Format(format!(
            "checkpoint is missing tensors: {}",
            missing.join(", ")
        )));
    }
    for (name, stored) in &records {
        let tensor = expected[name.as_str()];
        if stored.shape != tensor.shape() {
            return Err(Error::Format(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                stored.shape,
                tensor.shape()
            )));
        }
    }
    for (name, stored) in &records {
        expected[name.as_str()].set_data(&stored.data)?;
    }
    Ok(())
}
