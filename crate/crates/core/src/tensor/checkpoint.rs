//! The `VGCK` parameter container.
//!
//! Layout, all integers little-endian:
//! `"VGCK"`, version `u32`, count `u32`, then per tensor: name length `u32`,
//! UTF-8 name, rank `u32`, rank × extent `u32`, `f32` values. A second block
//! (count `u32` + tensors in the same layout) carries optimizer state.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VGCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, tensor: Tensor<f32>) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<NamedTensor>,
    pub optimizer: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn param(&self, name: &str) -> Option<&Tensor<f32>> {
        find(&self.params, name)
    }

    pub fn optimizer_entry(&self, name: &str) -> Option<&Tensor<f32>> {
        find(&self.optimizer, name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_block(&mut out, &self.params);
        write_block(&mut out, &self.optimizer);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let params = read_block(&mut r)?;
        let optimizer = read_block(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { params, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn find<'a>(block: &'a [NamedTensor], name: &str) -> Option<&'a Tensor<f32>> {
    block.iter().find(|t| t.name == name).map(|t| &t.tensor)
}

fn write_block(out: &mut Vec<u8>, block: &[NamedTensor]) {
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    for t in block {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.tensor.shape().len() as u32).to_le_bytes());
        for &d in t.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_block(r: &mut &[u8]) -> Result<Vec<NamedTensor>> {
    let count = read_u32(r)? as usize;
    let mut block = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        if len > r.len() {
            return Err(Error::Checkpoint("truncated name".into()));
        }
        let mut name = vec![0u8; len];
        read_exact(r, &mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n.saturating_mul(4) > r.len() {
            return Err(Error::Checkpoint(format!("truncated data for {name}")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 4];
            read_exact(r, &mut b)?;
            data.push(f32::from_le_bytes(b));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        block.push(NamedTensor { name, tensor });
    }
    Ok(block)
}
