//! Versioned named-array container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"DMNA"
//! version u32
//! count   u32
//! count × {
//!     name_len u32, name utf-8 bytes,
//!     dtype    u8    (0 = f64, 1 = f32, 2 = i64, 3 = u8),
//!     ndim     u32,  dims u64 × ndim,
//!     payload  product(dims) × sizeof(dtype) bytes
//! }
//! ```
//!
//! Strings are stored as one-dimensional `u8` arrays.

use std::path::Path;

use crate::error::{ensure, Error, Result};

pub const MAGIC: &[u8; 4] = b"DMNA";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I64(Vec<i64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn tag(&self) -> u8 {
        match self {
            ArrayData::F64(_) => 0,
            ArrayData::F32(_) => 1,
            ArrayData::I64(_) => 2,
            ArrayData::U8(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::I64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces an array.
    pub fn insert(&mut self, array: NamedArray) -> Result<()> {
        ensure!(
            array.shape.iter().product::<usize>() == array.data.len(),
            Validation,
            "array '{}' has {} values for shape {:?}",
            array.name,
            array.data.len(),
            array.shape
        );
        ensure!(
            array.name.len() <= u32::MAX as usize,
            Validation,
            "array name too long"
        );
        match self.arrays.iter_mut().find(|a| a.name == array.name) {
            Some(slot) => *slot = array,
            None => self.arrays.push(array),
        }
        Ok(())
    }

    pub fn put_f64(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<()> {
        self.insert(NamedArray {
            name: name.into(),
            shape: shape.to_vec(),
            data: ArrayData::F64(data),
        })
    }

    pub fn put_str(&mut self, name: impl Into<String>, value: &str) -> Result<()> {
        let bytes = value.as_bytes().to_vec();
        self.insert(NamedArray {
            name: name.into(),
            shape: vec![bytes.len()],
            data: ArrayData::U8(bytes),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|a| a.name.as_str())
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn f64(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name) {
            Some(NamedArray {
                shape,
                data: ArrayData::F64(v),
                ..
            }) => Ok((shape, v)),
            Some(_) => Err(Error::Format(format!("array '{name}' is not f64"))),
            None => Err(Error::Format(format!("missing array '{name}'"))),
        }
    }

    pub fn str(&self, name: &str) -> Result<String> {
        match self.get(name) {
            Some(NamedArray {
                data: ArrayData::U8(v), ..
            }) => String::from_utf8(v.clone()).map_err(|_| Error::Format(format!("array '{name}' is not utf-8"))),
            Some(_) => Err(Error::Format(format!("array '{name}' is not a string"))),
            None => Err(Error::Format(format!("missing array '{name}'"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.data.tag());
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &a.data {
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        ensure!(r.take(4)? == MAGIC, Format, "not a named-array container (bad magic)");
        let version = r.u32()?;
        ensure!(version == VERSION, Format, "unsupported container version {version}");
        let count = r.u32()? as usize;
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("array name is not utf-8".into()))?;
            let tag = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("array '{name}' shape overflows")))?;
            let data = match tag {
                0 => ArrayData::F64(
                    r.take(n.checked_mul(8).ok_or_else(overflow)?)?
                        .chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                1 => ArrayData::F32(
                    r.take(n.checked_mul(4).ok_or_else(overflow)?)?
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                2 => ArrayData::I64(
                    r.take(n.checked_mul(8).ok_or_else(overflow)?)?
                        .chunks_exact(8)
                        .map(|b| i64::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
                3 => ArrayData::U8(r.take(n)?.to_vec()),
                t => return Err(Error::Format(format!("array '{name}' has unknown dtype tag {t}"))),
            };
            c.insert(NamedArray { name, shape, data })?;
        }
        ensure!(r.pos == bytes.len(), Format, "trailing bytes after last array");
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn overflow() -> Error {
    Error::Format("array payload size overflows".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
