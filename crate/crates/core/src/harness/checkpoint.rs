//! Binary checkpoint format.
//!
//! ```text
//! "MAEDCKPT" | version u32 | count u32 |
//!   per entry: name_len u16 | name | dtype u8 | rank u8 | extents u32 * rank | values
//! ```
//!
//! All integers and values are little-endian. Dtype 0 is `f32`, 1 is `f64`.

use std::io::{Read, Write};
use std::path::Path;

use super::config::Dtype;
use crate::nn::{named_params, Module};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MAEDCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn write_entries(w: &mut impl Write, entries: &[Entry]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(
        &u32::try_from(entries.len())
            .map_err(|_| Error::Checkpoint("too many entries".into()))?
            .to_le_bytes(),
    )?;
    for e in entries {
        let name = e.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {}", e.name)))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[match e.dtype {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }])?;
        let rank = u8::try_from(e.shape.len()).map_err(|_| Error::Checkpoint(format!("rank too large: {}", e.name)))?;
        w.write_all(&[rank])?;
        for &d in &e.shape {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("extent too large: {}", e.name)))?;
            w.write_all(&d.to_le_bytes())?;
        }
        if e.values.len() != e.shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!(
                "{}: value count does not match shape",
                e.name
            )));
        }
        let mut buf = Vec::with_capacity(e.values.len() * 8);
        for &v in &e.values {
            match e.dtype {
                Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(b)
}

pub fn read_entries(r: &mut impl Read) -> Result<Vec<Entry>> {
    if &read_array::<8>(r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_array(r)?) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(read_array(r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let dtype = match read_array::<1>(r)?[0] {
            0 => Dtype::F32,
            1 => Dtype::F64,
            t => return Err(Error::Checkpoint(format!("{name}: unknown dtype tag {t}"))),
        };
        let rank = read_array::<1>(r)?[0] as usize;
        let shape = (0..rank)
            .map(|_| Ok(u32::from_le_bytes(read_array(r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let width = if dtype == Dtype::F32 { 4 } else { 8 };
        let mut raw = vec![0u8; n * width];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Checkpoint(format!("{name}: truncated values: {e}")))?;
        let values = match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        };
        out.push(Entry {
            name,
            dtype,
            shape,
            values,
        });
    }
    Ok(out)
}

pub fn save(path: &Path, model: &dyn Module, dtype: Dtype) -> Result<()> {
    let entries: Vec<Entry> = named_params(model)
        .into_iter()
        .map(|(name, t)| Entry {
            name,
            dtype,
            shape: t.shape().to_vec(),
            values: t.to_vec(),
        })
        .collect();
    let mut buf = Vec::new();
    write_entries(&mut buf, &entries)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Loads parameters by name. Any missing, unexpected or reshaped entry is
/// reported together in one error.
pub fn load_into(path: &Path, model: &mut dyn Module) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let entries = read_entries(&mut bytes.as_slice())?;
    let mut by_name: std::collections::HashMap<&str, &Entry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut problems = Vec::new();
    let mut loaded = Vec::new();
    for (name, t) in named_params(model) {
        match by_name.remove(name.as_str()) {
            None => problems.push(format!("missing {name} {:?}", t.shape())),
            Some(e) if e.shape != t.shape() => {
                problems.push(format!("{name}: checkpoint {:?}, model {:?}", e.shape, t.shape()))
            }
            Some(e) => loaded.push(Tensor::param(t.shape(), e.values.clone())?),
        }
    }
    let mut extra: Vec<_> = by_name.keys().collect();
    extra.sort();
    problems.extend(extra.into_iter().map(|n| format!("unexpected {n}")));
    if !problems.is_empty() {
        return Err(Error::Checkpoint(format!(
            "shape mismatch:\n  {}",
            problems.join("\n  ")
        )));
    }
    let mut it = loaded.into_iter();
    model.visit_mut("", &mut |_, t| *t = it.next().expect("one entry per parameter"));
    Ok(())
}
