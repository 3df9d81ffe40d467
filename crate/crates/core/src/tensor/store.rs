//! Named parameter storage and the checkpoint archive format.
//!
//! Archive layout (all integers little-endian): the magic `MRPTENS1`, a
//! `u64` entry count, then per entry a `u32` name length, the UTF-8 name,
//! a `u32` rank, `rank` `u64` extents and the `f64` values.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use thiserror::Error;

use super::{numel, Tensor};

const MAGIC: &[u8; 8] = b"MRPTENS1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a tensor archive")]
    Magic,
    #[error("tensor name is not UTF-8")]
    Name,
    #[error("archive has no tensor `{0}`")]
    Missing(String),
    #[error("tensor `{name}` has shape {found:?} in the archive, model expects {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_archive<W: Write>(mut w: W, entries: &[ArchiveEntry]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for e in entries {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_archive<R: Read>(mut r: R) -> Result<Vec<ArchiveEntry>, CheckpointError> {
    let mut magic = [0; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Name)?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(numel(&shape));
        for _ in 0..numel(&shape) {
            data.push(f64::from_bits(read_u64(&mut r)?));
        }
        out.push(ArchiveEntry { name, shape, data });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform on `(-a, a)`.
    Uniform(f64),
    /// Normal with standard deviation `1/sqrt(fan_in)`, fan-in taken from the
    /// first extent.
    ScaledNormal,
}

impl Init {
    fn sample<R: Rng>(self, shape: &[usize], rng: &mut R) -> Vec<f64> {
        let n = numel(shape);
        match self {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(a) => {
                let d = Uniform::new(-a, a);
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Init::ScaledNormal => {
                let fan_in = shape.first().copied().unwrap_or(1).max(1) as f64;
                let d = Normal::new(0.0, 1.0 / fan_in.sqrt()).expect("positive std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
        }
    }
}

/// Parameters keyed by name, iterated in name order.
#[derive(Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Create a parameter. Names must be unique.
    pub fn add<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> Tensor {
        assert!(!self.params.contains_key(name), "duplicate parameter `{name}`");
        let t = Tensor::param(shape, init.sample(shape, rng)).expect("sampled to size");
        self.params.insert(name.to_string(), t.clone());
        t
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&self) {
        self.params.values().for_each(Tensor::zero_grad);
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.values().cloned().collect()
    }

    pub fn entries(&self) -> Vec<ArchiveEntry> {
        self.params
            .iter()
            .map(|(k, t)| ArchiveEntry {
                name: k.clone(),
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            })
            .collect()
    }

    pub fn save<W: Write>(&self, w: W) -> io::Result<()> {
        write_archive(w, &self.entries())
    }

    /// Overwrite every parameter from an archive; names and shapes must match.
    pub fn load<R: Read>(&self, r: R) -> Result<(), CheckpointError> {
        let entries: BTreeMap<String, ArchiveEntry> = read_archive(r)?.into_iter().map(|e| (e.name.clone(), e)).collect();
        for (name, t) in &self.params {
            let e = entries.get(name).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            if e.shape != t.shape() {
                return Err(CheckpointError::Shape {
                    name: name.clone(),
                    expected: t.shape().to_vec(),
                    found: e.shape.clone(),
                });
            }
        }
        for (name, t) in &self.params {
            t.data_mut().copy_from_slice(&entries[name].data);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn archive_reload_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        store.add("b", &[3], Init::Uniform(0.1), &mut rng);
        store.add("a", &[2, 2], Init::ScaledNormal, &mut rng);
        store.get("b").unwrap().data_mut()[1] = f64::MIN_POSITIVE / 3.0;
        let mut buf = Vec::new();
        store.save(&mut buf).unwrap();

        let mut other = ParamStore::new();
        other.add("a", &[2, 2], Init::Zeros, &mut rng);
        other.add("b", &[3], Init::Zeros, &mut rng);
        other.load(&buf[..]).unwrap();
        for ((_, x), (_, y)) in store.iter().zip(other.iter()) {
            let bx: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let by: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bx, by);
        }
        let mut again = Vec::new();
        other.save(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.add("w", &[2], Init::Zeros, &mut rng);
        let mut buf = Vec::new();
        store.save(&mut buf).unwrap();
        let mut other = ParamStore::new();
        other.add("w", &[3], Init::Zeros, &mut rng);
        assert!(matches!(other.load(&buf[..]), Err(CheckpointError::Shape { .. })));
        assert!(matches!(read_archive(&b"garbage!"[..]), Err(CheckpointError::Magic)));
    }
}
