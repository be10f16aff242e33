//! Named parameter storage, initialization and the checkpoint container.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Real;
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"SFNC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

/// Declares one parameter: a hierarchical name, a shape and an initializer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            rows,
            cols,
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }
}

/// Parameters by path, plus one gradient buffer per parameter.
///
/// Iteration order is the lexicographic order of names, which keeps
/// checkpoints and optimizer updates deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real> {
    values: BTreeMap<String, Array2<T>>,
    grads: BTreeMap<String, Array2<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<T>) -> Result<()> {
        let name = name.into();
        if self.values.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.grads.insert(name.clone(), Array2::zeros(value.dim()));
        self.values.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Array2<T>> {
        self.values.get(name)
    }

    /// Mutable access to a value. The shape must not change.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<T>> {
        self.values.get_mut(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Array2<T>> {
        self.grads.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<T>)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.values().map(|v| v.len()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.values
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.fill(T::zero());
        }
    }

    /// Adds `delta` into the named gradient buffer.
    pub fn add_grad(&mut self, name: &str, delta: &Array2<T>) -> Result<()> {
        let g = self
            .grads
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if g.dim() != delta.dim() {
            return Err(Error::Shape {
                op: "add_grad",
                left: g.shape().to_vec(),
                right: delta.shape().to_vec(),
            });
        }
        *g += delta;
        Ok(())
    }

    /// Pairs of (value, gradient) in name order, for optimizers.
    pub fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<T>, &Array2<T>)> {
        self.values
            .iter_mut()
            .zip(self.grads.values())
            .map(|((k, v), g)| (k.as_str(), v, g))
    }

    /// Converts every value to another precision. Gradients are reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::default();
        for (name, v) in &self.values {
            let converted = v.mapv(|x| U::from_f64(x.to_f64().unwrap()).unwrap());
            out.insert(name.clone(), converted).expect("names unique");
        }
        out
    }
}

/// Fan-in scaled uniform initialization, deterministic under `seed`.
///
/// Parameters are drawn in name order so adding a parameter never reshuffles
/// the values of parameters that sort before it.
pub fn init_params<T: Real>(specs: &[ParamSpec], seed: u64) -> Result<ParamStore<T>> {
    let mut sorted: Vec<&ParamSpec> = specs.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::default();
    for spec in sorted {
        let value = match spec.init {
            Init::Zeros => Array2::zeros((spec.rows, spec.cols)),
            Init::Ones => Array2::ones((spec.rows, spec.cols)),
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Array2::from_shape_simple_fn((spec.rows, spec.cols), || {
                    T::from_f64(rng.random_range(-bound..bound)).unwrap()
                })
            }
        };
        store.insert(spec.name.clone(), value)?;
    }
    Ok(store)
}

/// Writes the `SFNC` container: magic, version, 32-byte config digest, record
/// count, then `(name, rank, dims, f32 LE payload)` per parameter.
pub fn write_checkpoint<T: Real, W: Write>(
    out: &mut W,
    store: &ParamStore<T>,
    digest: &[u8; 32],
) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(digest)?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, value) in store.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&2u32.to_le_bytes())?;
        out.write_all(&(value.nrows() as u32).to_le_bytes())?;
        out.write_all(&(value.ncols() as u32).to_le_bytes())?;
        for &x in value.iter() {
            out.write_all(&x.to_f32().unwrap().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads a checkpoint, returning the parameters and the stored config digest.
pub fn read_checkpoint<T: Real, R: Read>(input: &mut R) -> Result<(ParamStore<T>, [u8; 32])> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut digest = [0u8; 32];
    input.read_exact(&mut digest)?;
    let count = read_u32(input)?;
    let mut store = ParamStore::default();
    for _ in 0..count {
        let name_len = read_u32(input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Format(format!("parameter name is not UTF-8: {e}")))?;
        let rank = read_u32(input)? as usize;
        let dims = (0..rank)
            .map(|_| read_u32(input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::Format(format!(
                    "parameter {name} has unsupported rank {rank}"
                )))
            }
        };
        let mut payload = vec![0u8; rows * cols * 4];
        input.read_exact(&mut payload)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| T::from_f32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])).unwrap())
            .collect();
        let value = Array2::from_shape_vec((rows, cols), data).expect("length matches dims");
        store.insert(name, value)?;
    }
    Ok((store, digest))
}
