use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::conv::ConvSpec;
use crate::error::{invalid, Error, Result};
use crate::imagecore::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TXSW";
pub const CHECKPOINT_VERSION: u8 = 1;
const MOMENTUM_SUFFIX: &str = ".m";

/// A named parameter tensor and its momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub momentum: Tensor<T>,
}

/// Ordered parameters of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams<T: Scalar = f32> {
    params: Vec<Param<T>>,
}

/// How a layer's weights are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`; for layers followed by ReLU.
    Kaiming,
    /// Normal with std `sqrt(2 / (fan_in + fan_out))`; for sigmoid or linear outputs.
    Xavier,
    Zeros,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let momentum = Tensor::zeros_like(&value);
        self.params.push(Param {
            name: name.into(),
            value,
            momentum,
        });
        self.params.len() - 1
    }

    /// Adds `<name>.w` and `<name>.b` for a convolution and returns their indices.
    pub fn push_conv<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        spec: &ConvSpec,
        init: Init,
        rng: &mut R,
    ) -> (usize, usize) {
        let (o, i, k, _) = spec.weight_shape();
        let fan_in = spec.fan_in() as f64;
        let fan_out = (o * k * k) as f64;
        let std = match init {
            Init::Kaiming => (2.0 / fan_in).sqrt(),
            Init::Xavier => (2.0 / (fan_in + fan_out)).sqrt(),
            Init::Zeros => 0.0,
        };
        let data = if std > 0.0 {
            let dist = Normal::new(0.0, std).expect("finite std");
            (0..o * i * k * k).map(|_| T::from_f64(dist.sample(rng))).collect()
        } else {
            vec![T::zero(); o * i * k * k]
        };
        let w = self.push(format!("{name}.w"), Tensor::from_vec(o, i, k, k, data).expect("shape"));
        let b = self.push(format!("{name}.b"), Tensor::zeros(o, 1, 1, 1));
        (w, b)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn value(&self, i: usize) -> &Tensor<T> {
        &self.params[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.params[i].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    /// Zeroed gradient buffers aligned with the parameters.
    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| Tensor::zeros_like(&p.value)).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    momentum: p.momentum.cast(),
                })
                .collect(),
        }
    }

    /// Sets every parameter value (momentum untouched) to `v`.
    pub fn fill(&mut self, v: T) {
        for p in &mut self.params {
            p.value.data_mut().fill(v);
        }
    }

    /// Zeroes the momentum buffers.
    pub fn reset_momentum(&mut self) {
        for p in &mut self.params {
            p.momentum.data_mut().fill(T::zero());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.is_finite() && p.momentum.is_finite())
    }

    /// Flattens every value into one vector (parameter order, row-major).
    pub fn flatten(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn unflatten(&mut self, flat: &[T]) {
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Heavy-ball momentum: `v ← μ·v + g`, `p ← p − lr·v`.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return invalid(format!("{} gradients for {} parameters", grads.len(), params.len()));
    }
    if let Some((p, g)) = params.iter().zip(grads).find(|(p, g)| !p.value.same_shape(g)) {
        return invalid(format!(
            "gradient shape {:?} does not match parameter {} {:?}",
            g.shape(),
            p.name,
            p.value.shape()
        ));
    }
    let lr = T::from_f64(lr);
    let mu = T::from_f64(momentum);
    for (p, g) in params.iter_mut().zip(grads) {
        let Param { value, momentum, .. } = p;
        for ((v, m), &gv) in value
            .data_mut()
            .iter_mut()
            .zip(momentum.data_mut().iter_mut())
            .zip(g.data())
        {
            *m = mu * *m + gv;
            *v = *v - lr * *m;
        }
    }
    Ok(())
}

fn write_record(buf: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    let (n, c, h, w) = t.shape();
    for d in [n, c, h, w] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes `TXSW`, a version byte, then one record per parameter (u32 name
/// length, UTF-8 name, four u32 dims, little-endian f32 values) followed by
/// the momentum buffers under `<name>.m`.
pub fn save_checkpoint(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(CHECKPOINT_VERSION);
    for p in params.iter() {
        write_record(&mut buf, &p.name, &p.value);
    }
    for p in params.iter() {
        write_record(&mut buf, &format!("{}{MOMENTUM_SUFFIX}", p.name), &p.momentum);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&buf)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<usize> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

/// Reads a checkpoint into the layout of `template`: every parameter of the
/// template must be present with the same shape.
pub fn load_checkpoint(template: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 5 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "missing TXSW header"));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported version {}", bytes[4])));
    }
    let mut cur = Cursor { bytes: &bytes, pos: 5 };
    let truncated = || Error::format(path, "truncated record");
    let mut records = std::collections::HashMap::new();
    while cur.pos < bytes.len() {
        let len = cur.u32().ok_or_else(truncated)?;
        let name = std::str::from_utf8(cur.take(len).ok_or_else(truncated)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let dims: Vec<usize> = (0..4).map(|_| cur.u32().ok_or_else(truncated)).collect::<Result<_>>()?;
        let count = dims.iter().product::<usize>();
        let raw = cur.take(count * 4).ok_or_else(truncated)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(dims[0], dims[1], dims[2], dims[3], data)
            .map_err(|e| Error::format(path, e.to_string()))?;
        records.insert(name, t);
    }

    let mut out = template.clone();
    for p in out.iter_mut() {
        let value = records
            .remove(&p.name)
            .ok_or_else(|| Error::format(path, format!("parameter {} missing", p.name)))?;
        if !value.same_shape(&p.value) {
            return Err(Error::format(
                path,
                format!(
                    "parameter {} has shape {:?}, model expects {:?}",
                    p.name,
                    value.shape(),
                    p.value.shape()
                ),
            ));
        }
        p.value = value;
        if let Some(m) = records.remove(&format!("{}{MOMENTUM_SUFFIX}", p.name)) {
            if !m.same_shape(&p.momentum) {
                return Err(Error::format(path, format!("momentum of {} has wrong shape", p.name)));
            }
            p.momentum = m;
        }
    }
    if !out.is_finite() {
        return Err(Error::format(path, "non-finite parameter values"));
    }
    Ok(out)
}
