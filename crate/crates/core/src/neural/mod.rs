//! Minimal differentiable-function core: named f64 tensors, feedforward and
//! gated recurrent networks with exact hand-rolled reverse-mode gradients,
//! optimizers, and a versioned binary checkpoint format.
//!
//! Only the fixed architectures used by the trainers are supported; this is
//! not a general autodiff graph. Everything is 64-bit floats.

mod checkpoint;
pub mod check;
mod gru;
mod mlp;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gru::{GruCache, GruCell, RecurrentCellSpec};
pub use mlp::{FeedforwardSpec, Mlp, MlpCache};
pub use optim::{optimize_step, OptKind, OptState, OptimizerConfig};

use crate::error::{Error, Result};
use crate::exec::Rng;
use rand::Rng as _;

/// A named, shaped, row-major f64 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Scaled-uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init_uniform(dims: &[usize], fan_in: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let len: usize = dims.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of named tensors. Houses policy, value, identifier and
/// dynamics-model weights; also reused for gradients and optimizer moments,
/// which mirror the parameter layout exactly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkParams {
    entries: Vec<(String, Tensor)>,
}

impl NetworkParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor. Names must be unique and shapes positive.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.index_of(name).is_some() {
            return Err(Error::dimension(format!("duplicate tensor name `{name}`")));
        }
        if tensor.dims.iter().any(|&d| d == 0) {
            return Err(Error::dimension(format!(
                "tensor `{name}` has a zero-sized dimension"
            )));
        }
        if tensor.dims.iter().product::<usize>() != tensor.data.len() {
            return Err(Error::dimension(format!(
                "tensor `{name}`: dims {:?} do not match data length {}",
                tensor.dims,
                tensor.data.len()
            )));
        }
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index_of(name)
            .map(|i| &self.entries[i].1)
            .ok_or_else(|| Error::dimension(format!("missing tensor `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index_of(name) {
            Some(i) => Ok(&mut self.entries[i].1),
            None => Err(Error::dimension(format!("missing tensor `{name}`"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same names and shapes, all-zero values. The layout for gradients and
    /// optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(&t.dims)))
            .collect();
        NetworkParams { entries }
    }

    /// Merges another parameter set under a name prefix (`prefix.name`).
    pub fn adopt(&mut self, prefix: &str, other: NetworkParams) -> Result<()> {
        for (name, tensor) in other.entries {
            self.insert(&format!("{prefix}.{name}"), tensor)?;
        }
        Ok(())
    }

    /// Extracts the subset under `prefix.`, stripping the prefix.
    pub fn strip_prefix(&self, prefix: &str) -> Result<NetworkParams> {
        let dot = format!("{prefix}.");
        let mut out = NetworkParams::new();
        for (name, tensor) in &self.entries {
            if let Some(rest) = name.strip_prefix(&dot) {
                out.insert(rest, tensor.clone())?;
            }
        }
        if out.is_empty() {
            return Err(Error::dimension(format!(
                "no tensors under prefix `{prefix}`"
            )));
        }
        Ok(out)
    }

    /// Checks every value is finite.
    pub fn validate_finite(&self) -> Result<()> {
        for (name, t) in &self.entries {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor `{name}`")));
            }
        }
        Ok(())
    }

    /// Validates names and shapes against an expected layout, e.g. when
    /// binding a loaded checkpoint to a network spec.
    pub fn validate_shapes(&self, expected: &[(String, Vec<usize>)]) -> Result<()> {
        for (name, dims) in expected {
            let t = self.get(name)?;
            if &t.dims != dims {
                return Err(Error::dimension(format!(
                    "tensor `{name}`: expected shape {:?}, found {:?}",
                    dims, t.dims
                )));
            }
        }
        Ok(())
    }

    /// Euclidean norm over every value in every tensor.
    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Order-sensitive FNV-1a over names and exact bit patterns. Two sets
    /// collide only if they hold identical tensors in identical order, so
    /// this audits that frozen parameters stayed frozen.
    pub fn checksum(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let eat = |h: &mut u64, bytes: &[u8]| {
            for &b in bytes {
                *h ^= b as u64;
                *h = h.wrapping_mul(PRIME);
            }
        };
        for (name, t) in &self.entries {
            eat(&mut h, name.as_bytes());
            for &v in &t.data {
                eat(&mut h, &v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// In-place `self += scale * other`, matched entry-by-entry.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::dimension("parameter sets differ in tensor count"));
        }
        for ((an, at), (bn, bt)) in self.entries.iter_mut().zip(other.entries.iter()) {
            if an != bn || at.dims != bt.dims {
                return Err(Error::dimension(format!(
                    "parameter mismatch: `{an}` vs `{bn}`"
                )));
            }
            for (a, b) in at.data.iter_mut().zip(bt.data.iter()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.entries.iter_mut() {
            for v in t.data.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// y = W x + b for a row-major W of shape (out, in).
pub(crate) fn matvec(w: &Tensor, x: &[f64], b: Option<&Tensor>, y: &mut [f64]) {
    let (out_dim, in_dim) = (w.dims[0], w.dims[1]);
    debug_assert_eq!(x.len(), in_dim);
    debug_assert_eq!(y.len(), out_dim);
    for o in 0..out_dim {
        let row = &w.data[o * in_dim..(o + 1) * in_dim];
        let mut acc = match b {
            Some(bias) => bias.data[o],
            None => 0.0,
        };
        for (wi, xi) in row.iter().zip(x.iter()) {
            acc += wi * xi;
        }
        y[o] = acc;
    }
}

/// x_grad += W^T g; also accumulates dW += g x^T and db += g when given.
pub(crate) fn matvec_backward(
    w: &Tensor,
    x: &[f64],
    g: &[f64],
    dw: Option<&mut Tensor>,
    db: Option<&mut Tensor>,
    dx: Option<&mut [f64]>,
) {
    let (out_dim, in_dim) = (w.dims[0], w.dims[1]);
    if let Some(dw) = dw {
        for o in 0..out_dim {
            let row = &mut dw.data[o * in_dim..(o + 1) * in_dim];
            let go = g[o];
            for (r, xi) in row.iter_mut().zip(x.iter()) {
                *r += go * xi;
            }
        }
    }
    if let Some(db) = db {
        for o in 0..out_dim {
            db.data[o] += g[o];
        }
    }
    if let Some(dx) = dx {
        for o in 0..out_dim {
            let row = &w.data[o * in_dim..(o + 1) * in_dim];
            let go = g[o];
            for (d, wi) in dx.iter_mut().zip(row.iter()) {
                *d += go * wi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::stream_rng;

    #[test]
    fn insert_rejects_duplicates_and_bad_shapes() {
        let mut p = NetworkParams::new();
        p.insert("a", Tensor::zeros(&[2, 2])).unwrap();
        assert!(p.insert("a", Tensor::zeros(&[2])).is_err());
        assert!(p
            .insert(
                "b",
                Tensor {
                    dims: vec![3],
                    data: vec![0.0; 2],
                }
            )
            .is_err());
        assert!(p.insert("c", Tensor::zeros(&[0])).is_err());
    }

    #[test]
    fn add_scaled_and_norm() {
        let mut rng = stream_rng(1, "t", 0);
        let mut p = NetworkParams::new();
        p.insert("w", Tensor::init_uniform(&[4, 4], 4, &mut rng))
            .unwrap();
        let mut q = p.zeros_like();
        q.add_scaled(&p, 2.0).unwrap();
        assert!((q.global_norm() - 2.0 * p.global_norm()).abs() < 1e-12);
    }
}
