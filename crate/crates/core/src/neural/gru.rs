//! Gated recurrent cell with exact backward-through-time gradients.

use super::{matvec, matvec_backward, NetworkParams, Tensor};
use crate::error::{Error, Result};
use crate::exec::Rng;

/// Architecture of a single gated recurrent cell:
///   r = sigmoid(Wr x + Ur h + br)
///   z = sigmoid(Wz x + Uz h + bz)
///   n = tanh(Wn x + r .* (Un h) + bn)
///   h' = (1 - z) .* n + z .* h
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecurrentCellSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl RecurrentCellSpec {
    pub fn new(input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::dimension("recurrent cell sizes must be positive"));
        }
        Ok(RecurrentCellSpec {
            input_dim,
            hidden_dim,
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    un_h: Vec<f64>,
}

const GATE_NAMES: [&str; 9] = ["wr", "ur", "br", "wz", "uz", "bz", "wn", "un", "bn"];

/// Stateless step/backward over a `RecurrentCellSpec` + parameter set, with an
/// optional name prefix.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub spec: RecurrentCellSpec,
    prefix: String,
}

impl GruCell {
    pub fn new(spec: RecurrentCellSpec) -> Self {
        GruCell {
            spec,
            prefix: String::new(),
        }
    }

    pub fn with_prefix(spec: RecurrentCellSpec, prefix: &str) -> Self {
        GruCell {
            spec,
            prefix: prefix.to_string(),
        }
    }

    fn name(&self, kind: &str) -> String {
        if self.prefix.is_empty() {
            kind.to_string()
        } else {
            format!("{}.{kind}", self.prefix)
        }
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (i, h) = (self.spec.input_dim, self.spec.hidden_dim);
        GATE_NAMES
            .iter()
            .map(|kind| {
                let dims = match kind.as_bytes()[0] {
                    b'w' => vec![h, i],
                    b'u' => vec![h, h],
                    _ => vec![h],
                };
                (self.name(kind), dims)
            })
            .collect()
    }

    /// Fresh parameters in fixed `GATE_NAMES` order: scaled-uniform weights
    /// (fan-in = input or hidden dim respectively), zero biases.
    pub fn init(&self, rng: &mut Rng) -> NetworkParams {
        let (i, h) = (self.spec.input_dim, self.spec.hidden_dim);
        let mut params = NetworkParams::new();
        for kind in GATE_NAMES {
            let t = match kind.as_bytes()[0] {
                b'w' => Tensor::init_uniform(&[h, i], i, rng),
                b'u' => Tensor::init_uniform(&[h, h], h, rng),
                _ => Tensor::zeros(&[h]),
            };
            params.insert(&self.name(kind), t).expect("unique names");
        }
        params
    }

    pub fn zero_hidden(&self) -> Vec<f64> {
        vec![0.0; self.spec.hidden_dim]
    }

    /// One recurrence step: (new_hidden, cache).
    pub fn step(
        &self,
        params: &NetworkParams,
        input: &[f64],
        hidden: &[f64],
    ) -> Result<(Vec<f64>, GruCache)> {
        let (in_d, hid) = (self.spec.input_dim, self.spec.hidden_dim);
        if input.len() != in_d || hidden.len() != hid {
            return Err(Error::dimension(format!(
                "recurrent step: input {} / hidden {} vs declared {in_d} / {hid}",
                input.len(),
                hidden.len()
            )));
        }
        let mut r = vec![0.0; hid];
        let mut z = vec![0.0; hid];
        let mut n = vec![0.0; hid];
        let mut un_h = vec![0.0; hid];
        let mut tmp = vec![0.0; hid];

        matvec(params.get(&self.name("wr"))?, input, Some(params.get(&self.name("br"))?), &mut r);
        matvec(params.get(&self.name("ur"))?, hidden, None, &mut tmp);
        for (ri, ti) in r.iter_mut().zip(tmp.iter()) {
            *ri = sigmoid(*ri + ti);
        }

        matvec(params.get(&self.name("wz"))?, input, Some(params.get(&self.name("bz"))?), &mut z);
        matvec(params.get(&self.name("uz"))?, hidden, None, &mut tmp);
        for (zi, ti) in z.iter_mut().zip(tmp.iter()) {
            *zi = sigmoid(*zi + ti);
        }

        matvec(params.get(&self.name("un"))?, hidden, None, &mut un_h);
        matvec(params.get(&self.name("wn"))?, input, Some(params.get(&self.name("bn"))?), &mut n);
        for i in 0..hid {
            n[i] = (n[i] + r[i] * un_h[i]).tanh();
        }

        let mut h_new = vec![0.0; hid];
        for i in 0..hid {
            h_new[i] = (1.0 - z[i]) * n[i] + z[i] * hidden[i];
        }
        let cache = GruCache {
            x: input.to_vec(),
            h_prev: hidden.to_vec(),
            r,
            z,
            n,
            un_h,
        };
        Ok((h_new, cache))
    }

    /// Backward through one step. `d_hidden_new` is dL/d(new hidden); returns
    /// (dL/d(input), dL/d(previous hidden)), accumulating parameter gradients.
    pub fn backward_step(
        &self,
        params: &NetworkParams,
        cache: &GruCache,
        d_hidden_new: &[f64],
        grads: &mut NetworkParams,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let hid = self.spec.hidden_dim;
        let mut dh_prev = vec![0.0; hid];
        let mut dx = vec![0.0; self.spec.input_dim];

        // h' = (1-z) n + z h
        let mut da_n = vec![0.0; hid]; // grad at tanh pre-activation
        let mut da_z = vec![0.0; hid];
        let mut da_r = vec![0.0; hid];
        for i in 0..hid {
            let g = d_hidden_new[i];
            let dz = g * (cache.h_prev[i] - cache.n[i]);
            let dn = g * (1.0 - cache.z[i]);
            dh_prev[i] += g * cache.z[i];
            da_n[i] = dn * (1.0 - cache.n[i] * cache.n[i]);
            da_z[i] = dz * cache.z[i] * (1.0 - cache.z[i]);
            // a_n = Wn x + r .* un_h + bn
            let dr = da_n[i] * cache.un_h[i];
            da_r[i] = dr * cache.r[i] * (1.0 - cache.r[i]);
        }

        // d(un_h) = da_n .* r flows through Un h_prev.
        let dun_h: Vec<f64> = da_n
            .iter()
            .zip(cache.r.iter())
            .map(|(d, r)| d * r)
            .collect();

        matvec_backward(
            params.get(&self.name("wn"))?,
            &cache.x,
            &da_n,
            Some(grads.get_mut(&self.name("wn"))?),
            None,
            None,
        );
        matvec_backward(params.get(&self.name("wn"))?, &cache.x, &da_n, None, None, Some(&mut dx));
        for (b, d) in grads
            .get_mut(&self.name("bn"))?
            .data
            .iter_mut()
            .zip(da_n.iter())
        {
            *b += d;
        }
        matvec_backward(
            params.get(&self.name("un"))?,
            &cache.h_prev,
            &dun_h,
            Some(grads.get_mut(&self.name("un"))?),
            None,
            None,
        );
        matvec_backward(
            params.get(&self.name("un"))?,
            &cache.h_prev,
            &dun_h,
            None,
            None,
            Some(&mut dh_prev),
        );

        for (gate, da) in [("r", &da_r), ("z", &da_z)] {
            let w_name = self.name(&format!("w{gate}"));
            let u_name = self.name(&format!("u{gate}"));
            let b_name = self.name(&format!("b{gate}"));
            matvec_backward(
                params.get(&w_name)?,
                &cache.x,
                da,
                Some(grads.get_mut(&w_name)?),
                None,
                None,
            );
            matvec_backward(params.get(&w_name)?, &cache.x, da, None, None, Some(&mut dx));
            matvec_backward(
                params.get(&u_name)?,
                &cache.h_prev,
                da,
                Some(grads.get_mut(&u_name)?),
                None,
                None,
            );
            matvec_backward(
                params.get(&u_name)?,
                &cache.h_prev,
                da,
                None,
                None,
                Some(&mut dh_prev),
            );
            for (b, d) in grads.get_mut(&b_name)?.data.iter_mut().zip(da.iter()) {
                *b += d;
            }
        }

        Ok((dx, dh_prev))
    }
}
