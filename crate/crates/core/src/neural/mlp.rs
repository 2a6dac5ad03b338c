//! Fully-connected network with tanh hidden layers and a linear output layer.

use super::{matvec, matvec_backward, NetworkParams, Tensor};
use crate::error::{Error, Result};
use crate::exec::Rng;

/// Architecture of a feedforward network. Hidden layers use tanh; the output
/// layer is linear so heads can apply their own squashing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedforwardSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl FeedforwardSpec {
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::dimension("layer sizes must be positive"));
        }
        Ok(FeedforwardSpec {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
        })
    }

    /// Layer sizes from input to output, e.g. [in, h0, h1, out].
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.output_dim);
        w
    }

    /// Parameter names and shapes in architecture order: `l{i}.w`, `l{i}.b`.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let widths = self.widths();
        let mut shapes = Vec::new();
        for i in 1..widths.len() {
            shapes.push((format!("l{}.w", i - 1), vec![widths[i], widths[i - 1]]));
            shapes.push((format!("l{}.b", i - 1), vec![widths[i]]));
        }
        shapes
    }

    /// Fresh parameters: scaled-uniform weights, zero biases. RNG consumption
    /// order is fixed by architecture order, so equal seeds give equal nets.
    pub fn init(&self, rng: &mut Rng) -> NetworkParams {
        let widths = self.widths();
        let mut params = NetworkParams::new();
        for i in 1..widths.len() {
            let (out_d, in_d) = (widths[i], widths[i - 1]);
            let w = Tensor::init_uniform(&[out_d, in_d], in_d, rng);
            params
                .insert(&format!("l{}.w", i - 1), w)
                .expect("fresh names are unique");
            params
                .insert(&format!("l{}.b", i - 1), Tensor::zeros(&[out_d]))
                .expect("fresh names are unique");
        }
        params
    }
}

/// Intermediate activations kept for the backward pass.
/// `acts[0]` is the input; `acts[i]` for hidden layers is post-tanh;
/// `acts.last()` is the linear output.
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    /// Activation of the last hidden layer — the feature vector feeding the
    /// output layer. Used by the feature-level transfer combiner.
    pub fn penultimate(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }

    pub fn output(&self) -> &[f64] {
        &self.acts[self.acts.len() - 1]
    }
}

/// Stateless forward/backward over a `FeedforwardSpec` + `NetworkParams` pair,
/// with an optional name prefix so several networks can share one parameter
/// set (e.g. `policy.*` and `value.*`).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: FeedforwardSpec,
    prefix: String,
}

impl Mlp {
    pub fn new(spec: FeedforwardSpec) -> Self {
        Mlp {
            spec,
            prefix: String::new(),
        }
    }

    pub fn with_prefix(spec: FeedforwardSpec, prefix: &str) -> Self {
        Mlp {
            spec,
            prefix: prefix.to_string(),
        }
    }

    fn name(&self, layer: usize, kind: &str) -> String {
        if self.prefix.is_empty() {
            format!("l{layer}.{kind}")
        } else {
            format!("{}.l{layer}.{kind}", self.prefix)
        }
    }

    /// Parameter layout of this network inside the shared set.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.spec
            .param_shapes()
            .into_iter()
            .map(|(n, d)| {
                if self.prefix.is_empty() {
                    (n, d)
                } else {
                    (format!("{}.{n}", self.prefix), d)
                }
            })
            .collect()
    }

    pub fn forward(&self, params: &NetworkParams, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if input.len() != self.spec.input_dim {
            return Err(Error::dimension(format!(
                "input length {} != declared {}",
                input.len(),
                self.spec.input_dim
            )));
        }
        let n_layers = self.spec.hidden_dims.len() + 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(input.to_vec());
        for layer in 0..n_layers {
            let w = params.get(&self.name(layer, "w"))?;
            let b = params.get(&self.name(layer, "b"))?;
            let mut y = vec![0.0; w.dims[0]];
            matvec(w, acts.last().unwrap(), Some(b), &mut y);
            if layer + 1 < n_layers {
                for v in y.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(y);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, MlpCache { acts }))
    }

    /// Accumulates parameter gradients into `grads` (which must mirror the
    /// parameter layout) given dL/d(output); returns dL/d(input).
    pub fn backward(
        &self,
        params: &NetworkParams,
        cache: &MlpCache,
        d_output: &[f64],
        grads: &mut NetworkParams,
    ) -> Result<Vec<f64>> {
        let n_layers = self.spec.hidden_dims.len() + 1;
        if d_output.len() != self.spec.output_dim {
            return Err(Error::dimension("gradient length != output_dim"));
        }
        let mut g = d_output.to_vec();
        for layer in (0..n_layers).rev() {
            // Hidden activations are post-tanh; fold d tanh = 1 - h^2 in first.
            if layer + 1 < n_layers {
                let h = &cache.acts[layer + 1];
                for (gi, hi) in g.iter_mut().zip(h.iter()) {
                    *gi *= 1.0 - hi * hi;
                }
            }
            let w = params.get(&self.name(layer, "w"))?;
            let x = &cache.acts[layer];
            let mut dx = vec![0.0; x.len()];
            {
                let dw = grads.get_mut(&self.name(layer, "w"))?;
                matvec_backward(w, x, &g, Some(dw), None, None);
            }
            {
                let db = grads.get_mut(&self.name(layer, "b"))?;
                for (d, gi) in db.data.iter_mut().zip(g.iter()) {
                    *d += gi;
                }
            }
            matvec_backward(w, x, &g, None, None, Some(&mut dx));
            g = dx;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::stream_rng;
    use crate::neural::check::central_difference;

    /// Independent dense-algebra oracle: explicit loops over W rows, tanh per
    /// hidden layer, linear output.
    fn oracle_forward(spec: &FeedforwardSpec, params: &NetworkParams, x: &[f64]) -> Vec<f64> {
        let mut widths = vec![spec.input_dim];
        widths.extend_from_slice(&spec.hidden_dims);
        widths.push(spec.output_dim);
        let mut h = x.to_vec();
        for layer in 1..widths.len() {
            let w = params.get(&format!("l{}.w", layer - 1)).unwrap();
            let b = params.get(&format!("l{}.b", layer - 1)).unwrap();
            let mut y = vec![0.0; widths[layer]];
            for (o, yo) in y.iter_mut().enumerate() {
                let mut acc = b.data[o];
                for (i, hi) in h.iter().enumerate() {
                    acc += w.data[o * widths[layer - 1] + i] * hi;
                }
                *yo = acc;
            }
            if layer + 1 < widths.len() {
                for v in y.iter_mut() {
                    *v = v.tanh();
                }
            }
            h = y;
        }
        h
    }

    #[test]
    fn forward_matches_dense_algebra_oracle() {
        let mut rng = stream_rng(7, "mlp-fwd", 0);
        let spec = FeedforwardSpec::new(5, &[8, 6], 3).unwrap();
        let params = spec.init(&mut rng);
        let net = Mlp::new(spec.clone());
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.7).collect();
        let (y, _) = net.forward(&params, &x).unwrap();
        let y_ref = oracle_forward(&spec, &params, &x);
        for (a, b) in y.iter().zip(y_ref.iter()) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = stream_rng(11, "mlp-bwd", 0);
        let spec = FeedforwardSpec::new(4, &[6, 5], 2).unwrap();
        let params = spec.init(&mut rng);
        let net = Mlp::new(spec);
        let x = [0.2, -0.5, 0.9, -1.3];
        // Scalar loss: weighted sum of outputs, so dL/dy is constant.
        let wts = [0.7, -1.1];
        let loss = |p: &NetworkParams| {
            let (y, _) = net.forward(p, &x).unwrap();
            y.iter().zip(wts.iter()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut grads = params.zeros_like();
        let (_, cache) = net.forward(&params, &x).unwrap();
        net.backward(&params, &cache, &wts, &mut grads).unwrap();
        let fd = central_difference(&params, 1e-5, loss);
        let mut max_rel = 0.0_f64;
        for ((_, g), (_, f)) in grads.iter().zip(fd.iter()) {
            for (a, b) in g.data.iter().zip(f.data.iter()) {
                let denom = a.abs().max(b.abs()).max(1e-8);
                max_rel = max_rel.max((a - b).abs() / denom);
            }
        }
        assert!(max_rel < 1e-6, "max relative gradient error {max_rel}");
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let mut rng = stream_rng(13, "mlp-din", 0);
        let spec = FeedforwardSpec::new(3, &[5], 2).unwrap();
        let params = spec.init(&mut rng);
        let net = Mlp::new(spec);
        let x = [0.4, -0.2, 1.1];
        let wts = [1.0, 0.5];
        let (_, cache) = net.forward(&params, &x).unwrap();
        let mut grads = params.zeros_like();
        let dx = net.backward(&params, &cache, &wts, &mut grads).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x;
            xp[i] += eps;
            let mut xm = x;
            xm[i] -= eps;
            let f = |xx: &[f64]| {
                let (y, _) = net.forward(&params, xx).unwrap();
                y.iter().zip(wts.iter()).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
            assert!((dx[i] - fd).abs() < 1e-7, "dx[{i}]: {} vs {fd}", dx[i]);
        }
    }

    #[test]
    fn prefixed_networks_share_one_parameter_set() {
        let mut rng = stream_rng(3, "mlp-prefix", 0);
        let spec = FeedforwardSpec::new(2, &[4], 1).unwrap();
        let mut shared = NetworkParams::new();
        shared.adopt("policy", spec.init(&mut rng)).unwrap();
        shared.adopt("value", spec.init(&mut rng)).unwrap();
        let pol = Mlp::with_prefix(spec.clone(), "policy");
        let val = Mlp::with_prefix(spec, "value");
        let x = [0.5, -0.5];
        let (yp, _) = pol.forward(&shared, &x).unwrap();
        let (yv, _) = val.forward(&shared, &x).unwrap();
        assert_ne!(yp, yv); // independently initialized halves
    }

    #[test]
    fn dimension_errors_are_reported() {
        let mut rng = stream_rng(1, "mlp-dim", 0);
        let spec = FeedforwardSpec::new(3, &[4], 2).unwrap();
        let params = spec.init(&mut rng);
        let net = Mlp::new(spec);
        assert!(net.forward(&params, &[1.0, 2.0]).is_err());
        assert!(FeedforwardSpec::new(0, &[4], 2).is_err());
        assert!(FeedforwardSpec::new(3, &[0], 2).is_err());
    }
}
