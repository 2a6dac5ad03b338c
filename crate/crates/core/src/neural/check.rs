//! Finite-difference gradient oracle. Deliberately independent of the
//! backward passes: it only perturbs parameters and re-evaluates a closure,
//! so it can referee them.

use super::NetworkParams;

/// Central-difference gradient of a scalar function of the parameters,
/// one coordinate at a time: (f(p + eps e_i) - f(p - eps e_i)) / (2 eps).
///
/// O(2 * n_params) evaluations — test-scale networks only.
pub fn central_difference<F>(params: &NetworkParams, eps: f64, mut f: F) -> NetworkParams
where
    F: FnMut(&NetworkParams) -> f64,
{
    let mut grads = params.zeros_like();
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut work = params.clone();
    for name in &names {
        let len = params.get(name).expect("name from iter").len();
        for i in 0..len {
            let orig = work.get(name).unwrap().data[i];
            work.get_mut(name).unwrap().data[i] = orig + eps;
            let fp = f(&work);
            work.get_mut(name).unwrap().data[i] = orig - eps;
            let fm = f(&work);
            work.get_mut(name).unwrap().data[i] = orig;
            grads.get_mut(name).unwrap().data[i] = (fp - fm) / (2.0 * eps);
        }
    }
    grads
}

/// Maximum relative error between an analytic gradient and a finite-difference
/// one, with an absolute floor to avoid dividing by ~0.
pub fn max_relative_error(analytic: &NetworkParams, numeric: &NetworkParams) -> f64 {
    let mut max_rel = 0.0_f64;
    for ((_, a), (_, n)) in analytic.iter().zip(numeric.iter()) {
        for (x, y) in a.data.iter().zip(n.data.iter()) {
            let denom = x.abs().max(y.abs()).max(1e-8);
            max_rel = max_rel.max((x - y).abs() / denom);
        }
    }
    max_rel
}
