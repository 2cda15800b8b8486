use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Compares the reverse-mode gradient of a scalar function against central
/// differences at sampled coordinates of `x`.
///
/// `f` builds the function on a fresh graph given the handle of `x`. Returns
/// the largest `|analytic - numeric| / max(1, |analytic|)` over the sampled
/// coordinates (all of them when `n_samples >= x.len()`).
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, n_samples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |point: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(point.clone());
        let out = f(&mut g, v)?;
        g.value(out)
            .item()
            .ok_or_else(|| Error::shape("grad_check: function is not scalar"))
    };

    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let out = f(&mut g, xv)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let coords: Vec<usize> = if n_samples >= x.len() {
        (0..x.len()).collect()
    } else {
        let mut rng = Rng::new(seed);
        let mut all: Vec<usize> = (0..x.len()).collect();
        rng.shuffle(&mut all);
        all.truncate(n_samples);
        all
    };

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
