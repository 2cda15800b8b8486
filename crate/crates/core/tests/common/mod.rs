//! Independent reference implementations shared by the integration tests
//! and the acceptance suite.

#![allow(dead_code)]

use thermocae::cae::{Cae, CaeConfig};
use thermocae::msssim::{msssim_loss, msssim_loss_graph, SsimParams};
use thermocae::tensor::{ConvSpec, Graph};
use thermocae::{Rng, Tensor};

pub fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform(-1.0, 1.0))
}

fn at4(t: &Tensor, a: usize, b: usize, c: usize, d: usize) -> f64 {
    let s = t.shape();
    t.data()[((a * s[1] + b) * s[2] + c) * s[3] + d]
}

/// Direct summation over the receptive field of every output pixel.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, spec: ConvSpec) -> Tensor {
    let (n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, k) = (w.shape()[0], spec.kernel);
    let oh = (h + 2 * spec.padding - k) / spec.stride + 1;
    let ow = (wd + 2 * spec.padding - k) / spec.stride + 1;
    let mut out = Vec::with_capacity(n * c_out * oh * ow);
    for bi in 0..n {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += at4(x, bi, ci, iy as usize, ix as usize) * at4(w, co, ci, ky, kx);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, oh, ow], out).unwrap()
}

/// Scatters every input pixel through the kernel onto the upsampled grid.
pub fn naive_conv_transpose2d(x: &Tensor, w: &Tensor, b: &Tensor, spec: ConvSpec) -> Tensor {
    let (n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, k) = (w.shape()[1], spec.kernel);
    let oh = (h - 1) * spec.stride + k + spec.output_padding - 2 * spec.padding;
    let ow = (wd - 1) * spec.stride + k + spec.output_padding - 2 * spec.padding;
    let mut out = vec![0.0; n * c_out * oh * ow];
    for bi in 0..n {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[((bi * c_out + co) * oh + oy) * ow + ox] = b.data()[co];
                }
            }
        }
        for ci in 0..c_in {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = at4(x, bi, ci, iy, ix);
                    for co in 0..c_out {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * spec.stride + ky) as isize - spec.padding as isize;
                                let ox = (ix * spec.stride + kx) as isize - spec.padding as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    out[((bi * c_out + co) * oh + oy as usize) * ow + ox as usize] +=
                                        v * at4(w, ci, co, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, oh, ow], out).unwrap()
}

pub fn naive_dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let g = w.shape()[1];
    let mut out = Vec::with_capacity(n * g);
    for i in 0..n {
        for j in 0..g {
            let mut acc = b.data()[j];
            for k in 0..f {
                acc += x.data()[i * f + k] * w.data()[k * g + j];
            }
            out.push(acc);
        }
    }
    Tensor::new(vec![n, g], out).unwrap()
}

/// Probability that a random anomalous sample outscores a random normal
/// one, ties counting one half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Symmetric relative error with a floor on the scale.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of the reconstruction loss over `n_samples` parameter entries.
///
/// Freshly built models have zero biases, which puts some pre-activations
/// exactly on the ReLU kink where only one-sided derivatives exist. The
/// biases are jittered first so the check runs at a differentiable point.
pub fn model_grad_check(cfg: CaeConfig, batch: usize, n_samples: usize, seed: u64) -> f64 {
    let params = SsimParams::default();
    let mut model = Cae::build(cfg, seed).unwrap();
    let mut rng = Rng::new(seed ^ 0xABCD);
    for p in model.params_mut().iter_mut().filter(|p| p.ndim() == 1) {
        for v in p.data_mut() {
            *v += rng.uniform(-0.05, 0.05);
        }
    }
    let s = cfg.input_size;
    let x = Tensor::from_fn(vec![batch, 1, s, s], |_| rng.uniform(0.05, 0.95));

    let mut g = Graph::new();
    let vars = model.register(&mut g, true);
    let xv = g.constant(x.clone());
    let out = model.forward_graph(&mut g, &vars, xv).unwrap();
    let loss = msssim_loss_graph(&mut g, xv, out.output, &params).unwrap();
    let grads = g.backward(loss).unwrap();

    let eval = |m: &Cae| msssim_loss(&x, &m.forward(&x).unwrap(), &params).unwrap();
    // Small enough that steps rarely cross a ReLU kink, large enough that
    // round-off stays near 1e-7 relative.
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..n_samples {
        let p = rng.below(model.params().len());
        let i = rng.below(model.params()[p].len());
        let analytic = grads.get(vars[p]).unwrap().data()[i];
        let mut probe = model.clone();
        let orig = probe.params()[p].data()[i];
        probe.params_mut()[p].data_mut()[i] = orig + h;
        let plus = eval(&probe);
        probe.params_mut()[p].data_mut()[i] = orig - h;
        let minus = eval(&probe);
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(rel_err(analytic, numeric, 1e-6));
    }
    worst
}
