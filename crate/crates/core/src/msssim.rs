//! Structural similarity on image batches, single-scale and multi-scale,
//! built from graph ops so the loss is differentiable end to end.
//!
//! Local statistics use an 11x11 Gaussian window (sigma 1.5) evaluated over
//! the valid region only. Between scales images are reduced by 2x2 mean
//! pooling; the luminance term enters at the coarsest scale only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::SsimWindow;
use crate::tensor::{Graph, Tensor, Var};

/// First four of the standard five-scale exponents.
const CANONICAL_WEIGHTS: [f64; 4] = [0.0448, 0.2856, 0.3001, 0.2363];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the pixel values.
    pub data_range: f64,
    /// One exponent per scale, finest first. Must be positive and sum to one.
    pub scale_weights: Vec<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        let total: f64 = CANONICAL_WEIGHTS.iter().sum();
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
            scale_weights: CANONICAL_WEIGHTS.iter().map(|w| w / total).collect(),
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    pub fn n_scales(&self) -> usize {
        self.scale_weights.len()
    }

    /// Smallest image side that admits every scale: after `n_scales - 1`
    /// halvings (odd sides round down) the window must still fit.
    pub fn min_side(&self) -> usize {
        self.window << (self.n_scales().max(1) - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::config(format!("SSIM window must be odd, got {}", self.window)));
        }
        if !(self.sigma > 0.0 && self.data_range > 0.0 && self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::config("SSIM constants must be positive"));
        }
        if self.scale_weights.is_empty() || self.scale_weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::config("scale weights must be positive and non-empty"));
        }
        let total: f64 = self.scale_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("scale weights sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian; the 2-D window is its outer product.
    pub fn gaussian_1d(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    pub fn ssim_window(&self) -> SsimWindow {
        SsimWindow {
            kernel: self.gaussian_1d(),
            c1: self.c1(),
            c2: self.c2(),
        }
    }
}

/// Per-image mean SSIM and mean contrast-structure term at one scale.
struct ScaleTerms {
    ssim: Var,
    cs: Var,
}

fn check_pair(g: &Graph, x: Var, y: Var, min_side: usize, scales: usize) -> Result<()> {
    let (sx, sy) = (g.shape(x), g.shape(y));
    if sx != sy {
        return Err(Error::shape(format!("SSIM inputs differ in shape: {sx:?} vs {sy:?}")));
    }
    let &[_, _, h, w] = sx else {
        return Err(Error::shape(format!("SSIM expects [n, c, h, w], got {sx:?}")));
    };
    if h.min(w) < min_side {
        return Err(Error::ImageTooSmall {
            got: w,
            got_h: h,
            min: min_side,
            scales,
        });
    }
    Ok(())
}

type TermsFn = fn(&mut Graph, Var, Var, &SsimWindow) -> Result<ScaleTerms>;

fn fused_terms(g: &mut Graph, x: Var, y: Var, win: &SsimWindow) -> Result<ScaleTerms> {
    let stats = g.ssim_stats(x, y, win)?;
    Ok(ScaleTerms {
        ssim: g.column(stats, 0)?,
        cs: g.column(stats, 1)?,
    })
}

/// The same statistics spelled out with elementary graph ops.
fn composed_terms(g: &mut Graph, x: Var, y: Var, win: &SsimWindow) -> Result<ScaleTerms> {
    let (kernel, c1, c2) = (&win.kernel[..], win.c1, win.c2);
    let mu_x = g.filter(x, kernel)?;
    let mu_y = g.filter(y, kernel)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let e_xx = g.filter(xx, kernel)?;
    let e_yy = g.filter(yy, kernel)?;
    let e_xy = g.filter(xy, kernel)?;
    let mu_xx = g.mul(mu_x, mu_x)?;
    let mu_yy = g.mul(mu_y, mu_y)?;
    let mu_xy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(e_xx, mu_xx)?;
    let var_y = g.sub(e_yy, mu_yy)?;
    let cov = g.sub(e_xy, mu_xy)?;

    // luminance: (2 mu_x mu_y + C1) / (mu_x^2 + mu_y^2 + C1)
    let l_num = g.mul_scalar(mu_xy, 2.0);
    let l_num = g.add_scalar(l_num, c1);
    let l_den = g.add(mu_xx, mu_yy)?;
    let l_den = g.add_scalar(l_den, c1);
    let lum = g.div(l_num, l_den)?;

    // contrast-structure: (2 cov + C2) / (var_x + var_y + C2)
    let cs_num = g.mul_scalar(cov, 2.0);
    let cs_num = g.add_scalar(cs_num, c2);
    let cs_den = g.add(var_x, var_y)?;
    let cs_den = g.add_scalar(cs_den, c2);
    let cs_map = g.div(cs_num, cs_den)?;

    let ssim_map = g.mul(lum, cs_map)?;
    Ok(ScaleTerms {
        ssim: g.mean_per_sample(ssim_map),
        cs: g.mean_per_sample(cs_map),
    })
}

/// Mean local SSIM per image, `[n, c, h, w] -> [n]`.
pub fn ssim_graph(g: &mut Graph, x: Var, y: Var, params: &SsimParams) -> Result<Var> {
    ssim_with(g, x, y, params, fused_terms)
}

/// Multi-scale SSIM per image, `[n, c, h, w] -> [n]`.
pub fn ms_ssim_graph(g: &mut Graph, x: Var, y: Var, params: &SsimParams) -> Result<Var> {
    ms_ssim_with(g, x, y, params, fused_terms)
}

/// Slower formulations built only from elementary graph ops. They serve as
/// an independent reference for the fused kernels.
pub mod composed {
    use super::*;

    pub fn ssim_graph(g: &mut Graph, x: Var, y: Var, params: &SsimParams) -> Result<Var> {
        ssim_with(g, x, y, params, composed_terms)
    }

    pub fn ms_ssim_graph(g: &mut Graph, x: Var, y: Var, params: &SsimParams) -> Result<Var> {
        ms_ssim_with(g, x, y, params, composed_terms)
    }
}

fn ssim_with(g: &mut Graph, x: Var, y: Var, params: &SsimParams, terms: TermsFn) -> Result<Var> {
    params.validate()?;
    check_pair(g, x, y, params.window, 1)?;
    Ok(terms(g, x, y, &params.ssim_window())?.ssim)
}

fn ms_ssim_with(g: &mut Graph, x: Var, y: Var, params: &SsimParams, terms: TermsFn) -> Result<Var> {
    params.validate()?;
    let scales = params.n_scales();
    check_pair(g, x, y, params.min_side(), scales)?;
    let win = params.ssim_window();
    let (mut x, mut y) = (x, y);
    let mut product: Option<Var> = None;
    for (j, &weight) in params.scale_weights.iter().enumerate() {
        let t = terms(g, x, y, &win)?;
        let last = j + 1 == scales;
        // Negative terms are clamped to zero before exponentiation.
        let base = if last { t.ssim } else { t.cs };
        let factor = g.clamped_pow(base, weight);
        product = Some(match product {
            None => factor,
            Some(p) => g.mul(p, factor)?,
        });
        if !last {
            x = g.avg_pool2(x)?;
            y = g.avg_pool2(y)?;
        }
    }
    Ok(product.expect("at least one scale"))
}

/// Training objective `1 - mean(ms_ssim)` over the batch.
pub fn msssim_loss_graph(g: &mut Graph, x: Var, reconstruction: Var, params: &SsimParams) -> Result<Var> {
    let per_image = ms_ssim_graph(g, x, reconstruction, params)?;
    let mean = g.mean(per_image);
    let neg = g.mul_scalar(mean, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

fn evaluate(
    x: &Tensor,
    y: &Tensor,
    params: &SsimParams,
    f: fn(&mut Graph, Var, Var, &SsimParams) -> Result<Var>,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let out = f(&mut g, xv, yv, params)?;
    Ok(g.value(out).clone())
}

pub fn ssim(x: &Tensor, y: &Tensor, params: &SsimParams) -> Result<Vec<f64>> {
    Ok(evaluate(x, y, params, ssim_graph)?.into_data())
}

pub fn ms_ssim(x: &Tensor, y: &Tensor, params: &SsimParams) -> Result<Vec<f64>> {
    Ok(evaluate(x, y, params, ms_ssim_graph)?.into_data())
}

pub fn msssim_loss(x: &Tensor, reconstruction: &Tensor, params: &SsimParams) -> Result<f64> {
    Ok(evaluate(x, reconstruction, params, msssim_loss_graph)?.data()[0])
}
