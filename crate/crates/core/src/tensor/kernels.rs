//! Forward and adjoint kernels. These work on plain tensors; the graph in
//! [`super::graph`] strings them together and routes gradients.

use super::gemm::{gemm, Mat};
use super::Tensor;
use crate::error::{Error, Result};

/// Geometry shared by the strided convolution and its transpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/columns appended by the transposed convolution.
    pub output_padding: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            kernel: 3,
            stride: 2,
            padding: 1,
            output_padding: 1,
        }
    }
}

impl ConvSpec {
    /// Output side of the forward convolution, or `None` if the window does
    /// not fit.
    pub fn out_size(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Output side of the transposed convolution.
    pub fn transposed_out_size(&self, input: usize) -> Option<usize> {
        ((input - 1) * self.stride + self.kernel + self.output_padding)
            .checked_sub(2 * self.padding)
            .filter(|&v| v > 0)
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::shape(format!("invalid conv spec {self:?}")));
        }
        if self.output_padding >= self.stride {
            return Err(Error::shape(format!(
                "output_padding {} must be smaller than stride {}",
                self.output_padding, self.stride
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
}

fn im2col(x: &[f64], g: &Geometry, spec: &ConvSpec, cols: &mut [f64]) {
    let k = spec.kernel;
    let p = g.out_h * g.out_w;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for kh in 0..k {
            for kw in 0..k {
                let row = &mut cols[((c * k + kh) * k + kw) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = (oy * spec.stride + kh) as isize - spec.padding as isize;
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kw) as isize - spec.padding as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column matrix back onto the image grid (adjoint of im2col).
fn col2im(cols: &[f64], g: &Geometry, spec: &ConvSpec, x: &mut [f64]) {
    let k = spec.kernel;
    let p = g.out_h * g.out_w;
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for kh in 0..k {
            for kw in 0..k {
                let row = &cols[((c * k + kh) * k + kw) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = (oy * spec.stride + kh) as isize - spec.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src = &row[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * spec.stride + kw) as isize - spec.padding as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(bias: &Tensor, channels: usize, what: &str) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(Error::shape(format!(
            "{what}: bias shape {:?} does not match {channels} output channels",
            bias.shape()
        )));
    }
    Ok(())
}

fn conv_geometry(input: &Tensor, weight: &Tensor, spec: &ConvSpec) -> Result<(usize, usize, Geometry)> {
    spec.validate()?;
    let [n, c_in, h, w] = input.dims4()?;
    let [c_out, w_in, kh, kw] = weight.dims4()?;
    if w_in != c_in || kh != spec.kernel || kw != spec.kernel {
        return Err(Error::shape(format!(
            "conv2d: weight {:?} incompatible with input {:?} and kernel {}",
            weight.shape(),
            input.shape(),
            spec.kernel
        )));
    }
    let (out_h, out_w) = match (spec.out_size(h), spec.out_size(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::shape(format!(
                "conv2d: input {h}x{w} smaller than kernel {}",
                spec.kernel
            )))
        }
    };
    Ok((
        n,
        c_out,
        Geometry {
            channels: c_in,
            height: h,
            width: w,
            out_h,
            out_w,
        },
    ))
}

/// Strided 2-D cross-correlation. `weight` is `[c_out, c_in, k, k]`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, spec: ConvSpec) -> Result<Tensor> {
    let (n, c_out, g) = conv_geometry(input, weight, &spec)?;
    check_bias(bias, c_out, "conv2d")?;
    let kk = g.channels * spec.kernel * spec.kernel;
    let p = g.out_h * g.out_w;
    let in_stride = g.channels * g.height * g.width;
    let mut cols = vec![0.0; kk * p];
    let mut out = vec![0.0; n * c_out * p];
    for b in 0..n {
        im2col(&input.data()[b * in_stride..(b + 1) * in_stride], &g, &spec, &mut cols);
        let dst = &mut out[b * c_out * p..(b + 1) * c_out * p];
        for (co, row) in dst.chunks_mut(p).enumerate() {
            row.fill(bias.data()[co]);
        }
        gemm(
            c_out,
            kk,
            p,
            Mat::rows(weight.data(), kk),
            Mat::rows(&cols, p),
            1.0,
            dst,
        );
    }
    Tensor::new(vec![n, c_out, g.out_h, g.out_w], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    spec: ConvSpec,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c_out, g) = conv_geometry(input, weight, &spec)?;
    if grad_out.shape() != [n, c_out, g.out_h, g.out_w] {
        return Err(Error::shape("conv2d backward: gradient shape mismatch"));
    }
    let kk = g.channels * spec.kernel * spec.kernel;
    let p = g.out_h * g.out_w;
    let in_stride = g.channels * g.height * g.width;
    let mut cols = vec![0.0; kk * p];
    let mut dcols = vec![0.0; kk * p];
    let mut dx = vec![0.0; input.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; c_out];
    for b in 0..n {
        let go = &grad_out.data()[b * c_out * p..(b + 1) * c_out * p];
        for (co, row) in go.chunks(p).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
        im2col(&input.data()[b * in_stride..(b + 1) * in_stride], &g, &spec, &mut cols);
        gemm(c_out, p, kk, Mat::rows(go, p), Mat::transposed(&cols, p), 1.0, &mut dw);
        gemm(kk, c_out, p, Mat::transposed(weight.data(), kk), Mat::rows(go, p), 0.0, &mut dcols);
        col2im(&dcols, &g, &spec, &mut dx[b * in_stride..(b + 1) * in_stride]);
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(weight.shape().to_vec(), dw)?,
        Tensor::new(vec![c_out], db)?,
    ))
}

fn transpose_geometry(input: &Tensor, weight: &Tensor, spec: &ConvSpec) -> Result<(usize, usize, Geometry)> {
    spec.validate()?;
    let [n, c_in, h, w] = input.dims4()?;
    let [w_in, c_out, kh, kw] = weight.dims4()?;
    if w_in != c_in || kh != spec.kernel || kw != spec.kernel {
        return Err(Error::shape(format!(
            "conv_transpose2d: weight {:?} incompatible with input {:?} and kernel {}",
            weight.shape(),
            input.shape(),
            spec.kernel
        )));
    }
    let (out_h, out_w) = match (spec.transposed_out_size(h), spec.transposed_out_size(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::shape("conv_transpose2d: empty output")),
    };
    // The transposed op is col2im over the forward geometry out -> in.
    Ok((
        n,
        c_in,
        Geometry {
            channels: c_out,
            height: out_h,
            width: out_w,
            out_h: h,
            out_w: w,
        },
    ))
}

/// Transposed strided convolution. `weight` is `[c_in, c_out, k, k]`; the
/// map is the adjoint of [`conv2d`] with the same weight buffer.
pub fn conv_transpose2d(input: &Tensor, weight: &Tensor, bias: &Tensor, spec: ConvSpec) -> Result<Tensor> {
    let (n, c_in, g) = transpose_geometry(input, weight, &spec)?;
    check_bias(bias, g.channels, "conv_transpose2d")?;
    let kk = g.channels * spec.kernel * spec.kernel;
    let p = g.out_h * g.out_w;
    let out_stride = g.channels * g.height * g.width;
    let plane = g.height * g.width;
    let mut cols = vec![0.0; kk * p];
    let mut out = vec![0.0; n * out_stride];
    for b in 0..n {
        let x = &input.data()[b * c_in * p..(b + 1) * c_in * p];
        gemm(kk, c_in, p, Mat::transposed(weight.data(), kk), Mat::rows(x, p), 0.0, &mut cols);
        let dst = &mut out[b * out_stride..(b + 1) * out_stride];
        for (c, chan) in dst.chunks_mut(plane).enumerate() {
            chan.fill(bias.data()[c]);
        }
        col2im(&cols, &g, &spec, dst);
    }
    Tensor::new(vec![n, g.channels, g.height, g.width], out)
}

/// Gradients of [`conv_transpose2d`] with respect to input, weight and bias.
pub fn conv_transpose2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    spec: ConvSpec,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c_in, g) = transpose_geometry(input, weight, &spec)?;
    if grad_out.shape() != [n, g.channels, g.height, g.width] {
        return Err(Error::shape("conv_transpose2d backward: gradient shape mismatch"));
    }
    let kk = g.channels * spec.kernel * spec.kernel;
    let p = g.out_h * g.out_w;
    let out_stride = g.channels * g.height * g.width;
    let plane = g.height * g.width;
    let mut cols = vec![0.0; kk * p];
    let mut dx = vec![0.0; input.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; g.channels];
    for b in 0..n {
        let go = &grad_out.data()[b * out_stride..(b + 1) * out_stride];
        for (c, chan) in go.chunks(plane).enumerate() {
            db[c] += chan.iter().sum::<f64>();
        }
        im2col(go, &g, &spec, &mut cols);
        let x = &input.data()[b * c_in * p..(b + 1) * c_in * p];
        gemm(c_in, kk, p, Mat::rows(weight.data(), kk), Mat::rows(&cols, p), 0.0, &mut dx[b * c_in * p..(b + 1) * c_in * p]);
        gemm(c_in, p, kk, Mat::rows(x, p), Mat::transposed(&cols, p), 1.0, &mut dw);
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(weight.shape().to_vec(), dw)?,
        Tensor::new(vec![g.channels], db)?,
    ))
}

fn dense_dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    match (input.shape(), weight.shape()) {
        (&[n, f], &[wf, g]) if f == wf => Ok((n, f, g)),
        (a, b) => Err(Error::shape(format!(
            "dense: input {a:?} incompatible with weight {b:?}"
        ))),
    }
}

/// Affine map `input · weight + bias` with `input: [n, f]`, `weight: [f, g]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f, g) = dense_dims(input, weight)?;
    check_bias(bias, g, "dense")?;
    let mut out = Vec::with_capacity(n * g);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(n, f, g, Mat::rows(input.data(), f), Mat::rows(weight.data(), g), 1.0, &mut out);
    Tensor::new(vec![n, g], out)
}

pub fn dense_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, f, g) = dense_dims(input, weight)?;
    if grad_out.shape() != [n, g] {
        return Err(Error::shape("dense backward: gradient shape mismatch"));
    }
    let mut dx = vec![0.0; n * f];
    let mut dw = vec![0.0; f * g];
    gemm(n, g, f, Mat::rows(grad_out.data(), g), Mat::transposed(weight.data(), g), 0.0, &mut dx);
    gemm(f, n, g, Mat::transposed(input.data(), f), Mat::rows(grad_out.data(), g), 0.0, &mut dw);
    let mut db = vec![0.0; g];
    for row in grad_out.data().chunks(g) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    Ok((
        Tensor::new(vec![n, f], dx)?,
        Tensor::new(vec![f, g], dw)?,
        Tensor::new(vec![g], db)?,
    ))
}

// Largest double below one; keeps the sigmoid strictly inside (0, 1).
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

pub(crate) fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        // Subgradient at zero is zero; see the backward pass in the graph.
        Activation::Relu => input.map(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Valid-region separable filter of one `h x w` plane into `dst`
/// (`(h-k+1) x (w-k+1)`). `tmp` must hold `h * (w-k+1)` values.
fn filter_plane(src: &[f64], h: usize, w: usize, kernel: &[f64], tmp: &mut [f64], dst: &mut [f64]) {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    tmp[..h * ow].fill(0.0);
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let t = &mut tmp[y * ow..(y + 1) * ow];
        for (i, &kv) in kernel.iter().enumerate() {
            for (tv, sv) in t.iter_mut().zip(&row[i..i + ow]) {
                *tv += kv * sv;
            }
        }
    }
    dst[..oh * ow].fill(0.0);
    for y in 0..oh {
        let d = &mut dst[y * ow..(y + 1) * ow];
        for (i, &kv) in kernel.iter().enumerate() {
            for (dv, sv) in d.iter_mut().zip(&tmp[(y + i) * ow..(y + i + 1) * ow]) {
                *dv += kv * sv;
            }
        }
    }
}

/// Adjoint of [`filter_plane`], accumulated into `dst` (`h x w`).
fn filter_plane_adjoint(g: &[f64], h: usize, w: usize, kernel: &[f64], tmp: &mut [f64], dst: &mut [f64]) {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    tmp[..h * ow].fill(0.0);
    for y in 0..oh {
        let s = &g[y * ow..(y + 1) * ow];
        for (i, &kv) in kernel.iter().enumerate() {
            for (tv, sv) in tmp[(y + i) * ow..(y + i + 1) * ow].iter_mut().zip(s) {
                *tv += kv * sv;
            }
        }
    }
    for y in 0..h {
        let t = &tmp[y * ow..(y + 1) * ow];
        let d = &mut dst[y * w..(y + 1) * w];
        for (i, &kv) in kernel.iter().enumerate() {
            for (dv, tv) in d[i..i + ow].iter_mut().zip(t) {
                *dv += kv * tv;
            }
        }
    }
}

fn check_filter(h: usize, w: usize, k: usize) -> Result<()> {
    if k == 0 || k > h || k > w {
        return Err(Error::shape(format!(
            "filter of length {k} does not fit a {h}x{w} plane"
        )));
    }
    Ok(())
}

/// Separable "valid" filtering of every `[h, w]` plane of a 4-D tensor with
/// the same 1-D kernel along both axes.
pub fn filter_valid(input: &Tensor, kernel: &[f64]) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4()?;
    let k = kernel.len();
    check_filter(h, w, k)?;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    let mut out = vec![0.0; n * c * oh * ow];
    for (src, dst) in input.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        filter_plane(src, h, w, kernel, &mut tmp, dst);
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Adjoint of [`filter_valid`]: maps a gradient on the valid region back to
/// the full plane.
pub fn filter_valid_adjoint(grad_out: &Tensor, kernel: &[f64], h: usize, w: usize) -> Result<Tensor> {
    let [n, c, oh, ow] = grad_out.dims4()?;
    let k = kernel.len();
    if oh + k - 1 != h || ow + k - 1 != w {
        return Err(Error::shape("filter adjoint: size mismatch"));
    }
    let mut tmp = vec![0.0; h * ow];
    let mut out = vec![0.0; n * c * h * w];
    for (g, dst) in grad_out.data().chunks(oh * ow).zip(out.chunks_mut(h * w)) {
        filter_plane_adjoint(g, h, w, kernel, &mut tmp, dst);
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Constants and window of one SSIM evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimWindow {
    /// Normalized 1-D window; the 2-D window is its outer product.
    pub kernel: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
}

/// Filtered local statistics of one plane pair.
struct LocalStats {
    mx: Vec<f64>,
    my: Vec<f64>,
    exx: Vec<f64>,
    eyy: Vec<f64>,
    exy: Vec<f64>,
}

fn local_stats(x: &[f64], y: &[f64], h: usize, w: usize, win: &SsimWindow, tmp: &mut [f64]) -> LocalStats {
    let k = win.kernel.len();
    let p = (h - k + 1) * (w - k + 1);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mut run = |src: &[f64]| {
        let mut d = vec![0.0; p];
        filter_plane(src, h, w, &win.kernel, tmp, &mut d);
        d
    };
    LocalStats {
        mx: run(x),
        my: run(y),
        exx: run(&xx),
        eyy: run(&yy),
        exy: run(&xy),
    }
}

/// Per-sample means of the local SSIM map and of the contrast-structure map.
///
/// Inputs are `[n, c, h, w]`; the output is `[n, 2]` holding `(ssim, cs)`
/// for each sample, averaged over channels and the valid window positions.
pub fn ssim_stats(x: &Tensor, y: &Tensor, win: &SsimWindow) -> Result<Tensor> {
    x.same_shape(y, "ssim")?;
    let [n, c, h, w] = x.dims4()?;
    check_filter(h, w, win.kernel.len())?;
    let k = win.kernel.len();
    let p = (h - k + 1) * (w - k + 1);
    let mut tmp = vec![0.0; h * (w - k + 1)];
    let mut out = vec![0.0; 2 * n];
    let plane = h * w;
    for s in 0..n {
        let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            let st = local_stats(&x.data()[off..off + plane], &y.data()[off..off + plane], h, w, win, &mut tmp);
            for i in 0..p {
                let (mx, my) = (st.mx[i], st.my[i]);
                let cross = mx * my;
                let sq = mx * mx + my * my;
                let a1 = 2.0 * cross + win.c1;
                let b1 = sq + win.c1;
                let a2 = 2.0 * (st.exy[i] - cross) + win.c2;
                let b2 = (st.exx[i] - mx * mx) + (st.eyy[i] - my * my) + win.c2;
                let cs = a2 / b2;
                ssim_sum += (a1 / b1) * cs;
                cs_sum += cs;
            }
        }
        let denom = (c * p) as f64;
        out[2 * s] = ssim_sum / denom;
        out[2 * s + 1] = cs_sum / denom;
    }
    Tensor::new(vec![n, 2], out)
}

/// Gradients of [`ssim_stats`] with respect to `x` and `y` given the
/// upstream gradient `[n, 2]`.
pub fn ssim_stats_backward(x: &Tensor, y: &Tensor, win: &SsimWindow, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    x.same_shape(y, "ssim backward")?;
    let [n, c, h, w] = x.dims4()?;
    if grad_out.shape() != [n, 2] {
        return Err(Error::shape("ssim backward: gradient shape mismatch"));
    }
    let k = win.kernel.len();
    let ow = w - k + 1;
    let p = (h - k + 1) * ow;
    let plane = h * w;
    let mut tmp = vec![0.0; h * ow];
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; y.len()];
    let (mut g_mx, mut g_my, mut g_exx, mut g_eyy, mut g_exy) =
        (vec![0.0; p], vec![0.0; p], vec![0.0; p], vec![0.0; p], vec![0.0; p]);
    let mut buf = vec![0.0; plane];
    for s in 0..n {
        let denom = (c * p) as f64;
        let g_ssim = grad_out.data()[2 * s] / denom;
        let g_cs = grad_out.data()[2 * s + 1] / denom;
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            let xs = &x.data()[off..off + plane];
            let ys = &y.data()[off..off + plane];
            let st = local_stats(xs, ys, h, w, win, &mut tmp);
            for i in 0..p {
                let (mx, my) = (st.mx[i], st.my[i]);
                let cross = mx * my;
                let a1 = 2.0 * cross + win.c1;
                let b1 = mx * mx + my * my + win.c1;
                let a2 = 2.0 * (st.exy[i] - cross) + win.c2;
                let b2 = (st.exx[i] - mx * mx) + (st.eyy[i] - my * my) + win.c2;
                let l = a1 / b1;
                let cs = a2 / b2;
                // Weight on d(cs) collects the direct term and the product rule.
                let w_cs = g_cs + g_ssim * l;
                let w_l = g_ssim * cs;
                let dl_dmx = 2.0 * (my - l * mx) / b1;
                let dl_dmy = 2.0 * (mx - l * my) / b1;
                let dcs_dmx = 2.0 * (cs * mx - my) / b2;
                let dcs_dmy = 2.0 * (cs * my - mx) / b2;
                let dcs_dvar = -cs / b2;
                g_mx[i] = w_l * dl_dmx + w_cs * dcs_dmx;
                g_my[i] = w_l * dl_dmy + w_cs * dcs_dmy;
                g_exx[i] = w_cs * dcs_dvar;
                g_eyy[i] = w_cs * dcs_dvar;
                g_exy[i] = w_cs * 2.0 / b2;
            }
            // x <- F^T(g_mx) + 2x F^T(g_exx) + y F^T(g_exy), and symmetrically for y.
            let dst = &mut gx[off..off + plane];
            filter_plane_adjoint(&g_mx, h, w, &win.kernel, &mut tmp, dst);
            buf.fill(0.0);
            filter_plane_adjoint(&g_exx, h, w, &win.kernel, &mut tmp, &mut buf);
            for ((d, b), xv) in dst.iter_mut().zip(&buf).zip(xs) {
                *d += 2.0 * xv * b;
            }
            buf.fill(0.0);
            filter_plane_adjoint(&g_exy, h, w, &win.kernel, &mut tmp, &mut buf);
            let exy_adj = buf.clone();
            for ((d, b), yv) in dst.iter_mut().zip(&exy_adj).zip(ys) {
                *d += yv * b;
            }
            let dst = &mut gy[off..off + plane];
            filter_plane_adjoint(&g_my, h, w, &win.kernel, &mut tmp, dst);
            buf.fill(0.0);
            filter_plane_adjoint(&g_eyy, h, w, &win.kernel, &mut tmp, &mut buf);
            for ((d, b), yv) in dst.iter_mut().zip(&buf).zip(ys) {
                *d += 2.0 * yv * b;
            }
            for ((d, b), xv) in dst.iter_mut().zip(&exy_adj).zip(xs) {
                *d += xv * b;
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), gx)?, Tensor::new(y.shape().to_vec(), gy)?))
}

/// 2x2 mean pooling; a trailing odd row or column is dropped.
pub fn avg_pool2(input: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::shape(format!("cannot pool a {h}x{w} plane")));
    }
    let mut out = vec![0.0; n * c * oh * ow];
    for (src, dst) in input.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for y in 0..oh {
            for x in 0..ow {
                let a = src[2 * y * w + 2 * x] + src[2 * y * w + 2 * x + 1];
                let b = src[(2 * y + 1) * w + 2 * x] + src[(2 * y + 1) * w + 2 * x + 1];
                dst[y * ow + x] = 0.25 * (a + b);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn avg_pool2_adjoint(grad_out: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [n, c, oh, ow] = grad_out.dims4()?;
    if oh != h / 2 || ow != w / 2 {
        return Err(Error::shape("pool adjoint: size mismatch"));
    }
    let mut out = vec![0.0; n * c * h * w];
    for (g, dst) in grad_out.data().chunks(oh * ow).zip(out.chunks_mut(h * w)) {
        for y in 0..oh {
            for x in 0..ow {
                let v = 0.25 * g[y * ow + x];
                dst[2 * y * w + 2 * x] = v;
                dst[2 * y * w + 2 * x + 1] = v;
                dst[(2 * y + 1) * w + 2 * x] = v;
                dst[(2 * y + 1) * w + 2 * x + 1] = v;
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}
