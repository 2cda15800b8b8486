//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes; every operation pushes a node
//! holding its output and the handles of its inputs, so inputs always precede
//! the nodes that use them. [`Graph::backward`] walks the list once in reverse.
//! Graphs are meant to be rebuilt for every forward pass.

use super::kernels::{self, ConvSpec, SsimWindow};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, spec: ConvSpec },
    ConvTranspose2d { input: Var, weight: Var, bias: Var, spec: ConvSpec },
    Dense { input: Var, weight: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    ClampedPow(Var, f64),
    Filter { input: Var, kernel: Vec<f64> },
    AvgPool2(Var),
    SsimStats { x: Var, y: Var, window: SsimWindow },
    Column(Var, usize),
    MeanPerSample(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one [`Graph::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if `var` is tracked and
    /// the loss depends on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked leaf (data, constants).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let out = kernels::conv2d(self.value(input), self.value(weight), self.value(bias), spec)?;
        let rg = self.tracked(&[input, weight, bias]);
        Ok(self.push(out, Op::Conv2d { input, weight, bias, spec }, rg))
    }

    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let out = kernels::conv_transpose2d(self.value(input), self.value(weight), self.value(bias), spec)?;
        let rg = self.tracked(&[input, weight, bias]);
        Ok(self.push(out, Op::ConvTranspose2d { input, weight, bias, spec }, rg))
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::dense(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.tracked(&[input, weight, bias]);
        Ok(self.push(out, Op::Dense { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = kernels::activation(self.value(x), kernels::Activation::Relu);
        let rg = self.tracked(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = kernels::activation(self.value(x), kernels::Activation::Sigmoid);
        let rg = self.tracked(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn activation(&mut self, x: Var, kind: kernels::Activation) -> Var {
        match kind {
            kernels::Activation::Relu => self.relu(x),
            kernels::Activation::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape.to_vec())?;
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, what)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.tracked(&[x]);
        self.push(out, Op::AddScalar(x), rg)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.tracked(&[x]);
        self.push(out, Op::MulScalar(x, c), rg)
    }

    /// `max(x, 0)^p` for `p > 0`. The derivative is taken as zero where
    /// `x <= 0`.
    pub fn clamped_pow(&mut self, x: Var, p: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v.powf(p) } else { 0.0 });
        let rg = self.tracked(&[x]);
        self.push(out, Op::ClampedPow(x, p), rg)
    }

    /// Separable valid-region filtering of each plane of a 4-D tensor.
    pub fn filter(&mut self, x: Var, kernel: &[f64]) -> Result<Var> {
        let out = kernels::filter_valid(self.value(x), kernel)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(
            out,
            Op::Filter {
                input: x,
                kernel: kernel.to_vec(),
            },
            rg,
        ))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = kernels::avg_pool2(self.value(x))?;
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::AvgPool2(x), rg))
    }

    /// Per-sample `(mean ssim, mean cs)` of two `[n, c, h, w]` tensors,
    /// as an `[n, 2]` node.
    pub fn ssim_stats(&mut self, x: Var, y: Var, window: &SsimWindow) -> Result<Var> {
        let out = kernels::ssim_stats(self.value(x), self.value(y), window)?;
        let rg = self.tracked(&[x, y]);
        Ok(self.push(
            out,
            Op::SsimStats {
                x,
                y,
                window: window.clone(),
            },
            rg,
        ))
    }

    /// Column `j` of an `[n, m]` node, as `[n]`.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let t = self.value(x);
        let &[n, m] = t.shape() else {
            return Err(Error::shape(format!("column of non-matrix {:?}", t.shape())));
        };
        if j >= m {
            return Err(Error::shape(format!("column {j} of a {n}x{m} matrix")));
        }
        let out = Tensor::new(vec![n], (0..n).map(|i| t.data()[i * m + j]).collect())?;
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::Column(x, j), rg))
    }

    /// Mean over every axis but the first: `[n, ...] -> [n]`.
    pub fn mean_per_sample(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.shape()[0];
        let per = t.len() / n;
        let data = t.data().chunks(per).map(|c| c.iter().sum::<f64>() / per as f64).collect();
        let out = Tensor::new(vec![n], data).expect("valid shape");
        let rg = self.tracked(&[x]);
        self.push(out, Op::MeanPerSample(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.tracked(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.tracked(&[x]);
        self.push(out, Op::Mean(x), rg)
    }

    /// Reverse pass from a one-element `loss`. Every call computes fresh
    /// gradients; nothing accumulates across calls.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d { input, weight, bias, spec } => {
                    let (dx, dw, db) =
                        kernels::conv2d_backward(self.value(*input), self.value(*weight), &g, *spec)?;
                    self.accumulate(&mut grads, *input, dx);
                    self.accumulate(&mut grads, *weight, dw);
                    self.accumulate(&mut grads, *bias, db);
                }
                Op::ConvTranspose2d { input, weight, bias, spec } => {
                    let (dx, dw, db) = kernels::conv_transpose2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        &g,
                        *spec,
                    )?;
                    self.accumulate(&mut grads, *input, dx);
                    self.accumulate(&mut grads, *weight, dw);
                    self.accumulate(&mut grads, *bias, db);
                }
                Op::Dense { input, weight, bias } => {
                    let (dx, dw, db) = kernels::dense_backward(self.value(*input), self.value(*weight), &g)?;
                    self.accumulate(&mut grads, *input, dx);
                    self.accumulate(&mut grads, *weight, dw);
                    self.accumulate(&mut grads, *bias, db);
                }
                Op::Relu(x) => {
                    let d = zip_map(&g, &node.value, |gv, y| if y > 0.0 { gv } else { 0.0 });
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Reshape(x) => {
                    let d = g.reshape(self.shape(*x).to_vec())?;
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *b, g.map(|v| -v));
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let d = zip_map(&g, self.value(*b), |gv, bv| gv * bv);
                        self.accumulate(&mut grads, *a, d);
                    }
                    if self.nodes[b.0].requires_grad {
                        let d = zip_map(&g, self.value(*a), |gv, av| gv * av);
                        self.accumulate(&mut grads, *b, d);
                    }
                }
                Op::Div(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let d = zip_map(&g, self.value(*b), |gv, bv| gv / bv);
                        self.accumulate(&mut grads, *a, d);
                    }
                    if self.nodes[b.0].requires_grad {
                        // d(a/b)/db = -(a/b)/b
                        let q = zip_map(&node.value, self.value(*b), |qv, bv| qv / bv);
                        let d = zip_map(&g, &q, |gv, qv| -gv * qv);
                        self.accumulate(&mut grads, *b, d);
                    }
                }
                Op::AddScalar(x) => self.accumulate(&mut grads, *x, g),
                Op::MulScalar(x, c) => {
                    let c = *c;
                    self.accumulate(&mut grads, *x, g.map(|v| v * c));
                }
                Op::ClampedPow(x, p) => {
                    let p = *p;
                    let d = zip_map(&g, self.value(*x), |gv, xv| {
                        if xv > 0.0 {
                            gv * p * xv.powf(p - 1.0)
                        } else {
                            0.0
                        }
                    });
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Filter { input, kernel } => {
                    let s = self.shape(*input);
                    let d = kernels::filter_valid_adjoint(&g, kernel, s[2], s[3])?;
                    self.accumulate(&mut grads, *input, d);
                }
                Op::AvgPool2(x) => {
                    let s = self.shape(*x);
                    let d = kernels::avg_pool2_adjoint(&g, s[2], s[3])?;
                    self.accumulate(&mut grads, *x, d);
                }
                Op::SsimStats { x, y, window } => {
                    let (dx, dy) = kernels::ssim_stats_backward(self.value(*x), self.value(*y), window, &g)?;
                    self.accumulate(&mut grads, *x, dx);
                    self.accumulate(&mut grads, *y, dy);
                }
                Op::Column(x, j) => {
                    let m = self.shape(*x)[1];
                    let j = *j;
                    let d = Tensor::from_fn(self.shape(*x).to_vec(), |i| {
                        if i % m == j {
                            g.data()[i / m]
                        } else {
                            0.0
                        }
                    });
                    self.accumulate(&mut grads, *x, d);
                }
                Op::MeanPerSample(x) => {
                    let t = self.value(*x);
                    let per = t.len() / t.shape()[0];
                    let scale = 1.0 / per as f64;
                    let d = Tensor::from_fn(t.shape().to_vec(), |i| g.data()[i / per] * scale);
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Sum(x) => {
                    let d = Tensor::full(self.shape(*x).to_vec(), g.data()[0]);
                    self.accumulate(&mut grads, *x, d);
                }
                Op::Mean(x) => {
                    let t = self.value(*x);
                    let d = Tensor::full(t.shape().to_vec(), g.data()[0] / t.len() as f64);
                    self.accumulate(&mut grads, *x, d);
                }
            }
        }
        // Only leaves keep their gradients; intermediate buffers were consumed.
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}
