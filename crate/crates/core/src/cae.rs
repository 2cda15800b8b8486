//! Convolutional autoencoder: strided 3x3 convolutions down to a small
//! feature map, an affine bottleneck, and the mirrored transposed stack back
//! up to a sigmoid output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ConvSpec, Graph, Tensor, Var};

pub const MAX_CHANNELS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaeConfig {
    pub num_layers: usize,
    pub latent_dim: usize,
    pub input_size: usize,
    /// Channels of the first encoder layer; each further layer doubles it up
    /// to [`MAX_CHANNELS`].
    pub base_channels: usize,
}

impl Default for CaeConfig {
    fn default() -> Self {
        CaeConfig {
            num_layers: 5,
            latent_dim: 64,
            input_size: 128,
            base_channels: 32,
        }
    }
}

impl CaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=6).contains(&self.num_layers) {
            return Err(Error::config(format!(
                "model.num_layers must be in [2, 6], got {}",
                self.num_layers
            )));
        }
        if !(8..=128).contains(&self.latent_dim) {
            return Err(Error::config(format!(
                "model.latent_dim must be in [8, 128], got {}",
                self.latent_dim
            )));
        }
        if !(1..=MAX_CHANNELS).contains(&self.base_channels) {
            return Err(Error::config(format!(
                "model.base_channels must be in [1, {MAX_CHANNELS}], got {}",
                self.base_channels
            )));
        }
        let factor = 1usize << self.num_layers;
        if self.input_size == 0 || self.input_size % factor != 0 {
            return Err(Error::config(format!(
                "model.input_size {} is not divisible by 2^{} = {factor}",
                self.input_size, self.num_layers
            )));
        }
        Ok(())
    }

    /// Output channels of encoder layer `i`.
    pub fn channels(&self, i: usize) -> usize {
        (self.base_channels << i).min(MAX_CHANNELS)
    }

    /// Side of the feature map after the last encoder layer.
    pub fn bottleneck_side(&self) -> usize {
        self.input_size >> self.num_layers
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.num_layers - 1)
    }

    pub fn flat_size(&self) -> usize {
        self.bottleneck_channels() * self.bottleneck_side().pow(2)
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let k = ConvSpec::default().kernel;
        let l = self.num_layers;
        let mut out = Vec::with_capacity(4 * l + 4);
        for i in 0..l {
            let c_in = if i == 0 { 1 } else { self.channels(i - 1) };
            out.push((format!("enc.{i}.weight"), vec![self.channels(i), c_in, k, k]));
            out.push((format!("enc.{i}.bias"), vec![self.channels(i)]));
        }
        out.push(("enc.fc.weight".into(), vec![self.flat_size(), self.latent_dim]));
        out.push(("enc.fc.bias".into(), vec![self.latent_dim]));
        out.push(("dec.fc.weight".into(), vec![self.latent_dim, self.flat_size()]));
        out.push(("dec.fc.bias".into(), vec![self.flat_size()]));
        for j in 0..l {
            let c_in = self.channels(l - 1 - j);
            let c_out = if j + 1 == l { 1 } else { self.channels(l - 2 - j) };
            out.push((format!("dec.{j}.weight"), vec![c_in, c_out, k, k]));
            out.push((format!("dec.{j}.bias"), vec![c_out]));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub latent: Var,
    pub output: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cae {
    config: CaeConfig,
    params: Vec<Tensor>,
}

impl Cae {
    /// Fresh model with He-normal weights and zero biases.
    pub fn build(config: CaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let stride = ConvSpec::default().stride;
        let mut rng = Rng::new(seed);
        let params = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".bias") {
                    return Tensor::zeros(shape);
                }
                let fan_in = if name.starts_with("enc.") && shape.len() == 4 {
                    shape[1] * shape[2] * shape[3]
                } else if shape.len() == 4 {
                    // Each transposed-conv output sees on average k^2 / stride^2 taps per input channel.
                    (shape[0] * shape[2] * shape[3]) / (stride * stride)
                } else {
                    shape[0]
                };
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(shape, |_| std * rng.normal())
            })
            .collect();
        Ok(Cae { config, params })
    }

    pub fn from_parts(config: CaeConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&params) {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Cae { config, params })
    }

    pub fn config(&self) -> &CaeConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.config.layout().into_iter().map(|(n, _)| n).zip(&self.params)
    }

    /// Places the parameters on `g`, tracked when `trainable`.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.config.input_size;
        match shape {
            &[n, 1, h, w] if n > 0 && h == s && w == s => Ok(()),
            _ => Err(Error::shape(format!(
                "model expects [n, 1, {s}, {s}] input, got {shape:?}"
            ))),
        }
    }

    pub fn encode_graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let spec = ConvSpec::default();
        let l = self.config.num_layers;
        let n = g.shape(x)[0];
        let mut h = x;
        for i in 0..l {
            let c = g.conv2d(h, vars[2 * i], vars[2 * i + 1], spec)?;
            h = g.relu(c);
        }
        let flat = g.reshape(h, &[n, self.config.flat_size()])?;
        g.dense(flat, vars[2 * l], vars[2 * l + 1])
    }

    pub fn decode_graph(&self, g: &mut Graph, vars: &[Var], latent: Var) -> Result<Var> {
        let spec = ConvSpec::default();
        let l = self.config.num_layers;
        let n = g.shape(latent)[0];
        let side = self.config.bottleneck_side();
        let fc = g.dense(latent, vars[2 * l + 2], vars[2 * l + 3])?;
        let grid = g.reshape(fc, &[n, self.config.bottleneck_channels(), side, side])?;
        let mut h = g.relu(grid);
        let base = 2 * l + 4;
        for j in 0..l {
            let t = g.conv_transpose2d(h, vars[base + 2 * j], vars[base + 2 * j + 1], spec)?;
            h = if j + 1 == l { g.sigmoid(t) } else { g.relu(t) };
        }
        Ok(h)
    }

    pub fn forward_graph(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<ForwardVars> {
        let latent = self.encode_graph(g, vars, x)?;
        let output = self.decode_graph(g, vars, latent)?;
        Ok(ForwardVars { latent, output })
    }

    /// Reconstruction of an `[n, 1, s, s]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward_graph(&mut g, &vars, xv)?;
        Ok(g.value(out.output).clone())
    }

    /// Bottleneck code, `[n, latent_dim]`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let xv = g.constant(x.clone());
        let z = self.encode_graph(&mut g, &vars, xv)?;
        Ok(g.value(z).clone())
    }

    pub fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        if latent.ndim() != 2 || latent.shape()[1] != self.config.latent_dim {
            return Err(Error::shape(format!(
                "latent must be [n, {}], got {:?}",
                self.config.latent_dim,
                latent.shape()
            )));
        }
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let z = g.constant(latent.clone());
        let out = self.decode_graph(&mut g, &vars, z)?;
        Ok(g.value(out).clone())
    }

    /// Shape of the last encoder feature map as `[channels, side, side]`.
    pub fn bottleneck_shape(&self, x: &Tensor) -> Result<Vec<usize>> {
        self.check_input(x.shape())?;
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let mut h = g.constant(x.clone());
        for i in 0..self.config.num_layers {
            let c = g.conv2d(h, vars[2 * i], vars[2 * i + 1], ConvSpec::default())?;
            h = g.relu(c);
        }
        Ok(g.shape(h)[1..].to_vec())
    }
}
