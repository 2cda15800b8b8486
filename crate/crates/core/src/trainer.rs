//! Adam training of the autoencoder on the 1 - MS-SSIM objective.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cae::Cae;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::msssim::{msssim_loss_graph, SsimParams};
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 100,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs must be at least 1"));
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("adam_eps", self.adam_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("train.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("train.{name} must be in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState { m: zeros(), v: zeros() }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &TrainConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::config("adam step index starts at 1"));
    }
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::shape("adam: parameter, gradient and state counts differ"));
    }
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        p.same_shape(g, "adam")?;
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

fn batch_of(images: &[&GrayImage]) -> Result<Tensor> {
    GrayImage::batch(images)
}

/// Mean 1 - MS-SSIM over `images`, evaluated in batches; parameters are
/// only read.
pub fn validate(model: &Cae, images: &[GrayImage], batch_size: usize, ssim: &SsimParams) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Empty("validation set is empty".into()));
    }
    let mut total = 0.0;
    for chunk in images.chunks(batch_size.max(1)) {
        let refs: Vec<&GrayImage> = chunk.iter().collect();
        let x = batch_of(&refs)?;
        let mut g = Graph::new();
        let vars = model.register(&mut g, false);
        let xv = g.constant(x);
        let out = model.forward_graph(&mut g, &vars, xv)?;
        let loss = msssim_loss_graph(&mut g, xv, out.output, ssim)?;
        total += g.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / images.len() as f64)
}

/// Trains `model` in place. `on_epoch` sees each epoch's statistics as soon
/// as they are known.
pub fn train(
    model: &mut Cae,
    train_set: &[GrayImage],
    val_set: &[GrayImage],
    cfg: &TrainConfig,
    ssim: &SsimParams,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty(format!(
            "training needs both splits, got {} train and {} validation images",
            train_set.len(),
            val_set.len()
        )));
    }
    let mut rng = Rng::new(cfg.shuffle_seed);
    let mut state = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&GrayImage> = idx.iter().map(|&i| &train_set[i]).collect();
            let x = batch_of(&refs)?;
            let mut g = Graph::new();
            let vars = model.register(&mut g, true);
            let xv = g.constant(x);
            let out = model.forward_graph(&mut g, &vars, xv)?;
            let loss = msssim_loss_graph(&mut g, xv, out.output, ssim)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, value });
            }
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor> = vars
                .iter()
                .zip(model.params())
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
                .collect();
            if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: grads[i].data().iter().copied().find(|v| !v.is_finite()).unwrap_or(f64::NAN),
                });
            }
            step += 1;
            adam_step(model.params_mut(), &grads, &mut state, cfg, step)?;
            total += value * idx.len() as f64;
        }
        let val_loss = validate(model, val_set, cfg.batch_size, ssim)?;
        let stats = EpochStats {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: train {:.6} val {:.6} ({:.1}s)",
            cfg.epochs,
            stats.train_loss,
            stats.val_loss,
            stats.seconds
        );
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Deterministic loss table: `epoch,train_loss,val_loss`.
pub fn loss_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for e in history {
        let _ = writeln!(s, "{},{:.17e},{:.17e}", e.epoch, e.train_loss, e.val_loss);
    }
    s
}

/// Wall-clock table: `epoch,seconds`. Kept apart from [`loss_csv`] because
/// timings differ between otherwise identical runs.
pub fn timing_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,seconds\n");
    for e in history {
        let _ = writeln!(s, "{},{:.3}", e.epoch, e.seconds);
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
