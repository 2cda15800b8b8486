//! End-to-end experiment steps shared by the command-line tool and the
//! acceptance suite: synthesize recordings, build the augmented dataset,
//! train, and score test frames.

use serde::{Deserialize, Serialize};

use crate::augment::{build_dataset, resize, AugmentParams, Dataset};
use crate::cae::{Cae, CaeConfig};
use crate::detect::{anomaly_map, anomaly_score, roc_points, Colormap, RocCurve, ScoreMethod, DEFAULT_SMOOTH_K};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::msssim::SsimParams;
use crate::rng::Rng;
use crate::thermo::{
    generate_split, generate_split_under, load_pattern, FaultSpec, PatternKind, SceneConfig, SplitData, ViewpointPolicy,
};
use crate::trainer::{train, EpochStats, TrainConfig};

/// Heater currents of the fault-intensity study, A.
pub const HEATER_CURRENTS: [f64; 4] = [0.15, 0.08, 0.07, 0.02];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub heater_currents: Vec<f64>,
    pub score: ScoreMethod,
    pub smooth_k: usize,
    pub colormap: Colormap,
    /// Frames per test split exported as input/reconstruction/difference images.
    pub heatmaps: usize,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            heater_currents: HEATER_CURRENTS.to_vec(),
            score: ScoreMethod::SmoothedMax,
            smooth_k: DEFAULT_SMOOTH_K,
            colormap: Colormap::Iron,
            heatmaps: 3,
            batch_size: 32,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heater_currents.is_empty() {
            return Err(Error::config("eval.heater_currents must not be empty"));
        }
        if let Some(c) = self.heater_currents.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
            return Err(Error::config(format!("eval.heater_currents: {c} is not a valid current")));
        }
        if self.smooth_k == 0 {
            return Err(Error::config("eval.smooth_k must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("eval.batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Seeds of the independent random streams of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub synth: u64,
    pub augment: u64,
    pub init: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self::all(0)
    }
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Seeds {
            synth: seed,
            augment: seed,
            init: seed,
        }
    }
}

fn split_seed(seed: u64, which: u64) -> u64 {
    Rng::derive(seed, which).next_u64()
}

/// Seed of the training recording.
pub fn train_split_seed(seed: u64) -> u64 {
    split_seed(seed, 1)
}

/// Seed of the fault-free test recording's poses and noise.
pub fn normal_test_seed(seed: u64) -> u64 {
    split_seed(seed, 2)
}

/// Seed shared by every faulty test recording, so recordings at different
/// heater currents differ only in the heater.
pub fn fault_test_seed(seed: u64) -> u64 {
    split_seed(seed, 3)
}

/// Seed of the load pattern shared by all test recordings. Normal and faulty
/// recordings then see the same load history and differ in the heater, the
/// camera poses and the noise.
pub fn test_pattern_seed(seed: u64) -> u64 {
    split_seed(seed, 4)
}

pub fn synth_train(scene: &SceneConfig, seed: u64) -> Result<SplitData> {
    generate_split(
        scene,
        PatternKind::Train,
        None,
        &ViewpointPolicy::train(),
        train_split_seed(seed),
    )
}

fn synth_test(scene: &SceneConfig, fault: Option<&FaultSpec>, seed: u64) -> Result<SplitData> {
    let steps = load_pattern(PatternKind::Test, test_pattern_seed(seed));
    let render_seed = if fault.is_some() { fault_test_seed(seed) } else { normal_test_seed(seed) };
    generate_split_under(scene, PatternKind::Test, &steps, fault, &ViewpointPolicy::test(), render_seed)
}

pub fn synth_test_normal(scene: &SceneConfig, seed: u64) -> Result<SplitData> {
    synth_test(scene, None, seed)
}

pub fn synth_test_fault(scene: &SceneConfig, heater_current: f64, seed: u64) -> Result<SplitData> {
    synth_test(scene, Some(&FaultSpec::with_current(heater_current)), seed)
}

/// The augmented dataset built from a training recording.
pub fn dataset_from(train_split: &SplitData, n_total: usize, params: &AugmentParams, seed: u64) -> Result<Dataset> {
    build_dataset(&train_split.normalized(), n_total, params, seed)
}

/// Initializes and trains a model.
pub fn fit(
    dataset: &Dataset,
    model: &CaeConfig,
    train_cfg: &TrainConfig,
    init_seed: u64,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Cae, Vec<EpochStats>)> {
    let mut cae = Cae::build(*model, init_seed)?;
    let train_imgs: Vec<GrayImage> = dataset.train.iter().map(|s| s.image.clone()).collect();
    let val_imgs: Vec<GrayImage> = dataset.val.iter().map(|s| s.image.clone()).collect();
    let history = train(
        &mut cae,
        &train_imgs,
        &val_imgs,
        train_cfg,
        &SsimParams::default(),
        on_epoch,
    )?;
    Ok((cae, history))
}

/// Test frames as model inputs: normalized counts resized to the model side.
pub fn model_inputs(split: &SplitData, side: usize) -> Vec<GrayImage> {
    split.normalized().iter().map(|img| resize(img, side, side)).collect()
}

/// Per-image evaluation output.
#[derive(Clone, Debug)]
pub struct Scored {
    pub scores: Vec<f64>,
    pub reconstructions: Vec<GrayImage>,
}

pub fn score_images(model: &Cae, images: &[GrayImage], cfg: &EvalConfig) -> Result<Scored> {
    let mut scores = Vec::with_capacity(images.len());
    let mut reconstructions = Vec::with_capacity(images.len());
    for chunk in images.chunks(cfg.batch_size.max(1)) {
        let refs: Vec<&GrayImage> = chunk.iter().collect();
        let out = model.forward(&GrayImage::batch(&refs)?)?;
        for (x, x_hat) in chunk.iter().zip(GrayImage::unbatch(&out)?) {
            let map = anomaly_map(x, &x_hat)?;
            scores.push(anomaly_score(&map, cfg.score, cfg.smooth_k)?);
            reconstructions.push(x_hat);
        }
    }
    Ok(Scored { scores, reconstructions })
}

/// ROC of normal (negative) against faulty (positive) scores.
pub fn roc_of(normal: &[f64], faulty: &[f64]) -> Result<RocCurve> {
    let scores: Vec<f64> = normal.iter().chain(faulty).copied().collect();
    let labels: Vec<bool> = normal.iter().map(|_| false).chain(faulty.iter().map(|_| true)).collect();
    roc_points(&scores, &labels)
}

/// Test recordings shared by every model evaluated in one experiment.
pub struct TestBench {
    pub normal: Vec<GrayImage>,
    /// `(heater current, frames)`.
    pub faulty: Vec<(f64, Vec<GrayImage>)>,
}

impl TestBench {
    pub fn synthesize(scene: &SceneConfig, currents: &[f64], seed: u64, side: usize) -> Result<Self> {
        let normal = model_inputs(&synth_test_normal(scene, seed)?, side);
        let faulty = currents
            .iter()
            .map(|&c| Ok((c, model_inputs(&synth_test_fault(scene, c, seed)?, side))))
            .collect::<Result<Vec<_>>>()?;
        Ok(TestBench { normal, faulty })
    }

    /// AUC per heater current, in the bench's order.
    pub fn aucs(&self, model: &Cae, cfg: &EvalConfig) -> Result<Vec<(f64, RocCurve)>> {
        let normal = score_images(model, &self.normal, cfg)?.scores;
        self.faulty
            .iter()
            .map(|(c, frames)| {
                let faulty = score_images(model, frames, cfg)?.scores;
                Ok((*c, roc_of(&normal, &faulty)?))
            })
            .collect()
    }
}
