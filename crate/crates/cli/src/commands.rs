use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use thermocae::augment::Dataset;
use thermocae::cae::{Cae, CaeConfig};
use thermocae::checkpoint::{load_checkpoint, save_checkpoint};
use thermocae::detect::{anomaly_map, export_heatmap, Colormap};
use thermocae::pipeline::{
    dataset_from, fit, model_inputs, roc_of, score_images, synth_test_fault, synth_test_normal, synth_train,
    EvalConfig,
};
use thermocae::thermo::{PatternKind, SplitData};
use thermocae::trainer::{loss_csv, timing_csv, write_text, EpochStats};
use thermocae::GrayImage;

use crate::config::RunConfig;
use crate::failure::Failure;

pub type CmdResult = Result<(), Failure>;

/// Directory name of the faulty test recording at `current` amperes.
pub fn fault_dir_name(current: f64) -> String {
    format!("test_fault_{current}")
}

struct Layout {
    out: PathBuf,
    synth: PathBuf,
    dataset: PathBuf,
    checkpoint: PathBuf,
}

impl Layout {
    fn new(out: &Path, cfg: &RunConfig) -> Self {
        Layout {
            out: out.to_path_buf(),
            synth: cfg.paths.synth.clone().unwrap_or_else(|| out.join("synth")),
            dataset: cfg.paths.dataset.clone().unwrap_or_else(|| out.join("dataset")),
            checkpoint: cfg
                .paths
                .checkpoint
                .clone()
                .unwrap_or_else(|| out.join("train").join("checkpoint.cae")),
        }
    }
}

fn require(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        let err = std::io::Error::new(std::io::ErrorKind::NotFound, "required input does not exist");
        Err(Failure::missing(path, &err))
    }
}

fn load_split(dir: &Path, kind: PatternKind) -> Result<SplitData, Failure> {
    require(dir)?;
    Ok(SplitData::load(dir, kind)?)
}

fn load_dataset(dir: &Path) -> Result<Dataset, Failure> {
    require(dir)?;
    Ok(Dataset::load(dir)?)
}

pub fn synth(cfg: &RunConfig, out: &Path) -> CmdResult {
    let layout = Layout::new(out, cfg);
    let seed = cfg.seeds.synth;
    info!("synthesizing training recording");
    synth_train(&cfg.scene, seed)?.save(&layout.synth.join("train"))?;
    info!("synthesizing fault-free test recording");
    synth_test_normal(&cfg.scene, seed)?.save(&layout.synth.join("test_normal"))?;
    for &c in &cfg.eval.heater_currents {
        info!("synthesizing faulty test recording at {c} A");
        synth_test_fault(&cfg.scene, c, seed)?.save(&layout.synth.join(fault_dir_name(c)))?;
    }
    Ok(())
}

pub fn augment(cfg: &RunConfig, out: &Path) -> CmdResult {
    let layout = Layout::new(out, cfg);
    let train = load_split(&layout.synth.join("train"), PatternKind::Train)?;
    info!("building {} images from {} originals", cfg.augment.n_total, train.frames.len());
    let ds = dataset_from(&train, cfg.augment.n_total, &cfg.augment, cfg.seeds.augment)?;
    ds.save(&layout.dataset)?;
    Ok(())
}

fn write_history(dir: &Path, history: &[EpochStats]) -> CmdResult {
    write_text(&dir.join("loss.csv"), &loss_csv(history))?;
    write_text(&dir.join("timing.csv"), &timing_csv(history))?;
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> CmdResult {
    let layout = Layout::new(out, cfg);
    let ds = load_dataset(&layout.dataset)?;
    let (model, history) = fit(&ds, &cfg.model, &cfg.train, cfg.seeds.init, |_| {})?;
    let dir = layout.out.join("train");
    save_checkpoint(&model, &dir.join("checkpoint.cae"))?;
    write_history(&dir, &history)
}

/// Model-side test frames of one run.
struct TestFrames {
    normal: Vec<GrayImage>,
    faulty: Vec<(f64, Vec<GrayImage>)>,
}

impl TestFrames {
    fn load(layout: &Layout, cfg: &RunConfig, side: usize) -> Result<Self, Failure> {
        let normal = model_inputs(&load_split(&layout.synth.join("test_normal"), PatternKind::Test)?, side);
        let faulty = cfg
            .eval
            .heater_currents
            .iter()
            .map(|&c| {
                let split = load_split(&layout.synth.join(fault_dir_name(c)), PatternKind::Test)?;
                Ok((c, model_inputs(&split, side)))
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        Ok(TestFrames { normal, faulty })
    }

    /// AUC per heater current.
    fn aucs(&self, model: &Cae, eval: &EvalConfig) -> Result<Vec<(f64, f64)>, Failure> {
        let normal = score_images(model, &self.normal, eval)?.scores;
        self.faulty
            .iter()
            .map(|(c, frames)| {
                let faulty = score_images(model, frames, eval)?.scores;
                Ok((*c, roc_of(&normal, &faulty)?.auc))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct AucEntry {
    heater_current: f64,
    auc: f64,
}

#[derive(Serialize)]
struct AucReport {
    score: thermocae::detect::ScoreMethod,
    smooth_k: usize,
    results: Vec<AucEntry>,
}

fn heatmap_ext(colormap: Colormap) -> &'static str {
    match colormap {
        Colormap::Gray => "pgm",
        Colormap::Iron => "ppm",
    }
}

fn export_examples(
    dir: &Path,
    frames: &[GrayImage],
    reconstructions: &[GrayImage],
    eval: &EvalConfig,
) -> CmdResult {
    let ext = heatmap_ext(eval.colormap);
    for (i, (x, x_hat)) in frames.iter().zip(reconstructions).take(eval.heatmaps).enumerate() {
        export_heatmap(x, &dir.join(format!("frame_{i:04}_input.{ext}")), eval.colormap)?;
        export_heatmap(x_hat, &dir.join(format!("frame_{i:04}_reconstruction.{ext}")), eval.colormap)?;
        export_heatmap(&anomaly_map(x, x_hat)?, &dir.join(format!("frame_{i:04}_difference.{ext}")), eval.colormap)?;
    }
    Ok(())
}

fn push_scores(csv: &mut String, split: &str, heater_current: f64, anomalous: bool, scores: &[f64]) {
    let label = if anomalous { "anomalous" } else { "normal" };
    for (i, s) in scores.iter().enumerate() {
        let _ = writeln!(csv, "{split},{i},{heater_current},{label},{s:.17e}");
    }
}

pub fn eval(cfg: &RunConfig, out: &Path) -> CmdResult {
    let layout = Layout::new(out, cfg);
    require(&layout.checkpoint)?;
    let model = load_checkpoint(&layout.checkpoint)?;
    let side = model.config().input_size;
    let frames = TestFrames::load(&layout, cfg, side)?;
    let dir = layout.out.join("eval");
    let heat_dir = dir.join("heatmaps");

    let mut scores_csv = String::from("split,frame,heater_current,label,score\n");
    let normal = score_images(&model, &frames.normal, &cfg.eval)?;
    push_scores(&mut scores_csv, "test_normal", 0.0, false, &normal.scores);
    export_examples(&heat_dir.join("test_normal"), &frames.normal, &normal.reconstructions, &cfg.eval)?;

    let mut results = Vec::new();
    for (c, imgs) in &frames.faulty {
        let name = fault_dir_name(*c);
        let faulty = score_images(&model, imgs, &cfg.eval)?;
        push_scores(&mut scores_csv, &name, *c, true, &faulty.scores);
        export_examples(&heat_dir.join(&name), imgs, &faulty.reconstructions, &cfg.eval)?;
        let roc = roc_of(&normal.scores, &faulty.scores)?;
        info!("heater current {c} A: AUC {:.4}", roc.auc);
        write_text(&dir.join(format!("roc_{c}.csv")), &roc.to_csv())?;
        results.push(AucEntry {
            heater_current: *c,
            auc: roc.auc,
        });
    }
    write_text(&dir.join("scores.csv"), &scores_csv)?;
    let report = AucReport {
        score: cfg.eval.score,
        smooth_k: cfg.eval.smooth_k,
        results,
    };
    let mut json = serde_json::to_string_pretty(&report).map_err(thermocae::Error::from)?;
    json.push('\n');
    write_text(&dir.join("auc.json"), &json)?;
    Ok(())
}

fn final_val(history: &[EpochStats]) -> f64 {
    history.last().map_or(f64::NAN, |s| s.val_loss)
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> CmdResult {
    let layout = Layout::new(out, cfg);
    let ds = load_dataset(&layout.dataset)?;
    let frames = TestFrames::load(&layout, cfg, cfg.model.input_size)?;
    let dir = layout.out.join("sweep");
    let mut summary = String::from("num_layers,latent_dim,heater_current,auc,final_val_loss\n");
    for &layers in &cfg.sweep.num_layers {
        for &latent in &cfg.sweep.latent_dims {
            let model_cfg = CaeConfig {
                num_layers: layers,
                latent_dim: latent,
                ..cfg.model
            };
            model_cfg.validate()?;
            let tag = format!("layers {layers} latent {latent}: ");
            info!("training layers {layers} latent {latent}");
            let (model, history) = fit(&ds, &model_cfg, &cfg.train, cfg.seeds.init, |_| {})?;
            write_history(&dir.join(format!("layers{layers}_latent{latent}")), &history)?;
            for (c, auc) in frames.aucs(&model, &cfg.eval)? {
                info!("{tag}heater current {c} A: AUC {auc:.4}");
                let _ = writeln!(summary, "{layers},{latent},{c},{auc:.17e},{:.17e}", final_val(&history));
            }
        }
    }
    write_text(&dir.join("summary.csv"), &summary)?;
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> CmdResult {
    let layout = Layout::new(out, cfg);
    let train = load_split(&layout.synth.join("train"), PatternKind::Train)?;
    let frames = TestFrames::load(&layout, cfg, cfg.model.input_size)?;
    let dir = layout.out.join("ablate");

    let mut variants = Vec::new();
    for &n in &cfg.ablate.counts {
        variants.push((format!("count{n}"), n, String::new(), cfg.augment.clone()));
    }
    for stage in &cfg.ablate.stages {
        let mut params = cfg.augment.clone();
        params.stages.disable(stage)?;
        variants.push((format!("without_{stage}"), cfg.augment.n_total, stage.clone(), params));
    }

    let mut summary = String::from("variant,n_aug,disabled,heater_current,auc,final_val_loss\n");
    for (name, n, disabled, params) in variants {
        let ds = dataset_from(&train, n, &params, cfg.seeds.augment)?;
        let tag = format!("{name}: ");
        info!("training {name}");
        let (model, history) = fit(&ds, &cfg.model, &cfg.train, cfg.seeds.init, |_| {})?;
        write_history(&dir.join(&name), &history)?;
        for (c, auc) in frames.aucs(&model, &cfg.eval)? {
            info!("{tag}heater current {c} A: AUC {auc:.4}");
            let _ = writeln!(summary, "{name},{n},{disabled},{c},{auc:.17e},{:.17e}", final_val(&history));
        }
    }
    write_text(&dir.join("summary.csv"), &summary)?;
    Ok(())
}

pub const README_STUB: &str = "\
Run directory layout. Every numeric file is plain text with a fixed column order.

config.json                    effective configuration of the last command
synth/<split>/frame_NNNN.pgm   14-bit thermal frames (maxval 16383)
synth/<split>/manifest.jsonl   path, t, current, label, heater_current, viewpoint
dataset/NNNNN.pgm              augmented 16-bit images (maxval 65535)
dataset/manifest.jsonl         file, source, split, aug
train/checkpoint.cae           model checkpoint
train/loss.csv                 epoch,train_loss,val_loss
train/timing.csv               epoch,seconds (wall clock, not reproducible)
eval/scores.csv                split,frame,heater_current,label,score
eval/roc_<current>.csv         threshold,fpr,tpr (first threshold is inf)
eval/auc.json                  score method, smooth_k, AUC per heater current
eval/heatmaps/<split>/         input, reconstruction and difference images
sweep/summary.csv              num_layers,latent_dim,heater_current,auc,final_val_loss
sweep/layersL_latentZ/         loss.csv and timing.csv per model
ablate/summary.csv             variant,n_aug,disabled,heater_current,auc,final_val_loss
ablate/<variant>/              loss.csv and timing.csv per model
";

pub fn write_run_files(cfg: &RunConfig, out: &Path) -> CmdResult {
    fs::create_dir_all(out).map_err(|e| thermocae::Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut json = serde_json::to_string_pretty(cfg).map_err(thermocae::Error::from)?;
    json.push('\n');
    write_text(&out.join("config.json"), &json)?;
    write_text(&out.join("README.txt"), README_STUB)?;
    Ok(())
}
