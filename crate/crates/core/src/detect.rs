//! Reconstruction-error anomaly maps, scalar scores, ROC curves, and
//! visual exports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::pnm::Pnm;

/// Pointwise `|x - x_hat|`.
pub fn anomaly_map(x: &GrayImage, x_hat: &GrayImage) -> Result<GrayImage> {
    if (x.width(), x.height()) != (x_hat.width(), x_hat.height()) {
        return Err(Error::shape(format!(
            "anomaly map of {}x{} and {}x{} images",
            x.width(),
            x.height(),
            x_hat.width(),
            x_hat.height()
        )));
    }
    let data = x.data().iter().zip(x_hat.data()).map(|(a, b)| (a - b).abs()).collect();
    GrayImage::new(x.width(), x.height(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// Maximum of the map after a k x k box filter over the valid region.
    SmoothedMax,
    Mean,
}

pub const DEFAULT_SMOOTH_K: usize = 5;

pub fn anomaly_score(map: &GrayImage, method: ScoreMethod, smooth_k: usize) -> Result<f64> {
    match method {
        ScoreMethod::Mean => Ok(map.data().iter().sum::<f64>() / map.data().len() as f64),
        ScoreMethod::SmoothedMax => {
            let (w, h) = (map.width(), map.height());
            if smooth_k == 0 || smooth_k > w || smooth_k > h {
                return Err(Error::config(format!(
                    "eval.smooth_k {smooth_k} does not fit a {w}x{h} map"
                )));
            }
            // Row sums first, then column sums of those. Both are plain ordered
            // additions, so a pointwise larger map never scores lower.
            let k = smooth_k;
            let ow = w - k + 1;
            let mut rows = vec![0.0; h * ow];
            for y in 0..h {
                for x in 0..ow {
                    rows[y * ow + x] = (x..x + k).map(|i| map.get(i, y)).sum();
                }
            }
            let area = (k * k) as f64;
            let mut best = f64::NEG_INFINITY;
            for y in 0..=h - k {
                for x in 0..ow {
                    let s: f64 = (y..y + k).map(|j| rows[j * ow + x]).sum();
                    best = best.max(s / area);
                }
            }
            Ok(best)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Threshold producing each point; the first is `+inf` (nothing flagged).
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

/// Sweeps a threshold over every distinct score; a score at or above the
/// threshold is called anomalous. `labels[i]` is true for anomalous samples.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::config(format!("score {bad} is not a number")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
        thresholds.push(t);
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok(RocCurve { points, thresholds, auc })
}

impl RocCurve {
    /// `threshold,fpr,tpr` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for (t, (f, p)) in self.thresholds.iter().zip(&self.points) {
            let _ = writeln!(s, "{t:e},{f:e},{p:e}");
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    Gray,
    Iron,
}

/// Anchor colors of the iron palette, evenly spaced over [0, 255].
const IRON_ANCHORS: [[u8; 3]; 7] = [
    [0, 0, 0],
    [32, 0, 96],
    [128, 0, 140],
    [200, 40, 60],
    [240, 120, 0],
    [255, 200, 20],
    [255, 255, 255],
];

/// 256-entry iron table interpolated linearly between the anchors.
pub fn iron_table() -> [[u8; 3]; 256] {
    let mut table = [[0u8; 3]; 256];
    let segments = (IRON_ANCHORS.len() - 1) as f64;
    for (i, entry) in table.iter_mut().enumerate() {
        let pos = i as f64 / 255.0 * segments;
        let j = (pos.floor() as usize).min(IRON_ANCHORS.len() - 2);
        let f = pos - j as f64;
        for c in 0..3 {
            let (a, b) = (IRON_ANCHORS[j][c] as f64, IRON_ANCHORS[j + 1][c] as f64);
            entry[c] = (a + (b - a) * f).round() as u8;
        }
    }
    table
}

/// Per-image min-max normalization to 8-bit levels; a constant image maps
/// to level 0.
pub fn normalize_levels(img: &GrayImage) -> Vec<u8> {
    let (lo, hi) = img.min_max();
    let span = hi - lo;
    img.data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn heatmap(img: &GrayImage, colormap: Colormap) -> Pnm {
    let levels = normalize_levels(img);
    let (w, h) = (img.width(), img.height());
    match colormap {
        Colormap::Gray => Pnm::gray(w, h, 255, levels.into_iter().map(u16::from).collect()),
        Colormap::Iron => {
            let table = iron_table();
            let samples = levels
                .into_iter()
                .flat_map(|l| table[l as usize].map(u16::from))
                .collect();
            Pnm::rgb(w, h, samples)
        }
    }
}

pub fn export_heatmap(img: &GrayImage, path: &Path, colormap: Colormap) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    heatmap(img, colormap).write(path)
}
