//! Random geometric and photometric augmentation of single-channel images.
//!
//! The geometric chain (pad, rotate, perspective, crop, resize) is composed
//! into one homography and the source is resampled once. Brightness and
//! contrast are applied to the warped result.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homography::Homography;
use crate::image::GrayImage;
use crate::pnm::Pnm;
use crate::rng::Rng;

/// Which stages of the chain are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stages {
    pub pad: bool,
    pub rotate: bool,
    pub perspective: bool,
    pub crop: bool,
    pub color: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            pad: true,
            rotate: true,
            perspective: true,
            crop: true,
            color: true,
        }
    }
}

/// Names accepted by [`Stages::disable`].
pub const STAGE_NAMES: [&str; 5] = ["pad", "rotate", "perspective", "crop", "color"];

impl Stages {
    pub fn none() -> Self {
        Stages {
            pad: false,
            rotate: false,
            perspective: false,
            crop: false,
            color: false,
        }
    }

    pub fn disable(&mut self, name: &str) -> Result<()> {
        let flag = match name {
            "pad" => &mut self.pad,
            "rotate" => &mut self.rotate,
            "perspective" => &mut self.perspective,
            "crop" | "resize" => &mut self.crop,
            "color" | "brightness" | "contrast" => &mut self.color,
            other => {
                return Err(Error::config(format!(
                    "unknown augmentation stage `{other}` (expected one of {})",
                    STAGE_NAMES.join(", ")
                )))
            }
        };
        *flag = false;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    /// Dataset size including the resized originals.
    pub n_total: usize,
    /// Side of the padded canvas relative to the source.
    pub pad_factor: f64,
    pub rotation_deg: (f64, f64),
    /// Corner displacement as a fraction of the canvas width/height.
    pub perspective_scale: (f64, f64),
    /// Crop side as a fraction of the unpadded source side.
    pub crop_fraction: (f64, f64),
    pub brightness_delta: (f64, f64),
    pub contrast_delta: (f64, f64),
    pub out_size: usize,
    /// Value for samples that fall outside the source.
    pub fill: f64,
    pub stages: Stages,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            n_total: 10_000,
            pad_factor: 1.5,
            rotation_deg: (-45.0, 45.0),
            perspective_scale: (0.0, 0.1),
            crop_fraction: (0.44, 1.0),
            brightness_delta: (-0.1, 0.1),
            contrast_delta: (-0.1, 0.1),
            out_size: 128,
            fill: 0.0,
            stages: Stages::default(),
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("rotation_deg", self.rotation_deg),
            ("perspective_scale", self.perspective_scale),
            ("crop_fraction", self.crop_fraction),
            ("brightness_delta", self.brightness_delta),
            ("contrast_delta", self.contrast_delta),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(format!("augment.{name}: range [{lo}, {hi}] is not ordered")));
            }
        }
        if self.out_size < 8 {
            return Err(Error::config(format!("augment.out_size must be at least 8, got {}", self.out_size)));
        }
        if !(self.pad_factor >= 1.0) {
            return Err(Error::config(format!("augment.pad_factor must be >= 1, got {}", self.pad_factor)));
        }
        if self.crop_fraction.0 <= 0.0 {
            return Err(Error::config("augment.crop_fraction must be positive"));
        }
        if self.perspective_scale.0 < 0.0 || self.perspective_scale.1 >= 0.5 {
            return Err(Error::config("augment.perspective_scale must lie in [0, 0.5)"));
        }
        Ok(())
    }

    fn effective_pad(&self) -> f64 {
        if self.stages.pad {
            self.pad_factor
        } else {
            1.0
        }
    }
}

/// One concrete draw of the augmentation chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledAug {
    pub angle_deg: f64,
    /// Inward displacement of the canvas corners (top-left, top-right,
    /// bottom-right, bottom-left) as fractions of the canvas width/height.
    pub corners: [[f64; 2]; 4],
    pub crop_fraction: f64,
    /// Position of the crop center within its admissible range, per axis,
    /// in `[0, 1]`; 0.5 is centered.
    pub crop_center: [f64; 2],
    pub brightness: f64,
    pub contrast: f64,
}

impl SampledAug {
    pub fn identity() -> Self {
        SampledAug {
            angle_deg: 0.0,
            corners: [[0.0; 2]; 4],
            crop_fraction: 1.0,
            crop_center: [0.5, 0.5],
            brightness: 0.0,
            contrast: 0.0,
        }
    }
}

pub fn sample_aug(params: &AugmentParams, rng: &mut Rng) -> SampledAug {
    let s = params.stages;
    let mut aug = SampledAug::identity();
    if s.rotate {
        aug.angle_deg = rng.uniform(params.rotation_deg.0, params.rotation_deg.1);
    }
    if s.perspective {
        for c in aug.corners.iter_mut() {
            for v in c.iter_mut() {
                *v = rng.uniform(params.perspective_scale.0, params.perspective_scale.1);
            }
        }
    }
    if s.crop {
        aug.crop_fraction = rng.uniform(params.crop_fraction.0, params.crop_fraction.1);
        aug.crop_center = [rng.next_f64(), rng.next_f64()];
    }
    if s.color {
        aug.brightness = rng.uniform(params.brightness_delta.0, params.brightness_delta.1);
        aug.contrast = rng.uniform(params.contrast_delta.0, params.contrast_delta.1);
    }
    aug
}

/// Maps output pixel coordinates to source coordinates for one draw.
pub fn build_homography(img_w: usize, img_h: usize, aug: &SampledAug, params: &AugmentParams) -> Result<Homography> {
    if img_w == 0 || img_h == 0 {
        return Err(Error::Empty(format!("image of size {img_w}x{img_h}")));
    }
    let (w, h) = (img_w as f64, img_h as f64);
    let pad = params.effective_pad();
    let (cw, ch) = (w * pad, h * pad);

    let to_canvas = Homography::translation((cw - w) / 2.0, (ch - h) / 2.0);
    let rotate = Homography::rotation_about(aug.angle_deg, cw / 2.0, ch / 2.0);

    let box_corners = [[0.0, 0.0], [cw, 0.0], [cw, ch], [0.0, ch]];
    let inward = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]];
    let mut moved = box_corners;
    for i in 0..4 {
        moved[i][0] += inward[i][0] * aug.corners[i][0] * cw;
        moved[i][1] += inward[i][1] * aug.corners[i][1] * ch;
    }
    let perspective = Homography::from_points(box_corners, moved)?;

    let (rw, rh) = (aug.crop_fraction * w, aug.crop_fraction * h);
    let x0 = aug.crop_center[0] * (cw - rw).max(0.0) + (cw - rw).min(0.0) / 2.0;
    let y0 = aug.crop_center[1] * (ch - rh).max(0.0) + (ch - rh).min(0.0) / 2.0;
    let out = params.out_size as f64;
    let crop_resize = Homography::scale(out / rw, out / rh).then_after(&Homography::translation(-x0, -y0));

    let forward = crop_resize
        .then_after(&perspective)
        .then_after(&rotate)
        .then_after(&to_canvas);
    forward.inverse()
}

/// Bilinear sample at continuous pixel coordinates, or `fill` outside the
/// half-pixel border around the pixel centers.
fn sample(img: &GrayImage, x: f64, y: f64, fill: f64) -> f64 {
    let (w, h) = (img.width(), img.height());
    let (fx, fy) = (x - 0.5, y - 0.5);
    if !(fx >= -0.5 && fy >= -0.5 && fx <= w as f64 - 0.5 && fy <= h as f64 - 0.5) {
        return fill;
    }
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
    let d = img.data();
    let top = d[y0 * w + x0] * (1.0 - ax) + d[y0 * w + x1] * ax;
    let bottom = d[y1 * w + x0] * (1.0 - ax) + d[y1 * w + x1] * ax;
    top * (1.0 - ay) + bottom * ay
}

/// Inverse-mapped bilinear warp. `h` maps output to source coordinates.
pub fn warp_bilinear(image: &GrayImage, h: &Homography, out_w: usize, out_h: usize, fill: f64) -> GrayImage {
    GrayImage::from_fn(out_w, out_h, |x, y| {
        let (u, v) = h.apply(x as f64 + 0.5, y as f64 + 0.5);
        sample(image, u, v, fill)
    })
}

/// Plain bilinear resize onto the full source extent.
pub fn resize(image: &GrayImage, out_w: usize, out_h: usize) -> GrayImage {
    let h = Homography::scale(
        image.width() as f64 / out_w as f64,
        image.height() as f64 / out_h as f64,
    );
    warp_bilinear(image, &h, out_w, out_h, 0.0)
}

pub fn adjust_brightness_contrast(image: &GrayImage, b: f64, c: f64) -> GrayImage {
    image.map(|v| ((v - 0.5) * (1.0 + c) + 0.5 + b).clamp(0.0, 1.0))
}

/// Runs the whole chain on one image. A degenerate draw is replaced by one
/// fresh draw before giving up.
pub fn augment_one(original: &GrayImage, params: &AugmentParams, rng: &mut Rng) -> Result<(GrayImage, SampledAug)> {
    params.validate()?;
    let mut aug = sample_aug(params, rng);
    let h = match build_homography(original.width(), original.height(), &aug, params) {
        Ok(h) => h,
        Err(Error::Degenerate(_)) => {
            aug = sample_aug(params, rng);
            build_homography(original.width(), original.height(), &aug, params)?
        }
        Err(e) => return Err(e),
    };
    let warped = warp_bilinear(original, &h, params.out_size, params.out_size, params.fill);
    let out = if params.stages.color {
        adjust_brightness_contrast(&warped, aug.brightness, aug.contrast)
    } else {
        warped.map(|v| v.clamp(0.0, 1.0))
    };
    Ok((out, aug))
}

/// Levels used when a dataset image is stored.
const STORE_MAX: f64 = 65535.0;

/// Rounds to the 16-bit grid used on disk, so an in-memory dataset and its
/// reloaded copy are identical.
fn quantize(img: &GrayImage) -> GrayImage {
    img.map(|v| (v.clamp(0.0, 1.0) * STORE_MAX).round() / STORE_MAX)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    /// Index of the original the sample was drawn from.
    pub source: usize,
    /// `None` for a resized original.
    pub aug: Option<SampledAug>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Share of the dataset used for training.
pub fn train_count(n_total: usize) -> usize {
    n_total * 9 / 10
}

/// Stream reserved for the train/validation permutation.
const SPLIT_STREAM: u64 = u64::MAX;

/// Resized originals plus `n_total - originals.len()` augmented draws, split
/// 90/10 by a seeded permutation.
pub fn build_dataset(originals: &[GrayImage], n_total: usize, params: &AugmentParams, seed: u64) -> Result<Dataset> {
    params.validate()?;
    if originals.is_empty() {
        return Err(Error::Empty("no original images to augment".into()));
    }
    if n_total < originals.len() {
        return Err(Error::config(format!(
            "augment.n_total {n_total} is smaller than the {} originals",
            originals.len()
        )));
    }
    let size = params.out_size;
    let mut samples = Vec::with_capacity(n_total);
    for (i, img) in originals.iter().enumerate() {
        samples.push(Sample {
            image: quantize(&resize(img, size, size)),
            source: i,
            aug: None,
        });
    }
    for i in originals.len()..n_total {
        let mut rng = Rng::derive(seed, i as u64);
        let source = rng.below(originals.len());
        let (image, aug) = augment_one(&originals[source], params, &mut rng)?;
        samples.push(Sample {
            image: quantize(&image),
            source,
            aug: Some(aug),
        });
    }
    let mut order: Vec<usize> = (0..n_total).collect();
    Rng::derive(seed, SPLIT_STREAM).shuffle(&mut order);
    let n_train = train_count(n_total);
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Sample> { idx.iter().map(|&i| slots[i].take().expect("permutation")).collect() };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..]);
    Ok(Dataset { train, val })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    file: String,
    source: usize,
    split: Split,
    aug: Option<SampledAug>,
}

pub const MANIFEST: &str = "manifest.jsonl";

impl Dataset {
    /// Writes one 16-bit PGM per sample plus a JSON-lines manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join(MANIFEST);
        let mut manifest = Vec::new();
        let all = self
            .train
            .iter()
            .map(|s| (Split::Train, s))
            .chain(self.val.iter().map(|s| (Split::Val, s)));
        for (i, (split, s)) in all.enumerate() {
            let file = format!("{i:05}.pgm");
            let samples = s.image.data().iter().map(|&v| (v * STORE_MAX).round() as u16).collect();
            Pnm::gray(s.image.width(), s.image.height(), u16::MAX, samples).write(&dir.join(&file))?;
            let line = ManifestLine {
                file,
                source: s.source,
                split,
                aug: s.aug.clone(),
            };
            serde_json::to_writer(&mut manifest, &line)?;
            manifest.push(b'\n');
        }
        let mut f = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        f.write_all(&manifest).map_err(|e| Error::io(&manifest_path, e))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join(MANIFEST);
        let f = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut ds = Dataset {
            train: Vec::new(),
            val: Vec::new(),
        };
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&manifest_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestLine = serde_json::from_str(&line)?;
            let path = dir.join(&entry.file);
            let pnm = Pnm::read(&path)?;
            if pnm.channels != 1 {
                return Err(Error::format(&path, "dataset images must be grayscale"));
            }
            let scale = pnm.maxval as f64;
            let data = pnm.samples.iter().map(|&s| s as f64 / scale).collect();
            let sample = Sample {
                image: GrayImage::new(pnm.width, pnm.height, data)?,
                source: entry.source,
                aug: entry.aug,
            };
            match entry.split {
                Split::Train => ds.train.push(sample),
                Split::Val => ds.val.push(sample),
            }
        }
        Ok(ds)
    }
}
