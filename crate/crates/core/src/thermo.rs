//! Synthetic thermal scenes of a power module under varying load, seen by a
//! 14-bit camera from varying viewpoints, with an optional heater fault.
//!
//! Temperatures follow a steady-state field of Gaussian heat sources that
//! the board approaches with a first-order lag. Frames are rendered by
//! warping the field into the camera and quantizing to counts.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::warp_bilinear;
use crate::error::{Error, Result};
use crate::homography::Homography;
use crate::image::GrayImage;
use crate::pnm::Pnm;
use crate::rng::Rng;

/// Largest 14-bit count.
pub const MAX_COUNT: u16 = 16383;
/// Temperature mapped to count 0.
pub const T_MIN: f64 = -10.0;
/// Temperature mapped to [`MAX_COUNT`].
pub const T_MAX: f64 = 140.0;

pub fn temperature_to_count(t: f64) -> f64 {
    ((t - T_MIN) / (T_MAX - T_MIN)).clamp(0.0, 1.0) * MAX_COUNT as f64
}

pub fn count_to_temperature(c: u16) -> f64 {
    T_MIN + c as f64 / MAX_COUNT as f64 * (T_MAX - T_MIN)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatSource {
    pub name: String,
    /// Center in scene pixels.
    pub position: [f64; 2],
    pub sigma: f64,
    /// Temperature rise per ampere, °C/A.
    pub linear: f64,
    /// Temperature rise per ampere squared, °C/A².
    pub quadratic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub ambient: f64,
    /// Thermal time constant, seconds.
    pub tau: f64,
    /// Standard deviation of sensor noise, counts.
    pub noise_counts: f64,
    pub sources: Vec<HeatSource>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let src = |name: &str, x, y, sigma, linear, quadratic| HeatSource {
            name: name.into(),
            position: [x, y],
            sigma,
            linear,
            quadratic,
        };
        SceneConfig {
            width: 160,
            height: 120,
            ambient: 20.0,
            tau: 30.0,
            noise_counts: 20.0,
            sources: vec![
                src("transformer", 78.0, 56.0, 13.0, 2.0, 1.5),
                src("switch_a", 42.0, 36.0, 5.0, 1.0, 2.0),
                src("switch_b", 42.0, 76.0, 5.0, 1.0, 2.0),
                src("capacitor_a", 116.0, 30.0, 7.0, 1.5, 0.8),
                src("capacitor_b", 120.0, 78.0, 7.0, 1.5, 0.8),
                src("rectifier", 136.0, 54.0, 6.0, 2.0, 1.2),
            ],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::config("scene.width and scene.height must be at least 2"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("scene.tau must be positive, got {}", self.tau)));
        }
        if !(self.noise_counts >= 0.0) {
            return Err(Error::config("scene.noise_counts must be non-negative"));
        }
        for s in &self.sources {
            if !(s.sigma > 0.0 && s.linear >= 0.0 && s.quadratic >= 0.0) {
                return Err(Error::config(format!(
                    "scene.sources: `{}` needs sigma > 0 and non-negative coefficients",
                    s.name
                )));
            }
        }
        Ok(())
    }
}

/// Heater attached to the board to emulate a fault.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSpec {
    pub resistance: f64,
    pub current: f64,
    /// Heater footprint in scene pixels (width, height).
    pub footprint: [f64; 2],
    pub position: [f64; 2],
    /// Peak temperature rise per watt, °C/W.
    pub coupling: f64,
}

/// Heater current of the reference fault, A.
pub const REFERENCE_HEATER_CURRENT: f64 = 0.15;
/// Peak rise above ambient at the reference current, °C.
pub const REFERENCE_FAULT_RISE: f64 = 80.0;

impl Default for FaultSpec {
    fn default() -> Self {
        let resistance = 25.0;
        FaultSpec {
            resistance,
            current: REFERENCE_HEATER_CURRENT,
            // 12 mm x 13 mm at 1.5 px/mm.
            footprint: [18.0, 19.5],
            position: [84.0, 100.0],
            coupling: REFERENCE_FAULT_RISE / (REFERENCE_HEATER_CURRENT.powi(2) * resistance),
        }
    }
}

impl FaultSpec {
    pub fn with_current(current: f64) -> Self {
        FaultSpec {
            current,
            ..Default::default()
        }
    }

    pub fn power(&self) -> f64 {
        self.current * self.current * self.resistance
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.current >= 0.0 && self.resistance > 0.0 && self.coupling >= 0.0) {
            return Err(Error::config("fault: current, resistance and coupling must be non-negative"));
        }
        if !(self.footprint[0] > 0.0 && self.footprint[1] > 0.0) {
            return Err(Error::config("fault.footprint must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadPattern {
    pub step_interval: f64,
    pub duration: f64,
    pub current_range: (f64, f64),
    pub frame_period: f64,
}

impl LoadPattern {
    pub fn of(kind: PatternKind) -> Self {
        match kind {
            PatternKind::Train => LoadPattern {
                step_interval: 60.0,
                duration: 1800.0,
                current_range: (0.0, 4.0),
                frame_period: 3.0,
            },
            PatternKind::Test => LoadPattern {
                step_interval: 10.0,
                duration: 180.0,
                current_range: (0.0, 4.0),
                frame_period: 1.0,
            },
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.step_interval).round() as usize
    }

    pub fn frames(&self) -> usize {
        (self.duration / self.frame_period).round() as usize
    }
}

/// `(start time, current)` for each load step.
pub fn load_pattern(kind: PatternKind, seed: u64) -> Vec<(f64, f64)> {
    let p = LoadPattern::of(kind);
    let mut rng = Rng::derive(seed, PATTERN_STREAM);
    (0..p.steps())
        .map(|i| (i as f64 * p.step_interval, rng.uniform(p.current_range.0, p.current_range.1)))
        .collect()
}

const PATTERN_STREAM: u64 = 0x5EED_0001;

/// Temperature field over the scene grid, °C.
pub fn steady_state_field(scene: &SceneConfig, current: f64, fault: Option<&FaultSpec>) -> GrayImage {
    let gains: Vec<f64> = scene
        .sources
        .iter()
        .map(|s| s.linear * current + s.quadratic * current * current)
        .collect();
    let fault_rise = fault.map(|f| (f.coupling * f.power(), f));
    GrayImage::from_fn(scene.width, scene.height, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut t = scene.ambient;
        for (s, &g) in scene.sources.iter().zip(&gains) {
            let (dx, dy) = (px - s.position[0], py - s.position[1]);
            t += g * (-(dx * dx + dy * dy) / (2.0 * s.sigma * s.sigma)).exp();
        }
        if let Some((rise, f)) = fault_rise {
            // The footprint spans about four standard deviations per axis.
            let (sx, sy) = (f.footprint[0] / 4.0, f.footprint[1] / 4.0);
            let (dx, dy) = (px - f.position[0], py - f.position[1]);
            t += rise * (-(dx * dx) / (2.0 * sx * sx) - (dy * dy) / (2.0 * sy * sy)).exp();
        }
        t
    })
}

/// First-order lag: `target + (prev - target) * exp(-dt / tau)`.
pub fn step_response(prev: &GrayImage, target: &GrayImage, dt: f64, tau: f64) -> Result<GrayImage> {
    if (prev.width(), prev.height()) != (target.width(), target.height()) {
        return Err(Error::shape("step response: field sizes differ"));
    }
    if !(dt > 0.0) {
        return Err(Error::config(format!("step response needs dt > 0, got {dt}")));
    }
    let decay = (-dt / tau).exp();
    let data = prev
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| t + (p - t) * decay)
        .collect();
    GrayImage::new(prev.width(), prev.height(), data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalFrame {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u16>,
    pub time: f64,
    pub current: f64,
    pub anomalous: bool,
    pub heater_current: f64,
    /// Maps camera pixel coordinates to scene coordinates.
    pub viewpoint: Homography,
}

impl ThermalFrame {
    /// Counts scaled to `[0, 1]`.
    pub fn normalized(&self) -> GrayImage {
        let data = self.counts.iter().map(|&c| c as f64 / MAX_COUNT as f64).collect();
        GrayImage::new(self.width, self.height, data).expect("consistent frame")
    }

    pub fn temperatures(&self) -> GrayImage {
        let data = self.counts.iter().map(|&c| count_to_temperature(c)).collect();
        GrayImage::new(self.width, self.height, data).expect("consistent frame")
    }
}

/// Warps the scene field into the camera, fills uncovered pixels with
/// ambient, adds sensor noise, and quantizes to counts.
pub fn render_frame(
    field: &GrayImage,
    viewpoint: &Homography,
    ambient: f64,
    noise_counts: f64,
    rng: &mut Rng,
) -> Result<Vec<u16>> {
    viewpoint.inverse()?;
    let warped = warp_bilinear(field, viewpoint, field.width(), field.height(), ambient);
    Ok(warped
        .data()
        .iter()
        .map(|&t| {
            let noise = if noise_counts > 0.0 { noise_counts * rng.normal() } else { 0.0 };
            (temperature_to_count(t) + noise).round().clamp(0.0, MAX_COUNT as f64) as u16
        })
        .collect())
}

/// Ranges of the random camera pose per frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewpointPolicy {
    pub rotation_deg: f64,
    /// Zoom range; values below 1 make the board appear smaller.
    pub scale: (f64, f64),
    /// Shift as a fraction of the frame size, per axis.
    pub translation: f64,
    /// Inward corner displacement as a fraction of the frame size.
    pub perspective: (f64, f64),
}

impl Default for ViewpointPolicy {
    fn default() -> Self {
        Self::test()
    }
}

impl ViewpointPolicy {
    /// Nearly fixed camera.
    pub fn train() -> Self {
        ViewpointPolicy {
            rotation_deg: 3.0,
            scale: (0.97, 1.03),
            translation: 0.02,
            perspective: (0.0, 0.0),
        }
    }

    /// Handheld repositioning between test frames.
    pub fn test() -> Self {
        ViewpointPolicy {
            rotation_deg: 30.0,
            scale: (0.7, 1.3),
            translation: 0.1,
            perspective: (0.0, 0.05),
        }
    }

    pub fn fixed() -> Self {
        ViewpointPolicy {
            rotation_deg: 0.0,
            scale: (1.0, 1.0),
            translation: 0.0,
            perspective: (0.0, 0.0),
        }
    }

    pub fn for_kind(kind: PatternKind) -> Self {
        match kind {
            PatternKind::Train => Self::train(),
            PatternKind::Test => Self::test(),
        }
    }

    /// Draws a pose and returns the camera-to-scene map.
    pub fn sample(&self, w: usize, h: usize, rng: &mut Rng) -> Result<Homography> {
        let (w, h) = (w as f64, h as f64);
        let angle = rng.uniform(-self.rotation_deg, self.rotation_deg);
        let zoom = rng.uniform(self.scale.0, self.scale.1);
        let tx = rng.uniform(-self.translation, self.translation) * w;
        let ty = rng.uniform(-self.translation, self.translation) * h;
        let (cx, cy) = (w / 2.0, h / 2.0);
        let pose = Homography::translation(cx + tx, cy + ty)
            .then_after(&Homography::rotation_about(angle, 0.0, 0.0))
            .then_after(&Homography::scale(zoom, zoom))
            .then_after(&Homography::translation(-cx, -cy));
        let frame = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
        let inward = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]];
        let mut moved = frame;
        for (m, d) in moved.iter_mut().zip(inward) {
            m[0] += d[0] * rng.uniform(self.perspective.0, self.perspective.1) * w;
            m[1] += d[1] * rng.uniform(self.perspective.0, self.perspective.1) * h;
        }
        let tilt = Homography::from_points(frame, moved)?;
        tilt.then_after(&pose).inverse()
    }
}

/// One simulated recording.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub kind: PatternKind,
    pub frames: Vec<ThermalFrame>,
}

/// Simulates a recording under a load pattern of `kind` drawn from `seed`.
/// The board starts in equilibrium with the first load step.
pub fn generate_split(
    scene: &SceneConfig,
    kind: PatternKind,
    fault: Option<&FaultSpec>,
    policy: &ViewpointPolicy,
    seed: u64,
) -> Result<SplitData> {
    generate_split_under(scene, kind, &load_pattern(kind, seed), fault, policy, seed)
}

/// Simulates a recording under the given load steps. `seed` drives the
/// camera poses and sensor noise only.
pub fn generate_split_under(
    scene: &SceneConfig,
    kind: PatternKind,
    steps: &[(f64, f64)],
    fault: Option<&FaultSpec>,
    policy: &ViewpointPolicy,
    seed: u64,
) -> Result<SplitData> {
    scene.validate()?;
    if let Some(f) = fault {
        f.validate()?;
    }
    let pattern = LoadPattern::of(kind);
    if steps.len() != pattern.steps() {
        return Err(Error::config(format!(
            "load pattern has {} steps, expected {}",
            steps.len(),
            pattern.steps()
        )));
    }
    let mut frames = Vec::with_capacity(pattern.frames());
    let mut start = steady_state_field(scene, steps[0].1, fault);
    let mut frame_idx = 0usize;
    for (s, &(t0, current)) in steps.iter().enumerate() {
        let target = steady_state_field(scene, current, fault);
        let t_end = if s + 1 < steps.len() { steps[s + 1].0 } else { pattern.duration };
        while frame_idx < pattern.frames() {
            let t = frame_idx as f64 * pattern.frame_period;
            if t >= t_end {
                break;
            }
            let field = if t > t0 {
                step_response(&start, &target, t - t0, scene.tau)?
            } else {
                start.clone()
            };
            let mut rng = Rng::derive(seed, frame_idx as u64);
            let viewpoint = policy.sample(scene.width, scene.height, &mut rng)?;
            let counts = render_frame(&field, &viewpoint, scene.ambient, scene.noise_counts, &mut rng)?;
            frames.push(ThermalFrame {
                width: scene.width,
                height: scene.height,
                counts,
                time: t,
                current,
                anomalous: fault.is_some(),
                heater_current: fault.map_or(0.0, |f| f.current),
                viewpoint,
            });
            frame_idx += 1;
        }
        start = step_response(&start, &target, t_end - t0, scene.tau)?;
    }
    Ok(SplitData { kind, frames })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    path: String,
    t: f64,
    current: f64,
    label: String,
    heater_current: f64,
    viewpoint: [[f64; 3]; 3],
}

pub const MANIFEST: &str = "manifest.jsonl";

impl SplitData {
    /// One 16-bit PGM per frame (maxval 16383) plus a JSON-lines manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Vec::new();
        for (i, f) in self.frames.iter().enumerate() {
            let name = format!("frame_{i:04}.pgm");
            Pnm::gray(f.width, f.height, MAX_COUNT, f.counts.clone()).write(&dir.join(&name))?;
            let line = ManifestLine {
                path: name,
                t: f.time,
                current: f.current,
                label: if f.anomalous { "anomalous" } else { "normal" }.into(),
                heater_current: f.heater_current,
                viewpoint: f.viewpoint.m,
            };
            serde_json::to_writer(&mut manifest, &line)?;
            manifest.push(b'\n');
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, kind: PatternKind) -> Result<SplitData> {
        let path = dir.join(MANIFEST);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut frames = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let m: ManifestLine = serde_json::from_str(&line)?;
            let img_path = dir.join(&m.path);
            let pnm = Pnm::read(&img_path)?;
            if pnm.channels != 1 || pnm.maxval != MAX_COUNT {
                return Err(Error::format(&img_path, "expected a 14-bit grayscale frame"));
            }
            frames.push(ThermalFrame {
                width: pnm.width,
                height: pnm.height,
                counts: pnm.samples,
                time: m.t,
                current: m.current,
                anomalous: m.label == "anomalous",
                heater_current: m.heater_current,
                viewpoint: Homography::from_rows(m.viewpoint),
            });
        }
        Ok(SplitData { kind, frames })
    }

    pub fn normalized(&self) -> Vec<GrayImage> {
        self.frames.iter().map(ThermalFrame::normalized).collect()
    }
}
