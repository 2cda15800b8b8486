//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,3,9` restricts the run to the listed criteria.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::{
    mann_whitney_auc, model_grad_check, naive_conv2d, naive_conv_transpose2d, naive_dense, random_tensor, rel_err,
};
use thermocae::augment::{augment_one, build_dataset, resize, AugmentParams, Stages};
use thermocae::cae::CaeConfig;
use thermocae::checkpoint::{decode, encode, load_checkpoint, save_checkpoint};
use thermocae::detect::roc_points;
use thermocae::msssim::{ms_ssim, ms_ssim_graph, msssim_loss, SsimParams};
use thermocae::pipeline::{dataset_from, fit, synth_train, EvalConfig, TestBench, HEATER_CURRENTS};
use thermocae::tensor::kernels::{conv2d, conv_transpose2d, dense};
use thermocae::tensor::{ConvSpec, Graph};
use thermocae::thermo::{SceneConfig, SplitData};
use thermocae::trainer::{loss_csv, TrainConfig};
use thermocae::{Rng, Tensor};

/// Outcome of one criterion: pass flag and a one-line summary.
type Outcome = (bool, String);

// Desk-budget model shared by the end-to-end criteria. The base width is
// reduced from the library default to fit a single-core budget.
const BASE_CHANNELS: usize = 8;
const EPOCHS: usize = 30;
const DEFAULT_LAYERS: usize = 4;
const DEFAULT_LATENT: usize = 32;
const DEFAULT_COUNT: usize = 2000;
const SIDE: usize = 128;
const SEED: u64 = 0;
const STRONG: f64 = 0.15;

fn random_spec(rng: &mut Rng) -> ConvSpec {
    let kernel = 1 + rng.below(4);
    let stride = 1 + rng.below(3);
    ConvSpec {
        kernel,
        stride,
        padding: rng.below(kernel),
        output_padding: rng.below(stride),
    }
}

fn numerical_core() -> Outcome {
    let mut rng = Rng::new(100);
    let mut worst_conv: f64 = 0.0;
    let mut worst_tconv: f64 = 0.0;
    let mut worst_dense: f64 = 0.0;
    for _ in 0..120 {
        let spec = random_spec(&mut rng);
        let (n, ci, co) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4));
        let side = spec.kernel + rng.below(7);
        let x = random_tensor(&[n, ci, side, side], &mut rng);
        let w = random_tensor(&[co, ci, spec.kernel, spec.kernel], &mut rng);
        let b = random_tensor(&[co], &mut rng);
        worst_conv = worst_conv.max(conv2d(&x, &w, &b, spec).unwrap().max_abs_diff(&naive_conv2d(&x, &w, &b, spec)));

        let xt = random_tensor(&[n, ci, 1 + rng.below(5), 1 + rng.below(5)], &mut rng);
        let wt = random_tensor(&[ci, co, spec.kernel, spec.kernel], &mut rng);
        if let Ok(got) = conv_transpose2d(&xt, &wt, &b, spec) {
            worst_tconv = worst_tconv.max(got.max_abs_diff(&naive_conv_transpose2d(&xt, &wt, &b, spec)));
        }

        let (f, g) = (1 + rng.below(20), 1 + rng.below(12));
        let xd = random_tensor(&[n, f], &mut rng);
        let wd = random_tensor(&[f, g], &mut rng);
        let bd = random_tensor(&[g], &mut rng);
        worst_dense = worst_dense.max(dense(&xd, &wd, &bd).unwrap().max_abs_diff(&naive_dense(&xd, &wd, &bd)));
    }

    // Stride-2 geometry of the model, where the transpose restores the side.
    let mut worst_adj: f64 = 0.0;
    for _ in 0..100 {
        let spec = ConvSpec::default();
        let (n, ci, co) = (1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(4));
        let side = 2 * (1 + rng.below(8));
        let x = random_tensor(&[n, ci, side, side], &mut rng);
        let w = random_tensor(&[co, ci, 3, 3], &mut rng);
        let fwd = conv2d(&x, &w, &Tensor::zeros(vec![co]), spec).unwrap();
        let y = random_tensor(fwd.shape(), &mut rng);
        let back = conv_transpose2d(&y, &w, &Tensor::zeros(vec![ci]), spec).unwrap();
        let (lhs, rhs) = (fwd.dot(&y), x.dot(&back));
        worst_adj = worst_adj.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }

    let cfg = CaeConfig {
        num_layers: 3,
        latent_dim: 8,
        input_size: 88,
        base_channels: 2,
    };
    let grad = model_grad_check(cfg, 2, 50, 5);
    let ok = worst_conv <= 1e-12 && worst_tconv <= 1e-12 && worst_dense <= 1e-12 && worst_adj <= 1e-10 && grad < 1e-4;
    (
        ok,
        format!(
            "conv {worst_conv:.1e}, conv_transpose {worst_tconv:.1e}, dense {worst_dense:.1e} (120 instances each), \
             adjoint {worst_adj:.1e} (100), model gradient rel err {grad:.1e} (50 params)"
        ),
    )
}

fn smooth_image(rng: &mut Rng, side: usize) -> Tensor {
    let (a, b, c) = (rng.uniform(0.02, 0.1), rng.uniform(0.02, 0.1), rng.uniform(0.0, 6.0));
    Tensor::from_fn(vec![1, 1, side, side], |i| {
        let (x, y) = ((i % side) as f64, (i / side) as f64);
        0.5 + 0.3 * (a * x + c).sin() * (b * y).cos() + 0.05 * rng.uniform(-1.0, 1.0)
    })
}

fn ms_ssim_checks() -> Outcome {
    let p = SsimParams::default();
    let mut rng = Rng::new(200);
    let (mut self_err, mut sym_err, mut loss_self): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..10 {
        let x = smooth_image(&mut rng, 96);
        let y = Tensor::from_fn(vec![1, 1, 96, 96], |i| (x.data()[i] + 0.1 * rng.uniform(-1.0, 1.0)).clamp(0.0, 1.0));
        self_err = self_err.max((ms_ssim(&x, &x, &p).unwrap()[0] - 1.0).abs());
        sym_err = sym_err.max((ms_ssim(&x, &y, &p).unwrap()[0] - ms_ssim(&y, &x, &p).unwrap()[0]).abs());
        loss_self = loss_self.max(msssim_loss(&x, &x, &p).unwrap().abs());
    }

    let x = smooth_image(&mut rng, 88);
    let y = Tensor::from_fn(vec![1, 1, 88, 88], |i| (x.data()[i] + 0.1 * rng.uniform(-1.0, 1.0)).clamp(0.0, 1.0));
    let objective = |g: &mut Graph, xv| {
        let yv = g.constant(y.clone());
        let s = ms_ssim_graph(g, xv, yv, &p).unwrap();
        g.mean(s)
    };
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let out = objective(&mut g, xv);
    let analytic = g.backward(out).unwrap().get(xv).unwrap().clone();
    let eval = |t: &Tensor| {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let o = objective(&mut g, v);
        g.value(o).data()[0]
    };
    // Fourth-order central stencil: the smooth objective allows a wide step,
    // which keeps roundoff small next to gradients near 1e-7.
    let h = 1e-3;
    let mut grad_err: f64 = 0.0;
    let mut probe = x.clone();
    for _ in 0..50 {
        let i = rng.below(x.len());
        let orig = probe.data()[i];
        let mut at = |dx: f64| {
            probe.data_mut()[i] = orig + dx;
            eval(&probe)
        };
        let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        probe.data_mut()[i] = orig;
        grad_err = grad_err.max(rel_err(analytic.data()[i], numeric, 1e-9));
    }
    let ok = self_err <= 1e-9 && sym_err <= 1e-12 && grad_err < 1e-4 && loss_self <= 1e-9;
    (
        ok,
        format!(
            "|ms_ssim(x,x)-1| {self_err:.1e}, asymmetry {sym_err:.1e}, gradient rel err {grad_err:.1e} (50 pixels), \
             loss(x,x) {loss_self:.1e}"
        ),
    )
}

fn roc_checks() -> Outcome {
    let mut rng = Rng::new(300);
    let mut worst: f64 = 0.0;
    let mut with_ties = 0;
    for _ in 0..200 {
        let n = 2 + rng.below(80);
        let levels = 1 + rng.below(10);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.4).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() < n {
            with_ties += 1;
        }
        let auc = roc_points(&scores, &labels).unwrap().auc;
        worst = worst.max((auc - mann_whitney_auc(&scores, &labels)).abs());
    }
    let labels = [false, false, true, true];
    let perfect = roc_points(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap().auc;
    let constant = roc_points(&[0.4; 4], &labels).unwrap().auc;
    let ok = worst <= 1e-12 && with_ties >= 100 && perfect == 1.0 && constant == 0.5;
    (
        ok,
        format!(
            "max |AUC - Mann-Whitney| {worst:.1e} over 200 instances ({with_ties} with ties), \
             separated {perfect}, constant {constant}"
        ),
    )
}

fn augmentation_checks(train: &SplitData) -> Outcome {
    let originals = train.normalized();
    let identity = AugmentParams {
        stages: Stages::none(),
        ..AugmentParams::default()
    };
    let mut rng = Rng::new(400);
    let mut identity_err: f64 = 0.0;
    for img in originals.iter().step_by(60) {
        let (out, _) = augment_one(img, &identity, &mut rng).unwrap();
        let want = resize(img, SIDE, SIDE);
        identity_err = out.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(identity_err, f64::max);
    }

    let params = AugmentParams::default();
    let ds = build_dataset(&originals, 10_000, &params, 401).unwrap();
    let all = ds.train.iter().chain(&ds.val);
    let in_range = all.clone().all(|s| s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let originals_kept = all.filter(|s| s.aug.is_none()).count();
    let ok = identity_err <= 1e-12
        && in_range
        && originals.len() == 600
        && originals_kept == 600
        && ds.train.len() == 9000
        && ds.val.len() == 1000;
    (
        ok,
        format!(
            "identity vs resize {identity_err:.1e}; 10000 images in [0,1]: {in_range}; {} originals -> {} train + {} val",
            originals_kept,
            ds.train.len(),
            ds.val.len()
        ),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Variant {
    layers: usize,
    latent: usize,
    count: usize,
    /// Index into [`thermocae::augment::STAGE_NAMES`] of a disabled stage.
    without: Option<usize>,
}

impl Variant {
    const DEFAULT: Variant = Variant {
        layers: DEFAULT_LAYERS,
        latent: DEFAULT_LATENT,
        count: DEFAULT_COUNT,
        without: None,
    };
}

/// Trains each requested variant once and keeps its AUC per heater current.
struct Experiments {
    train: SplitData,
    bench: TestBench,
    results: BTreeMap<Variant, Vec<(f64, f64)>>,
}

impl Experiments {
    fn new(train: SplitData) -> Self {
        let bench = TestBench::synthesize(&SceneConfig::default(), &HEATER_CURRENTS, SEED, SIDE).unwrap();
        Experiments {
            train,
            bench,
            results: BTreeMap::new(),
        }
    }

    fn aucs(&mut self, v: Variant) -> &[(f64, f64)] {
        if !self.results.contains_key(&v) {
            let started = Instant::now();
            let mut params = AugmentParams::default();
            if let Some(i) = v.without {
                params.stages.disable(thermocae::augment::STAGE_NAMES[i]).unwrap();
            }
            let ds = dataset_from(&self.train, v.count, &params, SEED).unwrap();
            let model = CaeConfig {
                num_layers: v.layers,
                latent_dim: v.latent,
                input_size: SIDE,
                base_channels: BASE_CHANNELS,
            };
            let cfg = TrainConfig {
                epochs: EPOCHS,
                shuffle_seed: SEED,
                ..TrainConfig::default()
            };
            let (cae, history) = fit(&ds, &model, &cfg, SEED, |_| {}).unwrap();
            let aucs: Vec<(f64, f64)> = self
                .bench
                .aucs(&cae, &EvalConfig::default())
                .unwrap()
                .into_iter()
                .map(|(c, r)| (c, r.auc))
                .collect();
            eprintln!(
                "  trained {v:?}: final val loss {:.4}, AUCs {aucs:?} ({:.0}s)",
                history.last().unwrap().val_loss,
                started.elapsed().as_secs_f64()
            );
            self.results.insert(v, aucs);
        }
        &self.results[&v]
    }

    fn strong_auc(&mut self, v: Variant) -> f64 {
        self.aucs(v).iter().find(|(c, _)| *c == STRONG).unwrap().1
    }
}

fn strong_fault(ex: &mut Experiments) -> Outcome {
    let started = Instant::now();
    let auc = ex.strong_auc(Variant::DEFAULT);
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    (
        auc >= 0.95,
        format!(
            "AUC at {STRONG} A = {auc:.4} (layers {DEFAULT_LAYERS}, latent {DEFAULT_LATENT}, {DEFAULT_COUNT} images, \
             {EPOCHS} epochs, {minutes:.1} min)"
        ),
    )
}

fn fault_intensity(ex: &mut Experiments) -> Outcome {
    let aucs = ex.aucs(Variant::DEFAULT).to_vec();
    let monotone = aucs.windows(2).all(|w| w[1].1 <= w[0].1);
    let weakest = aucs.last().unwrap().1;
    let listing: Vec<String> = aucs.iter().map(|(c, a)| format!("{c} A: {a:.4}")).collect();
    (
        monotone && (0.35..=0.70).contains(&weakest),
        format!("{}; non-increasing: {monotone}", listing.join(", ")),
    )
}

fn capacity(ex: &mut Experiments) -> Outcome {
    let base = ex.strong_auc(Variant::DEFAULT);
    let shallow = ex.strong_auc(Variant {
        layers: 2,
        ..Variant::DEFAULT
    });
    let narrow = ex.strong_auc(Variant {
        latent: 8,
        ..Variant::DEFAULT
    });
    (
        base - shallow >= 0.1 && base - narrow >= 0.1,
        format!("AUC at {STRONG} A: default {base:.4}, two layers {shallow:.4}, latent 8 {narrow:.4}"),
    )
}

fn augmentation_trends(ex: &mut Experiments) -> Outcome {
    let counts = [600, 2000, 10_000];
    let by_count: Vec<f64> = counts
        .iter()
        .map(|&count| ex.strong_auc(Variant { count, ..Variant::DEFAULT }))
        .collect();
    let non_decreasing = by_count.windows(2).all(|w| w[1] >= w[0]);

    let base = ex.strong_auc(Variant::DEFAULT);
    let names = thermocae::augment::STAGE_NAMES;
    let ablated = ["rotate", "perspective", "crop", "color"];
    let drops: Vec<(&str, f64)> = ablated
        .iter()
        .map(|&name| {
            let i = names.iter().position(|n| *n == name).unwrap();
            let auc = ex.strong_auc(Variant {
                without: Some(i),
                ..Variant::DEFAULT
            });
            (name, base - auc)
        })
        .collect();
    let crop_drop = drops.iter().find(|(n, _)| *n == "crop").unwrap().1;
    let crop_largest = crop_drop > 0.0 && drops.iter().all(|(_, d)| *d <= crop_drop);
    let listing: Vec<String> = drops.iter().map(|(n, d)| format!("without {n} {d:+.4}")).collect();
    (
        non_decreasing && crop_largest,
        format!(
            "AUC at {STRONG} A by count 600/2000/10000: {:.4}/{:.4}/{:.4}; drops: {}",
            by_count[0],
            by_count[1],
            by_count[2],
            listing.join(", ")
        ),
    )
}

fn determinism(train: &SplitData) -> Outcome {
    let scene = SceneConfig::default();
    let synth_same = synth_train(&scene, 7).unwrap() == synth_train(&scene, 7).unwrap();

    let params = AugmentParams::default();
    let model = CaeConfig {
        num_layers: 4,
        latent_dim: 16,
        input_size: SIDE,
        base_channels: 4,
    };
    let cfg = TrainConfig {
        epochs: 2,
        shuffle_seed: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let ds = dataset_from(train, 700, &params, 3).unwrap();
        let (cae, history) = fit(&ds, &model, &cfg, 3, |_| {}).unwrap();
        (encode(&cae), loss_csv(&history), cae)
    };
    let (bytes_a, csv_a, cae) = run();
    let (bytes_b, csv_b, _) = run();
    let training_same = bytes_a == bytes_b && csv_a == csv_b;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.cae");
    save_checkpoint(&cae, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let round_trip = encode(&loaded) == bytes_a && std::fs::read(&path).unwrap() == bytes_a;

    let mut rng = Rng::new(900);
    let mut detected = 0;
    let trials = 200;
    for _ in 0..trials {
        let mut bad = bytes_a.clone();
        let i = rng.below(bad.len());
        bad[i] ^= 1 << rng.below(8);
        if decode(&bad, &path).is_err() {
            detected += 1;
        }
    }
    let truncated = decode(&bytes_a[..bytes_a.len() - 5], &path).is_err();
    let ok = synth_same && training_same && round_trip && detected == trials && truncated;
    (
        ok,
        format!(
            "recordings identical: {synth_same}; checkpoint + loss CSV identical: {training_same}; \
             round trip bit-exact: {round_trip}; corruptions detected {detected}/{trials}, truncation: {truncated}"
        ),
    )
}

fn shared<'a>(slot: &'a mut Option<Experiments>, train: &SplitData) -> &'a mut Experiments {
    slot.get_or_insert_with(|| Experiments::new(train.clone()))
}

fn selected() -> Vec<usize> {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=9).collect(),
    }
}

fn main() {
    let wanted = selected();
    let train = synth_train(&SceneConfig::default(), SEED).unwrap();
    let mut experiments: Option<Experiments> = None;
    let mut failures = 0;
    for id in 1..=9 {
        if !wanted.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let (name, (ok, detail)) = match id {
            1 => ("numerical core", numerical_core()),
            2 => ("MS-SSIM", ms_ssim_checks()),
            3 => ("ROC/AUC", roc_checks()),
            4 => ("augmentation", augmentation_checks(&train)),
            5 => ("strong fault", strong_fault(shared(&mut experiments, &train))),
            6 => ("fault intensity", fault_intensity(shared(&mut experiments, &train))),
            7 => ("capacity", capacity(shared(&mut experiments, &train))),
            8 => ("augmentation trends", augmentation_trends(shared(&mut experiments, &train))),
            _ => ("determinism", determinism(&train)),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "criterion {id} {name}: {} ({:.1}s) {detail}",
            if ok { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all selected criteria passed");
}
