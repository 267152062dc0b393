//! Finite-difference gradient checks shared by the gradient suite and the
//! acceptance runner. Every check returns the worst relative error seen.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ynet_core::geometry::Point;
use ynet_core::heatmap::PastEncoding;
use ynet_core::model::{ModelConfig, YNet};
use ynet_core::ops::*;
use ynet_core::scene::Scene;
use ynet_core::training::{compute_loss, teacher_condition, LossWeights, TrainSample};
use ynet_core::Tensor;

pub const H: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)` over a whole gradient.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of the scalar `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let v = x.data()[i];
            probe.data_mut()[i] = v + H;
            let up = f(&probe);
            probe.data_mut()[i] = v - H;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Random `C × H × W` with `C ≤ 4`, even `H, W ≤ 8`.
fn random_chw(rng: &mut ChaCha8Rng) -> [usize; 3] {
    [rng.random_range(1..=4), 2 * rng.random_range(1..=4), 2 * rng.random_range(1..=4)]
}

pub fn check_conv2d(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let [c, h, w] = random_chw(&mut r);
        let o = r.random_range(1..=4);
        let (k, pad) = if r.random_bool(0.5) { (3, 1) } else { (1, 0) };
        let x = random_tensor(&mut r, &[c, h, w], -1.0, 1.0);
        let wt = random_tensor(&mut r, &[o, c, k, k], -1.0, 1.0);
        let b = random_tensor(&mut r, &[o], -1.0, 1.0);
        let proj = random_tensor(&mut r, &[o, h, w], -1.0, 1.0);
        let (gx, gw, gb) = conv2d_backward(&x, &wt, &proj, pad).unwrap();
        let nx = numeric_grad(&x, |x| dot(&conv2d(x, &wt, &b, pad).unwrap(), &proj));
        let nw = numeric_grad(&wt, |wt| dot(&conv2d(&x, wt, &b, pad).unwrap(), &proj));
        let nb = numeric_grad(&b, |b| dot(&conv2d(&x, &wt, b, pad).unwrap(), &proj));
        worst = worst
            .max(rel_error(gx.data(), &nx))
            .max(rel_error(gw.data(), &nw))
            .max(rel_error(gb.data(), &nb));
    }
    worst
}

pub fn check_maxpool2(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let shape = random_chw(&mut r);
        let x = random_tensor(&mut r, &shape, -1.0, 1.0);
        let (y, arg) = maxpool2(&x).unwrap();
        let proj = random_tensor(&mut r, y.shape(), -1.0, 1.0);
        let g = maxpool2_backward(&proj, &arg, x.shape());
        let n = numeric_grad(&x, |x| dot(&maxpool2(x).unwrap().0, &proj));
        worst = worst.max(rel_error(g.data(), &n));
    }
    worst
}

pub fn check_upsample2(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let [c, h, w] = random_chw(&mut r);
        let x = random_tensor(&mut r, &[c, h / 2, w / 2], -1.0, 1.0);
        let proj = random_tensor(&mut r, &[c, h, w], -1.0, 1.0);
        let g = bilinear_upsample2_backward(&proj);
        let n = numeric_grad(&x, |x| dot(&bilinear_upsample2(x), &proj));
        worst = worst.max(rel_error(g.data(), &n));
    }
    worst
}

pub fn check_concat(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let [ca, h, w] = random_chw(&mut r);
        let cb = r.random_range(1..=4);
        let a = random_tensor(&mut r, &[ca, h, w], -1.0, 1.0);
        let b = random_tensor(&mut r, &[cb, h, w], -1.0, 1.0);
        let proj = random_tensor(&mut r, &[ca + cb, h, w], -1.0, 1.0);
        let (ga, gb) = concat_channels_backward(&proj, ca);
        let na = numeric_grad(&a, |a| dot(&concat_channels(a, &b).unwrap(), &proj));
        let nb = numeric_grad(&b, |b| dot(&concat_channels(&a, b).unwrap(), &proj));
        worst = worst.max(rel_error(ga.data(), &na)).max(rel_error(gb.data(), &nb));
    }
    worst
}

pub fn check_sigmoid(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let shape = random_chw(&mut r);
        let x = random_tensor(&mut r, &shape, -4.0, 4.0);
        let proj = random_tensor(&mut r, &shape, -1.0, 1.0);
        let g = sigmoid_backward(&sigmoid(&x), &proj);
        let n = numeric_grad(&x, |x| dot(&sigmoid(x), &proj));
        worst = worst.max(rel_error(g.data(), &n));
    }
    worst
}

pub fn check_relu(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let shape = random_chw(&mut r);
        // keep clear of the kink so central differences stay one-sided
        let x = random_tensor(&mut r, &shape, -1.0, 1.0).map(|v| if v.abs() < 1e-3 { v + 2e-3 } else { v });
        let proj = random_tensor(&mut r, &shape, -1.0, 1.0);
        let g = relu_backward(&relu(&x), &proj);
        let n = numeric_grad(&x, |x| dot(&relu(x), &proj));
        worst = worst.max(rel_error(g.data(), &n));
    }
    worst
}

pub fn check_bce(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let shape = random_chw(&mut r);
        let p = random_tensor(&mut r, &shape, 0.02, 0.98);
        let t = random_tensor(&mut r, &shape, 0.0, 1.0);
        let (_, g) = bce_loss_tensor(&p, &t).unwrap();
        let n = numeric_grad(&p, |p| bce_loss_tensor(p, &t).unwrap().0);
        worst = worst.max(rel_error(g.data(), &n));
    }
    worst
}

/// Every per-op check, named, at `trials` trials each.
pub fn per_op_checks(trials: usize, seed: u64) -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", check_conv2d(trials, seed)),
        ("maxpool2", check_maxpool2(trials, seed + 1)),
        ("bilinear_upsample2", check_upsample2(trials, seed + 2)),
        ("concat_channels", check_concat(trials, seed + 3)),
        ("sigmoid", check_sigmoid(trials, seed + 4)),
        ("relu", check_relu(trials, seed + 5)),
        ("bce_loss", check_bce(trials, seed + 6)),
    ]
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_p: 3,
        n_f: 4,
        n_classes: 2,
        waypoint_frames: vec![5],
        encoder_channels: vec![4, 4],
        decoder_channels: vec![4, 4],
        center_channels: 4,
        temperature: 1.0,
        seed: 11,
    }
}

pub fn tiny_sample(cfg: &ModelConfig) -> TrainSample<f64> {
    let mut sem = vec![0u8; 16 * 16];
    for (i, v) in sem.iter_mut().enumerate() {
        if (i % 16) > 9 {
            *v = 1;
        }
    }
    let scene = Scene::new("tiny", 16, 16, sem, vec!["pavement".into(), "grass".into()]).unwrap();
    let past: Vec<Point> = (0..cfg.n_p).map(|t| Point::new(2.0 + t as f64, 7.0)).collect();
    let future: Vec<Point> = (0..cfg.n_f).map(|t| Point::new(5.0 + 1.5 * t as f64, 7.5 + 0.5 * t as f64)).collect();
    TrainSample::new(&scene, &past, &future, &cfg.waypoint_future_indices(), 2.0, PastEncoding::LinearDecay).unwrap()
}

fn model_loss(model: &YNet<f64>, sample: &TrainSample<f64>, w: &LossWeights) -> f64 {
    let cond = teacher_condition(sample, 2.0, model.config().n_blocks() + 1).unwrap();
    let trace = model.forward_train(&sample.input, &cond).unwrap();
    compute_loss(&trace.goal_probs, &trace.traj_probs, sample, w).unwrap().0.total
}

/// Backward pass vs central differences of the full training loss on
/// `entries` randomly chosen parameter entries.
pub fn check_full_model(entries: usize, seed: u64) -> f64 {
    let cfg = tiny_config();
    let sample = tiny_sample(&cfg);
    let w = LossWeights::default();
    let mut model = YNet::<f64>::new(cfg).unwrap();
    let levels = model.config().n_blocks() + 1;
    let cond = teacher_condition(&sample, 2.0, levels).unwrap();
    model.zero_grad();
    let trace = model.forward_train(&sample.input, &cond).unwrap();
    let (_, gg, gt) = compute_loss(&trace.goal_probs, &trace.traj_probs, &sample, &w).unwrap();
    model.backward(&trace, &gg, &gt).unwrap();

    let sizes: Vec<usize> = model.params().iter().map(|p| p.numel()).collect();
    let mut r = rng(seed);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for _ in 0..entries {
        let pi = r.random_range(0..sizes.len());
        let ei = r.random_range(0..sizes[pi]);
        analytic.push(model.params()[pi].grad.as_ref().expect("gradient reached every parameter").data()[ei]);
        let v = model.params()[pi].value.data()[ei];
        let mut at = |x: f64| {
            model.params_mut()[pi].value.data_mut()[ei] = x;
            model_loss(&model, &sample, &w)
        };
        let d = (at(v + H) - at(v - H)) / (2.0 * H);
        at(v);
        numeric.push(d);
    }
    rel_error(&analytic, &numeric)
}
