//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ynet_core::app::{self, predict_windows, score, training_samples, RunConfig, SceneSet};
use ynet_core::data::{
    load_tracks, run_pipeline, synth_scene, synth_scene_with, synth_windows, write_tracks, DiscardReason,
    PipelineConfig, RawTrack, SceneKind, SynthConfig, WindowedSample,
};
use ynet_core::eval::{ade, fde};
use ynet_core::geometry::{rescale_coords, upscale_coords, Homography, Point};
use ynet_core::model::{ModelConfig, YNet};
use ynet_core::ops::sigmoid;
use ynet_core::predict::PredictConfig;
use ynet_core::sampling::{
    cws, fuse_prior, relative_threshold, softargmax, ttst, waypoint_prior, PriorScale,
    ProbabilityMap, SampleBudget,
};
use ynet_core::training::{fit, split_train_val, Control, TrainConfig};
use ynet_core::Tensor;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let ops = common::per_op_checks(100, 1000);
    let worst_op = ops.iter().cloned().fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let model = (0..3).map(|s| common::check_full_model(20, s)).fold(0.0f64, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    let pass = ops.iter().all(|(_, e)| *e < 1e-4) && model < 1e-3 && secs < 60.0;
    outcome(
        pass,
        format!(
            "worst per-op rel err {:.2e} ({}), full model {:.2e}, {:.1} s",
            worst_op.1, worst_op.0, model, secs
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Scalar-loop softargmax straight from the definition, no stabilisation.
fn softargmax_oracle(v: &[f64], h: usize, w: usize) -> (f64, f64) {
    let mut z = 0.0;
    let (mut sx, mut sy) = (0.0, 0.0);
    for i in 0..h {
        for j in 0..w {
            let e = v[i * w + j].exp();
            z += e;
            sx += j as f64 * e;
            sy += i as f64 * e;
        }
    }
    (sx / z, sy / z)
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

fn sampling_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_soft = 0.0f64;
    let mut worst_ttst = 0.0f64;
    let mut ttst_exact = true;
    let mut argmax_kept = true;
    for _ in 0..1000 {
        let v: Vec<f64> = (0..25).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p = softargmax(&v, 5, 5);
        let (ox, oy) = softargmax_oracle(&v, 5, 5);
        worst_soft = worst_soft.max((p.x - ox).abs()).max((p.y - oy).abs());

        let probs: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
        let m = ProbabilityMap::new(5, 5, probs.clone()).unwrap();
        let budget = SampleBudget { k_e: 1, k_a: 1, n_mc: 100, seed: rng.random() };
        let goal = ttst(&m, &budget).unwrap();
        let thr = relative_threshold(&m).unwrap();
        ttst_exact &= goal.len() == 1 && goal[0] == thr.softargmax_point();
        let lv: Vec<f64> = thr.data().iter().map(|&x| logit(x)).collect();
        let (ox, oy) = softargmax_oracle(&lv, 5, 5);
        worst_ttst = worst_ttst.max((goal[0].x - ox).abs()).max((goal[0].y - oy).abs());
        argmax_kept &= thr.argmax() == m.argmax() && thr.data()[m.argmax()] == probs[m.argmax()];
    }
    let pass = worst_soft < 1e-10 && worst_ttst < 1e-10 && ttst_exact && argmax_kept;
    outcome(
        pass,
        format!(
            "softargmax max dev {worst_soft:.1e}, TTST(K_e=1) max dev {worst_ttst:.1e} exact={ttst_exact}, argmax kept={argmax_kept}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn cws_fixture() -> Outcome {
    let t0 = Instant::now();
    let fork = synth_scene(SceneKind::Fork, 64, 5).unwrap();
    let j = fork.junction.unwrap();
    let dirs: Vec<Point> = fork
        .routes
        .iter()
        .map(|r| r[1].b.sub(r[1].a).scale(1.0 / r[1].b.dist(r[1].a)))
        .collect();
    // observed up to just before the junction, heading for the bottom branch end
    let (n_p, n_f, frame) = (5usize, 30usize, 20usize);
    let last_obs = Point::new(j.x - 4.0, j.y);
    let bottom = 2;
    let goal = j.add(dirs[bottom].scale(30.0));
    let fraction = (frame - n_p) as f64 / n_f as f64;
    let mean = last_obs.add(goal.sub(last_obs).scale(fraction));
    let arc = mean.dist(j);
    let modes: Vec<Point> = dirs.iter().map(|d| j.add(d.scale(arc))).collect();
    // one mode per branch, three standard deviations inside the corridor
    let sd = fork.half_width / 3.0;
    let map = ProbabilityMap::from_fn(64, 64, |r, c| {
        let p = Point::new(c as f64, r as f64);
        modes.iter().map(|m| (-0.5 * p.dist2(*m) / (sd * sd)).exp()).sum()
    })
    .unwrap();
    let scale = PriorScale::default();
    let prior = waypoint_prior(last_obs, goal, fraction, scale.alpha, scale.beta).unwrap();
    let fused = fuse_prior(&map, &prior).unwrap();
    let mask = &fork.corridor_masks[bottom];
    let mass: f64 = fused.data().iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum();
    let run = || cws(&[map.clone()], goal, last_obs, n_p, n_f, &[frame], 5, scale, 77).unwrap();
    let a = run();
    let inside = a.iter().filter(|t| fork.corridor_of(t[0]) == Some(bottom)).count();
    let deterministic = a == run();
    let secs = t0.elapsed().as_secs_f64();
    let pass = mass >= 0.95 && inside == 5 && deterministic && secs < 5.0;
    outcome(
        pass,
        format!("bottom-corridor mass {:.4}, {inside}/5 waypoints inside, deterministic={deterministic}, {:.2} s", mass, secs),
    )
}

// ---------------------------------------------------------------- 4 and 5

struct Overfit {
    model: YNet<f32>,
    scenes: SceneSet,
    val: Vec<WindowedSample>,
}

fn overfit_configs() -> (ModelConfig, TrainConfig) {
    let mc = ModelConfig {
        n_p: 5,
        n_f: 10,
        n_classes: 5,
        waypoint_frames: vec![10],
        encoder_channels: vec![8, 8, 16],
        decoder_channels: vec![16, 8, 8],
        center_channels: 16,
        temperature: 1.0,
        seed: 1,
    };
    let tc = TrainConfig {
        lr: 1e-3,
        batch: 8,
        epochs: 500,
        sigma: 2.0,
        temperature: 1.0,
        waypoint_frames: vec![10],
        augment: false,
        seed: 2,
        ..TrainConfig::default()
    };
    (mc, tc)
}

fn min_ade(model: &YNet<f32>, windows: &[WindowedSample], scenes: &SceneSet, pc: &PredictConfig) -> (f64, f64) {
    let records = predict_windows(model, windows, scenes, pc).unwrap();
    let (s, _) = score(&records, windows, scenes, "acceptance").unwrap();
    (s.min_ade, s.min_fde)
}

fn overfit_smoke() -> (Outcome, Option<Overfit>) {
    let t0 = Instant::now();
    let synth = synth_scene_with(&SynthConfig { kind: SceneKind::Fork, size: 32, seed: 1, n_agents: 22, max_len: 0 }).unwrap();
    let windows = synth_windows(&synth, 5, 10).unwrap();
    let (tr, va) = split_train_val(windows.len(), 0.1, 3);
    let train: Vec<WindowedSample> = tr.iter().take(20).map(|&i| windows[i].clone()).collect();
    let val: Vec<WindowedSample> = va.iter().map(|&i| windows[i].clone()).collect();
    let scenes = SceneSet::from_scenes(vec![synth.scene.clone()]);
    let (mc, tc) = overfit_configs();
    let samples = training_samples(&train, &scenes, &mc, &tc, Default::default()).unwrap();
    let mut model = YNet::<f32>::new(mc).unwrap();
    let pc = PredictConfig { k_e: 5, k_a: 1, sigma: tc.sigma, seed: 4, ..PredictConfig::default() };
    let mut reached: Option<(usize, f64)> = None;
    let mut last = f64::INFINITY;
    let fitted = fit(&mut model, &samples, &tc, |e, m| {
        if e.epoch % 25 == 0 {
            last = min_ade(m, &train, &scenes, &pc).0;
            if last < 2.0 {
                reached = Some((e.epoch, last));
                return Ok(Control::Stop);
            }
        }
        Ok(Control::Continue)
    });
    let secs = t0.elapsed().as_secs_f64();
    if let Err(e) = fitted {
        return (outcome(false, format!("training failed: {e}")), None);
    }
    let out = match reached {
        Some((epoch, v)) => outcome(
            secs < 600.0,
            format!("{} training windows, min-of-5 ADE {v:.3} px after {epoch} epochs, {secs:.0} s", samples.len()),
        ),
        None => outcome(false, format!("min-of-5 ADE still {last:.3} px after 500 epochs, {secs:.0} s")),
    };
    (out, Some(Overfit { model, scenes, val }))
}

fn monotonicity(o: &Overfit) -> Outcome {
    let base = PredictConfig { sigma: 2.0, seed: 5, ..PredictConfig::default() };
    let over_ke: Vec<f64> = [1, 5, 20]
        .iter()
        .map(|&k| min_ade(&o.model, &o.val, &o.scenes, &PredictConfig { k_e: k, k_a: 1, ..base.clone() }).0)
        .collect();
    let over_ka: Vec<(f64, f64)> = [1, 2, 5]
        .iter()
        .map(|&k| min_ade(&o.model, &o.val, &o.scenes, &PredictConfig { k_e: 20, k_a: k, ..base.clone() }))
        .collect();
    let ke_ok = over_ke.windows(2).all(|w| w[1] <= w[0]);
    let ka_ok = over_ka.windows(2).all(|w| w[1].0 <= w[0].0);
    let fde_const = over_ka.iter().all(|v| v.1 == over_ka[0].1);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ≥ ");
    outcome(
        ke_ok && ka_ok && fde_const,
        format!(
            "{} held-out windows; min-ADE over K_e {{1,5,20}}: {}; over K_a {{1,2,5}}: {}; min-FDE {}",
            o.val.len(),
            fmt(&over_ke),
            fmt(&over_ka.iter().map(|v| v.0).collect::<Vec<_>>()),
            if fde_const { format!("constant at {:.3}", over_ka[0].1) } else { format!("varies {:?}", over_ka.iter().map(|v| v.1).collect::<Vec<_>>()) }
        ),
    )
}

// ---------------------------------------------------------------- 6

fn temperature_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let temps = [0.5, 1.0, 1.8, 3.0];
    let mut violations = 0;
    for _ in 0..100 {
        let (h, w) = (32usize, 32usize);
        // heatmap-like logits: negative background with a few bumps
        let bumps: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(1..=3))
            .map(|_| (rng.random_range(0.0..32.0), rng.random_range(0.0..32.0), rng.random_range(1.0..5.0), rng.random_range(-2.0..0.0)))
            .collect();
        let bg: Vec<f64> = (0..h * w).map(|_| rng.random_range(-12.0..-4.0)).collect();
        let logits: Vec<f64> = (0..h * w)
            .map(|i| {
                let p = Point::new((i % w) as f64, (i / w) as f64);
                bumps.iter().fold(bg[i], |l, &(x, y, s, peak)| l.max(peak - p.dist2(Point::new(x, y)) / (2.0 * s * s)))
            })
            .collect();
        let t = Tensor::<f64>::from_vec(&[1, h, w], logits).unwrap();
        let mut last = f64::NEG_INFINITY;
        for &temp in &temps {
            let probs = sigmoid(&t.map(|v| v / temp));
            let e = ProbabilityMap::from_channel(&probs, 0).unwrap().entropy().unwrap();
            if e < last {
                violations += 1;
                break;
            }
            last = e;
        }
    }
    outcome(violations == 0, format!("{violations}/100 logit maps with entropy decreasing in T over {temps:?}"))
}

// ---------------------------------------------------------------- 7

fn raw(agent: &str, class: &str, frames: impl IntoIterator<Item = i64>) -> RawTrack {
    let frames: Vec<i64> = frames.into_iter().collect();
    RawTrack {
        scene: "fixture".into(),
        agent: agent.into(),
        class: class.into(),
        positions: frames.iter().map(|&f| Point::new(f as f64 * 0.01, 5.0)).collect(),
        frames,
    }
}

fn pipeline_check(tmp: &Path) -> Outcome {
    // At 30 → 1 fps a track keeps frames divisible by 30.
    //  a: 0..=2400  → 81 kept: 2 windows, tail 11
    //  b: 0..600    → 20 kept: short fragment
    //  c: cyclist   → 10 kept: class filter
    //  d: 0..=1500 and 2400..=2700 → 51 (1 window, tail 16) + 11 (discontinuity)
    let tracks = vec![
        raw("a", "Pedestrian", 0..=2400),
        raw("b", "Pedestrian", 0..600),
        raw("c", "Biker", 0..300),
        raw("d", "Pedestrian", (0..=1500).chain(2400..=2700)),
    ];
    let path = tmp.join("fixture.csv");
    write_tracks(&path, &tracks).unwrap();
    let loaded = load_tracks(&path).unwrap();
    let cfg = PipelineConfig::default();
    let out = run_pipeline(&loaded, &cfg).unwrap();
    let counts = out.discard_counts();
    let expected = [
        (DiscardReason::FpsDownsample, 2320 + 580 + 290 + 1450 + 290),
        (DiscardReason::ClassFilter, 10),
        (DiscardReason::ShortFragment, 20),
        (DiscardReason::DiscontinuityBoundary, 11),
        (DiscardReason::Tail, 11 + 16),
        (DiscardReason::OutOfBounds, 0),
    ];
    let ledger_ok = expected.iter().all(|(r, n)| counts[r] == *n);
    let windows_ok = out.samples.len() == 3;
    let length_ok = cfg.window_len() == 35 && out.samples.iter().all(|s| s.past.len() + s.future.len() == 35);
    let conserved = out.positions_accounted() == out.positions_in && out.positions_in == 5103;

    let h = Homography::from_row_major(&[0.9, -0.2, 12.0, 0.15, 1.1, -4.0, 1e-4, -2e-4, 1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pts: Vec<Point> = (0..500).map(|_| Point::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0))).collect();
    let hom_err = h.pixel_to_world(&h.world_to_pixel(&pts)).iter().zip(&pts).map(|(a, b)| a.dist(*b)).fold(0.0, f64::max);
    let res_err = upscale_coords(&rescale_coords(&pts, 4.0).unwrap(), 4.0).unwrap().iter().zip(&pts).map(|(a, b)| a.dist(*b)).fold(0.0, f64::max);
    let pass = ledger_ok && windows_ok && length_ok && conserved && hom_err < 1e-9 && res_err < 1e-9;
    outcome(
        pass,
        format!(
            "{} windows (expected 3), length {}, discards {:?}, accounted {}/{} positions, round trips {:.1e} / {:.1e}",
            out.samples.len(),
            cfg.window_len(),
            counts.values().collect::<Vec<_>>(),
            out.positions_accounted(),
            out.positions_in,
            hom_err,
            res_err
        ),
    )
}

// ---------------------------------------------------------------- 8

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let mut pt = || Point::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let pred: Vec<Point> = (0..n).map(|_| pt()).collect();
        let gt: Vec<Point> = (0..n).map(|_| pt()).collect();
        let mut s = 0.0;
        for i in 0..n {
            s += ((pred[i].x - gt[i].x).powi(2) + (pred[i].y - gt[i].y).powi(2)).sqrt();
        }
        let oracle_ade = s / n as f64;
        let oracle_fde = ((pred[n - 1].x - gt[n - 1].x).powi(2) + (pred[n - 1].y - gt[n - 1].y).powi(2)).sqrt();
        worst = worst
            .max((ade(&pred, &gt).unwrap() - oracle_ade).abs())
            .max((fde(&pred, &gt).unwrap() - oracle_fde).abs());
    }
    let gt: Vec<Point> = (0..12).map(|i| Point::new(i as f64 * 1.7, -(i as f64) * 0.3)).collect();
    let shifted: Vec<Point> = gt.iter().map(|p| p.add(Point::new(3.0, 4.0))).collect();
    let offset_exact = ade(&shifted, &gt).unwrap() == 5.0 && fde(&shifted, &gt).unwrap() == 5.0;
    let tri = ade(&[Point::new(0.0, 0.0), Point::new(3.0, 4.0)], &[Point::new(0.0, 0.0), Point::new(0.0, 0.0)]).unwrap() == 2.5
        && fde(&[Point::new(3.0, 4.0)], &[Point::new(0.0, 0.0)]).unwrap() == 5.0;
    outcome(
        worst < 1e-10 && offset_exact && tri,
        format!("max deviation {worst:.1e} over 1000 cases, constant offset exact={offset_exact}, 3-4-5 exact={tri}"),
    )
}

// ---------------------------------------------------------------- 9

fn run_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let cfg: RunConfig = serde_json::from_str(
        r#"{
            "seed": 21,
            "data": { "src_fps": 1, "dst_fps": 1, "n_p": 5, "n_f": 10 },
            "model": { "encoder_channels": [4, 4, 8], "decoder_channels": [8, 4, 4], "center_channels": 8 },
            "train": { "epochs": 3, "batch": 4, "waypoint_frames": [10] },
            "predict": { "k_e": 4, "k_a": 2, "n_mc": 500 }
        }"#,
    )
    .unwrap();
    let sc = SynthConfig { kind: SceneKind::Fork, size: 32, seed: 9, n_agents: 12, max_len: 0 };
    let manifest = app::synth(&sc, &dir.join("scene")).unwrap();
    let scenes = SceneSet::load(&[manifest]).unwrap();
    app::preprocess(&dir.join("scene/tracks.csv"), &scenes, &cfg.data, &dir.join("data")).unwrap();
    app::train(&dir.join("data/windows.jsonl"), &scenes, &cfg, &dir.join("model"), |_| {}).unwrap();
    app::predict(&dir.join("model/checkpoint.bin"), &dir.join("model/val.jsonl"), &scenes, &cfg, &dir.join("pred/predictions.jsonl")).unwrap();
    app::evaluate(&dir.join("pred/predictions.jsonl"), &dir.join("model/val.jsonl"), &scenes, &dir.join("eval")).unwrap();
    [
        "data/windows.jsonl",
        "data/discards.csv",
        "model/checkpoint.bin",
        "model/loss_curve.csv",
        "pred/predictions.jsonl",
        "eval/summary.json",
        "eval/per_agent.csv",
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
    .collect()
}

fn determinism(tmp: &Path) -> Outcome {
    let a = run_all(&tmp.join("run-a"));
    let b = run_all(&tmp.join("run-b"));
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} output files bit-identical across two runs", a.len())
        } else {
            format!("outputs differ: {differing:?}")
        },
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "gradient suite", gradient_suite()));
    results.push((2, "sampling oracles", sampling_oracles()));
    results.push((3, "conditioned waypoint fixture", cws_fixture()));
    let (smoke, overfit) = overfit_smoke();
    results.push((4, "overfit smoke test", smoke));
    let mono = match &overfit {
        Some(o) => monotonicity(o),
        None => outcome(false, "no trained model"),
    };
    results.push((5, "min-of-K monotonicity", mono));
    results.push((6, "temperature property", temperature_property()));
    results.push((7, "pipeline structure", pipeline_check(tmp.path())));
    results.push((8, "metric oracles", metric_oracles()));
    results.push((9, "determinism", determinism(tmp.path())));

    let mut failed = 0;
    for (n, name, o) in &results {
        println!("{} criterion {n} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
