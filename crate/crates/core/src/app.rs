//! File-level commands shared by the command-line tool and the tests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{
    load_tracks, project_samples, read_jsonl, read_samples, run_pipeline, synth_scene_with,
    write_discards, write_jsonl, write_samples, write_tracks, DiscardReason, PipelineConfig,
    SynthConfig, WindowedSample,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_min_of_k, to_metric_space, AgentRow, EvalRecord, EvalSummary};
use crate::heatmap::encode_semantic;
use crate::model::{ModelConfig, YNet};
use crate::plot::{render, save_png, Layers};
use crate::predict::{goal_maps, predict_all, PredictConfig, PredictionRecord, Query};
use crate::sampling::derive_seed;
use crate::scene::Scene;
use crate::tensor::Tensor;
use crate::training::{fit, split_train_val, write_loss_curve, Control, EpochLoss, TrainConfig, TrainSample};

/// Everything a run needs; one JSON file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub data: PipelineConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub predict: PredictConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Propagates shared settings so each section is self-contained: window
    /// lengths from `data`, waypoint frames, temperature and prior/target
    /// scales from `train`, seeds derived from the root seed.
    pub fn resolved(&self) -> Result<RunConfig> {
        let mut c = self.clone();
        c.model.n_p = c.data.n_p;
        c.model.n_f = c.data.n_f;
        c.model.waypoint_frames = c.train.waypoint_frames.clone();
        c.model.temperature = c.train.temperature;
        c.model.seed = derive_seed(c.seed, &[0]);
        c.train.seed = derive_seed(c.seed, &[1]);
        c.predict.seed = derive_seed(c.seed, &[2]);
        c.predict.alpha = c.train.alpha;
        c.predict.beta = c.train.beta;
        c.predict.sigma = c.train.sigma;
        c.model.validate()?;
        c.train.validate()?;
        Ok(c)
    }
}

/// Key identifying one windowed sample (agent and window index).
pub fn sample_key(s: &WindowedSample) -> String {
    format!("{}/{}", s.agent, s.window)
}

/// Scenes by id, with their semantic encodings.
pub struct SceneSet {
    pub scenes: Vec<(Scene, Tensor<f32>)>,
}

impl SceneSet {
    pub fn load(manifests: &[PathBuf]) -> Result<SceneSet> {
        let mut scenes = Vec::new();
        for m in manifests {
            if !m.exists() {
                return Err(Error::Config(format!("scene manifest {} not found", m.display())));
            }
            let s = Scene::load(m)?;
            let sem = encode_semantic(&s);
            scenes.push((s, sem));
        }
        Ok(SceneSet { scenes })
    }

    pub fn from_scenes(list: Vec<Scene>) -> SceneSet {
        SceneSet {
            scenes: list
                .into_iter()
                .map(|s| {
                    let sem = encode_semantic(&s);
                    (s, sem)
                })
                .collect(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&(Scene, Tensor<f32>)> {
        self.scenes
            .iter()
            .find(|(s, _)| s.id == id)
            .ok_or_else(|| Error::Data(format!("no manifest given for scene {id}")))
    }
}

/// Counts printed by `preprocess`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub tracks_in: usize,
    pub positions_in: usize,
    pub windows_out: usize,
    pub window_length: usize,
    pub discards: BTreeMap<String, usize>,
}

/// CSV tracks → windowed JSON-lines dataset plus discard log, in model space.
pub fn preprocess(
    tracks_csv: &Path,
    scenes: &SceneSet,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<PreprocessReport> {
    let tracks = load_tracks(tracks_csv)?;
    let mut out = run_pipeline(&tracks, cfg)?;
    let mut by_scene: BTreeMap<String, Vec<WindowedSample>> = BTreeMap::new();
    for s in std::mem::take(&mut out.samples) {
        by_scene.entry(s.scene.clone()).or_default().push(s);
    }
    let mut samples = Vec::new();
    for (id, list) in by_scene {
        let (scene, _) = scenes.get(&id)?;
        samples.extend(project_samples(list, scene, &mut out.discards)?);
    }
    out.samples = samples;
    create_dir(out_dir)?;
    write_samples(&out_dir.join("windows.jsonl"), &out.samples)?;
    write_discards(&out_dir.join("discards.csv"), &out.discards)?;
    Ok(PreprocessReport {
        tracks_in: out.tracks_in,
        positions_in: out.positions_in,
        windows_out: out.samples.len(),
        window_length: cfg.window_len(),
        discards: out
            .discard_counts()
            .into_iter()
            .map(|(r, n)| (r.as_str().to_string(), n))
            .collect(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes a generated scene (PNG + manifest) and its tracks CSV.
/// Returns the manifest path.
pub fn synth(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    let s = synth_scene_with(cfg)?;
    create_dir(out_dir)?;
    let manifest = s.scene.save(out_dir, &s.scene.id)?;
    write_tracks(&out_dir.join("tracks.csv"), &s.tracks)?;
    Ok(manifest)
}

/// Builds training samples for windowed data.
pub fn training_samples(
    samples: &[WindowedSample],
    scenes: &SceneSet,
    model: &ModelConfig,
    train: &TrainConfig,
    encoding: crate::heatmap::PastEncoding,
) -> Result<Vec<TrainSample<f32>>> {
    let idx = model.waypoint_future_indices();
    samples
        .iter()
        .map(|w| {
            let (scene, sem) = scenes.get(&w.scene)?;
            TrainSample::with_semantic(scene, sem, &w.past, &w.future, &idx, train.sigma, encoding)
        })
        .collect()
}

/// Trains on the 90 % split of `dataset`. Writes `checkpoint.bin`,
/// `loss_curve.csv`, `train.jsonl` and `val.jsonl`.
pub fn train(
    dataset: &Path,
    scenes: &SceneSet,
    cfg: &RunConfig,
    out_dir: &Path,
    mut progress: impl FnMut(&EpochLoss),
) -> Result<Vec<EpochLoss>> {
    let cfg = cfg.resolved()?;
    let windows = read_samples(dataset)?;
    if windows.is_empty() {
        return Err(Error::Data(format!("{} holds no windows", dataset.display())));
    }
    let (tr, va) = split_train_val(windows.len(), 0.1, derive_seed(cfg.seed, &[3]));
    let train_w: Vec<WindowedSample> = tr.iter().map(|&i| windows[i].clone()).collect();
    let val_w: Vec<WindowedSample> = va.iter().map(|&i| windows[i].clone()).collect();
    let samples = training_samples(&train_w, scenes, &cfg.model, &cfg.train, cfg.predict.past_encoding)?;
    let mut model = YNet::<f32>::new(cfg.model.clone())?;
    let curve = fit(&mut model, &samples, &cfg.train, |e, _| {
        progress(e);
        Ok(Control::Continue)
    })?;
    create_dir(out_dir)?;
    Checkpoint::from_params(&model.params()).save(&out_dir.join("checkpoint.bin"))?;
    write_loss_curve(&out_dir.join("loss_curve.csv"), &curve)?;
    write_samples(&out_dir.join("train.jsonl"), &train_w)?;
    write_samples(&out_dir.join("val.jsonl"), &val_w)?;
    Ok(curve)
}

/// Model from the resolved configuration and a checkpoint file.
pub fn load_model(checkpoint: &Path, cfg: &RunConfig) -> Result<YNet<f32>> {
    let cfg = cfg.resolved()?;
    let mut model = YNet::<f32>::new(cfg.model)?;
    let ck = Checkpoint::load(checkpoint)?;
    ck.restore(&mut model.params_mut())
        .map_err(|e| Error::Config(format!("checkpoint does not fit the configured model: {e}")))?;
    Ok(model)
}

/// Forecasts every window of a dataset (from its past).
pub fn predict_windows(
    model: &YNet<f32>,
    windows: &[WindowedSample],
    scenes: &SceneSet,
    cfg: &PredictConfig,
) -> Result<Vec<PredictionRecord>> {
    let queries: Vec<Query> = windows
        .iter()
        .map(|w| Query {
            scene: w.scene.clone(),
            agent: sample_key(w),
            past: w.past.clone(),
        })
        .collect();
    predict_all(model, &scenes.scenes, &queries, cfg)
}

pub fn predict(
    checkpoint: &Path,
    dataset: &Path,
    scenes: &SceneSet,
    cfg: &RunConfig,
    out: &Path,
) -> Result<usize> {
    let model = load_model(checkpoint, cfg)?;
    let resolved = cfg.resolved()?;
    let windows = read_samples(dataset)?;
    let records = predict_windows(&model, &windows, scenes, &resolved.predict)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_jsonl(out, &records)?;
    Ok(records.len())
}

/// Scores predictions against windowed ground truth.
pub fn score(
    records: &[PredictionRecord],
    windows: &[WindowedSample],
    scenes: &SceneSet,
    dataset_name: &str,
) -> Result<(EvalSummary, Vec<AgentRow>)> {
    let mut by_agent: BTreeMap<(String, String), Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records {
        by_agent.entry((r.scene.clone(), r.agent.clone())).or_default().push(r);
    }
    let truth: BTreeMap<(String, String), &WindowedSample> = windows
        .iter()
        .map(|w| ((w.scene.clone(), sample_key(w)), w))
        .collect();
    let missing: Vec<String> = truth
        .keys()
        .filter(|k| !by_agent.contains_key(*k))
        .map(|k| format!("{}:{}", k.0, k.1))
        .collect();
    let extra: Vec<String> = by_agent
        .keys()
        .filter(|k| !truth.contains_key(*k))
        .map(|k| format!("{}:{}", k.0, k.1))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Data(format!(
            "agent mismatch; without predictions: [{}]; without ground truth: [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let mut evals = Vec::with_capacity(truth.len());
    let (mut k_e, mut k_a) = (0, 0);
    for (key, w) in &truth {
        let mut hyps = by_agent[key].clone();
        hyps.sort_by_key(|r| (r.goal_index, r.path_index));
        k_e = k_e.max(hyps.iter().map(|r| r.goal_index + 1).max().unwrap_or(0));
        k_a = k_a.max(hyps.iter().map(|r| r.path_index + 1).max().unwrap_or(0));
        let (scene, _) = scenes.get(&w.scene)?;
        let (gt, units) = to_metric_space(&w.future, scene)?;
        let converted = hyps
            .iter()
            .map(|r| to_metric_space(&r.points, scene).map(|v| v.0))
            .collect::<Result<Vec<_>>>()?;
        evals.push(EvalRecord::new(&w.scene, &key.1, gt, converted, units)?);
    }
    evaluate_min_of_k(dataset_name, &evals, k_e, k_a)
}

/// Writes `summary.json` and `per_agent.csv` into `out_dir`.
pub fn evaluate(
    predictions: &Path,
    dataset: &Path,
    scenes: &SceneSet,
    out_dir: &Path,
) -> Result<EvalSummary> {
    let records: Vec<PredictionRecord> = read_jsonl(predictions)?;
    let windows = read_samples(dataset)?;
    let name = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (summary, rows) = score(&records, &windows, scenes, &name)?;
    create_dir(out_dir)?;
    let path = out_dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let path = out_dir.join("per_agent.csv");
    let bytes = w.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Renders one figure per window: `<agent>_<window>.png`, plus a goal-map
/// overlay `<agent>_<window>_goal.png` when a model is given.
pub fn plot(
    dataset: &Path,
    predictions: Option<&Path>,
    scenes: &SceneSet,
    model: Option<(&YNet<f32>, &PredictConfig)>,
    only: Option<&str>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let windows = read_samples(dataset)?;
    let records: Vec<PredictionRecord> = match predictions {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    create_dir(out_dir)?;
    let mut written = Vec::new();
    for w in &windows {
        let key = sample_key(w);
        if only.is_some_and(|o| o != key) {
            continue;
        }
        let (scene, sem) = scenes.get(&w.scene)?;
        let preds: Vec<Vec<_>> = records
            .iter()
            .filter(|r| r.scene == w.scene && r.agent == key)
            .map(|r| r.points.clone())
            .collect();
        let stem = key.replace('/', "_");
        let layers = Layers {
            past: &w.past,
            truth: &w.future,
            predictions: &preds,
            heatmap: None,
        };
        let path = out_dir.join(format!("{stem}.png"));
        save_png(&render(scene, &layers)?, &path)?;
        written.push(path);
        if let Some((m, pc)) = model {
            let (_, maps) = goal_maps(m, scene, sem, &w.past, pc.past_encoding)?;
            let layers = Layers {
                heatmap: Some(&maps.goal),
                ..layers
            };
            let path = out_dir.join(format!("{stem}_goal.png"));
            save_png(&render(scene, &layers)?, &path)?;
            written.push(path);
        }
    }
    if let Some(o) = only {
        if written.is_empty() {
            return Err(Error::Data(format!("no window {o} in {}", dataset.display())));
        }
    }
    Ok(written)
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub experiment: String,
    pub ttst: bool,
    pub cws: bool,
    #[serde(rename = "K_e")]
    pub k_e: usize,
    #[serde(rename = "K_a")]
    pub k_a: usize,
    pub min_ade: f64,
    pub min_fde: f64,
}

/// The sampling on/off grid at the configured budget, then the `K_a`
/// sweep {1, 2, 5} with both switches on.
pub fn ablate(
    model: &YNet<f32>,
    windows: &[WindowedSample],
    scenes: &SceneSet,
    cfg: &PredictConfig,
) -> Result<Vec<AblationRow>> {
    let mut runs = Vec::new();
    for (ttst, cws) in [(true, true), (true, false), (false, true), (false, false)] {
        runs.push(("grid", ttst, cws, cfg.k_a));
    }
    for k_a in [1, 2, 5] {
        runs.push(("ka-sweep", true, true, k_a));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for (name, ttst, cws, k_a) in runs {
        let pc = PredictConfig {
            ttst,
            cws,
            k_a,
            ..cfg.clone()
        };
        let records = predict_windows(model, windows, scenes, &pc)?;
        let (s, _) = score(&records, windows, scenes, name)?;
        rows.push(AblationRow {
            experiment: name.to_string(),
            ttst,
            cws,
            k_e: pc.k_e,
            k_a,
            min_ade: s.min_ade,
            min_fde: s.min_fde,
        });
    }
    Ok(rows)
}

pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Scene ids referenced by a dataset.
pub fn dataset_scenes(windows: &[WindowedSample]) -> BTreeSet<String> {
    windows.iter().map(|w| w.scene.clone()).collect()
}

/// Reasons in log order, for printing.
pub fn reason_names() -> Vec<&'static str> {
    DiscardReason::ALL.iter().map(|r| r.as_str()).collect()
}
