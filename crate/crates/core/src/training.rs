//! Loss assembly, dihedral augmentation, teacher forcing and the training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::heatmap::{
    build_input, encode_past, encode_semantic, gaussian_stack, render_conditioning,
    ConditioningPyramid, PastEncoding, DEFAULT_SIGMA,
};
use crate::model::YNet;
use crate::ops::bce_loss;
use crate::optim::Adam;
use crate::sampling::rng_from_seed;
use crate::scene::Scene;
use crate::tensor::{Scalar, Tensor};

/// One supervised example on a scene grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<T> {
    pub scene: String,
    /// Semantic channels then past channels.
    pub input: Tensor<T>,
    pub past: Vec<Point>,
    pub future: Vec<Point>,
    /// 0-based future indices of the waypoints.
    pub waypoint_indices: Vec<usize>,
    /// Waypoint targets (earliest first) then the goal target.
    pub goal_targets: Tensor<T>,
    /// One target per future step for the goal head's auxiliary maps.
    pub aux_targets: Tensor<T>,
    /// One target per future step for the trajectory decoder.
    pub traj_targets: Tensor<T>,
}

impl<T: Scalar> TrainSample<T> {
    pub fn new(
        scene: &Scene,
        past: &[Point],
        future: &[Point],
        waypoint_indices: &[usize],
        sigma: f64,
        encoding: PastEncoding,
    ) -> Result<Self> {
        let semantic = encode_semantic(scene);
        Self::with_semantic(scene, &semantic, past, future, waypoint_indices, sigma, encoding)
    }

    /// Same as [`Self::new`] with a precomputed semantic encoding.
    pub fn with_semantic(
        scene: &Scene,
        semantic: &Tensor<T>,
        past: &[Point],
        future: &[Point],
        waypoint_indices: &[usize],
        sigma: f64,
        encoding: PastEncoding,
    ) -> Result<Self> {
        if future.is_empty() {
            return Err(Error::InvalidArgument("training sample without future".into()));
        }
        if let Some(&i) = waypoint_indices.iter().find(|&&i| i + 1 >= future.len()) {
            return Err(Error::InvalidArgument(format!(
                "waypoint index {i} is not before the goal of a {}-step future",
                future.len()
            )));
        }
        for (i, p) in future.iter().enumerate() {
            if !scene.contains(*p) {
                return Err(Error::InvalidArgument(format!(
                    "future point {i} at ({:.3}, {:.3}) lies outside scene {}",
                    p.x, p.y, scene.id
                )));
            }
        }
        let input = build_input(&encode_past(past, scene, encoding)?, semantic)?;
        let (h, w) = (scene.height, scene.width);
        let mut cond: Vec<Point> = waypoint_indices.iter().map(|&i| future[i]).collect();
        cond.push(*future.last().unwrap());
        let traj_targets = gaussian_stack(future, sigma, h, w)?;
        Ok(TrainSample {
            scene: scene.id.clone(),
            input,
            past: past.to_vec(),
            future: future.to_vec(),
            waypoint_indices: waypoint_indices.to_vec(),
            goal_targets: gaussian_stack(&cond, sigma, h, w)?,
            aux_targets: traj_targets.clone(),
            traj_targets,
        })
    }

    pub fn goal(&self) -> Point {
        *self.future.last().unwrap()
    }

    pub fn waypoints(&self) -> Vec<Point> {
        self.waypoint_indices.iter().map(|&i| self.future[i]).collect()
    }

    /// Goal + waypoints + trajectory + auxiliary targets.
    pub fn target_count(&self) -> usize {
        self.goal_targets.channels() + self.traj_targets.channels() + self.aux_targets.channels()
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.input.spatial()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub global_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            global_scale: 1000.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || !(self.global_scale > 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative with a positive scale, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Loss terms before weighting, plus the weighted, scaled total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub goal: f64,
    pub waypoint: f64,
    pub trajectory: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.goal += o.goal;
        self.waypoint += o.waypoint;
        self.trajectory += o.trajectory;
        self.total += o.total;
    }

    fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            goal: self.goal * s,
            waypoint: self.waypoint * s,
            trajectory: self.trajectory * s,
            total: self.total * s,
        }
    }
}

/// Sum over channels of per-map mean BCE; writes `weight ·` the gradient.
fn channel_bce<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    channels: std::ops::Range<usize>,
    target_offset: usize,
    weight: f64,
    grad: &mut Tensor<T>,
) -> Result<f64> {
    let mut total = 0.0;
    for c in channels {
        let (l, g) = bce_loss(pred.channel(c), target.channel(c - target_offset))?;
        total += l;
        let w = T::from_f64(weight);
        for (d, s) in grad.channel_mut(c).iter_mut().zip(g) {
            *d = s * w;
        }
    }
    Ok(total)
}

/// Loss and gradients with respect to the goal-head probabilities
/// (waypoints, goal, auxiliary maps) and trajectory probabilities.
pub fn compute_loss<T: Scalar>(
    goal_probs: &Tensor<T>,
    traj_probs: &Tensor<T>,
    sample: &TrainSample<T>,
    w: &LossWeights,
) -> Result<(LossBreakdown, Tensor<T>, Tensor<T>)> {
    let n_g = sample.goal_targets.channels();
    let n_aux = sample.aux_targets.channels();
    let (h, wd) = sample.spatial();
    if goal_probs.shape() != [n_g + n_aux, h, wd] {
        return Err(Error::shape("goal loss", goal_probs.shape(), &[n_g + n_aux, h, wd]));
    }
    if traj_probs.shape() != sample.traj_targets.shape() {
        return Err(Error::shape(
            "trajectory loss",
            traj_probs.shape(),
            sample.traj_targets.shape(),
        ));
    }
    let s = w.global_scale;
    let mut g_goal = Tensor::zeros(goal_probs.shape());
    let mut g_traj = Tensor::zeros(traj_probs.shape());
    let goal = channel_bce(goal_probs, &sample.goal_targets, n_g - 1..n_g, 0, s, &mut g_goal)?;
    let mut waypoint =
        channel_bce(goal_probs, &sample.goal_targets, 0..n_g - 1, 0, s * w.lambda1, &mut g_goal)?;
    waypoint += channel_bce(
        goal_probs,
        &sample.aux_targets,
        n_g..n_g + n_aux,
        n_g,
        s * w.lambda1,
        &mut g_goal,
    )?;
    let trajectory = channel_bce(
        traj_probs,
        &sample.traj_targets,
        0..sample.traj_targets.channels(),
        0,
        s * w.lambda2,
        &mut g_traj,
    )?;
    let total = s * (goal + w.lambda1 * waypoint + w.lambda2 * trajectory);
    Ok((
        LossBreakdown {
            goal,
            waypoint,
            trajectory,
            total,
        },
        g_goal,
        g_traj,
    ))
}

/// Grid extents after dihedral element `variant`.
pub fn dihedral_dims(variant: u8, h: usize, w: usize) -> (usize, usize) {
    if variant % 4 % 2 == 1 {
        (w, h)
    } else {
        (h, w)
    }
}

/// Element `variant` of the square's symmetry group applied to a point on
/// an `h × w` grid: mirror `x` when `variant ≥ 4`, then rotate by 90° steps
/// `variant mod 4` times.
pub fn dihedral_point(variant: u8, p: Point, h: usize, w: usize) -> Point {
    let (mut x, mut y) = (p.x, p.y);
    let (mut h, mut w) = (h as f64, w as f64);
    if variant >= 4 {
        x = w - 1.0 - x;
    }
    for _ in 0..variant % 4 {
        (x, y, h, w) = (y, w - 1.0 - x, w, h);
    }
    Point::new(x, y)
}

/// Dihedral element `variant` applied to every channel of a `C × H × W` tensor.
pub fn dihedral_tensor<T: Scalar>(variant: u8, t: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = t.chw();
    let (oh, ow) = dihedral_dims(variant, h, w);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut index = vec![0usize; h * w];
    for i in 0..h {
        for j in 0..w {
            let q = dihedral_point(variant, Point::new(j as f64, i as f64), h, w);
            index[i * w + j] = q.y as usize * ow + q.x as usize;
        }
    }
    for ch in 0..c {
        let src = t.channel(ch);
        let dst = out.channel_mut(ch);
        for (k, &v) in src.iter().enumerate() {
            dst[index[k]] = v;
        }
    }
    out
}

/// The element undoing `variant`.
pub fn dihedral_inverse(variant: u8) -> u8 {
    if variant >= 4 {
        variant
    } else {
        (4 - variant) % 4
    }
}

/// Applies dihedral element `variant` (0..8) to inputs, targets and points.
pub fn augment<T: Scalar>(sample: &TrainSample<T>, variant: u8) -> Result<TrainSample<T>> {
    if variant >= 8 {
        return Err(Error::InvalidArgument(format!(
            "augmentation variant {variant} outside 0..8"
        )));
    }
    if variant == 0 {
        return Ok(sample.clone());
    }
    let (h, w) = sample.spatial();
    let pt = |p: &Point| dihedral_point(variant, *p, h, w);
    Ok(TrainSample {
        scene: sample.scene.clone(),
        input: dihedral_tensor(variant, &sample.input),
        past: sample.past.iter().map(pt).collect(),
        future: sample.future.iter().map(pt).collect(),
        waypoint_indices: sample.waypoint_indices.clone(),
        goal_targets: dihedral_tensor(variant, &sample.goal_targets),
        aux_targets: dihedral_tensor(variant, &sample.aux_targets),
        traj_targets: dihedral_tensor(variant, &sample.traj_targets),
    })
}

/// Ground-truth goal and waypoints rendered as the trajectory decoder's
/// conditioning at `levels` resolutions.
pub fn teacher_condition<T: Scalar>(
    sample: &TrainSample<T>,
    sigma: f64,
    levels: usize,
) -> Result<ConditioningPyramid<T>> {
    let (h, w) = sample.spatial();
    render_conditioning(sample.goal(), &sample.waypoints(), h, w, sigma, levels)
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub global_scale: f64,
    /// Inference temperature stored with the model.
    pub temperature: f64,
    /// Standard deviation of target and conditioning Gaussians, pixels.
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub waypoint_frames: Vec<usize>,
    /// Expand the data eightfold with flips and quarter turns.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 8,
            epochs: 100,
            lambda1: 1.0,
            lambda2: 1.0,
            global_scale: 1000.0,
            temperature: 1.8,
            sigma: DEFAULT_SIGMA,
            alpha: 6.0,
            beta: 0.5,
            seed: 0,
            waypoint_frames: vec![20],
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            global_scale: self.global_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if !(self.lr > 0.0) || self.batch == 0 {
            return Err(Error::Config(format!(
                "lr must be positive and batch at least 1 (lr = {}, batch = {})",
                self.lr, self.batch
            )));
        }
        if !(self.sigma > 0.0 && self.alpha > 0.0 && self.beta > 0.0 && self.temperature > 0.0) {
            return Err(Error::Config(
                "sigma, alpha, beta and temperature must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mean loss terms over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    #[serde(rename = "L_goal")]
    pub goal: f64,
    #[serde(rename = "L_wp")]
    pub waypoint: f64,
    #[serde(rename = "L_traj")]
    pub trajectory: f64,
    pub total: f64,
}

/// Returned by the epoch callback of [`fit`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// One optimizer step on a batch drawn from a single scene. Gradients are
/// averaged over the batch. Returns the mean loss breakdown.
pub fn train_batch<T: Scalar>(
    model: &mut YNet<T>,
    adam: &Adam,
    batch: &[&TrainSample<T>],
    weights: &LossWeights,
    sigma: f64,
    batch_id: usize,
) -> Result<LossBreakdown> {
    let Some(first) = batch.first() else {
        return Err(Error::InvalidArgument("empty batch".into()));
    };
    if let Some(other) = batch.iter().find(|s| s.scene != first.scene) {
        return Err(Error::InvalidArgument(format!(
            "batch {batch_id} mixes scenes {} and {}",
            first.scene, other.scene
        )));
    }
    let levels = model.config().n_blocks() + 1;
    model.zero_grad();
    let mut sum = LossBreakdown::default();
    for s in batch {
        let cond = teacher_condition(s, sigma, levels)?;
        let trace = model.forward_train(&s.input, &cond)?;
        let (loss, g_goal, g_traj) = compute_loss(&trace.goal_probs, &trace.traj_probs, s, weights)?;
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {} in batch {batch_id}",
                loss.total
            )));
        }
        model.backward(&trace, &g_goal, &g_traj)?;
        sum.add(&loss);
    }
    let inv = T::from_f64(1.0 / batch.len() as f64);
    let mut params = model.params_mut();
    for p in params.iter_mut() {
        p.grad_mut().scale(inv);
    }
    adam.step(&mut params)?;
    Ok(sum.scaled(1.0 / batch.len() as f64))
}

/// Scene-homogeneous batches of (sample index, augmentation variant), seeded.
pub fn plan_batches<T>(
    samples: &[TrainSample<T>],
    batch: usize,
    augment: bool,
    rng: &mut impl rand::Rng,
) -> Vec<Vec<(usize, u8)>> {
    let variants: &[u8] = if augment { &[0, 1, 2, 3, 4, 5, 6, 7] } else { &[0] };
    let mut groups: BTreeMap<&str, Vec<(usize, u8)>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let g = groups.entry(s.scene.as_str()).or_default();
        g.extend(variants.iter().map(|&v| (i, v)));
    }
    let mut batches = Vec::new();
    for (_, mut items) in groups {
        items.shuffle(rng);
        batches.extend(items.chunks(batch.max(1)).map(|c| c.to_vec()));
    }
    batches.shuffle(rng);
    batches
}

/// Trains `model` on `samples`. `on_epoch` sees the epoch's mean losses and
/// the model after that epoch and may stop training early.
pub fn fit<T: Scalar>(
    model: &mut YNet<T>,
    samples: &[TrainSample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss, &YNet<T>) -> Result<Control>,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let adam = Adam::with_lr(cfg.lr);
    let weights = cfg.weights();
    let mut rng = rng_from_seed(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut batch_id = 0;
    for epoch in 1..=cfg.epochs {
        let mut sum = LossBreakdown::default();
        let mut count = 0usize;
        for plan in plan_batches(samples, cfg.batch, cfg.augment, &mut rng) {
            let owned: Vec<TrainSample<T>> = plan
                .iter()
                .filter(|(_, v)| *v != 0)
                .map(|&(i, v)| augment(&samples[i], v))
                .collect::<Result<_>>()?;
            let mut aug = owned.iter();
            let batch: Vec<&TrainSample<T>> = plan
                .iter()
                .map(|&(i, v)| if v == 0 { &samples[i] } else { aug.next().unwrap() })
                .collect();
            let loss = train_batch(model, &adam, &batch, &weights, cfg.sigma, batch_id)?;
            sum.add(&loss.scaled(batch.len() as f64));
            count += batch.len();
            batch_id += 1;
        }
        let mean = sum.scaled(1.0 / count as f64);
        let record = EpochLoss {
            epoch,
            goal: mean.goal,
            waypoint: mean.waypoint,
            trajectory: mean.trajectory,
            total: mean.total,
        };
        curve.push(record);
        if on_epoch(&record, model)? == Control::Stop {
            break;
        }
    }
    Ok(curve)
}

/// Writes the loss curve as CSV: epoch, L_goal, L_wp, L_traj, total.
pub fn write_loss_curve(path: &Path, curve: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in curve {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

/// Seeded split of `n` indices into (train, validation), validation taking
/// `round(fraction · n)` items, at least one when `n ≥ 2`.
pub fn split_train_val(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let mut n_val = (fraction * n as f64).round() as usize;
    if n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let val = idx.split_off(n - n_val);
    let mut train = idx;
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}
