//! Full inference: goal sampling, conditioned waypoints, path decoding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::heatmap::{
    build_input, encode_past, render_conditioning, PastEncoding, DEFAULT_SIGMA,
};
use crate::model::{Mode, YNet};
use crate::sampling::{
    categorical_goals, cws, derive_seed, rng_from_seed, trajectory_from_maps, ttst,
    unconditioned_waypoints, PriorScale, ProbabilityMap, SampleBudget,
};
use crate::scene::Scene;
use crate::tensor::{Scalar, Tensor};

/// Sampling settings for one prediction run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    pub k_e: usize,
    pub k_a: usize,
    pub n_mc: usize,
    pub seed: u64,
    pub ttst: bool,
    pub cws: bool,
    pub alpha: f64,
    pub beta: f64,
    /// Conditioning Gaussian standard deviation, pixels.
    pub sigma: f64,
    pub past_encoding: PastEncoding,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            k_e: 20,
            k_a: 1,
            n_mc: crate::sampling::DEFAULT_MC_DRAWS,
            seed: 0,
            ttst: true,
            cws: true,
            alpha: 6.0,
            beta: 0.5,
            sigma: DEFAULT_SIGMA,
            past_encoding: PastEncoding::LinearDecay,
        }
    }
}

impl PredictConfig {
    pub fn budget(&self, seed: u64) -> SampleBudget {
        SampleBudget {
            k_e: self.k_e,
            k_a: self.k_a,
            n_mc: self.n_mc,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub goal: Point,
    pub waypoints: Vec<Point>,
}

/// One hypothesis as persisted (JSON-lines).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scene: String,
    pub agent: String,
    pub goal_index: usize,
    pub path_index: usize,
    pub points: Vec<Point>,
    pub conditioning: Conditioning,
}

/// Goal and waypoint probability maps for one observation.
pub struct GoalMaps {
    pub goal: ProbabilityMap,
    /// Earliest waypoint first.
    pub waypoints: Vec<ProbabilityMap>,
}

/// Runs the encoder and goal decoder (with temperature) on a past track.
pub fn goal_maps<T: Scalar>(
    model: &YNet<T>,
    scene: &Scene,
    semantic: &Tensor<T>,
    past: &[Point],
    encoding: PastEncoding,
) -> Result<(crate::model::FeaturePyramid<T>, GoalMaps)> {
    let input = build_input(&encode_past(past, scene, encoding)?, semantic)?;
    let pyramid = model.encode(&input)?;
    let probs = model.decode_goal(&pyramid, Mode::Infer)?;
    let n_w = model.config().n_waypoints();
    let waypoints = (0..n_w)
        .map(|c| ProbabilityMap::from_channel(&probs, c))
        .collect::<Result<Vec<_>>>()?;
    let goal = ProbabilityMap::from_channel(&probs, n_w)?;
    Ok((pyramid, GoalMaps { goal, waypoints }))
}

/// `K_e × K_a` hypotheses for one agent, goal-major. `seed` should already
/// be specific to the agent.
pub fn predict_agent<T: Scalar>(
    model: &YNet<T>,
    scene: &Scene,
    semantic: &Tensor<T>,
    past: &[Point],
    cfg: &PredictConfig,
    seed: u64,
) -> Result<Vec<(usize, usize, Vec<Point>, Conditioning)>> {
    cfg.budget(seed).validate()?;
    let mc = model.config();
    let (pyramid, maps) = goal_maps(model, scene, semantic, past, cfg.past_encoding)?;
    let goal_seed = derive_seed(seed, &[0]);
    let goals = if cfg.ttst {
        ttst(&maps.goal, &cfg.budget(goal_seed))?
    } else {
        categorical_goals(&maps.goal, cfg.k_e, goal_seed)?
    };
    let last_obs = *past.last().unwrap();
    let wp_idx = mc.waypoint_future_indices();
    let levels = mc.n_blocks() + 1;
    let (h, w) = (scene.height, scene.width);

    let per_goal: Vec<Result<Vec<_>>> = goals
        .par_iter()
        .enumerate()
        .map(|(e, &goal)| {
            let branch = derive_seed(seed, &[1, e as u64]);
            let tuples = if cfg.cws {
                cws(
                    &maps.waypoints,
                    goal,
                    last_obs,
                    mc.n_p,
                    mc.n_f,
                    &mc.waypoint_frames,
                    cfg.k_a,
                    PriorScale {
                        alpha: cfg.alpha,
                        beta: cfg.beta,
                    },
                    branch,
                )?
            } else {
                unconditioned_waypoints(&maps.waypoints, cfg.k_a, &mut rng_from_seed(branch))?
            };
            let mut out = Vec::with_capacity(tuples.len());
            for (a, wps) in tuples.into_iter().enumerate() {
                let cond = render_conditioning::<T>(goal, &wps, h, w, cfg.sigma, levels)?;
                let probs = model.decode_trajectory(&pyramid, &cond)?;
                let step_maps = (0..mc.n_f)
                    .map(|c| ProbabilityMap::from_channel(&probs, c))
                    .collect::<Result<Vec<_>>>()?;
                let mut fixed: Vec<(usize, Point)> = wp_idx.iter().copied().zip(wps.iter().copied()).collect();
                fixed.push((mc.n_f - 1, goal));
                let points = trajectory_from_maps(&step_maps, &fixed);
                out.push((
                    e,
                    a,
                    points,
                    Conditioning {
                        goal,
                        waypoints: wps,
                    },
                ));
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(cfg.k_e * cfg.k_a);
    for r in per_goal {
        all.extend(r?);
    }
    Ok(all)
}

/// An observed agent to forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub scene: String,
    pub agent: String,
    pub past: Vec<Point>,
}

/// Predicts every query; agents run in parallel, each with a seed derived
/// from the root seed and its position in `queries`.
pub fn predict_all<T: Scalar>(
    model: &YNet<T>,
    scenes: &[(Scene, Tensor<T>)],
    queries: &[Query],
    cfg: &PredictConfig,
) -> Result<Vec<PredictionRecord>> {
    if queries.iter().any(|q| q.past.len() != model.config().n_p) {
        return Err(Error::Config(format!(
            "model expects {} observed steps",
            model.config().n_p
        )));
    }
    let per_agent: Vec<Result<Vec<PredictionRecord>>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let (scene, semantic) = scenes
                .iter()
                .find(|(s, _)| s.id == q.scene)
                .ok_or_else(|| Error::Data(format!("no scene named {}", q.scene)))?;
            let hyps = predict_agent(model, scene, semantic, &q.past, cfg, derive_seed(cfg.seed, &[i as u64]))?;
            Ok(hyps
                .into_iter()
                .map(|(goal_index, path_index, points, conditioning)| PredictionRecord {
                    scene: q.scene.clone(),
                    agent: q.agent.clone(),
                    goal_index,
                    path_index,
                    points,
                    conditioning,
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_agent {
        out.extend(r?);
    }
    Ok(out)
}
