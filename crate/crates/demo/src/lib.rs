//! Browser demo: goal sampling with temperature, goal-anchored waypoint
//! fusion on a fork, and Gaussian track encoding. Every export returns a
//! [`Heatmap`] that the page paints onto a canvas.

use wasm_bindgen::prelude::*;
use ynet_core::geometry::Point;
use ynet_core::heatmap::gaussian_stack;
use ynet_core::sampling::{
    categorical_goals, fuse_prior, ttst, waypoint_prior, ProbabilityMap, SampleBudget,
};
use ynet_core::{Error, Result, Tensor};

/// A square grid of values in `[0, 1]` plus marker points `x0, y0, x1, ...`.
#[wasm_bindgen]
pub struct Heatmap {
    size: usize,
    values: Vec<f32>,
    secondary: Vec<f32>,
    points: Vec<f32>,
}

#[wasm_bindgen]
impl Heatmap {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Main layer, peak-normalized.
    pub fn values(&self) -> Vec<f32> {
        self.values.clone()
    }

    /// Second layer (the prior, for the fusion view); empty otherwise.
    pub fn secondary(&self) -> Vec<f32> {
        self.secondary.clone()
    }

    pub fn points(&self) -> Vec<f32> {
        self.points.clone()
    }
}

fn peak_normalized(v: &[f64]) -> Vec<f32> {
    let m = v.iter().cloned().fold(0.0, f64::max);
    v.iter().map(|&x| if m > 0.0 { (x / m) as f32 } else { 0.0 }).collect()
}

fn flat(points: &[Point]) -> Vec<f32> {
    points.iter().flat_map(|p| [p.x as f32, p.y as f32]).collect()
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn invalid(msg: &str) -> Error {
    Error::InvalidArgument(msg.into())
}

fn check_size(size: usize) -> Result<()> {
    if (16..=256).contains(&size) {
        Ok(())
    } else {
        Err(invalid("grid size must be between 16 and 256"))
    }
}

/// Goal logits of an imagined network: one dominant mode and two weaker
/// ones on a strongly negative background.
fn goal_logits(size: usize) -> Vec<f64> {
    let s = size as f64;
    let modes = [(0.75, 0.3, 9.0), (0.8, 0.75, 6.5), (0.3, 0.8, 5.0)];
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let mut l: f64 = -8.0;
            for &(mx, my, height) in &modes {
                let d2 = ((c as f64 - mx * s).powi(2) + (r as f64 - my * s).powi(2)) / (0.06 * s).powi(2);
                l = l.max(-8.0 + height * 1.6 * (-0.5 * d2).exp());
            }
            out.push(l);
        }
    }
    out
}

/// Goal map `sigmoid(logit / temperature)` and `k_e` sampled goals, with
/// threshold + K-means sampling or plain categorical draws.
pub fn goal_sampling(
    size: usize,
    temperature: f64,
    k_e: usize,
    seed: u64,
    use_ttst: bool,
) -> Result<Heatmap> {
    check_size(size)?;
    if !(temperature > 0.0) {
        return Err(invalid("temperature must be positive"));
    }
    let probs: Vec<f64> = goal_logits(size)
        .into_iter()
        .map(|l| 1.0 / (1.0 + (-l / temperature).exp()))
        .collect();
    let map = ProbabilityMap::new(size, size, probs)?;
    let goals = if use_ttst {
        let budget = SampleBudget {
            k_e,
            k_a: 1,
            n_mc: 2000.max(k_e),
            seed,
        };
        ttst(&map, &budget)
    } else {
        categorical_goals(&map, k_e, seed)
    }?;
    let normalized = map.normalize()?;
    Ok(Heatmap {
        size,
        values: peak_normalized(normalized.data()),
        secondary: Vec::new(),
        points: flat(&goals),
    })
}

/// Three-branch fork as seen by a waypoint head: equal mass on each branch
/// at `fraction` of the way from the junction region.
fn fork_waypoint_map(size: usize, fraction: f64) -> (ProbabilityMap, Point, [Point; 3]) {
    let s = size as f64;
    let start = Point::new(0.08 * s, 0.5 * s);
    let ends = [-55f64, 0.0, 55.0].map(|deg| {
        let (sn, cs) = deg.to_radians().sin_cos();
        Point::new(0.25 * s + 0.65 * s * cs, 0.5 * s + 0.45 * s * sn)
    });
    let centres = ends.map(|e| start.add(e.sub(start).scale(fraction)));
    let width = 0.05 * s;
    let map = ProbabilityMap::from_fn(size, size, |r, c| {
        let p = Point::new(c as f64, r as f64);
        centres.iter().map(|m| (-0.5 * (p.dist(*m) / width).powi(2)).exp()).sum::<f64>() + 1e-9
    })
    .expect("positive map");
    (map, start, ends)
}

/// Waypoint map of a fork, the goal-anchored prior for the chosen branch
/// and their normalized product. Points: last observation, goal, prior
/// mean, fused softargmax.
pub fn waypoint_fusion(
    size: usize,
    branch: usize,
    alpha: f64,
    beta: f64,
    fraction: f64,
) -> Result<Heatmap> {
    check_size(size)?;
    if branch > 2 {
        return Err(invalid("branch must be 0, 1 or 2"));
    }
    let (map, last_obs, ends) = fork_waypoint_map(size, fraction);
    let goal = ends[branch];
    let prior = waypoint_prior(last_obs, goal, fraction, alpha, beta)?;
    let fused = fuse_prior(&map, &prior)?;
    let density: Vec<f64> = (0..size * size)
        .map(|i| prior.density(Point::new((i % size) as f64, (i / size) as f64)))
        .collect();
    Ok(Heatmap {
        size,
        values: peak_normalized(fused.data()),
        secondary: peak_normalized(&density),
        points: flat(&[last_obs, goal, prior.mean, fused.softargmax_point()]),
    })
}

/// Gaussian heatmaps of a drawn track (`x0, y0, x1, y1, ...`), combined by
/// pixel-wise maximum.
pub fn track_heatmap(size: usize, coords: &[f32], sigma: f64) -> Result<Heatmap> {
    check_size(size)?;
    if coords.len() % 2 != 0 {
        return Err(invalid("coordinates come in x, y pairs"));
    }
    let pts: Vec<Point> = coords.chunks(2).map(|c| Point::new(c[0] as f64, c[1] as f64)).collect();
    let stack: Tensor<f64> = gaussian_stack(&pts, sigma, size, size)?;
    let mut combined = vec![0.0f64; size * size];
    for c in 0..pts.len() {
        for (o, &v) in combined.iter_mut().zip(stack.channel(c)) {
            *o = o.max(v);
        }
    }
    Ok(Heatmap {
        size,
        values: peak_normalized(&combined),
        secondary: Vec::new(),
        points: flat(&pts),
    })
}

#[wasm_bindgen(js_name = goalSampling)]
pub fn goal_sampling_js(
    size: usize,
    temperature: f64,
    k_e: usize,
    seed: u64,
    use_ttst: bool,
) -> std::result::Result<Heatmap, JsError> {
    goal_sampling(size, temperature, k_e, seed, use_ttst).map_err(js)
}

#[wasm_bindgen(js_name = waypointFusion)]
pub fn waypoint_fusion_js(
    size: usize,
    branch: usize,
    alpha: f64,
    beta: f64,
    fraction: f64,
) -> std::result::Result<Heatmap, JsError> {
    waypoint_fusion(size, branch, alpha, beta, fraction).map_err(js)
}

#[wasm_bindgen(js_name = trackHeatmap)]
pub fn track_heatmap_js(size: usize, coords: Vec<f32>, sigma: f64) -> std::result::Result<Heatmap, JsError> {
    track_heatmap(size, &coords, sigma).map_err(js)
}
