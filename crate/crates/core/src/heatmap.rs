//! Grid encodings of trajectories, semantic maps and conditioning points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::ops::{avgpool2, concat_channels};
use crate::scene::Scene;
use crate::tensor::{Scalar, Tensor};

/// Default standard deviation, in pixels, of target and conditioning Gaussians.
pub const DEFAULT_SIGMA: f64 = 4.0;

/// How a past position is turned into a distance map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PastEncoding {
    /// `1 − d / d_max`: 1 at the agent, 0 at the farthest pixel.
    #[default]
    LinearDecay,
    /// `2 · d / d_max`, the normalized-distance form taken literally.
    ScaledDistance,
}

/// Largest distance from `p` to any pixel center of an `h × w` grid.
fn max_distance(p: Point, h: usize, w: usize) -> f64 {
    let (xm, ym) = ((w - 1) as f64, (h - 1) as f64);
    [
        Point::new(0.0, 0.0),
        Point::new(xm, 0.0),
        Point::new(0.0, ym),
        Point::new(xm, ym),
    ]
    .into_iter()
    .map(|c| p.dist(c))
    .fold(0.0, f64::max)
}

fn check_in_bounds(points: &[Point], scene: &Scene, what: &str) -> Result<()> {
    for (i, &p) in points.iter().enumerate() {
        if !scene.contains(p) {
            return Err(Error::InvalidArgument(format!(
                "{what} point {i} at ({:.3}, {:.3}) lies outside the {}×{} scene",
                p.x, p.y, scene.width, scene.height
            )));
        }
    }
    Ok(())
}

/// One distance-decay channel per observed position, oldest first.
pub fn encode_past<T: Scalar>(
    track: &[Point],
    scene: &Scene,
    encoding: PastEncoding,
) -> Result<Tensor<T>> {
    check_in_bounds(track, scene, "past frame")?;
    let (h, w) = (scene.height, scene.width);
    let mut out = Tensor::zeros(&[track.len(), h, w]);
    for (n, &u) in track.iter().enumerate() {
        let dmax = max_distance(u, h, w);
        let plane = out.channel_mut(n);
        for i in 0..h {
            for j in 0..w {
                let d = Point::new(j as f64, i as f64).dist(u);
                let v = if dmax > 0.0 {
                    match encoding {
                        PastEncoding::LinearDecay => 1.0 - d / dmax,
                        PastEncoding::ScaledDistance => 2.0 * d / dmax,
                    }
                } else {
                    1.0
                };
                plane[i * w + j] = T::from_f64(v);
            }
        }
    }
    Ok(out)
}

/// One-hot encoding of the class grid, channel `k` = class `k`.
pub fn encode_semantic<T: Scalar>(scene: &Scene) -> Tensor<T> {
    let (h, w) = (scene.height, scene.width);
    let mut out = Tensor::zeros(&[scene.n_classes, h, w]);
    for (i, &c) in scene.semantic.iter().enumerate() {
        out.data_mut()[c as usize * h * w + i] = T::one();
    }
    out
}

/// Semantic channels followed by past channels (oldest to newest).
pub fn build_input<T: Scalar>(past: &Tensor<T>, semantic: &Tensor<T>) -> Result<Tensor<T>> {
    if past.shape().len() != 3 || past.channels() == 0 {
        return Err(Error::InvalidArgument(
            "past heatmap stack must have at least one channel".into(),
        ));
    }
    concat_channels(semantic, past)
}

/// Peak-normalized Gaussian heatmap used as a supervision target.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetHeatmap {
    pub grid: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub center: Point,
    pub sigma: f64,
}

/// Writes `exp(−d² / 2σ²)` around `center` into `plane`.
fn fill_gaussian<T: Scalar>(plane: &mut [T], h: usize, w: usize, center: Point, sigma: f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    for i in 0..h {
        let dy = i as f64 - center.y;
        for j in 0..w {
            let dx = j as f64 - center.x;
            plane[i * w + j] = T::from_f64((-(dx * dx + dy * dy) * inv).exp());
        }
    }
}

pub fn gaussian_target(point: Point, sigma: f64, scene: &Scene) -> Result<TargetHeatmap> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    check_in_bounds(&[point], scene, "target")?;
    let (h, w) = (scene.height, scene.width);
    let mut grid = vec![0.0; h * w];
    fill_gaussian(&mut grid, h, w, point, sigma);
    Ok(TargetHeatmap {
        grid,
        height: h,
        width: w,
        center: point,
        sigma,
    })
}

/// Stack of Gaussian targets, one channel per point.
pub fn gaussian_stack<T: Scalar>(
    points: &[Point],
    sigma: f64,
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let mut out = Tensor::zeros(&[points.len(), height, width]);
    for (c, &p) in points.iter().enumerate() {
        fill_gaussian(out.channel_mut(c), height, width, p, sigma);
    }
    Ok(out)
}

/// Conditioning heatmaps at every decoder resolution, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningPyramid<T> {
    pub levels: Vec<Tensor<T>>,
}

impl<T: Scalar> ConditioningPyramid<T> {
    pub fn channels(&self) -> usize {
        self.levels.first().map_or(0, |t| t.channels())
    }
}

/// Renders waypoints then goal (earliest → goal) as Gaussian channels and
/// builds `levels` resolutions by repeated 2× average pooling.
pub fn encode_conditioning<T: Scalar>(
    goal: Point,
    waypoints: &[Point],
    scene: &Scene,
    sigma: f64,
    levels: usize,
) -> Result<ConditioningPyramid<T>> {
    check_in_bounds(waypoints, scene, "waypoint")?;
    check_in_bounds(&[goal], scene, "goal")?;
    render_conditioning(goal, waypoints, scene.height, scene.width, sigma, levels)
}

/// [`encode_conditioning`] on a bare grid, without bounds checks.
pub fn render_conditioning<T: Scalar>(
    goal: Point,
    waypoints: &[Point],
    height: usize,
    width: usize,
    sigma: f64,
    levels: usize,
) -> Result<ConditioningPyramid<T>> {
    let mut points = waypoints.to_vec();
    points.push(goal);
    let full = gaussian_stack(&points, sigma, height, width)?;
    conditioning_pyramid(full, levels)
}

/// Builds the pooling chain from a full-resolution conditioning stack.
pub fn conditioning_pyramid<T: Scalar>(
    full: Tensor<T>,
    levels: usize,
) -> Result<ConditioningPyramid<T>> {
    let mut out = vec![full];
    while out.len() < levels {
        let next = avgpool2(out.last().unwrap())?;
        out.push(next);
    }
    Ok(ConditioningPyramid { levels: out })
}
