//! Conditioned waypoint sampling.

use rand::Rng;

use super::{categorical_sample, rng_from_seed, ProbabilityMap};
use crate::error::{Error, Result};
use crate::geometry::Point;

/// Anisotropic Gaussian on the pixel grid, axes along and across the
/// segment from the last observation to the anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaypointPrior {
    pub mean: Point,
    /// Unit vector of the parallel axis.
    pub direction: Point,
    pub sigma_parallel: f64,
    pub sigma_perpendicular: f64,
}

impl WaypointPrior {
    pub fn isotropic(mean: Point, sigma: f64) -> Self {
        WaypointPrior {
            mean,
            direction: Point::new(1.0, 0.0),
            sigma_parallel: sigma,
            sigma_perpendicular: sigma,
        }
    }

    /// Squared Mahalanobis distance of `p` from the mean.
    pub fn mahalanobis2(&self, p: Point) -> f64 {
        let d = p.sub(self.mean);
        let along = d.x * self.direction.x + d.y * self.direction.y;
        let across = -d.x * self.direction.y + d.y * self.direction.x;
        (along / self.sigma_parallel).powi(2) + (across / self.sigma_perpendicular).powi(2)
    }

    /// Unnormalized density, 1 at the mean.
    pub fn density(&self, p: Point) -> f64 {
        (-0.5 * self.mahalanobis2(p)).exp()
    }

    /// 2×2 covariance `[[xx, xy], [xy, yy]]`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let (ux, uy) = (self.direction.x, self.direction.y);
        let a = self.sigma_parallel.powi(2);
        let b = self.sigma_perpendicular.powi(2);
        [
            [a * ux * ux + b * uy * uy, (a - b) * ux * uy],
            [(a - b) * ux * uy, a * uy * uy + b * ux * ux],
        ]
    }
}

/// Prior for a waypoint a `fraction` of the way from `last_obs` to `anchor`.
/// `σ⊥ = ‖anchor − last_obs‖ / α`, `σ∥ = β·σ⊥`. Coincident points give an
/// isotropic prior with σ = 1 px at `last_obs`.
pub fn waypoint_prior(
    last_obs: Point,
    anchor: Point,
    fraction: f64,
    alpha: f64,
    beta: f64,
) -> Result<WaypointPrior> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "prior scales must be positive (alpha = {alpha}, beta = {beta})"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "waypoint fraction {fraction} outside (0, 1)"
        )));
    }
    let seg = anchor.sub(last_obs);
    let len = seg.norm();
    let mean = last_obs.add(seg.scale(fraction));
    if len < 1e-9 {
        return Ok(WaypointPrior::isotropic(mean, 1.0));
    }
    let perp = len / alpha;
    Ok(WaypointPrior {
        mean,
        direction: seg.scale(1.0 / len),
        sigma_parallel: beta * perp,
        sigma_perpendicular: perp,
    })
}

/// Pixel-wise product of `map` with the prior density, renormalized.
/// Rejects the fusion when the product has no mass left, i.e. the map's
/// support is far enough outside the prior for the density to underflow.
pub fn fuse_prior(map: &ProbabilityMap, prior: &WaypointPrior) -> Result<ProbabilityMap> {
    let w = map.width();
    let mut fused = Vec::with_capacity(map.data().len());
    for (i, &v) in map.data().iter().enumerate() {
        let p = Point::new((i % w) as f64, (i / w) as f64);
        fused.push(v * prior.density(p));
    }
    let total: f64 = fused.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numerical(format!(
            "waypoint prior centred at ({:.1}, {:.1}) and predicted waypoint map are disjoint",
            prior.mean.x, prior.mean.y
        )));
    }
    let data = fused.into_iter().map(|v| v / total).collect();
    Ok(ProbabilityMap::from_parts(map.height(), w, data, true))
}

fn check_frames(maps: &[ProbabilityMap], n_p: usize, n_f: usize, frames: &[usize]) -> Result<()> {
    if maps.len() != frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} waypoint maps for {} waypoint frames",
            maps.len(),
            frames.len()
        )));
    }
    let mut prev = n_p;
    for &f in frames {
        if f <= prev || f >= n_p + n_f {
            return Err(Error::InvalidArgument(format!(
                "waypoint frames must be increasing and inside ({n_p}, {}), got {frames:?}",
                n_p + n_f
            )));
        }
        prev = f;
    }
    Ok(())
}

/// Prior shape constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorScale {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PriorScale {
    fn default() -> Self {
        PriorScale {
            alpha: 6.0,
            beta: 0.5,
        }
    }
}

/// Conditioned waypoint sampling for one goal. Returns `K_a` tuples of
/// `N_w` waypoints in frame order. Waypoints are fixed from the latest
/// backwards, each conditioned on the point fixed before it (the goal
/// first). The first tuple uses softargmax points, the rest one draw each.
#[allow(clippy::too_many_arguments)]
pub fn cws(
    waypoint_maps: &[ProbabilityMap],
    goal: Point,
    last_obs: Point,
    n_p: usize,
    n_f: usize,
    waypoint_frames: &[usize],
    k_a: usize,
    scale: PriorScale,
    seed: u64,
) -> Result<Vec<Vec<Point>>> {
    if k_a == 0 {
        return Err(Error::InvalidArgument("K_a must be at least 1".into()));
    }
    check_frames(waypoint_maps, n_p, n_f, waypoint_frames)?;
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(k_a);
    for a in 0..k_a {
        let mut tuple = vec![Point::new(0.0, 0.0); waypoint_frames.len()];
        let mut anchor = goal;
        let mut anchor_frame = n_p + n_f;
        for i in (0..waypoint_frames.len()).rev() {
            let frame = waypoint_frames[i];
            let fraction = (frame - n_p) as f64 / (anchor_frame - n_p) as f64;
            let prior = waypoint_prior(last_obs, anchor, fraction, scale.alpha, scale.beta)?;
            let fused = fuse_prior(&waypoint_maps[i], &prior)?;
            let p = if a == 0 {
                fused.softargmax_point()
            } else {
                categorical_sample(&fused, 1, &mut rng)?[0]
            };
            tuple[i] = p;
            anchor = p;
            anchor_frame = frame;
        }
        out.push(tuple);
    }
    Ok(out)
}

/// Waypoints without goal conditioning (the sampling scheme switched off):
/// softargmax points for the first tuple, plain draws for the rest.
pub fn unconditioned_waypoints(
    waypoint_maps: &[ProbabilityMap],
    k_a: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<Point>>> {
    let mut out = Vec::with_capacity(k_a);
    for a in 0..k_a {
        let mut tuple = Vec::with_capacity(waypoint_maps.len());
        for m in waypoint_maps {
            tuple.push(if a == 0 {
                m.softargmax_point()
            } else {
                categorical_sample(m, 1, rng)?[0]
            });
        }
        out.push(tuple);
    }
    Ok(out)
}
