//! From probability maps to discrete goal, waypoint and path hypotheses.
//!
//! Goal hypotheses come from the test-time sampling trick: threshold the
//! map, draw many Monte-Carlo samples, reduce them with K-means to `K_e − 1`
//! centers and add the softargmax point. Waypoints are drawn per goal after
//! multiplying the waypoint map with a Gaussian prior anchored on the
//! segment between the last observation and the goal.

mod cws;
mod kmeans;
mod map;

pub use cws::{
    cws, fuse_prior, unconditioned_waypoints, waypoint_prior, PriorScale, WaypointPrior,
};
pub use kmeans::{kmeans, KMeans, MAX_ITERATIONS};
pub use map::ProbabilityMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Fraction of the map maximum below which entries are suppressed.
pub const RELATIVE_THRESHOLD: f64 = 0.01;

/// Default Monte-Carlo draw count for the sampling trick.
pub const DEFAULT_MC_DRAWS: usize = 10_000;

/// Seeded RNG used everywhere in sampling.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child seed for an independent branch (agent, goal, ...) of a run.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// Softargmax of an `h × w` grid of scores:
/// `(Σ_i i·Σ_j e^{X_ij} / Σ e^X, Σ_j j·Σ_i e^{X_ij} / Σ e^X)`,
/// returned as a point with `x` the column and `y` the row expectation.
pub fn softargmax(values: &[f64], height: usize, width: usize) -> Point {
    assert_eq!(values.len(), height * width);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut rows = vec![0.0; height];
    let mut cols = vec![0.0; width];
    for i in 0..height {
        for j in 0..width {
            let e = (values[i * width + j] - max).exp();
            rows[i] += e;
            cols[j] += e;
        }
    }
    let total: f64 = rows.iter().sum();
    let y = rows.iter().enumerate().map(|(i, r)| i as f64 * r).sum::<f64>() / total;
    let x = cols.iter().enumerate().map(|(j, c)| j as f64 * c).sum::<f64>() / total;
    Point::new(x, y)
}

/// Zeroes entries below `0.01 · max`.
pub fn relative_threshold(map: &ProbabilityMap) -> Result<ProbabilityMap> {
    let max = map.max();
    if !(max > 0.0) {
        return Err(Error::InvalidArgument(
            "relative threshold of an all-zero map".into(),
        ));
    }
    let thr = max * RELATIVE_THRESHOLD;
    let data = map
        .data()
        .iter()
        .map(|&v| if v < thr { 0.0 } else { v })
        .collect();
    Ok(ProbabilityMap::from_parts(map.height(), map.width(), data, false))
}

/// `n` i.i.d. pixel draws with probability proportional to the map.
pub fn categorical_sample(map: &ProbabilityMap, n: usize, rng: &mut impl Rng) -> Result<Vec<Point>> {
    let mut cdf = Vec::with_capacity(map.data().len());
    let mut acc = 0.0;
    for &v in map.data() {
        acc += v;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::InvalidArgument(
            "categorical sampling from a zero-mass map".into(),
        ));
    }
    let w = map.width();
    Ok((0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let mut i = cdf.partition_point(|&c| c <= u);
            // never land on a zero-mass cell at the right edge
            if i >= cdf.len() || map.data()[i] == 0.0 {
                i = map.data().iter().rposition(|&v| v > 0.0).unwrap();
            }
            Point::new((i % w) as f64, (i / w) as f64)
        })
        .collect())
}

/// Seeded convenience wrapper around [`categorical_sample`].
pub fn categorical_sample_seeded(map: &ProbabilityMap, n: usize, seed: u64) -> Result<Vec<Point>> {
    categorical_sample(map, n, &mut rng_from_seed(seed))
}

/// How many hypotheses to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleBudget {
    pub k_e: usize,
    pub k_a: usize,
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for SampleBudget {
    fn default() -> Self {
        SampleBudget {
            k_e: 20,
            k_a: 1,
            n_mc: DEFAULT_MC_DRAWS,
            seed: 0,
        }
    }
}

impl SampleBudget {
    pub fn validate(&self) -> Result<()> {
        if self.k_e == 0 || self.k_a == 0 {
            return Err(Error::InvalidArgument(format!(
                "K_e and K_a must be at least 1 (got {}, {})",
                self.k_e, self.k_a
            )));
        }
        if self.n_mc < self.k_e {
            return Err(Error::InvalidArgument(format!(
                "n_mc = {} is smaller than K_e = {}",
                self.n_mc, self.k_e
            )));
        }
        Ok(())
    }
}

/// Test-time sampling trick. Returns `K_e` points: the softargmax point of
/// the thresholded map first, then `K_e − 1` K-means centers of `n_mc`
/// draws from it.
pub fn ttst(map: &ProbabilityMap, budget: &SampleBudget) -> Result<Vec<Point>> {
    budget.validate()?;
    let thresholded = relative_threshold(map)?;
    let mut out = vec![thresholded.softargmax_point()];
    if budget.k_e > 1 {
        let mut rng = rng_from_seed(budget.seed);
        let draws = categorical_sample(&thresholded, budget.n_mc, &mut rng)?;
        out.extend(kmeans(&draws, budget.k_e - 1, &mut rng).centers);
    }
    Ok(out)
}

/// Plain categorical sampling of `k` goals (the sampling trick switched off).
pub fn categorical_goals(map: &ProbabilityMap, k: usize, seed: u64) -> Result<Vec<Point>> {
    categorical_sample_seeded(map, k, seed)
}

/// Per-step position estimates from `n_f` probability maps. Steps listed in
/// `fixed` (future index, point) are overwritten with the given point.
pub fn trajectory_from_maps(maps: &[ProbabilityMap], fixed: &[(usize, Point)]) -> Vec<Point> {
    let mut out: Vec<Point> = maps.iter().map(|m| m.softargmax_point()).collect();
    for &(i, p) in fixed {
        if i < out.len() {
            out[i] = p;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_softargmax(x: &[f64], h: usize, w: usize) -> (f64, f64) {
        let mut total = 0.0;
        for v in x {
            total += v.exp();
        }
        let mut yi = 0.0;
        for i in 0..h {
            let mut row = 0.0;
            for j in 0..w {
                row += x[i * w + j].exp();
            }
            yi += i as f64 * row / total;
        }
        let mut xj = 0.0;
        for j in 0..w {
            let mut col = 0.0;
            for i in 0..h {
                col += x[i * w + j].exp();
            }
            xj += j as f64 * col / total;
        }
        (yi, xj)
    }

    #[test]
    fn softargmax_cases() {
        let p = softargmax(&[0.3; 49], 7, 7);
        assert_eq!(p, Point::new(3.0, 3.0));

        let mut v = vec![0.0; 81];
        v[2 * 9 + 6] = 50.0;
        let p = softargmax(&v, 9, 9);
        assert!((p.y - 2.0).abs() < 1e-6 && (p.x - 6.0).abs() < 1e-6);

        let mut rng = rng_from_seed(3);
        let x: Vec<f64> = (0..25).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let (yi, xj) = direct_softargmax(&x, 5, 5);
        let p = softargmax(&x, 5, 5);
        assert!((p.y - yi).abs() < 1e-10 && (p.x - xj).abs() < 1e-10);
    }

    #[test]
    fn threshold_cases() {
        let m = ProbabilityMap::new(1, 3, vec![0.5, 0.004, 0.006]).unwrap();
        let t = relative_threshold(&m).unwrap();
        assert_eq!(t.data(), &[0.5, 0.0, 0.006]);

        let u = ProbabilityMap::new(2, 2, vec![0.2; 4]).unwrap();
        assert_eq!(relative_threshold(&u).unwrap().data(), u.data());

        let two = ProbabilityMap::new(1, 2, vec![1.0, 0.005]).unwrap();
        assert_eq!(relative_threshold(&two).unwrap().data(), &[1.0, 0.0]);

        assert!(relative_threshold(&ProbabilityMap::new(1, 2, vec![0.0; 2]).unwrap()).is_err());
    }

    #[test]
    fn categorical_cases() {
        let mut d = vec![0.0; 25];
        d[13] = 0.7;
        let m = ProbabilityMap::new(5, 5, d).unwrap();
        let s = categorical_sample_seeded(&m, 100, 4).unwrap();
        assert!(s.iter().all(|p| *p == Point::new(3.0, 2.0)));

        let two = ProbabilityMap::new(1, 2, vec![0.5, 0.5]).unwrap();
        let s = categorical_sample_seeded(&two, 100_000, 11).unwrap();
        let left = s.iter().filter(|p| p.x == 0.0).count() as f64 / 1e5;
        assert!((left - 0.5).abs() < 0.01, "{left}");

        assert_eq!(
            categorical_sample_seeded(&two, 50, 8).unwrap(),
            categorical_sample_seeded(&two, 50, 8).unwrap()
        );
        let zero = ProbabilityMap::new(1, 2, vec![0.0; 2]).unwrap();
        assert!(categorical_sample_seeded(&zero, 1, 0).is_err());
    }

    #[test]
    fn ttst_counts_and_modes() {
        let mut d = vec![0.0; 32 * 32];
        d[5 * 32 + 6] = 1.0;
        d[25 * 32 + 27] = 0.8;
        let m = ProbabilityMap::new(32, 32, d).unwrap();
        for k in [1, 5, 20] {
            let b = SampleBudget { k_e: k, seed: 2, ..SampleBudget::default() };
            assert_eq!(ttst(&m, &b).unwrap().len(), k);
        }
        let one = ttst(&m, &SampleBudget { k_e: 1, ..SampleBudget::default() }).unwrap();
        assert_eq!(one[0], relative_threshold(&m).unwrap().softargmax_point());

        let three = ttst(&m, &SampleBudget { k_e: 3, seed: 5, ..SampleBudget::default() }).unwrap();
        for target in [Point::new(6.0, 5.0), Point::new(27.0, 25.0)] {
            assert!(three.iter().any(|p| p.dist(target) <= 1.0), "{three:?}");
        }
        assert!(ttst(&m, &SampleBudget { k_e: 0, ..SampleBudget::default() }).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(7, &[3, 4]), derive_seed(7, &[3, 4]));
    }
}
