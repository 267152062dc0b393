//! Lloyd's K-means over 2-D points with k-means++ seeding.

use rand::Rng;

use crate::geometry::Point;

pub const MAX_ITERATIONS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Point>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned center, recorded after every
    /// assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn nearest(p: Point, centers: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = p.dist2(*c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Draws an index with probability proportional to `weights`.
fn weighted_index(weights: &[f64], rng: &mut impl Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Some(i);
        }
    }
    weights.iter().rposition(|&w| w > 0.0)
}

fn plus_plus(points: &[Point], k: usize, rng: &mut impl Rng) -> Vec<Point> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist2(centers[0])).collect();
    while centers.len() < k {
        let next = match weighted_index(&d2, rng) {
            Some(i) => points[i],
            // every point coincides with a center already
            None => points[rng.random_range(0..points.len())],
        };
        centers.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.dist2(next));
        }
    }
    centers
}

/// Clusters `points` into `k` groups. Stops when no assignment changes or
/// after [`MAX_ITERATIONS`] rounds. A cluster left empty is re-seeded at the
/// point farthest from its current center.
pub fn kmeans(points: &[Point], k: usize, rng: &mut impl Rng) -> KMeans {
    if k == 0 || points.is_empty() {
        return KMeans {
            centers: Vec::new(),
            assignment: vec![0; points.len()],
            objective: Vec::new(),
            iterations: 0,
        };
    }
    let mut centers = plus_plus(points, k, rng);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut objective = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        let mut total = 0.0;
        let mut dist = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(*p, &centers);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            dist[i] = d;
            total += d;
        }
        objective.push(total);
        if !changed {
            break;
        }

        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (p, &a) in points.iter().zip(&assignment) {
            sums[a].0 += p.x;
            sums[a].1 += p.y;
            sums[a].2 += 1;
        }
        for (c, &(sx, sy, n)) in sums.iter().enumerate() {
            if n > 0 {
                centers[c] = Point::new(sx / n as f64, sy / n as f64);
            } else {
                let far = (0..points.len())
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .unwrap();
                centers[c] = points[far];
                dist[far] = 0.0;
            }
        }
    }
    KMeans {
        centers,
        assignment,
        objective,
        iterations,
    }
}
