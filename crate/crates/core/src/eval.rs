//! Displacement metrics and min-of-K evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{upscale_coords, Point};
use crate::scene::{CoordinateSpace, Scene};

/// Mean Euclidean distance over timesteps.
pub fn ade(pred: &[Point], gt: &[Point]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("ade", &[pred.len()], &[gt.len()]));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("ADE of an empty trajectory".into()));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| p.dist(*g)).sum::<f64>() / pred.len() as f64)
}

/// Distance between the final points.
pub fn fde(pred: &[Point], gt: &[Point]) -> Result<f64> {
    match (pred.last(), gt.last()) {
        (Some(p), Some(g)) if pred.len() == gt.len() => Ok(p.dist(*g)),
        (Some(_), Some(_)) => Err(Error::shape("fde", &[pred.len()], &[gt.len()])),
        _ => Err(Error::InvalidArgument("FDE of an empty trajectory".into())),
    }
}

/// Extrapolates the last observed displacement for `n_f` steps.
pub fn constant_velocity_baseline(past: &[Point], n_f: usize) -> Result<Vec<Point>> {
    if past.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "constant-velocity baseline needs at least 2 past points, got {}",
            past.len()
        )));
    }
    let last = past[past.len() - 1];
    let v = last.sub(past[past.len() - 2]);
    Ok((1..=n_f).map(|k| last.add(v.scale(k as f64))).collect())
}

/// Units reported alongside metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Pixels,
    Meters,
}

/// Maps model-resolution pixel points to the space metrics are reported in:
/// original-resolution pixels, or meters when the scene is world-referenced.
pub fn to_metric_space(points: &[Point], scene: &Scene) -> Result<(Vec<Point>, Units)> {
    let px = upscale_coords(points, scene.downsample_factor)?;
    match (scene.coordinates, &scene.homography) {
        (CoordinateSpace::World, Some(h)) => Ok((h.pixel_to_world(&px), Units::Meters)),
        (CoordinateSpace::World, None) => Err(Error::Config(format!(
            "scene {} uses world coordinates but has no homography",
            scene.id
        ))),
        (CoordinateSpace::Pixel, _) => Ok((px, Units::Pixels)),
    }
}

/// One agent's hypotheses scored against its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene: String,
    pub agent: String,
    pub ground_truth: Vec<Point>,
    /// `K_e × K_a` hypotheses, goal-major.
    pub hypotheses: Vec<Vec<Point>>,
    pub ade: Vec<f64>,
    pub fde: Vec<f64>,
    pub min_ade: f64,
    pub min_fde: f64,
    /// Winning hypothesis indices (lowest index on ties).
    pub best_ade: usize,
    pub best_fde: usize,
    pub units: Units,
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

impl EvalRecord {
    pub fn new(
        scene: impl Into<String>,
        agent: impl Into<String>,
        ground_truth: Vec<Point>,
        hypotheses: Vec<Vec<Point>>,
        units: Units,
    ) -> Result<Self> {
        let agent = agent.into();
        if hypotheses.is_empty() {
            return Err(Error::Data(format!("agent {agent} has no hypotheses")));
        }
        let ades = hypotheses
            .iter()
            .map(|h| ade(h, &ground_truth))
            .collect::<Result<Vec<_>>>()?;
        let fdes = hypotheses
            .iter()
            .map(|h| fde(h, &ground_truth))
            .collect::<Result<Vec<_>>>()?;
        let (best_ade, best_fde) = (argmin(&ades), argmin(&fdes));
        Ok(EvalRecord {
            scene: scene.into(),
            agent,
            ground_truth,
            hypotheses,
            min_ade: ades[best_ade],
            min_fde: fdes[best_fde],
            ade: ades,
            fde: fdes,
            best_ade,
            best_fde,
            units,
        })
    }
}

/// Dataset-level report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub dataset: String,
    pub n_agents: usize,
    #[serde(rename = "K_e")]
    pub k_e: usize,
    #[serde(rename = "K_a")]
    pub k_a: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub units: Units,
}

/// Per-agent CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRow {
    pub scene: String,
    pub agent: String,
    pub min_ade: f64,
    pub min_fde: f64,
    pub best_ade: usize,
    pub best_fde: usize,
}

/// Means of per-agent minima over all records.
pub fn evaluate_min_of_k(
    dataset: &str,
    records: &[EvalRecord],
    k_e: usize,
    k_a: usize,
) -> Result<(EvalSummary, Vec<AgentRow>)> {
    let Some(first) = records.first() else {
        return Err(Error::Data("nothing to evaluate".into()));
    };
    if let Some(r) = records.iter().find(|r| r.units != first.units) {
        return Err(Error::Data(format!(
            "agent {} is scored in {:?}, others in {:?}",
            r.agent, r.units, first.units
        )));
    }
    let n = records.len() as f64;
    let rows = records
        .iter()
        .map(|r| AgentRow {
            scene: r.scene.clone(),
            agent: r.agent.clone(),
            min_ade: r.min_ade,
            min_fde: r.min_fde,
            best_ade: r.best_ade,
            best_fde: r.best_fde,
        })
        .collect();
    Ok((
        EvalSummary {
            dataset: dataset.to_string(),
            n_agents: records.len(),
            k_e,
            k_a,
            min_ade: records.iter().map(|r| r.min_ade).sum::<f64>() / n,
            min_fde: records.iter().map(|r| r.min_fde).sum::<f64>() / n,
            units: first.units,
        },
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, dx: f64) -> Vec<Point> {
        (0..n).map(|i| Point::new(i as f64 * dx, 2.0)).collect()
    }

    #[test]
    fn analytic_cases() {
        let g = line(12, 1.0);
        assert_eq!(ade(&g, &g).unwrap(), 0.0);
        let shifted: Vec<Point> = g.iter().map(|p| p.add(Point::new(1.0, 0.0))).collect();
        assert_eq!(ade(&shifted, &g).unwrap(), 1.0);
        let mut last = g.clone();
        last[11] = last[11].add(Point::new(3.0, 4.0));
        assert_eq!(fde(&last, &g).unwrap(), 5.0);
        assert!(ade(&g[..3], &g).is_err());
        assert!(fde(&[], &[]).is_err());
    }

    #[test]
    fn min_over_hand_built_errors() {
        let g = line(4, 1.0);
        let hyp: Vec<Vec<Point>> = [2.0, 5.0, 1.0]
            .iter()
            .map(|&e| g.iter().map(|p| p.add(Point::new(0.0, e))).collect())
            .collect();
        let r = EvalRecord::new("s", "a", g, hyp, Units::Pixels).unwrap();
        assert_eq!(r.min_ade, 1.0);
        assert_eq!(r.best_ade, 2);
        let (s, rows) = evaluate_min_of_k("d", &[r], 3, 1).unwrap();
        assert_eq!(s.min_ade, 1.0);
        assert_eq!(rows.len(), 1);
        assert!(evaluate_min_of_k("d", &[], 1, 1).is_err());
    }

    #[test]
    fn baseline_cases() {
        let past = line(5, 1.5);
        let fut = constant_velocity_baseline(&past, 10).unwrap();
        let truth: Vec<Point> = (5..15).map(|i| Point::new(i as f64 * 1.5, 2.0)).collect();
        assert!(ade(&fut, &truth).unwrap() < 1e-12);
        let still = vec![Point::new(3.0, 3.0); 4];
        assert!(constant_velocity_baseline(&still, 3).unwrap().iter().all(|p| *p == Point::new(3.0, 3.0)));
        assert!(constant_velocity_baseline(&still[..1], 3).is_err());
    }
}
