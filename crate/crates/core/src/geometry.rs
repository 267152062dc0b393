//! Points and planar homographies.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-D position. In pixel space `x` is the column and `y` the row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point { x: v[0], y: v[1] }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist2(self, other: Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Nearest pixel as `(row, col)`.
    pub fn pixel(self) -> (i64, i64) {
        (self.y.round() as i64, self.x.round() as i64)
    }
}

/// Minimum |det| accepted for a homography.
pub const MIN_HOMOGRAPHY_DET: f64 = 1e-12;

/// Planar homography mapping world coordinates (meters) to pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    world_to_pixel: Matrix3<f64>,
    pixel_to_world: Matrix3<f64>,
}

impl Homography {
    /// Builds from a row-major 3×3 matrix.
    pub fn from_row_major(m: &[f64]) -> Result<Self> {
        if m.len() != 9 {
            return Err(Error::InvalidArgument(format!(
                "homography needs 9 entries, got {}",
                m.len()
            )));
        }
        let mat = Matrix3::from_row_slice(m);
        let det = mat.determinant();
        if !det.is_finite() || det.abs() <= MIN_HOMOGRAPHY_DET {
            return Err(Error::InvalidArgument(format!(
                "homography is singular (det = {det:e})"
            )));
        }
        let inv = mat
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("homography is not invertible".into()))?;
        Ok(Homography {
            world_to_pixel: mat,
            pixel_to_world: inv,
        })
    }

    pub fn identity() -> Self {
        Homography {
            world_to_pixel: Matrix3::identity(),
            pixel_to_world: Matrix3::identity(),
        }
    }

    pub fn row_major(&self) -> [f64; 9] {
        let m = &self.world_to_pixel;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    fn apply(m: &Matrix3<f64>, p: Point) -> Point {
        let v = m * Vector3::new(p.x, p.y, 1.0);
        Point::new(v.x / v.z, v.y / v.z)
    }

    pub fn world_to_pixel(&self, points: &[Point]) -> Vec<Point> {
        points
            .iter()
            .map(|&p| Self::apply(&self.world_to_pixel, p))
            .collect()
    }

    pub fn pixel_to_world(&self, points: &[Point]) -> Vec<Point> {
        points
            .iter()
            .map(|&p| Self::apply(&self.pixel_to_world, p))
            .collect()
    }
}

/// Divides coordinates by `factor` (ingest into a downsampled grid).
pub fn rescale_coords(points: &[Point], factor: f64) -> Result<Vec<Point>> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rescale factor must be positive, got {factor}"
        )));
    }
    Ok(points.iter().map(|p| p.scale(1.0 / factor)).collect())
}

/// Inverse of [`rescale_coords`].
pub fn upscale_coords(points: &[Point], factor: f64) -> Result<Vec<Point>> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rescale factor must be positive, got {factor}"
        )));
    }
    Ok(points.iter().map(|p| p.scale(factor)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_scaling() {
        let pts = [Point::new(1.5, -2.0), Point::new(10.0, 3.25)];
        let h = Homography::from_row_major(&[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(h.world_to_pixel(&pts), pts.to_vec());
        let s = Homography::from_row_major(&[2.5, 0., 0., 0., 2.5, 0., 0., 0., 1.]).unwrap();
        let px = s.world_to_pixel(&pts);
        assert_eq!(px[0], Point::new(3.75, -5.0));
        assert_eq!(px[1], Point::new(25.0, 8.125));
    }

    #[test]
    fn round_trip_perspective() {
        let h = Homography::from_row_major(&[
            1.2, 0.1, 5.0, -0.05, 0.9, 3.0, 0.001, 0.0005, 1.0,
        ])
        .unwrap();
        let pts: Vec<Point> = (0..20)
            .map(|i| Point::new(i as f64 * 1.7 - 8.0, 3.0 - i as f64 * 0.45))
            .collect();
        let back = h.pixel_to_world(&h.world_to_pixel(&pts));
        for (a, b) in pts.iter().zip(&back) {
            assert!(a.dist(*b) < 1e-9);
        }
    }

    #[test]
    fn singular_rejected() {
        assert!(Homography::from_row_major(&[1., 2., 3., 2., 4., 6., 0., 0., 1.]).is_err());
        assert!(Homography::from_row_major(&[1., 0., 0.]).is_err());
    }

    #[test]
    fn rescale_round_trip() {
        let pts = [Point::new(13.0, 7.5), Point::new(-2.25, 100.0)];
        let down = rescale_coords(&pts, 4.0).unwrap();
        let up = upscale_coords(&down, 4.0).unwrap();
        for (a, b) in pts.iter().zip(&up) {
            assert!(a.dist(*b) < 1e-12);
        }
        assert_eq!(rescale_coords(&pts, 1.0).unwrap(), pts.to_vec());
        assert!(rescale_coords(&pts, 0.0).is_err());
    }

    #[test]
    fn point_serializes_as_pair() {
        let s = serde_json::to_string(&Point::new(1.0, 2.5)).unwrap();
        assert_eq!(s, "[1.0,2.5]");
    }
}
