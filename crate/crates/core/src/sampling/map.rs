use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::ops::BCE_EPS;
use crate::tensor::{Scalar, Tensor};

/// Non-negative `H × W` grid read as an unnormalized spatial distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("probability map", &[height, width], &[data.len()]));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "probability map entries must be finite and non-negative, found {v}"
            )));
        }
        Ok(ProbabilityMap {
            height,
            width,
            data,
            normalized: false,
        })
    }

    /// Channel `c` of a probability tensor.
    pub fn from_channel<T: Scalar>(t: &Tensor<T>, c: usize) -> Result<Self> {
        let (h, w) = t.spatial();
        Self::new(h, w, t.channel(c).iter().map(|v| v.as_f64()).collect())
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Flat index of the first maximum.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn normalize(&self) -> Result<ProbabilityMap> {
        let s = self.sum();
        if !(s > 0.0) {
            return Err(Error::InvalidArgument("cannot normalize a zero-mass map".into()));
        }
        Ok(ProbabilityMap {
            data: self.data.iter().map(|v| v / s).collect(),
            normalized: true,
            ..*self
        })
    }

    /// Shannon entropy (nats) of the normalized map.
    pub fn entropy(&self) -> Result<f64> {
        let n = self.normalize()?;
        Ok(-n.data.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
    }

    /// Logits `ln(p / (1 − p))` with `p` clamped to `[ε, 1 − ε]`.
    pub fn logits(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|&p| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                (p / (1.0 - p)).ln()
            })
            .collect()
    }

    /// Softargmax of the map's logits: the position estimate used for every
    /// "softargmax point" in the sampling pipeline.
    pub fn softargmax_point(&self) -> Point {
        super::softargmax(&self.logits(), self.height, self.width)
    }

    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<f64>, normalized: bool) -> Self {
        ProbabilityMap {
            height,
            width,
            data,
            normalized,
        }
    }
}
