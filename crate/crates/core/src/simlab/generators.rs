//! Seeded synthetic data: Gaussian clusters and the two-circles and
//! two-half-moons shapes.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::data::DataMatrix;
use crate::dof::replicate_rng;
use crate::error::{Error, Result};
use crate::partition::Partition;

/// A generated data set with its noise-free signal and true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub x: DataMatrix,
    /// Noise-free rows, laid out like `x`.
    pub signal: Vec<f64>,
    pub truth: Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianClusterSpec {
    pub k: usize,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    /// `k x p` row-major cluster means.
    pub means: Vec<f64>,
    pub seed: u64,
    /// Replicate index; each stream is an independent draw under `seed`.
    pub stream: u64,
}

impl GaussianClusterSpec {
    /// Default means: `+1` and `-1` for two clusters, `-3, 0, 3` for three.
    pub fn new(k: usize, n: usize, p: usize, sigma: f64, seed: u64) -> Result<Self> {
        let levels: &[f64] = match k {
            2 => &[1.0, -1.0],
            3 => &[-3.0, 0.0, 3.0],
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "default means exist for 2 or 3 clusters, got {k}"
                )))
            }
        };
        let means = levels.iter().flat_map(|&m| std::iter::repeat(m).take(p)).collect();
        let spec = Self {
            k,
            n,
            p,
            sigma,
            means,
            seed,
            stream: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_stream(&self, stream: u64) -> Self {
        Self { stream, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n < 2 || self.p == 0 {
            return Err(Error::InvalidArgument(format!(
                "need k >= 1, n >= 2, p >= 1, got k={}, n={}, p={}",
                self.k, self.n, self.p
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.means.len() != self.k * self.p {
            return Err(Error::DimensionMismatch {
                context: "gaussian cluster means",
                expected: self.k * self.p,
                actual: self.means.len(),
            });
        }
        Ok(())
    }
}

/// Labels drawn uniformly over the clusters, then each row drawn around its mean.
pub fn gen_gaussian(spec: &GaussianClusterSpec) -> Result<SimData> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut rng = replicate_rng(spec.seed, spec.stream);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.k)).collect();
    let mut signal = Vec::with_capacity(n * p);
    let mut values = Vec::with_capacity(n * p);
    for &l in &labels {
        for &m in &spec.means[l * p..(l + 1) * p] {
            let z: f64 = StandardNormal.sample(&mut rng);
            signal.push(m);
            values.push(m + spec.sigma * z);
        }
    }
    Ok(SimData {
        x: DataMatrix::new(n, p, values)?,
        signal,
        truth: Partition::from_labels(&labels),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Concentric circles of radius 2 and 10 at the origin.
    TwoCircles,
    /// Upper half of a radius-30 circle at `(0, 0)` and lower half of one at `(30, 3)`.
    TwoHalfMoons,
}

impl Shape {
    pub fn default_noise_sd(self) -> f64 {
        match self {
            Shape::TwoCircles => 0.1,
            Shape::TwoHalfMoons => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::TwoCircles => "two_circles",
            Shape::TwoHalfMoons => "two_half_moons",
        }
    }

    /// Center, radius and angle range of cluster `c`.
    fn arc(self, c: usize) -> ([f64; 2], f64, f64, f64) {
        use std::f64::consts::PI;
        match (self, c) {
            (Shape::TwoCircles, 0) => ([0.0, 0.0], 2.0, 0.0, 2.0 * PI),
            (Shape::TwoCircles, _) => ([0.0, 0.0], 10.0, 0.0, 2.0 * PI),
            (Shape::TwoHalfMoons, 0) => ([0.0, 0.0], 30.0, 0.0, PI),
            (Shape::TwoHalfMoons, _) => ([30.0, 3.0], 30.0, PI, 2.0 * PI),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeClusterSpec {
    pub shape: Shape,
    pub points_per_cluster: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub stream: u64,
}

impl ShapeClusterSpec {
    pub fn new(shape: Shape, seed: u64) -> Self {
        Self {
            shape,
            points_per_cluster: 50,
            noise_sd: shape.default_noise_sd(),
            seed,
            stream: 0,
        }
    }

    pub fn with_stream(&self, stream: u64) -> Self {
        Self { stream, ..self.clone() }
    }

    pub fn n(&self) -> usize {
        2 * self.points_per_cluster
    }
}

/// Uniform angles on each arc with iid Gaussian noise per coordinate.
/// The first `points_per_cluster` rows belong to the first cluster.
pub fn gen_shape(spec: &ShapeClusterSpec) -> Result<SimData> {
    if spec.points_per_cluster == 0 {
        return Err(Error::InvalidArgument("points_per_cluster must be >= 1".into()));
    }
    if !(spec.noise_sd >= 0.0) || !spec.noise_sd.is_finite() {
        return Err(Error::InvalidArgument(format!("noise_sd must be finite and >= 0, got {}", spec.noise_sd)));
    }
    let n = spec.n();
    let mut rng = replicate_rng(spec.seed, spec.stream);
    let mut signal = Vec::with_capacity(2 * n);
    let mut values = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..2 {
        let (center, radius, lo, hi) = spec.shape.arc(c);
        for _ in 0..spec.points_per_cluster {
            let angle = rng.random_range(lo..hi);
            let point = [center[0] + radius * angle.cos(), center[1] + radius * angle.sin()];
            for v in point {
                let z: f64 = StandardNormal.sample(&mut rng);
                signal.push(v);
                values.push(v + spec.noise_sd * z);
            }
            labels.push(c);
        }
    }
    Ok(SimData {
        x: DataMatrix::new(n, 2, values)?,
        signal,
        truth: Partition::from_labels(&labels),
    })
}
