//! Fusion penalties, their dual norms, and the proximal maps and projections
//! they induce on blocked vectors (one block of length `p` per pair).

use serde::{Deserialize, Serialize};

/// The `q`-norm used on centroid-row differences. Only `q = 1` and `q = 2`
/// are supported; the dual exponent `s` is `inf` and `2` respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionNorm {
    L1,
    L2,
}

/// Distance used between observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Euclidean,
    Chebyshev,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diff = a.iter().zip(b).map(|(x, y)| x - y);
        match self {
            Metric::Euclidean => diff.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Chebyshev => diff.fold(0.0_f64, |m, d| m.max(d.abs())),
        }
    }
}

impl FusionNorm {
    pub fn from_q(q: u32) -> Option<Self> {
        match q {
            1 => Some(FusionNorm::L1),
            2 => Some(FusionNorm::L2),
            _ => None,
        }
    }

    pub fn q(self) -> u32 {
        match self {
            FusionNorm::L1 => 1,
            FusionNorm::L2 => 2,
        }
    }

    /// Metric induced by the dual exponent `s` (`1/s + 1/q = 1`).
    pub fn dual_metric(self) -> Metric {
        match self {
            FusionNorm::L1 => Metric::Chebyshev,
            FusionNorm::L2 => Metric::Euclidean,
        }
    }

    /// `||b||_q` of a single block.
    pub fn block_norm(self, b: &[f64]) -> f64 {
        match self {
            FusionNorm::L1 => b.iter().map(|v| v.abs()).sum(),
            FusionNorm::L2 => l2(b),
        }
    }

    /// `||b||_s` of a single block.
    pub fn dual_block_norm(self, b: &[f64]) -> f64 {
        match self {
            FusionNorm::L1 => b.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            FusionNorm::L2 => l2(b),
        }
    }

    /// `P_q(b)`: sum of block `q`-norms.
    pub fn penalty(self, b: &[f64], p: usize) -> f64 {
        b.chunks_exact(p).map(|blk| self.block_norm(blk)).sum()
    }

    /// `P*_q(b)`: max of block `s`-norms.
    pub fn dual_norm(self, b: &[f64], p: usize) -> f64 {
        b.chunks_exact(p)
            .map(|blk| self.dual_block_norm(blk))
            .fold(0.0, f64::max)
    }

    /// In-place proximal map of `t * P_q`: elementwise soft-thresholding for
    /// `q = 1`, blockwise group soft-thresholding for `q = 2`. Shrunk entries
    /// are set to exactly zero.
    pub fn prox(self, b: &mut [f64], p: usize, t: f64) {
        match self {
            FusionNorm::L1 => b.iter_mut().for_each(|v| *v = soft_threshold(*v, t)),
            FusionNorm::L2 => b
                .chunks_exact_mut(p)
                .for_each(|blk| group_soft_threshold(blk, t)),
        }
    }

    /// In-place projection onto `{P*_q(b) <= radius}`: a box for `q = 1`,
    /// a product of Euclidean balls for `q = 2`.
    pub fn project_dual_ball(self, b: &mut [f64], p: usize, radius: f64) {
        match self {
            FusionNorm::L1 => b.iter_mut().for_each(|v| *v = v.clamp(-radius, radius)),
            FusionNorm::L2 => b.chunks_exact_mut(p).for_each(|blk| {
                let norm = l2(blk);
                if norm > radius {
                    let scale = radius / norm;
                    blk.iter_mut().for_each(|v| *v *= scale);
                }
            }),
        }
    }

    /// In-place projection onto `{P_q(b) <= radius}`: the l1 ball for `q = 1`,
    /// the ball of the sum of block l2 norms for `q = 2`.
    pub fn project_primal_ball(self, b: &mut [f64], p: usize, radius: f64) {
        match self {
            FusionNorm::L1 => project_l1_ball(b, radius),
            FusionNorm::L2 => project_group_l1_ball(b, p, radius),
        }
    }
}

pub(crate) fn l2(b: &[f64]) -> f64 {
    b.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `b <- max(0, 1 - t/||b||_2) b`.
pub fn group_soft_threshold(b: &mut [f64], t: f64) {
    let norm = l2(b);
    if norm <= t {
        b.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let scale = 1.0 - t / norm;
        b.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Threshold `theta >= 0` such that `sum max(a_i - theta, 0) = radius` for
/// nonnegative `a` with `sum a > radius` (sort-based simplex projection).
fn simplex_threshold(a: &[f64], radius: f64) -> f64 {
    let mut sorted = a.to_vec();
    sorted.sort_unstable_by(|x, y| y.total_cmp(x));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - radius) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// Euclidean projection onto `{||b||_1 <= radius}`.
pub fn project_l1_ball(b: &mut [f64], radius: f64) {
    let total: f64 = b.iter().map(|v| v.abs()).sum();
    if total <= radius {
        return;
    }
    if radius <= 0.0 {
        b.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let abs: Vec<f64> = b.iter().map(|v| v.abs()).collect();
    let theta = simplex_threshold(&abs, radius);
    b.iter_mut().for_each(|v| *v = soft_threshold(*v, theta));
}

/// Euclidean projection onto `{sum_blocks ||b_C||_2 <= radius}`: project the
/// vector of block norms onto the l1 ball and rescale each block.
pub fn project_group_l1_ball(b: &mut [f64], p: usize, radius: f64) {
    let norms: Vec<f64> = b.chunks_exact(p).map(l2).collect();
    let total: f64 = norms.iter().sum();
    if total <= radius {
        return;
    }
    if radius <= 0.0 {
        b.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let theta = simplex_threshold(&norms, radius);
    for (blk, norm) in b.chunks_exact_mut(p).zip(norms) {
        group_soft_threshold_with(blk, norm, theta);
    }
}

fn group_soft_threshold_with(b: &mut [f64], norm: f64, t: f64) {
    if norm <= t {
        b.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let scale = 1.0 - t / norm;
        b.iter_mut().for_each(|v| *v *= scale);
    }
}
