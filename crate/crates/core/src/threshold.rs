//! Direct estimation of the fused differences by thresholding `D x`, and
//! its equivalence with single-linkage clustering.
//!
//! A block is zeroed exactly when the dual-norm distance between the two
//! observations is at most `lambda`, so the connected components of the
//! zero blocks are the single-linkage clusters cut at height `lambda`.

use serde::Serialize;

use crate::baselines::{hierarchical, Linkage};
use crate::data::DataMatrix;
use crate::diffop::DifferenceOperator;
use crate::error::{Error, Result};
use crate::norms::FusionNorm;
use crate::partition::{Partition, UnionFind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub gamma_hat: Vec<f64>,
    /// Pairs whose block of `gamma_hat` is zero.
    pub edges: Vec<(usize, usize)>,
    pub partition: Partition,
}

pub fn threshold_solve(x: &[f64], d: &DifferenceOperator, lambda: f64, norm: FusionNorm) -> Result<ThresholdResult> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let p = d.p();
    let mut gamma = d.apply(x)?;
    norm.prox(&mut gamma, p, lambda);
    let mut uf = UnionFind::new(d.n());
    let mut edges = Vec::new();
    for (blk, &(i, k)) in gamma.chunks_exact(p).zip(d.pairs()) {
        if blk.iter().all(|v| *v == 0.0) {
            edges.push((i, k));
            uf.union(i, k);
        }
    }
    Ok(ThresholdResult {
        gamma_hat: gamma,
        edges,
        partition: uf.partition(d.n()),
    })
}

/// With `nu = D x - gamma_hat`, the larger of the relation error and the
/// dual-ball excess `max(0, P*(nu) - lambda)`.
pub fn dual_relation_check(
    x: &[f64],
    d: &DifferenceOperator,
    lambda: f64,
    norm: FusionNorm,
    result: &ThresholdResult,
) -> Result<f64> {
    let dx = d.apply(x)?;
    if result.gamma_hat.len() != dx.len() {
        return Err(Error::DimensionMismatch {
            context: "dual_relation_check gamma_hat",
            expected: dx.len(),
            actual: result.gamma_hat.len(),
        });
    }
    let nu: Vec<f64> = dx.iter().zip(&result.gamma_hat).map(|(a, g)| a - g).collect();
    let relation = dx
        .iter()
        .zip(&nu)
        .zip(&result.gamma_hat)
        .fold(0.0_f64, |m, ((a, v), g)| m.max((a - v - g).abs()));
    let excess = (norm.dual_norm(&nu, d.p()) - lambda).max(0.0);
    Ok(relation.max(excess))
}

/// Single linkage on dual-norm distances, cut at `lambda`.
pub fn slc_equivalence_partition(x: &DataMatrix, lambda: f64, norm: FusionNorm) -> Result<Partition> {
    if x.n() == 1 {
        return Ok(Partition::singletons(1));
    }
    Ok(hierarchical(x, Linkage::Single, norm.dual_metric())?.cut(lambda))
}
