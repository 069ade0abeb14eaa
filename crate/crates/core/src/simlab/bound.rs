//! Empirical check of the prediction-error bound at the threshold weight.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::diffop::DifferenceOperator;
use crate::dof::replicate_rng;
use crate::error::{Error, Result};
use crate::norms::FusionNorm;
use crate::solver::{solve_single, SolveSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundEntry {
    pub rep: usize,
    /// `||u_hat - u||^2 / (2 n p)`.
    pub lhs: f64,
    pub rhs: f64,
    pub lambda_prime: f64,
    pub holds: bool,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub norm: FusionNorm,
    /// Smallest scaled weight the bound covers.
    pub threshold: f64,
    pub entries: Vec<BoundEntry>,
    pub hold_fraction: f64,
}

impl BoundReport {
    pub fn holds(&self) -> usize {
        self.entries.iter().filter(|e| e.holds).count()
    }
}

/// `4 sigma sqrt(log(p C(n,2)) / (n^3 p^2))` for `l1`, with `n^3 p` for `l2`.
pub fn bound_threshold(n: usize, p: usize, sigma: f64, norm: FusionNorm) -> f64 {
    let (nf, pf) = (n as f64, p as f64);
    let pairs = nf * (nf - 1.0) / 2.0;
    let denom = match norm {
        FusionNorm::L1 => nf.powi(3) * pf * pf,
        FusionNorm::L2 => nf.powi(3) * pf,
    };
    4.0 * sigma * ((pf * pairs).ln() / denom).sqrt()
}

/// `(3 lambda' / 2) P(D u) + sigma^2 (1/n + sqrt(log(np) / (n^2 p)))`.
pub fn bound_rhs(u_true: &[f64], d: &DifferenceOperator, sigma: f64, lambda_prime: f64, norm: FusionNorm) -> Result<f64> {
    let (nf, pf) = (d.n() as f64, d.p() as f64);
    let oracle = norm.penalty(&d.apply(u_true)?, d.p());
    let noise = sigma * sigma * (1.0 / nf + ((nf * pf).ln() / (nf * nf * pf)).sqrt());
    Ok(1.5 * lambda_prime * oracle + noise)
}

/// Draws `x = u + sigma z` per replicate and solves at
/// `lambda = n p * multiplier * threshold`. Replicate `r` uses stream
/// `r + 1` of the seed, leaving stream 0 for drawing the truth.
#[allow(clippy::too_many_arguments)]
pub fn check_prediction_bound(
    u_true: &[f64],
    d: &DifferenceOperator,
    sigma: f64,
    norm: FusionNorm,
    reps: usize,
    lambda_prime_multiplier: f64,
    seed: u64,
    settings: &SolveSettings,
) -> Result<BoundReport> {
    if !(lambda_prime_multiplier >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "multiplier must be >= 1, got {lambda_prime_multiplier}"
        )));
    }
    if !(sigma >= 0.0) || reps == 0 {
        return Err(Error::InvalidArgument(format!(
            "need sigma >= 0 and reps >= 1, got sigma={sigma}, reps={reps}"
        )));
    }
    if u_true.len() != d.cols() {
        return Err(Error::DimensionMismatch {
            context: "check_prediction_bound u_true",
            expected: d.cols(),
            actual: u_true.len(),
        });
    }
    let np = d.cols() as f64;
    let threshold = bound_threshold(d.n(), d.p(), sigma, norm);
    let lambda_prime = lambda_prime_multiplier * threshold;
    let rhs = bound_rhs(u_true, d, sigma, lambda_prime, norm)?;
    let entries: Result<Vec<BoundEntry>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep as u64 + 1);
            let x: Vec<f64> = u_true
                .iter()
                .map(|u| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    u + sigma * z
                })
                .collect();
            let pt = solve_single(&x, d, lambda_prime * np, norm, settings, None)?;
            let lhs = pt.u_hat.iter().zip(u_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * np);
            Ok(BoundEntry {
                rep,
                lhs,
                rhs,
                lambda_prime,
                holds: lhs <= rhs,
                converged: pt.converged,
            })
        })
        .collect();
    let entries = entries?;
    let hold_fraction = entries.iter().filter(|e| e.holds).count() as f64 / reps as f64;
    Ok(BoundReport {
        norm,
        threshold,
        entries,
        hold_fraction,
    })
}
