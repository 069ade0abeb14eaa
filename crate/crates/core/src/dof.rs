//! Unbiased degrees-of-freedom estimates for the fitted centroids, and the
//! Monte Carlo comparator `(1/sigma^2) sum_j (u_hat_j - u_j)(x_j - u_j)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::diffop::DifferenceOperator;
use crate::error::{Error, Result};
use crate::norms::{l2, FusionNorm};
use crate::solver::{PathPoint, SolveSettings};

pub const DF1_DENSE_LIMIT: usize = 5000;
pub const DF2_DENSE_LIMIT: usize = 4000;
const EIGEN_CUTOFF: f64 = 1e-10;

/// Nonzero pattern of the fused differences of a solved point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActiveSet {
    pub norm: FusionNorm,
    /// One flag per coordinate of `D u` (`q = 1`) or per pair (`q = 2`).
    pub active: Vec<bool>,
}

impl ActiveSet {
    pub fn from_point(point: &PathPoint, d: &DifferenceOperator, norm: FusionNorm) -> Self {
        let active = match norm {
            FusionNorm::L1 => point.gamma_hat.iter().map(|v| *v != 0.0).collect(),
            FusionNorm::L2 => point
                .gamma_hat
                .chunks_exact(d.p())
                .map(|blk| blk.iter().any(|v| *v != 0.0))
                .collect(),
        };
        Self { norm, active }
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }
}

fn guard(what: &'static str, size: usize, limit: usize, hint: &'static str) -> Result<()> {
    if size > limit {
        return Err(Error::TooLarge {
            what,
            size,
            limit,
            hint,
        });
    }
    Ok(())
}

/// `I - (projection onto the row space of the fused rows of D)`, where a
/// fused row is one whose coordinate of `D u_hat` is zero. The Gram of those
/// rows is a graph Laplacian per column; its range is the row space.
fn complement_projection(fused: &[(usize, usize, usize)], np: usize, p: usize) -> DMatrix<f64> {
    let mut gram = DMatrix::<f64>::zeros(np, np);
    for &(i, k, j) in fused {
        let (a, b) = (i * p + j, k * p + j);
        gram[(a, a)] += 1.0;
        gram[(b, b)] += 1.0;
        gram[(a, b)] -= 1.0;
        gram[(b, a)] -= 1.0;
    }
    let mut proj = DMatrix::<f64>::identity(np, np);
    if fused.is_empty() {
        return proj;
    }
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for (idx, ev) in eig.eigenvalues.iter().enumerate() {
        if *ev > EIGEN_CUTOFF * top {
            let v = eig.eigenvectors.column(idx);
            proj -= &v * v.transpose();
        }
    }
    proj
}

fn fused_coordinates(point: &PathPoint, d: &DifferenceOperator, norm: FusionNorm) -> Vec<(usize, usize, usize)> {
    let p = d.p();
    let set = ActiveSet::from_point(point, d, norm);
    let mut out = Vec::new();
    for (pair, &(i, k)) in d.pairs().iter().enumerate() {
        for j in 0..p {
            let idx = match norm {
                FusionNorm::L1 => pair * p + j,
                FusionNorm::L2 => pair,
            };
            if !set.active[idx] {
                out.push((i, k, j));
            }
        }
    }
    out
}

fn check_point(point: &PathPoint, d: &DifferenceOperator) -> Result<()> {
    for (context, expected, actual) in [
        ("degrees of freedom u_hat", d.cols(), point.u_hat.len()),
        ("degrees of freedom gamma_hat", d.rows(), point.gamma_hat.len()),
    ] {
        if expected != actual {
            return Err(Error::DimensionMismatch {
                context,
                expected,
                actual,
            });
        }
    }
    Ok(())
}

/// `q = 1` trace formula: `tr(I - D_F^T (D_F D_F^T)^+ D_F)` over the fused
/// coordinates `F`, evaluated densely.
pub fn df1(point: &PathPoint, d: &DifferenceOperator) -> Result<f64> {
    check_point(point, d)?;
    let np = d.cols();
    guard("df1 dense trace", np, DF1_DENSE_LIMIT, "use df1_unique_count")?;
    let fused = fused_coordinates(point, d, FusionNorm::L1);
    Ok(complement_projection(&fused, np, d.p()).trace())
}

/// Number of distinct entries of `u_hat`, with entries closer than
/// `1e-9` times their magnitude scale counted as equal.
pub fn df1_unique_count(point: &PathPoint) -> usize {
    let mut vals = point.u_hat.clone();
    if vals.is_empty() {
        return 0;
    }
    vals.sort_by(f64::total_cmp);
    let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-9 * scale;
    1 + vals.windows(2).filter(|w| w[1] - w[0] > tol).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Df2 {
    pub df: f64,
    /// `I + lambda P M` was singular and a least-squares solve was used.
    pub least_squares: bool,
}

fn curvature(z: &[f64]) -> DMatrix<f64> {
    let p = z.len();
    let nz = l2(z);
    let zv = DVector::from_column_slice(z);
    DMatrix::<f64>::identity(p, p) / nz - (&zv * zv.transpose()) / (nz * nz * nz)
}

/// `q = 2` estimate `tr((I + lambda P M)^{-1} P)`, built densely.
pub fn df2(point: &PathPoint, d: &DifferenceOperator, lambda: f64) -> Result<Df2> {
    check_point(point, d)?;
    let (np, p) = (d.cols(), d.p());
    guard("df2 dense trace", np, DF2_DENSE_LIMIT, "use df2_reduced")?;
    let set = ActiveSet::from_point(point, d, FusionNorm::L2);
    let fused = fused_coordinates(point, d, FusionNorm::L2);
    let proj = complement_projection(&fused, np, p);

    let mut m = DMatrix::<f64>::zeros(np, np);
    for (pair, &(i, k)) in d.pairs().iter().enumerate() {
        if !set.active[pair] {
            continue;
        }
        let z: Vec<f64> = (0..p).map(|j| point.u_hat[i * p + j] - point.u_hat[k * p + j]).collect();
        if l2(&z) == 0.0 {
            return Err(Error::InconsistentActiveSet(i, k));
        }
        let h = curvature(&z);
        for a in 0..p {
            for b in 0..p {
                let v = h[(a, b)];
                m[(i * p + a, i * p + b)] += v;
                m[(k * p + a, k * p + b)] += v;
                m[(i * p + a, k * p + b)] -= v;
                m[(k * p + a, i * p + b)] -= v;
            }
        }
    }
    let system = DMatrix::<f64>::identity(np, np) + (&proj * &m) * lambda;
    if let Some(sol) = system.clone().lu().solve(&proj) {
        if sol.iter().all(|v| v.is_finite()) {
            return Ok(Df2 {
                df: sol.trace(),
                least_squares: false,
            });
        }
    }
    let sol = system
        .svd(true, true)
        .solve(&proj, EIGEN_CUTOFF)
        .map_err(|e| Error::InvalidArgument(format!("df2 least-squares solve failed: {e}")))?;
    Ok(Df2 {
        df: sol.trace(),
        least_squares: true,
    })
}

/// The same `q = 2` estimate in cluster coordinates: with `V` an orthonormal
/// basis of cluster-constant vectors, `P = V V^T` and the trace reduces to
/// `tr((I + lambda V^T M V)^{-1})`, a `Kp x Kp` SPD solve.
pub fn df2_reduced(point: &PathPoint, d: &DifferenceOperator, lambda: f64) -> Result<f64> {
    check_point(point, d)?;
    let p = d.p();
    let part = &point.partition;
    let groups = part.groups();
    let kk = groups.len();
    let dim = kk * p;
    let sizes: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let mut a = DMatrix::<f64>::identity(dim, dim);
    for k in 0..kk {
        for l in k + 1..kk {
            let (ik, il) = (groups[k][0], groups[l][0]);
            let z: Vec<f64> = (0..p).map(|j| point.u_hat[ik * p + j] - point.u_hat[il * p + j]).collect();
            if l2(&z) == 0.0 {
                return Err(Error::InconsistentActiveSet(ik, il));
            }
            let h = curvature(&z) * lambda;
            let cross = (sizes[k] * sizes[l]).sqrt();
            for r in 0..p {
                for c in 0..p {
                    let v = h[(r, c)];
                    a[(k * p + r, k * p + c)] += sizes[l] * v;
                    a[(l * p + r, l * p + c)] += sizes[k] * v;
                    a[(k * p + r, l * p + c)] -= cross * v;
                    a[(l * p + r, k * p + c)] -= cross * v;
                }
            }
        }
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("reduced df system is not positive definite".into()))?;
    // tr(A^{-1}) = ||L^{-1}||_F^2
    let mut inv_l = DMatrix::<f64>::identity(dim, dim);
    if !chol.l_dirty().solve_lower_triangular_mut(&mut inv_l) {
        return Err(Error::InvalidArgument("reduced df factor is singular".into()));
    }
    Ok(inv_l.iter().map(|v| v * v).sum())
}

/// Degrees of freedom by the cheapest exact route for the norm: the
/// unique-value count for `q = 1` and the cluster-coordinate trace for `q = 2`.
pub fn degrees_of_freedom(point: &PathPoint, d: &DifferenceOperator, norm: FusionNorm) -> Result<f64> {
    match norm {
        FusionNorm::L1 => Ok(df1_unique_count(point) as f64),
        FusionNorm::L2 => df2_reduced(point, d, point.lambda),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloDf {
    pub mean: f64,
    pub sd: f64,
    pub reps: usize,
}

impl MonteCarloDf {
    pub fn standard_error(&self) -> f64 {
        self.sd / (self.reps as f64).sqrt()
    }

    /// Mean and sample standard deviation, summed in the given order.
    pub fn from_samples(samples: &[f64]) -> Self {
        let reps = samples.len();
        let mean = samples.iter().sum::<f64>() / reps as f64;
        let var = if reps > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            sd: var.sqrt(),
            reps,
        }
    }
}

/// Generator for replicate `rep` of a seeded experiment.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// `(1/sigma^2) <u_hat - u, x - u>` for one draw.
pub fn covariance_statistic(u_hat: &[f64], x: &[f64], u_true: &[f64], sigma: f64) -> f64 {
    u_hat
        .iter()
        .zip(x)
        .zip(u_true)
        .map(|((h, xi), u)| (h - u) * (xi - u))
        .sum::<f64>()
        / (sigma * sigma)
}

/// Monte Carlo estimate of the true degrees of freedom at one weight.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_df(
    u_true: &[f64],
    d: &DifferenceOperator,
    sigma: f64,
    lambda: f64,
    norm: FusionNorm,
    reps: usize,
    seed: u64,
    settings: &SolveSettings,
) -> Result<MonteCarloDf> {
    if !(sigma > 0.0) || reps < 2 {
        return Err(Error::InvalidArgument(format!(
            "need sigma > 0 and reps >= 2, got sigma={sigma}, reps={reps}"
        )));
    }
    if u_true.len() != d.cols() {
        return Err(Error::DimensionMismatch {
            context: "monte_carlo_df u_true",
            expected: d.cols(),
            actual: u_true.len(),
        });
    }
    let samples: Result<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep as u64);
            let x: Vec<f64> = u_true
                .iter()
                .map(|u| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    u + sigma * z
                })
                .collect();
            let pt = crate::solver::solve_single(&x, d, lambda, norm, settings, None)?;
            Ok(covariance_statistic(&pt.u_hat, &x, u_true, sigma))
        })
        .collect();
    Ok(MonteCarloDf::from_samples(&samples?))
}
