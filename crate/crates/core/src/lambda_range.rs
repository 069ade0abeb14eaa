//! The smallest penalty weight that fuses every observation.
//!
//! `lambda_upper = min { P*_q(t) : D^T t = c }` where `c` is the row-centered
//! data. Feasible `t` are exactly `a + Q w` with `a = D x / n` and
//! `Q = I - D D^T / n`, so `t = a` gives the loose bound `P*_q(D x / n)`.
//! Any `y` gives the lower bound `<y, c> / P_q(D y)`.

use serde::Serialize;

use crate::data::{column_means, data_scale};
use crate::diffop::{row_center, DifferenceOperator};
use crate::error::{Error, Result};
use crate::norms::FusionNorm;
use crate::solver::{solve_single, SolveSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaSettings {
    /// Target relative gap between the upper and lower bounds.
    pub rel_tol: f64,
    pub max_iter: usize,
    pub subgradient_iter: usize,
}

impl Default for LambdaSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            max_iter: 20_000,
            subgradient_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LambdaStatus {
    /// Gap closed to the requested tolerance.
    Certified,
    /// Best feasible value found; gap still open.
    Uncertified,
    /// All rows identical, every weight gives one cluster.
    IdenticalRows,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaUpperResult {
    pub lambda_upper: f64,
    pub lower_bound: f64,
    pub omega_star: Vec<f64>,
    pub loose_bound: f64,
    pub iterations: usize,
    pub certified: bool,
    pub status: LambdaStatus,
}

/// `P*_q(D x / n)`.
pub fn loose_upper_bound(x: &[f64], d: &DifferenceOperator, norm: FusionNorm) -> Result<f64> {
    let dx = d.apply(x)?;
    Ok(norm.dual_norm(&dx, d.p()) / d.n() as f64)
}

/// `t - D (D^T t - c) / n`, the projection onto `{D^T t = c}`.
fn project_affine(t: &mut [f64], c: &[f64], d: &DifferenceOperator, buf: &mut [f64], corr: &mut [f64]) {
    d.apply_adjoint_into(t, buf);
    for (b, ci) in buf.iter_mut().zip(c) {
        *b -= ci;
    }
    d.apply_into(buf, corr);
    let inv_n = 1.0 / d.n() as f64;
    for (ti, ci) in t.iter_mut().zip(corr.iter()) {
        *ti -= ci * inv_n;
    }
}

/// `<y, c> / P_q(D y)` for `y = D^T s / n`.
fn lower_bound(s: &[f64], c: &[f64], d: &DifferenceOperator, norm: FusionNorm) -> f64 {
    let mut y = vec![0.0; d.cols()];
    d.apply_adjoint_into(s, &mut y);
    let dy = d.apply(&y).expect("lengths match");
    let denom = norm.penalty(&dy, d.p());
    if denom <= 0.0 {
        return 0.0;
    }
    let num: f64 = y.iter().zip(c).map(|(a, b)| a * b).sum();
    num.abs() / denom
}

pub fn lambda_upper(
    x: &[f64],
    d: &DifferenceOperator,
    norm: FusionNorm,
    settings: &LambdaSettings,
) -> Result<LambdaUpperResult> {
    if x.len() != d.cols() {
        return Err(Error::DimensionMismatch {
            context: "lambda_upper x",
            expected: d.cols(),
            actual: x.len(),
        });
    }
    let (n, p) = (d.n(), d.p());
    let m = d.rows();
    let c = row_center(x, d.layout());
    let dx = d.apply(x)?;
    let a: Vec<f64> = dx.iter().map(|v| v / n as f64).collect();
    let loose = norm.dual_norm(&a, p);
    let scale = data_scale(x, n, p);
    if loose <= 1e-14 * scale || c.iter().all(|v| *v == 0.0) {
        return Ok(LambdaUpperResult {
            lambda_upper: 0.0,
            lower_bound: 0.0,
            omega_star: vec![0.0; m],
            loose_bound: loose,
            iterations: 0,
            certified: true,
            status: LambdaStatus::IdenticalRows,
        });
    }

    let mut buf = vec![0.0; n * p];
    let mut corr = vec![0.0; m];
    let mut best_t = a.clone();
    let mut best_upper = loose;
    let mut best_lower = lower_bound(&dx, &c, d, norm);
    let gap = |u: f64, l: f64| (u - l) / u;

    // splitting: t in the affine set, z carries the dual norm, scaled multiplier w
    let mut z = a.clone();
    let mut w = vec![0.0; m];
    let mut t = vec![0.0; m];
    let mut z_old = vec![0.0; m];
    let mut rho = 1.0 / loose;
    let mut iterations = 0;
    while iterations < settings.max_iter && gap(best_upper, best_lower) > settings.rel_tol {
        iterations += 1;
        for k in 0..m {
            t[k] = z[k] - w[k];
        }
        project_affine(&mut t, &c, d, &mut buf, &mut corr);
        z_old.copy_from_slice(&z);
        for k in 0..m {
            z[k] = t[k] + w[k];
        }
        // prox of P*/rho by Moreau: z - projection onto the (1/rho)-ball of P
        let mut proj = z.clone();
        norm.project_primal_ball(&mut proj, p, 1.0 / rho);
        for k in 0..m {
            z[k] -= proj[k];
            w[k] += t[k] - z[k];
        }
        if iterations % 10 == 0 {
            let upper = norm.dual_norm(&t, p);
            if upper < best_upper {
                best_upper = upper;
                best_t.copy_from_slice(&t);
            }
            let s: Vec<f64> = w.iter().map(|v| v * rho).collect();
            best_lower = best_lower.max(lower_bound(&s, &c, d, norm));
            let r = t.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let sd = rho * z.iter().zip(&z_old).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if r > 10.0 * sd {
                rho *= 2.0;
                w.iter_mut().for_each(|v| *v *= 0.5);
            } else if sd > 10.0 * r {
                rho *= 0.5;
                w.iter_mut().for_each(|v| *v *= 2.0);
            }
        }
    }

    if gap(best_upper, best_lower) > settings.rel_tol {
        // projected subgradient with averaging from the best point so far
        let mut cur = best_t.clone();
        let mut avg = vec![0.0; m];
        let step0 = best_upper;
        for it in 1..=settings.subgradient_iter {
            iterations += 1;
            let mut g = vec![0.0; m];
            dual_norm_subgradient(&cur, p, norm, &mut g);
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let step = step0 / (gn * (it as f64).sqrt());
            for k in 0..m {
                cur[k] -= step * g[k];
            }
            project_affine(&mut cur, &c, d, &mut buf, &mut corr);
            let wgt = 1.0 / it as f64;
            for k in 0..m {
                avg[k] += (cur[k] - avg[k]) * wgt;
            }
            for cand in [&cur, &avg] {
                let v = norm.dual_norm(cand, p);
                if v < best_upper {
                    best_upper = v;
                    best_t.copy_from_slice(cand);
                }
            }
            if gap(best_upper, best_lower) <= settings.rel_tol {
                break;
            }
        }
    }

    let certified = gap(best_upper, best_lower) <= settings.rel_tol;
    Ok(LambdaUpperResult {
        lambda_upper: best_upper,
        lower_bound: best_lower,
        omega_star: best_t,
        loose_bound: loose,
        iterations,
        certified,
        status: if certified {
            LambdaStatus::Certified
        } else {
            LambdaStatus::Uncertified
        },
    })
}

/// A subgradient of `P*_q` at `t`: the indicator of one maximizing coordinate
/// (`q = 1`) or the normalized maximizing block (`q = 2`).
fn dual_norm_subgradient(t: &[f64], p: usize, norm: FusionNorm, g: &mut [f64]) {
    g.iter_mut().for_each(|v| *v = 0.0);
    match norm {
        FusionNorm::L1 => {
            if let Some((k, v)) = t.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())) {
                g[k] = v.signum();
            }
        }
        FusionNorm::L2 => {
            let best = t
                .chunks_exact(p)
                .enumerate()
                .map(|(b, blk)| (b, norm.dual_block_norm(blk)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((b, nb)) = best {
                if nb > 0.0 {
                    for j in 0..p {
                        g[b * p + j] = t[b * p + j] / nb;
                    }
                }
            }
        }
    }
}

/// `P*_q(a + Q omega)`, the objective minimized by `lambda_upper`.
pub fn lambda_objective(x: &[f64], d: &DifferenceOperator, norm: FusionNorm, omega: &[f64]) -> Result<f64> {
    let n = d.n() as f64;
    let dx = d.apply(x)?;
    let proj = d.project_column_space(omega)?;
    let t: Vec<f64> = dx
        .iter()
        .zip(omega)
        .zip(&proj)
        .map(|((a, w), q)| a / n + w - q)
        .collect();
    Ok(norm.dual_norm(&t, d.p()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BisectionReport {
    pub lower_lambda: f64,
    pub upper_lambda: f64,
    pub clusters_below: usize,
    pub clusters_above: usize,
    /// Both probe solves were KKT-certified.
    pub conclusive: bool,
    pub passed: bool,
}

/// Solves at `(1 - 0.02) candidate` and `(1 + 0.02) candidate`; passes iff the
/// first leaves at least two clusters and the second fuses everything.
pub fn bisection_validate(
    x: &[f64],
    d: &DifferenceOperator,
    norm: FusionNorm,
    candidate: f64,
    settings: &SolveSettings,
) -> Result<BisectionReport> {
    const DELTA: f64 = 0.02;
    let lo = candidate * (1.0 - DELTA);
    let hi = candidate * (1.0 + DELTA);
    let below = solve_single(x, d, lo, norm, settings, None)?;
    let above = solve_single(x, d, hi, norm, settings, None)?;
    let conclusive = below.converged && above.converged;
    Ok(BisectionReport {
        lower_lambda: lo,
        upper_lambda: hi,
        clusters_below: below.k(),
        clusters_above: above.k(),
        conclusive,
        passed: conclusive && below.k() >= 2 && above.k() == 1,
    })
}

/// Column means repeated on every row: the fully fused solution.
pub fn fused_solution(x: &[f64], d: &DifferenceOperator) -> Vec<f64> {
    let mean = column_means(x, d.n(), d.p());
    (0..d.n()).flat_map(|_| mean.iter().copied()).collect()
}
