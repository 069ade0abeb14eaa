//! Extended BIC along a solution path:
//! `np ln(rss/np) + df ln(np) + 2 gamma df ln(np)`.

use serde::Serialize;

use crate::diffop::DifferenceOperator;
use crate::dof::degrees_of_freedom;
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::solver::PathSolution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EbicEntry {
    /// Position of the point on the path.
    pub index: usize,
    pub lambda: f64,
    pub rss: f64,
    pub df: f64,
    pub ebic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EbicCurve {
    pub gamma_ebic: f64,
    pub entries: Vec<EbicEntry>,
    /// Path positions left out because their rss is zero.
    pub excluded: Vec<usize>,
    /// Position within `entries` of the minimum, ties to the larger lambda.
    pub argmin: Option<usize>,
}

pub fn ebic_value(np: usize, rss: f64, df: f64, gamma_ebic: f64) -> f64 {
    let npf = np as f64;
    let log_np = npf.ln();
    npf * (rss / npf).ln() + df * log_np + 2.0 * gamma_ebic * df * log_np
}

fn check_gamma(gamma_ebic: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma_ebic) {
        return Err(Error::InvalidArgument(format!(
            "eBIC weight must be in [0, 1], got {gamma_ebic}"
        )));
    }
    Ok(())
}

/// Builds the curve from per-point `(lambda, rss, df)` triples in path order.
pub fn ebic_from_parts(np: usize, parts: &[(f64, f64, f64)], gamma_ebic: f64) -> Result<EbicCurve> {
    check_gamma(gamma_ebic)?;
    let mut entries = Vec::with_capacity(parts.len());
    let mut excluded = Vec::new();
    for (index, &(lambda, rss, df)) in parts.iter().enumerate() {
        if rss <= 0.0 {
            excluded.push(index);
            continue;
        }
        entries.push(EbicEntry {
            index,
            lambda,
            rss,
            df,
            ebic: ebic_value(np, rss, df, gamma_ebic),
        });
    }
    let mut argmin: Option<usize> = None;
    for (pos, e) in entries.iter().enumerate() {
        if argmin.is_none_or(|b| e.ebic <= entries[b].ebic) {
            argmin = Some(pos);
        }
    }
    Ok(EbicCurve {
        gamma_ebic,
        entries,
        excluded,
        argmin,
    })
}

/// Per-point degrees of freedom for the path's norm.
pub fn path_df(path: &PathSolution, d: &DifferenceOperator) -> Result<Vec<f64>> {
    path.points
        .iter()
        .map(|pt| degrees_of_freedom(pt, d, path.norm))
        .collect()
}

pub fn ebic(path: &PathSolution, d: &DifferenceOperator, gamma_ebic: f64) -> Result<EbicCurve> {
    let dfs = path_df(path, d)?;
    ebic_with_df(path, &dfs, gamma_ebic)
}

/// Same as [`ebic`] with degrees of freedom supplied by the caller.
pub fn ebic_with_df(path: &PathSolution, dfs: &[f64], gamma_ebic: f64) -> Result<EbicCurve> {
    if dfs.len() != path.points.len() {
        return Err(Error::DimensionMismatch {
            context: "ebic degrees of freedom",
            expected: path.points.len(),
            actual: dfs.len(),
        });
    }
    let parts: Vec<(f64, f64, f64)> = path
        .points
        .iter()
        .zip(dfs)
        .map(|(pt, &df)| (pt.lambda, pt.rss, df))
        .collect();
    ebic_from_parts(path.layout.len(), &parts, gamma_ebic)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub index: usize,
    pub lambda_star: f64,
    pub partition: Partition,
    pub k: usize,
    pub ebic: f64,
}

pub fn select_from_curve(path: &PathSolution, curve: &EbicCurve) -> Result<Selection> {
    let pos = curve
        .argmin
        .ok_or_else(|| Error::Empty("no path point has positive rss".into()))?;
    let entry = curve.entries[pos];
    let pt = &path.points[entry.index];
    Ok(Selection {
        index: entry.index,
        lambda_star: pt.lambda,
        k: pt.k(),
        partition: pt.partition.clone(),
        ebic: entry.ebic,
    })
}

pub fn select_lambda(path: &PathSolution, d: &DifferenceOperator, gamma_ebic: f64) -> Result<Selection> {
    select_from_curve(path, &ebic(path, d, gamma_ebic)?)
}
