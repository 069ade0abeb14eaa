//! Convex clustering solver.
//!
//! Minimizes `0.5 ||x - u||^2 + lambda * P_q(D u)` by alternating-direction
//! splitting on `u` and `v = D u` with scaled multipliers `w`. The `u`-update
//! is closed form because `I + rho D^T D` acts as `1` on constant rows and as
//! `1 + rho n` on row-centered vectors. The `v`-update is the proximal map of
//! the penalty, which zeroes fused blocks exactly.
//!
//! After the splitting iterations the fused structure read off `v` is used to
//! snap the estimate onto the corresponding subspace (exactly equal rows, or
//! exactly equal entries per column for `q = 1`) and the result is certified
//! with a KKT check that also produces a dual-feasible certificate.

use serde::Serialize;

use crate::data::data_scale;
use crate::diffop::{DifferenceOperator, VecLayout};
use crate::error::{Error, Result};
use crate::norms::{l2, FusionNorm};
use crate::partition::{Partition, UnionFind};

const OVER_RELAXATION: f64 = 1.5;
const CHECK_EVERY: usize = 5;
const TOL_REFINEMENTS: usize = 3;
const NEWTON_MAX_DIM: usize = 600;
const NEWTON_ALWAYS_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveSettings {
    /// Initial augmented-Lagrangian weight.
    pub rho: f64,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    /// Relative distance under which centroid rows count as fused when only
    /// centroids (and no exact zero pattern) are available.
    pub fuse_tol: f64,
    /// A point is certified when its KKT residual is at most `cert_tol * scale(x)`.
    pub cert_tol: f64,
    pub adaptive_rho: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            rho: 1.0,
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            max_iter: 100_000,
            fuse_tol: 1e-8,
            cert_tol: 1e-6,
            adaptive_rho: true,
        }
    }
}

impl SolveSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("tol_primal", self.tol_primal),
            ("tol_dual", self.tol_dual),
            ("cert_tol", self.cert_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.fuse_tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "fuse_tol must be nonnegative, got {}",
                self.fuse_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Solution at one penalty weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathPoint {
    pub lambda: f64,
    /// Centroids, row-major `n x p`.
    pub u_hat: Vec<f64>,
    /// Fused differences; a block is exactly zero iff its pair is fused.
    pub gamma_hat: Vec<f64>,
    pub partition: Partition,
    pub rss: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Dual certificate `nu = lambda * g` with `P*_q(nu) <= lambda`.
    pub dual: Vec<f64>,
    /// Augmented-Lagrangian weight at exit, reused for warm starts.
    pub rho: f64,
}

impl PathPoint {
    pub fn k(&self) -> usize {
        self.partition.k()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSolution {
    pub points: Vec<PathPoint>,
    pub norm: FusionNorm,
    #[serde(skip)]
    pub layout: VecLayout,
}

impl PathSolution {
    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.converged)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }
}

/// `0.5 ||x - u||^2 + lambda P_q(D u)`.
pub fn objective(x: &[f64], d: &DifferenceOperator, lambda: f64, norm: FusionNorm, u: &[f64]) -> Result<f64> {
    let du = d.apply(u)?;
    let fit: f64 = x.iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(0.5 * fit + lambda * norm.penalty(&du, d.p()))
}

/// Which coordinates of `D u` are fused. For `q = 2` a single row partition
/// applies to every column; for `q = 1` each column has its own grouping.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum FusedStructure {
    Rows(Partition),
    Columns(Vec<Partition>),
}

impl FusedStructure {
    fn column(&self, j: usize) -> &Partition {
        match self {
            FusedStructure::Rows(p) => p,
            FusedStructure::Columns(cols) => &cols[j],
        }
    }

    /// Whether coordinate `j` of pair `(i, k)` is fused.
    fn fused(&self, i: usize, k: usize, j: usize) -> bool {
        self.column(j).same_cluster(i, k)
    }

    fn row_partition(&self) -> Partition {
        match self {
            FusedStructure::Rows(p) => p.clone(),
            FusedStructure::Columns(cols) => cols
                .iter()
                .skip(1)
                .fold(cols[0].clone(), |acc, c| acc.meet(c)),
        }
    }

    /// Reads the fused pattern off exact zeros of a blocked vector.
    fn from_zeros(v: &[f64], d: &DifferenceOperator, norm: FusionNorm) -> Self {
        let (n, p) = (d.n(), d.p());
        match norm {
            FusionNorm::L2 => {
                let mut uf = UnionFind::new(n);
                for (blk, &(i, k)) in v.chunks_exact(p).zip(d.pairs()) {
                    if blk.iter().all(|c| *c == 0.0) {
                        uf.union(i, k);
                    }
                }
                FusedStructure::Rows(uf.partition(n))
            }
            FusionNorm::L1 => {
                let mut ufs: Vec<UnionFind> = (0..p).map(|_| UnionFind::new(n)).collect();
                for (blk, &(i, k)) in v.chunks_exact(p).zip(d.pairs()) {
                    for (j, c) in blk.iter().enumerate() {
                        if *c == 0.0 {
                            ufs[j].union(i, k);
                        }
                    }
                }
                FusedStructure::Columns(ufs.iter_mut().map(|uf| uf.partition(n)).collect())
            }
        }
    }

    /// Adds every pair (or, for `q = 1`, coordinate) of `u` closer than `tol`.
    fn merged_with_close(&self, u: &[f64], d: &DifferenceOperator, tol: f64) -> Self {
        let n = d.n();
        let seeded = |part: &Partition| {
            let mut uf = UnionFind::new(n);
            for g in part.groups() {
                for w in g.windows(2) {
                    uf.union(w[0], w[1]);
                }
            }
            uf
        };
        match (self, Self::from_centroids(u, d, self.norm(), tol)) {
            (FusedStructure::Rows(a), FusedStructure::Rows(b)) => {
                let mut uf = seeded(a);
                for g in b.groups() {
                    for w in g.windows(2) {
                        uf.union(w[0], w[1]);
                    }
                }
                FusedStructure::Rows(uf.partition(n))
            }
            (FusedStructure::Columns(a), FusedStructure::Columns(b)) => FusedStructure::Columns(
                a.iter()
                    .zip(&b)
                    .map(|(pa, pb)| {
                        let mut uf = seeded(pa);
                        for g in pb.groups() {
                            for w in g.windows(2) {
                                uf.union(w[0], w[1]);
                            }
                        }
                        uf.partition(n)
                    })
                    .collect(),
            ),
            _ => unreachable!("structure kinds match the norm"),
        }
    }

    fn norm(&self) -> FusionNorm {
        match self {
            FusedStructure::Rows(_) => FusionNorm::L2,
            FusedStructure::Columns(_) => FusionNorm::L1,
        }
    }

    /// Fused pattern of centroids within an absolute tolerance.
    fn from_centroids(u: &[f64], d: &DifferenceOperator, norm: FusionNorm, tol: f64) -> Self {
        let (n, p) = (d.n(), d.p());
        match norm {
            FusionNorm::L2 => {
                let mut uf = UnionFind::new(n);
                for &(i, k) in d.pairs() {
                    let dist = crate::norms::Metric::Euclidean
                        .distance(&u[i * p..(i + 1) * p], &u[k * p..(k + 1) * p]);
                    if dist <= tol {
                        uf.union(i, k);
                    }
                }
                FusedStructure::Rows(uf.partition(n))
            }
            FusionNorm::L1 => {
                let cols = (0..p)
                    .map(|j| {
                        let mut uf = UnionFind::new(n);
                        for &(i, k) in d.pairs() {
                            if (u[i * p + j] - u[k * p + j]).abs() <= tol {
                                uf.union(i, k);
                            }
                        }
                        uf.partition(n)
                    })
                    .collect();
                FusedStructure::Columns(cols)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// `stationarity + infeasibility`.
    pub residual: f64,
    /// `||x - u - lambda D^T g||_inf`.
    pub stationarity: f64,
    /// `max(0, max_C ||g_C||_s - 1)`.
    pub infeasibility: f64,
    /// `nu = lambda g`.
    pub dual: Vec<f64>,
}

/// KKT residual of a candidate solution. Fused pairs are detected from the
/// centroids at `fuse_tol * scale(x)` with `fuse_tol = 1e-8`.
pub fn kkt_check(
    x: &[f64],
    d: &DifferenceOperator,
    lambda: f64,
    norm: FusionNorm,
    u_hat: &[f64],
) -> Result<f64> {
    Ok(kkt_report(x, d, lambda, norm, u_hat, SolveSettings::default().fuse_tol)?.residual)
}

pub fn kkt_report(
    x: &[f64],
    d: &DifferenceOperator,
    lambda: f64,
    norm: FusionNorm,
    u_hat: &[f64],
    fuse_tol: f64,
) -> Result<KktReport> {
    check_vec("kkt_check x", d.cols(), x.len())?;
    check_vec("kkt_check u_hat", d.cols(), u_hat.len())?;
    let scale = data_scale(x, d.n(), d.p());
    let structure = FusedStructure::from_centroids(u_hat, d, norm, fuse_tol * scale);
    Ok(kkt_with_structure(x, d, lambda, norm, u_hat, &structure, None, 5000))
}

fn check_vec(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Builds `g` on unfused coordinates from the subgradient formula, then finds
/// fused-coordinate values satisfying `x - u = lambda D^T g` in the least
/// squares sense while staying inside the dual unit ball (alternating
/// projections, starting from `hint / lambda` when given).
#[allow(clippy::too_many_arguments)]
pub(crate) fn kkt_with_structure(
    x: &[f64],
    d: &DifferenceOperator,
    lambda: f64,
    norm: FusionNorm,
    u: &[f64],
    structure: &FusedStructure,
    hint: Option<&[f64]>,
    max_rounds: usize,
) -> KktReport {
    let (n, p) = (d.n(), d.p());
    let m = d.rows();
    if lambda == 0.0 {
        let stationarity = x.iter().zip(u).fold(0.0_f64, |a, (xi, ui)| a.max((xi - ui).abs()));
        return KktReport {
            residual: stationarity,
            stationarity,
            infeasibility: 0.0,
            dual: vec![0.0; m],
        };
    }

    let mut g = vec![0.0; m];
    let mut free = vec![false; m];
    for (pair, &(i, k)) in d.pairs().iter().enumerate() {
        let blk = d.block(pair);
        match norm {
            FusionNorm::L1 => {
                for j in 0..p {
                    let idx = blk.start + j;
                    if structure.fused(i, k, j) {
                        free[idx] = true;
                    } else {
                        let diff = u[i * p + j] - u[k * p + j];
                        g[idx] = if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                }
            }
            FusionNorm::L2 => {
                if structure.fused(i, k, 0) {
                    free[blk.clone()].iter_mut().for_each(|f| *f = true);
                } else {
                    let z: Vec<f64> = (0..p).map(|j| u[i * p + j] - u[k * p + j]).collect();
                    let nz = l2(&z);
                    if nz > 0.0 {
                        for j in 0..p {
                            g[blk.start + j] = z[j] / nz;
                        }
                    }
                }
            }
        }
    }

    // target for the free part: (x - u)/lambda - D^T g_fixed
    let mut base = vec![0.0; n * p];
    d.apply_adjoint_into(&g, &mut base);
    for ((b, xi), ui) in base.iter_mut().zip(x).zip(u) {
        *b = (xi - ui) / lambda - *b;
    }

    if let Some(h) = hint {
        for idx in 0..m {
            if free[idx] {
                g[idx] = h[idx] / lambda;
            }
        }
        project_free_to_ball(&mut g, &free, norm, p);
    }

    let groups: Vec<Vec<Vec<usize>>> = (0..p)
        .map(|j| {
            structure
                .column(j)
                .groups()
                .into_iter()
                .filter(|g| g.len() > 1)
                .collect()
        })
        .collect();

    let any_free = free.iter().any(|f| *f);
    if any_free {
        let mut rounds = 0;
        loop {
            project_free_to_affine(&mut g, d, &groups, &base);
            rounds += 1;
            let viol = free_infeasibility(&g, &free, norm, p);
            if viol <= 1e-13 || rounds >= max_rounds {
                break;
            }
            project_free_to_ball(&mut g, &free, norm, p);
        }
    }

    let mut dtg = vec![0.0; n * p];
    d.apply_adjoint_into(&g, &mut dtg);
    let stationarity = x
        .iter()
        .zip(u)
        .zip(&dtg)
        .fold(0.0_f64, |a, ((xi, ui), t)| a.max((xi - ui - lambda * t).abs()));
    let infeasibility = (norm.dual_norm(&g, p) - 1.0).max(0.0);
    let dual = g.iter().map(|v| v * lambda).collect();
    KktReport {
        residual: stationarity + infeasibility,
        stationarity,
        infeasibility,
        dual,
    }
}

fn project_free_to_ball(g: &mut [f64], free: &[bool], norm: FusionNorm, p: usize) {
    match norm {
        FusionNorm::L1 => {
            for (v, f) in g.iter_mut().zip(free) {
                if *f {
                    *v = v.clamp(-1.0, 1.0);
                }
            }
        }
        FusionNorm::L2 => {
            for (blk, fr) in g.chunks_exact_mut(p).zip(free.chunks_exact(p)) {
                if fr[0] {
                    let nb = l2(blk);
                    if nb > 1.0 {
                        blk.iter_mut().for_each(|v| *v /= nb);
                    }
                }
            }
        }
    }
}

fn free_infeasibility(g: &[f64], free: &[bool], norm: FusionNorm, p: usize) -> f64 {
    let mut worst = 0.0_f64;
    for (blk, fr) in g.chunks_exact(p).zip(free.chunks_exact(p)) {
        if fr.iter().any(|f| *f) {
            let v: Vec<f64> = blk.iter().zip(fr).map(|(b, f)| if *f { *b } else { 0.0 }).collect();
            worst = worst.max(norm.dual_block_norm(&v) - 1.0);
        }
    }
    worst.max(0.0)
}

/// Minimum-norm correction of the fused coordinates so that, within each
/// fused group of each column, `D^T g` matches `base` up to the group mean.
/// On a complete graph of `m` nodes the correction on edge `(i, k)` is
/// `(e_i - e_k) / m`.
fn project_free_to_affine(
    g: &mut [f64],
    d: &DifferenceOperator,
    groups: &[Vec<Vec<usize>>],
    base: &[f64],
) {
    let p = d.p();
    let mut e = Vec::new();
    for (j, col_groups) in groups.iter().enumerate() {
        for members in col_groups {
            let m = members.len();
            e.clear();
            e.extend(members.iter().map(|&i| base[i * p + j]));
            for a in 0..m {
                for b in a + 1..m {
                    let idx = d.pair_index(members[a], members[b]) * p + j;
                    e[a] -= g[idx];
                    e[b] += g[idx];
                }
            }
            let inv_m = 1.0 / m as f64;
            for a in 0..m {
                for b in a + 1..m {
                    let idx = d.pair_index(members[a], members[b]) * p + j;
                    g[idx] += (e[a] - e[b]) * inv_m;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct AdmmState {
    u: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
    rho: f64,
}

struct Problem<'a> {
    x: &'a [f64],
    d: &'a DifferenceOperator,
    lambda: f64,
    norm: FusionNorm,
    scale: f64,
}

/// Runs at most `budget` iterations; returns `(iterations, converged)`.
fn run_admm(pb: &Problem<'_>, st: &mut AdmmState, tol: (f64, f64), budget: usize, adaptive: bool) -> (usize, bool) {
    let d = pb.d;
    let (n, p) = (d.n(), d.p());
    let m = d.rows();
    let np = n * p;
    let mut tmp = vec![0.0; m];
    let mut dt = vec![0.0; np];
    let mut du = vec![0.0; m];
    let mut v_old = vec![0.0; m];
    let mut mean = vec![0.0; p];
    let alpha = OVER_RELAXATION;

    for it in 1..=budget {
        let rho = st.rho;
        for ((t, v), w) in tmp.iter_mut().zip(&st.v).zip(&st.w) {
            *t = v - w;
        }
        d.apply_adjoint_into(&tmp, &mut dt);
        mean.iter_mut().for_each(|c| *c = 0.0);
        for (k, u) in st.u.iter_mut().enumerate() {
            *u = pb.x[k] + rho * dt[k];
            mean[k % p] += *u;
        }
        mean.iter_mut().for_each(|c| *c /= n as f64);
        let shrink = 1.0 / (1.0 + rho * n as f64);
        for (k, u) in st.u.iter_mut().enumerate() {
            let c = mean[k % p];
            *u = c + (*u - c) * shrink;
        }
        d.apply_into(&st.u, &mut du);
        v_old.copy_from_slice(&st.v);
        for k in 0..m {
            st.w[k] += alpha * du[k] + (1.0 - alpha) * v_old[k];
        }
        st.v.copy_from_slice(&st.w);
        pb.norm.prox(&mut st.v, p, pb.lambda / rho);
        for (w, v) in st.w.iter_mut().zip(&st.v) {
            *w -= v;
        }

        if it % CHECK_EVERY == 0 || it == budget {
            let r = du.iter().zip(&st.v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            for ((t, v), vo) in tmp.iter_mut().zip(&st.v).zip(&v_old) {
                *t = v - vo;
            }
            d.apply_adjoint_into(&tmp, &mut dt);
            let s = rho * l2(&dt);
            let eps_p = tol.0 * (l2(&du).max(l2(&st.v)) + pb.scale);
            let resid: f64 = pb.x.iter().zip(&st.u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let eps_d = tol.1 * (resid + pb.scale);
            if r <= eps_p && s <= eps_d {
                return (it, true);
            }
            if adaptive {
                let (rr, ss) = (r / eps_p, s / eps_d);
                if rr > 10.0 * ss {
                    st.rho *= 2.0;
                    st.w.iter_mut().for_each(|w| *w *= 0.5);
                } else if ss > 10.0 * rr {
                    st.rho *= 0.5;
                    st.w.iter_mut().for_each(|w| *w *= 2.0);
                }
            }
        }
    }
    (budget, false)
}

/// Snaps `u` onto the subspace of the fused structure. For `q = 1` the fused
/// values are exact given the ordering of the groups in `u`; for `q = 2` rows
/// are averaged within clusters.
fn snap(pb: &Problem<'_>, u: &[f64], structure: &FusedStructure) -> Vec<f64> {
    let p = pb.d.p();
    let mut out = u.to_vec();
    match structure {
        FusedStructure::Rows(part) => {
            for members in part.groups() {
                for j in 0..p {
                    let avg = members.iter().map(|&i| u[i * p + j]).sum::<f64>() / members.len() as f64;
                    members.iter().for_each(|&i| out[i * p + j] = avg);
                }
            }
        }
        FusedStructure::Columns(cols) => {
            for (j, part) in cols.iter().enumerate() {
                let groups = part.groups();
                let sizes: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
                let current: Vec<f64> = groups
                    .iter()
                    .map(|g| g.iter().map(|&i| u[i * p + j]).sum::<f64>() / g.len() as f64)
                    .collect();
                for (a, members) in groups.iter().enumerate() {
                    let xbar = members.iter().map(|&i| pb.x[i * p + j]).sum::<f64>() / sizes[a];
                    let push: f64 = (0..groups.len())
                        .filter(|&b| b != a)
                        .map(|b| sizes[b] * sign(current[a] - current[b]))
                        .sum();
                    let value = xbar - pb.lambda * push;
                    members.iter().for_each(|&i| out[i * p + j] = value);
                }
            }
        }
    }
    out
}

fn structure_dim(structure: &FusedStructure, p: usize) -> usize {
    match structure {
        FusedStructure::Rows(part) => part.k() * p,
        FusedStructure::Columns(cols) => cols.iter().map(Partition::k).sum(),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Newton iterations on the cluster-level problem for `q = 2`:
/// `0.5 sum_k s_k ||mu_k - xbar_k||^2 + lambda sum_{k<l} s_k s_l ||mu_k - mu_l||`.
fn newton_refine(pb: &Problem<'_>, u: &[f64], part: &Partition) -> Option<Vec<f64>> {
    let p = pb.d.p();
    let groups = part.groups();
    let kk = groups.len();
    let dim = kk * p;
    if kk < 2 || dim > NEWTON_MAX_DIM {
        return None;
    }
    let sizes: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let mut xbar = vec![0.0; dim];
    let mut mu = vec![0.0; dim];
    for (k, members) in groups.iter().enumerate() {
        for &i in members {
            for j in 0..p {
                xbar[k * p + j] += pb.x[i * p + j] / sizes[k];
                mu[k * p + j] += u[i * p + j] / sizes[k];
            }
        }
    }
    let lambda = pb.lambda;
    let floor = 1e-13 * pb.scale;
    let objective = |mu: &[f64]| -> Option<f64> {
        let mut f = 0.0;
        for k in 0..kk {
            f += 0.5 * sizes[k] * (0..p).map(|j| (mu[k * p + j] - xbar[k * p + j]).powi(2)).sum::<f64>();
            for l in k + 1..kk {
                let dist = (0..p).map(|j| (mu[k * p + j] - mu[l * p + j]).powi(2)).sum::<f64>().sqrt();
                if dist <= floor {
                    return None;
                }
                f += lambda * sizes[k] * sizes[l] * dist;
            }
        }
        Some(f)
    };

    let mut f_cur = objective(&mu)?;
    for _ in 0..40 {
        let mut grad = vec![0.0; dim];
        let mut hess = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for k in 0..kk {
            for j in 0..p {
                grad[k * p + j] += sizes[k] * (mu[k * p + j] - xbar[k * p + j]);
                hess[(k * p + j, k * p + j)] += sizes[k];
            }
            for l in k + 1..kk {
                let z: Vec<f64> = (0..p).map(|j| mu[k * p + j] - mu[l * p + j]).collect();
                let dist = l2(&z);
                if dist <= floor {
                    return None;
                }
                let w = lambda * sizes[k] * sizes[l];
                for j in 0..p {
                    grad[k * p + j] += w * z[j] / dist;
                    grad[l * p + j] -= w * z[j] / dist;
                }
                for a in 0..p {
                    for b in 0..p {
                        let h = w * ((if a == b { 1.0 } else { 0.0 }) - z[a] * z[b] / (dist * dist)) / dist;
                        hess[(k * p + a, k * p + b)] += h;
                        hess[(l * p + a, l * p + b)] += h;
                        hess[(k * p + a, l * p + b)] -= h;
                        hess[(l * p + a, k * p + b)] -= h;
                    }
                }
            }
        }
        let gnorm = grad.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
        if gnorm <= 1e-14 * pb.scale * sizes.iter().sum::<f64>() {
            break;
        }
        let chol = hess.cholesky()?;
        let step = chol.solve(&nalgebra::DVector::from_vec(grad.clone()));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = mu.iter().zip(step.iter()).map(|(m, s)| m - t * s).collect();
            if let Some(f_trial) = objective(&trial) {
                if f_trial <= f_cur {
                    mu = trial;
                    f_cur = f_trial;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let mut out = vec![0.0; u.len()];
    for (k, members) in groups.iter().enumerate() {
        for &i in members {
            out[i * p..(i + 1) * p].copy_from_slice(&mu[k * p..(k + 1) * p]);
        }
    }
    Some(out)
}

/// Distances (relative to the data scale) under which unfused pairs are also
/// tried as fused when the exact zero pattern does not certify.
const MERGE_LADDER: [f64; 5] = [1e-7, 1e-6, 1e-5, 1e-4, 1e-3];

/// Snap, and for `q = 2` optionally Newton-refine, keeping the better of the two.
fn polished_candidate(pb: &Problem<'_>, u: &[f64], structure: &FusedStructure, hint: &[f64], cert: f64) -> Candidate {
    let p = pb.d.p();
    let snapped = candidate_from(pb, snap(pb, u, structure), structure, hint);
    let polish = snapped.kkt.residual > cert || structure_dim(structure, p) <= NEWTON_ALWAYS_DIM;
    if let (true, FusionNorm::L2, FusedStructure::Rows(part)) = (polish, pb.norm, structure) {
        if let Some(refined) = newton_refine(pb, u, part) {
            let c = candidate_from(pb, refined, structure, hint);
            if c.kkt.residual < snapped.kkt.residual {
                return c;
            }
        }
    }
    snapped
}

struct Candidate {
    u: Vec<f64>,
    gamma: Vec<f64>,
    kkt: KktReport,
}

fn candidate_from(pb: &Problem<'_>, u: Vec<f64>, structure: &FusedStructure, hint: &[f64]) -> Candidate {
    let kkt = kkt_with_structure(pb.x, pb.d, pb.lambda, pb.norm, &u, structure, Some(hint), 200);
    let gamma = pb.d.apply(&u).expect("length checked");
    Candidate { u, gamma, kkt }
}

fn finish_point(pb: &Problem<'_>, cand: Candidate, iterations: usize, rho: f64, cert: f64) -> PathPoint {
    let partition = partition_from_gamma(&cand.gamma, pb.d);
    let rss = pb.x.iter().zip(&cand.u).map(|(a, b)| (a - b).powi(2)).sum();
    PathPoint {
        lambda: pb.lambda,
        converged: cand.kkt.residual <= cert,
        kkt_residual: cand.kkt.residual,
        dual: cand.kkt.dual,
        u_hat: cand.u,
        gamma_hat: cand.gamma,
        partition,
        rss,
        iterations,
        rho,
    }
}

/// Components of the pairs whose block of `gamma` is exactly zero.
pub(crate) fn partition_from_gamma(gamma: &[f64], d: &DifferenceOperator) -> Partition {
    let p = d.p();
    let mut uf = UnionFind::new(d.n());
    for (blk, &(i, k)) in gamma.chunks_exact(p).zip(d.pairs()) {
        if blk.iter().all(|c| *c == 0.0) {
            uf.union(i, k);
        }
    }
    uf.partition(d.n())
}

/// Partition of a solved point per the equal-rows cluster definition: exact
/// zero blocks of `gamma_hat`, or, when no fused-difference vector is
/// attached, centroid rows within `fuse_tol` times the centroid scale.
pub fn cluster_extract(point: &PathPoint, d: &DifferenceOperator, fuse_tol: f64) -> Partition {
    if point.gamma_hat.len() == d.rows() {
        return partition_from_gamma(&point.gamma_hat, d);
    }
    cluster_from_centroids(&point.u_hat, d, fuse_tol)
}

/// Fallback extraction for centroids produced by a generic solver.
pub fn cluster_from_centroids(u: &[f64], d: &DifferenceOperator, fuse_tol: f64) -> Partition {
    let scale = data_scale(u, d.n(), d.p()).max(u.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
    FusedStructure::from_centroids(u, d, FusionNorm::L2, fuse_tol * scale).row_partition()
}

fn mean_solution(x: &[f64], d: &DifferenceOperator) -> Vec<f64> {
    let mean = crate::data::column_means(x, d.n(), d.p());
    (0..d.n()).flat_map(|_| mean.iter().copied()).collect()
}

/// Solves at a single penalty weight, optionally warm-started from a
/// neighbouring solution.
pub fn solve_single(
    x: &[f64],
    d: &DifferenceOperator,
    lambda: f64,
    norm: FusionNorm,
    settings: &SolveSettings,
    warm_start: Option<&PathPoint>,
) -> Result<PathPoint> {
    settings.validate()?;
    check_vec("solve_single x", d.cols(), x.len())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("x[{pos}] is not finite")));
    }
    let p = d.p();
    let scale = data_scale(x, d.n(), p);
    let cert = settings.cert_tol * scale;
    let pb = Problem {
        x,
        d,
        lambda,
        norm,
        scale,
    };

    if lambda == 0.0 {
        let gamma = d.apply(x)?;
        return Ok(PathPoint {
            lambda,
            u_hat: x.to_vec(),
            partition: partition_from_gamma(&gamma, d),
            gamma_hat: gamma,
            rss: 0.0,
            iterations: 0,
            kkt_residual: 0.0,
            converged: true,
            dual: vec![0.0; d.rows()],
            rho: warm_start.map_or(settings.rho, |w| w.rho),
        });
    }

    // Above the loose bound nu = Dx/n is feasible, so the column means are optimal.
    let dx = d.apply(x)?;
    let inv_n = 1.0 / d.n() as f64;
    if norm.dual_norm(&dx, p) * inv_n <= lambda {
        let u = mean_solution(x, d);
        let nu: Vec<f64> = dx.iter().map(|v| v * inv_n).collect();
        let structure = FusedStructure::Rows(Partition::single_cluster(d.n()));
        let cand = candidate_from(&pb, u, &structure, &nu);
        return Ok(finish_point(&pb, cand, 0, warm_start.map_or(settings.rho, |w| w.rho), cert));
    }

    let mut st = match warm_start {
        Some(w) if w.u_hat.len() == d.cols() && w.gamma_hat.len() == d.rows() => {
            let rho = w.rho;
            let mut v = w.gamma_hat.clone();
            if w.lambda == 0.0 {
                v = dx.clone();
            }
            AdmmState {
                u: w.u_hat.clone(),
                w: w.dual.iter().map(|nu| nu / rho).collect(),
                v,
                rho,
            }
        }
        _ => AdmmState {
            u: x.to_vec(),
            v: dx.clone(),
            w: vec![0.0; d.rows()],
            rho: settings.rho,
        },
    };

    let mut used = 0;
    let mut tol = (settings.tol_primal, settings.tol_dual);
    let mut best: Option<Candidate> = None;
    for attempt in 0..=TOL_REFINEMENTS {
        let budget = settings.max_iter - used;
        if budget == 0 {
            break;
        }
        let (iters, _) = run_admm(&pb, &mut st, tol, budget, settings.adaptive_rho);
        used += iters;

        let hint: Vec<f64> = st.w.iter().map(|w| w * st.rho).collect();
        let base = FusedStructure::from_zeros(&st.v, d, norm);
        let mut tried: Vec<FusedStructure> = Vec::new();
        for t in std::iter::once(0.0).chain(MERGE_LADDER.iter().map(|f| f * scale)) {
            let structure = if t == 0.0 { base.clone() } else { base.merged_with_close(&st.u, d, t) };
            if tried.contains(&structure) {
                continue;
            }
            let cand = polished_candidate(&pb, &st.u, &structure, &hint, cert);
            tried.push(structure);
            let done = cand.kkt.residual <= cert;
            if best.as_ref().is_none_or(|b| cand.kkt.residual < b.kkt.residual) {
                best = Some(cand);
            }
            if done {
                break;
            }
        }
        if best.as_ref().is_some_and(|b| b.kkt.residual <= cert) || attempt == TOL_REFINEMENTS {
            break;
        }
        tol = (tol.0 * 1e-2, tol.1 * 1e-2);
    }
    let cand = best.unwrap_or_else(|| {
        let structure = FusedStructure::from_zeros(&st.v, d, norm);
        let hint: Vec<f64> = st.w.iter().map(|w| w * st.rho).collect();
        candidate_from(&pb, st.u.clone(), &structure, &hint)
    });
    Ok(finish_point(&pb, cand, used, st.rho, cert))
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    for (idx, &l) in grid.iter().enumerate() {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid[{idx}] = {l} is not a finite nonnegative value")));
        }
        if idx > 0 && l <= grid[idx - 1] {
            return Err(Error::InvalidArgument(format!(
                "grid must be strictly increasing, grid[{}] = {} >= grid[{idx}] = {l}",
                idx - 1,
                grid[idx - 1]
            )));
        }
    }
    Ok(())
}

/// Solves along an ascending grid, warm-starting each point from the previous.
/// Unconverged points are flagged rather than aborting the path.
pub fn solve_path(
    x: &[f64],
    d: &DifferenceOperator,
    norm: FusionNorm,
    grid: &[f64],
    settings: &SolveSettings,
) -> Result<PathSolution> {
    validate_grid(grid)?;
    let mut points: Vec<PathPoint> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let point = solve_single(x, d, lambda, norm, settings, points.last())?;
        points.push(point);
    }
    Ok(PathSolution {
        points,
        norm,
        layout: d.layout(),
    })
}

/// Inserts midpoints between neighbouring points whose cluster counts differ
/// by more than one, for up to `rounds` passes, so that intermediate
/// cluster counts the grid stepped over show up on the path.
pub fn refine_path(
    path: &mut PathSolution,
    x: &[f64],
    d: &DifferenceOperator,
    settings: &SolveSettings,
    rounds: usize,
) -> Result<()> {
    for _ in 0..rounds {
        let mut inserted = false;
        let mut next: Vec<PathPoint> = Vec::with_capacity(path.points.len());
        for (idx, pt) in path.points.iter().enumerate() {
            if let Some(prev) = idx.checked_sub(1).map(|j| &path.points[j]) {
                let mid = 0.5 * (prev.lambda + pt.lambda);
                if prev.k().abs_diff(pt.k()) > 1 && mid > prev.lambda && mid < pt.lambda {
                    next.push(solve_single(x, d, mid, path.norm, settings, Some(prev))?);
                    inserted = true;
                }
            }
            next.push(pt.clone());
        }
        path.points = next;
        if !inserted {
            break;
        }
    }
    Ok(())
}

/// `[0]` followed by `count` geometrically spaced weights from
/// `min_frac * lambda_upper` to `lambda_upper`.
pub fn default_grid(lambda_upper: f64, count: usize, min_frac: f64) -> Vec<f64> {
    let mut grid = vec![0.0];
    if lambda_upper <= 0.0 || count == 0 {
        return grid;
    }
    if count == 1 {
        grid.push(lambda_upper);
        return grid;
    }
    let lo = (min_frac * lambda_upper).ln();
    let hi = lambda_upper.ln();
    for k in 0..count {
        let t = k as f64 / (count - 1) as f64;
        grid.push((lo + t * (hi - lo)).exp());
    }
    *grid.last_mut().expect("non-empty") = lambda_upper;
    grid
}

/// `lambda * sum_{i<i'} sum_k 1(i in E_k, i' not in E_k)`: each pair split
/// across clusters counts once.
pub fn kmeans_penalty_value(partition: &Partition, lambda: f64) -> f64 {
    let sizes = partition.sizes();
    let n = partition.n();
    let within: usize = sizes.iter().map(|s| s * s.saturating_sub(1) / 2).sum();
    let between = n * n.saturating_sub(1) / 2 - within;
    lambda * between as f64
}
