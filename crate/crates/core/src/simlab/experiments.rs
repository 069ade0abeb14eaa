//! Replicated experiments: Rand-index curves against the number of
//! clusters, degrees-of-freedom accuracy along a path, and eBIC selection
//! of the number of clusters.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{hierarchical, kmeans, Linkage};
use crate::diffop::DifferenceOperator;
use crate::dof::{covariance_statistic, degrees_of_freedom, replicate_rng, MonteCarloDf};
use crate::error::{Error, Result};
use crate::lambda_range::{lambda_upper, LambdaSettings};
use crate::model_select::{ebic_with_df, path_df, select_from_curve};
use crate::norms::{FusionNorm, Metric};
use crate::partition::rand_index;
use crate::solver::{default_grid, refine_path, solve_path, PathSolution, SolveSettings};

use super::generators::{gen_gaussian, gen_shape, GaussianClusterSpec, ShapeClusterSpec, SimData};
use super::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ConvexL1,
    ConvexL2,
    Single,
    Average,
    Kmeans,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ConvexL1,
        Method::ConvexL2,
        Method::Single,
        Method::Average,
        Method::Kmeans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ConvexL1 => "convex_q1",
            Method::ConvexL2 => "convex_q2",
            Method::Single => "single",
            Method::Average => "average",
            Method::Kmeans => "kmeans",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum DataSpec {
    Gaussian(GaussianClusterSpec),
    Shape(ShapeClusterSpec),
}

impl DataSpec {
    pub fn n(&self) -> usize {
        match self {
            DataSpec::Gaussian(s) => s.n,
            DataSpec::Shape(s) => s.n(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            DataSpec::Gaussian(s) => s.seed,
            DataSpec::Shape(s) => s.seed,
        }
    }

    /// Replicate `rep` of the data.
    pub fn generate(&self, rep: u64) -> Result<SimData> {
        match self {
            DataSpec::Gaussian(s) => gen_gaussian(&s.with_stream(rep)),
            DataSpec::Shape(s) => gen_shape(&s.with_stream(rep)),
        }
    }
}

/// Path grid used by the replicated runners: zero plus `count` geometric
/// points from `min_frac * top` to `top = top_factor * lambda_upper`,
/// followed by `refine` rounds of midpoint insertion where the cluster
/// count jumps by more than one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub count: usize,
    pub min_frac: f64,
    pub top_factor: f64,
    pub refine: usize,
}

impl GridSpec {
    pub fn build(&self, lambda_upper: f64) -> Vec<f64> {
        default_grid(self.top_factor * lambda_upper, self.count, self.min_frac)
    }
}

fn convex_path(
    x: &[f64],
    d: &DifferenceOperator,
    norm: FusionNorm,
    grid: &GridSpec,
    settings: &SolveSettings,
) -> Result<PathSolution> {
    let lu = lambda_upper(x, d, norm, &LambdaSettings::default())?.lambda_upper;
    let mut path = solve_path(x, d, norm, &grid.build(lu), settings)?;
    refine_path(&mut path, x, d, settings, grid.refine)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandCurveConfig {
    pub grid: GridSpec,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    /// Largest cluster count swept for the baselines; `None` sweeps to `n`.
    pub max_k: Option<usize>,
    pub settings: SolveSettings,
}

impl Default for RandCurveConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec {
                count: 100,
                min_frac: 1e-3,
                top_factor: 1.05,
                refine: 8,
            },
            kmeans_restarts: 10,
            kmeans_max_iter: 100,
            max_k: None,
            settings: SolveSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RandCurveRow {
    pub method: Method,
    pub k: usize,
    pub mean_rand: f64,
    /// Replicates whose output contained exactly `k` clusters.
    pub reps_hit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepFailure {
    pub rep: usize,
    pub method: Method,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandCurves {
    pub reps: usize,
    pub rows: Vec<RandCurveRow>,
    pub failures: Vec<RepFailure>,
    pub unconverged_points: usize,
}

impl RandCurves {
    pub fn mean_rand(&self, method: Method, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.k == k)
            .map(|r| r.mean_rand)
    }

    pub fn max_rand(&self, method: Method) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.mean_rand)
            .reduce(f64::max)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["method", "k", "mean_rand", "reps_hit"]);
        for r in &self.rows {
            t.push(vec![r.method.name().into(), r.k.into(), r.mean_rand.into(), r.reps_hit.into()]);
        }
        t
    }
}

/// Per-`k` Rand index of one replicate; entry `k` averages every output with `k` clusters.
struct RepCurve {
    by_k: Vec<Option<f64>>,
    unconverged: usize,
}

fn curve_from(n: usize, parts: impl Iterator<Item = Result<(usize, f64)>>) -> Result<Vec<Option<f64>>> {
    let mut sum = vec![0.0; n + 1];
    let mut count = vec![0usize; n + 1];
    for item in parts {
        let (k, r) = item?;
        sum[k] += r;
        count[k] += 1;
    }
    Ok(sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { Some(s / c as f64) } else { None })
        .collect())
}

fn rep_curve(
    data: &SimData,
    method: Method,
    config: &RandCurveConfig,
    kmeans_seed: u64,
) -> Result<RepCurve> {
    let (n, p) = (data.x.n(), data.x.p());
    let truth = &data.truth;
    let max_k = config.max_k.unwrap_or(n).min(n);
    match method {
        Method::ConvexL1 | Method::ConvexL2 => {
            let norm = if method == Method::ConvexL1 {
                FusionNorm::L1
            } else {
                FusionNorm::L2
            };
            let d = DifferenceOperator::from_dims(n, p)?;
            let path = convex_path(data.x.as_vec(), &d, norm, &config.grid, &config.settings)?;
            let by_k = curve_from(
                n,
                path.points.iter().map(|pt| Ok((pt.k(), rand_index(&pt.partition, truth)?))),
            )?;
            Ok(RepCurve {
                by_k,
                unconverged: path.points.iter().filter(|pt| !pt.converged).count(),
            })
        }
        Method::Single | Method::Average => {
            let linkage = if method == Method::Single {
                Linkage::Single
            } else {
                Linkage::Average
            };
            let tree = hierarchical(&data.x, linkage, Metric::Euclidean)?;
            let by_k = curve_from(
                n,
                (1..=max_k).map(|k| {
                    let part = tree.cut_k(k)?;
                    Ok((k, rand_index(&part, truth)?))
                }),
            )?;
            Ok(RepCurve { by_k, unconverged: 0 })
        }
        Method::Kmeans => {
            let by_k = curve_from(
                n,
                (1..=max_k).map(|k| {
                    let fit = kmeans(
                        &data.x,
                        k,
                        config.kmeans_restarts,
                        config.kmeans_max_iter,
                        kmeans_seed.wrapping_add(k as u64),
                    )?;
                    Ok((fit.partition.k(), rand_index(&fit.partition, truth)?))
                }),
            )?;
            Ok(RepCurve { by_k, unconverged: 0 })
        }
    }
}

/// Replicates draw stream `rep` of the spec's seed; per-rep failures are
/// recorded and left out of the averages.
pub fn run_rand_curves(spec: &DataSpec, methods: &[Method], reps: usize, config: &RandCurveConfig) -> Result<RandCurves> {
    if reps == 0 || methods.is_empty() {
        return Err(Error::InvalidArgument("need reps >= 1 and at least one method".into()));
    }
    let n = spec.n();
    let per_rep: Vec<Result<Vec<Result<RepCurve>>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let data = spec.generate(rep as u64)?;
            let kmeans_seed = replicate_rng(spec.seed().wrapping_add(1), rep as u64).next_u64();
            Ok(methods
                .iter()
                .map(|&m| rep_curve(&data, m, config, kmeans_seed))
                .collect())
        })
        .collect();

    let mut sums = vec![vec![(0.0, 0usize); n + 1]; methods.len()];
    let mut failures = Vec::new();
    let mut unconverged_points = 0;
    for (rep, result) in per_rep.into_iter().enumerate() {
        let curves = match result {
            Ok(c) => c,
            Err(e) => {
                for &method in methods {
                    failures.push(RepFailure {
                        rep,
                        method,
                        message: e.to_string(),
                    });
                }
                continue;
            }
        };
        for (mi, curve) in curves.into_iter().enumerate() {
            match curve {
                Ok(c) => {
                    unconverged_points += c.unconverged;
                    for (k, v) in c.by_k.iter().enumerate() {
                        if let Some(v) = v {
                            sums[mi][k].0 += v;
                            sums[mi][k].1 += 1;
                        }
                    }
                }
                Err(e) => failures.push(RepFailure {
                    rep,
                    method: methods[mi],
                    message: e.to_string(),
                }),
            }
        }
    }
    let mut rows = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        for (k, &(s, c)) in sums[mi].iter().enumerate() {
            if c > 0 {
                rows.push(RandCurveRow {
                    method,
                    k,
                    mean_rand: s / c as f64,
                    reps_hit: c,
                });
            }
        }
    }
    Ok(RandCurves {
        reps,
        rows,
        failures,
        unconverged_points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DofFigureConfig {
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    /// Number of Gaussian clusters in the true means.
    pub k: usize,
    pub norm: FusionNorm,
    pub reps: usize,
    /// Zero plus `count` geometric points up to `top_factor` times the
    /// first replicate's `lambda_upper`.
    pub grid: GridSpec,
    pub seed: u64,
    pub settings: SolveSettings,
}

impl DofFigureConfig {
    pub fn new(norm: FusionNorm, seed: u64) -> Self {
        Self {
            n: 20,
            p: 20,
            sigma: 0.5,
            k: 2,
            norm,
            reps: 500,
            grid: GridSpec {
                count: 19,
                min_frac: 1e-2,
                top_factor: 1.5,
                refine: 0,
            },
            seed,
            settings: SolveSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DofRow {
    pub lambda: f64,
    /// Mean of the per-replicate estimates.
    pub df_hat: f64,
    pub df_hat_sd: f64,
    /// Mean of the covariance statistic.
    pub mc_mean: f64,
    pub mc_sd: f64,
    pub mc_se: f64,
    pub unconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DofFigure {
    pub norm: FusionNorm,
    pub reps: usize,
    pub rows: Vec<DofRow>,
}

impl DofFigure {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["lambda", "df_hat", "df_hat_sd", "mc_mean", "mc_sd", "mc_se", "unconverged"]);
        for r in &self.rows {
            t.push(vec![
                r.lambda.into(),
                r.df_hat.into(),
                r.df_hat_sd.into(),
                r.mc_mean.into(),
                r.mc_sd.into(),
                r.mc_se.into(),
                r.unconverged.into(),
            ]);
        }
        t
    }
}

/// The true means come from stream 0 of the seed; replicate `r` adds
/// noise drawn from stream `r + 1`.
pub fn run_dof_figure(config: &DofFigureConfig) -> Result<DofFigure> {
    if config.reps < 2 || !(config.sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need reps >= 2 and sigma > 0, got reps={}, sigma={}",
            config.reps, config.sigma
        )));
    }
    let (n, p, sigma) = (config.n, config.p, config.sigma);
    let spec = GaussianClusterSpec::new(config.k, n, p, 0.0, config.seed)?;
    let u_true = gen_gaussian(&spec)?.signal;
    let d = DifferenceOperator::from_dims(n, p)?;
    let draw = |rep: usize| -> Vec<f64> {
        let mut rng = replicate_rng(config.seed, rep as u64 + 1);
        u_true
            .iter()
            .map(|u| {
                let z: f64 = StandardNormal.sample(&mut rng);
                u + sigma * z
            })
            .collect()
    };
    let pilot = lambda_upper(&draw(0), &d, config.norm, &LambdaSettings::default())?.lambda_upper;
    let grid = config.grid.build(pilot);

    let per_rep: Result<Vec<Vec<(f64, f64, bool)>>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let x = draw(rep);
            let path = solve_path(&x, &d, config.norm, &grid, &config.settings)?;
            path.points
                .iter()
                .map(|pt| {
                    Ok((
                        covariance_statistic(&pt.u_hat, &x, &u_true, sigma),
                        degrees_of_freedom(pt, &d, config.norm)?,
                        pt.converged,
                    ))
                })
                .collect()
        })
        .collect();
    let per_rep = per_rep?;
    let rows = grid
        .iter()
        .enumerate()
        .map(|(g, &lambda)| {
            let cov: Vec<f64> = per_rep.iter().map(|r| r[g].0).collect();
            let est: Vec<f64> = per_rep.iter().map(|r| r[g].1).collect();
            let mc = MonteCarloDf::from_samples(&cov);
            let df = MonteCarloDf::from_samples(&est);
            DofRow {
                lambda,
                df_hat: df.mean,
                df_hat_sd: df.sd,
                mc_mean: mc.mean,
                mc_sd: mc.sd,
                mc_se: mc.standard_error(),
                unconverged: per_rep.iter().filter(|r| !r[g].2).count(),
            }
        })
        .collect();
    Ok(DofFigure {
        norm: config.norm,
        reps: config.reps,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Config {
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub reps: usize,
    pub gammas: Vec<f64>,
    pub grid: GridSpec,
    pub seed: u64,
    pub settings: SolveSettings,
}

impl Table1Config {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self {
            n: 20,
            p: 20,
            sigma: 0.5,
            reps,
            gammas: vec![0.0, 0.5, 0.75, 1.0],
            grid: GridSpec {
                count: 100,
                min_frac: 1e-3,
                top_factor: 1.05,
                refine: 8,
            },
            seed,
            settings: SolveSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Row {
    /// True number of clusters of the setting.
    pub k_true: usize,
    pub gamma: f64,
    pub proportion_correct: f64,
    pub mean_rand: f64,
    /// Replicates that completed.
    pub reps: usize,
    pub failures: usize,
}

pub fn table1_to_table(rows: &[Table1Row]) -> Table {
    let mut t = Table::new(&["setting", "gamma", "proportion_correct", "mean_rand", "reps", "failures"]);
    for r in rows {
        t.push(vec![
            format!("gaussian_k{}", r.k_true).into(),
            r.gamma.into(),
            r.proportion_correct.into(),
            r.mean_rand.into(),
            r.reps.into(),
            r.failures.into(),
        ]);
    }
    t
}

/// Selection of the number of clusters by eBIC on `l2` paths, for two and
/// three Gaussian clusters.
pub fn run_table1(config: &Table1Config) -> Result<Vec<Table1Row>> {
    if config.reps == 0 || config.gammas.is_empty() {
        return Err(Error::InvalidArgument("need reps >= 1 and at least one gamma".into()));
    }
    if let Some(g) = config.gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::InvalidArgument(format!("eBIC weight must be in [0, 1], got {g}")));
    }
    let d = DifferenceOperator::from_dims(config.n, config.p)?;
    let mut rows = Vec::new();
    for k_true in [2usize, 3] {
        let spec = GaussianClusterSpec::new(k_true, config.n, config.p, config.sigma, config.seed)?;
        // per replicate and gamma: (selected k, Rand index of the selection)
        let per_rep: Vec<Result<Vec<(usize, f64)>>> = (0..config.reps)
            .into_par_iter()
            .map(|rep| {
                let data = gen_gaussian(&spec.with_stream(rep as u64))?;
                let path = convex_path(data.x.as_vec(), &d, FusionNorm::L2, &config.grid, &config.settings)?;
                let dfs = path_df(&path, &d)?;
                config
                    .gammas
                    .iter()
                    .map(|&g| {
                        let sel = select_from_curve(&path, &ebic_with_df(&path, &dfs, g)?)?;
                        Ok((sel.k, rand_index(&sel.partition, &data.truth)?))
                    })
                    .collect()
            })
            .collect();
        let done: Vec<&Vec<(usize, f64)>> = per_rep.iter().filter_map(|r| r.as_ref().ok()).collect();
        let failures = config.reps - done.len();
        for (gi, &gamma) in config.gammas.iter().enumerate() {
            let count = done.len().max(1) as f64;
            let correct = done.iter().filter(|r| r[gi].0 == k_true).count() as f64;
            let rand_sum: f64 = done.iter().map(|r| r[gi].1).sum();
            rows.push(Table1Row {
                k_true,
                gamma,
                proportion_correct: if done.is_empty() { f64::NAN } else { correct / count },
                mean_rand: if done.is_empty() { f64::NAN } else { rand_sum / count },
                reps: done.len(),
                failures,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::generators::Shape;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::from_name(m.name()), Some(m));
        }
        assert_eq!(Method::from_name("spectral"), None);
    }

    #[test]
    fn noiseless_gaussian_recovered_by_every_method() {
        let spec = DataSpec::Gaussian(GaussianClusterSpec::new(2, 12, 3, 0.0, 4).unwrap());
        assert_eq!(spec.generate(0).unwrap().truth.k(), 2);
        let curves = run_rand_curves(&spec, &Method::ALL, 2, &RandCurveConfig::default()).unwrap();
        assert!(curves.failures.is_empty());
        for m in Method::ALL {
            assert_eq!(curves.mean_rand(m, 2), Some(1.0), "{m:?}");
            assert_eq!(curves.max_rand(m), Some(1.0));
        }
    }

    #[test]
    fn singleton_rand_matches_pair_count() {
        // 4 + 4 points: singletons agree on the 16 cross pairs out of 28
        let spec = DataSpec::Shape(ShapeClusterSpec {
            points_per_cluster: 4,
            ..ShapeClusterSpec::new(Shape::TwoCircles, 1)
        });
        let curves = run_rand_curves(&spec, &[Method::Single, Method::Kmeans], 3, &RandCurveConfig::default()).unwrap();
        assert_eq!(curves.mean_rand(Method::Single, 8), Some(16.0 / 28.0));
        assert_eq!(curves.mean_rand(Method::Kmeans, 8), Some(16.0 / 28.0));
        assert_eq!(curves.mean_rand(Method::Single, 1), Some(12.0 / 28.0));
        let t = curves.to_table();
        assert_eq!(t.columns, vec!["method", "k", "mean_rand", "reps_hit"]);
    }

    #[test]
    fn dof_figure_endpoints() {
        for norm in [FusionNorm::L1, FusionNorm::L2] {
            let mut cfg = DofFigureConfig::new(norm, 3);
            cfg.n = 6;
            cfg.p = 3;
            cfg.reps = 20;
            cfg.grid.count = 5;
            let fig = run_dof_figure(&cfg).unwrap();
            assert_eq!(fig.rows.len(), 6);
            assert_eq!(fig.rows[0].lambda, 0.0);
            assert_eq!(fig.rows[0].df_hat, 18.0);
            assert_eq!(fig.rows[0].df_hat_sd, 0.0);
            assert_eq!(fig.rows.last().unwrap().df_hat, 3.0);
            assert_eq!(fig.to_table().rows.len(), 6);
        }
    }

    #[test]
    fn table1_shape_and_determinism() {
        let mut cfg = Table1Config::new(3, 8);
        cfg.n = 8;
        cfg.p = 4;
        cfg.grid.count = 30;
        let a = run_table1(&cfg).unwrap();
        assert_eq!(a.len(), 8);
        assert!(a.iter().all(|r| r.reps + r.failures == 3));
        assert!(a.iter().all(|r| (0.0..=1.0).contains(&r.proportion_correct)));
        assert_eq!(a, run_table1(&cfg).unwrap());
        cfg.gammas = vec![1.5];
        assert!(run_table1(&cfg).is_err());
    }
}
