//! Acceptance run: one PASS/FAIL line per criterion, then a summary.
//! Exits non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fusepath::baselines::{hierarchical, Linkage};
use fusepath::dof::{degrees_of_freedom, df1, df1_unique_count};
use fusepath::lambda_range::{lambda_upper, LambdaSettings};
use fusepath::simlab::{
    check_prediction_bound, gen_gaussian, run_dof_figure, run_rand_curves, run_table1, DataSpec, DofFigureConfig,
    GaussianClusterSpec, Method, RandCurveConfig, RandCurves, Shape, ShapeClusterSpec, Table1Config,
};
use fusepath::threshold::threshold_solve;
use fusepath::{
    data_scale, default_grid, solve_path, solve_single, DataMatrix, DifferenceOperator, FusionNorm, Metric, PathPoint,
    SolveSettings,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_611;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn norms() -> [FusionNorm; 2] {
    [FusionNorm::L1, FusionNorm::L2]
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize, spread: f64) -> DataMatrix {
    let v: Vec<f64> = (0..n * p).map(|_| rng.random_range(-spread..spread)).collect();
    DataMatrix::new(n, p, v).unwrap()
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn operator_laws() -> Outcome {
    const TOL: f64 = 1e-8;
    let mut worst = 0.0f64;
    for n in 2..=8 {
        for p in 1..=3 {
            let d = DifferenceOperator::from_dims(n, p).unwrap();
            let m = d.to_dense().unwrap();
            let mut g = DMatrix::zeros(d.cols(), d.rows());
            for pair in 0..d.rows() {
                let mut e = vec![0.0; d.rows()];
                e[pair] = 1.0;
                g.set_column(pair, &DVector::from_vec(d.pseudo_inverse_apply(&e).unwrap()));
            }
            let dg = &m * &g;
            let gd = &g * &m;
            let errs = [
                max_abs(&(&dg * &m - &m)),
                max_abs(&(&gd * &g - &g)),
                max_abs(&(&dg - dg.transpose())),
                max_abs(&(&gd - gd.transpose())),
                max_abs(&(&g - m.transpose() / n as f64)),
            ];
            let svd = m.clone().svd(false, false);
            let nonzero: Vec<f64> = svd.singular_values.iter().copied().filter(|s| *s > 1e-6).collect();
            if nonzero.len() != p * (n - 1) || d.spectrum_check().unwrap().rank != p * (n - 1) {
                return Outcome::new(false, format!("rank wrong at n={n} p={p}"));
            }
            let sv_err = nonzero.iter().fold(0.0f64, |a, s| a.max((s - (n as f64).sqrt()).abs()));
            worst = errs.iter().copied().fold(worst, f64::max).max(sv_err);
        }
    }
    Outcome::new(worst <= TOL, format!("max identity/singular-value error {worst:.2e} (tol {TOL:.0e})"))
}

fn single_linkage_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 2);
    let mut agree = 0;
    let total = 500;
    for case in 0..total {
        let n = rng.random_range(2..=12);
        let p = rng.random_range(1..=4);
        let norm = norms()[case % 2];
        let tied = case % 4 >= 2;
        let x = if tied {
            let v: Vec<f64> = (0..n * p).map(|_| rng.random_range(0..4) as f64).collect();
            DataMatrix::new(n, p, v).unwrap()
        } else {
            random_matrix(&mut rng, n, p, 2.0)
        };
        let metric = match norm {
            FusionNorm::L1 => Metric::Chebyshev,
            FusionNorm::L2 => Metric::Euclidean,
        };
        let lambda = if tied {
            // an existing pairwise distance, so some pairs sit exactly on the threshold
            let (i, k) = (rng.random_range(0..n), rng.random_range(0..n));
            metric.distance(x.row(i), x.row(k))
        } else {
            rng.random_range(0.0..3.0)
        };
        let d = DifferenceOperator::from_dims(n, p).unwrap();
        let thr = threshold_solve(x.as_vec(), &d, lambda, norm).unwrap();
        let cut = hierarchical(&x, Linkage::Single, metric).unwrap().cut(lambda);
        if thr.partition == cut {
            agree += 1;
        }
    }
    Outcome::new(agree == total, format!("{agree}/{total} partitions agree"))
}

fn lambda_range() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 3);
    let settings = SolveSettings::default();
    let total = 100;
    let mut ok = 0;
    let mut loose_violations = 0;
    for case in 0..total {
        let n = rng.random_range(2..=8);
        let p = rng.random_range(1..=3);
        let norm = norms()[case % 2];
        let x = random_matrix(&mut rng, n, p, 3.0);
        let d = DifferenceOperator::from_dims(n, p).unwrap();
        let lu = lambda_upper(x.as_vec(), &d, norm, &LambdaSettings::default()).unwrap();
        if lu.lambda_upper > lu.loose_bound * (1.0 + 1e-12) {
            loose_violations += 1;
        }
        let below = solve_single(x.as_vec(), &d, 0.98 * lu.lambda_upper, norm, &settings, None).unwrap();
        let above = solve_single(x.as_vec(), &d, 1.02 * lu.lambda_upper, norm, &settings, None).unwrap();
        if below.k() >= 2 && above.k() == 1 {
            ok += 1;
        }
    }
    Outcome::new(
        ok == total && loose_violations == 0,
        format!("{ok}/{total} bracket the fusion point; {loose_violations} above the loose bound"),
    )
}

/// `||x - u - D^T nu||_inf + max(0, max_C ||nu_C||_s / lambda - 1)` from the
/// returned dual certificate.
fn certificate_residual(x: &[f64], d: &DifferenceOperator, norm: FusionNorm, pt: &PathPoint) -> f64 {
    let dtnu = d.apply_adjoint(&pt.dual).unwrap();
    let stationarity = x
        .iter()
        .zip(&pt.u_hat)
        .zip(&dtnu)
        .fold(0.0f64, |a, ((xi, ui), ti)| a.max((xi - ui - ti).abs()));
    if pt.lambda == 0.0 {
        return stationarity;
    }
    let mut worst = 0.0f64;
    for pair in 0..d.num_pairs() {
        let blk = &pt.dual[d.block(pair)];
        let s = match norm {
            FusionNorm::L1 => blk.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            FusionNorm::L2 => blk.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        worst = worst.max(s / pt.lambda - 1.0);
    }
    stationarity + worst.max(0.0)
}

fn objective_1d(x: &[f64], u: &[f64], lambda: f64) -> f64 {
    let fit: f64 = x.iter().zip(u).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
    let mut pen = 0.0;
    for i in 0..u.len() {
        for k in i + 1..u.len() {
            pen += (u[i] - u[k]).abs();
        }
    }
    fit + lambda * pen
}

/// Exact solution for three scalar observations: each contiguous grouping of
/// the sorted values gives a stationary candidate, and the optimum is the
/// candidate with the smallest objective.
fn three_point_oracle(x: &[f64], lambda: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let sorted: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let groupings: [&[std::ops::Range<usize>]; 4] = [&[0..3], &[0..1, 1..3], &[0..2, 2..3], &[0..1, 1..2, 2..3]];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for groups in groupings {
        let mut u = vec![0.0; 3];
        for g in groups {
            let mean = sorted[g.clone()].iter().sum::<f64>() / g.len() as f64;
            let below = g.start as f64;
            let above = (3 - g.end) as f64;
            for slot in g.clone() {
                u[slot] = mean - lambda * (below - above);
            }
        }
        let f = objective_1d(&sorted, &u, lambda);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, u));
        }
    }
    let sorted_u = best.unwrap().1;
    let mut out = vec![0.0; 3];
    for (slot, &i) in order.iter().enumerate() {
        out[i] = sorted_u[slot];
    }
    out
}

fn two_point_oracle(x: &[f64], p: usize, lambda: f64, norm: FusionNorm) -> Vec<f64> {
    let (a, b) = x.split_at(p);
    let mut u = x.to_vec();
    let diff: Vec<f64> = a.iter().zip(b).map(|(s, t)| s - t).collect();
    match norm {
        FusionNorm::L1 => {
            for j in 0..p {
                let shift = lambda.min(diff[j].abs() / 2.0) * diff[j].signum();
                u[j] -= shift;
                u[p + j] += shift;
            }
        }
        FusionNorm::L2 => {
            let len = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 0.0 {
                let step = lambda.min(len / 2.0) / len;
                for j in 0..p {
                    u[j] -= step * diff[j];
                    u[p + j] += step * diff[j];
                }
            }
        }
    }
    u
}

fn solver_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 4);
    let settings = SolveSettings::default();
    let mut certified = 0;
    let mut total_points = 0;
    let mut kkt_fail = 0;
    for case in 0..40 {
        let n = rng.random_range(5..=15);
        let p = rng.random_range(1..=4);
        let norm = norms()[case % 2];
        let x = random_matrix(&mut rng, n, p, 2.0);
        let d = DifferenceOperator::from_dims(n, p).unwrap();
        let lu = lambda_upper(x.as_vec(), &d, norm, &LambdaSettings::default()).unwrap();
        let grid = default_grid(lu.lambda_upper, 25, 1e-3);
        let path = solve_path(x.as_vec(), &d, norm, &grid, &settings).unwrap();
        let scale = data_scale(x.as_vec(), n, p);
        for pt in &path.points {
            total_points += 1;
            if pt.converged {
                certified += 1;
                if certificate_residual(x.as_vec(), &d, norm, pt) > 1e-6 * scale {
                    kkt_fail += 1;
                }
            }
        }
    }

    let mut closed_err = 0.0f64;
    for case in 0..200 {
        let norm = norms()[case % 2];
        let (n, p) = if case % 4 < 2 { (2, rng.random_range(1..=3)) } else { (3, 1) };
        let x = random_matrix(&mut rng, n, p, 2.0);
        let d = DifferenceOperator::from_dims(n, p).unwrap();
        let lambda = rng.random_range(0.0..2.5);
        let pt = solve_single(x.as_vec(), &d, lambda, norm, &settings, None).unwrap();
        let want = if n == 2 {
            two_point_oracle(x.as_vec(), p, lambda, norm)
        } else {
            three_point_oracle(x.as_vec(), lambda)
        };
        for (a, b) in pt.u_hat.iter().zip(&want) {
            closed_err = closed_err.max((a - b).abs());
        }
    }
    Outcome::new(
        kkt_fail == 0 && closed_err <= 1e-6,
        format!(
            "{certified}/{total_points} points certified, {kkt_fail} above 1e-6*scale; closed-form error {closed_err:.2e} (tol 1e-6)"
        ),
    )
}

fn df_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 5);
    let settings = SolveSettings::default();
    let mut mismatches = 0;
    let mut points = 0;
    for _ in 0..50 {
        let n = rng.random_range(3..=12);
        let p = rng.random_range(1..=4);
        let x = random_matrix(&mut rng, n, p, 2.0);
        let d = DifferenceOperator::from_dims(n, p).unwrap();
        let lu = lambda_upper(x.as_vec(), &d, FusionNorm::L1, &LambdaSettings::default()).unwrap();
        let grid = default_grid(lu.lambda_upper, 20, 1e-3);
        let path = solve_path(x.as_vec(), &d, FusionNorm::L1, &grid, &settings).unwrap();
        for pt in &path.points {
            points += 1;
            if (df1(pt, &d).unwrap() - df1_unique_count(pt) as f64).abs() > 1e-8 {
                mismatches += 1;
            }
        }
    }
    let mut endpoint_err = 0.0f64;
    for norm in norms() {
        for _ in 0..10 {
            let (n, p) = (rng.random_range(3..=10), rng.random_range(1..=4));
            let x = random_matrix(&mut rng, n, p, 2.0);
            let d = DifferenceOperator::from_dims(n, p).unwrap();
            let lu = lambda_upper(x.as_vec(), &d, norm, &LambdaSettings::default()).unwrap();
            let zero = solve_single(x.as_vec(), &d, 0.0, norm, &settings, None).unwrap();
            let fused = solve_single(x.as_vec(), &d, 1.5 * lu.lambda_upper + 1.0, norm, &settings, None).unwrap();
            endpoint_err = endpoint_err
                .max((degrees_of_freedom(&zero, &d, norm).unwrap() - (n * p) as f64).abs())
                .max((degrees_of_freedom(&fused, &d, norm).unwrap() - p as f64).abs());
        }
    }
    Outcome::new(
        mismatches == 0 && endpoint_err <= 1e-9,
        format!("{mismatches}/{points} trace/count mismatches; endpoint error {endpoint_err:.2e}"),
    )
}

fn df_unbiasedness() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for norm in norms() {
        let mut cfg = DofFigureConfig::new(norm, SEED ^ 6);
        cfg.n = 10;
        cfg.p = 10;
        cfg.sigma = 0.5;
        cfg.reps = 500;
        let fig = run_dof_figure(&cfg).unwrap();
        let within = fig
            .rows
            .iter()
            .filter(|r| (r.df_hat - r.mc_mean).abs() <= 3.0 * r.mc_se)
            .count();
        let frac = within as f64 / fig.rows.len() as f64;
        pass &= fig.rows.len() == 20 && frac >= 0.90;
        details.push(format!("q={}: {within}/{} within 3 SE", norm.q(), fig.rows.len()));
    }
    Outcome::new(pass, details.join("; "))
}

fn table1() -> Outcome {
    let rows = run_table1(&Table1Config::new(100, SEED ^ 7)).unwrap();
    let prop = |k: usize, g: f64| {
        rows.iter()
            .find(|r| r.k_true == k && r.gamma == g)
            .map(|r| r.proportion_correct)
            .unwrap()
    };
    let k2 = prop(2, 1.0);
    let k3_bic = prop(3, 0.0);
    let k3: Vec<f64> = rows.iter().filter(|r| r.k_true == 3).map(|r| r.proportion_correct).collect();
    let inversions = k3.windows(2).filter(|w| w[1] < w[0]).count();
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    Outcome::new(
        k2 >= 0.90 && k3_bic <= 0.30 && inversions <= 1,
        format!(
            "K=2 gamma=1: {k2:.2} (need >= 0.90); K=3 gamma=0: {k3_bic:.2} (need <= 0.30); K=3 by gamma {k3:?}, {inversions} inversions; {failures} failed reps"
        ),
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("none".into(), |v| format!("{v:.3}"))
}

fn rand_figures() -> Outcome {
    let cfg = RandCurveConfig::default();
    let reps = 50;
    let gaussian = |sigma: f64, seed: u64| DataSpec::Gaussian(GaussianClusterSpec::new(2, 30, 30, sigma, seed).unwrap());

    let g1 = run_rand_curves(&gaussian(1.0, SEED ^ 81), &Method::ALL, reps, &cfg).unwrap();
    let (cv, sl) = (g1.max_rand(Method::ConvexL2), g1.max_rand(Method::Single));
    let a = matches!((cv, sl), (Some(c), Some(s)) if (c - s).abs() <= 0.05);
    let a_txt = format!("(a) max Rand convex_q2 {} vs single {}", fmt_opt(cv), fmt_opt(sl));

    let g2 = run_rand_curves(&gaussian(2.0, SEED ^ 82), &[Method::ConvexL2, Method::Kmeans], reps, &cfg).unwrap();
    let (cv2, km2) = (g2.mean_rand(Method::ConvexL2, 2), g2.mean_rand(Method::Kmeans, 2));
    let b = cv2.is_some_and(|v| v <= 0.7) && km2.is_some_and(|v| v >= 0.9);
    let b_txt = format!("(b) Rand at 2 clusters convex_q2 {} (<= 0.7), kmeans {} (>= 0.9)", fmt_opt(cv2), fmt_opt(km2));

    let shape_methods = [Method::ConvexL2, Method::Single, Method::Average, Method::Kmeans];
    let mut c = true;
    let mut c_txt = Vec::new();
    for (shape, salt) in [(Shape::TwoCircles, 83), (Shape::TwoHalfMoons, 84)] {
        let spec = DataSpec::Shape(ShapeClusterSpec::new(shape, SEED ^ salt));
        let curves: RandCurves = run_rand_curves(&spec, &shape_methods, reps, &cfg).unwrap();
        let at2 = |m| curves.mean_rand(m, 2);
        let others = at2(Method::Average).unwrap_or(0.0).max(at2(Method::Kmeans).unwrap_or(0.0));
        let good = |m| at2(m).is_some_and(|v| v >= 0.95 && v > others);
        c &= good(Method::ConvexL2) && good(Method::Single);
        c_txt.push(format!(
            "{}: convex_q2 {} single {} average {} kmeans {}",
            shape.name(),
            fmt_opt(at2(Method::ConvexL2)),
            fmt_opt(at2(Method::Single)),
            fmt_opt(at2(Method::Average)),
            fmt_opt(at2(Method::Kmeans))
        ));
    }

    let q1 = g1.max_rand(Method::ConvexL1);
    let d = q1.is_some_and(|v| {
        Method::ALL
            .iter()
            .filter(|m| **m != Method::ConvexL1)
            .all(|m| g1.max_rand(*m).is_some_and(|o| v <= o))
    });
    let d_txt = format!("(d) max Rand convex_q1 {}", fmt_opt(q1));

    let parts = [(a, a_txt), (b, b_txt), (c, format!("(c) {}", c_txt.join("; "))), (d, d_txt)];
    let pass = parts.iter().all(|(ok, _)| *ok);
    let detail = parts
        .iter()
        .map(|(ok, t)| format!("{} {t}", if *ok { "ok" } else { "FAILED" }))
        .collect::<Vec<_>>()
        .join(" | ");
    Outcome::new(pass, detail)
}

fn prediction_bounds() -> Outcome {
    let (n, p, sigma) = (20, 20, 0.5);
    let truth = gen_gaussian(&GaussianClusterSpec::new(2, n, p, 0.0, SEED ^ 9).unwrap()).unwrap();
    let d = DifferenceOperator::from_dims(n, p).unwrap();
    let mut pass = true;
    let mut details = Vec::new();
    for norm in norms() {
        let report = check_prediction_bound(&truth.signal, &d, sigma, norm, 100, 1.0, SEED ^ 9, &SolveSettings::default())
            .unwrap();
        pass &= report.holds() >= 95;
        details.push(format!("q={}: holds in {}/100", norm.q(), report.holds()));
    }
    Outcome::new(pass, details.join("; "))
}

fn run_cli(args: &[&str], out: &Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_fusepath"))
        .args(args)
        .arg("--out")
        .arg(out)
        .status()
        .expect("binary runs");
    assert!(matches!(status.code(), Some(0) | Some(2)), "{args:?} exited with {status}");
    let mut bytes = std::fs::read(out).unwrap();
    let mut sidecar = out.as_os_str().to_owned();
    sidecar.push(".config.json");
    if let Ok(extra) = std::fs::read(&sidecar) {
        bytes.extend(extra);
    }
    bytes
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 10);
    let rows: Vec<String> = (0..15)
        .map(|i| {
            let c = if i < 8 { -1.5 } else { 1.5 };
            (0..3)
                .map(|_| format!("{:.6}", c + rng.random_range(-1.0..1.0)))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    let input = dir.path().join("x.csv");
    std::fs::write(&input, rows.join("\n")).unwrap();
    let input = input.to_str().unwrap();
    let invocations: Vec<Vec<&str>> = vec![
        vec!["fit-path", "--input", input, "--q", "2", "--refine", "2"],
        vec!["fit-path", "--input", input, "--q", "1", "--format", "csv"],
        vec!["lambda-max", "--input", input],
        vec!["dof", "--input", input, "--q", "2"],
        vec!["select-ebic", "--input", input, "--gamma-ebic", "1"],
        vec!["experiment", "rand-curves", "--seed", "5", "--reps", "3", "--n", "12", "--p", "4"],
        vec!["experiment", "rand-curves", "--seed", "5", "--reps", "2", "--data", "two-half-moons", "--methods", "single,kmeans"],
        vec!["experiment", "dof-figure", "--seed", "5", "--reps", "20", "--n", "8", "--p", "4", "--q", "1"],
        vec!["experiment", "table1", "--seed", "5", "--reps", "2", "--format", "csv"],
        vec!["experiment", "pred-bound", "--seed", "5", "--reps", "5", "--q", "2"],
    ];
    let mut identical = 0;
    for (i, args) in invocations.iter().enumerate() {
        let a = run_cli(args, &dir.path().join(format!("{i}a.out")));
        let b = run_cli(args, &dir.path().join(format!("{i}b.out")));
        if a == b && !a.is_empty() {
            identical += 1;
        }
    }
    Outcome::new(
        identical == invocations.len(),
        format!("{identical}/{} invocations byte-identical", invocations.len()),
    )
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Check, Option<Duration>); 10] = [
        ("operator laws", operator_laws, Some(Duration::from_secs(5))),
        ("single-linkage equivalence", single_linkage_equivalence, Some(Duration::from_secs(10))),
        ("fusion threshold range", lambda_range, Some(Duration::from_secs(120))),
        ("solver correctness", solver_correctness, None),
        ("df consistency", df_consistency, None),
        ("df unbiasedness", df_unbiasedness, Some(Duration::from_secs(600))),
        ("eBIC cluster-count table", table1, Some(Duration::from_secs(1800))),
        ("Rand index figures", rand_figures, None),
        ("prediction bounds", prediction_bounds, None),
        ("CLI determinism", determinism, None),
    ];
    let mut passed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_budget = budget.is_none_or(|b| elapsed <= b);
        let pass = outcome.pass && in_budget;
        passed += pass as usize;
        let budget_txt = match budget {
            Some(b) if !in_budget => format!(", over the {}s budget", b.as_secs()),
            _ => String::new(),
        };
        println!(
            "{} {:>2}. {name}: {} [{:.1}s{budget_txt}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
    if passed != criteria.len() {
        std::process::exit(1);
    }
}
