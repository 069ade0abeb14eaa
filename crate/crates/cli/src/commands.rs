//! Subcommand implementations. Each returns whether a numerical warning
//! (an unconverged solve) occurred.

use std::path::PathBuf;

use fusepath::dof::{degrees_of_freedom, df1, df2, DF1_DENSE_LIMIT, DF2_DENSE_LIMIT};
use fusepath::lambda_range::{lambda_upper, LambdaSettings, LambdaStatus};
use fusepath::model_select::{ebic_with_df, path_df, select_from_curve};
use fusepath::simlab::{
    check_prediction_bound, gen_gaussian, run_dof_figure, run_rand_curves, run_table1, table1_to_table, Cell,
    DataSpec, DofFigureConfig, GaussianClusterSpec, Method, RandCurveConfig, Shape, ShapeClusterSpec, Table,
    Table1Config,
};
use fusepath::{
    default_grid, refine_path, solve_path, DataMatrix, DifferenceOperator, FusionNorm, PathSolution, SolveSettings,
};
use serde_json::{json, Map, Value};

use crate::input::read_matrix;
use crate::output::{emit, render_json, table_to_csv, table_to_json, Format};

pub struct Output {
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl Output {
    fn write_json(&self, value: &Value) -> Result<(), String> {
        emit(&render_json(value), self.out.as_deref())
    }

    fn write_table(&self, table: &Table, meta: Value) -> Result<(), String> {
        match self.format {
            Format::Csv => emit(&table_to_csv(table)?, self.out.as_deref()),
            Format::Json => {
                let mut obj = match meta {
                    Value::Object(m) => m,
                    _ => Map::new(),
                };
                obj.insert("rows".into(), table_to_json(table));
                self.write_json(&Value::Object(obj))
            }
        }
    }
}

pub struct GridChoice {
    pub lambdas: Option<Vec<f64>>,
    pub count: usize,
    pub min_frac: f64,
    pub refine: usize,
}

pub struct Problem {
    pub input: PathBuf,
    pub norm: FusionNorm,
    pub settings: SolveSettings,
}

struct Fitted {
    x: DataMatrix,
    d: DifferenceOperator,
    path: PathSolution,
    lambda_upper: Option<f64>,
}

fn fit(problem: &Problem, grid: &GridChoice) -> Result<Fitted, String> {
    let x = read_matrix(&problem.input)?;
    let d = DifferenceOperator::from_dims(x.n(), x.p()).map_err(|e| e.to_string())?;
    let (lambdas, lu) = match &grid.lambdas {
        Some(l) => (l.clone(), None),
        None => {
            let lu = lambda_upper(x.as_vec(), &d, problem.norm, &LambdaSettings::default())
                .map_err(|e| e.to_string())?
                .lambda_upper;
            (default_grid(lu, grid.count, grid.min_frac), Some(lu))
        }
    };
    let mut path =
        solve_path(x.as_vec(), &d, problem.norm, &lambdas, &problem.settings).map_err(|e| e.to_string())?;
    refine_path(&mut path, x.as_vec(), &d, &problem.settings, grid.refine).map_err(|e| e.to_string())?;
    Ok(Fitted {
        x,
        d,
        path,
        lambda_upper: lu,
    })
}

fn labels_text(labels: &[usize]) -> String {
    labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
}

fn header(command: &str, norm: FusionNorm, x: &DataMatrix) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("command".into(), command.into());
    m.insert("q".into(), norm.q().into());
    m.insert("n".into(), x.n().into());
    m.insert("p".into(), x.p().into());
    m
}

fn unconverged(path: &PathSolution) -> bool {
    !path.all_converged()
}

pub fn fit_path(problem: &Problem, grid: &GridChoice, output: &Output) -> Result<bool, String> {
    let f = fit(problem, grid)?;
    let dfs = path_df(&f.path, &f.d).map_err(|e| e.to_string())?;
    let mut table = Table::new(&["lambda", "k", "rss", "df", "kkt_residual", "converged", "iterations", "labels"]);
    for (pt, df) in f.path.points.iter().zip(&dfs) {
        table.push(vec![
            pt.lambda.into(),
            pt.k().into(),
            pt.rss.into(),
            (*df).into(),
            pt.kkt_residual.into(),
            pt.converged.into(),
            pt.iterations.into(),
            labels_text(pt.partition.labels()).into(),
        ]);
    }
    match output.format {
        Format::Csv => output.write_table(&table, Value::Null)?,
        Format::Json => {
            let mut m = header("fit-path", problem.norm, &f.x);
            m.insert("lambda_upper".into(), f.lambda_upper.map_or(Value::Null, Value::from));
            let points: Vec<Value> = f
                .path
                .points
                .iter()
                .zip(&dfs)
                .map(|(pt, df)| {
                    json!({
                        "lambda": pt.lambda,
                        "k": pt.k(),
                        "rss": pt.rss,
                        "df": df,
                        "kkt_residual": pt.kkt_residual,
                        "converged": pt.converged,
                        "iterations": pt.iterations,
                        "labels": pt.partition.labels(),
                    })
                })
                .collect();
            m.insert("points".into(), points.into());
            output.write_json(&Value::Object(m))?;
        }
    }
    Ok(unconverged(&f.path))
}

pub fn lambda_max(problem: &Problem, output: &Output) -> Result<bool, String> {
    let x = read_matrix(&problem.input)?;
    let d = DifferenceOperator::from_dims(x.n(), x.p()).map_err(|e| e.to_string())?;
    let r = lambda_upper(x.as_vec(), &d, problem.norm, &LambdaSettings::default()).map_err(|e| e.to_string())?;
    let status = match r.status {
        LambdaStatus::Certified => "certified",
        LambdaStatus::Uncertified => "uncertified",
        LambdaStatus::IdenticalRows => "identical_rows",
    };
    if r.status == LambdaStatus::IdenticalRows {
        eprintln!("note: all rows are identical, so every weight gives a single cluster");
    }
    let mut table = Table::new(&["lambda_upper", "loose_bound", "lower_bound", "status", "iterations"]);
    table.push(vec![
        r.lambda_upper.into(),
        r.loose_bound.into(),
        r.lower_bound.into(),
        status.into(),
        r.iterations.into(),
    ]);
    match output.format {
        Format::Csv => output.write_table(&table, Value::Null)?,
        Format::Json => {
            let mut m = header("lambda-max", problem.norm, &x);
            m.insert("lambda_upper".into(), r.lambda_upper.into());
            m.insert("loose_bound".into(), r.loose_bound.into());
            m.insert("lower_bound".into(), r.lower_bound.into());
            m.insert("status".into(), status.into());
            m.insert("iterations".into(), r.iterations.into());
            output.write_json(&Value::Object(m))?;
        }
    }
    Ok(r.status == LambdaStatus::Uncertified)
}

pub fn dof(problem: &Problem, grid: &GridChoice, output: &Output) -> Result<bool, String> {
    let f = fit(problem, grid)?;
    let np = f.d.cols();
    let mut table = Table::new(&["lambda", "k", "df", "df_dense", "converged"]);
    for pt in &f.path.points {
        let df = degrees_of_freedom(pt, &f.d, problem.norm).map_err(|e| e.to_string())?;
        let dense = match problem.norm {
            FusionNorm::L1 if np <= DF1_DENSE_LIMIT => Some(df1(pt, &f.d).map_err(|e| e.to_string())?),
            FusionNorm::L2 if np <= DF2_DENSE_LIMIT => Some(df2(pt, &f.d, pt.lambda).map_err(|e| e.to_string())?.df),
            _ => None,
        };
        table.push(vec![
            pt.lambda.into(),
            pt.k().into(),
            df.into(),
            dense.unwrap_or(f64::NAN).into(),
            pt.converged.into(),
        ]);
    }
    let mut meta = header("dof", problem.norm, &f.x);
    meta.insert("lambda_upper".into(), f.lambda_upper.map_or(Value::Null, Value::from));
    output.write_table(&table, Value::Object(meta))?;
    Ok(unconverged(&f.path))
}

pub fn select_ebic(problem: &Problem, grid: &GridChoice, gamma: f64, output: &Output) -> Result<bool, String> {
    let f = fit(problem, grid)?;
    let dfs = path_df(&f.path, &f.d).map_err(|e| e.to_string())?;
    let curve = ebic_with_df(&f.path, &dfs, gamma).map_err(|e| e.to_string())?;
    let sel = select_from_curve(&f.path, &curve).map_err(|e| e.to_string())?;
    let mut table = Table::new(&["lambda", "k", "rss", "df", "ebic", "selected"]);
    for e in &curve.entries {
        table.push(vec![
            e.lambda.into(),
            f.path.points[e.index].k().into(),
            e.rss.into(),
            e.df.into(),
            e.ebic.into(),
            (e.index == sel.index).into(),
        ]);
    }
    match output.format {
        Format::Csv => output.write_table(&table, Value::Null)?,
        Format::Json => {
            let mut m = header("select-ebic", problem.norm, &f.x);
            m.insert("gamma_ebic".into(), gamma.into());
            m.insert("lambda_star".into(), sel.lambda_star.into());
            m.insert("k".into(), sel.k.into());
            m.insert("ebic".into(), sel.ebic.into());
            m.insert("labels".into(), sel.partition.labels().into());
            m.insert("excluded_lambdas".into(), curve.excluded.iter().map(|&i| f.path.points[i].lambda).collect::<Vec<_>>().into());
            m.insert("curve".into(), table_to_json(&table));
            output.write_json(&Value::Object(m))?;
        }
    }
    Ok(unconverged(&f.path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    DofFigure,
    RandCurves,
    Table1,
    PredBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DataKind {
    Gaussian,
    TwoCircles,
    TwoHalfMoons,
}

pub struct ExperimentParams {
    pub name: Experiment,
    pub seed: u64,
    pub reps: Option<usize>,
    pub q: Option<u32>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub sigma: Option<f64>,
    pub k_true: Option<usize>,
    pub data: DataKind,
    pub methods: Option<Vec<Method>>,
    pub gammas: Option<Vec<f64>>,
    pub multiplier: f64,
    pub grid_count: Option<usize>,
    pub max_k: Option<usize>,
    pub settings: SolveSettings,
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("configuration serializes")
}

fn norm_of(q: Option<u32>) -> FusionNorm {
    q.and_then(FusionNorm::from_q).unwrap_or(FusionNorm::L2)
}

pub fn experiment(params: &ExperimentParams, output: &Output) -> Result<bool, String> {
    let e = |err: fusepath::Error| err.to_string();
    let (table, config, summary, warn) = match params.name {
        Experiment::DofFigure => {
            let mut cfg = DofFigureConfig::new(norm_of(params.q), params.seed);
            cfg.n = params.n.unwrap_or(cfg.n);
            cfg.p = params.p.unwrap_or(cfg.p);
            cfg.sigma = params.sigma.unwrap_or(cfg.sigma);
            cfg.k = params.k_true.unwrap_or(cfg.k);
            cfg.reps = params.reps.unwrap_or(cfg.reps);
            if let Some(c) = params.grid_count {
                cfg.grid.count = c.checked_sub(1).ok_or("--grid-count must be at least 1")?;
            }
            cfg.settings = params.settings;
            let fig = run_dof_figure(&cfg).map_err(e)?;
            let warn = fig.rows.iter().any(|r| r.unconverged > 0);
            (fig.to_table(), to_value(&cfg), json!({}), warn)
        }
        Experiment::RandCurves => {
            let spec = match params.data {
                DataKind::Gaussian => DataSpec::Gaussian(
                    GaussianClusterSpec::new(
                        params.k_true.unwrap_or(2),
                        params.n.unwrap_or(30),
                        params.p.unwrap_or(30),
                        params.sigma.unwrap_or(1.0),
                        params.seed,
                    )
                    .map_err(e)?,
                ),
                DataKind::TwoCircles => DataSpec::Shape(ShapeClusterSpec::new(Shape::TwoCircles, params.seed)),
                DataKind::TwoHalfMoons => DataSpec::Shape(ShapeClusterSpec::new(Shape::TwoHalfMoons, params.seed)),
            };
            let mut cfg = RandCurveConfig::default();
            if let Some(c) = params.grid_count {
                cfg.grid.count = c;
            }
            cfg.max_k = params.max_k;
            cfg.settings = params.settings;
            let methods = params.methods.clone().unwrap_or_else(|| Method::ALL.to_vec());
            let reps = params.reps.unwrap_or(50);
            let curves = run_rand_curves(&spec, &methods, reps, &cfg).map_err(e)?;
            let summary = json!({
                "failures": to_value(&curves.failures),
                "unconverged_points": curves.unconverged_points,
            });
            let config = json!({
                "data": to_value(&spec),
                "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
                "reps": reps,
                "curve": to_value(&cfg),
                "angle_sampling": "uniform",
            });
            (curves.to_table(), config, summary, curves.unconverged_points > 0)
        }
        Experiment::Table1 => {
            let mut cfg = Table1Config::new(params.reps.unwrap_or(100), params.seed);
            cfg.n = params.n.unwrap_or(cfg.n);
            cfg.p = params.p.unwrap_or(cfg.p);
            cfg.sigma = params.sigma.unwrap_or(cfg.sigma);
            if let Some(g) = &params.gammas {
                cfg.gammas = g.clone();
            }
            if let Some(c) = params.grid_count {
                cfg.grid.count = c;
            }
            cfg.settings = params.settings;
            let rows = run_table1(&cfg).map_err(e)?;
            (table1_to_table(&rows), to_value(&cfg), json!({}), false)
        }
        Experiment::PredBound => {
            let norm = norm_of(params.q);
            let (n, p) = (params.n.unwrap_or(20), params.p.unwrap_or(20));
            let sigma = params.sigma.unwrap_or(0.5);
            let k = params.k_true.unwrap_or(2);
            let reps = params.reps.unwrap_or(100);
            let truth = gen_gaussian(&GaussianClusterSpec::new(k, n, p, 0.0, params.seed).map_err(e)?).map_err(e)?;
            let d = DifferenceOperator::from_dims(n, p).map_err(e)?;
            let report = check_prediction_bound(
                &truth.signal,
                &d,
                sigma,
                norm,
                reps,
                params.multiplier,
                params.seed,
                &params.settings,
            )
            .map_err(e)?;
            let mut table = Table::new(&["rep", "lhs", "rhs", "lambda_prime", "holds", "converged"]);
            for en in &report.entries {
                table.push(vec![
                    en.rep.into(),
                    en.lhs.into(),
                    en.rhs.into(),
                    en.lambda_prime.into(),
                    Cell::from(en.holds),
                    Cell::from(en.converged),
                ]);
            }
            let config = json!({
                "q": norm.q(), "n": n, "p": p, "sigma": sigma, "k_true": k, "reps": reps,
                "multiplier": params.multiplier, "seed": params.seed, "settings": to_value(&params.settings),
            });
            let summary = json!({"threshold": report.threshold, "hold_fraction": report.hold_fraction});
            let warn = report.entries.iter().any(|en| !en.converged);
            (table, config, summary, warn)
        }
    };
    let name = match params.name {
        Experiment::DofFigure => "dof-figure",
        Experiment::RandCurves => "rand-curves",
        Experiment::Table1 => "table1",
        Experiment::PredBound => "pred-bound",
    };
    let mut meta = Map::new();
    meta.insert("experiment".into(), name.into());
    meta.insert("seed".into(), params.seed.into());
    meta.insert("summary".into(), summary.clone());
    output.write_table(&table, Value::Object(meta))?;
    if let Some(out) = &output.out {
        let mut sidecar = out.clone().into_os_string();
        sidecar.push(".config.json");
        let doc = json!({
            "experiment": name,
            "seed": params.seed,
            "config": config,
            "summary": summary,
        });
        emit(&render_json(&doc), Some(PathBuf::from(sidecar).as_path()))?;
    }
    Ok(warn)
}
