//! Simulation harness: data generators, replicated experiment runners and
//! the prediction-bound check. Replicates run in parallel on derived
//! streams of one seed and are aggregated in replicate order, so results
//! are reproducible bit for bit.

mod bound;
mod experiments;
mod generators;
mod table;

pub use bound::{bound_rhs, bound_threshold, check_prediction_bound, BoundEntry, BoundReport};
pub use experiments::{
    run_dof_figure, run_rand_curves, run_table1, table1_to_table, DataSpec, DofFigure, DofFigureConfig, DofRow,
    GridSpec, Method, RandCurveConfig, RandCurveRow, RandCurves, RepFailure, Table1Config, Table1Row,
};
pub use generators::{gen_gaussian, gen_shape, GaussianClusterSpec, Shape, ShapeClusterSpec, SimData};
pub use table::{Cell, Table};
