//! Convex clustering along a regularization path.
//!
//! Centroids are estimated by minimizing `0.5 ||x - u||^2 + lambda * P_q(D u)`
//! where `D` stacks all pairwise row differences and `P_q` sums their `q`-norms.

pub mod baselines;
pub mod data;
pub mod diffop;
pub mod dof;
pub mod error;
pub mod lambda_range;
pub mod model_select;
pub mod norms;
pub mod partition;
pub mod solver;
pub mod simlab;
pub mod threshold;

pub use data::{data_scale, DataMatrix};
pub use diffop::{DifferenceOperator, VecLayout};
pub use error::{Error, Result};
pub use norms::{FusionNorm, Metric};
pub use partition::{partition_from_components, rand_index, Partition, UnionFind};
pub use solver::{
    cluster_extract, default_grid, kkt_check, kmeans_penalty_value, refine_path, solve_path, solve_single,
    PathPoint, PathSolution, SolveSettings,
};
