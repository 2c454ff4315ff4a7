//! Discretized dual Sobolev norms on regular grids, the comparison inequality
//! against `W_p`, and grid-based simulation of the null limit law.

pub mod comparison;
pub mod grid;
pub mod norm;
pub mod null_sim;

pub use comparison::{verify_comparison, ComparisonReport};
pub use grid::{project_to_grid, write_grid_csv, Boundary, GradientField, Grid, GridMeasure, GridSigned, GridSource};
pub use norm::{dual_norm, dual_norm_general_p, dual_norm_p2, solve_general_p, solve_p2, GeneralPOptions};
pub use null_sim::{null_limit_draw, simulate_null_limit, MIN_SURROGATE};
