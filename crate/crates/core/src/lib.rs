//! Sectional simulator for the coagulation equation with collision-induced
//! breakage, together with executable checks of its structural estimates.

pub mod daughter;
pub mod diagnostics;
pub mod dlvp;
pub mod error;
pub mod grid;
pub mod hypotheses;
pub mod kernels;
pub mod scenario;
pub mod solver;
pub mod table;

pub use daughter::{DaughterSpec, ProbSpec};
pub use error::{Error, Result};
pub use grid::{make_grid, moment, sample_initial, Grid, InitialCondition, State};
pub use kernels::{classify_growth, GrowthClass, KernelFamily, KernelSpec, SampleBox};
pub use table::LogTable2d;
pub use hypotheses::{check_scenario, coalescence_threshold, threshold_singular, HypothesisReport};
pub use solver::{
    apply_rhs, build_tables, integrate, step, weak_form_residual, Method, OperatorTables,
    StepControl, TestFunction, Trajectory, TruncationMode,
};
pub use scenario::{RunOutput, Scenario};
