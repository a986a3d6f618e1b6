//! A complete problem description: grid, operators, initial data and time control.

use std::sync::Arc;

use crate::daughter::{DaughterSpec, ProbSpec};
use crate::error::Result;
use crate::grid::{sample_initial, Grid, InitialCondition, State};
use crate::hypotheses::{check_scenario, HypothesisReport};
use crate::kernels::KernelSpec;
use crate::solver::{build_tables, integrate, OperatorTables, StepControl, Trajectory, TruncationMode};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: Arc<Grid>,
    pub kernel: KernelSpec,
    pub daughter: DaughterSpec,
    pub prob: ProbSpec,
    pub initial: InitialCondition,
    /// Truncation level; defaults to `x_max`.
    pub n_trunc: f64,
    pub mode: TruncationMode,
    pub control: StepControl,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub tables: OperatorTables,
    pub trajectory: Trajectory,
}

impl Scenario {
    pub fn new(
        grid: Grid,
        kernel: KernelSpec,
        daughter: DaughterSpec,
        prob: ProbSpec,
        initial: InitialCondition,
        control: StepControl,
    ) -> Self {
        let n_trunc = grid.x_max();
        Scenario {
            grid: Arc::new(grid),
            kernel,
            daughter,
            prob,
            initial,
            n_trunc,
            mode: TruncationMode::Conserving,
            control,
        }
    }

    pub fn with_mode(mut self, mode: TruncationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_prob(mut self, prob: ProbSpec) -> Self {
        self.prob = prob;
        self
    }

    pub fn with_initial(mut self, initial: InitialCondition) -> Self {
        self.initial = initial;
        self
    }

    /// Same scenario on `grid`, truncated at its `x_max`.
    pub fn with_grid(mut self, grid: Grid) -> Self {
        self.n_trunc = grid.x_max();
        self.grid = Arc::new(grid);
        self
    }

    pub fn tables(&self) -> Result<OperatorTables> {
        build_tables(
            &self.grid,
            &self.kernel,
            self.n_trunc,
            &self.daughter,
            &self.prob,
            self.mode,
        )
    }

    pub fn initial_state(&self) -> Result<State> {
        self.initial.validate()?;
        sample_initial(&self.initial, &self.grid)
    }

    pub fn hypotheses(&self) -> HypothesisReport {
        check_scenario(&self.kernel, &self.daughter, &self.prob, &self.initial)
    }

    pub fn run(&self) -> Result<RunOutput> {
        let tables = self.tables()?;
        let start = self.initial_state()?;
        let trajectory = integrate(&tables, &start, &self.control)?;
        Ok(RunOutput { tables, trajectory })
    }

    /// Runs from an explicit starting state on this scenario's tables.
    pub fn run_from(&self, tables: &OperatorTables, start: &State) -> Result<Trajectory> {
        integrate(tables, start, &self.control)
    }
}
