//! One-call driver from a feeder and scenario to a recovered schedule.

use std::time::Instant;

use dispatch_conic::{solve, SolverConfig, SolverResult, SolverStatus};

use crate::embed::{assemble, AssembledProgram, DispatchProblem};
use crate::error::Result;
use crate::matrices::SystemMatrices;
use crate::model::{FeederModel, HorizonScenario};
use crate::recovery::{recover_solution, DispatchSolution};

pub struct Outcome {
    pub matrices: SystemMatrices,
    pub assembled: AssembledProgram,
    pub result: SolverResult,
    /// Present only when the solver reports an optimum.
    pub solution: Option<DispatchSolution>,
    pub build_seconds: f64,
}

impl Outcome {
    pub fn status(&self) -> SolverStatus {
        self.result.status
    }
}

pub fn run(
    model: &FeederModel,
    scenario: &HorizonScenario,
    problem: &DispatchProblem,
    config: &SolverConfig,
    rank_threshold: f64,
) -> Result<Outcome> {
    let start = Instant::now();
    let matrices = SystemMatrices::build(model, scenario)?;
    let assembled = assemble(&matrices, model, scenario, problem)?;
    let build_seconds = start.elapsed().as_secs_f64();
    log::debug!(
        "assembled {} slots, {} constraints in {build_seconds:.3} s",
        scenario.slots,
        assembled.program.constraints.len()
    );
    let result = solve(&assembled.program, config)?;
    let solution = if result.status == SolverStatus::Optimal {
        Some(recover_solution(&assembled, &result, &matrices, model, scenario, rank_threshold)?)
    } else {
        None
    };
    Ok(Outcome {
        matrices,
        assembled,
        result,
        solution,
        build_seconds,
    })
}
