//! Multi-period dispatch of unbalanced three-phase radial feeders through a
//! semidefinite relaxation of the power-flow equations.
//!
//! The usual flow is [`io`] to load a feeder and scenario, [`SystemMatrices`]
//! to build the per-slot operators, [`embed::assemble`] to produce a real
//! conic program, [`dispatch_conic::solve`] to solve it and
//! [`recovery::recover_solution`] to turn the optimal matrices back into
//! voltages and power schedules.

pub mod embed;
pub mod error;
pub mod io;
pub mod loadflow;
pub mod matrices;
pub mod model;
pub mod phase;
pub mod pipeline;
pub mod recovery;

pub use embed::{AssembledProgram, ConstraintFlags, DispatchProblem, Mode, ProgramLayout};
pub use error::{Error, Result};
pub use matrices::{IndexMap, SystemMatrices};
pub use model::{
    DgUnit, ElasticLoad, FeederModel, HorizonScenario, LineSegment, NodeSpec, Violation,
};
pub use phase::{Phase, PhaseSet};
pub use pipeline::{run, Outcome};
pub use recovery::{DispatchSolution, SlotSolution};
