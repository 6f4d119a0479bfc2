//! DC microgrid energy-trading game: plant model, distributed
//! equilibrium-seeking controller, centralized oracle and a deterministic
//! closed-loop simulator.

pub mod controller;
pub mod engine;
pub mod error;
pub mod game;
pub mod integrate;
pub mod oracle;
pub mod plant;
pub mod scenario;
pub mod topology;
pub mod units;

pub use controller::{
    controller_rhs, fast_equilibrium, Controller, ControllerParams, ControllerState, InputLaw, KktResidual,
    PenaltyMode,
};
pub use engine::{run_scenario, ClosedLoop, RunOutput, RunReport, Variant};
pub use error::{Error, Result};
pub use game::{price_positivity_margin, monotonicity_margins, GameDefinition};
pub use oracle::{solve_penalized, solve_vi, EquilibriumSolution, ViOptions};
pub use plant::{Microgrid, PlantParams, PlantState};
pub use scenario::{Model, Scenario};
pub use topology::{Graph, MicrogridTopology};
