//! Continual updating under a compute budget: replay memory, iteration
//! accounting, the strategy menu, and the round loop that drives them.

pub mod budget;
pub mod replay;
pub mod run;
pub mod strategy;

pub use budget::{compute_b, round_iterations, BudgetLedger, RoundBudget};
pub use replay::{Capacity, ReplayBuffer};
pub use run::{
    run_strategy, AuditLog, RoundModel, RoundRecord, RunOutput, RunParams, TrainedModel,
};
pub use strategy::{BudgetRate, Strategy, UNLIMITED_RATE_MULTIPLIER};
