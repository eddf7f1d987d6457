//! The update policies a benchmark run can follow.
//!
//! `Condo` is the continual-update method under test; the others bracket
//! it: `TrainOnly` never updates, the retrain strategies rebuild from
//! scratch at every arrival, and `StandAlonePerScene` trades the shared
//! backbone for one isolated model per scene.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::teachers::TeacherConfig;

/// Grant multiplier for retrain strategies. `Unlimited` stands in for "as
/// long as it takes" and is pinned to a large fixed multiple so runs stay
/// finite and comparable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BudgetRate {
    #[serde(rename = "unlimited")]
    Unlimited,
    #[serde(untagged)]
    Rate(f64),
}

/// What `Unlimited` means in practice: five times the rate-1 grant.
pub const UNLIMITED_RATE_MULTIPLIER: f64 = 5.0;

impl BudgetRate {
    pub fn multiplier(&self) -> f64 {
        match self {
            BudgetRate::Unlimited => UNLIMITED_RATE_MULTIPLIER,
            BudgetRate::Rate(r) => *r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BudgetRate::Unlimited => Ok(()),
            BudgetRate::Rate(r) if r.is_finite() && *r > 0.0 => Ok(()),
            BudgetRate::Rate(r) => Err(Error::invalid(format!("budget rate {r} must be positive"))),
        }
    }

    fn label(&self) -> String {
        match self {
            BudgetRate::Unlimited => "unlimited".into(),
            BudgetRate::Rate(r) => format!("r{r}"),
        }
    }
}

fn default_budget_rate() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Deploy the initial model and never touch it again.
    TrainOnly,
    /// Distill arriving unlabeled scans through a teacher, rehearse via
    /// the replay buffer, and fine-tune under the per-round budget.
    Condo {
        teacher: TeacherConfig,
        /// Scales the per-round grant for inference arrivals; labeled
        /// scene-training rounds always run at the full density.
        #[serde(default = "default_budget_rate")]
        budget_rate: f64,
    },
    /// Retrain from scratch on ground truth for everything revealed so
    /// far. The supervised upper bound; unreachable in deployment.
    RetrainGt { rate: BudgetRate },
    /// Retrain from scratch, but inference scans only contribute their
    /// teacher labels.
    RetrainTeacher { teacher: TeacherConfig, rate: BudgetRate },
    /// One isolated model per scene, each running the continual update on
    /// its own traffic. No cross-scene transfer, no shared trunk.
    StandAlonePerScene {
        teacher: TeacherConfig,
        #[serde(default = "default_budget_rate")]
        budget_rate: f64,
    },
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::TrainOnly => Ok(()),
            Strategy::Condo { budget_rate, .. } | Strategy::StandAlonePerScene { budget_rate, .. } => {
                BudgetRate::Rate(*budget_rate).validate()
            }
            Strategy::RetrainGt { rate } => rate.validate(),
            Strategy::RetrainTeacher { rate, .. } => rate.validate(),
        }
    }

    pub fn teacher(&self) -> Option<&TeacherConfig> {
        match self {
            Strategy::TrainOnly | Strategy::RetrainGt { .. } => None,
            Strategy::Condo { teacher, .. }
            | Strategy::RetrainTeacher { teacher, .. }
            | Strategy::StandAlonePerScene { teacher, .. } => Some(teacher),
        }
    }

    /// Stable, filesystem-safe run label.
    pub fn label(&self) -> String {
        match self {
            Strategy::TrainOnly => "train_only".into(),
            Strategy::Condo { teacher, budget_rate } => {
                format!("condo-{}-r{budget_rate}", teacher.kind_label())
            }
            Strategy::RetrainGt { rate } => format!("retrain_gt-{}", rate.label()),
            Strategy::RetrainTeacher { teacher, rate } => {
                format!("retrain_{}-{}", teacher.kind_label(), rate.label())
            }
            Strategy::StandAlonePerScene { teacher, budget_rate } => {
                format!("standalone-{}-r{budget_rate}", teacher.kind_label())
            }
        }
    }
}
