//! Compute budgets expressed as gradient updates per revealed frame.
//!
//! The budget density b is the number of sample visits a training run
//! spends per dataset item: b = epochs * iters_per_epoch * batch / |S|.
//! A round that reveals N new frames is granted ceil(N * b / batch)
//! iterations, which keeps total spend proportional to total data no
//! matter how the stream is chopped into rounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Budget density of a reference training run.
pub fn compute_b(epochs: u64, iters_per_epoch: u64, batch_size: u64, dataset_size: u64) -> Result<f64> {
    if epochs == 0 || iters_per_epoch == 0 || batch_size == 0 {
        return Err(Error::invalid("budget factors must be positive"));
    }
    if dataset_size == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok((epochs * iters_per_epoch * batch_size) as f64 / dataset_size as f64)
}

/// Iterations granted for `n_new` freshly revealed frames at density `b`.
pub fn round_iterations(n_new: usize, b: f64, batch_size: usize) -> Result<u64> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::invalid("budget density must be finite and non-negative"));
    }
    Ok((n_new as f64 * b / batch_size as f64).ceil() as u64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundBudget {
    pub round_id: usize,
    pub granted: u64,
    pub used: u64,
}

/// Per-round grant bookkeeping. Overspending is a hard error: the budget
/// is part of the method's contract, not a soft target.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    rounds: Vec<RoundBudget>,
}

impl BudgetLedger {
    pub fn new() -> BudgetLedger {
        BudgetLedger::default()
    }

    pub fn open_round(&mut self, round_id: usize, granted: u64) -> Result<()> {
        if self.rounds.iter().any(|r| r.round_id == round_id) {
            return Err(Error::invalid(format!("round {round_id} already open")));
        }
        self.rounds.push(RoundBudget { round_id, granted, used: 0 });
        Ok(())
    }

    pub fn record_use(&mut self, round_id: usize, iters: u64) -> Result<()> {
        let round = self
            .rounds
            .iter_mut()
            .find(|r| r.round_id == round_id)
            .ok_or_else(|| Error::invalid(format!("round {round_id} was never opened")))?;
        if round.used + iters > round.granted {
            return Err(Error::BudgetExceeded(format!(
                "round {round_id}: {} used + {iters} requested > {} granted",
                round.used, round.granted
            )));
        }
        round.used += iters;
        Ok(())
    }

    pub fn round(&self, round_id: usize) -> Option<&RoundBudget> {
        self.rounds.iter().find(|r| r.round_id == round_id)
    }

    pub fn rounds(&self) -> &[RoundBudget] {
        &self.rounds
    }

    pub fn total_granted(&self) -> u64 {
        self.rounds.iter().map(|r| r.granted).sum()
    }

    pub fn total_used(&self) -> u64 {
        self.rounds.iter().map(|r| r.used).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_of_reference_run() {
        // 300 epochs of 16 iterations at batch 64 over 1024 items spend
        // exactly 300 visits per item.
        assert_eq!(compute_b(300, 16, 64, 1024).unwrap(), 300.0);
        assert!(compute_b(0, 16, 64, 1024).is_err());
        assert!(matches!(compute_b(300, 16, 64, 0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn round_grant_rounds_up() {
        assert_eq!(round_iterations(512, 300.0, 64).unwrap(), 2400);
        assert_eq!(round_iterations(1000, 4200.0, 256).unwrap(), 16407);
        assert_eq!(round_iterations(0, 300.0, 64).unwrap(), 0);
        assert_eq!(round_iterations(1, 0.5, 64).unwrap(), 1);
        assert!(round_iterations(1, -1.0, 64).is_err());
        assert!(round_iterations(1, 1.0, 0).is_err());
    }

    #[test]
    fn ledger_enforces_grants() {
        let mut ledger = BudgetLedger::new();
        ledger.open_round(0, 10).unwrap();
        ledger.record_use(0, 6).unwrap();
        ledger.record_use(0, 4).unwrap();
        assert!(matches!(ledger.record_use(0, 1), Err(Error::BudgetExceeded(_))));
        assert_eq!(ledger.round(0).unwrap().used, 10);

        assert!(ledger.open_round(0, 5).is_err());
        assert!(ledger.record_use(7, 1).is_err());

        ledger.open_round(1, 3).unwrap();
        assert_eq!(ledger.total_granted(), 13);
        assert_eq!(ledger.total_used(), 10);
    }
}
