use serde::{Deserialize, Serialize};

/// Stops after `max_rounds`, or once mean accuracy has failed to exceed its
/// reference by more than `min_improvement` for `patience` consecutive rounds.
/// The reference is the accuracy of the last round that did improve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub max_rounds: usize,
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self { max_rounds: 600, patience: 20, min_improvement: 0.005 }
    }
}

impl StoppingRule {
    pub fn tracker(&self) -> StopTracker {
        StopTracker { rule: *self, reference: None, stale: 0, rounds: 0 }
    }

    pub fn is_valid(&self) -> bool {
        self.max_rounds > 0 && self.patience > 0 && self.min_improvement >= 0.0
    }
}

#[derive(Debug, Clone)]
pub struct StopTracker {
    rule: StoppingRule,
    reference: Option<f64>,
    stale: usize,
    rounds: usize,
}

impl StopTracker {
    /// Feeds one round's accuracy; returns true when the run should stop after it.
    pub fn observe(&mut self, accuracy: f64) -> bool {
        self.rounds += 1;
        match self.reference {
            Some(r) if accuracy <= r + self.rule.min_improvement => self.stale += 1,
            _ => {
                self.reference = Some(accuracy);
                self.stale = 0;
            }
        }
        self.rounds >= self.rule.max_rounds || self.stale >= self.rule.patience
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }
}
