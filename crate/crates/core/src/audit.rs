use serde::{Deserialize, Serialize};

/// Running check that each estimator update did not increase `log det`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractionAudit {
    pub checked: u64,
    pub violations: u64,
    /// Largest observed `logdet(posterior) - logdet(prior)`.
    pub max_increase: f64,
}

impl ContractionAudit {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn record(&mut self, prior_logdet: f64, posterior_logdet: f64) {
        let inc = posterior_logdet - prior_logdet;
        if self.checked == 0 || inc > self.max_increase {
            self.max_increase = inc;
        }
        self.checked += 1;
        if !(inc <= Self::TOLERANCE) {
            self.violations += 1;
        }
    }

    pub fn merge(&mut self, other: &ContractionAudit) {
        if other.checked == 0 {
            return;
        }
        if self.checked == 0 || other.max_increase > self.max_increase {
            self.max_increase = other.max_increase;
        }
        self.checked += other.checked;
        self.violations += other.violations;
    }
}
