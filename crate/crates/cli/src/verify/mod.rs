//! The acceptance battery: nine numbered criteria, each a self-contained
//! check against an independent oracle with a runtime budget.

mod criteria;
mod fd;
mod properties;

use std::time::{Duration, Instant};

pub use criteria::{eprop_readout_oracle, CRITERIA};
pub use fd::{fd_gradient, rel_diff};
pub use properties::{property_battery, PropertyOutcome};

/// Verdict of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl CriterionResult {
    /// One line: `[PASS] 3 error-curve shape (1.2 s / 30 s): detail`.
    pub fn line(&self) -> String {
        format!(
            "[{}] {} {} ({:.1} s / {} s): {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs(),
            self.detail
        )
    }
}

/// A criterion: its number, name, runtime budget and check.
pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    pub budget: Duration,
    pub check: fn() -> Result<(bool, String), String>,
}

impl Criterion {
    /// Runs the check; exceeding the budget fails the criterion.
    pub fn run(&self) -> CriterionResult {
        let start = Instant::now();
        let outcome = (self.check)();
        let elapsed = start.elapsed();
        let (mut pass, mut detail) = match outcome {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if elapsed > self.budget {
            pass = false;
            detail = format!("{detail}; over the {} s budget", self.budget.as_secs());
        }
        CriterionResult {
            id: self.id,
            name: self.name,
            pass,
            detail,
            elapsed,
            budget: self.budget,
        }
    }
}

pub fn criterion(id: usize) -> Option<&'static Criterion> {
    CRITERIA.iter().find(|c| c.id == id)
}

/// Runs the selected criteria in order (all when `only` is empty), calling
/// `report` after each.
pub fn run_criteria(only: &[usize], mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .filter(|c| only.is_empty() || only.contains(&c.id))
        .map(|c| {
            let r = c.run();
            report(&r);
            r
        })
        .collect()
}
