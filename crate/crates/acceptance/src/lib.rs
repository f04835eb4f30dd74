//! Verdict bookkeeping for the acceptance suite in `tests/acceptance.rs`.
//!
//! Each criterion yields one [`Verdict`]. A criterion can be marked as a
//! known limitation: it still prints `FAIL`, but it does not fail the run
//! unless something else inside it regresses.

use std::fmt;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct Verdict {
    pub name: &'static str,
    pub pass: bool,
    /// Failing for a documented reason that no implementation change fixes.
    pub known_limitation: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Verdict {
    pub fn new(name: &'static str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            pass,
            known_limitation: false,
            detail: detail.into(),
            elapsed: Duration::ZERO,
        }
    }

    /// Fails the verdict when `elapsed` exceeds `budget`.
    pub fn within(mut self, elapsed: Duration, budget: Duration) -> Self {
        self.elapsed = elapsed;
        if elapsed > budget {
            self.pass = false;
            self.known_limitation = false;
            self.detail = format!("{}; took {:.1} s, budget {:.0} s", self.detail, elapsed.as_secs_f64(), budget.as_secs_f64());
        }
        self
    }

    pub fn blocks(&self) -> bool {
        !self.pass && !self.known_limitation
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match (self.pass, self.known_limitation) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known limitation)",
            (false, false) => "FAIL",
        };
        write!(f, "{tag:<23} {:<26} {:>7.1} s  {}", self.name, self.elapsed.as_secs_f64(), self.detail)
    }
}

/// Exit status for a finished run: non-zero when any verdict blocks.
pub fn exit_code(verdicts: &[Verdict]) -> i32 {
    i32::from(verdicts.iter().any(Verdict::blocks))
}
