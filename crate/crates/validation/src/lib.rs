//! Bookkeeping for acceptance runs: numeric checks grouped into criteria,
//! each criterion reported on a single PASS/FAIL line.

use std::fmt::Write as _;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct Check {
    pub label: String,
    pub detail: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(label: &str, value: f64, limit: f64) -> Self {
        Self {
            label: label.into(),
            detail: format!("{value:.4e} <= {limit:.4e}"),
            pass: value <= limit,
        }
    }

    pub fn less_than(label: &str, value: f64, limit: f64) -> Self {
        Self {
            label: label.into(),
            detail: format!("{value:.4e} < {limit:.4e}"),
            pass: value < limit,
        }
    }

    pub fn between(label: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            label: label.into(),
            detail: format!("{value:.4e} in [{lo:.4e}, {hi:.4e}]"),
            pass: (lo..=hi).contains(&value),
        }
    }

    pub fn holds(label: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            detail: detail.into(),
            pass,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Criterion {
    pub id: u32,
    pub title: String,
    pub checks: Vec<Check>,
    pub elapsed: Duration,
    pub budget: Option<Duration>,
    /// Set when the criterion could not be evaluated at all.
    pub error: Option<String>,
}

impl Criterion {
    pub fn new(id: u32, title: &str) -> Self {
        Self {
            id,
            title: title.into(),
            checks: Vec::new(),
            elapsed: Duration::ZERO,
            budget: None,
            error: None,
        }
    }

    pub fn within_budget(&self) -> bool {
        self.budget.is_none_or(|b| self.elapsed < b)
    }

    pub fn passed(&self) -> bool {
        self.error.is_none() && !self.checks.is_empty() && self.checks.iter().all(|c| c.pass) && self.within_budget()
    }

    /// Status line followed by one indented line per check.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{} criterion {}: {} ({:.1} s",
            if self.passed() { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.elapsed.as_secs_f64()
        );
        if let Some(b) = self.budget {
            let _ = write!(s, ", budget {:.0} s", b.as_secs_f64());
        }
        s.push(')');
        if let Some(e) = &self.error {
            let _ = write!(s, "\n      error: {e}");
        }
        for c in &self.checks {
            let _ = write!(s, "\n      [{}] {}: {}", if c.pass { "ok" } else { "no" }, c.label, c.detail);
        }
        s
    }
}
