//! A minimal runner for numbered acceptance criteria. Each criterion runs in
//! isolation, a panic counts as a failure, and every criterion prints exactly
//! one `PASS` or `FAIL` line with its measured values and wall time.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// What a criterion measured and whether it met its threshold.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

pub struct Criterion {
    pub id: u32,
    pub title: &'static str,
    /// Exceeding the budget fails the criterion even if its check passed.
    pub time_limit: Duration,
    pub check: fn() -> Outcome,
}

#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u32,
    pub passed: bool,
    pub line: String,
}

pub fn run_one(c: &Criterion) -> Verdict {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(c.check));
    let elapsed = start.elapsed();
    let mut outcome = result.unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Outcome::new(false, format!("panicked: {msg}"))
    });
    if elapsed > c.time_limit {
        outcome.passed = false;
        outcome.detail = format!("{}; over the {:?} time limit", outcome.detail, c.time_limit);
    }
    let tag = if outcome.passed { "PASS" } else { "FAIL" };
    Verdict {
        id: c.id,
        passed: outcome.passed,
        line: format!(
            "criterion {:>2} {tag} [{:.2} s] {}: {}",
            c.id,
            elapsed.as_secs_f64(),
            c.title,
            outcome.detail
        ),
    }
}

/// Runs the criteria whose id is selected (all when `only` is empty), printing
/// each line as soon as it is known.
pub fn run_all(criteria: &[Criterion], only: &[u32]) -> Vec<Verdict> {
    criteria
        .iter()
        .filter(|c| only.is_empty() || only.contains(&c.id))
        .map(|c| {
            let v = run_one(c);
            println!("{}", v.line);
            v
        })
        .collect()
}
