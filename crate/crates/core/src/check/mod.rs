//! Self-checks run by the `gradcheck` and `selftest` commands: finite
//! differences against every differentiable op and loss, and the library
//! against brute-force scalar oracles.

mod grad;
mod oracle;

use std::fmt;

use serde::Serialize;

pub use grad::{check_store_gradients, gradient_suite, GRAD_TOLERANCE};
pub use oracle::{enumerate_metapath_counts, oracle_suite, random_hin, RandomHin};

/// One named comparison: the worst error seen and the largest allowed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            error,
            tolerance,
        }
    }

    /// Strictly below the tolerance, or exact when the tolerance is zero.
    pub fn passed(&self) -> bool {
        self.error < self.tolerance || self.error == 0.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn max_error(&self) -> f64 {
        self.checks.iter().map(|c| c.error).fold(0.0, f64::max)
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, error: f64, tolerance: f64) {
        self.checks.push(Check::new(name, error, tolerance));
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed() { "ok" } else { "FAIL" };
            writeln!(f, "{status:4} {:<40} error {:.3e} (tolerance {:.0e})", c.name, c.error, c.tolerance)?;
        }
        write!(f, "{} checks, {} failed, {:.2}s", self.checks.len(), self.failures().count(), self.seconds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_another_seed() {
        let grads = gradient_suite(7).unwrap();
        assert!(grads.passed(), "{grads}");
        let oracles = oracle_suite(7).unwrap();
        assert!(oracles.passed(), "{oracles}");
    }

    #[test]
    fn zero_tolerance_means_exact() {
        assert!(Check::new("a", 0.0, 0.0).passed());
        assert!(!Check::new("a", 1.0, 0.0).passed());
        assert!(!Check::new("a", 1e-4, 1e-4).passed());
    }
}
