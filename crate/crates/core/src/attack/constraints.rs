//! Unnoticeability rules for candidate flips.
//!
//! Two rules: a deletion may not leave either endpoint without edges, and
//! (optionally) the degree sequence must keep passing a likelihood-ratio test
//! against the clean graph under a discrete power-law fit. The test follows
//! the usual form for graph attacks: fit `α` to degrees `≥ d_min` by the
//! approximate MLE `1 + n / (Σ ln d − n·ln(d_min − ½))`, score
//! `l(D) = n·ln α + n·α·ln d_min − (α + 1)·Σ ln d`, and accept when
//! `−2·l(D_clean ∪ D_new) + 2·(l(D_clean) + l(D_new))` stays below the
//! threshold.

use serde::{Deserialize, Serialize};

use crate::graph::Graph;

pub const DEFAULT_DEGREE_THRESHOLD: f64 = 0.004;
const D_MIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    pub forbid_singletons: bool,
    pub degree_test: bool,
    pub degree_test_threshold: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            forbid_singletons: true,
            degree_test: false,
            degree_test_threshold: DEFAULT_DEGREE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Singleton,
    DegreeDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Allowed,
    Rejected(RejectReason),
}

impl Verdict {
    pub fn is_allowed(self) -> bool {
        self == Verdict::Allowed
    }
}

/// Count and log-sum of the degrees at or above `d_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegreeSample {
    pub n: f64,
    pub sum_log: f64,
}

impl DegreeSample {
    pub fn of(degrees: &[usize]) -> Self {
        let mut s = DegreeSample { n: 0.0, sum_log: 0.0 };
        for &d in degrees {
            s.add(d, 1.0);
        }
        s
    }

    fn add(&mut self, degree: usize, sign: f64) {
        let d = degree as f64;
        if d >= D_MIN {
            self.n += sign;
            self.sum_log += sign * d.ln();
        }
    }

    /// The sample after changing one node's degree from `old` to `new`.
    fn moved(mut self, old: usize, new: usize) -> Self {
        self.add(old, -1.0);
        self.add(new, 1.0);
        self
    }

    fn combined(self, other: DegreeSample) -> Self {
        DegreeSample {
            n: self.n + other.n,
            sum_log: self.sum_log + other.sum_log,
        }
    }

    pub fn alpha(&self) -> f64 {
        1.0 + self.n / (self.sum_log - self.n * (D_MIN - 0.5).ln())
    }

    pub fn log_likelihood(&self) -> f64 {
        if self.n <= 0.0 {
            return 0.0;
        }
        let a = self.alpha();
        self.n * a.ln() + self.n * a * D_MIN.ln() - (a + 1.0) * self.sum_log
    }
}

/// Likelihood-ratio statistic between the clean and a modified degree sample.
pub fn degree_test_statistic(clean: DegreeSample, modified: DegreeSample) -> f64 {
    -2.0 * clean.combined(modified).log_likelihood() + 2.0 * (clean.log_likelihood() + modified.log_likelihood())
}

/// Constraint checker bound to a clean reference graph.
#[derive(Debug, Clone)]
pub struct Constraints {
    cfg: ConstraintConfig,
    clean: DegreeSample,
}

/// Per-iteration snapshot of the current graph's degree sample.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintState {
    current: DegreeSample,
}

impl Constraints {
    pub fn new(clean: &Graph, cfg: ConstraintConfig) -> Self {
        Constraints {
            cfg,
            clean: DegreeSample::of(clean.degrees()),
        }
    }

    pub fn config(&self) -> &ConstraintConfig {
        &self.cfg
    }

    pub fn state(&self, current: &Graph) -> ConstraintState {
        ConstraintState {
            current: DegreeSample::of(current.degrees()),
        }
    }

    /// Checks flipping `(i, j)` on `current`, whose sample is `state`.
    pub fn check_with(&self, state: &ConstraintState, current: &Graph, i: usize, j: usize) -> Verdict {
        let deleting = current.has_edge(i, j);
        let (di, dj) = (current.degree(i), current.degree(j));
        if self.cfg.forbid_singletons && deleting && (di <= 1 || dj <= 1) {
            return Verdict::Rejected(RejectReason::Singleton);
        }
        if self.cfg.degree_test {
            let step = |d: usize| if deleting { d - 1 } else { d + 1 };
            let modified = state.current.moved(di, step(di)).moved(dj, step(dj));
            if degree_test_statistic(self.clean, modified) >= self.cfg.degree_test_threshold {
                return Verdict::Rejected(RejectReason::DegreeDistribution);
            }
        }
        Verdict::Allowed
    }

    pub fn check(&self, current: &Graph, i: usize, j: usize) -> Verdict {
        self.check_with(&self.state(current), current, i, j)
    }
}

/// One-shot check of flipping `(i, j)` on `current` against the clean graph.
pub fn constraint_check(clean: &Graph, current: &Graph, i: usize, j: usize, cfg: &ConstraintConfig) -> Verdict {
    Constraints::new(clean, *cfg).check(current, i, j)
}
