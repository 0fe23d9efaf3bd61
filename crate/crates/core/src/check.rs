use thiserror::Error;

/// Two sides of an inequality `lhs ≤ rhs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slack {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{inequality} violated: lhs={lhs:e} rhs={rhs:e} slack={slack:e}")]
pub struct Violation {
    pub inequality: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl Slack {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        Slack { lhs, rhs, slack: rhs - lhs }
    }

    /// lhs/rhs, with 0/0 read as 0.
    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }

    /// Fails when slack < −tol.
    pub fn require(self, inequality: &'static str, tol: f64) -> Result<Self, Violation> {
        if self.slack >= -tol {
            Ok(self)
        } else {
            Err(self.violation(inequality))
        }
    }

    /// Fails when lhs/rhs > 1 + tol.
    pub fn require_ratio(self, inequality: &'static str, tol: f64) -> Result<Self, Violation> {
        if self.ratio() <= 1.0 + tol {
            Ok(self)
        } else {
            Err(self.violation(inequality))
        }
    }

    fn violation(&self, inequality: &'static str) -> Violation {
        Violation { inequality, lhs: self.lhs, rhs: self.rhs, slack: self.slack }
    }
}
