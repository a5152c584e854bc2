//! Three-level rider risk from the planned longitudinal jerk.
//!
//! A plan that has to shed acceleration quickly is a plan the rider is
//! unlikely to be already following. The jerk thresholds split the planned
//! `j_x` into safe, intermediate and dangerous maneuvers; a problem with no
//! feasible plan at all is dangerous.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ocp::{OcpSolution, SolveStatus};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RiskError {
    #[error("solution has no input stages")]
    EmptySolution,
    #[error("invalid thresholds: need theta2 < theta1 < 0, got theta1={theta1}, theta2={theta2}")]
    InvalidThresholds { theta1: f64, theta2: f64 },
}

/// Jerk thresholds [m/s^3].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskThresholds {
    pub theta1: f64,
    pub theta2: f64,
}

impl Default for RiskThresholds {
    fn default() -> Self {
        Self {
            theta1: -0.1,
            theta2: -0.5,
        }
    }
}

impl RiskThresholds {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self, RiskError> {
        let th = Self { theta1, theta2 };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        if self.theta2 < self.theta1 && self.theta1 < 0.0 {
            Ok(())
        } else {
            Err(RiskError::InvalidThresholds {
                theta1: self.theta1,
                theta2: self.theta2,
            })
        }
    }

    /// Both thresholds multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            theta1: self.theta1 * c,
            theta2: self.theta2 * c,
        }
    }
}

/// Ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    Safe,
    Intermediate,
    Danger,
}

impl RiskLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskLevel::Safe => "safe",
            RiskLevel::Intermediate => "intermediate",
            RiskLevel::Danger => "danger",
        }
    }

    /// Process exit code for the level.
    pub fn exit_code(self) -> i32 {
        match self {
            RiskLevel::Safe => 0,
            RiskLevel::Intermediate => 1,
            RiskLevel::Danger => 2,
        }
    }
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify_step(jx: f64, th: &RiskThresholds) -> RiskLevel {
    if jx >= th.theta1 {
        RiskLevel::Safe
    } else if jx <= th.theta2 {
        RiskLevel::Danger
    } else {
        RiskLevel::Intermediate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    /// Level of every input stage.
    pub per_step: Vec<RiskLevel>,
    pub overall: RiskLevel,
    /// Arc length of the most negative jerk [m].
    pub worst_s: f64,
    pub min_jerk: f64,
    pub status: SolveStatus,
}

/// Grades a planned maneuver by its worst stage.
pub fn classify_maneuver(sol: &OcpSolution, th: &RiskThresholds) -> Result<RiskReport, RiskError> {
    if sol.inputs.is_empty() {
        return Err(RiskError::EmptySolution);
    }
    let per_step: Vec<RiskLevel> = sol.inputs.iter().map(|u| classify_step(u.jx, th)).collect();
    // first stage wins ties so the report is deterministic
    let (worst, min_jerk) = sol
        .inputs
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bk, bj), (k, u)| if u.jx < bj { (k, u.jx) } else { (bk, bj) });
    let overall = match sol.status {
        SolveStatus::Infeasible => RiskLevel::Danger,
        _ => per_step.iter().copied().max().unwrap_or(RiskLevel::Safe),
    };
    Ok(RiskReport {
        per_step,
        overall,
        worst_s: sol.s[worst],
        min_jerk,
        status: sol.status,
    })
}
