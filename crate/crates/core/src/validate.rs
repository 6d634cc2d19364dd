//! Independent feasibility audit for planned or stored trajectories.
//!
//! Checks are written against the vehicle model and the safety rules
//! themselves, not against the QP rows that produced the plan.

use crate::comm::DeadZone;
use crate::cost::ControlParams;
use crate::dynamics::{time_to_collision, InputBounds, Trajectory};

const DYNAMICS_TOL: f64 = 1e-10;
const BOUND_TOL: f64 = 1e-9;
const TTC_TOL: f64 = 1e-6;
const GAP_TOL: f64 = 1e-7;

/// The rule set a trajectory was planned under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rules {
    pub bounds: InputBounds,
    pub ttc_min: f64,
    pub min_gap: f64,
    /// When set, the two vehicles may never be inside the zone together.
    pub dead_zone: Option<DeadZone>,
}

impl Rules {
    pub fn from_params(params: &ControlParams, dead_zone: Option<DeadZone>) -> Self {
        Self {
            bounds: params.bounds,
            ttc_min: params.ttc_min,
            min_gap: params.min_gap,
            dead_zone,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dynamics { residual: f64 },
    InputBound { step: usize, input: f64 },
    NegativeSpeed { step: usize, velocity: f64 },
    LeaderMissing { step: usize },
    Gap { step: usize, gap: f64 },
    Ttc { step: usize, ttc: f64 },
    DeadZone { step: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub violations: Vec<Violation>,
}

impl Report {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Audits every transition and every state after the first.
pub fn validate(traj: &Trajectory, leader: &Trajectory, rules: &Rules) -> Report {
    let mut violations = Vec::new();
    let residual = traj.dynamics_residual();
    if !(residual <= DYNAMICS_TOL) {
        violations.push(Violation::Dynamics { residual });
    }
    for (k, &u) in traj.inputs.iter().enumerate() {
        if !rules.bounds.contains(u, BOUND_TOL) {
            violations.push(Violation::InputBound {
                step: traj.origin + k,
                input: u,
            });
        }
    }
    for (k, ego) in traj.states.iter().enumerate().skip(1) {
        let step = traj.origin + k;
        if ego.velocity < 0.0 {
            violations.push(Violation::NegativeSpeed {
                step,
                velocity: ego.velocity,
            });
        }
        let Some(lead) = leader.at(step) else {
            violations.push(Violation::LeaderMissing { step });
            continue;
        };
        let gap = lead.position - ego.position;
        if gap < rules.min_gap - GAP_TOL {
            violations.push(Violation::Gap { step, gap });
        }
        if gap >= 0.0 {
            let ttc = time_to_collision(ego, lead).expect("leader ahead");
            if ttc < rules.ttc_min - TTC_TOL {
                violations.push(Violation::Ttc { step, ttc });
            }
        }
        if let Some(zone) = rules.dead_zone {
            if zone.blocks(ego, lead) {
                violations.push(Violation::DeadZone { step });
            }
        }
    }
    Report { violations }
}
