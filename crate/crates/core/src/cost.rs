//! Running and terminal costs shared by the nominal controller, the safe set,
//! and the short-range subproblems.
//!
//! The stage cost of transition `k → k+1` is
//! `effort·u(k)² + (gap + reference)·dev(k+1)²`, where `dev` is the gap to the
//! leader minus the desired gap. The reference trajectory is the leader shifted
//! back by the desired gap, so reference tracking and gap tracking penalise the
//! same deviation. The terminal cost is `terminal·|dev(N)|`.

use crate::dynamics::{InputBounds, Trajectory, VehicleState};
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcWeights {
    pub gap_tracking: f64,
    pub reference_tracking: f64,
    pub control_effort: f64,
    pub terminal: f64,
}

impl MpcWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("gap tracking weight", self.gap_tracking),
            ("reference tracking weight", self.reference_tracking),
            ("control effort weight", self.control_effort),
            ("terminal weight", self.terminal),
        ] {
            ensure_finite(name, w)?;
            if w < 0.0 {
                return Err(Error::validation(format!(
                    "{name} must be nonnegative, got {w}"
                )));
            }
        }
        if self.gap_tracking + self.reference_tracking + self.control_effort <= 0.0 {
            return Err(Error::validation(
                "at least one running-cost weight must be positive",
            ));
        }
        Ok(())
    }

    /// Weight on the squared gap deviation per step.
    pub fn deviation(&self) -> f64 {
        self.gap_tracking + self.reference_tracking
    }
}

/// Everything a follower controller needs besides the states themselves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlParams {
    pub dt: f64,
    pub bounds: InputBounds,
    pub weights: MpcWeights,
    /// Desired distance to the leader (m).
    pub gap_ref: f64,
    /// Lower bound on time to collision (s).
    pub ttc_min: f64,
    /// Hard lower bound on the gap (m).
    pub min_gap: f64,
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("dt", self.dt)?;
        if self.dt <= 0.0 {
            return Err(Error::validation("dt must be positive"));
        }
        self.weights.validate()?;
        ensure_finite("gap_ref", self.gap_ref)?;
        ensure_finite("ttc_min", self.ttc_min)?;
        ensure_finite("min_gap", self.min_gap)?;
        if self.ttc_min < 0.0 || self.min_gap < 0.0 {
            return Err(Error::validation("ttc_min and min_gap must be nonnegative"));
        }
        Ok(())
    }
}

pub fn gap_deviation(ego: &VehicleState, lead: &VehicleState, gap_ref: f64) -> f64 {
    lead.position - ego.position - gap_ref
}

fn leader_at(leader: &Trajectory, step: usize) -> Result<&VehicleState> {
    leader.at(step).ok_or(Error::Horizon {
        required: step,
        available: leader.last_step(),
    })
}

/// Per-transition stage costs of `traj` against `leader` (indexed by absolute step).
pub fn stage_costs(
    traj: &Trajectory,
    leader: &Trajectory,
    params: &ControlParams,
) -> Result<Vec<f64>> {
    let w = &params.weights;
    traj.inputs
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let lead = leader_at(leader, traj.origin + k + 1)?;
            let dev = gap_deviation(&traj.states[k + 1], lead, params.gap_ref);
            Ok(w.control_effort * u * u + w.deviation() * dev * dev)
        })
        .collect()
}

/// One-norm terminal gap deviation at the trajectory's last state.
pub fn terminal_cost(
    traj: &Trajectory,
    leader: &Trajectory,
    params: &ControlParams,
) -> Result<f64> {
    let lead = leader_at(leader, traj.last_step())?;
    Ok(params.weights.terminal * gap_deviation(traj.terminal(), lead, params.gap_ref).abs())
}

/// Stage costs plus terminal cost.
pub fn trajectory_cost(
    traj: &Trajectory,
    leader: &Trajectory,
    params: &ControlParams,
) -> Result<f64> {
    Ok(stage_costs(traj, leader, params)?.iter().sum::<f64>()
        + terminal_cost(traj, leader, params)?)
}
