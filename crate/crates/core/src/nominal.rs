//! Perfect-communication finite-horizon follower MPC.
//!
//! The follower tracks the leader at a desired gap while keeping time to
//! collision above a floor. The TTC condition `d ≥ Γ·(v_ego − v_lead)` is
//! linear and also holds trivially when the leader is not slower, so it is
//! imposed directly as one row per step.

use crate::condensed::{self, RowLayout, TerminalCost, Window};
use crate::cost::{trajectory_cost, ControlParams};
use crate::dynamics::{simulate_from, Trajectory, VehicleState};
use crate::error::{Error, Result};
use crate::qp::{self, QpProblem, QpSolution, QpStatus, SolverSettings};

/// The condensed QP for one nominal solve.
#[derive(Debug, Clone)]
pub struct NominalProblem {
    pub qp: QpProblem,
    /// Objective constant not represented in `qp`.
    pub constant: f64,
    pub horizon: usize,
    pub rows: RowLayout,
    /// Whether the last decision variable is the terminal-cost epigraph slack.
    pub has_slack: bool,
}

#[derive(Debug, Clone)]
pub struct NominalPlan {
    pub trajectory: Trajectory,
    /// Stage costs plus terminal cost of `trajectory`.
    pub objective: f64,
    pub solution: QpSolution,
}

impl NominalPlan {
    /// Input to apply now.
    pub fn first_input(&self) -> f64 {
        self.trajectory.inputs[0]
    }
}

fn check_start(
    x_t: &VehicleState,
    t: usize,
    leader: &Trajectory,
    params: &ControlParams,
) -> Result<()> {
    params.validate()?;
    x_t.validate()?;
    let lead = leader.at(t).ok_or(Error::Horizon {
        required: t,
        available: leader.last_step(),
    })?;
    if lead.position < x_t.position {
        return Err(Error::validation(format!(
            "follower at {} is ahead of the leader at {}",
            x_t.position, lead.position
        )));
    }
    Ok(())
}

/// Builds the condensed QP for a plan of `horizon` steps starting at absolute step `t`.
pub fn build_problem(
    x_t: &VehicleState,
    t: usize,
    leader: &Trajectory,
    params: &ControlParams,
    horizon: usize,
) -> Result<NominalProblem> {
    check_start(x_t, t, leader, params)?;
    let w = condensed::build(
        &Window {
            start: *x_t,
            start_step: t,
            len: horizon,
            leader,
            params,
            limits: &[],
        },
        TerminalCost::OneNorm(params.weights.terminal),
    )?;
    Ok(NominalProblem {
        has_slack: w.qp.num_vars() > horizon,
        qp: w.qp,
        constant: w.constant,
        horizon,
        rows: w.rows,
    })
}

pub fn solve_nominal(
    x_t: &VehicleState,
    t: usize,
    leader: &Trajectory,
    params: &ControlParams,
    horizon: usize,
    settings: &SolverSettings,
) -> Result<NominalPlan> {
    let problem = build_problem(x_t, t, leader, params, horizon)?;
    let solution = qp::solve(&problem.qp, settings)?;
    match solution.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Err(Error::Infeasible(format!(
                "no feasible trajectory from step {t} (input bounds, TTC ≥ {} s, gap ≥ {} m)",
                params.ttc_min, params.min_gap
            )))
        }
        QpStatus::IterationLimit => {
            return Err(Error::Infeasible(format!(
                "nominal QP at step {t} hit the iteration limit"
            )))
        }
    }
    let inputs: Vec<f64> = solution
        .z
        .iter()
        .take(horizon)
        .map(|&u| params.bounds.saturate(u))
        .collect();
    let trajectory = simulate_from(*x_t, t, &inputs, params.dt)?;
    let objective = trajectory_cost(&trajectory, leader, params)?;
    Ok(NominalPlan {
        trajectory,
        objective,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::MpcWeights;
    use crate::dynamics::{constant_speed, InputBounds};

    fn params(weights: MpcWeights) -> ControlParams {
        ControlParams {
            dt: 0.2,
            bounds: InputBounds::new(-6.0, 6.0).unwrap(),
            weights,
            gap_ref: 25.0,
            ttc_min: 2.0,
            min_gap: 0.0,
        }
    }

    fn effort_only() -> MpcWeights {
        MpcWeights {
            gap_tracking: 0.0,
            reference_tracking: 0.0,
            control_effort: 1.0,
            terminal: 0.0,
        }
    }

    #[test]
    fn equilibrium_needs_no_input() {
        let p = params(MpcWeights {
            terminal: 1.0,
            ..effort_only()
        });
        let leader = constant_speed(VehicleState::new(25.0, 30.0), 0, 20, 0.2).unwrap();
        let plan = solve_nominal(
            &VehicleState::new(0.0, 30.0),
            0,
            &leader,
            &p,
            20,
            &SolverSettings::default(),
        )
        .unwrap();
        assert!(plan.trajectory.inputs.iter().all(|u| u.abs() < 1e-7));
        // only the terminal term could be nonzero, and at equilibrium it vanishes
        assert!(plan.objective.abs() < 1e-9);
    }

    #[test]
    fn zero_tracking_weights_give_zero_inputs() {
        let p = params(effort_only());
        let leader = constant_speed(VehicleState::new(80.0, 30.0), 0, 30, 0.2).unwrap();
        let plan = solve_nominal(
            &VehicleState::new(0.0, 28.0),
            0,
            &leader,
            &p,
            30,
            &SolverSettings::default(),
        )
        .unwrap();
        assert!(plan.trajectory.inputs.iter().all(|u| u.abs() < 1e-7));
    }

    #[test]
    fn close_fast_follower_must_brake() {
        let p = params(effort_only());
        // d(1) = 9.5 − 0.02·u and the row needs d(1) ≥ 2·(5 + 0.2·u), so u ≤ −0.5/0.42
        let leader = constant_speed(VehicleState::new(10.5, 30.0), 0, 10, 0.2).unwrap();
        let x0 = VehicleState::new(0.0, 35.0);
        let plan = solve_nominal(&x0, 0, &leader, &p, 10, &SolverSettings::default()).unwrap();
        assert!(plan.first_input() <= -0.5 / 0.42 + 1e-7);
    }

    #[test]
    fn stopped_leader_one_metre_ahead_is_infeasible() {
        let p = params(effort_only());
        let leader = constant_speed(VehicleState::new(1.0, 0.0), 0, 30, 0.2).unwrap();
        let result = solve_nominal(
            &VehicleState::new(0.0, 35.0),
            0,
            &leader,
            &p,
            30,
            &SolverSettings::default(),
        );
        assert!(matches!(result, Err(Error::Infeasible(_))));
    }

    #[test]
    fn row_and_variable_counts_for_seventy_steps() {
        let p = params(effort_only());
        let leader = constant_speed(VehicleState::new(100.0, 30.0), 0, 70, 0.2).unwrap();
        let problem = build_problem(&VehicleState::new(0.0, 35.0), 0, &leader, &p, 70).unwrap();
        assert_eq!(problem.qp.num_vars(), 70);
        assert!(!problem.has_slack);
        assert_eq!(problem.rows.ttc, 70);
        assert_eq!(problem.qp.num_ineq(), problem.rows.total());
        assert_eq!(problem.qp.lower.len(), 70);
    }

    #[test]
    fn short_leader_prediction_is_rejected() {
        let p = params(effort_only());
        let leader = constant_speed(VehicleState::new(100.0, 30.0), 0, 50, 0.2).unwrap();
        let err = build_problem(&VehicleState::new(0.0, 35.0), 0, &leader, &p, 70).unwrap_err();
        assert!(matches!(err, Error::Horizon { .. }));
    }

    #[test]
    fn follower_ahead_of_leader_is_rejected() {
        let p = params(effort_only());
        let leader = constant_speed(VehicleState::new(0.0, 30.0), 0, 10, 0.2).unwrap();
        assert!(build_problem(&VehicleState::new(5.0, 30.0), 0, &leader, &p, 10).is_err());
    }
}
