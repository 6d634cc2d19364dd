//! Longitudinal point-mass vehicle model.
//!
//! A vehicle is a point on a line driven by a piecewise-constant acceleration.
//! The discrete update is the exact double-integrator solution over one sample
//! period, with the velocity clamped at zero so that vehicles never reverse.

use crate::error::{ensure_finite, Error, Result};

/// Position (m) and velocity (m/s) of one vehicle at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub position: f64,
    pub velocity: f64,
}

impl VehicleState {
    pub fn new(position: f64, velocity: f64) -> Self {
        Self { position, velocity }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("position", self.position)?;
        ensure_finite("velocity", self.velocity)?;
        if self.velocity < 0.0 {
            return Err(Error::validation(format!(
                "velocity must be nonnegative, got {}",
                self.velocity
            )));
        }
        Ok(())
    }
}

/// Acceleration limits `[min, max]` in m/s².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBounds {
    pub min: f64,
    pub max: f64,
}

impl InputBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        ensure_finite("input lower bound", min)?;
        ensure_finite("input upper bound", max)?;
        if min > max {
            return Err(Error::validation(format!(
                "input bounds are not ordered: [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, u: f64, tol: f64) -> bool {
        u >= self.min - tol && u <= self.max + tol
    }

    pub fn saturate(&self, u: f64) -> f64 {
        u.clamp(self.min, self.max)
    }

    /// True when `u` sits on either limit (within `tol`).
    pub fn is_saturated(&self, u: f64, tol: f64) -> bool {
        u >= self.max - tol || u <= self.min + tol
    }
}

/// Advances one vehicle by one sample period under constant acceleration `accel`.
pub fn step(state: VehicleState, accel: f64, dt: f64) -> Result<VehicleState> {
    ensure_finite("position", state.position)?;
    ensure_finite("velocity", state.velocity)?;
    ensure_finite("acceleration", accel)?;
    ensure_finite("dt", dt)?;
    if dt <= 0.0 {
        return Err(Error::validation(format!("dt must be positive, got {dt}")));
    }
    Ok(VehicleState {
        position: state.position + state.velocity * dt + 0.5 * accel * dt * dt,
        velocity: (state.velocity + accel * dt).max(0.0),
    })
}

/// A time-indexed sequence of states and the inputs that produced them.
///
/// `states[k]` is the state at absolute step `origin + k`; `inputs[k]` is
/// applied between `states[k]` and `states[k + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub origin: usize,
    pub iteration: usize,
    pub dt: f64,
    pub states: Vec<VehicleState>,
    pub inputs: Vec<f64>,
}

impl Trajectory {
    /// Number of transitions (`states.len() - 1`).
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Last absolute step covered by the trajectory.
    pub fn last_step(&self) -> usize {
        self.origin + self.horizon()
    }

    /// State at absolute step `step`, if covered.
    pub fn at(&self, step: usize) -> Option<&VehicleState> {
        step.checked_sub(self.origin)
            .and_then(|k| self.states.get(k))
    }

    pub fn terminal(&self) -> &VehicleState {
        self.states
            .last()
            .expect("trajectory holds at least one state")
    }

    /// Largest deviation between each stored successor and the one produced by [`step`].
    pub fn dynamics_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (k, &u) in self.inputs.iter().enumerate() {
            let Ok(next) = step(self.states[k], u, self.dt) else {
                return f64::INFINITY;
            };
            let stored = self.states[k + 1];
            worst = worst
                .max((next.position - stored.position).abs())
                .max((next.velocity - stored.velocity).abs());
        }
        worst
    }

    /// Sum of `u² dt` over the inputs.
    pub fn control_energy(&self) -> f64 {
        self.inputs.iter().map(|u| u * u * self.dt).sum()
    }
}

/// Rolls `x0` forward through `inputs`, producing `inputs.len() + 1` states.
pub fn simulate(x0: VehicleState, inputs: &[f64], dt: f64) -> Result<Trajectory> {
    simulate_from(x0, 0, inputs, dt)
}

/// Same as [`simulate`] but stamps the trajectory with an absolute origin step.
pub fn simulate_from(
    x0: VehicleState,
    origin: usize,
    inputs: &[f64],
    dt: f64,
) -> Result<Trajectory> {
    x0.validate()?;
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0);
    let mut x = x0;
    for &u in inputs {
        x = step(x, u, dt)?;
        states.push(x);
    }
    Ok(Trajectory {
        origin,
        iteration: 0,
        dt,
        states,
        inputs: inputs.to_vec(),
    })
}

/// Constant-speed rollout, used for the leader.
pub fn constant_speed(
    x0: VehicleState,
    origin: usize,
    steps: usize,
    dt: f64,
) -> Result<Trajectory> {
    simulate_from(x0, origin, &vec![0.0; steps], dt)
}

/// Gap divided by closing speed; `+∞` whenever the leader is not slower.
pub fn time_to_collision(ego: &VehicleState, lead: &VehicleState) -> Result<f64> {
    let gap = lead.position - ego.position;
    if !(gap >= 0.0) {
        return Err(Error::validation(format!(
            "leader at {} is behind the ego vehicle at {}",
            lead.position, ego.position
        )));
    }
    let closing = ego.velocity - lead.velocity;
    if closing <= 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(gap / closing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_velocity_step() {
        let next = step(VehicleState::new(0.0, 30.0), 0.0, 0.2).unwrap();
        assert_eq!(next, VehicleState::new(6.0, 30.0));
    }

    #[test]
    fn braking_step() {
        let next = step(VehicleState::new(0.0, 35.0), -6.0, 0.2).unwrap();
        assert!((next.position - 6.88).abs() < 1e-12);
        assert!((next.velocity - 33.8).abs() < 1e-12);
    }

    #[test]
    fn velocity_clamps_at_zero() {
        let next = step(VehicleState::new(0.0, 0.5), -6.0, 0.2).unwrap();
        assert_eq!(next.velocity, 0.0);
    }

    #[test]
    fn step_rejects_nonfinite() {
        assert!(step(VehicleState::new(f64::NAN, 1.0), 0.0, 0.2).is_err());
        assert!(step(VehicleState::new(0.0, 1.0), f64::INFINITY, 0.2).is_err());
        assert!(step(VehicleState::new(0.0, 1.0), 0.0, 0.0).is_err());
    }

    #[test]
    fn simulate_constant_speed() {
        let traj = simulate(VehicleState::new(0.0, 30.0), &[0.0; 3], 0.2).unwrap();
        let positions: Vec<f64> = traj.states.iter().map(|s| s.position).collect();
        assert_eq!(positions, vec![0.0, 6.0, 12.0, 18.0]);
    }

    #[test]
    fn simulate_braking_final_speed() {
        let traj = simulate(VehicleState::new(0.0, 35.0), &[-6.0; 10], 0.2).unwrap();
        assert!((traj.terminal().velocity - 23.0).abs() < 1e-12);
    }

    #[test]
    fn simulate_empty_is_single_state() {
        let traj = simulate(VehicleState::new(1.0, 2.0), &[], 0.2).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.horizon(), 0);
    }

    #[test]
    fn ttc_cases() {
        let ego = VehicleState::new(0.0, 35.0);
        assert_eq!(
            time_to_collision(&ego, &VehicleState::new(10.0, 30.0)).unwrap(),
            2.0
        );
        let ego = VehicleState::new(0.0, 30.0);
        assert!(time_to_collision(&ego, &VehicleState::new(42.0, 30.0))
            .unwrap()
            .is_infinite());
        assert!(time_to_collision(&ego, &VehicleState::new(5.0, 31.0))
            .unwrap()
            .is_infinite());
        assert!(time_to_collision(&ego, &VehicleState::new(-1.0, 31.0)).is_err());
    }

    proptest! {
        #[test]
        fn rollout_satisfies_dynamics(
            v0 in 0.0f64..40.0,
            inputs in proptest::collection::vec(-6.0f64..6.0, 0..40),
        ) {
            let traj = simulate(VehicleState::new(0.0, v0), &inputs, 0.2).unwrap();
            prop_assert!(traj.dynamics_residual() <= 1e-10);
            prop_assert_eq!(traj.states.len(), inputs.len() + 1);
        }

        #[test]
        fn rollout_splits(
            v0 in 0.0f64..40.0,
            inputs in proptest::collection::vec(-6.0f64..6.0, 1..30),
            cut in 0usize..30,
        ) {
            let cut = cut.min(inputs.len());
            let x0 = VehicleState::new(3.0, v0);
            let whole = simulate(x0, &inputs, 0.2).unwrap();
            let head = simulate(x0, &inputs[..cut], 0.2).unwrap();
            let tail = simulate(*head.terminal(), &inputs[cut..], 0.2).unwrap();
            let mut joined = head.states.clone();
            joined.extend_from_slice(&tail.states[1..]);
            prop_assert_eq!(joined, whole.states);
        }

        #[test]
        fn ttc_grows_with_gap(gap in 0.1f64..200.0, extra in 0.01f64..50.0, ve in 31.0f64..40.0) {
            let ego = VehicleState::new(0.0, ve);
            let near = time_to_collision(&ego, &VehicleState::new(gap, 30.0)).unwrap();
            let far = time_to_collision(&ego, &VehicleState::new(gap + extra, 30.0)).unwrap();
            prop_assert!(far > near);
        }
    }
}
