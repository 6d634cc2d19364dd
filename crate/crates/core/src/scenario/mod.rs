//! The leader/follower/channel co-simulation used for both control modes.
//!
//! A single [`Clock`] owns packet transmission and reception. The baseline
//! re-solves the nominal MPC every step from whatever the clock has delivered;
//! the SR-LMPC mode plans the whole episode at step 0 and then replays the
//! converged plan through the same clock so both artifacts report reception
//! the same way.

mod config;
mod output;

use std::fmt;
use std::str::FromStr;

pub use config::{load_config, ChannelKind, ScenarioConfig, CONFIG_HEADER};
pub use output::{
    emit_csv, emit_plot_data, format_number, write_comparison, write_iterations, write_plot_data,
    write_steps, COMPARISON_HEADER, ITERATIONS_HEADER, PLOT_HEADER, STEPS_HEADER,
};

use crate::comm::{effective_horizon, prune_stale, ChannelPredictor, DeadZone, LeaderPacket};
use crate::dynamics::{
    constant_speed, step, time_to_collision, InputBounds, Trajectory, VehicleState,
};
use crate::error::{Error, Result};
use crate::lmpc;
use crate::nominal::solve_nominal;

/// Inputs within this distance of a bound count as saturated.
pub const SATURATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Nominal MPC on the latest delivered packet, no channel prediction.
    Baseline,
    SrLmpc,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "srlmpc" => Ok(Mode::SrLmpc),
            _ => Err(Error::config(
                "mode",
                format!("expected baseline or srlmpc, got {s:?}"),
            )),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::SrLmpc => "srlmpc",
        })
    }
}

/// One row per step `0..=N`. The last row has no input.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub ego: VehicleState,
    pub input: Option<f64>,
    pub leader: VehicleState,
    /// Whether the packet sent at this step gets through.
    pub delivered: bool,
    /// Steps of leader prediction usable at this step.
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iteration: usize,
    pub cost: f64,
    pub energy: f64,
    pub saturated: usize,
    pub dropped: usize,
    pub zone_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    /// `Σ u²·dt` over the executed inputs.
    pub energy: f64,
    pub dropped: usize,
    pub zone_steps: usize,
    pub saturated: usize,
    pub min_ttc: f64,
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub mode: Mode,
    pub dt: f64,
    pub steps: Vec<StepRow>,
    /// Seed as iteration 0, then every successful iteration. Empty for the baseline.
    pub iterations: Vec<IterationRow>,
    /// Planned trajectory of every iteration, for plotting.
    pub trajectories: Vec<Trajectory>,
    pub converged: bool,
    pub failure: Option<String>,
    /// Steps planned on a blind constant-speed extrapolation.
    pub fallback_steps: usize,
    pub summary: Summary,
}

impl RunArtifact {
    /// Executed follower trajectory.
    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            origin: 0,
            iteration: 0,
            dt: self.dt,
            states: self.steps.iter().map(|r| r.ego).collect(),
            inputs: self.steps.iter().filter_map(|r| r.input).collect(),
        }
    }
}

fn count_saturated(inputs: &[f64], bounds: &InputBounds) -> usize {
    inputs
        .iter()
        .filter(|&&u| bounds.is_saturated(u, SATURATION_TOL))
        .count()
}

fn count_zone_steps(ego: &Trajectory, leader: &Trajectory, zone: &DeadZone) -> usize {
    ego.states
        .iter()
        .enumerate()
        .filter(|(k, x)| leader.at(ego.origin + k).is_some_and(|l| zone.blocks(x, l)))
        .count()
}

/// Packet bookkeeping shared by both modes.
struct Clock<'a> {
    cfg: &'a ScenarioConfig,
    predictor: &'a dyn ChannelPredictor,
    leader: &'a Trajectory,
    in_flight: Vec<(usize, LeaderPacket)>,
    latest: LeaderPacket,
}

impl<'a> Clock<'a> {
    /// Starts with the step-0 packet already in hand.
    fn new(
        cfg: &'a ScenarioConfig,
        predictor: &'a dyn ChannelPredictor,
        leader: &'a Trajectory,
    ) -> Result<Self> {
        let latest = Self::packet(cfg, leader, 0)?;
        Ok(Self {
            cfg,
            predictor,
            leader,
            in_flight: Vec::new(),
            latest,
        })
    }

    fn packet(cfg: &ScenarioConfig, leader: &Trajectory, step: usize) -> Result<LeaderPacket> {
        let lead = leader.at(step).ok_or(Error::Horizon {
            required: step,
            available: leader.last_step(),
        })?;
        Ok(LeaderPacket {
            trajectory: constant_speed(*lead, step, cfg.horizon, cfg.dt)?,
        })
    }

    fn receive(&mut self, now: usize) {
        let latest = &mut self.latest;
        self.in_flight.retain(|(arrival, packet)| {
            if *arrival > now {
                return true;
            }
            if packet.send_time() > latest.send_time() {
                *latest = packet.clone();
            }
            false
        });
    }

    /// Leader transmits at `now` if scheduled; returns whether that packet gets through.
    fn transmit(&mut self, now: usize, ego: &VehicleState) -> Result<bool> {
        let lead = self.leader.at(now).expect("leader covers the episode");
        let delivery = self.predictor.delivery(now, ego, lead);
        let Some(delay) = delivery.delay_steps(self.cfg.dt) else {
            return Ok(false);
        };
        if now.is_multiple_of(self.cfg.transmit_period) {
            let packet = Self::packet(self.cfg, self.leader, now)?;
            self.in_flight.push((now + delay, packet));
        }
        Ok(true)
    }

    /// Usable horizon at `now`, capped at the episode end. Zero when the packet is spent.
    fn horizon(&self, now: usize) -> usize {
        let remaining =
            effective_horizon(now, self.latest.send_time(), self.latest.horizon()).unwrap_or(0);
        remaining.min(self.cfg.horizon.saturating_sub(now))
    }
}

fn finish(
    mode: Mode,
    cfg: &ScenarioConfig,
    steps: Vec<StepRow>,
    iterations: Vec<IterationRow>,
    trajectories: Vec<Trajectory>,
    converged: bool,
    failure: Option<String>,
    fallback_steps: usize,
) -> RunArtifact {
    let inputs: Vec<f64> = steps.iter().filter_map(|r| r.input).collect();
    let zone = cfg.zone();
    let min_ttc = steps
        .iter()
        .skip(1)
        .filter_map(|r| time_to_collision(&r.ego, &r.leader).ok())
        .fold(f64::INFINITY, f64::min);
    let summary = Summary {
        energy: inputs.iter().map(|u| u * u * cfg.dt).sum(),
        dropped: steps.iter().filter(|r| !r.delivered).count(),
        zone_steps: steps
            .iter()
            .filter(|r| zone.blocks(&r.ego, &r.leader))
            .count(),
        saturated: count_saturated(&inputs, &cfg.bounds()),
        min_ttc,
    };
    RunArtifact {
        mode,
        dt: cfg.dt,
        steps,
        iterations,
        trajectories,
        converged,
        failure,
        fallback_steps,
        summary,
    }
}

/// Leader prediction for a blind step: last known state rolled forward at constant speed.
fn extrapolate(packet: &LeaderPacket, now: usize, steps: usize, dt: f64) -> Result<Trajectory> {
    let t = &packet.trajectory;
    let last = t.terminal();
    let ahead = now.saturating_sub(t.last_step()) as f64 * dt;
    let start = VehicleState::new(last.position + last.velocity * ahead, last.velocity);
    constant_speed(start, now, steps, dt)
}

fn run_baseline(
    cfg: &ScenarioConfig,
    predictor: &dyn ChannelPredictor,
    leader: &Trajectory,
) -> Result<RunArtifact> {
    let n = cfg.horizon;
    let params = cfg.control_params();
    let settings = cfg.lmpc_config().settings;
    let mut clock = Clock::new(cfg, predictor, leader)?;
    let mut x = cfg.follower_start();
    let mut rows = Vec::with_capacity(n + 1);
    let mut fallback_steps = 0;
    for t in 0..=n {
        clock.receive(t);
        let horizon = clock.horizon(t);
        let input = if t == n {
            None
        } else if horizon == 0 {
            fallback_steps += 1;
            let guess = extrapolate(&clock.latest, t, n - t, cfg.dt)?;
            let mut cautious = params;
            cautious.ttc_min *= cfg.fallback_ttc_scale;
            Some(solve_nominal(&x, t, &guess, &cautious, n - t, &settings)?.first_input())
        } else {
            let known = prune_stale(&clock.latest, t)?;
            Some(solve_nominal(&x, t, &known, &params, horizon, &settings)?.first_input())
        };
        let delivered = clock.transmit(t, &x)?;
        rows.push(StepRow {
            step: t,
            ego: x,
            input,
            leader: *leader.at(t).expect("leader covers the episode"),
            delivered,
            horizon,
        });
        if let Some(u) = input {
            x = step(x, u, cfg.dt)?;
        }
    }
    Ok(finish(
        Mode::Baseline,
        cfg,
        rows,
        Vec::new(),
        Vec::new(),
        true,
        None,
        fallback_steps,
    ))
}

fn run_srlmpc(
    cfg: &ScenarioConfig,
    predictor: &dyn ChannelPredictor,
    leader: &Trajectory,
) -> Result<RunArtifact> {
    let lcfg = cfg.lmpc_config();
    let packet = Clock::packet(cfg, leader, 0)?;
    let result = lmpc::run(&cfg.follower_start(), 0, &packet, &lcfg, predictor)?;
    let zone = cfg.zone();
    let iterations = result
        .records
        .iter()
        .map(|r| IterationRow {
            iteration: r.iteration,
            cost: r.cost,
            energy: r.trajectory.control_energy(),
            saturated: count_saturated(&r.trajectory.inputs, &cfg.bounds()),
            dropped: r.dropped(),
            zone_steps: count_zone_steps(&r.trajectory, leader, &zone),
        })
        .collect();
    let plan = &result.final_record().trajectory;
    let mut clock = Clock::new(cfg, predictor, leader)?;
    let mut rows = Vec::with_capacity(plan.states.len());
    for (t, x) in plan.states.iter().enumerate() {
        clock.receive(t);
        let horizon = clock.horizon(t);
        let delivered = clock.transmit(t, x)?;
        rows.push(StepRow {
            step: t,
            ego: *x,
            input: plan.inputs.get(t).copied(),
            leader: *leader.at(t).expect("leader covers the episode"),
            delivered,
            horizon,
        });
    }
    let trajectories = result
        .records
        .iter()
        .map(|r| r.trajectory.clone())
        .collect();
    Ok(finish(
        Mode::SrLmpc,
        cfg,
        rows,
        iterations,
        trajectories,
        result.converged,
        result.failure,
        0,
    ))
}

/// Runs one episode of `cfg.horizon` steps from step 0.
///
/// Startup infeasibility surfaces as [`Error::Infeasible`].
pub fn run_scenario(cfg: &ScenarioConfig, mode: Mode) -> Result<RunArtifact> {
    cfg.validate()?;
    let predictor = cfg.predictor()?;
    // packets sent up to step N each carry N steps
    let leader = cfg.leader(2 * cfg.horizon)?;
    match mode {
        Mode::Baseline => run_baseline(cfg, &*predictor, &leader),
        Mode::SrLmpc => run_srlmpc(cfg, &*predictor, &leader),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub mode: Mode,
    pub summary: Summary,
    /// Whether the mode stopped cleanly (always true for the baseline).
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub baseline: RunArtifact,
    pub srlmpc: RunArtifact,
}

impl Comparison {
    pub fn row(&self, mode: Mode) -> &ComparisonRow {
        self.rows
            .iter()
            .find(|r| r.mode == mode)
            .expect("both modes present")
    }
}

pub fn compare(cfg: &ScenarioConfig) -> Result<Comparison> {
    let baseline = run_scenario(cfg, Mode::Baseline)?;
    let srlmpc = run_scenario(cfg, Mode::SrLmpc)?;
    let rows = [&baseline, &srlmpc]
        .iter()
        .map(|a| ComparisonRow {
            mode: a.mode,
            summary: a.summary,
            converged: a.converged,
        })
        .collect();
    Ok(Comparison {
        rows,
        baseline,
        srlmpc,
    })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>12} {:>8} {:>10} {:>10} {:>10}",
            "mode", "energy", "dropped", "saturated", "zone", "min_ttc"
        )?;
        for r in &self.rows {
            let s = &r.summary;
            writeln!(
                f,
                "{:<10} {:>12.4} {:>8} {:>10} {:>10} {:>10.3}",
                r.mode.to_string(),
                s.energy,
                s.dropped,
                s.saturated,
                s.zone_steps,
                s.min_ttc
            )?;
        }
        Ok(())
    }
}
