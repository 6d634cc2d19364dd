//! Short-range learning MPC.
//!
//! Starting from a feasible nominal plan, each iteration sweeps a short window
//! of `ν` steps along the `N`-step horizon. At every offset `τ` the window's
//! last state is pinned to one stored safe-set state, the best pin is chosen by
//! solving one convex QP per candidate, and only the first input is applied.
//! The finished trajectory joins the safe set and its cost-to-go (including
//! predicted delivery times) feeds the next iteration.
//!
//! Picking exactly one stored state is a one-hot selection. Enumerating
//! candidates solves that selection exactly, so no integer or complementarity
//! machinery is needed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Vector2};

use crate::comm::{
    effective_horizon, prune_stale, ChannelPredictor, DeadZone, DeliveryProfile, LeaderPacket,
};
use crate::condensed::{self, PositionLimit, TerminalCost, Window, WindowQp};
use crate::cost::{stage_costs, terminal_cost, ControlParams};
use crate::dynamics::{simulate_from, step, Trajectory, VehicleState};
use crate::error::{ensure_finite, Error, Result};
use crate::nominal::{solve_nominal, NominalPlan};
use crate::qp::{self, QpStatus, SolverSettings};
use crate::safe_set::{compute_cost_to_go_with_comm, DynamicSafeSet, SafeSetEntry};
use crate::validate::{validate, Report, Rules};

/// Relative window inside which two candidate objectives count as tied.
pub const TIE_TOL: f64 = 1e-7;
/// Tolerance for cheap pre-screens that discard a candidate without a solve.
const SCREEN_TOL: f64 = 1e-7;

/// Which side of the dead zone the follower keeps to while the leader is inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZoneBranch {
    #[default]
    Behind,
    Ahead,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrLmpcConfig {
    pub params: ControlParams,
    /// Outer horizon `N`.
    pub horizon: usize,
    /// Window length `ν`.
    pub short_horizon: usize,
    /// Discount on delivery times inside the cost-to-go.
    pub alpha: f64,
    /// Cost charged for a dropped packet (s).
    pub omega_max: f64,
    pub conv_tol: f64,
    pub max_iters: usize,
    pub dead_zone: Option<DeadZone>,
    pub zone_margin: f64,
    pub branch: ZoneBranch,
    /// Only offer a stored state as terminal target at or after the step it was first reached.
    ///
    /// A state taken from later in a stored run carries a cost-to-go that skips
    /// stages still inside the current horizon, so without this filter the
    /// sweep can drift away from a seed that is already optimal.
    pub time_consistent: bool,
    pub settings: SolverSettings,
}

impl SrLmpcConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.short_horizon == 0 || self.short_horizon >= self.horizon {
            return Err(Error::validation(format!(
                "short horizon must satisfy 0 < ν < N, got ν = {}, N = {}",
                self.short_horizon, self.horizon
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::validation(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        ensure_finite("omega_max", self.omega_max)?;
        ensure_finite("conv_tol", self.conv_tol)?;
        ensure_finite("zone_margin", self.zone_margin)?;
        if self.omega_max <= 0.0 || self.conv_tol <= 0.0 || self.zone_margin < 0.0 {
            return Err(Error::validation(
                "omega_max and conv_tol must be positive, zone_margin nonnegative",
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::validation("max_iters must be at least 1"));
        }
        Ok(())
    }

    fn rules(&self) -> Rules {
        Rules::from_params(&self.params, self.dead_zone)
    }
}

/// Forbidden follower interval at each step of `steps`: the zone while the leader is inside it.
pub fn update_dead_zone(
    leader: &Trajectory,
    zone: &DeadZone,
    steps: std::ops::RangeInclusive<usize>,
) -> Result<Vec<Option<DeadZone>>> {
    steps
        .map(|k| {
            let lead = leader.at(k).ok_or(Error::Horizon {
                required: k,
                available: leader.last_step(),
            })?;
            Ok(zone.contains(lead.position).then_some(*zone))
        })
        .collect()
}

/// Convex half-space standing in for "outside the forbidden interval".
pub fn zone_limit(forbidden: &DeadZone, margin: f64, branch: ZoneBranch) -> PositionLimit {
    match branch {
        ZoneBranch::Behind => PositionLimit::AtMost(forbidden.min - margin),
        ZoneBranch::Ahead => PositionLimit::AtLeast(forbidden.max + margin),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemResult {
    /// Window plan starting at the window's first step.
    pub plan: Trajectory,
    pub selected: SafeSetEntry,
    /// Running cost of the plan plus the selected entry's cost-to-go.
    pub objective: f64,
    /// QPs actually solved.
    pub solved: usize,
    pub candidates: usize,
}

/// Exact equality-only minimum over the window, used as a lower bound.
struct Relaxation {
    z0: DVector<f64>,
    f0: f64,
    s_inv: Matrix2<f64>,
    m: DMatrix<f64>,
}

impl Relaxation {
    fn new(w: &WindowQp) -> Option<Self> {
        let chol = Cholesky::<f64, Dyn>::new(w.qp.hessian.clone())?;
        let z0 = -chol.solve(&w.qp.linear);
        let f0 = 0.5 * w.qp.linear.dot(&z0);
        let (m, _) = w.terminal_equalities(&VehicleState::default());
        let hm = chol.solve(&m.transpose());
        let s = &m * hm;
        let s_inv = Matrix2::new(s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)]).try_inverse()?;
        Some(Self { z0, f0, s_inv, m })
    }

    fn bound(&self, rhs: &DVector<f64>) -> f64 {
        let mz = &self.m * &self.z0;
        let d = Vector2::new(mz[0] - rhs[0], mz[1] - rhs[1]);
        self.f0 + 0.5 * d.dot(&(self.s_inv * d))
    }
}

struct Screen<'a> {
    start: VehicleState,
    start_step: usize,
    len: usize,
    leader: &'a Trajectory,
    params: &'a ControlParams,
    limits: &'a [Option<PositionLimit>],
}

impl Screen<'_> {
    /// False when `target` provably cannot terminate a feasible window.
    fn admits(&self, target: &VehicleState) -> bool {
        let p = self.params;
        let dt = p.dt;
        let n = self.len as f64;
        let (u_lo, u_hi) = (p.bounds.min, p.bounds.max);
        let dv = target.velocity - self.start.velocity;
        if dv < u_lo * n * dt - SCREEN_TOL
            || dv > u_hi * n * dt + SCREEN_TOL
            || target.velocity < -SCREEN_TOL
        {
            return false;
        }
        let base = self.start.position + self.start.velocity * n * dt;
        let half = 0.5 * n * n * dt * dt;
        if target.position < base + u_lo * half - SCREEN_TOL
            || target.position > base + u_hi * half + SCREEN_TOL
        {
            return false;
        }
        let lead = self
            .leader
            .at(self.start_step + self.len)
            .expect("leader covers window");
        let gap = lead.position - target.position;
        if gap < p.min_gap - SCREEN_TOL
            || gap < p.ttc_min * (target.velocity - lead.velocity) - SCREEN_TOL
        {
            return false;
        }
        for (idx, limit) in self.limits.iter().enumerate() {
            let Some(limit) = limit else { continue };
            let k = idx + 1;
            let s = (self.len - k) as f64;
            // positions at step k consistent with reaching `target` at the end
            let lowest = target.position - target.velocity * s * dt + u_lo * 0.5 * s * s * dt * dt;
            let highest = target.position - target.velocity * s * dt + u_hi * 0.5 * s * s * dt * dt;
            match *limit {
                PositionLimit::AtMost(b) if lowest > b + SCREEN_TOL => return false,
                PositionLimit::AtLeast(b) if highest < b - SCREEN_TOL => return false,
                _ => {}
            }
        }
        true
    }
}

fn tie_window(best: f64) -> f64 {
    TIE_TOL * (1.0 + best.abs())
}

/// Picks the terminal safe-set state for one window.
///
/// Every candidate gets the same QP with a different terminal equality. The
/// objective is the window's running cost plus the candidate's `q`; among
/// candidates within [`TIE_TOL`] of the best, the smallest `(ℓ, η)` wins.
pub fn solve_subproblem(
    x_start: &VehicleState,
    start_step: usize,
    leader: &Trajectory,
    candidates: &[SafeSetEntry],
    limits: &[Option<PositionLimit>],
    cfg: &SrLmpcConfig,
) -> Result<SubproblemResult> {
    if candidates.is_empty() {
        return Err(Error::validation("no terminal candidates"));
    }
    let len = cfg.short_horizon;
    let base = condensed::build(
        &Window {
            start: *x_start,
            start_step,
            len,
            leader,
            params: &cfg.params,
            limits,
        },
        TerminalCost::None,
    )?;
    let screen = Screen {
        start: *x_start,
        start_step,
        len,
        leader,
        params: &cfg.params,
        limits,
    };
    let relaxation = Relaxation::new(&base);

    let mut order: Vec<(f64, SafeSetEntry, DMatrix<f64>, DVector<f64>)> = candidates
        .iter()
        .filter(|c| screen.admits(&c.state))
        .map(|c| {
            let (a, b) = base.terminal_equalities(&c.state);
            let running = relaxation
                .as_ref()
                .map_or(0.0, |r| r.bound(&b) + base.constant)
                .max(0.0);
            (running + c.q, *c, a, b)
        })
        .collect();
    order.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1.iteration.cmp(&y.1.iteration))
            .then(x.1.eta.cmp(&y.1.eta))
    });

    let mut solved = 0;
    let mut feasible: Vec<(f64, SafeSetEntry, DVector<f64>)> = Vec::new();
    let mut best = f64::INFINITY;
    for (bound, cand, a, b) in order {
        if bound > best + tie_window(best) {
            break;
        }
        let mut problem = base.qp.clone();
        problem.eq_matrix = a;
        problem.eq_rhs = b;
        let sol = qp::solve(&problem, &cfg.settings)?;
        solved += 1;
        if sol.status != QpStatus::Optimal || !sol.objective.is_finite() {
            continue;
        }
        let objective = sol.objective + base.constant + cand.q;
        best = best.min(objective);
        feasible.push((objective, cand, sol.z));
    }
    let Some(min) = feasible.iter().map(|f| f.0).min_by(f64::total_cmp) else {
        return Err(Error::Infeasible(format!(
            "no safe-set state is reachable from step {start_step} ({} candidates)",
            candidates.len()
        )));
    };
    let (_, selected, z) = feasible
        .into_iter()
        .filter(|f| f.0 <= min + tie_window(min))
        .min_by(|x, y| (x.1.iteration, x.1.eta).cmp(&(y.1.iteration, y.1.eta)))
        .expect("minimum is in the tie set");

    let inputs: Vec<f64> = base
        .inputs(&z)
        .iter()
        .map(|&u| cfg.params.bounds.saturate(u))
        .collect();
    let mut plan = simulate_from(*x_start, start_step, &inputs, cfg.params.dt)?;
    // the rollout can differ from the pinned state by solver round-off only
    let end = plan.terminal();
    debug_assert!((end.position - selected.state.position).abs() < 1e-6);
    debug_assert!((end.velocity - selected.state.velocity).abs() < 1e-6);
    let running: f64 = stage_costs(&plan, leader, &cfg.params)?.iter().sum();
    plan.iteration = selected.iteration;
    Ok(SubproblemResult {
        plan,
        selected,
        objective: running + selected.q,
        solved,
        candidates: candidates.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubproblemDiagnostics {
    pub tau: usize,
    pub iteration: usize,
    pub eta: usize,
    pub objective: f64,
    pub solved: usize,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub trajectory: Trajectory,
    pub leader: Trajectory,
    pub omega: DeliveryProfile,
    pub stage_costs: Vec<f64>,
    /// Cost-to-go per state, including discounted delivery times.
    pub q: Vec<f64>,
    /// Iteration cost `q(0)`.
    pub cost: f64,
    pub subproblems: Vec<SubproblemDiagnostics>,
    pub validation: Report,
}

impl IterationRecord {
    pub fn dropped(&self) -> usize {
        self.omega.dropped()
    }
}

fn finish_record(
    iteration: usize,
    trajectory: Trajectory,
    leader: &Trajectory,
    rules: &Rules,
    cfg: &SrLmpcConfig,
    predictor: &dyn ChannelPredictor,
    subproblems: Vec<SubproblemDiagnostics>,
) -> Result<IterationRecord> {
    let validation = validate(&trajectory, leader, rules);
    let omega = predictor.predict(&trajectory, leader)?;
    if omega.start != trajectory.origin || omega.len() != trajectory.states.len() {
        return Err(Error::validation(
            "delivery prediction does not cover the trajectory",
        ));
    }
    let z = stage_costs(&trajectory, leader, &cfg.params)?;
    let term = terminal_cost(&trajectory, leader, &cfg.params)?;
    let q = compute_cost_to_go_with_comm(
        &trajectory,
        &z,
        &omega.costs(cfg.omega_max),
        cfg.alpha,
        term,
    )?;
    Ok(IterationRecord {
        iteration,
        cost: q[0],
        trajectory: Trajectory {
            iteration,
            ..trajectory
        },
        leader: leader.clone(),
        omega,
        stage_costs: z,
        q,
        subproblems,
        validation,
    })
}

/// One full sweep `τ = 0..=N−ν`, storing the result as iteration `ds.iterations()`.
///
/// On any infeasible window the iteration is abandoned and `ds` is untouched.
pub fn run_iteration(
    ds: &mut DynamicSafeSet,
    x0: &VehicleState,
    t: usize,
    packet: &LeaderPacket,
    cfg: &SrLmpcConfig,
    predictor: &dyn ChannelPredictor,
) -> Result<IterationRecord> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::validation("safe set must hold a seed trajectory"));
    }
    let leader = prune_stale(packet, t)?;
    let reach = effective_horizon(t, packet.send_time(), packet.horizon())?;
    let (n, nu) = (cfg.horizon, cfg.short_horizon);
    if reach < n {
        return Err(Error::Horizon {
            required: t + n,
            available: leader.last_step(),
        });
    }
    let candidates = ds.candidates(reach);
    let iteration = ds.iterations();

    let mut x = *x0;
    let mut applied = Vec::with_capacity(n);
    let mut diagnostics = Vec::with_capacity(n - nu + 1);
    let mut last_plan = None;
    for tau in 0..=n - nu {
        let start = t + tau;
        let limits: Vec<Option<PositionLimit>> = match &cfg.dead_zone {
            Some(zone) => update_dead_zone(&leader, zone, start + 1..=start + nu)?
                .into_iter()
                .map(|f| f.map(|z| zone_limit(&z, cfg.zone_margin, cfg.branch)))
                .collect(),
            None => Vec::new(),
        };
        let window_candidates: Vec<SafeSetEntry> = if cfg.time_consistent {
            candidates
                .iter()
                .filter(|c| c.eta <= tau + nu)
                .copied()
                .collect()
        } else {
            candidates.clone()
        };
        let result = solve_subproblem(&x, start, &leader, &window_candidates, &limits, cfg)?;
        let u = result.plan.inputs[0];
        applied.push(u);
        x = step(x, u, cfg.params.dt)?;
        diagnostics.push(SubproblemDiagnostics {
            tau,
            iteration: result.selected.iteration,
            eta: result.selected.eta,
            objective: result.objective,
            solved: result.solved,
            candidates: result.candidates,
        });
        last_plan = Some(result.plan);
    }
    let plan = last_plan.expect("at least one window");
    applied.extend_from_slice(&plan.inputs[1..]);
    let trajectory = simulate_from(*x0, t, &applied, cfg.params.dt)?;
    let record = finish_record(
        iteration,
        trajectory,
        &leader,
        &cfg.rules(),
        cfg,
        predictor,
        diagnostics,
    )?;
    if !record.validation.is_feasible() {
        return Err(Error::Infeasible(format!(
            "iteration {iteration} failed validation: {:?}",
            record.validation.violations
        )));
    }
    ds.insert_trajectory(&record.trajectory, &leader, &record.q, &record.validation)?;
    Ok(record)
}

/// True once the last two iteration costs agree to `tol` (relative) or `max_iters` iterations ran.
///
/// `history[0]` is the seed cost, so `history.len() − 1` iterations have completed.
pub fn check_convergence(history: &[f64], tol: f64, max_iters: usize) -> bool {
    let done = history.len().saturating_sub(1);
    if done >= max_iters {
        return true;
    }
    match history {
        [.., prev, last] => (last - prev).abs() <= tol * prev.abs().max(1.0),
        _ => false,
    }
}

#[derive(Debug, Clone)]
pub struct SrLmpcResult {
    pub nominal: NominalPlan,
    /// Seed (index 0) followed by every successful iteration.
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Why the loop stopped early, if an iteration failed.
    pub failure: Option<String>,
    pub safe_set: DynamicSafeSet,
}

impl SrLmpcResult {
    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("seed record always present")
    }

    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    /// Input to apply at the plan origin.
    pub fn first_input(&self) -> f64 {
        self.final_record().trajectory.inputs[0]
    }
}

/// Full loop: seed from the nominal plan, iterate until converged or an iteration fails.
pub fn run(
    x0: &VehicleState,
    t: usize,
    packet: &LeaderPacket,
    cfg: &SrLmpcConfig,
    predictor: &dyn ChannelPredictor,
) -> Result<SrLmpcResult> {
    cfg.validate()?;
    let leader = prune_stale(packet, t)?;
    let nominal = solve_nominal(x0, t, &leader, &cfg.params, cfg.horizon, &cfg.settings)?;
    // the seed is planned without the dead-zone rule and is audited the same way
    let seed_rules = Rules::from_params(&cfg.params, None);
    let seed = finish_record(
        0,
        nominal.trajectory.clone(),
        &leader,
        &seed_rules,
        cfg,
        predictor,
        Vec::new(),
    )?;
    let mut ds = DynamicSafeSet::new();
    ds.insert_trajectory(&seed.trajectory, &leader, &seed.q, &seed.validation)?;

    let mut records = vec![seed];
    let mut converged = false;
    let mut failure = None;
    loop {
        match run_iteration(&mut ds, x0, t, packet, cfg, predictor) {
            Ok(record) => records.push(record),
            Err(Error::Infeasible(msg)) => {
                failure = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
        let history: Vec<f64> = records.iter().map(|r| r.cost).collect();
        if check_convergence(&history, cfg.conv_tol, cfg.max_iters) {
            converged = true;
            break;
        }
    }
    Ok(SrLmpcResult {
        nominal,
        records,
        converged,
        failure,
        safe_set: ds,
    })
}

/// Literal reading of the complementarity row `ζ(η)(1 − ζ(η')) = 0 ∀ η' ≥ η`, per iteration.
pub fn zeta_feasible_literal(zeta: &[Vec<f64>]) -> bool {
    let sum: f64 = zeta.iter().flatten().sum();
    if (sum - 1.0).abs() > 1e-12 || zeta.iter().flatten().any(|z| !(0.0..=1.0).contains(z)) {
        return false;
    }
    zeta.iter().all(|row| {
        (0..row.len()).all(|e| (e..row.len()).all(|e2| (row[e] * (1.0 - row[e2])).abs() <= 1e-12))
    })
}

/// Intended reading: each `ζ` is binary (`η' = η` only) and exactly one is set.
pub fn zeta_feasible_intent(zeta: &[Vec<f64>]) -> bool {
    let sum: f64 = zeta.iter().flatten().sum();
    (sum - 1.0).abs() <= 1e-12
        && zeta
            .iter()
            .flatten()
            .all(|z| (z * (1.0 - z)).abs() <= 1e-12 && (0.0..=1.0).contains(z))
}
