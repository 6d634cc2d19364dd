//! Dynamic safe set: every state of every successful iteration, each tagged
//! with its cost-to-go.
//!
//! Entries are grouped by iteration `ℓ` and indexed by their step offset `η`
//! within the stored trajectory. The set only grows unless [`DynamicSafeSet::prune`]
//! is called explicitly.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::dynamics::{Trajectory, VehicleState};
use crate::error::{Error, Result};
use crate::validate::Report;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeSetEntry {
    pub state: VehicleState,
    pub iteration: usize,
    pub eta: usize,
    pub q: f64,
    /// Input applied at this state; `None` on the terminal state.
    pub input: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DynamicSafeSet {
    entries: Vec<SafeSetEntry>,
    /// Leader prediction each iteration was planned against, indexed by `ℓ`.
    leaders: Vec<Trajectory>,
    dt: Option<f64>,
}

fn check_nonnegative(stage_costs: &[f64]) -> Result<()> {
    if let Some((k, z)) = stage_costs
        .iter()
        .enumerate()
        .find(|(_, z)| !(**z >= 0.0) || !z.is_finite())
    {
        return Err(Error::validation(format!(
            "stage cost {k} is {z}; stage costs must be finite and nonnegative"
        )));
    }
    Ok(())
}

/// Backward sum `q(k) = z(k) + q(k+1)` with `q(last) = terminal_q`.
pub fn compute_cost_to_go(
    traj: &Trajectory,
    stage_costs: &[f64],
    terminal_q: f64,
) -> Result<Vec<f64>> {
    backward(
        traj,
        stage_costs,
        &vec![0.0; traj.states.len()],
        0.0,
        terminal_q,
    )
}

fn backward(
    traj: &Trajectory,
    stage_costs: &[f64],
    omegas: &[f64],
    alpha: f64,
    terminal_q: f64,
) -> Result<Vec<f64>> {
    if stage_costs.len() != traj.inputs.len() {
        return Err(Error::validation(format!(
            "{} stage costs for {} inputs",
            stage_costs.len(),
            traj.inputs.len()
        )));
    }
    if omegas.len() != traj.states.len() {
        return Err(Error::validation(format!(
            "{} delivery times for {} states",
            omegas.len(),
            traj.states.len()
        )));
    }
    check_nonnegative(stage_costs)?;
    if !(terminal_q >= 0.0) || !terminal_q.is_finite() {
        return Err(Error::validation(format!(
            "terminal cost must be finite and nonnegative, got {terminal_q}"
        )));
    }
    if omegas.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::validation(
            "delivery times must be finite and nonnegative",
        ));
    }
    let n = traj.states.len();
    let mut q = vec![0.0; n];
    let mut comm = omegas[n - 1];
    let mut plain = terminal_q;
    q[n - 1] = plain + comm;
    for k in (0..n - 1).rev() {
        plain += stage_costs[k];
        comm = omegas[k] + alpha * comm;
        q[k] = plain + comm;
    }
    Ok(q)
}

/// Cost-to-go with a discounted delivery-time term:
/// `q(k) = Σ_{j≥k} α^{j−k}·ω(j) + Σ_{j≥k} z(j) + terminal_q`.
///
/// `omegas` has one value per state.
pub fn compute_cost_to_go_with_comm(
    traj: &Trajectory,
    stage_costs: &[f64],
    omegas: &[f64],
    alpha: f64,
    terminal_q: f64,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    backward(traj, stage_costs, omegas, alpha, terminal_q)
}

impl DynamicSafeSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of iterations stored so far; the next insert gets this index.
    pub fn iterations(&self) -> usize {
        self.leaders.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SafeSetEntry] {
        &self.entries
    }

    pub fn entries_of(&self, iteration: usize) -> impl Iterator<Item = &SafeSetEntry> {
        self.entries
            .iter()
            .filter(move |e| e.iteration == iteration)
    }

    pub fn leader(&self, iteration: usize) -> Option<&Trajectory> {
        self.leaders.get(iteration)
    }

    /// Rebuilds the stored trajectory of `iteration`, if none of its entries were pruned.
    pub fn trajectory(&self, iteration: usize) -> Option<Trajectory> {
        let leader = self.leaders.get(iteration)?;
        let mut entries: Vec<&SafeSetEntry> = self.entries_of(iteration).collect();
        entries.sort_by_key(|e| e.eta);
        if entries.iter().enumerate().any(|(k, e)| e.eta != k) || entries.is_empty() {
            return None;
        }
        let inputs: Option<Vec<f64>> = entries[..entries.len() - 1]
            .iter()
            .map(|e| e.input)
            .collect();
        Some(Trajectory {
            origin: leader.origin,
            iteration,
            dt: self.dt?,
            states: entries.iter().map(|e| e.state).collect(),
            inputs: inputs?,
        })
    }

    /// Stores a validated trajectory as iteration `ℓ = iterations()`.
    pub fn insert_trajectory(
        &mut self,
        traj: &Trajectory,
        leader: &Trajectory,
        q: &[f64],
        report: &Report,
    ) -> Result<usize> {
        if !report.is_feasible() {
            return Err(Error::validation(format!(
                "trajectory failed validation: {:?}",
                report.violations
            )));
        }
        if q.len() != traj.states.len() {
            return Err(Error::validation(format!(
                "{} costs for {} states",
                q.len(),
                traj.states.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("cost-to-go must be finite"));
        }
        if self.dt.is_some_and(|dt| dt != traj.dt) {
            return Err(Error::validation(
                "all stored trajectories must share one dt",
            ));
        }
        let iteration = self.iterations();
        self.dt = Some(traj.dt);
        self.leaders.push(leader.clone());
        self.entries.extend(
            traj.states
                .iter()
                .enumerate()
                .map(|(eta, &state)| SafeSetEntry {
                    state,
                    iteration,
                    eta,
                    q: q[eta],
                    input: traj.inputs.get(eta).copied(),
                }),
        );
        Ok(iteration)
    }

    /// Replaces the cost-to-go of every stored entry of `iteration`; `q` is indexed by `η`.
    pub fn update_costs(&mut self, iteration: usize, q: &[f64]) -> Result<()> {
        for e in self.entries.iter_mut().filter(|e| e.iteration == iteration) {
            e.q = *q
                .get(e.eta)
                .ok_or_else(|| Error::validation(format!("no cost for η = {}", e.eta)))?;
        }
        Ok(())
    }

    /// Every entry with `η ≤ effective_horizon`, in storage order.
    pub fn candidates(&self, effective_horizon: usize) -> Vec<SafeSetEntry> {
        self.entries
            .iter()
            .filter(|e| e.eta <= effective_horizon)
            .copied()
            .collect()
    }

    /// Shrinks the set to at most `max_entries`.
    ///
    /// The newest iteration is kept whole. Among repeated states only the lowest
    /// `q` survives. Remaining room goes to the cheapest entry of each `η`, then
    /// the second cheapest, and so on.
    pub fn prune(&self, max_entries: usize) -> DynamicSafeSet {
        if self.entries.len() <= max_entries || self.leaders.is_empty() {
            return self.clone();
        }
        let latest = self.iterations() - 1;
        let key = |e: &SafeSetEntry| (e.state.position.to_bits(), e.state.velocity.to_bits());
        let mut kept: Vec<SafeSetEntry> = self.entries_of(latest).copied().collect();

        let mut best: HashMap<(u64, u64), SafeSetEntry> = HashMap::new();
        for e in self.entries.iter().filter(|e| e.iteration != latest) {
            best.entry(key(e))
                .and_modify(|b| {
                    if (e.q, e.iteration, e.eta) < (b.q, b.iteration, b.eta) {
                        *b = *e;
                    }
                })
                .or_insert(*e);
        }
        let latest_q: HashMap<(u64, u64), f64> = kept.iter().map(|e| (key(e), e.q)).collect();
        let mut by_eta: BTreeMap<usize, Vec<SafeSetEntry>> = BTreeMap::new();
        for e in best.into_values() {
            if latest_q.get(&key(&e)).is_some_and(|&q| q <= e.q) {
                continue;
            }
            by_eta.entry(e.eta).or_default().push(e);
        }
        for list in by_eta.values_mut() {
            list.sort_by(|a, b| a.q.total_cmp(&b.q).then(a.iteration.cmp(&b.iteration)));
        }
        let mut rank = 0;
        'fill: loop {
            let mut any = false;
            for list in by_eta.values() {
                if let Some(e) = list.get(rank) {
                    if kept.len() >= max_entries {
                        break 'fill;
                    }
                    kept.push(*e);
                    any = true;
                }
            }
            if !any {
                break;
            }
            rank += 1;
        }
        kept.sort_by_key(|e| (e.iteration, e.eta));
        DynamicSafeSet {
            entries: kept,
            leaders: self.leaders.clone(),
            dt: self.dt,
        }
    }
}

const HEADER: &str = "# srlmpc safe set v1";

impl fmt::Display for DynamicSafeSet {
    /// Line-oriented text form.
    ///
    /// ```text
    /// # srlmpc safe set v1
    /// dt,<dt>
    /// leader,<iteration>,<step>,<position>,<velocity>
    /// <iteration>,<eta>,<position>,<velocity>,<q>,<input or ->
    /// ```
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        writeln!(out, "{HEADER}").unwrap();
        if let Some(dt) = self.dt {
            writeln!(out, "dt,{dt}").unwrap();
        }
        for (l, lead) in self.leaders.iter().enumerate() {
            for (k, s) in lead.states.iter().enumerate() {
                writeln!(
                    out,
                    "leader,{l},{},{},{}",
                    lead.origin + k,
                    s.position,
                    s.velocity
                )
                .unwrap();
            }
        }
        for e in &self.entries {
            let input = e.input.map_or_else(|| "-".to_string(), |u| u.to_string());
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.iteration, e.eta, e.state.position, e.state.velocity, e.q, input
            )
            .unwrap();
        }
        f.write_str(&out)
    }
}

impl FromStr for DynamicSafeSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut dt = None;
        let mut leaders: BTreeMap<usize, Vec<(usize, VehicleState)>> = BTreeMap::new();
        let mut entries = Vec::new();
        for (i, raw) in s.lines().enumerate() {
            let line = i + 1;
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = text.split(',').collect();
            let bad = |what: &str| Error::Parse {
                line,
                message: format!("bad {what}"),
            };
            let num = |t: &str, what: &str| t.parse::<f64>().map_err(|_| bad(what));
            let idx = |t: &str, what: &str| t.parse::<usize>().map_err(|_| bad(what));
            match fields[..] {
                ["dt", v] => dt = Some(num(v, "dt")?),
                ["leader", l, k, p, v] => {
                    leaders.entry(idx(l, "iteration")?).or_default().push((
                        idx(k, "step")?,
                        VehicleState::new(num(p, "position")?, num(v, "velocity")?),
                    ));
                }
                [l, eta, p, v, q, u] => entries.push(SafeSetEntry {
                    iteration: idx(l, "iteration")?,
                    eta: idx(eta, "eta")?,
                    state: VehicleState::new(num(p, "position")?, num(v, "velocity")?),
                    q: num(q, "q")?,
                    input: if u == "-" {
                        None
                    } else {
                        Some(num(u, "input")?)
                    },
                }),
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unrecognised line {text:?}"),
                    })
                }
            }
        }
        let dt_value = dt.unwrap_or(0.0);
        let mut out = Vec::new();
        for (expected, (l, mut states)) in leaders.into_iter().enumerate() {
            if l != expected {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("leader for iteration {expected} missing"),
                });
            }
            states.sort_by_key(|(k, _)| *k);
            let origin = states.first().map_or(0, |(k, _)| *k);
            if states
                .iter()
                .enumerate()
                .any(|(j, (k, _))| *k != origin + j)
            {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("leader {l} has gaps"),
                });
            }
            let n = states.len();
            out.push(Trajectory {
                origin,
                iteration: l,
                dt: dt_value,
                states: states.into_iter().map(|(_, s)| s).collect(),
                inputs: vec![0.0; n.saturating_sub(1)],
            });
        }
        if let Some(e) = entries.iter().find(|e| e.iteration >= out.len()) {
            return Err(Error::Parse {
                line: 0,
                message: format!("entry for iteration {} has no leader", e.iteration),
            });
        }
        Ok(DynamicSafeSet {
            entries,
            leaders: out,
            dt,
        })
    }
}
