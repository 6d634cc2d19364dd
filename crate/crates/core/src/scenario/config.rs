//! Flat `key = value` scenario files.
//!
//! Every key is optional and falls back to the value in [`ScenarioConfig::default`];
//! unknown or repeated keys are rejected. `#` starts a comment.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::comm::{
    dead_zone_predictor, ChannelPredictor, DeadZone, LossyChannel, PerfectChannel, TablePredictor,
};
use crate::cost::{ControlParams, MpcWeights};
use crate::dynamics::{constant_speed, InputBounds, Trajectory, VehicleState};
use crate::error::{Error, Result};
use crate::lmpc::{SrLmpcConfig, ZoneBranch};
use crate::qp::SolverSettings;

pub const CONFIG_HEADER: &str = "# srlmpc scenario v1";

/// Where delivery times come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelKind {
    /// Drops exactly when both vehicles are inside the dead zone.
    DeadZone,
    /// Never drops.
    Perfect,
    /// Lookup table file, see [`TablePredictor`].
    Table(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub dt: f64,
    pub horizon: usize,
    pub short_horizon: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub leader_speed: f64,
    /// Leader position at step 0; the follower starts at 0.
    pub initial_gap: f64,
    pub follower_speed: f64,
    pub channel: ChannelKind,
    pub zone_min: f64,
    pub zone_max: f64,
    /// Delivery time of a packet that gets through (s).
    pub delivery_time: f64,
    pub loss_prob: f64,
    pub seed: u64,
    /// Leader sends a fresh prediction every `transmit_period` steps.
    pub transmit_period: usize,
    pub gap_ref: f64,
    pub ttc_min: f64,
    pub min_gap: f64,
    pub weights: MpcWeights,
    pub alpha: f64,
    pub omega_max: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
    pub zone_margin: f64,
    pub zone_branch: ZoneBranch,
    pub time_consistent: bool,
    /// TTC multiplier used while driving on a blind extrapolation.
    pub fallback_ttc_scale: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            horizon: 70,
            short_horizon: 60,
            u_min: -6.0,
            u_max: 6.0,
            leader_speed: 30.0,
            initial_gap: 100.0,
            follower_speed: 35.0,
            channel: ChannelKind::DeadZone,
            zone_min: 435.0,
            zone_max: 480.0,
            delivery_time: 0.2,
            loss_prob: 0.0,
            seed: 0,
            transmit_period: 1,
            gap_ref: 25.0,
            ttc_min: 2.0,
            min_gap: 0.0,
            weights: MpcWeights {
                gap_tracking: 0.001,
                reference_tracking: 0.0,
                control_effort: 1.0,
                terminal: 5.0,
            },
            alpha: 0.9,
            omega_max: 1e5,
            max_iters: 30,
            conv_tol: 1e-3,
            zone_margin: 1.0,
            zone_branch: ZoneBranch::Behind,
            time_consistent: true,
            fallback_ttc_scale: 1.5,
        }
    }
}

fn bad(field: &str, message: impl Into<String>) -> Error {
    Error::config(field, message)
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {v}")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(bad(
            field,
            format!("must be nonnegative and finite, got {v}"),
        ))
    }
}

impl ScenarioConfig {
    /// Range checks, reported against the offending key.
    pub fn validate(&self) -> Result<()> {
        positive("dt", self.dt)?;
        if self.horizon < 2 {
            return Err(bad(
                "horizon",
                format!("must be at least 2, got {}", self.horizon),
            ));
        }
        if self.short_horizon == 0 || self.short_horizon >= self.horizon {
            return Err(bad(
                "short_horizon",
                format!(
                    "must satisfy 0 < short_horizon < horizon ({}), got {}",
                    self.horizon, self.short_horizon
                ),
            ));
        }
        if !(self.u_min.is_finite() && self.u_min < 0.0) {
            return Err(bad(
                "u_min",
                format!("must be negative, got {}", self.u_min),
            ));
        }
        if !(self.u_max.is_finite() && self.u_max > 0.0) {
            return Err(bad(
                "u_max",
                format!("must be positive, got {}", self.u_max),
            ));
        }
        nonnegative("leader_speed", self.leader_speed)?;
        nonnegative("follower_speed", self.follower_speed)?;
        positive("initial_gap", self.initial_gap)?;
        if !(self.zone_min.is_finite()
            && self.zone_max.is_finite()
            && self.zone_min < self.zone_max)
        {
            return Err(bad(
                "zone_max",
                format!(
                    "zone must satisfy zone_min < zone_max, got [{}, {}]",
                    self.zone_min, self.zone_max
                ),
            ));
        }
        positive("delivery_time", self.delivery_time)?;
        if !(0.0..1.0).contains(&self.loss_prob) {
            return Err(bad(
                "loss_prob",
                format!("must lie in [0, 1), got {}", self.loss_prob),
            ));
        }
        if self.transmit_period == 0 {
            return Err(bad("transmit_period", "must be at least 1"));
        }
        nonnegative("gap_ref", self.gap_ref)?;
        nonnegative("ttc_min", self.ttc_min)?;
        nonnegative("min_gap", self.min_gap)?;
        nonnegative("w_gap", self.weights.gap_tracking)?;
        nonnegative("w_ref", self.weights.reference_tracking)?;
        nonnegative("w_effort", self.weights.control_effort)?;
        nonnegative("w_terminal", self.weights.terminal)?;
        if self.weights.deviation() <= 0.0 {
            return Err(bad("w_gap", "w_gap or w_ref must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad(
                "alpha",
                format!("must lie in (0, 1), got {}", self.alpha),
            ));
        }
        positive("omega_max", self.omega_max)?;
        if self.max_iters == 0 {
            return Err(bad("max_iters", "must be at least 1"));
        }
        positive("conv_tol", self.conv_tol)?;
        nonnegative("zone_margin", self.zone_margin)?;
        if !(self.fallback_ttc_scale.is_finite() && self.fallback_ttc_scale >= 1.0) {
            return Err(bad(
                "fallback_ttc_scale",
                format!("must be at least 1, got {}", self.fallback_ttc_scale),
            ));
        }
        self.lmpc_config().validate()
    }

    pub fn bounds(&self) -> InputBounds {
        InputBounds {
            min: self.u_min,
            max: self.u_max,
        }
    }

    pub fn zone(&self) -> DeadZone {
        DeadZone {
            min: self.zone_min,
            max: self.zone_max,
        }
    }

    pub fn control_params(&self) -> ControlParams {
        ControlParams {
            dt: self.dt,
            bounds: self.bounds(),
            weights: self.weights,
            gap_ref: self.gap_ref,
            ttc_min: self.ttc_min,
            min_gap: self.min_gap,
        }
    }

    pub fn lmpc_config(&self) -> SrLmpcConfig {
        SrLmpcConfig {
            params: self.control_params(),
            horizon: self.horizon,
            short_horizon: self.short_horizon,
            alpha: self.alpha,
            omega_max: self.omega_max,
            conv_tol: self.conv_tol,
            max_iters: self.max_iters,
            dead_zone: matches!(self.channel, ChannelKind::DeadZone).then(|| self.zone()),
            zone_margin: self.zone_margin,
            branch: self.zone_branch,
            time_consistent: self.time_consistent,
            settings: SolverSettings::default(),
        }
    }

    pub fn follower_start(&self) -> VehicleState {
        VehicleState::new(0.0, self.follower_speed)
    }

    /// Constant-speed leader over `steps` transitions from step 0.
    pub fn leader(&self, steps: usize) -> Result<Trajectory> {
        constant_speed(
            VehicleState::new(self.initial_gap, self.leader_speed),
            0,
            steps,
            self.dt,
        )
    }

    /// The configured channel, with seeded random loss on top when `loss_prob > 0`.
    pub fn predictor(&self) -> Result<Box<dyn ChannelPredictor>> {
        let inner: Box<dyn ChannelPredictor> = match &self.channel {
            ChannelKind::DeadZone => {
                Box::new(dead_zone_predictor(self.zone(), self.delivery_time)?)
            }
            ChannelKind::Perfect => Box::new(PerfectChannel {
                omega: self.delivery_time,
            }),
            ChannelKind::Table(path) => Box::new(TablePredictor::load(path)?),
        };
        if self.loss_prob > 0.0 {
            Ok(Box::new(LossyChannel {
                inner,
                loss_prob: self.loss_prob,
                seed: self.seed,
            }))
        } else {
            Ok(inner)
        }
    }
}

/// Reads, parses and validates a scenario file.
///
/// A relative `channel_table` path is resolved against the file's directory.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg: ScenarioConfig = text.parse()?;
    if let ChannelKind::Table(table) = &cfg.channel {
        if table.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.channel = ChannelKind::Table(base.join(table));
        }
    }
    Ok(cfg)
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(key, format!("cannot parse {value:?}")))
}

fn finite(key: &str, value: &str) -> Result<f64> {
    let v: f64 = number(key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, format!("must be finite, got {value}")))
    }
}

impl FromStr for ScenarioConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = ScenarioConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut table: Option<PathBuf> = None;
        let mut channel: Option<String> = None;
        for (i, raw) in s.lines().enumerate() {
            let text = raw.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let Some((key, value)) = text.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected `key = value`, got {text:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(bad(key, "given more than once"));
            }
            seen.push(key.to_string());
            match key {
                "dt" => cfg.dt = finite(key, value)?,
                "horizon" => cfg.horizon = number(key, value)?,
                "short_horizon" => cfg.short_horizon = number(key, value)?,
                "u_min" => cfg.u_min = finite(key, value)?,
                "u_max" => cfg.u_max = finite(key, value)?,
                "leader_speed" => cfg.leader_speed = finite(key, value)?,
                "initial_gap" => cfg.initial_gap = finite(key, value)?,
                "follower_speed" => cfg.follower_speed = finite(key, value)?,
                "channel" => channel = Some(value.to_string()),
                "channel_table" => table = Some(PathBuf::from(value)),
                "zone_min" => cfg.zone_min = finite(key, value)?,
                "zone_max" => cfg.zone_max = finite(key, value)?,
                "delivery_time" => cfg.delivery_time = finite(key, value)?,
                "loss_prob" => cfg.loss_prob = finite(key, value)?,
                "seed" => cfg.seed = number(key, value)?,
                "transmit_period" => cfg.transmit_period = number(key, value)?,
                "gap_ref" => cfg.gap_ref = finite(key, value)?,
                "ttc_min" => cfg.ttc_min = finite(key, value)?,
                "min_gap" => cfg.min_gap = finite(key, value)?,
                "w_gap" => cfg.weights.gap_tracking = finite(key, value)?,
                "w_ref" => cfg.weights.reference_tracking = finite(key, value)?,
                "w_effort" => cfg.weights.control_effort = finite(key, value)?,
                "w_terminal" => cfg.weights.terminal = finite(key, value)?,
                "alpha" => cfg.alpha = finite(key, value)?,
                "omega_max" => cfg.omega_max = finite(key, value)?,
                "max_iters" => cfg.max_iters = number(key, value)?,
                "conv_tol" => cfg.conv_tol = finite(key, value)?,
                "zone_margin" => cfg.zone_margin = finite(key, value)?,
                "zone_branch" => {
                    cfg.zone_branch = match value {
                        "behind" => ZoneBranch::Behind,
                        "ahead" => ZoneBranch::Ahead,
                        _ => {
                            return Err(bad(
                                key,
                                format!("expected behind or ahead, got {value:?}"),
                            ))
                        }
                    }
                }
                "time_consistent" => cfg.time_consistent = number(key, value)?,
                "fallback_ttc_scale" => cfg.fallback_ttc_scale = finite(key, value)?,
                _ => return Err(bad(key, "unknown key")),
            }
        }
        cfg.channel = match (channel.as_deref(), table) {
            (None | Some("dead_zone"), None) => ChannelKind::DeadZone,
            (Some("perfect"), None) => ChannelKind::Perfect,
            (Some("table"), Some(path)) => ChannelKind::Table(path),
            (Some("table"), None) => {
                return Err(bad("channel_table", "required when channel = table"))
            }
            (_, Some(_)) => return Err(bad("channel_table", "only allowed with channel = table")),
            (Some(other), None) => {
                return Err(bad(
                    "channel",
                    format!("expected dead_zone, perfect or table, got {other:?}"),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Canonical listing of every key, defaults included. Parses back to the same config.
impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{CONFIG_HEADER}")?;
        writeln!(f, "dt = {}", self.dt)?;
        writeln!(f, "horizon = {}", self.horizon)?;
        writeln!(f, "short_horizon = {}", self.short_horizon)?;
        writeln!(f, "u_min = {}", self.u_min)?;
        writeln!(f, "u_max = {}", self.u_max)?;
        writeln!(f, "leader_speed = {}", self.leader_speed)?;
        writeln!(f, "initial_gap = {}", self.initial_gap)?;
        writeln!(f, "follower_speed = {}", self.follower_speed)?;
        match &self.channel {
            ChannelKind::DeadZone => writeln!(f, "channel = dead_zone")?,
            ChannelKind::Perfect => writeln!(f, "channel = perfect")?,
            ChannelKind::Table(path) => {
                writeln!(f, "channel = table")?;
                writeln!(f, "channel_table = {}", path.display())?;
            }
        }
        writeln!(f, "zone_min = {}", self.zone_min)?;
        writeln!(f, "zone_max = {}", self.zone_max)?;
        writeln!(f, "delivery_time = {}", self.delivery_time)?;
        writeln!(f, "loss_prob = {}", self.loss_prob)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "transmit_period = {}", self.transmit_period)?;
        writeln!(f, "gap_ref = {}", self.gap_ref)?;
        writeln!(f, "ttc_min = {}", self.ttc_min)?;
        writeln!(f, "min_gap = {}", self.min_gap)?;
        writeln!(f, "w_gap = {}", self.weights.gap_tracking)?;
        writeln!(f, "w_ref = {}", self.weights.reference_tracking)?;
        writeln!(f, "w_effort = {}", self.weights.control_effort)?;
        writeln!(f, "w_terminal = {}", self.weights.terminal)?;
        writeln!(f, "alpha = {}", self.alpha)?;
        writeln!(f, "omega_max = {}", self.omega_max)?;
        writeln!(f, "max_iters = {}", self.max_iters)?;
        writeln!(f, "conv_tol = {}", self.conv_tol)?;
        writeln!(f, "zone_margin = {}", self.zone_margin)?;
        let branch = match self.zone_branch {
            ZoneBranch::Behind => "behind",
            ZoneBranch::Ahead => "ahead",
        };
        writeln!(f, "zone_branch = {branch}")?;
        writeln!(f, "time_consistent = {}", self.time_consistent)?;
        writeln!(f, "fallback_ttc_scale = {}", self.fallback_ttc_scale)
    }
}
