//! Vehicle-to-vehicle channel model.
//!
//! A predictor maps the two vehicles' states at each step to a packet delivery
//! time ω. Dropped packets never arrive; inside cost sums they are charged a
//! finite penalty `omega_max` instead.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{Trajectory, VehicleState};
use crate::error::{ensure_finite, Error, Result};

/// Closed interval of positions where the channel fails if both vehicles are inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadZone {
    pub min: f64,
    pub max: f64,
}

impl DeadZone {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        ensure_finite("dead zone start", min)?;
        ensure_finite("dead zone end", max)?;
        if min >= max {
            return Err(Error::validation(format!(
                "dead zone [{min}, {max}] is empty"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, position: f64) -> bool {
        position >= self.min && position <= self.max
    }

    /// Both vehicles inside at once.
    pub fn blocks(&self, ego: &VehicleState, lead: &VehicleState) -> bool {
        self.contains(ego.position) && self.contains(lead.position)
    }
}

/// Outcome of one transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delivery {
    /// Delivered after the given time (s).
    After(f64),
    Dropped,
}

impl Delivery {
    pub fn is_dropped(&self) -> bool {
        matches!(self, Delivery::Dropped)
    }

    /// Value used in cost sums.
    pub fn cost(&self, omega_max: f64) -> f64 {
        match *self {
            Delivery::After(w) => w,
            Delivery::Dropped => omega_max,
        }
    }

    /// Whole steps until arrival: `j` with `j·dt ≤ ω < (j+1)·dt`, at least one.
    pub fn delay_steps(&self, dt: f64) -> Option<usize> {
        match *self {
            Delivery::After(w) => Some(((w / dt + 1e-9).floor() as usize).max(1)),
            Delivery::Dropped => None,
        }
    }
}

impl fmt::Display for Delivery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delivery::After(w) => write!(f, "{w}"),
            Delivery::Dropped => f.write_str("inf"),
        }
    }
}

/// Per-step delivery times over absolute steps `start .. start + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryProfile {
    pub start: usize,
    pub deliveries: Vec<Delivery>,
}

impl DeliveryProfile {
    pub fn len(&self) -> usize {
        self.deliveries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deliveries.is_empty()
    }

    pub fn get(&self, step: usize) -> Option<Delivery> {
        step.checked_sub(self.start)
            .and_then(|k| self.deliveries.get(k))
            .copied()
    }

    pub fn costs(&self, omega_max: f64) -> Vec<f64> {
        self.deliveries.iter().map(|d| d.cost(omega_max)).collect()
    }

    pub fn dropped(&self) -> usize {
        self.deliveries.iter().filter(|d| d.is_dropped()).count()
    }
}

/// Black-box delivery-time oracle.
pub trait ChannelPredictor {
    /// Delivery time of a packet sent at `step` with the vehicles at `ego` and `lead`.
    fn delivery(&self, step: usize, ego: &VehicleState, lead: &VehicleState) -> Delivery;

    /// Profile over every step both trajectories cover.
    fn predict(&self, ego: &Trajectory, leader: &Trajectory) -> Result<DeliveryProfile> {
        let start = ego.origin.max(leader.origin);
        let end = ego.last_step().min(leader.last_step());
        if start > end {
            return Err(Error::validation(
                "ego and leader trajectories do not overlap",
            ));
        }
        let deliveries = (start..=end)
            .map(|k| self.delivery(k, ego.at(k).unwrap(), leader.at(k).unwrap()))
            .collect();
        Ok(DeliveryProfile { start, deliveries })
    }
}

impl<P: ChannelPredictor + ?Sized> ChannelPredictor for Box<P> {
    fn delivery(&self, step: usize, ego: &VehicleState, lead: &VehicleState) -> Delivery {
        (**self).delivery(step, ego, lead)
    }
}

/// Fixed delivery time everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfectChannel {
    pub omega: f64,
}

impl ChannelPredictor for PerfectChannel {
    fn delivery(&self, _: usize, _: &VehicleState, _: &VehicleState) -> Delivery {
        Delivery::After(self.omega)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadZonePredictor {
    pub zone: DeadZone,
    pub base_omega: f64,
}

/// Predictor that drops exactly when both vehicles are inside `zone`.
pub fn dead_zone_predictor(zone: DeadZone, base_omega: f64) -> Result<DeadZonePredictor> {
    ensure_finite("base_omega", base_omega)?;
    if base_omega <= 0.0 {
        return Err(Error::validation("base_omega must be positive"));
    }
    Ok(DeadZonePredictor { zone, base_omega })
}

impl ChannelPredictor for DeadZonePredictor {
    fn delivery(&self, _: usize, ego: &VehicleState, lead: &VehicleState) -> Delivery {
        if self.zone.blocks(ego, lead) {
            Delivery::Dropped
        } else {
            Delivery::After(self.base_omega)
        }
    }
}

/// Adds seeded independent packet loss on top of another channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LossyChannel<P> {
    pub inner: P,
    pub loss_prob: f64,
    pub seed: u64,
}

impl<P: ChannelPredictor> ChannelPredictor for LossyChannel<P> {
    fn delivery(&self, step: usize, ego: &VehicleState, lead: &VehicleState) -> Delivery {
        let base = self.inner.delivery(step, ego, lead);
        if self.loss_prob <= 0.0 {
            return base;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        if rng.gen::<f64>() < self.loss_prob {
            Delivery::Dropped
        } else {
            base
        }
    }
}

/// Lookup table keyed by position buckets, loaded from text.
///
/// ```text
/// # comment
/// bucket_width = 5
/// default = 0.2
/// 87,90,inf
/// ```
///
/// Each row is `ego_bucket,lead_bucket,omega` where a bucket is
/// `floor(position / bucket_width)` and `inf` marks a drop.
#[derive(Debug, Clone, PartialEq)]
pub struct TablePredictor {
    pub bucket_width: f64,
    pub default: Delivery,
    pub table: HashMap<(i64, i64), Delivery>,
}

impl TablePredictor {
    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    fn bucket(&self, position: f64) -> i64 {
        (position / self.bucket_width).floor() as i64
    }
}

fn parse_delivery(text: &str, line: usize) -> Result<Delivery> {
    if text == "inf" {
        return Ok(Delivery::Dropped);
    }
    let w: f64 = text.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad delivery time {text:?}"),
    })?;
    if !w.is_finite() || w <= 0.0 {
        return Err(Error::Parse {
            line,
            message: format!("delivery time must be positive, got {w}"),
        });
    }
    Ok(Delivery::After(w))
}

impl FromStr for TablePredictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut width = None;
        let mut default = None;
        let mut table = HashMap::new();
        for (i, raw) in s.lines().enumerate() {
            let line = i + 1;
            let text = raw.split('#').next().unwrap().trim();
            if text.is_empty() {
                continue;
            }
            if let Some((key, value)) = text.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "bucket_width" => {
                        let w: f64 = value.parse().map_err(|_| Error::Parse {
                            line,
                            message: format!("bad bucket width {value:?}"),
                        })?;
                        if !(w.is_finite() && w > 0.0) {
                            return Err(Error::Parse {
                                line,
                                message: "bucket width must be positive".into(),
                            });
                        }
                        width = Some(w);
                    }
                    "default" => default = Some(parse_delivery(value, line)?),
                    other => {
                        return Err(Error::Parse {
                            line,
                            message: format!("unknown key {other:?}"),
                        });
                    }
                }
                continue;
            }
            let fields: Vec<&str> = text.split(',').map(str::trim).collect();
            let [ego, lead, omega] = fields[..] else {
                return Err(Error::Parse {
                    line,
                    message: "expected ego_bucket,lead_bucket,omega".into(),
                });
            };
            let parse_bucket = |t: &str| {
                t.parse::<i64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad bucket {t:?}"),
                })
            };
            table.insert(
                (parse_bucket(ego)?, parse_bucket(lead)?),
                parse_delivery(omega, line)?,
            );
        }
        Ok(Self {
            bucket_width: width.ok_or(Error::Parse {
                line: 0,
                message: "missing bucket_width".into(),
            })?,
            default: default.ok_or(Error::Parse {
                line: 0,
                message: "missing default".into(),
            })?,
            table,
        })
    }
}

impl ChannelPredictor for TablePredictor {
    fn delivery(&self, _: usize, ego: &VehicleState, lead: &VehicleState) -> Delivery {
        self.table
            .get(&(self.bucket(ego.position), self.bucket(lead.position)))
            .copied()
            .unwrap_or(self.default)
    }
}

/// A leader prediction sent at `trajectory.origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderPacket {
    pub trajectory: Trajectory,
}

impl LeaderPacket {
    pub fn send_time(&self) -> usize {
        self.trajectory.origin
    }

    pub fn horizon(&self) -> usize {
        self.trajectory.horizon()
    }
}

/// Steps of the packet's horizon still in the future at `now`.
pub fn effective_horizon(now: usize, send_time: usize, horizon: usize) -> Result<usize> {
    if now < send_time {
        return Err(Error::validation(format!(
            "packet sent at {send_time} is from the future at {now}"
        )));
    }
    let age = now - send_time;
    if age > horizon {
        return Err(Error::NoUsablePrediction { now });
    }
    Ok(horizon - age)
}

/// Drops the states that precede `now`.
pub fn prune_stale(packet: &LeaderPacket, now: usize) -> Result<Trajectory> {
    let remaining = effective_horizon(now, packet.send_time(), packet.horizon())?;
    let skip = packet.horizon() - remaining;
    let t = &packet.trajectory;
    Ok(Trajectory {
        origin: now,
        iteration: t.iteration,
        dt: t.dt,
        states: t.states[skip..].to_vec(),
        inputs: t.inputs[skip..].to_vec(),
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// `Σ_k α^{(n−1)−k}·ω(k)`: the most recent step carries weight one.
pub fn discounted_comm_cost(omegas: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(omegas.iter().fold(0.0, |acc, &w| acc * alpha + w))
}

/// Newest packet that has arrived by `now`.
///
/// `sent[i]` was transmitted with outcome `deliveries[i]`. Packets are sorted by send time.
pub fn simulate_reception<'a>(
    sent: &'a [LeaderPacket],
    deliveries: &[Delivery],
    now: usize,
    dt: f64,
) -> Result<&'a LeaderPacket> {
    if sent.len() != deliveries.len() {
        return Err(Error::validation(
            "one delivery outcome is needed per packet",
        ));
    }
    if sent.windows(2).any(|w| w[0].send_time() > w[1].send_time()) {
        return Err(Error::validation("packets must be sorted by send time"));
    }
    sent.iter()
        .zip(deliveries)
        .rev()
        .find(|(p, d)| d.delay_steps(dt).is_some_and(|j| p.send_time() + j <= now))
        .map(|(p, _)| p)
        .ok_or(Error::NoUsablePrediction { now })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::constant_speed;
    use proptest::prelude::*;

    fn zone() -> DeadZone {
        DeadZone::new(435.0, 480.0).unwrap()
    }

    fn at(p: f64) -> VehicleState {
        VehicleState::new(p, 30.0)
    }

    #[test]
    fn dead_zone_cases() {
        let pred = dead_zone_predictor(zone(), 0.2).unwrap();
        assert_eq!(
            pred.delivery(0, &at(400.0), &at(450.0)),
            Delivery::After(0.2)
        );
        assert_eq!(pred.delivery(0, &at(440.0), &at(460.0)), Delivery::Dropped);
        assert_eq!(
            pred.delivery(0, &at(500.0), &at(520.0)),
            Delivery::After(0.2)
        );
    }

    #[test]
    fn zone_must_be_ordered() {
        assert!(DeadZone::new(480.0, 435.0).is_err());
        assert!(dead_zone_predictor(zone(), 0.0).is_err());
    }

    fn packet(send: usize, n: usize) -> LeaderPacket {
        LeaderPacket {
            trajectory: constant_speed(
                VehicleState::new(100.0 + 6.0 * send as f64, 30.0),
                send,
                n,
                0.2,
            )
            .unwrap(),
        }
    }

    #[test]
    fn pruning_counts() {
        let p = packet(7, 70);
        let pruned = prune_stale(&p, 10).unwrap();
        assert_eq!(pruned.states.len(), 68);
        assert_eq!(pruned.origin, 10);
        assert_eq!(pruned.last_step(), 77);
        assert_eq!(pruned.at(10), p.trajectory.at(10));
        assert_eq!(prune_stale(&p, 7).unwrap(), p.trajectory);
        let last = prune_stale(&p, 77).unwrap();
        assert_eq!(last.states, vec![*p.trajectory.terminal()]);
        assert!(matches!(
            prune_stale(&p, 78),
            Err(Error::NoUsablePrediction { now: 78 })
        ));
    }

    #[test]
    fn effective_horizon_cases() {
        assert_eq!(effective_horizon(3, 0, 70).unwrap(), 67);
        assert_eq!(effective_horizon(5, 5, 70).unwrap(), 70);
        assert_eq!(effective_horizon(70, 0, 70).unwrap(), 0);
        assert!(effective_horizon(71, 0, 70).is_err());
        assert!(effective_horizon(0, 1, 70).is_err());
    }

    #[test]
    fn discounted_cost_cases() {
        assert_eq!(discounted_comm_cost(&[2.0, 2.0, 2.0], 0.5).unwrap(), 3.5);
        assert_eq!(discounted_comm_cost(&[1.7], 0.3).unwrap(), 1.7);
        assert!(discounted_comm_cost(&[1.0], 1.0).is_err());
        assert!(discounted_comm_cost(&[1.0], 0.0).is_err());
    }

    #[test]
    fn reception_picks_newest_arrived_packet() {
        let sent = vec![packet(0, 70), packet(1, 70), packet(2, 70)];
        let ok = [Delivery::After(0.2); 3];
        assert_eq!(
            simulate_reception(&sent, &ok, 3, 0.2).unwrap().send_time(),
            2
        );

        let sent = vec![packet(4, 70), packet(5, 70)];
        let out = [Delivery::After(0.2), Delivery::Dropped];
        assert_eq!(
            simulate_reception(&sent, &out, 6, 0.2).unwrap().send_time(),
            4
        );

        let out = [Delivery::Dropped, Delivery::Dropped];
        assert!(matches!(
            simulate_reception(&sent, &out, 6, 0.2),
            Err(Error::NoUsablePrediction { .. })
        ));
    }

    #[test]
    fn delay_quantisation_rounds_down() {
        assert_eq!(Delivery::After(0.2).delay_steps(0.2), Some(1));
        assert_eq!(Delivery::After(0.39).delay_steps(0.2), Some(1));
        assert_eq!(Delivery::After(0.6).delay_steps(0.2), Some(3));
        assert_eq!(Delivery::After(0.05).delay_steps(0.2), Some(1));
        assert_eq!(Delivery::Dropped.delay_steps(0.2), None);
    }

    #[test]
    fn table_predictor_round_trip() {
        let text = "# channel\nbucket_width = 5\ndefault = 0.2\n88,92,inf\n80,85,0.6\n";
        let table: TablePredictor = text.parse().unwrap();
        assert_eq!(table.delivery(0, &at(442.0), &at(461.0)), Delivery::Dropped);
        assert_eq!(
            table.delivery(0, &at(401.0), &at(427.0)),
            Delivery::After(0.6)
        );
        assert_eq!(table.delivery(0, &at(0.0), &at(20.0)), Delivery::After(0.2));
        assert!("default = 0.2\n".parse::<TablePredictor>().is_err());
        assert!("bucket_width = 5\ndefault = 0.2\n1,2\n"
            .parse::<TablePredictor>()
            .is_err());
        assert!("bucket_width = 5\ndefault = -1\n"
            .parse::<TablePredictor>()
            .is_err());
    }

    #[test]
    fn lossy_channel_is_deterministic() {
        let ch = LossyChannel {
            inner: PerfectChannel { omega: 0.2 },
            loss_prob: 0.5,
            seed: 42,
        };
        let a: Vec<_> = (0..50)
            .map(|k| ch.delivery(k, &at(0.0), &at(10.0)))
            .collect();
        let b: Vec<_> = (0..50)
            .map(|k| ch.delivery(k, &at(0.0), &at(10.0)))
            .collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|d| d.is_dropped()));
        assert!(a.iter().any(|d| !d.is_dropped()));
    }

    #[test]
    fn predict_covers_overlap() {
        let pred = dead_zone_predictor(zone(), 0.2).unwrap();
        let ego = constant_speed(VehicleState::new(400.0, 30.0), 0, 10, 0.2).unwrap();
        let lead = constant_speed(VehicleState::new(450.0, 30.0), 2, 10, 0.2).unwrap();
        let profile = pred.predict(&ego, &lead).unwrap();
        assert_eq!(profile.start, 2);
        assert_eq!(profile.len(), 9);
        assert!(profile.dropped() > 0);
    }

    proptest! {
        #[test]
        fn horizon_plus_staleness_is_n(send in 0usize..200, age in 0usize..=70) {
            prop_assert_eq!(effective_horizon(send + age, send, 70).unwrap() + age, 70);
            let p = packet(send, 70);
            prop_assert_eq!(prune_stale(&p, send + age).unwrap().states.len(), 70 - age + 1);
        }

        #[test]
        fn discounted_cost_is_monotone(
            omegas in proptest::collection::vec(0.0f64..20.0, 1..30),
            idx in 0usize..30,
            bump in 0.0f64..5.0,
            alpha in 0.05f64..0.95,
        ) {
            let idx = idx % omegas.len();
            let mut raised = omegas.clone();
            raised[idx] += bump;
            prop_assert!(discounted_comm_cost(&raised, alpha).unwrap() >= discounted_comm_cost(&omegas, alpha).unwrap());
        }

        #[test]
        fn constant_profile_cost_grows_with_alpha(w in 0.0f64..10.0, n in 1usize..40, a in 0.05f64..0.9, da in 0.0f64..0.09) {
            let lo = discounted_comm_cost(&vec![w; n], a).unwrap();
            let hi = discounted_comm_cost(&vec![w; n], a + da).unwrap();
            prop_assert!(hi >= lo);
        }

        #[test]
        fn dead_zone_translation_symmetry(ego in 0.0f64..1000.0, gap in 0.0f64..100.0, shift in -5.0f64..5.0) {
            let pred = dead_zone_predictor(zone(), 0.2).unwrap();
            let (e, l) = (at(ego), at(ego + gap));
            let (e2, l2) = (at(ego + shift), at(ego + gap + shift));
            if zone().contains(e.position) == zone().contains(e2.position)
                && zone().contains(l.position) == zone().contains(l2.position)
            {
                prop_assert_eq!(pred.delivery(0, &e, &l), pred.delivery(0, &e2, &l2));
            }
        }
    }
}
