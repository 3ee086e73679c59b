use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use super::{ContactSchedule, NodeId, TopologyError};
use crate::seed;

/// Synthetic vehicular churn in a square region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChurnConfig {
    /// Poisson arrival rate, nodes per minute.
    pub arrival_rate: f64,
    /// Mean of the exponential sojourn time, minutes.
    pub mean_sojourn: f64,
    /// Observation interval, minutes.
    pub duration: f64,
    pub contact_radius: f64,
    pub area_side: f64,
    /// Seconds per slot.
    pub slot_length: f64,
    /// Random-waypoint speed, meters per second.
    pub speed: f64,
    /// Start with a steady-state population instead of an empty region.
    pub stationary_start: bool,
    pub seed: u64,
}

impl ChurnConfig {
    /// Off-peak city-centre scenario: 1 km square, 150 m radius, 20 s slots,
    /// 2.9 min mean sojourn, 40 minutes. The arrival rate is set so the mean
    /// concurrent population equals 27.3.
    pub fn luxembourg(seed: u64) -> Self {
        Self {
            arrival_rate: 27.3 / 2.9,
            mean_sojourn: 2.9,
            duration: 40.0,
            contact_radius: 150.0,
            area_side: 1000.0,
            slot_length: 20.0,
            speed: 10.0,
            stationary_start: true,
            seed,
        }
    }

    fn validate(&self) -> Result<(), TopologyError> {
        let positive = [
            ("mean_sojourn", self.mean_sojourn),
            ("duration", self.duration),
            ("contact_radius", self.contact_radius),
            ("area_side", self.area_side),
            ("slot_length", self.slot_length),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TopologyError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate >= 0.0) || self.speed.is_nan() || self.speed < 0.0 {
            return Err(TopologyError::Config("arrival rate and speed must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Visit {
    arrive: f64,
    leave: f64,
}

/// Builds a churn schedule.
///
/// A node arriving at `a` with sojourn `s` (seconds) is present in slot `k`
/// iff `a <= k L < a + s`. Ids follow arrival order.
pub fn synthetic_churn_schedule(cfg: &ChurnConfig) -> Result<ContactSchedule, TopologyError> {
    cfg.validate()?;
    let horizon = cfg.duration * 60.0;
    let slots = (horizon / cfg.slot_length + 1e-9).floor() as usize;
    let visits = draw_visits(cfg, horizon);

    let mut presence = vec![Vec::new(); slots];
    let mut positions: Vec<Vec<(NodeId, (f64, f64))>> = vec![Vec::new(); slots];
    for (id, visit) in visits.iter().enumerate() {
        let node = NodeId(id as u64);
        let first = (visit.arrive / cfg.slot_length).ceil().max(0.0) as usize;
        let mut walker = Waypoint::new(cfg, seed::derive_keyed(cfg.seed, "churn-motion", &[id as u64]), visit.arrive);
        for k in first..slots {
            let t = k as f64 * cfg.slot_length;
            if t >= visit.leave {
                break;
            }
            presence[k].push(node);
            positions[k].push((node, walker.position_at(t)));
        }
    }

    let edges = positions
        .iter()
        .map(|here| {
            let mut out = Vec::new();
            for i in 0..here.len() {
                for j in i + 1..here.len() {
                    let (a, b) = (here[i].1, here[j].1);
                    if (a.0 - b.0).hypot(a.1 - b.1) <= cfg.contact_radius {
                        out.push((here[i].0, here[j].0));
                    }
                }
            }
            out
        })
        .collect();
    ContactSchedule::from_slots(presence, edges)
}

fn draw_visits(cfg: &ChurnConfig, horizon: f64) -> Vec<Visit> {
    let mut visits = Vec::new();
    if cfg.arrival_rate == 0.0 {
        return visits;
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, "churn-arrivals"));
    let rate_s = cfg.arrival_rate / 60.0;
    let sojourn = Exp::new(1.0 / (cfg.mean_sojourn * 60.0)).expect("positive mean sojourn");
    if cfg.stationary_start {
        // M/G/inf steady state: Poisson(lambda W) occupants whose residual
        // sojourns are again exponential.
        let initial =
            Poisson::new(cfg.arrival_rate * cfg.mean_sojourn).expect("positive mean").sample(&mut rng) as usize;
        for _ in 0..initial {
            visits.push(Visit { arrive: 0.0, leave: sojourn.sample(&mut rng) });
        }
    }
    let gap = Exp::new(rate_s).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= horizon {
            break;
        }
        visits.push(Visit { arrive: t, leave: t + sojourn.sample(&mut rng) });
    }
    visits
}

/// Random-waypoint walker sampled at nondecreasing times.
struct Waypoint {
    rng: rand_chacha::ChaCha8Rng,
    side: f64,
    speed: f64,
    time: f64,
    pos: (f64, f64),
    target: (f64, f64),
}

impl Waypoint {
    fn new(cfg: &ChurnConfig, seed: u64, start: f64) -> Self {
        let mut rng = seed::rng(seed);
        let side = cfg.area_side;
        let pos = (rng.gen_range(0.0..side), rng.gen_range(0.0..side));
        let target = (rng.gen_range(0.0..side), rng.gen_range(0.0..side));
        Self { rng, side, speed: cfg.speed, time: start, pos, target }
    }

    fn position_at(&mut self, t: f64) -> (f64, f64) {
        if self.speed == 0.0 {
            return self.pos;
        }
        let mut budget = (t - self.time).max(0.0) * self.speed;
        loop {
            let (dx, dy) = (self.target.0 - self.pos.0, self.target.1 - self.pos.1);
            let dist = dx.hypot(dy);
            if dist > budget {
                let f = budget / dist;
                self.pos = (self.pos.0 + f * dx, self.pos.1 + f * dy);
                break;
            }
            budget -= dist;
            self.pos = self.target;
            self.target = (self.rng.gen_range(0.0..self.side), self.rng.gen_range(0.0..self.side));
        }
        self.time = t;
        self.pos
    }
}

/// Arrivals and departures per window, as percentages of all nodes seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnProfile {
    pub window_slots: usize,
    pub arrivals_pct: Vec<f64>,
    pub departures_pct: Vec<f64>,
}

/// Bins arrivals and departures of `schedule` into windows of `window_slots`.
///
/// Nodes present in slot 0 count as arrivals of the first window. A node
/// still present in the last slot never departs.
pub fn arrival_departure_profile(schedule: &ContactSchedule, window_slots: usize) -> ChurnProfile {
    let window_slots = window_slots.max(1);
    let windows = schedule.slot_count().div_ceil(window_slots);
    let total = schedule.all_nodes().len().max(1) as f64;
    let mut arrivals = vec![0usize; windows];
    let mut departures = vec![0usize; windows];
    for t in 0..schedule.slot_count() {
        arrivals[t / window_slots] += schedule.arrivals(t).len();
        departures[t / window_slots] += schedule.departures(t).len();
    }
    let pct = |v: Vec<usize>| v.into_iter().map(|c| 100.0 * c as f64 / total).collect();
    ChurnProfile { window_slots, arrivals_pct: pct(arrivals), departures_pct: pct(departures) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibrated_population_matches_target() {
        let runs = 20;
        let mean: f64 = (0..runs)
            .map(|s| synthetic_churn_schedule(&ChurnConfig::luxembourg(s)).unwrap().mean_population())
            .sum::<f64>()
            / runs as f64;
        assert!((mean - 27.3).abs() / 27.3 < 0.10, "mean population {mean}");
    }

    #[test]
    fn zero_rate_is_empty() {
        let cfg = ChurnConfig { arrival_rate: 0.0, ..ChurnConfig::luxembourg(1) };
        let s = synthetic_churn_schedule(&cfg).unwrap();
        assert_eq!(s.slot_count(), 120);
        assert!(s.all_nodes().is_empty());
        let bad = ChurnConfig { slot_length: 0.0, ..ChurnConfig::luxembourg(1) };
        assert!(synthetic_churn_schedule(&bad).is_err());
    }

    #[test]
    fn deterministic_and_contiguous() {
        let a = synthetic_churn_schedule(&ChurnConfig::luxembourg(9)).unwrap();
        let b = synthetic_churn_schedule(&ChurnConfig::luxembourg(9)).unwrap();
        assert_eq!(a, b);
        for v in a.all_nodes() {
            let slots: Vec<usize> = (0..a.slot_count()).filter(|&t| a.is_present(v, t)).collect();
            assert_eq!(slots.last().unwrap() - slots[0] + 1, slots.len(), "node {v} has a gap");
        }
    }

    #[test]
    fn ids_follow_arrival_order() {
        let s = synthetic_churn_schedule(&ChurnConfig::luxembourg(4)).unwrap();
        let mut firsts = Vec::new();
        for v in s.all_nodes() {
            firsts.push((0..s.slot_count()).find(|&t| s.is_present(v, t)).unwrap());
        }
        assert!(firsts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn first_window_dominates_arrivals() {
        let s = synthetic_churn_schedule(&ChurnConfig::luxembourg(2)).unwrap();
        let p = arrival_departure_profile(&s, 15);
        assert_eq!(p.arrivals_pct.len(), 8);
        let total: f64 = p.arrivals_pct.iter().sum();
        assert!((total - 100.0).abs() < 1e-9);
        let first = p.arrivals_pct[0];
        assert!(p.arrivals_pct[1..].iter().all(|&x| x < first));
        assert!(p.departures_pct.iter().sum::<f64>() <= 100.0);
    }
}
