//! Per-node decision policies producing `(Z, K)` for each slot.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{DenseNetwork, NnError};
use crate::topology::NodeId;

pub const FEATURE_DIM: usize = 10;
pub const DEFAULT_Z_MAX: u32 = 5;

/// Feature vector fed to the tuning model.
///
/// Layout: `[h, d, s, own loss, min neighbor loss, mean neighbor loss,
/// cumulative node cost, remaining budget, compute power, slot / max_rounds]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunerFeatures(pub [f64; FEATURE_DIM]);

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "h",
    "d",
    "s",
    "own_loss",
    "min_neighbor_loss",
    "mean_neighbor_loss",
    "cumulative_cost",
    "remaining_budget",
    "compute_power",
    "progress",
];

/// Inputs needed to build [`TunerFeatures`].
#[derive(Debug, Clone, Copy)]
pub struct FeatureInputs<'a> {
    pub train_samples: usize,
    pub validation_samples: usize,
    pub own_loss: f64,
    /// Most recent losses of the current neighbors.
    pub neighbor_losses: &'a [f64],
    pub cumulative_cost: f64,
    pub remaining_budget: f64,
    pub compute_power: f64,
    pub slot: usize,
    pub max_rounds: usize,
}

impl TunerFeatures {
    pub fn build(x: &FeatureInputs<'_>) -> Self {
        let h = x.neighbor_losses.len();
        let (min, mean) = if h == 0 {
            (x.own_loss, x.own_loss)
        } else {
            let min = x.neighbor_losses.iter().copied().fold(f64::INFINITY, f64::min);
            (min, x.neighbor_losses.iter().sum::<f64>() / h as f64)
        };
        Self([
            h as f64,
            x.train_samples as f64,
            x.validation_samples as f64,
            x.own_loss,
            min,
            mean,
            x.cumulative_cost,
            x.remaining_budget,
            x.compute_power,
            x.slot as f64 / x.max_rounds.max(1) as f64,
        ])
    }

    pub fn neighbor_count(&self) -> usize {
        self.0[0] as usize
    }
}

/// How a node picks which neighbors to request models from.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Explicit(Vec<NodeId>),
    /// Every neighbor whose advertised loss is at most this value.
    Threshold(f64),
    /// The `k` neighbors with the lowest advertised losses (ties by id).
    LowestLoss(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunerDecision {
    pub epochs: u32,
    pub selection: Selection,
}

impl TunerDecision {
    /// Resolves the selection against this slot's advertisements
    /// `(neighbor, loss)`, sorted by neighbor id. The result is a sorted
    /// subset of the advertisers; explicit ids outside it are dropped.
    pub fn select(&self, ads: &[(NodeId, f64)]) -> Vec<NodeId> {
        match &self.selection {
            Selection::Explicit(ids) => {
                let mut out: Vec<NodeId> = Vec::with_capacity(ids.len());
                for id in ids {
                    if ads.iter().any(|(u, _)| u == id) {
                        out.push(*id);
                    } else {
                        warn!("dropping request for non-neighbor {id}");
                    }
                }
                out.sort();
                out.dedup();
                out
            }
            Selection::Threshold(tau) => ads.iter().filter(|(_, l)| l <= tau).map(|(u, _)| *u).collect(),
            Selection::LowestLoss(k) => {
                let mut ranked = ads.to_vec();
                ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                let mut out: Vec<NodeId> = ranked.into_iter().take(*k).map(|(u, _)| u).collect();
                out.sort();
                out
            }
        }
    }
}

/// Per-feature affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Column means and population standard deviations; zero spread maps to 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; dim];
        for r in rows {
            for ((s, x), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (x - m).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// A trained tuning network paired with its input scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct MtuneModel {
    pub network: DenseNetwork,
    pub scaler: Scaler,
}

impl MtuneModel {
    pub fn new(network: DenseNetwork, scaler: Scaler) -> Result<Self, TunerError> {
        if network.input_dim() != FEATURE_DIM || scaler.mean.len() != FEATURE_DIM || scaler.std.len() != FEATURE_DIM {
            return Err(TunerError::Dimension { expected: FEATURE_DIM, found: network.input_dim() });
        }
        if network.output_dim() != 2 {
            return Err(TunerError::Outputs(network.output_dim()));
        }
        Ok(Self { network, scaler })
    }

    /// Raw `(z, tau)` outputs.
    pub fn raw(&self, features: &TunerFeatures) -> Result<(f64, f64), TunerError> {
        let out = self.network.forward(&self.scaler.transform(&features.0))?;
        Ok((out[0], out[1]))
    }
}

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("unknown policy {0:?}; expected random, dp, mtune:<file> or fixed:<Z>,<k>")]
    UnknownPolicy(String),
    #[error("tuning model expects {expected} inputs, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("tuning model must have 2 outputs, found {0}")]
    Outputs(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Parameters of a randomized rollout policy used while building training
/// corpora. `Z` is drawn around a center. The merge set has a
/// Binomial(h, merge_prob) size and holds the lowest-loss advertisers, so a
/// loss threshold reproduces it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutProfile {
    pub z_center: u32,
    pub z_jitter: u32,
    pub merge_prob: f64,
}

impl RolloutProfile {
    pub fn sample(rng: &mut impl Rng, z_max: u32) -> Self {
        Self {
            z_center: rng.gen_range(0..=z_max),
            z_jitter: rng.gen_range(0..=1),
            merge_prob: rng.gen_range(0.0..=1.0),
        }
    }

    /// `n` profiles forming a Latin hypercube over `(z_center, merge_prob)`:
    /// each of the `n` strata of either axis holds exactly one profile.
    pub fn stratified(rng: &mut impl Rng, n: usize, z_max: u32) -> Vec<Self> {
        use rand::seq::SliceRandom;
        let mut z_strata: Vec<usize> = (0..n).collect();
        let mut p_strata = z_strata.clone();
        z_strata.shuffle(rng);
        p_strata.shuffle(rng);
        let levels = f64::from(z_max + 1);
        z_strata
            .into_iter()
            .zip(p_strata)
            .map(|(zs, ps)| {
                let zu = (zs as f64 + rng.gen::<f64>()) / n as f64;
                let pu = (ps as f64 + rng.gen::<f64>()) / n as f64;
                Self { z_center: ((zu * levels) as u32).min(z_max), z_jitter: rng.gen_range(0..=1), merge_prob: pu }
            })
            .collect()
    }
}

/// Policy spec as written in configs and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicySpec {
    Random,
    Dp,
    Mtune(PathBuf),
    Fixed { epochs: u32, k: usize },
}

impl std::str::FromStr for PolicySpec {
    type Err = TunerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TunerError::UnknownPolicy(s.to_string());
        match s {
            "random" => Ok(Self::Random),
            "dp" => Ok(Self::Dp),
            _ => {
                if let Some(path) = s.strip_prefix("mtune:").filter(|p| !p.is_empty()) {
                    Ok(Self::Mtune(PathBuf::from(path)))
                } else if let Some(rest) = s.strip_prefix("fixed:") {
                    let (z, k) = rest.split_once(',').ok_or_else(bad)?;
                    Ok(Self::Fixed {
                        epochs: z.trim().parse().map_err(|_| bad())?,
                        k: k.trim().parse().map_err(|_| bad())?,
                    })
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl TryFrom<String> for PolicySpec {
    type Error = TunerError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PolicySpec> for String {
    fn from(p: PolicySpec) -> String {
        p.to_string()
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Random => f.write_str("random"),
            Self::Dp => f.write_str("dp"),
            Self::Mtune(p) => write!(f, "mtune:{}", p.display()),
            Self::Fixed { epochs, k } => write!(f, "fixed:{epochs},{k}"),
        }
    }
}

/// A runnable policy. Stateless; randomness comes from the caller.
#[derive(Debug, Clone)]
pub enum Policy {
    Random,
    Dp,
    Mtune(Arc<MtuneModel>),
    Fixed { epochs: u32, k: usize },
    Rollout(RolloutProfile),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::Dp => "dp",
            Policy::Mtune(_) => "mtune",
            Policy::Fixed { .. } => "fixed",
            Policy::Rollout(_) => "rollout",
        }
    }

    /// Decides `(Z, K)` for one node. `neighbors` is `H(v, t)` in id order.
    /// `Z` is always clamped to `[0, z_max]`.
    pub fn decide(
        &self,
        features: &TunerFeatures,
        neighbors: &[NodeId],
        z_max: u32,
        rng: &mut impl Rng,
    ) -> TunerDecision {
        match self {
            Policy::Random => random_policy(neighbors, z_max, rng),
            Policy::Dp => dp_policy(neighbors),
            Policy::Mtune(m) => mtune_policy(m, features, neighbors, z_max),
            Policy::Fixed { epochs, k } => {
                TunerDecision { epochs: (*epochs).min(z_max), selection: Selection::LowestLoss(*k) }
            }
            Policy::Rollout(p) => {
                let lo = p.z_center.saturating_sub(p.z_jitter);
                let hi = (p.z_center + p.z_jitter).min(z_max);
                let epochs = rng.gen_range(lo.min(hi)..=hi);
                let k = neighbors.iter().filter(|_| rng.gen_bool(p.merge_prob)).count();
                TunerDecision { epochs, selection: Selection::LowestLoss(k) }
            }
        }
    }
}

/// Uniform `Z` in `0..=z_max`; each neighbor kept with probability 1/2.
pub fn random_policy(neighbors: &[NodeId], z_max: u32, rng: &mut impl Rng) -> TunerDecision {
    let epochs = rng.gen_range(0..=z_max);
    let keep = neighbors.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    TunerDecision { epochs, selection: Selection::Explicit(keep) }
}

/// One epoch, merge with every neighbor.
pub fn dp_policy(neighbors: &[NodeId]) -> TunerDecision {
    TunerDecision { epochs: 1, selection: Selection::Explicit(neighbors.to_vec()) }
}

/// Decodes the tuning model's outputs as `(epochs, loss threshold)`.
/// Falls back to [`dp_policy`] when the outputs are not finite.
pub fn mtune_policy(model: &MtuneModel, features: &TunerFeatures, neighbors: &[NodeId], z_max: u32) -> TunerDecision {
    match model.raw(features) {
        Ok((z, tau)) if z.is_finite() && tau.is_finite() => {
            TunerDecision { epochs: z.round().clamp(0.0, z_max as f64) as u32, selection: Selection::Threshold(tau) }
        }
        Ok(_) => {
            warn!("tuning model produced non-finite output; using dp decision");
            dp_policy(neighbors)
        }
        Err(e) => {
            warn!("tuning model failed ({e}); using dp decision");
            dp_policy(neighbors)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use crate::seed;

    fn ids(n: u64) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    fn features(h: usize) -> TunerFeatures {
        let losses = vec![0.5; h];
        TunerFeatures::build(&FeatureInputs {
            train_samples: 100,
            validation_samples: 20,
            own_loss: 0.7,
            neighbor_losses: &losses,
            cumulative_cost: 0.0,
            remaining_budget: 1.0,
            compute_power: 1.0,
            slot: 3,
            max_rounds: 600,
        })
    }

    fn constant_model(z: f64, tau: f64) -> MtuneModel {
        let layers = [LayerSpec::new(FEATURE_DIM, 4, Activation::Relu), LayerSpec::new(4, 2, Activation::Identity)];
        let mut net = DenseNetwork::zeros(layers.to_vec()).unwrap();
        let n = net.param_count();
        net.params_mut()[n - 2] = z;
        net.params_mut()[n - 1] = tau;
        MtuneModel::new(net, Scaler::identity(FEATURE_DIM)).unwrap()
    }

    #[test]
    fn features_default_neighbor_stats_to_own_loss() {
        let f = features(0);
        assert_eq!(f.0[4], 0.7);
        assert_eq!(f.0[5], 0.7);
        assert_eq!(features(3).0[4], 0.5);
        assert!((f.0[9] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn random_policy_isolated_node_requests_nothing() {
        let mut rng = seed::rng(1);
        for _ in 0..100 {
            let d = random_policy(&[], 5, &mut rng);
            assert_eq!(d.selection, Selection::Explicit(vec![]));
        }
    }

    #[test]
    fn random_policy_epochs_are_uniform() {
        let mut rng = seed::rng(42);
        let draws = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[random_policy(&ids(3), 4, &mut rng).epochs as usize] += 1;
        }
        let p: f64 = 0.2;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn random_policy_is_reproducible() {
        let a: Vec<_> = {
            let mut rng = seed::rng(7);
            (0..20).map(|_| random_policy(&ids(4), 5, &mut rng)).collect()
        };
        let mut rng = seed::rng(7);
        let b: Vec<_> = (0..20).map(|_| random_policy(&ids(4), 5, &mut rng)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn dp_takes_everyone_for_one_epoch() {
        let d = dp_policy(&ids(3));
        assert_eq!(d.epochs, 1);
        let ads: Vec<_> = ids(3).into_iter().zip([9.0, 0.1, 3.0]).collect();
        assert_eq!(d.select(&ads), ids(3));
        assert_eq!(dp_policy(&[]).select(&[]), vec![]);
    }

    #[test]
    fn threshold_decoding() {
        let ads = vec![(NodeId(1), 0.4), (NodeId(2), 0.9), (NodeId(5), 0.6)];
        let m = constant_model(1.4, 0.6);
        for h in [0, 3] {
            let d = mtune_policy(&m, &features(h), &ids(h as u64), 4);
            assert_eq!(d.epochs, 1);
        }
        let d = mtune_policy(&m, &features(3), &[NodeId(1), NodeId(2), NodeId(5)], 4);
        assert_eq!(d.select(&ads), vec![NodeId(1), NodeId(5)]);
        let none = mtune_policy(&constant_model(2.0, 0.1), &features(3), &[], 4);
        assert!(none.select(&ads).is_empty());
        let all = mtune_policy(&constant_model(9.0, 1e300), &features(3), &[], 4);
        assert_eq!(all.epochs, 4);
        assert_eq!(all.select(&ads).len(), 3);
    }

    #[test]
    fn non_finite_output_falls_back_to_dp() {
        let m = constant_model(f64::NAN, 0.5);
        assert_eq!(mtune_policy(&m, &features(2), &ids(2), 5), dp_policy(&ids(2)));
    }

    #[test]
    fn lowest_loss_and_explicit_selection() {
        let ads = vec![(NodeId(1), 0.4), (NodeId(2), 0.1), (NodeId(5), 0.4)];
        let d = TunerDecision { epochs: 1, selection: Selection::LowestLoss(2) };
        assert_eq!(d.select(&ads), vec![NodeId(1), NodeId(2)]);
        let e = TunerDecision { epochs: 1, selection: Selection::Explicit(vec![NodeId(9), NodeId(5)]) };
        assert_eq!(e.select(&ads), vec![NodeId(5)]);
    }

    #[test]
    fn policy_strings_round_trip() {
        for s in ["random", "dp", "mtune:models/m.bin", "fixed:2,3"] {
            let p: PolicySpec = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert!("fixed:2".parse::<PolicySpec>().is_err());
        assert!("mtune:".parse::<PolicySpec>().is_err());
        assert!("greedy".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn scaler_standardizes() {
        let rows = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Scaler::fit(&rows);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.transform(&[3.0, 6.0]), vec![1.0, 1.0]);
    }
}
