use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LabeledSample, OrchestratorError};
use crate::nn::{
    init_network, Activation, DenseNetwork, LayerSpec, LossKind, NnError, OptimizerConfig, Sample, Trainer,
};
use crate::seed;
use crate::tuner::{MtuneModel, Scaler, FEATURE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtuneTrainConfig {
    pub folds: usize,
    /// Epochs without a validation improvement before a fold stops.
    pub patience: usize,
    pub max_epochs: usize,
    pub optimizer: OptimizerConfig,
    /// Hidden ReLU widths; the output is a 2-unit identity layer.
    pub hidden: Vec<usize>,
}

impl Default for MtuneTrainConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            patience: 10,
            max_epochs: 500,
            optimizer: OptimizerConfig::adam(1e-3, 32),
            hidden: vec![64, 32, 16],
        }
    }
}

impl MtuneTrainConfig {
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut prev = FEATURE_DIM;
        for &h in &self.hidden {
            layers.push(LayerSpec::new(prev, h, Activation::Relu));
            prev = h;
        }
        layers.push(LayerSpec::new(prev, 2, Activation::Identity));
        layers
    }
}

/// Cross-validation summary. MSEs are in label units, averaged over both outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_best_mse: Vec<f64>,
    /// 1-based epoch at which each fold's validation MSE was lowest.
    pub fold_best_epoch: Vec<usize>,
    /// Epochs each fold actually ran before stopping.
    pub fold_epochs_run: Vec<usize>,
    pub mean_mse: f64,
    pub std_mse: f64,
    /// Epochs used for the final model (median of `fold_best_epoch`).
    pub final_epochs: usize,
    /// MSE of the final model on the whole corpus.
    pub selected_mse: f64,
}

struct LabelScale {
    mean: [f64; 2],
    std: [f64; 2],
}

impl LabelScale {
    fn fit(y: &[[f64; 2]]) -> Self {
        let n = y.len() as f64;
        let mut mean = [0.0; 2];
        let mut std = [0.0; 2];
        for j in 0..2 {
            mean[j] = y.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = y.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            std[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    /// Folds the inverse label transform into the identity output layer.
    fn bake_into(&self, net: &mut DenseNetwork) {
        let last = *net.layers().last().expect("nonempty");
        let n = net.param_count();
        let (w_len, b_len) = (last.input_dim * last.output_dim, last.output_dim);
        let start = n - w_len - b_len;
        let params = net.params_mut();
        for j in 0..2 {
            let row = start + j * last.input_dim;
            for p in &mut params[row..row + last.input_dim] {
                *p *= self.std[j];
            }
            let b = start + w_len + j;
            params[b] = params[b] * self.std[j] + self.mean[j];
        }
    }
}

/// Random hidden layers and a zero output layer, so training starts from the
/// label mean.
fn regression_init(layers: &[LayerSpec], seed: u64) -> Result<DenseNetwork, NnError> {
    let mut net = init_network(layers, seed)?;
    let last = *layers.last().expect("output layer");
    let n = net.param_count();
    net.params_mut()[n - last.param_count()..].fill(0.0);
    Ok(net)
}

fn mse(net: &DenseNetwork, data: &[Sample], y: &[[f64; 2]], scale: &LabelScale) -> Result<f64, NnError> {
    let mut total = 0.0;
    for (s, target) in data.iter().zip(y) {
        let out = net.forward(&s.features)?;
        for j in 0..2 {
            let pred = out[j] * scale.std[j] + scale.mean[j];
            total += (pred - target[j]).powi(2) / 2.0;
        }
    }
    Ok(total / data.len() as f64)
}

/// k-fold cross-validated training with early stopping, then a final fit on
/// the whole corpus for the median best-epoch count.
pub fn train_mtune(
    corpus: &[LabeledSample],
    cfg: &MtuneTrainConfig,
    seed: u64,
) -> Result<(MtuneModel, CvReport), OrchestratorError> {
    if cfg.folds < 2 {
        return Err(OrchestratorError::Config("at least 2 folds are required".into()));
    }
    if corpus.len() < cfg.folds {
        return Err(OrchestratorError::CorpusTooSmall { samples: corpus.len(), folds: cfg.folds });
    }
    if corpus.iter().any(|s| s.features.0.iter().chain([&s.z_label, &s.tau_label]).any(|x| !x.is_finite())) {
        return Err(OrchestratorError::Config("corpus contains non-finite values".into()));
    }
    let raw: Vec<Vec<f64>> = corpus.iter().map(|s| s.features.0.to_vec()).collect();
    let y: Vec<[f64; 2]> = corpus.iter().map(|s| [s.z_label, s.tau_label]).collect();
    let scaler = Scaler::fit(&raw);
    let labels = LabelScale::fit(&y);
    let data: Vec<Sample> = raw
        .iter()
        .zip(&y)
        .map(|(x, t)| {
            let z: Vec<f64> = (0..2).map(|j| (t[j] - labels.mean[j]) / labels.std[j]).collect();
            Sample::target(scaler.transform(x), z)
        })
        .collect();

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, "mtune-folds")));
    let layers = cfg.layers();

    let mut fold_best_mse = Vec::with_capacity(cfg.folds);
    let mut fold_best_epoch = Vec::with_capacity(cfg.folds);
    let mut fold_epochs_run = Vec::with_capacity(cfg.folds);
    for k in 0..cfg.folds {
        let (mut train, mut val, mut val_y) = (Vec::new(), Vec::new(), Vec::new());
        for (pos, &i) in order.iter().enumerate() {
            if pos % cfg.folds == k {
                val.push(data[i].clone());
                val_y.push(y[i]);
            } else {
                train.push(data[i].clone());
            }
        }
        let net = regression_init(&layers, seed::derive_keyed(seed, "mtune-fold-init", &[k as u64]))?;
        let mut trainer =
            Trainer::new(net, cfg.optimizer, LossKind::Mse, seed::derive_keyed(seed, "mtune-fold", &[k as u64]))?;
        let (mut best, mut best_epoch, mut run) = (f64::INFINITY, 0, 0);
        for epoch in 1..=cfg.max_epochs {
            trainer.epoch(&train).map_err(|e| match e {
                NnError::NonFinite(_) => OrchestratorError::NonFiniteLoss { fold: k, epoch },
                other => other.into(),
            })?;
            run = epoch;
            let m = mse(trainer.network(), &val, &val_y, &labels)?;
            if !m.is_finite() {
                return Err(OrchestratorError::NonFiniteLoss { fold: k, epoch });
            }
            if m < best {
                best = m;
                best_epoch = epoch;
            } else if epoch - best_epoch >= cfg.patience {
                break;
            }
        }
        debug!("fold {k}: best mse {best:.5} at epoch {best_epoch}, ran {run}");
        fold_best_mse.push(best);
        fold_best_epoch.push(best_epoch);
        fold_epochs_run.push(run);
    }

    let mut sorted = fold_best_epoch.clone();
    sorted.sort_unstable();
    let final_epochs = sorted[sorted.len() / 2].max(1);
    let net = regression_init(&layers, seed::derive(seed, "mtune-final-init"))?;
    let mut trainer = Trainer::new(net, cfg.optimizer, LossKind::Mse, seed::derive(seed, "mtune-final"))?;
    for epoch in 1..=final_epochs {
        trainer.epoch(&data).map_err(|e| match e {
            NnError::NonFinite(_) => OrchestratorError::NonFiniteLoss { fold: cfg.folds, epoch },
            other => other.into(),
        })?;
    }
    let selected_mse = mse(trainer.network(), &data, &y, &labels)?;
    let mut network = trainer.into_network();
    labels.bake_into(&mut network);

    let n = fold_best_mse.len() as f64;
    let mean_mse = fold_best_mse.iter().sum::<f64>() / n;
    let std_mse = (fold_best_mse.iter().map(|m| (m - mean_mse).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    info!("cv mse {mean_mse:.5} +- {std_mse:.5}; final model trained for {final_epochs} epochs");
    let report =
        CvReport { fold_best_mse, fold_best_epoch, fold_epochs_run, mean_mse, std_mse, final_epochs, selected_mse };
    Ok((MtuneModel::new(network, scaler)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::NodeId;
    use crate::tuner::TunerFeatures;
    use rand::Rng;

    fn sample(features: [f64; FEATURE_DIM], z: f64, tau: f64) -> LabeledSample {
        LabeledSample {
            features: TunerFeatures(features),
            z_label: z,
            tau_label: tau,
            scenario: "t".into(),
            config: 0,
            rollout: 0,
            node: NodeId(0),
            slot: 0,
        }
    }

    #[test]
    fn constant_labels_are_learned() {
        let mut rng = seed::rng(3);
        let corpus: Vec<_> = (0..200)
            .map(|_| {
                let mut f = [0.0; FEATURE_DIM];
                f.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                sample(f, 2.0, 0.5)
            })
            .collect();
        let cfg = MtuneTrainConfig { folds: 4, max_epochs: 50, ..Default::default() };
        let (model, report) = train_mtune(&corpus, &cfg, 1).unwrap();
        assert!(report.selected_mse < 1e-6, "{report:?}");
        let (z, tau) = model.raw(&corpus[0].features).unwrap();
        assert!((z - 2.0).abs() < 1e-3 && (tau - 0.5).abs() < 1e-3);
    }

    #[test]
    fn tiny_corpus_stops_early() {
        let mut rng = seed::rng(4);
        let corpus: Vec<_> = (0..10)
            .map(|_| {
                let mut f = [0.0; FEATURE_DIM];
                f.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                sample(f, rng.gen_range(0.0..5.0), rng.gen_range(0.0..2.0))
            })
            .collect();
        let cfg = MtuneTrainConfig { folds: 2, patience: 3, max_epochs: 10_000, ..Default::default() };
        let (_, report) = train_mtune(&corpus, &cfg, 2).unwrap();
        assert!(report.fold_epochs_run.iter().all(|&e| e < 10_000), "{report:?}");
    }

    #[test]
    fn rejects_small_or_bad_corpora() {
        let corpus = vec![sample([0.0; FEATURE_DIM], 1.0, 1.0); 3];
        assert!(matches!(
            train_mtune(&corpus, &MtuneTrainConfig::default(), 0),
            Err(OrchestratorError::CorpusTooSmall { samples: 3, folds: 10 })
        ));
        let mut bad = vec![sample([0.0; FEATURE_DIM], 1.0, 1.0); 20];
        bad[3].tau_label = f64::NAN;
        assert!(train_mtune(&bad, &MtuneTrainConfig::default(), 0).is_err());
    }
}
