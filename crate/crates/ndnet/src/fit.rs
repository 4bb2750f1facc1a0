//! Mini-batch training with early stopping on a held-out split.

use sbi_core::data::permutation;
use sbi_core::{split_train_val, Dataset, Error, Result, RngKey};
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::params::NetParams;

/// A per-batch training loss.
pub trait Objective {
    /// Mean loss over `batch` and its gradient.
    fn loss_and_grad(&self, params: &NetParams, batch: &Dataset, key: RngKey)
        -> Result<(f64, NetParams)>;

    /// Mean loss over `batch`, used for validation.
    fn loss(&self, params: &NetParams, batch: &Dataset, key: RngKey) -> Result<f64>;

    /// Smallest batch the loss is defined on; shorter trailing batches are
    /// skipped.
    fn min_batch(&self) -> usize {
        1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Maximum number of epochs.
    pub n_iter: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_iter: 1000,
            batch_size: 128,
            val_fraction: 0.1,
            patience: 10,
            adam: AdamConfig::default(),
        }
    }
}

/// Per-epoch mean training and validation losses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

impl LossProfile {
    pub fn epochs(&self) -> usize {
        self.train.len()
    }

    /// Epoch (0-based) with the lowest validation loss.
    pub fn best_epoch(&self) -> Option<usize> {
        self.val
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

/// Split `data` into train/validation parts and train.
pub fn fit_loop(
    objective: &dyn Objective,
    params: NetParams,
    data: &Dataset,
    key: RngKey,
    config: &FitConfig,
) -> Result<(NetParams, LossProfile)> {
    if data.n() == 0 {
        return Err(Error::Contract("cannot fit on an empty dataset".into()));
    }
    let (train, val) = split_train_val(data, config.val_fraction, key.fold_in(0))?;
    fit_with_validation(objective, params, &train, &val, key.fold_in(1), config)
}

/// Train on `train`, early-stopping on `val`. Returns the parameters with
/// the lowest validation loss.
pub fn fit_with_validation(
    objective: &dyn Objective,
    mut params: NetParams,
    train: &Dataset,
    val: &Dataset,
    key: RngKey,
    config: &FitConfig,
) -> Result<(NetParams, LossProfile)> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if train.n() == 0 || val.n() == 0 {
        return Err(Error::Contract("cannot fit on an empty dataset".into()));
    }
    if config.n_iter == 0 {
        return Err(Error::Config("n_iter must be >= 1".into()));
    }
    let mut adam = AdamState::new(&params, config.adam);
    let mut profile = LossProfile::default();
    let mut best = (f64::INFINITY, params.clone());
    let mut stale = 0;
    let val_key = key.fold_in(u64::MAX);
    let min_batch = objective.min_batch();
    for epoch in 0..config.n_iter {
        let ekey = key.fold_in(epoch as u64);
        let order = permutation(ekey.fold_in(0), train.n());
        let (mut total, mut count) = (0.0, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            if idx.len() < min_batch {
                continue;
            }
            let batch = train.select_rows(idx);
            let (loss, grads) = objective.loss_and_grad(&params, &batch, ekey.fold_in(b as u64 + 1))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            adam.update(&mut params, &grads);
            total += loss * idx.len() as f64;
            count += idx.len();
        }
        if count == 0 {
            return Err(Error::Contract(format!(
                "training set of {} rows yields no batch of at least {min_batch}",
                train.n()
            )));
        }
        let val_loss = objective.loss(&params, val, val_key)?;
        profile.train.push(total / count as f64);
        profile.val.push(val_loss);
        log::debug!("epoch {epoch}: train {:.5} val {val_loss:.5}", total / count as f64);
        if val_loss < best.0 {
            best = (val_loss, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Numeric("validation loss never finite".into()));
    }
    Ok((best.1, profile))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sbi_core::{Tensor, ThetaBatch};

    fn data(n: usize) -> Dataset {
        let theta = ThetaBatch::from_entries(vec![("t".into(), Tensor::zeros(&[n, 1]))]).unwrap();
        Dataset::new(Tensor::zeros(&[n, 1]), theta).unwrap()
    }

    fn p_of(params: &NetParams) -> f64 {
        params.get("p").unwrap().data()[0]
    }

    /// Training pushes `p` up at a constant rate; validation is minimized
    /// at `p = target`.
    struct Scripted {
        target: f64,
    }

    impl Objective for Scripted {
        fn loss_and_grad(&self, params: &NetParams, _: &Dataset, _: RngKey) -> Result<(f64, NetParams)> {
            let mut g = params.zeros_like();
            g.get_mut("p").unwrap().data_mut()[0] = -1.0;
            Ok((-p_of(params), g))
        }

        fn loss(&self, params: &NetParams, _: &Dataset, _: RngKey) -> Result<f64> {
            Ok((p_of(params) - self.target).powi(2))
        }
    }

    fn start() -> NetParams {
        let mut p = NetParams::new();
        p.insert("p", Tensor::zeros(&[1, 1]));
        p
    }

    #[test]
    fn early_stop_returns_best_epoch() {
        // One batch per epoch: Adam moves p by lr each step, so validation
        // is best after epoch 3 and worse from then on.
        let lr = 1e-3;
        let obj = Scripted { target: 3.0 * lr };
        let config = FitConfig {
            patience: 2,
            ..FitConfig::default()
        };
        let (params, profile) =
            fit_with_validation(&obj, start(), &data(10), &data(2), RngKey::new(0), &config).unwrap();
        assert_eq!(profile.epochs(), 5);
        assert_eq!(profile.val.len(), 5);
        assert_eq!(profile.best_epoch(), Some(2));
        assert!((p_of(&params) - 3.0 * lr).abs() < 1e-9);
    }

    #[test]
    fn zero_patience_runs_all_epochs() {
        let obj = Scripted { target: 0.0 };
        let config = FitConfig {
            n_iter: 17,
            patience: 0,
            ..FitConfig::default()
        };
        let (_, profile) = fit_loop(&obj, start(), &data(20), RngKey::new(1), &config).unwrap();
        assert_eq!(profile.train.len(), 17);
        assert_eq!(profile.val.len(), 17);
    }

    #[test]
    fn empty_dataset_rejected() {
        let obj = Scripted { target: 0.0 };
        let err = fit_loop(&obj, start(), &data(0), RngKey::new(1), &FitConfig::default());
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
