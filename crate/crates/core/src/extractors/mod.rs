//! Trainable feature extractors: the convolutional prototype network and LDA.

mod cpn;
mod lda;
mod model_io;

pub use cpn::{CpnArchitecture, CpnModel, CpnTraining, EpochStats, InputScaler, DEFAULT_PROTOTYPE_SCALE};
pub use lda::LdaModel;
pub use model_io::{load_model, read_model, save_model, write_model};

use crate::error::{Error, Result};
use crate::signal::FeatureMap;
use crate::spdmetric::{self, MetricKind};

/// Optimiser and loss settings for CPN training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate is multiplied by `lr_decay_factor` every `lr_decay_every` epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    /// Weight of the prototype loss.
    pub lambda_loss: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Power of the distance inside the softmax (1: `exp(-D)`, 2: `exp(-D^2)`).
    pub ce_distance_power: u8,
    /// Standardise each feature-map cell with training statistics before upsampling.
    pub standardize: bool,
    /// Prototypes start at `prototype_init_scale * N(0, 1)`.
    pub prototype_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 1.5e-4,
            lr_decay_every: 15,
            lr_decay_factor: 0.1,
            batch_size: 32,
            lambda_loss: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            ce_distance_power: 1,
            standardize: true,
            prototype_init_scale: cpn::DEFAULT_PROTOTYPE_SCALE,
        }
    }
}

impl TrainConfig {
    /// Defaults with the prototype-loss weight tuned per metric (1.0 for SLED, 0.5 for ED).
    pub fn for_metric(metric: MetricKind) -> Self {
        Self { lambda_loss: default_lambda_loss(metric), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(self.lambda_loss >= 0.0) {
            return Err(Error::InvalidConfig("lambda_loss must be non-negative".into()));
        }
        if self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::InvalidConfig("batch size and decay period must be positive".into()));
        }
        if !(self.prototype_init_scale >= 0.0 && self.prototype_init_scale.is_finite()) {
            return Err(Error::InvalidConfig("prototype init scale must be finite and non-negative".into()));
        }
        if !matches!(self.ce_distance_power, 1 | 2) {
            return Err(Error::InvalidConfig("ce distance power must be 1 or 2".into()));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }
}

pub fn default_lambda_loss(metric: MetricKind) -> f64 {
    match metric {
        MetricKind::Ed => 0.5,
        _ => 1.0,
    }
}

/// `p_i = exp(-D_i) / sum_j exp(-D_j)`, shifted by the smallest distance.
pub fn prototype_probabilities(distances: &[f64]) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = distances.iter().map(|d| (min - d).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// A trained extractor of either family.
#[derive(Debug, Clone)]
pub enum ExtractorModel {
    Cpn(CpnModel),
    Lda(LdaModel),
}

impl ExtractorModel {
    pub fn name(&self) -> &'static str {
        match self {
            ExtractorModel::Cpn(_) => "CPN",
            ExtractorModel::Lda(_) => "LDA",
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ExtractorModel::Cpn(m) => m.classes(),
            ExtractorModel::Lda(m) => m.classes(),
        }
    }

    pub fn extract(&self, map: &FeatureMap) -> Vec<f64> {
        match self {
            ExtractorModel::Cpn(m) => m.extract(map),
            ExtractorModel::Lda(m) => m.project(&map.flatten()),
        }
    }

    pub fn extract_all(&self, maps: &[FeatureMap]) -> Vec<Vec<f64>> {
        match self {
            ExtractorModel::Cpn(m) => m.extract_all(maps),
            ExtractorModel::Lda(m) => maps.iter().map(|x| m.project(&x.flatten())).collect(),
        }
    }

    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        match self {
            ExtractorModel::Cpn(m) => m.prototypes(),
            ExtractorModel::Lda(m) => m.prototypes(),
        }
    }

    pub fn check_metric(&self, metric: MetricKind) -> Result<()> {
        match (self, metric) {
            (ExtractorModel::Cpn(_), MetricKind::Md) => {
                Err(Error::IncompatibleMetric { metric: "MD", extractor: "CPN" })
            }
            _ => Ok(()),
        }
    }

    /// Distance `D(f, m_class)` under `metric`.
    pub fn distance(&self, metric: MetricKind, f: &[f64], prototype: &[f64], class: usize) -> Result<f64> {
        match (self, metric) {
            (ExtractorModel::Lda(m), MetricKind::Md) => Ok(m.mahalanobis_squared(f, class)?.sqrt()),
            (ExtractorModel::Cpn(_), MetricKind::Md) => {
                Err(Error::IncompatibleMetric { metric: "MD", extractor: "CPN" })
            }
            (_, metric) => spdmetric::distance(metric, f, prototype),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric() {
        assert_eq!(prototype_probabilities(&[1.0, 1.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_limit() {
        let p = prototype_probabilities(&[0.0, 1e4]);
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn softmax_definitional() {
        let d = [1.0, 2.0, 3.0];
        let denom: f64 = d.iter().map(|x: &f64| (-x).exp()).sum();
        let p = prototype_probabilities(&d);
        for i in 0..3 {
            assert!((p[i] - (-d[i]).exp() / denom).abs() < 1e-15);
        }
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at_epoch(0), 1.5e-4);
        assert_eq!(cfg.lr_at_epoch(14), 1.5e-4);
        assert!((cfg.lr_at_epoch(15) - 1.5e-5).abs() < 1e-18);
        assert!((cfg.lr_at_epoch(59) - 1.5e-7).abs() < 1e-20);
    }

    #[test]
    fn lambda_defaults() {
        assert_eq!(TrainConfig::for_metric(MetricKind::Sled).lambda_loss, 1.0);
        assert_eq!(TrainConfig::for_metric(MetricKind::Ed).lambda_loss, 0.5);
    }

    proptest! {
        #[test]
        fn softmax_normalised_and_shift_invariant(
            d in proptest::collection::vec(0.0f64..50.0, 1..12),
            shift in 0.0f64..100.0,
        ) {
            let p = prototype_probabilities(&d);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = d.iter().map(|x| x + shift).collect();
            let q = prototype_probabilities(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            // order reversing
            for i in 0..d.len() {
                for j in 0..d.len() {
                    if d[i] < d[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
            }
        }

        #[test]
        fn argmin_same_under_square(d in proptest::collection::vec(0.0f64..50.0, 1..12)) {
            let argmin = |v: &[f64]| v.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc }).0;
            let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
            prop_assert_eq!(argmin(&d), argmin(&sq));
        }
    }
}
