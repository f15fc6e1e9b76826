//! End-to-end training: standardize, grow, refine, finalize.

use crate::data::{Dataset, Standardizer};
use crate::error::Result;
use crate::topology::{grow_tree, retune_thresholds, GrowthConfig};
use crate::train::{finalize_leaves_with, fit_parameters, EpochRecord, TrainConfig};
use crate::tree::TreeModel;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub max_depth: usize,
    pub min_samples: usize,
    /// Global refinement settings; stumps get a quarter of the epochs.
    pub train: TrainConfig,
    pub standardize: bool,
    /// Re-select branch thresholds on the training data after refinement.
    pub retune_thresholds: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_depth: 3,
            min_samples: 16,
            train: TrainConfig::default(),
            standardize: true,
            retune_thresholds: true,
        }
    }
}

impl PipelineConfig {
    pub fn growth(&self) -> GrowthConfig {
        GrowthConfig {
            max_depth: self.max_depth,
            min_samples: self.min_samples,
            stump_train: TrainConfig {
                epochs: (self.train.epochs / 4).max(1),
                early_stop_patience: 0,
                ..self.train.clone()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub tree: TreeModel,
    pub standardizer: Standardizer,
    pub history: Vec<EpochRecord>,
}

impl TrainedModel {
    /// Applies the stored feature transform.
    pub fn prepare(&self, data: &Dataset) -> Result<Dataset> {
        self.standardizer.apply(data)
    }
}

pub fn train_model(train: &Dataset, valid: Option<&Dataset>, config: &PipelineConfig) -> Result<TrainedModel> {
    let standardizer = if config.standardize {
        Standardizer::fit(train)?
    } else {
        Standardizer::identity(train.feature_dim())
    };
    let train = standardizer.apply(train)?;
    let valid = valid.map(|v| standardizer.apply(v)).transpose()?;

    let initial = grow_tree(&train, valid.as_ref(), &config.growth(), &config.train.prior)?;
    let fit = fit_parameters(&initial, &train, valid.as_ref(), &config.train)?;
    let refined = if config.retune_thresholds {
        retune_thresholds(&fit.tree, &train)?
    } else {
        fit.tree
    };
    let tree = finalize_leaves_with(&refined, &train, config.train.execution)?;
    Ok(TrainedModel {
        tree,
        standardizer,
        history: fit.history,
    })
}
