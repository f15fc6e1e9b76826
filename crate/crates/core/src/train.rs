//! Minibatch training of split parameters and leaf finalization.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Labels};
use crate::error::{CptError, Result};
use crate::exec::Execution;
use crate::metrics::{evaluate_with, route_all};
use crate::objective::{total_loss_and_gradient_with, PriorConfig};
use crate::tree::{Branch, Expert, Leaf, LeafValue, NodeId, Task, TreeModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CptError::InvalidArgument(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(params: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; params],
            second_moment: vec![0.0; params],
            step_count: 0,
            config,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn adam_step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        if params.len() != n || grad.len() != n {
            return Err(CptError::Dimension {
                expected: n,
                found: if params.len() != n { params.len() } else { grad.len() },
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(CptError::Numeric {
                node: 0,
                what: format!("non-finite gradient at parameter {i}"),
            });
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..n {
            let g = grad[i];
            self.first_moment[i] = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            self.second_moment[i] = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            let m_hat = self.first_moment[i] / c1;
            let v_hat = self.second_moment[i] / c2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    Linear,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub growth: Growth,
    pub total_epochs: usize,
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_start > 0.0 && self.lambda_end >= self.lambda_start && self.lambda_end.is_finite()) {
            return Err(CptError::InvalidArgument(format!(
                "annealing needs 0 < lambda_start <= lambda_end, got {} and {}",
                self.lambda_start, self.lambda_end
            )));
        }
        Ok(())
    }

    /// λ for a zero-based epoch; the last epoch gets `lambda_end`.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if self.total_epochs <= 1 || epoch + 1 >= self.total_epochs {
            return self.lambda_end;
        }
        let t = epoch as f64 / (self.total_epochs - 1) as f64;
        match self.growth {
            Growth::Linear => self.lambda_start + t * (self.lambda_end - self.lambda_start),
            Growth::Geometric => self.lambda_start * (self.lambda_end / self.lambda_start).powf(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub truncation_k: usize,
    /// Each minibatch of `m` rows applies the penalty with multiplier
    /// `reg_weight · m / N`, where an unset `reg_weight` means `1/N`.
    pub prior: PriorConfig,
    pub adam: AdamConfig,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub growth: Growth,
    /// Clamped to the training-set size.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Coefficient initialization scale, divided by `√(d + 1)`.
    pub init_std: f64,
    /// Whether `logit_p0` is optimized along with the experts.
    pub learn_threshold: bool,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            truncation_k: 10,
            prior: PriorConfig::default(),
            adam: AdamConfig::default(),
            lambda_start: 1.0,
            lambda_end: 64.0,
            growth: Growth::Geometric,
            batch_size: 64,
            epochs: 200,
            seed: 0,
            early_stop_patience: 0,
            init_std: 5.0,
            learn_threshold: true,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> AnnealSchedule {
        AnnealSchedule {
            lambda_start: self.lambda_start,
            lambda_end: self.lambda_end,
            growth: self.growth,
            total_epochs: self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.truncation_k == 0 {
            return Err(CptError::InvalidArgument("truncation_k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CptError::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(CptError::InvalidArgument("init_std must be non-negative".into()));
        }
        self.prior.validate()?;
        self.adam.validate()?;
        self.schedule().validate()
    }
}

/// A fresh branch: small random coefficients, every log-weight at the prior
/// mean `ln(γ0 / (K c0))`.
pub fn initial_branch(
    rng: &mut ChaCha8Rng,
    feature_dim: usize,
    config: &TrainConfig,
    logit_p0: f64,
    children: [NodeId; 2],
) -> Branch {
    let dim = feature_dim + 1;
    let std = config.init_std / (dim as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite non-negative std");
    let log_r = config.prior.atom_mean(config.truncation_k).ln();
    let experts = (0..config.truncation_k)
        .map(|_| Expert::new((0..dim).map(|_| normal.sample(rng)).collect(), log_r))
        .collect();
    Branch::new(experts, logit_p0, children)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch objective over the epoch, weighted by batch size.
    pub train_loss: f64,
    /// Larger is better: AUC, ACC, or negative RMSE.
    pub valid_metric: Option<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub tree: TreeModel,
    pub history: Vec<EpochRecord>,
    /// Set when early stopping restored an earlier epoch's parameters.
    pub restored_epoch: Option<usize>,
}

fn check_labels(tree: &TreeModel, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(CptError::EmptyDataset);
    }
    if data.feature_dim() != tree.feature_dim() {
        return Err(CptError::Dimension {
            expected: tree.feature_dim(),
            found: data.feature_dim(),
        });
    }
    match (tree.task(), data.labels()) {
        (Task::Classification { classes }, Labels::Classes { values, .. }) => {
            match values.iter().find(|&&v| v >= classes) {
                Some(&label) => Err(CptError::LabelOutOfRange { label, classes }),
                None => Ok(()),
            }
        }
        (Task::Regression, Labels::Targets(_)) => Ok(()),
        _ => Err(CptError::InvalidArgument("labels do not match the tree's task".into())),
    }
}

/// Adam over shuffled minibatches with the annealing schedule, tracking a
/// validation metric each epoch when `valid` is given.
pub fn fit_parameters(
    tree: &TreeModel,
    train: &Dataset,
    valid: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    check_labels(tree, train)?;
    if let Some(v) = valid {
        check_labels(tree, v)?;
    }
    let n = train.len();
    let batch_size = config.batch_size.min(n);
    let schedule = config.schedule();
    let exec = config.execution;
    let reg_weight = config.prior.resolved(n).weight();

    let mut tree = tree.clone();
    let mut params = tree.parameters();
    let mut state = OptimizerState::new(params.len(), config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut restored_epoch = None;

    for epoch in 0..config.epochs {
        let lambda = schedule.lambda_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch = train.select(chunk);
            let prior = config.prior.with_reg_weight(reg_weight * chunk.len() as f64 / n as f64);
            let mut obj = total_loss_and_gradient_with(&tree, &batch, lambda, &prior, exec)?;
            if !config.learn_threshold {
                for (&id, off) in tree.branch_ids().iter().zip(tree.parameter_offsets()) {
                    let k = tree.branch(id).expect("branch id").experts.len();
                    obj.gradient[off + k * (tree.input_dim() + 1)] = 0.0;
                }
            }
            loss_sum += obj.value * chunk.len() as f64;
            if !params.is_empty() {
                state.adam_step(&mut params, &obj.gradient)?;
                tree.set_parameters(&params)?;
            }
        }
        tree.annealing_lambda = lambda;

        let valid_metric = match valid {
            Some(v) => Some(evaluate_with(&finalize_leaves_with(&tree, train, exec)?, v, exec)?.score()),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            valid_metric,
            lambda,
        });

        if let (Some(metric), true) = (valid_metric, config.early_stop_patience > 0) {
            match &best {
                Some((b, _, _)) if metric <= *b => {}
                _ => best = Some((metric, epoch, params.clone())),
            }
            let (_, best_epoch, best_params) = best.as_ref().expect("set above");
            if epoch - best_epoch >= config.early_stop_patience {
                tree.set_parameters(best_params)?;
                tree.annealing_lambda = schedule.lambda_at(*best_epoch);
                restored_epoch = Some(*best_epoch);
                break;
            }
        }
    }
    Ok(FitOutcome {
        tree,
        history,
        restored_epoch,
    })
}

/// Routes the training set deterministically and stores each leaf's
/// empirical class distribution (uniform when empty) or mean target
/// (global mean when empty).
pub fn finalize_leaves(tree: &TreeModel, train: &Dataset) -> Result<TreeModel> {
    finalize_leaves_with(tree, train, Execution::default())
}

pub fn finalize_leaves_with(tree: &TreeModel, train: &Dataset, exec: Execution) -> Result<TreeModel> {
    check_labels(tree, train)?;
    let arrivals = route_all(tree, train, exec)?;
    let mut out = tree.clone();
    let nodes = tree.nodes().len();
    let mut counts = vec![0usize; nodes];
    for &l in &arrivals {
        counts[l] += 1;
    }
    match train.labels() {
        Labels::Classes { values, .. } => {
            let classes = tree.class_count().expect("checked task");
            let mut hist = vec![vec![0usize; classes]; nodes];
            for (&l, &y) in arrivals.iter().zip(values) {
                hist[l][y] += 1;
            }
            for &id in tree.leaf_ids() {
                let total = counts[id];
                let dist = if total == 0 {
                    vec![1.0 / classes as f64; classes]
                } else {
                    hist[id].iter().map(|&c| c as f64 / total as f64).collect()
                };
                out.set_leaf(
                    id,
                    Leaf {
                        value: LeafValue::Distribution(dist),
                        sample_count: total,
                    },
                )?;
            }
        }
        Labels::Targets(y) => {
            let global = y.iter().sum::<f64>() / y.len() as f64;
            let mut sums = vec![0.0; nodes];
            for (&l, &t) in arrivals.iter().zip(y) {
                sums[l] += t;
            }
            for &id in tree.leaf_ids() {
                let mean = if counts[id] == 0 {
                    global
                } else {
                    sums[id] / counts[id] as f64
                };
                out.set_leaf(
                    id,
                    Leaf {
                        value: LeafValue::Mean(mean),
                        sample_count: counts[id],
                    },
                )?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate;
    use crate::numeric::logit;
    use rand::Rng;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut state = OptimizerState::new(3, AdamConfig::default());
        let mut p = vec![0.0, 1.0, -2.0];
        state.adam_step(&mut p, &[0.5, -3.0, 1e3]).unwrap();
        for (after, (before, sign)) in p.iter().zip([(0.0, 1.0), (1.0, -1.0), (-2.0, 1.0)]) {
            assert!((after - (before - 0.01 * sign)).abs() < 1e-9);
        }
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut state = OptimizerState::new(2, AdamConfig::default());
        let mut p = vec![0.3, -0.7];
        for _ in 0..50 {
            state.adam_step(&mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn adam_matches_unrolled_recurrence() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            beta1: 0.8,
            beta2: 0.9,
            epsilon: 1e-3,
        };
        let mut state = OptimizerState::new(1, cfg);
        let mut p = vec![1.0];
        let g = 2.0;
        for _ in 0..3 {
            state.adam_step(&mut p, &[g]).unwrap();
        }
        // m_t = (1 - 0.8^t) g and v_t = (1 - 0.9^t) g² so that every
        // bias-corrected step is lr · g / (|g| + eps).
        let step = 0.1 * 2.0 / (2.0 + 1e-3);
        assert!((p[0] - (1.0 - 3.0 * step)).abs() < 1e-12);
        let m3 = 0.2 * g * (0.8f64.powi(2) + 0.8 + 1.0);
        let v3 = 0.1 * g * g * (0.9f64.powi(2) + 0.9 + 1.0);
        assert!((state.first_moment[0] - m3).abs() < 1e-12);
        assert!((state.second_moment[0] - v3).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut state = OptimizerState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        assert!(matches!(
            state.adam_step(&mut p, &[f64::NAN]),
            Err(CptError::Numeric { .. })
        ));
    }

    #[test]
    fn schedule_endpoints_and_monotonicity() {
        for growth in [Growth::Linear, Growth::Geometric] {
            let s = AnnealSchedule {
                lambda_start: 1.0,
                lambda_end: 64.0,
                growth,
                total_epochs: 37,
            };
            assert_eq!(s.lambda_at(0), 1.0);
            assert_eq!(s.lambda_at(36), 64.0);
            for e in 1..37 {
                assert!(s.lambda_at(e) >= s.lambda_at(e - 1));
            }
        }
        let s = AnnealSchedule {
            lambda_start: 2.0,
            lambda_end: 8.0,
            growth: Growth::Geometric,
            total_epochs: 3,
        };
        assert!((s.lambda_at(1) - 4.0).abs() < 1e-12);
    }

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        while rows.len() < n {
            let x: f64 = rng.random_range(-1.0..1.0);
            let y: f64 = rng.random_range(-1.0..1.0);
            let margin = x + 0.5 * y - 0.1;
            if margin.abs() < 0.1 {
                continue;
            }
            rows.push(vec![x, y]);
            labels.push(usize::from(margin > 0.0));
        }
        Dataset::from_rows(
            &rows,
            Labels::Classes {
                values: labels,
                count: 2,
            },
        )
        .unwrap()
    }

    fn stump(rng: &mut ChaCha8Rng, config: &TrainConfig, d: usize, task: Task) -> TreeModel {
        let mut nodes = vec![crate::tree::Node::Leaf(Leaf::unset()); 3];
        nodes[0] = crate::tree::Node::Branch(initial_branch(rng, d, config, 0.0, [1, 2]));
        TreeModel::new(nodes, task, d).unwrap()
    }

    fn accuracy_on(tree: &TreeModel, data: &Dataset) -> f64 {
        let Labels::Classes { values, .. } = data.labels() else {
            unreachable!()
        };
        let hits = data
            .rows()
            .zip(values)
            .filter(|(x, &y)| tree.predict(x).unwrap().class() == Some(y))
            .count();
        hits as f64 / data.len() as f64
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let data = separable(200, 3);
        let config = TrainConfig {
            truncation_k: 1,
            epochs: 200,
            batch_size: 32,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tree = stump(&mut rng, &config, 2, Task::Classification { classes: 2 });
        let out = fit_parameters(&tree, &data, None, &config).unwrap();
        let fitted = finalize_leaves(&out.tree, &data).unwrap();
        assert_eq!(accuracy_on(&fitted, &data), 1.0);

        let tenth = out.history.len() / 10;
        let early: f64 = out.history[..tenth].iter().map(|r| r.train_loss).sum::<f64>() / tenth as f64;
        let late: f64 = out.history[out.history.len() - tenth..]
            .iter()
            .map(|r| r.train_loss)
            .sum::<f64>()
            / tenth as f64;
        assert!(late < early, "{late} !< {early}");
        assert_eq!(out.history.last().unwrap().lambda, 64.0);
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let data = separable(50, 4);
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tree = stump(&mut rng, &config, 2, Task::Classification { classes: 2 });
        let out = fit_parameters(&tree, &data, None, &config).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.tree.parameters(), tree.parameters());
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let data = separable(150, 6);
        let mut config = TrainConfig {
            truncation_k: 4,
            epochs: 15,
            batch_size: 20,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tree = stump(&mut rng, &config, 2, Task::Classification { classes: 2 });
        let a = fit_parameters(&tree, &data, Some(&data), &config).unwrap();
        let b = fit_parameters(&tree, &data, Some(&data), &config).unwrap();
        config.execution = Execution::Sequential;
        let c = fit_parameters(&tree, &data, Some(&data), &config).unwrap();
        let bits = |t: &TreeModel| t.parameters().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.tree), bits(&b.tree));
        assert_eq!(bits(&a.tree), bits(&c.tree));
        assert_eq!(a.history, c.history);
    }

    #[test]
    fn early_stopping_restores_best_epoch() {
        let data = separable(120, 8);
        let config = TrainConfig {
            truncation_k: 2,
            epochs: 200,
            batch_size: 16,
            early_stop_patience: 3,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tree = stump(&mut rng, &config, 2, Task::Classification { classes: 2 });
        let out = fit_parameters(&tree, &data, Some(&data), &config).unwrap();
        let best = out.restored_epoch.expect("AUC saturates so stopping triggers");
        assert!(out.history.len() < 200);
        let best_metric = out.history[best].valid_metric.unwrap();
        assert!(out.history.iter().all(|r| r.valid_metric.unwrap() <= best_metric));
        let report = evaluate(&finalize_leaves(&out.tree, &data).unwrap(), &data).unwrap();
        assert!((report.value - best_metric).abs() < 1e-12);
    }

    #[test]
    fn finalize_examples() {
        // A branch that sends everything high.
        let always_high = Branch::new(vec![Expert::new(vec![0.0, 50.0], 0.0)], logit(0.5), [1, 2]);
        let nodes = vec![
            crate::tree::Node::Branch(always_high),
            crate::tree::Node::Leaf(Leaf::unset()),
            crate::tree::Node::Leaf(Leaf::unset()),
        ];
        let tree = TreeModel::new(nodes, Task::Classification { classes: 2 }, 1).unwrap();
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        let data = Dataset::from_rows(
            &rows,
            Labels::Classes {
                values: vec![0, 0, 1],
                count: 2,
            },
        )
        .unwrap();
        let f = finalize_leaves(&tree, &data).unwrap();
        let leaf = f.leaf(2).unwrap();
        assert_eq!(leaf.sample_count, 3);
        assert_eq!(leaf.value, LeafValue::Distribution(vec![2.0 / 3.0, 1.0 / 3.0]));
        assert_eq!(f.leaf(1).unwrap().value, LeafValue::Distribution(vec![0.5, 0.5]));
        assert_eq!(f.leaf(1).unwrap().sample_count, 0);

        let mut reg = tree.clone();
        reg = TreeModel::new(reg.nodes().to_vec(), Task::Regression, 1).unwrap();
        let data = Dataset::from_rows(&rows[..2], Labels::Targets(vec![2.0, 4.0])).unwrap();
        let f = finalize_leaves(&reg, &data).unwrap();
        assert_eq!(f.leaf(2).unwrap().value, LeafValue::Mean(3.0));
        assert_eq!(f.leaf(1).unwrap().value, LeafValue::Mean(3.0));
    }

    #[test]
    fn finalized_counts_cover_the_data() {
        let data = separable(300, 12);
        let config = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tree = crate::tree::tests::random_tree(&mut rng, 3, 3, 2, Task::Classification { classes: 2 });
        let _ = config;
        let f = finalize_leaves(&tree, &data).unwrap();
        let total: usize = f.leaf_ids().iter().map(|&l| f.leaf(l).unwrap().sample_count).sum();
        assert_eq!(total, 300);
        for &l in f.leaf_ids() {
            let LeafValue::Distribution(d) = &f.leaf(l).unwrap().value else {
                panic!()
            };
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_branch_matches_prior_mean() {
        let config = TrainConfig {
            truncation_k: 8,
            prior: PriorConfig {
                gamma0: 2.0,
                c0: 0.5,
                ..PriorConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = initial_branch(&mut rng, 3, &config, 0.2, [1, 2]);
        assert_eq!(b.experts.len(), 8);
        for e in &b.experts {
            assert!((e.r() - 0.5).abs() < 1e-12);
            assert_eq!(e.beta.len(), 4);
        }
        assert_eq!(b.logit_p0, 0.2);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let data = separable(20, 1);
        let config = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = stump(&mut rng, &config, 2, Task::Classification { classes: 2 });
        let three = Dataset::from_rows(
            &[vec![0.0, 0.0]],
            Labels::Classes {
                values: vec![2],
                count: 3,
            },
        )
        .unwrap();
        assert!(matches!(
            fit_parameters(&tree, &three, None, &config),
            Err(CptError::LabelOutOfRange { .. })
        ));
        let bad = TrainConfig {
            lambda_start: 4.0,
            lambda_end: 2.0,
            ..TrainConfig::default()
        };
        assert!(fit_parameters(&tree, &data, None, &bad).is_err());
    }
}
