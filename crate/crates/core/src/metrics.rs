//! Evaluation metrics and tree summaries.

use std::fmt;

use crate::data::{Dataset, Labels};
use crate::error::{CptError, Result};
use crate::exec::Execution;
use crate::tree::{LeafValue, Node, Task, TreeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Acc,
    Auc,
    Rmse,
}

impl MetricKind {
    /// The default metric for a task: AUC for binary, ACC for multi-class,
    /// RMSE for regression.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification { classes: 2 } => MetricKind::Auc,
            Task::Classification { .. } => MetricKind::Acc,
            Task::Regression => MetricKind::Rmse,
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::Rmse)
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Acc => "ACC",
            MetricKind::Auc => "AUC",
            MetricKind::Rmse => "RMSE",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeStats {
    pub depth: usize,
    pub leaf_count: usize,
    pub effective_experts_per_node: Vec<usize>,
}

impl TreeStats {
    pub fn of(tree: &TreeModel) -> Self {
        Self {
            depth: tree.depth(),
            leaf_count: tree.leaf_count(),
            effective_experts_per_node: tree.effective_experts_per_node(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric_kind: MetricKind,
    pub value: f64,
    pub tree_stats: TreeStats,
}

impl MetricReport {
    /// The value oriented so that larger is better.
    pub fn score(&self) -> f64 {
        if self.metric_kind.higher_is_better() {
            self.value
        } else {
            -self.value
        }
    }
}

/// Mann-Whitney AUC with tied scores counted as one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(CptError::Dimension {
            expected: scores.len(),
            found: positive.len(),
        });
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(CptError::UndefinedMetric("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based start+1..=end) share their average
        let avg = (start + end + 1) as f64 / 2.0;
        let hits = order[start..end].iter().filter(|&&i| positive[i]).count();
        rank_sum += avg * hits as f64;
        start = end;
    }
    let pos_f = pos as f64;
    Ok((rank_sum - pos_f * (pos_f + 1.0) / 2.0) / (pos_f * neg as f64))
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(CptError::Dimension {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(CptError::EmptyDataset);
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

pub fn rmse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(CptError::Dimension {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(CptError::EmptyDataset);
    }
    let sse: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// Deterministic leaf of every row.
pub fn route_all(tree: &TreeModel, data: &Dataset, exec: Execution) -> Result<Vec<usize>> {
    if data.feature_dim() != tree.feature_dim() {
        return Err(CptError::Dimension {
            expected: tree.feature_dim(),
            found: data.feature_dim(),
        });
    }
    Ok(exec.map_indexed(data.len(), |n| tree.route_unchecked(data.row(n))))
}

pub fn evaluate(tree: &TreeModel, data: &Dataset) -> Result<MetricReport> {
    evaluate_with(tree, data, Execution::default())
}

pub fn evaluate_with(tree: &TreeModel, data: &Dataset, exec: Execution) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(CptError::EmptyDataset);
    }
    let leaves = route_all(tree, data, exec)?;
    let leaf_value = |id: usize| match tree.node(id) {
        Node::Leaf(l) => &l.value,
        Node::Branch(_) => unreachable!("routing ends at a leaf"),
    };
    let kind = MetricKind::for_task(tree.task());
    let value = match (tree.task(), data.labels()) {
        (Task::Classification { classes }, Labels::Classes { values, .. }) => {
            if let Some(&bad) = values.iter().find(|&&v| v >= classes) {
                return Err(CptError::LabelOutOfRange { label: bad, classes });
            }
            let mut dists = Vec::with_capacity(leaves.len());
            for &l in &leaves {
                match leaf_value(l) {
                    LeafValue::Distribution(d) => dists.push(d),
                    _ => return Err(CptError::State(format!("leaf {l} has no class distribution"))),
                }
            }
            if kind == MetricKind::Auc {
                let scores: Vec<f64> = dists.iter().map(|d| d[1]).collect();
                let positive: Vec<bool> = values.iter().map(|&v| v == 1).collect();
                auc(&scores, &positive)?
            } else {
                let predicted: Vec<usize> = dists.iter().map(|d| crate::tree::argmax(d)).collect();
                accuracy(&predicted, values)?
            }
        }
        (Task::Regression, Labels::Targets(y)) => {
            let mut predicted = Vec::with_capacity(leaves.len());
            for &l in &leaves {
                match leaf_value(l) {
                    LeafValue::Mean(m) => predicted.push(*m),
                    _ => return Err(CptError::State(format!("leaf {l} has no mean value"))),
                }
            }
            rmse(&predicted, y)?
        }
        _ => {
            return Err(CptError::InvalidArgument(
                "dataset labels do not match the tree's task".into(),
            ))
        }
    };
    Ok(MetricReport {
        metric_kind: kind,
        value,
        tree_stats: TreeStats::of(tree),
    })
}
