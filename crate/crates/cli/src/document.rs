//! JSON persistence for trained models.
//!
//! Weights are stored both as `log_r` and `r`, thresholds as `logit_p0` and
//! `p0`. The log/logit forms are authoritative; the others are for readers
//! and must agree with them on load.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use cpt_core::{Branch, Expert, Leaf, LeafValue, Node, PipelineConfig, Standardizer, Task, TreeModel};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

/// Relative slack allowed between a stored `r`/`p0` and its log form.
const DERIVED_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format_version: u32,
    pub task: TaskDoc,
    pub feature_dim: usize,
    pub standardizer: StandardizerDoc,
    pub root: NodeDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskDoc {
    Classification { classes: usize },
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizerDoc {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NodeDoc {
    Branch {
        p0: f64,
        logit_p0: f64,
        experts: Vec<ExpertDoc>,
        /// Region where the committee stays at or below `p0`.
        low: Box<NodeDoc>,
        high: Box<NodeDoc>,
    },
    Leaf {
        sample_count: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        distribution: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertDoc {
    pub r: f64,
    pub log_r: f64,
    /// Hyperplane coefficients with the bias last.
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingDoc {
    pub seed: u64,
    pub final_lambda: f64,
    pub config: ConfigEcho,
}

/// Every knob that shaped the model, as given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEcho {
    pub max_depth: usize,
    pub min_samples: usize,
    pub truncation: usize,
    pub gamma0: f64,
    pub c0: f64,
    pub a_beta: f64,
    pub b_beta: f64,
    pub reg_weight: Option<f64>,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub init_std: f64,
    pub standardize: bool,
    pub retune_thresholds: bool,
}

impl ConfigEcho {
    pub fn of(config: &PipelineConfig) -> Self {
        let t = &config.train;
        Self {
            max_depth: config.max_depth,
            min_samples: config.min_samples,
            truncation: t.truncation_k,
            gamma0: t.prior.gamma0,
            c0: t.prior.c0,
            a_beta: t.prior.a_beta,
            b_beta: t.prior.b_beta,
            reg_weight: t.prior.reg_weight,
            lr: t.adam.learning_rate,
            batch: t.batch_size,
            epochs: t.epochs,
            lambda_start: t.lambda_start,
            lambda_end: t.lambda_end,
            init_std: t.init_std,
            standardize: config.standardize,
            retune_thresholds: config.retune_thresholds,
        }
    }
}

impl ModelDocument {
    pub fn from_model(tree: &TreeModel, standardizer: &Standardizer, training: Option<TrainingDoc>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            task: match tree.task() {
                Task::Classification { classes } => TaskDoc::Classification { classes },
                Task::Regression => TaskDoc::Regression,
            },
            feature_dim: tree.feature_dim(),
            standardizer: StandardizerDoc {
                means: standardizer.means.clone(),
                scales: standardizer.scales.clone(),
            },
            root: node_doc(tree, 0),
            training,
        }
    }

    /// Rebuilds the tree and transform, checking every invariant.
    pub fn to_model(&self) -> Result<(TreeModel, Standardizer)> {
        ensure!(
            self.format_version == FORMAT_VERSION,
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            self.format_version
        );
        let d = self.feature_dim;
        let s = &self.standardizer;
        ensure!(
            s.means.len() == d && s.scales.len() == d,
            "standardizer has {} means and {} scales for feature_dim {d}",
            s.means.len(),
            s.scales.len()
        );
        ensure!(
            s.means.iter().all(|m| m.is_finite()),
            "standardizer means must be finite"
        );
        ensure!(
            s.scales.iter().all(|v| v.is_finite() && *v > 0.0),
            "standardizer scales must be finite and positive"
        );
        let task = match self.task {
            TaskDoc::Classification { classes } => Task::Classification { classes },
            TaskDoc::Regression => Task::Regression,
        };
        let mut nodes = Vec::new();
        flatten(&self.root, &mut nodes)?;
        let mut tree = TreeModel::new(nodes, task, d)?;
        if let Some(t) = &self.training {
            ensure!(
                t.final_lambda.is_finite() && t.final_lambda > 0.0,
                "final_lambda must be finite and positive"
            );
            tree.annealing_lambda = t.final_lambda;
        }
        let standardizer = Standardizer {
            means: s.means.clone(),
            scales: s.scales.clone(),
        };
        Ok((tree, standardizer))
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("documents always serialize");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).with_context(|| format!("writing {}", path.display()))
    }

    /// Reads and fully validates a model file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc = Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        doc.to_model()
            .with_context(|| format!("validating {}", path.display()))?;
        Ok(doc)
    }
}

fn node_doc(tree: &TreeModel, id: usize) -> NodeDoc {
    match tree.node(id) {
        Node::Branch(b) => NodeDoc::Branch {
            p0: b.p0(),
            logit_p0: b.logit_p0,
            experts: b
                .experts
                .iter()
                .map(|e| ExpertDoc {
                    r: e.r(),
                    log_r: e.log_r,
                    beta: e.beta.clone(),
                })
                .collect(),
            low: Box::new(node_doc(tree, b.children[0])),
            high: Box::new(node_doc(tree, b.children[1])),
        },
        Node::Leaf(l) => {
            let (distribution, mean) = match &l.value {
                LeafValue::Unset => (None, None),
                LeafValue::Distribution(d) => (Some(d.clone()), None),
                LeafValue::Mean(m) => (None, Some(*m)),
            };
            NodeDoc::Leaf {
                sample_count: l.sample_count,
                distribution,
                mean,
            }
        }
    }
}

fn agrees(stored: f64, derived: f64) -> bool {
    (stored - derived).abs() <= DERIVED_TOLERANCE * derived.abs().max(f64::MIN_POSITIVE)
}

fn flatten(doc: &NodeDoc, nodes: &mut Vec<Node>) -> Result<()> {
    let id = nodes.len();
    match doc {
        NodeDoc::Leaf {
            sample_count,
            distribution,
            mean,
        } => {
            let value = match (distribution, mean) {
                (None, None) => LeafValue::Unset,
                (Some(d), None) => LeafValue::Distribution(d.clone()),
                (None, Some(m)) => LeafValue::Mean(*m),
                (Some(_), Some(_)) => bail!("leaf {id} has both a distribution and a mean"),
            };
            nodes.push(Node::Leaf(Leaf {
                value,
                sample_count: *sample_count,
            }));
        }
        NodeDoc::Branch {
            p0,
            logit_p0,
            experts,
            low,
            high,
        } => {
            let mut committee = Vec::with_capacity(experts.len());
            for (k, e) in experts.iter().enumerate() {
                let expert = Expert::new(e.beta.clone(), e.log_r);
                ensure!(
                    agrees(e.r, expert.r()),
                    "branch {id} expert {k}: r = {} disagrees with log_r = {}",
                    e.r,
                    e.log_r
                );
                committee.push(expert);
            }
            let mut branch = Branch::new(committee, *logit_p0, [0, 0]);
            ensure!(
                agrees(*p0, branch.p0()),
                "branch {id}: p0 = {p0} disagrees with logit_p0 = {logit_p0}"
            );
            nodes.push(Node::Leaf(Leaf::unset()));
            branch.children[0] = nodes.len();
            flatten(low, nodes)?;
            branch.children[1] = nodes.len();
            flatten(high, nodes)?;
            nodes[id] = Node::Branch(branch);
        }
    }
    Ok(())
}
