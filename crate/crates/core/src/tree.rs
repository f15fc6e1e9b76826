//! Convex polytope tree: noisy-OR committee splits, probabilistic routing and
//! deterministic inference.
//!
//! Each branch holds a committee of linear experts. With
//! `g(x) = Σ_i r_i ln(1 + exp(β_i·x))` the committee "Yes" probability is
//! `f(x) = 1 - exp(-g(x))`, and the set `{x : f(x) <= q}` is convex for any
//! threshold `q` because `g` is a positive combination of convex softplus
//! terms. Training uses the sharpened probability
//! `f_λ(x) = logistic(λ (g(x) + ln(1 - p0)))`, which crosses one half exactly
//! where `f(x) = p0`, so the deterministic 0.5 rule is independent of `λ`.
//!
//! Nodes live in an arena in pre-order: node 0 is the root and every child
//! index is larger than its parent's.

use crate::error::{CptError, Result};
use crate::numeric::{dot, sigmoid, softplus};

pub type NodeId = usize;

/// Tolerance for leaf class distributions summing to one.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// Fraction of the node's largest weight an expert needs to count as a facet.
pub const EFFECTIVE_EXPERT_FRACTION: f64 = 0.01;

/// One polytope facet: a hyperplane `beta` (bias coordinate last) with
/// importance `r = exp(log_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub beta: Vec<f64>,
    pub log_r: f64,
}

impl Expert {
    pub fn new(beta: Vec<f64>, log_r: f64) -> Self {
        Self { beta, log_r }
    }

    pub fn with_weight(beta: Vec<f64>, r: f64) -> Self {
        Self { beta, log_r: r.ln() }
    }

    #[inline]
    pub fn r(&self) -> f64 {
        self.log_r.exp()
    }

    /// Probability this expert alone votes "Yes": `1 - (1 + e^{β·x})^{-r}`.
    pub fn vote_probability(&self, x: &[f64]) -> f64 {
        -(-self.r() * softplus(dot(&self.beta, x))).exp_m1()
    }
}

/// Internal node: the expert committee plus the annealing offset `p0`.
/// `children[0]` receives the low-probability side (`f <= p0`), `children[1]`
/// the "Yes" side.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub experts: Vec<Expert>,
    pub logit_p0: f64,
    pub children: [NodeId; 2],
}

impl Branch {
    pub fn new(experts: Vec<Expert>, logit_p0: f64, children: [NodeId; 2]) -> Self {
        Self {
            experts,
            logit_p0,
            children,
        }
    }

    pub fn p0(&self) -> f64 {
        sigmoid(self.logit_p0)
    }

    /// `ln(1 - p0)`.
    #[inline]
    pub fn log_one_minus_p0(&self) -> f64 {
        -softplus(self.logit_p0)
    }

    pub fn input_dim(&self) -> usize {
        self.experts.first().map_or(0, |e| e.beta.len())
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        let expected = self.input_dim();
        if x.len() != expected {
            return Err(CptError::Dimension {
                expected,
                found: x.len(),
            });
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn log_complement_unchecked(&self, x: &[f64]) -> f64 {
        self.experts.iter().map(|e| e.r() * softplus(dot(&e.beta, x))).sum()
    }

    /// `g(x) = -ln(1 - f(x)) = Σ_i r_i ln(1 + exp(β_i·x))`.
    pub fn committee_log_complement(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.log_complement_unchecked(x))
    }

    /// Committee "Yes" probability `f(x) = 1 - exp(-g(x))`.
    pub fn split_probability(&self, x: &[f64]) -> Result<f64> {
        Ok(-(-self.committee_log_complement(x)?).exp_m1())
    }

    /// Logit of the annealed probability, `λ (g(x) + ln(1 - p0))`.
    #[inline]
    pub(crate) fn annealed_logit_unchecked(&self, x: &[f64], lambda: f64) -> f64 {
        lambda * (self.log_complement_unchecked(x) + self.log_one_minus_p0())
    }

    /// `f_λ(x) = 1 / (1 + ((1 - f(x)) / (1 - p0))^λ)`.
    pub fn annealed_probability(&self, x: &[f64], lambda: f64) -> Result<f64> {
        self.check(x)?;
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(CptError::InvalidArgument(format!(
                "annealing lambda must be positive, got {lambda}"
            )));
        }
        Ok(sigmoid(self.annealed_logit_unchecked(x, lambda)))
    }

    /// Test-time direction: the "Yes" child iff `f_λ(x) > 0.5`, which is
    /// `g(x) + ln(1 - p0) > 0` for every `λ`. Ties go to `children[0]`.
    #[inline]
    pub(crate) fn goes_high_unchecked(&self, x: &[f64]) -> bool {
        self.log_complement_unchecked(x) + self.log_one_minus_p0() > 0.0
    }

    /// Number of experts with `r_i > 0.01 · max_i r_i`.
    pub fn effective_experts(&self) -> usize {
        let max = self.experts.iter().map(|e| e.log_r).fold(f64::NEG_INFINITY, f64::max);
        let cut = max + EFFECTIVE_EXPERT_FRACTION.ln();
        self.experts.iter().filter(|e| e.log_r > cut).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeafValue {
    /// Structure exists but leaf parameters have not been assigned.
    Unset,
    Distribution(Vec<f64>),
    Mean(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub value: LeafValue,
    pub sample_count: usize,
}

impl Leaf {
    pub fn unset() -> Self {
        Self {
            value: LeafValue::Unset,
            sample_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Branch(Branch),
    Leaf(Leaf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class { class: usize, scores: Vec<f64> },
    Value(f64),
}

impl Prediction {
    pub fn class(&self) -> Option<usize> {
        match self {
            Prediction::Class { class, .. } => Some(*class),
            Prediction::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Prediction::Value(v) => Some(*v),
            Prediction::Class { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    nodes: Vec<Node>,
    task: Task,
    feature_dim: usize,
    /// Current λ_t; the final value once training ends.
    pub annealing_lambda: f64,
    leaves: Vec<NodeId>,
    branches: Vec<NodeId>,
}

impl TreeModel {
    /// Builds a tree from a pre-ordered node arena, validating structure and
    /// parameters.
    pub fn new(nodes: Vec<Node>, task: Task, feature_dim: usize) -> Result<Self> {
        let mut tree = Self {
            nodes,
            task,
            feature_dim,
            annealing_lambda: 1.0,
            leaves: Vec::new(),
            branches: Vec::new(),
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn single_leaf(task: Task, feature_dim: usize) -> Self {
        Self::new(vec![Node::Leaf(Leaf::unset())], task, feature_dim).expect("a lone leaf is always well formed")
    }

    /// Depth-1 tree: one branch and two unset leaves.
    pub fn stump(task: Task, feature_dim: usize, experts: Vec<Expert>, logit_p0: f64) -> Result<Self> {
        Self::new(
            vec![
                Node::Branch(Branch::new(experts, logit_p0, [1, 2])),
                Node::Leaf(Leaf::unset()),
                Node::Leaf(Leaf::unset()),
            ],
            task,
            feature_dim,
        )
    }

    /// Checks every structural and parameter invariant and refreshes the
    /// cached leaf/branch index lists.
    pub fn validate(&mut self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(CptError::Structure("tree has no nodes".into()));
        }
        if let Task::Classification { classes } = self.task {
            if classes == 0 {
                return Err(CptError::Structure("classification with zero classes".into()));
            }
        }
        let input_dim = self.feature_dim + 1;
        let mut parents = vec![0usize; self.nodes.len()];
        let mut leaves = Vec::new();
        let mut branches = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Branch(b) => {
                    branches.push(id);
                    if b.experts.is_empty() {
                        return Err(CptError::Structure(format!("branch {id} has no experts")));
                    }
                    for (k, e) in b.experts.iter().enumerate() {
                        if e.beta.len() != input_dim {
                            return Err(CptError::Structure(format!(
                                "branch {id} expert {k} has {} coefficients, expected {input_dim}",
                                e.beta.len()
                            )));
                        }
                        if !e.log_r.is_finite() || !e.r().is_finite() || e.r() <= 0.0 {
                            return Err(CptError::Structure(format!(
                                "branch {id} expert {k} has weight outside (0, inf)"
                            )));
                        }
                        if e.beta.iter().any(|v| !v.is_finite()) {
                            return Err(CptError::Structure(format!(
                                "branch {id} expert {k} has non-finite coefficients"
                            )));
                        }
                    }
                    let p0 = b.p0();
                    if !b.logit_p0.is_finite() || !(p0 > 0.0 && p0 < 1.0) {
                        return Err(CptError::Structure(format!("branch {id} has p0 outside (0, 1)")));
                    }
                    for &c in &b.children {
                        if c <= id || c >= self.nodes.len() {
                            return Err(CptError::Structure(format!(
                                "branch {id} has child {c} outside pre-order range"
                            )));
                        }
                        parents[c] += 1;
                    }
                }
                Node::Leaf(l) => {
                    leaves.push(id);
                    match (&l.value, self.task) {
                        (LeafValue::Unset, _) => {}
                        (LeafValue::Distribution(d), Task::Classification { classes }) => {
                            if d.len() != classes {
                                return Err(CptError::Structure(format!(
                                    "leaf {id} distribution has {} entries, expected {classes}",
                                    d.len()
                                )));
                            }
                            if d.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                                return Err(CptError::Structure(format!(
                                    "leaf {id} distribution has negative or non-finite entries"
                                )));
                            }
                            let sum: f64 = d.iter().sum();
                            if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
                                return Err(CptError::Structure(format!("leaf {id} distribution sums to {sum}")));
                            }
                        }
                        (LeafValue::Mean(m), Task::Regression) => {
                            if !m.is_finite() {
                                return Err(CptError::Structure(format!("leaf {id} mean is not finite")));
                            }
                        }
                        _ => return Err(CptError::Structure(format!("leaf {id} value does not match the task"))),
                    }
                }
            }
        }
        if parents[0] != 0 {
            return Err(CptError::Structure("root has a parent".into()));
        }
        if let Some(id) = (1..self.nodes.len()).find(|&i| parents[i] != 1) {
            return Err(CptError::Structure(format!(
                "node {id} has {} parents, expected exactly one",
                parents[id]
            )));
        }
        self.leaves = leaves;
        self.branches = branches;
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn class_count(&self) -> Option<usize> {
        match self.task {
            Task::Classification { classes } => Some(classes),
            Task::Regression => None,
        }
    }

    /// Number of raw features `d` (inputs carry `d + 1` coordinates).
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim + 1
    }

    /// Leaf ids in arena order. Probability vectors returned by this module
    /// are aligned with this list.
    pub fn leaf_ids(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn branch_ids(&self) -> &[NodeId] {
        &self.branches
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn branch(&self, id: NodeId) -> Option<&Branch> {
        match &self.nodes[id] {
            Node::Branch(b) => Some(b),
            Node::Leaf(_) => None,
        }
    }

    /// Parameter edits through this handle must keep the node valid.
    pub(crate) fn branch_mut(&mut self, id: NodeId) -> Option<&mut Branch> {
        match &mut self.nodes[id] {
            Node::Branch(b) => Some(b),
            Node::Leaf(_) => None,
        }
    }

    pub fn leaf(&self, id: NodeId) -> Option<&Leaf> {
        match &self.nodes[id] {
            Node::Leaf(l) => Some(l),
            Node::Branch(_) => None,
        }
    }

    /// Replaces a leaf's parameters, validating them against the task.
    pub fn set_leaf(&mut self, id: NodeId, leaf: Leaf) -> Result<()> {
        match self.nodes.get_mut(id) {
            Some(Node::Leaf(l)) => {
                let previous = std::mem::replace(l, leaf);
                if let Err(e) = self.validate() {
                    self.nodes[id] = Node::Leaf(previous);
                    return Err(e);
                }
                Ok(())
            }
            _ => Err(CptError::Structure(format!("node {id} is not a leaf"))),
        }
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (id, node) in self.nodes.iter().enumerate() {
            if let Node::Branch(b) = node {
                for &c in &b.children {
                    depth[c] = depth[id] + 1;
                    max = max.max(depth[c]);
                }
            }
        }
        max
    }

    /// Effective expert count for each branch, aligned with `branch_ids`.
    pub fn effective_experts_per_node(&self) -> Vec<usize> {
        self.branches
            .iter()
            .map(|&id| self.branch(id).map_or(0, Branch::effective_experts))
            .collect()
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(CptError::Dimension {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Fills `reach[id]` with the probability of arriving at each node and
    /// `logit[id]` with each branch's annealed logit (0 for leaves).
    pub(crate) fn propagate(&self, x: &[f64], lambda: f64, reach: &mut [f64], logit: &mut [f64]) {
        reach[0] = 1.0;
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Branch(b) => {
                    let a = b.annealed_logit_unchecked(x, lambda);
                    logit[id] = a;
                    reach[b.children[1]] = reach[id] * sigmoid(a);
                    reach[b.children[0]] = reach[id] * sigmoid(-a);
                }
                Node::Leaf(_) => logit[id] = 0.0,
            }
        }
    }

    /// `P(ℓ | x)` for every leaf, aligned with `leaf_ids`.
    pub fn leaf_arrival_probabilities(&self, x: &[f64], lambda: f64) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(CptError::InvalidArgument(format!(
                "annealing lambda must be positive, got {lambda}"
            )));
        }
        let mut reach = vec![0.0; self.nodes.len()];
        let mut logit = vec![0.0; self.nodes.len()];
        self.propagate(x, lambda, &mut reach, &mut logit);
        Ok(self.leaves.iter().map(|&l| reach[l]).collect())
    }

    #[inline]
    pub(crate) fn route_unchecked(&self, x: &[f64]) -> NodeId {
        let mut id = 0;
        while let Node::Branch(b) = &self.nodes[id] {
            id = b.children[b.goes_high_unchecked(x) as usize];
        }
        id
    }

    /// Leaf reached by thresholding every split at 0.5.
    pub fn route_deterministic(&self, x: &[f64]) -> Result<NodeId> {
        self.check_input(x)?;
        Ok(self.route_unchecked(x))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let leaf = self.route_deterministic(x)?;
        self.leaf_prediction(leaf)
    }

    pub(crate) fn leaf_prediction(&self, leaf: NodeId) -> Result<Prediction> {
        match &self.nodes[leaf] {
            Node::Leaf(Leaf {
                value: LeafValue::Distribution(d),
                ..
            }) => Ok(Prediction::Class {
                class: argmax(d),
                scores: d.clone(),
            }),
            Node::Leaf(Leaf {
                value: LeafValue::Mean(m),
                ..
            }) => Ok(Prediction::Value(*m)),
            Node::Leaf(_) => Err(CptError::State(format!("leaf {leaf} has not been finalized"))),
            Node::Branch(_) => Err(CptError::State(format!("node {leaf} is not a leaf"))),
        }
    }

    /// Parameters per branch: `(d + 1)·K` expert coefficients, then `K`
    /// log-weights, then `logit_p0`.
    pub fn parameter_count(&self) -> usize {
        self.branches
            .iter()
            .map(|&id| {
                let b = self.branch(id).expect("cached branch id");
                b.experts.len() * (self.input_dim() + 1) + 1
            })
            .sum()
    }

    /// Offset of each branch's parameter block, aligned with `branch_ids`.
    pub fn parameter_offsets(&self) -> Vec<usize> {
        let mut offset = 0;
        self.branches
            .iter()
            .map(|&id| {
                let start = offset;
                let b = self.branch(id).expect("cached branch id");
                offset += b.experts.len() * (self.input_dim() + 1) + 1;
                start
            })
            .collect()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for &id in &self.branches {
            let b = self.branch(id).expect("cached branch id");
            for e in &b.experts {
                out.extend_from_slice(&e.beta);
            }
            out.extend(b.experts.iter().map(|e| e.log_r));
            out.push(b.logit_p0);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.parameter_count();
        if params.len() != expected {
            return Err(CptError::Dimension {
                expected,
                found: params.len(),
            });
        }
        let mut pos = 0;
        for &id in &self.branches {
            let Node::Branch(b) = &mut self.nodes[id] else {
                unreachable!("cached branch id")
            };
            for e in &mut b.experts {
                let n = e.beta.len();
                e.beta.copy_from_slice(&params[pos..pos + n]);
                pos += n;
            }
            for e in &mut b.experts {
                e.log_r = params[pos];
                pos += 1;
            }
            b.logit_p0 = params[pos];
            pos += 1;
        }
        Ok(())
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) },
        )
        .0
}
