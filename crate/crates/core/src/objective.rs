//! Soft-routing training objectives and their exact gradients.
//!
//! Classification minimizes the estimated conditional entropy of the label
//! given the leaf, `Ĥ(Y|L) = Σ_ℓ p̂(ℓ) H(π̂^ℓ)`; regression minimizes the
//! probability-weighted within-leaf squared error. Both are functions of the
//! batch's leaf-arrival matrix `P[n][ℓ]`. The shrinkage penalty is the
//! negative log density of a K-atom truncated gamma process on the expert
//! weights plus a Student-t style sparsity term on the coefficients.
//!
//! Gradients are reverse-mode. For each sample, with `G_ℓ = ∂L/∂P[n][ℓ]`,
//! a bottom-up pass computes `B_u = Σ_{ℓ under u} G_ℓ P[n][ℓ] / reach_u`
//! (`B_leaf = G_leaf`, `B_v = q_v B_{yes} + (1 - q_v) B_{no}`) so that
//! `∂L/∂a_v = reach_v (B_{yes} - B_{no}) q_v (1 - q_v)` for the annealed
//! logit `a_v`, with no division by small probabilities.

use crate::data::{Dataset, Labels};
use crate::error::{CptError, Result};
use crate::exec::Execution;
use crate::numeric::{dot, sigmoid, softplus};
use crate::tree::{Node, Task, TreeModel};

/// Additive smoothing on leaf class counts and leaf masses.
pub const SMOOTHING: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    /// Gamma-process mass `γ0`.
    pub gamma0: f64,
    /// Gamma-process rate `c0`.
    pub c0: f64,
    /// Inverse-gamma shape on coefficient scales.
    pub a_beta: f64,
    /// Fixed inverse-gamma scale constant.
    pub b_beta: f64,
    /// Multiplier on the whole penalty. `None` stands for `1/N`, which the
    /// trainer resolves against the training-set size; the functions here
    /// apply unit weight to an unresolved prior.
    pub reg_weight: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            gamma0: 1.0,
            c0: 1.0,
            a_beta: 1.0,
            b_beta: 1.0,
            reg_weight: None,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma0", self.gamma0),
            ("c0", self.c0),
            ("a_beta", self.a_beta),
            ("b_beta", self.b_beta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CptError::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(w) = self.reg_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(CptError::InvalidArgument(format!(
                    "reg_weight must be non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_reg_weight(self, reg_weight: f64) -> Self {
        Self {
            reg_weight: Some(reg_weight),
            ..self
        }
    }

    /// Fills in the `1/N` default for `n` training rows.
    pub fn resolved(self, n: usize) -> Self {
        Self {
            reg_weight: Some(self.reg_weight.unwrap_or(1.0 / n as f64)),
            ..self
        }
    }

    pub fn weight(&self) -> f64 {
        self.reg_weight.unwrap_or(1.0)
    }

    /// Mean of one truncated atom weight, `γ0 / (K c0)`.
    pub fn atom_mean(&self, k: usize) -> f64 {
        self.gamma0 / (k as f64 * self.c0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchObjective {
    pub value: f64,
    /// Aligned with [`TreeModel::parameters`].
    pub gradient: Vec<f64>,
}

fn check_batch(tree: &TreeModel, batch: &Dataset) -> Result<()> {
    if batch.is_empty() {
        return Err(CptError::EmptyDataset);
    }
    if batch.feature_dim() != tree.feature_dim() {
        return Err(CptError::Dimension {
            expected: tree.feature_dim(),
            found: batch.feature_dim(),
        });
    }
    match (tree.task(), batch.labels()) {
        (Task::Classification { classes }, Labels::Classes { values, .. }) => {
            if let Some(&bad) = values.iter().find(|&&v| v >= classes) {
                return Err(CptError::LabelOutOfRange { label: bad, classes });
            }
            Ok(())
        }
        (Task::Regression, Labels::Targets(_)) => Ok(()),
        _ => Err(CptError::InvalidArgument(
            "batch labels do not match the tree's task".into(),
        )),
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CptError::InvalidArgument(format!(
            "annealing lambda must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// Per-sample forward state: node reach probabilities and branch logits,
/// both `m × nodes` row-major.
struct Trace {
    nodes: usize,
    reach: Vec<f64>,
    logit: Vec<f64>,
}

impl Trace {
    fn compute(tree: &TreeModel, batch: &Dataset, lambda: f64, exec: Execution) -> Self {
        let nodes = tree.nodes().len();
        let parts = exec.map_chunks(batch.len(), |range| {
            let mut reach = vec![0.0; range.len() * nodes];
            let mut logit = vec![0.0; range.len() * nodes];
            for (k, n) in range.enumerate() {
                let span = k * nodes..(k + 1) * nodes;
                tree.propagate(batch.row(n), lambda, &mut reach[span.clone()], &mut logit[span]);
            }
            (reach, logit)
        });
        let mut reach = Vec::with_capacity(batch.len() * nodes);
        let mut logit = Vec::with_capacity(batch.len() * nodes);
        for (r, l) in parts {
            reach.extend(r);
            logit.extend(l);
        }
        Self { nodes, reach, logit }
    }

    fn reach(&self, n: usize) -> &[f64] {
        &self.reach[n * self.nodes..(n + 1) * self.nodes]
    }

    fn logit(&self, n: usize) -> &[f64] {
        &self.logit[n * self.nodes..(n + 1) * self.nodes]
    }
}

/// Leaf arrival probabilities for every batch row, `m × leaves` row-major
/// with columns aligned to [`TreeModel::leaf_ids`].
pub fn leaf_probability_matrix(tree: &TreeModel, batch: &Dataset, lambda: f64) -> Result<Vec<f64>> {
    check_batch(tree, batch)?;
    check_lambda(lambda)?;
    let trace = Trace::compute(tree, batch, lambda, Execution::default());
    Ok(leaf_columns(tree, &trace, batch.len()))
}

fn leaf_columns(tree: &TreeModel, trace: &Trace, m: usize) -> Vec<f64> {
    let leaves = tree.leaf_ids();
    let mut out = Vec::with_capacity(m * leaves.len());
    for n in 0..m {
        let reach = trace.reach(n);
        out.extend(leaves.iter().map(|&l| reach[l]));
    }
    out
}

/// Leaf masses `M_ℓ = Σ_n P(ℓ | x_n)` and, for classification, the
/// label-weighted masses `A_ℓj = Σ_n 1[y_n = j] P(ℓ | x_n)`.
struct LeafStats {
    mass: Vec<f64>,
    class_mass: Vec<Vec<f64>>,
}

impl LeafStats {
    fn compute(probs: &[f64], leaves: usize, labels: &Labels, classes: usize) -> Self {
        let mut mass = vec![0.0; leaves];
        let mut class_mass = vec![vec![0.0; classes]; leaves];
        for (n, row) in probs.chunks_exact(leaves).enumerate() {
            for (l, &p) in row.iter().enumerate() {
                mass[l] += p;
                if let (Labels::Classes { values, .. }, true) = (labels, classes > 0) {
                    class_mass[l][values[n]] += p;
                }
            }
        }
        Self { mass, class_mass }
    }

    /// Smoothed `π̂^ℓ`.
    fn distribution(&self, l: usize) -> Vec<f64> {
        let classes = self.class_mass[l].len();
        let denom = self.mass[l] + classes as f64 * SMOOTHING;
        self.class_mass[l].iter().map(|a| (a + SMOOTHING) / denom).collect()
    }

    fn means(&self, probs: &[f64], targets: &[f64]) -> Vec<f64> {
        let leaves = self.mass.len();
        let mut weighted = vec![0.0; leaves];
        for (row, y) in probs.chunks_exact(leaves).zip(targets) {
            for (w, p) in weighted.iter_mut().zip(row) {
                *w += p * y;
            }
        }
        weighted
            .iter()
            .zip(&self.mass)
            .map(|(s, m)| s / (m + SMOOTHING))
            .collect()
    }
}

fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Total arrival mass per leaf; dividing by the batch size gives `p̂(ℓ)`.
pub fn leaf_mass(tree: &TreeModel, batch: &Dataset, lambda: f64) -> Result<Vec<f64>> {
    let probs = leaf_probability_matrix(tree, batch, lambda)?;
    Ok(LeafStats::compute(&probs, tree.leaf_count(), batch.labels(), 0).mass)
}

/// Smoothed label distribution at each leaf under soft routing.
pub fn leaf_class_distribution(tree: &TreeModel, batch: &Dataset, lambda: f64) -> Result<Vec<Vec<f64>>> {
    let classes = classes_of(tree)?;
    let probs = leaf_probability_matrix(tree, batch, lambda)?;
    let stats = LeafStats::compute(&probs, tree.leaf_count(), batch.labels(), classes);
    Ok((0..tree.leaf_count()).map(|l| stats.distribution(l)).collect())
}

fn classes_of(tree: &TreeModel) -> Result<usize> {
    tree.class_count()
        .ok_or_else(|| CptError::InvalidArgument("operation requires a classification tree".into()))
}

fn entropy_value(stats: &LeafStats, m: usize) -> f64 {
    (0..stats.mass.len())
        .map(|l| stats.mass[l] * entropy(&stats.distribution(l)))
        .sum::<f64>()
        / m as f64
}

/// `Ĥ(Y | L)` in nats.
pub fn conditional_entropy(tree: &TreeModel, batch: &Dataset, lambda: f64) -> Result<f64> {
    let classes = classes_of(tree)?;
    let probs = leaf_probability_matrix(tree, batch, lambda)?;
    let stats = LeafStats::compute(&probs, tree.leaf_count(), batch.labels(), classes);
    Ok(entropy_value(&stats, batch.len()))
}

fn regression_value(probs: &[f64], targets: &[f64], means: &[f64]) -> f64 {
    let leaves = means.len();
    probs
        .chunks_exact(leaves)
        .zip(targets)
        .map(|(row, y)| row.iter().zip(means).map(|(p, mu)| p * (y - mu).powi(2)).sum::<f64>())
        .sum()
}

/// `Σ_ℓ Σ_n P(ℓ | x_n) (y_n - μ̂^ℓ)²`.
pub fn regression_objective(tree: &TreeModel, batch: &Dataset, lambda: f64) -> Result<f64> {
    let Labels::Targets(targets) = batch.labels() else {
        return Err(CptError::InvalidArgument(
            "regression objective needs real targets".into(),
        ));
    };
    if tree.task() != Task::Regression {
        return Err(CptError::InvalidArgument("operation requires a regression tree".into()));
    }
    let probs = leaf_probability_matrix(tree, batch, lambda)?;
    let stats = LeafStats::compute(&probs, tree.leaf_count(), batch.labels(), 0);
    Ok(regression_value(&probs, targets, &stats.means(&probs, targets)))
}

/// Unweighted penalty of one branch's experts.
fn branch_penalty(experts: &[crate::tree::Expert], prior: &PriorConfig) -> f64 {
    let k = experts.len() as f64;
    let shape = prior.gamma0 / k - 1.0;
    let coef = prior.a_beta + 0.5;
    experts
        .iter()
        .map(|e| {
            let weight = -shape * e.log_r + prior.c0 * e.log_r.exp();
            let sparsity: f64 = e.beta.iter().map(|b| (b * b / (2.0 * prior.b_beta)).ln_1p()).sum();
            weight + coef * sparsity
        })
        .sum()
}

/// Gamma-process and coefficient-sparsity penalty summed over branches,
/// times `reg_weight`.
pub fn prior_penalty(tree: &TreeModel, prior: &PriorConfig) -> f64 {
    let total: f64 = tree
        .branch_ids()
        .iter()
        .filter_map(|&id| tree.branch(id))
        .map(|b| branch_penalty(&b.experts, prior))
        .sum();
    prior.weight() * total
}

fn add_prior_gradient(tree: &TreeModel, prior: &PriorConfig, grad: &mut [f64]) {
    let w = prior.weight();
    if w == 0.0 {
        return;
    }
    let dim = tree.input_dim();
    let coef = prior.a_beta + 0.5;
    for (&id, off) in tree.branch_ids().iter().zip(tree.parameter_offsets()) {
        let b = tree.branch(id).expect("branch id");
        let k = b.experts.len();
        let shape = prior.gamma0 / k as f64 - 1.0;
        for (i, e) in b.experts.iter().enumerate() {
            for (j, beta) in e.beta.iter().enumerate() {
                grad[off + i * dim + j] += w * coef * beta / (prior.b_beta + beta * beta / 2.0);
            }
            grad[off + k * dim + i] += w * (-shape + prior.c0 * e.log_r.exp());
        }
    }
}

/// Node-indexed lookup tables for the backward pass.
struct Layout {
    /// Position in `leaf_ids` for leaves.
    leaf_index: Vec<usize>,
    /// Parameter offset for branches.
    offset: Vec<usize>,
}

impl Layout {
    fn new(tree: &TreeModel) -> Self {
        let n = tree.nodes().len();
        let mut leaf_index = vec![usize::MAX; n];
        for (i, &l) in tree.leaf_ids().iter().enumerate() {
            leaf_index[l] = i;
        }
        let mut offset = vec![usize::MAX; n];
        for (&b, o) in tree.branch_ids().iter().zip(tree.parameter_offsets()) {
            offset[b] = o;
        }
        Self { leaf_index, offset }
    }
}

/// Accumulates one sample's contribution to the gradient given
/// `leaf_grad(ℓ) = ∂L/∂P(ℓ | x)`.
#[allow(clippy::too_many_arguments)]
fn backprop_sample(
    tree: &TreeModel,
    layout: &Layout,
    x: &[f64],
    lambda: f64,
    reach: &[f64],
    logit: &[f64],
    leaf_grad: impl Fn(usize) -> f64,
    down: &mut [f64],
    grad: &mut [f64],
) {
    let dim = x.len();
    for id in (0..tree.nodes().len()).rev() {
        match tree.node(id) {
            Node::Leaf(_) => down[id] = leaf_grad(layout.leaf_index[id]),
            Node::Branch(b) => {
                let [no, yes] = b.children;
                let a = logit[id];
                let (q1, q0) = (sigmoid(a), sigmoid(-a));
                down[id] = q1 * down[yes] + q0 * down[no];
                let d_logit = reach[id] * (down[yes] - down[no]) * q1 * q0;
                if d_logit == 0.0 {
                    continue;
                }
                let d_g = lambda * d_logit;
                let k = b.experts.len();
                let off = layout.offset[id];
                grad[off + k * dim + k] -= d_g * b.p0();
                for (i, e) in b.experts.iter().enumerate() {
                    let z = dot(&e.beta, x);
                    let r = e.log_r.exp();
                    let c = d_g * r * sigmoid(z);
                    for (gj, xj) in grad[off + i * dim..off + (i + 1) * dim].iter_mut().zip(x) {
                        *gj += c * xj;
                    }
                    grad[off + k * dim + i] += d_g * r * softplus(z);
                }
            }
        }
    }
}

fn data_gradient(
    tree: &TreeModel,
    batch: &Dataset,
    trace: &Trace,
    lambda: f64,
    exec: Execution,
    leaf_grad: impl Fn(usize, usize) -> f64 + Sync + Send,
) -> Vec<f64> {
    let layout = Layout::new(tree);
    let params = tree.parameter_count();
    let partials = exec.map_chunks(batch.len(), |range| {
        let mut grad = vec![0.0; params];
        let mut down = vec![0.0; tree.nodes().len()];
        for n in range {
            backprop_sample(
                tree,
                &layout,
                batch.row(n),
                lambda,
                trace.reach(n),
                trace.logit(n),
                |l| leaf_grad(n, l),
                &mut down,
                &mut grad,
            );
        }
        grad
    });
    let mut grad = vec![0.0; params];
    for part in partials {
        for (g, p) in grad.iter_mut().zip(part) {
            *g += p;
        }
    }
    grad
}

/// Data objective plus `reg_weight ·` penalty, with the exact gradient with
/// respect to every expert coefficient, log-weight and `logit_p0`.
pub fn total_loss_and_gradient(
    tree: &TreeModel,
    batch: &Dataset,
    lambda: f64,
    prior: &PriorConfig,
) -> Result<BatchObjective> {
    total_loss_and_gradient_with(tree, batch, lambda, prior, Execution::default())
}

pub fn total_loss_and_gradient_with(
    tree: &TreeModel,
    batch: &Dataset,
    lambda: f64,
    prior: &PriorConfig,
    exec: Execution,
) -> Result<BatchObjective> {
    check_batch(tree, batch)?;
    check_lambda(lambda)?;
    let m = batch.len();
    let leaves = tree.leaf_count();
    let trace = Trace::compute(tree, batch, lambda, exec);
    let probs = leaf_columns(tree, &trace, m);

    let (data_value, mut gradient) = match batch.labels() {
        Labels::Classes { values, .. } => {
            let classes = classes_of(tree)?;
            let stats = LeafStats::compute(&probs, leaves, batch.labels(), classes);
            let dists: Vec<Vec<f64>> = (0..leaves).map(|l| stats.distribution(l)).collect();
            let h: Vec<f64> = dists.iter().map(|d| entropy(d)).collect();
            let log_pi: Vec<Vec<f64>> = dists.iter().map(|d| d.iter().map(|p| p.ln()).collect()).collect();
            let share: Vec<f64> = (0..leaves)
                .map(|l| stats.mass[l] / (stats.mass[l] + classes as f64 * SMOOTHING))
                .collect();
            let inv_m = 1.0 / m as f64;
            let value = entropy_value(&stats, m);
            let grad = data_gradient(tree, batch, &trace, lambda, exec, |n, l| {
                inv_m * (h[l] - share[l] * (log_pi[l][values[n]] + h[l]))
            });
            (value, grad)
        }
        Labels::Targets(targets) => {
            let stats = LeafStats::compute(&probs, leaves, batch.labels(), 0);
            let means = stats.means(&probs, targets);
            let value = regression_value(&probs, targets, &means);
            let grad = data_gradient(tree, batch, &trace, lambda, exec, |n, l| {
                let resid = targets[n] - means[l];
                resid * resid - 2.0 * means[l] * SMOOTHING * resid / (stats.mass[l] + SMOOTHING)
            });
            (value, grad)
        }
    };
    add_prior_gradient(tree, prior, &mut gradient);
    let value = data_value + prior_penalty(tree, prior);

    if !value.is_finite() {
        return Err(CptError::Numeric {
            node: 0,
            what: format!("objective evaluated to {value}"),
        });
    }
    if let Some(pos) = gradient.iter().position(|g| !g.is_finite()) {
        let offsets = tree.parameter_offsets();
        let slot = offsets.iter().rposition(|&o| o <= pos).unwrap_or(0);
        return Err(CptError::Numeric {
            node: tree.branch_ids()[slot],
            what: format!("non-finite gradient at parameter {pos}"),
        });
    }
    Ok(BatchObjective { value, gradient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::logit;
    use crate::tree::Expert;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn neutral_stump(task: Task) -> TreeModel {
        TreeModel::stump(task, 1, vec![Expert::new(vec![0.0, 0.0], 0.0)], 0.0).unwrap()
    }

    fn classes(rows: &[f64], labels: &[usize], count: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = rows.iter().map(|&x| vec![x]).collect();
        Dataset::from_rows(
            &rows,
            Labels::Classes {
                values: labels.to_vec(),
                count,
            },
        )
        .unwrap()
    }

    fn targets(rows: &[f64], y: &[f64]) -> Dataset {
        let rows: Vec<Vec<f64>> = rows.iter().map(|&x| vec![x]).collect();
        Dataset::from_rows(&rows, Labels::Targets(y.to_vec())).unwrap()
    }

    fn random_tree(rng: &mut ChaCha8Rng, depth: usize, k: usize, d: usize, task: Task) -> TreeModel {
        crate::tree::tests::random_tree(rng, depth, k, d, task)
    }

    fn random_batch(rng: &mut ChaCha8Rng, m: usize, d: usize, task: Task) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let labels = match task {
            Task::Classification { classes } => Labels::Classes {
                values: (0..m).map(|_| rng.random_range(0..classes)).collect(),
                count: classes,
            },
            Task::Regression => Labels::Targets((0..m).map(|_| rng.random_range(-2.0..2.0)).collect()),
        };
        Dataset::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn masses_of_trivial_trees() {
        let leaf = TreeModel::single_leaf(Task::Classification { classes: 2 }, 1);
        let batch = classes(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[0, 1, 0, 1, 0, 1, 0], 2);
        assert_eq!(leaf_mass(&leaf, &batch, 1.0).unwrap(), vec![7.0]);

        let stump = neutral_stump(Task::Classification { classes: 2 });
        let batch = classes(&[0.0; 10], &[0; 10], 2);
        let m = leaf_mass(&stump, &batch, 2.0).unwrap();
        assert!((m[0] - 5.0).abs() < 1e-12 && (m[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn masses_are_column_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let tree = random_tree(&mut rng, 2, 3, 2, Task::Regression);
            let batch = random_batch(&mut rng, 4, 2, Task::Regression);
            let masses = leaf_mass(&tree, &batch, 1.5).unwrap();
            let mut oracle = vec![0.0; tree.leaf_count()];
            for row in batch.rows() {
                for (o, p) in oracle
                    .iter_mut()
                    .zip(tree.leaf_arrival_probabilities(row, 1.5).unwrap())
                {
                    *o += p;
                }
            }
            for (a, b) in masses.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((masses.iter().sum::<f64>() - 4.0).abs() < 1e-8);
        }
    }

    #[test]
    fn class_distribution_examples() {
        let leaf = TreeModel::single_leaf(Task::Classification { classes: 2 }, 1);
        let batch = classes(&[0.0, 1.0, 2.0, 3.0], &[0, 0, 1, 1], 2);
        let d = leaf_class_distribution(&leaf, &batch, 1.0).unwrap();
        assert!((d[0][0] - 0.5).abs() < 1e-12);
        assert!((conditional_entropy(&leaf, &batch, 1.0).unwrap() - LN2).abs() < 1e-9);
    }

    /// Dense evaluation straight from the definitions: `p̂`, `π̂`, `Ĥ`.
    fn entropy_oracle(tree: &TreeModel, batch: &Dataset, lambda: f64, classes: usize) -> (Vec<Vec<f64>>, f64) {
        let Labels::Classes { values, .. } = batch.labels() else {
            unreachable!()
        };
        let rows: Vec<Vec<f64>> = batch
            .rows()
            .map(|r| tree.leaf_arrival_probabilities(r, lambda).unwrap())
            .collect();
        let n = batch.len() as f64;
        let mut dists = Vec::new();
        let mut h_total = 0.0;
        for l in 0..tree.leaf_count() {
            let mass: f64 = rows.iter().map(|r| r[l]).sum();
            let pi: Vec<f64> = (0..classes)
                .map(|j| {
                    let a: f64 = rows
                        .iter()
                        .zip(values)
                        .filter(|(_, &y)| y == j)
                        .map(|(r, _)| r[l])
                        .sum();
                    (a + SMOOTHING) / (mass + classes as f64 * SMOOTHING)
                })
                .collect();
            let h: f64 = -pi.iter().map(|p| p * p.ln()).sum::<f64>();
            h_total += mass / n * h;
            dists.push(pi);
        }
        (dists, h_total)
    }

    #[test]
    fn entropy_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let task = Task::Classification { classes: 3 };
            let tree = random_tree(&mut rng, 2, 3, 2, task);
            let batch = random_batch(&mut rng, 20, 2, task);
            let (dists, h) = entropy_oracle(&tree, &batch, 2.0, 3);
            let got = leaf_class_distribution(&tree, &batch, 2.0).unwrap();
            for (a, b) in got.iter().flatten().zip(dists.iter().flatten()) {
                assert!((a - b).abs() < 1e-12);
            }
            for d in &got {
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let value = conditional_entropy(&tree, &batch, 2.0).unwrap();
            assert!((value - h).abs() < 1e-12);
            assert!(value >= 0.0 && value <= 3f64.ln() + 1e-9);
        }
    }

    #[test]
    fn four_point_chain() {
        // Stump on x with one sharp expert; compute every step by hand.
        let tree = TreeModel::stump(
            Task::Classification { classes: 2 },
            1,
            vec![Expert::new(vec![2.0, -0.5], 0.3)],
            logit(0.4),
        )
        .unwrap();
        let xs = [-1.0, -0.2, 0.4, 1.3];
        let ys = [0, 0, 1, 1];
        let batch = classes(&xs, &ys, 2);
        let lambda = 1.7;
        let q: Vec<f64> = xs
            .iter()
            .map(|x| {
                let g = 0.3f64.exp() * (1.0 + (2.0 * x - 0.5f64).exp()).ln();
                let f = 1.0 - (-g).exp();
                1.0 / (1.0 + ((1.0 - f) / 0.6).powf(lambda))
            })
            .collect();
        let masses = [q.iter().map(|v| 1.0 - v).sum::<f64>(), q.iter().sum::<f64>()];
        let class_mass = [
            [(1.0 - q[0]) + (1.0 - q[1]), (1.0 - q[2]) + (1.0 - q[3])],
            [q[0] + q[1], q[2] + q[3]],
        ];
        let mut h = 0.0;
        for l in 0..2 {
            let pi: Vec<f64> = (0..2)
                .map(|j| (class_mass[l][j] + SMOOTHING) / (masses[l] + 2.0 * SMOOTHING))
                .collect();
            h += masses[l] / 4.0 * -(pi[0] * pi[0].ln() + pi[1] * pi[1].ln());
        }
        assert!((conditional_entropy(&tree, &batch, lambda).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn pure_hard_split_has_near_zero_entropy() {
        let tree = TreeModel::stump(
            Task::Classification { classes: 2 },
            1,
            vec![Expert::new(vec![40.0, 0.0], 0.0)],
            0.0,
        )
        .unwrap();
        let batch = classes(&[-1.0, -0.8, 0.9, 1.2], &[0, 0, 1, 1], 2);
        let h = conditional_entropy(&tree, &batch, 64.0).unwrap();
        let bound = 2.0 * 2.0 * SMOOTHING * (1.0 / SMOOTHING).ln();
        assert!(h <= bound, "{h}");
    }

    #[test]
    fn soft_arrival_distribution() {
        // Arrival probabilities 0.8 (class 0) and 0.2 (class 1) on the yes
        // leaf: pick β so that f_λ = 0.8 at x=0 and 0.2 at x=1.
        let rows = [0.0, 1.0];
        let batch = classes(&rows, &[0, 1], 2);
        // logit a = λ(g + ln(1-p0)); use λ=1, logit_p0 = 2, a single unit
        // expert with β = (s, c): g = softplus(s x + c).
        let target = |p: f64| logit(p) + softplus(2.0); // g giving f_λ = p
        let g0 = target(0.8);
        let g1 = target(0.2);
        let inv_softplus = |g: f64| g.exp_m1().ln();
        let c = inv_softplus(g0);
        let s = inv_softplus(g1) - c;
        let tree = TreeModel::stump(
            Task::Classification { classes: 2 },
            1,
            vec![Expert::new(vec![s, c], 0.0)],
            2.0,
        )
        .unwrap();
        let d = leaf_class_distribution(&tree, &batch, 1.0).unwrap();
        assert!((d[1][0] - 0.8).abs() < 1e-7, "{:?}", d);
        assert!((d[1][1] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn regression_examples() {
        let leaf = TreeModel::single_leaf(Task::Regression, 1);
        let batch = targets(&[0.0, 1.0], &[1.0, 3.0]);
        assert!((regression_objective(&leaf, &batch, 1.0).unwrap() - 2.0).abs() < 1e-7);
        let stump = neutral_stump(Task::Regression);
        assert!((regression_objective(&stump, &batch, 3.0).unwrap() - 2.0).abs() < 1e-7);
    }

    #[test]
    fn regression_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let tree = random_tree(&mut rng, 3, 2, 2, Task::Regression);
            let batch = random_batch(&mut rng, 10, 2, Task::Regression);
            let Labels::Targets(y) = batch.labels() else {
                unreachable!()
            };
            let rows: Vec<Vec<f64>> = batch
                .rows()
                .map(|r| tree.leaf_arrival_probabilities(r, 1.2).unwrap())
                .collect();
            let mut total = 0.0;
            for l in 0..tree.leaf_count() {
                let mass: f64 = rows.iter().map(|r| r[l]).sum();
                let mu = rows.iter().zip(y).map(|(r, y)| r[l] * y).sum::<f64>() / (mass + SMOOTHING);
                total += rows.iter().zip(y).map(|(r, y)| r[l] * (y - mu).powi(2)).sum::<f64>();
            }
            assert!((regression_objective(&tree, &batch, 1.2).unwrap() - total).abs() < 1e-10);
        }
    }

    #[test]
    fn one_leaf_objectives_are_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let batch = random_batch(&mut rng, 15, 2, Task::Regression);
        let Labels::Targets(y) = batch.labels() else {
            unreachable!()
        };
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let sse: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let leaf = TreeModel::single_leaf(Task::Regression, 2);
        assert!((regression_objective(&leaf, &batch, 1.0).unwrap() - sse).abs() < 1e-9);

        let batch = random_batch(&mut rng, 30, 2, Task::Classification { classes: 3 });
        let Labels::Classes { values, .. } = batch.labels() else {
            unreachable!()
        };
        let mut counts = [0.0; 3];
        values.iter().for_each(|&v| counts[v] += 1.0);
        let h: f64 = -counts
            .iter()
            .map(|c| c / 30.0)
            .filter(|p| *p > 0.0)
            .map(|p| p * f64::ln(p))
            .sum::<f64>();
        let leaf = TreeModel::single_leaf(Task::Classification { classes: 3 }, 2);
        assert!((conditional_entropy(&leaf, &batch, 1.0).unwrap() - h).abs() < 1e-6);
    }

    #[test]
    fn penalty_examples() {
        // γ0 = K, c0 = 1, r = 1, β = 0 → K.
        let k = 4;
        let experts: Vec<Expert> = (0..k).map(|_| Expert::new(vec![0.0, 0.0], 0.0)).collect();
        let tree = TreeModel::stump(Task::Regression, 1, experts, 0.0).unwrap();
        let prior = PriorConfig {
            gamma0: k as f64,
            c0: 1.0,
            a_beta: 1.0,
            b_beta: 1.0,
            reg_weight: Some(1.0),
        };
        assert!((prior_penalty(&tree, &prior) - k as f64).abs() < 1e-12);
        assert!((prior_penalty(&tree, &prior.with_reg_weight(0.5)) - k as f64 / 2.0).abs() < 1e-12);

        // K = 2, γ0 = 1, c0 = 2, r = (0.5, 2), one coefficient equal to 1.
        let experts = vec![
            Expert::with_weight(vec![1.0, 0.0], 0.5),
            Expert::with_weight(vec![0.0, 0.0], 2.0),
        ];
        let tree = TreeModel::stump(Task::Regression, 1, experts, 0.0).unwrap();
        let prior = PriorConfig {
            gamma0: 1.0,
            c0: 2.0,
            a_beta: 1.0,
            b_beta: 1.0,
            reg_weight: Some(1.0),
        };
        let shape = 1.0 / 2.0 - 1.0;
        let expected = (-shape * 0.5f64.ln() + 2.0 * 0.5) + (-shape * 2.0f64.ln() + 2.0 * 2.0) + 1.5 * (1.5f64).ln();
        assert!((prior_penalty(&tree, &prior) - expected).abs() < 1e-12);
    }

    #[test]
    fn penalty_falls_without_bound_as_weights_vanish() {
        // With γ0/K < 1 the gamma density has a pole at zero, so its negative
        // log decreases without bound: vanishing weights are favored.
        let prior = PriorConfig::default();
        let mut last = f64::INFINITY;
        for log_r in [-1.0, -10.0, -100.0, -600.0] {
            let experts = (0..5).map(|_| Expert::new(vec![0.0, 0.0], log_r)).collect();
            let tree = TreeModel::stump(Task::Regression, 1, experts, 0.0).unwrap();
            let p = prior_penalty(&tree, &prior);
            assert!(p < last);
            last = p;
        }
        assert!(last < -2000.0);
    }

    #[test]
    fn penalty_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let tree = random_tree(&mut rng, 1, 5, 3, Task::Regression);
        let mut nodes = tree.nodes().to_vec();
        if let Node::Branch(b) = &mut nodes[0] {
            b.experts.reverse();
            let last = b.experts.len() - 1;
            b.experts.swap(0, 1.min(last));
        }
        let permuted = TreeModel::new(nodes, Task::Regression, 3).unwrap();
        let prior = PriorConfig::default();
        assert!((prior_penalty(&tree, &prior) - prior_penalty(&permuted, &prior)).abs() < 1e-12);
    }

    #[test]
    fn prior_gradient_on_log_weights() {
        let k = 3;
        let experts: Vec<Expert> = (0..k).map(|_| Expert::new(vec![0.0, 0.0], 0.0)).collect();
        let tree = TreeModel::stump(Task::Regression, 1, experts, 0.0).unwrap();
        let prior = PriorConfig {
            gamma0: k as f64,
            ..PriorConfig::default()
        };
        let mut grad = vec![0.0; tree.parameter_count()];
        add_prior_gradient(&tree, &prior, &mut grad);
        assert_eq!(&grad[k * 2..k * 3], &[1.0, 1.0, 1.0]);
        assert!(grad[..k * 2].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn symmetric_stump_has_zero_coefficient_gradient() {
        // All β = 0: both leaves see identical label mixtures.
        let tree = TreeModel::stump(
            Task::Classification { classes: 2 },
            1,
            vec![Expert::new(vec![0.0, 0.0], 0.0), Expert::new(vec![0.0, 0.0], -0.5)],
            0.3,
        )
        .unwrap();
        let batch = classes(&[-1.0, -0.5, 0.5, 1.0, 0.0, 2.0], &[0, 1, 0, 1, 0, 1], 2);
        let prior = PriorConfig::default().with_reg_weight(0.0);
        let obj = total_loss_and_gradient(&tree, &batch, 2.0, &prior).unwrap();
        for g in &obj.gradient[..4] {
            assert!(g.abs() < 1e-12, "{:?}", obj.gradient);
        }
    }

    fn finite_difference_check(tree: &TreeModel, batch: &Dataset, lambda: f64, prior: &PriorConfig) -> f64 {
        let analytic = total_loss_and_gradient(tree, batch, lambda, prior).unwrap().gradient;
        let base = tree.parameters();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = tree.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            probe.set_parameters(&p).unwrap();
            let up = total_loss_and_gradient(&probe, batch, lambda, prior).unwrap().value;
            p[i] -= 2.0 * h;
            probe.set_parameters(&p).unwrap();
            let down = total_loss_and_gradient(&probe, batch, lambda, prior).unwrap().value;
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-3);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for case in 0..12 {
            let d = rng.random_range(1..=4);
            let task = if case % 2 == 0 {
                Task::Classification {
                    classes: rng.random_range(2..=3),
                }
            } else {
                Task::Regression
            };
            let depth = rng.random_range(1..=3);
            let tree = random_tree(&mut rng, depth, 5, d, task);
            let m = rng.random_range(2..=16);
            let batch = random_batch(&mut rng, m, d, task);
            let prior = PriorConfig {
                gamma0: rng.random_range(0.5..3.0),
                c0: rng.random_range(0.5..2.0),
                a_beta: 1.0,
                b_beta: 0.7,
                reg_weight: Some(0.05),
            };
            let err = finite_difference_check(&tree, &batch, rng.random_range(0.5..3.0), &prior);
            assert!(err < 1e-4, "case {case}: relative error {err}");
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let task = Task::Classification { classes: 3 };
        let tree = random_tree(&mut rng, 3, 4, 3, task);
        let batch = random_batch(&mut rng, 1000, 3, task);
        let prior = PriorConfig::default().with_reg_weight(1e-3);
        let a = total_loss_and_gradient_with(&tree, &batch, 2.0, &prior, Execution::Sequential).unwrap();
        let b = total_loss_and_gradient_with(&tree, &batch, 2.0, &prior, Execution::Parallel).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert!(a
            .gradient
            .iter()
            .zip(&b.gradient)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn batch_errors() {
        let tree = neutral_stump(Task::Classification { classes: 2 });
        let prior = PriorConfig::default();
        let wrong_task = targets(&[0.0], &[1.0]);
        assert!(total_loss_and_gradient(&tree, &wrong_task, 1.0, &prior).is_err());
        let out_of_range = classes(&[0.0], &[2], 3);
        assert!(matches!(
            total_loss_and_gradient(&tree, &out_of_range, 1.0, &prior),
            Err(CptError::LabelOutOfRange { .. })
        ));
        let empty = classes(&[], &[], 2);
        assert!(total_loss_and_gradient(&tree, &empty, 1.0, &prior).is_err());
        let ok = classes(&[0.0], &[1], 2);
        assert!(total_loss_and_gradient(&tree, &ok, 0.0, &prior).is_err());
    }
}
