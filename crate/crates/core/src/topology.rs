//! Greedy structure learning: fit a stump at a node, pick the impurity
//! minimizing cut of its split probabilities, partition hard, recurse.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Labels};
use crate::error::{CptError, Result};
use crate::numeric::logit;
use crate::objective::PriorConfig;
use crate::train::{fit_parameters, initial_branch, TrainConfig};
use crate::tree::{Branch, Leaf, Node, Task, TreeModel};

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthConfig {
    pub max_depth: usize,
    /// Nodes with fewer training rows are not split, nor are classification
    /// nodes with fewer rows outside their majority class.
    pub min_samples: usize,
    /// Budget for each node's local stump fit. Stump thresholds are never
    /// learned; `learn_threshold` is ignored here.
    pub stump_train: TrainConfig,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        let stump_train = TrainConfig {
            epochs: TrainConfig::default().epochs / 4,
            ..TrainConfig::default()
        };
        Self {
            max_depth: 3,
            min_samples: 16,
            stump_train,
        }
    }
}

impl GrowthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(CptError::InvalidArgument("max_depth must be at least 1".into()));
        }
        if self.min_samples < 2 {
            return Err(CptError::InvalidArgument("min_samples must be at least 2".into()));
        }
        self.stump_train.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub q_thr: f64,
    /// Rows with probability `≤ q_thr`.
    pub split_index: usize,
    /// Weighted entropy or weighted variance after the split.
    pub score: f64,
}

/// Entropy in nats of a label histogram.
pub(crate) fn count_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Sum of squared deviations from the mean, two-pass.
pub(crate) fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum()
}

/// Entropy-weighted classification score of a cut.
pub(crate) fn entropy_score(left: &[usize], right: &[usize], n: usize) -> f64 {
    let nl: usize = left.iter().sum();
    let nr: usize = right.iter().sum();
    (nl as f64 / n as f64) * count_entropy(left) + (nr as f64 / n as f64) * count_entropy(right)
}

/// Variance-weighted regression score of a cut.
pub(crate) fn variance_score(left: &[f64], right: &[f64]) -> f64 {
    (sse(left) + sse(right)) / (left.len() + right.len()) as f64
}

fn better(score: f64, n0: usize, best: Option<(f64, usize)>, n: usize) -> bool {
    match best {
        None => true,
        Some((s, b)) => {
            let balance = |k: usize| (2 * k).abs_diff(n);
            score < s || (score == s && (balance(n0), n0) < (balance(b), b))
        }
    }
}

/// Exhaustive search over cut positions of the sorted probabilities.
///
/// Only cuts between distinct probabilities are candidates, so that the
/// returned `q_thr` separates the two sides exactly. Ties in score go to the
/// more balanced cut, then to the smaller `split_index`.
pub fn select_threshold(probabilities: &[f64], labels: &Labels) -> Result<ThresholdChoice> {
    let n = probabilities.len();
    if labels.len() != n {
        return Err(CptError::Dimension {
            expected: n,
            found: labels.len(),
        });
    }
    if n < 2 {
        return Err(CptError::DegenerateSplit("need at least two points".into()));
    }
    if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CptError::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| probabilities[a].total_cmp(&probabilities[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| probabilities[i]).collect();
    let cuts: Vec<usize> = (1..n).filter(|&k| sorted[k - 1] < sorted[k]).collect();
    if cuts.is_empty() {
        return Err(CptError::DegenerateSplit("all probabilities are identical".into()));
    }

    let mut best: Option<(f64, usize)> = None;
    match labels {
        Labels::Classes { values, count } => {
            let mut left = vec![0usize; *count];
            let mut right = vec![0usize; *count];
            for &i in &order {
                right[values[i]] += 1;
            }
            let mut next = 0;
            for &k in &cuts {
                while next < k {
                    let y = values[order[next]];
                    left[y] += 1;
                    right[y] -= 1;
                    next += 1;
                }
                let score = entropy_score(&left, &right, n);
                if better(score, k, best, n) {
                    best = Some((score, k));
                }
            }
        }
        Labels::Targets(y) => {
            let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
            // Centered prefix sums locate near-optimal cuts cheaply; those are
            // then rescored two-pass so the reported score is exact.
            let center = ys.iter().sum::<f64>() / n as f64;
            let mut s = vec![0.0; n + 1];
            let mut q = vec![0.0; n + 1];
            for (k, v) in ys.iter().enumerate() {
                let c = v - center;
                s[k + 1] = s[k] + c;
                q[k + 1] = q[k] + c * c;
            }
            let fast = |k: usize| {
                let (nl, nr) = (k as f64, (n - k) as f64);
                let sl = s[k];
                let sr = s[n] - s[k];
                let ql = q[k];
                let qr = q[n] - q[k];
                ((ql - sl * sl / nl) + (qr - sr * sr / nr)).max(0.0) / n as f64
            };
            let approx: Vec<f64> = cuts.iter().map(|&k| fast(k)).collect();
            let floor = approx.iter().cloned().fold(f64::INFINITY, f64::min);
            let slack = 1e-9 * (q[n] / n as f64).max(f64::MIN_POSITIVE) + 1e-300;
            for (&k, &a) in cuts.iter().zip(&approx) {
                if a <= floor + slack {
                    let score = variance_score(&ys[..k], &ys[k..]);
                    if better(score, k, best, n) {
                        best = Some((score, k));
                    }
                }
            }
        }
    }
    let (score, k) = best.expect("at least one cut");
    let (lo, hi) = (sorted[k - 1], sorted[k]);
    let mut q_thr = lo + (hi - lo) / 2.0;
    if q_thr >= hi {
        q_thr = lo;
    }
    Ok(ThresholdChoice {
        q_thr,
        split_index: k,
        score,
    })
}

fn settled(labels: &Labels, min_samples: usize) -> bool {
    match labels {
        Labels::Classes { values, count } => {
            let mut hist = vec![0usize; *count];
            values.iter().for_each(|&v| hist[v] += 1);
            let majority = hist.iter().max().copied().unwrap_or(0);
            values.len() - majority < min_samples
        }
        Labels::Targets(y) => y.windows(2).all(|w| w[0] == w[1]),
    }
}

/// SplitMix64 step, used to derive independent per-node seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the node reached by `path` (1 for the root, `2p + dir` below).
fn node_seed(seed: u64, path: u64) -> u64 {
    mix(mix(seed) ^ path)
}

enum Subtree {
    Leaf,
    Branch(Box<Branch>, Box<Subtree>, Box<Subtree>),
}

impl Subtree {
    fn flatten(self, nodes: &mut Vec<Node>) {
        match self {
            Subtree::Leaf => nodes.push(Node::Leaf(Leaf::unset())),
            Subtree::Branch(mut b, low, high) => {
                let id = nodes.len();
                nodes.push(Node::Leaf(Leaf::unset()));
                b.children[0] = nodes.len();
                low.flatten(nodes);
                b.children[1] = nodes.len();
                high.flatten(nodes);
                nodes[id] = Node::Branch(*b);
            }
        }
    }
}

struct Grower<'a> {
    config: &'a GrowthConfig,
    stump: TrainConfig,
    task: Task,
}

impl Grower<'_> {
    fn grow(&self, data: &Dataset, valid: Option<&Dataset>, depth: usize, path: u64) -> Result<Subtree> {
        if depth >= self.config.max_depth
            || data.len() < self.config.min_samples
            || settled(data.labels(), self.config.min_samples)
        {
            return Ok(Subtree::Leaf);
        }
        let seed = node_seed(self.stump.seed, path);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = data.feature_dim();
        let branch = initial_branch(&mut rng, d, &self.stump, 0.0, [1, 2]);
        let nodes = vec![
            Node::Branch(branch),
            Node::Leaf(Leaf::unset()),
            Node::Leaf(Leaf::unset()),
        ];
        let stump = TreeModel::new(nodes, self.task, d)?;
        // The stump's threshold is replaced by q_thr below, so it stays
        // fixed while the experts train.
        let config = TrainConfig {
            seed,
            learn_threshold: false,
            ..self.stump.clone()
        };
        let local_valid = valid.filter(|v| !v.is_empty() && config.early_stop_patience > 0);
        let fitted = fit_parameters(&stump, data, local_valid, &config)?.tree;
        let mut branch = fitted.branch(0).expect("stump root").clone();

        let probs: Vec<f64> = data
            .rows()
            .map(|x| branch.split_probability(x))
            .collect::<Result<_>>()?;
        let choice = match select_threshold(&probs, data.labels()) {
            Ok(c) => c,
            Err(CptError::DegenerateSplit(_)) => return Ok(Subtree::Leaf),
            Err(e) => return Err(e),
        };
        branch.logit_p0 = logit(choice.q_thr.clamp(1e-12, 1.0 - 1e-12));

        let side = |set: &Dataset| -> Result<(Vec<usize>, Vec<usize>)> {
            let mut low = Vec::new();
            let mut high = Vec::new();
            for (i, x) in set.rows().enumerate() {
                if branch.split_probability(x)? <= choice.q_thr {
                    low.push(i);
                } else {
                    high.push(i);
                }
            }
            Ok((low, high))
        };
        let (low, high) = side(data)?;
        let (low_data, high_data) = (data.select(&low), data.select(&high));
        let (low_valid, high_valid) = match valid {
            Some(v) => {
                let (l, h) = side(v)?;
                (Some(v.select(&l)), Some(v.select(&h)))
            }
            None => (None, None),
        };
        let (low_tree, high_tree) = self.stump.execution.join(
            || self.grow(&low_data, low_valid.as_ref(), depth + 1, 2 * path),
            || self.grow(&high_data, high_valid.as_ref(), depth + 1, 2 * path + 1),
        );
        Ok(Subtree::Branch(
            Box::new(branch),
            Box::new(low_tree?),
            Box::new(high_tree?),
        ))
    }
}

/// Score of the split `branch` currently makes on `data`.
fn current_score(branch: &Branch, data: &Dataset) -> f64 {
    let high: Vec<bool> = data.rows().map(|x| branch.goes_high_unchecked(x)).collect();
    match data.labels() {
        Labels::Classes { values, count } => {
            let mut left = vec![0usize; *count];
            let mut right = vec![0usize; *count];
            for (&h, &y) in high.iter().zip(values) {
                if h {
                    right[y] += 1
                } else {
                    left[y] += 1
                }
            }
            entropy_score(&left, &right, data.len())
        }
        Labels::Targets(t) => {
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for (&h, &y) in high.iter().zip(t) {
                if h {
                    right.push(y)
                } else {
                    left.push(y)
                }
            }
            variance_score(&left, &right)
        }
    }
}

/// Re-selects every branch threshold on the training rows that reach it,
/// top-down, leaving the experts alone. A threshold moves only when the new
/// cut strictly lowers that node's split score.
pub fn retune_thresholds(tree: &TreeModel, train: &Dataset) -> Result<TreeModel> {
    if train.feature_dim() != tree.feature_dim() {
        return Err(CptError::Dimension {
            expected: tree.feature_dim(),
            found: train.feature_dim(),
        });
    }
    let mut out = tree.clone();
    let mut pending = vec![(0, (0..train.len()).collect::<Vec<usize>>())];
    while let Some((id, rows)) = pending.pop() {
        let Some(branch) = out.branch_mut(id) else { continue };
        let data = train.select(&rows);
        if data.len() >= 2 {
            let probs: Vec<f64> = data
                .rows()
                .map(|x| branch.split_probability(x))
                .collect::<Result<_>>()?;
            match select_threshold(&probs, data.labels()) {
                Ok(c) if c.score < current_score(branch, &data) => {
                    branch.logit_p0 = logit(c.q_thr.clamp(1e-12, 1.0 - 1e-12));
                }
                Ok(_) | Err(CptError::DegenerateSplit(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let (low, high): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| !branch.goes_high_unchecked(train.row(i)));
        pending.push((branch.children[1], high));
        pending.push((branch.children[0], low));
    }
    Ok(out)
}

/// Grows a tree top-down from trained stumps. Leaves are left unset, and
/// no global refinement of the node parameters happens here.
pub fn grow_tree(
    train: &Dataset,
    valid: Option<&Dataset>,
    config: &GrowthConfig,
    prior: &PriorConfig,
) -> Result<TreeModel> {
    config.validate()?;
    prior.validate()?;
    if train.is_empty() {
        return Err(CptError::EmptyDataset);
    }
    let grower = Grower {
        config,
        stump: TrainConfig {
            prior: *prior,
            ..config.stump_train.clone()
        },
        task: train.task(),
    };
    let root = grower.grow(train, valid, 0, 1)?;
    let mut nodes = Vec::new();
    root.flatten(&mut nodes);
    TreeModel::new(nodes, train.task(), train.feature_dim())
}
