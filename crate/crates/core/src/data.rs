//! Datasets, text loaders, standardization and the concentric-circles
//! generator.
//!
//! Every feature row carries a trailing constant `1.0` so split hyperplanes
//! absorb their bias.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CptError, Result};
use crate::tree::Task;

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes { values: Vec<usize>, count: usize },
    Targets(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { values, .. } => values.len(),
            Labels::Targets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Classes { values, count } => Labels::Classes {
                values: idx.iter().map(|&i| values[i]).collect(),
                count: *count,
            },
            Labels::Targets(t) => Labels::Targets(idx.iter().map(|&i| t[i]).collect()),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Labels::Classes { count, .. } => Task::Classification { classes: *count },
            Labels::Targets(_) => Task::Regression,
        }
    }

    /// Label of row `i` as a number (class index or target).
    pub fn value(&self, i: usize) -> f64 {
        match self {
            Labels::Classes { values, .. } => values[i] as f64,
            Labels::Targets(t) => t[i],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Labels::Classes { values, count } => {
                if let Some(&bad) = values.iter().find(|&&v| v >= *count) {
                    return Err(CptError::LabelOutOfRange {
                        label: bad,
                        classes: *count,
                    });
                }
            }
            Labels::Targets(t) => {
                if t.iter().any(|v| !v.is_finite()) {
                    return Err(CptError::InvalidArgument("non-finite regression target".into()));
                }
            }
        }
        Ok(())
    }
}

/// Dense row-major feature matrix with the bias column appended.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    rows: usize,
    cols: usize,
    labels: Labels,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from raw feature rows (without bias).
    pub fn from_rows(rows: &[Vec<f64>], labels: Labels) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * (d + 1));
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(CptError::Parse {
                    line: i + 1,
                    message: format!("expected {d} features, found {}", r.len()),
                });
            }
            features.extend_from_slice(r);
            features.push(1.0);
        }
        Self::from_augmented(features, d, labels)
    }

    /// Builds a dataset from a flat row-major matrix that already ends every
    /// row with the bias coordinate.
    pub fn from_augmented(features: Vec<f64>, feature_dim: usize, labels: Labels) -> Result<Self> {
        let cols = feature_dim + 1;
        if !features.len().is_multiple_of(cols) {
            return Err(CptError::Dimension {
                expected: cols,
                found: features.len() % cols,
            });
        }
        let rows = features.len() / cols;
        if labels.len() != rows {
            return Err(CptError::InvalidArgument(format!(
                "{rows} feature rows but {} labels",
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(CptError::InvalidArgument("non-finite feature value".into()));
        }
        if features.chunks_exact(cols).any(|r| r[cols - 1] != 1.0) {
            return Err(CptError::InvalidArgument("bias column must be all ones".into()));
        }
        labels.validate()?;
        Ok(Self {
            features,
            rows,
            cols,
            labels,
            feature_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.cols - 1
    }

    /// Row `i` including the bias coordinate.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.cols)
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn task(&self) -> Task {
        self.labels.task()
    }

    pub fn class_count(&self) -> Option<usize> {
        match self.labels {
            Labels::Classes { count, .. } => Some(count),
            Labels::Targets(_) => None,
        }
    }

    /// Copies the given rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            rows: idx.len(),
            cols: self.cols,
            labels: self.labels.select(idx),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Same rows, different class count. Used to align splits of one source
    /// whose subsets may miss a class.
    pub fn with_class_count(mut self, count: usize) -> Result<Self> {
        if let Labels::Classes { count: c, .. } = &mut self.labels {
            *c = count;
        }
        self.labels.validate()?;
        Ok(self)
    }
}

/// Maps raw classification labels to class indices: `{-1, +1}` becomes
/// `{0, 1}`, other labels must be non-negative integers.
pub fn canonical_classes(raw: &[f64]) -> Result<Labels> {
    let binary_signed = raw.iter().all(|&v| v == -1.0 || v == 1.0) && raw.contains(&-1.0);
    let mut values = Vec::with_capacity(raw.len());
    for (i, &v) in raw.iter().enumerate() {
        let class = if binary_signed {
            (v > 0.0) as usize
        } else if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
            v as usize
        } else {
            return Err(CptError::Parse {
                line: i + 1,
                message: format!("class label {v} is not a non-negative integer"),
            });
        };
        values.push(class);
    }
    let count = values.iter().max().map_or(0, |m| m + 1);
    Ok(Labels::Classes { values, count })
}

fn make_labels(raw: Vec<f64>, task: Task) -> Result<Labels> {
    match task {
        Task::Regression => Ok(Labels::Targets(raw)),
        Task::Classification { .. } => canonical_classes(&raw),
    }
}

fn parse_number(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token.trim().parse().map_err(|_| CptError::Parse {
        line,
        message: format!("not a number: {:?}", token.trim()),
    })?;
    if !v.is_finite() {
        return Err(CptError::Parse {
            line,
            message: format!("non-finite value {v}"),
        });
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy)]
pub struct DelimitedOptions {
    pub has_header: bool,
    /// 0-based column holding the label.
    pub label_column: usize,
    /// Only the variant matters; the class count is inferred from the data.
    pub task: Task,
}

impl Default for DelimitedOptions {
    fn default() -> Self {
        Self {
            has_header: false,
            label_column: 0,
            task: Task::Classification { classes: 0 },
        }
    }
}

/// Comma- or tab-separated numeric rows.
pub fn load_delimited(path: impl AsRef<Path>, options: DelimitedOptions) -> Result<Dataset> {
    parse_delimited(&fs::read_to_string(path)?, options)
}

pub fn parse_delimited(text: &str, options: DelimitedOptions) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let delimiter = if text.contains('\t') { '\t' } else { ',' };
    let mut names = None;
    if options.has_header {
        if let Some((_, header)) = lines.next() {
            let mut cols: Vec<String> = header.split(delimiter).map(|s| s.trim().to_string()).collect();
            if options.label_column < cols.len() {
                cols.remove(options.label_column);
            }
            names = Some(cols);
        }
    }
    let mut arity = None;
    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    for (line, content) in lines {
        let fields: Vec<&str> = content.split(delimiter).collect();
        match arity {
            None => arity = Some(fields.len()),
            Some(a) if a != fields.len() => {
                return Err(CptError::Parse {
                    line,
                    message: format!("expected {a} fields, found {}", fields.len()),
                })
            }
            _ => {}
        }
        if options.label_column >= fields.len() {
            return Err(CptError::Parse {
                line,
                message: format!("label column {} out of range", options.label_column),
            });
        }
        let mut row = Vec::with_capacity(fields.len() - 1);
        for (j, f) in fields.iter().enumerate() {
            let v = parse_number(f, line)?;
            if j == options.label_column {
                raw_labels.push(v);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CptError::EmptyDataset);
    }
    let mut ds = Dataset::from_rows(&rows, make_labels(raw_labels, options.task)?)?;
    ds.feature_names = names;
    Ok(ds)
}

/// Sparse `label idx:val ...` rows with 1-based ascending indices.
pub fn load_sparse(path: impl AsRef<Path>, task: Task) -> Result<Dataset> {
    parse_sparse(&fs::read_to_string(path)?, task)
}

pub fn parse_sparse(text: &str, task: Task) -> Result<Dataset> {
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut raw_labels = Vec::new();
    let mut d = 0;
    for (i, content) in text.lines().enumerate() {
        let line = i + 1;
        let content = content.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = parse_number(tokens.next().unwrap_or(""), line)?;
        let mut row = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| CptError::Parse {
                line,
                message: format!("expected index:value, found {tok:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| CptError::Parse {
                line,
                message: format!("bad feature index {idx:?}"),
            })?;
            if idx == 0 || idx <= last {
                return Err(CptError::Parse {
                    line,
                    message: format!("feature indices must be 1-based and strictly ascending ({idx} after {last})"),
                });
            }
            last = idx;
            row.push((idx, parse_number(val, line)?));
        }
        d = d.max(last);
        raw_labels.push(label);
        entries.push(row);
    }
    if entries.is_empty() {
        return Err(CptError::EmptyDataset);
    }
    let mut features = vec![0.0; entries.len() * (d + 1)];
    for (r, row) in entries.iter().enumerate() {
        let base = r * (d + 1);
        for &(idx, v) in row {
            features[base + idx - 1] = v;
        }
        features[base + d] = 1.0;
    }
    Dataset::from_augmented(features, d, make_labels(raw_labels, task)?)
}

/// Writes the sparse format, skipping zeros. Class labels are written as
/// their 0-based indices.
pub fn write_sparse(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut out = String::new();
    for (i, row) in data.rows().enumerate() {
        write!(out, "{}", data.labels().value(i)).unwrap();
        for (j, &v) in row[..data.feature_dim()].iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", j + 1, v).unwrap();
            }
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes comma-separated rows with the label first and a header line.
pub fn write_delimited(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let d = data.feature_dim();
    let mut out = String::from("label");
    for j in 0..d {
        let name = data
            .feature_names
            .as_ref()
            .and_then(|n| n.get(j).cloned())
            .unwrap_or_else(|| format!("x{}", j + 1));
        write!(out, ",{name}").unwrap();
    }
    out.push('\n');
    for (i, row) in data.rows().enumerate() {
        write!(out, "{}", data.labels().value(i)).unwrap();
        for v in &row[..d] {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-feature affine map fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn identity(feature_dim: usize) -> Self {
        Self {
            means: vec![0.0; feature_dim],
            scales: vec![1.0; feature_dim],
        }
    }

    /// Population mean and standard deviation of each non-bias column;
    /// zero-variance columns map to themselves.
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.len() < 2 {
            return Err(CptError::InvalidArgument(
                "standardization needs at least 2 rows".into(),
            ));
        }
        let d = data.feature_dim();
        let n = data.len() as f64;
        let mut means = vec![0.0; d];
        for row in data.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for row in data.rows() {
            for j in 0..d {
                vars[j] += (row[j] - means[j]).powi(2);
            }
        }
        let mut scales = Vec::with_capacity(d);
        for j in 0..d {
            let sd = (vars[j] / n).sqrt();
            if sd > 0.0 {
                scales.push(sd);
            } else {
                means[j] = 0.0;
                scales.push(1.0);
            }
        }
        Ok(Self { means, scales })
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.scales) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.feature_dim() != self.means.len() {
            return Err(CptError::Dimension {
                expected: self.means.len(),
                found: data.feature_dim(),
            });
        }
        let mut out = data.clone();
        let cols = out.cols;
        for row in out.features.chunks_exact_mut(cols) {
            self.transform_row(row);
        }
        Ok(out)
    }
}

/// Fits a standardizer on `train` and returns the transformed copy.
pub fn standardize(train: &Dataset) -> Result<(Dataset, Standardizer)> {
    let s = Standardizer::fit(train)?;
    Ok((s.apply(train)?, s))
}

pub const DEFAULT_INNER_RADIUS: f64 = 0.45;
pub const DEFAULT_OUTER_RADIUS: f64 = 0.85;

/// Uniform points on `[-1, 1]²`, labelled 1 inside the annulus
/// `r_inner <= |x| <= r_outer`.
pub fn synth_circles(n: usize, r_inner: f64, r_outer: f64, seed: u64) -> Result<Dataset> {
    if !(r_inner > 0.0 && r_inner < r_outer && r_outer.is_finite()) {
        return Err(CptError::InvalidArgument(format!(
            "need 0 < r_inner < r_outer, got {r_inner} and {r_outer}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * 3);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = rng.random_range(-1.0..=1.0);
        let x2: f64 = rng.random_range(-1.0..=1.0);
        let radius = x1.hypot(x2);
        labels.push((r_inner <= radius && radius <= r_outer) as usize);
        features.extend_from_slice(&[x1, x2, 1.0]);
    }
    let mut ds = Dataset::from_augmented(
        features,
        2,
        Labels::Classes {
            values: labels,
            count: 2,
        },
    )?;
    ds.feature_names = Some(vec!["x1".into(), "x2".into()]);
    Ok(ds)
}

/// Seeded random partition into consecutive fractions (the remainder goes
/// to the last part).
pub fn split(data: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|f| f.is_nan() || *f < 0.0) || total > 1.0 + 1e-12 {
        return Err(CptError::InvalidArgument(
            "split fractions must be non-negative and sum to at most 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(fractions.len());
    let mut start = 0;
    for (k, f) in fractions.iter().enumerate() {
        let end = if k + 1 == fractions.len() && (total - 1.0).abs() < 1e-12 {
            data.len()
        } else {
            (start + (f * data.len() as f64).round() as usize).min(data.len())
        };
        parts.push(data.select(&order[start..end]));
        start = end;
    }
    Ok(parts)
}
