use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cpt_core::data::{load_sparse, parse_delimited, synth_circles, write_delimited, DelimitedOptions};
use cpt_core::{
    evaluate, train_model, AdamConfig, Dataset, EpochRecord, LeafValue, MetricReport, Node, PipelineConfig, Prediction,
    PriorConfig, Standardizer, Task, TrainConfig, TreeModel,
};

use crate::boundary::boundary_grid;
use crate::document::{ConfigEcho, ModelDocument, TrainingDoc};

/// Flag values that parse but cannot work together.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(
    name = "cpt",
    version,
    about = "Convex polytope trees: train, inspect and apply oblique trees"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow and refine a tree, writing the model and a per-epoch history.
    Train(TrainArgs),
    /// Write one prediction row per input row.
    Predict(PredictArgs),
    /// Report the task metric and tree shape on a dataset.
    Evaluate(EvaluateArgs),
    /// Print the structure of a saved model.
    Inspect(InspectArgs),
    /// Generate the concentric-circles dataset.
    Synth(SynthArgs),
    /// Export a decision-boundary grid for a 2-feature model.
    Boundary(BoundaryArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskFlag {
    Classify,
    Regress,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// 0-based label column for csv input.
    #[arg(long, default_value_t = 0)]
    pub label_column: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Scored once after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = TaskFlag::Classify)]
    pub task: TaskFlag,
    #[arg(long, default_value_t = 3)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 16)]
    pub min_samples: usize,
    /// Experts per node (K).
    #[arg(long, default_value_t = 10)]
    pub truncation: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a_beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b_beta: f64,
    /// Penalty multiplier; defaults to 1/N.
    #[arg(long)]
    pub reg_weight: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_start: f64,
    #[arg(long, default_value_t = 64.0)]
    pub lambda_end: f64,
    #[arg(long, default_value_t = 5.0)]
    pub init_std: f64,
    /// Keep raw feature scales.
    #[arg(long)]
    pub no_standardize: bool,
    /// Keep the refined thresholds instead of re-selecting them on the
    /// training data.
    #[arg(long)]
    pub no_retune: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Defaults to the model path with a `.history.csv` extension.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Also print every expert's weight and coefficients.
    #[arg(long)]
    pub experts: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = cpt_core::data::DEFAULT_INNER_RADIUS)]
    pub r_inner: f64,
    #[arg(long, default_value_t = cpt_core::data::DEFAULT_OUTER_RADIUS)]
    pub r_outer: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Cells per side.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Inspect(a) => cmd_inspect(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Boundary(a) => cmd_boundary(&a, out),
    }
}

/// A header is assumed when the first non-empty line has a non-numeric field.
fn has_header(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .is_some_and(|l| l.split([',', '\t']).any(|f| f.trim().parse::<f64>().is_err()))
}

pub fn load_data(path: &Path, input: &InputArgs, task: Task) -> Result<Dataset> {
    let data = match input.format {
        Format::Sparse => load_sparse(path, task),
        Format::Csv => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let options = DelimitedOptions {
                has_header: has_header(&text),
                label_column: input.label_column,
                task,
            };
            parse_delimited(&text, options)
        }
    };
    data.with_context(|| format!("loading {}", path.display()))
}

/// Loads data for an existing model, aligning the class count.
fn load_for_model(path: &Path, input: &InputArgs, tree: &TreeModel) -> Result<Dataset> {
    let data = load_data(path, input, tree.task())?;
    let data = match tree.task() {
        Task::Classification { classes } => data.with_class_count(classes)?,
        Task::Regression => data,
    };
    Ok(data)
}

pub fn pipeline_config(a: &TrainArgs) -> Result<PipelineConfig> {
    let config = PipelineConfig {
        max_depth: a.max_depth,
        min_samples: a.min_samples,
        standardize: !a.no_standardize,
        retune_thresholds: !a.no_retune,
        train: TrainConfig {
            truncation_k: a.truncation,
            prior: PriorConfig {
                gamma0: a.gamma0,
                c0: a.c0,
                a_beta: a.a_beta,
                b_beta: a.b_beta,
                reg_weight: a.reg_weight,
            },
            adam: AdamConfig {
                learning_rate: a.lr,
                ..AdamConfig::default()
            },
            lambda_start: a.lambda_start,
            lambda_end: a.lambda_end,
            batch_size: a.batch,
            epochs: a.epochs,
            seed: a.seed,
            init_std: a.init_std,
            ..TrainConfig::default()
        },
    };
    config.train.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(config)
}

fn history_path(a: &TrainArgs) -> PathBuf {
    a.history.clone().unwrap_or_else(|| a.out.with_extension("history.csv"))
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut text = String::from("epoch,train_loss,valid_metric,lambda\n");
    for r in history {
        let valid = r.valid_metric.map(|v| v.to_string()).unwrap_or_default();
        writeln!(text, "{},{},{},{}", r.epoch, r.train_loss, valid, r.lambda).unwrap();
    }
    text
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config = pipeline_config(a)?;
    let task = match a.task {
        TaskFlag::Classify => Task::Classification { classes: 0 },
        TaskFlag::Regress => Task::Regression,
    };
    let mut train = load_data(&a.data, &a.input, task)?;
    let mut valid = a.valid.as_deref().map(|p| load_data(p, &a.input, task)).transpose()?;
    let mut test = a.test.as_deref().map(|p| load_data(p, &a.input, task)).transpose()?;
    if let Some(classes) = [Some(&train), valid.as_ref(), test.as_ref()]
        .into_iter()
        .flatten()
        .filter_map(Dataset::class_count)
        .max()
    {
        train = train.with_class_count(classes)?;
        valid = valid.map(|v| v.with_class_count(classes)).transpose()?;
        test = test.map(|t| t.with_class_count(classes)).transpose()?;
    }

    let model = train_model(&train, valid.as_ref(), &config)?;
    let training = TrainingDoc {
        seed: a.seed,
        final_lambda: model.tree.annealing_lambda,
        config: ConfigEcho::of(&config),
    };
    ModelDocument::from_model(&model.tree, &model.standardizer, Some(training)).save(&a.out)?;
    let history = history_path(a);
    fs::write(&history, history_csv(&model.history)).with_context(|| format!("writing {}", history.display()))?;

    let report = evaluate(&model.tree, &model.prepare(&train)?)?;
    writeln!(out, "model {}", a.out.display())?;
    writeln!(out, "history {}", history.display())?;
    writeln!(out, "train {} {}", report.metric_kind, report.value)?;
    if let Some(test) = &test {
        let report = evaluate(&model.tree, &model.prepare(test)?)?;
        writeln!(out, "test {} {}", report.metric_kind, report.value)?;
    }
    write_shape(&report, out)
}

fn write_shape(report: &MetricReport, out: &mut dyn Write) -> Result<()> {
    let s = &report.tree_stats;
    writeln!(out, "depth {}", s.depth)?;
    writeln!(out, "leaves {}", s.leaf_count)?;
    let counts: Vec<String> = s.effective_experts_per_node.iter().map(ToString::to_string).collect();
    writeln!(out, "effective_experts {}", counts.join(" "))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(TreeModel, Standardizer)> {
    ModelDocument::load(path)?.to_model()
}

pub fn prediction_header(tree: &TreeModel) -> String {
    match tree.task() {
        Task::Classification { classes } => {
            let scores: Vec<String> = (0..classes).map(|c| format!("score{c}")).collect();
            format!("leaf,class,{}", scores.join(","))
        }
        Task::Regression => "leaf,value".to_string(),
    }
}

pub fn prediction_row(leaf: usize, p: &Prediction) -> String {
    match p {
        Prediction::Class { class, scores } => {
            let scores: Vec<String> = scores.iter().map(ToString::to_string).collect();
            format!("{leaf},{class},{}", scores.join(","))
        }
        Prediction::Value(v) => format!("{leaf},{v}"),
    }
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let (tree, standardizer) = load_model(&a.model)?;
    let data = standardizer.apply(&load_for_model(&a.data, &a.input, &tree)?)?;
    let mut text = prediction_header(&tree);
    text.push('\n');
    for x in data.rows() {
        text.push_str(&prediction_row(tree.route_deterministic(x)?, &tree.predict(x)?));
        text.push('\n');
    }
    match &a.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let (tree, standardizer) = load_model(&a.model)?;
    let data = standardizer.apply(&load_for_model(&a.data, &a.input, &tree)?)?;
    let report = evaluate(&tree, &data)?;
    writeln!(out, "metric {} {}", report.metric_kind, report.value)?;
    write_shape(&report, out)
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let (tree, _) = load_model(&a.model)?;
    match tree.task() {
        Task::Classification { classes } => writeln!(out, "task classification ({classes} classes)")?,
        Task::Regression => writeln!(out, "task regression")?,
    }
    writeln!(out, "feature_dim {}", tree.feature_dim())?;
    writeln!(out, "depth {}", tree.depth())?;
    writeln!(out, "leaves {}", tree.leaf_count())?;
    for (id, node) in tree.nodes().iter().enumerate() {
        match node {
            Node::Branch(b) => {
                writeln!(
                    out,
                    "node {id} branch: effective_experts {} of {}, p0 {}, children {} {}",
                    b.effective_experts(),
                    b.experts.len(),
                    b.p0(),
                    b.children[0],
                    b.children[1]
                )?;
                if a.experts {
                    for (k, e) in b.experts.iter().enumerate() {
                        let beta: Vec<String> = e.beta.iter().map(ToString::to_string).collect();
                        writeln!(out, "  expert {k}: r {} beta [{}]", e.r(), beta.join(", "))?;
                    }
                }
            }
            Node::Leaf(l) => {
                let value = match &l.value {
                    LeafValue::Unset => "unset".to_string(),
                    LeafValue::Distribution(d) => format!("distribution {d:?}"),
                    LeafValue::Mean(m) => format!("mean {m}"),
                };
                writeln!(out, "node {id} leaf: samples {}, {value}", l.sample_count)?;
            }
        }
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let data = synth_circles(a.n, a.r_inner, a.r_outer, a.seed).map_err(|e| UsageError(e.to_string()))?;
    write_delimited(&a.out, &data).with_context(|| format!("writing {}", a.out.display()))?;
    writeln!(out, "wrote {} rows to {}", data.len(), a.out.display())?;
    Ok(())
}

fn cmd_boundary(a: &BoundaryArgs, out: &mut dyn Write) -> Result<()> {
    if a.grid < 2 {
        return Err(UsageError(format!("--grid must be at least 2, got {}", a.grid)).into());
    }
    let (tree, standardizer) = load_model(&a.model)?;
    let grid = boundary_grid(&tree, &standardizer, a.grid)?;
    let mut text = String::from("x1,x2,leaf,prediction");
    for id in &grid.branch_ids {
        write!(text, ",f{id}").unwrap();
    }
    text.push('\n');
    for c in &grid.cells {
        let prediction = match &c.prediction {
            Prediction::Class { class, .. } => class.to_string(),
            Prediction::Value(v) => v.to_string(),
        };
        write!(text, "{},{},{},{}", c.x1, c.x2, c.leaf, prediction).unwrap();
        for f in &c.split {
            write!(text, ",{f}").unwrap();
        }
        text.push('\n');
    }
    fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    writeln!(out, "wrote {}x{} grid to {}", a.grid, a.grid, a.out.display())?;
    Ok(())
}
