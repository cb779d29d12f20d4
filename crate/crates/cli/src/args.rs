//! Command-line surface. Every flag can also come from a `PRD_*` environment
//! variable; flags and variables override the JSON config file, which
//! overrides built-in defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "prd",
    version,
    about = "Unsupervised pairwise relations discriminator for Raven-style matrices"
)]
pub struct Cli {
    /// Worker threads for generation, preprocessing and evaluation (1 = sequential).
    #[arg(long, global = true, env = "PRD_WORKERS")]
    pub workers: Option<usize>,

    /// JSON config file with optional `train` and `generator` sections.
    #[arg(long = "config-file", global = true, env = "PRD_CONFIG_FILE")]
    pub config_file: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate mini-RAVEN problems into a portable dataset.
    Gen(GenArgs),
    /// Convert RAVEN `.npz` archives into a portable dataset.
    Convert(ConvertArgs),
    /// Train a model on an unlabelled pool (answers are stripped on load).
    Train(TrainArgs),
    /// Predict answers for every problem in a dataset.
    Solve(SolveArgs),
    /// Accuracy per configuration on a labelled dataset.
    Eval(EvalArgs),
    /// Train on different slices of a dataset and compare on its test fold.
    StudySubsets(StudySubsetsArgs),
    /// Train once per distance measure and compare.
    StudyDistance(StudyDistanceArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Configurations, comma separated (center, 2x2grid, 3x3grid, left-right, up-down, out-in-center, out-in-grid).
    #[arg(long = "config", value_delimiter = ',', env = "PRD_GEN_CONFIG")]
    pub configurations: Vec<String>,
    /// Problems per configuration.
    #[arg(long, env = "PRD_COUNT")]
    pub count: usize,
    #[arg(long, env = "PRD_SEED")]
    pub seed: Option<u64>,
    /// Cell side in pixels [default: 96].
    #[arg(long, env = "PRD_RESOLUTION")]
    pub resolution: Option<usize>,
    /// Fewest non-constant rules per problem [default: 1].
    #[arg(long, env = "PRD_MIN_RULES")]
    pub min_rules: Option<usize>,
    /// Most non-constant rules per problem [default: 2].
    #[arg(long, env = "PRD_MAX_RULES")]
    pub max_rules: Option<usize>,
    /// Distractor design: balanced or perturb [default: balanced].
    #[arg(long, env = "PRD_DISTRACTORS")]
    pub distractors: Option<String>,
    /// Attributes changed per distractor under the perturb design [default: 1].
    #[arg(long, env = "PRD_DISTRACTOR_CHANGES")]
    pub distractor_changes: Option<usize>,
    #[arg(long, env = "PRD_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// A RAVEN directory (searched recursively for `.npz`) or a single archive.
    #[arg(long, env = "PRD_INPUT")]
    pub input: PathBuf,
    /// Keep only archives whose name ends in `_<split>` (train, val or test).
    #[arg(long, env = "PRD_SPLIT")]
    pub split: Option<String>,
    #[arg(long, env = "PRD_OUT")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackboneChoice {
    /// Four strided conv blocks; desk scale.
    Tiny,
    /// 18-layer residual network without its classifier (512-d relations).
    Resnet18,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SelectionChoice {
    /// The last checkpoint.
    Final,
    /// Best validation accuracy among plateau checkpoints (reads labels).
    Validated,
    /// A random plateau checkpoint (no labels).
    LabelFree,
}

/// Model and optimisation settings shared by `train` and the studies.
#[derive(Debug, Args, Default)]
pub struct TrainOptions {
    /// Optimiser steps [default: 5000].
    #[arg(long, env = "PRD_STEPS")]
    pub steps: Option<usize>,
    /// Pairs per real and per fake mini-batch [default: 32].
    #[arg(long, env = "PRD_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// Adam learning rate, fixed [default: 0.0002].
    #[arg(long, env = "PRD_LR")]
    pub lr: Option<f32>,
    /// Dropout on the distance feature [default: 0.5].
    #[arg(long, env = "PRD_DROPOUT")]
    pub dropout: Option<f64>,
    /// Distance feature: difference, l1, l2 or concat [default: l1].
    #[arg(long, env = "PRD_MEASURE")]
    pub measure: Option<String>,
    /// Relation extractor [default: tiny].
    #[arg(long, value_enum, env = "PRD_BACKBONE")]
    pub backbone: Option<BackboneChoice>,
    /// Relation width for the tiny backbone [default: 64; resnet18 is always 512].
    #[arg(long, env = "PRD_RELATION_DIM")]
    pub relation_dim: Option<usize>,
    /// Side of the preprocessed row image [default: 32 tiny, 224 resnet18].
    #[arg(long, env = "PRD_INPUT_RESOLUTION")]
    pub input_resolution: Option<usize>,
    /// Pretrained backbone weights (safetensors, torchvision key names).
    #[arg(long, env = "PRD_PRETRAINED")]
    pub pretrained: Option<PathBuf>,
    /// Train batch-norm layers instead of freezing them.
    #[arg(long, env = "PRD_TRAIN_NORM")]
    pub train_norm: bool,
    /// Steps between checkpoints [default: 500].
    #[arg(long, env = "PRD_CHECKPOINT_EVERY")]
    pub checkpoint_every: Option<usize>,
    /// Plateau window W in steps [default: 200].
    #[arg(long, env = "PRD_PLATEAU_WINDOW")]
    pub plateau_window: Option<usize>,
    /// Plateau slope threshold per step [default: 1e-5].
    #[arg(long, env = "PRD_PLATEAU_THRESHOLD")]
    pub plateau_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Portable dataset to train on.
    #[arg(long, env = "PRD_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "PRD_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "PRD_SEED")]
    pub seed: Option<u64>,
    /// Continue from this checkpoint up to --steps.
    #[arg(long, env = "PRD_RESUME")]
    pub resume: Option<PathBuf>,
    /// Write loss.svg.
    #[arg(long, env = "PRD_PLOTS")]
    pub plots: bool,
    #[command(flatten)]
    pub options: TrainOptions,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Checkpoint file, or a training directory (its last checkpoint is used).
    #[arg(long, env = "PRD_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "PRD_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "PRD_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file, or a training directory to select from.
    #[arg(long, env = "PRD_MODEL")]
    pub model: PathBuf,
    /// Labelled portable dataset.
    #[arg(long, env = "PRD_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "PRD_OUT")]
    pub out: PathBuf,
    /// How to choose a checkpoint from a training directory.
    #[arg(long, value_enum, default_value_t = SelectionChoice::Final, env = "PRD_SELECTION")]
    pub selection: SelectionChoice,
    /// Labelled validation set for --selection validated.
    #[arg(long, env = "PRD_VAL")]
    pub val: Option<PathBuf>,
    /// Seed for label-free selection.
    #[arg(long, env = "PRD_SEED")]
    pub seed: Option<u64>,
    /// Write accuracy.svg.
    #[arg(long, env = "PRD_PLOTS")]
    pub plots: bool,
}

#[derive(Debug, Args)]
pub struct StudyCommon {
    #[arg(long, env = "PRD_OUT")]
    pub out: PathBuf,
    /// Training seeds, comma separated [default: 1,2,3].
    #[arg(long, value_delimiter = ',', env = "PRD_SEEDS")]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, default_value_t = SelectionChoice::Final, env = "PRD_SELECTION")]
    pub selection: SelectionChoice,
    #[command(flatten)]
    pub options: TrainOptions,
}

#[derive(Debug, Args)]
pub struct StudySubsetsArgs {
    /// Labelled portable dataset, split into five folds.
    #[arg(long, env = "PRD_DATA")]
    pub data: PathBuf,
    /// Subsets, comma separated [default: train-20,test,train-60,full].
    #[arg(long, value_delimiter = ',', env = "PRD_SUBSETS")]
    pub subsets: Vec<String>,
    #[arg(long, default_value_t = 0, env = "PRD_SPLIT_SEED")]
    pub split_seed: u64,
    #[command(flatten)]
    pub common: StudyCommon,
}

#[derive(Debug, Args)]
pub struct StudyDistanceArgs {
    /// Training dataset (answers ignored).
    #[arg(long, env = "PRD_TRAIN")]
    pub train: PathBuf,
    /// Labelled test dataset.
    #[arg(long, env = "PRD_TEST")]
    pub test: PathBuf,
    /// Labelled validation dataset for --selection validated.
    #[arg(long, env = "PRD_VAL")]
    pub val: Option<PathBuf>,
    /// Measures, comma separated [default: difference,l1,l2,concat].
    #[arg(long, value_delimiter = ',', env = "PRD_MEASURES")]
    pub measures: Vec<String>,
    #[command(flatten)]
    pub common: StudyCommon,
}
