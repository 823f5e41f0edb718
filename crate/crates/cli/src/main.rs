//! `labelprop` command-line tool.
//!
//! Exit codes: 0 on success, 1 on runtime or numerical failure, 2 on usage or
//! validation errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "labelprop", version, about = "Graph-diffusion label propagation for semi-supervised learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded two-moons dataset with a labeled split.
    GenData(GenDataArgs),
    /// Diffuse labels over a kNN graph of fixed embeddings.
    Propagate(PropagateArgs),
    /// Run the full two-phase training loop on 2D toy data.
    TrainToy(TrainToyArgs),
    /// Export CSV plot data from a run directory.
    ExportPlot(ExportPlotArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Number of points.
    #[arg(long, default_value_t = 300)]
    n: usize,
    /// Standard deviation of the Gaussian noise on each coordinate.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Labeled examples drawn per class.
    #[arg(long, default_value_t = 3)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Explicit points per moon, e.g. `100,300`; overrides --n.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    class_sizes: Option<Vec<usize>>,
    /// Also write a held-out test set of this many points.
    #[arg(long)]
    test_n: Option<usize>,
    /// Seed for the test set [default: seed + 1000].
    #[arg(long)]
    test_seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GraphArgs {
    /// Neighbors per point in the kNN graph [published setting].
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// Affinity exponent [published setting].
    #[arg(long, default_value_t = 3.0)]
    gamma: f64,
    /// Diffusion strength, 0 <= alpha < 1 [published setting].
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    /// Conjugate-gradient iteration cap [published setting].
    #[arg(long, default_value_t = 20)]
    cg_iters: usize,
    /// Relative residual at which CG stops [toy-scale choice].
    #[arg(long, default_value_t = 1e-6)]
    cg_tol: f64,
}

#[derive(Debug, Args)]
struct PropagateArgs {
    /// Embedding file (`.lpemb`).
    #[arg(long)]
    embeddings: PathBuf,
    /// Labels CSV, one `index,class` per line.
    #[arg(long)]
    labels: PathBuf,
    /// Optional ground-truth CSV; prints pseudo-label accuracy.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Number of classes [default: inferred from labels and truth].
    #[arg(long)]
    classes: Option<usize>,
    #[command(flatten)]
    graph: GraphArgs,
    /// Use embeddings as given instead of l2-normalizing rows.
    #[arg(long)]
    no_normalize: bool,
    /// Lift low-dimensional inputs with Gaussian landmark features of this
    /// bandwidth before building the graph.
    #[arg(long)]
    lift_bandwidth: Option<f64>,
    /// Landmark grid spacing used with --lift-bandwidth.
    #[arg(long, default_value_t = 0.15, requires = "lift_bandwidth")]
    lift_step: f64,
    /// JSON output path [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write `index,class,omega` CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchitectureKind {
    /// Gaussian landmark features with a linear projection.
    Landmark,
    /// ReLU multilayer perceptron.
    Mlp,
}

#[derive(Debug, Args)]
struct TrainToyArgs {
    /// Training inputs (`.lpemb`).
    #[arg(long)]
    embeddings: PathBuf,
    /// Labels CSV.
    #[arg(long)]
    labels: PathBuf,
    /// Ground truth for the training inputs; enables pseudo-label accuracy.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Held-out test inputs.
    #[arg(long, requires = "test_truth")]
    test_embeddings: Option<PathBuf>,
    /// Ground truth for the test inputs.
    #[arg(long, requires = "test_embeddings")]
    test_truth: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    graph: GraphArgs,
    /// Supervised warm-up epochs T [toy-scale choice].
    #[arg(long, default_value_t = 30)]
    epochs_supervised: usize,
    /// Propagate-then-train epochs T' [toy-scale choice].
    #[arg(long, default_value_t = 70)]
    epochs_iterative: usize,
    /// Labeled examples per batch B_L [toy-scale choice].
    #[arg(long, default_value_t = 8)]
    batch_labeled: usize,
    /// Unlabeled examples per batch B_U [toy-scale choice].
    #[arg(long, default_value_t = 32)]
    batch_unlabeled: usize,
    /// Initial learning rate, cosine-annealed to zero [published CIFAR-10 setting].
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// SGD momentum [reference-implementation setting].
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train with all certainty weights set to 1.
    #[arg(long)]
    no_omega: bool,
    /// Train with all class weights set to 1.
    #[arg(long)]
    no_zeta: bool,
    /// Take pseudo-labels from the network's own predictions instead of diffusion.
    #[arg(long)]
    use_network_predictions: bool,
    #[arg(long, value_enum, default_value_t = ArchitectureKind::Landmark)]
    architecture: ArchitectureKind,
    /// Landmark bandwidth [toy-scale choice].
    #[arg(long, default_value_t = 0.2)]
    landmark_bandwidth: f64,
    /// Landmark grid spacing [toy-scale choice].
    #[arg(long, default_value_t = 0.15)]
    landmark_step: f64,
    /// Hidden widths for --architecture mlp.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    hidden: Vec<usize>,
    /// Descriptor width for --architecture mlp.
    #[arg(long, default_value_t = 16)]
    descriptor_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlotKind {
    /// One row per training point: x, y, class, omega.
    Points,
    /// One row per phase-2 epoch.
    Accuracy,
}

#[derive(Debug, Args)]
struct ExportPlotArgs {
    /// Run directory written by train-toy.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, value_enum)]
    what: PlotKind,
    /// CSV output path [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn usage(message: impl std::fmt::Display) -> Self {
        Self::Usage(anyhow::anyhow!("{message}"))
    }
}

impl From<labelprop::Error> for Failure {
    fn from(e: labelprop::Error) -> Self {
        use labelprop::Error as E;
        match e {
            E::InvalidParameter(_)
            | E::InvalidDataset(_)
            | E::DimensionMismatch { .. }
            | E::InsufficientClass { .. }
            | E::EmptyDataset => Self::Usage(e.into()),
            _ => Self::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(&args),
        Command::Propagate(args) => commands::propagate(&args),
        Command::TrainToy(args) => commands::train_toy(&args),
        Command::ExportPlot(args) => commands::export_plot(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            eprintln!("\n{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
