use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use profed::cli::{self, ConfigPatch, ExperimentConfig};
use profed::federation::Parallelism;

#[derive(Parser)]
#[command(
    name = "profed",
    version,
    about = "Federated learning benchmark simulator with proximity-based non-IID partitioning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download (or verify) a dataset into the data directory
    Fetch(ConfigArgs),
    /// Partition a dataset into regions and devices and write the manifest
    Partition(ConfigArgs),
    /// Run a federated experiment and write CSVs, checkpoints and a report
    Run(RunArgs),
    /// Merge run summaries into one CSV and render accuracy charts
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file with `key = value` lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// MNIST, FashionMNIST, EMNIST, CIFAR10 or CIFAR100
    #[arg(long)]
    dataset: Option<String>,
    /// iid, dirichlet, hard or custom
    #[arg(long)]
    partitioning: Option<String>,
    /// Dirichlet concentration (dirichlet partitioning only)
    #[arg(long)]
    alpha: Option<f64>,
    /// JSON file with the region-by-label proportion matrix (custom only)
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Number of subregions
    #[arg(long)]
    areas: Option<usize>,
    /// Total number of devices
    #[arg(long)]
    devices: Option<usize>,
    /// fedavg, fedprox or scaffold
    #[arg(long)]
    algorithm: Option<String>,
    /// FedProx proximal coefficient (fedprox only)
    #[arg(long)]
    mu: Option<f64>,
    /// Federated rounds
    #[arg(long)]
    rounds: Option<usize>,
    /// Local epochs per round
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    batch: Option<usize>,
    /// ADAM learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// L2 weight decay
    #[arg(long)]
    wd: Option<f64>,
    /// Training fraction of the train/validation split
    #[arg(long)]
    fraction: Option<f64>,
    /// Comma-separated seed list, e.g. 0,1,2,3,4
    #[arg(long)]
    seeds: Option<String>,
    /// Where datasets live (default $PROFED_DATA_DIR, then ./data)
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Where outputs are written (default ./out)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Train devices one at a time instead of on the thread pool
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories produced by `run`
    #[arg(required = true)]
    run_dirs: Vec<PathBuf>,
    /// Directory for the merged summary and charts
    #[arg(long)]
    out: PathBuf,
}

fn patch_from(args: &ConfigArgs) -> profed::Result<ConfigPatch> {
    Ok(ConfigPatch {
        dataset: args.dataset.as_deref().map(str::parse).transpose()?,
        partitioning: args.partitioning.as_deref().map(str::parse).transpose()?,
        alpha: args.alpha,
        matrix: args.matrix.clone(),
        areas: args.areas,
        devices: args.devices,
        algorithm: args.algorithm.as_deref().map(str::parse).transpose()?,
        mu: args.mu,
        rounds: args.rounds,
        local_epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        weight_decay: args.wd,
        split_fraction: args.fraction,
        seeds: args.seeds.as_deref().map(cli::parse_seed_list).transpose()?,
        data_dir: args.data_dir.clone(),
        out_dir: args.out_dir.clone(),
    })
}

fn resolve(args: &ConfigArgs) -> profed::Result<ExperimentConfig> {
    let file = args
        .config
        .as_deref()
        .map(cli::parse_config_file)
        .transpose()?;
    cli::resolve_config(file, patch_from(args)?)
}

fn dispatch(cli_args: Cli) -> profed::Result<()> {
    match cli_args.command {
        Command::Fetch(args) => {
            cli::cmd_fetch(&resolve(&args)?)?;
        }
        Command::Partition(args) => {
            cli::cmd_partition(&resolve(&args)?)?;
        }
        Command::Run(args) => {
            let config = resolve(&args.config)?;
            let parallelism = if args.sequential {
                Parallelism::Sequential
            } else {
                Parallelism::Parallel
            };
            cli::cmd_run(&config, parallelism)?;
        }
        Command::Report(args) => {
            cli::cmd_report(&args.run_dirs, &args.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli_args = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match dispatch(cli_args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
