use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smartkge::{Error, MetricsReport, Result, Split};
use smartkge_cli::{cmd_analyze, cmd_eval, cmd_grid, cmd_train, exit_code, ExperimentConfig};

#[derive(Parser)]
#[command(name = "smartkge", version, about = "Knowledge graph embeddings with per-relation geometric transformation selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more runs and write checkpoints, logs, adherence and a summary.
    Train(Settings),
    /// Train one run per cell of the hyperparameter grid.
    Grid(Settings),
    /// Evaluate a saved checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        settings: Settings,
    },
    /// Mine relational patterns and cross-check a saved adherence table.
    Analyze {
        #[arg(long, default_value_t = smartkge::analysis::DEFAULT_MIN_SUPPORT)]
        min_support: usize,
        #[command(flatten)]
        settings: Settings,
    },
}

/// Every setting can come from `--config FILE`; flags given on the command
/// line override the file.
#[derive(Args)]
struct Settings {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid axis `key=v1,v2,...` (repeatable).
    #[arg(long = "grid", value_name = "KEY=VALUES")]
    grid: Vec<String>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    valid: Option<String>,
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long, value_parser = ["1", "2"])]
    norm: Option<String>,
    #[arg(long, value_parser = ["smart", "smart-m", "smart-gt"])]
    variant: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long = "steps-t")]
    steps_t: Option<String>,
    #[arg(long = "steps-ta")]
    steps_ta: Option<String>,
    #[arg(long = "steps-f")]
    steps_f: Option<String>,
    #[arg(long = "valid-every")]
    valid_every: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long = "cross-phase-stop", value_parser = ["on", "off"])]
    cross_phase_stop: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma list such as Trans,Rot,Ref,Scal.
    #[arg(long = "egt-order")]
    egt_order: Option<String>,
    #[arg(long = "adherence-in")]
    adherence_in: Option<String>,
    #[arg(long = "adherence-out")]
    adherence_out: Option<String>,
    #[arg(long = "out-dir")]
    out_dir: Option<String>,
}

impl Settings {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("train", &self.train),
            ("valid", &self.valid),
            ("test", &self.test),
            ("epsilon", &self.epsilon),
            ("dim", &self.dim),
            ("gamma", &self.gamma),
            ("alpha", &self.alpha),
            ("eta", &self.eta),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("rho", &self.rho),
            ("norm", &self.norm),
            ("variant", &self.variant),
            ("steps-t", &self.steps_t),
            ("steps-ta", &self.steps_ta),
            ("steps-f", &self.steps_f),
            ("valid-every", &self.valid_every),
            ("patience", &self.patience),
            ("cross-phase-stop", &self.cross_phase_stop),
            ("runs", &self.runs),
            ("seed", &self.seed),
            ("egt-order", &self.egt_order),
            ("adherence-in", &self.adherence_in),
            ("adherence-out", &self.adherence_out),
            ("out-dir", &self.out_dir),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        for axis in &self.grid {
            let (key, values) = axis
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--grid expects KEY=VALUES, got {axis:?}")))?;
            config.set_grid(key.trim(), values)?;
        }
        Ok(config)
    }
}

fn print_metrics(m: &MetricsReport, variant: &str, phase: &str, dim: usize) {
    println!("{}", MetricsReport::TSV_HEADER);
    println!("{}", m.tsv_row(variant, phase, dim));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(settings) => {
            let config = settings.resolve()?;
            let out = cmd_train(&config)?;
            print!("{}", out.summary.to_tsv());
            eprintln!("wrote {}", config.out_dir.display());
        }
        Command::Grid(settings) => {
            let config = settings.resolve()?;
            let cells = cmd_grid(&config)?;
            let best = cells
                .iter()
                .enumerate()
                .fold(0, |b, (i, c)| if c.valid_mrr > cells[b].valid_mrr { i } else { b });
            let assignments: Vec<String> = cells[best].assignments.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!(
                "{} cells; best cell {best} ({}) with validation MRR {}",
                cells.len(),
                assignments.join(" "),
                cells[best].valid_mrr
            );
        }
        Command::Eval {
            checkpoint,
            split,
            settings,
        } => {
            let config = settings.resolve()?;
            let split: Split = split.parse()?;
            let m = cmd_eval(&checkpoint, &config, split)?;
            print_metrics(&m, config.model.variant.name(), "checkpoint", config.model.dim);
        }
        Command::Analyze { min_support, settings } => {
            let config = settings.resolve()?;
            print!("{}", cmd_analyze(&config, min_support)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
