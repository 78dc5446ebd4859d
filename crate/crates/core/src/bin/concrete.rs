use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use concrete_core::data::{SynthConfig, TaskKind};
use concrete_core::estimators::{EstimatorKind, RelaxationMode};
use concrete_core::train::{self, DataSource, TrainConfig};
use concrete_core::verify;

/// Train and evaluate discrete latent-variable models with Concrete
/// relaxations.
#[derive(Parser)]
#[command(name = "concrete", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.csv and model.ckpt.
    Train(TrainArgs),
    /// Train one model per temperature and report the integrality gap.
    Sweep {
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated temperatures.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
    },
    /// Run the oracle suite and print a pass/fail table.
    Verify {
        /// Only run checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Synth,
    Mnist,
    Omniglot,
}

#[derive(Args)]
struct TrainArgs {
    /// Network specification, e.g. "(4H~16V)" or "(200H~784V)".
    #[arg(long, default_value = "(4H~16V)")]
    model: String,
    #[arg(long, default_value_t = 2)]
    arity: usize,
    #[arg(long, default_value = "density")]
    task: TaskKind,
    /// Samples per example in the training objective.
    #[arg(long, default_value_t = 5)]
    m: usize,
    /// Samples per example in the discrete evaluation bound.
    #[arg(long, default_value_t = 100)]
    m_eval: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    /// L2 coefficient on weight matrices.
    #[arg(long, default_value_t = 0.0)]
    wd: f64,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 250)]
    eval_every: usize,
    /// Cap on evaluation rows per split (0 = all).
    #[arg(long, default_value_t = 0)]
    eval_rows: usize,
    /// Posterior temperature; defaults by arity.
    #[arg(long)]
    lambda_post: Option<f64>,
    /// Prior temperature; defaults by arity.
    #[arg(long)]
    lambda_prior: Option<f64>,
    #[arg(long, default_value = "concrete")]
    estimator: EstimatorKind,
    #[arg(long, default_value = "relaxed_kl")]
    relaxation: RelaxationMode,
    #[arg(long)]
    no_centering: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "synth")]
    data: DataKind,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::new(&self.model, self.arity);
        if let Some(l) = self.lambda_post {
            c.lambda_post = l;
        }
        if let Some(l) = self.lambda_prior {
            c.lambda_prior = l;
        }
        c.task = self.task;
        c.m_train = self.m;
        c.m_eval = self.m_eval;
        c.lr = self.lr;
        c.weight_decay = self.wd;
        c.steps = self.steps;
        c.batch_size = self.batch_size;
        c.eval_every = self.eval_every;
        c.eval_rows = self.eval_rows;
        c.estimator = self.estimator;
        c.relaxation_mode = self.relaxation;
        c.centering = !self.no_centering;
        c.seed = self.seed;
        c.out_dir = self.out.clone();
        c.data = match (self.data, &self.data_dir) {
            (DataKind::Synth, _) if self.task == TaskKind::Structured => DataSource::Synth(SynthConfig::structured()),
            (DataKind::Synth, _) => DataSource::Synth(SynthConfig::default()),
            (DataKind::Mnist, Some(d)) => DataSource::Mnist(d.clone()),
            (DataKind::Omniglot, Some(d)) => DataSource::Omniglot(d.clone()),
            (_, None) => bail!("--data-dir is required for mnist and omniglot"),
        };
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config()?;
            let out = train::train(&cfg).context("training failed")?;
            println!(
                "test NLL: step 0 {:.4}, final {:.4} (relaxed {:.4}) nats/example",
                out.initial_test_nll, out.final_test_nll, out.final_relaxed_test_nll
            );
            if let Some(p) = out.metrics_path {
                println!("metrics: {}", p.display());
            }
            if let Some(p) = out.checkpoint {
                println!("checkpoint: {}", p.display());
            }
        }
        Command::Sweep { train: args, lambdas } => {
            let cfg = args.config()?;
            let rows = train::temperature_sweep(&cfg, &lambdas).context("sweep failed")?;
            println!("{}", train::SWEEP_HEADER);
            for r in &rows {
                println!("{},{:.4},{:.4},{:.4}", r.lambda, r.relaxed, r.discrete, r.gap());
            }
        }
        Command::Verify { filter } => {
            let results = verify::run_all(filter.as_deref());
            let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
            let mut failed = 0;
            for r in &results {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                failed += usize::from(!r.passed);
                println!("{tag}  {:width$}  {}", r.name, r.detail);
            }
            println!("{} checks, {} failed", results.len(), failed);
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
