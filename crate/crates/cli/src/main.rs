use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use commlfm::features::DesignMode;
use commlfm::pipeline::{evaluate_predictions, execute, Command, PipelineConfig, RunSummary};
use commlfm::synth::{generate_instance, run_benchmark, BenchmarkConfig};
use commlfm::Error;
use log::error;

/// Node-label prediction with latent community factors.
#[derive(Debug, Parser)]
#[command(name = "commlfm", version)]
struct Cli {
    /// Worker threads for grid searches (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Network statistics of the prepared graph.
    Stats(RunArgs),
    /// Write the prepared graph (after pruning and k-core) as an edge list.
    Kcore(RunArgs),
    /// Fit and select the link model.
    Factorize(RunArgs),
    /// Fit the classifier and write predictions.
    Train(RunArgs),
    /// Score a predictions file written by `train` or `run`.
    Evaluate(EvalArgs),
    /// Compare modes F, N and X on a generated planted-partition graph.
    Benchmark(BenchArgs),
    /// The full pipeline.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Edge list; required without --config.
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    mode: Option<DesignMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kcore: Option<usize>,
    /// Label column, or `auto` for the most frequent value.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> commlfm::Result<PipelineConfig> {
        let mut config = match (&self.config, &self.edges) {
            (Some(path), _) => PipelineConfig::from_path(path)?,
            (None, Some(edges)) => PipelineConfig::new(edges),
            (None, None) => return Err(Error::Config("pass --config or --edges".into())),
        };
        if let Some(edges) = &self.edges {
            config.edges = edges.clone();
        }
        if let Some(f) = &self.features {
            config.features = Some(f.clone());
        }
        if let Some(l) = &self.labels {
            config.labels = Some(l.clone());
        }
        if let Some(m) = self.mode {
            config.mode = m;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(k) = self.kcore {
            config.k_core_k = k;
        }
        if let Some(t) = &self.target {
            config.target = t.clone();
        }
        if let Some(o) = &self.out {
            config.out_dir = o.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// predictions.csv from `train` or `run`.
    #[arg(long)]
    predictions: PathBuf,
    /// Label recorded in the report.
    #[arg(long, default_value = "X")]
    mode: String,
    #[arg(long, default_value_t = 5)]
    percentile_step: u32,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// TOML with an `[sbm]` table and optional `[model]` settings.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Sub) -> commlfm::Result<()> {
    match command {
        Sub::Stats(a) => staged(&a, Command::Stats),
        Sub::Kcore(a) => staged(&a, Command::Kcore),
        Sub::Factorize(a) => staged(&a, Command::Factorize),
        Sub::Train(a) => staged(&a, Command::Train),
        Sub::Run(a) => staged(&a, Command::Run),
        Sub::Evaluate(a) => evaluate(&a),
        Sub::Benchmark(a) => benchmark(&a),
    }
}

fn staged(args: &RunArgs, command: Command) -> commlfm::Result<()> {
    let config = args.config()?;
    let summary = execute(&config, command)?;
    report(&config.out_dir, &summary)
}

fn report(dir: &Path, summary: &RunSummary) -> commlfm::Result<()> {
    println!("{}", serde_json::to_string_pretty(&summary.stats)?);
    if let Some(link) = &summary.link {
        println!(
            "link model: k={} gamma={} validation accuracy {:.4}, test accuracy {:.4}",
            link.k, link.gamma, link.validation_accuracy, link.test_accuracy
        );
    }
    if let Some(r) = &summary.report {
        let m = &r.metrics;
        println!(
            "mode {}: accuracy {:.4} BCR {:.4} F1 {:.4} RMSE {:.4} on {} test rows",
            r.mode, m.accuracy, m.bcr, m.f1, m.rmse, r.test_rows
        );
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn create_dir(dir: &Path) -> commlfm::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn evaluate(args: &EvalArgs) -> commlfm::Result<()> {
    let report = evaluate_predictions(&args.predictions, &args.mode, args.percentile_step)?;
    create_dir(&args.out)?;
    report.write(&args.out, "eval_")?;
    let m = &report.metrics;
    println!(
        "accuracy {:.4} BCR {:.4} precision {:.4} recall {:.4} F1 {:.4} RMSE {:.4}",
        m.accuracy, m.bcr, m.precision, m.recall, m.f1, m.rmse
    );
    Ok(())
}

fn benchmark(args: &BenchArgs) -> commlfm::Result<()> {
    let mut config = BenchmarkConfig::from_path(&args.config)?;
    if let Some(s) = args.seed {
        config.sbm.seed = s;
    }
    if let Some(o) = &args.out {
        config.out_dir = o.clone();
    }
    create_dir(&config.out_dir)?;
    generate_instance(&config.sbm)?.write(&config.out_dir)?;
    let result = run_benchmark(&config.sbm, &config.model)?;
    result.write(&config.out_dir)?;
    print!("{}", result.table);
    for w in &result.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
