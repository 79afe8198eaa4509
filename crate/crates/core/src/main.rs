use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use listrec_core::config::RunConfig;
use listrec_core::data::SyntheticSpec;
use listrec_core::error::Result;
use listrec_core::eval::SweepKnob;
use listrec_core::pipeline::{
    evaluate_dir, gen_data, rerank_file, sweep_to_dir, train_to_dir, DataPaths,
};
use listrec_core::rerank::RerankMethod;
use listrec_core::tensor::Real;

/// Diversity-aware list-wise news recommendation.
#[derive(Parser)]
#[command(name = "listrec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize a synthetic impression log (news, behaviors, embeddings).
    GenData(GenDataArgs),
    /// Train a model and write checkpoint + loss trace to a model directory.
    Train(TrainArgs),
    /// Evaluate a trained model directory on the test split.
    Evaluate(EvaluateArgs),
    /// Rerank a scores file with MMR or DPP.
    Rerank(RerankArgs),
    /// Sweep the accuracy-diversity knob (lambda or theta) over a grid.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 2000)]
    news: usize,
    #[arg(long, default_value_t = 5)]
    topics: usize,
    #[arg(long, default_value_t = 24)]
    topic_dim: usize,
    #[arg(long, default_value_t = 12)]
    candidates: usize,
    #[arg(long, default_value_t = 4)]
    train_impressions_per_user: usize,
    #[arg(long, default_value_t = 1)]
    test_impressions_per_user: usize,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single config keys (repeatable), e.g. --set lambda=20.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand overrides for the most common knobs.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<Real>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<Real>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long, value_name = "MODE")]
    mode: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for pair in &self.set {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                listrec_core::Error::invalid(format!("--set expects KEY=VALUE, got `{pair}`"))
            })?;
            cfg.apply(key.trim(), value)?;
        }
        if let Some(seed) = self.seed {
            cfg.apply("seed", &seed.to_string())?;
        }
        if let Some(lambda) = self.lambda {
            cfg.apply("lambda", &lambda.to_string())?;
        }
        if let Some(epochs) = self.epochs {
            cfg.apply("epochs", &epochs.to_string())?;
        }
        if let Some(lr) = self.lr {
            cfg.apply("lr", &lr.to_string())?;
        }
        if let Some(objective) = &self.objective {
            cfg.apply("objective", objective)?;
        }
        if let Some(mode) = &self.mode {
            cfg.apply("list_encoder_mode", mode)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (news.tsv, train_behaviors.tsv, embeddings.txt).
    #[arg(long)]
    data: PathBuf,
    /// Model output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model directory produced by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory (news.tsv, test_behaviors.tsv, embeddings.txt).
    #[arg(long)]
    data: PathBuf,
    /// Report output directory (report.tsv, report.txt).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Inference-seed repeats to average over.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Optional post-processing reranker: none, mmr or dpp.
    #[arg(long, default_value = "none")]
    method: String,
    /// Tradeoff knob for the reranker (beta for mmr, theta for dpp).
    #[arg(long, default_value_t = 0.9)]
    tradeoff: Real,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct RerankArgs {
    /// none, mmr or dpp.
    #[arg(long)]
    method: String,
    /// Input lines: impression_id<TAB>scores(csv)<TAB>similarity(csv row-major).
    #[arg(long)]
    input: PathBuf,
    /// Output lines: impression_id<TAB>order(csv, 0-based indices).
    #[arg(long)]
    output: PathBuf,
    /// Tradeoff knob (beta for mmr in [0,1], theta for dpp in (0,1)).
    #[arg(long, default_value_t = 0.9)]
    tradeoff: Real,
    /// Select only the top k; remaining items are appended by relevance.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// lambda (retrain per value) or theta (rerank per value).
    #[arg(long)]
    knob: String,
    /// Comma-separated grid, e.g. 0,5,20.
    #[arg(long)]
    grid: String,
    #[arg(long)]
    data: PathBuf,
    /// Output directory for sweep.tsv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2024)]
    eval_seed: u64,
    #[command(flatten)]
    config: ConfigArgs,
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => {
            let spec = SyntheticSpec {
                seed: args.seed,
                n_users: args.users,
                n_news: args.news,
                n_topics: args.topics,
                topic_dim: args.topic_dim,
                candidates_per_impression: args.candidates,
                train_impressions_per_user: args.train_impressions_per_user,
                test_impressions_per_user: args.test_impressions_per_user,
                ..Default::default()
            };
            gen_data(&spec, &args.out)?;
            println!(
                "generated {} users x ({} train + {} test) impressions, {} news, {} topics (seed {}) -> {}",
                spec.n_users,
                spec.train_impressions_per_user,
                spec.test_impressions_per_user,
                spec.n_news,
                spec.n_topics,
                spec.seed,
                args.out.display()
            );
        }
        Command::Train(args) => {
            let cfg = args.config.resolve()?;
            let data = DataPaths::from_dir(&args.data);
            println!("resolved config:\n{}", cfg.to_key_values());
            let outcome = train_to_dir(cfg, &data, &args.out)?;
            let last = outcome.report.trace.last();
            println!(
                "trained {} steps ({} impressions skipped); final loss {}",
                outcome.report.trace.len(),
                outcome.report.skipped,
                last.map_or("n/a".into(), |r| format!("{:.6}", r.l_total)),
            );
            println!("model written to {}", args.out.display());
        }
        Command::Evaluate(args) => {
            let method: RerankMethod = args.method.parse()?;
            let data = DataPaths::from_dir(&args.data);
            let outcome = evaluate_dir(
                &args.model,
                &data,
                args.out.as_deref(),
                args.repeats,
                method,
                args.tradeoff,
                args.seed,
            )?;
            println!(
                "evaluated {} impressions over {} run(s) (seed {})",
                outcome.mean.n_impressions,
                outcome.runs.len(),
                args.seed
            );
            print!("{}", outcome.mean.table());
            if let Some(out) = &args.out {
                println!("report written to {}", out.display());
            }
        }
        Command::Rerank(args) => {
            let method: RerankMethod = args.method.parse()?;
            let n = rerank_file(&args.input, &args.output, method, args.tradeoff, args.k)?;
            println!(
                "reranked {n} impression(s) with {} (tradeoff {}) -> {}",
                args.method,
                args.tradeoff,
                args.output.display()
            );
        }
        Command::Sweep(args) => {
            let knob: SweepKnob = args.knob.parse()?;
            let grid: Vec<Real> = args
                .grid
                .split(',')
                .map(|v| {
                    v.trim().parse::<Real>().map_err(|_| {
                        listrec_core::Error::invalid(format!("bad grid value `{v}`"))
                    })
                })
                .collect::<Result<_>>()?;
            let cfg = args.config.resolve()?;
            let data = DataPaths::from_dir(&args.data);
            println!("resolved config:\n{}", cfg.to_key_values());
            let rows = sweep_to_dir(cfg, &data, knob, &grid, &args.out, args.eval_seed)?;
            print!("{}", listrec_core::eval::sweep_table(knob, &rows));
            println!("sweep written to {}", args.out.join("sweep.tsv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
