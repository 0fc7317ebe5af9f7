use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gsa_core::harness::config::PipelineConfig;
use gsa_core::harness::pipeline;
use gsa_core::harness::SplitMode;
use gsa_core::verifier::Strategy;

#[derive(Parser)]
#[command(name = "gsa", version, about = "Generate, verify and select robot task decompositions offline")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where stage outputs are read from and written to.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manage the exemplar task pool.
    #[command(subcommand)]
    Pool(PoolCommand),
    /// Sample base solutions for every configured task.
    Generate,
    /// Expand, execute and label solution trees.
    Rollout,
    /// Emit labeled prefixes and the train/test splits.
    Dataset,
    /// Train one verifier per split.
    Train,
    /// Report best-of-n selection per aggregation strategy.
    Evaluate(EvaluateArgs),
    /// Ask the judge model about every executed subtask.
    Judge,
    /// Success rates of an outcomes file.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum PoolCommand {
    /// Add successful solutions from a JSONL file of {task, solution} lines.
    Add {
        #[arg(long)]
        from: PathBuf,
    },
    List,
    Retrieve {
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        description: String,
        /// Defaults to the configured top_k.
        #[arg(long)]
        k: Option<usize>,
    },
}

#[derive(Args)]
struct EvaluateArgs {
    /// mean, geomean, min, max or last; repeatable. Defaults to the config.
    #[arg(long = "strategy")]
    strategies: Vec<String>,
    /// task or solution; repeatable. Defaults to both.
    #[arg(long = "split")]
    splits: Vec<String>,
    /// `synthetic` runs the built-in constructed suite instead of the pipeline outputs.
    #[arg(long)]
    suite: Option<String>,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        bail!("no config given; pass --config <FILE>");
    };
    if !path.is_file() {
        bail!("config file {} not found; pass --config <FILE>", path.display());
    }
    Ok(PipelineConfig::load(path)?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Metrics { input } = &cli.command {
        let m = pipeline::metrics_from_file(input)?;
        println!("ATSR {:.4}", m.atsr);
        println!("ASSR {:.4}", m.assr);
        println!("Avg. Num. of Sub. {:.2}", m.avg_subtasks);
        println!(
            "{} solutions, {} successful; {} subtasks, {} successful",
            m.counts.solutions, m.counts.successes, m.counts.subtasks, m.counts.subtask_successes
        );
        return Ok(());
    }
    let cfg = load_config(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let out = cli.out_dir.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    match cli.command {
        Command::Pool(PoolCommand::Add { from }) => print_json(&pipeline::pool_add(&cfg, &from)?)?,
        Command::Pool(PoolCommand::List) => {
            for e in pipeline::pool_list(&cfg)? {
                println!("{:>4}  {:<32}  {} subtasks  {}", e.inserted_at, e.name, e.subtasks, e.description);
            }
        }
        Command::Pool(PoolCommand::Retrieve { name, description, k }) => {
            for (task, sim) in pipeline::pool_retrieve(&cfg, &name, &description, k.unwrap_or(cfg.pool.top_k))? {
                println!("{sim:.3}  {task}");
            }
        }
        Command::Generate => print_json(&pipeline::generate(&cfg, out, seed)?)?,
        Command::Rollout => print_json(&pipeline::rollout(&cfg, out, seed)?)?,
        Command::Dataset => print_json(&pipeline::dataset(&cfg, out, seed)?)?,
        Command::Train => {
            for (mode, params) in pipeline::train_verifiers(&cfg, out, seed)? {
                println!(
                    "{}: final loss {:.6} after {} epochs -> {}",
                    mode.short(),
                    params.training_meta.final_loss,
                    params.training_meta.epochs,
                    out.join(pipeline::params_file(mode)).display()
                );
            }
        }
        Command::Evaluate(args) => {
            let strategies = if args.strategies.is_empty() {
                cfg.evaluate.strategies.clone()
            } else {
                args.strategies
                    .iter()
                    .map(|s| s.parse::<Strategy>().map_err(anyhow::Error::from))
                    .collect::<Result<Vec<_>>>()?
            };
            let report = match args.suite.as_deref() {
                Some("synthetic") => {
                    let r = pipeline::synthetic_benchmark(&cfg, seed, &strategies)?;
                    r.write(out, pipeline::REPORT_STEM)?;
                    r
                }
                Some(other) => bail!("unknown suite `{other}`; the only built-in suite is `synthetic`"),
                None => {
                    let splits = if args.splits.is_empty() {
                        SplitMode::ALL.to_vec()
                    } else {
                        args.splits
                            .iter()
                            .map(|s| {
                                SplitMode::from_short(s)
                                    .with_context(|| format!("unknown split `{s}`; expected `task` or `solution`"))
                            })
                            .collect::<Result<Vec<_>>>()?
                    };
                    pipeline::evaluate(&cfg, out, seed, &strategies, &splits)?
                }
            };
            print!("{}", report.render_text());
        }
        Command::Judge => print_json(&pipeline::judge(&cfg, out, seed)?)?,
        Command::Metrics { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
