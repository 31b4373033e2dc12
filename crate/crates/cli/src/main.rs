use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gridprompt::config::Horizon;
use gridprompt::harness::{self, SummaryRow};
use gridprompt::llm_client::{Backend, ScriptedBackend};
use gridprompt::planner;
use gridprompt::rl_baseline::{self, TrainParams};
use gridprompt::{ConfigId, RunConfig};

#[derive(Parser)]
#[command(name = "gridprompt", version, about = "Evaluate prompted LLM policies and baselines on gridworld navigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a policy over many episodes and write per-step logs and metrics.
    Run(RunArgs),
    /// Train the tabular Q-learning baseline and save its table and learning curve.
    TrainRl(TrainArgs),
    /// Ask once for a complete plan and grade it.
    Oneshot(OneshotArgs),
    /// Print the shortest plan for an episode's start.
    Oracle(OracleArgs),
    /// Collect summary.csv files into per-environment tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// YAML run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when no config is given: random, random-nav, rl, oracle, or a
    /// strategy label such as hwbp+cot+df.
    #[arg(long)]
    policy: Option<String>,
    /// Environment: empty-5x5-random, empty-16x16, crossing-9x9 (or 1, 2, 3).
    #[arg(long = "env")]
    environment: Option<ConfigId>,
    #[arg(long)]
    episodes: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Step limit per episode, or `native`.
    #[arg(long)]
    max_steps: Option<Horizon>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.policy) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(preset)) => {
                let env = self.environment.context("--env is required with --policy")?;
                RunConfig::preset(env, preset)?
            }
            (None, None) => bail!("either --config or --policy is required"),
        };
        if self.config.is_some() {
            if let Some(env) = self.environment {
                cfg.environment = env;
            }
        }
        if let Some(n) = self.episodes {
            cfg.episodes = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(h) = self.max_steps {
            cfg.max_steps = h;
        }
        if let Some(m) = &self.model {
            cfg.model.name = m.clone();
        }
        if let Some(e) = &self.endpoint {
            cfg.model.endpoint = e.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory (defaults to the config's output_dir, then ./runs/<label>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "env")]
    environment: ConfigId,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training steps; defaults to the environment's budget.
    #[arg(long)]
    steps: Option<u64>,
    /// YAML file with training parameters, overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Moving-average window for curve.csv.
    #[arg(long, default_value_t = 100)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OneshotArgs {
    #[command(flatten)]
    common: Common,
    /// Grade a saved reply instead of calling the model.
    #[arg(long)]
    reply: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long = "env")]
    environment: ConfigId,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// summary.csv files or run directories containing one.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-")
}

fn print_summary(row: &SummaryRow) {
    println!(
        "{} on {}: avg reward {:.3}, success {:.1}%, parse failures {:.3}, episodes {}",
        row.policy, row.config, row.avg_reward, row.success_rate, row.parse_failure_rate, row.episodes
    );
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let out = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("runs").join(format!("{}-{}", cfg.environment, slug(&cfg.label()))));
    let result = harness::run_eval(&cfg)?;
    harness::write_run(&result, &cfg, &out)?;
    print_summary(&result.report.summary_row());
    if !result.invalid.is_empty() {
        eprintln!("{} episode attempts were re-run after backend failures", result.invalid.len());
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut params = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            train_params_from_yaml(&text)?
        }
        None => TrainParams::for_config(args.environment),
    };
    params.seed = args.seed;
    if let Some(s) = args.steps {
        params.total_steps = s;
    }
    let outcome = rl_baseline::train_q(args.environment, &params)?;
    std::fs::create_dir_all(&args.out)?;
    outcome.table.save(&args.out.join("qtable.txt"))?;
    std::fs::write(args.out.join("curve.csv"), rl_baseline::curve_csv(&outcome.curve, args.window))?;
    let last: Vec<_> = outcome.curve.iter().rev().take(args.window).collect();
    let mean = last.iter().map(|c| c.reward).sum::<f64>() / last.len().max(1) as f64;
    println!(
        "trained {} steps over {} episodes, {} states; mean reward of the last {} episodes {:.3}",
        params.total_steps,
        outcome.curve.len(),
        outcome.table.len(),
        last.len(),
        mean
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn train_params_from_yaml(text: &str) -> Result<TrainParams> {
    // Accept the training block on its own or nested under policy.train.
    if let Ok(cfg) = RunConfig::from_yaml(text) {
        return cfg.policy.train.context("config has no policy.train block");
    }
    Ok(gridprompt::config::parse_train_params(text)?)
}

fn oneshot(args: OneshotArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let backend: Arc<dyn Backend> = match &args.reply {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Arc::new(ScriptedBackend::new([text]))
        }
        None => harness::build_backend(&cfg)?,
    };
    let outcome = harness::run_oneshot(&cfg, backend.as_ref())?;
    println!(
        "{}: {} (plan {}, optimal length {}, remaining distance {})",
        outcome.config,
        outcome.verdict.kind,
        outcome.plan.as_deref().unwrap_or("-"),
        outcome.optimal_length,
        outcome.verdict.remaining_distance
    );
    if let Some(out) = &args.out {
        harness::write_oneshot(&outcome, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::preset(args.environment, "oracle")?,
    };
    cfg.environment = args.environment;
    cfg.seed = args.seed;
    let o = harness::run_oracle(&cfg)?;
    println!("{}", planner::plan_letters(&o.plan));
    println!("{}", planner::plan_words(&o.plan));
    println!(
        "length {}, reward {:.3} at max_steps {}, success {}",
        o.plan.len(),
        o.reward,
        cfg.max_steps(),
        o.success
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for input in &args.inputs {
        let path = if input.is_dir() { input.join("summary.csv") } else { input.clone() };
        rows.extend(harness::read_summary(&path).with_context(|| format!("reading {}", path.display()))?);
    }
    let tables = harness::write_report(&rows, &args.out)?;
    print!("{}", harness::render_markdown(&tables));
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::TrainRl(a) => train(a),
        Command::Oneshot(a) => oneshot(a),
        Command::Oracle(a) => oracle(a),
        Command::Report(a) => report(a),
    }
}
