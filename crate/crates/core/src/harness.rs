//! Episode runner, evaluation metrics, output files, one-shot planning runs and
//! the per-environment report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, Pairing, RunConfig};
use crate::encoder::{render_grid, TextObservation};
use crate::gridworld::{generate_layout, reset, Action, ConfigId, EnvError, GridState, StepEffect};
use crate::llm_client::{self, Backend, HttpBackend, LlmError, ScriptedBackend};
use crate::parser::{classify_plan, parse_plan, PlanVerdict};
use crate::planner::{self, PlanError};
use crate::policy::{
    EpisodeContext, LlmPolicy, OraclePolicy, Policy, PolicyError, PolicyKind, RandomPolicy, RlGreedyPolicy,
};
use crate::prompt::{compose_oneshot_prompt, StrategyFlags, TransitionRecord};
use crate::rl_baseline::{self, QTable, RlError, TrainParams};
use crate::rng::{self, stream};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("episode {episode} failed {attempts} times, aborting run: {last_error}")]
    Aborted {
        episode: u64,
        attempts: u32,
        last_error: String,
    },
    #[error("run produced no valid episodes")]
    NoValidEpisodes,
    #[error("no reports to tabulate")]
    NoReports,
    #[error("{0} requires an llm policy")]
    NotLlm(&'static str),
}

/// One row of `steps.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub episode: u64,
    pub step: u32,
    pub x: i32,
    pub y: i32,
    pub dir: String,
    pub action: String,
    pub reward: f64,
    pub cumulative: f64,
    pub terminated: bool,
    pub success: bool,
    pub retries: u32,
    pub parse_failure: bool,
    pub generation_calls: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_index: u64,
    pub layout_seed: u64,
    pub start_x: i32,
    pub start_y: i32,
    pub start_dir: String,
    pub steps: u32,
    pub success: bool,
    pub cumulative_reward: f64,
    pub parse_failures: u32,
    pub generation_calls: u32,
    /// Runs needed to get a valid episode; above 1 after backend failures.
    pub attempts: u32,
    /// Not written to any output file, which keeps re-runs byte-identical.
    #[serde(skip)]
    pub duration: Duration,
}

/// An episode abandoned because the backend failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidEpisode {
    pub episode: u64,
    pub attempt: u32,
    pub error: String,
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub model: String,
    pub config: String,
    pub episodes: u32,
    pub avg_reward: f64,
    pub success_rate: f64,
    pub parse_failure_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub model: String,
    pub config: ConfigId,
    pub avg_cumulative_reward: f64,
    /// Percent of episodes that reached the goal.
    pub success_rate: f64,
    /// Fraction of decisions whose reply never parsed.
    pub parse_failure_rate: f64,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    /// Aggregates episode records; the metrics are plain means over episodes.
    pub fn from_records(
        label: String,
        model: String,
        config: ConfigId,
        episodes: Vec<EpisodeRecord>,
    ) -> Result<Self, HarnessError> {
        if episodes.is_empty() {
            return Err(HarnessError::NoValidEpisodes);
        }
        let n = episodes.len() as f64;
        let avg = episodes.iter().map(|e| e.cumulative_reward).sum::<f64>() / n;
        let successes = episodes.iter().filter(|e| e.success).count() as f64;
        let decisions: u64 = episodes.iter().map(|e| e.steps as u64).sum();
        let failures: u64 = episodes.iter().map(|e| e.parse_failures as u64).sum();
        Ok(Self {
            label,
            model,
            config,
            avg_cumulative_reward: avg,
            success_rate: 100.0 * successes / n,
            parse_failure_rate: if decisions == 0 {
                0.0
            } else {
                failures as f64 / decisions as f64
            },
            episodes,
        })
    }

    pub fn summary_row(&self) -> SummaryRow {
        SummaryRow {
            policy: self.label.clone(),
            model: self.model.clone(),
            config: self.config.name().to_string(),
            episodes: self.episodes.len() as u32,
            avg_reward: self.avg_cumulative_reward,
            success_rate: self.success_rate,
            parse_failure_rate: self.parse_failure_rate,
        }
    }
}

/// Everything one evaluation run produced.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub steps: Vec<StepLog>,
    pub invalid: Vec<InvalidEpisode>,
}

/// Seeds for one episode attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSeeds {
    pub layout: u64,
    pub start: u64,
    pub policy: u64,
}

/// Paired runs share seeds across policy rows; independent runs mix the row
/// label into the master seed. Re-runs after a backend failure get fresh seeds.
pub fn episode_seeds(cfg: &RunConfig, episode: u64, attempt: u32) -> EpisodeSeeds {
    let master = match cfg.pairing {
        Pairing::Paired => cfg.seed,
        Pairing::Independent => {
            let digest = Sha256::digest(cfg.label().as_bytes());
            let mut b = [0u8; 8];
            b.copy_from_slice(&digest[..8]);
            cfg.seed ^ u64::from_le_bytes(b)
        }
    };
    let index = episode ^ ((attempt as u64) << 48);
    EpisodeSeeds {
        layout: rng::derive_seed(master, stream::LAYOUT, index),
        start: rng::derive_seed(master, stream::START, index),
        policy: rng::derive_seed(master, stream::POLICY, index),
    }
}

/// Initial state of an episode attempt.
pub fn episode_start(cfg: &RunConfig, seeds: &EpisodeSeeds) -> GridState {
    let layout = Arc::new(generate_layout(cfg.environment, seeds.layout));
    reset(layout, seeds.start, cfg.start, cfg.max_steps())
}

/// Runs one episode to termination. The context carries policy state in and
/// out; step logs are collected only when `steps` is given.
pub fn run_episode(
    cfg: &RunConfig,
    policy: &dyn Policy,
    ctx: &mut EpisodeContext,
    seeds: &EpisodeSeeds,
    mut steps: Option<&mut Vec<StepLog>>,
) -> Result<EpisodeRecord, HarnessError> {
    let started = Instant::now();
    let mut state = episode_start(cfg, seeds);
    let start = state.pose;
    let mut parse_failures = 0;
    let mut calls = 0;
    let mut cumulative = 0.0;
    let render = policy.reads_observations();
    while !state.terminated {
        let (action, art) = policy.next_action(&state, ctx)?;
        let obs = if render { render_grid(&state) } else { TextObservation::default() };
        let out = state.apply(action)?;
        cumulative += out.reward;
        let record = TransitionRecord {
            step_index: out.state.step_count,
            observation_before: obs,
            pose_before: state.pose,
            pose_after: out.state.pose,
            action,
            reward: out.reward,
            cumulative_reward: cumulative,
            blocked: out.effect == StepEffect::Blocked,
        };
        let summary = policy.on_step_end(&record, ctx);
        parse_failures += art.parse_failure as u32;
        calls += art.generation_calls + summary.generation_calls;
        if let Some(log) = steps.as_deref_mut() {
            log.push(StepLog {
                episode: ctx.episode_index,
                step: record.step_index,
                x: out.state.pose.x,
                y: out.state.pose.y,
                dir: out.state.pose.dir.name().to_string(),
                action: action.name().to_string(),
                reward: out.reward,
                cumulative,
                terminated: out.terminated,
                success: out.state.success,
                retries: art.retries,
                parse_failure: art.parse_failure,
                generation_calls: art.generation_calls + summary.generation_calls,
                prompt: art.prompt,
                response: art.response,
                summary_prompt: summary.summary_prompt,
                summary: summary.summary,
            });
        }
        state = out.state;
    }
    Ok(EpisodeRecord {
        episode_index: ctx.episode_index,
        layout_seed: state.layout.layout_seed(),
        start_x: start.x,
        start_y: start.y,
        start_dir: start.dir.name().to_string(),
        steps: state.step_count,
        success: state.success,
        cumulative_reward: cumulative,
        parse_failures,
        generation_calls: calls,
        attempts: 1,
        duration: started.elapsed(),
    })
}

struct EpisodeResult {
    record: EpisodeRecord,
    steps: Vec<StepLog>,
    invalid: Vec<InvalidEpisode>,
    ctx: EpisodeContext,
}

/// Runs an episode, re-running it with fresh seeds after backend failures.
fn run_valid_episode(
    cfg: &RunConfig,
    policy: &dyn Policy,
    carried: &EpisodeContext,
    episode: u64,
) -> Result<EpisodeResult, HarnessError> {
    let mut invalid = Vec::new();
    for attempt in 0..=cfg.max_invalid_retries {
        let seeds = episode_seeds(cfg, episode, attempt);
        let mut ctx = carried.clone();
        ctx.episode_index = episode;
        ctx.rng = rng::seeded(seeds.policy);
        let mut steps = Vec::new();
        let log = cfg.log_steps.then_some(&mut steps);
        match run_episode(cfg, policy, &mut ctx, &seeds, log) {
            Ok(mut record) => {
                record.attempts = attempt + 1;
                return Ok(EpisodeResult {
                    record,
                    steps,
                    invalid,
                    ctx,
                });
            }
            Err(HarnessError::Policy(PolicyError::Backend(e))) => {
                tracing::warn!(episode, attempt, error = %e, "episode invalid, re-running");
                invalid.push(InvalidEpisode {
                    episode,
                    attempt,
                    error: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Err(HarnessError::Aborted {
        episode,
        attempts: cfg.max_invalid_retries + 1,
        last_error: invalid.last().map(|i| i.error.clone()).unwrap_or_default(),
    })
}

pub fn model_column(cfg: &RunConfig) -> String {
    match cfg.policy.kind {
        PolicyKind::Llm => cfg.model.name.clone(),
        _ => "-".into(),
    }
}

/// Builds the generation backend a config asks for.
pub fn build_backend(cfg: &RunConfig) -> Result<Arc<dyn Backend>, HarnessError> {
    Ok(match &cfg.model.script {
        Some(replies) => Arc::new(ScriptedBackend::new(replies.iter().cloned())),
        None => Arc::new(HttpBackend::new(&cfg.model.endpoint, &cfg.model.path)?),
    })
}

/// Q-table for an RL run: loaded from disk, or trained with the run's seed.
pub fn rl_table(cfg: &RunConfig) -> Result<QTable, HarnessError> {
    if let Some(path) = &cfg.policy.qtable {
        return Ok(QTable::load(path)?);
    }
    let params = cfg.policy.train.clone().unwrap_or_else(|| TrainParams {
        seed: cfg.seed,
        start: cfg.start,
        ..TrainParams::for_config(cfg.environment)
    });
    Ok(rl_baseline::train_q(cfg.environment, &params)?.table)
}

pub fn build_policy(cfg: &RunConfig) -> Result<Arc<dyn Policy>, HarnessError> {
    Ok(match cfg.policy.kind {
        PolicyKind::Random => Arc::new(RandomPolicy {
            space: cfg.policy.action_space,
        }),
        PolicyKind::ScriptedOracle => Arc::new(OraclePolicy),
        PolicyKind::RlGreedy => Arc::new(RlGreedyPolicy {
            table: Arc::new(rl_table(cfg)?),
        }),
        PolicyKind::Llm => {
            let mut p = LlmPolicy::new(build_backend(cfg)?, cfg.policy.strategy, cfg.model.clone())?;
            p.retry_budget = cfg.policy.retry_budget;
            p.prompt_budget = cfg.prompt_budget;
            p.pf_cadence = cfg.policy.pf_cadence;
            Arc::new(p)
        }
    })
}

pub fn run_eval(cfg: &RunConfig) -> Result<EvalRun, HarnessError> {
    cfg.validate()?;
    let policy = build_policy(cfg)?;
    run_eval_with(cfg, policy.as_ref())
}

/// Evaluates an already-built policy. Episodes run on the rayon pool unless the
/// policy carries state across episodes or the config turns parallelism off.
pub fn run_eval_with(cfg: &RunConfig, policy: &dyn Policy) -> Result<EvalRun, HarnessError> {
    cfg.validate()?;
    let parallel = !policy.is_sequential()
        && cfg
            .parallel
            .unwrap_or(cfg.policy.kind != PolicyKind::Llm);
    let capacity = cfg.policy.memory_capacity;
    let results: Vec<EpisodeResult> = if parallel {
        (0..cfg.episodes as u64)
            .into_par_iter()
            .map(|i| {
                let fresh = EpisodeContext::new(i, 0, capacity);
                run_valid_episode(cfg, policy, &fresh, i)
            })
            .collect::<Result<_, _>>()?
    } else {
        let mut out = Vec::with_capacity(cfg.episodes as usize);
        let mut carried = EpisodeContext::new(0, 0, capacity);
        for i in 0..cfg.episodes as u64 {
            let mut r = run_valid_episode(cfg, policy, &carried, i)?;
            let ended = std::mem::replace(&mut r.ctx, EpisodeContext::new(0, 0, capacity));
            carried = policy.on_episode_end(ended, i + 1, 0);
            out.push(r);
        }
        out
    };

    let mut records = Vec::with_capacity(results.len());
    let mut steps = Vec::new();
    let mut invalid = Vec::new();
    for r in results {
        records.push(r.record);
        steps.extend(r.steps);
        invalid.extend(r.invalid);
    }
    let report = EvalReport::from_records(cfg.label(), model_column(cfg), cfg.environment, records)?;
    Ok(EvalRun {
        report,
        steps,
        invalid,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `episodes.csv`, `summary.csv`, `steps.jsonl` (when logged) and
/// `invalid.jsonl` (when any episode was re-run) into `dir`.
pub fn write_run(run: &EvalRun, cfg: &RunConfig, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("episodes.csv"), &run.report.episodes)?;
    write_csv(&dir.join("summary.csv"), &[run.report.summary_row()])?;
    if cfg.log_steps {
        write_jsonl(&dir.join("steps.jsonl"), &run.steps)?;
    }
    if !run.invalid.is_empty() {
        write_jsonl(&dir.join("invalid.jsonl"), &run.invalid)?;
    }
    fs::write(dir.join("config.yaml"), cfg.to_yaml())?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Result of asking for a complete plan in one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneshotOutcome {
    pub config: String,
    pub model: String,
    pub prompt: String,
    pub response: String,
    /// Parsed plan as `L`/`R`/`F` letters, absent when nothing parsed.
    pub plan: Option<String>,
    pub optimal_length: usize,
    pub verdict: PlanVerdict,
}

/// Prompts once for a full plan from episode 0's start and grades the reply.
pub fn run_oneshot(cfg: &RunConfig, backend: &dyn Backend) -> Result<OneshotOutcome, HarnessError> {
    if cfg.policy.kind != PolicyKind::Llm {
        return Err(HarnessError::NotLlm("oneshot"));
    }
    cfg.validate()?;
    let start = episode_start(cfg, &episode_seeds(cfg, 0, 0));
    let prompt = compose_oneshot_prompt(&render_grid(&start)).render();
    let request = cfg.model.request(prompt.clone(), cfg.model.oneshot_max_tokens);
    let response = llm_client::generate(backend, &request)?.text;
    let parsed = parse_plan(&response);
    let verdict = classify_plan(&start.layout, &start, &parsed);
    Ok(OneshotOutcome {
        config: cfg.environment.name().into(),
        model: cfg.model.name.clone(),
        prompt,
        plan: parsed.as_ref().ok().map(|p| planner::plan_letters(p)),
        response,
        optimal_length: planner::optimal_length(&start.layout, start.pose)?,
        verdict,
    })
}

/// Writes `transcript.txt` and `verdict.json`.
pub fn write_oneshot(outcome: &OneshotOutcome, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("transcript.txt"),
        format!("=== prompt ===\n{}\n\n=== response ===\n{}\n", outcome.prompt, outcome.response),
    )?;
    let mut json = serde_json::to_string_pretty(outcome)?;
    json.push('\n');
    fs::write(dir.join("verdict.json"), json)?;
    Ok(())
}

/// Shortest plan from episode 0's start, and what following it earns.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSummary {
    pub plan: Vec<Action>,
    pub reward: f64,
    pub success: bool,
}

pub fn run_oracle(cfg: &RunConfig) -> Result<OracleSummary, HarnessError> {
    let mut state = episode_start(cfg, &episode_seeds(cfg, 0, 0));
    let plan = planner::shortest_plan(&state.layout, state.pose)?;
    let mut reward = 0.0;
    for &a in &plan {
        if state.terminated {
            break;
        }
        let out = state.step(a)?;
        reward += out.reward;
        state = out.state;
    }
    Ok(OracleSummary {
        plan,
        reward,
        success: state.success,
    })
}

/// Row order of the result tables; unknown labels follow in input order.
pub fn canonical_rows() -> Vec<String> {
    let mut rows = vec!["Random".to_string(), "RL".to_string()];
    rows.extend(StrategyFlags::table_rows().iter().map(|f| f.label()));
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub config: String,
    pub rows: Vec<SummaryRow>,
}

/// Groups summary rows by environment and orders each group like the result tables.
pub fn tabulate(rows: &[SummaryRow]) -> Result<Vec<ReportTable>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::NoReports);
    }
    let order = canonical_rows();
    let rank = |label: &str| order.iter().position(|l| l == label).unwrap_or(order.len());
    let mut groups: BTreeMap<usize, ReportTable> = BTreeMap::new();
    for r in rows {
        let key = ConfigId::ALL
            .iter()
            .position(|c| c.name() == r.config)
            .unwrap_or(ConfigId::ALL.len());
        groups
            .entry(key)
            .or_insert_with(|| ReportTable {
                config: r.config.clone(),
                rows: Vec::new(),
            })
            .rows
            .push(r.clone());
    }
    let mut tables: Vec<_> = groups.into_values().collect();
    for t in &mut tables {
        t.rows.sort_by_key(|r| rank(&r.policy));
    }
    Ok(tables)
}

pub fn render_markdown(tables: &[ReportTable]) -> String {
    let mut out = String::new();
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "### {}\n", t.config);
        out.push_str("| Policy | Model | Avg. Cum. Reward | Success Rate (%) |\n");
        out.push_str("|---|---|---:|---:|\n");
        for r in &t.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {:.3} | {:.0} |",
                r.policy, r.model, r.avg_reward, r.success_rate
            );
        }
    }
    out
}

/// Writes `report.md` and one `report-<config>.csv` per environment.
pub fn write_report(rows: &[SummaryRow], dir: &Path) -> Result<Vec<ReportTable>, HarnessError> {
    let tables = tabulate(rows)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.md"), render_markdown(&tables))?;
    for t in &tables {
        write_csv(&dir.join(format!("report-{}.csv", t.config)), &t.rows)?;
    }
    Ok(tables)
}
