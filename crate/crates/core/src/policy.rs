//! Policies: uniform random, LLM-driven with the feedback ladder, greedy over
//! a learned Q-table, and the BFS oracle.

use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::render_grid;
use crate::gridworld::{Action, EnvAction, GridState};
use crate::llm_client::{self, Backend, GenerationRequest, LlmError};
use crate::parser::parse_action;
use crate::planner::{self, PlanError};
use crate::prompt::{
    cap_summary_words, compose_step_prompt, compose_summary_prompt, truncate_to_budget, MemoryBuffer,
    PolicySummary, PromptError, StepInputs, StrategyFlags, TransitionRecord, DEFAULT_MEMORY_CAPACITY,
    RETRY_REMINDER,
};
use crate::rl_baseline::{greedy_action, QTable};
use crate::rng;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("backend failure: {0}")]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    Llm,
    RlGreedy,
    ScriptedOracle,
}

/// Which actions the random policy samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    /// All seven MiniGrid actions; the four non-navigation ones are no-ops.
    #[default]
    Minigrid,
    /// Only turn_left, turn_right and move_forward.
    Navigation,
}

/// When the policy-feedback summary is rewritten.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfCadence {
    #[default]
    Step,
    Episode,
}

/// Generation settings shared by every call an LLM policy makes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub name: String,
    pub endpoint: String,
    pub path: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
    pub oneshot_max_tokens: u32,
    pub timeout_secs: f64,
    /// Canned replies; when present no HTTP backend is created.
    pub script: Option<Vec<String>>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            name: "llama3.1:8b".into(),
            endpoint: "http://localhost:11434".into(),
            path: "/api/generate".into(),
            temperature: 0.0,
            seed: 0,
            max_tokens: llm_client::DEFAULT_STEP_MAX_TOKENS,
            oneshot_max_tokens: llm_client::DEFAULT_ONESHOT_MAX_TOKENS,
            timeout_secs: 120.0,
            script: None,
        }
    }
}

impl ModelSettings {
    pub fn request(&self, prompt: String, max_tokens: u32) -> GenerationRequest {
        GenerationRequest {
            model: self.name.clone(),
            prompt,
            temperature: self.temperature,
            seed: self.seed,
            max_tokens,
            timeout: Duration::from_secs_f64(self.timeout_secs.max(0.0)),
        }
    }
}

/// Per-episode mutable state owned by one episode runner.
#[derive(Debug, Clone)]
pub struct EpisodeContext {
    pub episode_index: u64,
    /// Dynamics-feedback history shown in step prompts.
    pub memory: MemoryBuffer,
    /// Trajectory the policy-feedback summary is written from.
    pub trajectory: MemoryBuffer,
    pub last_reward: Option<f64>,
    pub cumulative_reward: f64,
    pub summary: PolicySummary,
    pub rng: ChaCha8Rng,
}

impl EpisodeContext {
    pub fn new(episode_index: u64, policy_seed: u64, memory_capacity: usize) -> Self {
        Self {
            episode_index,
            memory: MemoryBuffer::with_capacity(memory_capacity),
            trajectory: MemoryBuffer::with_capacity(memory_capacity),
            last_reward: None,
            cumulative_reward: 0.0,
            summary: PolicySummary::default(),
            rng: rng::seeded(policy_seed),
        }
    }
}

/// What a policy did to produce one decision, for the step log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepArtifacts {
    pub prompt: Option<String>,
    pub response: Option<String>,
    pub retries: u32,
    pub parse_failure: bool,
    pub generation_calls: u32,
    pub summary_prompt: Option<String>,
    pub summary: Option<String>,
}

pub trait Policy: Send + Sync {
    fn label(&self) -> String;

    fn next_action(
        &self,
        state: &GridState,
        ctx: &mut EpisodeContext,
    ) -> Result<(EnvAction, StepArtifacts), PolicyError>;

    /// Folds the step just taken into the context. Returns generation
    /// artifacts when the policy summarized its strategy.
    fn on_step_end(&self, record: &TransitionRecord, ctx: &mut EpisodeContext) -> StepArtifacts {
        track_rewards(record, ctx);
        StepArtifacts::default()
    }

    /// Context for the next episode. Memory never survives a reset.
    fn on_episode_end(&self, ctx: EpisodeContext, next_index: u64, next_seed: u64) -> EpisodeContext {
        EpisodeContext::new(next_index, next_seed, ctx.memory.capacity())
    }

    /// True when episodes must run in order because state crosses resets.
    fn is_sequential(&self) -> bool {
        false
    }

    /// Whether transition records handed to `on_step_end` need the rendered
    /// observation. Rendering every step is wasted work for most policies.
    fn reads_observations(&self) -> bool {
        false
    }
}

fn track_rewards(record: &TransitionRecord, ctx: &mut EpisodeContext) {
    ctx.last_reward = Some(record.reward);
    ctx.cumulative_reward += record.reward;
}

pub struct RandomPolicy {
    pub space: ActionSpace,
}

impl Policy for RandomPolicy {
    fn label(&self) -> String {
        "Random".into()
    }

    fn next_action(
        &self,
        _state: &GridState,
        ctx: &mut EpisodeContext,
    ) -> Result<(EnvAction, StepArtifacts), PolicyError> {
        let n = match self.space {
            ActionSpace::Minigrid => EnvAction::ALL.len(),
            ActionSpace::Navigation => Action::ALL.len(),
        };
        let a = EnvAction::from_index(ctx.rng.random_range(0..n)).expect("index in range");
        Ok((a, StepArtifacts::default()))
    }
}

pub struct RlGreedyPolicy {
    pub table: Arc<QTable>,
}

impl Policy for RlGreedyPolicy {
    fn label(&self) -> String {
        "RL".into()
    }

    fn next_action(
        &self,
        state: &GridState,
        _ctx: &mut EpisodeContext,
    ) -> Result<(EnvAction, StepArtifacts), PolicyError> {
        Ok((greedy_action(&self.table, state).into(), StepArtifacts::default()))
    }
}

/// Follows a shortest plan, replanned from the current pose every step.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn label(&self) -> String {
        "Oracle".into()
    }

    fn next_action(
        &self,
        state: &GridState,
        _ctx: &mut EpisodeContext,
    ) -> Result<(EnvAction, StepArtifacts), PolicyError> {
        let plan = planner::shortest_plan(&state.layout, state.pose)?;
        let a = plan.first().copied().unwrap_or(Action::TurnLeft);
        Ok((a.into(), StepArtifacts::default()))
    }
}

pub struct LlmPolicy {
    pub backend: Arc<dyn Backend>,
    pub flags: StrategyFlags,
    pub model: ModelSettings,
    pub retry_budget: u32,
    pub prompt_budget: Option<usize>,
    pub pf_cadence: PfCadence,
}

impl LlmPolicy {
    pub fn new(backend: Arc<dyn Backend>, flags: StrategyFlags, model: ModelSettings) -> Result<Self, PolicyError> {
        flags.validate()?;
        Ok(Self {
            backend,
            flags,
            model,
            retry_budget: 3,
            prompt_budget: None,
            pf_cadence: PfCadence::Step,
        })
    }

    fn summarize(&self, ctx: &mut EpisodeContext, step_index: u32) -> StepArtifacts {
        let prompt = compose_summary_prompt(&ctx.trajectory, &ctx.summary).render();
        let request = self.model.request(prompt.clone(), self.model.max_tokens);
        let mut art = StepArtifacts {
            summary_prompt: Some(prompt),
            generation_calls: 1,
            ..Default::default()
        };
        match llm_client::generate(self.backend.as_ref(), &request) {
            Ok(resp) => {
                let text = cap_summary_words(&resp.text);
                art.summary = Some(text.clone());
                ctx.summary = PolicySummary {
                    text,
                    episode_index: ctx.episode_index,
                    step_index,
                };
            }
            Err(e) => {
                tracing::warn!(error = %e, episode = ctx.episode_index, "summary generation failed; keeping previous strategy");
            }
        }
        art
    }
}

impl Policy for LlmPolicy {
    fn label(&self) -> String {
        self.flags.label()
    }

    fn next_action(
        &self,
        state: &GridState,
        ctx: &mut EpisodeContext,
    ) -> Result<(EnvAction, StepArtifacts), PolicyError> {
        let obs = render_grid(state);
        let doc = compose_step_prompt(
            &self.flags,
            &StepInputs {
                observation: &obs,
                memory: &ctx.memory,
                last_reward: ctx.last_reward,
                cumulative_reward: ctx.cumulative_reward,
                summary: &ctx.summary,
            },
        )?;
        let doc = match self.prompt_budget {
            Some(b) => truncate_to_budget(&doc, b)?,
            None => doc,
        };
        let base = doc.render();
        let mut art = StepArtifacts::default();
        for attempt in 0..=self.retry_budget {
            let prompt = if attempt == 0 {
                base.clone()
            } else {
                format!("{base}\n\n{RETRY_REMINDER}")
            };
            let request = self.model.request(prompt.clone(), self.model.max_tokens);
            let resp = llm_client::generate(self.backend.as_ref(), &request)?;
            art.generation_calls += 1;
            art.retries = attempt;
            art.prompt = Some(prompt);
            let parsed = parse_action(&resp.text);
            art.response = Some(resp.text);
            if let Ok(a) = parsed {
                return Ok((a.into(), art));
            }
        }
        // Retries exhausted: a turn changes no position and keeps the step accounting intact.
        art.parse_failure = true;
        Ok((Action::TurnLeft.into(), art))
    }

    fn on_step_end(&self, record: &TransitionRecord, ctx: &mut EpisodeContext) -> StepArtifacts {
        track_rewards(record, ctx);
        if self.flags.df {
            ctx.memory.push(record.clone());
        }
        if self.flags.pf {
            ctx.trajectory.push(record.clone());
            if self.pf_cadence == PfCadence::Step {
                return self.summarize(ctx, record.step_index);
            }
        }
        StepArtifacts::default()
    }

    fn on_episode_end(&self, mut ctx: EpisodeContext, next_index: u64, next_seed: u64) -> EpisodeContext {
        if self.flags.pf && self.pf_cadence == PfCadence::Episode {
            let last = ctx.trajectory.records().last().map_or(0, |r| r.step_index);
            self.summarize(&mut ctx, last);
        }
        let mut next = EpisodeContext::new(next_index, next_seed, ctx.memory.capacity());
        if self.flags.pf_across_episodes {
            next.summary = ctx.summary;
        }
        next
    }

    fn is_sequential(&self) -> bool {
        self.flags.pf_across_episodes
    }

    fn reads_observations(&self) -> bool {
        self.flags.df || self.flags.pf
    }
}

fn default_retry_budget() -> u32 {
    3
}

fn default_memory_capacity() -> usize {
    DEFAULT_MEMORY_CAPACITY
}

/// The `policy` block of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    #[serde(default)]
    pub strategy: StrategyFlags,
    #[serde(default)]
    pub action_space: ActionSpace,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default)]
    pub pf_cadence: PfCadence,
    #[serde(default = "default_memory_capacity")]
    pub memory_capacity: usize,
    /// Saved Q-table for `rl_greedy`; trained on the fly when absent.
    #[serde(default)]
    pub qtable: Option<std::path::PathBuf>,
    #[serde(default)]
    pub train: Option<crate::rl_baseline::TrainParams>,
}

impl PolicySpec {
    pub fn of_kind(kind: PolicyKind) -> Self {
        Self {
            kind,
            strategy: StrategyFlags::default(),
            action_space: ActionSpace::default(),
            retry_budget: default_retry_budget(),
            pf_cadence: PfCadence::default(),
            memory_capacity: default_memory_capacity(),
            qtable: None,
            train: None,
        }
    }

    pub fn llm(strategy: StrategyFlags) -> Self {
        Self {
            strategy,
            ..Self::of_kind(PolicyKind::Llm)
        }
    }

    pub fn default_label(&self) -> String {
        match self.kind {
            PolicyKind::Random => "Random".into(),
            PolicyKind::RlGreedy => "RL".into(),
            PolicyKind::ScriptedOracle => "Oracle".into(),
            PolicyKind::Llm => self.strategy.label(),
        }
    }
}
