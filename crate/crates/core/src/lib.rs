//! Evaluation harness for LLM agents on small MiniGrid-style navigation tasks.
//!
//! The crate holds a deterministic gridworld, a text encoder for its states,
//! a prompt composer with optional feedback sections, generation backends,
//! reply parsers, policies (random, LLM, tabular Q-learning, BFS oracle) and the
//! episode runner that ties them together.

pub mod config;
pub mod encoder;
pub mod gridworld;
pub mod harness;
pub mod llm_client;
pub mod parser;
pub mod planner;
pub mod policy;
pub mod prompt;
pub mod rl_baseline;
pub mod rng;

pub use config::{Horizon, Pairing, RunConfig};
pub use gridworld::{Action, AgentPose, ConfigId, Direction, EnvAction, GridLayout, GridState, StartRule};
pub use harness::{run_eval, run_oneshot, EpisodeRecord, EvalReport, EvalRun, SummaryRow};
pub use policy::{Policy, PolicyKind, PolicySpec};
pub use prompt::StrategyFlags;
