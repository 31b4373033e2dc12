//! Tabular Q-learning baseline.
//!
//! States are keyed by pose plus the layout's interior-wall encoding, so the
//! crossing task stays learnable when the partition moves between episodes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{
    generate_layout, reset, Action, ConfigId, Direction, GridState, StartRule,
};
use crate::rng::{self, stream};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("q-table line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey {
    pub x: i32,
    pub y: i32,
    pub dir: Direction,
    pub layout_key: u32,
}

impl StateKey {
    pub fn of(state: &GridState) -> Self {
        Self {
            x: state.pose.x,
            y: state.pose.y,
            dir: state.pose.dir,
            layout_key: state.layout.layout_key(),
        }
    }
}

/// Action values per state; states never visited read as all zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    values: HashMap<StateKey, [f64; 3]>,
}

impl QTable {
    pub fn get(&self, key: &StateKey) -> [f64; 3] {
        self.values.get(key).copied().unwrap_or([0.0; 3])
    }

    pub fn set(&mut self, key: StateKey, values: [f64; 3]) {
        self.values.insert(key, values);
    }

    fn entry(&mut self, key: StateKey) -> &mut [f64; 3] {
        self.values.entry(key).or_insert([0.0; 3])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &[f64; 3])> {
        self.values.iter()
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .values()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Text form, one state per line in key order.
    pub fn to_text(&self) -> String {
        let mut keys: Vec<_> = self.values.keys().copied().collect();
        keys.sort();
        let mut out = String::from("# x y dir layout_key turn_left turn_right move_forward\n");
        for k in keys {
            let v = self.values[&k];
            writeln!(
                out,
                "{} {} {} {} {} {} {}",
                k.x,
                k.y,
                k.dir.name(),
                k.layout_key,
                v[0],
                v[1],
                v[2]
            )
            .expect("string write");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, RlError> {
        let mut table = QTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| RlError::Format {
                line: i + 1,
                message: message.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(err("expected 7 fields"));
            }
            let int = |s: &str| s.parse::<i32>().map_err(|_| err("bad integer"));
            let num = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err("bad value"))
            };
            let dir = Direction::ALL
                .into_iter()
                .find(|d| d.name() == f[2])
                .ok_or_else(|| err("bad direction"))?;
            let key = StateKey {
                x: int(f[0])?,
                y: int(f[1])?,
                dir,
                layout_key: f[3].parse().map_err(|_| err("bad layout key"))?,
            };
            table.set(key, [num(f[4])?, num(f[5])?, num(f[6])?]);
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn argmax(values: &[f64; 3]) -> usize {
    // Strict comparison keeps the lowest index on ties.
    let mut best = 0;
    for i in 1..3 {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Highest-valued action; ties go to the lowest action index.
pub fn greedy_action(table: &QTable, state: &GridState) -> Action {
    Action::ALL[argmax(&table.get(&StateKey::of(state)))]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub total_steps: u64,
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Steps over which epsilon decays linearly; `None` means 80% of the budget.
    pub epsilon_decay_steps: Option<u64>,
    pub seed: u64,
    /// Episode horizon during training; `None` uses the environment's native horizon.
    pub max_steps: Option<u32>,
    pub start: StartRule,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            total_steps: 30_000,
            learning_rate: 0.1,
            discount: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: None,
            seed: 0,
            max_steps: None,
            start: StartRule::Corner,
        }
    }
}

impl TrainParams {
    /// Defaults with the step budget scaled to the environment size.
    pub fn for_config(config: ConfigId) -> Self {
        Self {
            total_steps: default_budget(config),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: String| Err(RlError::InvalidParams(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} not in (0, 1]", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad(format!("discount {} not in [0, 1)", self.discount));
        }
        if !(self.epsilon_start <= 1.0
            && self.epsilon_start >= self.epsilon_end
            && self.epsilon_end >= 0.0)
        {
            return bad(format!(
                "epsilon schedule {} -> {} must satisfy 1 >= start >= end >= 0",
                self.epsilon_start, self.epsilon_end
            ));
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive".into());
        }
        Ok(())
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        let decay = self
            .epsilon_decay_steps
            .unwrap_or(self.total_steps / 5 * 4)
            .max(1);
        let frac = (step as f64 / decay as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Training budgets per environment: 30k, 300k and 3M steps.
pub fn default_budget(config: ConfigId) -> u64 {
    match config {
        ConfigId::Empty5x5Random => 30_000,
        ConfigId::Empty16x16 => 300_000,
        ConfigId::Crossing9x9 => 3_000_000,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: u64,
    pub reward: f64,
    pub steps: u32,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: QTable,
    pub curve: Vec<CurvePoint>,
}

/// One-step Q-learning with epsilon-greedy exploration. A fresh layout and
/// start are drawn for every episode; the time limit is not treated as a
/// terminal state.
pub fn train_q(config: ConfigId, params: &TrainParams) -> Result<TrainOutcome, RlError> {
    params.validate()?;
    let horizon = params.max_steps.unwrap_or_else(|| config.native_max_steps());
    let mut behaviour = rng::seeded(rng::derive_seed(params.seed, stream::TRAIN, 0));
    let mut table = QTable::default();
    let mut curve = Vec::new();
    let mut global_step = 0u64;
    let mut episode = 0u64;

    'episodes: while global_step < params.total_steps {
        let layout = Arc::new(generate_layout(
            config,
            rng::derive_seed(params.seed, stream::LAYOUT, episode),
        ));
        let mut state = reset(
            layout,
            rng::derive_seed(params.seed, stream::START, episode),
            params.start,
            horizon,
        );
        let mut total = 0.0;
        loop {
            if global_step >= params.total_steps {
                break 'episodes;
            }
            let key = StateKey::of(&state);
            let action = if behaviour.random_bool(params.epsilon_at(global_step)) {
                Action::ALL[behaviour.random_range(0..3)]
            } else {
                greedy_action(&table, &state)
            };
            let out = state.step(action).expect("training state is live");
            global_step += 1;
            total += out.reward;
            let target = if out.state.success {
                out.reward
            } else {
                let next = table.get(&StateKey::of(&out.state));
                out.reward + params.discount * next[argmax(&next)]
            };
            let q = &mut table.entry(key)[action.index()];
            *q += params.learning_rate * (target - *q);
            let done = out.terminated;
            state = out.state;
            if done {
                curve.push(CurvePoint {
                    episode,
                    reward: total,
                    steps: state.step_count,
                });
                episode += 1;
                break;
            }
        }
    }
    Ok(TrainOutcome { table, curve })
}

/// Trailing moving average over `window` points.
pub fn moving_average(curve: &[CurvePoint], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut sum = 0.0;
    curve
        .iter()
        .enumerate()
        .map(|(i, p)| {
            sum += p.reward;
            if i >= window {
                sum -= curve[i - window].reward;
            }
            sum / (i + 1).min(window) as f64
        })
        .collect()
}

/// `episode,reward,steps,moving_avg` rows for plotting.
pub fn curve_csv(curve: &[CurvePoint], window: usize) -> String {
    let avg = moving_average(curve, window);
    let mut out = String::from("episode,reward,steps,moving_avg\n");
    for (p, m) in curve.iter().zip(avg) {
        writeln!(out, "{},{},{},{}", p.episode, p.reward, p.steps, m).expect("string write");
    }
    out
}
