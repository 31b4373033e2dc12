//! Prompt composition for every strategy row.
//!
//! A prompt is an ordered list of titled sections. The human-written base
//! prompt (task, observation, actions, answer format) is always present; each
//! feedback flag adds one section when it has something to show.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{describe_transition, TextObservation};
use crate::gridworld::{AgentPose, EnvAction};

pub const DEFAULT_MEMORY_CAPACITY: usize = 100;
pub const SUMMARY_WORD_LIMIT: usize = 120;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("policy feedback across episodes requires policy feedback")]
    AcrossWithoutPf,
    #[error("memory holds {0} transitions but no last reward was supplied")]
    MissingLastReward(usize),
    #[error("non-finite reward value {0}")]
    NonFiniteReward(f64),
    #[error("budget of {budget} characters is below the {required} required by fixed sections")]
    BudgetTooSmall { budget: usize, required: usize },
    #[error("unknown strategy component `{0}`")]
    UnknownComponent(String),
}

/// Which feedback channels are layered on top of the base prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyFlags {
    pub cot: bool,
    pub df: bool,
    pub rf: bool,
    pub crf: bool,
    pub pf: bool,
    pub pf_across_episodes: bool,
}

impl StrategyFlags {
    pub const HWBP: StrategyFlags = StrategyFlags {
        cot: false,
        df: false,
        rf: false,
        crf: false,
        pf: false,
        pf_across_episodes: false,
    };

    /// The nine rows of the evaluation tables, in table order.
    pub fn table_rows() -> [StrategyFlags; 9] {
        let b = Self::HWBP;
        let cot = Self { cot: true, ..b };
        let df = Self { df: true, ..cot };
        let rf = Self { rf: true, ..df };
        let crf = Self { crf: true, ..rf };
        let pf = Self { pf: true, ..crf };
        let across = Self { pf_across_episodes: true, ..pf };
        [
            b,
            cot,
            df,
            rf,
            crf,
            pf,
            across,
            Self { crf: true, ..b },
            Self { pf: true, ..b },
        ]
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.pf_across_episodes && !self.pf {
            return Err(PromptError::AcrossWithoutPf);
        }
        Ok(())
    }

    fn bits(&self) -> u8 {
        [self.cot, self.df, self.rf, self.crf, self.pf, self.pf_across_episodes]
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | ((b as u8) << i))
    }

    pub fn from_bits(bits: u8) -> Self {
        let f = |i: u8| bits & (1 << i) != 0;
        Self {
            cot: f(0),
            df: f(1),
            rf: f(2),
            crf: f(3),
            pf: f(4),
            pf_across_episodes: f(5),
        }
    }

    pub fn is_subset_of(&self, other: &StrategyFlags) -> bool {
        self.bits() & !other.bits() == 0
    }

    /// Row label such as `HWBP + CoT + DF`.
    pub fn label(&self) -> String {
        let mut parts = vec!["HWBP"];
        for (on, name) in [
            (self.cot, "CoT"),
            (self.df, "DF"),
            (self.rf, "RF"),
            (self.crf, "CRF"),
            (self.pf, "PF"),
        ] {
            if on {
                parts.push(name);
            }
        }
        let mut s = parts.join(" + ");
        if self.pf_across_episodes {
            s.push_str(" across episodes");
        }
        s
    }

    /// Parses labels like `hwbp+cot+df`; `across` turns on cross-episode PF.
    pub fn parse_label(label: &str) -> Result<Self, PromptError> {
        let mut f = Self::HWBP;
        let normalized = label.to_ascii_lowercase().replace(" across episodes", " + across");
        for part in normalized.split('+').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "hwbp" => {}
                "cot" => f.cot = true,
                "df" => f.df = true,
                "rf" => f.rf = true,
                "crf" => f.crf = true,
                "pf" => f.pf = true,
                "across" | "pf-across" | "pf_across_episodes" => {
                    f.pf = true;
                    f.pf_across_episodes = true;
                }
                other => return Err(PromptError::UnknownComponent(other.to_string())),
            }
        }
        Ok(f)
    }
}

impl fmt::Display for StrategyFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub step_index: u32,
    pub observation_before: TextObservation,
    pub pose_before: AgentPose,
    pub pose_after: AgentPose,
    pub action: EnvAction,
    pub reward: f64,
    pub cumulative_reward: f64,
    pub blocked: bool,
}

/// Bounded transition history; the oldest record is evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    records: VecDeque<TransitionRecord>,
    capacity: usize,
}

impl Default for MemoryBuffer {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_MEMORY_CAPACITY)
    }
}

impl MemoryBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            records: VecDeque::with_capacity(capacity.min(1024)),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, record: TransitionRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn records(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    pub fn reward_sum(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }
}

/// The model's own strategy notes for policy feedback.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub text: String,
    pub episode_index: u64,
    pub step_index: u32,
}

impl PolicySummary {
    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty()
    }
}

/// Cuts `text` to at most `SUMMARY_WORD_LIMIT` whitespace-separated words.
pub fn cap_summary_words(text: &str) -> String {
    text.split_whitespace()
        .take(SUMMARY_WORD_LIMIT)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SectionId {
    Task,
    Observation,
    Actions,
    Strategy,
    History,
    LastReward,
    CumulativeReward,
    Reasoning,
    Format,
}

impl SectionId {
    pub fn title(self) -> &'static str {
        match self {
            SectionId::Task => "Task",
            SectionId::Observation => "Current state",
            SectionId::Actions => "Available actions",
            SectionId::Strategy => "Your strategy",
            SectionId::History => "Previous actions",
            SectionId::LastReward => "Last reward",
            SectionId::CumulativeReward => "Cumulative reward",
            SectionId::Reasoning => "Reasoning",
            SectionId::Format => "Answer format",
        }
    }

    fn truncatable(self) -> bool {
        matches!(self, SectionId::History | SectionId::Strategy)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDocument {
    pub sections: Vec<(SectionId, String)>,
}

fn render_section(id: SectionId, body: &str) -> String {
    format!("## {}\n{}", id.title(), body)
}

impl PromptDocument {
    pub fn section(&self, id: SectionId) -> Option<&str> {
        self.sections
            .iter()
            .find(|(s, _)| *s == id)
            .map(|(_, b)| b.as_str())
    }

    pub fn ids(&self) -> Vec<SectionId> {
        self.sections.iter().map(|(s, _)| *s).collect()
    }

    pub fn has(&self, id: SectionId) -> bool {
        self.section(id).is_some()
    }

    pub fn render(&self) -> String {
        self.sections
            .iter()
            .map(|(id, body)| render_section(*id, body))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn char_len(&self) -> usize {
        self.render().chars().count()
    }
}

impl fmt::Display for PromptDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

const TASK: &str = "You control an agent in a grid world. Move the agent onto the goal square G using as few actions as possible.\n\
Legend: W is a wall, G is the goal, a blank is empty floor, and the agent is drawn as >, v, < or ^ when it faces east, south, west or north.\n\
Coordinates are (x, y): x is the column and grows to the east, y is the row and grows to the south.\n\
Walls block movement: moving forward into a wall leaves the agent where it is. Every action uses one step, and the episode ends when the agent reaches the goal or runs out of steps.";

const ACTIONS: &str = "turn_left: turn 90 degrees counter-clockwise without moving\n\
turn_right: turn 90 degrees clockwise without moving\n\
move_forward: move one cell in the direction the agent is facing";

const STEP_FORMAT: &str = "Choose exactly one action. End your reply with a final line of the form\n\
Action: <turn_left|turn_right|move_forward>";

const REASONING: &str = "Think step by step before you answer: compare your position with the goal, work out which direction you need to face, and check whether the cell in front of you is a wall. Write this reasoning first, then give your final action.";

const ONESHOT_FORMAT: &str = "Instructions:\n\
1. Work out where the agent is and which way it faces relative to the goal.\n\
2. Plan every action needed to bring the agent onto the goal.\n\
Give the full sequence of actions in a single reply, either as action names separated by commas (for example: move_forward, turn_right, move_forward) or as one string of letters with F = move_forward, L = turn_left, R = turn_right (for example: FRF).";

/// Appended to a step prompt after an unparseable reply.
pub const RETRY_REMINDER: &str =
    "Your previous reply did not name a valid action. Reply with exactly one of: turn_left, turn_right, move_forward.";

fn fmt_reward(r: f64) -> String {
    format!("{r:.3}")
}

fn history_lines<'a>(records: impl Iterator<Item = &'a TransitionRecord>) -> String {
    records.map(describe_transition).collect::<Vec<_>>().join("\n")
}

/// Everything a step prompt may draw on.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs<'a> {
    pub observation: &'a TextObservation,
    pub memory: &'a MemoryBuffer,
    /// Reward of the previous step; `None` before the first step.
    pub last_reward: Option<f64>,
    pub cumulative_reward: f64,
    pub summary: &'a PolicySummary,
}

pub fn compose_step_prompt(
    flags: &StrategyFlags,
    inputs: &StepInputs<'_>,
) -> Result<PromptDocument, PromptError> {
    flags.validate()?;
    if inputs.last_reward.is_none() && !inputs.memory.is_empty() {
        return Err(PromptError::MissingLastReward(inputs.memory.len()));
    }
    for r in inputs.last_reward.into_iter().chain([inputs.cumulative_reward]) {
        if !r.is_finite() {
            return Err(PromptError::NonFiniteReward(r));
        }
    }

    let mut sections = vec![
        (SectionId::Task, TASK.to_string()),
        (SectionId::Observation, inputs.observation.to_text()),
        (SectionId::Actions, ACTIONS.to_string()),
    ];
    if flags.pf && !inputs.summary.is_empty() {
        sections.push((SectionId::Strategy, inputs.summary.text.trim().to_string()));
    }
    if flags.df && !inputs.memory.is_empty() {
        sections.push((SectionId::History, history_lines(inputs.memory.records())));
    }
    if flags.rf {
        if let Some(r) = inputs.last_reward {
            sections.push((
                SectionId::LastReward,
                format!("The reward for your last action was {}.", fmt_reward(r)),
            ));
        }
    }
    if flags.crf {
        sections.push((
            SectionId::CumulativeReward,
            format!(
                "Total reward collected in this episode so far: {}.",
                fmt_reward(inputs.cumulative_reward)
            ),
        ));
    }
    if flags.cot {
        sections.push((SectionId::Reasoning, REASONING.to_string()));
    }
    sections.push((SectionId::Format, STEP_FORMAT.to_string()));
    Ok(PromptDocument { sections })
}

/// Asks the model to (re)write its strategy from the trajectory so far.
pub fn compose_summary_prompt(trajectory: &MemoryBuffer, prior: &PolicySummary) -> PromptDocument {
    let previous = if prior.is_empty() {
        "Previous strategy: none yet.".to_string()
    } else {
        format!("Previous strategy:\n\"{}\"", prior.text.trim())
    };
    let history = if trajectory.is_empty() {
        "No actions taken yet.".to_string()
    } else {
        history_lines(trajectory.records())
    };
    let ask = if trajectory.is_empty() && prior.is_empty() {
        "Write an initial strategy for reaching the goal"
    } else {
        "Update your strategy for reaching the goal based on what has happened so far"
    };
    PromptDocument {
        sections: vec![
            (SectionId::Task, TASK.to_string()),
            (SectionId::Strategy, previous),
            (SectionId::History, history),
            (
                SectionId::Format,
                format!(
                    "{ask}. Use at most {SUMMARY_WORD_LIMIT} words. It will be shown to you before your next decisions. Reply with the strategy text only."
                ),
            ),
        ],
    }
}

/// Requests a complete plan from the initial observation in one reply.
pub fn compose_oneshot_prompt(observation: &TextObservation) -> PromptDocument {
    PromptDocument {
        sections: vec![
            (SectionId::Task, TASK.to_string()),
            (SectionId::Observation, observation.to_text()),
            (SectionId::Actions, ACTIONS.to_string()),
            (SectionId::Format, ONESHOT_FORMAT.to_string()),
        ],
    }
}

/// Shrinks `doc` below `budget` characters: oldest history lines go first,
/// then the tail of the strategy text. Other sections are never touched.
pub fn truncate_to_budget(doc: &PromptDocument, budget: usize) -> Result<PromptDocument, PromptError> {
    if doc.char_len() <= budget {
        return Ok(doc.clone());
    }
    let fixed: Vec<_> = doc
        .sections
        .iter()
        .filter(|(id, _)| !id.truncatable())
        .cloned()
        .collect();
    let required = PromptDocument { sections: fixed }.char_len();
    if required > budget {
        return Err(PromptError::BudgetTooSmall { budget, required });
    }

    let mut out = doc.clone();
    if let Some(pos) = out.sections.iter().position(|(id, _)| *id == SectionId::History) {
        let mut lines: VecDeque<String> = out.sections[pos].1.lines().map(String::from).collect();
        while out.char_len() > budget && !lines.is_empty() {
            lines.pop_front();
            if lines.is_empty() {
                out.sections.remove(pos);
            } else {
                out.sections[pos].1 = lines.iter().cloned().collect::<Vec<_>>().join("\n");
            }
        }
    }
    if out.char_len() > budget {
        if let Some(pos) = out.sections.iter().position(|(id, _)| *id == SectionId::Strategy) {
            let excess = out.char_len() - budget;
            let body: Vec<char> = out.sections[pos].1.chars().collect();
            if excess >= body.len() {
                out.sections.remove(pos);
            } else {
                out.sections[pos].1 = body[..body.len() - excess].iter().collect();
            }
        }
    }
    debug_assert!(out.char_len() <= budget);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::encoder::render_grid;
    use crate::gridworld::{generate_layout, ConfigId, Direction, GridState};

    fn obs() -> TextObservation {
        let l = Arc::new(generate_layout(ConfigId::Empty5x5Random, 0));
        render_grid(&GridState::at_pose(l, AgentPose::new(1, 1, Direction::East), 100).unwrap())
    }

    fn record(step: u32) -> TransitionRecord {
        let p = AgentPose::new(1, 1, Direction::East);
        TransitionRecord {
            step_index: step,
            observation_before: obs(),
            pose_before: p,
            pose_after: p,
            action: EnvAction::Left,
            reward: 0.0,
            cumulative_reward: 0.0,
            blocked: false,
        }
    }

    fn memory(n: u32) -> MemoryBuffer {
        let mut m = MemoryBuffer::default();
        for i in 1..=n {
            m.push(record(i));
        }
        m
    }

    #[test]
    fn base_prompt_sections() {
        let o = obs();
        let (m, s) = (MemoryBuffer::default(), PolicySummary::default());
        let inputs = StepInputs {
            observation: &o,
            memory: &m,
            last_reward: None,
            cumulative_reward: 0.0,
            summary: &s,
        };
        let doc = compose_step_prompt(&StrategyFlags::HWBP, &inputs).unwrap();
        use SectionId::*;
        assert_eq!(doc.ids(), vec![Task, Observation, Actions, Format]);
        let cot = compose_step_prompt(&StrategyFlags { cot: true, ..Default::default() }, &inputs).unwrap();
        assert_eq!(cot.ids(), vec![Task, Observation, Actions, Reasoning, Format]);
        for a in ["turn_left", "turn_right", "move_forward"] {
            assert!(doc.section(Actions).unwrap().contains(a));
        }
    }

    #[test]
    fn full_ladder_after_two_steps() {
        let o = obs();
        let m = memory(2);
        let s = PolicySummary {
            text: "head east then south".into(),
            ..Default::default()
        };
        let flags = StrategyFlags {
            cot: true,
            df: true,
            rf: true,
            crf: true,
            pf: true,
            pf_across_episodes: false,
        };
        let doc = compose_step_prompt(
            &flags,
            &StepInputs {
                observation: &o,
                memory: &m,
                last_reward: Some(0.0),
                cumulative_reward: m.reward_sum(),
                summary: &s,
            },
        )
        .unwrap();
        assert_eq!(doc.sections.len(), 9);
        assert_eq!(doc.section(SectionId::History).unwrap().lines().count(), 2);
        assert!(doc.section(SectionId::CumulativeReward).unwrap().contains("0.000"));
    }

    #[test]
    fn inconsistent_inputs_rejected() {
        let o = obs();
        let m = memory(1);
        let s = PolicySummary::default();
        let inputs = StepInputs {
            observation: &o,
            memory: &m,
            last_reward: None,
            cumulative_reward: 0.0,
            summary: &s,
        };
        assert_eq!(
            compose_step_prompt(&StrategyFlags::HWBP, &inputs),
            Err(PromptError::MissingLastReward(1))
        );
        let bad = StrategyFlags {
            pf_across_episodes: true,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(PromptError::AcrossWithoutPf));
    }

    #[test]
    fn memory_evicts_oldest() {
        let mut m = MemoryBuffer::with_capacity(3);
        for i in 1..=5 {
            m.push(record(i));
        }
        let steps: Vec<_> = m.records().map(|r| r.step_index).collect();
        assert_eq!(steps, vec![3, 4, 5]);
    }

    #[test]
    fn summary_prompt_shapes() {
        let empty = compose_summary_prompt(&MemoryBuffer::default(), &PolicySummary::default());
        assert!(empty.render().contains("initial strategy"));
        let five = compose_summary_prompt(&memory(5), &PolicySummary::default());
        assert_eq!(five.section(SectionId::History).unwrap().lines().count(), 5);
        let prior = PolicySummary {
            text: "go to the corner".into(),
            ..Default::default()
        };
        let quoted = compose_summary_prompt(&memory(1), &prior);
        assert!(quoted
            .section(SectionId::Strategy)
            .unwrap()
            .contains("Previous strategy:\n\"go to the corner\""));
        assert!(quoted.render().contains("at most 120 words"));
    }

    #[test]
    fn oneshot_prompt_passes_observation_through() {
        let o = obs();
        let doc = compose_oneshot_prompt(&o);
        assert_eq!(doc.section(SectionId::Observation).unwrap(), o.to_text());
        let text = doc.render();
        assert!(text.contains("Plan every action needed"));
        assert!(text.contains("full sequence of actions"));
    }

    #[test]
    fn truncation() {
        let o = obs();
        let m = memory(100);
        let s = PolicySummary::default();
        let flags = StrategyFlags { df: true, ..Default::default() };
        let doc = compose_step_prompt(
            &flags,
            &StepInputs {
                observation: &o,
                memory: &m,
                last_reward: Some(0.0),
                cumulative_reward: 0.0,
                summary: &s,
            },
        )
        .unwrap();
        assert_eq!(truncate_to_budget(&doc, 1_000_000).unwrap(), doc);

        let budget = doc.char_len() - 500;
        let cut = truncate_to_budget(&doc, budget).unwrap();
        assert!(cut.char_len() <= budget);
        let hist = cut.section(SectionId::History).unwrap();
        assert!(hist.lines().last().unwrap().starts_with("Step 100:"));
        assert!(!hist.contains("Step 1:"));
        for id in [SectionId::Task, SectionId::Observation, SectionId::Actions, SectionId::Format] {
            assert_eq!(cut.section(id), doc.section(id));
        }
        assert!(matches!(
            truncate_to_budget(&doc, 50),
            Err(PromptError::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn strategy_tail_truncated_after_history() {
        let o = obs();
        let m = MemoryBuffer::default();
        let s = PolicySummary {
            text: "word ".repeat(100),
            ..Default::default()
        };
        let flags = StrategyFlags { pf: true, ..Default::default() };
        let doc = compose_step_prompt(
            &flags,
            &StepInputs {
                observation: &o,
                memory: &m,
                last_reward: None,
                cumulative_reward: 0.0,
                summary: &s,
            },
        )
        .unwrap();
        let budget = doc.char_len() - 100;
        let cut = truncate_to_budget(&doc, budget).unwrap();
        assert!(cut.char_len() <= budget);
        let kept = cut.section(SectionId::Strategy).unwrap();
        assert!(doc.section(SectionId::Strategy).unwrap().starts_with(kept));
    }

    #[test]
    fn labels_round_trip() {
        for row in StrategyFlags::table_rows() {
            assert_eq!(StrategyFlags::parse_label(&row.label()).unwrap(), row);
        }
        assert_eq!(
            StrategyFlags::parse_label("hwbp+cot+df").unwrap(),
            StrategyFlags { cot: true, df: true, ..Default::default() }
        );
        assert!(StrategyFlags::parse_label("hwbp+mcts").is_err());
    }

    #[test]
    fn summary_word_cap() {
        let long = "a ".repeat(300);
        assert_eq!(cap_summary_words(&long).split_whitespace().count(), 120);
    }
}
