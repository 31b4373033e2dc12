//! Extraction of actions and plans from free-form model replies, and
//! classification of one-shot plans.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gridworld::{manhattan, Action, AgentPose, GridLayout, GridState};
use crate::planner;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub reason: String,
}

impl ParseFailure {
    fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse failure: {}", self.reason)
    }
}

/// Lower-cased words with every non-alphanumeric character as a separator.
fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

fn keyword(word: &str) -> Option<Action> {
    match word {
        "left" => Some(Action::TurnLeft),
        "right" => Some(Action::TurnRight),
        "forward" | "forwards" => Some(Action::MoveForward),
        _ => None,
    }
}

/// Picks the action named last in `text`, so a reasoning trace that weighs
/// alternatives before committing resolves to its final statement.
pub fn parse_action(text: &str) -> Result<Action, ParseFailure> {
    words(text)
        .filter_map(|w| keyword(&w))
        .last()
        .ok_or_else(|| ParseFailure::new("no action keyword"))
}

/// The part of a reply after any `<think>...</think>` block. An unclosed
/// thinking block leaves nothing to parse.
pub fn answer_region(text: &str) -> &str {
    if let Some(i) = text.rfind("</think>") {
        &text[i + "</think>".len()..]
    } else if text.contains("<think>") {
        ""
    } else {
        text
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Actions(Vec<Action>),
    /// Direction vocabulary outside the action space (`down`, `east`, `move left`).
    Unmappable,
    /// Glue that may sit inside a sequence: verbs, conjunctions, numbering.
    Neutral,
    Filler,
}

const MOVE_VERBS: &[&str] = &["move", "moves", "moving", "go", "goes", "going"];
const TURN_VERBS: &[&str] = &["turn", "turns", "turning"];
const CONNECTORS: &[&str] = &["then", "and"];
const DIRECTIONS: &[&str] = &[
    "up", "down", "upward", "upwards", "downward", "downwards", "north", "south", "east", "west",
    "back", "backward", "backwards",
];

fn tokenize(region: &str) -> Vec<Token> {
    let raw: Vec<&str> = region
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let mut out = Vec::with_capacity(raw.len());
    let mut prev_lower = String::new();
    for w in raw {
        let lower = w.to_lowercase();
        let tok = if w.chars().all(|c| matches!(c, 'F' | 'L' | 'R')) {
            Token::Actions(w.chars().filter_map(Action::from_letter).collect())
        } else if let Some(a) = keyword(&lower) {
            if a != Action::MoveForward && MOVE_VERBS.contains(&prev_lower.as_str()) {
                Token::Unmappable
            } else {
                Token::Actions(vec![a])
            }
        } else if DIRECTIONS.contains(&lower.as_str()) {
            Token::Unmappable
        } else if MOVE_VERBS.contains(&lower.as_str())
            || TURN_VERBS.contains(&lower.as_str())
            || CONNECTORS.contains(&lower.as_str())
            || lower.chars().all(|c| c.is_ascii_digit())
        {
            Token::Neutral
        } else {
            Token::Filler
        };
        out.push(tok);
        prev_lower = lower;
    }
    out
}

/// Extracts a complete plan. Accepts letter strings over `F`/`L`/`R` and
/// separated word forms; a run that mixes in directional vocabulary outside
/// the action space is rejected as a whole. The longest surviving run wins,
/// the later one on ties.
pub fn parse_plan(text: &str) -> Result<Vec<Action>, ParseFailure> {
    let region = answer_region(text);
    let mut best: Vec<Action> = Vec::new();
    let mut current: Vec<Action> = Vec::new();
    let mut poisoned = false;
    let close = |current: &mut Vec<Action>, poisoned: &mut bool, best: &mut Vec<Action>| {
        if !*poisoned && !current.is_empty() && current.len() >= best.len() {
            *best = std::mem::take(current);
        }
        current.clear();
        *poisoned = false;
    };
    for tok in tokenize(region) {
        match tok {
            Token::Actions(a) => current.extend(a),
            Token::Unmappable => poisoned = true,
            Token::Neutral => {}
            Token::Filler => close(&mut current, &mut poisoned, &mut best),
        }
    }
    close(&mut current, &mut poisoned, &mut best);
    if best.is_empty() {
        Err(ParseFailure::new("no parseable action sequence"))
    } else {
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Complete,
    NearlyComplete,
    Incomplete,
    Incorrect,
    FailedToGenerate,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictKind::Complete => "Complete",
            VerdictKind::NearlyComplete => "Nearly complete",
            VerdictKind::Incomplete => "Incomplete",
            VerdictKind::Incorrect => "Incorrect",
            VerdictKind::FailedToGenerate => "Failed to generate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanVerdict {
    pub kind: VerdictKind,
    pub terminal_pose: AgentPose,
    pub remaining_distance: i32,
    pub plan_length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRules {
    /// Largest Manhattan distance from the goal still counted as nearly complete.
    pub nearly_complete_distance: i32,
}

impl Default for VerdictRules {
    fn default() -> Self {
        Self {
            nearly_complete_distance: 1,
        }
    }
}

pub fn classify_plan(
    layout: &GridLayout,
    start: &GridState,
    parsed: &Result<Vec<Action>, ParseFailure>,
) -> PlanVerdict {
    classify_plan_with(layout, start, parsed, &VerdictRules::default())
}

pub fn classify_plan_with(
    layout: &GridLayout,
    start: &GridState,
    parsed: &Result<Vec<Action>, ParseFailure>,
    rules: &VerdictRules,
) -> PlanVerdict {
    let goal = layout.goal();
    let start_distance = manhattan(start.pose.cell(), goal);
    let plan = match parsed {
        Ok(p) => p,
        Err(_) => {
            return PlanVerdict {
                kind: VerdictKind::FailedToGenerate,
                terminal_pose: start.pose,
                remaining_distance: start_distance,
                plan_length: 0,
            }
        }
    };

    // Replay with a horizon exactly as long as the plan so the step limit never
    // cuts it short.
    let mut state = GridState {
        step_count: 0,
        max_steps: plan.len().max(1) as u32,
        terminated: false,
        success: false,
        ..start.clone()
    };
    let mut reached = state.on_goal();
    for &a in plan {
        if reached || state.terminated {
            break;
        }
        let out = state.step(a).expect("replay within horizon");
        state = out.state;
        reached = state.success;
    }
    let remaining = manhattan(state.pose.cell(), goal);
    let kind = if reached {
        VerdictKind::Complete
    } else if remaining <= rules.nearly_complete_distance {
        VerdictKind::NearlyComplete
    } else {
        let optimum = planner::optimal_length(layout, start.pose).unwrap_or(usize::MAX);
        if plan.len() < optimum && remaining < start_distance {
            VerdictKind::Incomplete
        } else {
            VerdictKind::Incorrect
        }
    };
    PlanVerdict {
        kind,
        terminal_pose: state.pose,
        remaining_distance: remaining,
        plan_length: plan.len(),
    }
}
