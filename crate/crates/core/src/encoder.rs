//! Text rendering of grid states for prompts.
//!
//! Glyphs: `W` wall, ` ` floor, `G` goal, and `>` `v` `<` `^` for the agent
//! facing East, South, West and North. The agent glyph wins over the goal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{AgentPose, Direction, EnvAction, GridState};
use crate::prompt::TransitionRecord;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextObservation {
    pub grid_block: String,
    pub pose_line: String,
    pub goal_line: String,
}

impl TextObservation {
    pub fn to_text(&self) -> String {
        format!("{}\n{}\n{}", self.grid_block, self.pose_line, self.goal_line)
    }
}

pub fn render_grid(state: &GridState) -> TextObservation {
    let layout = &state.layout;
    let pose = state.pose;
    let goal = layout.goal();
    let mut lines = Vec::with_capacity(layout.height() as usize);
    for y in 0..layout.height() {
        let line: String = (0..layout.width())
            .map(|x| {
                if (x, y) == pose.cell() {
                    pose.dir.symbol()
                } else if (x, y) == goal {
                    'G'
                } else if layout.is_wall(x, y) {
                    'W'
                } else {
                    ' '
                }
            })
            .collect();
        lines.push(line);
    }
    TextObservation {
        grid_block: lines.join("\n"),
        pose_line: format!(
            "You are at ({}, {}) facing {}.",
            pose.x,
            pose.y,
            pose.dir.name()
        ),
        goal_line: format!("The goal is at ({}, {}).", goal.0, goal.1),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GridParseError {
    #[error("grid is not rectangular")]
    Ragged,
    #[error("expected exactly one agent glyph, found {0}")]
    AgentCount(usize),
    #[error("unexpected glyph {0:?}")]
    Glyph(char),
}

/// A grid block read back into walls, pose and goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedGrid {
    pub width: i32,
    pub height: i32,
    pub walls: Vec<(i32, i32)>,
    pub pose: AgentPose,
    /// `None` when the agent glyph hides the goal.
    pub goal: Option<(i32, i32)>,
}

pub fn parse_grid_block(block: &str) -> Result<ParsedGrid, GridParseError> {
    let rows: Vec<Vec<char>> = block.lines().map(|l| l.chars().collect()).collect();
    let width = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != width) {
        return Err(GridParseError::Ragged);
    }
    let mut walls = Vec::new();
    let mut agents = Vec::new();
    let mut goal = None;
    for (y, row) in rows.iter().enumerate() {
        for (x, &c) in row.iter().enumerate() {
            let cell = (x as i32, y as i32);
            match c {
                'W' => walls.push(cell),
                'G' => goal = Some(cell),
                ' ' => {}
                other => match Direction::from_symbol(other) {
                    Some(d) => agents.push(AgentPose::new(cell.0, cell.1, d)),
                    None => return Err(GridParseError::Glyph(other)),
                },
            }
        }
    }
    if agents.len() != 1 {
        return Err(GridParseError::AgentCount(agents.len()));
    }
    Ok(ParsedGrid {
        width: width as i32,
        height: rows.len() as i32,
        walls,
        pose: agents[0],
        goal,
    })
}

/// One history line for dynamics feedback.
pub fn describe_transition(record: &TransitionRecord) -> String {
    let (b, a) = (record.pose_before, record.pose_after);
    let mut line = format!(
        "Step {}: {}: ({},{})->({},{})",
        record.step_index, record.action, b.x, b.y, a.x, a.y
    );
    if record.blocked {
        line.push_str(" blocked");
    } else if matches!(record.action, EnvAction::Left | EnvAction::Right) {
        line.push_str(&format!(" facing {}->{}", b.dir.name(), a.dir.name()));
    }
    line
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gridworld::{generate_layout, ConfigId, GridState};

    fn state(c: ConfigId, pose: AgentPose) -> GridState {
        GridState::at_pose(Arc::new(generate_layout(c, 3)), pose, 100).unwrap()
    }

    fn record(step: u32, action: EnvAction, before: AgentPose, after: AgentPose, blocked: bool) -> TransitionRecord {
        let s = state(ConfigId::Empty16x16, before);
        TransitionRecord {
            step_index: step,
            observation_before: render_grid(&s),
            pose_before: before,
            pose_after: after,
            action,
            reward: 0.0,
            cumulative_reward: 0.0,
            blocked,
        }
    }

    #[test]
    fn renders_5x5_corner() {
        let obs = render_grid(&state(ConfigId::Empty5x5Random, AgentPose::new(1, 1, Direction::East)));
        assert_eq!(obs.grid_block, "WWWWW\nW>  W\nW   W\nW  GW\nWWWWW");
        assert_eq!(obs.pose_line, "You are at (1, 1) facing east.");
        assert_eq!(obs.goal_line, "The goal is at (3, 3).");
    }

    #[test]
    fn south_glyph() {
        let obs = render_grid(&state(ConfigId::Empty5x5Random, AgentPose::new(2, 2, Direction::South)));
        assert_eq!(obs.grid_block.lines().nth(2), Some("W v W"));
    }

    #[test]
    fn agent_hides_goal() {
        let obs = render_grid(&state(ConfigId::Empty5x5Random, AgentPose::new(3, 3, Direction::West)));
        assert!(!obs.grid_block.contains('G'));
        assert_eq!(obs.grid_block.lines().nth(3), Some("W  <W"));
    }

    #[test]
    fn crossing_partition_visible() {
        let s = state(ConfigId::Crossing9x9, AgentPose::new(1, 1, Direction::East));
        let obs = render_grid(&s);
        let walls = obs.grid_block.chars().filter(|&c| c == 'W').count();
        assert_eq!(walls, 32 + 6);
    }

    #[test]
    fn transition_lines() {
        let p = |x, y, d| AgentPose::new(x, y, d);
        let moved = record(3, EnvAction::Forward, p(2, 1, Direction::East), p(3, 1, Direction::East), false);
        assert_eq!(describe_transition(&moved), "Step 3: move_forward: (2,1)->(3,1)");
        let blocked = record(4, EnvAction::Forward, p(1, 1, Direction::North), p(1, 1, Direction::North), true);
        assert!(describe_transition(&blocked).contains("blocked"));
        let turned = record(1, EnvAction::Left, p(1, 1, Direction::East), p(1, 1, Direction::North), false);
        assert_eq!(
            describe_transition(&turned),
            "Step 1: turn_left: (1,1)->(1,1) facing east->north"
        );
    }

    #[test]
    fn parse_rejects_malformed() {
        assert_eq!(parse_grid_block("WW\nW"), Err(GridParseError::Ragged));
        assert_eq!(parse_grid_block("WWW\nW W\nWWW"), Err(GridParseError::AgentCount(0)));
        assert_eq!(parse_grid_block("W>x"), Err(GridParseError::Glyph('x')));
    }
}
