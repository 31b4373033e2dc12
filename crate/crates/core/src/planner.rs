//! Exact shortest-plan search over `(x, y, direction)` poses.

use std::collections::VecDeque;

use thiserror::Error;

use crate::gridworld::{Action, AgentPose, Direction, GridLayout};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("goal unreachable from {0}")]
    Unreachable(AgentPose),
}

/// Pose reached by applying `action` to `pose`, ignoring goal and step limits.
pub fn transition(layout: &GridLayout, pose: AgentPose, action: Action) -> AgentPose {
    match action {
        Action::TurnLeft => AgentPose { dir: pose.dir.left(), ..pose },
        Action::TurnRight => AgentPose { dir: pose.dir.right(), ..pose },
        Action::MoveForward => {
            let (fx, fy) = pose.front();
            if layout.is_wall(fx, fy) {
                pose
            } else {
                AgentPose::new(fx, fy, pose.dir)
            }
        }
    }
}

fn slot(layout: &GridLayout, p: AgentPose) -> usize {
    ((p.y * layout.width() + p.x) as usize) * 4 + p.dir.index()
}

/// Minimum-length action sequence from `start` to the goal. Every action costs
/// one step; expansion order TurnLeft, TurnRight, MoveForward makes the
/// returned plan deterministic.
pub fn shortest_plan(layout: &GridLayout, start: AgentPose) -> Result<Vec<Action>, PlanError> {
    shortest_plan_with_order(layout, start, &Action::ALL)
}

/// Same search with a caller-chosen expansion order.
pub fn shortest_plan_with_order(
    layout: &GridLayout,
    start: AgentPose,
    order: &[Action],
) -> Result<Vec<Action>, PlanError> {
    if layout.is_wall(start.x, start.y) {
        return Err(PlanError::Unreachable(start));
    }
    if start.cell() == layout.goal() {
        return Ok(Vec::new());
    }
    let n = (layout.width() * layout.height()) as usize * 4;
    let mut parent: Vec<Option<(AgentPose, Action)>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[slot(layout, start)] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(pose) = queue.pop_front() {
        for &a in order {
            let next = transition(layout, pose, a);
            let s = slot(layout, next);
            if seen[s] {
                continue;
            }
            seen[s] = true;
            parent[s] = Some((pose, a));
            if next.cell() == layout.goal() {
                let mut plan = vec![a];
                let mut cur = pose;
                while let Some((prev, act)) = parent[slot(layout, cur)] {
                    plan.push(act);
                    cur = prev;
                }
                plan.reverse();
                return Ok(plan);
            }
            queue.push_back(next);
        }
    }
    Err(PlanError::Unreachable(start))
}

/// Optimal plan length from `start`.
pub fn optimal_length(layout: &GridLayout, start: AgentPose) -> Result<usize, PlanError> {
    shortest_plan(layout, start).map(|p| p.len())
}

pub fn plan_letters(plan: &[Action]) -> String {
    plan.iter().map(|a| a.letter()).collect()
}

pub fn plan_words(plan: &[Action]) -> String {
    plan.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
}

/// All poses of the layout that stand on open cells.
pub fn open_poses(layout: &GridLayout) -> Vec<AgentPose> {
    layout
        .open_cells()
        .flat_map(|(x, y)| Direction::ALL.into_iter().map(move |d| AgentPose::new(x, y, d)))
        .collect()
}
