//! Domain model for agent interaction records: states, actions, trajectories,
//! atomic transitions, and validation of ingested records.
//!
//! A state bundles the fixed user instruction, references to visual inputs,
//! an optional task descriptor, and the execution history so far. Trajectories
//! arrive as line-delimited JSON records, are validated into [`Trajectory`]
//! values, and are decomposed into per-step [`Transition`]s for judging.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Action name used when the agent submits a final answer.
pub const ACTION_ANSWER: &str = "answer";
/// Action name used when the agent queries the experience bank.
pub const ACTION_SEARCH_EXPERIENCES: &str = "search_experiences";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed record{}: {reason}", id_suffix(.id))]
    MalformedRecord { id: Option<String>, reason: String },
    #[error("trajectory {id}: incorrect outcome requires a ground truth")]
    InconsistentOutcome { id: String },
    #[error("duplicate trajectory id {0}")]
    DuplicateTrajectoryId(String),
}

fn id_suffix(id: &Option<String>) -> String {
    match id {
        Some(id) => format!(" (trajectory {id})"),
        None => String::new(),
    }
}

/// Reference to a visual input: an opaque content id plus an optional caption.
/// The engine never touches pixels; remote embedders may resolve ids to images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualRef {
    pub id: String,
    #[serde(default)]
    pub caption: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Tool,
    Answer,
    ExperienceSearch,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Tool => "tool",
            ActionKind::Answer => "answer",
            ActionKind::ExperienceSearch => "experience_search",
        }
    }
}

/// One agent action: a tool call, a final answer, or an experience search.
/// `params` is the canonical text serialization of the arguments; `raw`
/// optionally preserves the verbatim model output that produced the action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub name: String,
    #[serde(default)]
    pub params: String,
    #[serde(default)]
    pub raw: Option<String>,
}

impl Action {
    pub fn tool(name: impl Into<String>, params: impl Into<String>) -> Self {
        Self { kind: ActionKind::Tool, name: name.into(), params: params.into(), raw: None }
    }

    pub fn answer(params: impl Into<String>) -> Self {
        Self {
            kind: ActionKind::Answer,
            name: ACTION_ANSWER.to_string(),
            params: params.into(),
            raw: None,
        }
    }

    pub fn experience_search(params: impl Into<String>) -> Self {
        Self {
            kind: ActionKind::ExperienceSearch,
            name: ACTION_SEARCH_EXPERIENCES.to_string(),
            params: params.into(),
            raw: None,
        }
    }

    fn validate(&self, id: &str) -> Result<(), ModelError> {
        match self.kind {
            ActionKind::Answer if self.name != ACTION_ANSWER => {
                Err(ModelError::MalformedRecord {
                    id: Some(id.to_string()),
                    reason: format!("answer action must be named \"answer\", got {:?}", self.name),
                })
            }
            ActionKind::Tool if self.name.trim().is_empty() => Err(ModelError::MalformedRecord {
                id: Some(id.to_string()),
                reason: "tool action requires a non-empty name".to_string(),
            }),
            _ => Ok(()),
        }
    }
}

/// One executed step: the action taken and the serialized observation it
/// produced. `step` always equals the entry's position in the history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub action: Action,
    pub observation: String,
}

/// Decision state at one reasoning step: fixed instruction, visual input
/// references, optional task descriptor, and the execution history so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub instruction: String,
    #[serde(default)]
    pub visual_refs: Vec<VisualRef>,
    #[serde(default)]
    pub task_descriptor: Option<String>,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
}

impl State {
    pub fn new(instruction: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            visual_refs: Vec::new(),
            task_descriptor: None,
            history: Vec::new(),
        }
    }

    pub fn with_visual_refs(mut self, refs: Vec<VisualRef>) -> Self {
        self.visual_refs = refs;
        self
    }

    pub fn with_task_descriptor(mut self, descriptor: impl Into<String>) -> Self {
        self.task_descriptor = Some(descriptor.into());
        self
    }

    /// Checks every state invariant; `id` scopes error messages.
    pub fn validate(&self, id: &str) -> Result<(), ModelError> {
        let malformed = |reason: String| ModelError::MalformedRecord {
            id: Some(id.to_string()),
            reason,
        };
        if self.instruction.trim().is_empty() {
            return Err(malformed("instruction is empty".to_string()));
        }
        for (i, r) in self.visual_refs.iter().enumerate() {
            if self.visual_refs[..i].iter().any(|p| p.id == r.id) {
                return Err(malformed(format!("duplicate visual ref id {:?}", r.id)));
            }
        }
        for (i, entry) in self.history.iter().enumerate() {
            if entry.step != i {
                return Err(malformed(format!(
                    "history entry {} carries step {}, expected {}",
                    i, entry.step, i
                )));
            }
            entry.action.validate(id)?;
        }
        Ok(())
    }

    /// Returns this state extended by one executed step.
    pub fn extended(&self, action: Action, observation: impl Into<String>) -> State {
        let mut next = self.clone();
        next.history.push(HistoryEntry {
            step: next.history.len(),
            action,
            observation: observation.into(),
        });
        next
    }
}

/// One executed trajectory step as stored on a trajectory record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub action: Action,
    pub observation: String,
}

/// Episode outcome. Incorrect episodes must carry the ground truth because
/// the hindsight prompt interpolates it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub correct: bool,
    #[serde(default)]
    pub ground_truth: Option<String>,
}

/// A validated episode: initial state, executed steps, and the outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub id: String,
    pub initial_state: State,
    pub steps: Vec<TrajectoryStep>,
    pub outcome: Outcome,
}

impl Trajectory {
    /// Reasoning horizon T.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Serializes back to the line-record form. Inverse of
    /// [`validate_trajectory`] on valid trajectories.
    pub fn to_record(&self) -> TrajectoryRecord {
        TrajectoryRecord {
            id: self.id.clone(),
            instruction: self.initial_state.instruction.clone(),
            visual_refs: self.initial_state.visual_refs.clone(),
            task_descriptor: self.initial_state.task_descriptor.clone(),
            steps: self
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| RecordStep {
                    step: Some(i),
                    action: s.action.clone(),
                    observation: s.observation.clone(),
                })
                .collect(),
            outcome: self.outcome.clone(),
        }
    }
}

/// Wire/file form of a trajectory: one such object per line in a trajectory
/// file, and the element type of the ingestion endpoint body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub instruction: String,
    #[serde(default)]
    pub visual_refs: Vec<VisualRef>,
    #[serde(default)]
    pub task_descriptor: Option<String>,
    pub steps: Vec<RecordStep>,
    pub outcome: Outcome,
}

/// Step element of a [`TrajectoryRecord`]. The `step` index is optional in
/// the file format; when present it must match the array position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub action: Action,
    pub observation: String,
}

/// Validates a parsed record into a [`Trajectory`], enforcing every type
/// invariant: non-empty instruction, unique visual ids, dense step indexes,
/// action shape, T >= 1, and ground truth present on incorrect outcomes.
pub fn validate_trajectory(record: TrajectoryRecord) -> Result<Trajectory, ModelError> {
    let malformed = |reason: String| ModelError::MalformedRecord {
        id: Some(record.id.clone()),
        reason,
    };
    if record.id.trim().is_empty() {
        return Err(ModelError::MalformedRecord {
            id: None,
            reason: "record id is empty".to_string(),
        });
    }
    if record.steps.is_empty() {
        return Err(malformed("trajectory has no steps".to_string()));
    }
    for (i, step) in record.steps.iter().enumerate() {
        if let Some(declared) = step.step {
            if declared != i {
                return Err(malformed(format!(
                    "step {} declares index {}, expected {}",
                    i, declared, i
                )));
            }
        }
        step.action.validate(&record.id)?;
    }
    if !record.outcome.correct && record.outcome.ground_truth.is_none() {
        return Err(ModelError::InconsistentOutcome { id: record.id });
    }

    let initial_state = State {
        instruction: record.instruction,
        visual_refs: record.visual_refs,
        task_descriptor: record.task_descriptor,
        history: Vec::new(),
    };
    initial_state.validate(&record.id)?;

    Ok(Trajectory {
        id: record.id,
        initial_state,
        steps: record
            .steps
            .into_iter()
            .map(|s| TrajectoryStep { action: s.action, observation: s.observation })
            .collect(),
        outcome: record.outcome,
    })
}

/// Atomic state-action transition: the decision context before the action,
/// the action, and the state it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub trajectory_id: String,
    pub step: usize,
    pub state_before: State,
    pub action: Action,
    pub state_after: State,
}

/// Decomposes a trajectory into its T atomic transitions. Transition `t`
/// sees the initial state extended by history entries `0..t`; its
/// `state_after` appends exactly the entry for step `t`. Pure: identical
/// inputs produce identical output.
pub fn decompose(trajectory: &Trajectory) -> Vec<Transition> {
    let mut transitions = Vec::with_capacity(trajectory.len());
    let mut state = trajectory.initial_state.clone();
    for (t, step) in trajectory.steps.iter().enumerate() {
        let state_after = state.extended(step.action.clone(), step.observation.clone());
        transitions.push(Transition {
            trajectory_id: trajectory.id.clone(),
            step: t,
            state_before: state,
            action: step.action.clone(),
            state_after: state_after.clone(),
        });
        state = state_after;
    }
    transitions
}

/// Parses a line-delimited trajectory file. Malformed lines are skipped and
/// reported; valid trajectories are returned in file order. Duplicate ids
/// within the batch are rejected as malformed lines.
pub fn parse_trajectory_lines(input: &str) -> (Vec<Trajectory>, Vec<LineError>) {
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut errors = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parsed: Result<TrajectoryRecord, _> = serde_json::from_str(line);
        match parsed {
            Ok(record) => match validate_trajectory(record) {
                Ok(t) => {
                    if !seen.insert(t.id.clone()) {
                        errors.push(LineError {
                            line: lineno,
                            message: ModelError::DuplicateTrajectoryId(t.id).to_string(),
                        });
                    } else {
                        trajectories.push(t);
                    }
                }
                Err(e) => errors.push(LineError { line: lineno, message: e.to_string() }),
            },
            Err(e) => errors.push(LineError {
                line: lineno,
                message: format!("invalid JSON: {e}"),
            }),
        }
    }
    (trajectories, errors)
}

/// A skipped input line and why it was skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}
