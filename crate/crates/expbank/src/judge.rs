//! Hindsight judging: render the evaluation prompt for a finished
//! trajectory, obtain per-step (quality score, experience text) pairs, and
//! validate them.
//!
//! The prompt branches on the episode outcome. Correct episodes are scored
//! on a quality rubric; incorrect episodes are scored on a blame rubric and
//! the prompt interpolates the ground truth. A judgement is a scalar
//! q_value in [0, 10] plus distilled advice a future agent sees before the
//! same kind of decision.
//!
//! Two judges implement the same trait: [`RemoteJudge`] posts the prompt to
//! a chat endpoint and parses the reply; [`ScriptedJudge`] replays a fixed
//! step-to-judgement mapping for deterministic pipelines and tests.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Duration;
use thiserror::Error;

use crate::model::{ActionKind, Trajectory};

/// Environment variable selecting the remote judge endpoint.
pub const JUDGE_URL_ENV: &str = "EXPBANK_JUDGE_URL";

const CORRECT_TEMPLATE: &str = include_str!("judge/hindsight_correct.txt");
const INCORRECT_TEMPLATE: &str = include_str!("judge/hindsight_incorrect.txt");

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("no well-formed judgement array in model output")]
    Unparseable,
    #[error("duplicate judged step {0}")]
    DuplicateStep(i64),
    #[error("no script entry for trajectory {trajectory} step {step}")]
    MissingScriptEntry { trajectory: String, step: usize },
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("judge unavailable: {0}")]
    Unavailable(String),
    #[error("trajectory {0} is incorrect but has no ground truth")]
    InconsistentOutcome(String),
}

/// One validated per-step judgement: the scalar score and the distilled
/// experience text.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJudgement {
    pub step: usize,
    pub q_value: f64,
    pub experience_text: String,
}

/// Why a step from the judge's output was dropped instead of used.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    /// q_value outside [0, 10]; rejected rather than clamped so the bank
    /// filter never sees fabricated values.
    ScoreOutOfRange(f64),
    /// state index outside 0..T.
    StepOutOfBounds,
    /// experience text empty after trimming.
    EmptyExperience,
    /// experience text contains the ground truth verbatim.
    GroundTruthLeak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedStep {
    pub step: i64,
    pub reason: RejectReason,
}

/// Parsed judge output: validated judgements plus per-step rejections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedJudgements {
    pub accepted: Vec<StepJudgement>,
    pub rejected: Vec<RejectedStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    Remote,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub mode: JudgeMode,
    pub model_name: String,
    pub max_retries: u32,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self { mode: JudgeMode::Scripted, model_name: "scripted".to_string(), max_retries: 2 }
    }
}

/// Substitutes `{name}` tokens for the given variables in one pass. Unknown
/// braces are left untouched, so literal JSON in the template survives.
fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let after = &rest[pos..];
        let bytes = after.as_bytes();
        for (key, value) in vars {
            let kb = key.as_bytes();
            if bytes.len() > kb.len() + 1
                && &bytes[1..=kb.len()] == kb
                && bytes[kb.len() + 1] == b'}'
            {
                out.push_str(value);
                rest = &after[kb.len() + 2..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &after[1..];
    }
    out.push_str(rest);
    out
}

fn images_note(trajectory: &Trajectory) -> String {
    let refs = &trajectory.initial_state.visual_refs;
    if refs.is_empty() {
        "No images are attached to this task.".to_string()
    } else {
        let ids: Vec<&str> = refs.iter().map(|r| r.id.as_str()).collect();
        format!("Images (by id): {}.", ids.join(", "))
    }
}

fn type_line(trajectory: &Trajectory) -> String {
    match &trajectory.initial_state.task_descriptor {
        Some(d) => format!(" (Task type: {d})"),
        None => String::new(),
    }
}

fn tools_section(trajectory: &Trajectory) -> String {
    let mut names: Vec<&str> = Vec::new();
    for step in &trajectory.steps {
        if step.action.kind == ActionKind::Tool && !names.contains(&step.action.name.as_str()) {
            names.push(&step.action.name);
        }
    }
    if names.is_empty() {
        "No tools were used in this trace.".to_string()
    } else {
        format!("Tools used in this trace: {}.", names.join(", "))
    }
}

fn trajectory_text(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    for (t, step) in trajectory.steps.iter().enumerate() {
        out.push_str(&format!(
            "State s_{t}:\nAction: {} {} {}\nObservation: {}\n",
            step.action.kind.as_str(),
            step.action.name,
            step.action.params,
            step.observation
        ));
    }
    out
}

/// Renders the outcome-appropriate hindsight prompt for a trajectory.
/// Correct episodes get the quality rubric; incorrect episodes get the
/// blame rubric with the ground truth interpolated. The two rubrics never
/// appear in the same prompt.
pub fn build_hindsight_prompt(trajectory: &Trajectory) -> Result<String, JudgeError> {
    let question = trajectory.initial_state.instruction.as_str();
    let note = images_note(trajectory);
    let tline = type_line(trajectory);
    let tools = tools_section(trajectory);
    let traj = trajectory_text(trajectory);
    if trajectory.outcome.correct {
        Ok(render_template(
            CORRECT_TEMPLATE,
            &[
                ("images_note", &note),
                ("question", question),
                ("type_line", &tline),
                ("tools_section", &tools),
                ("traj_text", &traj),
            ],
        ))
    } else {
        let ground_truth = trajectory
            .outcome
            .ground_truth
            .as_deref()
            .ok_or_else(|| JudgeError::InconsistentOutcome(trajectory.id.clone()))?;
        Ok(render_template(
            INCORRECT_TEMPLATE,
            &[
                ("images_note", &note),
                ("question", question),
                ("type_line", &tline),
                ("tools_section", &tools),
                ("traj_text", &traj),
                ("ground_truth", ground_truth),
            ],
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawJudgement {
    state: i64,
    q_value: f64,
    experience: String,
}

/// Serializes judgements in the judge output format; inverse of
/// [`parse_judgement`] on valid arrays.
pub fn render_judgement_array(judgements: &[StepJudgement]) -> String {
    let raw: Vec<RawJudgement> = judgements
        .iter()
        .map(|j| RawJudgement {
            state: j.step as i64,
            q_value: j.q_value,
            experience: j.experience_text.clone(),
        })
        .collect();
    serde_json::to_string(&raw).expect("judgement array serializes")
}

fn extract_first_array(raw: &str) -> Option<Vec<RawJudgement>> {
    for (i, c) in raw.char_indices() {
        if c != '[' {
            continue;
        }
        let mut stream =
            serde_json::Deserializer::from_str(&raw[i..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Array(elems))) = stream.next() {
            let parsed: Result<Vec<RawJudgement>, _> =
                elems.into_iter().map(serde_json::from_value).collect();
            if let Ok(list) = parsed {
                return Some(list);
            }
        }
    }
    None
}

/// Extracts and validates the judge's output for a trajectory of length
/// `horizon`. Tolerates prose and code fences around the array. Steps with
/// out-of-range scores or indexes are rejected individually; a duplicated
/// step index fails the whole parse.
pub fn parse_judgement(raw: &str, horizon: usize) -> Result<ParsedJudgements, JudgeError> {
    let entries = extract_first_array(raw).ok_or(JudgeError::Unparseable)?;
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.state) {
            return Err(JudgeError::DuplicateStep(e.state));
        }
    }
    let mut parsed = ParsedJudgements::default();
    for e in entries {
        if e.state < 0 || e.state as usize >= horizon {
            parsed.rejected.push(RejectedStep { step: e.state, reason: RejectReason::StepOutOfBounds });
        } else if !(0.0..=10.0).contains(&e.q_value) {
            parsed.rejected.push(RejectedStep {
                step: e.state,
                reason: RejectReason::ScoreOutOfRange(e.q_value),
            });
        } else if e.experience.trim().is_empty() {
            parsed.rejected.push(RejectedStep { step: e.state, reason: RejectReason::EmptyExperience });
        } else {
            parsed.accepted.push(StepJudgement {
                step: e.state as usize,
                q_value: e.q_value,
                experience_text: e.experience,
            });
        }
    }
    parsed.accepted.sort_by_key(|j| j.step);
    Ok(parsed)
}

/// Rejects judgements whose experience text contains the ground truth
/// verbatim. Applied to incorrect trajectories only; the prompt forbids
/// leaking the answer, and a leaked answer must never reach the bank.
pub fn reject_ground_truth_leaks(parsed: &mut ParsedJudgements, ground_truth: &str) {
    if ground_truth.trim().is_empty() {
        return;
    }
    let mut kept = Vec::with_capacity(parsed.accepted.len());
    for j in parsed.accepted.drain(..) {
        if j.experience_text.contains(ground_truth) {
            parsed
                .rejected
                .push(RejectedStep { step: j.step as i64, reason: RejectReason::GroundTruthLeak });
        } else {
            kept.push(j);
        }
    }
    parsed.accepted = kept;
}

/// Hindsight judge contract. `eligible_steps` lists the step indexes the
/// caller wants judged (experience-search steps are excluded upstream);
/// judgements for other steps are dropped.
pub trait Judge: Send + Sync {
    fn judge(
        &self,
        trajectory: &Trajectory,
        eligible_steps: &[usize],
    ) -> Result<ParsedJudgements, JudgeError>;
}

fn restrict_to_eligible(parsed: &mut ParsedJudgements, eligible: &[usize]) {
    parsed.accepted.retain(|j| eligible.contains(&j.step));
}

/// A scripted per-step judgement source for one trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepScript {
    /// step index -> (q_value, experience text)
    #[serde(default)]
    pub steps: BTreeMap<usize, (f64, String)>,
    /// Used for any step without an explicit entry.
    #[serde(default)]
    pub default: Option<(f64, String)>,
}

impl StepScript {
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (usize, f64, S)>,
        S: Into<String>,
    {
        let mut steps = BTreeMap::new();
        for (step, q, text) in entries {
            steps.insert(step, (q, text.into()));
        }
        Self { steps, default: None }
    }

    pub fn with_default(mut self, q: f64, text: impl Into<String>) -> Self {
        self.default = Some((q, text.into()));
        self
    }

    fn entry_for(&self, step: usize) -> Option<&(f64, String)> {
        self.steps.get(&step).or(self.default.as_ref())
    }
}

/// Applies a step script to every step of a trajectory. Every step must be
/// covered by an entry or the script default.
pub fn scripted_judge(
    trajectory: &Trajectory,
    script: &StepScript,
) -> Result<Vec<StepJudgement>, JudgeError> {
    let all: Vec<usize> = (0..trajectory.len()).collect();
    script_steps(trajectory, script, &all, None)
}

fn script_steps(
    trajectory: &Trajectory,
    script: &StepScript,
    steps: &[usize],
    fallback: Option<&(f64, String)>,
) -> Result<Vec<StepJudgement>, JudgeError> {
    let mut out = Vec::with_capacity(steps.len());
    for &step in steps {
        let (q, text) = script
            .entry_for(step)
            .or(fallback)
            .ok_or_else(|| JudgeError::MissingScriptEntry {
                trajectory: trajectory.id.clone(),
                step,
            })?;
        if !(0.0..=10.0).contains(q) {
            return Err(JudgeError::InvalidScript(format!(
                "step {step} scripted q_value {q} outside [0, 10]"
            )));
        }
        if text.trim().is_empty() {
            return Err(JudgeError::InvalidScript(format!("step {step} scripted empty experience")));
        }
        out.push(StepJudgement { step, q_value: *q, experience_text: text.clone() });
    }
    Ok(out)
}

/// Deterministic judge backed by per-trajectory step scripts. No network.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ScriptedJudge {
    /// trajectory id -> script
    #[serde(default)]
    pub trajectories: BTreeMap<String, StepScript>,
    /// Used when a trajectory has no script, or a step has no entry.
    #[serde(default)]
    pub default: Option<(f64, String)>,
}

impl ScriptedJudge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fallback(q: f64, text: impl Into<String>) -> Self {
        Self { trajectories: BTreeMap::new(), default: Some((q, text.into())) }
    }

    pub fn insert(&mut self, trajectory_id: impl Into<String>, script: StepScript) -> &mut Self {
        self.trajectories.insert(trajectory_id.into(), script);
        self
    }

    /// Loads the JSON script-file form:
    /// `{"default": [q, "text"], "trajectories": {"<id>": {"steps": {"0": [q, "text"]}, "default": ...}}}`.
    pub fn from_json(json: &str) -> Result<Self, JudgeError> {
        serde_json::from_str(json).map_err(|e| JudgeError::InvalidScript(e.to_string()))
    }
}

impl Judge for ScriptedJudge {
    fn judge(
        &self,
        trajectory: &Trajectory,
        eligible_steps: &[usize],
    ) -> Result<ParsedJudgements, JudgeError> {
        static EMPTY: StepScript = StepScript { steps: BTreeMap::new(), default: None };
        let script = self.trajectories.get(&trajectory.id).unwrap_or(&EMPTY);
        let accepted = script_steps(trajectory, script, eligible_steps, self.default.as_ref())?;
        let mut parsed = ParsedJudgements { accepted, rejected: Vec::new() };
        if !trajectory.outcome.correct {
            if let Some(gt) = trajectory.outcome.ground_truth.as_deref() {
                reject_ground_truth_leaks(&mut parsed, gt);
            }
        }
        Ok(parsed)
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    text: String,
}

/// Judge backed by a chat endpoint (`POST /v1/chat`,
/// `{"model", "prompt"}` to `{"text"}`). Performs at most
/// `max_retries + 1` transport attempts per trajectory.
pub struct RemoteJudge {
    endpoint: String,
    config: JudgeConfig,
    client: reqwest::blocking::Client,
}

impl RemoteJudge {
    pub fn new(endpoint: impl Into<String>, config: JudgeConfig) -> Result<Self, JudgeError> {
        Ok(Self {
            endpoint: endpoint.into(),
            config,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .map_err(|e| JudgeError::Unavailable(e.to_string()))?,
        })
    }

    fn call(&self, prompt: &str) -> Result<String, JudgeError> {
        let body = ChatRequest { model: &self.config.model_name, prompt };
        let mut last_err = String::new();
        for _ in 0..=self.config.max_retries {
            match self.client.post(&self.endpoint).json(&body).send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp
                        .json::<ChatResponse>()
                        .map(|r| r.text)
                        .map_err(|e| JudgeError::Unavailable(format!("bad response body: {e}")));
                }
                Ok(resp) => last_err = format!("status {}", resp.status()),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(JudgeError::Unavailable(last_err))
    }
}

impl Judge for RemoteJudge {
    fn judge(
        &self,
        trajectory: &Trajectory,
        eligible_steps: &[usize],
    ) -> Result<ParsedJudgements, JudgeError> {
        let prompt = build_hindsight_prompt(trajectory)?;
        let text = self.call(&prompt)?;
        let mut parsed = parse_judgement(&text, trajectory.len())?;
        restrict_to_eligible(&mut parsed, eligible_steps);
        if !trajectory.outcome.correct {
            if let Some(gt) = trajectory.outcome.ground_truth.as_deref() {
                reject_ground_truth_leaks(&mut parsed, gt);
            }
        }
        Ok(parsed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_trajectory, Action, Outcome, RecordStep, TrajectoryRecord};

    fn trajectory(correct: bool, ground_truth: Option<&str>) -> Trajectory {
        validate_trajectory(TrajectoryRecord {
            id: "case".to_string(),
            instruction: "what color is the umbrella".to_string(),
            visual_refs: vec![],
            task_descriptor: Some("attribute recognition".to_string()),
            steps: vec![
                RecordStep {
                    step: None,
                    action: Action::tool("localize_object", "{\"query\":\"umbrella\"}"),
                    observation: "bbox=[10,20,80,90]".to_string(),
                },
                RecordStep {
                    step: None,
                    action: Action::tool("ocr", "{\"region\":\"bbox\"}"),
                    observation: "no text found".to_string(),
                },
            ],
            outcome: Outcome { correct, ground_truth: ground_truth.map(str::to_string) },
        })
        .unwrap()
    }

    #[test]
    fn correct_prompt_uses_quality_rubric() {
        let prompt = build_hindsight_prompt(&trajectory(true, None)).unwrap();
        assert!(prompt.contains("9-10 (Essential)"));
        assert!(prompt.contains("solved CORRECTLY"));
        assert!(!prompt.contains("Rate how much this step CONTRIBUTED TO"));
        assert!(prompt.trim_end().ends_with(r#"[{"state": 0, "q_value": 8, "experience": "..."}, ...]"#));
    }

    #[test]
    fn incorrect_prompt_uses_blame_rubric_and_ground_truth() {
        let prompt = build_hindsight_prompt(&trajectory(false, Some("B"))).unwrap();
        assert!(prompt.contains("Correct answer: B"));
        assert!(prompt.contains("Rate how much this step CONTRIBUTED TO"));
        assert!(!prompt.contains("9-10 (Essential)"));
    }

    #[test]
    fn incorrect_prompt_without_ground_truth_fails() {
        let mut t = trajectory(false, Some("B"));
        t.outcome.ground_truth = None;
        assert!(matches!(
            build_hindsight_prompt(&t),
            Err(JudgeError::InconsistentOutcome(_))
        ));
    }

    #[test]
    fn prompt_interpolates_task_fields() {
        let prompt = build_hindsight_prompt(&trajectory(true, None)).unwrap();
        assert!(prompt.contains("Question: what color is the umbrella (Task type: attribute recognition)"));
        assert!(prompt.contains("Tools used in this trace: localize_object, ocr."));
        assert!(prompt.contains("State s_1:"));
    }

    #[test]
    fn parse_accepts_bare_array() {
        let parsed =
            parse_judgement(r#"[{"state": 0, "q_value": 8, "experience": "zoom first"}]"#, 2)
                .unwrap();
        assert_eq!(parsed.accepted.len(), 1);
        assert_eq!(parsed.accepted[0].step, 0);
        assert_eq!(parsed.accepted[0].q_value, 8.0);
        assert!(parsed.rejected.is_empty());
    }

    #[test]
    fn parse_tolerates_fences_and_prose() {
        let fenced = "Here are my judgements:\n```json\n[{\"state\": 1, \"q_value\": 3.5, \"experience\": \"x\"},\n {\"state\": 0, \"q_value\": 9, \"experience\": \"y\"}]\n```\nDone.";
        let bare = "[{\"state\": 1, \"q_value\": 3.5, \"experience\": \"x\"}, {\"state\": 0, \"q_value\": 9, \"experience\": \"y\"}]";
        let a = parse_judgement(fenced, 2).unwrap();
        let b = parse_judgement(bare, 2).unwrap();
        assert_eq!(a, b);
        // Sorted by step.
        assert_eq!(a.accepted[0].step, 0);
        assert_eq!(a.accepted[1].step, 1);
    }

    #[test]
    fn out_of_range_scores_reject_only_that_step() {
        let parsed = parse_judgement(
            r#"[{"state": 0, "q_value": 12, "experience": "a"}, {"state": 1, "q_value": 7, "experience": "b"}]"#,
            2,
        )
        .unwrap();
        assert_eq!(parsed.accepted.len(), 1);
        assert_eq!(parsed.accepted[0].step, 1);
        assert_eq!(parsed.rejected.len(), 1);
        assert!(matches!(parsed.rejected[0].reason, RejectReason::ScoreOutOfRange(q) if q == 12.0));
    }

    #[test]
    fn out_of_bounds_steps_are_rejected() {
        let parsed = parse_judgement(
            r#"[{"state": 5, "q_value": 5, "experience": "a"}, {"state": -1, "q_value": 5, "experience": "b"}]"#,
            2,
        )
        .unwrap();
        assert!(parsed.accepted.is_empty());
        assert_eq!(parsed.rejected.len(), 2);
    }

    #[test]
    fn duplicate_steps_fail_the_parse() {
        let err = parse_judgement(
            r#"[{"state": 0, "q_value": 5, "experience": "a"}, {"state": 0, "q_value": 6, "experience": "b"}]"#,
            2,
        )
        .unwrap_err();
        assert!(matches!(err, JudgeError::DuplicateStep(0)));
    }

    #[test]
    fn garbage_is_unparseable() {
        assert!(matches!(parse_judgement("no array here", 3), Err(JudgeError::Unparseable)));
        assert!(matches!(
            parse_judgement("[1, 2, 3] but not judgements", 3),
            Err(JudgeError::Unparseable)
        ));
    }

    #[test]
    fn render_then_parse_round_trips() {
        let judgements = vec![
            StepJudgement { step: 0, q_value: 9.0, experience_text: "localize first".into() },
            StepJudgement { step: 1, q_value: 1.25, experience_text: "avoid ocr here".into() },
        ];
        let rendered = render_judgement_array(&judgements);
        let parsed = parse_judgement(&rendered, 2).unwrap();
        assert_eq!(parsed.accepted, judgements);
        assert!(parsed.rejected.is_empty());
    }

    #[test]
    fn leak_filter_rejects_verbatim_ground_truth() {
        let mut parsed = ParsedJudgements {
            accepted: vec![
                StepJudgement { step: 0, q_value: 9.0, experience_text: "the answer is B".into() },
                StepJudgement { step: 1, q_value: 8.0, experience_text: "localize first".into() },
            ],
            rejected: vec![],
        };
        reject_ground_truth_leaks(&mut parsed, "B");
        assert_eq!(parsed.accepted.len(), 1);
        assert_eq!(parsed.accepted[0].step, 1);
        assert!(matches!(parsed.rejected[0].reason, RejectReason::GroundTruthLeak));
    }

    #[test]
    fn scripted_judge_replays_the_script() {
        let t = trajectory(true, None);
        let script = StepScript::from_entries([
            (0usize, 9.0, "localize the target region first"),
            (1usize, 1.0, "avoid ocr for purely visual attributes"),
        ]);
        let judgements = scripted_judge(&t, &script).unwrap();
        assert_eq!(judgements.len(), 2);
        assert_eq!(judgements[0].q_value, 9.0);
        assert_eq!(judgements[1].q_value, 1.0);
    }

    #[test]
    fn scripted_judge_default_covers_all_steps() {
        let t = trajectory(true, None);
        let script = StepScript::default().with_default(5.0, "neutral");
        let judgements = scripted_judge(&t, &script).unwrap();
        assert_eq!(judgements.len(), 2);
        assert!(judgements.iter().all(|j| j.q_value == 5.0));
    }

    #[test]
    fn missing_script_entry_is_an_error() {
        let t = trajectory(true, None);
        let script = StepScript::from_entries([(0usize, 9.0, "a")]);
        assert!(matches!(
            scripted_judge(&t, &script),
            Err(JudgeError::MissingScriptEntry { step: 1, .. })
        ));
    }

    #[test]
    fn scripted_judge_trait_respects_eligible_steps() {
        let t = trajectory(true, None);
        let mut judge = ScriptedJudge::with_fallback(5.0, "neutral");
        judge.insert("case", StepScript::from_entries([(0usize, 9.0, "a"), (1usize, 1.0, "b")]));
        let parsed = judge.judge(&t, &[1]).unwrap();
        assert_eq!(parsed.accepted.len(), 1);
        assert_eq!(parsed.accepted[0].step, 1);
    }

    #[test]
    fn script_file_round_trip() {
        let json = r#"{
            "default": [5.0, "neutral"],
            "trajectories": {
                "case": {"steps": {"0": [9.0, "localize first"], "1": [1.0, "skip ocr"]}}
            }
        }"#;
        let judge = ScriptedJudge::from_json(json).unwrap();
        let t = trajectory(true, None);
        let parsed = judge.judge(&t, &[0, 1]).unwrap();
        assert_eq!(parsed.accepted[0].q_value, 9.0);
        assert_eq!(parsed.accepted[1].q_value, 1.0);
    }
}
