//! Deterministic simulated agent loop for exercising the whole engine end
//! to end: a synthetic two-family task set, two toy calculator tools (only
//! one of which works for a given family), a scripted policy that consults
//! the bank before acting, and a benchmark comparing accuracy with and
//! without experience injection.
//!
//! Everything derives from the run seed: task expressions, the hidden
//! family-to-tool rule, and the policy's fallback coin flips. Same seed,
//! same report bytes.

use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

use crate::abstraction::{build_bank, AbstractError, AbstractionStats, DEFAULT_THRESHOLD};
use crate::embed::{Embedder, HashEmbedder};
use crate::hash::{fnv1a64, SplitMix64};
use crate::index::ExperienceBank;
use crate::judge::{Judge, JudgeError, ParsedJudgements, StepJudgement};
use crate::model::{Action, Outcome, State, Trajectory, TrajectoryStep, VisualRef};
use crate::search::{deep_wide_search, format_guidance, GuidanceSet, SearchParams};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("task count must be even and at least 2, got {0}")]
    InvalidTaskCount(usize),
    #[error(transparent)]
    Abstract(#[from] AbstractError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CalcError {
    #[error("expression contains unsupported character {0:?}")]
    UnsupportedCharacter(char),
    #[error("invalid expression syntax")]
    InvalidSyntax,
    #[error("division by zero")]
    DivisionByZero,
}

/// Evaluates an arithmetic expression over `+ - * /` and parentheses,
/// returning the canonical rendering (integers without a decimal point).
pub fn calc(expression: &str) -> Result<String, CalcError> {
    calc_value(expression).map(render_number)
}

fn render_number(v: f64) -> String {
    if v.fract() == 0.0 && v.is_finite() && v.abs() < 9.0e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn calc_value(expression: &str) -> Result<f64, CalcError> {
    for c in expression.chars() {
        if !(c.is_ascii_digit() || c.is_ascii_whitespace() || "+-*/().".contains(c)) {
            return Err(CalcError::UnsupportedCharacter(c));
        }
    }
    let tokens: Vec<char> = expression.chars().filter(|c| !c.is_ascii_whitespace()).collect();
    let mut parser = Parser { tokens, pos: 0 };
    let value = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(CalcError::InvalidSyntax);
    }
    Ok(value)
}

struct Parser {
    tokens: Vec<char>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.tokens.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<f64, CalcError> {
        let mut value = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            value = if op == '+' { value + rhs } else { value - rhs };
        }
        Ok(value)
    }

    fn term(&mut self) -> Result<f64, CalcError> {
        let mut value = self.factor()?;
        while let Some(op @ ('*' | '/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            if op == '*' {
                value *= rhs;
            } else {
                if rhs == 0.0 {
                    return Err(CalcError::DivisionByZero);
                }
                value /= rhs;
            }
        }
        Ok(value)
    }

    fn factor(&mut self) -> Result<f64, CalcError> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(-self.factor()?)
            }
            Some('(') => {
                self.pos += 1;
                let value = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(CalcError::InvalidSyntax);
                }
                self.pos += 1;
                Ok(value)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            _ => Err(CalcError::InvalidSyntax),
        }
    }

    fn number(&mut self) -> Result<f64, CalcError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.') {
            self.pos += 1;
        }
        let text: String = self.tokens[start..self.pos].iter().collect();
        text.parse().map_err(|_| CalcError::InvalidSyntax)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TaskFamily {
    ArithA,
    ArithB,
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskFamily::ArithA => "arith_a",
            TaskFamily::ArithB => "arith_b",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToolKind {
    Alpha,
    Beta,
}

impl ToolKind {
    pub fn name(&self) -> &'static str {
        match self {
            ToolKind::Alpha => "tool_alpha",
            ToolKind::Beta => "tool_beta",
        }
    }

    pub fn other(&self) -> ToolKind {
        match self {
            ToolKind::Alpha => ToolKind::Beta,
            ToolKind::Beta => ToolKind::Alpha,
        }
    }
}

/// One synthetic task: an arithmetic expression presented as a worksheet,
/// solvable only through the family's hidden correct tool.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub id: String,
    pub instruction: String,
    pub family: TaskFamily,
    /// Which toy tool computes this family's expressions correctly,
    /// determined per family from the run seed.
    pub hidden_rule: ToolKind,
    pub expression: String,
    pub correct_answer: String,
}

impl SyntheticTask {
    /// The episode's initial state. Instruction and visual refs depend only
    /// on the family, so same-family states project identically under the
    /// visual viewpoint; the concrete expression lives in the descriptor.
    pub fn initial_state(&self) -> State {
        State::new(self.instruction.clone())
            .with_visual_refs(vec![VisualRef {
                id: format!("worksheet_{}", self.family),
                caption: Some(format!("{} practice sheet", self.family)),
            }])
            .with_task_descriptor(format!("family={};expression={}", self.family, self.expression))
    }
}

fn family_instruction(family: TaskFamily) -> String {
    format!(
        "Evaluate the worksheet expression with the appropriate tool and reply with just the number. Task family: {family}."
    )
}

fn hidden_rule_for(family: TaskFamily, seed: u64) -> ToolKind {
    let salt = match family {
        TaskFamily::ArithA => 0x61,
        TaskFamily::ArithB => 0x62,
    };
    if SplitMix64::new(seed ^ salt).next_bool() {
        ToolKind::Alpha
    } else {
        ToolKind::Beta
    }
}

/// Exploration and evaluation halves of a generated task set.
#[derive(Debug, Clone)]
pub struct TaskSplits {
    pub exploration: Vec<SyntheticTask>,
    pub evaluation: Vec<SyntheticTask>,
}

/// Generates `n` tasks (n even, >= 2) split 1:1 into exploration and
/// evaluation, families balanced within each split. Deterministic per seed.
pub fn generate_tasks(n: usize, seed: u64) -> Result<TaskSplits, HarnessError> {
    if n < 2 || n % 2 != 0 {
        return Err(HarnessError::InvalidTaskCount(n));
    }
    let mut rng = SplitMix64::new(seed ^ 0x7461_736b); // "task"
    let mut make = |split: &str, index: usize| {
        let family = if index % 2 == 0 { TaskFamily::ArithA } else { TaskFamily::ArithB };
        let expression = match family {
            TaskFamily::ArithA => {
                format!("{}+{}", 2 + rng.next_below(96), 2 + rng.next_below(96))
            }
            TaskFamily::ArithB => format!(
                "({}-{})*{}",
                2 + rng.next_below(96),
                2 + rng.next_below(96),
                2 + rng.next_below(8)
            ),
        };
        let correct_answer = calc(&expression).expect("generated expressions are valid");
        SyntheticTask {
            id: format!("{split}-{index:04}-{family}"),
            instruction: family_instruction(family),
            family,
            hidden_rule: hidden_rule_for(family, seed),
            expression,
            correct_answer,
        }
    };
    let half = n / 2;
    let exploration = (0..half).map(|i| make("expl", i)).collect();
    let evaluation = (0..half).map(|i| make("eval", i)).collect();
    Ok(TaskSplits { exploration, evaluation })
}

/// Runs one toy tool on a task. The family's hidden correct tool returns the
/// exact calculation; the other tool returns a deterministically wrong value.
pub fn run_tool(task: &SyntheticTask, tool: ToolKind) -> String {
    let value = calc_value(&task.expression).expect("task expressions are valid");
    if tool == task.hidden_rule {
        render_number(value)
    } else {
        render_number(value + 1.0)
    }
}

/// Scans retrieved guidance in order and extracts a tool recommendation for
/// the task's family: "use X" selects X, "avoid X" selects the other tool.
fn tool_from_guidance(set: &GuidanceSet, family: TaskFamily) -> Option<ToolKind> {
    let family_tag = format!("family {family}");
    for item in &set.items {
        if !item.guidance.contains(&family_tag) {
            continue;
        }
        for tool in [ToolKind::Alpha, ToolKind::Beta] {
            if item.guidance.contains(&format!("use {}", tool.name())) {
                return Some(tool);
            }
            if item.guidance.contains(&format!("avoid {}", tool.name())) {
                return Some(tool.other());
            }
        }
    }
    None
}

fn random_tool(seed: u64) -> ToolKind {
    if SplitMix64::new(seed).next_bool() {
        ToolKind::Alpha
    } else {
        ToolKind::Beta
    }
}

/// Runs one scripted-policy episode. With a bank, the policy performs a
/// deep-and-wide search before the tool action and records the search in the
/// history; without one, it falls back to a seeded-random tool choice. The
/// episode always ends with an answer action.
pub fn run_episode(
    task: &SyntheticTask,
    bank: Option<&ExperienceBank>,
    embedder: &dyn Embedder,
    params: &SearchParams,
    seed: u64,
) -> Trajectory {
    run_episode_inner(task, bank, embedder, params, seed).0
}

fn run_episode_inner(
    task: &SyntheticTask,
    bank: Option<&ExperienceBank>,
    embedder: &dyn Embedder,
    params: &SearchParams,
    seed: u64,
) -> (Trajectory, Option<usize>) {
    let initial_state = task.initial_state();
    let mut state = initial_state.clone();
    let mut steps: Vec<TrajectoryStep> = Vec::new();
    let mut guidance_len = None;

    let tool = match bank {
        Some(bank) => {
            let set = deep_wide_search(bank, embedder, &state, params)
                .expect("bank and embedder dimensions agree");
            guidance_len = Some(set.len());
            let rendered = format_guidance(&set);
            let search_action = Action::experience_search(format!(
                "{{\"mode\":\"deep_wide\",\"k\":{},\"rounds\":{}}}",
                params.k,
                params.rounds()
            ));
            steps.push(TrajectoryStep {
                action: search_action.clone(),
                observation: rendered.clone(),
            });
            state = state.extended(search_action, rendered);
            tool_from_guidance(&set, task.family).unwrap_or_else(|| random_tool(seed))
        }
        None => random_tool(seed),
    };

    let observation = run_tool(task, tool);
    let tool_action =
        Action::tool(tool.name(), format!("{{\"expression\":\"{}\"}}", task.expression));
    steps.push(TrajectoryStep { action: tool_action.clone(), observation: observation.clone() });
    state = state.extended(tool_action, observation.clone());

    let answer = observation;
    let answer_action = Action::answer(answer.clone());
    steps.push(TrajectoryStep { action: answer_action.clone(), observation: "submitted".into() });
    let _ = state.extended(answer_action, "submitted");

    let trajectory = Trajectory {
        id: task.id.clone(),
        initial_state,
        steps,
        outcome: Outcome {
            correct: answer == task.correct_answer,
            ground_truth: Some(task.correct_answer.clone()),
        },
    };
    (trajectory, guidance_len)
}

/// Deterministic hindsight judge for harness trajectories: tool steps using
/// the family's correct tool score 9 with a "use X" experience, wrong-tool
/// steps score 1 with a cautionary "avoid X" experience, and answer steps
/// score 1. With the default threshold only correct-tool steps reach the
/// bank.
pub struct HarnessJudge {
    rules: BTreeMap<String, (TaskFamily, ToolKind)>,
}

impl HarnessJudge {
    pub fn for_tasks<'a>(tasks: impl IntoIterator<Item = &'a SyntheticTask>) -> Self {
        let rules = tasks
            .into_iter()
            .map(|t| (t.id.clone(), (t.family, t.hidden_rule)))
            .collect();
        Self { rules }
    }
}

impl Judge for HarnessJudge {
    fn judge(
        &self,
        trajectory: &Trajectory,
        eligible_steps: &[usize],
    ) -> Result<ParsedJudgements, JudgeError> {
        let (family, correct_tool) =
            self.rules.get(&trajectory.id).copied().ok_or_else(|| {
                JudgeError::MissingScriptEntry { trajectory: trajectory.id.clone(), step: 0 }
            })?;
        let mut accepted = Vec::new();
        for &step in eligible_steps {
            let action = &trajectory.steps[step].action;
            let judgement = match action.kind {
                crate::model::ActionKind::Tool => {
                    if action.name == correct_tool.name() {
                        StepJudgement {
                            step,
                            q_value: 9.0,
                            experience_text: format!(
                                "For family {family} tasks, use {} to evaluate the expression.",
                                correct_tool.name()
                            ),
                        }
                    } else {
                        StepJudgement {
                            step,
                            q_value: 1.0,
                            experience_text: format!(
                                "For family {family} tasks, avoid {}; it returns unreliable results.",
                                correct_tool.other().name()
                            ),
                        }
                    }
                }
                _ => StepJudgement {
                    step,
                    q_value: 1.0,
                    experience_text:
                        "Report the computed value as the final answer once the expression has been evaluated."
                            .to_string(),
                },
            };
            accepted.push(judgement);
        }
        Ok(ParsedJudgements { accepted, rejected: Vec::new() })
    }
}

/// End-to-end benchmark result. `Display` renders the canonical report with
/// the `accuracy=` line carrying the evaluation-split accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub tasks: usize,
    pub seed: u64,
    pub with_experience: bool,
    pub exploration_correct: usize,
    pub exploration_total: usize,
    pub bank_size: usize,
    pub abstraction: AbstractionStats,
    pub evaluation_correct: usize,
    pub evaluation_total: usize,
    pub mean_guidance_items: f64,
}

impl BenchmarkReport {
    pub fn accuracy(&self) -> f64 {
        self.evaluation_correct as f64 / self.evaluation_total as f64
    }
}

impl fmt::Display for BenchmarkReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "tasks={} seed={} with_experience={}",
            self.tasks, self.seed, self.with_experience
        )?;
        writeln!(
            f,
            "exploration_accuracy={:.4}",
            self.exploration_correct as f64 / self.exploration_total as f64
        )?;
        writeln!(f, "abstraction: {}", self.abstraction)?;
        writeln!(f, "bank_size={}", self.bank_size)?;
        writeln!(f, "mean_guidance_items={:.4}", self.mean_guidance_items)?;
        write!(f, "accuracy={:.4}", self.accuracy())
    }
}

fn episode_seed(run_seed: u64, task_id: &str) -> u64 {
    run_seed ^ fnv1a64(task_id.as_bytes())
}

/// Full protocol: explore without a bank, abstract the exploration
/// trajectories with the harness judge, then evaluate with or without the
/// resulting bank. Deterministic per (n, seed, with_experience).
pub fn run_benchmark(
    n: usize,
    seed: u64,
    with_experience: bool,
) -> Result<BenchmarkReport, HarnessError> {
    let splits = generate_tasks(n, seed)?;
    let embedder = HashEmbedder::default();
    let params = SearchParams::default();

    let exploration_trajectories: Vec<Trajectory> = splits
        .exploration
        .iter()
        .map(|task| {
            run_episode_inner(task, None, &embedder, &params, episode_seed(seed, &task.id)).0
        })
        .collect();
    let exploration_correct =
        exploration_trajectories.iter().filter(|t| t.outcome.correct).count();

    let judge = HarnessJudge::for_tasks(splits.exploration.iter());
    let (bank, abstraction) =
        build_bank(&exploration_trajectories, &judge, &embedder, DEFAULT_THRESHOLD)?;

    let bank_ref = with_experience.then_some(&bank);
    let mut evaluation_correct = 0;
    let mut guidance_total = 0usize;
    let mut guidance_samples = 0usize;
    for task in &splits.evaluation {
        let (trajectory, guidance_len) =
            run_episode_inner(task, bank_ref, &embedder, &params, episode_seed(seed, &task.id));
        if trajectory.outcome.correct {
            evaluation_correct += 1;
        }
        if let Some(len) = guidance_len {
            guidance_total += len;
            guidance_samples += 1;
        }
    }
    let mean_guidance_items = if guidance_samples == 0 {
        0.0
    } else {
        guidance_total as f64 / guidance_samples as f64
    };

    Ok(BenchmarkReport {
        tasks: n,
        seed,
        with_experience,
        exploration_correct,
        exploration_total: splits.exploration.len(),
        bank_size: bank.len(),
        abstraction,
        evaluation_correct,
        evaluation_total: splits.evaluation.len(),
        mean_guidance_items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::viewpoint::registry_ids;

    #[test]
    fn calc_matches_tool_contract() {
        assert_eq!(calc("2+3").unwrap(), "5");
        assert_eq!(calc("123 * 456 + 789").unwrap(), "56877");
        assert_eq!(calc("(8-3)*2").unwrap(), "10");
        assert_eq!(calc("7/2").unwrap(), "3.5");
        assert_eq!(calc("-(2+3)").unwrap(), "-5");
    }

    #[test]
    fn calc_rejects_bad_input() {
        assert_eq!(calc("2+x").unwrap_err(), CalcError::UnsupportedCharacter('x'));
        assert_eq!(calc("1/0").unwrap_err(), CalcError::DivisionByZero);
        assert_eq!(calc("(2+3").unwrap_err(), CalcError::InvalidSyntax);
        assert_eq!(calc("2**3").unwrap_err(), CalcError::InvalidSyntax);
        assert_eq!(calc("").unwrap_err(), CalcError::InvalidSyntax);
    }

    #[test]
    fn generate_tasks_balances_families() {
        let splits = generate_tasks(4, 42).unwrap();
        assert_eq!(splits.exploration.len(), 2);
        assert_eq!(splits.evaluation.len(), 2);
        for split in [&splits.exploration, &splits.evaluation] {
            assert_eq!(split.iter().filter(|t| t.family == TaskFamily::ArithA).count(), 1);
            assert_eq!(split.iter().filter(|t| t.family == TaskFamily::ArithB).count(), 1);
        }
    }

    #[test]
    fn generate_tasks_is_deterministic() {
        let a = generate_tasks(10, 7).unwrap();
        let b = generate_tasks(10, 7).unwrap();
        assert_eq!(a.exploration, b.exploration);
        assert_eq!(a.evaluation, b.evaluation);
    }

    #[test]
    fn odd_task_counts_are_rejected() {
        assert!(matches!(generate_tasks(5, 1), Err(HarnessError::InvalidTaskCount(5))));
        assert!(matches!(generate_tasks(0, 1), Err(HarnessError::InvalidTaskCount(0))));
    }

    #[test]
    fn episode_without_bank_has_no_search_step() {
        let splits = generate_tasks(2, 3).unwrap();
        let embedder = HashEmbedder::default();
        let t = run_episode(&splits.evaluation[0], None, &embedder, &SearchParams::default(), 9);
        assert_eq!(t.len(), 2);
        assert!(t
            .steps
            .iter()
            .all(|s| s.action.kind != crate::model::ActionKind::ExperienceSearch));
    }

    #[test]
    fn planted_guidance_steers_family_tasks() {
        let embedder = HashEmbedder::default();
        let task = SyntheticTask {
            id: "plant-check".into(),
            instruction: family_instruction(TaskFamily::ArithA),
            family: TaskFamily::ArithA,
            hidden_rule: ToolKind::Alpha,
            expression: "2+3".into(),
            correct_answer: "5".into(),
        };
        // Plant one experience whose state is a same-family task state and
        // whose guidance names tool_alpha.
        let donor = SyntheticTask { id: "donor".into(), expression: "4+9".into(), correct_answer: "13".into(), ..task.clone() };
        let state = donor.initial_state();
        let mut embeddings = std::collections::BTreeMap::new();
        for viewpoint in registry_ids() {
            embeddings.insert(
                viewpoint,
                embedder.embed(&crate::embed::viewpoint_content(&state, viewpoint)).unwrap(),
            );
        }
        let mut bank = ExperienceBank::new(embedder.dim(), embedder.tag(), 5.0);
        bank.insert(crate::abstraction::Experience {
            id: "donor#0".into(),
            trajectory_id: "donor".into(),
            step: 0,
            state,
            action: Action::tool("tool_alpha", "{\"expression\":\"4+9\"}"),
            guidance: "For family arith_a tasks, use tool_alpha to evaluate the expression."
                .into(),
            q_value: 9.0,
            source_outcome: true,
            embeddings,
        })
        .unwrap();

        let t = run_episode(&task, Some(&bank), &embedder, &SearchParams::default(), 1);
        assert!(t.outcome.correct);
        // Search action recorded in history before the tool action.
        assert_eq!(t.steps[0].action.kind, crate::model::ActionKind::ExperienceSearch);
        assert_eq!(t.steps[1].action.name, "tool_alpha");
    }

    #[test]
    fn benchmark_with_experience_reaches_full_accuracy() {
        let report = run_benchmark(40, 11, true).unwrap();
        assert_eq!(report.evaluation_correct, report.evaluation_total);
        assert!(report.mean_guidance_items <= 9.0);
        assert!(report.bank_size > 0);
    }

    #[test]
    fn benchmark_without_experience_is_chance_level() {
        let report = run_benchmark(40, 11, false).unwrap();
        assert!(report.accuracy() < 1.0);
        assert_eq!(report.mean_guidance_items, 0.0);
    }

    #[test]
    fn benchmark_reports_are_byte_deterministic() {
        let a = run_benchmark(20, 5, true).unwrap();
        let b = run_benchmark(20, 5, true).unwrap();
        assert_eq!(a.to_string(), b.to_string());
    }

    #[test]
    fn search_actions_stay_out_of_the_bank() {
        // Evaluation trajectories contain search steps; abstracting them
        // must not produce experiences for those steps.
        let splits = generate_tasks(8, 2).unwrap();
        let embedder = HashEmbedder::default();
        let params = SearchParams::default();
        let judge = HarnessJudge::for_tasks(splits.exploration.iter().chain(&splits.evaluation));
        let expl: Vec<Trajectory> = splits
            .exploration
            .iter()
            .map(|t| run_episode(t, None, &embedder, &params, 1))
            .collect();
        let (bank, _) = build_bank(&expl, &judge, &embedder, 5.0).unwrap();
        let with_search: Vec<Trajectory> = splits
            .evaluation
            .iter()
            .map(|t| run_episode(t, Some(&bank), &embedder, &params, 1))
            .collect();
        let (bank2, stats) = build_bank(&with_search, &judge, &embedder, 0.0).unwrap();
        for e in bank2.experiences() {
            assert_ne!(e.action.kind, crate::model::ActionKind::ExperienceSearch);
        }
        // One search step per evaluation episode counts as unjudged.
        assert_eq!(stats.unjudged, splits.evaluation.len());
    }
}
