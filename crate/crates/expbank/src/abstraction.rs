//! Experience abstraction: trajectories in, quality-filtered multi-viewpoint
//! experiences out.
//!
//! Each trajectory is decomposed into atomic transitions, judged in
//! hindsight, filtered by the quality threshold, and embedded once per
//! registry viewpoint. Experience ids are `trajectory_id#step`, which makes
//! re-ingestion idempotent at the record level. Embedding failures abort the
//! whole batch: an experience either carries all of its viewpoint vectors or
//! never enters a bank.

use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

use crate::embed::{viewpoint_content, EmbedContent, EmbedError, Embedder, Embedding};
use crate::index::{ExperienceBank, IndexError};
use crate::judge::{Judge, JudgeConfig, JudgeError};
use crate::model::{decompose, ActionKind, ModelError, Trajectory};
use crate::model::{Action, State};
use crate::viewpoint::{registry_ids, ViewpointId};

/// Quality threshold below which judged transitions are discarded.
pub const DEFAULT_THRESHOLD: f64 = 5.0;
/// Bounded concurrency for judging distinct trajectories.
pub const DEFAULT_JUDGE_CONCURRENCY: usize = 4;

#[derive(Debug, Error)]
pub enum AbstractError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("judge failed: {0}")]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// One quality-filtered, state-level experience with an embedding per
/// registry viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    /// `trajectory_id#step`, unique within a bank.
    pub id: String,
    pub trajectory_id: String,
    pub step: usize,
    /// Decision state before the action was taken.
    pub state: State,
    pub action: Action,
    /// Judge-distilled advice shown to future agents.
    pub guidance: String,
    pub q_value: f64,
    /// Whether the source trajectory was solved correctly.
    pub source_outcome: bool,
    pub embeddings: BTreeMap<ViewpointId, Embedding>,
}

pub fn experience_id(trajectory_id: &str, step: usize) -> String {
    format!("{trajectory_id}#{step}")
}

/// Abstraction pipeline configuration. The zero-argument default mirrors
/// the reference setup: threshold 5.0 with a scripted judge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbstractionConfig {
    pub threshold: f64,
    #[serde(skip)]
    pub judge: JudgeConfig,
}

impl Default for AbstractionConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, judge: JudgeConfig::default() }
    }
}

impl AbstractionConfig {
    pub fn validate(&self) -> Result<(), AbstractError> {
        if !(0.0..=10.0).contains(&self.threshold) || self.threshold.is_nan() {
            return Err(AbstractError::Config(format!(
                "threshold {} outside [0, 10]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Per-step accounting for an abstraction run: `judged = admitted +
/// rejected_low_q`, and `total = judged + unjudged + errors` whenever the
/// judge only names real steps. `unjudged` covers steps the judge returned
/// nothing for plus experience-search steps excluded before judging;
/// `errors` covers per-step rejections and every step of a trajectory whose
/// judge call failed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AbstractionStats {
    pub total: usize,
    pub judged: usize,
    pub admitted: usize,
    pub rejected_low_q: usize,
    pub unjudged: usize,
    pub errors: usize,
}

impl AbstractionStats {
    pub fn merge(&mut self, other: &AbstractionStats) {
        self.total += other.total;
        self.judged += other.judged;
        self.admitted += other.admitted;
        self.rejected_low_q += other.rejected_low_q;
        self.unjudged += other.unjudged;
        self.errors += other.errors;
    }
}

impl fmt::Display for AbstractionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total={} judged={} admitted={} rejected_low_q={} unjudged={} errors={}",
            self.total, self.judged, self.admitted, self.rejected_low_q, self.unjudged, self.errors
        )
    }
}

/// Runs the full abstraction pipeline for one trajectory: decompose, judge
/// the non-search steps, keep judgements with `q >= threshold`, and embed
/// each kept state under every registry viewpoint.
pub fn abstract_trajectory(
    trajectory: &Trajectory,
    judge: &dyn Judge,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<(Vec<Experience>, AbstractionStats), AbstractError> {
    if !(0.0..=10.0).contains(&threshold) || threshold.is_nan() {
        return Err(AbstractError::Config(format!("threshold {threshold} outside [0, 10]")));
    }
    let transitions = decompose(trajectory);
    let eligible: Vec<usize> = transitions
        .iter()
        .filter(|t| t.action.kind != ActionKind::ExperienceSearch)
        .map(|t| t.step)
        .collect();
    let parsed = judge.judge(trajectory, &eligible)?;
    build_experiences(trajectory, parsed, embedder, threshold)
}

fn build_experiences(
    trajectory: &Trajectory,
    parsed: crate::judge::ParsedJudgements,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<(Vec<Experience>, AbstractionStats), AbstractError> {
    let transitions = decompose(trajectory);
    let mut stats = AbstractionStats { total: trajectory.len(), ..Default::default() };
    stats.judged = parsed.accepted.len();
    stats.errors = parsed.rejected.len();
    stats.unjudged = trajectory.len().saturating_sub(stats.judged + stats.errors);

    let admitted: Vec<&crate::judge::StepJudgement> =
        parsed.accepted.iter().filter(|j| j.q_value >= threshold).collect();
    stats.admitted = admitted.len();
    stats.rejected_low_q = stats.judged - stats.admitted;

    // One embed batch per trajectory: all admitted steps, all viewpoints,
    // in (step, viewpoint) order.
    let mut contents: Vec<EmbedContent> = Vec::with_capacity(admitted.len() * 3);
    for judgement in &admitted {
        let state = &transitions[judgement.step].state_before;
        for viewpoint in registry_ids() {
            contents.push(viewpoint_content(state, viewpoint));
        }
    }
    let vectors = embedder.embed_batch(&contents)?;
    debug_assert_eq!(vectors.len(), contents.len());

    let mut experiences = Vec::with_capacity(admitted.len());
    let mut vector_iter = vectors.into_iter();
    for judgement in admitted {
        let transition = &transitions[judgement.step];
        let mut embeddings = BTreeMap::new();
        for viewpoint in registry_ids() {
            embeddings.insert(viewpoint, vector_iter.next().expect("one vector per content"));
        }
        experiences.push(Experience {
            id: experience_id(&trajectory.id, judgement.step),
            trajectory_id: trajectory.id.clone(),
            step: judgement.step,
            state: transition.state_before.clone(),
            action: transition.action.clone(),
            guidance: judgement.experience_text.clone(),
            q_value: judgement.q_value,
            source_outcome: trajectory.outcome.correct,
            embeddings,
        });
    }
    Ok((experiences, stats))
}

/// Builds a bank from a batch of trajectories. Insertions happen in
/// (trajectory order, step order), so output is deterministic given
/// deterministic judge and embedder. A trajectory whose judge call fails is
/// skipped and counted; an embedder failure aborts the whole build.
pub fn build_bank(
    trajectories: &[Trajectory],
    judge: &dyn Judge,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<(ExperienceBank, AbstractionStats), AbstractError> {
    build_bank_with_concurrency(trajectories, judge, embedder, threshold, DEFAULT_JUDGE_CONCURRENCY)
}

/// [`build_bank`] with an explicit bound on concurrent judge calls.
/// Judgements are merged back in trajectory order regardless of the bound.
pub fn build_bank_with_concurrency(
    trajectories: &[Trajectory],
    judge: &dyn Judge,
    embedder: &dyn Embedder,
    threshold: f64,
    judge_concurrency: usize,
) -> Result<(ExperienceBank, AbstractionStats), AbstractError> {
    if !(0.0..=10.0).contains(&threshold) || threshold.is_nan() {
        return Err(AbstractError::Config(format!("threshold {threshold} outside [0, 10]")));
    }
    let mut seen = std::collections::HashSet::new();
    for t in trajectories {
        if !seen.insert(t.id.as_str()) {
            return Err(ModelError::DuplicateTrajectoryId(t.id.clone()).into());
        }
    }

    let mut bank = ExperienceBank::new(embedder.dim(), embedder.tag(), threshold);
    let mut stats = AbstractionStats::default();

    let judgements = judge_all(trajectories, judge, judge_concurrency.max(1));
    for (trajectory, judged) in trajectories.iter().zip(judgements) {
        match judged {
            Ok(parsed) => {
                let (experiences, t_stats) =
                    build_experiences(trajectory, parsed, embedder, threshold)?;
                stats.merge(&t_stats);
                for e in experiences {
                    bank.insert(e)?;
                }
            }
            Err(_) => {
                // Judge failure skips this trajectory only.
                stats.total += trajectory.len();
                stats.errors += trajectory.len();
            }
        }
    }
    Ok((bank, stats))
}

fn judge_all(
    trajectories: &[Trajectory],
    judge: &dyn Judge,
    concurrency: usize,
) -> Vec<Result<crate::judge::ParsedJudgements, JudgeError>> {
    let eligible_of = |t: &Trajectory| -> Vec<usize> {
        t.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.action.kind != ActionKind::ExperienceSearch)
            .map(|(i, _)| i)
            .collect()
    };

    if concurrency <= 1 || trajectories.len() <= 1 {
        return trajectories.iter().map(|t| judge.judge(t, &eligible_of(t))).collect();
    }

    let mut results: Vec<Option<Result<crate::judge::ParsedJudgements, JudgeError>>> = Vec::new();
    results.resize_with(trajectories.len(), || None);
    for wave in (0..trajectories.len()).collect::<Vec<_>>().chunks(concurrency) {
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for &idx in wave {
                let trajectory = &trajectories[idx];
                handles.push((idx, scope.spawn(move || {
                    let eligible = eligible_of(trajectory);
                    judge.judge(trajectory, &eligible)
                })));
            }
            for (idx, handle) in handles {
                results[idx] = Some(handle.join().unwrap_or_else(|_| {
                    Err(JudgeError::Unavailable("judge worker panicked".into()))
                }));
            }
        });
    }
    results.into_iter().map(|r| r.expect("every trajectory judged")).collect()
}
