//! Retrieval over the bank: Wide Search, Deep Search, and the unified
//! deep-and-wide union.
//!
//! Wide Search is breadth under one viewpoint: top-K by cosine. Deep Search
//! refines across viewpoints: top-1 per round over a caller-supplied
//! viewpoint sequence. Deep-and-wide runs top-K per round and unions the
//! rounds. All unions deduplicate by experience id with the first occurrence
//! winning (earliest round, then rank), which preserves the refinement
//! narrative in the rendered guidance. The caller chooses the viewpoint
//! sequence; picking viewpoints is policy, not bank, behavior.

use serde::Serialize;
use thiserror::Error;

use crate::embed::{viewpoint_content, EmbedError, Embedder};
use crate::index::{top_k, ExperienceBank, IndexError, ScoredExperience};
use crate::model::{Action, ActionKind, State};
use crate::viewpoint::{registry_ids, ViewpointId};

/// Experiences retrieved per round.
pub const DEFAULT_TOP_K: usize = 3;
/// Refinement rounds.
pub const DEFAULT_ROUNDS: usize = 3;

/// Text rendered when a search returns nothing.
pub const NO_EXPERIENCE_TEXT: &str = "NO RELEVANT EXPERIENCE FOUND";

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Retrieval configuration: breadth K and the per-round viewpoint sequence
/// (its length is the refinement depth L; repeats allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct SearchParams {
    pub k: usize,
    pub viewpoint_sequence: Vec<ViewpointId>,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self { k: DEFAULT_TOP_K, viewpoint_sequence: registry_ids().to_vec() }
    }
}

impl SearchParams {
    pub fn new(k: usize, viewpoint_sequence: Vec<ViewpointId>) -> Result<Self, SearchError> {
        let params = Self { k, viewpoint_sequence };
        params.validate()?;
        Ok(params)
    }

    pub fn rounds(&self) -> usize {
        self.viewpoint_sequence.len()
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.k < 1 {
            return Err(SearchError::InvalidParams("k must be at least 1".to_string()));
        }
        if self.viewpoint_sequence.is_empty() {
            return Err(SearchError::InvalidParams(
                "viewpoint sequence must not be empty".to_string(),
            ));
        }
        Ok(())
    }
}

/// One retrieved experience, ready for injection: provenance-scored hit,
/// its guidance text, and a one-line summary of the action it captured.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuidanceItem {
    #[serde(flatten)]
    pub scored: ScoredExperience,
    pub guidance: String,
    pub action_summary: String,
}

/// Deduplicated retrieval result, ordered by (round, rank within round).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuidanceSet {
    pub items: Vec<GuidanceItem>,
    /// Dedup policy applied when rounds overlap.
    pub dedup: &'static str,
}

impl GuidanceSet {
    fn empty() -> Self {
        Self { items: Vec::new(), dedup: DEDUP_FIRST_OCCURRENCE }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub const DEDUP_FIRST_OCCURRENCE: &str = "first_occurrence";

fn summarize_action(action: &Action) -> String {
    match action.kind {
        ActionKind::Tool => format!("{}({})", action.name, action.params),
        ActionKind::Answer => format!("answer({})", action.params),
        ActionKind::ExperienceSearch => format!("search_experiences({})", action.params),
    }
}

fn push_hits(set: &mut GuidanceSet, bank: &ExperienceBank, hits: Vec<ScoredExperience>, round: usize) {
    for mut hit in hits {
        if set.items.iter().any(|item| item.scored.experience_id == hit.experience_id) {
            continue;
        }
        hit.round = round;
        let meta = bank.get(&hit.experience_id).expect("hit comes from this bank");
        set.items.push(GuidanceItem {
            guidance: meta.guidance.clone(),
            action_summary: summarize_action(&meta.action),
            scored: hit,
        });
    }
}

/// Breadth retrieval: top-k experiences under a single viewpoint for the
/// query state. All items carry round 1.
pub fn wide_search(
    bank: &ExperienceBank,
    embedder: &dyn Embedder,
    state: &State,
    viewpoint: ViewpointId,
    k: usize,
) -> Result<GuidanceSet, SearchError> {
    if k < 1 {
        return Err(SearchError::InvalidParams("k must be at least 1".to_string()));
    }
    let mut set = GuidanceSet::empty();
    if bank.is_empty() {
        return Ok(set);
    }
    let query = embedder.embed(&viewpoint_content(state, viewpoint))?;
    let hits = top_k(bank, viewpoint, &query, k)?;
    push_hits(&mut set, bank, hits, 1);
    Ok(set)
}

/// Iterative refinement: one top-1 retrieval per round over the viewpoint
/// sequence, unioned with first-occurrence dedup.
pub fn deep_search(
    bank: &ExperienceBank,
    embedder: &dyn Embedder,
    state: &State,
    viewpoint_sequence: &[ViewpointId],
) -> Result<GuidanceSet, SearchError> {
    if viewpoint_sequence.is_empty() {
        return Err(SearchError::InvalidParams("viewpoint sequence must not be empty".to_string()));
    }
    let mut set = GuidanceSet::empty();
    if bank.is_empty() {
        return Ok(set);
    }
    for (j, &viewpoint) in viewpoint_sequence.iter().enumerate() {
        let query = embedder.embed(&viewpoint_content(state, viewpoint))?;
        let hits = top_k(bank, viewpoint, &query, 1)?;
        push_hits(&mut set, bank, hits, j + 1);
    }
    Ok(set)
}

/// Unified deep-and-wide search: top-k per round across the viewpoint
/// sequence, unioned with first-occurrence dedup. At most `rounds * k`
/// distinct items. Deterministic given bank, state, and params.
pub fn deep_wide_search(
    bank: &ExperienceBank,
    embedder: &dyn Embedder,
    state: &State,
    params: &SearchParams,
) -> Result<GuidanceSet, SearchError> {
    params.validate()?;
    let mut set = GuidanceSet::empty();
    if bank.is_empty() {
        return Ok(set);
    }
    for (j, &viewpoint) in params.viewpoint_sequence.iter().enumerate() {
        let query = embedder.embed(&viewpoint_content(state, viewpoint))?;
        let hits = top_k(bank, viewpoint, &query, params.k)?;
        push_hits(&mut set, bank, hits, j + 1);
    }
    Ok(set)
}

/// Renders a guidance set as the text block injected into an agent context:
/// one line per item, `[round.rank] (viewpoint, score) guidance`. Byte
/// deterministic; the empty set renders a fixed marker line.
pub fn format_guidance(set: &GuidanceSet) -> String {
    if set.items.is_empty() {
        return NO_EXPERIENCE_TEXT.to_string();
    }
    let mut lines = Vec::with_capacity(set.items.len());
    let mut current_round = 0;
    let mut rank = 0;
    for item in &set.items {
        if item.scored.round != current_round {
            current_round = item.scored.round;
            rank = 0;
        }
        rank += 1;
        lines.push(format!(
            "[{}.{}] ({}, {:.4}) {}",
            item.scored.round, rank, item.scored.viewpoint, item.scored.score, item.guidance
        ));
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::Experience;
    use crate::embed::{hash_embed, Embedder, HashEmbedder};
    use crate::model::VisualRef;
    use std::collections::BTreeMap;

    fn state_for(tag: &str) -> State {
        State::new(format!("inspect the {tag}"))
            .with_visual_refs(vec![VisualRef { id: format!("img_{tag}"), caption: None }])
            .with_task_descriptor(format!("task {tag}"))
    }

    /// An experience whose stored vectors equal the real pipeline embeddings
    /// of its own state, so a query from the same state scores 1.0.
    fn pipeline_experience(id: &str, tag: &str, embedder: &HashEmbedder) -> Experience {
        let state = state_for(tag);
        let mut embeddings = BTreeMap::new();
        for viewpoint in registry_ids() {
            embeddings.insert(
                viewpoint,
                embedder.embed(&crate::embed::viewpoint_content(&state, viewpoint)).unwrap(),
            );
        }
        Experience {
            id: id.to_string(),
            trajectory_id: id.to_string(),
            step: 0,
            state,
            action: Action::tool("zoom", format!("{{\"target\":\"{tag}\"}}")),
            guidance: format!("zoom in on the {tag} before answering"),
            q_value: 9.0,
            source_outcome: true,
            embeddings,
        }
    }

    fn pipeline_bank(tags: &[&str], embedder: &HashEmbedder) -> ExperienceBank {
        let mut bank = ExperienceBank::new(embedder.dim(), embedder.tag(), 5.0);
        for (i, tag) in tags.iter().enumerate() {
            bank.insert(pipeline_experience(&format!("e{i}"), tag, embedder)).unwrap();
        }
        bank
    }

    #[test]
    fn wide_search_on_empty_bank_is_empty() {
        let embedder = HashEmbedder::new(8);
        let bank = ExperienceBank::new(8, embedder.tag(), 5.0);
        let set =
            wide_search(&bank, &embedder, &state_for("cup"), ViewpointId::Visual, 3).unwrap();
        assert!(set.is_empty());
        assert_eq!(format_guidance(&set), NO_EXPERIENCE_TEXT);
    }

    #[test]
    fn planted_exact_match_ranks_first_with_unit_score() {
        let embedder = HashEmbedder::new(64);
        let bank = pipeline_bank(&["cup", "hat", "dog"], &embedder);
        let set =
            wide_search(&bank, &embedder, &state_for("hat"), ViewpointId::Visual, 2).unwrap();
        assert_eq!(set.items[0].scored.experience_id, "e1");
        assert!(set.items[0].scored.score >= 1.0 - 1e-6);
        assert!(set.items.iter().all(|i| i.scored.round == 1));
    }

    #[test]
    fn deep_search_unions_per_view_winners() {
        let embedder = HashEmbedder::new(64);
        let bank = pipeline_bank(&["cup", "hat"], &embedder);
        // Query state matches e0 exactly; every viewpoint's top-1 is e0, so
        // dedup collapses the rounds to one item.
        let set = deep_search(
            &bank,
            &embedder,
            &state_for("cup"),
            &[ViewpointId::Visual, ViewpointId::Task, ViewpointId::History],
        )
        .unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.items[0].scored.round, 1);
    }

    #[test]
    fn deep_search_round_provenance() {
        let embedder = HashEmbedder::new(64);
        let bank = pipeline_bank(&["cup", "hat", "dog"], &embedder);
        // A state matching nothing exactly: winners may differ per view.
        let set = deep_search(
            &bank,
            &embedder,
            &state_for("pen"),
            &[ViewpointId::Visual, ViewpointId::History],
        )
        .unwrap();
        assert!(!set.is_empty());
        for item in &set.items {
            assert!(item.scored.round >= 1 && item.scored.round <= 2);
        }
        let expected_view =
            |round: usize| [ViewpointId::Visual, ViewpointId::History][round - 1];
        for item in &set.items {
            assert_eq!(item.scored.viewpoint, expected_view(item.scored.round));
        }
    }

    #[test]
    fn single_round_deep_wide_equals_wide() {
        let embedder = HashEmbedder::new(64);
        let bank = pipeline_bank(&["cup", "hat", "dog", "fox"], &embedder);
        let state = state_for("dog");
        let params = SearchParams::new(3, vec![ViewpointId::Task]).unwrap();
        let dw = deep_wide_search(&bank, &embedder, &state, &params).unwrap();
        let w = wide_search(&bank, &embedder, &state, ViewpointId::Task, 3).unwrap();
        assert_eq!(dw, w);
    }

    #[test]
    fn unit_k_deep_wide_equals_deep() {
        let embedder = HashEmbedder::new(64);
        let bank = pipeline_bank(&["cup", "hat", "dog", "fox"], &embedder);
        let state = state_for("owl");
        let sequence = vec![ViewpointId::Visual, ViewpointId::History, ViewpointId::Visual];
        let params = SearchParams::new(1, sequence.clone()).unwrap();
        let dw = deep_wide_search(&bank, &embedder, &state, &params).unwrap();
        let d = deep_search(&bank, &embedder, &state, &sequence).unwrap();
        assert_eq!(dw, d);
    }

    #[test]
    fn cardinality_bound_and_distinct_ids() {
        let embedder = HashEmbedder::new(64);
        let bank = pipeline_bank(&["a", "b", "c", "d", "e"], &embedder);
        let params = SearchParams::default();
        let set = deep_wide_search(&bank, &embedder, &state_for("q"), &params).unwrap();
        assert!(set.len() <= params.rounds() * params.k);
        assert!(set.len() <= bank.len());
        let mut ids: Vec<_> = set.items.iter().map(|i| &i.scored.experience_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), set.len());
    }

    #[test]
    fn repeated_searches_are_identical() {
        let embedder = HashEmbedder::new(64);
        let bank = pipeline_bank(&["a", "b", "c"], &embedder);
        let params = SearchParams::default();
        let one = deep_wide_search(&bank, &embedder, &state_for("z"), &params).unwrap();
        let two = deep_wide_search(&bank, &embedder, &state_for("z"), &params).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn format_guidance_lines() {
        let set = GuidanceSet {
            items: vec![GuidanceItem {
                scored: ScoredExperience {
                    experience_id: "e0".to_string(),
                    score: 1.0,
                    viewpoint: ViewpointId::Visual,
                    round: 1,
                },
                guidance: "zoom in on the cup before answering".to_string(),
                action_summary: "zoom({\"target\":\"cup\"})".to_string(),
            }],
            dedup: DEDUP_FIRST_OCCURRENCE,
        };
        assert_eq!(
            format_guidance(&set),
            "[1.1] (v_visual, 1.0000) zoom in on the cup before answering"
        );
    }

    #[test]
    fn format_guidance_golden_fixture() {
        let embedder = HashEmbedder::new(64);
        let bank = pipeline_bank(&["cup", "hat", "dog"], &embedder);
        let params = SearchParams::new(2, vec![ViewpointId::Visual, ViewpointId::Task]).unwrap();
        let set = deep_wide_search(&bank, &embedder, &state_for("cup"), &params).unwrap();
        let expected = include_str!("../tests/fixtures/guidance_f2.txt");
        assert_eq!(format_guidance(&set), expected.trim_end_matches('\n'));
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(SearchParams::new(0, vec![ViewpointId::Visual]).is_err());
        assert!(SearchParams::new(1, vec![]).is_err());
    }
}
