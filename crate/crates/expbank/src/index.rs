//! Multi-viewpoint vector index over the experience bank: exact top-K
//! cosine retrieval per viewpoint.
//!
//! The bank is append-only. Each insert moves the experience's per-viewpoint
//! embeddings into flat, row-aligned tables (row r of every table belongs to
//! experience r), so a query is one contiguous scan per viewpoint. All rows
//! are unit-norm, so cosine similarity is a plain dot product. No
//! approximate index: banks stay small enough that exactness is cheap and
//! every retrieval is oracle-checkable.

use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

use crate::abstraction::Experience;
use crate::embed::l2_norm;
use crate::embed::Embedding;
use crate::model::{Action, State};
use crate::viewpoint::{registry_ids, ViewpointId};

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate experience id {0}")]
    DuplicateId(String),
    #[error("experience {id} is missing the {viewpoint} embedding")]
    MissingViewpointEmbedding { id: String, viewpoint: ViewpointId },
    #[error("experience {id} carries an unexpected {viewpoint} embedding entry")]
    UnexpectedViewpointEmbedding { id: String, viewpoint: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("experience {id} embedding for {viewpoint} is not unit-norm (|v| = {norm})")]
    NonUnitNorm { id: String, viewpoint: ViewpointId, norm: f64 },
}

/// Everything stored about an admitted experience except its vectors, which
/// live in the aligned per-viewpoint tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceMeta {
    pub id: String,
    pub trajectory_id: String,
    pub step: usize,
    pub state: State,
    pub action: Action,
    pub guidance: String,
    pub q_value: f64,
    /// Whether the source trajectory was solved correctly.
    pub source_outcome: bool,
}

/// Summary of the configuration a bank was built under.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BankConfig {
    pub delta: f64,
    pub dim: usize,
    pub provider: String,
}

/// The experience bank: append-only experiences plus one flat vector table
/// per registry viewpoint, row-aligned with the experience order.
#[derive(Debug, Clone)]
pub struct ExperienceBank {
    experiences: Vec<ExperienceMeta>,
    row_by_id: HashMap<String, usize>,
    tables: BTreeMap<ViewpointId, Vec<f32>>,
    config: BankConfig,
}

impl ExperienceBank {
    pub fn new(dim: usize, provider: impl Into<String>, delta: f64) -> Self {
        let mut tables = BTreeMap::new();
        for id in registry_ids() {
            tables.insert(id, Vec::new());
        }
        Self {
            experiences: Vec::new(),
            row_by_id: HashMap::new(),
            tables,
            config: BankConfig { delta, dim, provider: provider.into() },
        }
    }

    pub fn len(&self) -> usize {
        self.experiences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiences.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    pub fn experiences(&self) -> &[ExperienceMeta] {
        &self.experiences
    }

    pub fn get(&self, id: &str) -> Option<&ExperienceMeta> {
        self.row_by_id.get(id).map(|&row| &self.experiences[row])
    }

    /// The stored vector for one experience row under one viewpoint.
    pub fn row_vector(&self, viewpoint: ViewpointId, row: usize) -> &[f32] {
        let dim = self.config.dim;
        &self.tables[&viewpoint][row * dim..(row + 1) * dim]
    }

    /// Appends an experience, moving its embeddings into the aligned tables.
    /// Validation happens before any mutation, so a failed insert leaves the
    /// bank unchanged.
    pub fn insert(&mut self, experience: Experience) -> Result<(), IndexError> {
        if self.row_by_id.contains_key(&experience.id) {
            return Err(IndexError::DuplicateId(experience.id));
        }
        for viewpoint in registry_ids() {
            let embedding = experience.embeddings.get(&viewpoint).ok_or_else(|| {
                IndexError::MissingViewpointEmbedding { id: experience.id.clone(), viewpoint }
            })?;
            if embedding.dim() != self.config.dim {
                return Err(IndexError::DimensionMismatch {
                    expected: self.config.dim,
                    got: embedding.dim(),
                });
            }
            let norm = l2_norm(embedding.values());
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(IndexError::NonUnitNorm { id: experience.id.clone(), viewpoint, norm });
            }
        }
        if experience.embeddings.len() != registry_ids().len() {
            // Exactly one embedding per registry viewpoint; extra keys are
            // unrepresentable with the typed map, but guard the count anyway.
            return Err(IndexError::UnexpectedViewpointEmbedding {
                id: experience.id.clone(),
                viewpoint: format!("{} entries", experience.embeddings.len()),
            });
        }

        let Experience {
            id,
            trajectory_id,
            step,
            state,
            action,
            guidance,
            q_value,
            source_outcome,
            embeddings,
        } = experience;
        let row = self.experiences.len();
        for (viewpoint, embedding) in embeddings {
            self.tables.get_mut(&viewpoint).expect("registry table").extend(embedding.values());
        }
        self.row_by_id.insert(id.clone(), row);
        self.experiences.push(ExperienceMeta {
            id,
            trajectory_id,
            step,
            state,
            action,
            guidance,
            q_value,
            source_outcome,
        });
        Ok(())
    }
}

/// A retrieval hit: which experience, how similar, and where it came from
/// (viewpoint and search round).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredExperience {
    pub experience_id: String,
    pub score: f32,
    pub viewpoint: ViewpointId,
    pub round: usize,
}

/// Cosine similarity of two unit-norm embeddings: the dot product, clamped
/// to [-1, 1] against rounding.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f32, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(dot(a.values(), b.values()))
}

/// Dot product in 32-bit reals, with 64-bit accumulation once drift over a
/// long vector could matter.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let raw = if a.len() > 256 {
        a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum::<f64>() as f32
    } else {
        a.iter().zip(b).map(|(&x, &y)| x * y).sum::<f32>()
    };
    raw.clamp(-1.0, 1.0)
}

/// Heap entry ordered so the BEST candidate (highest score, then lowest id)
/// compares least; the max-heap then keeps the current worst on top.
struct Candidate<'a> {
    score: f32,
    id: &'a str,
    row: usize,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.score.total_cmp(&self.score).then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

/// Exact top-k scan of one viewpoint table. Returns `min(k, len)` results
/// ordered by score descending, ties broken by experience id ascending.
/// Deterministic; an empty bank yields an empty list.
pub fn top_k(
    bank: &ExperienceBank,
    viewpoint: ViewpointId,
    query: &Embedding,
    k: usize,
) -> Result<Vec<ScoredExperience>, IndexError> {
    if query.dim() != bank.dim() {
        return Err(IndexError::DimensionMismatch { expected: bank.dim(), got: query.dim() });
    }
    if k == 0 || bank.is_empty() {
        return Ok(Vec::new());
    }

    let dim = bank.dim();
    let table = &bank.tables[&viewpoint];
    let query_values = query.values();
    let mut heap: std::collections::BinaryHeap<Candidate> =
        std::collections::BinaryHeap::with_capacity(k + 1);
    for (row, meta) in bank.experiences.iter().enumerate() {
        let score = dot(&table[row * dim..(row + 1) * dim], query_values);
        let candidate = Candidate { score, id: &meta.id, row };
        if heap.len() < k {
            heap.push(candidate);
        } else if let Some(mut worst) = heap.peek_mut() {
            if candidate < *worst {
                *worst = candidate;
            }
        }
    }

    // Ascending in heap order = best first.
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|c| ScoredExperience {
            experience_id: bank.experiences[c.row].id.clone(),
            score: c.score,
            viewpoint,
            round: 1,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::Experience;
    use crate::model::Action;
    use std::collections::BTreeMap;

    fn planted(id: &str, v: [f32; 2]) -> Experience {
        let mut embeddings = BTreeMap::new();
        for viewpoint in registry_ids() {
            embeddings.insert(viewpoint, Embedding::from_values(v.to_vec()).unwrap());
        }
        Experience {
            id: id.to_string(),
            trajectory_id: "t".to_string(),
            step: 0,
            state: State::new("u"),
            action: Action::tool("zoom", "{}"),
            guidance: format!("guidance for {id}"),
            q_value: 9.0,
            source_outcome: true,
            embeddings,
        }
    }

    fn planted_bank() -> ExperienceBank {
        let mut bank = ExperienceBank::new(2, "test", 5.0);
        bank.insert(planted("e1", [1.0, 0.0])).unwrap();
        bank.insert(planted("e2", [0.0, 1.0])).unwrap();
        bank.insert(planted("e3", [0.6, 0.8])).unwrap();
        bank
    }

    fn query(v: [f32; 2]) -> Embedding {
        Embedding::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_identity_orthogonal_and_mixed() {
        let e1 = query([1.0, 0.0]);
        let e2 = query([0.0, 1.0]);
        let a = query([0.6, 0.8]);
        let b = query([0.8, 0.6]);
        assert_eq!(cosine(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        assert!((cosine(&a, &b).unwrap() - 0.96).abs() < 1e-7);
    }

    #[test]
    fn cosine_rejects_dimension_mismatch() {
        let a = query([1.0, 0.0]);
        let b = Embedding::from_values(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(cosine(&a, &b), Err(IndexError::DimensionMismatch { .. })));
    }

    #[test]
    fn insert_grows_every_table_in_lockstep() {
        let bank = planted_bank();
        assert_eq!(bank.len(), 3);
        for viewpoint in registry_ids() {
            assert_eq!(bank.tables[&viewpoint].len(), 3 * bank.dim());
        }
        assert_eq!(bank.row_vector(ViewpointId::Task, 2), &[0.6, 0.8]);
    }

    #[test]
    fn duplicate_id_leaves_bank_unchanged() {
        let mut bank = planted_bank();
        let err = bank.insert(planted("e1", [0.0, 1.0])).unwrap_err();
        assert!(matches!(err, IndexError::DuplicateId(_)));
        assert_eq!(bank.len(), 3);
        for viewpoint in registry_ids() {
            assert_eq!(bank.tables[&viewpoint].len(), 3 * bank.dim());
        }
    }

    #[test]
    fn missing_viewpoint_embedding_is_rejected() {
        let mut bank = planted_bank();
        let mut e = planted("e4", [1.0, 0.0]);
        e.embeddings.remove(&ViewpointId::Task);
        assert!(matches!(
            bank.insert(e),
            Err(IndexError::MissingViewpointEmbedding { viewpoint: ViewpointId::Task, .. })
        ));
        assert_eq!(bank.len(), 3);
    }

    #[test]
    fn top_k_ranks_by_similarity() {
        let bank = planted_bank();
        let hits = top_k(&bank, ViewpointId::Visual, &query([0.0, 1.0]), 2).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].experience_id, "e2");
        assert_eq!(hits[0].score, 1.0);
        assert_eq!(hits[1].experience_id, "e3");
        assert!((hits[1].score - 0.8).abs() < 1e-7);
    }

    #[test]
    fn top_k_truncates_to_bank_size() {
        let bank = planted_bank();
        let hits = top_k(&bank, ViewpointId::History, &query([1.0, 0.0]), 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].experience_id, "e1");
        // Full ordering: e1 (1.0), e3 (0.6), e2 (0.0).
        assert_eq!(hits[1].experience_id, "e3");
        assert_eq!(hits[2].experience_id, "e2");
    }

    #[test]
    fn ties_break_by_id_ascending() {
        let mut bank = ExperienceBank::new(2, "test", 5.0);
        bank.insert(planted("b", [1.0, 0.0])).unwrap();
        bank.insert(planted("a", [1.0, 0.0])).unwrap();
        let hits = top_k(&bank, ViewpointId::Visual, &query([1.0, 0.0]), 1).unwrap();
        assert_eq!(hits[0].experience_id, "a");
    }

    #[test]
    fn empty_bank_returns_empty() {
        let bank = ExperienceBank::new(2, "test", 5.0);
        assert!(top_k(&bank, ViewpointId::Visual, &query([1.0, 0.0]), 3).unwrap().is_empty());
    }

    #[test]
    fn scores_stay_in_bounds() {
        let bank = planted_bank();
        for hit in top_k(&bank, ViewpointId::Visual, &query([-1.0, 0.0]), 3).unwrap() {
            assert!((-1.0..=1.0).contains(&hit.score));
        }
    }
}
