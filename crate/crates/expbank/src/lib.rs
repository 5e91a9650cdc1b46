//! Experience bank engine for tool-using agents.
//!
//! Historical trajectories are decomposed into atomic state-action
//! transitions, judged in hindsight for per-step quality and reusable
//! guidance, filtered by a quality threshold, and indexed under three
//! compositional state viewpoints. At inference time an agent queries the
//! bank per reasoning step with Wide (top-K under one viewpoint), Deep
//! (top-1 across a viewpoint sequence), or unified deep-and-wide search,
//! and receives deduplicated guidance text for its working context.
//!
//! Module map:
//!
//! * [`model`] - states, actions, trajectories, transitions, validation
//! * [`viewpoint`] - the fixed three-viewpoint registry and canonical
//!   projections
//! * [`embed`] - embedding providers (deterministic hash, remote HTTP)
//! * [`judge`] - hindsight prompts, judgement parsing, scripted/remote judges
//! * [`abstraction`] - trajectories -> filtered experiences -> bank
//! * [`index`] - exact top-K cosine retrieval over per-viewpoint tables
//! * [`search`] - wide / deep / deep-and-wide retrieval and rendering
//! * [`store`] - durable bank directories with checksummed round trips
//! * [`harness`] - deterministic synthetic agent loop and benchmark

pub mod abstraction;
pub mod embed;
pub mod harness;
mod hash;
pub mod index;
pub mod judge;
pub mod model;
pub mod search;
pub mod store;
pub mod viewpoint;

pub use abstraction::{
    abstract_trajectory, build_bank, AbstractError, AbstractionConfig, AbstractionStats,
    Experience, DEFAULT_THRESHOLD,
};
pub use embed::{
    hash_embed, provider_from_env, EmbedContent, EmbedError, Embedder, Embedding, HashEmbedder,
    RemoteEmbedder, DEFAULT_HASH_DIM, EMBED_URL_ENV,
};
pub use index::{cosine, top_k, BankConfig, ExperienceBank, ExperienceMeta, IndexError, ScoredExperience};
pub use judge::{
    build_hindsight_prompt, parse_judgement, scripted_judge, Judge, JudgeConfig, JudgeError,
    JudgeMode, RemoteJudge, ScriptedJudge, StepJudgement, StepScript, JUDGE_URL_ENV,
};
pub use model::{
    decompose, parse_trajectory_lines, validate_trajectory, Action, ActionKind, HistoryEntry,
    ModelError, Outcome, State, Trajectory, TrajectoryRecord, TrajectoryStep, Transition,
    VisualRef,
};
pub use search::{
    deep_search, deep_wide_search, format_guidance, wide_search, GuidanceItem, GuidanceSet,
    SearchError, SearchParams, DEFAULT_ROUNDS, DEFAULT_TOP_K, NO_EXPERIENCE_TEXT,
};
pub use store::{load, save, BankManifest, StoreError};
pub use viewpoint::{
    list_viewpoints, project, registry_ids, UnknownViewpoint, ViewpointId, ViewpointSpec,
    VIEWPOINT_COUNT,
};
