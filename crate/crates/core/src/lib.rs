//! Generative community simulation.
//!
//! Given a [`CommunityDesign`](model::CommunityDesign) (goal, rules, a handful of
//! seed personas), the engine expands the seeds into a large roster, then
//! generates discussion threads through chained completion prompts. The
//! [`scenario`] module layers what-if probes and multiverse resampling on top.

pub mod engine;
pub mod llm;
pub mod model;
pub mod persona;
pub mod prompt;
pub mod rng;
pub mod scenario;
pub mod store;

pub use engine::{generate_universe, ThreadError, UniverseError};
pub use llm::{
    CompletionBackend, CompletionRequest, CompletionResult, FinishReason, Gateway, LlmError,
    MockBackend,
};
pub use model::{
    validate_design, Ablation, CommunityDesign, DesignDraft, GenerationConfig, ModelError,
    Persona, Polarity, Rule, Thread, Universe, Utterance, UtteranceKind,
};
pub use rng::RngStream;
pub use scenario::{Branch, BranchKind, InjectedPersona, ScenarioError, WhatIfSpec};
pub use store::{Store, StoreError, UniverseSummary};
