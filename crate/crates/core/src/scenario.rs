//! What-if probes and multiverse resampling.
//!
//! None of these operations touch the source universe. Each returns a
//! [`Branch`]: new threads that copy the source prefix verbatim and carry a
//! [`ThreadOrigin`] pointing back at it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    generate_universe_at, sample_reply_probability, EngineError, GenerationContext, ThreadBuilder, UniverseError,
    UniverseMeta,
};
use crate::llm::Gateway;
use crate::model::{
    is_sentinel_author, CommunityDesign, GenerationConfig, Persona, Thread, ThreadOrigin, Universe, UtteranceKind,
    MODERATOR,
};
use crate::prompt::{build_reply_prompt, Speaker};
use crate::rng::{tags, RngStream};

pub const DEFAULT_ALTERNATIVES: usize = 3;

fn default_alternatives() -> usize {
    DEFAULT_ALTERNATIVES
}

/// The member whose voice a what-if reply uses. With a description this is a
/// free-form injected behavior (`Troll` / `shares trolling comments`);
/// without one, `name` must name a roster persona.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedPersona {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl InjectedPersona {
    pub fn custom(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self { name: name.into(), description: Some(description.into()) }
    }

    pub fn member(name: impl Into<String>) -> Self {
        Self { name: name.into(), description: None }
    }

    /// Parses `"Label:description"`, or a bare roster name.
    pub fn parse(s: &str) -> Self {
        match s.split_once(':') {
            Some((name, desc)) => Self::custom(name.trim(), desc.trim()),
            None => Self::member(s.trim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhatIfSpec {
    pub thread_id: String,
    pub at_utterance_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected_persona: Option<InjectedPersona>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention_text: Option<String>,
    #[serde(default = "default_alternatives")]
    pub alternatives: usize,
    /// Full title attribute for the reply span, e.g. `comment that is trolling`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title_override: Option<String>,
}

impl WhatIfSpec {
    pub fn new(thread_id: impl Into<String>, at_utterance_index: usize) -> Self {
        Self {
            thread_id: thread_id.into(),
            at_utterance_index,
            injected_persona: None,
            intervention_text: None,
            alternatives: DEFAULT_ALTERNATIVES,
            title_override: None,
        }
    }
}

/// `shares trolling comments` → `comment that is trolling`; other
/// descriptions are used whole.
pub fn default_title_for(description: &str) -> String {
    let d = description.trim().trim_end_matches('.');
    let core = d
        .strip_prefix("shares ")
        .and_then(|rest| rest.strip_suffix(" comments").or_else(|| rest.strip_suffix(" comment")))
        .unwrap_or(d);
    format!("comment that is {}", core.trim())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    WhatifReply,
    WhatifIntervention,
    MultiverseThread,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlternativeFailure {
    pub branch_index: usize,
    pub error: String,
}

/// Alternative continuations of one source thread.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub kind: BranchKind,
    pub source_universe: String,
    pub source_thread: String,
    pub at_utterance_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<WhatIfSpec>,
    pub threads: Vec<Thread>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<AlternativeFailure>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("thread {0} not found")]
    NotFound(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Generation(#[from] EngineError),
}

impl ScenarioError {
    fn invalid(msg: impl Into<String>) -> Self {
        ScenarioError::InvalidSpec(msg.into())
    }
}

fn locate<'u>(universe: &'u Universe, thread_id: &str, at: usize) -> Result<&'u Thread, ScenarioError> {
    let thread = universe.thread(thread_id).ok_or_else(|| ScenarioError::NotFound(thread_id.to_string()))?;
    if at >= thread.len() {
        return Err(ScenarioError::invalid(format!(
            "utterance index {at} is out of range for a thread of {}",
            thread.len()
        )));
    }
    Ok(thread)
}

fn check_label(label: &str) -> Result<(), ScenarioError> {
    if label.trim().is_empty() || label.contains([']', '\n', '\r']) || label == MODERATOR {
        return Err(ScenarioError::invalid(format!("{label:?} cannot be used as a responder")));
    }
    Ok(())
}

/// Resolves the injected persona to a prompt speaker and its title override.
fn injected_speaker(universe: &Universe, injected: &InjectedPersona) -> Result<(Speaker, Option<String>), ScenarioError> {
    check_label(&injected.name)?;
    match &injected.description {
        Some(desc) if !desc.trim().is_empty() => Ok((
            Speaker::Injected { label: injected.name.trim().to_string(), behavior: desc.trim().to_string() },
            Some(default_title_for(desc)),
        )),
        _ => {
            let persona = universe
                .persona(injected.name.trim())
                .ok_or_else(|| ScenarioError::invalid(format!("{} is not in the roster", injected.name)))?;
            Ok((Speaker::Member(persona.clone()), None))
        }
    }
}

/// Speaker for an existing thread author.
fn author_speaker(universe: &Universe, author: &str) -> Speaker {
    match universe.persona(author) {
        Some(p) => Speaker::Member(p.clone()),
        None => Speaker::Anonymous { label: author.to_string() },
    }
}

fn context<'u>(universe: &'u Universe, gateway: Gateway, temperature: f64) -> GenerationContext<'u> {
    GenerationContext {
        design: universe.design(),
        config: universe.config(),
        roster: universe.roster(),
        gateway,
        temperature,
    }
}

/// Generates `alternatives` single-reply continuations of `prefix`, each from
/// `speaker`, optionally after a moderator intervention.
#[allow(clippy::too_many_arguments)]
fn probe(
    universe: &Universe,
    source: &Thread,
    at: usize,
    speaker: &Speaker,
    title: Option<&str>,
    intervention: Option<&str>,
    alternatives: usize,
    gateway: &Gateway,
    rng: &mut RngStream,
) -> (Vec<Thread>, Vec<AlternativeFailure>, Option<EngineError>) {
    let ctx = context(universe, gateway.clone(), universe.config().temperature);
    let seeds: Vec<u64> = (0..alternatives).map(|_| rng.next_u64()).collect();
    let mut threads = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (branch_index, seed) in seeds.into_iter().enumerate() {
        let mut alt_rng = RngStream::new(seed);
        let result = (|| -> Result<Thread, EngineError> {
            let mut b = ThreadBuilder::resume(alt_rng.uuid().to_string(), &source.utterances()[..=at], universe.roster());
            if let Some(text) = intervention {
                b.push(MODERATOR, text.trim().to_string(), UtteranceKind::Intervention, None)?;
            }
            let prompt = build_reply_prompt(
                speaker,
                b.utterances(),
                ctx.design,
                ctx.config.ablation,
                title,
                None,
                ctx.config.prompt_char_limit,
            )?;
            let text = ctx.complete_utterance(&prompt, UtteranceKind::Reply, &mut alt_rng)?;
            b.push(speaker.label(), text, UtteranceKind::Reply, None)?;
            let origin = ThreadOrigin { source_thread: source.id().to_string(), branch_index };
            Ok(b.finish()?.with_origin(origin))
        })();
        match result {
            Ok(t) => threads.push(t),
            Err(e) => {
                failures.push(AlternativeFailure { branch_index, error: e.to_string() });
                first_error.get_or_insert(e);
            }
        }
    }
    (threads, failures, first_error)
}

fn settle(
    kind: BranchKind,
    universe: &Universe,
    source: &Thread,
    at: usize,
    spec: Option<WhatIfSpec>,
    outcome: (Vec<Thread>, Vec<AlternativeFailure>, Option<EngineError>),
) -> Result<Branch, ScenarioError> {
    let (threads, failures, first_error) = outcome;
    if threads.is_empty() {
        if let Some(e) = first_error {
            return Err(e.into());
        }
    }
    Ok(Branch {
        kind,
        source_universe: universe.id().to_string(),
        source_thread: source.id().to_string(),
        at_utterance_index: at,
        spec,
        threads,
        failures,
    })
}

/// Regenerates the reply after `spec.at_utterance_index` in the voice of the
/// injected persona, `spec.alternatives` times.
pub fn whatif_reply(
    universe: &Universe,
    spec: &WhatIfSpec,
    gateway: &Gateway,
    rng: &mut RngStream,
) -> Result<Branch, ScenarioError> {
    let at = spec.at_utterance_index;
    let source = locate(universe, &spec.thread_id, at)?;
    if spec.alternatives == 0 {
        return Err(ScenarioError::invalid("alternatives must be at least 1"));
    }
    let injected = spec
        .injected_persona
        .as_ref()
        .ok_or_else(|| ScenarioError::invalid("injected_persona is required"))?;
    let (speaker, default_title) = injected_speaker(universe, injected)?;
    if speaker.label() == source.utterances()[at].author() {
        return Err(ScenarioError::invalid(format!("{} would reply to themself", speaker.label())));
    }
    let title = spec.title_override.clone().or(default_title);
    let outcome = probe(
        universe,
        source,
        at,
        &speaker,
        title.as_deref(),
        None,
        spec.alternatives,
        &gateway.scoped("whatif"),
        rng,
    );
    settle(BranchKind::WhatifReply, universe, source, at, Some(spec.clone()), outcome)
}

/// Appends a moderator intervention after `spec.at_utterance_index` and
/// generates the probed member's response. The responder defaults to the
/// author of the probed utterance; `injected_persona` overrides it.
pub fn whatif_intervention(
    universe: &Universe,
    spec: &WhatIfSpec,
    gateway: &Gateway,
    rng: &mut RngStream,
) -> Result<Branch, ScenarioError> {
    let at = spec.at_utterance_index;
    let source = locate(universe, &spec.thread_id, at)?;
    if spec.alternatives == 0 {
        return Err(ScenarioError::invalid("alternatives must be at least 1"));
    }
    let text = spec.intervention_text.as_deref().map(str::trim).unwrap_or("");
    if text.is_empty() {
        return Err(ScenarioError::invalid("intervention_text is empty"));
    }
    if text.contains("</span>") || text.contains('\n') {
        return Err(ScenarioError::invalid("intervention_text must be a single line without markup"));
    }
    let probed = source.utterances()[at].author();
    if probed == MODERATOR {
        return Err(ScenarioError::invalid("the moderator cannot be probed"));
    }
    let (speaker, title) = match &spec.injected_persona {
        Some(injected) => injected_speaker(universe, injected)?,
        None => (author_speaker(universe, probed), None),
    };
    let title = spec.title_override.clone().or(title);
    let outcome = probe(
        universe,
        source,
        at,
        &speaker,
        title.as_deref(),
        Some(text),
        spec.alternatives,
        &gateway.scoped("whatif"),
        rng,
    );
    settle(BranchKind::WhatifIntervention, universe, source, at, Some(spec.clone()), outcome)
}

/// A sibling universe: same design, fresh seed, multiverse temperature.
pub fn multiverse_community(
    community_id: &str,
    design: &CommunityDesign,
    config: &GenerationConfig,
    gateway: &Gateway,
    fresh_seed: u64,
    created_at: chrono::DateTime<chrono::Utc>,
) -> Result<Universe, UniverseError> {
    multiverse_community_with_progress(community_id, design, config, gateway, fresh_seed, created_at, &|_, _| {})
}

pub fn multiverse_community_with_progress(
    community_id: &str,
    design: &CommunityDesign,
    config: &GenerationConfig,
    gateway: &Gateway,
    fresh_seed: u64,
    created_at: chrono::DateTime<chrono::Utc>,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<Universe, UniverseError> {
    let config = GenerationConfig { rng_seed: fresh_seed, ..config.clone() };
    generate_universe_at(
        design,
        &config,
        config.multiverse_temperature,
        &gateway.scoped("multiverse_community"),
        UniverseMeta::new(community_id, created_at),
        progress,
    )
}

/// `k` independent regenerations of a thread from the chosen utterance onward,
/// at the multiverse temperature. Each continuation has at least one reply and
/// then follows the normal reply loop with a fresh reply probability.
pub fn multiverse_thread(
    universe: &Universe,
    thread_id: &str,
    at_utterance_index: usize,
    k: usize,
    gateway: &Gateway,
    seed: u64,
) -> Result<Branch, ScenarioError> {
    let at = at_utterance_index;
    let source = locate(universe, thread_id, at)?;
    if k == 0 {
        return Err(ScenarioError::invalid("k must be at least 1"));
    }
    let config = universe.config();
    if at >= config.max_replies {
        return Err(ScenarioError::invalid(format!("the thread already has {at} replies at that point")));
    }
    if source.utterances()[..=at].iter().any(|u| u.author() == MODERATOR) {
        return Err(ScenarioError::invalid("cannot resample after a moderator intervention"));
    }
    let ctx = context(universe, gateway.scoped("multiverse_thread"), config.multiverse_temperature);
    let mut threads = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for branch_index in 0..k {
        let mut rng = RngStream::derive(seed, tags::BRANCH, branch_index as u64);
        let mut b = ThreadBuilder::resume(rng.uuid().to_string(), &source.utterances()[..=at], universe.roster());
        let p = sample_reply_probability(&mut rng, config);
        let result = b
            .continue_replies(&ctx, p, true, &mut rng)
            .map_err(|e| e.source)
            .and_then(|_| b.finish().map_err(EngineError::from));
        match result {
            Ok(t) => threads.push(t.with_origin(ThreadOrigin { source_thread: source.id().to_string(), branch_index })),
            Err(e) => {
                failures.push(AlternativeFailure { branch_index, error: e.to_string() });
                first_error.get_or_insert(e);
            }
        }
    }
    settle(BranchKind::MultiverseThread, universe, source, at, None, (threads, failures, first_error))
}

/// True if `thread` is authored only by roster members, sentinels, or `extra`.
pub fn authored_within(thread: &Thread, roster: &[Persona], extra: &[&str]) -> bool {
    thread.utterances().iter().all(|u| {
        is_sentinel_author(u.author()) || extra.contains(&u.author()) || roster.iter().any(|p| p.name() == u.author())
    })
}
