//! The generation state machine.
//!
//! A thread starts with a post from a uniformly drawn roster member. A reply
//! probability `p` is drawn once per thread; before each reply a uniform draw
//! continues the thread with probability `p`, up to the reply cap. Each reply
//! comes from a new persona with probability `new_persona_rate`, otherwise
//! from an earlier participant other than the latest speaker.
//!
//! Every thread owns a child stream derived from the universe seed and its
//! index, so threads generate in parallel without perturbing reproducibility.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use thiserror::Error;

use crate::llm::{stable_hash, CompletionRequest, Gateway, LlmError};
use crate::model::{
    anonymous_label, is_sentinel_author, Ablation, CommunityDesign, GenerationConfig, ModelError, Persona, Thread,
    Universe, UniverseDraft, Utterance, UtteranceKind, MODERATOR,
};
use crate::persona::{expand_personas, ExpansionError};
use crate::prompt::{build_headline_prompt, build_reply_prompt, parse_completion, PromptError, PromptText, Speaker};
use crate::rng::{tags, RngStream};

/// Extra completions requested when a completion comes back empty.
pub const EMPTY_RESAMPLES: usize = 3;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error("no eligible responder: every roster member is the latest speaker")]
    NoCandidate,
    #[error("{kind:?} generation failed: {attempts} completions came back empty")]
    GenerationFailed { kind: UtteranceKind, attempts: usize },
}

impl EngineError {
    /// The backend error underneath, if any.
    pub fn backend(&self) -> Option<&LlmError> {
        match self {
            EngineError::Backend(e) => Some(e),
            EngineError::Expansion(ExpansionError::Backend { source, .. }) => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
#[error("thread generation failed: {source}")]
pub struct ThreadError {
    /// Utterances generated before the failure.
    pub partial: Option<Box<Thread>>,
    #[source]
    pub source: EngineError,
}

#[derive(Debug, Error)]
#[error("universe generation failed: {source}")]
pub struct UniverseError {
    /// Whatever was generated before the failure, for inspection.
    pub partial: Option<Box<Universe>>,
    #[source]
    pub source: EngineError,
}

impl From<EngineError> for UniverseError {
    fn from(source: EngineError) -> Self {
        Self { partial: None, source }
    }
}

/// One Gaussian draw, clamped to [0, 1].
pub fn sample_reply_probability(rng: &mut RngStream, config: &GenerationConfig) -> f64 {
    rng.normal(config.reply_prob_mean, config.reply_prob_stdev).clamp(0.0, 1.0)
}

/// Picks the next speaker. Never returns `latest`.
pub fn select_responder(
    roster: &[Persona],
    participants: &[Persona],
    latest: &Persona,
    rng: &mut RngStream,
    config: &GenerationConfig,
) -> Result<Persona, EngineError> {
    let fresh: Vec<&Persona> = roster
        .iter()
        .filter(|p| p.name() != latest.name() && !participants.iter().any(|q| q.name() == p.name()))
        .collect();
    let returning: Vec<&Persona> = participants.iter().filter(|p| p.name() != latest.name()).collect();
    let want_fresh = rng.chance(config.new_persona_rate);
    let (first, second) = if want_fresh { (&fresh, &returning) } else { (&returning, &fresh) };
    let pool = if first.is_empty() { second } else { first };
    if pool.is_empty() {
        return Err(EngineError::NoCandidate);
    }
    Ok((*rng.pick(pool)).clone())
}

/// Shared inputs for everything that turns prompts into utterances.
#[derive(Clone)]
pub(crate) struct GenerationContext<'a> {
    pub design: &'a CommunityDesign,
    pub config: &'a GenerationConfig,
    pub roster: &'a [Persona],
    pub gateway: Gateway,
    pub temperature: f64,
}

impl GenerationContext<'_> {
    /// Completes `prompt` and cleans the result, resampling empty output.
    pub(crate) fn complete_utterance(
        &self,
        prompt: &PromptText,
        kind: UtteranceKind,
        rng: &mut RngStream,
    ) -> Result<String, EngineError> {
        let operation = match kind {
            UtteranceKind::Post => "post",
            _ => "reply",
        };
        for _ in 0..=EMPTY_RESAMPLES {
            let request = CompletionRequest::content(prompt.body.clone(), self.temperature, rng.next_u64());
            match self.gateway.complete(&request, operation) {
                Ok(result) => match parse_completion(&result.text) {
                    Ok(text) => return Ok(text),
                    Err(PromptError::EmptyGeneration) => continue,
                    Err(e) => return Err(e.into()),
                },
                Err(LlmError::EmptyGeneration) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Err(EngineError::GenerationFailed { kind, attempts: EMPTY_RESAMPLES + 1 })
    }
}

/// A thread under construction, with the bookkeeping responder selection needs.
pub(crate) struct ThreadBuilder {
    id: String,
    utterances: Vec<Utterance>,
    participants: Vec<Persona>,
    /// Persona name to rendered author label.
    labels: HashMap<String, String>,
    latest: Option<Persona>,
}

impl ThreadBuilder {
    pub(crate) fn new(id: String) -> Self {
        Self { id, utterances: Vec::new(), participants: Vec::new(), labels: HashMap::new(), latest: None }
    }

    /// Resumes from existing utterances. Authors not in the roster (anonymous
    /// `User N` labels) become placeholder participants.
    pub(crate) fn resume(id: String, prefix: &[Utterance], roster: &[Persona]) -> Self {
        let mut b = Self::new(id);
        for u in prefix {
            b.utterances.push(u.clone());
            if u.author() == MODERATOR {
                continue;
            }
            let persona = roster
                .iter()
                .find(|p| p.name() == u.author())
                .cloned()
                .unwrap_or_else(|| Persona::placeholder(u.author()));
            b.labels.insert(persona.name().to_string(), u.author().to_string());
            if !b.participants.iter().any(|p| p.name() == persona.name()) {
                b.participants.push(persona.clone());
            }
            b.latest = Some(persona);
        }
        if prefix.last().is_some_and(|u| u.author() == MODERATOR) {
            b.latest = None;
        }
        b
    }

    pub(crate) fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub(crate) fn reply_count(&self) -> usize {
        self.utterances.len().saturating_sub(1)
    }

    /// Speaker and author label for `persona` under `ablation`.
    pub(crate) fn speaker_for(&mut self, persona: &Persona, ablation: Ablation) -> Speaker {
        if ablation != Ablation::NoPersonas {
            return Speaker::Member(persona.clone());
        }
        let next = self.labels.len() + 1;
        let label = self
            .labels
            .entry(persona.name().to_string())
            .or_insert_with(|| anonymous_label(next))
            .clone();
        Speaker::Anonymous { label }
    }

    pub(crate) fn push(&mut self, author: &str, text: String, kind: UtteranceKind, persona: Option<&Persona>) -> Result<(), ModelError> {
        let index = self.utterances.len();
        let u = Utterance::new(format!("{}-{index}", self.id), author, text, kind, index)?;
        self.utterances.push(u);
        match persona {
            Some(p) => {
                if !self.participants.iter().any(|q| q.name() == p.name()) {
                    self.participants.push(p.clone());
                }
                self.labels.entry(p.name().to_string()).or_insert_with(|| author.to_string());
                self.latest = Some(p.clone());
            }
            None => self.latest = None,
        }
        Ok(())
    }

    pub(crate) fn snapshot(&self) -> Option<Thread> {
        Thread::new(self.id.clone(), self.utterances.clone()).ok()
    }

    pub(crate) fn finish(self) -> Result<Thread, ModelError> {
        Thread::new(self.id, self.utterances)
    }

    fn fail(&self, source: EngineError) -> ThreadError {
        ThreadError { partial: self.snapshot().map(Box::new), source }
    }

    /// Generates one reply from `persona`.
    pub(crate) fn reply_from(
        &mut self,
        ctx: &GenerationContext<'_>,
        persona: &Persona,
        rng: &mut RngStream,
    ) -> Result<(), EngineError> {
        let speaker = self.speaker_for(persona, ctx.config.ablation);
        let prompt = build_reply_prompt(
            &speaker,
            &self.utterances,
            ctx.design,
            ctx.config.ablation,
            None,
            None,
            ctx.config.prompt_char_limit,
        )?;
        let text = ctx.complete_utterance(&prompt, UtteranceKind::Reply, rng)?;
        self.push(speaker.label(), text, UtteranceKind::Reply, Some(persona))?;
        Ok(())
    }

    /// Runs the reply loop. With `force_first`, the first reply skips the
    /// continuation draw. Stops at `max_replies` total replies.
    pub(crate) fn continue_replies(
        &mut self,
        ctx: &GenerationContext<'_>,
        p: f64,
        force_first: bool,
        rng: &mut RngStream,
    ) -> Result<(), ThreadError> {
        let mut forced = force_first;
        while self.reply_count() < ctx.config.max_replies {
            if !forced && rng.uniform() >= p {
                break;
            }
            forced = false;
            let latest = self.latest.clone().ok_or_else(|| self.fail(EngineError::NoCandidate))?;
            let responder = select_responder(ctx.roster, &self.participants, &latest, rng, ctx.config)
                .map_err(|e| self.fail(e))?;
            self.reply_from(ctx, &responder, rng).map_err(|e| self.fail(e))?;
        }
        Ok(())
    }
}

/// Generates a top-level post from `author`.
pub fn generate_post(
    author: &Persona,
    design: &CommunityDesign,
    config: &GenerationConfig,
    gateway: &Gateway,
    rng: &mut RngStream,
) -> Result<Utterance, EngineError> {
    let ctx = GenerationContext { design, config, roster: &[], gateway: gateway.clone(), temperature: config.temperature };
    let mut builder = ThreadBuilder::new(rng.uuid().to_string());
    post_into(&mut builder, &ctx, author, rng)?;
    Ok(builder.utterances[0].clone())
}

fn post_into(
    builder: &mut ThreadBuilder,
    ctx: &GenerationContext<'_>,
    author: &Persona,
    rng: &mut RngStream,
) -> Result<(), EngineError> {
    let speaker = builder.speaker_for(author, ctx.config.ablation);
    let prompt = build_headline_prompt(&speaker, ctx.design, ctx.config.ablation, None, ctx.config.prompt_char_limit)?;
    let text = ctx.complete_utterance(&prompt, UtteranceKind::Post, rng)?;
    builder.push(speaker.label(), text, UtteranceKind::Post, Some(author))?;
    Ok(())
}

pub(crate) fn generate_thread_in(ctx: &GenerationContext<'_>, rng: &mut RngStream) -> Result<Thread, ThreadError> {
    let mut builder = ThreadBuilder::new(rng.uuid().to_string());
    let author = rng.pick(ctx.roster).clone();
    post_into(&mut builder, ctx, &author, rng).map_err(|e| builder.fail(e))?;
    let p = sample_reply_probability(rng, ctx.config);
    builder.continue_replies(ctx, p, false, rng)?;
    builder.finish().map_err(|e| ThreadError { partial: None, source: e.into() })
}

/// Generates one thread: a post from a uniformly drawn roster member and a
/// capped-geometric chain of replies.
pub fn generate_thread(
    design: &CommunityDesign,
    roster: &[Persona],
    config: &GenerationConfig,
    gateway: &Gateway,
    rng: &mut RngStream,
) -> Result<Thread, ThreadError> {
    if roster.is_empty() {
        return Err(ThreadError { partial: None, source: EngineError::NoCandidate });
    }
    let ctx = GenerationContext { design, config, roster, gateway: gateway.clone(), temperature: config.temperature };
    generate_thread_in(&ctx, rng)
}

/// Identity and timestamp attached to a generated universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniverseMeta {
    pub parent_community: String,
    pub created_at: DateTime<Utc>,
}

impl UniverseMeta {
    pub fn new(parent_community: impl Into<String>, created_at: DateTime<Utc>) -> Self {
        Self { parent_community: parent_community.into(), created_at }
    }

    /// Parent id derived from the design's canonical JSON and a fixed Unix-epoch
    /// timestamp, so offline runs are byte-reproducible.
    pub fn reproducible(design: &CommunityDesign) -> Self {
        let json = serde_json::to_string(design).expect("designs always serialize");
        let parent = RngStream::new(stable_hash(json.as_bytes())).uuid().to_string();
        Self { parent_community: parent, created_at: DateTime::<Utc>::UNIX_EPOCH }
    }
}

/// Expands the roster and generates `config.thread_count` threads.
pub fn generate_universe(
    design: &CommunityDesign,
    config: &GenerationConfig,
    gateway: &Gateway,
    meta: UniverseMeta,
) -> Result<Universe, UniverseError> {
    generate_universe_with_progress(design, config, gateway, meta, &|_, _| {})
}

/// As [`generate_universe`], calling `progress(done, total)` after each thread.
pub fn generate_universe_with_progress(
    design: &CommunityDesign,
    config: &GenerationConfig,
    gateway: &Gateway,
    meta: UniverseMeta,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<Universe, UniverseError> {
    generate_universe_at(design, config, config.temperature, &gateway.scoped("generate"), meta, progress)
}

pub(crate) fn generate_universe_at(
    design: &CommunityDesign,
    config: &GenerationConfig,
    temperature: f64,
    gateway: &Gateway,
    meta: UniverseMeta,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<Universe, UniverseError> {
    let config = config.clone().validated().map_err(EngineError::from)?;
    let design_hash = stable_hash(serde_json::to_string(design).expect("designs always serialize").as_bytes());
    let identity = design_hash ^ stable_hash(meta.parent_community.as_bytes()).rotate_left(1);
    let id = RngStream::derive(config.rng_seed ^ identity, tags::UNIVERSE, 0).uuid().to_string();
    let assemble = |roster: Vec<Persona>, threads: Vec<Thread>| {
        Universe::new(UniverseDraft {
            id: id.clone(),
            design: design.clone(),
            config: config.clone(),
            roster,
            threads,
            parent_community: meta.parent_community.clone(),
            created_at: meta.created_at,
        })
    };

    let target = config.persona_pool_size.max(design.seed_personas().len());
    let mut persona_rng = RngStream::derive(config.rng_seed, tags::PERSONAS, 0);
    let roster = match expand_personas(design.seed_personas(), target, gateway, temperature, &mut persona_rng) {
        Ok(roster) => roster,
        Err(e) => {
            let partial = e.partial_roster().and_then(|r| assemble(r.to_vec(), vec![]).ok()).map(Box::new);
            return Err(UniverseError { partial, source: e.into() });
        }
    };

    let ctx = GenerationContext { design, config: &config, roster: &roster, gateway: gateway.clone(), temperature };
    let total = config.thread_count;
    let done = AtomicUsize::new(0);
    progress(0, total);
    let results: Vec<Result<Thread, ThreadError>> = (0..total)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::derive(config.rng_seed, tags::THREAD, i as u64);
            let result = generate_thread_in(&ctx, &mut rng);
            progress(done.fetch_add(1, Ordering::SeqCst) + 1, total);
            result
        })
        .collect();

    let mut threads = Vec::with_capacity(total);
    let mut failure = None;
    for r in results {
        match r {
            Ok(t) => threads.push(t),
            Err(e) if failure.is_none() => failure = Some(e.source),
            Err(_) => {}
        }
    }
    if let Some(source) = failure {
        let partial = assemble(roster, threads).ok().map(Box::new);
        return Err(UniverseError { partial, source });
    }
    assemble(roster, threads).map_err(|e| EngineError::from(e).into())
}

/// True if every non-sentinel author of `thread` appears in `roster`.
pub fn authors_in_roster(thread: &Thread, roster: &[Persona]) -> bool {
    thread
        .utterances()
        .iter()
        .all(|u| is_sentinel_author(u.author()) || roster.iter().any(|p| p.name() == u.author()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{AuditLog, CompletionBackend, CompletionResult, FinishReason};
    use std::sync::Arc;

    fn persona(n: &str) -> Persona {
        Persona::new(n, format!("{n} the member")).unwrap()
    }

    fn design() -> CommunityDesign {
        CommunityDesign::new(
            "sharing your psychotherapy stories and questions",
            vec![crate::model::Rule::new("no trolling", None).unwrap()],
            vec![persona("Layla Li"), persona("Tom Cheng")],
        )
        .unwrap()
    }

    fn roster(n: usize) -> Vec<Persona> {
        (0..n).map(|i| persona(&format!("Member{i}"))).collect()
    }

    #[test]
    fn zero_stdev_returns_the_mean() {
        let config = GenerationConfig { reply_prob_stdev: 0.0, ..Default::default() };
        let mut rng = RngStream::new(1);
        for _ in 0..100 {
            assert_eq!(sample_reply_probability(&mut rng, &config), 0.65);
        }
        let config = GenerationConfig { reply_prob_mean: 1.5, reply_prob_stdev: 0.0, ..Default::default() };
        assert_eq!(sample_reply_probability(&mut rng, &config), 1.0);
    }

    #[test]
    fn reply_probability_moments() {
        // Oracle: mean of clamped N(0.65, 0.1) equals 0.65 to within 1e-6, and
        // P(|Z| > 3.5) is about 4.7e-4.
        let config = GenerationConfig::default();
        let mut rng = RngStream::new(2024);
        let n = 100_000;
        let mut sum = 0.0;
        let mut clamped = 0;
        for _ in 0..n {
            let raw = rng.normal(config.reply_prob_mean, config.reply_prob_stdev);
            if !(0.0..=1.0).contains(&raw) {
                clamped += 1;
            }
            sum += raw.clamp(0.0, 1.0);
        }
        let mean = sum / n as f64;
        assert!((mean - 0.65).abs() < 0.005, "{mean}");
        assert!((clamped as f64) / (n as f64) < 0.001);
        let mut rng = RngStream::new(2024);
        let mut direct = 0.0;
        for _ in 0..n {
            direct += sample_reply_probability(&mut rng, &config);
        }
        assert!((direct / n as f64 - 0.65).abs() < 0.005);
    }

    #[test]
    fn selection_fallbacks() {
        let a = persona("A");
        let b = persona("B");
        let config = GenerationConfig { new_persona_rate: 0.0, ..Default::default() };
        let mut rng = RngStream::new(5);
        // EXISTING with only the latest speaker falls back to NEW.
        let r = roster(5);
        for _ in 0..50 {
            let pick = select_responder(&r, std::slice::from_ref(&a), &a, &mut rng, &config).unwrap();
            assert_ne!(pick.name(), "A");
        }
        // singleton EXISTING candidate
        let pick = select_responder(&r, &[a.clone(), b.clone()], &b, &mut rng, &config).unwrap();
        assert_eq!(pick, a);
        // nobody left
        assert!(matches!(
            select_responder(std::slice::from_ref(&a), std::slice::from_ref(&a), &a, &mut rng, &config),
            Err(EngineError::NoCandidate)
        ));
    }

    #[test]
    fn forced_probabilities_bound_the_thread() {
        let gw = Gateway::mock();
        let r = roster(30);
        let zero = GenerationConfig { reply_prob_mean: 0.0, reply_prob_stdev: 0.0, ..Default::default() };
        let t = generate_thread(&design(), &r, &zero, &gw, &mut RngStream::new(1)).unwrap();
        assert_eq!(t.len(), 1);
        let one = GenerationConfig { reply_prob_mean: 1.0, reply_prob_stdev: 0.0, ..Default::default() };
        let t = generate_thread(&design(), &r, &one, &gw, &mut RngStream::new(1)).unwrap();
        assert_eq!(t.reply_count(), 8);
        assert!(authors_in_roster(&t, &r));
    }

    #[test]
    fn no_personas_labels_authors_by_number() {
        let gw = Gateway::mock();
        let config = GenerationConfig {
            ablation: Ablation::NoPersonas,
            reply_prob_mean: 1.0,
            reply_prob_stdev: 0.0,
            ..Default::default()
        };
        let t = generate_thread(&design(), &roster(10), &config, &gw, &mut RngStream::new(3)).unwrap();
        assert_eq!(t.post().author(), "User 1");
        for u in t.utterances() {
            assert!(is_sentinel_author(u.author()), "{}", u.author());
        }
        for rec in gw.audit().records() {
            assert!(!rec.prompt.contains("the member"));
        }
    }

    #[test]
    fn generate_post_example() {
        let gw = Gateway::mock();
        let layla = persona("Layla Li");
        let u = generate_post(&layla, &design(), &GenerationConfig::default(), &gw, &mut RngStream::new(9)).unwrap();
        assert_eq!(u.kind(), UtteranceKind::Post);
        assert_eq!(u.author(), "Layla Li");
        let again = generate_post(&layla, &design(), &GenerationConfig::default(), &gw, &mut RngStream::new(9)).unwrap();
        assert_eq!(u, again);
        let anon = GenerationConfig { ablation: Ablation::NoPersonas, ..Default::default() };
        let u = generate_post(&layla, &design(), &anon, &gw, &mut RngStream::new(9)).unwrap();
        assert_eq!(u.author(), "User 1");
    }

    #[test]
    fn oversized_design_propagates() {
        let d = CommunityDesign::new("g".repeat(9000), vec![], vec![persona("A")]).unwrap();
        let err = generate_post(&persona("A"), &d, &GenerationConfig::default(), &Gateway::mock(), &mut RngStream::new(0))
            .unwrap_err();
        assert!(matches!(err, EngineError::Prompt(PromptError::OversizedDesign { .. })));
    }

    struct AlwaysEmpty;
    impl CompletionBackend for AlwaysEmpty {
        fn complete(&self, _: &CompletionRequest) -> Result<CompletionResult, LlmError> {
            Ok(CompletionResult { text: "\"\"</span>".into(), finish_reason: FinishReason::StopSequence })
        }
    }

    #[test]
    fn empty_generations_give_up_after_three_resamples() {
        let gw = Gateway::new(Arc::new(AlwaysEmpty), Arc::new(AuditLog::in_memory()));
        let err = generate_post(&persona("A"), &design(), &GenerationConfig::default(), &gw, &mut RngStream::new(0))
            .unwrap_err();
        assert!(matches!(err, EngineError::GenerationFailed { kind: UtteranceKind::Post, attempts: 4 }));
        assert_eq!(gw.audit().len(), 4);
    }

    #[test]
    fn universe_is_reproducible_and_well_formed() {
        let config = GenerationConfig { persona_pool_size: 40, thread_count: 6, rng_seed: 42, ..Default::default() };
        let d = design();
        let a = generate_universe(&d, &config, &Gateway::mock(), UniverseMeta::reproducible(&d)).unwrap();
        let b = generate_universe(&d, &config, &Gateway::mock(), UniverseMeta::reproducible(&d)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.threads().len(), 6);
        assert_eq!(a.roster().len(), 40);
        assert!(a.threads().iter().all(|t| authors_in_roster(t, a.roster())));
        let empty = GenerationConfig { thread_count: 0, ..config };
        let u = generate_universe(&d, &empty, &Gateway::mock(), UniverseMeta::reproducible(&d)).unwrap();
        assert!(u.threads().is_empty());
        assert_eq!(u.roster().len(), 40);
    }

    #[test]
    fn progress_reaches_total() {
        let config = GenerationConfig { persona_pool_size: 10, thread_count: 4, ..Default::default() };
        let d = design();
        let seen = std::sync::Mutex::new(Vec::new());
        generate_universe_with_progress(&d, &config, &Gateway::mock(), UniverseMeta::reproducible(&d), &|done, total| {
            seen.lock().unwrap().push((done, total))
        })
        .unwrap();
        let seen = seen.into_inner().unwrap();
        assert_eq!(seen.iter().map(|s| s.0).max(), Some(4));
        assert!(seen.iter().all(|s| s.1 == 4));
    }

    struct DownAfter(AtomicUsize, usize);
    impl CompletionBackend for DownAfter {
        fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError> {
            if self.0.fetch_add(1, Ordering::SeqCst) >= self.1 {
                return Err(LlmError::BackendUnavailable { attempts: 4, last_error: "down".into() });
            }
            crate::llm::MockBackend.complete(req)
        }
    }

    #[test]
    fn backend_failure_surfaces_partial_universe() {
        let gw = Gateway::new(Arc::new(DownAfter(AtomicUsize::new(0), 0)), Arc::new(AuditLog::in_memory()));
        let d = design();
        let config = GenerationConfig { persona_pool_size: 10, ..Default::default() };
        let err = generate_universe(&d, &config, &gw, UniverseMeta::reproducible(&d)).unwrap_err();
        assert!(err.source.backend().is_some());
        let partial = err.partial.unwrap();
        assert_eq!(partial.roster().len(), 2);
        assert!(partial.threads().is_empty());
    }
}
