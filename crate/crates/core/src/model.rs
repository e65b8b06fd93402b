//! Domain types shared by the whole engine.
//!
//! Every type here is an immutable value object. Public constructors enforce
//! the invariants, and deserialization goes through the same constructors, so
//! a value that exists has already been validated.

use std::collections::HashSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Author label used for designer-written moderator interventions.
pub const MODERATOR: &str = "Moderator";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid persona: {0}")]
    InvalidPersona(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("invalid design: {}", .0.join("; "))]
    InvalidDesign(Vec<String>),
    #[error("invalid generation config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("invalid utterance: {0}")]
    InvalidUtterance(String),
    #[error("invalid thread: {0}")]
    InvalidThread(String),
    #[error("invalid universe: {0}")]
    InvalidUniverse(String),
}

/// Label for the n-th distinct participant of a thread when personas are hidden.
pub fn anonymous_label(n: usize) -> String {
    format!("User {n}")
}

/// True for `"Moderator"` and `"User N"` labels, which never belong to a roster.
pub fn is_sentinel_author(name: &str) -> bool {
    if name == MODERATOR {
        return true;
    }
    match name.strip_prefix("User ") {
        Some(n) => !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()),
        None => false,
    }
}

// ---------------------------------------------------------------------------
// Persona

/// Unvalidated persona as it arrives from a design file or API body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaDraft {
    pub name: String,
    pub description: String,
}

/// A named community member with a short behavioral description.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PersonaDraft")]
pub struct Persona {
    name: String,
    description: String,
}

impl Persona {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into().trim().to_string();
        let description = description.into().trim().to_string();
        if let Some(problem) = persona_problem(&name, &description) {
            return Err(ModelError::InvalidPersona(problem));
        }
        Ok(Self { name, description })
    }

    /// Stand-in for an anonymous `User N` participant; bypasses validation.
    pub(crate) fn placeholder(label: &str) -> Self {
        Self { name: label.to_string(), description: "an anonymous participant".to_string() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Text before the first space of the name.
    pub fn first_name(&self) -> &str {
        first_name(&self.name)
    }
}

impl TryFrom<PersonaDraft> for Persona {
    type Error = ModelError;

    fn try_from(d: PersonaDraft) -> Result<Self, Self::Error> {
        Persona::new(d.name, d.description)
    }
}

impl From<&Persona> for PersonaDraft {
    fn from(p: &Persona) -> Self {
        PersonaDraft { name: p.name.clone(), description: p.description.clone() }
    }
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", self.name, self.description)
    }
}

pub(crate) fn first_name(name: &str) -> &str {
    name.split(' ').next().unwrap_or(name)
}

fn persona_problem(name: &str, description: &str) -> Option<String> {
    if name.is_empty() {
        return Some("name is empty".into());
    }
    if description.is_empty() {
        return Some(format!("description of {name} is empty"));
    }
    if name.contains(['\n', '\r']) {
        return Some(format!("name {name:?} contains a newline"));
    }
    if name.contains(']') {
        return Some(format!("name {name:?} contains ']'"));
    }
    // "Name, description" lines split on the first comma.
    if name.contains(',') {
        return Some(format!("name {name:?} contains ','"));
    }
    if description.contains(['\n', '\r']) {
        return Some(format!("description of {name} contains a newline"));
    }
    if is_sentinel_author(name) {
        return Some(format!("name {name:?} is reserved"));
    }
    None
}

// ---------------------------------------------------------------------------
// Rule

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Prescriptive,
    Restrictive,
}

const RESTRICTIVE_PREFIXES: [&str; 3] = ["no ", "don't ", "don\u{2019}t "];

impl Polarity {
    /// Leading "no " or "don't " marks a restriction; anything else prescribes.
    pub fn detect(text: &str) -> Polarity {
        if strip_restrictive_prefix(text).is_some() {
            Polarity::Restrictive
        } else {
            Polarity::Prescriptive
        }
    }
}

fn strip_restrictive_prefix(text: &str) -> Option<&str> {
    let text = text.trim_start();
    RESTRICTIVE_PREFIXES.iter().find_map(|prefix| {
        let head = text.get(..prefix.len())?;
        head.eq_ignore_ascii_case(prefix).then(|| text[prefix.len()..].trim_start())
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleDraft {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RuleDraft")]
pub struct Rule {
    text: String,
    polarity: Polarity,
}

impl Rule {
    /// `polarity = None` auto-detects from the wording.
    pub fn new(text: impl Into<String>, polarity: Option<Polarity>) -> Result<Self, ModelError> {
        let text = text.into().trim().to_string();
        if text.is_empty() {
            return Err(ModelError::InvalidRule("text is empty".into()));
        }
        if text.contains(['\n', '\r']) {
            return Err(ModelError::InvalidRule(format!("{text:?} contains a newline")));
        }
        let polarity = polarity.unwrap_or_else(|| Polarity::detect(&text));
        Ok(Self { text, polarity })
    }

    pub fn restrictive(text: impl Into<String>) -> Result<Self, ModelError> {
        Self::new(text, Some(Polarity::Restrictive))
    }

    pub fn prescriptive(text: impl Into<String>) -> Result<Self, ModelError> {
        Self::new(text, Some(Polarity::Prescriptive))
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    /// The forbidden behavior with any leading "no "/"don't " removed.
    pub fn restricted_behavior(&self) -> &str {
        strip_restrictive_prefix(&self.text).unwrap_or(&self.text)
    }
}

impl TryFrom<RuleDraft> for Rule {
    type Error = ModelError;

    fn try_from(d: RuleDraft) -> Result<Self, Self::Error> {
        Rule::new(d.text, d.polarity)
    }
}

impl From<&Rule> for RuleDraft {
    fn from(r: &Rule) -> Self {
        RuleDraft { text: r.text.clone(), polarity: Some(r.polarity) }
    }
}

// ---------------------------------------------------------------------------
// CommunityDesign

/// Designer input before validation. This is also the design-file format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignDraft {
    pub goal: String,
    #[serde(default)]
    pub rules: Vec<RuleDraft>,
    #[serde(default)]
    pub seed_personas: Vec<PersonaDraft>,
}

/// Returns one message per broken invariant; empty means the draft is valid.
pub fn validate_design(draft: &DesignDraft) -> Vec<String> {
    let mut violations = Vec::new();
    if draft.goal.trim().is_empty() {
        violations.push("goal is empty".to_string());
    } else if draft.goal.contains(['\n', '\r']) {
        violations.push("goal contains a newline".to_string());
    }
    for (i, rule) in draft.rules.iter().enumerate() {
        if let Err(ModelError::InvalidRule(msg)) = Rule::new(rule.text.clone(), rule.polarity) {
            violations.push(format!("rules[{i}]: {msg}"));
        }
    }
    if draft.seed_personas.is_empty() {
        violations.push("seed_personas is empty".to_string());
    }
    let mut seen = HashSet::new();
    for (i, p) in draft.seed_personas.iter().enumerate() {
        match Persona::new(p.name.clone(), p.description.clone()) {
            Err(ModelError::InvalidPersona(msg)) => {
                violations.push(format!("seed_personas[{i}]: {msg}"));
            }
            Err(other) => violations.push(other.to_string()),
            Ok(persona) => {
                if !seen.insert(persona.name().to_lowercase()) {
                    violations.push(format!("duplicate persona name: {}", persona.name()));
                }
            }
        }
    }
    violations
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DesignDraft")]
pub struct CommunityDesign {
    goal: String,
    rules: Vec<Rule>,
    seed_personas: Vec<Persona>,
}

impl CommunityDesign {
    pub fn new(goal: impl Into<String>, rules: Vec<Rule>, seed_personas: Vec<Persona>) -> Result<Self, ModelError> {
        let draft = DesignDraft {
            goal: goal.into(),
            rules: rules.iter().map(RuleDraft::from).collect(),
            seed_personas: seed_personas.iter().map(PersonaDraft::from).collect(),
        };
        Self::try_from(draft)
    }

    pub fn goal(&self) -> &str {
        &self.goal
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn seed_personas(&self) -> &[Persona] {
        &self.seed_personas
    }

    pub fn to_draft(&self) -> DesignDraft {
        DesignDraft {
            goal: self.goal.clone(),
            rules: self.rules.iter().map(RuleDraft::from).collect(),
            seed_personas: self.seed_personas.iter().map(PersonaDraft::from).collect(),
        }
    }
}

impl TryFrom<DesignDraft> for CommunityDesign {
    type Error = ModelError;

    fn try_from(draft: DesignDraft) -> Result<Self, Self::Error> {
        let violations = validate_design(&draft);
        if !violations.is_empty() {
            return Err(ModelError::InvalidDesign(violations));
        }
        let rules = draft.rules.into_iter().map(Rule::try_from).collect::<Result<_, _>>()?;
        let seed_personas = draft
            .seed_personas
            .into_iter()
            .map(Persona::try_from)
            .collect::<Result<_, _>>()?;
        Ok(Self { goal: draft.goal.trim().to_string(), rules, seed_personas })
    }
}

// ---------------------------------------------------------------------------
// GenerationConfig

/// Prompt variants used to measure what each prompt ingredient contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Goal and rules are left out of every prompt.
    NoDescription,
    /// Authors become "User N" and carry no description.
    NoPersonas,
}

/// Knobs for one generation run. Fields are public; call [`validate`](Self::validate)
/// (the engine entry points do) before use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub persona_pool_size: usize,
    pub seed_persona_count_hint: usize,
    pub thread_count: usize,
    pub reply_prob_mean: f64,
    pub reply_prob_stdev: f64,
    pub max_replies: usize,
    pub new_persona_rate: f64,
    pub prompt_char_limit: usize,
    pub temperature: f64,
    pub multiverse_temperature: f64,
    pub ablation: Ablation,
    pub rng_seed: u64,
}

pub const MIN_PROMPT_CHAR_LIMIT: usize = 1000;

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            persona_pool_size: 1000,
            seed_persona_count_hint: 10,
            thread_count: 20,
            reply_prob_mean: 0.65,
            reply_prob_stdev: 0.10,
            max_replies: 8,
            new_persona_rate: 0.5,
            prompt_char_limit: 8000,
            temperature: 0.7,
            multiverse_temperature: 0.8,
            ablation: Ablation::Full,
            rng_seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.persona_pool_size == 0 {
            v.push("persona_pool_size must be positive".to_string());
        }
        if !unit(self.reply_prob_mean) {
            v.push("reply_prob_mean must lie in [0, 1]".to_string());
        }
        if !(self.reply_prob_stdev >= 0.0 && self.reply_prob_stdev.is_finite()) {
            v.push("reply_prob_stdev must be a non-negative number".to_string());
        }
        if !unit(self.new_persona_rate) {
            v.push("new_persona_rate must lie in [0, 1]".to_string());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            v.push("temperature must be a non-negative number".to_string());
        }
        if !(self.multiverse_temperature >= 0.0 && self.multiverse_temperature.is_finite()) {
            v.push("multiverse_temperature must be a non-negative number".to_string());
        }
        if self.prompt_char_limit < MIN_PROMPT_CHAR_LIMIT {
            v.push(format!("prompt_char_limit must be at least {MIN_PROMPT_CHAR_LIMIT}"));
        }
        v
    }

    pub fn validated(self) -> Result<Self, ModelError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(ModelError::InvalidConfig(v))
        }
    }
}

// ---------------------------------------------------------------------------
// Utterance / Thread

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceKind {
    Post,
    Reply,
    Intervention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceDraft {
    pub id: String,
    pub author: String,
    pub text: String,
    pub kind: UtteranceKind,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "UtteranceDraft")]
pub struct Utterance {
    id: String,
    author: String,
    text: String,
    kind: UtteranceKind,
    index: usize,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        author: impl Into<String>,
        text: impl Into<String>,
        kind: UtteranceKind,
        index: usize,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        let author = author.into();
        let text = text.into();
        let bad = |m: String| Err(ModelError::InvalidUtterance(m));
        if id.is_empty() {
            return bad("id is empty".into());
        }
        if author.trim().is_empty() || author.contains([']', '\n', '\r']) {
            return bad(format!("author {author:?} is not a valid label"));
        }
        if text.trim().is_empty() {
            return bad("text is empty".into());
        }
        if text.contains("</span>") {
            return bad("text contains a raw </span>".into());
        }
        if (index == 0) != (kind == UtteranceKind::Post) {
            return bad(format!("{kind:?} at index {index}"));
        }
        Ok(Self { id, author, text, kind, index })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn author(&self) -> &str {
        &self.author
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn kind(&self) -> UtteranceKind {
        self.kind
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

impl TryFrom<UtteranceDraft> for Utterance {
    type Error = ModelError;

    fn try_from(d: UtteranceDraft) -> Result<Self, Self::Error> {
        Utterance::new(d.id, d.author, d.text, d.kind, d.index)
    }
}

/// Where a branch thread came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadOrigin {
    pub source_thread: String,
    pub branch_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadDraft {
    pub id: String,
    pub utterances: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<ThreadOrigin>,
}

/// A post followed by a flat chain of replies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ThreadDraft")]
pub struct Thread {
    id: String,
    utterances: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<ThreadOrigin>,
}

impl Thread {
    pub fn new(id: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self, ModelError> {
        Self::try_from(ThreadDraft { id: id.into(), utterances, origin: None })
    }

    pub fn with_origin(mut self, origin: ThreadOrigin) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn origin(&self) -> Option<&ThreadOrigin> {
        self.origin.as_ref()
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn post(&self) -> &Utterance {
        &self.utterances[0]
    }

    pub fn latest(&self) -> &Utterance {
        self.utterances.last().expect("threads are never empty")
    }

    pub fn reply_count(&self) -> usize {
        self.utterances.len() - 1
    }

    /// `"[Name]: text"` lines.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&format!("[{}]: {}\n", u.author, u.text));
        }
        out
    }
}

impl TryFrom<ThreadDraft> for Thread {
    type Error = ModelError;

    fn try_from(d: ThreadDraft) -> Result<Self, Self::Error> {
        let bad = |m: String| Err(ModelError::InvalidThread(m));
        if d.id.is_empty() {
            return bad("id is empty".into());
        }
        if d.utterances.is_empty() {
            return bad("thread has no utterances".into());
        }
        for (i, u) in d.utterances.iter().enumerate() {
            if u.index != i {
                return bad(format!("utterance at position {i} has index {}", u.index));
            }
        }
        for pair in d.utterances.windows(2) {
            if pair[0].author == pair[1].author {
                return bad(format!("{} replies to themself at index {}", pair[1].author, pair[1].index));
            }
        }
        Ok(Self { id: d.id, utterances: d.utterances, origin: d.origin })
    }
}

// ---------------------------------------------------------------------------
// Universe

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseDraft {
    pub id: String,
    pub design: CommunityDesign,
    pub config: GenerationConfig,
    pub roster: Vec<Persona>,
    pub threads: Vec<Thread>,
    pub parent_community: String,
    pub created_at: DateTime<Utc>,
}

/// One generated instantiation of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UniverseDraft")]
pub struct Universe {
    id: String,
    design: CommunityDesign,
    config: GenerationConfig,
    roster: Vec<Persona>,
    threads: Vec<Thread>,
    parent_community: String,
    created_at: DateTime<Utc>,
}

impl Universe {
    pub fn new(draft: UniverseDraft) -> Result<Self, ModelError> {
        Self::try_from(draft)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn design(&self) -> &CommunityDesign {
        &self.design
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn roster(&self) -> &[Persona] {
        &self.roster
    }

    pub fn threads(&self) -> &[Thread] {
        &self.threads
    }

    pub fn parent_community(&self) -> &str {
        &self.parent_community
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn thread(&self, id: &str) -> Option<&Thread> {
        self.threads.iter().find(|t| t.id == id)
    }

    pub fn persona(&self, name: &str) -> Option<&Persona> {
        self.roster.iter().find(|p| p.name == name)
    }
}

impl TryFrom<UniverseDraft> for Universe {
    type Error = ModelError;

    fn try_from(d: UniverseDraft) -> Result<Self, Self::Error> {
        let bad = |m: String| Err(ModelError::InvalidUniverse(m));
        if d.id.is_empty() || d.parent_community.is_empty() {
            return bad("id and parent_community must be non-empty".into());
        }
        let cap = d.config.persona_pool_size + d.design.seed_personas.len();
        if d.roster.len() > cap {
            return bad(format!("roster of {} exceeds {cap}", d.roster.len()));
        }
        let names: HashSet<&str> = d.roster.iter().map(|p| p.name()).collect();
        if names.len() != d.roster.len() {
            return bad("roster names are not unique".into());
        }
        for t in &d.threads {
            for u in &t.utterances {
                if !is_sentinel_author(&u.author) && !names.contains(u.author.as_str()) {
                    return bad(format!("author {} of thread {} is not in the roster", u.author, t.id));
                }
            }
        }
        Ok(Self {
            id: d.id,
            design: d.design,
            config: d.config,
            roster: d.roster,
            threads: d.threads,
            parent_community: d.parent_community,
            created_at: d.created_at,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn international_affairs() -> DesignDraft {
        let seeds = [
            ("Michael Ross", "works as a foreign diplomat"),
            ("Luis Almerado", "PhD student in international relations"),
            ("John Gordon", "worker in the foreign affairs department of the US government"),
            ("Joe Hawkins", "travels often"),
            ("Harry Chang", "international relations professor"),
            ("Catherine Xiao", "political science major in college"),
            ("Laney Kumar", "foreign policy expert for a newspaper"),
            ("Laura Wilson", "planning to go to college in an IR-related discipline"),
            ("Ali Samarneh", "interest in foreign policy"),
            ("Sam Thompson", "international affairs student in college"),
        ];
        DesignDraft {
            goal: "discussing of all events surrounding International Affairs".into(),
            rules: vec![],
            seed_personas: seeds
                .iter()
                .map(|(n, d)| PersonaDraft { name: n.to_string(), description: d.to_string() })
                .collect(),
        }
    }

    #[test]
    fn international_affairs_design_is_valid() {
        assert_eq!(validate_design(&international_affairs()), Vec::<String>::new());
        assert!(CommunityDesign::try_from(international_affairs()).is_ok());
    }

    #[test]
    fn empty_goal_is_the_only_violation() {
        let mut d = international_affairs();
        d.goal = String::new();
        assert_eq!(validate_design(&d), vec!["goal is empty".to_string()]);
    }

    #[test]
    fn duplicate_seed_names_are_reported() {
        let mut d = international_affairs();
        d.seed_personas.truncate(1);
        d.seed_personas.push(PersonaDraft { name: "Ali Samarneh".into(), description: "a".into() });
        d.seed_personas.push(PersonaDraft { name: "Ali Samarneh".into(), description: "b".into() });
        assert_eq!(validate_design(&d), vec!["duplicate persona name: Ali Samarneh".to_string()]);
    }

    #[test]
    fn rule_polarity_auto_detects() {
        assert_eq!(Rule::new("no trolling", None).unwrap().polarity(), Polarity::Restrictive);
        assert_eq!(Rule::new("Don't spam", None).unwrap().polarity(), Polarity::Restrictive);
        assert_eq!(Rule::new("be kind", None).unwrap().polarity(), Polarity::Prescriptive);
        assert_eq!(Rule::new("nothing else", None).unwrap().polarity(), Polarity::Prescriptive);
        let r = Rule::new("no encouraging suicide", None).unwrap();
        assert_eq!(r.restricted_behavior(), "encouraging suicide");
        // explicit polarity wins
        assert_eq!(Rule::new("no trolling", Some(Polarity::Prescriptive)).unwrap().polarity(), Polarity::Prescriptive);
    }

    #[test]
    fn rule_json_without_polarity_is_detected() {
        let r: Rule = serde_json::from_str(r#"{"text":"no self-marketing"}"#).unwrap();
        assert_eq!(r.polarity(), Polarity::Restrictive);
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"text":"no self-marketing","polarity":"restrictive"}"#);
    }

    #[test]
    fn sentinels() {
        assert!(is_sentinel_author("Moderator"));
        assert!(is_sentinel_author("User 12"));
        assert!(!is_sentinel_author("User"));
        assert!(!is_sentinel_author("User x"));
        assert!(!is_sentinel_author("Layla Li"));
        assert!(Persona::new("User 3", "x").is_err());
    }

    #[test]
    fn utterance_index_kind_coupling() {
        assert!(Utterance::new("a", "A", "hi", UtteranceKind::Post, 0).is_ok());
        assert!(Utterance::new("a", "A", "hi", UtteranceKind::Reply, 0).is_err());
        assert!(Utterance::new("a", "A", "hi", UtteranceKind::Post, 1).is_err());
        assert!(Utterance::new("a", "A", "hi</span>", UtteranceKind::Reply, 1).is_err());
    }

    #[test]
    fn thread_rejects_self_reply_and_gaps() {
        let p = Utterance::new("1", "A", "x", UtteranceKind::Post, 0).unwrap();
        let r1 = Utterance::new("2", "A", "y", UtteranceKind::Reply, 1).unwrap();
        assert!(Thread::new("t", vec![p.clone(), r1]).is_err());
        let r2 = Utterance::new("2", "B", "y", UtteranceKind::Reply, 2).unwrap();
        assert!(Thread::new("t", vec![p.clone(), r2]).is_err());
        assert!(Thread::new("t", vec![]).is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = GenerationConfig::default();
        assert!(c.validate().is_empty());
        assert_eq!((c.persona_pool_size, c.seed_persona_count_hint, c.max_replies), (1000, 10, 8));
        assert_eq!((c.temperature, c.multiverse_temperature), (0.7, 0.8));
        let bad = GenerationConfig { reply_prob_mean: 1.5, prompt_char_limit: 999, ..c };
        assert_eq!(bad.validate().len(), 2);
        // partial JSON fills defaults
        let c: GenerationConfig = serde_json::from_str(r#"{"thread_count":3,"ablation":"no_personas"}"#).unwrap();
        assert_eq!(c.thread_count, 3);
        assert_eq!(c.ablation, Ablation::NoPersonas);
        assert_eq!(c.persona_pool_size, 1000);
    }

    #[test]
    fn design_json_rejects_invalid() {
        let err = serde_json::from_str::<CommunityDesign>(r#"{"goal":"","rules":[],"seed_personas":[]}"#);
        assert!(err.is_err());
    }

    proptest! {
        #[test]
        fn persona_constructor_rejects_exactly_the_violations(
            name in "[ a-zA-Z\\],\n]{0,8}",
            description in "[ a-z\n]{0,6}",
        ) {
            let n = name.trim();
            let d = description.trim();
            let expected_ok = !n.is_empty()
                && !d.is_empty()
                && !n.contains(['\n', ']', ','])
                && !d.contains('\n')
                && !is_sentinel_author(n);
            prop_assert_eq!(Persona::new(name.clone(), description.clone()).is_ok(), expected_ok);
        }

        #[test]
        fn design_snapshot_is_a_value(goal in "[a-z]{1,10}") {
            let draft = DesignDraft { goal: goal.clone(), ..international_affairs() };
            let design = CommunityDesign::try_from(draft.clone()).unwrap();
            let snapshot = design.clone();
            let mut edited = draft;
            edited.goal.push_str(" edited");
            let _ = CommunityDesign::try_from(edited).unwrap();
            prop_assert_eq!(snapshot.goal(), goal.as_str());
        }
    }
}
