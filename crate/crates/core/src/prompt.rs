//! Prompt construction and completion parsing.
//!
//! Canonical whitespace: sentences within a paragraph are joined by a single
//! space, paragraphs by a blank line, thread lines by a single newline. No
//! prompt ends with a newline except the persona-expansion prompt, which
//! invites the model to continue the list.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Ablation, CommunityDesign, Persona, Polarity, Rule, Utterance};

pub mod markers {
    pub const RESPONDER_HEADER: &str = "Current responder:";
    pub const THREAD_HEADER: &str = "Thread:";
    pub const HEADLINE_CLASS: &str = "class=\"headline_reddit\"";
    pub const REPLY_CLASS: &str = "class=\"comment max_200_words\"";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("design does not fit the prompt: {chars} characters against a limit of {limit}")]
    OversizedDesign { chars: usize, limit: usize },
    #[error("latest utterance needs {needed} characters but only {budget} remain")]
    BudgetExhausted { needed: usize, budget: usize },
    #[error("completion is empty after cleanup")]
    EmptyGeneration,
    #[error("persona expansion needs at least one example")]
    NoExamples,
    #[error("thread is empty")]
    EmptyThread,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    PersonaExpansion,
    Headline,
    Reply,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub body: String,
    pub char_count: usize,
    pub template_kind: TemplateKind,
    /// Leading thread utterances left out to fit the character limit.
    pub truncated_utterance_count: usize,
}

impl PromptText {
    fn new(body: String, template_kind: TemplateKind, truncated_utterance_count: usize) -> Self {
        Self { char_count: body.chars().count(), body, template_kind, truncated_utterance_count }
    }
}

/// Who a prompt is written for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Speaker {
    /// A roster persona: `Name is description.`
    Member(Persona),
    /// A numbered participant with no description (`User N`).
    Anonymous { label: String },
    /// A designer-injected behavior: `[Troll] shares trolling comments.`
    Injected { label: String, behavior: String },
}

impl Speaker {
    pub fn label(&self) -> &str {
        match self {
            Speaker::Member(p) => p.name(),
            Speaker::Anonymous { label } | Speaker::Injected { label, .. } => label,
        }
    }

    /// Name used at the start of the second headline paragraph.
    fn short_name(&self) -> &str {
        match self {
            Speaker::Member(p) => p.first_name(),
            other => other.label(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleStyle<'a> {
    /// `not X, not Y` for the persona paragraph.
    PersonaSentence,
    /// `about <topic>, and NOT X, NOT Y` for a span title.
    TitleAttribute { topic: Option<&'a str> },
}

pub fn render_rule_clause(rules: &[Rule], style: RuleStyle<'_>) -> String {
    let negation = match style {
        RuleStyle::PersonaSentence => "not",
        RuleStyle::TitleAttribute { .. } => "NOT",
    };
    let rendered: Vec<String> = rules
        .iter()
        .map(|r| match r.polarity() {
            Polarity::Restrictive => format!("{negation} {}", r.restricted_behavior()),
            Polarity::Prescriptive => r.text().to_string(),
        })
        .collect();
    let rules = rendered.join(", ");
    match style {
        RuleStyle::TitleAttribute { topic: Some(topic) } if rules.is_empty() => format!("about {topic}"),
        RuleStyle::TitleAttribute { topic: Some(topic) } => format!("about {topic}, and {rules}"),
        _ => rules,
    }
}

/// Seeds one per line as `Name, description`, ending in a newline.
pub fn build_persona_expansion_prompt(seeds: &[Persona]) -> Result<PromptText, PromptError> {
    if seeds.is_empty() {
        return Err(PromptError::NoExamples);
    }
    let body: String = seeds.iter().map(|p| format!("{p}\n")).collect();
    Ok(PromptText::new(body, TemplateKind::PersonaExpansion, 0))
}

fn clause_sentence(description: &str) -> &str {
    description.trim_end_matches('.')
}

/// First paragraph of both templates, with `name` already bracketed or not.
fn speaker_paragraph(speaker: &Speaker, name: &str, rules_clause: &str, pronoun: Option<&str>) -> String {
    let shares = |subject: &str| format!("{subject} shares comments that are {rules_clause}.");
    match speaker {
        Speaker::Member(p) => {
            let mut par = format!("{name} is {}.", clause_sentence(p.description()));
            if !rules_clause.is_empty() {
                par.push(' ');
                par.push_str(&shares(pronoun.unwrap_or(p.first_name())));
            }
            par
        }
        Speaker::Anonymous { .. } if rules_clause.is_empty() => name.to_string(),
        Speaker::Anonymous { .. } => shares(name),
        Speaker::Injected { behavior, .. } => format!("{name} {}.", clause_sentence(behavior)),
    }
}

fn title_value(clause: &str) -> String {
    if clause.is_empty() {
        "comment".to_string()
    } else {
        format!("comment that is {clause}")
    }
}

fn described(ablation: Ablation) -> bool {
    ablation != Ablation::NoDescription
}

/// Prompt for a top-level post. `pronoun` replaces the repeated first name in
/// the rules sentence ("She shares comments ...").
pub fn build_headline_prompt(
    speaker: &Speaker,
    design: &CommunityDesign,
    ablation: Ablation,
    pronoun: Option<&str>,
    char_limit: usize,
) -> Result<PromptText, PromptError> {
    let (rules, title_clause, venue) = if described(ablation) {
        (
            render_rule_clause(design.rules(), RuleStyle::PersonaSentence),
            render_rule_clause(design.rules(), RuleStyle::TitleAttribute { topic: Some(design.goal()) }),
            format!("an online forum for {}", design.goal()),
        )
    } else {
        (String::new(), String::new(), "an online forum".to_string())
    };
    let intro = speaker_paragraph(speaker, speaker.label(), &rules, pronoun);
    let headline = format!(
        "{} posted the following headline to {venue}: <span {} title=\"{}\">",
        speaker.short_name(),
        markers::HEADLINE_CLASS,
        title_value(&title_clause),
    );
    let body = if matches!(speaker, Speaker::Anonymous { .. }) && rules.is_empty() {
        headline
    } else {
        format!("{intro}\n\n{headline}")
    };
    let prompt = PromptText::new(body, TemplateKind::Headline, 0);
    if prompt.char_count > char_limit {
        return Err(PromptError::OversizedDesign { chars: prompt.char_count, limit: char_limit });
    }
    Ok(prompt)
}

fn render_utterance(u: &Utterance) -> String {
    format!("[{}]: <span class=\"comment\">\n\"{}\"</span>", u.author(), u.text())
}

/// Renders utterances for the `Thread:` block, dropping the oldest until the
/// text fits `char_budget`. Returns the text and how many were dropped.
pub fn serialize_thread(thread: &[Utterance], char_budget: usize) -> Result<(String, usize), PromptError> {
    let rendered: Vec<String> = thread.iter().map(render_utterance).collect();
    let Some(last) = rendered.last() else {
        return Err(PromptError::EmptyThread);
    };
    let mut used = last.chars().count();
    if used > char_budget {
        return Err(PromptError::BudgetExhausted { needed: used, budget: char_budget });
    }
    let mut first_kept = rendered.len() - 1;
    while first_kept > 0 {
        let extra = rendered[first_kept - 1].chars().count() + 1;
        if used + extra > char_budget {
            break;
        }
        used += extra;
        first_kept -= 1;
    }
    Ok((rendered[first_kept..].join("\n"), first_kept))
}

/// Prompt for the next reply in `thread`, spoken by `responder`.
/// `title_override` replaces the whole title attribute of the cue span.
#[allow(clippy::too_many_arguments)]
pub fn build_reply_prompt(
    responder: &Speaker,
    thread: &[Utterance],
    design: &CommunityDesign,
    ablation: Ablation,
    title_override: Option<&str>,
    pronoun: Option<&str>,
    char_limit: usize,
) -> Result<PromptText, PromptError> {
    let (rules, title_rules, venue) = if described(ablation) {
        (
            render_rule_clause(design.rules(), RuleStyle::PersonaSentence),
            render_rule_clause(design.rules(), RuleStyle::TitleAttribute { topic: None }),
            format!("online social media for {}", design.goal()),
        )
    } else {
        (String::new(), String::new(), "online social media".to_string())
    };
    let label = responder.label();
    let par = speaker_paragraph(responder, &format!("[{label}]"), &rules, pronoun);
    let head = format!(
        "{}\n{par}\n\nThe following thread was posted on {venue}.\n{}\n",
        markers::RESPONDER_HEADER,
        markers::THREAD_HEADER
    );
    let title = title_override.map(str::to_string).unwrap_or_else(|| title_value(&title_rules));
    let cue = format!("[{label}]: <span {} title=\"{title}\">\"", markers::REPLY_CLASS);
    let fixed = head.chars().count() + 1 + cue.chars().count();
    if fixed >= char_limit {
        return Err(PromptError::OversizedDesign { chars: fixed, limit: char_limit });
    }
    let (thread_text, dropped) = serialize_thread(thread, char_limit - fixed)?;
    let body = format!("{head}{thread_text}\n{cue}");
    Ok(PromptText::new(body, TemplateKind::Reply, dropped))
}

/// Cleans a raw completion into utterance text: cuts at the first `</span>`,
/// trims, and peels wrapping double quotes (or a lone trailing quote left by
/// the reply cue) until nothing changes.
pub fn parse_completion(raw: &str) -> Result<String, PromptError> {
    let mut text = match raw.find("</span>") {
        Some(at) => &raw[..at],
        None => raw,
    }
    .trim();
    loop {
        let before = text;
        let wrapped = text.len() >= 2 && text.starts_with('"') && text.ends_with('"');
        if wrapped {
            text = text[1..text.len() - 1].trim();
        } else if text.ends_with('"') && text.matches('"').count() % 2 == 1 {
            text = text[..text.len() - 1].trim();
        }
        if text == before {
            break;
        }
    }
    if text.is_empty() {
        return Err(PromptError::EmptyGeneration);
    }
    Ok(text.to_string())
}
