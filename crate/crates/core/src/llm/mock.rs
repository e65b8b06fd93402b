//! Deterministic offline backend.
//!
//! The mock recognizes the three prompt templates by their markers, seeds a
//! stream from a stable hash of the full request, and assembles a reply from a
//! bundled phrase corpus. Output is raw model-style text (closing tag and all);
//! stop strings are honored the way a hosted API honors them.

use crate::prompt::markers;
use crate::rng::{mix64, RngStream};

use super::{CompletionBackend, CompletionRequest, CompletionResult, FinishReason, LlmError};

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn new() -> Self {
        Self
    }
}

#[derive(Debug, PartialEq)]
enum PromptClass {
    PersonaExpansion,
    Headline { topic: Option<String> },
    Reply { mode: ReplyMode, topic: Option<String> },
    Generic,
}

#[derive(Debug, PartialEq)]
enum ReplyMode {
    Ordinary,
    Troll,
    AfterModerator,
}

fn classify(prompt: &str) -> PromptClass {
    if prompt.contains(markers::RESPONDER_HEADER) {
        let cue = prompt.lines().last().unwrap_or("");
        let title = between(cue, "title=\"", "\">").unwrap_or("");
        let responder_block = prompt.split(markers::THREAD_HEADER).next().unwrap_or("");
        let latest_speaker = prompt
            .lines()
            .rev()
            .skip(1)
            .find(|l| l.starts_with('['))
            .unwrap_or("");
        let mode = if latest_speaker.starts_with(&format!("[{}]", crate::model::MODERATOR)) {
            ReplyMode::AfterModerator
        } else if title.to_lowercase().contains("troll") || responder_block.to_lowercase().contains("troll") {
            ReplyMode::Troll
        } else {
            ReplyMode::Ordinary
        };
        let topic = between(prompt, "online social media for ", ".\n").map(str::to_string);
        return PromptClass::Reply { mode, topic };
    }
    if prompt.contains(markers::HEADLINE_CLASS) {
        let topic = between(prompt, "online forum for ", ": <span").map(str::to_string);
        return PromptClass::Headline { topic };
    }
    let lines: Vec<&str> = prompt.lines().filter(|l| !l.trim().is_empty()).collect();
    if prompt.ends_with('\n') && !lines.is_empty() && lines.iter().all(|l| l.contains(", ")) {
        return PromptClass::PersonaExpansion;
    }
    PromptClass::Generic
}

fn between<'a>(hay: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = hay.find(start)? + start.len();
    let len = hay[from..].find(end)?;
    Some(&hay[from..from + len])
}

fn request_seed(request: &CompletionRequest) -> u64 {
    let mut h = stable_hash(request.prompt.as_bytes());
    h = mix64(h ^ request.temperature.to_bits());
    for s in &request.stop {
        h = mix64(h ^ stable_hash(s.as_bytes()));
    }
    if let Some(seed) = request.seed {
        h = mix64(h ^ mix64(seed));
    }
    h
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        if request.prompt.is_empty() {
            return Err(LlmError::Precondition("prompt is empty".into()));
        }
        let mut rng = RngStream::new(request_seed(request));
        let mut raw = match classify(&request.prompt) {
            PromptClass::PersonaExpansion => persona_batch(&mut rng),
            PromptClass::Headline { topic } => format!("{}</span>\n\n", headline(&mut rng, topic.as_deref())),
            PromptClass::Reply { mode, topic } => format!("{}\"</span>\n", reply(&mut rng, &mode, topic.as_deref())),
            PromptClass::Generic => format!("{}\n", sentence(&mut rng, GENERIC_OPENERS, GENERIC_BODIES, CLOSERS)),
        };
        let cut = request
            .stop
            .iter()
            .filter(|s| !s.is_empty())
            .filter_map(|s| raw.find(s.as_str()))
            .min();
        let finish_reason = match cut {
            Some(at) => {
                raw.truncate(at);
                FinishReason::StopSequence
            }
            None => FinishReason::Length,
        };
        Ok(CompletionResult { text: raw, finish_reason })
    }
}

fn sentence(rng: &mut RngStream, openers: &[&str], bodies: &[&str], closers: &[&str]) -> String {
    let mut parts = vec![*rng.pick(openers), *rng.pick(bodies), *rng.pick(closers)];
    parts.retain(|p| !p.is_empty());
    parts.join(" ")
}

fn headline(rng: &mut RngStream, topic: Option<&str>) -> String {
    let topic = topic.unwrap_or("this community");
    let template = *rng.pick(HEADLINE_TEMPLATES);
    let closer = *rng.pick(HEADLINE_CLOSERS);
    let body = template.replace("{topic}", topic);
    if closer.is_empty() {
        body
    } else {
        format!("{body} {closer}")
    }
}

fn reply(rng: &mut RngStream, mode: &ReplyMode, topic: Option<&str>) -> String {
    match mode {
        ReplyMode::Troll => sentence(rng, TROLL_OPENERS, TROLL_BODIES, TROLL_CLOSERS),
        ReplyMode::AfterModerator => {
            let openers = match rng.index(3) {
                0 => APOLOGY_OPENERS,
                1 => ESCALATION_OPENERS,
                _ => DEPARTURE_OPENERS,
            };
            sentence(rng, openers, REACTION_BODIES, &[""])
        }
        ReplyMode::Ordinary => {
            let mut s = sentence(rng, REPLY_OPENERS, REPLY_BODIES, CLOSERS);
            if let (Some(topic), true) = (topic, rng.chance(0.25)) {
                s.push_str(&format!(" That's the whole point of a place for {topic}."));
            }
            s
        }
    }
}

fn persona_batch(rng: &mut RngStream) -> String {
    let n = 4 + rng.index(5);
    let mut out = String::new();
    for _ in 0..n {
        let name = format!("{} {}", rng.pick(FIRST_NAMES), rng.pick(LAST_NAMES));
        let description = format!("{} {}", rng.pick(ROLES), rng.pick(TRAITS));
        out.push_str(&format!("{name}, {description}\n"));
    }
    out.push('\n');
    out
}

const HEADLINE_TEMPLATES: &[&str] = &[
    "Has anyone else here been thinking a lot about {topic} lately?",
    "First time posting in a space for {topic}, so please be gentle.",
    "What got you into {topic} in the first place?",
    "I have a question about {topic} that I can't find answered anywhere.",
    "Unpopular opinion about {topic}: we overcomplicate it.",
    "My experience with this has been amazing and I would encourage everyone to give it a try!",
    "Looking for advice from people who know more than me.",
    "Does anyone have good resources they could share?",
    "I finally did the thing I was scared of for months.",
    "Small win today and I wanted to share it with people who get it.",
    "Can we talk about how hard it is to find honest information on {topic}?",
    "Weekly check-in: how is everyone doing?",
];

const HEADLINE_CLOSERS: &[&str] = &[
    "",
    "Curious what you all think.",
    "Any thoughts welcome.",
    "Would love to hear your stories.",
    "Thanks in advance!",
    "Long-time lurker here.",
];

const REPLY_OPENERS: &[&str] = &[
    "I'm sorry to hear that you felt that way.",
    "Thanks for sharing this.",
    "Honestly, I had the opposite experience.",
    "This resonates with me a lot.",
    "I think you're missing part of the picture.",
    "Great question.",
    "Same here.",
    "I went through something similar last year.",
    "Respectfully, I disagree.",
    "Have you considered talking to someone about it?",
    "",
    "Wow.",
];

const REPLY_BODIES: &[&str] = &[
    "I think it can be really helpful for people who are struggling.",
    "It took me a long time to figure out what worked for me.",
    "The first few weeks are always the hardest.",
    "Everyone's situation is different, so take advice here with a grain of salt.",
    "I'd start small and see how it goes.",
    "There are a lot of good resources if you look in the right places.",
    "People in this thread have given some really solid advice.",
    "I changed my mind about this after reading more on it.",
    "It's worth asking a professional before you decide anything.",
    "Keep us posted on how it turns out.",
    "You are definitely not alone in this.",
    "I'm not sure the evidence backs that up.",
];

const CLOSERS: &[&str] = &["", "Good luck!", "Hope that helps.", "Just my two cents.", "Take care.", "Cheers."];

const GENERIC_OPENERS: &[&str] = &["Interesting.", "Okay.", "Hmm.", ""];
const GENERIC_BODIES: &[&str] = &[
    "There is a lot to unpack here.",
    "I need to think about this more.",
    "That is one way to look at it.",
];

const TROLL_OPENERS: &[&str] = &["lol.", "Oh please.", "Are you serious?", "Imagine thinking this.", "Cry more."];
const TROLL_BODIES: &[&str] = &[
    "Nobody here is going to take you seriously.",
    "This is the dumbest thing I've read all week.",
    "Anyone who believes this is a pathetic coward.",
    "You clearly have no idea what you're talking about.",
    "Go touch grass.",
    "This whole forum is a joke.",
];
const TROLL_CLOSERS: &[&str] = &["", "Deal with it.", "Stay mad.", "Whatever."];

const APOLOGY_OPENERS: &[&str] = &[
    "Sorry, I may have been too harsh.",
    "Fair enough, I apologize.",
    "You're right, that was out of line.",
];
const ESCALATION_OPENERS: &[&str] = &[
    "So now we're censoring opinions?",
    "This is exactly why this place is dying.",
    "Typical mod power trip.",
];
const DEPARTURE_OPENERS: &[&str] = &[
    "Fine, I'm out of here.",
    "Whatever, I'm leaving this sub.",
    "Not worth my time, bye.",
];
const REACTION_BODIES: &[&str] = &[
    "I just wanted to make a point.",
    "I'll keep my comments civil from now on.",
    "Nobody else got warned for saying the same thing.",
    "I didn't think it would upset anyone.",
    "Enjoy your echo chamber.",
    "",
];

const FIRST_NAMES: &[&str] = &[
    "Aaron", "Abigail", "Adrian", "Aisha", "Alex", "Amara", "Andre", "Anika", "Ben", "Bianca", "Carlos", "Chloe",
    "Daniel", "Deepa", "Diego", "Elena", "Emeka", "Emma", "Farah", "Felix", "Gabriel", "Grace", "Hana", "Hugo",
    "Ibrahim", "Isla", "Jamal", "Jasmine", "Jonas", "Julia", "Kai", "Keiko", "Leo", "Lina", "Lucas", "Maddie",
    "Marco", "Maya", "Mei", "Nadia", "Nikhil", "Nora", "Omar", "Olivia", "Pablo", "Priya", "Quinn", "Rafael",
    "Rosa", "Ryan", "Sana", "Sofia", "Tariq", "Tessa", "Tomas", "Uma", "Victor", "Wen", "Xavier", "Yara", "Yusuf",
    "Zane", "Zoe", "Hiro",
];

const LAST_NAMES: &[&str] = &[
    "Abbott", "Adeyemi", "Alvarez", "Andersen", "Bakshi", "Bennett", "Brooks", "Castillo", "Chen", "Costa", "Dubois",
    "Edwards", "Farouk", "Fischer", "Garcia", "Green", "Gupta", "Hall", "Hansen", "Ito", "Jensen", "Johnson",
    "Kaur", "Kim", "Kowalski", "Larsen", "Lopez", "Mahmoud", "Martin", "Meyer", "Morales", "Nakamura", "Nguyen",
    "Novak", "Okafor", "Olsen", "Park", "Patel", "Petrov", "Quinn", "Ramos", "Rossi", "Sato", "Schmidt", "Silva",
    "Singh", "Suzuki", "Tanaka", "Torres", "Turner", "Usman", "Vargas", "Volkov", "Walker", "Wang", "Weber",
    "Wilson", "Xu", "Yamamura", "Young", "Zhang", "Ziegler", "Zimmerman", "Ortiz",
];

const ROLES: &[&str] = &[
    "graduate student", "retired teacher", "nurse", "software engineer", "freelance journalist", "high school senior",
    "small business owner", "policy analyst", "stay-at-home parent", "librarian", "college professor",
    "social worker", "veteran", "bartender", "research scientist", "first-year undergraduate", "consultant",
    "community organizer", "paramedic", "translator",
];

const TRAITS: &[&str] = &[
    "who asks a lot of questions",
    "who is skeptical of popular opinions",
    "who likes to share personal stories",
    "who posts long detailed answers",
    "with a dry sense of humor",
    "who is new to the topic",
    "who has strong opinions and argues often",
    "who tries to keep discussions civil",
    "who mostly lurks but chimes in occasionally",
    "who loves recommending books",
    "who follows the news closely",
    "who is blunt to the point of rudeness",
];
