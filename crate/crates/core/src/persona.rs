//! Seed persona expansion.

use std::collections::HashSet;

use thiserror::Error;

use crate::llm::{CompletionRequest, Gateway, LlmError};
use crate::model::Persona;
use crate::prompt::build_persona_expansion_prompt;
use crate::rng::RngStream;

/// Most recent roster entries shown to the model per expansion call.
pub const EXAMPLE_WINDOW: usize = 25;
/// Personas a single completion is expected to contribute, for the attempt budget.
const EXPECTED_BATCH: usize = 5;
const BUDGET_FACTOR: usize = 4;

#[derive(Debug, Error)]
pub enum ExpansionError {
    #[error("target of {target} personas is below the {seeds} seeds")]
    TargetBelowSeeds { target: usize, seeds: usize },
    #[error("no seed personas")]
    NoSeeds,
    #[error("expansion stalled at {} of {target} personas after {attempts} completions", .roster.len())]
    Stalled { roster: Vec<Persona>, target: usize, attempts: usize },
    #[error("backend failed during expansion: {source}")]
    Backend {
        roster: Vec<Persona>,
        #[source]
        source: LlmError,
    },
}

impl ExpansionError {
    pub fn partial_roster(&self) -> Option<&[Persona]> {
        match self {
            ExpansionError::Stalled { roster, .. } | ExpansionError::Backend { roster, .. } => Some(roster),
            _ => None,
        }
    }
}

/// One persona per `Name, description` line. The name ends at the first
/// comma. Lines without a comma, with an empty half, or with a name that
/// is not a valid persona name are skipped.
pub fn parse_persona_lines(raw: &str) -> Vec<Persona> {
    raw.lines()
        .filter_map(|line| {
            let (name, description) = line.split_once(',')?;
            Persona::new(name, description).ok()
        })
        .collect()
}

/// Completions allowed before giving up on reaching `target`.
pub fn attempt_budget(target: usize) -> usize {
    target.div_ceil(EXPECTED_BATCH) * BUDGET_FACTOR
}

/// Grows `seeds` to exactly `target` personas with unique (case-insensitive)
/// names. The seeds stay first, in order.
pub fn expand_personas(
    seeds: &[Persona],
    target: usize,
    gateway: &Gateway,
    temperature: f64,
    rng: &mut RngStream,
) -> Result<Vec<Persona>, ExpansionError> {
    if seeds.is_empty() {
        return Err(ExpansionError::NoSeeds);
    }
    if target < seeds.len() {
        return Err(ExpansionError::TargetBelowSeeds { target, seeds: seeds.len() });
    }
    let mut roster = seeds.to_vec();
    let mut seen: HashSet<String> = roster.iter().map(|p| p.name().to_lowercase()).collect();
    let max_attempts = attempt_budget(target);
    let mut attempts = 0;
    while roster.len() < target {
        if attempts == max_attempts {
            return Err(ExpansionError::Stalled { roster, target, attempts });
        }
        attempts += 1;
        let window = &roster[roster.len().saturating_sub(EXAMPLE_WINDOW)..];
        let prompt = build_persona_expansion_prompt(window).expect("window is never empty");
        let request = CompletionRequest::persona_batch(prompt.body, temperature, rng.next_u64());
        let text = match gateway.complete(&request, "expand_personas") {
            Ok(result) => result.text,
            Err(LlmError::EmptyGeneration) => continue,
            Err(source) => return Err(ExpansionError::Backend { roster, source }),
        };
        for persona in parse_persona_lines(&text) {
            if roster.len() == target {
                break;
            }
            if seen.insert(persona.name().to_lowercase()) {
                roster.push(persona);
            }
        }
    }
    Ok(roster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{AuditLog, CompletionBackend, CompletionResult, FinishReason};
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Fixed {
        text: String,
        calls: AtomicUsize,
    }

    impl CompletionBackend for Fixed {
        fn complete(&self, _: &CompletionRequest) -> Result<CompletionResult, LlmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(CompletionResult { text: self.text.clone(), finish_reason: FinishReason::StopSequence })
        }
    }

    fn fixed(text: &str) -> (Gateway, Arc<Fixed>) {
        let b = Arc::new(Fixed { text: text.into(), calls: AtomicUsize::new(0) });
        (Gateway::new(b.clone(), Arc::new(AuditLog::in_memory())), b)
    }

    fn seeds(n: usize) -> Vec<Persona> {
        (0..n).map(|i| Persona::new(format!("Seed {i}"), format!("seed number {i}")).unwrap()).collect()
    }

    #[test]
    fn parses_paper_style_lines() {
        let got = parse_persona_lines(
            "Leo Yamamura, pursuing a doctorate in international relations with a focus on international economics",
        );
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].name(), "Leo Yamamura");
        assert_eq!(
            got[0].description(),
            "pursuing a doctorate in international relations with a focus on international economics"
        );
        assert!(parse_persona_lines("garbage line without comma").is_empty());
        assert_eq!(parse_persona_lines("A, b\n\nC, d").len(), 2);
        assert!(parse_persona_lines(", nameless\nNobody,   ").is_empty());
        let comma = parse_persona_lines("Maddie Green, IR professor, state university");
        assert_eq!(comma[0].description(), "IR professor, state university");
    }

    #[test]
    fn target_equal_to_seeds_makes_no_calls() {
        let (gw, backend) = fixed("X, y\n");
        let got = expand_personas(&seeds(3), 3, &gw, 0.7, &mut RngStream::new(0)).unwrap();
        assert_eq!(got, seeds(3));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn repeated_line_stalls_with_partial_roster() {
        let (gw, backend) = fixed("Same Person, always the same\n");
        let err = expand_personas(&seeds(5), 10, &gw, 0.7, &mut RngStream::new(0)).unwrap_err();
        match &err {
            ExpansionError::Stalled { roster, attempts, .. } => {
                assert_eq!(roster.len(), 6);
                assert_eq!(*attempts, attempt_budget(10));
            }
            other => panic!("{other}"),
        }
        assert_eq!(backend.calls.load(Ordering::SeqCst), 8);
    }

    #[test]
    fn target_below_seeds_is_rejected() {
        let (gw, _) = fixed("");
        assert!(matches!(
            expand_personas(&seeds(3), 2, &gw, 0.7, &mut RngStream::new(0)),
            Err(ExpansionError::TargetBelowSeeds { .. })
        ));
    }

    #[test]
    fn mock_expansion_is_deterministic_and_unique() {
        let run = |seed| {
            expand_personas(&seeds(4), 60, &Gateway::mock(), 0.7, &mut RngStream::new(seed)).unwrap()
        };
        let a = run(1);
        assert_eq!(a, run(1));
        assert_ne!(a, run(2));
        assert_eq!(a.len(), 60);
        assert_eq!(&a[..4], &seeds(4)[..]);
        let names: HashSet<String> = a.iter().map(|p| p.name().to_lowercase()).collect();
        assert_eq!(names.len(), 60);
    }

    #[test]
    fn prompts_use_a_rolling_window() {
        let gw = Gateway::mock();
        expand_personas(&seeds(30), 80, &gw, 0.7, &mut RngStream::new(0)).unwrap();
        for rec in gw.audit().records() {
            assert!(rec.prompt.lines().count() <= EXAMPLE_WINDOW);
        }
    }

    proptest! {
        #[test]
        fn injected_duplicates_never_survive(
            lines in proptest::collection::vec(("[A-C][a-c]{0,2}", "[a-z]{1,6}"), 1..12)
        ) {
            let mut text = String::new();
            for (name, desc) in &lines {
                text.push_str(&format!("{name}, {desc}\n{}, {desc}\n", name.to_uppercase()));
            }
            let (gw, _) = fixed(&text);
            let roster = match expand_personas(&seeds(2), 40, &gw, 0.7, &mut RngStream::new(0)) {
                Ok(r) => r,
                Err(e) => e.partial_roster().unwrap().to_vec(),
            };
            let names: HashSet<String> = roster.iter().map(|p| p.name().to_lowercase()).collect();
            prop_assert_eq!(names.len(), roster.len());
        }
    }
}
