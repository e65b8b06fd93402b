use simulacra_core::model::{Ablation, CommunityDesign, Persona, Utterance, UtteranceKind};
use simulacra_core::prompt::{build_headline_prompt, build_reply_prompt, Speaker, TemplateKind};

const LIMIT: usize = 8000;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn design() -> CommunityDesign {
    serde_json::from_str(&fixture("design_psychotherapy.json")).unwrap()
}

fn member(name: &str) -> Speaker {
    Speaker::Member(design().seed_personas().iter().find(|p| p.name() == name).unwrap().clone())
}

#[test]
fn headline_matches_fixture() {
    let p = build_headline_prompt(&member("Layla Li"), &design(), Ablation::Full, Some("She"), LIMIT).unwrap();
    assert_eq!(p.body, fixture("headline_psychotherapy.txt"));
    assert_eq!(p.template_kind, TemplateKind::Headline);
    assert_eq!(p.char_count, p.body.chars().count());
    assert_eq!(p.truncated_utterance_count, 0);
}

#[test]
fn reply_matches_fixture() {
    let post = Utterance::new(
        "t-0",
        "Layla Li",
        "Antidepressants made me so unhappy that I wanted to die without them.",
        UtteranceKind::Post,
        0,
    )
    .unwrap();
    let p = build_reply_prompt(&member("Tom Cheng"), &[post], &design(), Ablation::Full, None, Some("He"), LIMIT)
        .unwrap();
    assert_eq!(p.body, fixture("reply_psychotherapy.txt"));
    assert_eq!(p.template_kind, TemplateKind::Reply);
}

#[test]
fn default_pronoun_repeats_the_first_name() {
    let p = build_headline_prompt(&member("Layla Li"), &design(), Ablation::Full, None, LIMIT).unwrap();
    let expected = fixture("headline_psychotherapy.txt").replacen(". She shares", ". Layla shares", 1);
    assert_eq!(p.body, expected);
}

#[test]
fn design_fixture_round_trips() {
    let d = design();
    let again: CommunityDesign = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
    assert_eq!(d, again);
    assert_eq!(d.seed_personas().len(), 10);
    assert!(d.seed_personas().iter().all(|p: &Persona| !p.description().is_empty()));
}
