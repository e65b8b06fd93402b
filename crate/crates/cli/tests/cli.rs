use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use simulacra_core::{RngStream, Universe};

const BIN: &str = env!("CARGO_BIN_EXE_simulacra");

fn design_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/design_psychotherapy.json")
}

fn simulacra(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SIMULACRA_BACKEND").output().unwrap()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn generate(out: &Path, extra: &[&str]) -> Output {
    let design = design_file();
    let mut args = vec!["generate", "--design", design.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    simulacra(&args)
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let flags = ["--seed", "42", "--threads", "6", "--personas", "60", "--backend", "mock"];
    assert!(generate(&a, &flags).status.success());
    assert!(generate(&b, &flags).status.success());
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 7);
    assert_eq!(ta, tb);
    let universe: Universe = serde_json::from_slice(&ta[Path::new("universe.json")]).unwrap();
    assert_eq!(universe.threads().len(), 6);
    let transcript = String::from_utf8(ta[Path::new("threads/000.txt")].clone()).unwrap();
    assert_eq!(transcript, universe.threads()[0].transcript());
    assert!(transcript.starts_with('['));
}

#[test]
fn no_personas_transcripts_use_numbered_users() {
    let dir = tempfile::tempdir().unwrap();
    let out = generate(dir.path(), &["--ablation", "no-personas", "--threads", "10", "--personas", "30"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut saw_user2 = false;
    for (path, bytes) in tree(dir.path()) {
        if path.starts_with("threads") {
            let text = String::from_utf8(bytes).unwrap();
            assert!(text.starts_with("[User 1]: "), "{text}");
            saw_user2 |= text.contains("[User 2]: ");
        }
    }
    assert!(saw_user2);
}

#[test]
fn personas_prints_roster_lines() {
    let design = design_file();
    let out = simulacra(&["personas", "--design", design.to_str().unwrap(), "--count", "40"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 40);
    assert_eq!(lines[0], "Layla Li, a college student studying to be a social worker");
    assert!(lines.iter().all(|l| l.contains(", ")));
}

#[test]
fn whatif_prints_alternatives_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), &["--threads", "2", "--personas", "20"]).status.success());
    let universe_path = dir.path().join("universe.json");
    let universe: Universe = serde_json::from_slice(&std::fs::read(&universe_path).unwrap()).unwrap();
    let tid = universe.threads()[0].id();
    let branch_path = dir.path().join("branch.json");
    let u = universe_path.to_str().unwrap();
    let out = simulacra(&[
        "whatif", "--universe", u, "--thread", tid, "--at", "0",
        "--persona", "Troll:shares trolling comments", "-k", "3", "--out", branch_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("--- alternative").count(), 3);
    assert_eq!(text.matches("\n[Troll]: ").count(), 3);
    assert!(branch_path.exists());

    let out = simulacra(&["whatif", "--universe", u, "--thread", tid, "--at", "0", "--intervene", "Please be civil."]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().matches("[Moderator]: Please be civil.").count(), 3);

    let bad = simulacra(&["whatif", "--universe", u, "--thread", tid, "--at", "99", "--persona", "Troll:trolls"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn export_pairs_follow_the_seeded_coin() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), &["--threads", "2", "--personas", "20"]).status.success());
    let real = dir.path().join("real");
    std::fs::create_dir(&real).unwrap();
    std::fs::write(real.join("a.txt"), "[Alice]: real one\n").unwrap();
    std::fs::write(real.join("b.txt"), "[Bob]: real two\n").unwrap();
    let out_path = dir.path().join("pairs.json");
    let out = simulacra(&[
        "export-pairs", "--universe", dir.path().join("universe.json").to_str().unwrap(),
        "--real", real.to_str().unwrap(), "--out", out_path.to_str().unwrap(), "--seed", "11",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let packet: serde_json::Value = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    let pairs = packet["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 2);
    // Oracle: one fair coin per pair, in order, from the seeded stream.
    let mut coin = RngStream::new(11);
    for (i, p) in pairs.iter().enumerate() {
        let expected = if coin.chance(0.5) { "left" } else { "right" };
        assert_eq!(p["generated_side"], expected);
        let real_side = if expected == "left" { "right" } else { "left" };
        assert!(p[real_side].as_str().unwrap().contains(["real one", "real two"][i]));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_design = dir.path().join("bad.json");
    std::fs::write(&bad_design, r#"{"goal": "", "seed_personas": []}"#).unwrap();
    let out = simulacra(&["generate", "--design", bad_design.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = simulacra(&["generate", "--design", "/nonexistent.json", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let design = design_file();
    let out = Command::new(BIN)
        .args(["personas", "--design", design.to_str().unwrap(), "--count", "20", "--backend", "live"])
        .env("SIMULACRA_API_URL", "http://127.0.0.1:9/v1/completions")
        .env("SIMULACRA_API_KEY", "test")
        .env("SIMULACRA_MAX_RETRIES", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
