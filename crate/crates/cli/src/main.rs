//! `simulacra`: batch generation, persona expansion, what-if probes and
//! evaluation-pair export.
//!
//! Exit codes: 0 on success, 2 on invalid input, 3 when the completion
//! backend fails, 1 for anything else.

mod export;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use simulacra_core::engine::{generate_universe_with_progress, EngineError, UniverseMeta};
use simulacra_core::llm::{AuditLog, BackendConfig, HttpBackend, MockBackend};
use simulacra_core::persona::{expand_personas, ExpansionError};
use simulacra_core::rng::tags;
use simulacra_core::scenario::{whatif_intervention, whatif_reply, InjectedPersona, ScenarioError, WhatIfSpec};
use simulacra_core::{Ablation, CommunityDesign, Gateway, GenerationConfig, RngStream, Universe};

#[derive(Parser)]
#[command(name = "simulacra", version, about = "Generate and probe simulated online communities")]
struct Cli {
    /// Completion backend.
    #[arg(long, value_enum, global = true, env = "SIMULACRA_BACKEND", default_value = "mock")]
    backend: Backend,
    /// Append every completion to this ndjson file.
    #[arg(long, global = true)]
    audit: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Live,
    Mock,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Full,
    NoDescription,
    NoPersonas,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoDescription => Ablation::NoDescription,
            AblationArg::NoPersonas => Ablation::NoPersonas,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a universe: `universe.json` plus one transcript per thread.
    Generate {
        #[arg(long)]
        design: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        ablation: AblationArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of threads (default 20).
        #[arg(long)]
        threads: Option<usize>,
        /// Size of the expanded persona roster (default 1000).
        #[arg(long)]
        personas: Option<usize>,
        /// JSON file of generation settings; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand the design's seed personas and print `Name, description` lines.
    Personas {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Regenerate a reply in an injected voice, or after a moderator intervention.
    Whatif {
        #[arg(long)]
        universe: PathBuf,
        #[arg(long)]
        thread: String,
        #[arg(long)]
        at: usize,
        /// `Label:description`, or a roster member's name.
        #[arg(long)]
        persona: Option<String>,
        /// Moderator text inserted after the probed utterance.
        #[arg(long)]
        intervene: Option<String>,
        #[arg(short, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the branch as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pair real and generated conversations for a discrimination study.
    ExportPairs {
        #[arg(long)]
        universe: PathBuf,
        /// Directory of real conversations, one `.txt` transcript each.
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Backend(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Backend(m) | CliError::Other(m) => m,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            e if e.backend().is_some() => CliError::Backend(e.to_string()),
            e @ EngineError::GenerationFailed { .. } => CliError::Backend(e.to_string()),
            e => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Generation(inner) => inner.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_input(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn gateway(cli: &Cli) -> CliResult<Gateway> {
    let audit = match &cli.audit {
        Some(path) => AuditLog::with_file(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?,
        None => AuditLog::in_memory(),
    };
    let backend: Arc<dyn simulacra_core::CompletionBackend> = match cli.backend {
        Backend::Mock => Arc::new(MockBackend::new()),
        Backend::Live => Arc::new(HttpBackend::new(
            BackendConfig::from_env().map_err(|e| CliError::Invalid(e.to_string()))?,
        )),
    };
    Ok(Gateway::new(backend, Arc::new(audit)))
}

fn to_pretty_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("values always serialize");
    bytes.push(b'\n');
    bytes
}

fn generate(cli: &Cli) -> CliResult<()> {
    let Command::Generate { design, ablation, seed, threads, personas, config, out } = &cli.command else {
        unreachable!()
    };
    let design: CommunityDesign = read_json(design)?;
    let mut config: GenerationConfig = match config {
        Some(path) => read_json(path)?,
        None => GenerationConfig::default(),
    };
    config.ablation = (*ablation).into();
    config.rng_seed = *seed;
    if let Some(n) = threads {
        config.thread_count = *n;
    }
    if let Some(n) = personas {
        config.persona_pool_size = *n;
    }
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(CliError::Invalid(violations.join("; ")));
    }
    let meta = match cli.backend {
        Backend::Mock => UniverseMeta::reproducible(&design),
        Backend::Live => UniverseMeta { created_at: chrono::Utc::now(), ..UniverseMeta::reproducible(&design) },
    };
    let gw = gateway(cli)?;
    let progress = |done: usize, total: usize| eprint!("\rthreads {done}/{total}");
    let universe = generate_universe_with_progress(&design, &config, &gw, meta, &progress)
        .map_err(|e| CliError::from(e.source))?;
    eprintln!();

    write_output(&out.join("universe.json"), &to_pretty_json(&universe))?;
    for (i, thread) in universe.threads().iter().enumerate() {
        write_output(&out.join("threads").join(format!("{i:03}.txt")), thread.transcript().as_bytes())?;
    }
    eprintln!("wrote {} threads to {}", universe.threads().len(), out.display());
    Ok(())
}

fn personas(cli: &Cli) -> CliResult<()> {
    let Command::Personas { design, count, seed } = &cli.command else { unreachable!() };
    let design: CommunityDesign = read_json(design)?;
    let gw = gateway(cli)?.scoped("personas");
    let temperature = GenerationConfig::default().temperature;
    let mut rng = RngStream::derive(*seed, tags::PERSONAS, 0);
    let roster = expand_personas(design.seed_personas(), *count, &gw, temperature, &mut rng).map_err(|e| match e {
        ExpansionError::Backend { .. } | ExpansionError::Stalled { .. } => CliError::Backend(e.to_string()),
        other => CliError::Invalid(other.to_string()),
    })?;
    let mut out = String::new();
    for p in &roster {
        out.push_str(&format!("{p}\n"));
    }
    print!("{out}");
    Ok(())
}

fn whatif(cli: &Cli) -> CliResult<()> {
    let Command::Whatif { universe, thread, at, persona, intervene, k, seed, out } = &cli.command else {
        unreachable!()
    };
    let universe: Universe = read_json(universe)?;
    let spec = WhatIfSpec {
        injected_persona: persona.as_deref().map(InjectedPersona::parse),
        intervention_text: intervene.clone(),
        alternatives: *k,
        ..WhatIfSpec::new(thread.clone(), *at)
    };
    let gw = gateway(cli)?;
    let mut rng = RngStream::new(*seed);
    let branch = match spec.intervention_text {
        Some(_) => whatif_intervention(&universe, &spec, &gw, &mut rng)?,
        None => whatif_reply(&universe, &spec, &gw, &mut rng)?,
    };
    let mut text = String::new();
    for (i, t) in branch.threads.iter().enumerate() {
        text.push_str(&format!("--- alternative {} ---\n{}", i + 1, t.transcript()));
    }
    for f in &branch.failures {
        text.push_str(&format!("--- alternative {} failed: {} ---\n", f.branch_index + 1, f.error));
    }
    print!("{text}");
    if let Some(path) = out {
        write_output(path, &to_pretty_json(&branch))?;
    }
    Ok(())
}

fn export_pairs(cli: &Cli) -> CliResult<()> {
    let Command::ExportPairs { universe, real, out, seed } = &cli.command else { unreachable!() };
    let universe: Universe = read_json(universe)?;
    let real = export::read_real_dir(real).map_err(CliError::Invalid)?;
    let generated: Vec<String> = universe.threads().iter().map(|t| t.transcript()).collect();
    let packet = export::pair(&real, &generated, *seed);
    write_output(out, &to_pretty_json(&packet))?;
    eprintln!("wrote {} pairs to {}", packet.pairs.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { .. } => generate(&cli),
        Command::Personas { .. } => personas(&cli),
        Command::Whatif { .. } => whatif(&cli),
        Command::ExportPairs { .. } => export_pairs(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
