//! File-backed persistence.
//!
//! Layout under the data root:
//!
//! ```text
//! designs/<id>.json
//! universes/<id>.json
//! branches/<universe id>/<sequence>.json
//! audit/<name>.ndjson
//! ```
//!
//! Every document is wrapped in an [`Envelope`] carrying a schema version.
//! Writes go to a temporary file first and are linked into place, so readers
//! never observe a half-written document and nothing is ever overwritten.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CommunityDesign, Universe};
use crate::scenario::Branch;

pub const SCHEMA_VERSION: u32 = 1;
pub const DATA_DIR_ENV: &str = "SIMULACRA_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{} already exists", .path.display())]
    AlreadyExists { path: PathBuf },
    #[error("invalid id {0:?}")]
    InvalidId(String),
    #[error("{} is corrupt: {reason}", .path.display())]
    Integrity { path: PathBuf, reason: String },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub kind: String,
    pub payload: T,
}

/// A saved design with its identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredDesign {
    pub id: String,
    pub design: CommunityDesign,
}

/// Listing entry for a stored universe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniverseSummary {
    pub id: String,
    pub parent_community: String,
    pub created_at: chrono::DateTime<chrono::Utc>,
    pub rng_seed: u64,
    pub thread_count: usize,
    pub roster_size: usize,
}

impl From<&Universe> for UniverseSummary {
    fn from(u: &Universe) -> Self {
        Self {
            id: u.id().to_string(),
            parent_community: u.parent_community().to_string(),
            created_at: u.created_at(),
            rng_seed: u.config().rng_seed,
            thread_count: u.threads().len(),
            roster_size: u.roster().len(),
        }
    }
}

/// A branch as stored, with its position in the universe's branch log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredBranch {
    pub sequence: u64,
    pub branch: Branch,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn check_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let store = Self { root: root.into() };
        for dir in ["designs", "universes", "branches", "audit"] {
            let path = store.root.join(dir);
            fs::create_dir_all(&path).map_err(io_err(&path))?;
        }
        Ok(store)
    }

    /// Opens the store named by `SIMULACRA_DATA_DIR`, or `./data`.
    pub fn from_env() -> Result<Self, StoreError> {
        Self::open(std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_DATA_DIR.into()))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path for an audit log named `name`.
    pub fn audit_path(&self, name: &str) -> Result<PathBuf, StoreError> {
        check_id(name)?;
        Ok(self.root.join("audit").join(format!("{name}.ndjson")))
    }

    fn write_new<T: Serialize>(&self, path: &Path, kind: &str, payload: &T) -> Result<(), StoreError> {
        let envelope = Envelope { schema_version: SCHEMA_VERSION, kind: kind.to_string(), payload };
        let mut bytes = serde_json::to_vec_pretty(&envelope).expect("stored types always serialize");
        bytes.push(b'\n');
        let dir = path.parent().expect("store paths have a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let result = (|| {
            let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&bytes).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
            // hard_link refuses to replace an existing file, which makes the
            // publish step both atomic and append-only.
            fs::hard_link(&tmp, path).map_err(|e| match e.kind() {
                io::ErrorKind::AlreadyExists => StoreError::AlreadyExists { path: path.to_path_buf() },
                _ => StoreError::Io { path: path.to_path_buf(), source: e },
            })
        })();
        let _ = fs::remove_file(&tmp);
        result
    }

    fn read<T: DeserializeOwned>(&self, path: &Path, kind: &'static str, id: &str) -> Result<T, StoreError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound { kind, id: id.to_string() })
            }
            Err(e) => return Err(StoreError::Io { path: path.to_path_buf(), source: e }),
        };
        let integrity = |reason: String| StoreError::Integrity { path: path.to_path_buf(), reason };
        let envelope: Envelope<serde_json::Value> =
            serde_json::from_slice(&bytes).map_err(|e| integrity(e.to_string()))?;
        if envelope.schema_version != SCHEMA_VERSION {
            return Err(integrity(format!("unsupported schema version {}", envelope.schema_version)));
        }
        if envelope.kind != kind {
            return Err(integrity(format!("expected a {kind}, found a {}", envelope.kind)));
        }
        serde_json::from_value(envelope.payload).map_err(|e| integrity(e.to_string()))
    }

    fn design_path(&self, id: &str) -> PathBuf {
        self.root.join("designs").join(format!("{id}.json"))
    }

    fn universe_path(&self, id: &str) -> PathBuf {
        self.root.join("universes").join(format!("{id}.json"))
    }

    pub fn save_design(&self, id: &str, design: &CommunityDesign) -> Result<(), StoreError> {
        check_id(id)?;
        let stored = StoredDesign { id: id.to_string(), design: design.clone() };
        self.write_new(&self.design_path(id), "design", &stored)
    }

    pub fn load_design(&self, id: &str) -> Result<CommunityDesign, StoreError> {
        check_id(id)?;
        let stored: StoredDesign = self.read(&self.design_path(id), "design", id)?;
        Ok(stored.design)
    }

    pub fn save_universe(&self, universe: &Universe) -> Result<(), StoreError> {
        check_id(universe.id())?;
        self.write_new(&self.universe_path(universe.id()), "universe", universe)
    }

    pub fn load_universe(&self, id: &str) -> Result<Universe, StoreError> {
        check_id(id)?;
        self.read(&self.universe_path(id), "universe", id)
    }

    /// Universes generated from `parent_community`, oldest first.
    pub fn list_universes(&self, parent_community: &str) -> Result<Vec<UniverseSummary>, StoreError> {
        let dir = self.root.join("universes");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            let Some(id) = json_stem(&path) else { continue };
            let universe: Universe = self.read(&path, "universe", &id)?;
            if universe.parent_community() == parent_community {
                out.push(UniverseSummary::from(&universe));
            }
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }

    /// Appends `branch` to its source universe's branch log. The universe
    /// itself is never rewritten. Returns the branch's sequence number.
    pub fn append_branch(&self, branch: &Branch) -> Result<u64, StoreError> {
        let universe_id = &branch.source_universe;
        check_id(universe_id)?;
        if !self.universe_path(universe_id).exists() {
            return Err(StoreError::NotFound { kind: "universe", id: universe_id.clone() });
        }
        loop {
            let sequence = self.list_branches(universe_id)?.last().map_or(0, |b| b.sequence + 1);
            let stored = StoredBranch { sequence, branch: branch.clone() };
            match self.write_new(&self.branch_path(universe_id, sequence), "branch", &stored) {
                // A concurrent writer took this slot; try the next one.
                Err(StoreError::AlreadyExists { .. }) => continue,
                other => return other.map(|_| sequence),
            }
        }
    }

    fn branch_path(&self, universe_id: &str, sequence: u64) -> PathBuf {
        self.root.join("branches").join(universe_id).join(format!("{sequence:08}.json"))
    }

    /// Branches of `universe_id` in append order.
    pub fn list_branches(&self, universe_id: &str) -> Result<Vec<StoredBranch>, StoreError> {
        check_id(universe_id)?;
        let dir = self.root.join("branches").join(universe_id);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::Io { path: dir, source: e }),
        };
        let mut out = Vec::new();
        for entry in entries {
            let path = entry.map_err(io_err(&dir))?.path();
            let Some(id) = json_stem(&path) else { continue };
            out.push(self.read::<StoredBranch>(&path, "branch", &id)?);
        }
        out.sort_by_key(|b| b.sequence);
        Ok(out)
    }
}

fn json_stem(path: &Path) -> Option<String> {
    if path.extension()? != "json" {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    (!stem.starts_with('.')).then(|| stem.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{generate_universe, UniverseMeta};
    use crate::llm::Gateway;
    use crate::model::{GenerationConfig, Persona};
    use crate::rng::RngStream;
    use crate::scenario::{whatif_reply, InjectedPersona, WhatIfSpec};

    fn sample() -> Universe {
        let design = CommunityDesign::new(
            "trading gardening tips",
            vec![],
            vec![Persona::new("Ana Ruiz", "a balcony gardener").unwrap(), Persona::new("Ben Ode", "a farmer").unwrap()],
        )
        .unwrap();
        let config = GenerationConfig { persona_pool_size: 12, thread_count: 3, ..Default::default() };
        generate_universe(&design, &config, &Gateway::mock(), UniverseMeta::reproducible(&design)).unwrap()
    }

    #[test]
    fn round_trip_and_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let u = sample();
        store.save_universe(&u).unwrap();
        assert_eq!(store.load_universe(u.id()).unwrap(), u);
        assert!(matches!(store.save_universe(&u), Err(StoreError::AlreadyExists { .. })));
        assert!(matches!(store.load_universe("missing"), Err(StoreError::NotFound { .. })));
        store.save_design("d1", u.design()).unwrap();
        assert_eq!(&store.load_design("d1").unwrap(), u.design());
        assert_eq!(store.list_universes(u.parent_community()).unwrap(), vec![UniverseSummary::from(&u)]);
        assert!(store.list_universes("other").unwrap().is_empty());
    }

    #[test]
    fn corrupt_file_names_its_path() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let path = dir.path().join("universes/bad.json");
        fs::write(&path, "{ not json").unwrap();
        match store.load_universe("bad") {
            Err(StoreError::Integrity { path: p, .. }) => assert_eq!(p, path),
            other => panic!("{other:?}"),
        }
        fs::write(&path, r#"{"schema_version":99,"kind":"universe","payload":{}}"#).unwrap();
        let msg = store.load_universe("bad").unwrap_err().to_string();
        assert!(msg.contains("bad.json") && msg.contains("99"), "{msg}");
    }

    #[test]
    fn ids_cannot_escape_the_root() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(matches!(store.load_universe("../etc"), Err(StoreError::InvalidId(_))));
        assert!(store.audit_path("a/b").is_err());
    }

    #[test]
    fn branches_append_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let u = sample();
        let spec = WhatIfSpec {
            injected_persona: Some(InjectedPersona::custom("Troll", "shares trolling comments")),
            alternatives: 1,
            ..WhatIfSpec::new(u.threads()[0].id(), 0)
        };
        let branch = whatif_reply(&u, &spec, &Gateway::mock(), &mut RngStream::new(1)).unwrap();
        assert!(matches!(store.append_branch(&branch), Err(StoreError::NotFound { .. })));
        store.save_universe(&u).unwrap();
        assert_eq!(store.append_branch(&branch).unwrap(), 0);
        assert_eq!(store.append_branch(&branch).unwrap(), 1);
        let listed = store.list_branches(u.id()).unwrap();
        assert_eq!(listed.len(), 2);
        assert_eq!(listed[1].branch, branch);
        assert_eq!(store.load_universe(u.id()).unwrap(), u);
    }
}
