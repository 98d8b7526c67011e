//! Directory-backed document store with per-key version counters.
//!
//! Layout: `<root>/<kind>/<key>.json`, each file holding
//! `{"version": n, "document": {...}}`. Writes go through a temporary file and
//! a rename. An exclusive handle additionally holds `<root>/store.lock` for its
//! lifetime so a second server cannot open the same store.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{io_err, AssessmentSnapshot, Document, RegistryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocKind {
    Profile,
    Register,
    Catalog,
    Session,
    Snapshot,
    Estimates,
}

impl DocKind {
    pub const ALL: [DocKind; 6] = [
        DocKind::Profile,
        DocKind::Register,
        DocKind::Catalog,
        DocKind::Session,
        DocKind::Snapshot,
        DocKind::Estimates,
    ];

    pub fn dir(self) -> &'static str {
        match self {
            DocKind::Profile => "profiles",
            DocKind::Register => "registers",
            DocKind::Catalog => "catalogs",
            DocKind::Session => "sessions",
            DocKind::Snapshot => "snapshots",
            DocKind::Estimates => "estimates",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub version: u64,
    pub document: T,
}

#[derive(Debug)]
struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    lock: Option<LockGuard>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.len() <= 128
        && key.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !key.starts_with('.')
}

impl Store {
    /// Opens (creating if needed) a store for shared use.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let root = root.into();
        for kind in DocKind::ALL {
            let dir = root.join(kind.dir());
            fs::create_dir_all(&dir).map_err(|source| RegistryError::StoreUnwritable { path: dir.clone(), source })?;
        }
        let probe = root.join(".write-probe");
        fs::write(&probe, b"ok").map_err(|source| RegistryError::StoreUnwritable { path: root.clone(), source })?;
        let _ = fs::remove_file(&probe);
        Ok(Self { root, lock: None })
    }

    /// Opens the store and takes its lock; fails if another handle holds it.
    pub fn open_exclusive(root: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let mut store = Self::open(root)?;
        let path = store.root.join("store.lock");
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(RegistryError::StoreLocked(store.root.clone()))
            }
            Err(source) => return Err(RegistryError::StoreUnwritable { path, source }),
        };
        writeln!(file, "{}", std::process::id()).map_err(io_err(&path))?;
        store.lock = Some(LockGuard { path });
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: DocKind, key: &str) -> Result<PathBuf, RegistryError> {
        if !valid_key(key) {
            return Err(RegistryError::Invalid {
                document: "store",
                field: "key".into(),
                message: format!("invalid key `{key}`"),
            });
        }
        Ok(self.root.join(kind.dir()).join(format!("{key}.json")))
    }

    fn label(kind: DocKind, key: &str) -> String {
        format!("{}/{key}", kind.dir())
    }

    pub fn version(&self, kind: DocKind, key: &str) -> Result<u64, RegistryError> {
        let path = self.path(kind, key)?;
        if !path.exists() {
            return Ok(0);
        }
        #[derive(Deserialize)]
        struct Header {
            version: u64,
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let h: Header = serde_json::from_str(&text).map_err(|e| RegistryError::Invalid {
            document: "store",
            field: Self::label(kind, key),
            message: e.to_string(),
        })?;
        Ok(h.version)
    }

    pub fn get<T: DeserializeOwned>(&self, kind: DocKind, key: &str) -> Result<Versioned<T>, RegistryError> {
        let path = self.path(kind, key)?;
        if !path.exists() {
            return Err(RegistryError::NotFound(Self::label(kind, key)));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| RegistryError::Invalid {
            document: "store",
            field: Self::label(kind, key),
            message: e.to_string(),
        })
    }

    /// Loads and re-validates a typed document.
    pub fn get_document<T: Document>(&self, kind: DocKind, key: &str) -> Result<Versioned<T>, RegistryError> {
        let v: Versioned<serde_json::Value> = self.get(kind, key)?;
        let doc = T::from_json(&v.document.to_string())?;
        Ok(Versioned { version: v.version, document: doc })
    }

    /// Writes a document. With `expected` set, the write only succeeds if the
    /// stored version still matches (0 = must not exist yet).
    pub fn put<T: Serialize>(
        &self,
        kind: DocKind,
        key: &str,
        document: &T,
        expected: Option<u64>,
    ) -> Result<u64, RegistryError> {
        let path = self.path(kind, key)?;
        let current = self.version(kind, key)?;
        if let Some(expected) = expected {
            if expected != current {
                return Err(RegistryError::VersionConflict { key: Self::label(kind, key), expected, found: current });
            }
        }
        let version = current + 1;
        let body = serde_json::to_string_pretty(&Versioned { version, document }).map_err(|e| {
            RegistryError::Invalid { document: "store", field: Self::label(kind, key), message: e.to_string() }
        })?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(version)
    }

    pub fn delete(&self, kind: DocKind, key: &str, expected: Option<u64>) -> Result<(), RegistryError> {
        if kind == DocKind::Snapshot {
            return Err(RegistryError::SnapshotImmutable(key.to_string()));
        }
        let path = self.path(kind, key)?;
        let current = self.version(kind, key)?;
        if current == 0 {
            return Err(RegistryError::NotFound(Self::label(kind, key)));
        }
        if let Some(expected) = expected {
            if expected != current {
                return Err(RegistryError::VersionConflict { key: Self::label(kind, key), expected, found: current });
            }
        }
        fs::remove_file(&path).map_err(io_err(&path))
    }

    pub fn list(&self, kind: DocKind) -> Result<Vec<String>, RegistryError> {
        let dir = self.root.join(kind.dir());
        let mut keys = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name().to_string_lossy().to_string();
            if let Some(key) = name.strip_suffix(".json") {
                keys.push(key.to_string());
            }
        }
        keys.sort();
        Ok(keys)
    }

    /// Stores a snapshot under its id. Existing snapshots are never replaced.
    pub fn record_snapshot(&self, snapshot: &AssessmentSnapshot) -> Result<String, RegistryError> {
        snapshot.verify()?;
        if self.version(DocKind::Snapshot, &snapshot.id)? != 0 {
            return Err(RegistryError::SnapshotImmutable(snapshot.id.clone()));
        }
        self.put(DocKind::Snapshot, &snapshot.id, snapshot, Some(0))?;
        Ok(snapshot.id.clone())
    }

    pub fn snapshot(&self, id: &str) -> Result<AssessmentSnapshot, RegistryError> {
        Ok(self.get_document::<AssessmentSnapshot>(DocKind::Snapshot, id)?.document)
    }
}
