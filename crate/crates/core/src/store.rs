//! Content-addressed object store.
//!
//! Layout under the store root:
//!
//! ```text
//! objects/<first-2-hex>/<digest>   raw bytes (videos, frames, audio, documents)
//! meta/<kind>/<id>.json            sidecar records
//! tmp/                             staging area for atomic writes
//! ```
//!
//! Every write goes to `tmp/` first and is renamed into place, so readers never
//! observe a partial object and concurrent writers of identical content
//! converge on one file.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::digest::ContentId;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage full")]
    StorageFull,
    #[error("object {0} not found")]
    Missing(String),
    #[error("object {id} is corrupt (digest mismatch)")]
    Corrupt { id: String },
    #[error("sidecar {path}: {source}")]
    Sidecar {
        path: String,
        source: serde_json::Error,
    },
    #[error("i/o: {0}")]
    Io(io::Error),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::StorageFull {
            StoreError::StorageFull
        } else {
            StoreError::Io(e)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContentStore {
    root: PathBuf,
}

impl ContentStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("objects"))?;
        fs::create_dir_all(root.join("meta"))?;
        fs::create_dir_all(root.join("tmp"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn object_path(&self, id: &ContentId) -> PathBuf {
        self.root.join("objects").join(id.shard()).join(id.as_str())
    }

    pub fn contains(&self, id: &ContentId) -> bool {
        self.object_path(id).is_file()
    }

    /// Stores `bytes` and returns their digest. Storing existing content is a no-op.
    pub fn put(&self, bytes: &[u8]) -> Result<ContentId, StoreError> {
        let id = ContentId::of(bytes);
        let dest = self.object_path(&id);
        if dest.is_file() {
            return Ok(id);
        }
        fs::create_dir_all(dest.parent().expect("object path has a parent"))?;
        self.write_atomic(&dest, bytes)?;
        Ok(id)
    }

    pub fn get(&self, id: &ContentId) -> Result<Vec<u8>, StoreError> {
        match fs::read(self.object_path(id)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                Err(StoreError::Missing(id.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Reads an object and re-checks its digest.
    pub fn get_verified(&self, id: &ContentId) -> Result<Vec<u8>, StoreError> {
        let bytes = self.get(id)?;
        if ContentId::of(&bytes) != *id {
            return Err(StoreError::Corrupt { id: id.to_string() });
        }
        Ok(bytes)
    }

    /// All object paths currently in the store.
    pub fn object_paths(&self) -> Result<Vec<PathBuf>, StoreError> {
        let mut out = Vec::new();
        for shard in fs::read_dir(self.root.join("objects"))? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for obj in fs::read_dir(shard.path())? {
                out.push(obj?.path());
            }
        }
        out.sort();
        Ok(out)
    }

    fn meta_path(&self, kind: &str, id: &str) -> PathBuf {
        self.root.join("meta").join(kind).join(format!("{id}.json"))
    }

    pub fn put_meta<T: Serialize>(&self, kind: &str, id: &str, value: &T) -> Result<(), StoreError> {
        let path = self.meta_path(kind, id);
        fs::create_dir_all(path.parent().expect("meta path has a parent"))?;
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| StoreError::Sidecar {
            path: path.display().to_string(),
            source,
        })?;
        bytes.push(b'\n');
        self.write_atomic(&path, &bytes)
    }

    pub fn get_meta<T: DeserializeOwned>(&self, kind: &str, id: &str) -> Result<Option<T>, StoreError> {
        let path = self.meta_path(kind, id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|source| StoreError::Sidecar {
                path: path.display().to_string(),
                source,
            })
    }

    /// Ids of all sidecars of one kind, sorted.
    pub fn list_meta(&self, kind: &str) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("meta").join(kind);
        let mut ids = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(ids),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json") {
                ids.push(id.to_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// A scratch directory under `tmp/`, removed on drop.
    pub fn scratch_dir(&self) -> Result<tempfile::TempDir, StoreError> {
        Ok(tempfile::Builder::new()
            .prefix("work-")
            .tempdir_in(self.root.join("tmp"))?)
    }

    fn write_atomic(&self, dest: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let mut tmp = tempfile::NamedTempFile::new_in(self.root.join("tmp"))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_data()?;
        tmp.persist(dest).map_err(|e| StoreError::from(e.error))?;
        Ok(())
    }
}
