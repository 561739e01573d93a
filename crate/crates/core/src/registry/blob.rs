//! Content-addressed blob storage.
//!
//! Blobs live at `<root>/aa/bb/<digest>` where `aa` and `bb` are the first
//! two byte pairs of the lowercase SHA-256 hex digest. Writes go to a
//! temporary file first and are renamed into place.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const EMPTY_DIGEST: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn validate_digest(digest: &str) -> Result<()> {
    let ok = digest.len() == 64 && digest.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("malformed digest {digest:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactBlob {
    pub digest: String,
    pub size_bytes: u64,
    pub media_type: String,
}

#[derive(Debug)]
enum Backend {
    Dir(PathBuf),
    Memory(RwLock<HashMap<String, Vec<u8>>>),
}

#[derive(Debug)]
pub struct BlobStore {
    backend: Backend,
}

impl BlobStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self {
            backend: Backend::Dir(root),
        })
    }

    pub fn in_memory() -> Self {
        Self {
            backend: Backend::Memory(RwLock::new(HashMap::new())),
        }
    }

    /// Location of a blob on disk (directory backend only).
    pub fn path_of(&self, digest: &str) -> Option<PathBuf> {
        match &self.backend {
            Backend::Dir(root) => Some(fanout(root, digest)),
            Backend::Memory(_) => None,
        }
    }

    /// Stores `bytes` and returns their digest. Storing the same content
    /// twice is a no-op.
    pub fn put(&self, bytes: &[u8]) -> Result<String> {
        let digest = sha256_hex(bytes);
        match &self.backend {
            Backend::Dir(root) => {
                let path = fanout(root, &digest);
                if path.exists() {
                    return Ok(digest);
                }
                let dir = path.parent().expect("fan-out path has a parent");
                std::fs::create_dir_all(dir)?;
                let mut tmp = tempfile_in(dir)?;
                tmp.1.write_all(bytes)?;
                tmp.1.sync_all()?;
                drop(tmp.1);
                std::fs::rename(&tmp.0, &path)?;
            }
            Backend::Memory(map) => {
                map.write().entry(digest.clone()).or_insert_with(|| bytes.to_vec());
            }
        }
        Ok(digest)
    }

    /// Reads a blob and verifies that its content still hashes to `digest`.
    pub fn get(&self, digest: &str) -> Result<Vec<u8>> {
        validate_digest(digest)?;
        let bytes = match &self.backend {
            Backend::Dir(root) => match std::fs::read(fanout(root, digest)) {
                Ok(b) => b,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    return Err(Error::not_found(format!("blob {digest}")))
                }
                Err(e) => return Err(e.into()),
            },
            Backend::Memory(map) => map
                .read()
                .get(digest)
                .cloned()
                .ok_or_else(|| Error::not_found(format!("blob {digest}")))?,
        };
        let actual = sha256_hex(&bytes);
        if actual != digest {
            return Err(Error::Integrity(format!(
                "blob {digest} hashes to {actual}"
            )));
        }
        Ok(bytes)
    }

    pub fn contains(&self, digest: &str) -> bool {
        if validate_digest(digest).is_err() {
            return false;
        }
        match &self.backend {
            Backend::Dir(root) => fanout(root, digest).exists(),
            Backend::Memory(map) => map.read().contains_key(digest),
        }
    }
}

fn fanout(root: &Path, digest: &str) -> PathBuf {
    root.join(&digest[0..2]).join(&digest[2..4]).join(digest)
}

fn tempfile_in(dir: &Path) -> Result<(PathBuf, std::fs::File)> {
    for attempt in 0..16u32 {
        let name = format!(".tmp-{}-{attempt}", uuid::Uuid::new_v4().simple());
        let path = dir.join(name);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(Error::Storage("could not create temporary blob file".into()))
}
