use std::path::{Path, PathBuf};

use serde_json::json;

use super::{Session, StoreError};
use crate::fsutil::write_atomic;
use crate::imaging::Digest;
use crate::ml::{export_model, import_model, TrainedModel};

/// Result of looking up a cache entry.
#[derive(Debug)]
pub enum CacheLookup {
    Hit(Session),
    Miss,
    Corrupt(String),
}

/// On-disk cache: `<root>/<hash>/session.json` plus `models/<name>.opml`.
#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Cache {
        Cache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_dir(&self, hash: &Digest) -> PathBuf {
        self.root.join(hash.to_string())
    }

    pub fn session_path(&self, hash: &Digest) -> PathBuf {
        self.entry_dir(hash).join("session.json")
    }

    pub fn model_path(&self, hash: &Digest, name: &str) -> PathBuf {
        self.entry_dir(hash).join("models").join(format!("{name}.opml"))
    }

    /// Writes the session and its models. Each file is replaced atomically.
    pub fn save(&self, session: &Session) -> Result<PathBuf, StoreError> {
        let hash = &session.image_hash;
        for (name, model) in &session.models {
            write_atomic(&self.model_path(hash, name), &export_model(model))?;
        }
        let models_dir = self.entry_dir(hash).join("models");
        if let Ok(entries) = std::fs::read_dir(&models_dir) {
            for e in entries.flatten() {
                let p = e.path();
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                if p.extension().is_some_and(|x| x == "opml") && !session.models.contains_key(&stem) {
                    std::fs::remove_file(&p)?;
                }
            }
        }
        let body = serde_json::to_value(session).map_err(|e| StoreError::Json(e.to_string()))?;
        let crc = crc32fast::hash(&serde_json::to_vec(&body).expect("value serializes"));
        let doc = json!({"crc32": crc, "session": body});
        let path = self.session_path(hash);
        write_atomic(&path, &serde_json::to_vec_pretty(&doc).expect("value serializes"))?;
        Ok(path)
    }

    /// Loads an entry, distinguishing a miss from a corrupt entry.
    pub fn lookup(&self, hash: &Digest) -> CacheLookup {
        let path = self.session_path(hash);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return CacheLookup::Miss,
            Err(e) => return CacheLookup::Corrupt(e.to_string()),
        };
        let doc: serde_json::Value = match serde_json::from_slice(&bytes) {
            Ok(v) => v,
            Err(e) => return CacheLookup::Corrupt(format!("{}: {e}", path.display())),
        };
        let (Some(crc), Some(body)) = (doc.get("crc32").and_then(|v| v.as_u64()), doc.get("session")) else {
            return CacheLookup::Corrupt(format!("{}: missing crc32 or session", path.display()));
        };
        if crc32fast::hash(&serde_json::to_vec(body).expect("value serializes")) as u64 != crc {
            return CacheLookup::Corrupt(format!("{}: checksum mismatch", path.display()));
        }
        let mut session: Session = match serde_json::from_value(body.clone()) {
            Ok(s) => s,
            Err(e) => return CacheLookup::Corrupt(format!("{}: {e}", path.display())),
        };
        if session.image_hash != *hash {
            return CacheLookup::Corrupt(format!("{}: entry belongs to {}", path.display(), session.image_hash));
        }
        if let Ok(entries) = std::fs::read_dir(self.entry_dir(hash).join("models")) {
            let mut paths: Vec<PathBuf> = entries.flatten().map(|e| e.path()).collect();
            paths.sort();
            for p in paths.into_iter().filter(|p| p.extension().is_some_and(|x| x == "opml")) {
                let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                match std::fs::read(&p).map_err(|e| e.to_string()).and_then(|b| import_model(&b).map_err(|e| e.to_string())) {
                    Ok(m) => {
                        session.models.insert(name, m);
                    }
                    Err(e) => log::warn!("skipping cached model {}: {e}", p.display()),
                }
            }
        }
        CacheLookup::Hit(session)
    }

    /// Loads an entry; a corrupt entry is logged and reported as absent.
    pub fn load(&self, hash: &Digest) -> Option<Session> {
        match self.lookup(hash) {
            CacheLookup::Hit(s) => Some(s),
            CacheLookup::Miss => None,
            CacheLookup::Corrupt(why) => {
                log::warn!("ignoring corrupt cache entry: {why}");
                None
            }
        }
    }

    pub fn save_model(&self, hash: &Digest, name: &str, model: &TrainedModel) -> Result<PathBuf, StoreError> {
        let path = self.model_path(hash, name);
        write_atomic(&path, &export_model(model))?;
        Ok(path)
    }
}
