use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde_json::Value as Json;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store I/O at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt document {collection}/{key}: {reason}")]
    Corrupt {
        collection: String,
        key: String,
        reason: String,
    },
}

/// Keyed JSON documents grouped in collections. Each `put` must be atomic:
/// a reader sees either the old or the new document, never a mix.
pub trait DocumentStore: Send + Sync {
    fn get(&self, collection: &str, key: &str) -> Result<Option<Json>, StoreError>;
    fn put(&self, collection: &str, key: &str, doc: &Json) -> Result<(), StoreError>;
    /// Writes only if the key is absent. Returns whether it wrote.
    fn put_if_absent(&self, collection: &str, key: &str, doc: &Json) -> Result<bool, StoreError>;
    /// Documents whose key starts with `prefix`, sorted by key.
    fn list(&self, collection: &str, prefix: &str) -> Result<Vec<(String, Json)>, StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    data: RwLock<BTreeMap<String, BTreeMap<String, Json>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl DocumentStore for MemoryStore {
    fn get(&self, collection: &str, key: &str) -> Result<Option<Json>, StoreError> {
        Ok(self.data.read().get(collection).and_then(|c| c.get(key)).cloned())
    }

    fn put(&self, collection: &str, key: &str, doc: &Json) -> Result<(), StoreError> {
        self.data
            .write()
            .entry(collection.to_string())
            .or_default()
            .insert(key.to_string(), doc.clone());
        Ok(())
    }

    fn put_if_absent(&self, collection: &str, key: &str, doc: &Json) -> Result<bool, StoreError> {
        let mut data = self.data.write();
        let c = data.entry(collection.to_string()).or_default();
        if c.contains_key(key) {
            return Ok(false);
        }
        c.insert(key.to_string(), doc.clone());
        Ok(true)
    }

    fn list(&self, collection: &str, prefix: &str) -> Result<Vec<(String, Json)>, StoreError> {
        Ok(self
            .data
            .read()
            .get(collection)
            .map(|c| {
                c.range(prefix.to_string()..)
                    .take_while(|(k, _)| k.starts_with(prefix))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect()
            })
            .unwrap_or_default())
    }
}

/// One JSON file per document under `root/<collection>/`. Writes go to a
/// temporary file that is renamed into place.
#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    create_lock: Mutex<()>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|source| StoreError::Io {
            path: root.display().to_string(),
            source,
        })?;
        Ok(Self {
            root,
            create_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, collection: &str) -> PathBuf {
        self.root.join(escape(collection))
    }

    fn path(&self, collection: &str, key: &str) -> PathBuf {
        self.dir(collection).join(format!("{}.json", escape(key)))
    }

    fn read(&self, path: &Path, collection: &str, key: &str) -> Result<Option<Json>, StoreError> {
        match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| StoreError::Corrupt {
                collection: collection.to_string(),
                key: key.to_string(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(StoreError::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    }
}

impl DocumentStore for FileStore {
    fn get(&self, collection: &str, key: &str) -> Result<Option<Json>, StoreError> {
        self.read(&self.path(collection, key), collection, key)
    }

    fn put(&self, collection: &str, key: &str, doc: &Json) -> Result<(), StoreError> {
        let dir = self.dir(collection);
        let io = |source, path: &Path| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(&dir).map_err(|e| io(e, &dir))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io(e, &dir))?;
        let bytes = serde_json::to_vec(doc).expect("json values serialize");
        tmp.write_all(&bytes).map_err(|e| io(e, tmp.path()))?;
        tmp.as_file().sync_all().map_err(|e| io(e, tmp.path()))?;
        let target = self.path(collection, key);
        tmp.persist(&target).map_err(|e| io(e.error, &target))?;
        Ok(())
    }

    fn put_if_absent(&self, collection: &str, key: &str, doc: &Json) -> Result<bool, StoreError> {
        let _guard = self.create_lock.lock();
        if self.path(collection, key).exists() {
            return Ok(false);
        }
        self.put(collection, key, doc)?;
        Ok(true)
    }

    fn list(&self, collection: &str, prefix: &str) -> Result<Vec<(String, Json)>, StoreError> {
        let dir = self.dir(collection);
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => {
                return Err(StoreError::Io {
                    path: dir.display().to_string(),
                    source,
                })
            }
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| StoreError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(stem) = name.strip_suffix(".json") else {
                continue;
            };
            let Some(key) = unescape(stem) else { continue };
            if !key.starts_with(prefix) {
                continue;
            }
            if let Some(doc) = self.read(&entry.path(), collection, &key)? {
                out.push((key, doc));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}

/// Percent-encodes everything outside `[A-Za-z0-9_.-]`, so keys map to
/// portable file names. Leading dots are encoded to avoid hidden files.
fn escape(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    for (i, b) in key.bytes().enumerate() {
        let plain = b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || (b == b'.' && i > 0);
        if plain {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn unescape(name: &str) -> Option<String> {
    let bytes = name.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = name.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn exercise(store: &dyn DocumentStore) {
        assert_eq!(store.get("c", "a").unwrap(), None);
        store.put("c", "st/b", &json!({"v": 2})).unwrap();
        store.put("c", "st/a", &json!({"v": 1})).unwrap();
        store.put("c", "other", &json!({"v": 3})).unwrap();
        store.put("c", "st/a", &json!({"v": 4})).unwrap();
        assert_eq!(store.get("c", "st/a").unwrap(), Some(json!({"v": 4})));
        let listed = store.list("c", "st/").unwrap();
        assert_eq!(
            listed,
            vec![("st/a".to_string(), json!({"v": 4})), ("st/b".to_string(), json!({"v": 2}))]
        );
        assert!(store.put_if_absent("u", "k", &json!(1)).unwrap());
        assert!(!store.put_if_absent("u", "k", &json!(2)).unwrap());
        assert_eq!(store.get("u", "k").unwrap(), Some(json!(1)));
    }

    #[test]
    fn memory_store() {
        exercise(&MemoryStore::new());
    }

    #[test]
    fn file_store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        exercise(&FileStore::open(dir.path()).unwrap());
        let again = FileStore::open(dir.path()).unwrap();
        assert_eq!(again.get("c", "st/b").unwrap(), Some(json!({"v": 2})));
    }

    #[test]
    fn escaping_round_trips() {
        for k in ["plain", "a/b", "..", ".hidden", "ümlaut %", ""] {
            let e = escape(k);
            assert!(!e.starts_with('.'));
            assert!(!e.contains('/'));
            assert_eq!(unescape(&e).as_deref(), Some(k));
        }
    }
}
