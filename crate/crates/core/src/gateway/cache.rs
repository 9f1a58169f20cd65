use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use super::{GatewayError, ModelResponse};

enum Store {
    Disabled,
    Memory(Mutex<HashMap<String, ModelResponse>>),
    Disk(PathBuf),
}

/// Content-addressed response cache.
///
/// Concurrent lookups of the same key are serialized so identical requests
/// in flight reach the provider once.
pub struct ResponseCache {
    store: Store,
    in_flight: Mutex<HashSet<String>>,
    released: Condvar,
}

pub(super) struct KeyGuard<'a> {
    cache: &'a ResponseCache,
    key: String,
}

impl Drop for KeyGuard<'_> {
    fn drop(&mut self) {
        self.cache.in_flight.lock().unwrap().remove(&self.key);
        self.cache.released.notify_all();
    }
}

impl ResponseCache {
    fn with_store(store: Store) -> Self {
        ResponseCache {
            store,
            in_flight: Mutex::new(HashSet::new()),
            released: Condvar::new(),
        }
    }

    pub fn disabled() -> Self {
        Self::with_store(Store::Disabled)
    }

    pub fn memory() -> Self {
        Self::with_store(Store::Memory(Mutex::new(HashMap::new())))
    }

    /// On-disk cache under `dir`, one JSON file per key.
    pub fn disk(dir: impl AsRef<Path>) -> Self {
        Self::with_store(Store::Disk(dir.as_ref().to_path_buf()))
    }

    pub(super) fn lock_key(&self, key: &str) -> KeyGuard<'_> {
        let mut set = self.in_flight.lock().unwrap();
        while set.contains(key) {
            set = self.released.wait(set).unwrap();
        }
        set.insert(key.to_string());
        KeyGuard {
            cache: self,
            key: key.to_string(),
        }
    }

    fn path_for(dir: &Path, key: &str) -> PathBuf {
        dir.join(&key[..2.min(key.len())]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<ModelResponse>, GatewayError> {
        match &self.store {
            Store::Disabled => Ok(None),
            Store::Memory(map) => Ok(map.lock().unwrap().get(key).cloned()),
            Store::Disk(dir) => {
                let path = Self::path_for(dir, key);
                match std::fs::read_to_string(&path) {
                    Ok(text) => serde_json::from_str(&text)
                        .map(Some)
                        .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display()))),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                    Err(e) => Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
                }
            }
        }
    }

    pub fn put(&self, key: &str, response: &ModelResponse) -> Result<(), GatewayError> {
        match &self.store {
            Store::Disabled => Ok(()),
            Store::Memory(map) => {
                map.lock().unwrap().insert(key.to_string(), response.clone());
                Ok(())
            }
            Store::Disk(dir) => {
                let path = Self::path_for(dir, key);
                let bytes = serde_json::to_vec(response).expect("serializable response");
                crate::jsonl::write_atomic(&path, &bytes).map_err(|e| GatewayError::Cache(e.to_string()))
            }
        }
    }
}
