//! Content-addressed response cache.
//!
//! Entries live at `<root>/<first-2-hex>/<hash>.json`. Writes go through a
//! temp file and a rename, so concurrent writers of one key leave exactly
//! one complete entry (last write wins).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::digest::{hex_digest, write_atomic};

#[derive(Debug)]
enum Store {
    Disabled,
    Memory(RwLock<HashMap<String, Vec<u8>>>),
    Disk(PathBuf),
}

#[derive(Debug)]
pub struct Cache {
    store: Store,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Cache {
    pub fn disabled() -> Self {
        Self::with_store(Store::Disabled)
    }

    pub fn memory() -> Self {
        Self::with_store(Store::Memory(RwLock::new(HashMap::new())))
    }

    pub fn disk(root: impl Into<PathBuf>) -> Self {
        Self::with_store(Store::Disk(root.into()))
    }

    fn with_store(store: Store) -> Self {
        Self {
            store,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn is_enabled(&self) -> bool {
        !matches!(self.store, Store::Disabled)
    }

    /// Key for a namespaced sequence of byte strings.
    pub fn key<I, P>(namespace: &str, parts: I) -> String
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[u8]>,
    {
        let parts: Vec<Vec<u8>> = parts.into_iter().map(|p| p.as_ref().to_vec()).collect();
        hex_digest(std::iter::once(namespace.as_bytes().to_vec()).chain(parts))
    }

    pub fn path_for(root: &Path, key: &str) -> PathBuf {
        root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let bytes = match &self.store {
            Store::Disabled => return None,
            Store::Memory(map) => map.read().expect("cache lock poisoned").get(key).cloned(),
            Store::Disk(root) => std::fs::read(Self::path_for(root, key)).ok(),
        };
        let value = bytes.and_then(|b| match serde_json::from_slice(&b) {
            Ok(v) => Some(v),
            Err(err) => {
                tracing::warn!(key, %err, "ignoring unreadable cache entry");
                None
            }
        });
        if value.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.misses.fetch_add(1, Ordering::Relaxed);
        }
        value
    }

    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> std::io::Result<()> {
        let bytes = serde_json::to_vec(value).map_err(std::io::Error::other)?;
        match &self.store {
            Store::Disabled => Ok(()),
            Store::Memory(map) => {
                map.write().expect("cache lock poisoned").insert(key.to_string(), bytes);
                Ok(())
            }
            Store::Disk(root) => write_atomic(&Self::path_for(root, key), &bytes),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_layout_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::disk(dir.path());
        let key = Cache::key("t", ["a", "b"]);
        assert_eq!(cache.get::<u32>(&key), None);
        cache.put(&key, &42u32).unwrap();
        assert_eq!(cache.get::<u32>(&key), Some(42));
        let path = dir.path().join(&key[..2]).join(format!("{key}.json"));
        assert!(path.exists());
        assert_eq!((cache.hits(), cache.misses()), (1, 1));
    }

    #[test]
    fn disabled_never_hits() {
        let cache = Cache::disabled();
        cache.put("abcd", &1u8).unwrap();
        assert_eq!(cache.get::<u8>("abcd"), None);
    }

    #[test]
    fn corrupt_entry_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::disk(dir.path());
        let key = Cache::key("t", ["x"]);
        let path = Cache::path_for(dir.path(), &key);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, b"{not json").unwrap();
        assert_eq!(cache.get::<u8>(&key), None);
    }

    #[test]
    fn concurrent_writers_same_key() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::disk(dir.path());
        let key = Cache::key("t", ["same"]);
        std::thread::scope(|s| {
            for i in 0..8u32 {
                let cache = &cache;
                let key = &key;
                s.spawn(move || cache.put(key, &i).unwrap());
            }
        });
        assert!(cache.get::<u32>(&key).is_some_and(|v| v < 8));
    }
}
