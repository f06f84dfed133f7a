//! Content-addressed response store: `<root>/<key[..2]>/<key>.json`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A stored generator response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
    /// Examples actually sent (differs from the request after truncation).
    pub pairs_used: usize,
}

/// Cache key for a profile and a bundle content hash.
pub fn cache_key(profile_name: &str, bundle_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update((profile_name.len() as u64).to_le_bytes());
    h.update(profile_name.as_bytes());
    h.update(bundle_hash.as_bytes());
    hex::encode(h.finalize())
}

const STRIPES: usize = 64;

pub struct ResponseCache {
    root: PathBuf,
    locks: Vec<Mutex<()>>,
}

impl std::fmt::Debug for ResponseCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResponseCache").field("root", &self.root).finish()
    }
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            locks: (0..STRIPES).map(|_| Mutex::new(())).collect(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2.min(key.len())]).join(format!("{key}.json"))
    }

    fn lock(&self, key: &str) -> MutexGuard<'_, ()> {
        let stripe = key.bytes().fold(0usize, |a, b| a.wrapping_mul(31).wrapping_add(b as usize));
        self.locks[stripe % STRIPES]
            .lock()
            .unwrap_or_else(|e| e.into_inner())
    }

    /// Unreadable or corrupt entries count as misses.
    pub fn get(&self, key: &str) -> Option<CachedResponse> {
        let _guard = self.lock(key);
        let bytes = fs::read(self.path(key)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Writes through a temporary file and renames it into place.
    pub fn put(&self, key: &str, value: &CachedResponse) -> io::Result<()> {
        let _guard = self.lock(key);
        let path = self.path(key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer(&mut tmp, value)?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|d| fs::read_dir(d.path()).ok())
            .map(|entries| entries.flatten().count())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = cache_key("p", "abc");
        assert!(cache.get(&key).is_none());
        let v = CachedResponse {
            text: Some("a dog".into()),
            image_b64: None,
            pairs_used: 1,
        };
        cache.put(&key, &v).unwrap();
        assert_eq!(cache.get(&key), Some(v));
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn key_separates_profile_and_hash() {
        assert_ne!(cache_key("ab", "c"), cache_key("a", "bc"));
        assert_ne!(cache_key("p", "h1"), cache_key("p", "h2"));
        assert_eq!(cache_key("p", "h1"), cache_key("p", "h1"));
    }

    #[test]
    fn corrupt_entry_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = cache_key("p", "x");
        let path = cache.path(&key);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, b"{not json").unwrap();
        assert!(cache.get(&key).is_none());
    }
}
