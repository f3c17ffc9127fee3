use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendIdentity, DecodeParams, ImageRef};
use crate::error::{Error, Result};

/// Content address of one backend request.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub backend_id: String,
    pub model_id: String,
    /// Hex SHA-256 over the canonical request encoding.
    pub digest: String,
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    backend: &'a str,
    model: &'a str,
    kind: &'a str,
    prompt: &'a str,
    image: Option<&'a str>,
    temperature: f64,
    max_tokens: u32,
    seed: Option<u64>,
}

impl CacheKey {
    pub fn new(
        who: &BackendIdentity,
        kind: &str,
        prompt: &str,
        image: Option<&ImageRef>,
        decode: &DecodeParams,
    ) -> Self {
        let canonical = CanonicalRequest {
            backend: &who.backend_id,
            model: &who.model_id,
            kind,
            prompt,
            image: image.map(ImageRef::as_str),
            temperature: decode.temperature,
            max_tokens: decode.max_tokens,
            seed: decode.seed,
        };
        let bytes = serde_json::to_vec(&canonical).expect("request encodes");
        CacheKey {
            backend_id: who.backend_id.clone(),
            model_id: who.model_id.clone(),
            digest: hex::encode(Sha256::digest(&bytes)),
        }
    }
}

/// Header line stored in front of each cached response on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub backend: String,
    pub model: String,
    pub created_unix_ms: u64,
}

/// Response cache keyed by [`CacheKey`]; optionally persisted as one file
/// per digest (`<dir>/<digest>.resp`: a JSON header line, then the raw
/// response bytes).
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, String>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            dir: None,
            memory: RwLock::new(HashMap::new()),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache {
            dir: Some(dir),
            memory: RwLock::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn file_for(&self, key: &CacheKey) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.resp", key.digest)))
    }

    pub fn get(&self, key: &CacheKey) -> Option<String> {
        if let Some(v) = self.memory.read().expect("cache lock").get(&key.digest) {
            return Some(v.clone());
        }
        let path = self.file_for(key)?;
        let bytes = fs::read(&path).ok()?;
        let split = bytes.iter().position(|&b| b == b'\n')?;
        serde_json::from_slice::<CachedResponse>(&bytes[..split]).ok()?;
        let value = String::from_utf8(bytes[split + 1..].to_vec()).ok()?;
        self.memory
            .write()
            .expect("cache lock")
            .insert(key.digest.clone(), value.clone());
        Some(value)
    }

    /// Last write wins; identical keys carry identical values for
    /// deterministic backends.
    pub fn put(&self, key: &CacheKey, who: &BackendIdentity, value: &str) -> Result<()> {
        self.memory
            .write()
            .expect("cache lock")
            .insert(key.digest.clone(), value.to_string());
        let Some(path) = self.file_for(key) else {
            return Ok(());
        };
        let header = CachedResponse {
            backend: who.backend_id.clone(),
            model: who.model_id.clone(),
            created_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        let mut bytes = serde_json::to_vec(&header).expect("header encodes");
        bytes.push(b'\n');
        bytes.extend_from_slice(value.as_bytes());
        // write-then-rename so concurrent readers never see a partial file
        let tmp = path.with_extension(format!(
            "tmp.{}.{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| Error::io(&path, e))
    }

    pub fn len(&self) -> usize {
        self.memory.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(prompt: &str, seed: Option<u64>) -> CacheKey {
        let who = BackendIdentity::new("b", "m");
        let mut d = DecodeParams::evaluation();
        d.seed = seed;
        CacheKey::new(&who, "classify", prompt, Some(&ImageRef::new("sim://u/1")), &d)
    }

    #[test]
    fn digests_are_stable_and_distinct() {
        assert_eq!(key("p", None), key("p", None));
        assert_ne!(key("p", None).digest, key("q", None).digest);
        assert_ne!(key("p", None).digest, key("p", Some(1)).digest);
        assert_eq!(key("p", None).digest.len(), 64);
        let other_model = CacheKey::new(
            &BackendIdentity::new("b", "m2"),
            "classify",
            "p",
            Some(&ImageRef::new("sim://u/1")),
            &DecodeParams::evaluation(),
        );
        assert_ne!(other_model.digest, key("p", None).digest);
    }

    #[test]
    fn disk_cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let who = BackendIdentity::new("b", "m");
        let k = key("prompt", None);
        {
            let cache = ResponseCache::on_disk(dir.path()).unwrap();
            assert!(cache.get(&k).is_none());
            cache.put(&k, &who, "awe\nwith newline").unwrap();
            assert_eq!(cache.get(&k).as_deref(), Some("awe\nwith newline"));
        }
        let reopened = ResponseCache::on_disk(dir.path()).unwrap();
        assert_eq!(reopened.get(&k).as_deref(), Some("awe\nwith newline"));
        let raw = fs::read_to_string(dir.path().join(format!("{}.resp", k.digest))).unwrap();
        let header: CachedResponse = serde_json::from_str(raw.lines().next().unwrap()).unwrap();
        assert_eq!(header.backend, "b");
    }

    proptest::proptest! {
        #[test]
        fn put_then_get(prompt in ".{1,30}", value in ".{0,60}") {
            let cache = ResponseCache::in_memory();
            let k = key(&prompt, None);
            cache.put(&k, &BackendIdentity::new("b", "m"), &value).unwrap();
            proptest::prop_assert_eq!(cache.get(&k), Some(value));
        }
    }
}
