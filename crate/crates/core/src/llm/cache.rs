use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelResponse};
use crate::digest::{digest_json, sha256_hex, FramedHasher};
use crate::error::{Error, Result};
use crate::jsonl::write_atomic;

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model_id: &'a str,
    params: &'a ModelParams,
    prompt: &'a str,
}

/// Digest of (model id, sampling params, prompt text).
pub fn cache_key(model_id: &str, params: &ModelParams, prompt_text: &str) -> Result<String> {
    digest_json(&KeyMaterial {
        model_id,
        params,
        prompt: prompt_text,
    })
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    response: ModelResponse,
}

/// On-disk response cache, one JSON file per key.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("create cache {}", dir.display()), e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// A corrupt or mismatched entry is deleted and reported as a miss.
    pub fn get(&self, key: &str) -> Option<ModelResponse> {
        let path = self.path(key);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(entry) if entry.key == key => Some(entry.response),
            Ok(_) | Err(_) => {
                warn!("discarding corrupt cache entry {}", path.display());
                let _ = fs::remove_file(&path);
                None
            }
        }
    }

    pub fn put(&self, key: &str, response: &ModelResponse) -> Result<()> {
        let entry = Entry {
            key: key.to_string(),
            response: response.clone(),
        };
        write_atomic(&self.path(key), &serde_json::to_vec(&entry)?)
    }

    pub fn clear(&self) -> Result<()> {
        for entry in self.entries()? {
            fs::remove_file(&entry).map_err(|e| Error::io(format!("remove {}", entry.display()), e))?;
        }
        Ok(())
    }

    fn entries(&self) -> Result<Vec<PathBuf>> {
        let mut out: Vec<PathBuf> = fs::read_dir(&self.dir)
            .map_err(|e| Error::io(format!("read cache {}", self.dir.display()), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        out.sort();
        Ok(out)
    }

    pub fn len(&self) -> Result<usize> {
        Ok(self.entries()?.len())
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }

    /// Digest over every entry's name and bytes, in name order.
    pub fn digest(&self) -> Result<String> {
        let mut h = FramedHasher::new();
        for path in self.entries()? {
            let bytes = fs::read(&path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
            h.part(path.file_name().unwrap_or_default().to_string_lossy().as_bytes())
                .part(sha256_hex(&bytes));
        }
        Ok(h.finish())
    }
}
