//! Content digests and canonical encodings.
//!
//! Every identity in the toolkit (items, prompt versions, cache keys, manifests)
//! is a hex-encoded SHA-256 over a canonical byte stream.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const DIGEST_ALGORITHM: &str = "sha256";

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Serializes through `serde_json::Value` so object keys come out sorted.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let value = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&value)?)
}

pub fn digest_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(sha256_hex(canonical_json(value)?))
}

/// Incremental hasher for length-prefixed fields.
///
/// Each part is written as `<len>:<bytes>;` so no choice of field contents can
/// make two different part sequences collide on the byte level.
#[derive(Default)]
pub struct FramedHasher {
    inner: Sha256,
}

impl FramedHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn part(&mut self, bytes: impl AsRef<[u8]>) -> &mut Self {
        let bytes = bytes.as_ref();
        self.inner.update(bytes.len().to_string().as_bytes());
        self.inner.update(b":");
        self.inner.update(bytes);
        self.inner.update(b";");
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.inner.finalize())
    }
}
