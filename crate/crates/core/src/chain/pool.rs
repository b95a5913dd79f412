//! The round cache pool: an *untrusted* staging store for uploaded models.
//!
//! Uploads are checksummed (SHA-256 of the raw bytes — standing in for the
//! reference design's homomorphic encryption, which is out of scope);
//! downloads re-verify. The pool deliberately exposes mutable access to
//! stored bytes: it models a shared store an adversary could touch between
//! upload and aggregation, and the integrity checks downstream are what the
//! protocol relies on.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::Hash;
use crate::error::{Error, Result};

/// Default per-entry payload cap (a 256-hidden model is ~1.6 MiB).
pub const DEFAULT_MAX_PAYLOAD: usize = 16 << 20;

#[derive(Clone, Debug)]
pub struct PoolEntry {
    pub client: u32,
    pub bytes: Vec<u8>,
    pub checksum: Hash,
}

#[derive(Clone, Debug)]
pub struct CachePool {
    max_payload: usize,
    entries: BTreeMap<u32, PoolEntry>,
}

impl Default for CachePool {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_PAYLOAD)
    }
}

impl CachePool {
    pub fn new(max_payload: usize) -> Self {
        Self {
            max_payload,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, client: u32) -> bool {
        self.entries.contains_key(&client)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Store one client's serialized model for this round.
    pub fn upload(&mut self, client: u32, bytes: Vec<u8>) -> Result<()> {
        if self.entries.contains_key(&client) {
            return Err(Error::DuplicateUpload { client });
        }
        if bytes.len() > self.max_payload {
            return Err(Error::OversizedPayload {
                client,
                len: bytes.len(),
                max: self.max_payload,
            });
        }
        let checksum: Hash = Sha256::digest(&bytes).into();
        self.entries.insert(client, PoolEntry { client, bytes, checksum });
        Ok(())
    }

    /// Fetch one entry, re-verifying its checksum.
    pub fn download(&self, client: u32) -> Result<&PoolEntry> {
        let entry = self
            .entries
            .get(&client)
            .ok_or(Error::MissingUpload { client })?;
        let now: Hash = Sha256::digest(&entry.bytes).into();
        if now != entry.checksum {
            return Err(Error::ChecksumMismatch { client });
        }
        Ok(entry)
    }

    /// All entries in client-index order, each checksum-verified.
    pub fn download_all(&self) -> Result<Vec<&PoolEntry>> {
        self.entries.keys().map(|&c| self.download(c)).collect()
    }

    /// The round payload: every verified entry framed and concatenated in
    /// client order (`client: u32 LE ‖ len: u64 LE ‖ bytes` per entry). The
    /// block's `payload_digest` is the SHA-256 of exactly these bytes.
    pub fn payload_bytes(&self) -> Result<Vec<u8>> {
        let entries = self.download_all()?;
        let total: usize = entries.iter().map(|e| 12 + e.bytes.len()).sum();
        let mut out = Vec::with_capacity(total);
        for e in entries {
            out.extend_from_slice(&e.client.to_le_bytes());
            out.extend_from_slice(&(e.bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&e.bytes);
        }
        Ok(out)
    }

    /// Mutable view of a stored payload — the tamper surface. Integrity is
    /// enforced at download time, not here.
    pub fn entry_bytes_mut(&mut self, client: u32) -> Option<&mut Vec<u8>> {
        self.entries.get_mut(&client).map(|e| &mut e.bytes)
    }
}
