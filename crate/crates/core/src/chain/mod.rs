//! Hash-linked ledger and the per-round cache pool.
//!
//! ## Block bytes
//!
//! The header preimage — the exact bytes hashed, and the exact bytes each
//! block contributes to the binary ledger dump — is, all integers
//! little-endian:
//!
//! ```text
//! index: u64 ‖ prev_hash: 32B ‖ payload_digest: 32B ‖ miner: u32 ‖ nonce: u64
//! ```
//!
//! `block_hash = SHA-256(header)`. Every header field is committed, so any
//! single-bit change to a serialized block (miner included) breaks either the
//! stored hash or the recomputation — that property is what the tamper tests
//! lean on. The serialized block is the 84-byte header followed by the
//! 32-byte stored hash. The first block's `prev_hash` is 32 zero bytes
//! (there is no stored genesis block).

mod mining;
mod pool;

pub use mining::{
    difficulty_met, leading_zero_bits, majority_accept, mine_puzzle, sample_block_time,
    verify_block, verify_block_with_digest, verify_chain, Mined,
};
pub use pool::{CachePool, PoolEntry, DEFAULT_MAX_PAYLOAD};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const HASH_LEN: usize = 32;
pub type Hash = [u8; HASH_LEN];
pub const GENESIS_HASH: Hash = [0u8; HASH_LEN];

/// Header bytes per block (see module docs); serialized form adds the hash.
pub const HEADER_LEN: usize = 8 + HASH_LEN + HASH_LEN + 4 + 8;
pub const BLOCK_LEN: usize = HEADER_LEN + HASH_LEN;

const LEDGER_MAGIC: &[u8; 4] = b"BFL1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    #[serde(with = "hex_hash")]
    pub prev_hash: Hash,
    #[serde(with = "hex_hash")]
    pub payload_digest: Hash,
    pub miner: u32,
    pub nonce: u64,
    #[serde(with = "hex_hash")]
    pub hash: Hash,
}

/// Header preimage in the documented layout.
pub fn header_bytes(
    index: u64,
    prev_hash: &Hash,
    payload_digest: &Hash,
    miner: u32,
    nonce: u64,
) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[0..8].copy_from_slice(&index.to_le_bytes());
    out[8..40].copy_from_slice(prev_hash);
    out[40..72].copy_from_slice(payload_digest);
    out[72..76].copy_from_slice(&miner.to_le_bytes());
    out[76..84].copy_from_slice(&nonce.to_le_bytes());
    out
}

/// SHA-256 of the header preimage.
pub fn block_hash(
    index: u64,
    prev_hash: &Hash,
    payload_digest: &Hash,
    miner: u32,
    nonce: u64,
) -> Hash {
    Sha256::digest(header_bytes(index, prev_hash, payload_digest, miner, nonce)).into()
}

impl Block {
    /// Recompute the hash this block's header actually implies.
    pub fn recompute_hash(&self) -> Hash {
        block_hash(
            self.index,
            &self.prev_hash,
            &self.payload_digest,
            self.miner,
            self.nonce,
        )
    }

    fn to_bytes(&self) -> [u8; BLOCK_LEN] {
        let mut out = [0u8; BLOCK_LEN];
        out[..HEADER_LEN].copy_from_slice(&header_bytes(
            self.index,
            &self.prev_hash,
            &self.payload_digest,
            self.miner,
            self.nonce,
        ));
        out[HEADER_LEN..].copy_from_slice(&self.hash);
        out
    }

    fn from_bytes(raw: &[u8; BLOCK_LEN]) -> Self {
        let mut prev_hash = [0u8; HASH_LEN];
        let mut payload_digest = [0u8; HASH_LEN];
        let mut hash = [0u8; HASH_LEN];
        prev_hash.copy_from_slice(&raw[8..40]);
        payload_digest.copy_from_slice(&raw[40..72]);
        hash.copy_from_slice(&raw[HEADER_LEN..]);
        Self {
            index: u64::from_le_bytes(raw[0..8].try_into().expect("8 bytes")),
            prev_hash,
            payload_digest,
            miner: u32::from_le_bytes(raw[72..76].try_into().expect("4 bytes")),
            nonce: u64::from_le_bytes(raw[76..84].try_into().expect("8 bytes")),
            hash,
        }
    }
}

/// Append-only block list. Appending does not verify — honest writers verify
/// before appending, and `verify_chain` audits the whole thing after the
/// fact.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    blocks: Vec<Block>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Hash the next block must link to: the tip's, or zeroes at height 0.
    pub fn last_hash(&self) -> Hash {
        self.blocks.last().map_or(GENESIS_HASH, |b| b.hash)
    }

    pub fn append(&mut self, block: Block) {
        self.blocks.push(block);
    }

    /// Length-prefixed binary dump: `"BFL1" ‖ count: u64 LE ‖ blocks`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(LEDGER_MAGIC)?;
        w.write_all(&(self.blocks.len() as u64).to_le_bytes())?;
        for b in &self.blocks {
            w.write_all(&b.to_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::LedgerFormat("truncated magic".into()))?;
        if &magic != LEDGER_MAGIC {
            return Err(Error::LedgerFormat(format!(
                "bad magic {magic:02x?}, expected {LEDGER_MAGIC:02x?}"
            )));
        }
        let mut count = [0u8; 8];
        r.read_exact(&mut count)
            .map_err(|_| Error::LedgerFormat("truncated block count".into()))?;
        let count = u64::from_le_bytes(count);

        let mut blocks = Vec::new();
        for i in 0..count {
            let mut raw = [0u8; BLOCK_LEN];
            r.read_exact(&mut raw)
                .map_err(|_| Error::LedgerFormat(format!("truncated at block {i} of {count}")))?;
            blocks.push(Block::from_bytes(&raw));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::LedgerFormat("trailing bytes after last block".into()));
        }
        Ok(Self { blocks })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(LEDGER_MAGIC.len() + 8 + self.blocks.len() * BLOCK_LEN);
        self.write_to(&mut out).expect("Vec<u8> writes never fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Human-readable export; digests in hex.
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

mod hex_hash {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::{Hash, HASH_LEN};
    use crate::util::{from_hex, to_hex};

    pub fn serialize<S: Serializer>(h: &Hash, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_hex(h))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Hash, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = from_hex(&s)
            .filter(|b| b.len() == HASH_LEN)
            .ok_or_else(|| serde::de::Error::custom(format!("bad digest hex: {s:?}")))?;
        Ok(bytes.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_block(index: u64, prev: Hash) -> Block {
        let payload_digest: Hash = Sha256::digest(format!("payload-{index}")).into();
        let miner = (index % 5) as u32;
        let nonce = index * 31 + 7;
        let hash = block_hash(index, &prev, &payload_digest, miner, nonce);
        Block { index, prev_hash: prev, payload_digest, miner, nonce, hash }
    }

    fn toy_ledger(k: usize) -> Ledger {
        let mut ledger = Ledger::new();
        for i in 0..k {
            let block = toy_block(i as u64, ledger.last_hash());
            ledger.append(block);
        }
        ledger
    }

    #[test]
    fn binary_round_trip() {
        let ledger = toy_ledger(7);
        let mut buf = Vec::new();
        ledger.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 8 + 7 * BLOCK_LEN);
        let back = Ledger::read_from(buf.as_slice()).unwrap();
        assert_eq!(ledger, back);
    }

    #[test]
    fn dump_rejects_corrupt_framing() {
        let ledger = toy_ledger(3);
        let mut buf = Vec::new();
        ledger.write_to(&mut buf).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] ^= 0xff;
        assert!(matches!(
            Ledger::read_from(bad_magic.as_slice()),
            Err(Error::LedgerFormat(_))
        ));

        let truncated = &buf[..buf.len() - 5];
        assert!(matches!(
            Ledger::read_from(truncated),
            Err(Error::LedgerFormat(_))
        ));

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(matches!(
            Ledger::read_from(trailing.as_slice()),
            Err(Error::LedgerFormat(_))
        ));
    }

    #[test]
    fn json_export_round_trips_hashes_as_hex() {
        let ledger = toy_ledger(2);
        let json = ledger.to_json_string().unwrap();
        assert!(json.contains("\"prev_hash\": \"0000000000000000"));
        let back: Ledger = serde_json::from_str(&json).unwrap();
        assert_eq!(ledger, back);
    }

    #[test]
    fn last_hash_starts_at_genesis_zeroes() {
        assert_eq!(Ledger::new().last_hash(), GENESIS_HASH);
    }
}
