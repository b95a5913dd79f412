//! Mining (both modes), block verification, and the majority vote.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use sha2::{Digest, Sha256};

use super::{Block, Hash, Ledger};
use crate::error::{Error, Result};

/// Leading zero bits of a digest.
pub fn leading_zero_bits(h: &Hash) -> u32 {
    let mut bits = 0;
    for &b in h {
        if b == 0 {
            bits += 8;
        } else {
            bits += b.leading_zeros();
            break;
        }
    }
    bits
}

pub fn difficulty_met(h: &Hash, difficulty: u32) -> bool {
    leading_zero_bits(h) >= difficulty
}

#[derive(Clone, Copy, Debug)]
pub struct Mined {
    pub nonce: u64,
    pub hash: Hash,
    pub attempts: u64,
}

/// Real nonce search: try nonces from `start_nonce` upward (wrapping) until
/// the header hash clears `difficulty` leading zero bits.
pub fn mine_puzzle(
    index: u64,
    prev_hash: &Hash,
    payload_digest: &Hash,
    miner: u32,
    difficulty: u32,
    start_nonce: u64,
) -> Result<Mined> {
    if difficulty > 64 {
        return Err(Error::Config(format!(
            "difficulty {difficulty} exceeds the practical cap of 64 leading zero bits"
        )));
    }
    let mut header = super::header_bytes(index, prev_hash, payload_digest, miner, start_nonce);
    let mut nonce = start_nonce;
    let mut attempts: u64 = 0;
    loop {
        attempts += 1;
        header[76..84].copy_from_slice(&nonce.to_le_bytes());
        let hash: Hash = Sha256::digest(header).into();
        if difficulty_met(&hash, difficulty) {
            return Ok(Mined { nonce, hash, attempts });
        }
        nonce = nonce.wrapping_add(1);
        if nonce == start_nonce {
            return Err(Error::NonceExhausted { difficulty });
        }
    }
}

/// Analytic mining race: each of `n_clients` solve times is i.i.d.
/// exponential with mean `n_clients·beta`, so the network-level winner time
/// (the min) has mean `beta`. Returns `(winner, elapsed)`; draws happen in
/// client-index order and ties go to the lowest index.
pub fn sample_block_time<R: Rng + ?Sized>(beta: f64, n_clients: u32, rng: &mut R) -> (u32, f64) {
    assert!(beta > 0.0, "beta must be positive");
    assert!(n_clients >= 1, "need at least one miner");
    let exp = Exp::new(1.0 / (f64::from(n_clients) * beta)).expect("positive rate");
    let mut winner = 0u32;
    let mut best = f64::INFINITY;
    for client in 0..n_clients {
        let t = exp.sample(rng);
        if t < best {
            best = t;
            winner = client;
        }
    }
    (winner, best)
}

/// Full block check: stored hash matches the recomputed header hash, the
/// link matches the parent, the payload digest matches the actual payload
/// bytes, and the hash clears the difficulty.
pub fn verify_block(block: &Block, parent_hash: &Hash, payload_bytes: &[u8], difficulty: u32) -> bool {
    let payload: Hash = Sha256::digest(payload_bytes).into();
    verify_block_with_digest(block, parent_hash, &payload, difficulty)
}

/// Same check as [`verify_block`] for a caller that already hashed the
/// payload (a verifier voting on bytes it assembled itself).
pub fn verify_block_with_digest(
    block: &Block,
    parent_hash: &Hash,
    payload_digest: &Hash,
    difficulty: u32,
) -> bool {
    block.prev_hash == *parent_hash
        && block.payload_digest == *payload_digest
        && block.hash == block.recompute_hash()
        && difficulty_met(&block.hash, difficulty)
}

/// Strictly more than half of the votes are `true`.
pub fn majority_accept(votes: &[bool]) -> bool {
    let accepts = votes.iter().filter(|&&v| v).count();
    2 * accepts > votes.len()
}

/// Audit a whole ledger: contiguous indices from 0, links from the zero
/// genesis hash, recomputable block hashes, difficulty met everywhere.
/// Reports the first failing block.
pub fn verify_chain(ledger: &Ledger, difficulty: u32) -> Result<()> {
    let mut prev = super::GENESIS_HASH;
    for (i, block) in ledger.blocks().iter().enumerate() {
        let fault = |reason: String| Error::ChainFault { index: i as u64, reason };
        if block.index != i as u64 {
            return Err(fault(format!("index {} at height {i}", block.index)));
        }
        if block.prev_hash != prev {
            return Err(fault("prev_hash does not match parent".into()));
        }
        if block.hash != block.recompute_hash() {
            return Err(fault("stored hash does not match header".into()));
        }
        if !difficulty_met(&block.hash, difficulty) {
            return Err(fault(format!(
                "hash has {} leading zero bits, needs {difficulty}",
                leading_zero_bits(&block.hash)
            )));
        }
        prev = block.hash;
    }
    Ok(())
}
