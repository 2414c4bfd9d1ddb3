//! The pool of masking functions and packet-level masking.
//!
//! A masking function is nothing more than a 64-bit seed. Its values for a
//! given packet are a ChaCha20 keystream keyed by `(seed, block_tag,
//! packet_index)`, and a packet is masked by bytewise addition modulo 256.
//! Because the key material other than the seed travels in the clear, any
//! holder of the pool can regenerate the mask for every candidate function
//! and keep the one whose unmasked payload matches the plaintext checksum.

use std::collections::BTreeSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};

const MASK_DOMAIN: u64 = 0x6d61_736b_7374_726d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskFunction {
    pub id: usize,
    pub seed: u64,
}

/// The function pool every candidate third party holds a copy of.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionPool {
    master_seed: u64,
    functions: Vec<MaskFunction>,
}

impl FunctionPool {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn size(&self) -> usize {
        self.functions.len()
    }

    pub fn functions(&self) -> &[MaskFunction] {
        &self.functions
    }

    pub fn get(&self, id: usize) -> Option<&MaskFunction> {
        self.functions.get(id)
    }

    /// Canonical little-endian encoding: master seed, size, then each seed.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.functions.len());
        out.extend_from_slice(&self.master_seed.to_le_bytes());
        out.extend_from_slice(&(self.functions.len() as u64).to_le_bytes());
        for f in &self.functions {
            out.extend_from_slice(&f.seed.to_le_bytes());
        }
        out
    }
}

/// Builds a pool of `size` functions whose seeds are successive distinct
/// outputs of a ChaCha20 stream seeded with `master_seed`.
pub fn build_pool(size: usize, master_seed: u64) -> Result<FunctionPool, ConfigError> {
    if size == 0 {
        return Err(ConfigError::EmptyPool);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    let mut seen = BTreeSet::new();
    let mut functions = Vec::with_capacity(size);
    while functions.len() < size {
        let seed = rng.next_u64();
        if seen.insert(seed) {
            functions.push(MaskFunction {
                id: functions.len(),
                seed,
            });
        }
    }
    Ok(FunctionPool {
        master_seed,
        functions,
    })
}

/// Blind draw: picks uniformly among the ids not yet drawn and hands back
/// only that function.
pub fn draw_function(
    pool: &FunctionPool,
    draw_seed: u64,
    already_drawn: &BTreeSet<usize>,
) -> Result<MaskFunction> {
    let remaining: Vec<usize> = (0..pool.size())
        .filter(|id| !already_drawn.contains(id))
        .collect();
    if remaining.is_empty() {
        return Err(Error::PoolExhausted(pool.size()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
    let id = remaining[rng.random_range(0..remaining.len())];
    Ok(pool.functions[id])
}

/// The function's values for one packet: `len` keystream bytes.
pub fn mask_values(f: &MaskFunction, block_tag: u64, packet_index: u32, len: usize) -> Vec<u8> {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&f.seed.to_le_bytes());
    key[8..16].copy_from_slice(&block_tag.to_le_bytes());
    key[16..24].copy_from_slice(&u64::from(packet_index).to_le_bytes());
    key[24..].copy_from_slice(&MASK_DOMAIN.to_le_bytes());
    let mut out = vec![0u8; len];
    ChaCha20Rng::from_seed(key).fill_bytes(&mut out);
    out
}

/// CRC-32 (IEEE) of a plaintext payload.
pub fn checksum(payload: &[u8]) -> u32 {
    crc32fast::hash(payload)
}

/// One fixed-size plaintext fragment of a party's data block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Packet {
    block_tag: u64,
    packet_index: u32,
    payload: Vec<u8>,
    checksum: u32,
}

impl Packet {
    pub fn new(block_tag: u64, packet_index: u32, payload: Vec<u8>) -> Self {
        let checksum = checksum(&payload);
        Packet {
            block_tag,
            packet_index,
            payload,
            checksum,
        }
    }

    pub fn block_tag(&self) -> u64 {
        self.block_tag
    }

    pub fn packet_index(&self) -> u32 {
        self.packet_index
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn checksum(&self) -> u32 {
        self.checksum
    }
}

/// A masked packet as it travels between parties and to the third party.
///
/// The header carries nothing but the block tag, the index within the block
/// and the plaintext checksum: no party identifier, no function id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncryptedPacket {
    pub block_tag: u64,
    pub packet_index: u32,
    pub checksum: u32,
    pub masked_payload: Vec<u8>,
}

impl EncryptedPacket {
    /// Identity of the packet within a session: `(block_tag, packet_index)`.
    pub fn key(&self) -> (u64, u32) {
        (self.block_tag, self.packet_index)
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.masked_payload.len());
        out.extend_from_slice(&self.block_tag.to_le_bytes());
        out.extend_from_slice(&self.packet_index.to_le_bytes());
        out.extend_from_slice(&self.checksum.to_le_bytes());
        out.extend_from_slice(&(self.masked_payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.masked_payload);
        out
    }
}

pub fn encrypt_packet(f: &MaskFunction, p: &Packet) -> EncryptedPacket {
    let mask = mask_values(f, p.block_tag, p.packet_index, p.payload.len());
    let masked_payload = p
        .payload
        .iter()
        .zip(&mask)
        .map(|(b, m)| b.wrapping_add(*m))
        .collect();
    EncryptedPacket {
        block_tag: p.block_tag,
        packet_index: p.packet_index,
        checksum: p.checksum,
        masked_payload,
    }
}

fn unmask(f: &MaskFunction, e: &EncryptedPacket) -> Vec<u8> {
    let mask = mask_values(f, e.block_tag, e.packet_index, e.masked_payload.len());
    e.masked_payload
        .iter()
        .zip(&mask)
        .map(|(b, m)| b.wrapping_sub(*m))
        .collect()
}

pub fn decrypt_packet(f: &MaskFunction, e: &EncryptedPacket) -> Result<Packet> {
    let payload = unmask(f, e);
    if checksum(&payload) != e.checksum {
        return Err(Error::WrongFunction);
    }
    Ok(Packet {
        block_tag: e.block_tag,
        packet_index: e.packet_index,
        payload,
        checksum: e.checksum,
    })
}

/// Tries every function in the pool and returns the one whose unmasked
/// payload matches the checksum. Functions that recover the same plaintext
/// (short payloads whose mask bytes coincide) count as one match and the
/// lowest id is reported. Distinct plaintexts passing the checksum are a
/// collision and are reported rather than resolved.
pub fn trial_decrypt(pool: &FunctionPool, e: &EncryptedPacket) -> Result<(usize, Packet)> {
    let hits: Vec<(usize, Packet)> = pool
        .functions
        .iter()
        .filter_map(|f| decrypt_packet(f, e).ok().map(|p| (f.id, p)))
        .collect();
    match hits.first() {
        None => Err(Error::NoCandidate {
            block_tag: e.block_tag,
            packet_index: e.packet_index,
        }),
        Some((_, first)) if hits.iter().all(|(_, p)| p == first) => {
            Ok(hits.into_iter().next().expect("one hit"))
        }
        Some(_) => Err(Error::AmbiguousDecrypt {
            block_tag: e.block_tag,
            packet_index: e.packet_index,
            candidates: hits.into_iter().map(|(id, _)| id).collect(),
        }),
    }
}
