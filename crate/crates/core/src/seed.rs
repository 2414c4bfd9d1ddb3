//! Seed derivation and the 64-bit digest used for transcripts and traces.
//!
//! Every random choice in a session descends from the session's master seed
//! through [`derive_seed`], so a whole run is a pure function of its inputs.

use sha2::{Digest, Sha256};

pub(crate) const LABEL_POOL: u64 = 0x706f_6f6c;
pub(crate) const LABEL_PARTY: u64 = 0x7061_7274;
pub(crate) const LABEL_ROUNDS: u64 = 0x726e_6473;
pub(crate) const LABEL_NONCE: u64 = 0x6e6f_6e63;
pub(crate) const LABEL_DRAW: u64 = 0x6472_6177;
pub(crate) const LABEL_TAG: u64 = 0x7461_6773;
pub(crate) const LABEL_TRIAL: u64 = 0x7472_6c73;
pub(crate) const LABEL_REFERENCE: u64 = 0x7265_6673;
pub(crate) const LABEL_INPUTS: u64 = 0x696e_7075;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `parent` for the `(label, index)` slot.
pub fn derive_seed(parent: u64, label: u64, index: u64) -> u64 {
    mix64(mix64(parent ^ mix64(label)) ^ index)
}

/// Incremental digest: SHA-256 over the fed bytes, truncated to the first
/// eight bytes read as a little-endian `u64`.
#[derive(Clone, Default)]
pub struct Digest64(Sha256);

impl Digest64 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.0.update(bytes);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    /// Length-prefixed byte string, so concatenations stay unambiguous.
    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.u64(bytes.len() as u64).bytes(bytes)
    }

    pub fn finish(&self) -> u64 {
        let out = self.0.clone().finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&out[..8]);
        u64::from_le_bytes(head)
    }
}

pub fn digest64(bytes: &[u8]) -> u64 {
    Digest64::new().bytes(bytes).finish()
}
