//! Packetizing data blocks and the synchronized random dissemination rounds.
//!
//! A block is serialized as an 8-byte little-endian byte-length prefix, the
//! little-endian values, and zero padding up to `X * packet_size` bytes, then
//! cut into `X` equal packets. Each party masks its packets with its drawn
//! function and initially holds them itself. Every round sends each held
//! packet to a party chosen independently and uniformly (self included),
//! using a generator seeded by the shared round seed and the round number.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};
use crate::harness::config::SessionConfig;
use crate::maskpool::{draw_function, encrypt_packet, EncryptedPacket, MaskFunction, Packet};
use crate::seed::{derive_seed, LABEL_DRAW, LABEL_ROUNDS, LABEL_TAG};

const LENGTH_PREFIX: usize = 8;

/// A party's private input.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataBlock {
    pub values: Vec<u64>,
}

impl DataBlock {
    pub fn new(values: Vec<u64>) -> Self {
        DataBlock { values }
    }

    /// Unpadded serialized length.
    pub fn serialized_len(&self) -> usize {
        LENGTH_PREFIX + 8 * self.values.len()
    }

    /// Largest value count a block may carry in `capacity` bytes.
    pub fn max_values(capacity: usize) -> usize {
        capacity.saturating_sub(LENGTH_PREFIX) / 8
    }

    /// Serialization padded with zeros to exactly `capacity` bytes.
    pub fn serialize_padded(&self, capacity: usize) -> Result<Vec<u8>> {
        let needed = self.serialized_len();
        if needed > capacity {
            return Err(Error::BlockOverflow { needed, capacity });
        }
        let mut out = Vec::with_capacity(capacity);
        out.extend_from_slice(&((8 * self.values.len()) as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.resize(capacity, 0);
        Ok(out)
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.serialize_padded(self.serialized_len())
            .expect("exact capacity")
    }
}

pub fn packetize(
    block: &DataBlock,
    packets: usize,
    packet_size: usize,
    block_tag: u64,
) -> Result<Vec<Packet>> {
    if packets == 0 {
        return Err(ConfigError::ZeroPackets.into());
    }
    if packet_size == 0 {
        return Err(ConfigError::ZeroPacketSize.into());
    }
    let bytes = block.serialize_padded(packets * packet_size)?;
    Ok(bytes
        .chunks_exact(packet_size)
        .enumerate()
        .map(|(i, chunk)| Packet::new(block_tag, i as u32, chunk.to_vec()))
        .collect())
}

pub fn depacketize(packets: &[Packet]) -> Result<DataBlock> {
    let Some(first) = packets.first() else {
        return Err(Error::IncompleteBlock {
            block_tag: 0,
            detail: "no packets".into(),
        });
    };
    let block_tag = first.block_tag();
    if packets.iter().any(|p| p.block_tag() != block_tag) {
        return Err(Error::IncompleteBlock {
            block_tag,
            detail: "packets carry different block tags".into(),
        });
    }
    let mut ordered: Vec<&Packet> = packets.iter().collect();
    ordered.sort_by_key(|p| p.packet_index());
    for (expected, p) in ordered.iter().enumerate() {
        if p.packet_index() as usize != expected {
            return Err(Error::IncompleteBlock {
                block_tag,
                detail: format!(
                    "indices {:?} do not cover 0..{}",
                    ordered.iter().map(|p| p.packet_index()).collect::<Vec<_>>(),
                    packets.len()
                ),
            });
        }
    }
    let bytes: Vec<u8> = ordered.iter().flat_map(|p| p.payload().iter().copied()).collect();
    if bytes.len() < LENGTH_PREFIX {
        return Err(Error::CorruptBlock(format!(
            "{} bytes cannot hold the length prefix",
            bytes.len()
        )));
    }
    let declared = u64::from_le_bytes(bytes[..LENGTH_PREFIX].try_into().expect("8 bytes"));
    let available = (bytes.len() - LENGTH_PREFIX) as u64;
    if declared > available {
        return Err(Error::CorruptBlock(format!(
            "length prefix claims {declared} bytes, only {available} present"
        )));
    }
    if declared % 8 != 0 {
        return Err(Error::CorruptBlock(format!(
            "length prefix {declared} is not a whole number of values"
        )));
    }
    let body = &bytes[LENGTH_PREFIX..LENGTH_PREFIX + declared as usize];
    Ok(DataBlock::new(
        body.chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    ))
}

/// What the simulator knows about one party. Nothing here is ever put on
/// the wire except the packets in `held`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartyState {
    party_id: usize,
    block: DataBlock,
    block_tag: u64,
    drawn_function: MaskFunction,
    held: Vec<EncryptedPacket>,
    seen: BTreeSet<(u64, u32)>,
}

impl PartyState {
    pub fn party_id(&self) -> usize {
        self.party_id
    }

    pub fn block(&self) -> &DataBlock {
        &self.block
    }

    pub fn block_tag(&self) -> u64 {
        self.block_tag
    }

    pub fn drawn_function(&self) -> &MaskFunction {
        &self.drawn_function
    }

    pub fn held(&self) -> &[EncryptedPacket] {
        &self.held
    }

    /// Keys `(block_tag, packet_index)` of every packet this party has held
    /// at any round boundary so far.
    pub fn seen(&self) -> &BTreeSet<(u64, u32)> {
        &self.seen
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionState {
    config: SessionConfig,
    parties: Vec<PartyState>,
    round: usize,
    rng_round_seed: u64,
}

impl SessionState {
    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn parties(&self) -> &[PartyState] {
        &self.parties
    }

    pub fn n(&self) -> usize {
        self.parties.len()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn rng_round_seed(&self) -> u64 {
        self.rng_round_seed
    }

    pub fn total_held(&self) -> usize {
        self.parties.iter().map(|p| p.held.len()).sum()
    }

    /// Every packet in the session paired with its current holder, in
    /// holder order.
    pub fn holdings(&self) -> impl Iterator<Item = (usize, &EncryptedPacket)> {
        self.parties
            .iter()
            .flat_map(|p| p.held.iter().map(move |e| (p.party_id, e)))
    }

    /// Sorted multiset of all packets currently in the session.
    pub fn packet_multiset(&self) -> Vec<EncryptedPacket> {
        let mut all: Vec<EncryptedPacket> = self.holdings().map(|(_, e)| e.clone()).collect();
        all.sort();
        all
    }

    /// Destinations for the next round: `plan[p][slot]` is where the packet
    /// in `parties[p].held[slot]` goes.
    pub fn plan_round(&self) -> Vec<Vec<usize>> {
        let n = self.parties.len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.rng_round_seed,
            LABEL_ROUNDS,
            self.round as u64,
        ));
        self.parties
            .iter()
            .map(|p| p.held.iter().map(|_| rng.random_range(0..n)).collect())
            .collect()
    }

    /// Replaces every party's holdings with what arrived this round and
    /// closes the round.
    pub fn complete_round(&mut self, arrivals: Vec<Vec<EncryptedPacket>>) -> Result<()> {
        if arrivals.len() != self.parties.len() {
            return Err(Error::Channel(format!(
                "arrivals for {} parties, session has {}",
                arrivals.len(),
                self.parties.len()
            )));
        }
        let before = self.packet_multiset();
        let mut after: Vec<EncryptedPacket> = arrivals.iter().flatten().cloned().collect();
        after.sort();
        if before != after {
            return Err(Error::Channel("packets were lost or altered in transit".into()));
        }
        for (party, held) in self.parties.iter_mut().zip(arrivals) {
            party.seen.extend(held.iter().map(EncryptedPacket::key));
            party.held = held;
        }
        self.round += 1;
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn force_block_tag(&mut self, party: usize, tag: u64) {
        let p = &mut self.parties[party];
        p.block_tag = tag;
        for e in &mut p.held {
            e.block_tag = tag;
        }
        p.seen = p.held.iter().map(EncryptedPacket::key).collect();
    }
}

/// Sets up every party: blind function draw without replacement, a fresh
/// block tag, packetizing and masking. Each party starts out holding its own
/// packets.
pub fn init_session(config: &SessionConfig, blocks: &[DataBlock]) -> Result<SessionState> {
    config.validate()?;
    if blocks.len() != config.n {
        return Err(ConfigError::PartyCountMismatch {
            expected: config.n,
            got: blocks.len(),
        }
        .into());
    }
    let pool = config.build_pool()?;
    let mut drawn = BTreeSet::new();
    let mut parties = Vec::with_capacity(config.n);
    for (party_id, block) in blocks.iter().enumerate() {
        let party_seed = config.party_seed(party_id);
        let function = draw_function(&pool, derive_seed(party_seed, LABEL_DRAW, 0), &drawn)?;
        drawn.insert(function.id);
        let block_tag = derive_seed(party_seed, LABEL_TAG, 0);
        let held: Vec<EncryptedPacket> =
            packetize(block, config.packets_per_party, config.packet_size, block_tag)?
                .iter()
                .map(|p| encrypt_packet(&function, p))
                .collect();
        parties.push(PartyState {
            party_id,
            block: block.clone(),
            block_tag,
            drawn_function: function,
            seen: held.iter().map(EncryptedPacket::key).collect(),
            held,
        });
    }
    Ok(SessionState {
        config: config.clone(),
        parties,
        round: 0,
        rng_round_seed: config.round_seed(),
    })
}

/// One round: every held packet moves to an independently uniform party.
pub fn shuffle_round(mut state: SessionState) -> SessionState {
    let plan = state.plan_round();
    let mut arrivals = vec![Vec::new(); state.n()];
    for (party, destinations) in state.parties.iter().zip(&plan) {
        for (packet, &to) in party.held.iter().zip(destinations) {
            arrivals[to].push(packet.clone());
        }
    }
    state
        .complete_round(arrivals)
        .expect("in-process shuffle conserves packets");
    state
}

/// Runs `rounds` shuffle rounds, or the configured count (default `n`).
pub fn run_dissemination(state: SessionState, rounds: Option<usize>) -> SessionState {
    let rounds = rounds.unwrap_or_else(|| state.config.effective_rounds());
    (0..rounds).fold(state, |s, _| shuffle_round(s))
}

/// Probability that a packet held by `from` is sent to `to` in one round.
pub fn destination_probability(n: usize, _from: usize, _to: usize) -> f64 {
    1.0 / n as f64
}

/// Per-party packet counts grouped by block tag; handy for checks on where
/// a block's packets currently sit.
pub fn holders_by_block(state: &SessionState) -> BTreeMap<u64, Vec<usize>> {
    let mut out: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (holder, e) in state.holdings() {
        out.entry(e.block_tag).or_default().push(holder);
    }
    out
}
