//! The computation layer: runtime selection of one third party out of `m`,
//! packet collection, pool-driven reassembly and the announced aggregate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dissemination::{depacketize, DataBlock};
use crate::error::{ConfigError, Error, Result};
use crate::maskpool::{trial_decrypt, EncryptedPacket, FunctionPool, Packet};
use crate::seed::{mix64, Digest64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateKind {
    #[default]
    #[serde(alias = "SUM")]
    Sum,
    #[serde(alias = "MEAN")]
    Mean,
    #[serde(alias = "MIN")]
    Min,
    #[serde(alias = "MAX")]
    Max,
}

impl AggregateKind {
    pub const ALL: [AggregateKind; 4] = [
        AggregateKind::Sum,
        AggregateKind::Mean,
        AggregateKind::Min,
        AggregateKind::Max,
    ];

    pub fn code(self) -> u8 {
        match self {
            AggregateKind::Sum => 0,
            AggregateKind::Mean => 1,
            AggregateKind::Min => 2,
            AggregateKind::Max => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AggregateKind::Sum => "sum",
            AggregateKind::Mean => "mean",
            AggregateKind::Min => "min",
            AggregateKind::Max => "max",
        }
    }
}

impl fmt::Display for AggregateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregateKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        AggregateKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ConfigError::Parse(format!("unknown aggregate {s:?}")))
    }
}

/// The announced outcome of a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicResult {
    pub aggregate_kind: AggregateKind,
    pub values: Vec<u64>,
    pub n_blocks: usize,
    pub announced: bool,
}

impl PublicResult {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 8 * self.values.len());
        out.push(self.aggregate_kind.code());
        out.push(u8::from(self.announced));
        out.extend_from_slice(&(self.n_blocks as u64).to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Input to the selection function: a digest over every party's seed and a
/// session nonce, so no single party can predict it on its own.
pub fn combine_seeds(party_seeds: &[u64], nonce: u64) -> u64 {
    let mut d = Digest64::new();
    d.u64(party_seeds.len() as u64);
    for s in party_seeds {
        d.u64(*s);
    }
    d.u64(nonce).finish()
}

/// Picks the computing third party: `combined_seed` mixed and mapped onto
/// `[0, m)` by a widening multiply.
pub fn select_ttp(m: usize, combined_seed: u64) -> Result<usize, ConfigError> {
    if m == 0 {
        return Err(ConfigError::NoTtp);
    }
    Ok(((u128::from(mix64(combined_seed)) * m as u128) >> 64) as usize)
}

/// One candidate third party. All candidates of a session hold the same pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TtpNode {
    ttp_id: usize,
    pool: FunctionPool,
    parties: usize,
    packets_per_block: usize,
    inbox: Vec<EncryptedPacket>,
}

impl TtpNode {
    pub fn new(ttp_id: usize, pool: FunctionPool, parties: usize, packets_per_block: usize) -> Self {
        TtpNode {
            ttp_id,
            pool,
            parties,
            packets_per_block,
            inbox: Vec::new(),
        }
    }

    pub fn ttp_id(&self) -> usize {
        self.ttp_id
    }

    pub fn pool(&self) -> &FunctionPool {
        &self.pool
    }

    pub fn inbox(&self) -> &[EncryptedPacket] {
        &self.inbox
    }

    pub fn expected_packets(&self) -> usize {
        self.parties * self.packets_per_block
    }
}

/// Stores the forwarded packets. No capacity limit is modelled; the count
/// has to match the session exactly.
pub fn collect(mut ttp: TtpNode, packets: Vec<EncryptedPacket>) -> Result<TtpNode> {
    let received = ttp.inbox.len() + packets.len();
    if received != ttp.expected_packets() {
        return Err(Error::IncompleteCollection {
            expected: ttp.expected_packets(),
            received,
        });
    }
    ttp.inbox.extend(packets);
    Ok(ttp)
}

/// Groups the inbox by block tag, strips every mask by trial decryption and
/// rebuilds the blocks. Output is ordered by block tag, which carries no
/// information about the parties.
pub fn reassemble(ttp: &TtpNode) -> Result<Vec<DataBlock>> {
    let x = ttp.packets_per_block;
    let mut groups: BTreeMap<u64, Vec<&EncryptedPacket>> = BTreeMap::new();
    for e in &ttp.inbox {
        groups.entry(e.block_tag).or_default().push(e);
    }
    for (&block_tag, group) in &groups {
        if group.len() > x {
            return Err(Error::TagCollision {
                block_tag,
                packets: group.len(),
            });
        }
        if group.len() < x {
            return Err(Error::IncompleteBlock {
                block_tag,
                detail: format!("{} of {x} packets arrived", group.len()),
            });
        }
    }
    groups
        .into_values()
        .map(|group| {
            let packets: Vec<Packet> = group
                .par_iter()
                .map(|e| trial_decrypt(&ttp.pool, e).map(|(_, p)| p))
                .collect::<Result<_>>()?;
            depacketize(&packets)
        })
        .collect()
}

/// Elementwise aggregate over equally long value vectors. MEAN is the
/// floor of the exact mean.
pub fn compute_aggregate(blocks: &[DataBlock], kind: AggregateKind) -> Result<PublicResult> {
    let Some(first) = blocks.first() else {
        return Err(Error::Shape("no blocks to aggregate".into()));
    };
    let width = first.values.len();
    if let Some(b) = blocks.iter().find(|b| b.values.len() != width) {
        return Err(Error::Shape(format!(
            "block of length {} among blocks of length {width}",
            b.values.len()
        )));
    }
    let column = |i: usize| blocks.iter().map(move |b| b.values[i]);
    let values = (0..width)
        .map(|i| match kind {
            AggregateKind::Sum => column(i)
                .try_fold(0u64, u64::checked_add)
                .ok_or(Error::Overflow { column: i }),
            AggregateKind::Mean => {
                let total: u128 = column(i).map(u128::from).sum();
                Ok((total / blocks.len() as u128) as u64)
            }
            AggregateKind::Min => Ok(column(i).min().expect("non-empty")),
            AggregateKind::Max => Ok(column(i).max().expect("non-empty")),
        })
        .collect::<Result<Vec<u64>>>()?;
    Ok(PublicResult {
        aggregate_kind: kind,
        values,
        n_blocks: blocks.len(),
        announced: true,
    })
}
