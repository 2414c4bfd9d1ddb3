//! Session configuration and the flat key-value config file.
//!
//! The file is a flat TOML table holding exactly the keys `n`, `m`,
//! `packets_per_party`, `packet_size`, `rounds`, `pool_size`, `aggregate`,
//! `master_seed` and `trials`. Unknown keys are rejected. `packets_per_party`
//! and `packet_size` may be given per party as arrays; validation then
//! insists that all entries agree.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};
use crate::maskpool::{build_pool, FunctionPool};
use crate::seed::{derive_seed, LABEL_NONCE, LABEL_PARTY, LABEL_POOL, LABEL_ROUNDS};

pub use crate::ttp::AggregateKind;

/// A validated session configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Party count.
    pub n: usize,
    /// Candidate third parties.
    pub m: usize,
    pub packets_per_party: usize,
    pub packet_size: usize,
    /// Dissemination rounds; `None` means one round per party.
    pub rounds: Option<usize>,
    pub pool_size: usize,
    pub aggregate: AggregateKind,
    pub master_seed: u64,
    /// Monte-Carlo trial count, only read by analysis runs.
    pub trials: Option<u64>,
}

impl SessionConfig {
    /// A configuration with the smallest admissible pool, default rounds and
    /// a SUM aggregate.
    pub fn new(n: usize, m: usize, packets_per_party: usize, packet_size: usize, master_seed: u64) -> Self {
        SessionConfig {
            n,
            m,
            packets_per_party,
            packet_size,
            rounds: None,
            pool_size: n,
            aggregate: AggregateKind::Sum,
            master_seed,
            trials: None,
        }
    }

    pub fn with_aggregate(mut self, aggregate: AggregateKind) -> Self {
        self.aggregate = aggregate;
        self
    }

    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.rounds = Some(rounds);
        self
    }

    pub fn with_pool_size(mut self, pool_size: usize) -> Self {
        self.pool_size = pool_size;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 3 {
            return Err(ConfigError::TooFewParties(self.n));
        }
        if self.m == 0 {
            return Err(ConfigError::NoTtp);
        }
        if self.packets_per_party == 0 {
            return Err(ConfigError::ZeroPackets);
        }
        if self.packet_size == 0 {
            return Err(ConfigError::ZeroPacketSize);
        }
        if self.block_capacity() < 8 {
            return Err(ConfigError::InvalidParameter(format!(
                "{} packets of {} bytes cannot hold the 8-byte block length",
                self.packets_per_party, self.packet_size
            )));
        }
        if self.pool_size == 0 {
            return Err(ConfigError::EmptyPool);
        }
        if self.pool_size < self.n {
            return Err(ConfigError::PoolTooSmall {
                pool_size: self.pool_size,
                n: self.n,
            });
        }
        Ok(())
    }

    pub fn effective_rounds(&self) -> usize {
        self.rounds.unwrap_or(self.n)
    }

    /// Bytes available to one party's serialized block.
    pub fn block_capacity(&self) -> usize {
        self.packets_per_party * self.packet_size
    }

    pub fn total_packets(&self) -> usize {
        self.n * self.packets_per_party
    }

    pub fn pool_seed(&self) -> u64 {
        derive_seed(self.master_seed, LABEL_POOL, 0)
    }

    pub fn party_seed(&self, party: usize) -> u64 {
        derive_seed(self.master_seed, LABEL_PARTY, party as u64)
    }

    pub fn round_seed(&self) -> u64 {
        derive_seed(self.master_seed, LABEL_ROUNDS, 0)
    }

    pub fn session_nonce(&self) -> u64 {
        derive_seed(self.master_seed, LABEL_NONCE, 0)
    }

    /// The pool every candidate third party holds.
    pub fn build_pool(&self) -> Result<FunctionPool, ConfigError> {
        build_pool(self.pool_size, self.pool_seed())
    }

    /// Little-endian encoding used by the transcript digest.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(80);
        for v in [
            self.n as u64,
            self.m as u64,
            self.packets_per_party as u64,
            self.packet_size as u64,
            self.effective_rounds() as u64,
            self.pool_size as u64,
            self.aggregate.code() as u64,
            self.master_seed,
            self.trials.unwrap_or(0),
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// One value for every party, or an explicit per-party list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerParty {
    Uniform(usize),
    Each(Vec<usize>),
}

/// Seeds may be written as integers or, above `i64::MAX`, as hex strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedValue {
    Int(u64),
    Text(String),
}

impl SeedValue {
    fn resolve(&self) -> Result<u64, ConfigError> {
        match self {
            SeedValue::Int(v) => Ok(*v),
            SeedValue::Text(s) => {
                let s = s.trim();
                let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
                    Some(hex) => u64::from_str_radix(hex, 16),
                    None => s.parse(),
                };
                parsed.map_err(|_| ConfigError::Parse(format!("master_seed {s:?} is not a 64-bit integer")))
            }
        }
    }
}

/// A configuration as written in a file, before the protocol assumptions
/// are checked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub n: usize,
    pub m: usize,
    pub packets_per_party: PerParty,
    pub packet_size: PerParty,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    #[serde(default)]
    pub aggregate: AggregateKind,
    pub master_seed: SeedValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}

impl From<&SessionConfig> for RawConfig {
    fn from(c: &SessionConfig) -> Self {
        RawConfig {
            n: c.n,
            m: c.m,
            packets_per_party: PerParty::Uniform(c.packets_per_party),
            packet_size: PerParty::Uniform(c.packet_size),
            rounds: c.rounds,
            pool_size: Some(c.pool_size),
            aggregate: c.aggregate,
            master_seed: if c.master_seed <= i64::MAX as u64 {
                SeedValue::Int(c.master_seed)
            } else {
                SeedValue::Text(format!("{:#x}", c.master_seed))
            },
            trials: c.trials,
        }
    }
}

fn uniform(
    value: &PerParty,
    n: usize,
    arity: impl Fn(usize) -> ConfigError,
    unequal: impl Fn(Vec<usize>) -> ConfigError,
) -> Result<usize, ConfigError> {
    match value {
        PerParty::Uniform(v) => Ok(*v),
        PerParty::Each(values) => {
            if values.len() != n {
                return Err(arity(values.len()));
            }
            match values.first() {
                Some(first) if values.iter().all(|v| v == first) => Ok(*first),
                _ => Err(unequal(values.clone())),
            }
        }
    }
}

/// Checks a raw configuration against the protocol assumptions and returns
/// the session configuration it describes.
pub fn validate_config(raw: &RawConfig) -> Result<SessionConfig, ConfigError> {
    let n = raw.n;
    if n < 3 {
        return Err(ConfigError::TooFewParties(n));
    }
    let packets_per_party = uniform(
        &raw.packets_per_party,
        n,
        |got| ConfigError::PacketCountArity { expected: n, got },
        ConfigError::UnequalPacketCounts,
    )?;
    let packet_size = uniform(
        &raw.packet_size,
        n,
        |got| ConfigError::PacketSizeArity { expected: n, got },
        ConfigError::UnequalPacketSizes,
    )?;
    let config = SessionConfig {
        n,
        m: raw.m,
        packets_per_party,
        packet_size,
        rounds: raw.rounds,
        pool_size: raw.pool_size.unwrap_or(n),
        aggregate: raw.aggregate,
        master_seed: raw.master_seed.resolve()?,
        trials: raw.trials,
    };
    config.validate()?;
    Ok(config)
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<SessionConfig> {
    let raw = RawConfig::load(path)?;
    validate_config(&raw).map_err(Error::from)
}
