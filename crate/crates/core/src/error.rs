use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A configuration that the protocol refuses to run.
///
/// Variants that correspond to one of the protocol's standing assumptions
/// name it in their message and report it through [`ConfigError::assumption`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("assumption 7 violated: at least three parties must take part, got n = {0}")]
    TooFewParties(usize),
    #[error("assumption 6 violated: a pool of {pool_size} functions cannot give {n} parties distinct functions")]
    PoolTooSmall { pool_size: usize, n: usize },
    #[error("assumption 8 violated: every party must produce the same number of packets, got {0:?}")]
    UnequalPacketCounts(Vec<usize>),
    #[error("assumption 9 violated: every party must use the same packet size, got {0:?}")]
    UnequalPacketSizes(Vec<usize>),
    #[error("assumption 8 violated: per-party packet counts list {got} parties, expected {expected}")]
    PacketCountArity { expected: usize, got: usize },
    #[error("assumption 9 violated: per-party packet sizes list {got} parties, expected {expected}")]
    PacketSizeArity { expected: usize, got: usize },
    #[error("the third-party pool must hold at least one candidate (m = 0)")]
    NoTtp,
    #[error("function pool size must be at least 1")]
    EmptyPool,
    #[error("packets per party must be at least 1")]
    ZeroPackets,
    #[error("packet size must be at least 1 byte")]
    ZeroPacketSize,
    #[error("expected {expected} data blocks, one per party, got {got}")]
    PartyCountMismatch { expected: usize, got: usize },
    #[error("coalition of {r} parties exceeds the {n} parties in the session")]
    CoalitionTooLarge { r: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed configuration: {0}")]
    Parse(String),
}

impl ConfigError {
    /// The numbered protocol assumption this violation breaks, if any.
    pub fn assumption(&self) -> Option<u8> {
        match self {
            ConfigError::TooFewParties(_) => Some(7),
            ConfigError::PoolTooSmall { .. } => Some(6),
            ConfigError::UnequalPacketCounts(_) | ConfigError::PacketCountArity { .. } => Some(8),
            ConfigError::UnequalPacketSizes(_) | ConfigError::PacketSizeArity { .. } => Some(9),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("function pool exhausted: all {0} functions have been drawn")]
    PoolExhausted(usize),
    #[error("checksum mismatch: packet was not masked under this function")]
    WrongFunction,
    #[error("no pool function recovers packet {packet_index} of block {block_tag:#018x}")]
    NoCandidate { block_tag: u64, packet_index: u32 },
    #[error("functions {candidates:?} all recover packet {packet_index} of block {block_tag:#018x}")]
    AmbiguousDecrypt {
        block_tag: u64,
        packet_index: u32,
        candidates: Vec<usize>,
    },
    #[error("serialized block needs {needed} bytes but only {capacity} fit in the packets")]
    BlockOverflow { needed: usize, capacity: usize },
    #[error("block {block_tag:#018x} is incomplete: {detail}")]
    IncompleteBlock { block_tag: u64, detail: String },
    #[error("corrupt block: {0}")]
    CorruptBlock(String),
    #[error("third party expected {expected} packets, received {received}")]
    IncompleteCollection { expected: usize, received: usize },
    #[error("block tag {block_tag:#018x} is shared by {packets} packets")]
    TagCollision { block_tag: u64, packets: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("aggregate overflows 64 bits at column {column}")]
    Overflow { column: usize },
    #[error("secure channel violation: {0}")]
    Channel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
