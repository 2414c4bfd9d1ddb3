//! Deterministic simulator for a two-layer secure multi-party computation
//! protocol in which parties split their private data into masked packets,
//! randomly pass those packets among themselves for several rounds, and
//! finally forward them to a third party picked at run time from a pool of
//! candidates. The chosen third party strips the masks by trial decryption
//! against its function pool, reassembles the blocks and announces an
//! aggregate.
//!
//! Modules follow the life of a session:
//!
//! * [`maskpool`]: the pool of masking functions, packet masking and trial
//!   decryption.
//! * [`dissemination`]: packetizing blocks and the synchronized shuffle rounds.
//! * [`ttp`]: runtime third-party selection, collection, reassembly and
//!   aggregation.
//! * [`threat`]: closed-form leak probabilities, adversary simulations and the
//!   Monte-Carlo estimator that ties them together.
//! * [`harness`]: configuration, the secure in-process bus, the end-to-end
//!   driver with its transcript, and file formats used by the CLI.

pub mod dissemination;
pub mod error;
pub mod harness;
pub mod maskpool;
pub mod seed;
pub mod threat;
pub mod ttp;

pub use dissemination::{
    depacketize, init_session, packetize, run_dissemination, shuffle_round, DataBlock,
    PartyState, SessionState,
};
pub use error::{ConfigError, Error, Result};
pub use harness::{
    config::{validate_config, AggregateKind, RawConfig, SessionConfig},
    run_protocol, verify_against_oracle, Transcript,
};
pub use maskpool::{
    build_pool, decrypt_packet, draw_function, encrypt_packet, mask_values, trial_decrypt,
    EncryptedPacket, FunctionPool, MaskFunction, Packet,
};
pub use threat::{
    leak_curve, monte_carlo_leak, p_party_malicious, simulate_coalition, simulate_malicious_ttp,
    single_party_decrypt_fraction, total_leak_probability, LeakEstimate, LinkabilityReport,
    Probability,
};
pub use ttp::{collect, compute_aggregate, reassemble, select_ttp, PublicResult, TtpNode};
