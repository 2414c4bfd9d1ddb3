//! End-to-end session driver.
//!
//! [`run_protocol`] walks the ten protocol steps in order, moving every
//! packet over the [`bus::SecureBus`], and records one [`Event`] per step.
//! Payloads never enter the record; each event carries a 64-bit digest of
//! its payload instead (see [`crate::seed::Digest64`]).
//!
//! # Transcript digest
//!
//! The transcript digest is [`Digest64`] over this little-endian encoding:
//!
//! 1. the config: `n, m, packets_per_party, packet_size, rounds (effective),
//!    pool_size, aggregate code, master_seed, trials (0 if unset)`, each a `u64`;
//! 2. the event count as `u64`, then per event: `step` as one byte, `actor`
//!    and `label` as length-prefixed UTF-8, `payload_digest` as `u64`, the
//!    round-digest count as `u64` followed by each round digest;
//! 3. the outcome: byte `0` and the result encoding (kind code byte,
//!    announced byte, `n_blocks`, value count, values), or byte `1`, the
//!    failing step byte and the length-prefixed error text.

pub mod bus;
pub mod config;
pub mod curve;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dissemination::{init_session, DataBlock, SessionState};
use crate::error::{ConfigError, Error, Result};
use crate::maskpool::EncryptedPacket;
use crate::seed::{derive_seed, digest64, Digest64, LABEL_INPUTS};
use crate::ttp::{collect, combine_seeds, compute_aggregate, reassemble, select_ttp, PublicResult, TtpNode};
use bus::{Endpoint, Message, SecureBus};
use config::SessionConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub step: u8,
    pub actor: String,
    pub label: String,
    pub payload_digest: u64,
    /// Per-round movement digests; only the dissemination step fills this.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed { result: PublicResult },
    Aborted { step: u8, error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub config: SessionConfig,
    pub events: Vec<Event>,
    pub outcome: Outcome,
    pub transcript_digest: u64,
}

impl Transcript {
    fn seal(config: SessionConfig, events: Vec<Event>, outcome: Outcome) -> Self {
        let mut t = Transcript {
            config,
            events,
            outcome,
            transcript_digest: 0,
        };
        t.transcript_digest = digest64(&t.canonical_bytes());
        t
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = self.config.canonical_bytes();
        let field = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(&(self.events.len() as u64).to_le_bytes());
        for e in &self.events {
            out.push(e.step);
            field(&mut out, &e.actor);
            field(&mut out, &e.label);
            out.extend_from_slice(&e.payload_digest.to_le_bytes());
            out.extend_from_slice(&(e.rounds.len() as u64).to_le_bytes());
            for r in &e.rounds {
                out.extend_from_slice(&r.to_le_bytes());
            }
        }
        match &self.outcome {
            Outcome::Completed { result } => {
                out.push(0);
                out.extend_from_slice(&result.canonical_bytes());
            }
            Outcome::Aborted { step, error } => {
                out.push(1);
                out.push(*step);
                field(&mut out, error);
            }
        }
        out
    }

    pub fn result(&self) -> Option<&PublicResult> {
        match &self.outcome {
            Outcome::Completed { result } => Some(result),
            Outcome::Aborted { .. } => None,
        }
    }

    /// One JSON object per line with `step`, `actor`, `event` and
    /// `payload_digest`; an aborted session ends with an `abort` line.
    pub fn trace_lines(&self) -> Vec<String> {
        #[derive(Serialize)]
        struct Line<'a> {
            step: u8,
            actor: &'a str,
            event: &'a str,
            payload_digest: String,
        }
        let mut lines: Vec<String> = self
            .events
            .iter()
            .map(|e| {
                serde_json::to_string(&Line {
                    step: e.step,
                    actor: &e.actor,
                    event: &e.label,
                    payload_digest: format!("{:#018x}", e.payload_digest),
                })
                .expect("plain record")
            })
            .collect();
        if let Outcome::Aborted { step, error } = &self.outcome {
            lines.push(
                serde_json::to_string(&Line {
                    step: *step,
                    actor: "coordinator",
                    event: "abort",
                    payload_digest: format!("{:#018x}", digest64(error.as_bytes())),
                })
                .expect("plain record"),
            );
        }
        lines
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        for line in self.trace_lines() {
            writeln!(file, "{line}")?;
        }
        Ok(())
    }
}

/// Deliberate faults for exercising abort paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// The third party loses one packet before collection.
    DropPacket,
    /// One packet reaches the third party twice.
    DuplicatePacket,
    /// One masked byte is flipped on the way to the third party.
    TamperPayload,
}

/// Everything a run leaves behind, for tests and analyses that need more
/// than the transcript.
#[derive(Debug)]
pub struct SessionRun {
    pub transcript: Transcript,
    /// Party-layer state after dissemination, if the run got that far.
    pub session: Option<SessionState>,
    pub selected_ttp: Option<usize>,
    /// Packets as they reached the selected third party, with the forwarding
    /// party's endpoint.
    pub ttp_arrivals: Vec<(usize, EncryptedPacket)>,
    pub bus: SecureBus,
}

struct Recorder {
    events: Vec<Event>,
}

impl Recorder {
    fn record(&mut self, step: u8, actor: impl Into<String>, label: &str, payload_digest: u64) {
        self.events.push(Event {
            step,
            actor: actor.into(),
            label: label.into(),
            payload_digest,
            rounds: Vec::new(),
        });
    }
}

pub fn run_protocol(config: &SessionConfig, blocks: &[DataBlock]) -> Result<Transcript, ConfigError> {
    run_protocol_detailed(config, blocks, None).map(|run| run.transcript)
}

/// Runs a session, optionally injecting a fault. Configuration errors are
/// returned; any later failure aborts the session and is recorded in the
/// transcript with the step at which it happened.
pub fn run_protocol_detailed(
    config: &SessionConfig,
    blocks: &[DataBlock],
    fault: Option<Fault>,
) -> Result<SessionRun, ConfigError> {
    config.validate()?;
    if blocks.len() != config.n {
        return Err(ConfigError::PartyCountMismatch {
            expected: config.n,
            got: blocks.len(),
        });
    }
    let mut run = SessionRun {
        transcript: Transcript::seal(config.clone(), Vec::new(), Outcome::Aborted { step: 0, error: String::new() }),
        session: None,
        selected_ttp: None,
        ttp_arrivals: Vec::new(),
        bus: SecureBus::new(),
    };
    let mut rec = Recorder { events: Vec::new() };
    let outcome = match drive(config, blocks, fault, &mut run, &mut rec) {
        Ok(result) => Outcome::Completed { result },
        Err((step, e)) => Outcome::Aborted {
            step,
            error: e.to_string(),
        },
    };
    run.transcript = Transcript::seal(config.clone(), rec.events, outcome);
    Ok(run)
}

fn drive(
    config: &SessionConfig,
    blocks: &[DataBlock],
    fault: Option<Fault>,
    run: &mut SessionRun,
    rec: &mut Recorder,
) -> Result<PublicResult, (u8, Error)> {
    let n = config.n;
    rec.record(1, "coordinator", "define-parties", Digest64::new().u64(n as u64).finish());

    let pool = config.build_pool().map_err(|e| (2, e.into()))?;
    rec.record(2, "ttp-pool", "define-function-pool", digest64(&pool.canonical_bytes()));

    let mut session = init_session(config, blocks).map_err(|e| match e {
        Error::PoolExhausted(_) => (3, e),
        e => (4, e),
    })?;
    let mut drawn = Digest64::new();
    for p in session.parties() {
        drawn.u64(p.drawn_function().id as u64);
    }
    rec.record(3, "parties", "draw-functions", drawn.finish());
    let mut sealed = Digest64::new();
    for (_, e) in session.holdings() {
        sealed.field(&e.canonical_bytes());
    }
    rec.record(4, "parties", "packetize-and-mask", sealed.finish());

    let rounds = config.effective_rounds();
    let mut round_digests = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let plan = session.plan_round();
        let mut moved = Digest64::new();
        for (party, destinations) in session.parties().iter().zip(&plan) {
            for (packet, &to) in party.held().iter().zip(destinations) {
                moved.u64(party.party_id() as u64).u64(to as u64).field(&packet.canonical_bytes());
                run.bus.send(
                    Endpoint::Party(party.party_id()),
                    Endpoint::Party(to),
                    Message::Packet(packet.clone()),
                );
            }
        }
        let arrivals = (0..n)
            .map(|p| {
                run.bus
                    .receive(Endpoint::Party(p))
                    .into_iter()
                    .map(|env| match env.message {
                        Message::Packet(e) => Ok(e),
                        other => Err(Error::Channel(format!("unexpected {other:?} during dissemination"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| (5, e))?;
        session.complete_round(arrivals).map_err(|e| (5, e))?;
        round_digests.push(moved.finish());
    }
    let mut all_rounds = Digest64::new();
    for d in &round_digests {
        all_rounds.u64(*d);
    }
    rec.record(5, "parties", "disseminate", all_rounds.finish());
    rec.events.last_mut().expect("just recorded").rounds = round_digests;
    rec.record(6, "coordinator", "repeat-dissemination", Digest64::new().u64(rounds as u64).finish());

    let party_seeds: Vec<u64> = (0..n).map(|p| config.party_seed(p)).collect();
    let selected = select_ttp(config.m, combine_seeds(&party_seeds, config.session_nonce()))
        .map_err(|e| (7, e.into()))?;
    for p in 0..n {
        run.bus.send(
            Endpoint::Coordinator,
            Endpoint::Party(p),
            Message::TtpSelected { ttp_id: selected },
        );
        for env in run.bus.receive(Endpoint::Party(p)) {
            if env.message != (Message::TtpSelected { ttp_id: selected }) {
                return Err((7, Error::Channel(format!("unexpected {:?} at selection", env.message))));
            }
        }
    }
    run.selected_ttp = Some(selected);
    rec.record(
        7,
        "coordinator",
        "select-ttp",
        Digest64::new().u64(config.m as u64).u64(selected as u64).finish(),
    );

    let ttp_endpoint = Endpoint::Ttp(selected);
    for party in session.parties() {
        for packet in party.held() {
            run.bus.send(Endpoint::Party(party.party_id()), ttp_endpoint, Message::Packet(packet.clone()));
        }
    }
    let mut arrivals = Vec::with_capacity(config.total_packets());
    for env in run.bus.receive(ttp_endpoint) {
        match (env.from, env.message) {
            (Endpoint::Party(p), Message::Packet(e)) => arrivals.push((p, e)),
            (from, message) => {
                return Err((8, Error::Channel(format!("unexpected {message:?} from {from:?}"))));
            }
        }
    }
    match fault {
        Some(Fault::DropPacket) => {
            arrivals.pop();
        }
        Some(Fault::DuplicatePacket) => {
            if let Some(first) = arrivals.first().cloned() {
                arrivals.push(first);
            }
        }
        Some(Fault::TamperPayload) => {
            if let Some((_, e)) = arrivals.first_mut() {
                if let Some(b) = e.masked_payload.first_mut() {
                    *b ^= 0x01;
                }
            }
        }
        None => {}
    }
    run.ttp_arrivals = arrivals.clone();
    run.session = Some(session);
    let inbox: Vec<EncryptedPacket> = arrivals.into_iter().map(|(_, e)| e).collect();
    let node = TtpNode::new(selected, pool, n, config.packets_per_party);
    let node = collect(node, inbox).map_err(|e| (8, e))?;
    let mut inbox_digest = Digest64::new();
    for e in node.inbox() {
        inbox_digest.field(&e.canonical_bytes());
    }
    rec.record(8, format!("ttp-{selected}"), "collect", inbox_digest.finish());

    let recovered = reassemble(&node).map_err(|e| (9, e))?;
    let mut blocks_digest = Digest64::new();
    for b in &recovered {
        blocks_digest.field(&b.canonical_bytes());
    }
    rec.record(9, format!("ttp-{selected}"), "reassemble", blocks_digest.finish());

    let result = compute_aggregate(&recovered, config.aggregate).map_err(|e| (10, e))?;
    run.bus.audit().map_err(|e| (10, e))?;
    rec.record(10, format!("ttp-{selected}"), "announce", digest64(&result.canonical_bytes()));
    Ok(result)
}

/// Result of checking a protocol run against the aggregate computed
/// directly on the plaintext inputs.
#[derive(Debug, Clone)]
pub struct Verification {
    pub matched: bool,
    pub expected: Option<PublicResult>,
    pub transcript: Transcript,
    /// Human-readable difference when `matched` is false.
    pub diff: Option<String>,
}

pub fn verify_against_oracle(config: &SessionConfig, blocks: &[DataBlock]) -> Result<Verification, ConfigError> {
    verify_with(config, blocks, None)
}

pub fn verify_with(
    config: &SessionConfig,
    blocks: &[DataBlock],
    fault: Option<Fault>,
) -> Result<Verification, ConfigError> {
    let expected = compute_aggregate(blocks, config.aggregate).ok();
    let transcript = run_protocol_detailed(config, blocks, fault)?.transcript;
    let diff = match (&transcript.outcome, &expected) {
        (Outcome::Completed { result }, Some(want)) if result == want => None,
        (Outcome::Completed { result }, Some(want)) => {
            Some(format!("protocol announced {:?}, plaintext gives {:?}", result.values, want.values))
        }
        (Outcome::Completed { result }, None) => {
            Some(format!("protocol announced {:?}, plaintext aggregate is undefined", result.values))
        }
        (Outcome::Aborted { step, error }, _) => Some(format!("aborted at step {step}: {error}")),
    };
    Ok(Verification {
        matched: diff.is_none(),
        expected,
        transcript,
        diff,
    })
}

/// Deterministic inputs for a config: every party gets the same number of
/// values (as many as fit, at most eight), each below 2^32.
pub fn synthetic_blocks(config: &SessionConfig, seed: u64) -> Vec<DataBlock> {
    let width = DataBlock::max_values(config.block_capacity()).min(8);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, LABEL_INPUTS, 0));
    (0..config.n)
        .map(|_| DataBlock::new((0..width).map(|_| rng.random_range(0..1u64 << 32)).collect()))
        .collect()
}
