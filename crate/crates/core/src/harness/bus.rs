//! The secure channels, modelled as a trusted in-process bus.
//!
//! Messages are queued per recipient and can only be drained by that
//! recipient. Every read is written to an access log so that the exactly-once,
//! recipient-only delivery contract can be audited after a run.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskpool::EncryptedPacket;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    Coordinator,
    Party(usize),
    Ttp(usize),
}

/// Everything that can travel over a channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    Packet(EncryptedPacket),
    TtpSelected { ttp_id: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub id: u64,
    pub from: Endpoint,
    pub to: Endpoint,
    pub message: Message,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub message_id: u64,
    pub reader: Endpoint,
}

#[derive(Debug, Default)]
pub struct SecureBus {
    next_id: u64,
    queues: BTreeMap<Endpoint, VecDeque<Envelope>>,
    routes: Vec<(Endpoint, Endpoint)>,
    access_log: Vec<Access>,
    delivered: Vec<Envelope>,
}

impl SecureBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, from: Endpoint, to: Endpoint, message: Message) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.routes.push((from, to));
        self.queues.entry(to).or_default().push_back(Envelope {
            id,
            from,
            to,
            message,
        });
        id
    }

    /// Drains everything queued for `reader`, in send order.
    pub fn receive(&mut self, reader: Endpoint) -> Vec<Envelope> {
        let batch: Vec<Envelope> = self
            .queues
            .get_mut(&reader)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default();
        for envelope in &batch {
            self.access_log.push(Access {
                message_id: envelope.id,
                reader,
            });
        }
        self.delivered.extend(batch.iter().cloned());
        batch
    }

    pub fn sent(&self) -> u64 {
        self.next_id
    }

    pub fn pending(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn access_log(&self) -> &[Access] {
        &self.access_log
    }

    /// Every envelope handed to a reader so far.
    pub fn delivered(&self) -> &[Envelope] {
        &self.delivered
    }

    /// Checks that every sent message was read exactly once, and only by its
    /// addressee.
    pub fn audit(&self) -> Result<()> {
        let mut reads = vec![0usize; self.routes.len()];
        for access in &self.access_log {
            let Some((_, to)) = self.routes.get(access.message_id as usize) else {
                return Err(Error::Channel(format!("read of unknown message {}", access.message_id)));
            };
            if *to != access.reader {
                return Err(Error::Channel(format!(
                    "message {} addressed to {to:?} was read by {:?}",
                    access.message_id, access.reader
                )));
            }
            reads[access.message_id as usize] += 1;
        }
        match reads.iter().position(|&r| r != 1) {
            Some(id) => Err(Error::Channel(format!("message {id} was read {} times", reads[id]))),
            None => Ok(()),
        }
    }
}
