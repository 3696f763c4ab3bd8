use alloc::collections::VecDeque;
use alloc::vec::Vec;

use super::messages::{Direction, RoundMessage};

/// Message recipient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Dso,
    /// One-based area id.
    Ams(usize),
}

impl Endpoint {
    pub fn of(msg: &RoundMessage) -> Self {
        match msg.direction {
            Direction::Uplink => Endpoint::Dso,
            Direction::Downlink => Endpoint::Ams(msg.area),
        }
    }
}

pub trait Transport {
    fn send(&mut self, msg: RoundMessage);
    /// Removes and returns every pending message for `to`, in send order.
    fn deliver(&mut self, to: Endpoint) -> Vec<RoundMessage>;
    fn messages_sent(&self) -> usize;
    fn bytes_sent(&self) -> usize;
}

/// Deterministic FIFO queue with an optional log of every message sent.
#[derive(Clone, Debug, Default)]
pub struct InProcessTransport {
    pending: VecDeque<RoundMessage>,
    log: Option<Vec<RoundMessage>>,
    messages: usize,
    bytes: usize,
}

impl InProcessTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_log() -> Self {
        Self { log: Some(Vec::new()), ..Self::default() }
    }

    pub fn log(&self) -> &[RoundMessage] {
        self.log.as_deref().unwrap_or(&[])
    }
}

impl Transport for InProcessTransport {
    fn send(&mut self, msg: RoundMessage) {
        self.messages += 1;
        self.bytes += msg.size();
        if let Some(log) = &mut self.log {
            log.push(msg.clone());
        }
        self.pending.push_back(msg);
    }

    fn deliver(&mut self, to: Endpoint) -> Vec<RoundMessage> {
        let mut out = Vec::new();
        let mut keep = VecDeque::with_capacity(self.pending.len());
        for m in self.pending.drain(..) {
            if Endpoint::of(&m) == to {
                out.push(m);
            } else {
                keep.push_back(m);
            }
        }
        self.pending = keep;
        out
    }

    fn messages_sent(&self) -> usize {
        self.messages
    }

    fn bytes_sent(&self) -> usize {
        self.bytes
    }
}
