//! ID-MAC: identification-addressed polling over the shared medium.
//!
//! The central node (master) divides each round into N slots, one per
//! thermometer, and broadcasts a poll carrying the target's identification
//! code. Only the matching slave responds: it samples its probe, carrier
//! senses the medium, transmits its reading, and waits for the master's
//! acknowledgement. The master serializes all polls, so slave data frames can
//! never collide with each other regardless of losses.
//!
//! Failure handling keeps the TDMA schedule rigid: a timed-out exchange is
//! re-polled within its own slot up to `data_retries` times and then recorded
//! as a miss; slot boundaries never move.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

/// Unique identification code built into each thermometer.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const POLL_WIRE_BYTES: usize = 12;
pub const DATA_WIRE_BYTES: usize = 16;
pub const ACK_WIRE_BYTES: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("roster is empty")]
    EmptyRoster,
    #[error("duplicate node id {0} in roster")]
    DuplicateNodeId(NodeId),
    #[error("slot overrun: previous exchange still pending at {0}")]
    SlotOverrun(SimTime),
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
}

/// Wire messages. Sizes are fixed per variant; see [`Packet::wire_size`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Packet {
    Poll { target: NodeId, seq: u16 },
    Data { sender: NodeId, seq: u16, reading_c: f64, sample_time: SimTime },
    Ack { target: NodeId, seq: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacketKind {
    Poll,
    Data,
    Ack,
}

impl Packet {
    pub fn kind(&self) -> PacketKind {
        match self {
            Packet::Poll { .. } => PacketKind::Poll,
            Packet::Data { .. } => PacketKind::Data,
            Packet::Ack { .. } => PacketKind::Ack,
        }
    }

    pub fn seq(&self) -> u16 {
        match self {
            Packet::Poll { seq, .. } | Packet::Data { seq, .. } | Packet::Ack { seq, .. } => *seq,
        }
    }

    pub fn wire_size(&self) -> usize {
        match self {
            Packet::Poll { .. } => POLL_WIRE_BYTES,
            Packet::Data { .. } => DATA_WIRE_BYTES,
            Packet::Ack { .. } => ACK_WIRE_BYTES,
        }
    }

    /// Trace-dump layout: type tag (1), id (8, big endian), seq (2, big
    /// endian), reading as signed centi-degrees (2, Data only), zero-padded
    /// to the wire size. Loss is decided by the channel model, so no CRC.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.wire_size());
        match self {
            Packet::Poll { target, seq } => {
                buf.push(0x01);
                buf.extend_from_slice(&target.0.to_be_bytes());
                buf.extend_from_slice(&seq.to_be_bytes());
            }
            Packet::Data { sender, seq, reading_c, .. } => {
                buf.push(0x02);
                buf.extend_from_slice(&sender.0.to_be_bytes());
                buf.extend_from_slice(&seq.to_be_bytes());
                let centi = (reading_c * 100.0).round() as i16;
                buf.extend_from_slice(&centi.to_be_bytes());
            }
            Packet::Ack { target, seq } => {
                buf.push(0x03);
                buf.extend_from_slice(&target.0.to_be_bytes());
                buf.extend_from_slice(&seq.to_be_bytes());
            }
        }
        buf.resize(self.wire_size(), 0);
        buf
    }
}

/// How the master picks the next slot's target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PollPolicy {
    #[default]
    Sequential,
    Random,
}

/// Protocol timing knobs. Defaults fit a full poll/data/ack exchange plus
/// retries comfortably inside the minimum slot at 250 kbps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTiming {
    pub round_period: SimTime,
    pub cs_delay: SimTime,
    pub cs_retries: u32,
    pub cs_backoff: SimTime,
    pub poll_timeout: SimTime,
    pub data_retries: u32,
    pub min_slot: SimTime,
    pub ack_timeout: SimTime,
}

impl Default for ProtocolTiming {
    fn default() -> Self {
        ProtocolTiming {
            round_period: SimTime::from_secs(1),
            cs_delay: SimTime::from_millis(1),
            cs_retries: 3,
            cs_backoff: SimTime::from_millis(2),
            poll_timeout: SimTime::from_millis(20),
            data_retries: 2,
            min_slot: SimTime::from_millis(100),
            ack_timeout: SimTime::from_millis(10),
        }
    }
}

impl ProtocolTiming {
    /// Validates timing against a roster of `n` nodes. The round must divide
    /// exactly into N slots and each slot must hold at least one full
    /// poll-timeout window.
    pub fn validate(&self, n: usize) -> Result<(), ProtocolError> {
        if n == 0 {
            return Err(ProtocolError::EmptyRoster);
        }
        if self.round_period.as_micros() % n as u64 != 0 {
            return Err(ProtocolError::InvalidTiming(format!(
                "round_period {} does not divide into {} slots",
                self.round_period, n
            )));
        }
        let slot = SimTime::from_micros(self.round_period.as_micros() / n as u64);
        if slot < self.min_slot {
            return Err(ProtocolError::InvalidTiming(format!(
                "slot {slot} below minimum {}",
                self.min_slot
            )));
        }
        if self.poll_timeout >= self.min_slot {
            return Err(ProtocolError::InvalidTiming(format!(
                "poll_timeout {} must be shorter than the minimum slot {}",
                self.poll_timeout, self.min_slot
            )));
        }
        if self.poll_timeout.is_zero() || self.min_slot.is_zero() {
            return Err(ProtocolError::InvalidTiming("timeouts must be positive".into()));
        }
        Ok(())
    }

    pub fn slot_for(&self, n: usize) -> SimTime {
        SimTime::from_micros(self.round_period.as_micros() / n as u64)
    }
}

/// Outcome of one scheduled slot, as logged by the master.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotOutcome {
    pub slot_index: u64,
    pub target: NodeId,
    pub started: SimTime,
    pub result: SlotResult,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlotResult {
    Acked { reading_c: f64, sample_time: SimTime },
    Missed,
}

impl SlotOutcome {
    pub fn acked(&self) -> bool {
        matches!(self.result, SlotResult::Acked { .. })
    }
}

#[derive(Debug, Clone, Default)]
pub struct MasterStats {
    pub polls_sent: u64,
    pub records_emitted: u64,
    pub acks_sent: u64,
    pub timeouts: u64,
    pub stale_data: u64,
    pub misses: BTreeMap<NodeId, u64>,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    target: NodeId,
    seq: u16,
    attempts_left: u32,
    slot_end: SimTime,
    slot_index: u64,
    slot_started: SimTime,
}

/// What the master wants done after a timeout fired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeoutAction {
    /// Re-poll the same target; a fresh deadline applies.
    Retry(Packet),
    /// Slot closed as a miss for this node.
    Miss { target: NodeId },
    /// Timeout no longer relevant (exchange already closed).
    Ignore,
}

/// Master reaction to an incoming data frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataDisposition {
    /// Fresh reading: acknowledge and emit a record.
    Fresh { ack: Packet, outcome: SlotOutcome },
    /// Sequence mismatch (late or duplicate); dropped and counted.
    Stale,
}

/// The central node's polling state machine.
pub struct Master {
    roster: Vec<NodeId>,
    policy: PollPolicy,
    timing: ProtocolTiming,
    slot: SimTime,
    next_roster_idx: usize,
    seq: u16,
    pending: Option<Pending>,
    slot_index: u64,
    stats: MasterStats,
}

impl Master {
    pub fn new(
        roster: Vec<NodeId>,
        policy: PollPolicy,
        timing: ProtocolTiming,
    ) -> Result<Self, ProtocolError> {
        if roster.is_empty() {
            return Err(ProtocolError::EmptyRoster);
        }
        let mut seen = BTreeSet::new();
        for id in &roster {
            if !seen.insert(*id) {
                return Err(ProtocolError::DuplicateNodeId(*id));
            }
        }
        timing.validate(roster.len())?;
        let slot = timing.slot_for(roster.len());
        Ok(Master {
            roster,
            policy,
            timing,
            slot,
            next_roster_idx: 0,
            seq: 0,
            pending: None,
            slot_index: 0,
            stats: MasterStats::default(),
        })
    }

    pub fn roster(&self) -> &[NodeId] {
        &self.roster
    }

    pub fn slot_duration(&self) -> SimTime {
        self.slot
    }

    pub fn timing(&self) -> &ProtocolTiming {
        &self.timing
    }

    pub fn stats(&self) -> &MasterStats {
        &self.stats
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// Next target under the configured policy. Sequential cycles the roster
    /// in order; random draws uniformly with replacement.
    pub fn next_target(&mut self, rng: &mut crate::rng::RngStream) -> NodeId {
        match self.policy {
            PollPolicy::Sequential => {
                let id = self.roster[self.next_roster_idx];
                self.next_roster_idx = (self.next_roster_idx + 1) % self.roster.len();
                id
            }
            PollPolicy::Random => self.roster[rng.index(self.roster.len())],
        }
    }

    fn next_seq(&mut self) -> u16 {
        let s = self.seq;
        self.seq = self.seq.wrapping_add(1);
        s
    }

    /// Opens the next slot at `now` and returns the poll to broadcast.
    pub fn start_slot(
        &mut self,
        now: SimTime,
        rng: &mut crate::rng::RngStream,
    ) -> Result<Packet, ProtocolError> {
        if self.pending.is_some() {
            return Err(ProtocolError::SlotOverrun(now));
        }
        let target = self.next_target(rng);
        let seq = self.next_seq();
        self.pending = Some(Pending {
            target,
            seq,
            attempts_left: self.timing.data_retries,
            slot_end: now + self.slot,
            slot_index: self.slot_index,
            slot_started: now,
        });
        self.slot_index += 1;
        self.stats.polls_sent += 1;
        Ok(Packet::Poll { target, seq })
    }

    /// Deadline for the poll that was just transmitted.
    pub fn poll_deadline(&self, now: SimTime) -> SimTime {
        now + self.timing.poll_timeout
    }

    /// Handles a decoded data frame.
    pub fn on_data(
        &mut self,
        sender: NodeId,
        seq: u16,
        reading_c: f64,
        sample_time: SimTime,
    ) -> DataDisposition {
        match self.pending {
            Some(p) if p.seq == seq && p.target == sender => {
                self.pending = None;
                self.stats.records_emitted += 1;
                self.stats.acks_sent += 1;
                DataDisposition::Fresh {
                    ack: Packet::Ack { target: sender, seq },
                    outcome: SlotOutcome {
                        slot_index: p.slot_index,
                        target: p.target,
                        started: p.slot_started,
                        result: SlotResult::Acked { reading_c, sample_time },
                    },
                }
            }
            _ => {
                self.stats.stale_data += 1;
                DataDisposition::Stale
            }
        }
    }

    /// Handles the poll deadline expiring. Retries stay strictly inside the
    /// slot so a miss can never delay the next slot's start.
    pub fn on_timeout(&mut self, now: SimTime) -> (TimeoutAction, Option<SlotOutcome>) {
        let Some(p) = self.pending else {
            return (TimeoutAction::Ignore, None);
        };
        self.stats.timeouts += 1;
        if p.attempts_left > 0 && now + self.timing.poll_timeout < p.slot_end {
            let seq = self.next_seq();
            self.pending = Some(Pending { seq, attempts_left: p.attempts_left - 1, ..p });
            self.stats.polls_sent += 1;
            (TimeoutAction::Retry(Packet::Poll { target: p.target, seq }), None)
        } else {
            self.pending = None;
            *self.stats.misses.entry(p.target).or_insert(0) += 1;
            (
                TimeoutAction::Miss { target: p.target },
                Some(SlotOutcome {
                    slot_index: p.slot_index,
                    target: p.target,
                    started: p.slot_started,
                    result: SlotResult::Missed,
                }),
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlavePhase {
    Idle,
    Sensing,
    Transmitting,
    AwaitAck,
}

#[derive(Debug, Clone, Default)]
pub struct SlaveStats {
    pub polls_matched: u64,
    pub data_sent: u64,
    pub acks_received: u64,
    pub acks_lost: u64,
    pub slots_abandoned: u64,
}

/// Slave reaction to a decoded poll.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PollReaction {
    /// Identification mismatch: stay idle, transmit nothing.
    Ignore,
    /// Matched: sample the probe now, then carrier sense after `cs_delay`.
    SampleAndSense,
}

/// Slave reaction to a carrier-sense result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CsReaction {
    /// Medium free: transmit the buffered reading.
    Transmit(Packet),
    /// Medium busy: sense again after the backoff.
    Backoff,
    /// Retries exhausted: give the slot up.
    Abandon,
}

/// One thermometer's protocol state machine. A slave transmits data only from
/// the Sensing phase after an idle carrier-sense result.
pub struct Slave {
    id: NodeId,
    timing: ProtocolTiming,
    phase: SlavePhase,
    cs_attempts_left: u32,
    reply_seq: u16,
    reading_c: f64,
    sample_time: SimTime,
    stats: SlaveStats,
}

impl Slave {
    pub fn new(id: NodeId, timing: ProtocolTiming) -> Self {
        Slave {
            id,
            timing,
            phase: SlavePhase::Idle,
            cs_attempts_left: 0,
            reply_seq: 0,
            reading_c: 0.0,
            sample_time: SimTime::ZERO,
            stats: SlaveStats::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn phase(&self) -> SlavePhase {
        self.phase
    }

    pub fn stats(&self) -> &SlaveStats {
        &self.stats
    }

    /// Every slave receives the broadcast poll and filters by its code.
    pub fn on_poll(&mut self, target: NodeId, seq: u16) -> PollReaction {
        if target != self.id {
            // Another node's slot has begun; any exchange of ours is over.
            if self.phase == SlavePhase::AwaitAck {
                self.stats.acks_lost += 1;
            }
            if self.phase != SlavePhase::Idle {
                self.phase = SlavePhase::Idle;
            }
            return PollReaction::Ignore;
        }
        // A matched poll always starts a fresh exchange, including re-polls
        // after the master timed out waiting for our (lost) data.
        if self.phase == SlavePhase::AwaitAck {
            self.stats.acks_lost += 1;
        }
        self.phase = SlavePhase::Sensing;
        self.reply_seq = seq;
        self.cs_attempts_left = self.timing.cs_retries;
        self.stats.polls_matched += 1;
        PollReaction::SampleAndSense
    }

    /// Stores the freshly sampled reading for the pending exchange.
    pub fn buffer_reading(&mut self, reading_c: f64, sample_time: SimTime) {
        debug_assert_eq!(self.phase, SlavePhase::Sensing);
        self.reading_c = reading_c;
        self.sample_time = sample_time;
    }

    pub fn on_carrier_sense(&mut self, medium: crate::channel::CarrierSense) -> CsReaction {
        debug_assert_eq!(self.phase, SlavePhase::Sensing);
        match medium {
            crate::channel::CarrierSense::Idle => {
                self.phase = SlavePhase::Transmitting;
                self.stats.data_sent += 1;
                CsReaction::Transmit(Packet::Data {
                    sender: self.id,
                    seq: self.reply_seq,
                    reading_c: self.reading_c,
                    sample_time: self.sample_time,
                })
            }
            crate::channel::CarrierSense::Busy => {
                if self.cs_attempts_left > 0 {
                    self.cs_attempts_left -= 1;
                    CsReaction::Backoff
                } else {
                    self.phase = SlavePhase::Idle;
                    self.stats.slots_abandoned += 1;
                    CsReaction::Abandon
                }
            }
        }
    }

    /// The data frame left the antenna; wait for the acknowledgement.
    pub fn on_data_sent(&mut self) {
        debug_assert_eq!(self.phase, SlavePhase::Transmitting);
        self.phase = SlavePhase::AwaitAck;
    }

    /// Returns true when this ack closes the pending exchange.
    pub fn on_ack(&mut self, target: NodeId, seq: u16) -> bool {
        if target == self.id && self.phase == SlavePhase::AwaitAck && seq == self.reply_seq {
            self.phase = SlavePhase::Idle;
            self.stats.acks_received += 1;
            true
        } else {
            false
        }
    }

    /// No ack arrived in time; the master has the data or will re-poll.
    pub fn on_ack_timeout(&mut self) {
        if self.phase == SlavePhase::AwaitAck {
            self.phase = SlavePhase::Idle;
            self.stats.acks_lost += 1;
        }
    }
}

/// Per-node delay figures for a deployment of `n` thermometers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayStats {
    pub n: u32,
    /// Slot width when the round is held fixed; shrinks as 1/n.
    pub slot: SimTime,
    /// Interval between successive samples of one node.
    pub per_node_interval: SimTime,
    /// Worst-case wait from a reading request to its slot.
    pub worst_case_wait: SimTime,
    /// Smallest round period that still gives every node its minimum slot;
    /// grows linearly in n.
    pub min_feasible_round: SimTime,
}

/// Delay scaling of the polling schedule: holding the round fixed shrinks the
/// per-node slot as 1/n, and the minimum feasible round grows as n times the
/// minimum slot.
pub fn measurement_delay(
    n: u32,
    round_period: SimTime,
    min_slot: SimTime,
) -> Result<DelayStats, ProtocolError> {
    if n == 0 {
        return Err(ProtocolError::EmptyRoster);
    }
    Ok(DelayStats {
        n,
        slot: SimTime::from_micros(round_period.as_micros() / n as u64),
        per_node_interval: round_period,
        worst_case_wait: round_period,
        min_feasible_round: min_slot * n as u64,
    })
}
