//! Deterministic discrete-event engine.
//!
//! Events fire in nondecreasing `fire_at` order; equal times break ties by
//! insertion sequence. The engine is single-threaded: state is only mutated
//! inside [`Engine::run_until`], and distinct engine instances share nothing.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("cannot schedule event at {requested} with clock at {clock}")]
    SchedulingInPast { requested: SimTime, clock: SimTime },
}

/// Permits cancelling a scheduled event before it fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// An event as handed to the processing callback.
#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_at: SimTime,
    /// Insertion sequence number; unique and strictly increasing.
    pub seq: u64,
    pub payload: P,
}

struct Queued<P> {
    fire_at: SimTime,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<P> Eq for Queued<P> {}

impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so the BinaryHeap pops the earliest (fire_at, seq) first.
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    pub events_processed: u64,
    pub final_clock: SimTime,
}

/// Event queue plus simulation clock.
pub struct Engine<P> {
    clock: SimTime,
    queue: BinaryHeap<Queued<P>>,
    next_seq: u64,
    cancelled: HashSet<u64>,
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Engine { clock: SimTime::ZERO, queue: BinaryHeap::new(), next_seq: 0, cancelled: HashSet::new() }
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    /// Number of queued events that have not been cancelled.
    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    pub fn schedule(&mut self, fire_at: SimTime, payload: P) -> Result<EventHandle, EngineError> {
        if fire_at < self.clock {
            return Err(EngineError::SchedulingInPast { requested: fire_at, clock: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued { fire_at, seq, payload });
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: P) -> Result<EventHandle, EngineError> {
        self.schedule(self.clock + delay, payload)
    }

    /// Cancelled events never reach the callback. Cancelling an event that
    /// already fired is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_seq {
            self.cancelled.insert(handle.0);
        }
    }

    /// Processes every event with `fire_at <= t_end` in (fire_at, seq) order,
    /// then advances the clock to `t_end`. The callback may schedule and
    /// cancel further events; it must not call `run_until` reentrantly.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> RunStats
    where
        F: FnMut(&mut Self, Event<P>),
    {
        let mut processed = 0u64;
        while let Some(head) = self.queue.peek() {
            if head.fire_at > t_end {
                break;
            }
            let queued = self.queue.pop().expect("peeked entry present");
            if self.cancelled.remove(&queued.seq) {
                continue;
            }
            debug_assert!(queued.fire_at >= self.clock);
            self.clock = queued.fire_at;
            processed += 1;
            handler(
                self,
                Event { fire_at: queued.fire_at, seq: queued.seq, payload: queued.payload },
            );
        }
        if t_end > self.clock {
            self.clock = t_end;
        }
        RunStats { events_processed: processed, final_clock: self.clock }
    }
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}
