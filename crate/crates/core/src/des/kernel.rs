//! Future-event list and simulation clock.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::time::SimTime;

/// Identifies a scheduled event by its position in the total pop order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle {
    pub fire_at: SimTime,
    pub seq: u64,
}

/// A timestamped action in the future-event list.
#[derive(Debug)]
pub struct Event<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub action: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the earliest (fire_at, seq) pops first.
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("causality violation: event at {requested} scheduled while clock is at {now}")]
pub struct CausalityError {
    pub now: SimTime,
    pub requested: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelStats {
    pub events_processed: u64,
    pub final_clock: SimTime,
    /// FNV-1a digest over the `(fire_at, seq, tag)` of every processed event.
    pub trace_digest: u64,
}

/// Lets event payloads contribute a stable discriminant to the trace digest.
pub trait TraceTag {
    fn trace_tag(&self) -> u64 {
        0
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_mix(mut h: u64, word: u64) -> u64 {
    for b in word.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Single-threaded discrete-event kernel.
#[derive(Debug)]
pub struct Kernel<E> {
    heap: BinaryHeap<Event<E>>,
    now: SimTime,
    next_seq: u64,
    processed: u64,
    digest: u64,
}

impl<E> Default for Kernel<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Kernel<E> {
    pub fn new() -> Self {
        Kernel {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            processed: 0,
            digest: FNV_OFFSET,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Time of the earliest pending event.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.fire_at)
    }

    pub fn schedule(&mut self, fire_at: SimTime, action: E) -> Result<EventHandle, CausalityError> {
        if fire_at < self.now {
            return Err(CausalityError {
                now: self.now,
                requested: fire_at,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event {
            fire_at,
            seq,
            action,
        });
        Ok(EventHandle { fire_at, seq })
    }

    /// Removes and returns the next event, advancing the clock to its time.
    pub fn pop(&mut self) -> Option<Event<E>>
    where
        E: TraceTag,
    {
        let ev = self.heap.pop()?;
        assert!(ev.fire_at >= self.now, "clock moved backwards");
        self.now = ev.fire_at;
        self.processed += 1;
        let mut h = fnv_mix(self.digest, ev.fire_at.as_micros());
        h = fnv_mix(h, ev.seq);
        self.digest = fnv_mix(h, ev.action.trace_tag());
        Some(ev)
    }

    /// Processes every event with `fire_at <= t_end` in `(fire_at, seq)` order.
    ///
    /// The handler receives the kernel so it can schedule follow-up events.
    /// The clock ends at the time of the last processed event.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> KernelStats
    where
        E: TraceTag,
        F: FnMut(&mut Kernel<E>, Event<E>),
    {
        while self.peek_time().is_some_and(|t| t <= t_end) {
            let ev = self.pop().expect("peeked event vanished");
            handler(self, ev);
        }
        self.stats()
    }

    pub fn stats(&self) -> KernelStats {
        KernelStats {
            events_processed: self.processed,
            final_clock: self.now,
            trace_digest: self.digest,
        }
    }

    /// Removes all pending events in pop order without processing them.
    pub fn drain(&mut self) -> Vec<Event<E>> {
        let mut out = Vec::with_capacity(self.heap.len());
        while let Some(ev) = self.heap.pop() {
            out.push(ev);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::des::SimDuration;

    impl TraceTag for &'static str {}
    impl TraceTag for u32 {}

    fn pop_order(k: &mut Kernel<&'static str>) -> Vec<&'static str> {
        std::iter::from_fn(|| k.pop().map(|e| e.action)).collect()
    }

    #[test]
    fn pops_by_timestamp() {
        let mut k = Kernel::new();
        k.schedule(SimTime::from_micros(5), "five").unwrap();
        k.schedule(SimTime::from_micros(3), "three").unwrap();
        assert_eq!(pop_order(&mut k), ["three", "five"]);
    }

    #[test]
    fn ties_break_by_insertion() {
        let mut k = Kernel::new();
        k.schedule(SimTime::from_micros(7), "A").unwrap();
        k.schedule(SimTime::from_micros(7), "B").unwrap();
        assert_eq!(pop_order(&mut k), ["A", "B"]);
    }

    #[test]
    fn schedule_at_now_fires_before_later_events() {
        let mut k = Kernel::new();
        k.schedule(SimTime::from_micros(10), "first").unwrap();
        k.pop().unwrap();
        k.schedule(SimTime::from_micros(20), "later").unwrap();
        k.schedule(k.now(), "now").unwrap();
        assert_eq!(pop_order(&mut k), ["now", "later"]);
    }

    #[test]
    fn rejects_past_events() {
        let mut k = Kernel::new();
        k.schedule(SimTime::from_micros(10), "x").unwrap();
        k.pop().unwrap();
        let err = k.schedule(SimTime::from_micros(9), "past").unwrap_err();
        assert_eq!(err.now, SimTime::from_micros(10));
        assert_eq!(err.requested, SimTime::from_micros(9));
    }

    #[test]
    fn empty_run_is_vacuous() {
        let mut k: Kernel<u32> = Kernel::new();
        let stats = k.run_until(SimTime::from_secs(10), |_, _| unreachable!());
        assert_eq!(stats.events_processed, 0);
        assert_eq!(stats.final_clock, SimTime::ZERO);
    }

    #[test]
    fn run_until_includes_boundary() {
        let mut k: Kernel<u32> = Kernel::new();
        for s in 1..=3 {
            k.schedule(SimTime::from_secs(s), s as u32).unwrap();
        }
        let stats = k.run_until(SimTime::from_secs(2), |_, _| {});
        assert_eq!(stats.events_processed, 2);
        assert_eq!(stats.final_clock, SimTime::from_secs(2));
        assert_eq!(k.pending(), 1);
    }

    #[test]
    fn self_rescheduling_ticker() {
        // 10 ms period over 1 s: ticks at 10, 20, ..., 1000 ms.
        let mut k: Kernel<u32> = Kernel::new();
        let period = SimDuration::from_millis(10);
        k.schedule(SimTime::ZERO + period, 0).unwrap();
        let mut firings = 0;
        k.run_until(SimTime::from_secs(1), |k, ev| {
            firings += 1;
            k.schedule(ev.fire_at + period, ev.action + 1).unwrap();
        });
        assert_eq!(firings, 100);
    }

    #[test]
    fn digest_depends_on_trace() {
        let run = |times: &[u64]| {
            let mut k: Kernel<u32> = Kernel::new();
            for &t in times {
                k.schedule(SimTime::from_micros(t), 0).unwrap();
            }
            k.run_until(SimTime::from_secs(1), |_, _| {}).trace_digest
        };
        assert_eq!(run(&[1, 2, 3]), run(&[1, 2, 3]));
        assert_ne!(run(&[1, 2, 3]), run(&[1, 2, 4]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pop_order_is_lexicographic(times in proptest::collection::vec(0u64..50, 0..200)) {
                let mut k: Kernel<u32> = Kernel::new();
                for (i, &t) in times.iter().enumerate() {
                    k.schedule(SimTime::from_micros(t), i as u32).unwrap();
                }
                let mut last: Option<(SimTime, u64)> = None;
                while let Some(ev) = k.pop() {
                    if let Some(prev) = last {
                        prop_assert!(prev < (ev.fire_at, ev.seq));
                    }
                    last = Some((ev.fire_at, ev.seq));
                }
            }
        }
    }
}
