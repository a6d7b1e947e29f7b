//! Discrete-event engine: a time-ordered queue with a sequence tiebreaker.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::SimError;

/// Simulation time in seconds.
pub type Time = f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(pub u64);

#[derive(Debug, Clone)]
pub struct Event<E> {
    pub fire_time: Time,
    pub sequence_no: u64,
    pub kind: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    // Reversed so the std max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_time
            .total_cmp(&self.fire_time)
            .then_with(|| other.sequence_no.cmp(&self.sequence_no))
    }
}

/// Event queue plus simulation clock.
#[derive(Debug)]
pub struct Scheduler<E> {
    clock: Time,
    next_seq: u64,
    queue: BinaryHeap<Event<E>>,
    fired: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            clock: 0.0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            fired: 0,
        }
    }

    pub fn now(&self) -> Time {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Number of events handed out by [`Scheduler::pop_until`] so far.
    pub fn fired(&self) -> u64 {
        self.fired
    }

    pub fn schedule(&mut self, fire_time: Time, kind: E) -> Result<EventHandle, SimError> {
        if !(fire_time >= self.clock) {
            return Err(SimError::PastEvent {
                fire_time,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            fire_time,
            sequence_no: seq,
            kind,
        });
        Ok(EventHandle(seq))
    }

    /// Schedule `delay` seconds after the current clock.
    pub fn schedule_in(&mut self, delay: Time, kind: E) -> EventHandle {
        let at = self.clock + delay.max(0.0);
        self.schedule(at, kind)
            .expect("non-negative delay never schedules into the past")
    }

    /// Pop the next event with `fire_time <= t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: Time) -> Option<Event<E>> {
        match self.queue.peek() {
            Some(ev) if ev.fire_time <= t_end => {
                let ev = self.queue.pop()?;
                self.clock = ev.fire_time;
                self.fired += 1;
                Some(ev)
            }
            _ => None,
        }
    }

    /// Drain every event up to `t_end` through `handler`, then park the clock at `t_end`.
    pub fn run_until<F>(&mut self, t_end: Time, mut handler: F) -> Result<Time, SimError>
    where
        F: FnMut(&mut Self, Event<E>),
    {
        if t_end < self.clock {
            return Err(SimError::PastEvent {
                fire_time: t_end,
                clock: self.clock,
            });
        }
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev);
        }
        self.clock = t_end;
        Ok(self.clock)
    }

    pub(crate) fn set_clock(&mut self, t: Time) {
        debug_assert!(t >= self.clock);
        self.clock = t;
    }
}

/// Derive an independent RNG stream from a run seed and a stream label.
///
/// SplitMix64 finalizer over `seed ^ label` so neighbouring labels give unrelated streams.
pub fn stream_rng(seed: u64, label: u64) -> ChaCha8Rng {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fires_at_scheduled_time() {
        let mut s = Scheduler::new();
        s.schedule(0.5, "a").unwrap();
        let ev = s.pop_until(10.0).unwrap();
        assert_eq!(ev.fire_time, 0.5);
        assert_eq!(s.now(), 0.5);
    }

    #[test]
    fn equal_times_pop_in_sequence_order() {
        let mut s = Scheduler::new();
        let mut seqs = Vec::new();
        for i in 0..9u32 {
            let h = s.schedule(1.0, i).unwrap();
            seqs.push(h.0);
        }
        let mut got = Vec::new();
        while let Some(ev) = s.pop_until(2.0) {
            got.push((ev.sequence_no, ev.kind));
        }
        assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), seqs);
        assert_eq!(got.iter().map(|g| g.1).collect::<Vec<_>>(), (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn sequence_seven_then_eight() {
        let mut s: Scheduler<()> = Scheduler::new();
        s.next_seq = 7;
        s.schedule(1.0, ()).unwrap();
        s.schedule(1.0, ()).unwrap();
        assert_eq!(s.pop_until(5.0).unwrap().sequence_no, 7);
        assert_eq!(s.pop_until(5.0).unwrap().sequence_no, 8);
    }

    #[test]
    fn past_event_rejected() {
        let mut s: Scheduler<()> = Scheduler::new();
        s.set_clock(0.2);
        assert!(matches!(s.schedule(0.1, ()), Err(SimError::PastEvent { .. })));
        assert!(s.schedule(f64::NAN, ()).is_err());
    }

    #[test]
    fn run_until_empty_queue() {
        let mut s: Scheduler<()> = Scheduler::new();
        let t = s.run_until(60.0, |_, _| panic!("no events")).unwrap();
        assert_eq!(t, 60.0);
        assert_eq!(s.fired(), 0);
    }

    #[test]
    fn run_until_boundary_leaves_later_events() {
        let mut s = Scheduler::new();
        for t in [1.0, 2.0, 3.0] {
            s.schedule(t, t).unwrap();
        }
        let mut fired = Vec::new();
        s.run_until(2.5, |_, ev| fired.push(ev.kind)).unwrap();
        assert_eq!(fired, vec![1.0, 2.0]);
        assert_eq!(s.now(), 2.5);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn handler_can_schedule_more() {
        let mut s = Scheduler::new();
        s.schedule(0.0, 0u32).unwrap();
        let mut last = 0;
        s.run_until(1.0, |sch, ev| {
            last = ev.kind;
            if ev.kind < 10 {
                sch.schedule_in(0.05, ev.kind + 1);
            }
        })
        .unwrap();
        assert_eq!(last, 10);
    }

    #[test]
    fn stream_rng_is_reproducible_and_distinct() {
        use rand::Rng;
        let a: u64 = stream_rng(1, 2).random();
        let b: u64 = stream_rng(1, 2).random();
        let c: u64 = stream_rng(1, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
