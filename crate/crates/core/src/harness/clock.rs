//! Virtual clock and event queue.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::Millis;

/// Priority queue of timed events. Events at the same instant pop in
/// insertion order, which keeps runs reproducible.
#[derive(Debug)]
pub struct VirtualClock<E> {
    now: Millis,
    next_seq: u64,
    heap: BinaryHeap<Reverse<(Millis, u64, Slot<E>)>>,
}

// Wrapper so the heap never compares payloads.
#[derive(Debug)]
struct Slot<E>(E);

impl<E> PartialEq for Slot<E> {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}
impl<E> Eq for Slot<E> {}
impl<E> PartialOrd for Slot<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Slot<E> {
    fn cmp(&self, _: &Self) -> std::cmp::Ordering {
        std::cmp::Ordering::Equal
    }
}

impl<E> Default for VirtualClock<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> VirtualClock<E> {
    pub fn new() -> Self {
        Self {
            now: 0,
            next_seq: 0,
            heap: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `event` at `at`, clamped to the present.
    pub fn schedule(&mut self, at: Millis, event: E) {
        let at = at.max(self.now);
        self.heap.push(Reverse((at, self.next_seq, Slot(event))));
        self.next_seq += 1;
    }

    pub fn peek_time(&self) -> Option<Millis> {
        self.heap.peek().map(|Reverse((t, _, _))| *t)
    }

    /// Pops the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(Millis, E)> {
        let Reverse((t, _, Slot(e))) = self.heap.pop()?;
        self.now = t;
        Some((t, e))
    }

    /// Pops the earliest event if it is due by `limit`.
    pub fn pop_until(&mut self, limit: Millis) -> Option<(Millis, E)> {
        if self.peek_time()? > limit {
            return None;
        }
        self.pop()
    }

    /// Moves the clock forward without an event.
    pub fn advance_to(&mut self, t: Millis) {
        self.now = self.now.max(t);
    }
}
