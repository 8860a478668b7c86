//! Time-slice rotation scheduling over a weighted ready queue.
//!
//! The process is the weighted composition `P = Σ x_i·T_i` of the threads in
//! the ready queue, subject to `Σ x_i = 1` and `x_i ≥ x_{i+1}`. Weights are
//! assigned by queue position, linearly descending:
//!
//! ```text
//! x_i = (m − i + 1) / (m(m+1)/2),   i = 1..m
//! ```
//!
//! The head always receives the largest slice, `max(1, round(x_1·R))` ticks
//! out of a round budget `R`. A thread whose slice runs out re-enters at the
//! tail; a finished thread leaves. Weights are recomputed after every change,
//! so both constraints hold in every observable state.

use std::collections::VecDeque;

use serde::Serialize;

use crate::num::{sums_to_one, Weight};

pub type TaskId = u64;

pub const DEFAULT_ROUND_BUDGET: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEntry<W> {
    pub task_id: TaskId,
    pub weight: W,
    pub remaining_work: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Slice {
    pub task_id: TaskId,
    pub ticks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceOutcome {
    Expired(TaskId),
    Completed(TaskId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SchedulerError {
    #[error("ready queue is empty")]
    EmptyQueue,
}

/// Ready queue with position-derived weights.
#[derive(Debug, Clone)]
pub struct TaskQueue<W> {
    entries: VecDeque<TaskEntry<W>>,
    round_budget: u64,
}

impl<W: Weight> Default for TaskQueue<W> {
    fn default() -> Self {
        Self::new(DEFAULT_ROUND_BUDGET)
    }
}

impl<W: Weight> TaskQueue<W> {
    pub fn new(round_budget: u64) -> Self {
        Self {
            entries: VecDeque::new(),
            round_budget: round_budget.max(1),
        }
    }

    /// Queue holding `works[k]` for task `k + 1`, in that order.
    pub fn from_work(works: &[u64], round_budget: u64) -> Self {
        let mut q = Self::new(round_budget);
        for (i, &w) in works.iter().enumerate() {
            q.entries.push_back(TaskEntry {
                task_id: i as TaskId + 1,
                weight: W::zero(),
                remaining_work: w,
            });
        }
        q.assign_weights();
        q
    }

    pub fn round_budget(&self) -> u64 {
        self.round_budget
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &TaskEntry<W>> {
        self.entries.iter()
    }

    pub fn weights(&self) -> Vec<W> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn contains(&self, task_id: TaskId) -> bool {
        self.entries.iter().any(|e| e.task_id == task_id)
    }

    /// Total outstanding work across the queue.
    pub fn total_work(&self) -> u64 {
        self.entries.iter().map(|e| e.remaining_work).sum()
    }

    /// Appends a task at the tail of the ready queue.
    pub fn push(&mut self, task_id: TaskId, work: u64) {
        self.entries.push_back(TaskEntry {
            task_id,
            weight: W::zero(),
            remaining_work: work,
        });
        self.assign_weights();
    }

    /// Adds work to a queued task without moving it. Returns false if the
    /// task is not queued.
    pub fn add_work(&mut self, task_id: TaskId, work: u64) -> bool {
        match self.entries.iter_mut().find(|e| e.task_id == task_id) {
            Some(e) => {
                e.remaining_work += work;
                true
            }
            None => false,
        }
    }

    /// Removes a task wherever it sits. Returns its remaining work.
    pub fn remove(&mut self, task_id: TaskId) -> Option<u64> {
        let pos = self.entries.iter().position(|e| e.task_id == task_id)?;
        let e = self.entries.remove(pos)?;
        self.assign_weights();
        Some(e.remaining_work)
    }

    /// Recomputes `x_i = (m − i + 1) / (m(m+1)/2)` over the current order.
    pub fn assign_weights(&mut self) {
        let m = self.entries.len() as u64;
        if m == 0 {
            return;
        }
        let total = m * (m + 1) / 2;
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.weight = W::ratio(m - i as u64, total);
        }
    }

    /// Slice for the head of the queue. Does not mutate the queue.
    pub fn next_slice(&self) -> Result<Slice, SchedulerError> {
        let head = self.entries.front().ok_or(SchedulerError::EmptyQueue)?;
        Ok(Slice {
            task_id: head.task_id,
            ticks: head.weight.scale_round(self.round_budget).max(1),
        })
    }

    /// Charges `elapsed` ticks to the head. A finished head leaves the
    /// queue; otherwise it moves to the tail. Weights are then reassigned.
    pub fn run_slice(&mut self, elapsed: u64) -> Result<SliceOutcome, SchedulerError> {
        let mut head = self.entries.pop_front().ok_or(SchedulerError::EmptyQueue)?;
        head.remaining_work = head.remaining_work.saturating_sub(elapsed);
        let outcome = if head.remaining_work == 0 {
            SliceOutcome::Completed(head.task_id)
        } else {
            let id = head.task_id;
            self.entries.push_back(head);
            SliceOutcome::Expired(id)
        };
        self.assign_weights();
        Ok(outcome)
    }

    /// Both weight constraints: sum to one and non-increasing by position.
    pub fn satisfies_constraints(&self) -> bool {
        if self.entries.is_empty() {
            return true;
        }
        let ordered = self
            .entries
            .iter()
            .zip(self.entries.iter().skip(1))
            .all(|(a, b)| a.weight >= b.weight);
        ordered && sums_to_one(self.entries.iter().map(|e| e.weight))
    }
}

/// One executed slice in a [`simulate`] trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SliceRecord {
    pub task_id: TaskId,
    pub start_tick: u64,
    /// Ticks granted.
    pub slice: u64,
    /// Ticks actually used (less than `slice` when the task finished early).
    pub used: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimulationTrace {
    pub completion_order: Vec<TaskId>,
    /// `finish_tick[k]` is when task `k + 1` completed.
    pub finish_tick: Vec<u64>,
    pub slices: Vec<SliceRecord>,
}

/// Runs tasks `1..=works.len()` to completion by repeated
/// `next_slice`/`run_slice`. Zero-work tasks finish at their first turn.
pub fn simulate<W: Weight>(works: &[u64], round_budget: u64) -> SimulationTrace {
    let mut queue = TaskQueue::<W>::from_work(works, round_budget);
    let mut finish_tick = vec![0; works.len()];
    let mut completion_order = Vec::with_capacity(works.len());
    let mut slices = Vec::new();
    let mut now = 0u64;

    while let Ok(slice) = queue.next_slice() {
        let remaining = queue.entries[0].remaining_work;
        let used = slice.ticks.min(remaining);
        slices.push(SliceRecord {
            task_id: slice.task_id,
            start_tick: now,
            slice: slice.ticks,
            used,
        });
        now += used;
        if let Ok(SliceOutcome::Completed(id)) = queue.run_slice(used) {
            finish_tick[(id - 1) as usize] = now;
            completion_order.push(id);
        }
    }

    SimulationTrace {
        completion_order,
        finish_tick,
        slices,
    }
}
