//! Deterministic simulation of a whole deployment.

pub mod clock;
pub mod link;
pub mod report;
pub mod scenario;
pub mod trace;
pub mod world;

pub use report::{render_table, Report};
pub use scenario::{Scenario, ScenarioError};
pub use trace::{parse_trace, TraceError};
pub use world::{RunOutcome, World};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("embedded scenario: {0}")]
    Scenario(#[from] ScenarioError),
}

/// Runs `sc` to completion, with `seed` overriding the scenario's own.
pub fn run(sc: Scenario, seed: Option<u64>) -> Result<RunOutcome, ScenarioError> {
    Ok(World::new(sc, seed)?.run())
}

/// Outcome of re-running a recorded trace.
pub struct Replay {
    pub outcome: RunOutcome,
    /// The new trace is byte-identical to the recorded one.
    pub identical: bool,
    /// Index of the first differing record, when not identical.
    pub first_divergence: Option<usize>,
}

/// Re-runs the scenario and seed embedded in `bytes` and compares traces.
pub fn replay(bytes: &[u8]) -> Result<Replay, ReplayError> {
    let recorded = parse_trace(bytes)?;
    let sc = Scenario::from_json(&recorded.scenario_json)?;
    let outcome = run(sc, Some(recorded.seed))?;
    let identical = outcome.trace == bytes;
    let first_divergence = if identical {
        None
    } else {
        let fresh = parse_trace(&outcome.trace)?;
        let n = recorded.records.len().min(fresh.records.len());
        Some(
            (0..n)
                .find(|&i| recorded.records[i] != fresh.records[i])
                .unwrap_or(n),
        )
    };
    Ok(Replay {
        outcome,
        identical,
        first_divergence,
    })
}
