//! Cyber-physical alarm system: terminals with emulated GPRS modems reporting
//! to a multi-session HMI server, a simulated SMS channel to users, and a
//! deterministic discrete-event harness that runs the whole fleet.

pub mod harness;
pub mod hmi;
pub mod modem;
pub mod num;
pub mod protocol;
pub mod scheduler;
pub mod smsgw;
pub mod terminal;

use num_rational::Rational64;

/// Virtual or wall time in milliseconds.
pub type Millis = u64;

/// Scheduler over double-precision weights; what the HMI uses.
pub type TaskQueue64 = scheduler::TaskQueue<f64>;
/// Scheduler over single-precision weights.
pub type TaskQueue32 = scheduler::TaskQueue<f32>;
/// Scheduler over exact rational weights, for checking the weight constraints without rounding.
pub type ExactTaskQueue = scheduler::TaskQueue<Rational64>;

pub use protocol::TeId;
