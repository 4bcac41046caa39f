//! Trace-driven simulator of a banked, retention-adaptive STT-RAM last-level
//! cache shared by several cores, with SRAM and refresh-based baselines.

pub mod banked;
pub mod cache;
pub mod retention;
pub mod trace;
pub mod energy;
pub mod stats;
pub mod sim;
pub mod session;
pub mod tuner;
pub mod baselines;
pub mod workloads;
pub mod harness;
