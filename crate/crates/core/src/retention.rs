//! STT-RAM volatility: retention classes, the 4-bit per-block expiration
//! counter, the expiry event queue, and perfect-refresh (DRS) accounting.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Counter states per retention period (4 bits).
pub const COUNTER_STATES: u64 = 16;

/// Core clock. Converts wall time to cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clock {
    pub ghz: f64,
}

impl Clock {
    pub const DEFAULT: Clock = Clock { ghz: 2.0 };

    pub fn new(ghz: f64) -> Self {
        assert!(ghz.is_finite() && ghz > 0.0, "clock must be positive");
        Clock { ghz }
    }

    pub fn cycles_for_ns(&self, ns: f64) -> u64 {
        (ns * self.ghz).round() as u64
    }

    pub fn ns_for_cycles(&self, cycles: u64) -> f64 {
        cycles as f64 / self.ghz
    }

    pub fn cycle_period_ns(&self) -> f64 {
        1.0 / self.ghz
    }
}

impl Default for Clock {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RetentionClass {
    R100us,
    R1ms,
    R10ms,
    R100ms,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown retention class {0:?}; expected 100us, 1ms, 10ms or 100ms")]
pub struct RetentionParseError(pub String);

impl RetentionClass {
    pub const ALL: [RetentionClass; 4] =
        [RetentionClass::R100us, RetentionClass::R1ms, RetentionClass::R10ms, RetentionClass::R100ms];

    /// Cluster hosting this retention time: Cluster0 = 100µs … Cluster3 = 100ms.
    pub fn cluster_id(self) -> u8 {
        self as u8
    }

    pub fn from_cluster(cluster_id: u8) -> Option<Self> {
        Self::ALL.get(usize::from(cluster_id)).copied()
    }

    pub fn retention_ns(self) -> f64 {
        match self {
            RetentionClass::R100us => 100_000.0,
            RetentionClass::R1ms => 1_000_000.0,
            RetentionClass::R10ms => 10_000_000.0,
            RetentionClass::R100ms => 100_000_000.0,
        }
    }

    pub fn retention_cycles(self, clock: Clock) -> u64 {
        clock.cycles_for_ns(self.retention_ns())
    }

    pub fn label(self) -> &'static str {
        match self {
            RetentionClass::R100us => "100us",
            RetentionClass::R1ms => "1ms",
            RetentionClass::R10ms => "10ms",
            RetentionClass::R100ms => "100ms",
        }
    }
}

impl fmt::Display for RetentionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RetentionClass {
    type Err = RetentionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "100us" | "100µs" => Ok(RetentionClass::R100us),
            "1ms" => Ok(RetentionClass::R1ms),
            "10ms" => Ok(RetentionClass::R10ms),
            "100ms" => Ok(RetentionClass::R100ms),
            _ => Err(RetentionParseError(s.to_string())),
        }
    }
}

/// Per-block lifetime counter. All blocks of a cluster share one period
/// clock whose phase origin is tick 0; a write resets the block's state to 0
/// and every period boundary after it advances the state by one. The block
/// is evicted when the state reaches 15.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpirationCounter {
    period_cycles: u64,
}

impl ExpirationCounter {
    pub fn new(retention_cycles: u64) -> Self {
        let period_cycles = (retention_cycles / COUNTER_STATES).max(1);
        Self { period_cycles }
    }

    pub fn for_class(class: RetentionClass, clock: Clock) -> Self {
        Self::new(class.retention_cycles(clock))
    }

    pub fn period_cycles(&self) -> u64 {
        self.period_cycles
    }

    /// Counter state at `now` for a block last written at `written_at`.
    pub fn state_at(&self, written_at: u64, now: u64) -> u8 {
        let crossed = (now / self.period_cycles).saturating_sub(written_at / self.period_cycles);
        crossed.min(COUNTER_STATES - 1) as u8
    }

    /// Tick of the 15th period boundary after the write. Lies in
    /// `(written_at + 14·period, written_at + 15·period]`.
    pub fn expiry_tick(&self, written_at: u64) -> u64 {
        (written_at / self.period_cycles + (COUNTER_STATES - 1)) * self.period_cycles
    }
}

/// Pending expirations, ordered by tick. Entries are validated against the
/// block's epoch when popped, so rewrites never need to remove old entries.
#[derive(Debug, Clone, Default)]
pub struct ExpiryQueue {
    heap: BinaryHeap<Reverse<(u64, u32, u32, u64)>>,
}

/// A popped queue entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DueExpiry {
    pub tick: u64,
    pub set: u32,
    pub way: u32,
    pub epoch: u64,
}

impl ExpiryQueue {
    pub fn schedule(&mut self, tick: u64, set: u32, way: u32, epoch: u64) {
        self.heap.push(Reverse((tick, set, way, epoch)));
    }

    /// Next entry due at or before `now`.
    pub fn pop_due(&mut self, now: u64) -> Option<DueExpiry> {
        match self.heap.peek() {
            Some(Reverse((tick, ..))) if *tick <= now => {
                let Reverse((tick, set, way, epoch)) = self.heap.pop()?;
                Some(DueExpiry { tick, set, way, epoch })
            }
            _ => None,
        }
    }

    pub fn clear(&mut self) {
        self.heap.clear();
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// One block evicted by its counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expiration {
    pub tick: u64,
    pub address: u64,
    pub was_dirty: bool,
    pub bank: crate::banked::PhysicalBankId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefreshMode {
    None,
    PerfectDrs,
}

/// Refresh cost model. Each refresh is a cache read, buffer write, buffer
/// read and cache write; its combined energy is one number here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefreshModel {
    pub mode: RefreshMode,
    pub per_refresh_energy_nj: f64,
    /// Refresh-buffer leakage for a 1MB cache; scaled linearly with size.
    pub buffer_leakage_mw: f64,
}

/// Per-refresh energy for a 1MB STT-RAM L2.
pub const DEFAULT_REFRESH_ENERGY_NJ: f64 = 1.311;
/// Leakage of a 128KB direct-mapped refresh buffer.
pub const DEFAULT_BUFFER_LEAKAGE_MW: f64 = 141.425;

#[derive(Debug, Error, PartialEq)]
#[error("perfect refresh needs a positive per-refresh energy, got {0}")]
pub struct RefreshModelError(pub f64);

impl RefreshModel {
    pub const NONE: RefreshModel =
        RefreshModel { mode: RefreshMode::None, per_refresh_energy_nj: 0.0, buffer_leakage_mw: 0.0 };

    pub fn perfect_drs() -> Self {
        RefreshModel {
            mode: RefreshMode::PerfectDrs,
            per_refresh_energy_nj: DEFAULT_REFRESH_ENERGY_NJ,
            buffer_leakage_mw: DEFAULT_BUFFER_LEAKAGE_MW,
        }
    }

    pub fn validate(&self) -> Result<(), RefreshModelError> {
        if self.mode == RefreshMode::PerfectDrs
            && !(self.per_refresh_energy_nj.is_finite() && self.per_refresh_energy_nj > 0.0)
        {
            return Err(RefreshModelError(self.per_refresh_energy_nj));
        }
        Ok(())
    }

    /// Buffer leakage for a cache of `size_bytes`.
    pub fn buffer_leakage_mw_for(&self, size_bytes: u64) -> f64 {
        match self.mode {
            RefreshMode::None => 0.0,
            RefreshMode::PerfectDrs => self.buffer_leakage_mw * size_bytes as f64 / (1024.0 * 1024.0),
        }
    }
}

/// Completed retention periods between `*origin` and `until`; advances the
/// origin past them (a refresh restarts the period).
pub fn settle_refreshes(origin: &mut u64, until: u64, retention_cycles: u64) -> u64 {
    if until <= *origin {
        return 0;
    }
    let count = (until - *origin) / retention_cycles;
    *origin += count * retention_cycles;
    count
}

/// Energy in nJ of a power drawn for some cycles.
pub fn power_energy_nj(milliwatts: f64, cycles: u64, clock: Clock) -> f64 {
    // mW × ns = pJ
    milliwatts * clock.ns_for_cycles(cycles) * 1e-3
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RefreshTally {
    pub refresh_count: u64,
    pub refresh_energy_nj: f64,
    pub buffer_leakage_nj: f64,
}

/// Refresh cost of a set of block origins over `[from, to]`, settling each
/// origin. Blocks are those still valid at `to`.
pub fn refresh_accounting<'a>(
    origins: impl IntoIterator<Item = &'a mut u64>,
    from: u64,
    to: u64,
    retention_cycles: u64,
    cache_size_bytes: u64,
    model: &RefreshModel,
    clock: Clock,
) -> RefreshTally {
    if model.mode == RefreshMode::None {
        return RefreshTally::default();
    }
    let refresh_count: u64 =
        origins.into_iter().map(|o| settle_refreshes(o, to, retention_cycles)).sum();
    RefreshTally {
        refresh_count,
        refresh_energy_nj: refresh_count as f64 * model.per_refresh_energy_nj,
        buffer_leakage_nj: power_energy_nj(
            model.buffer_leakage_mw_for(cache_size_bytes),
            to.saturating_sub(from),
            clock,
        ),
    }
}
