//! Run plumbing shared by every system: instruction-interval cursor, run
//! options, and a driver that closes segments into energy and latency.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::banked::{MappingError, MappingTable, VirtualBankLayout};
use crate::cache::CacheConfig;
use crate::energy::{energy_of_interval, interval_latency, EnergyLedger, ParamError, ParamTable};
use crate::retention::{Clock, RefreshModel};
use crate::sim::{Llc, Technology};
use crate::stats::{BankCounters, SimStats};
use crate::trace::MemoryAccess;

pub const DEFAULT_INTERVAL_INSTRUCTIONS: u64 = 10_000_000;
pub const DEFAULT_MISS_PENALTY_CYCLES: u64 = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error("invalid run option: {0}")]
    Options(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TuningIntervalSpec {
    pub instructions_per_interval: u64,
}

impl TuningIntervalSpec {
    pub fn new(instructions_per_interval: u64) -> Result<Self, SimError> {
        if instructions_per_interval == 0 {
            return Err(SimError::Options("instructions_per_interval must be positive".into()));
        }
        Ok(Self { instructions_per_interval })
    }
}

impl Default for TuningIntervalSpec {
    fn default() -> Self {
        Self { instructions_per_interval: DEFAULT_INTERVAL_INSTRUCTIONS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub clock: Clock,
    pub miss_penalty_cycles: u64,
    pub seed: u64,
    pub interval: TuningIntervalSpec,
    /// Refresh model used by refresh-based systems.
    pub refresh: RefreshModel,
    /// Extends the final segment to this tick when it lies past the trace.
    pub end_tick: Option<u64>,
    /// Delay factor of the per-bank EDP sampled during retention tuning.
    pub bank_delay: BankDelay,
}

/// Delay used for the EDP of one physical bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankDelay {
    /// Latency of the whole sampling interval.
    Interval,
    /// Latency of the accesses the bank serviced.
    #[default]
    Bank,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            clock: Clock::DEFAULT,
            miss_penalty_cycles: DEFAULT_MISS_PENALTY_CYCLES,
            seed: 1,
            interval: TuningIntervalSpec::default(),
            refresh: RefreshModel::perfect_drs(),
            end_tick: None,
            bank_delay: BankDelay::default(),
        }
    }
}

/// Splits a trace into instruction intervals. An interval starts at an
/// access and ends before the first access whose instruction count reaches
/// the start's count plus the interval length.
#[derive(Debug, Clone)]
pub struct IntervalCursor<'a> {
    trace: &'a [MemoryAccess],
    pos: usize,
    instructions: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct Interval<'a> {
    pub accesses: &'a [MemoryAccess],
    /// False when the trace ran out before the interval filled.
    pub complete: bool,
}

impl<'a> IntervalCursor<'a> {
    pub fn new(trace: &'a [MemoryAccess], interval: TuningIntervalSpec) -> Self {
        Self { trace, pos: 0, instructions: interval.instructions_per_interval }
    }

    pub fn next_interval(&mut self) -> Option<Interval<'a>> {
        let rest = &self.trace[self.pos..];
        let first = rest.first()?;
        let limit = first.instructions_retired.saturating_add(self.instructions);
        let len = rest.partition_point(|a| a.instructions_retired < limit);
        self.pos += len;
        Some(Interval { accesses: &rest[..len], complete: len < rest.len() })
    }

    pub fn remaining(&self) -> &'a [MemoryAccess] {
        &self.trace[self.pos..]
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos >= self.trace.len()
    }

    /// Tick of the next unconsumed access.
    pub fn next_tick(&self) -> Option<u64> {
        self.trace.get(self.pos).map(|a| a.tick)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    ConfigTuning,
    RetentionTuning,
    Transition,
    Steady,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::ConfigTuning => "config",
            Phase::RetentionTuning => "retention",
            Phase::Transition => "transition",
            Phase::Steady => "steady",
        })
    }
}

/// A closed segment with its derived energy and latency.
#[derive(Debug, Clone)]
pub struct Segment {
    pub phase: Phase,
    pub stats: SimStats,
    pub ledger: EnergyLedger,
    pub latency_cycles: u64,
}

/// Drives one [`Llc`] through a trace and collects its segments.
#[derive(Debug)]
pub struct Session<'a> {
    llc: Llc,
    params: &'a ParamTable,
    options: &'a RunOptions,
    segments: Vec<Segment>,
}

impl<'a> Session<'a> {
    pub fn new(
        tech: Technology,
        config: CacheConfig,
        mapping: MappingTable,
        params: &'a ParamTable,
        options: &'a RunOptions,
        start_tick: u64,
    ) -> Result<Self, SimError> {
        let llc = Llc::new(tech, config, mapping, options.clock, options.refresh, options.seed, start_tick)?;
        Ok(Self { llc, params, options, segments: Vec::new() })
    }

    pub fn llc(&self) -> &Llc {
        &self.llc
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn run(&mut self, accesses: &[MemoryAccess]) {
        for a in accesses {
            self.llc.access(a);
        }
    }

    fn finish(&self, phase: Phase, stats: SimStats) -> Result<Segment, SimError> {
        let ledger = energy_of_interval(&stats, self.params, self.options.clock)?;
        let latency_cycles = interval_latency(&stats, self.params, self.options.miss_penalty_cycles)?;
        Ok(Segment { phase, stats, ledger, latency_cycles })
    }

    /// Closes the running segment at `end` and returns it.
    pub fn close(&mut self, phase: Phase, end: u64) -> Result<&Segment, SimError> {
        let stats = self.llc.close_segment(end);
        let seg = self.finish(phase, stats)?;
        self.segments.push(seg);
        Ok(self.segments.last().expect("just pushed"))
    }

    /// Switches configuration and mapping at `tick`, recording a transition
    /// segment when anything changed.
    pub fn switch(&mut self, config: CacheConfig, mapping: MappingTable, tick: u64) -> Result<(), SimError> {
        let (closed, transition) = self.llc.reconfigure(config, mapping, tick)?;
        debug_assert_eq!(closed.accesses, 0, "switch happens between segments");
        if let Some(t) = transition {
            self.push_transition(t)?;
        }
        Ok(())
    }

    /// Like [`Session::switch`], but always empties the cache.
    pub fn switch_flushed(&mut self, config: CacheConfig, mapping: MappingTable, tick: u64) -> Result<(), SimError> {
        if config == self.llc.config() && &mapping == self.llc.mapping() {
            let (_, t) = self.llc.flush(tick);
            self.push_transition(t)
        } else {
            self.switch(config, mapping, tick)
        }
    }

    fn push_transition(&mut self, t: SimStats) -> Result<(), SimError> {
        let seg = self.finish(Phase::Transition, t)?;
        self.segments.push(seg);
        Ok(())
    }

    pub fn into_segments(self) -> (Llc, Vec<Segment>) {
        (self.llc, self.segments)
    }
}

/// End tick of a segment whose last access is `last`, followed by `next`.
pub fn segment_end(next: Option<u64>, last: Option<&MemoryAccess>, fallback: u64, options: &RunOptions) -> u64 {
    match next {
        Some(t) => t,
        None => {
            let natural = last.map_or(fallback, |a| a.tick + 1);
            options.end_tick.map_or(natural, |e| e.max(natural))
        }
    }
}

/// Totals over a whole run.
#[derive(Debug, Clone, Default)]
pub struct RunTotals {
    pub ledger: EnergyLedger,
    pub latency_cycles: u64,
    pub counters: BankCounters,
    pub accesses: u64,
    pub wall_cycles: u64,
}

impl RunTotals {
    pub fn of(segments: &[Segment]) -> Self {
        let mut t = RunTotals::default();
        for s in segments {
            t.ledger.add(&s.ledger);
            t.latency_cycles += s.latency_cycles;
            t.counters.add(&s.stats.totals());
            t.accesses += s.stats.accesses;
            t.wall_cycles += s.stats.wall_cycles();
        }
        t
    }

    pub fn hit_rate(&self) -> f64 {
        let c = &self.counters;
        if c.accesses() == 0 {
            0.0
        } else {
            (c.read_hits + c.write_hits) as f64 / c.accesses() as f64
        }
    }
}

/// Result of one simulated system on one trace.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub system: String,
    pub technology: Technology,
    pub segments: Vec<Segment>,
    pub final_config: CacheConfig,
    pub final_mapping: MappingTable,
    pub layout: VirtualBankLayout,
    pub tuning: Option<crate::tuner::TuningOutcome>,
    pub truncated: bool,
}

impl RunResult {
    pub fn totals(&self) -> RunTotals {
        RunTotals::of(&self.segments)
    }

    /// Start ticks of non-transition segments.
    pub fn interval_boundaries(&self) -> Vec<u64> {
        self.segments.iter().filter(|s| s.phase != Phase::Transition).map(|s| s.stats.start_tick).collect()
    }
}

/// Runs `accesses` in interval-sized segments under a fixed configuration
/// and mapping.
pub fn run_steady(
    session: &mut Session<'_>,
    cursor: &mut IntervalCursor<'_>,
    fallback_end: u64,
) -> Result<(), SimError> {
    while let Some(iv) = cursor.next_interval() {
        session.run(iv.accesses);
        let end = segment_end(cursor.next_tick(), iv.accesses.last(), fallback_end, session.options);
        session.close(Phase::Steady, end)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::MemoryAccess as M;

    fn trace(instrs: &[u64]) -> Vec<M> {
        instrs.iter().enumerate().map(|(i, &n)| M::read(i as u64 * 10, 0, 0, n)).collect()
    }

    #[test]
    fn cursor_cuts_at_threshold() {
        let t = trace(&[0, 3, 9, 10, 12, 25, 26]);
        let mut c = IntervalCursor::new(&t, TuningIntervalSpec::new(10).unwrap());
        let a = c.next_interval().unwrap();
        assert_eq!(a.accesses.len(), 3);
        assert!(a.complete);
        let b = c.next_interval().unwrap();
        assert_eq!(b.accesses.len(), 2);
        let d = c.next_interval().unwrap();
        assert_eq!(d.accesses.len(), 2);
        assert!(!d.complete);
        assert!(c.next_interval().is_none());
    }

    #[test]
    fn cursor_on_empty_trace() {
        let mut c = IntervalCursor::new(&[], TuningIntervalSpec::default());
        assert!(c.next_interval().is_none());
        assert!(c.is_exhausted());
    }

    #[test]
    fn zero_interval_rejected() {
        assert!(TuningIntervalSpec::new(0).is_err());
    }

    #[test]
    fn segment_end_rules() {
        let o = RunOptions::default();
        let last = M::read(41, 0, 0, 0);
        assert_eq!(segment_end(Some(50), Some(&last), 0, &o), 50);
        assert_eq!(segment_end(None, Some(&last), 0, &o), 42);
        let ext = RunOptions { end_tick: Some(1000), ..RunOptions::default() };
        assert_eq!(segment_end(None, Some(&last), 0, &ext), 1000);
        assert_eq!(segment_end(None, None, 7, &o), 7);
    }
}
