//! Event counters for one simulated segment.

use serde::Serialize;

use crate::banked::{MappingTable, PhysicalBankId, TOTAL_BANKS};
use crate::cache::{CacheConfig, ReconfigCost};
use crate::energy::Device;
use crate::retention::RefreshModel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BankCounters {
    pub read_hits: u64,
    pub write_hits: u64,
    pub read_misses: u64,
    pub write_misses: u64,
    /// Dirty blocks sent to memory: victims, expirations and flushes.
    pub writebacks: u64,
    pub expirations: u64,
    pub dirty_expirations: u64,
    /// Misses on a block that had expired from this bank.
    pub expiration_misses: u64,
    pub refreshes: u64,
}

impl BankCounters {
    /// Accesses charged hit energy and hit latency.
    pub fn hits(&self) -> u64 {
        self.read_hits
    }

    pub fn misses(&self) -> u64 {
        self.read_misses + self.write_misses
    }

    /// Array writes: write hits plus the fill of every miss.
    pub fn writes(&self) -> u64 {
        self.write_hits + self.misses()
    }

    pub fn accesses(&self) -> u64 {
        self.read_hits + self.write_hits + self.misses()
    }

    pub fn add(&mut self, o: &BankCounters) {
        self.read_hits += o.read_hits;
        self.write_hits += o.write_hits;
        self.read_misses += o.read_misses;
        self.write_misses += o.write_misses;
        self.writebacks += o.writebacks;
        self.expirations += o.expirations;
        self.dirty_expirations += o.dirty_expirations;
        self.expiration_misses += o.expiration_misses;
        self.refreshes += o.refreshes;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BankStats {
    pub id: PhysicalBankId,
    pub device: Device,
    pub counters: BankCounters,
}

/// Counters of one segment of a run: a tuning interval, a configuration
/// transition, or steady-state execution.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub config: CacheConfig,
    /// Virtual-to-physical mapping in force during the segment.
    pub mapping: MappingTable,
    /// Powered banks, ascending by id.
    pub banks: Vec<BankStats>,
    pub start_tick: u64,
    pub end_tick: u64,
    pub reconfig: ReconfigCost,
    pub refresh: RefreshModel,
    /// Accesses simulated in the segment.
    pub accesses: u64,
}

impl SimStats {
    pub fn wall_cycles(&self) -> u64 {
        self.end_tick.saturating_sub(self.start_tick)
    }

    pub fn totals(&self) -> BankCounters {
        let mut t = BankCounters::default();
        for b in &self.banks {
            t.add(&b.counters);
        }
        t
    }

    pub fn bank(&self, id: PhysicalBankId) -> Option<&BankStats> {
        self.banks.iter().find(|b| b.id == id)
    }

    pub fn hit_rate(&self) -> f64 {
        let t = self.totals();
        if t.accesses() == 0 {
            0.0
        } else {
            (t.read_hits + t.write_hits) as f64 / t.accesses() as f64
        }
    }

    /// Counters for all 32 banks, zero where unpowered.
    pub fn dense_counters(&self) -> [BankCounters; TOTAL_BANKS] {
        let mut out = [BankCounters::default(); TOTAL_BANKS];
        for b in &self.banks {
            out[b.id.flat()] = b.counters;
        }
        out
    }
}
