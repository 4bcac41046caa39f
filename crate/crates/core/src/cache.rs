//! Set-associative cache engine with runtime-reconfigurable size, line size
//! and associativity. Replacement is random (seeded xoshiro256++); an invalid
//! way is always preferred over evicting a valid one.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::AccessKind;

/// Physical bank granularity.
pub const BANK_BYTES: u64 = 32 * 1024;
pub const SIZES: [u64; 4] = [128 * 1024, 256 * 1024, 512 * 1024, 1024 * 1024];
pub const LINE_SIZES: [u32; 3] = [16, 32, 64];
pub const ASSOCIATIVITIES: [u32; 5] = [1, 2, 4, 8, 16];

/// Stall charged by a configuration change (worst-case context switch).
pub const RECONFIG_LATENCY_CYCLES: u64 = 114_688;
/// Energy charged by a configuration change: 14.844 µJ.
pub const RECONFIG_ENERGY_NJ: f64 = 14_844.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cache size {0} bytes is not one of 128K, 256K, 512K, 1M")]
    Size(u64),
    #[error("line size {0} bytes is not one of 16, 32, 64")]
    LineSize(u32),
    #[error("associativity {0} is not one of 1, 2, 4, 8, 16")]
    Ways(u32),
    #[error("cannot parse cache configuration {0:?}; expected e.g. 128K-2W-64B")]
    Syntax(String),
}

/// One point of the design space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CacheConfig {
    size_bytes: u64,
    line_bytes: u32,
    ways: u32,
}

impl CacheConfig {
    pub fn new(size_bytes: u64, line_bytes: u32, ways: u32) -> Result<Self, ConfigError> {
        if !SIZES.contains(&size_bytes) {
            return Err(ConfigError::Size(size_bytes));
        }
        if !LINE_SIZES.contains(&line_bytes) {
            return Err(ConfigError::LineSize(line_bytes));
        }
        if !ASSOCIATIVITIES.contains(&ways) {
            return Err(ConfigError::Ways(ways));
        }
        Ok(Self { size_bytes, line_bytes, ways })
    }

    /// The largest configuration: 1MB, 64B lines, 16 ways.
    pub const fn base() -> Self {
        Self { size_bytes: 1024 * 1024, line_bytes: 64, ways: 16 }
    }

    pub fn size_bytes(&self) -> u64 {
        self.size_bytes
    }

    pub fn line_bytes(&self) -> u32 {
        self.line_bytes
    }

    pub fn ways(&self) -> u32 {
        self.ways
    }

    pub fn sets(&self) -> u32 {
        (self.size_bytes / (u64::from(self.line_bytes) * u64::from(self.ways))) as u32
    }

    pub fn bank_count(&self) -> u32 {
        (self.size_bytes / BANK_BYTES) as u32
    }

    pub fn way_bytes(&self) -> u64 {
        self.size_bytes / u64::from(self.ways)
    }

    pub fn with_size(self, size_bytes: u64) -> Result<Self, ConfigError> {
        Self::new(size_bytes, self.line_bytes, self.ways)
    }

    pub fn with_line(self, line_bytes: u32) -> Result<Self, ConfigError> {
        Self::new(self.size_bytes, line_bytes, self.ways)
    }

    pub fn with_ways(self, ways: u32) -> Result<Self, ConfigError> {
        Self::new(self.size_bytes, self.line_bytes, ways)
    }

    /// Set index and tag of a byte address.
    pub fn split(&self, address: u64) -> (u32, u64) {
        let line = address / u64::from(self.line_bytes);
        let sets = u64::from(self.sets());
        ((line % sets) as u32, line / sets)
    }

    /// Inverse of [`CacheConfig::split`] for the line's first byte.
    pub fn line_address(&self, set: u32, tag: u64) -> u64 {
        (tag * u64::from(self.sets()) + u64::from(set)) * u64::from(self.line_bytes)
    }

    /// All 60 lattice points, sizes descending then lines then ways.
    pub fn lattice() -> Vec<CacheConfig> {
        let mut out = Vec::new();
        for &s in SIZES.iter().rev() {
            for &l in LINE_SIZES.iter().rev() {
                for &w in ASSOCIATIVITIES.iter().rev() {
                    out.push(CacheConfig { size_bytes: s, line_bytes: l, ways: w });
                }
            }
        }
        out
    }
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self::base()
    }
}

impl fmt::Display for CacheConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kb = self.size_bytes / 1024;
        if kb % 1024 == 0 {
            write!(f, "{}M-{}W-{}B", kb / 1024, self.ways, self.line_bytes)
        } else {
            write!(f, "{}K-{}W-{}B", kb, self.ways, self.line_bytes)
        }
    }
}

impl FromStr for CacheConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = || ConfigError::Syntax(s.to_string());
        let parts: Vec<&str> = s.trim().split('-').collect();
        let [size, ways, line] = parts.as_slice() else { return Err(syntax()) };
        let size_bytes = if let Some(k) = size.strip_suffix(['K', 'k']) {
            k.parse::<u64>().map_err(|_| syntax())? * 1024
        } else if let Some(m) = size.strip_suffix(['M', 'm']) {
            m.parse::<u64>().map_err(|_| syntax())? * 1024 * 1024
        } else {
            return Err(syntax());
        };
        let ways = ways.strip_suffix(['W', 'w']).ok_or_else(syntax)?.parse().map_err(|_| syntax())?;
        let line = line.strip_suffix(['B', 'b']).ok_or_else(syntax)?.parse().map_err(|_| syntax())?;
        CacheConfig::new(size_bytes, line, ways)
    }
}

impl TryFrom<String> for CacheConfig {
    type Error = ConfigError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<CacheConfig> for String {
    fn from(value: CacheConfig) -> Self {
        value.to_string()
    }
}

/// Per-block metadata.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockMeta {
    pub tag: u64,
    pub valid: bool,
    pub dirty: bool,
    /// Tick of the last array write (fill or write hit). Drives the
    /// expiration counter.
    pub written_at: u64,
    /// Period origin for perfect-refresh accounting.
    pub refresh_origin: u64,
    /// Bumped on every array write; used to discard stale expiry events.
    pub epoch: u64,
    pub last_writer_core: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeKind {
    Hit,
    MissClean,
    MissDirtyEviction,
}

/// Result of one cache access as seen from outside the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessOutcome {
    pub kind: OutcomeKind,
    pub victim_writeback: Option<u64>,
    /// Filled in by the banked organization.
    pub serviced_bank: Option<crate::banked::PhysicalBankId>,
}

impl AccessOutcome {
    pub fn is_hit(&self) -> bool {
        self.kind == OutcomeKind::Hit
    }
}

/// A valid block displaced by a fill or a flush.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evicted {
    pub set: u32,
    pub way: u32,
    pub address: u64,
    pub meta: BlockMeta,
}

/// Engine-level view of an access: where it landed and what it displaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lookup {
    pub outcome: AccessOutcome,
    pub set: u32,
    pub way: u32,
    pub tag: u64,
    /// The block array was written (fill or write hit).
    pub array_write: bool,
    /// A valid block displaced by this fill, dirty or not.
    pub evicted: Option<Evicted>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReconfigCost {
    pub latency_cycles: u64,
    pub energy_nj: f64,
}

impl ReconfigCost {
    pub const ZERO: ReconfigCost = ReconfigCost { latency_cycles: 0, energy_nj: 0.0 };
    pub const CHANGE: ReconfigCost =
        ReconfigCost { latency_cycles: RECONFIG_LATENCY_CYCLES, energy_nj: RECONFIG_ENERGY_NJ };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconfiguration {
    pub cost: ReconfigCost,
    /// Valid blocks dropped by the flush; dirty ones become writebacks.
    pub flushed: Vec<Evicted>,
}

impl Reconfiguration {
    pub fn writebacks(&self) -> usize {
        self.flushed.iter().filter(|e| e.meta.dirty).count()
    }
}

/// Tag/state arrays for one configuration.
#[derive(Debug, Clone)]
pub struct CacheState {
    config: CacheConfig,
    blocks: Vec<BlockMeta>,
    rng: Xoshiro256PlusPlus,
    next_epoch: u64,
}

impl CacheState {
    pub fn new(config: CacheConfig, seed: u64) -> Self {
        Self {
            config,
            blocks: vec![BlockMeta::default(); (config.sets() * config.ways()) as usize],
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            next_epoch: 1,
        }
    }

    pub fn config(&self) -> CacheConfig {
        self.config
    }

    fn slot(&self, set: u32, way: u32) -> usize {
        (set * self.config.ways() + way) as usize
    }

    pub fn block(&self, set: u32, way: u32) -> &BlockMeta {
        &self.blocks[self.slot(set, way)]
    }

    pub fn block_mut(&mut self, set: u32, way: u32) -> &mut BlockMeta {
        let slot = self.slot(set, way);
        &mut self.blocks[slot]
    }

    /// Way holding `address`, without touching any state.
    pub fn probe(&self, address: u64) -> Option<u32> {
        let (set, tag) = self.config.split(address);
        let base = self.slot(set, 0);
        self.blocks[base..base + self.config.ways() as usize]
            .iter()
            .position(|b| b.valid && b.tag == tag)
            .map(|w| w as u32)
    }

    /// Performs one access. Misses allocate (write-allocate for writes); the
    /// victim is the lowest-index invalid way, else `next_u64() % ways`.
    pub fn lookup(&mut self, address: u64, kind: AccessKind, tick: u64, core: u8) -> Lookup {
        let (set, tag) = self.config.split(address);
        let ways = self.config.ways();
        let base = self.slot(set, 0);
        let row = &self.blocks[base..base + ways as usize];

        if let Some(way) = row.iter().position(|b| b.valid && b.tag == tag) {
            let way = way as u32;
            let write = kind.is_write();
            if write {
                let epoch = self.bump_epoch();
                let b = &mut self.blocks[base + way as usize];
                b.dirty = true;
                b.written_at = tick;
                b.refresh_origin = tick;
                b.epoch = epoch;
                b.last_writer_core = core;
            }
            return Lookup {
                outcome: AccessOutcome { kind: OutcomeKind::Hit, victim_writeback: None, serviced_bank: None },
                set,
                way,
                tag,
                array_write: write,
                evicted: None,
            };
        }

        let way = match row.iter().position(|b| !b.valid) {
            Some(w) => w as u32,
            None => (self.rng.next_u64() % u64::from(ways)) as u32,
        };
        let old = self.blocks[base + way as usize];
        let evicted = old.valid.then(|| Evicted {
            set,
            way,
            address: self.config.line_address(set, old.tag),
            meta: old,
        });
        let epoch = self.bump_epoch();
        self.blocks[base + way as usize] = BlockMeta {
            tag,
            valid: true,
            dirty: kind.is_write(),
            written_at: tick,
            refresh_origin: tick,
            epoch,
            last_writer_core: core,
        };
        let (outcome_kind, victim_writeback) = match evicted {
            Some(e) if e.meta.dirty => (OutcomeKind::MissDirtyEviction, Some(e.address)),
            _ => (OutcomeKind::MissClean, None),
        };
        Lookup {
            outcome: AccessOutcome { kind: outcome_kind, victim_writeback, serviced_bank: None },
            set,
            way,
            tag,
            array_write: true,
            evicted,
        }
    }

    fn bump_epoch(&mut self) -> u64 {
        let e = self.next_epoch;
        self.next_epoch += 1;
        e
    }

    /// Drops one block, returning it if it was valid.
    pub fn invalidate(&mut self, set: u32, way: u32) -> Option<Evicted> {
        let address_of = |cfg: &CacheConfig, tag| cfg.line_address(set, tag);
        let cfg = self.config;
        let b = self.block_mut(set, way);
        if !b.valid {
            return None;
        }
        let meta = *b;
        b.valid = false;
        b.dirty = false;
        Some(Evicted { set, way, address: address_of(&cfg, meta.tag), meta })
    }

    /// Empties the cache, returning every valid block it held.
    pub fn flush(&mut self) -> Vec<Evicted> {
        let cfg = self.config;
        let ways = cfg.ways();
        let mut out = Vec::new();
        for (slot, b) in self.blocks.iter_mut().enumerate() {
            if b.valid {
                let set = slot as u32 / ways;
                out.push(Evicted {
                    set,
                    way: slot as u32 % ways,
                    address: cfg.line_address(set, b.tag),
                    meta: *b,
                });
                b.valid = false;
                b.dirty = false;
            }
        }
        out
    }

    /// Switches to `new`. Identity is free and keeps the contents; anything
    /// else flushes every block and charges the fixed reconfiguration cost.
    pub fn reconfigure(&mut self, new: CacheConfig) -> Reconfiguration {
        if new == self.config {
            return Reconfiguration { cost: ReconfigCost::ZERO, flushed: Vec::new() };
        }
        let flushed = self.flush();
        self.config = new;
        self.blocks = vec![BlockMeta::default(); (new.sets() * new.ways()) as usize];
        Reconfiguration { cost: ReconfigCost::CHANGE, flushed }
    }

    pub fn valid_blocks(&self) -> impl Iterator<Item = (u32, u32, &BlockMeta)> + '_ {
        let ways = self.config.ways();
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.valid)
            .map(move |(slot, b)| (slot as u32 / ways, slot as u32 % ways, b))
    }

    /// Mutable walk over valid blocks, used for refresh settlement.
    pub fn valid_blocks_mut(&mut self) -> impl Iterator<Item = (u32, u32, &mut BlockMeta)> + '_ {
        let ways = self.config.ways();
        self.blocks
            .iter_mut()
            .enumerate()
            .filter(|(_, b)| b.valid)
            .map(move |(slot, b)| (slot as u32 / ways, slot as u32 % ways, b))
    }
}
