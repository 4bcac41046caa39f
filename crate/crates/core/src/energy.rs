//! SRAM and STT-RAM parameter tables, and conversion of segment counters
//! into energy, latency and EDP.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::banked::{PhysicalBankId, TOTAL_BANKS};
use crate::cache::CacheConfig;
use crate::retention::{power_energy_nj, Clock, RetentionClass};
use crate::stats::{BankCounters, SimStats};

const SHIPPED_PARAMS: &str = include_str!("../data/params.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Device {
    Sram,
    Stt(RetentionClass),
}

impl Device {
    pub const ALL: [Device; 5] = [
        Device::Sram,
        Device::Stt(RetentionClass::R100us),
        Device::Stt(RetentionClass::R1ms),
        Device::Stt(RetentionClass::R10ms),
        Device::Stt(RetentionClass::R100ms),
    ];
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Device::Sram => f.write_str("SRAM"),
            Device::Stt(c) => write!(f, "STT-{}", c.label()),
        }
    }
}

impl FromStr for Device {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("sram") {
            return Ok(Device::Sram);
        }
        t.strip_prefix("STT-")
            .and_then(|c| c.parse().ok())
            .map(Device::Stt)
            .ok_or_else(|| ParamError::Parse(format!("unknown device {s:?}")))
    }
}

impl Serialize for Device {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub write_energy_nj: f64,
    pub hit_energy_nj: f64,
    pub leakage_mw: f64,
    pub hit_latency_cycles: u64,
    pub write_latency_cycles: u64,
}

impl EnergyParams {
    fn check(&self) -> bool {
        [self.write_energy_nj, self.hit_energy_nj, self.leakage_mw]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("no parameters for device {device} with configuration {config}")]
    Missing { device: Device, config: CacheConfig },
    #[error("parameter file: {0}")]
    Parse(String),
    #[error("parameter entry {device} {config} has a negative or non-finite value")]
    Invalid { device: Device, config: CacheConfig },
    #[error("duplicate parameter entry {device} {config}")]
    Duplicate { device: Device, config: CacheConfig },
    #[error("cannot read parameter file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Deserialize)]
struct RawFile {
    entry: Vec<RawEntry>,
}

#[derive(Debug, Deserialize)]
struct RawEntry {
    device: String,
    size: String,
    ways: u32,
    line: u32,
    #[serde(flatten)]
    params: EnergyParams,
}

/// (device, configuration) → parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamTable {
    entries: BTreeMap<(Device, CacheConfig), EnergyParams>,
}

impl ParamTable {
    /// The table bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_toml_str(SHIPPED_PARAMS).expect("bundled parameter file is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ParamError> {
        let raw: RawFile = toml::from_str(text).map_err(|e| ParamError::Parse(e.to_string()))?;
        let mut table = ParamTable::default();
        for e in raw.entry {
            let device: Device = e.device.parse()?;
            let config: CacheConfig = format!("{}-{}W-{}B", e.size, e.ways, e.line)
                .parse()
                .map_err(|err| ParamError::Parse(format!("{err}")))?;
            if !e.params.check() {
                return Err(ParamError::Invalid { device, config });
            }
            if table.entries.insert((device, config), e.params).is_some() {
                return Err(ParamError::Duplicate { device, config });
            }
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParamError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, device: Device, config: CacheConfig, params: EnergyParams) {
        self.entries.insert((device, config), params);
    }

    pub fn get(&self, device: Device, config: CacheConfig) -> Result<&EnergyParams, ParamError> {
        self.entries.get(&(device, config)).ok_or(ParamError::Missing { device, config })
    }

    /// Whether every listed device has an entry for `config`.
    pub fn covers(&self, config: CacheConfig, devices: &[Device]) -> bool {
        devices.iter().all(|d| self.entries.contains_key(&(*d, config)))
    }

    pub fn configs(&self) -> BTreeSet<CacheConfig> {
        self.entries.keys().map(|(_, c)| *c).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Device, CacheConfig, &EnergyParams)> {
        self.entries.iter().map(|((d, c), p)| (*d, *c, p))
    }

    /// Same table with one hit latency for every entry.
    pub fn with_hit_latency(mut self, cycles: u64) -> Self {
        for p in self.entries.values_mut() {
            p.hit_latency_cycles = cycles;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyComponents {
    pub dynamic_nj: f64,
    pub leakage_nj: f64,
    pub refresh_nj: f64,
    pub buffer_leakage_nj: f64,
    pub reconfig_nj: f64,
}

impl EnergyComponents {
    pub fn total(&self) -> f64 {
        self.dynamic_nj + self.leakage_nj + self.refresh_nj + self.buffer_leakage_nj + self.reconfig_nj
    }

    pub fn add(&mut self, o: &EnergyComponents) {
        self.dynamic_nj += o.dynamic_nj;
        self.leakage_nj += o.leakage_nj;
        self.refresh_nj += o.refresh_nj;
        self.buffer_leakage_nj += o.buffer_leakage_nj;
        self.reconfig_nj += o.reconfig_nj;
    }
}

/// Energy split by component, whole-cache and per physical bank. Shared
/// terms (refresh buffer, reconfiguration) are divided evenly over the
/// powered banks.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub whole: EnergyComponents,
    pub banks: [EnergyComponents; TOTAL_BANKS],
}

impl Default for EnergyLedger {
    fn default() -> Self {
        Self { whole: EnergyComponents::default(), banks: [EnergyComponents::default(); TOTAL_BANKS] }
    }
}

impl EnergyLedger {
    pub fn total(&self) -> f64 {
        self.whole.total()
    }

    pub fn add(&mut self, o: &EnergyLedger) {
        self.whole.add(&o.whole);
        for (a, b) in self.banks.iter_mut().zip(&o.banks) {
            a.add(b);
        }
    }

    /// Sum of per-bank totals in bank order.
    pub fn bank_sum(&self) -> f64 {
        self.banks.iter().map(EnergyComponents::total).sum()
    }
}

/// The four quantities the energy and latency formulas consume.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessCounts {
    pub hits: u64,
    pub writes: u64,
    pub writebacks: u64,
    pub misses: u64,
}

impl From<&BankCounters> for AccessCounts {
    fn from(c: &BankCounters) -> Self {
        Self { hits: c.hits(), writes: c.writes(), writebacks: c.writebacks, misses: c.misses() }
    }
}

/// hits × hit energy + (writes + writebacks) × write energy.
pub fn dynamic_energy_nj(c: &AccessCounts, p: &EnergyParams) -> f64 {
    c.hits as f64 * p.hit_energy_nj + (c.writes + c.writebacks) as f64 * p.write_energy_nj
}

/// hits × hit latency + writes × write latency + misses × miss penalty.
pub fn access_latency(c: &AccessCounts, p: &EnergyParams, miss_penalty_cycles: u64) -> u64 {
    c.hits * p.hit_latency_cycles + c.writes * p.write_latency_cycles + c.misses * miss_penalty_cycles
}

/// Energy of one segment from its counters.
pub fn energy_of_interval(stats: &SimStats, table: &ParamTable, clock: Clock) -> Result<EnergyLedger, ParamError> {
    let mut ledger = EnergyLedger::default();
    let wall = stats.wall_cycles();
    let n = stats.banks.len().max(1) as f64;
    let bank_count = f64::from(stats.config.bank_count());
    let buffer_nj = power_energy_nj(stats.refresh.buffer_leakage_mw_for(stats.config.size_bytes()), wall, clock);
    for b in &stats.banks {
        let p = table.get(b.device, stats.config)?;
        ledger.banks[b.id.flat()] = EnergyComponents {
            dynamic_nj: dynamic_energy_nj(&(&b.counters).into(), p),
            leakage_nj: power_energy_nj(p.leakage_mw / bank_count, wall, clock),
            refresh_nj: b.counters.refreshes as f64 * stats.refresh.per_refresh_energy_nj,
            buffer_leakage_nj: buffer_nj / n,
            reconfig_nj: stats.reconfig.energy_nj / n,
        };
    }
    for b in &ledger.banks {
        ledger.whole.add(b);
    }
    Ok(ledger)
}

/// Latency of the accesses one bank serviced in a segment, misses after
/// expiration included.
pub fn bank_latency(
    stats: &SimStats,
    bank: PhysicalBankId,
    table: &ParamTable,
    miss_penalty_cycles: u64,
) -> Result<u64, ParamError> {
    match stats.bank(bank) {
        Some(b) => Ok(access_latency(&(&b.counters).into(), table.get(b.device, stats.config)?, miss_penalty_cycles)),
        None => Ok(0),
    }
}

/// Latency of a segment: hits × hit latency + writes × write latency +
/// misses × miss penalty + reconfiguration stall.
pub fn interval_latency(stats: &SimStats, table: &ParamTable, miss_penalty_cycles: u64) -> Result<u64, ParamError> {
    let mut cycles = stats.reconfig.latency_cycles;
    for b in &stats.banks {
        let p = table.get(b.device, stats.config)?;
        cycles += access_latency(&(&b.counters).into(), p, miss_penalty_cycles);
    }
    Ok(cycles)
}

/// Energy-delay product in nJ·cycles.
pub fn edp(energy_nj: f64, latency_cycles: u64) -> f64 {
    energy_nj * latency_cycles as f64
}
