//! The shared last-level cache as a whole: cache engine, virtual-to-physical
//! bank mapping, per-bank counters, counter-driven expiration and refresh
//! accounting.

use std::collections::HashMap;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::banked::{build_layout, MappingError, MappingTable, PhysicalBankId, VirtualBankLayout, TOTAL_BANKS};
use crate::cache::{AccessOutcome, CacheConfig, CacheState, ReconfigCost};
use crate::energy::Device;
use crate::retention::{
    settle_refreshes, Clock, Expiration, ExpirationCounter, ExpiryQueue, RefreshMode, RefreshModel, RetentionClass,
};
use crate::stats::{BankCounters, BankStats, SimStats};
use crate::trace::MemoryAccess;

/// Which cache is being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Technology {
    /// Non-volatile SRAM banks.
    Sram,
    /// Every bank at one retention class, kept alive by perfect refresh.
    Drs(RetentionClass),
    /// Banks take their cluster's retention class; blocks expire.
    Halls,
}

impl Technology {
    pub fn device_for(self, bank: PhysicalBankId) -> Device {
        match self {
            Technology::Sram => Device::Sram,
            Technology::Drs(c) => Device::Stt(c),
            Technology::Halls => Device::Stt(bank.retention_class()),
        }
    }

    /// Devices whose parameters a run may need.
    pub fn devices(self) -> Vec<Device> {
        match self {
            Technology::Sram => vec![Device::Sram],
            Technology::Drs(c) => vec![Device::Stt(c)],
            Technology::Halls => RetentionClass::ALL.iter().map(|c| Device::Stt(*c)).collect(),
        }
    }

    pub fn expires(self) -> bool {
        self == Technology::Halls
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Technology::Sram => f.write_str("SRAM"),
            Technology::Drs(c) => write!(f, "DRS-{}", c.label()),
            Technology::Halls => f.write_str("HALLS"),
        }
    }
}

impl Serialize for Technology {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

fn bank_for(layout: &VirtualBankLayout, mapping: &MappingTable, set: u32, way: u32) -> PhysicalBankId {
    mapping.physical(layout.vbank_of(set, way))
}

#[derive(Debug, Clone)]
pub struct Llc {
    tech: Technology,
    clock: Clock,
    refresh: RefreshModel,
    cache: CacheState,
    layout: VirtualBankLayout,
    mapping: MappingTable,
    counters: [BankCounters; TOTAL_BANKS],
    expiry: ExpiryQueue,
    counters_by_cluster: [ExpirationCounter; 4],
    /// (set, tag) of expired blocks → bank they expired from.
    recently_expired: HashMap<(u32, u64), PhysicalBankId>,
    segment_start: u64,
    now: u64,
    accesses: u64,
}

impl Llc {
    /// `refresh` only applies to [`Technology::Drs`]; other technologies
    /// never refresh.
    pub fn new(
        tech: Technology,
        config: CacheConfig,
        mapping: MappingTable,
        clock: Clock,
        refresh: RefreshModel,
        seed: u64,
        start_tick: u64,
    ) -> Result<Self, MappingError> {
        let layout = build_layout(config);
        mapping.validate(&layout)?;
        let refresh = match tech {
            Technology::Drs(_) => refresh,
            _ => RefreshModel::NONE,
        };
        Ok(Self {
            tech,
            clock,
            refresh,
            cache: CacheState::new(config, seed),
            layout,
            mapping,
            counters: [BankCounters::default(); TOTAL_BANKS],
            expiry: ExpiryQueue::default(),
            counters_by_cluster: RetentionClass::ALL.map(|c| ExpirationCounter::for_class(c, clock)),
            recently_expired: HashMap::new(),
            segment_start: start_tick,
            now: start_tick,
            accesses: 0,
        })
    }

    pub fn technology(&self) -> Technology {
        self.tech
    }

    pub fn config(&self) -> CacheConfig {
        self.cache.config()
    }

    pub fn layout(&self) -> &VirtualBankLayout {
        &self.layout
    }

    pub fn mapping(&self) -> &MappingTable {
        &self.mapping
    }

    pub fn cache(&self) -> &CacheState {
        &self.cache
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Retention of the bank in cycles, if its blocks can expire.
    pub fn retention_cycles(&self, bank: PhysicalBankId) -> Option<u64> {
        self.tech.expires().then(|| bank.retention_class().retention_cycles(self.clock))
    }

    fn drs_retention(&self) -> Option<u64> {
        match (self.tech, self.refresh.mode) {
            (Technology::Drs(c), RefreshMode::PerfectDrs) => Some(c.retention_cycles(self.clock)),
            _ => None,
        }
    }

    fn expire_until(&mut self, to: u64, mut on: impl FnMut(Expiration)) {
        while let Some(due) = self.expiry.pop_due(to) {
            let b = *self.cache.block(due.set, due.way);
            if !b.valid || b.epoch != due.epoch {
                continue;
            }
            let bank = bank_for(&self.layout, &self.mapping, due.set, due.way);
            let gone = self.cache.invalidate(due.set, due.way).expect("checked valid");
            let c = &mut self.counters[bank.flat()];
            c.expirations += 1;
            if b.dirty {
                c.dirty_expirations += 1;
                c.writebacks += 1;
            }
            self.recently_expired.insert((due.set, b.tag), bank);
            on(Expiration { tick: due.tick, address: gone.address, was_dirty: b.dirty, bank });
        }
    }

    /// Evicts every block whose counter saturates at or before `to`.
    pub fn advance_time(&mut self, to: u64) -> Vec<Expiration> {
        let mut out = Vec::new();
        let to = to.max(self.now);
        self.expire_until(to, |e| out.push(e));
        self.now = to;
        out
    }

    pub fn access(&mut self, a: &MemoryAccess) -> AccessOutcome {
        let tick = a.tick.max(self.now);
        self.expire_until(tick, |_| {});
        self.now = tick;
        self.accesses += 1;

        let drs = self.drs_retention();
        if let (Some(r), true) = (drs, a.kind.is_write()) {
            if let Some(way) = self.cache.probe(a.address) {
                let (set, _) = self.cache.config().split(a.address);
                let bank = bank_for(&self.layout, &self.mapping, set, way);
                let b = self.cache.block_mut(set, way);
                self.counters[bank.flat()].refreshes += settle_refreshes(&mut b.refresh_origin, tick, r);
            }
        }

        let l = self.cache.lookup(a.address, a.kind, tick, a.core_id);
        let bank = bank_for(&self.layout, &self.mapping, l.set, l.way);
        let write = a.kind.is_write();
        if l.outcome.is_hit() {
            let c = &mut self.counters[bank.flat()];
            if write {
                c.write_hits += 1;
            } else {
                c.read_hits += 1;
            }
        } else {
            let charged = match self.recently_expired.remove(&(l.set, l.tag)) {
                Some(expired_from) => {
                    self.counters[expired_from.flat()].expiration_misses += 1;
                    expired_from
                }
                None => bank,
            };
            let c = &mut self.counters[charged.flat()];
            if write {
                c.write_misses += 1;
            } else {
                c.read_misses += 1;
            }
            if let Some(ev) = l.evicted {
                let c = &mut self.counters[bank.flat()];
                if ev.meta.dirty {
                    c.writebacks += 1;
                }
                if let Some(r) = drs {
                    let mut origin = ev.meta.refresh_origin;
                    c.refreshes += settle_refreshes(&mut origin, tick, r);
                }
            }
        }
        if l.array_write && self.tech.expires() {
            let counter = self.counters_by_cluster[usize::from(bank.cluster)];
            let epoch = self.cache.block(l.set, l.way).epoch;
            self.expiry.schedule(counter.expiry_tick(tick), l.set, l.way, epoch);
        }
        AccessOutcome { serviced_bank: Some(bank), ..l.outcome }
    }

    fn take_stats(&mut self, end: u64, reconfig: ReconfigCost) -> SimStats {
        let banks = {
            let mut ids: Vec<PhysicalBankId> = self.mapping.entries().to_vec();
            ids.sort();
            ids.into_iter()
                .map(|id| BankStats {
                    id,
                    device: self.tech.device_for(id),
                    counters: std::mem::take(&mut self.counters[id.flat()]),
                })
                .collect()
        };
        let stats = SimStats {
            config: self.cache.config(),
            mapping: self.mapping.clone(),
            banks,
            start_tick: self.segment_start,
            end_tick: end,
            reconfig,
            refresh: self.refresh,
            accesses: std::mem::take(&mut self.accesses),
        };
        self.segment_start = end;
        stats
    }

    /// Ends the current segment at `end`: processes due expirations, settles
    /// refreshes of resident blocks, and returns the segment's counters.
    pub fn close_segment(&mut self, end: u64) -> SimStats {
        let end = end.max(self.now);
        self.expire_until(end, |_| {});
        self.now = end;
        if let Some(r) = self.drs_retention() {
            let (layout, mapping, counters) = (&self.layout, &self.mapping, &mut self.counters);
            for (set, way, b) in self.cache.valid_blocks_mut() {
                let bank = bank_for(layout, mapping, set, way);
                counters[bank.flat()].refreshes += settle_refreshes(&mut b.refresh_origin, end, r);
            }
        }
        self.take_stats(end, ReconfigCost::ZERO)
    }

    /// Switches configuration and/or mapping at `tick`. Closes the current
    /// segment first; the returned zero-length segment carries the flush
    /// writebacks and, when the configuration changes, the fixed
    /// reconfiguration cost. Returns `None` when nothing changes.
    pub fn reconfigure(
        &mut self,
        config: CacheConfig,
        mapping: MappingTable,
        tick: u64,
    ) -> Result<(SimStats, Option<SimStats>), MappingError> {
        self.switch(config, mapping, tick, false)
    }

    /// Empties the cache at `tick` without changing anything else.
    pub fn flush(&mut self, tick: u64) -> (SimStats, SimStats) {
        let (config, mapping) = (self.config(), self.mapping.clone());
        let (closed, t) = self.switch(config, mapping, tick, true).expect("current mapping is valid");
        (closed, t.expect("forced flush always yields a transition"))
    }

    fn switch(
        &mut self,
        config: CacheConfig,
        mapping: MappingTable,
        tick: u64,
        force_flush: bool,
    ) -> Result<(SimStats, Option<SimStats>), MappingError> {
        let layout = build_layout(config);
        mapping.validate(&layout)?;
        let closed = self.close_segment(tick);
        if config == self.cache.config() && mapping == self.mapping && !force_flush {
            return Ok((closed, None));
        }
        let tick = self.now;
        let r = self.cache.reconfigure(config);
        let cost = r.cost;
        let flushed = if config == self.layout.config() { self.cache.flush() } else { r.flushed };
        let drs = self.drs_retention();
        for ev in &flushed {
            let bank = bank_for(&self.layout, &self.mapping, ev.set, ev.way);
            let c = &mut self.counters[bank.flat()];
            if ev.meta.dirty {
                c.writebacks += 1;
            }
            if let Some(r) = drs {
                let mut origin = ev.meta.refresh_origin;
                c.refreshes += settle_refreshes(&mut origin, tick, r);
            }
        }
        // The transition is booked against the outgoing configuration.
        let mut transition = self.take_stats(tick, cost);
        transition.config = self.layout.config();
        self.expiry.clear();
        self.recently_expired.clear();
        self.layout = layout;
        self.mapping = mapping;
        Ok((closed, Some(transition)))
    }
}
