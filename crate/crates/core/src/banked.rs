//! Physical organization: 32 banks of 32KB in four 8-bank retention
//! clusters, the virtual-bank layout of a configuration, the mapping of
//! virtual banks onto physical banks, and the set-address decoder.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheConfig, BANK_BYTES};
use crate::retention::RetentionClass;

pub const CLUSTERS: u8 = 4;
pub const BANKS_PER_CLUSTER: u8 = 8;
pub const TOTAL_BANKS: usize = (CLUSTERS as usize) * (BANKS_PER_CLUSTER as usize);

/// Highest decodable address bit.
pub const ADDRESS_BITS: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhysicalBankId {
    pub cluster: u8,
    pub bank: u8,
}

impl PhysicalBankId {
    pub fn new(cluster: u8, bank: u8) -> Self {
        assert!(cluster < CLUSTERS && bank < BANKS_PER_CLUSTER, "bank ({cluster},{bank}) out of range");
        Self { cluster, bank }
    }

    /// Dense index 0..32, cluster-major.
    pub fn flat(self) -> usize {
        usize::from(self.cluster) * usize::from(BANKS_PER_CLUSTER) + usize::from(self.bank)
    }

    pub fn from_flat(i: usize) -> Self {
        Self::new((i / usize::from(BANKS_PER_CLUSTER)) as u8, (i % usize::from(BANKS_PER_CLUSTER)) as u8)
    }

    pub fn retention_class(self) -> RetentionClass {
        RetentionClass::from_cluster(self.cluster).expect("cluster id checked at construction")
    }

    pub fn all() -> impl Iterator<Item = PhysicalBankId> {
        (0..TOTAL_BANKS).map(Self::from_flat)
    }
}

impl fmt::Display for PhysicalBankId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}B{}", self.cluster, self.bank)
    }
}

/// A 32KB CPU-visible region: a group of whole ways over a set range.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualBank {
    pub id: u32,
    pub ways: Range<u32>,
    pub sets: Range<u32>,
    /// Observed EDP with this vbank hosted in each cluster.
    pub edp_by_cluster: [Option<f64>; CLUSTERS as usize],
}

impl VirtualBank {
    pub fn contains(&self, set: u32, way: u32) -> bool {
        self.sets.contains(&set) && self.ways.contains(&way)
    }

    pub fn bytes(&self, line_bytes: u32) -> u64 {
        u64::from(self.ways.len() as u32) * u64::from(self.sets.len() as u32) * u64::from(line_bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualBankLayout {
    config: CacheConfig,
    sets_per_vbank: u32,
    ways_per_vbank: u32,
    vbanks: Vec<VirtualBank>,
}

impl VirtualBankLayout {
    pub fn config(&self) -> CacheConfig {
        self.config
    }

    pub fn vbanks(&self) -> &[VirtualBank] {
        &self.vbanks
    }

    pub fn vbanks_mut(&mut self) -> &mut [VirtualBank] {
        &mut self.vbanks
    }

    pub fn len(&self) -> usize {
        self.vbanks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vbanks.is_empty()
    }

    fn way_groups(&self) -> u32 {
        self.config.ways() / self.ways_per_vbank
    }

    /// Virtual bank holding (set, way).
    pub fn vbank_of(&self, set: u32, way: u32) -> u32 {
        (set / self.sets_per_vbank) * self.way_groups() + way / self.ways_per_vbank
    }

    /// Virtual banks whose set range covers `set`, one per way group.
    pub fn vbanks_for_set(&self, set: u32) -> Range<u32> {
        let first = (set / self.sets_per_vbank) * self.way_groups();
        first..first + self.way_groups()
    }
}

/// Splits the configured cache into 32KB virtual banks. Ways larger than
/// 32KB are cut into set ranges; smaller ways are packed whole. Ids run over
/// way groups within a set range, then over set ranges, so a 128K-2W-64B
/// cache gives VBank0={w0, sets 0-511}, VBank1={w1, sets 0-511},
/// VBank2={w0, sets 512-1023}, VBank3={w1, sets 512-1023}.
pub fn build_layout(config: CacheConfig) -> VirtualBankLayout {
    let (sets_per_vbank, ways_per_vbank) = if config.way_bytes() >= BANK_BYTES {
        ((BANK_BYTES / u64::from(config.line_bytes())) as u32, 1)
    } else {
        (config.sets(), (BANK_BYTES / config.way_bytes()) as u32)
    };
    let ranges = config.sets() / sets_per_vbank;
    let groups = config.ways() / ways_per_vbank;
    let mut vbanks = Vec::with_capacity((ranges * groups) as usize);
    for r in 0..ranges {
        for g in 0..groups {
            vbanks.push(VirtualBank {
                id: r * groups + g,
                ways: g * ways_per_vbank..(g + 1) * ways_per_vbank,
                sets: r * sets_per_vbank..(r + 1) * sets_per_vbank,
                edp_by_cluster: [None; CLUSTERS as usize],
            });
        }
    }
    VirtualBankLayout { config, sets_per_vbank, ways_per_vbank, vbanks }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MappingError {
    #[error("mapping covers {got} virtual banks but the layout has {expected}")]
    Coverage { expected: usize, got: usize },
    #[error("physical bank {0} hosts more than one virtual bank")]
    NotInjective(PhysicalBankId),
    #[error("cluster {0} hosts more than {BANKS_PER_CLUSTER} virtual banks")]
    ClusterFull(u8),
    #[error("physical bank ({0},{1}) does not exist")]
    NoSuchBank(u8, u8),
}

/// vbank id → physical bank, indexed by vbank id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MappingTable {
    entries: Vec<PhysicalBankId>,
}

impl MappingTable {
    pub fn from_entries(entries: Vec<PhysicalBankId>) -> Result<Self, MappingError> {
        let table = Self { entries };
        table.check_injective()?;
        Ok(table)
    }

    /// Tuning set `set_id`: vbank i goes to cluster (i + set_id) mod 4, taking
    /// that cluster's lowest free bank.
    pub fn rotation(vbanks: usize, set_id: u8) -> Self {
        assert!(vbanks <= TOTAL_BANKS, "at most {TOTAL_BANKS} virtual banks");
        let mut next_free = [0u8; CLUSTERS as usize];
        let entries = (0..vbanks)
            .map(|i| {
                let cluster = ((i + usize::from(set_id)) % usize::from(CLUSTERS)) as u8;
                let bank = next_free[usize::from(cluster)];
                next_free[usize::from(cluster)] += 1;
                PhysicalBankId::new(cluster, bank)
            })
            .collect();
        Self { entries }
    }

    /// Every vbank in one cluster; only legal for up to eight vbanks.
    pub fn uniform(vbanks: usize, cluster: u8) -> Result<Self, MappingError> {
        if vbanks > usize::from(BANKS_PER_CLUSTER) {
            return Err(MappingError::ClusterFull(cluster));
        }
        Self::from_entries((0..vbanks).map(|i| PhysicalBankId::new(cluster, i as u8)).collect())
    }

    pub fn entries(&self) -> &[PhysicalBankId] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn physical(&self, vbank: u32) -> PhysicalBankId {
        self.entries[vbank as usize]
    }

    /// Rank of the vbank's physical bank among the banks this table uses in
    /// the same cluster.
    pub fn bank_local_id(&self, vbank: u32) -> u8 {
        let p = self.physical(vbank);
        self.entries.iter().filter(|q| q.cluster == p.cluster && q.bank < p.bank).count() as u8
    }

    fn check_injective(&self) -> Result<(), MappingError> {
        let mut seen = [false; TOTAL_BANKS];
        let mut per_cluster = [0usize; CLUSTERS as usize];
        for p in &self.entries {
            if p.cluster >= CLUSTERS || p.bank >= BANKS_PER_CLUSTER {
                return Err(MappingError::NoSuchBank(p.cluster, p.bank));
            }
            if std::mem::replace(&mut seen[p.flat()], true) {
                return Err(MappingError::NotInjective(*p));
            }
            per_cluster[usize::from(p.cluster)] += 1;
            if per_cluster[usize::from(p.cluster)] > usize::from(BANKS_PER_CLUSTER) {
                return Err(MappingError::ClusterFull(p.cluster));
            }
        }
        Ok(())
    }

    /// Injective, at most eight vbanks per cluster, and exactly covering the
    /// layout.
    pub fn validate(&self, layout: &VirtualBankLayout) -> Result<(), MappingError> {
        if self.entries.len() != layout.len() {
            return Err(MappingError::Coverage { expected: layout.len(), got: self.entries.len() });
        }
        self.check_injective()
    }

    /// Report rows: vbank_id, way_range, set_range, cluster_id, bank_index.
    pub fn csv(&self, layout: &VirtualBankLayout) -> String {
        let mut out = String::from("vbank_id,way_range,set_range,cluster_id,bank_index\n");
        for (v, p) in layout.vbanks().iter().zip(&self.entries) {
            out.push_str(&format!(
                "{},{}-{},{}-{},{},{}\n",
                v.id,
                v.ways.start,
                v.ways.end - 1,
                v.sets.start,
                v.sets.end - 1,
                p.cluster,
                p.bank
            ));
        }
        out
    }
}

/// Banks left powered by a mapping; all others are shut down.
pub fn power_state(mapping: &MappingTable) -> BTreeSet<PhysicalBankId> {
    mapping.entries().iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dispatch {
    pub vbank: u32,
    pub physical: PhysicalBankId,
    pub bank_local_id: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub index: u32,
    pub tag: u64,
    pub offset: u32,
    /// One target per way group, in way order.
    pub dispatch: Vec<Dispatch>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("address {0:#x} is outside the {ADDRESS_BITS}-bit modeled range")]
    OutOfRange(u64),
    #[error(transparent)]
    Mapping(#[from] MappingError),
}

/// Splits an address and names every physical bank that must compare tags.
pub fn decode(
    layout: &VirtualBankLayout,
    mapping: &MappingTable,
    address: u64,
) -> Result<Decoded, DecodeError> {
    if address >> ADDRESS_BITS != 0 {
        return Err(DecodeError::OutOfRange(address));
    }
    mapping.validate(layout)?;
    let config = layout.config();
    let (index, tag) = config.split(address);
    let offset = (address % u64::from(config.line_bytes())) as u32;
    let dispatch = layout
        .vbanks_for_set(index)
        .map(|vbank| Dispatch {
            vbank,
            physical: mapping.physical(vbank),
            bank_local_id: mapping.bank_local_id(vbank),
        })
        .collect();
    Ok(Decoded { index, tag, offset, dispatch })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(s: &str) -> CacheConfig {
        s.parse().unwrap()
    }

    #[test]
    fn small_two_way_layout() {
        let l = build_layout(cfg("128K-2W-64B"));
        let got: Vec<_> = l.vbanks().iter().map(|v| (v.ways.clone(), v.sets.clone())).collect();
        assert_eq!(got, vec![(0..1, 0..512), (1..2, 0..512), (0..1, 512..1024), (1..2, 512..1024)]);
    }

    #[test]
    fn base_layout_splits_each_way_in_two() {
        let l = build_layout(CacheConfig::base());
        assert_eq!(l.len(), 32);
        assert!(l.vbanks().iter().all(|v| v.ways.len() == 1 && v.sets.len() == 512));
    }

    #[test]
    fn narrow_ways_are_packed() {
        let l = build_layout(cfg("128K-16W-64B"));
        assert_eq!(l.len(), 4);
        for (i, v) in l.vbanks().iter().enumerate() {
            assert_eq!(v.ways, i as u32 * 4..i as u32 * 4 + 4);
            assert_eq!(v.sets, 0..128);
        }
    }

    #[test]
    fn every_layout_partitions_the_cache() {
        for c in CacheConfig::lattice() {
            let l = build_layout(c);
            assert_eq!(l.len() as u64, c.size_bytes() / BANK_BYTES);
            let mut hits = vec![0u8; (c.sets() * c.ways()) as usize];
            for v in l.vbanks() {
                assert_eq!(v.bytes(c.line_bytes()), BANK_BYTES, "{c}");
                for s in v.sets.clone() {
                    for w in v.ways.clone() {
                        hits[(s * c.ways() + w) as usize] += 1;
                        assert_eq!(l.vbank_of(s, w), v.id);
                    }
                }
            }
            assert!(hits.iter().all(|&h| h == 1), "{c}");
        }
    }

    #[test]
    fn rotation_table_one_set_two() {
        let m = MappingTable::rotation(4, 2);
        assert_eq!(m.physical(0).cluster, 2);
        assert_eq!(m.physical(3).cluster, 1);
    }

    #[test]
    fn rotation_visits_every_cluster_once() {
        for n in [4usize, 8, 16, 32] {
            for v in 0..n as u32 {
                let mut clusters: Vec<u8> = (0..4).map(|s| MappingTable::rotation(n, s).physical(v).cluster).collect();
                clusters.sort();
                assert_eq!(clusters, vec![0, 1, 2, 3]);
            }
            let layout = build_layout(CacheConfig::lattice().into_iter().find(|c| c.bank_count() as usize == n).unwrap());
            for s in 0..4 {
                MappingTable::rotation(n, s).validate(&layout).unwrap();
            }
        }
    }

    #[test]
    fn decode_dispatches_one_bank_per_way() {
        let config = cfg("128K-2W-64B");
        let layout = build_layout(config);
        let p = PhysicalBankId::new;
        let m = MappingTable::from_entries(vec![p(0, 0), p(3, 0), p(0, 1), p(3, 1)]).unwrap();
        let d = decode(&layout, &m, 5 * 64).unwrap();
        assert_eq!(d.index, 5);
        let targets: Vec<_> = d.dispatch.iter().map(|x| x.physical).collect();
        assert_eq!(targets, vec![p(0, 0), p(3, 0)]);
        let hi = decode(&layout, &m, 600 * 64).unwrap();
        let ids: Vec<_> = hi.dispatch.iter().map(|x| (x.physical, x.bank_local_id)).collect();
        assert_eq!(ids, vec![(p(0, 1), 1), (p(3, 1), 1)]);
    }

    #[test]
    fn decode_zero_and_out_of_range() {
        let layout = build_layout(cfg("256K-8W-64B"));
        assert_eq!(layout.config().sets(), 512);
        let m = MappingTable::rotation(layout.len(), 0);
        let d = decode(&layout, &m, 0).unwrap();
        assert_eq!((d.index, d.tag, d.offset), (0, 0, 0));
        assert!(matches!(decode(&layout, &m, 1 << 48), Err(DecodeError::OutOfRange(_))));
    }

    #[test]
    fn decode_inverts_over_sixteen_bits() {
        let config = cfg("128K-4W-16B");
        let layout = build_layout(config);
        let m = MappingTable::rotation(layout.len(), 1);
        for addr in 0u64..1 << 16 {
            let d = decode(&layout, &m, addr).unwrap();
            let back = config.line_address(d.index, d.tag) + u64::from(d.offset);
            assert_eq!(back, addr);
        }
    }

    #[test]
    fn power_state_counts() {
        for (s, n) in [("1M-16W-64B", 32), ("128K-2W-64B", 4), ("512K-16W-64B", 16)] {
            let c = cfg(s);
            let m = MappingTable::rotation(c.bank_count() as usize, 0);
            assert_eq!(power_state(&m).len(), n);
        }
    }

    #[test]
    fn illegal_tables_rejected() {
        let p = PhysicalBankId::new;
        assert_eq!(
            MappingTable::from_entries(vec![p(1, 2), p(1, 2)]),
            Err(MappingError::NotInjective(p(1, 2)))
        );
        let layout = build_layout(cfg("128K-2W-64B"));
        let short = MappingTable::from_entries(vec![p(0, 0)]).unwrap();
        assert!(matches!(short.validate(&layout), Err(MappingError::Coverage { .. })));
        assert!(MappingTable::uniform(9, 0).is_err());
    }

    #[test]
    fn mapping_csv_shape() {
        let layout = build_layout(cfg("128K-2W-64B"));
        let csv = MappingTable::rotation(4, 0).csv(&layout);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "vbank_id,way_range,set_range,cluster_id,bank_index");
        assert_eq!(lines[1], "0,0-0,0-511,0,0");
        assert_eq!(lines[4], "3,1-1,512-1023,3,0");
    }
}
