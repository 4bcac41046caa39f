use std::collections::{BTreeSet, HashSet};

use halls_core::banked::{build_layout, decode, MappingTable, PhysicalBankId, TOTAL_BANKS};
use halls_core::cache::{CacheConfig, CacheState, ReconfigCost};
use halls_core::energy::{energy_of_interval, Device, EnergyComponents, ParamTable};
use halls_core::retention::{Clock, ExpirationCounter, RefreshModel, RetentionClass};
use halls_core::sim::{Llc, Technology};
use halls_core::stats::{BankCounters, BankStats, SimStats};
use halls_core::trace::{
    generate_workload, merge_streams, parse_trace, write_trace_to, AccessKind, GapMix, MemoryAccess, StreamSpec,
    WorkloadSpec,
};
use halls_core::tuner::{allocate, EdpTable, TuningSet};
use proptest::prelude::*;

fn lattice() -> Vec<CacheConfig> {
    CacheConfig::lattice()
}

fn any_config() -> impl Strategy<Value = CacheConfig> {
    (0..lattice().len()).prop_map(|i| lattice()[i])
}

fn small_config() -> impl Strategy<Value = CacheConfig> {
    let small: Vec<CacheConfig> = lattice().into_iter().filter(|c| c.size_bytes() <= 256 << 10).collect();
    (0..small.len()).prop_map(move |i| small[i])
}

fn kind(write: bool) -> AccessKind {
    if write {
        AccessKind::Write
    } else {
        AccessKind::Read
    }
}

/// Tick- and instruction-ordered accesses built from deltas.
fn trace_strategy(max_len: usize, span: u64) -> impl Strategy<Value = Vec<MemoryAccess>> {
    prop::collection::vec((0u64..5_000, 0u8..4, any::<bool>(), 0..span, 0u64..1_000), 0..max_len).prop_map(|raw| {
        let (mut tick, mut instr) = (0u64, 0u64);
        raw.into_iter()
            .map(|(dt, core, w, addr, di)| {
                tick += dt;
                instr += di;
                MemoryAccess { tick, core_id: core, kind: kind(w), address: addr, instructions_retired: instr }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_text_round_trips(trace in trace_strategy(200, 1 << 48)) {
        let mut buf = Vec::new();
        write_trace_to(&trace, &mut buf).unwrap();
        prop_assert_eq!(parse_trace(buf.as_slice()).unwrap(), trace);
    }

    #[test]
    fn merge_keeps_per_core_order(streams in prop::collection::vec(prop::collection::vec(0u64..1_000, 0..50), 1..5)) {
        let per_core: Vec<Vec<MemoryAccess>> = streams
            .iter()
            .enumerate()
            .map(|(c, ticks)| {
                let mut ticks = ticks.clone();
                ticks.sort_unstable();
                ticks.iter().enumerate().map(|(i, t)| MemoryAccess::read(*t, c as u8, i as u64, 0)).collect()
            })
            .collect();
        let merged = merge_streams(per_core.clone());
        prop_assert_eq!(merged.len(), per_core.iter().map(Vec::len).sum::<usize>());
        prop_assert!(merged.windows(2).all(|w| w[0].tick <= w[1].tick));
        for (c, s) in per_core.iter().enumerate() {
            let back: Vec<MemoryAccess> = merged.iter().filter(|a| a.core_id as usize == c).copied().collect();
            prop_assert_eq!(&back, s);
        }
    }

    #[test]
    fn generation_is_a_function_of_its_inputs(
        seed in any::<u64>(),
        kb in 1u64..16,
        wf in 0.0f64..=1.0,
        short in 0.0f64..=1.0,
        cores in 1usize..4,
    ) {
        let s = StreamSpec {
            footprint_bytes: kb * 1024,
            write_fraction: wf,
            gap_mix: GapMix { short, medium: 1.0 - short, long: 0.0 },
            instruction_rate: 1.0,
            length: 300,
        };
        let spec = WorkloadSpec { streams: vec![s; cores], seed };
        let a = generate_workload(&spec, 0.5).unwrap();
        prop_assert_eq!(&a, &generate_workload(&spec, 0.5).unwrap());
        prop_assert!(a.windows(2).all(|w| w[0].tick <= w[1].tick
            && w[0].instructions_retired <= w[1].instructions_retired));
    }

    #[test]
    fn sets_hold_at_most_ways_unique_tags(
        config in small_config(),
        seed in any::<u64>(),
        accesses in prop::collection::vec((0u64..1 << 20, any::<bool>()), 1..3_000),
    ) {
        let mut cache = CacheState::new(config, seed);
        for (i, (addr, w)) in accesses.iter().enumerate() {
            cache.lookup(*addr, kind(*w), i as u64, 0);
        }
        let mut per_set: Vec<Vec<u64>> = vec![Vec::new(); config.sets() as usize];
        for (set, _, b) in cache.valid_blocks() {
            per_set[set as usize].push(b.tag);
        }
        for tags in per_set {
            prop_assert!(tags.len() <= config.ways() as usize);
            let unique: HashSet<u64> = tags.iter().copied().collect();
            prop_assert_eq!(unique.len(), tags.len());
        }
    }

    #[test]
    fn longer_lines_never_miss_more_on_unit_stride(
        start in 0u64..1 << 30,
        elements in 1u64..20_000,
        element_bytes in prop::sample::select(vec![1u64, 2, 4, 8, 16]),
        repeats in 1usize..4,
        size in prop::sample::select(vec![128u64 << 10, 1 << 20]),
        ways in prop::sample::select(vec![1u32, 4, 16]),
    ) {
        let misses = |line: u32| {
            let mut c = CacheState::new(CacheConfig::new(size, line, ways).unwrap(), 3);
            let mut n = 0;
            for e in 0..elements {
                for _ in 0..repeats {
                    n += u64::from(!c.lookup(start + e * element_bytes, AccessKind::Read, 0, 0).outcome.is_hit());
                }
            }
            n
        };
        prop_assert!(misses(64) <= misses(16));
    }

    #[test]
    fn replacement_is_deterministic_per_seed(
        config in small_config(),
        seed in any::<u64>(),
        accesses in prop::collection::vec(0u64..1 << 22, 1..2_000),
    ) {
        let run = || {
            let mut c = CacheState::new(config, seed);
            accesses.iter().map(|a| c.lookup(*a, AccessKind::Read, 0, 0).way).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn expiry_is_bounded_and_monotone_in_class(t in 0u64..1 << 50, i in 0usize..4, j in 0usize..4) {
        let (lo, hi) = (i.min(j), i.max(j));
        let clock = Clock::DEFAULT;
        let at = |k: usize| ExpirationCounter::for_class(RetentionClass::ALL[k], clock).expiry_tick(t);
        prop_assert!(at(lo) <= at(hi));
        let r = RetentionClass::ALL[i].retention_cycles(clock);
        prop_assert!(at(i) >= t + 14 * r / 16 && at(i) <= t + r);
    }

    #[test]
    fn perfect_refresh_is_invisible_to_hits(
        trace in trace_strategy(1_500, 256 << 10),
        class in 0usize..4,
        seed in any::<u64>(),
    ) {
        let config = CacheConfig::new(128 << 10, 32, 2).unwrap();
        let outcomes = |tech: Technology| {
            let mut llc = Llc::new(tech, config, MappingTable::rotation(4, 0), Clock::DEFAULT,
                RefreshModel::perfect_drs(), seed, 0).unwrap();
            trace.iter().map(|a| llc.access(a).is_hit()).collect::<Vec<_>>()
        };
        prop_assert_eq!(outcomes(Technology::Sram), outcomes(Technology::Drs(RetentionClass::ALL[class])));
    }

    #[test]
    fn allocation_is_always_legal(tables in prop::collection::vec(
        prop::array::uniform4(prop::option::weighted(0.9, 0.0f64..1e12)), 1..=32)
    ) {
        let tables: Vec<EdpTable> = tables;
        let m = allocate(&tables);
        prop_assert_eq!(m.len(), tables.len());
        let distinct: BTreeSet<PhysicalBankId> = m.entries().iter().copied().collect();
        prop_assert_eq!(distinct.len(), tables.len());
        for c in 0..4u8 {
            prop_assert!(m.entries().iter().filter(|p| p.cluster == c).count() <= 8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn layout_partitions_every_block(config in any_config()) {
        let layout = build_layout(config);
        prop_assert_eq!(layout.len() as u32, config.bank_count());
        prop_assert_eq!(layout.vbanks().iter().map(|v| v.bytes(config.line_bytes())).sum::<u64>(), config.size_bytes());
        for set in 0..config.sets() {
            for way in 0..config.ways() {
                let holders: Vec<u32> =
                    layout.vbanks().iter().filter(|v| v.contains(set, way)).map(|v| v.id).collect();
                prop_assert_eq!(holders, vec![layout.vbank_of(set, way)]);
            }
        }
    }

    #[test]
    fn resident_blocks_decode_to_their_bank(
        config in any_config(),
        set_id in 0u8..4,
        seed in any::<u64>(),
        addrs in prop::collection::vec(0u64..1 << 24, 1..2_000),
    ) {
        let mapping = TuningSet { id: set_id }.mapping(config.bank_count() as usize);
        let layout = build_layout(config);
        let mut llc = Llc::new(Technology::Halls, config, mapping.clone(), Clock::DEFAULT, RefreshModel::NONE, seed, 0)
            .unwrap();
        for (i, a) in addrs.iter().enumerate() {
            let out = llc.access(&MemoryAccess::write(i as u64, 0, *a, i as u64));
            let (set, _) = config.split(*a);
            let way = llc.cache().probe(*a).unwrap();
            prop_assert_eq!(out.serviced_bank, Some(mapping.physical(layout.vbank_of(set, way))));
        }
        for (set, way, b) in llc.cache().valid_blocks() {
            let d = decode(&layout, &mapping, config.line_address(set, b.tag)).unwrap();
            prop_assert_eq!(d.index, set);
            let host = mapping.physical(layout.vbank_of(set, way));
            prop_assert!(d.dispatch.iter().any(|x| x.physical == host));
        }
    }

    #[test]
    fn energy_adds_over_time_and_banks(
        counters in prop::collection::vec((0u64..10_000, 0u64..10_000, 0u64..1_000, 0u64..1_000, 0u64..500, 0u64..500), 16),
        wall_a in 1u64..10_000_000,
        wall_b in 1u64..10_000_000,
        drs in any::<bool>(),
    ) {
        let table = ParamTable::shipped();
        let config = CacheConfig::new(512 << 10, 64, 16).unwrap();
        let mapping = MappingTable::rotation(16, 0);
        let (tech, refresh) = if drs {
            (Technology::Drs(RetentionClass::R1ms), RefreshModel::perfect_drs())
        } else {
            (Technology::Halls, RefreshModel::NONE)
        };
        let stats = |scale: u64, start: u64, wall: u64| {
            let mut ids = mapping.entries().to_vec();
            ids.sort();
            SimStats {
                config,
                mapping: mapping.clone(),
                banks: ids.iter().zip(&counters).map(|(id, c)| BankStats {
                    id: *id,
                    device: tech.device_for(*id),
                    counters: BankCounters {
                        read_hits: c.0 * scale,
                        write_hits: c.1 * scale,
                        read_misses: c.2 * scale,
                        write_misses: c.3 * scale,
                        writebacks: c.4 * scale,
                        refreshes: if drs { c.5 * scale } else { 0 },
                        ..BankCounters::default()
                    },
                }).collect(),
                start_tick: start,
                end_tick: start + wall,
                reconfig: ReconfigCost::ZERO,
                refresh,
                accesses: 0,
            }
        };
        let clock = Clock::DEFAULT;
        let a = energy_of_interval(&stats(1, 0, wall_a), &table, clock).unwrap();
        let b = energy_of_interval(&stats(2, wall_a, wall_b), &table, clock).unwrap();
        let whole = energy_of_interval(&stats(3, 0, wall_a + wall_b), &table, clock).unwrap();
        let parts = |e: &EnergyComponents| [e.dynamic_nj, e.leakage_nj, e.refresh_nj, e.buffer_leakage_nj, e.reconfig_nj];
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0);
        let mut sum = a.clone();
        sum.add(&b);
        for (x, y) in parts(&sum.whole).iter().zip(parts(&whole.whole)) {
            prop_assert!(close(*x, y), "{x} vs {y}");
        }
        for l in [&a, &b, &whole] {
            prop_assert!(close(l.bank_sum(), l.total()));
            prop_assert_eq!(l.banks.len(), TOTAL_BANKS);
        }
    }
}

const NON_MONOTONE_WRITE_ENERGY: &str = "512K-16W-64B";

proptest! {
    #[test]
    fn stt_write_cost_grows_with_retention(i in 0usize..64) {
        let table = ParamTable::shipped();
        let configs: Vec<CacheConfig> = table.configs().into_iter().collect();
        let config = configs[i % configs.len()];
        let p: Vec<_> = RetentionClass::ALL.iter().map(|c| *table.get(Device::Stt(*c), config).unwrap()).collect();
        for w in p.windows(2) {
            prop_assert!(w[0].write_latency_cycles <= w[1].write_latency_cycles);
            if config.to_string() != NON_MONOTONE_WRITE_ENERGY {
                prop_assert!(w[0].write_energy_nj <= w[1].write_energy_nj, "{config}");
            }
        }
    }
}

#[test]
fn only_the_known_row_breaks_write_energy_order() {
    let table = ParamTable::shipped();
    let broken: Vec<String> = table
        .configs()
        .into_iter()
        .filter(|c| {
            let e: Vec<f64> =
                RetentionClass::ALL.iter().map(|k| table.get(Device::Stt(*k), *c).unwrap().write_energy_nj).collect();
            e.windows(2).any(|w| w[0] > w[1])
        })
        .map(|c| c.to_string())
        .collect();
    assert_eq!(broken, [NON_MONOTONE_WRITE_ENERGY]);
}
