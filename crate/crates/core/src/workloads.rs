//! Named quad-core synthetic workloads.

use crate::retention::Clock;
use crate::trace::{GapBand, GapMix, StreamSpec, WorkloadSpec, GENERATOR_BLOCK_BYTES};

pub const CORES: usize = 4;

/// Per-core instruction rate of the presets.
pub const PRESET_IPC: f64 = 1.0;

/// Stream whose access count makes it last about `duration_ms` of wall
/// time at the given clock.
pub fn timed_stream(
    footprint_kb: u64,
    write_fraction: f64,
    gap_mix: GapMix,
    instruction_rate: f64,
    duration_ms: f64,
) -> StreamSpec {
    let blocks = (footprint_kb * 1024 / GENERATOR_BLOCK_BYTES) as f64;
    let duration_ns = duration_ms * 1e6;
    let per_block: f64 = GapBand::ALL
        .iter()
        .map(|b| {
            let (lo, hi) = b.range_ns();
            gap_mix.weight(*b) * duration_ns / ((lo + hi) / 2.0)
        })
        .sum();
    StreamSpec {
        footprint_bytes: footprint_kb * 1024,
        write_fraction,
        gap_mix,
        instruction_rate,
        length: (blocks * per_block).round().max(1.0) as u64,
    }
}

fn mix(short: f64, medium: f64, long: f64) -> GapMix {
    GapMix { short, medium, long }
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub spec: WorkloadSpec,
}

/// Wall time covered by each suite preset.
pub const SUITE_DURATION_MS: f64 = 24.0;

/// Ten quad-core mixes spanning footprint, write intensity and lifetime.
pub fn suite(seed: u64) -> Vec<Preset> {
    let d = SUITE_DURATION_MS;
    let ipc = PRESET_IPC;
    let same = |kb: u64, wf: f64, m: GapMix| vec![timed_stream(kb, wf, m, ipc, d); CORES];
    let defs: Vec<(&'static str, Vec<StreamSpec>)> = vec![
        ("short-read", same(32, 0.05, mix(1.0, 0.0, 0.0))),
        ("short-write", same(32, 0.6, mix(1.0, 0.0, 0.0))),
        ("medium-read", same(64, 0.1, mix(0.0, 1.0, 0.0))),
        ("medium-write", same(64, 0.5, mix(0.0, 1.0, 0.0))),
        ("mixed-small", same(24, 0.3, mix(0.5, 0.3, 0.2))),
        ("mixed-large", same(256, 0.3, mix(0.2, 0.5, 0.3))),
        ("streaming", same(1024, 0.2, mix(0.05, 0.15, 0.8))),
        ("short-dominant", same(48, 0.35, mix(0.7, 0.2, 0.1))),
        (
            "heterogeneous",
            vec![
                timed_stream(32, 0.5, mix(1.0, 0.0, 0.0), ipc, d),
                timed_stream(64, 0.1, mix(0.0, 1.0, 0.0), ipc, d),
                timed_stream(128, 0.2, mix(0.3, 0.3, 0.4), ipc, d),
                timed_stream(16, 0.7, mix(0.8, 0.2, 0.0), ipc, d),
            ],
        ),
        ("write-heavy", same(96, 0.8, mix(0.4, 0.4, 0.2))),
    ];
    defs.into_iter()
        .enumerate()
        .map(|(i, (name, streams))| Preset { name, spec: WorkloadSpec { streams, seed: seed.wrapping_add(i as u64) } })
        .collect()
}

/// Resident, rarely rewritten blocks: lifetimes far beyond every retention
/// class.
pub fn long_lifetime(seed: u64) -> WorkloadSpec {
    let s = timed_stream(128, 0.02, mix(0.0, 1.0, 0.0), PRESET_IPC, 240.0);
    WorkloadSpec { streams: vec![s; CORES], seed }
}

/// At least half the blocks live well under 1ms.
pub fn short_lifetime_mix(seed: u64) -> WorkloadSpec {
    let d = SUITE_DURATION_MS;
    WorkloadSpec {
        streams: vec![
            timed_stream(48, 0.4, mix(0.8, 0.15, 0.05), PRESET_IPC, d),
            timed_stream(32, 0.3, mix(0.6, 0.3, 0.1), PRESET_IPC, d),
            timed_stream(64, 0.5, mix(0.7, 0.2, 0.1), PRESET_IPC, d),
            timed_stream(40, 0.2, mix(0.9, 0.1, 0.0), PRESET_IPC, d),
        ],
        seed,
    }
}

pub fn preset_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = suite(0).iter().map(|p| p.name).collect();
    names.extend(["long-lifetime", "short-lifetime-mix"]);
    names
}

pub fn preset(name: &str, seed: u64) -> Option<WorkloadSpec> {
    match name {
        "long-lifetime" => Some(long_lifetime(seed)),
        "short-lifetime-mix" => Some(short_lifetime_mix(seed)),
        _ => suite(seed).into_iter().find(|p| p.name == name).map(|p| p.spec),
    }
}

/// Clock the presets are designed for.
pub fn preset_clock() -> Clock {
    Clock::DEFAULT
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for n in preset_names() {
            let spec = preset(n, 1).unwrap();
            spec.validate().unwrap();
            assert_eq!(spec.streams.len(), CORES);
        }
        assert!(preset("nope", 1).is_none());
        assert_eq!(suite(1).len(), 10);
    }

    #[test]
    fn short_mix_is_mostly_short() {
        let spec = short_lifetime_mix(1);
        let (mut short, mut all) = (0.0, 0.0);
        for s in &spec.streams {
            let blocks = (s.footprint_bytes / GENERATOR_BLOCK_BYTES) as f64;
            short += blocks * s.gap_mix.short;
            all += blocks;
        }
        assert!(short / all >= 0.5);
    }

    #[test]
    fn timed_length_matches_rate() {
        let s = timed_stream(64, 0.0, GapMix::only(GapBand::Medium), 1.0, 45.0);
        // 1024 blocks, one access per 4.5ms on average.
        assert_eq!(s.length, 10_240);
    }
}
