//! LLC request traces: the access record, the text file format, and a
//! synthetic multi-programmed workload generator.
//!
//! A trace line is `tick,core_id,{R|W},0xADDRESS,instructions_retired`.
//! Lines starting with `#` are comments. Files ending in `.gz` are read and
//! written gzip-compressed.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::{RngExt, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccessKind {
    Read,
    Write,
}

impl AccessKind {
    pub fn is_write(self) -> bool {
        self == AccessKind::Write
    }
}

/// One request arriving at the shared last-level cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemoryAccess {
    pub tick: u64,
    pub core_id: u8,
    pub kind: AccessKind,
    pub address: u64,
    /// Cumulative instructions retired (all cores) when the access issued.
    pub instructions_retired: u64,
}

impl MemoryAccess {
    pub fn read(tick: u64, core_id: u8, address: u64, instructions_retired: u64) -> Self {
        Self { tick, core_id, kind: AccessKind::Read, address, instructions_retired }
    }

    pub fn write(tick: u64, core_id: u8, address: u64, instructions_retired: u64) -> Self {
        Self { tick, core_id, kind: AccessKind::Write, address, instructions_retired }
    }
}

impl fmt::Display for MemoryAccess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            AccessKind::Read => 'R',
            AccessKind::Write => 'W',
        };
        write!(
            f,
            "{},{},{},0x{:X},{}",
            self.tick, self.core_id, kind, self.address, self.instructions_retired
        )
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("trace line {line}: tick {tick} is earlier than previous tick {previous}")]
    TickRegression { line: usize, tick: u64, previous: u64 },
    #[error("trace line {line}: instruction count {count} is below previous count {previous}")]
    InstructionRegression { line: usize, count: u64, previous: u64 },
    #[error("access {index}: core {core_id} is outside the configured {cores} cores")]
    CoreOutOfRange { index: usize, core_id: u8, cores: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parses one non-comment trace line. `line_no` is 1-based and only used in
/// error messages.
pub fn parse_line(text: &str, line_no: usize) -> Result<MemoryAccess, TraceError> {
    let malformed = |message: String| TraceError::Malformed { line: line_no, message };
    let fields: Vec<&str> = text.split(',').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(malformed(format!("expected 5 comma-separated fields, found {}", fields.len())));
    }
    let tick = fields[0]
        .parse::<u64>()
        .map_err(|e| malformed(format!("bad tick {:?}: {e}", fields[0])))?;
    let core_id = fields[1]
        .parse::<u8>()
        .map_err(|e| malformed(format!("bad core id {:?}: {e}", fields[1])))?;
    let kind = match fields[2] {
        "R" | "r" => AccessKind::Read,
        "W" | "w" => AccessKind::Write,
        other => return Err(malformed(format!("access kind must be R or W, found {other:?}"))),
    };
    let hex = fields[3]
        .strip_prefix("0x")
        .or_else(|| fields[3].strip_prefix("0X"))
        .ok_or_else(|| malformed(format!("address {:?} lacks 0x prefix", fields[3])))?;
    let address = u64::from_str_radix(hex, 16)
        .map_err(|e| malformed(format!("bad address {:?}: {e}", fields[3])))?;
    let instructions_retired = fields[4]
        .parse::<u64>()
        .map_err(|e| malformed(format!("bad instruction count {:?}: {e}", fields[4])))?;
    Ok(MemoryAccess { tick, core_id, kind, address, instructions_retired })
}

/// Reads a whole trace from any reader, enforcing tick and instruction-count
/// monotonicity.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<MemoryAccess>, TraceError> {
    let mut out = Vec::new();
    let mut previous: Option<MemoryAccess> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let access = parse_line(text, line_no)?;
        if let Some(prev) = previous {
            if access.tick < prev.tick {
                return Err(TraceError::TickRegression {
                    line: line_no,
                    tick: access.tick,
                    previous: prev.tick,
                });
            }
            if access.instructions_retired < prev.instructions_retired {
                return Err(TraceError::InstructionRegression {
                    line: line_no,
                    count: access.instructions_retired,
                    previous: prev.instructions_retired,
                });
            }
        }
        previous = Some(access);
        out.push(access);
    }
    Ok(out)
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|ext| ext == "gz")
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<MemoryAccess>, TraceError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if is_gzip(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_trace(BufReader::new(reader))
}

pub fn write_trace_to<W: Write>(accesses: &[MemoryAccess], mut writer: W) -> io::Result<()> {
    for access in accesses {
        writeln!(writer, "{access}")?;
    }
    writer.flush()
}

pub fn write_trace(accesses: &[MemoryAccess], path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    let file = BufWriter::new(File::create(path)?);
    if is_gzip(path) {
        let mut encoder = GzEncoder::new(file, Compression::default());
        write_trace_to(accesses, &mut encoder)?;
        encoder.finish()?.flush()?;
    } else {
        write_trace_to(accesses, file)?;
    }
    Ok(())
}

/// Checks the per-trace invariants that the parser cannot see on its own.
pub fn validate_cores(accesses: &[MemoryAccess], cores: usize) -> Result<(), TraceError> {
    for (index, access) in accesses.iter().enumerate() {
        if usize::from(access.core_id) >= cores {
            return Err(TraceError::CoreOutOfRange { index, core_id: access.core_id, cores });
        }
    }
    Ok(())
}

/// Stable merge of per-core streams into one tick-ordered stream. Ties on
/// tick resolve by stream position, so per-core order is preserved.
pub fn merge_streams(streams: Vec<Vec<MemoryAccess>>) -> Vec<MemoryAccess> {
    let mut merged: Vec<(usize, MemoryAccess)> = streams
        .into_iter()
        .enumerate()
        .flat_map(|(i, s)| s.into_iter().map(move |a| (i, a)))
        .collect();
    merged.sort_by_key(|(stream, a)| (a.tick, *stream));
    merged.into_iter().map(|(_, a)| a).collect()
}

// ---------------------------------------------------------------------------
// Synthetic workloads
// ---------------------------------------------------------------------------

/// Granularity of generated addresses; one block per 64 bytes.
pub const GENERATOR_BLOCK_BYTES: u64 = 64;

/// Address-space stride between cores so multi-programmed streams never share
/// blocks.
pub const CORE_ADDRESS_STRIDE: u64 = 1 << 36;

/// Reuse-gap bands, in wall time. They straddle the four retention classes so
/// each cluster can be made the preferred one by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapBand {
    /// 2µs to 80µs, below the shortest retention class.
    Short,
    /// 1ms to 8ms.
    Medium,
    /// 120ms to 300ms, beyond every retention class.
    Long,
}

impl GapBand {
    pub const ALL: [GapBand; 3] = [GapBand::Short, GapBand::Medium, GapBand::Long];

    /// Half-open gap range in nanoseconds.
    pub fn range_ns(self) -> (f64, f64) {
        match self {
            GapBand::Short => (2_000.0, 80_000.0),
            GapBand::Medium => (1_000_000.0, 8_000_000.0),
            GapBand::Long => (120_000_000.0, 300_000_000.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GapBand::Short => "short",
            GapBand::Medium => "medium",
            GapBand::Long => "long",
        }
    }
}

/// Mixture weights over the gap bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapMix {
    #[serde(default)]
    pub short: f64,
    #[serde(default)]
    pub medium: f64,
    #[serde(default)]
    pub long: f64,
}

impl GapMix {
    pub fn only(band: GapBand) -> Self {
        let mut mix = GapMix { short: 0.0, medium: 0.0, long: 0.0 };
        *mix.weight_mut(band) = 1.0;
        mix
    }

    pub fn weight(&self, band: GapBand) -> f64 {
        match band {
            GapBand::Short => self.short,
            GapBand::Medium => self.medium,
            GapBand::Long => self.long,
        }
    }

    fn weight_mut(&mut self, band: GapBand) -> &mut f64 {
        match band {
            GapBand::Short => &mut self.short,
            GapBand::Medium => &mut self.medium,
            GapBand::Long => &mut self.long,
        }
    }
}

/// Parameters of one core's access stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub footprint_bytes: u64,
    pub write_fraction: f64,
    pub gap_mix: GapMix,
    /// Instructions per cycle retired by this core.
    pub instruction_rate: f64,
    /// Number of accesses this core issues.
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub streams: Vec<StreamSpec>,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("stream {stream}: gap_mix weights sum to {sum}, expected 1")]
    Weights { stream: usize, sum: f64 },
    #[error("stream {stream}: gap_mix weight for {band} is negative or not finite")]
    NegativeWeight { stream: usize, band: &'static str },
    #[error("stream {stream}: footprint_bytes {footprint} is smaller than one {GENERATOR_BLOCK_BYTES}-byte line")]
    Footprint { stream: usize, footprint: u64 },
    #[error("stream {stream}: write_fraction {value} is outside [0, 1]")]
    WriteFraction { stream: usize, value: f64 },
    #[error("stream {stream}: instruction_rate {value} must be positive")]
    InstructionRate { stream: usize, value: f64 },
    #[error("workload has {0} streams; at most 256 cores are supported")]
    TooManyStreams(usize),
    #[error("cycle_period_ns {0} must be positive")]
    CyclePeriod(f64),
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.streams.len() > 256 {
            return Err(WorkloadError::TooManyStreams(self.streams.len()));
        }
        for (stream, spec) in self.streams.iter().enumerate() {
            for band in GapBand::ALL {
                let w = spec.gap_mix.weight(band);
                if !w.is_finite() || w < 0.0 {
                    return Err(WorkloadError::NegativeWeight { stream, band: band.label() });
                }
            }
            let sum: f64 = GapBand::ALL.iter().map(|b| spec.gap_mix.weight(*b)).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(WorkloadError::Weights { stream, sum });
            }
            if spec.footprint_bytes < GENERATOR_BLOCK_BYTES {
                return Err(WorkloadError::Footprint { stream, footprint: spec.footprint_bytes });
            }
            if !(0.0..=1.0).contains(&spec.write_fraction) {
                return Err(WorkloadError::WriteFraction { stream, value: spec.write_fraction });
            }
            if !(spec.instruction_rate.is_finite() && spec.instruction_rate > 0.0) {
                return Err(WorkloadError::InstructionRate { stream, value: spec.instruction_rate });
            }
        }
        Ok(())
    }

    /// Sum of per-core instruction rates, in instructions per cycle.
    pub fn total_instruction_rate(&self) -> f64 {
        self.streams.iter().map(|s| s.instruction_rate).sum()
    }
}

/// Splits `n` items across bands proportionally to the weights using the
/// largest-remainder rule, so counts always sum to `n`.
fn apportion(n: u64, mix: &GapMix) -> [u64; 3] {
    let raw: Vec<f64> = GapBand::ALL.iter().map(|b| mix.weight(*b) * n as f64).collect();
    let mut counts: [u64; 3] = [0; 3];
    for (c, r) in counts.iter_mut().zip(&raw) {
        *c = r.floor() as u64;
    }
    let mut left = n - counts.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        if mix.weight(GapBand::ALL[i]) > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

fn sample_gap(rng: &mut Xoshiro256PlusPlus, band: GapBand, cycle_period_ns: f64) -> u64 {
    let (lo, hi) = band.range_ns();
    let ns = rng.random_range(lo..hi);
    ((ns / cycle_period_ns) as u64).max(1)
}

fn generate_stream(
    spec: &StreamSpec,
    core_id: u8,
    rng: &mut Xoshiro256PlusPlus,
    cycle_period_ns: f64,
) -> Vec<(u64, u8, AccessKind, u64)> {
    let blocks = spec.footprint_bytes / GENERATOR_BLOCK_BYTES;
    let counts = apportion(blocks, &spec.gap_mix);
    // Blocks of one band occupy a contiguous address range.
    let mut band_of = Vec::with_capacity(blocks as usize);
    for (band, count) in GapBand::ALL.iter().zip(counts) {
        band_of.extend(std::iter::repeat_n(*band, count as usize));
    }
    let base = u64::from(core_id) * CORE_ADDRESS_STRIDE;

    let mut heap = BinaryHeap::with_capacity(band_of.len());
    for (idx, band) in band_of.iter().enumerate() {
        let initial_gap = sample_gap(rng, *band, cycle_period_ns);
        let first = rng.random_range(0..initial_gap);
        heap.push(Reverse((first, idx)));
    }

    let mut writes_left = (spec.write_fraction * spec.length as f64).round() as u64;
    let mut out = Vec::with_capacity(spec.length as usize);
    for remaining in (1..=spec.length).rev() {
        let Some(Reverse((tick, idx))) = heap.pop() else { break };
        // Selection sampling: exactly `writes_left` of the remaining accesses
        // become writes.
        let is_write = writes_left > 0 && rng.random_range(0..remaining) < writes_left;
        let kind = if is_write {
            writes_left -= 1;
            AccessKind::Write
        } else {
            AccessKind::Read
        };
        out.push((tick, core_id, kind, base + idx as u64 * GENERATOR_BLOCK_BYTES));
        let next = tick + sample_gap(rng, band_of[idx], cycle_period_ns);
        heap.push(Reverse((next, idx)));
    }
    out
}

/// Generates a multi-programmed trace: one stream per [`StreamSpec`], core id
/// equal to the stream index, merged in tick order.
pub fn generate_workload(
    spec: &WorkloadSpec,
    cycle_period_ns: f64,
) -> Result<Vec<MemoryAccess>, WorkloadError> {
    if !(cycle_period_ns.is_finite() && cycle_period_ns > 0.0) {
        return Err(WorkloadError::CyclePeriod(cycle_period_ns));
    }
    spec.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut raw = Vec::new();
    for (core, stream) in spec.streams.iter().enumerate() {
        // Each core draws from its own non-overlapping subsequence.
        let mut core_rng = rng.clone();
        raw.extend(generate_stream(stream, core as u8, &mut core_rng, cycle_period_ns));
        rng.jump();
    }
    raw.sort_by_key(|&(tick, core, _, _)| (tick, core));
    let rates: Vec<f64> = spec.streams.iter().map(|s| s.instruction_rate).collect();
    Ok(raw
        .into_iter()
        .map(|(tick, core_id, kind, address)| MemoryAccess {
            tick,
            core_id,
            kind,
            address,
            instructions_retired: instructions_at(&rates, tick),
        })
        .collect())
}

/// Cumulative instructions retired by all cores at `tick`.
pub fn instructions_at(rates: &[f64], tick: u64) -> u64 {
    rates.iter().map(|r| (r * tick as f64).floor() as u64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn stream(mix: GapMix, write_fraction: f64, length: u64) -> StreamSpec {
        StreamSpec {
            footprint_bytes: 16 * 1024,
            write_fraction,
            gap_mix: mix,
            instruction_rate: 1.0,
            length,
        }
    }

    #[test]
    fn parses_reference_line() {
        let a = parse_line("12,0,R,0x1F40,3", 1).unwrap();
        assert_eq!(a, MemoryAccess::read(12, 0, 0x1F40, 3));
        assert_eq!(a.to_string(), "12,0,R,0x1F40,3");
    }

    #[test]
    fn empty_input_is_empty_trace() {
        assert!(parse_trace("".as_bytes()).unwrap().is_empty());
        assert!(parse_trace("# only a comment\n\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn tick_regression_reports_line_two() {
        let err = parse_trace("10,0,R,0x0,0\n9,0,R,0x40,1\n".as_bytes()).unwrap_err();
        match err {
            TraceError::TickRegression { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_trace("# header\n1,0,R,0x0,0\n2,0,X,0x0,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 3, .. }), "{err}");
        let err = parse_trace("1,0,R,40,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 1, .. }));
    }

    #[test]
    fn write_fraction_zero_yields_reads_only() {
        let spec = WorkloadSpec { streams: vec![stream(GapMix::only(GapBand::Short), 0.0, 1000)], seed: 1 };
        let trace = generate_workload(&spec, 0.5).unwrap();
        assert_eq!(trace.len(), 1000);
        assert!(trace.iter().all(|a| a.kind == AccessKind::Read));
    }

    #[test]
    fn short_band_gaps_stay_below_100us() {
        let spec = WorkloadSpec { streams: vec![stream(GapMix::only(GapBand::Short), 0.3, 20_000)], seed: 3 };
        let trace = generate_workload(&spec, 0.5).unwrap();
        let mut last: HashMap<u64, u64> = HashMap::new();
        let mut max_gap = 0;
        for a in &trace {
            if let Some(prev) = last.insert(a.address, a.tick) {
                max_gap = max_gap.max(a.tick - prev);
            }
        }
        assert!(max_gap > 0);
        assert!(max_gap < 200_000, "max gap {max_gap}");
    }

    #[test]
    fn medium_band_gaps_fall_in_band() {
        let spec = WorkloadSpec { streams: vec![stream(GapMix::only(GapBand::Medium), 0.3, 5_000)], seed: 4 };
        let trace = generate_workload(&spec, 0.5).unwrap();
        let mut last: HashMap<u64, u64> = HashMap::new();
        for a in &trace {
            if let Some(prev) = last.insert(a.address, a.tick) {
                let gap = a.tick - prev;
                assert!((2_000_000..16_000_000).contains(&gap), "gap {gap}");
            }
        }
    }

    #[test]
    fn same_seed_is_identical() {
        let spec = WorkloadSpec {
            streams: vec![
                stream(GapMix { short: 0.5, medium: 0.5, long: 0.0 }, 0.4, 3000),
                stream(GapMix::only(GapBand::Short), 0.1, 3000),
            ],
            seed: 7,
        };
        let a = generate_workload(&spec, 0.5).unwrap();
        let b = generate_workload(&spec, 0.5).unwrap();
        let mut ta = Vec::new();
        let mut tb = Vec::new();
        write_trace_to(&a, &mut ta).unwrap();
        write_trace_to(&b, &mut tb).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn write_fraction_is_exact_per_stream() {
        let spec = WorkloadSpec { streams: vec![stream(GapMix::only(GapBand::Short), 0.37, 10_000)], seed: 9 };
        let trace = generate_workload(&spec, 0.5).unwrap();
        let writes = trace.iter().filter(|a| a.kind.is_write()).count();
        assert_eq!(writes, 3700);
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let mut bad = stream(GapMix { short: 0.5, medium: 0.4, long: 0.0 }, 0.1, 10);
        let spec = WorkloadSpec { streams: vec![bad.clone()], seed: 0 };
        let err = generate_workload(&spec, 0.5).unwrap_err();
        assert!(err.to_string().contains("gap_mix"), "{err}");

        bad.gap_mix = GapMix::only(GapBand::Short);
        bad.footprint_bytes = 0;
        let spec = WorkloadSpec { streams: vec![bad], seed: 0 };
        let err = generate_workload(&spec, 0.5).unwrap_err();
        assert!(err.to_string().contains("footprint_bytes"), "{err}");
    }

    #[test]
    fn apportion_sums_to_total() {
        let mix = GapMix { short: 0.6, medium: 0.3, long: 0.1 };
        for n in [1, 2, 3, 7, 100, 257] {
            assert_eq!(apportion(n, &mix).iter().sum::<u64>(), n);
        }
        assert_eq!(apportion(10, &GapMix::only(GapBand::Medium)), [0, 10, 0]);
    }

    #[test]
    fn gzip_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv.gz");
        let trace = vec![MemoryAccess::read(1, 0, 0x40, 2), MemoryAccess::write(5, 1, 0xFFFF_0000, 9)];
        write_trace(&trace, &path).unwrap();
        assert_eq!(read_trace(&path).unwrap(), trace);
    }

    #[test]
    fn merge_is_stable_per_core() {
        let a = vec![MemoryAccess::read(1, 0, 0, 0), MemoryAccess::read(1, 0, 64, 0)];
        let b = vec![MemoryAccess::read(0, 1, 128, 0), MemoryAccess::read(1, 1, 192, 0)];
        let merged = merge_streams(vec![a, b]);
        let addrs: Vec<u64> = merged.iter().map(|a| a.address).collect();
        assert_eq!(addrs, vec![128, 0, 64, 192]);
    }
}
