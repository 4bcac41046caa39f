//! Experiment driver behind the `halls` command: run configurations, CSV
//! reports, exhaustive oracles and one-axis sweeps.

use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::banked::{MappingTable, PhysicalBankId, CLUSTERS, TOTAL_BANKS};
use crate::baselines::{run_baseline, Baseline, BaselineKind, DEFAULT_DRS_RETENTION};
use crate::cache::CacheConfig;
use crate::energy::{edp, EnergyComponents, ParamError, ParamTable};
use crate::retention::{Clock, RefreshMode, RefreshModel, RetentionClass};
use crate::session::{BankDelay, Phase, RunOptions, RunResult, RunTotals, SimError, TuningIntervalSpec};
use crate::sim::Technology;
use crate::stats::BankCounters;
use crate::trace::{generate_workload, read_trace, write_trace, GapBand, GapMix, MemoryAccess, StreamSpec, TraceError, WorkloadError, WorkloadSpec};
use crate::tuner::{run_fixed, run_flow, run_halls, ConfigChoice};
use crate::workloads;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TUNING_LOG_FILE: &str = "tuning_log.csv";
pub const PER_BANK_FILE: &str = "per_bank.csv";
pub const MAPPING_FILE: &str = "mapping.csv";
pub const ORACLE_FILE: &str = "oracle.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const TRACE_FILE: &str = "trace.csv.gz";

/// Largest layout the retention oracle enumerates.
pub const RETENTION_ORACLE_MAX_VBANKS: u32 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("cannot parse run configuration: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("oracle scope too large: {candidates} candidates (at most {limit} vbanks are enumerated)")]
    ScopeTooLarge { candidates: u128, limit: u32 },
}

impl HarnessError {
    /// Process exit code: 2 for a missing parameter entry, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Params(ParamError::Missing { .. })
            | HarnessError::Sim(SimError::Params(ParamError::Missing { .. })) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// A simulated system as named in run configurations: `HALLS`, `SRAM`,
/// `DRS-<class>`, and `-adaptable` variants of the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum System {
    Halls,
    Baseline(Baseline),
}

impl System {
    pub fn technology(&self) -> Technology {
        match self {
            System::Halls => Technology::Halls,
            System::Baseline(b) => b.technology(),
        }
    }

    fn with_base(self, config: CacheConfig) -> Self {
        match self {
            System::Baseline(mut b) => {
                b.config = config;
                System::Baseline(b)
            }
            s => s,
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            System::Halls => f.write_str("HALLS"),
            System::Baseline(b) => b.fmt(f),
        }
    }
}

impl FromStr for System {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::Config(format!("unknown system {s:?}"));
        let upper = s.trim().to_ascii_uppercase();
        if upper == "HALLS" {
            return Ok(System::Halls);
        }
        let (name, adaptable) = match upper.strip_suffix("-ADAPTABLE") {
            Some(n) => (n, true),
            None => (upper.as_str(), false),
        };
        let base = match name {
            "SRAM" => Baseline::sram(),
            "DRS" => Baseline::drs(DEFAULT_DRS_RETENTION),
            _ => {
                let class = name.strip_prefix("DRS-").ok_or_else(bad)?;
                Baseline::drs(class.parse().map_err(|_| bad())?)
            }
        };
        Ok(System::Baseline(if adaptable { base.adaptable() } else { base }))
    }
}

impl TryFrom<String> for System {
    type Error = HarnessError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Where the accesses come from. Exactly one field must be set.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSource {
    /// Name of a built-in workload.
    pub preset: Option<String>,
    /// Trace files; several files are merged in tick order.
    pub traces: Option<Vec<PathBuf>>,
    /// Inline synthetic streams, one per core, generated with the run seed.
    pub streams: Option<Vec<StreamSpec>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleScope {
    #[default]
    Retention,
    Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Energy,
    Latency,
    Edp,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    pub scope: OracleScope,
    /// Configuration whose mappings the retention oracle enumerates.
    pub config: Option<CacheConfig>,
    /// Candidates of the configuration oracle; defaults to every covered
    /// lattice point.
    pub configs: Option<Vec<CacheConfig>>,
    /// Defaults to energy for the retention scope and latency for the
    /// configuration scope.
    pub objective: Option<Objective>,
    /// System evaluated by the configuration oracle; defaults to HALLS.
    pub system: Option<System>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    RetentionClass,
    Config,
    WriteFraction,
    LifetimeBand,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 4] =
        [SweepAxis::RetentionClass, SweepAxis::Config, SweepAxis::WriteFraction, SweepAxis::LifetimeBand];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::RetentionClass => "retention_class",
            SweepAxis::Config => "config",
            SweepAxis::WriteFraction => "write_fraction",
            SweepAxis::LifetimeBand => "lifetime_band",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepAxis::ALL.into_iter().find(|a| a.name() == s.trim()).ok_or_else(|| {
            let names: Vec<_> = SweepAxis::ALL.iter().map(|a| a.name()).collect();
            HarnessError::Config(format!("unknown sweep axis {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub axis: Option<String>,
    /// Axis values as strings or numbers. Omitted means the axis default;
    /// an explicit empty list is an error.
    pub values: Option<Vec<toml::Value>>,
}

/// A parsed run configuration file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub workload: WorkloadSource,
    pub systems: Vec<System>,
    pub clock_ghz: f64,
    pub miss_penalty_cycles: u64,
    pub seed: u64,
    pub interval_instructions: u64,
    /// Parameter table; the shipped table when absent.
    pub params: Option<PathBuf>,
    pub out: PathBuf,
    /// Configuration of fixed-configuration baselines.
    pub base_config: CacheConfig,
    /// Replaces every hit latency in the parameter table.
    pub hit_latency_cycles: Option<u64>,
    pub refresh_energy_nj: f64,
    /// Refresh-buffer leakage for a 1MB cache; scaled with cache size.
    pub buffer_leakage_mw: f64,
    /// Extends every run to this tick.
    pub end_tick: Option<u64>,
    /// Delay factor of per-bank EDP during retention tuning.
    pub bank_delay: BankDelay,
    pub oracle: OracleSpec,
    pub sweep: SweepSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let refresh = RefreshModel::perfect_drs();
        let options = RunOptions::default();
        Self {
            workload: WorkloadSource::default(),
            systems: vec![System::Baseline(Baseline::sram()), System::Baseline(Baseline::default()), System::Halls],
            clock_ghz: Clock::DEFAULT.ghz,
            miss_penalty_cycles: options.miss_penalty_cycles,
            seed: options.seed,
            interval_instructions: options.interval.instructions_per_interval,
            params: None,
            out: PathBuf::from("out"),
            base_config: CacheConfig::base(),
            hit_latency_cycles: None,
            refresh_energy_nj: refresh.per_refresh_energy_nj,
            buffer_leakage_mw: refresh.buffer_leakage_mw,
            end_tick: None,
            bank_delay: options.bank_delay,
            oracle: OracleSpec::default(),
            sweep: SweepSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a configuration file. Relative trace and parameter paths are
    /// taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        if let Some(traces) = &mut cfg.workload.traces {
            for t in traces.iter_mut() {
                *t = dir.join(&*t);
            }
        }
        if let Some(p) = &mut cfg.params {
            *p = dir.join(&*p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let w = &self.workload;
        let sources = [w.preset.is_some(), w.traces.is_some(), w.streams.is_some()];
        match sources.iter().filter(|s| **s).count() {
            1 => {}
            0 => return bad("no workload source; set one of workload.preset, workload.traces, workload.streams".into()),
            _ => return bad("more than one workload source is set".into()),
        }
        if let Some(name) = &w.preset {
            if workloads::preset(name, 0).is_none() {
                return bad(format!("unknown preset {name:?}; known: {}", workloads::preset_names().join(", ")));
            }
        }
        if let Some(paths) = &w.traces {
            if paths.is_empty() {
                return bad("workload.traces is empty".into());
            }
            for p in paths {
                if !p.is_file() {
                    return bad(format!("trace file {} does not exist", p.display()));
                }
            }
        }
        if let Some(streams) = &w.streams {
            WorkloadSpec { streams: streams.clone(), seed: self.seed }.validate()?;
        }
        if let Some(p) = &self.params {
            if !p.is_file() {
                return bad(format!("parameter file {} does not exist", p.display()));
            }
        }
        if self.systems.is_empty() {
            return bad("systems is empty".into());
        }
        if !(self.clock_ghz.is_finite() && self.clock_ghz > 0.0) {
            return bad(format!("clock_ghz must be positive, got {}", self.clock_ghz));
        }
        TuningIntervalSpec::new(self.interval_instructions)?;
        let refresh = self.refresh_model();
        refresh.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.buffer_leakage_mw.is_finite() && self.buffer_leakage_mw >= 0.0) {
            return bad(format!("buffer_leakage_mw must be non-negative, got {}", self.buffer_leakage_mw));
        }
        Ok(())
    }

    pub fn clock(&self) -> Clock {
        Clock { ghz: self.clock_ghz }
    }

    pub fn refresh_model(&self) -> RefreshModel {
        RefreshModel {
            mode: RefreshMode::PerfectDrs,
            per_refresh_energy_nj: self.refresh_energy_nj,
            buffer_leakage_mw: self.buffer_leakage_mw,
        }
    }

    pub fn options(&self) -> RunOptions {
        RunOptions {
            clock: self.clock(),
            miss_penalty_cycles: self.miss_penalty_cycles,
            seed: self.seed,
            interval: TuningIntervalSpec { instructions_per_interval: self.interval_instructions },
            refresh: self.refresh_model(),
            end_tick: self.end_tick,
            bank_delay: self.bank_delay,
        }
    }

    pub fn param_table(&self) -> Result<ParamTable, HarnessError> {
        let table = match &self.params {
            Some(p) => ParamTable::load(p)?,
            None => ParamTable::shipped(),
        };
        Ok(match self.hit_latency_cycles {
            Some(c) => table.with_hit_latency(c),
            None => table,
        })
    }

    /// The synthetic workload behind a preset or inline streams.
    pub fn workload_spec(&self) -> Option<WorkloadSpec> {
        if let Some(name) = &self.workload.preset {
            return workloads::preset(name, self.seed);
        }
        self.workload.streams.as_ref().map(|s| WorkloadSpec { streams: s.clone(), seed: self.seed })
    }

    pub fn trace(&self) -> Result<Vec<MemoryAccess>, HarnessError> {
        if let Some(paths) = &self.workload.traces {
            let files = paths.iter().map(read_trace).collect::<Result<Vec<_>, _>>()?;
            return Ok(merge_trace_files(files));
        }
        let spec = self
            .workload_spec()
            .ok_or_else(|| HarnessError::Config("no workload source".into()))?;
        Ok(generate_workload(&spec, 1.0 / self.clock_ghz)?)
    }

    fn systems(&self) -> Vec<System> {
        self.systems.iter().map(|s| s.with_base(self.base_config)).collect()
    }
}

/// Merges whole trace files in tick order. The instruction count of a merged
/// access is the sum of the latest count seen in every file.
pub fn merge_trace_files(mut files: Vec<Vec<MemoryAccess>>) -> Vec<MemoryAccess> {
    if files.len() == 1 {
        return files.pop().expect("one file");
    }
    let mut tagged: Vec<(u64, usize, usize)> = files
        .iter()
        .enumerate()
        .flat_map(|(f, accesses)| accesses.iter().enumerate().map(move |(i, a)| (a.tick, f, i)))
        .collect();
    tagged.sort_unstable();
    let mut latest = vec![0u64; files.len()];
    tagged
        .into_iter()
        .map(|(_, f, i)| {
            let mut a = files[f][i];
            latest[f] = a.instructions_retired;
            a.instructions_retired = latest.iter().sum();
            a
        })
        .collect()
}

/// Runs one system. `config` pins the configuration; HALLS then still tunes
/// retention.
pub fn run_system(
    system: System,
    trace: &[MemoryAccess],
    params: &ParamTable,
    options: &RunOptions,
    config: Option<CacheConfig>,
) -> Result<RunResult, SimError> {
    match (system, config) {
        (System::Halls, None) => run_halls(trace, params, options),
        (System::Halls, Some(c)) => run_flow(Technology::Halls, trace, params, options, &ConfigChoice::Fixed(c), true),
        (System::Baseline(mut b), pinned) => {
            if let Some(c) = pinned {
                b.config = c;
                b.adaptable_config = false;
            }
            run_baseline(b, trace, params, options)
        }
    }
}

fn mapping_label(m: &MappingTable) -> String {
    let parts: Vec<String> = m.entries().iter().map(|p| p.to_string()).collect();
    parts.join(" ")
}

fn ratio(a: f64, b: f64) -> String {
    if b > 0.0 {
        format!("{:.6}", a / b)
    } else {
        String::new()
    }
}

fn pct(part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        100.0 * part / whole
    } else {
        0.0
    }
}

/// Results of `cmd_run`, one per system in configuration order.
#[derive(Debug, Clone)]
pub struct Report {
    pub runs: Vec<RunResult>,
}

pub const SUMMARY_HEADER: &str = "system,config,mapping,accesses,hits,misses,hit_rate,writebacks,expirations,\
expiration_misses,refreshes,dynamic_nj,leakage_nj,refresh_nj,buffer_leakage_nj,reconfig_nj,total_energy_nj,\
latency_cycles,edp,refresh_pct,refresh_buffer_pct,wall_cycles,tuning_intervals,truncated,energy_vs_sram,latency_vs_sram";

impl Report {
    /// The first SRAM run, used to normalise the others.
    pub fn sram(&self) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.technology == Technology::Sram)
    }

    pub fn summary_csv(&self) -> String {
        let sram = self.sram().map(|r| r.totals());
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for r in &self.runs {
            let t = r.totals();
            let w = &t.ledger.whole;
            let c = &t.counters;
            let total = t.ledger.total();
            let (ev, lv) = match &sram {
                Some(s) => (ratio(total, s.ledger.total()), ratio(t.latency_cycles as f64, s.latency_cycles as f64)),
                None => (String::new(), String::new()),
            };
            let intervals = r.tuning.as_ref().map_or(0, |t| t.intervals_consumed);
            writeln!(
                out,
                "{},{},{},{},{},{},{:.6},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6e},{:.6},{:.6},{},{},{},{},{}",
                r.system,
                r.final_config,
                mapping_label(&r.final_mapping),
                t.accesses,
                c.read_hits + c.write_hits,
                c.misses(),
                t.hit_rate(),
                c.writebacks,
                c.expirations,
                c.expiration_misses,
                c.refreshes,
                w.dynamic_nj,
                w.leakage_nj,
                w.refresh_nj,
                w.buffer_leakage_nj,
                w.reconfig_nj,
                total,
                t.latency_cycles,
                edp(total, t.latency_cycles),
                pct(w.refresh_nj, total),
                pct(w.refresh_nj + w.buffer_leakage_nj, total),
                t.wall_cycles,
                intervals,
                r.truncated,
                ev,
                lv,
            )
            .expect("writing to a String");
        }
        out
    }

    /// One row per closed segment, tuning samples included.
    pub fn tuning_log_csv(&self) -> String {
        let mut out = String::from(
            "system,segment,phase,config,mapping,start_tick,end_tick,accesses,hits,misses,expirations,refreshes,latency_cycles,energy_nj,tuning_set,bank_edp\n",
        );
        for r in &self.runs {
            let mut samples = r.tuning.iter().flat_map(|t| t.retention_samples.iter());
            for (i, s) in r.segments.iter().enumerate() {
                let c = s.stats.totals();
                let (set, bank_edp) = match s.phase {
                    Phase::RetentionTuning => match samples.next() {
                        Some(rs) => {
                            let parts: Vec<String> = rs.bank_edp.iter().map(|(b, e)| format!("{b}={e:.6e}")).collect();
                            (rs.set.to_string(), parts.join(" "))
                        }
                        None => (String::new(), String::new()),
                    },
                    _ => (String::new(), String::new()),
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{},{}",
                    r.system,
                    i,
                    s.phase,
                    s.stats.config,
                    mapping_label(&s.stats.mapping),
                    s.stats.start_tick,
                    s.stats.end_tick,
                    s.stats.accesses,
                    c.read_hits + c.write_hits,
                    c.misses(),
                    c.expirations,
                    c.refreshes,
                    s.latency_cycles,
                    s.ledger.total(),
                    set,
                    bank_edp,
                )
                .expect("writing to a String");
            }
        }
        out
    }

    /// Counters and energy per physical bank, summed over each run.
    pub fn per_bank_csv(&self) -> String {
        let mut out = String::from(
            "system,bank,cluster,device,read_hits,write_hits,read_misses,write_misses,writebacks,expirations,\
dirty_expirations,expiration_misses,refreshes,dynamic_nj,leakage_nj,refresh_nj,buffer_leakage_nj,reconfig_nj,total_nj\n",
        );
        for r in &self.runs {
            let mut counters = [BankCounters::default(); TOTAL_BANKS];
            let mut energy = [EnergyComponents::default(); TOTAL_BANKS];
            let mut powered = [false; TOTAL_BANKS];
            for s in &r.segments {
                for b in &s.stats.banks {
                    let i = b.id.flat();
                    powered[i] = true;
                    counters[i].add(&b.counters);
                }
                for (i, e) in s.ledger.banks.iter().enumerate() {
                    energy[i].add(e);
                }
            }
            for (i, id) in PhysicalBankId::all().enumerate() {
                if !powered[i] {
                    continue;
                }
                let c = &counters[i];
                let e = &energy[i];
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    r.system,
                    id,
                    id.cluster,
                    r.technology.device_for(id),
                    c.read_hits,
                    c.write_hits,
                    c.read_misses,
                    c.write_misses,
                    c.writebacks,
                    c.expirations,
                    c.dirty_expirations,
                    c.expiration_misses,
                    c.refreshes,
                    e.dynamic_nj,
                    e.leakage_nj,
                    e.refresh_nj,
                    e.buffer_leakage_nj,
                    e.reconfig_nj,
                    e.total(),
                )
                .expect("writing to a String");
            }
        }
        out
    }

    /// Final mapping of the first HALLS run, or of the first run when there
    /// is none.
    pub fn mapping_csv(&self) -> Option<String> {
        let r = self.runs.iter().find(|r| r.technology == Technology::Halls).or(self.runs.first())?;
        Some(r.final_mapping.csv(&r.layout))
    }

    /// Writes the report files into `dir` and returns their paths.
    pub fn write(&self, dir: &Path, emit_mapping: bool) -> Result<Vec<PathBuf>, HarnessError> {
        let mut files = vec![
            (SUMMARY_FILE, self.summary_csv()),
            (TUNING_LOG_FILE, self.tuning_log_csv()),
            (PER_BANK_FILE, self.per_bank_csv()),
        ];
        if emit_mapping {
            if let Some(m) = self.mapping_csv() {
                files.push((MAPPING_FILE, m));
            }
        }
        write_files(dir, files)
    }
}

fn write_files(dir: &Path, files: Vec<(&str, String)>) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Runs every configured system on the configured workload.
pub fn cmd_run(cfg: &RunConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let params = cfg.param_table()?;
    let options = cfg.options();
    let trace = cfg.trace()?;
    let runs = cfg
        .systems()
        .par_iter()
        .map(|s| run_system(*s, &trace, &params, &options, None))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Report { runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEntry {
    pub config: CacheConfig,
    pub mapping: MappingTable,
    pub energy_nj: f64,
    pub latency_cycles: u64,
}

impl OracleEntry {
    fn of(r: &RunResult) -> Self {
        let t = r.totals();
        Self { config: r.final_config, mapping: r.final_mapping.clone(), energy_nj: t.ledger.total(), latency_cycles: t.latency_cycles }
    }

    pub fn edp(&self) -> f64 {
        edp(self.energy_nj, self.latency_cycles)
    }

    pub fn score(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Energy => self.energy_nj,
            Objective::Latency => self.latency_cycles as f64,
            Objective::Edp => self.edp(),
        }
    }
}

/// Every candidate of an oracle, best first. Ties keep enumeration order.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub scope: OracleScope,
    pub objective: Objective,
    pub entries: Vec<OracleEntry>,
}

impl OracleReport {
    fn ranked(scope: OracleScope, objective: Objective, mut entries: Vec<OracleEntry>) -> Self {
        entries.sort_by(|a, b| a.score(objective).total_cmp(&b.score(objective)));
        Self { scope, objective, entries }
    }

    pub fn best(&self) -> Option<&OracleEntry> {
        self.entries.first()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("rank,config,mapping,total_energy_nj,latency_cycles,edp\n");
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{:.6},{},{:.6e}",
                i + 1,
                e.config,
                mapping_label(&e.mapping),
                e.energy_nj,
                e.latency_cycles,
                e.edp()
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        Ok(write_files(dir, vec![(ORACLE_FILE, self.csv())])?.remove(0))
    }
}

/// Every assignment of `vbanks` virtual banks to clusters, in lexicographic
/// order of cluster ids with vbank 0 most significant. Within a cluster,
/// banks are handed out in ascending vbank order.
pub fn retention_candidates(vbanks: u32) -> Result<Vec<MappingTable>, HarnessError> {
    if vbanks > RETENTION_ORACLE_MAX_VBANKS {
        return Err(HarnessError::ScopeTooLarge {
            candidates: u128::from(CLUSTERS).pow(vbanks),
            limit: RETENTION_ORACLE_MAX_VBANKS,
        });
    }
    let n = vbanks as usize;
    let total = (CLUSTERS as usize).pow(vbanks);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut used = [0u8; CLUSTERS as usize];
        let entries = (0..n)
            .map(|v| {
                let cluster = (code / (CLUSTERS as usize).pow((n - 1 - v) as u32)) % CLUSTERS as usize;
                let bank = used[cluster];
                used[cluster] += 1;
                PhysicalBankId::new(cluster as u8, bank)
            })
            .collect();
        out.push(MappingTable::from_entries(entries).expect("banks are distinct"));
    }
    Ok(out)
}

/// Runs HALLS under every retention mapping of `config`.
pub fn retention_oracle(
    trace: &[MemoryAccess],
    params: &ParamTable,
    options: &RunOptions,
    config: CacheConfig,
    objective: Objective,
) -> Result<OracleReport, HarnessError> {
    let candidates = retention_candidates(config.bank_count())?;
    let entries = candidates
        .into_par_iter()
        .map(|m| run_fixed(Technology::Halls, trace, params, options, config, m).map(|r| OracleEntry::of(&r)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OracleReport::ranked(OracleScope::Retention, objective, entries))
}

/// Runs `system` at each candidate configuration with the first rotation
/// mapping. Without explicit candidates, every covered lattice point is used.
pub fn config_oracle(
    trace: &[MemoryAccess],
    params: &ParamTable,
    options: &RunOptions,
    system: System,
    candidates: Option<&[CacheConfig]>,
    objective: Objective,
) -> Result<OracleReport, HarnessError> {
    let tech = system.technology();
    let configs: Vec<CacheConfig> = match candidates {
        Some(c) => c.to_vec(),
        None => {
            let devices = tech.devices();
            CacheConfig::lattice().into_iter().filter(|c| params.covers(*c, &devices)).collect()
        }
    };
    let entries = configs
        .into_par_iter()
        .map(|c| {
            let m = MappingTable::rotation(c.bank_count() as usize, 0);
            run_fixed(tech, trace, params, options, c, m).map(|r| OracleEntry::of(&r))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OracleReport::ranked(OracleScope::Config, objective, entries))
}

pub fn cmd_oracle(cfg: &RunConfig) -> Result<OracleReport, HarnessError> {
    cfg.validate()?;
    let params = cfg.param_table()?;
    let options = cfg.options();
    let spec = &cfg.oracle;
    match spec.scope {
        OracleScope::Retention => {
            let config = spec.config.unwrap_or(cfg.base_config);
            // Refuse before generating the trace.
            retention_candidates(config.bank_count())?;
            let trace = cfg.trace()?;
            retention_oracle(&trace, &params, &options, config, spec.objective.unwrap_or(Objective::Energy))
        }
        OracleScope::Config => {
            let trace = cfg.trace()?;
            let system = spec.system.unwrap_or(System::Halls).with_base(cfg.base_config);
            let objective = spec.objective.unwrap_or(Objective::Latency);
            config_oracle(&trace, &params, &options, system, spec.configs.as_deref(), objective)
        }
    }
}

/// One system at one sweep point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub system: String,
    pub config: CacheConfig,
    pub totals: RunTotals,
    pub energy_vs_sram: Option<f64>,
    pub latency_vs_sram: Option<f64>,
}

impl SweepRow {
    /// Refresh energy as a share of total energy, in percent.
    pub fn refresh_pct(&self) -> f64 {
        pct(self.totals.ledger.whole.refresh_nj, self.totals.ledger.total())
    }

    /// Refresh plus refresh-buffer leakage as a share of total energy.
    pub fn refresh_buffer_pct(&self) -> f64 {
        let w = &self.totals.ledger.whole;
        pct(w.refresh_nj + w.buffer_leakage_nj, self.totals.ledger.total())
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "axis,value,system,config,total_energy_nj,latency_cycles,edp,hit_rate,expirations,refreshes,\
refresh_nj,buffer_leakage_nj,refresh_pct,refresh_buffer_pct,energy_vs_sram,latency_vs_sram\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            let t = &r.totals;
            let total = t.ledger.total();
            writeln!(
                out,
                "{},{},{},{},{:.6},{},{:.6e},{:.6},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                self.axis.name(),
                r.value,
                r.system,
                r.config,
                total,
                t.latency_cycles,
                edp(total, t.latency_cycles),
                t.hit_rate(),
                t.counters.expirations,
                t.counters.refreshes,
                t.ledger.whole.refresh_nj,
                t.ledger.whole.buffer_leakage_nj,
                r.refresh_pct(),
                r.refresh_buffer_pct(),
                opt(r.energy_vs_sram),
                opt(r.latency_vs_sram),
            )
            .expect("writing to a String");
        }
        out
    }

    /// Rows of one system, in axis order.
    pub fn system_rows<'a>(&'a self, system: &'a str) -> impl Iterator<Item = &'a SweepRow> + 'a {
        self.rows.iter().filter(move |r| r.system == system)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        Ok(write_files(dir, vec![(SWEEP_FILE, self.csv())])?.remove(0))
    }
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn default_values(axis: SweepAxis, params: &ParamTable) -> Vec<String> {
    match axis {
        SweepAxis::RetentionClass => RetentionClass::ALL.iter().map(|c| c.label().to_string()).collect(),
        SweepAxis::Config => params.configs().iter().map(|c| c.to_string()).collect(),
        SweepAxis::WriteFraction => ["0", "0.25", "0.5", "0.75", "1"].map(String::from).to_vec(),
        SweepAxis::LifetimeBand => GapBand::ALL.iter().map(|b| b.label().to_string()).collect(),
    }
}

/// One prepared sweep point: its trace, systems and pinned configuration.
struct SweepPoint {
    value: String,
    systems: Vec<System>,
    config: Option<CacheConfig>,
    spec: Option<WorkloadSpec>,
}

fn sweep_point(cfg: &RunConfig, axis: SweepAxis, value: String) -> Result<SweepPoint, HarnessError> {
    let bad = |m: String| HarnessError::Config(m);
    let mut systems = cfg.systems();
    let mut config = None;
    let mut spec = None;
    let synthetic = || {
        cfg.workload_spec().ok_or_else(|| bad(format!("the {} axis needs a synthetic workload", axis.name())))
    };
    match axis {
        SweepAxis::RetentionClass => {
            let class: RetentionClass =
                value.parse().map_err(|_| bad(format!("bad retention class {value:?}")))?;
            let mut any = false;
            for s in systems.iter_mut() {
                if let System::Baseline(b) = s {
                    if let BaselineKind::Drs(_) = b.kind {
                        b.kind = BaselineKind::Drs(class);
                        any = true;
                    }
                }
            }
            if !any {
                systems.push(System::Baseline(Baseline::drs(class)).with_base(cfg.base_config));
            }
        }
        SweepAxis::Config => {
            config = Some(value.parse::<CacheConfig>().map_err(|e| bad(format!("bad configuration {value:?}: {e}")))?);
        }
        SweepAxis::WriteFraction => {
            let wf: f64 = value.parse().map_err(|_| bad(format!("bad write fraction {value:?}")))?;
            let mut s = synthetic()?;
            for st in s.streams.iter_mut() {
                st.write_fraction = wf;
            }
            s.validate()?;
            spec = Some(s);
        }
        SweepAxis::LifetimeBand => {
            let band = GapBand::ALL
                .into_iter()
                .find(|b| b.label() == value.trim())
                .ok_or_else(|| bad(format!("bad lifetime band {value:?}")))?;
            let mut s = synthetic()?;
            for st in s.streams.iter_mut() {
                st.gap_mix = GapMix::only(band);
            }
            spec = Some(s);
        }
    }
    Ok(SweepPoint { value, systems, config, spec })
}

/// Runs the configured systems at every value of one axis. `axis` and
/// `values` override the configuration file's sweep table.
pub fn cmd_sweep(cfg: &RunConfig, axis: Option<&str>, values: Option<Vec<String>>) -> Result<SweepReport, HarnessError> {
    cfg.validate()?;
    let axis: SweepAxis = axis
        .or(cfg.sweep.axis.as_deref())
        .ok_or_else(|| HarnessError::Config("no sweep axis given".into()))?
        .parse()?;
    let params = cfg.param_table()?;
    let options = cfg.options();
    let values = match values {
        Some(v) => v,
        None => match &cfg.sweep.values {
            Some(v) => v.iter().map(value_text).collect(),
            None => default_values(axis, &params),
        },
    };
    if values.is_empty() {
        return Err(HarnessError::Config(format!("sweep over {} has no values", axis.name())));
    }
    let points = values.into_iter().map(|v| sweep_point(cfg, axis, v)).collect::<Result<Vec<_>, _>>()?;
    let shared = if points.iter().all(|p| p.spec.is_some()) { None } else { Some(cfg.trace()?) };
    let per_point = points
        .par_iter()
        .map(|p| {
            let own;
            let trace = match &p.spec {
                Some(s) => {
                    own = generate_workload(s, 1.0 / cfg.clock_ghz)?;
                    &own
                }
                None => shared.as_ref().expect("shared trace generated"),
            };
            let runs = p
                .systems
                .iter()
                .map(|s| run_system(*s, trace, &params, &options, p.config))
                .collect::<Result<Vec<_>, _>>()?;
            let sram = runs.iter().find(|r| r.technology == Technology::Sram).map(|r| r.totals());
            Ok(runs
                .into_iter()
                .map(|r| {
                    let totals = r.totals();
                    let (e, l) = match &sram {
                        Some(s) if s.ledger.total() > 0.0 && s.latency_cycles > 0 => (
                            Some(totals.ledger.total() / s.ledger.total()),
                            Some(totals.latency_cycles as f64 / s.latency_cycles as f64),
                        ),
                        _ => (None, None),
                    };
                    SweepRow {
                        value: p.value.clone(),
                        system: r.system,
                        config: r.final_config,
                        totals,
                        energy_vs_sram: e,
                        latency_vs_sram: l,
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(SweepReport { axis, rows: per_point.into_iter().flatten().collect() })
}

/// Writes the configured workload as a gzip trace file in `dir`.
pub fn cmd_gen_trace(cfg: &RunConfig, dir: &Path) -> Result<(PathBuf, usize), HarnessError> {
    cfg.validate()?;
    let trace = cfg.trace()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(TRACE_FILE);
    write_trace(&trace, &path)?;
    Ok((path, trace.len()))
}
