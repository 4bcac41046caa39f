//! Runtime tuning: greedy configuration search on interval latency, then
//! rotation-based retention tuning on per-bank EDP, then steady-state
//! execution under the chosen configuration and mapping.

use serde::Serialize;

use crate::banked::{build_layout, MappingTable, PhysicalBankId, BANKS_PER_CLUSTER, CLUSTERS};
use crate::cache::{CacheConfig, ASSOCIATIVITIES, LINE_SIZES, SIZES};
use crate::energy::{bank_latency, edp, ParamTable};
use crate::session::{
    BankDelay,
    run_steady, segment_end, IntervalCursor, Phase, RunOptions, RunResult, Session, SimError,
};
use crate::sim::Technology;
use crate::trace::MemoryAccess;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Parameter {
    Size,
    LineSize,
    Ways,
}

impl Parameter {
    /// Exploration order.
    pub const ORDER: [Parameter; 3] = [Parameter::Size, Parameter::LineSize, Parameter::Ways];
}

/// Values each parameter may take.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignSpace {
    pub sizes: Vec<u64>,
    pub lines: Vec<u32>,
    pub ways: Vec<u32>,
}

impl Default for DesignSpace {
    fn default() -> Self {
        Self { sizes: SIZES.to_vec(), lines: LINE_SIZES.to_vec(), ways: ASSOCIATIVITIES.to_vec() }
    }
}

impl DesignSpace {
    pub fn max(&self) -> CacheConfig {
        let s = *self.sizes.iter().max().expect("non-empty sizes");
        let l = *self.lines.iter().max().expect("non-empty lines");
        let w = *self.ways.iter().max().expect("non-empty ways");
        CacheConfig::new(s, l, w).expect("design space holds valid values")
    }

    /// Configurations obtained by lowering `param` below its value in
    /// `from`, largest first.
    pub fn lower(&self, param: Parameter, from: CacheConfig) -> Vec<CacheConfig> {
        let mut out: Vec<CacheConfig> = match param {
            Parameter::Size => {
                self.sizes.iter().filter(|&&s| s < from.size_bytes()).filter_map(|&s| from.with_size(s).ok()).collect()
            }
            Parameter::LineSize => {
                self.lines.iter().filter(|&&l| l < from.line_bytes()).filter_map(|&l| from.with_line(l).ok()).collect()
            }
            Parameter::Ways => {
                self.ways.iter().filter(|&&w| w < from.ways()).filter_map(|&w| from.with_ways(w).ok()).collect()
            }
        };
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Upper bound on samples: the maximum plus every lower value of each
    /// parameter.
    pub fn max_samples(&self) -> usize {
        1 + (self.sizes.len() - 1) + (self.lines.len() - 1) + (self.ways.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConfigSample {
    pub config: CacheConfig,
    pub latency_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigTuning {
    pub best: CacheConfig,
    pub min_latency: Option<u64>,
    pub samples: Vec<ConfigSample>,
    pub truncated: bool,
}

impl ConfigTuning {
    pub fn intervals_used(&self) -> usize {
        self.samples.len()
    }
}

/// Greedy configuration search. Samples the maximum configuration, then for
/// size, line size and associativity in turn lowers the parameter from the
/// best configuration so far, keeping a candidate only if its latency is
/// strictly lower and stopping that parameter at the first candidate that is
/// not. Candidates rejected by `admissible` are skipped without sampling.
/// `sample` returns `None` when no further interval is available.
pub fn tune_configuration(
    space: &DesignSpace,
    admissible: impl Fn(CacheConfig) -> bool,
    mut sample: impl FnMut(CacheConfig) -> Option<u64>,
) -> ConfigTuning {
    let mut t = ConfigTuning { best: space.max(), min_latency: None, samples: Vec::new(), truncated: false };
    let mut try_one = |t: &mut ConfigTuning, c: CacheConfig| -> Option<bool> {
        let Some(latency) = sample(c) else {
            t.truncated = true;
            return None;
        };
        t.samples.push(ConfigSample { config: c, latency_cycles: latency });
        if t.min_latency.is_none_or(|m| latency < m) {
            t.min_latency = Some(latency);
            t.best = c;
            Some(true)
        } else {
            Some(false)
        }
    };
    let max = t.best;
    if admissible(max) && try_one(&mut t, max).is_none() {
        return t;
    }
    for param in Parameter::ORDER {
        for cand in space.lower(param, t.best) {
            if !admissible(cand) {
                continue;
            }
            match try_one(&mut t, cand) {
                None => return t,
                Some(true) => {}
                Some(false) => break,
            }
        }
    }
    t
}

/// Retention tuning set: vbank i → cluster (i + id) mod 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TuningSet {
    pub id: u8,
}

impl TuningSet {
    pub const ALL: [TuningSet; 4] = [TuningSet { id: 0 }, TuningSet { id: 1 }, TuningSet { id: 2 }, TuningSet { id: 3 }];

    pub fn mapping(self, vbanks: usize) -> MappingTable {
        MappingTable::rotation(vbanks, self.id)
    }
}

pub type EdpTable = [Option<f64>; CLUSTERS as usize];

/// Final allocation: vbanks in ascending id each take their lowest-EDP
/// cluster that still has a free bank (ties to the lower cluster), and that
/// cluster's lowest free bank. Missing entries count as +∞.
pub fn allocate(tables: &[EdpTable]) -> MappingTable {
    let mut next_free = [0u8; CLUSTERS as usize];
    let mut entries = Vec::with_capacity(tables.len());
    for table in tables {
        let mut best: Option<(usize, f64)> = None;
        for (c, e) in table.iter().enumerate() {
            if next_free[c] >= BANKS_PER_CLUSTER {
                continue;
            }
            let e = e.unwrap_or(f64::INFINITY);
            if best.is_none_or(|(_, b)| e < b) {
                best = Some((c, e));
            }
        }
        let (c, _) = best.expect("at most 32 vbanks fit in 32 banks");
        entries.push(PhysicalBankId::new(c as u8, next_free[c]));
        next_free[c] += 1;
    }
    MappingTable::from_entries(entries).expect("allocation respects capacity")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionSample {
    pub set: u8,
    pub latency_cycles: u64,
    pub energy_nj: f64,
    /// EDP of each powered physical bank.
    pub bank_edp: Vec<(PhysicalBankId, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningOutcome {
    pub best_config: CacheConfig,
    pub min_latency: Option<u64>,
    pub config_samples: Vec<ConfigSample>,
    pub retention_samples: Vec<RetentionSample>,
    pub edp_by_cluster: Vec<EdpTable>,
    pub mapping: MappingTable,
    pub intervals_consumed: usize,
    pub truncated: bool,
}

/// How the configuration is chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigChoice {
    Tune(DesignSpace),
    Fixed(CacheConfig),
}

/// Runs `tech` on `trace`: optional configuration tuning, optional
/// retention tuning, then the rest of the trace in steady state.
pub fn run_flow(
    tech: Technology,
    trace: &[MemoryAccess],
    params: &ParamTable,
    options: &RunOptions,
    choice: &ConfigChoice,
    retention_tuning: bool,
) -> Result<RunResult, SimError> {
    let devices = tech.devices();
    let admissible = |c: CacheConfig| params.covers(c, &devices);
    let initial = match choice {
        ConfigChoice::Tune(space) => space.max(),
        ConfigChoice::Fixed(c) => *c,
    };
    for d in &devices {
        params.get(*d, initial)?;
    }
    let start = trace.first().map_or(0, |a| a.tick);
    let fallback_end = options.end_tick.unwrap_or(start).max(start);
    let mut session = Session::new(
        tech,
        initial,
        MappingTable::rotation(initial.bank_count() as usize, 0),
        params,
        options,
        start,
    )?;
    let mut cursor = IntervalCursor::new(trace, options.interval);
    let tuned = matches!(choice, ConfigChoice::Tune(_));

    let config_tuning = match choice {
        ConfigChoice::Tune(space) => {
            let mut failure = None;
            let t = tune_configuration(space, admissible, |cand| {
                if failure.is_some() {
                    return None;
                }
                let iv = cursor.next_interval()?;
                let step = (|| {
                    let now = session.llc().now();
                    session.switch(cand, MappingTable::rotation(cand.bank_count() as usize, 0), now)?;
                    session.run(iv.accesses);
                    let end = segment_end(cursor.next_tick(), iv.accesses.last(), fallback_end, options);
                    session.close(Phase::ConfigTuning, end).map(|s| s.latency_cycles)
                })();
                match step {
                    Ok(latency) if iv.complete => Some(latency),
                    Ok(_) => None,
                    Err(e) => {
                        failure = Some(e);
                        None
                    }
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            Some(t)
        }
        ConfigChoice::Fixed(_) => None,
    };
    let mut truncated = config_tuning.as_ref().is_some_and(|t| t.truncated);
    let best = config_tuning.as_ref().map_or(initial, |t| t.best);
    let vbanks = best.bank_count() as usize;
    let set0 = TuningSet::ALL[0].mapping(vbanks);
    if !cursor.is_exhausted() {
        let now = session.llc().now();
        session.switch(best, set0.clone(), now)?;
    }

    let mut tables: Vec<EdpTable> = vec![[None; CLUSTERS as usize]; vbanks];
    let mut retention_samples = Vec::new();
    let mut mapping = set0.clone();
    if retention_tuning && !truncated {
        for set in TuningSet::ALL {
            let Some(iv) = cursor.next_interval() else {
                truncated = true;
                break;
            };
            let rotation = set.mapping(vbanks);
            let now = session.llc().now();
            // Every set starts from an empty cache so no set inherits warm
            // blocks.
            session.switch_flushed(best, rotation.clone(), now)?;
            session.run(iv.accesses);
            let end = segment_end(cursor.next_tick(), iv.accesses.last(), fallback_end, options);
            let seg = session.close(Phase::RetentionTuning, end)?;
            if !iv.complete {
                truncated = true;
                break;
            }
            let mut bank_edp = Vec::with_capacity(vbanks);
            for (v, table) in tables.iter_mut().enumerate() {
                let p = rotation.physical(v as u32);
                let delay = match options.bank_delay {
                    BankDelay::Interval => seg.latency_cycles,
                    // An idle bank still compares by its energy.
                    BankDelay::Bank => bank_latency(&seg.stats, p, params, options.miss_penalty_cycles)?.max(1),
                };
                let e = edp(seg.ledger.banks[p.flat()].total(), delay);
                table[usize::from(p.cluster)] = Some(e);
                bank_edp.push((p, e));
            }
            bank_edp.sort_by_key(|(p, _)| *p);
            retention_samples.push(RetentionSample {
                set: set.id,
                latency_cycles: seg.latency_cycles,
                energy_nj: seg.ledger.total(),
                bank_edp,
            });
        }
        if !truncated {
            mapping = allocate(&tables);
        }
    }
    if !cursor.is_exhausted() {
        let now = session.llc().now();
        session.switch(best, mapping.clone(), now)?;
    }
    run_steady(&mut session, &mut cursor, fallback_end)?;
    if session.segments().is_empty() {
        // Nothing ran; still account the idle wall time.
        session.close(Phase::Steady, fallback_end)?;
    }

    let mut layout = build_layout(best);
    if retention_tuning {
        for (v, t) in layout.vbanks_mut().iter_mut().zip(&tables) {
            v.edp_by_cluster = *t;
        }
    }
    let tuning = (tuned || retention_tuning).then(|| {
        let config_samples = config_tuning.as_ref().map(|t| t.samples.clone()).unwrap_or_default();
        TuningOutcome {
            best_config: best,
            min_latency: config_tuning.as_ref().and_then(|t| t.min_latency),
            intervals_consumed: config_samples.len() + retention_samples.len(),
            config_samples,
            retention_samples,
            edp_by_cluster: tables,
            mapping: mapping.clone(),
            truncated,
        }
    });
    let (_, segments) = session.into_segments();
    Ok(RunResult {
        system: tech.to_string(),
        technology: tech,
        segments,
        final_config: best,
        final_mapping: mapping,
        layout,
        tuning,
        truncated,
    })
}

/// The full tuned flow on the default design space.
pub fn run_halls(trace: &[MemoryAccess], params: &ParamTable, options: &RunOptions) -> Result<RunResult, SimError> {
    run_flow(Technology::Halls, trace, params, options, &ConfigChoice::Tune(DesignSpace::default()), true)
}

/// Runs a fixed configuration and mapping over the whole trace.
pub fn run_fixed(
    tech: Technology,
    trace: &[MemoryAccess],
    params: &ParamTable,
    options: &RunOptions,
    config: CacheConfig,
    mapping: MappingTable,
) -> Result<RunResult, SimError> {
    let start = trace.first().map_or(0, |a| a.tick);
    let fallback_end = options.end_tick.unwrap_or(start).max(start);
    let mut session = Session::new(tech, config, mapping.clone(), params, options, start)?;
    let mut cursor = IntervalCursor::new(trace, options.interval);
    run_steady(&mut session, &mut cursor, fallback_end)?;
    if session.segments().is_empty() {
        session.close(Phase::Steady, fallback_end)?;
    }
    let (_, segments) = session.into_segments();
    Ok(RunResult {
        system: tech.to_string(),
        technology: tech,
        segments,
        final_config: config,
        final_mapping: mapping,
        layout: build_layout(config),
        tuning: None,
        truncated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(s: &str) -> CacheConfig {
        s.parse().unwrap()
    }

    #[test]
    fn monotone_worse_landscape_takes_four_samples() {
        // Latency grows as anything shrinks.
        let space = DesignSpace::default();
        let t = tune_configuration(&space, |_| true, |c| {
            Some((1u64 << 40) / (c.size_bytes() * u64::from(c.ways()) * u64::from(c.line_bytes())))
        });
        assert_eq!(t.best, CacheConfig::base());
        assert_eq!(t.intervals_used(), 4);
        let seen: Vec<String> = t.samples.iter().map(|s| s.config.to_string()).collect();
        assert_eq!(seen, ["1M-16W-64B", "512K-16W-64B", "1M-16W-32B", "1M-8W-64B"]);
    }

    #[test]
    fn improving_landscape_descends_to_floor() {
        let space = DesignSpace::default();
        let t = tune_configuration(&space, |_| true, |c| Some(c.size_bytes() / 1024 + u64::from(c.line_bytes()) + u64::from(c.ways())));
        assert_eq!(t.best, cfg("128K-1W-16B"));
        assert_eq!(t.intervals_used(), space.max_samples());
        assert_eq!(t.min_latency, t.samples.iter().map(|s| s.latency_cycles).min());
    }

    #[test]
    fn equal_latency_is_not_improvement() {
        let t = tune_configuration(&DesignSpace::default(), |_| true, |_| Some(5));
        assert_eq!(t.best, CacheConfig::base());
        assert_eq!(t.intervals_used(), 4);
    }

    #[test]
    fn inadmissible_points_are_skipped() {
        let table = ParamTable::shipped();
        let devices = Technology::Halls.devices();
        let t = tune_configuration(&DesignSpace::default(), |c| table.covers(c, &devices), |c| Some(u64::from(c.ways())));
        let seen: Vec<String> = t.samples.iter().map(|s| s.config.to_string()).collect();
        assert_eq!(seen, ["1M-16W-64B", "512K-16W-64B", "1M-8W-64B", "1M-4W-64B", "1M-2W-64B", "1M-1W-64B"]);
        assert_eq!(t.best, cfg("1M-1W-64B"));
    }

    #[test]
    fn exhausted_sampler_truncates() {
        let mut left = 2;
        let t = tune_configuration(&DesignSpace::default(), |_| true, |c| {
            if left == 0 {
                return None;
            }
            left -= 1;
            Some(c.size_bytes())
        });
        assert!(t.truncated);
        assert_eq!(t.intervals_used(), 2);
        assert_eq!(t.best, cfg("512K-16W-64B"));
    }

    #[test]
    fn allocation_prefers_min_edp_then_spills() {
        let mut tables = vec![[Some(3.0), Some(2.0), Some(1.0), Some(4.0)]; 12];
        tables[9] = [Some(1.5), Some(2.0), Some(1.0), Some(0.5)];
        let m = allocate(&tables);
        for v in 0..8 {
            assert_eq!(m.physical(v), PhysicalBankId::new(2, v as u8));
        }
        assert_eq!(m.physical(8).cluster, 1);
        assert_eq!(m.physical(9).cluster, 3);
        assert_eq!(m.physical(10), PhysicalBankId::new(1, 1));
    }

    #[test]
    fn allocation_ties_go_to_lower_cluster() {
        let m = allocate(&[[Some(1.0); 4]]);
        assert_eq!(m.physical(0), PhysicalBankId::new(0, 0));
    }

    #[test]
    fn empty_trace_defaults_to_maxima_and_set_zero() {
        let params = ParamTable::shipped();
        let r = run_halls(&[], &params, &RunOptions::default()).unwrap();
        assert!(r.truncated);
        assert_eq!(r.final_config, CacheConfig::base());
        assert_eq!(r.final_mapping, MappingTable::rotation(32, 0));
    }
}
