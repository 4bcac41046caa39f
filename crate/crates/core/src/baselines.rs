//! Reference systems: an SRAM cache, and a uniform-retention STT-RAM cache
//! kept correct by perfect refresh.

use std::fmt;

use crate::cache::CacheConfig;
use crate::energy::ParamTable;
use crate::retention::RetentionClass;
use crate::session::{RunOptions, RunResult, SimError};
use crate::sim::Technology;
use crate::trace::MemoryAccess;
use crate::tuner::{run_flow, ConfigChoice, DesignSpace};

/// Retention class used when none is given.
pub const DEFAULT_DRS_RETENTION: RetentionClass = RetentionClass::R10ms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Sram,
    Drs(RetentionClass),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Baseline {
    pub kind: BaselineKind,
    /// Choose the configuration with the greedy configuration tuner instead
    /// of running `config` throughout.
    pub adaptable_config: bool,
    pub config: CacheConfig,
}

impl Baseline {
    pub fn sram() -> Self {
        Self { kind: BaselineKind::Sram, adaptable_config: false, config: CacheConfig::base() }
    }

    pub fn drs(class: RetentionClass) -> Self {
        Self { kind: BaselineKind::Drs(class), adaptable_config: false, config: CacheConfig::base() }
    }

    pub fn adaptable(mut self) -> Self {
        self.adaptable_config = true;
        self
    }

    pub fn technology(&self) -> Technology {
        match self.kind {
            BaselineKind::Sram => Technology::Sram,
            BaselineKind::Drs(c) => Technology::Drs(c),
        }
    }
}

impl Default for Baseline {
    fn default() -> Self {
        Self::drs(DEFAULT_DRS_RETENTION)
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.technology())?;
        if self.adaptable_config {
            f.write_str("-adaptable")?;
        }
        Ok(())
    }
}

pub fn run_baseline(
    baseline: Baseline,
    trace: &[MemoryAccess],
    params: &ParamTable,
    options: &RunOptions,
) -> Result<RunResult, SimError> {
    let choice = if baseline.adaptable_config {
        ConfigChoice::Tune(DesignSpace::default())
    } else {
        ConfigChoice::Fixed(baseline.config)
    };
    let mut r = run_flow(baseline.technology(), trace, params, options, &choice, false)?;
    r.system = baseline.to_string();
    Ok(r)
}
