//! Sampling controls, loop detection and synthetic generation runs.
//!
//! Each step of [`simulate`] runs a fixed pipeline: source logits, top-k,
//! top-p, then one of temperature scaling, entropy locking or typical
//! filtering, and finally inverse-CDF sampling. The raw log-probability
//! vector of every step feeds the dimension monitor; sources with a value
//! stream can be regulated in the loop.

mod entropy;
mod filters;
mod loops;
mod simulate;
mod source;

pub use entropy::{solve_entropy_temperature, DEFAULT_TOL, MAX_DEPTH, T_MAX, T_MIN};
pub use filters::{entropy, filter_top_k_p, log_softmax, softmax, support, typical_filter, TOP_K, TOP_P, TYPICAL_MASS};
pub use loops::{detect_exact_loop, distinct_n, verify_loop, Distinct2, LoopEvent, MAX_PERIOD, MIN_REPEATS};
pub use simulate::{
    decide, simulate, simulate_states, sweep, Control, DecodeConfig, Decision, LoopRecord, RegulationMode, RunReport,
    RunSummary, StepRecord, SweepPoint, SweepSummary,
};
pub use source::{
    DistributionSource, IfsCoupledConfig, IfsCoupledSource, MarkovConfig, MarkovSource, SourceConfig,
    TraceReplaySource,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrdim::{DimError, MonitorConfig};
use crate::trace::TraceError;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("empty alphabet")]
    EmptyAlphabet,
    #[error("invalid filter parameters k={k}, p={p}")]
    InvalidFilter { k: usize, p: f64 },
    #[error("distribution has no positive mass or non-finite logits")]
    InvalidDistribution,
    #[error("entropy lock needs at least two candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("entropy target must be positive, got {0}")]
    InvalidEntropyTarget(f64),
    #[error("entropy target not reachable below T={temperature} (entropy there {achieved})")]
    EntropyClamp { temperature: f64, achieved: f64 },
    #[error("entropy target below the minimum reachable at T={temperature} (entropy there {achieved})")]
    EntropyUnreachable { temperature: f64, achieved: f64 },
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dim(#[from] DimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Frozen non-collapse rule for the synthetic sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonCollapseThreshold {
    /// 10th percentile of the horizon dimension over healthy runs.
    pub threshold: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub scales: usize,
    pub quantile: f64,
    pub runs: usize,
    pub source: String,
    pub beta: Option<f64>,
    pub horizon: usize,
    pub root_seed: u64,
}

pub const THRESHOLD_FIXTURE: &str = include_str!("../../fixtures/noncollapse_threshold.json");

impl NonCollapseThreshold {
    pub fn frozen() -> Self {
        serde_json::from_str(THRESHOLD_FIXTURE).expect("bundled threshold fixture is valid")
    }

    pub fn monitor(&self) -> MonitorConfig {
        MonitorConfig {
            bins: None,
            eps0: self.eps0,
            eps1: self.eps1,
            scales: self.scales,
            stride: 1,
            reservoir: None,
        }
    }
}

/// Derives the rule from unregulated runs of `source` at its configured `beta`.
///
/// The scale range is the central log-decade of one calibration run's states;
/// the threshold is the `quantile` of the horizon dimension over `runs` further
/// runs at that range. Run `i` uses seed `derive(root_seed, "healthy", i)`.
pub fn derive_threshold(
    source: &SourceConfig,
    base: &DecodeConfig,
    runs: usize,
    q: f64,
    root_seed: u64,
) -> Result<NonCollapseThreshold, DecodeError> {
    use rayon::prelude::*;
    let mut cfg = DecodeConfig {
        regulation: RegulationMode::Off,
        threshold: 0.0,
        ..base.clone()
    };
    let states = simulate_states(source, &cfg, crate::seed::derive(root_seed, "calibrate", 0))?;
    let (eps0, eps1) = crate::corrdim::calibrate_scale_range(&states)?;
    cfg.monitor = MonitorConfig {
        eps0,
        eps1,
        ..cfg.monitor
    };
    let dims: Vec<f64> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            simulate(source, &cfg, crate::seed::derive(root_seed, "healthy", i))
                .map(|r| r.summary.d_horizon.unwrap_or(0.0))
        })
        .collect::<Result<_, _>>()?;
    Ok(NonCollapseThreshold {
        threshold: quantile(&dims, q),
        eps0,
        eps1,
        scales: cfg.monitor.scales,
        quantile: q,
        runs,
        source: source.kind().into(),
        beta: source.beta(),
        horizon: cfg.horizon,
        root_seed,
    })
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
