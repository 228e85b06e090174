use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eig::{power_subspace, random_orthonormal, rayleigh_eigenvalues, PowerOptions, EPS_STAB, MAX_DIRECTIONS};
use super::plan::{damp_values, select_directions, DampingMode, RegulationPlan};
use super::stats::{SpectralState, DEFAULT_DECAY, DEFAULT_WINDOW};
use super::RmrError;
use crate::seed::{self, Rng};

/// Which subspace an application damps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// The selected persistent directions.
    #[default]
    Persistent,
    /// Leading columns of one random orthonormal basis drawn per regulator,
    /// matching the rank of each application.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulatorConfig {
    pub interval: u32,
    pub lambda_min: f64,
    pub eta: f64,
    pub gamma_damp: f64,
    pub decay: f64,
    pub window: usize,
    pub weight_decay: f64,
    pub top: usize,
    pub mode: DampingMode,
    pub target: Target,
    pub power: PowerOptions,
    pub eps_stab: f64,
    /// When false, directions are estimated and logged but never damped.
    pub apply: bool,
    /// Steps between estimates; decisions use the latest estimate.
    pub estimate_every: u32,
    pub seed: u64,
}

impl Default for RegulatorConfig {
    fn default() -> Self {
        RegulatorConfig {
            interval: 10,
            lambda_min: 0.8,
            eta: 0.7,
            gamma_damp: 0.995,
            decay: DEFAULT_DECAY,
            window: DEFAULT_WINDOW,
            weight_decay: DEFAULT_DECAY,
            top: MAX_DIRECTIONS,
            mode: DampingMode::SubspaceOnly,
            target: Target::Persistent,
            power: PowerOptions::default(),
            eps_stab: EPS_STAB,
            apply: true,
            estimate_every: 1,
            seed: 0,
        }
    }
}

impl RegulatorConfig {
    pub fn validate(&self) -> Result<(), RmrError> {
        if self.interval == 0 || self.estimate_every == 0 {
            return Err(RmrError::InvalidParameter("interval must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(RmrError::InvalidParameter("eta must lie in [0, 1]"));
        }
        if !(self.gamma_damp > 0.0 && self.gamma_damp <= 1.0) {
            return Err(RmrError::InvalidParameter("gamma must lie in (0, 1]"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) || !(self.weight_decay > 0.0 && self.weight_decay <= 1.0) {
            return Err(RmrError::InvalidParameter("decay must lie in (0, 1)"));
        }
        if self.top == 0 || self.top > MAX_DIRECTIONS {
            return Err(RmrError::InvalidParameter("top must lie in 1..=8"));
        }
        Ok(())
    }
}

/// One spectral log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralRecord {
    pub t: u64,
    pub layer: u32,
    pub head: u32,
    pub lambdas: Vec<f64>,
    pub applied: bool,
    pub c_selected: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Streaming regulator for one `(layer, head)` value cache.
///
/// Every observed row updates the statistics, is appended to the cache and
/// triggers a warm-started estimate of the leading directions. On steps that
/// are multiples of `interval`, directions above `lambda_min` are damped in the cache.
#[derive(Debug, Clone)]
pub struct Regulator {
    config: RegulatorConfig,
    layer: u32,
    head: u32,
    stats: SpectralState,
    cache: Vec<Vec<f64>>,
    basis: Option<DMatrix<f64>>,
    random_basis: Option<DMatrix<f64>>,
    rng: Rng,
    plans: Vec<RegulationPlan>,
}

impl Regulator {
    pub fn new(dim: usize, config: RegulatorConfig, layer: u32, head: u32) -> Result<Self, RmrError> {
        config.validate()?;
        if dim == 0 {
            return Err(RmrError::InvalidParameter("dimension must be positive"));
        }
        let index = ((layer as u64) << 32) | head as u64;
        let rng = seed::derived_rng(config.seed, "rmr-head", index);
        Ok(Regulator {
            stats: SpectralState::with_params(dim, config.decay, config.window),
            config,
            layer,
            head,
            cache: Vec::new(),
            basis: None,
            random_basis: None,
            rng,
            plans: Vec::new(),
        })
    }

    pub fn config(&self) -> &RegulatorConfig {
        &self.config
    }

    pub fn stats(&self) -> &SpectralState {
        &self.stats
    }

    /// Stored rows, oldest first, with all damping applied so far.
    pub fn cache(&self) -> &[Vec<f64>] {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut Vec<Vec<f64>> {
        &mut self.cache
    }

    pub fn plans(&self) -> &[RegulationPlan] {
        &self.plans
    }

    pub fn basis(&self) -> Option<&DMatrix<f64>> {
        self.basis.as_ref()
    }

    fn rank(&self) -> usize {
        self.config.top.min(self.stats.dim())
    }

    /// Current leading directions and their Rayleigh estimates, once the window is full.
    pub fn estimate(&mut self) -> Result<Option<(DMatrix<f64>, Vec<f64>, Option<String>)>, RmrError> {
        let c = self.rank();
        let Some(window) = self.stats.window(self.config.weight_decay, self.config.eps_stab) else {
            return Ok(None);
        };
        // Estimates on a partly filled window are not bounded by one.
        if window.pairs() + 1 < (2 * c).max(self.config.window) {
            return Ok(None);
        }
        let res = power_subspace(&window, c, &self.config.power, self.basis.as_ref(), &mut self.rng)?;
        let lambdas: Vec<f64> = rayleigh_eigenvalues(&res.basis, &window)
            .into_iter()
            .map(|r| r.lambda)
            .collect();
        self.basis = Some(res.basis.clone());
        Ok(Some((res.basis, lambdas, res.warning)))
    }

    /// Records a prompt row: statistics and cache only, no estimate or damping.
    pub fn prefill(&mut self, v: &[f64]) -> Result<(), RmrError> {
        self.stats.update(v)?;
        self.cache.push(v.to_vec());
        Ok(())
    }

    pub fn observe(&mut self, v: &[f64]) -> Result<SpectralRecord, RmrError> {
        self.prefill(v)?;
        let t = self.stats.steps();
        let mut record = SpectralRecord {
            t,
            layer: self.layer,
            head: self.head,
            lambdas: Vec::new(),
            applied: false,
            c_selected: 0,
            warning: None,
        };
        let decision_step = t % self.config.interval as u64 == 0;
        if t % self.config.estimate_every as u64 != 0 && !(decision_step && self.config.apply) {
            return Ok(record);
        }
        let Some((u, lambdas, warning)) = self.estimate()? else {
            return Ok(record);
        };
        let selected = select_directions(&lambdas, self.config.lambda_min);
        record.c_selected = selected.len();
        record.warning = warning;
        if self.config.apply && !selected.is_empty() && decision_step {
            let basis = match self.config.target {
                Target::Persistent => {
                    let cols: Vec<_> = selected.iter().map(|&i| u.column(i).into_owned()).collect();
                    DMatrix::from_columns(&cols)
                }
                Target::Random => {
                    let (d, c) = (self.stats.dim(), self.rank());
                    let rng = &mut self.rng;
                    let full = self.random_basis.get_or_insert_with(|| random_orthonormal(d, c, rng));
                    full.columns(0, selected.len()).into_owned()
                }
            };
            let plan = RegulationPlan {
                t,
                layer: self.layer,
                head: self.head,
                basis: RegulationPlan::from_matrix(&basis),
                lambdas: selected.iter().map(|&i| lambdas[i]).collect(),
                lambda_min: self.config.lambda_min,
                eta: self.config.eta,
                gamma: self.config.gamma_damp,
                mode: self.config.mode,
                interval: self.config.interval,
            };
            damp_values(&mut self.cache, &plan)?;
            self.plans.push(plan);
            record.applied = true;
        }
        record.lambdas = lambdas;
        Ok(record)
    }
}

#[derive(Debug, Clone)]
pub struct StreamOutput {
    pub rows: Vec<Vec<f64>>,
    pub log: Vec<SpectralRecord>,
    pub plans: Vec<RegulationPlan>,
}

/// Feeds a recorded stream through a regulator and returns the final cache.
pub fn regulate_stream(
    rows: &[Vec<f64>],
    config: &RegulatorConfig,
    layer: u32,
    head: u32,
) -> Result<StreamOutput, RmrError> {
    let dim = rows.first().map(|r| r.len()).unwrap_or(1).max(1);
    let mut reg = Regulator::new(dim, config.clone(), layer, head)?;
    let mut log = Vec::with_capacity(rows.len());
    for r in rows {
        log.push(reg.observe(r)?);
    }
    Ok(StreamOutput {
        rows: reg.cache,
        log,
        plans: reg.plans,
    })
}

/// Rows belonging to one `(layer, head)`.
#[derive(Debug, Clone)]
pub struct HeadStream {
    pub layer: u32,
    pub head: u32,
    pub rows: Vec<Vec<f64>>,
}

/// Regulates independent heads in parallel; results keep the input order.
pub fn regulate_heads(streams: &[HeadStream], config: &RegulatorConfig) -> Result<Vec<StreamOutput>, RmrError> {
    streams
        .par_iter()
        .map(|s| regulate_stream(&s.rows, config, s.layer, s.head))
        .collect()
}

pub fn write_spectral_log(log: &[SpectralRecord], out: &mut impl Write) -> Result<(), RmrError> {
    for r in log {
        let line = serde_json::to_string(r).map_err(|e| RmrError::Plan(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn white_noise_is_never_damped() {
        let mut rng = seed::rng(4);
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..6).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let out = regulate_stream(&rows, &RegulatorConfig::default(), 0, 0).unwrap();
        assert!(out.plans.is_empty());
        assert_eq!(out.rows, rows);
        assert!(out.log.iter().all(|r| !r.applied));
    }

    #[test]
    fn config_validation() {
        let bad = RegulatorConfig {
            interval: 0,
            ..RegulatorConfig::default()
        };
        assert!(Regulator::new(4, bad, 0, 0).is_err());
        let bad = RegulatorConfig {
            top: 9,
            ..RegulatorConfig::default()
        };
        assert!(Regulator::new(4, bad, 0, 0).is_err());
    }
}
