use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DecodeError;
use crate::seed::{self, Rng};
use crate::trace::read_trace;

/// Next-token distribution provider standing in for a language model.
///
/// Sources that expose a value stream (`value_dim() > 0`) read the caller's
/// value cache when producing logits, so edits to the cache feed back into
/// later distributions.
pub trait DistributionSource: Send {
    fn vocab_size(&self) -> usize;

    fn value_dim(&self) -> usize {
        0
    }

    /// Prompt tokens with their value rows, emitted before generation starts.
    fn prefill(&mut self, _rng: &mut Rng) -> Vec<(usize, Option<Vec<f64>>)> {
        Vec::new()
    }

    /// Model logits; the monitored state is their log-softmax.
    fn logits(&mut self, step: usize, history: &[usize], cache: &[Vec<f64>]) -> Vec<f64>;

    /// Divisor applied to the logits before sampling.
    fn temperature(&self) -> f64 {
        1.0
    }

    /// Value row appended to the cache after `token` is chosen.
    fn emit(&mut self, _token: usize, _cache: &[Vec<f64>], _rng: &mut Rng) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovConfig {
    pub vocab: usize,
    /// Standard deviation of the transition logits.
    pub scale: f64,
    pub beta: f64,
    pub world_seed: u64,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        MarkovConfig {
            vocab: 64,
            scale: 2.0,
            beta: 1.0,
            world_seed: 1,
        }
    }
}

/// First-order chain with Gaussian transition logits, sampled at temperature `beta`.
pub struct MarkovSource {
    table: DMatrix<f64>,
    beta: f64,
}

impl MarkovSource {
    pub fn new(cfg: &MarkovConfig) -> Result<Self, DecodeError> {
        if cfg.vocab == 0 {
            return Err(DecodeError::EmptyAlphabet);
        }
        if !(cfg.beta > 0.0) {
            return Err(DecodeError::InvalidSource("beta must be positive".into()));
        }
        let mut rng = seed::derived_rng(cfg.world_seed, "markov-world", 0);
        let table = DMatrix::from_fn(cfg.vocab, cfg.vocab, |_, _| {
            let x: f64 = StandardNormal.sample(&mut rng);
            cfg.scale * x
        });
        Ok(MarkovSource { table, beta: cfg.beta })
    }
}

impl DistributionSource for MarkovSource {
    fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    fn logits(&mut self, _step: usize, history: &[usize], _cache: &[Vec<f64>]) -> Vec<f64> {
        let prev = history.last().copied().unwrap_or(0);
        self.table.row(prev).iter().copied().collect()
    }

    fn temperature(&self) -> f64 {
        self.beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfsCoupledConfig {
    /// Alphabet size; the first half forms the left group, the rest the right group.
    pub vocab: usize,
    /// Value-row dimension.
    pub dim: usize,
    pub beta: f64,
    /// Weight of the group axis in token embeddings.
    pub alpha: f64,
    /// Weight of the token-specific embedding component.
    pub spread: f64,
    /// Gain of the cache read added to each emitted row.
    pub resid: f64,
    /// Recency decay of the long cache read.
    pub omega: f64,
    /// Recency decay of the short cache read.
    pub rho: f64,
    /// Noise added to emitted rows.
    pub sigma: f64,
    /// Gain of the short-read logit term.
    pub fast_gain: f64,
    pub prefill: usize,
    pub world_seed: u64,
}

impl Default for IfsCoupledConfig {
    fn default() -> Self {
        IfsCoupledConfig {
            vocab: 64,
            dim: 24,
            beta: 1.0,
            alpha: 0.5,
            spread: 1.0,
            resid: 0.8,
            omega: 0.99,
            rho: 0.6,
            sigma: 0.05,
            fast_gain: 1.0,
            prefill: 300,
            world_seed: 12_345,
        }
    }
}

/// Token-level analogue of the state-dependent IFS.
///
/// Each token `w` has an embedding `e_w = g_w * alpha * a + spread * z_w`, with
/// `g_w = -1` for the first half of the alphabet and `+1` for the rest. The
/// emitted value row is `e_w + resid * o + sigma * xi`, where `o` is a
/// long-memory, recency-weighted read of the value cache. Logits are
/// `E (o + fast_gain * B s)`, with `s` a short read of the cache, and tokens
/// are sampled at temperature `beta`. The group component of `o` plays the
/// role of the order parameter: at small `beta` it locks sampling onto one group.
pub struct IfsCoupledSource {
    cfg: IfsCoupledConfig,
    embed: DMatrix<f64>,
    mix: DMatrix<f64>,
}

// Rows older than this contribute below 1e-4 of the long read at the default decay.
const READ_HORIZON: usize = 1_000;

impl IfsCoupledSource {
    pub fn new(cfg: &IfsCoupledConfig) -> Result<Self, DecodeError> {
        if cfg.vocab < 2 || cfg.vocab % 2 != 0 {
            return Err(DecodeError::InvalidSource("vocab must be even and at least 2".into()));
        }
        if cfg.dim < 2 {
            return Err(DecodeError::InvalidSource("dim must be at least 2".into()));
        }
        if !(cfg.beta > 0.0) {
            return Err(DecodeError::InvalidSource("beta must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.omega) || !(0.0..=1.0).contains(&cfg.rho) {
            return Err(DecodeError::InvalidSource("read decays must lie in [0, 1)".into()));
        }
        let mut rng = seed::derived_rng(cfg.world_seed, "ifs-coupled-world", 0);
        let d = cfg.dim;
        let half = cfg.vocab / 2;
        let mut embed = DMatrix::zeros(cfg.vocab, d);
        for w in 0..cfg.vocab {
            let g = if w < half { -1.0 } else { 1.0 };
            let mut z: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            z[0] = 0.0;
            let n = z.norm();
            z /= n;
            embed[(w, 0)] = g * cfg.alpha;
            for j in 1..d {
                embed[(w, j)] = cfg.spread * z[j];
            }
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mix = DMatrix::from_fn(d, d, |_, _| {
            let x: f64 = StandardNormal.sample(&mut rng);
            scale * x
        });
        Ok(IfsCoupledSource {
            cfg: cfg.clone(),
            embed,
            mix,
        })
    }

    /// Unit vector of the group axis.
    pub fn group_axis(&self) -> DVector<f64> {
        let mut a = DVector::zeros(self.cfg.dim);
        a[0] = 1.0;
        a
    }

    pub fn group_of(&self, token: usize) -> i8 {
        if token < self.cfg.vocab / 2 {
            -1
        } else {
            1
        }
    }

    fn read(cache: &[Vec<f64>], decay: f64, dim: usize, horizon: usize) -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        let mut w = 1.0 - decay;
        for row in cache.iter().rev().take(horizon) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += w * x;
            }
            w *= decay;
        }
        out
    }

    /// Long-memory read of the cache.
    pub fn long_read(&self, cache: &[Vec<f64>]) -> DVector<f64> {
        Self::read(cache, self.cfg.omega, self.cfg.dim, READ_HORIZON)
    }

    fn short_read(&self, cache: &[Vec<f64>]) -> DVector<f64> {
        let keep = 1.0 - self.cfg.rho;
        let mut out = DVector::zeros(self.cfg.dim);
        let mut w = self.cfg.rho;
        for row in cache.iter().rev().take(64) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += w * x;
            }
            w *= keep;
        }
        out
    }

    fn value_row(&self, token: usize, cache: &[Vec<f64>], rng: &mut Rng) -> Vec<f64> {
        let o = self.long_read(cache);
        (0..self.cfg.dim)
            .map(|j| {
                let xi: f64 = StandardNormal.sample(rng);
                self.embed[(token, j)] + self.cfg.resid * o[j] + self.cfg.sigma * xi
            })
            .collect()
    }
}

impl DistributionSource for IfsCoupledSource {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab
    }

    fn value_dim(&self) -> usize {
        self.cfg.dim
    }

    fn prefill(&mut self, rng: &mut Rng) -> Vec<(usize, Option<Vec<f64>>)> {
        let mut cache = Vec::with_capacity(self.cfg.prefill);
        let mut out = Vec::with_capacity(self.cfg.prefill);
        for _ in 0..self.cfg.prefill {
            let w = rng.random_range(0..self.cfg.vocab);
            let v = self.value_row(w, &cache, rng);
            cache.push(v.clone());
            out.push((w, Some(v)));
        }
        out
    }

    fn logits(&mut self, _step: usize, _history: &[usize], cache: &[Vec<f64>]) -> Vec<f64> {
        let o = self.long_read(cache);
        let s = self.short_read(cache);
        let drive = o + (&self.mix * s) * self.cfg.fast_gain;
        (&self.embed * drive).iter().copied().collect()
    }

    fn temperature(&self) -> f64 {
        self.cfg.beta
    }

    fn emit(&mut self, token: usize, cache: &[Vec<f64>], rng: &mut Rng) -> Option<Vec<f64>> {
        Some(self.value_row(token, cache, rng))
    }
}

/// Replays stored log-probability rows, cycling when the trace is exhausted.
pub struct TraceReplaySource {
    rows: Vec<Vec<f64>>,
}

impl TraceReplaySource {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, DecodeError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(DecodeError::EmptyAlphabet);
        }
        Ok(TraceReplaySource { rows })
    }

    pub fn open(path: &std::path::Path) -> Result<Self, DecodeError> {
        let rows = read_trace(path)?.into_iter().map(|r| r.to_f64()).collect();
        Self::new(rows)
    }
}

impl DistributionSource for TraceReplaySource {
    fn vocab_size(&self) -> usize {
        self.rows[0].len()
    }

    fn logits(&mut self, step: usize, _history: &[usize], _cache: &[Vec<f64>]) -> Vec<f64> {
        self.rows[step % self.rows.len()].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceConfig {
    Markov(MarkovConfig),
    IfsCoupled(IfsCoupledConfig),
    TraceReplay { path: PathBuf },
}

impl SourceConfig {
    pub fn build(&self) -> Result<Box<dyn DistributionSource>, DecodeError> {
        Ok(match self {
            SourceConfig::Markov(c) => Box::new(MarkovSource::new(c)?),
            SourceConfig::IfsCoupled(c) => Box::new(IfsCoupledSource::new(c)?),
            SourceConfig::TraceReplay { path } => Box::new(TraceReplaySource::open(path)?),
        })
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            SourceConfig::Markov(c) => c.beta = beta,
            SourceConfig::IfsCoupled(c) => c.beta = beta,
            SourceConfig::TraceReplay { .. } => {}
        }
        out
    }

    pub fn beta(&self) -> Option<f64> {
        match self {
            SourceConfig::Markov(c) => Some(c.beta),
            SourceConfig::IfsCoupled(c) => Some(c.beta),
            SourceConfig::TraceReplay { .. } => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SourceConfig::Markov(_) => "markov",
            SourceConfig::IfsCoupled(_) => "ifs-coupled",
            SourceConfig::TraceReplay { .. } => "trace-replay",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ifs_coupled_groups_and_axis() {
        let src = IfsCoupledSource::new(&IfsCoupledConfig::default()).unwrap();
        assert_eq!(src.group_of(0), -1);
        assert_eq!(src.group_of(63), 1);
        assert!((src.embed[(0, 0)] + 0.5).abs() < 1e-15);
        assert!((src.embed[(40, 0)] - 0.5).abs() < 1e-15);
        let z: f64 = (1..24).map(|j| src.embed[(5, j)].powi(2)).sum();
        assert!((z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn long_read_of_constant_cache() {
        let src = IfsCoupledSource::new(&IfsCoupledConfig::default()).unwrap();
        let cache = vec![vec![1.0; 24]; 2_000];
        let o = src.long_read(&cache);
        let expect = 1.0 - 0.99f64.powi(READ_HORIZON as i32);
        assert!((o[3] - expect).abs() < 1e-12);
    }

    #[test]
    fn markov_rows_follow_history() {
        let mut m = MarkovSource::new(&MarkovConfig::default()).unwrap();
        let a = m.logits(0, &[3], &[]);
        let b = m.logits(5, &[1, 3], &[]);
        assert_eq!(a, b);
        assert_ne!(a, m.logits(0, &[4], &[]));
    }

    #[test]
    fn invalid_configs() {
        let bad = IfsCoupledConfig {
            vocab: 7,
            ..IfsCoupledConfig::default()
        };
        assert!(IfsCoupledSource::new(&bad).is_err());
        assert!(TraceReplaySource::new(vec![]).is_err());
    }
}
