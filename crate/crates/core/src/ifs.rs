//! State-dependent iterated function systems in the plane.
//!
//! `2m` affine contractions split into a left group (`g = -1`) and a right
//! group (`g = +1`). Map selection is a softmax of `m_t * g_i / beta`, where
//! `m_t` is the running mean of the horizontal coordinate; the feedback lets a
//! small early bias confine the trajectory to one half-plane at low `beta`.
//! An optional per-step damping `m <- (1 - eta) m` removes the slow build-up.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, Rng};
use crate::trace::{StateVector, TraceError, TraceWriter};

/// Fraction of each run discarded before statistics.
pub const BURN_IN: f64 = 0.1;
/// Share of visits in one half-plane that counts as confinement.
pub const CONFINED_SHARE: f64 = 0.99;

#[derive(Debug, Error)]
pub enum IfsError {
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("regulation strength must lie in [0, 1), got {0}")]
    InvalidEta(f64),
    #[error("map {index}: contraction {r} outside (0, 1)")]
    InvalidContraction { index: usize, r: f64 },
    #[error("maps must be ordered as m left-group maps followed by m right-group maps")]
    InvalidGroups,
    #[error("steps must be at least 1")]
    NoSteps,
    #[error("selection distribution must be positive and sum to 1")]
    InvalidDistribution,
    #[error("analytic dimension requires a shared contraction factor")]
    NonUniformContraction,
    #[error("map index {0} out of range")]
    MapIndex(usize),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    Left,
    Right,
}

impl Group {
    pub fn sign(self) -> f64 {
        match self {
            Group::Left => -1.0,
            Group::Right => 1.0,
        }
    }
}

/// `x -> r * R(angle) * x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub contraction: f64,
    pub angle: f64,
    pub translation: [f64; 2],
    pub group: Group,
}

impl AffineMap {
    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let r = self.contraction;
        [
            r * (c * x[0] - s * x[1]) + self.translation[0],
            r * (s * x[0] + c * x[1]) + self.translation[1],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfsConfig {
    pub maps: Vec<AffineMap>,
    pub beta: f64,
}

impl IfsConfig {
    /// The two-group family with `r = 0.6`, `b = [2g, 0]` and angle `-g * pi / 3`.
    pub fn reference(maps_per_group: usize, beta: f64) -> Self {
        let mut maps = Vec::with_capacity(2 * maps_per_group);
        for group in [Group::Left, Group::Right] {
            for _ in 0..maps_per_group {
                let g = group.sign();
                maps.push(AffineMap {
                    contraction: 0.6,
                    angle: -g * std::f64::consts::FRAC_PI_3,
                    translation: [2.0 * g, 0.0],
                    group,
                });
            }
        }
        IfsConfig { maps, beta }
    }

    pub fn validate(&self) -> Result<(), IfsError> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(IfsError::InvalidBeta(self.beta));
        }
        let n = self.maps.len();
        if n == 0 || n % 2 != 0 {
            return Err(IfsError::InvalidGroups);
        }
        for (i, map) in self.maps.iter().enumerate() {
            let expected = if i < n / 2 { Group::Left } else { Group::Right };
            if map.group != expected {
                return Err(IfsError::InvalidGroups);
            }
            if !(map.contraction > 0.0 && map.contraction < 1.0) {
                return Err(IfsError::InvalidContraction {
                    index: i,
                    r: map.contraction,
                });
            }
        }
        Ok(())
    }

    /// `max_i |b_i| / (1 - max_i r_i)`: every orbit from the origin stays inside this radius.
    pub fn orbit_radius(&self) -> f64 {
        let rmax = self.maps.iter().map(|m| m.contraction).fold(0.0, f64::max);
        let bmax = self
            .maps
            .iter()
            .map(|m| m.translation[0].hypot(m.translation[1]))
            .fold(0.0, f64::max);
        bmax / (1.0 - rmax)
    }
}

/// Softmax over maps of `order * g_i / beta`.
pub fn map_distribution(order: f64, beta: f64, config: &IfsConfig) -> Result<Vec<f64>, IfsError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(IfsError::InvalidBeta(beta));
    }
    // Only two distinct logits exist; normalise against the larger one.
    let top = order.abs() / beta;
    let weights: Vec<f64> = config
        .maps
        .iter()
        .map(|m| (order * m.group.sign() / beta - top).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / z).collect())
}

/// Dynamic state: position, order parameter and the number of points generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IfsState {
    pub x: [f64; 2],
    pub order: f64,
    pub t: u64,
}

impl Default for IfsState {
    fn default() -> Self {
        IfsState {
            x: [0.0, 0.0],
            order: 0.0,
            t: 0,
        }
    }
}

impl IfsState {
    pub fn at(x: [f64; 2]) -> Self {
        IfsState { x, order: 0.0, t: 0 }
    }

    /// Applies map `index` and folds the new horizontal coordinate into the running mean.
    pub fn apply_map(&mut self, config: &IfsConfig, index: usize) -> Result<(), IfsError> {
        let map = config.maps.get(index).ok_or(IfsError::MapIndex(index))?;
        self.x = map.apply(self.x);
        self.t += 1;
        self.order += (self.x[0] - self.order) / self.t as f64;
        Ok(())
    }
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One transition: draw a map from the current selection distribution and apply it.
/// Returns the chosen map index.
pub fn step(state: &mut IfsState, config: &IfsConfig, rng: &mut Rng) -> Result<usize, IfsError> {
    let probs = map_distribution(state.order, config.beta, config)?;
    let i = sample_index(&probs, rng.random::<f64>());
    state.apply_map(config, i)?;
    Ok(i)
}

/// `m <- (1 - eta) m`.
pub fn regulate_order_parameter(order: f64, eta: f64) -> Result<f64, IfsError> {
    if !(0.0..1.0).contains(&eta) {
        return Err(IfsError::InvalidEta(eta));
    }
    Ok((1.0 - eta) * order)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderSample {
    pub t: u64,
    pub order: f64,
    pub p_right: f64,
}

/// A finished trajectory together with its order-parameter series.
#[derive(Debug, Clone, PartialEq)]
pub struct IfsRun {
    pub points: Vec<[f64; 2]>,
    pub series: Vec<OrderSample>,
}

pub fn run(config: &IfsConfig, steps: usize, seed: u64, eta: f64) -> Result<IfsRun, IfsError> {
    config.validate()?;
    if steps == 0 {
        return Err(IfsError::NoSteps);
    }
    if !(0.0..1.0).contains(&eta) {
        return Err(IfsError::InvalidEta(eta));
    }
    let mut rng = seed::derived_rng(seed, "ifs", 0);
    let mut state = IfsState::default();
    let mut points = Vec::with_capacity(steps);
    let mut series = Vec::with_capacity(steps);
    let right: Vec<bool> = config.maps.iter().map(|m| m.group == Group::Right).collect();
    for _ in 0..steps {
        step(&mut state, config, &mut rng)?;
        if eta > 0.0 {
            state.order = regulate_order_parameter(state.order, eta)?;
        }
        let probs = map_distribution(state.order, config.beta, config)?;
        let p_right = probs.iter().zip(&right).filter(|(_, &r)| r).map(|(p, _)| p).sum();
        points.push(state.x);
        series.push(OrderSample {
            t: state.t,
            order: state.order,
            p_right,
        });
    }
    Ok(IfsRun { points, series })
}

impl IfsRun {
    fn burn_in(&self, fraction: f64) -> usize {
        ((self.points.len() as f64) * fraction).floor() as usize
    }

    /// Fractions of post-burn-in points with `x < 0` and `x >= 0`.
    pub fn half_plane_fractions(&self, burn_in: f64) -> (f64, f64) {
        let tail = &self.points[self.burn_in(burn_in)..];
        if tail.is_empty() {
            return (0.0, 0.0);
        }
        let right = tail.iter().filter(|p| p[0] >= 0.0).count() as f64 / tail.len() as f64;
        (1.0 - right, right)
    }

    /// True when one half-plane holds at least `share` of the post-burn-in points.
    pub fn is_confined(&self, burn_in: f64, share: f64) -> bool {
        let (l, r) = self.half_plane_fractions(burn_in);
        l.max(r) >= share
    }

    /// Number of sign changes of the order parameter after burn-in.
    pub fn order_sign_flips(&self, burn_in: f64) -> usize {
        let tail = &self.series[self.burn_in(burn_in)..];
        tail.windows(2)
            .filter(|w| w[0].order != 0.0 && w[1].order != 0.0)
            .filter(|w| (w[0].order > 0.0) != (w[1].order > 0.0))
            .count()
    }

    pub fn points_after(&self, burn_in: f64) -> &[[f64; 2]] {
        &self.points[self.burn_in(burn_in)..]
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<(), IfsError> {
        let mut w = TraceWriter::create(path, Some(2))?;
        for p in &self.points {
            w.push(&StateVector::from_f64(p)?.0)?;
        }
        w.finish()?;
        Ok(())
    }

    /// CSV `t,m_t,p_right` with a header line.
    pub fn write_series_csv(&self, out: &mut impl Write) -> Result<(), IfsError> {
        writeln!(out, "t,m_t,pi_right")?;
        for s in &self.series {
            writeln!(out, "{},{:.17e},{:.17e}", s.t, s.order, s.p_right)?;
        }
        Ok(())
    }
}

/// Classical IFS `x -> r_i x + b_i` with a fixed selection distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarIfs {
    pub contractions: Vec<f64>,
    pub translations: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl SelfSimilarIfs {
    /// Sierpinski gasket: three maps at ratio 1/2 onto the corners of a unit triangle.
    pub fn sierpinski() -> Self {
        let h = 3f64.sqrt() / 2.0;
        SelfSimilarIfs {
            contractions: vec![0.5; 3],
            translations: vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.25, h / 2.0]],
            probs: vec![1.0 / 3.0; 3],
        }
    }

    pub fn uniform(n: usize, r: f64, translations: Vec<Vec<f64>>) -> Self {
        SelfSimilarIfs {
            contractions: vec![r; n],
            translations,
            probs: vec![1.0 / n as f64; n],
        }
    }

    fn check_probs(&self) -> Result<(), IfsError> {
        let sum: f64 = self.probs.iter().sum();
        if self.probs.is_empty()
            || self.probs.len() != self.contractions.len()
            || self.probs.iter().any(|&p| !(p > 0.0))
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(IfsError::InvalidDistribution);
        }
        Ok(())
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().map(|&p| p * p.ln()).sum::<f64>()
    }

    /// `min(h_pi / -log r, ambient_dim)`.
    pub fn dimension(&self, ambient_dim: usize) -> Result<f64, IfsError> {
        self.check_probs()?;
        let r = self.contractions[0];
        if self.contractions.iter().any(|&ri| ri != r) {
            return Err(IfsError::NonUniformContraction);
        }
        if !(r > 0.0 && r < 1.0) {
            return Err(IfsError::InvalidContraction { index: 0, r });
        }
        Ok((self.entropy() / -r.ln()).min(ambient_dim as f64))
    }

    /// Chaos-game orbit of `n` points after `burn_in` discarded iterations.
    pub fn sample(&self, n: usize, burn_in: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>, IfsError> {
        self.check_probs()?;
        let dim = self.translations.first().map(|b| b.len()).unwrap_or(0);
        let mut x = vec![0.0; dim];
        let mut out = Vec::with_capacity(n);
        for k in 0..burn_in + n {
            let i = sample_index(&self.probs, rng.random::<f64>());
            let (r, b) = (self.contractions[i], &self.translations[i]);
            for (xj, bj) in x.iter_mut().zip(b) {
                *xj = r * *xj + bj;
            }
            if k >= burn_in {
                out.push(x.clone());
            }
        }
        Ok(out)
    }
}

pub fn self_similar_dimension(ifs: &SelfSimilarIfs, ambient_dim: usize) -> Result<f64, IfsError> {
    ifs.dimension(ambient_dim)
}
