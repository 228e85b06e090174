//! Grassberger–Procaccia correlation sums and the finite-time correlation dimension.
//!
//! [`CorrelationLedger`] keeps exact integer pair counts on a fixed ladder of
//! scales. Each appended point is compared once against every retained point,
//! so the cost of an update is `O(t * D)` and the counts always agree with the
//! quadratic recomputation in [`correlation_sum_brute`].

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, Rng};
use crate::trace::{bin_project_f64, TraceError, TraceReader};

pub const DEFAULT_SCALES: usize = 16;
pub const DEFAULT_RESERVOIR: usize = 20_000;
pub const CALIBRATION_SAMPLE: usize = 1_000;

/// Default range for bin-projected log-probability states.
pub const LLM_SCALE_RANGE: (f64, f64) = (500.0, 1200.0);
pub const LLM_BINS: usize = 10_000;

// Below this many retained coordinates a sequential scan is faster.
const PARALLEL_SCAN_MIN: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum DimError {
    #[error("correlation sum needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("no scaling region: fewer than two scales with nonzero counts")]
    NoScalingRegion,
    #[error("point has dimension {got}, ledger holds dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid scale range ({eps0}, {eps1}) with {count} scales")]
    InvalidScales { eps0: f64, eps1: f64, count: usize },
    #[error("stride must be at least 1")]
    InvalidStride,
    #[error("trace is empty")]
    EmptyTrace,
    #[error("calibration sample has no positive pairwise distances")]
    DegenerateSample,
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `C(eps) = 2 / (t (t - 1)) * #{i < j : |x_i - x_j| < eps}`.
pub fn correlation_sum_brute(points: &[Vec<f64>], eps: f64) -> Result<f64, DimError> {
    let t = points.len();
    if t < 2 {
        return Err(DimError::TooFewPoints(t));
    }
    let n = pair_count_brute(points, eps);
    Ok(2.0 * n as f64 / (t as f64 * (t as f64 - 1.0)))
}

pub fn pair_count_brute(points: &[Vec<f64>], eps: f64) -> u64 {
    let mut n = 0u64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if distance(&points[i], &points[j]) < eps {
                n += 1;
            }
        }
    }
    n
}

/// `count` values, geometrically spaced from `eps0` to `eps1` inclusive.
pub fn log_spaced_scales(eps0: f64, eps1: f64, count: usize) -> Result<Vec<f64>, DimError> {
    if count < 2 || !(eps0 > 0.0) || !(eps1 > eps0) || !eps1.is_finite() {
        return Err(DimError::InvalidScales { eps0, eps1, count });
    }
    let (l0, l1) = (eps0.ln(), eps1.ln());
    Ok((0..count)
        .map(|s| {
            if s == 0 {
                eps0
            } else if s == count - 1 {
                eps1
            } else {
                (l0 + (l1 - l0) * s as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
enum Retention {
    All,
    Reservoir { cap: usize, rng: Rng },
}

/// Online pair counts on a ladder of scales.
///
/// In the default mode every point is retained and counts are exact. In
/// reservoir mode at most `cap` points are kept (uniform reservoir sampling)
/// and each new point is compared only against the reservoir, so the
/// correlation sum becomes an unbiased-in-expectation approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationLedger {
    scales: Vec<f64>,
    dim: Option<usize>,
    points: Vec<f64>,
    retained: usize,
    t: u64,
    pairs: u64,
    // hist[s]: pairs whose smallest admitting scale is s; the last slot holds misses.
    hist: Vec<u64>,
    retention: Retention,
}

impl CorrelationLedger {
    /// `scales` must be strictly increasing and positive.
    pub fn new(scales: Vec<f64>) -> Result<Self, DimError> {
        let ok = !scales.is_empty()
            && scales[0] > 0.0
            && scales.windows(2).all(|w| w[0] < w[1])
            && scales.iter().all(|s| s.is_finite());
        if !ok {
            return Err(DimError::InvalidScales {
                eps0: scales.first().copied().unwrap_or(f64::NAN),
                eps1: scales.last().copied().unwrap_or(f64::NAN),
                count: scales.len(),
            });
        }
        let hist = vec![0; scales.len() + 1];
        Ok(CorrelationLedger {
            scales,
            dim: None,
            points: Vec::new(),
            retained: 0,
            t: 0,
            pairs: 0,
            hist,
            retention: Retention::All,
        })
    }

    pub fn log_spaced(eps0: f64, eps1: f64, count: usize) -> Result<Self, DimError> {
        Self::new(log_spaced_scales(eps0, eps1, count)?)
    }

    pub fn with_reservoir(mut self, cap: usize, seed: u64) -> Self {
        self.retention = Retention::Reservoir {
            cap: cap.max(2),
            rng: seed::derived_rng(seed, "reservoir", 0),
        };
        self
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.retention, Retention::All)
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> u64 {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    /// Number of point pairs compared so far; `t (t - 1) / 2` in exact mode.
    pub fn pairs(&self) -> u64 {
        self.pairs
    }

    fn bin_of(&self, d: f64) -> usize {
        self.scales.partition_point(|&e| e <= d)
    }

    fn scan(&self, x: &[f64]) -> Vec<u64> {
        let dim = x.len();
        let slots = self.scales.len() + 1;
        let rows = &self.points[..self.retained * dim];
        if dim == 0 {
            let mut h = vec![0; slots];
            h[0] = self.retained as u64;
            return h;
        }
        let add = |mut h: Vec<u64>, row: &[f64]| {
            h[self.bin_of(distance(row, x))] += 1;
            h
        };
        if rows.len() >= PARALLEL_SCAN_MIN {
            rows.par_chunks(dim)
                .fold(|| vec![0u64; slots], add)
                .reduce(
                    || vec![0u64; slots],
                    |mut a, b| {
                        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                        a
                    },
                )
        } else {
            rows.chunks(dim).fold(vec![0u64; slots], add)
        }
    }

    pub fn push(&mut self, x: &[f64]) -> Result<(), DimError> {
        match self.dim {
            Some(d) if d != x.len() => {
                return Err(DimError::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                })
            }
            None => self.dim = Some(x.len()),
            _ => {}
        }
        let h = self.scan(x);
        for (acc, v) in self.hist.iter_mut().zip(&h) {
            *acc += v;
        }
        self.pairs += self.retained as u64;
        self.t += 1;
        let dim = x.len();
        match &mut self.retention {
            Retention::All => {
                self.points.extend_from_slice(x);
                self.retained += 1;
            }
            Retention::Reservoir { cap, rng } => {
                if self.retained < *cap {
                    self.points.extend_from_slice(x);
                    self.retained += 1;
                } else {
                    let j = rng.random_range(0..self.t);
                    if (j as usize) < *cap {
                        let j = j as usize;
                        self.points[j * dim..(j + 1) * dim].copy_from_slice(x);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn push_f32(&mut self, x: &[f32]) -> Result<(), DimError> {
        let v: Vec<f64> = x.iter().map(|&a| a as f64).collect();
        self.push(&v)
    }

    /// Pair counts `n_s` with distance `< eps_s`, nondecreasing in `s`.
    pub fn counts(&self) -> Vec<u64> {
        let mut acc = 0;
        self.hist[..self.scales.len()]
            .iter()
            .map(|h| {
                acc += h;
                acc
            })
            .collect()
    }

    pub fn correlation_sums(&self) -> Vec<f64> {
        let p = self.pairs as f64;
        self.counts()
            .into_iter()
            .map(|n| if self.pairs == 0 { 0.0 } else { n as f64 / p })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub t: u64,
    pub d: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub scales_used: usize,
    pub eps_lo: f64,
    pub eps_hi: f64,
}

/// Least-squares slope of `ln C` against `ln eps` over scales with nonzero counts.
pub fn finite_time_dimension(ledger: &CorrelationLedger) -> Result<DimensionEstimate, DimError> {
    let sums = ledger.correlation_sums();
    let counts = ledger.counts();
    let used: Vec<(f64, f64, f64)> = ledger
        .scales
        .iter()
        .zip(&sums)
        .zip(&counts)
        .filter(|(_, &n)| n > 0)
        .map(|((&e, &c), _)| (e, e.ln(), c.ln()))
        .collect();
    if used.len() < 2 {
        return Err(DimError::NoScalingRegion);
    }
    // Offsetting by the first ordinate makes a flat curve fit to exactly zero.
    let y0 = used[0].2;
    let n = used.len() as f64;
    let mx = used.iter().map(|u| u.1).sum::<f64>() / n;
    let my = used.iter().map(|u| u.2 - y0).sum::<f64>() / n;
    let sxx: f64 = used.iter().map(|u| (u.1 - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|u| (u.1 - mx) * (u.2 - y0 - my)).sum();
    let d = sxy / sxx;
    let rss: f64 = used
        .iter()
        .map(|u| (u.2 - y0 - my - d * (u.1 - mx)).powi(2))
        .sum();
    Ok(DimensionEstimate {
        t: ledger.t,
        d,
        residual: (rss / n).sqrt(),
        scales_used: used.len(),
        eps_lo: used[0].0,
        eps_hi: used[used.len() - 1].0,
    })
}

/// Builds an exact ledger over `points` and fits the dimension.
pub fn dimension_of(points: &[Vec<f64>], scales: &[f64]) -> Result<DimensionEstimate, DimError> {
    let mut ledger = CorrelationLedger::new(scales.to_vec())?;
    for p in points {
        ledger.push(p)?;
    }
    finite_time_dimension(&ledger)
}

/// Central log-decade `(median / sqrt 10, median * sqrt 10)` of positive pairwise
/// distances among at most [`CALIBRATION_SAMPLE`] evenly strided points.
pub fn calibrate_scale_range(points: &[Vec<f64>]) -> Result<(f64, f64), DimError> {
    if points.len() < 2 {
        return Err(DimError::TooFewPoints(points.len()));
    }
    let stride = points.len().div_ceil(CALIBRATION_SAMPLE).max(1);
    let sample: Vec<&Vec<f64>> = points.iter().step_by(stride).collect();
    let mut d: Vec<f64> = (0..sample.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let s = &sample;
            (i + 1..s.len()).map(move |j| distance(s[i], s[j]))
        })
        .filter(|&x| x > 0.0)
        .collect();
    if d.is_empty() {
        return Err(DimError::DegenerateSample);
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    let half = 10f64.sqrt();
    Ok((median / half, median * half))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub t: u64,
    /// `None` while no scaling region exists.
    pub d: Option<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Bin count for vocabulary projection; `None` uses rows as given.
    pub bins: Option<usize>,
    pub eps0: f64,
    pub eps1: f64,
    pub scales: usize,
    pub stride: usize,
    pub reservoir: Option<usize>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            bins: Some(LLM_BINS),
            eps0: LLM_SCALE_RANGE.0,
            eps1: LLM_SCALE_RANGE.1,
            scales: DEFAULT_SCALES,
            stride: 1,
            reservoir: None,
        }
    }
}

/// Streaming dimension monitor: optional binning, ledger update and periodic fits.
#[derive(Debug, Clone)]
pub struct Monitor {
    config: MonitorConfig,
    ledger: CorrelationLedger,
}

impl Monitor {
    pub fn new(config: MonitorConfig, seed: u64) -> Result<Self, DimError> {
        if config.stride == 0 {
            return Err(DimError::InvalidStride);
        }
        let mut ledger = CorrelationLedger::log_spaced(config.eps0, config.eps1, config.scales)?;
        if let Some(cap) = config.reservoir {
            ledger = ledger.with_reservoir(cap, seed);
        }
        Ok(Monitor { config, ledger })
    }

    pub fn ledger(&self) -> &CorrelationLedger {
        &self.ledger
    }

    pub fn current(&self) -> MonitorRecord {
        MonitorRecord {
            t: self.ledger.len(),
            d: finite_time_dimension(&self.ledger).ok().map(|e| e.d),
            c: self.ledger.correlation_sums(),
        }
    }

    /// Appends a state; returns a record on steps that are multiples of the stride.
    pub fn push(&mut self, row: &[f32]) -> Result<Option<MonitorRecord>, DimError> {
        let v: Vec<f64> = row.iter().map(|&a| a as f64).collect();
        match self.config.bins {
            Some(k) => self.ledger.push(&bin_project_f64(&v, k)?)?,
            None => self.ledger.push(&v)?,
        }
        if self.ledger.len() % self.config.stride as u64 == 0 {
            Ok(Some(self.current()))
        } else {
            Ok(None)
        }
    }
}

pub fn monitor_rows<'a>(
    rows: impl IntoIterator<Item = &'a [f32]>,
    config: &MonitorConfig,
    seed: u64,
) -> Result<Vec<MonitorRecord>, DimError> {
    let mut m = Monitor::new(config.clone(), seed)?;
    let mut out = Vec::new();
    for row in rows {
        if let Some(r) = m.push(row)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// Runs the monitor over every row of a trace file.
pub fn monitor(path: impl AsRef<Path>, config: &MonitorConfig, seed: u64) -> Result<Vec<MonitorRecord>, DimError> {
    let mut reader = TraceReader::open(path)?;
    if reader.header().count == 0 {
        return Err(DimError::EmptyTrace);
    }
    let mut m = Monitor::new(config.clone(), seed)?;
    let mut out = Vec::new();
    while let Some(row) = reader.read_row()? {
        if let Some(r) = m.push(row.as_slice())? {
            out.push(r);
        }
    }
    Ok(out)
}

pub fn write_jsonl(records: &[MonitorRecord], out: &mut impl Write) -> Result<(), DimError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_csv(records: &[MonitorRecord], out: &mut impl Write) -> Result<(), DimError> {
    let s = records.first().map(|r| r.c.len()).unwrap_or(0);
    write!(out, "t,d")?;
    for i in 0..s {
        write!(out, ",c{i}")?;
    }
    writeln!(out)?;
    for r in records {
        match r.d {
            Some(d) => write!(out, "{},{d}", r.t)?,
            None => write!(out, "{},", r.t)?,
        }
        for c in &r.c {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(raw: &[[f64; 2]]) -> Vec<Vec<f64>> {
        raw.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn brute_examples() {
        assert_eq!(correlation_sum_brute(&pts(&[[1.0, 1.0], [1.0, 1.0]]), 1e-9).unwrap(), 1.0);
        let c = correlation_sum_brute(&pts(&[[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]]), 3.5).unwrap();
        assert!((c - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(correlation_sum_brute(&pts(&[[0.0, 0.0]]), 1.0), Err(DimError::TooFewPoints(1))));
        // Strict inequality: a pair at exactly eps is excluded.
        let c = correlation_sum_brute(&pts(&[[0.0, 0.0], [3.0, 0.0]]), 3.0).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn ledger_two_points_and_duplicates() {
        let mut l = CorrelationLedger::new(vec![1.0]).unwrap();
        l.push(&[0.0]).unwrap();
        l.push(&[0.5]).unwrap();
        assert_eq!(l.correlation_sums(), vec![1.0]);

        let mut l = CorrelationLedger::new(vec![0.1, 1.0, 10.0]).unwrap();
        for p in [[0.0], [0.5], [5.0]] {
            l.push(&p).unwrap();
        }
        let before = l.counts();
        l.push(&[0.5]).unwrap();
        let after = l.counts();
        let delta: Vec<u64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
        assert_eq!(delta, vec![1, 2, 3]);
        assert!(matches!(l.push(&[0.0, 1.0]), Err(DimError::DimensionMismatch { expected: 1, got: 2 })));
    }

    #[test]
    fn constant_trajectory_has_zero_dimension() {
        let mut l = CorrelationLedger::log_spaced(0.01, 1.0, 16).unwrap();
        for _ in 0..50 {
            l.push(&[0.3, -0.2]).unwrap();
        }
        let e = finite_time_dimension(&l).unwrap();
        assert_eq!(e.d, 0.0);
    }

    #[test]
    fn no_scaling_region_is_an_error() {
        let mut l = CorrelationLedger::log_spaced(0.01, 0.1, 8).unwrap();
        l.push(&[0.0]).unwrap();
        l.push(&[10.0]).unwrap();
        assert!(matches!(finite_time_dimension(&l), Err(DimError::NoScalingRegion)));
    }

    #[test]
    fn scales_validation() {
        assert!(log_spaced_scales(0.0, 1.0, 4).is_err());
        assert!(log_spaced_scales(1.0, 0.5, 4).is_err());
        assert!(log_spaced_scales(0.1, 1.0, 1).is_err());
        let s = log_spaced_scales(0.02, 0.2, 16).unwrap();
        assert_eq!(s[0], 0.02);
        assert_eq!(s[15], 0.2);
        assert!(CorrelationLedger::new(vec![0.2, 0.1]).is_err());
    }

    #[test]
    fn reservoir_bounds_memory() {
        let mut l = CorrelationLedger::log_spaced(0.01, 1.0, 4).unwrap().with_reservoir(10, 3);
        let mut rng = crate::seed::rng(1);
        for _ in 0..100 {
            l.push(&[rng.random::<f64>()]).unwrap();
        }
        assert!(!l.is_exact());
        assert_eq!(l.retained, 10);
        assert!(l.pairs() < 100 * 99 / 2);
        assert!(l.correlation_sums().iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn calibration_central_decade() {
        let p = pts(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]);
        let (a, b) = calibrate_scale_range(&p).unwrap();
        assert!((a * b - 4.0).abs() < 1e-12);
        assert!((b / a - 10.0).abs() < 1e-12);
        assert!(matches!(calibrate_scale_range(&pts(&[[1.0, 1.0]; 4])), Err(DimError::DegenerateSample)));
    }

    #[test]
    fn csv_shape() {
        let rec = vec![MonitorRecord { t: 2, d: None, c: vec![0.0, 1.0] }];
        let mut buf = Vec::new();
        write_csv(&rec, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,d,c0,c1\n2,,0,1\n");
    }
}
