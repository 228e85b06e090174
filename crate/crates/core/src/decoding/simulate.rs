use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::entropy::{solve_entropy_temperature, DEFAULT_TOL};
use super::filters::{entropy, filter_top_k_p, log_softmax, softmax, support, typical_filter, TOP_K, TOP_P};
use super::loops::{detect_exact_loop, Distinct2, LoopEvent, MAX_PERIOD, MIN_REPEATS};
use super::source::SourceConfig;
use super::{DecodeError, NonCollapseThreshold};
use crate::corrdim::{Monitor, MonitorConfig};
use crate::rmr::{Regulator, RegulatorConfig, SpectralRecord, Target};
use crate::seed::{self, Rng};

/// Stage that follows top-k/top-p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Control {
    Temperature(f64),
    Entropy(f64),
    Typical(f64),
}

impl Control {
    pub fn pipeline(&self) -> &'static str {
        match self {
            Control::Temperature(_) => "top-k > top-p > temperature",
            Control::Entropy(_) => "top-k > top-p > entropy-lock",
            Control::Typical(_) => "top-k > top-p > typical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegulationMode {
    #[default]
    Off,
    Rmr,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub horizon: usize,
    pub top_k: usize,
    pub top_p: f64,
    pub control: Control,
    pub entropy_tol: f64,
    pub monitor: MonitorConfig,
    pub threshold: f64,
    pub max_period: usize,
    pub min_repeats: usize,
    pub regulation: RegulationMode,
    pub regulator: RegulatorConfig,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        let fixture = NonCollapseThreshold::frozen();
        DecodeConfig {
            horizon: 1_000,
            top_k: TOP_K,
            top_p: TOP_P,
            control: Control::Temperature(1.0),
            entropy_tol: DEFAULT_TOL,
            monitor: fixture.monitor(),
            threshold: fixture.threshold,
            max_period: MAX_PERIOD,
            min_repeats: MIN_REPEATS,
            regulation: RegulationMode::Off,
            regulator: RegulatorConfig {
                estimate_every: 10,
                ..RegulatorConfig::default()
            },
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.horizon == 0 {
            return Err(DecodeError::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.top_k == 0 || !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(DecodeError::InvalidFilter {
                k: self.top_k,
                p: self.top_p,
            });
        }
        match self.control {
            Control::Temperature(t) if !(t > 0.0) => {
                return Err(DecodeError::InvalidConfig("temperature must be positive".into()))
            }
            Control::Entropy(h) if !(h > 0.0) => return Err(DecodeError::InvalidEntropyTarget(h)),
            Control::Typical(tau) if !(tau > 0.0 && tau <= 1.0) => {
                return Err(DecodeError::InvalidConfig("typical mass must lie in (0, 1]".into()))
            }
            _ => {}
        }
        self.regulator
            .validate()
            .map_err(|e| DecodeError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub token: usize,
    pub entropy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub candidates: usize,
    pub clamp: bool,
    pub distinct2: f64,
    pub d: Option<f64>,
    pub looping: bool,
    pub applied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub t: usize,
    #[serde(flatten)]
    pub event: LoopEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub source: String,
    pub seed: u64,
    pub pipeline: String,
    pub regulation: RegulationMode,
    pub horizon: usize,
    pub d_horizon: Option<f64>,
    /// Mean of `d_t` over the final tenth of the horizon.
    pub mean_d: Option<f64>,
    pub threshold: f64,
    pub non_collapse: bool,
    pub loop_rate: f64,
    pub loop_events: Vec<LoopRecord>,
    pub clamp_events: usize,
    pub distinct2: f64,
    pub applications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tokens: Vec<usize>,
    pub steps: Vec<StepRecord>,
    pub spectral: Vec<SpectralRecord>,
    pub summary: RunSummary,
}

impl RunReport {
    pub fn write_steps_jsonl(&self, out: &mut impl Write) -> std::io::Result<()> {
        for s in &self.steps {
            writeln!(out, "{}", serde_json::to_string(s).map_err(std::io::Error::other)?)?;
        }
        Ok(())
    }
}

fn sample(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Probabilities for one step after the full filter pipeline.
pub struct Decision {
    pub probs: Vec<f64>,
    pub temperature: Option<f64>,
    pub clamp: bool,
}

pub fn decide(logits: &[f64], config: &DecodeConfig) -> Result<Decision, DecodeError> {
    let base = softmax(logits, 1.0);
    let kept = filter_top_k_p(&base, config.top_k, config.top_p)?;
    let cand = support(&kept);
    let scaled = |t: f64| {
        let z: Vec<f64> = cand.iter().map(|&i| logits[i]).collect();
        let q = softmax(&z, t);
        let mut out = vec![0.0; logits.len()];
        for (&i, p) in cand.iter().zip(q) {
            out[i] = p;
        }
        out
    };
    Ok(match config.control {
        Control::Temperature(t) => Decision {
            probs: scaled(t),
            temperature: Some(t),
            clamp: false,
        },
        Control::Typical(tau) => Decision {
            probs: typical_filter(&kept, tau)?,
            temperature: None,
            clamp: false,
        },
        Control::Entropy(h) => {
            let z: Vec<f64> = cand.iter().map(|&i| logits[i]).collect();
            match solve_entropy_temperature(&z, h, config.entropy_tol) {
                Ok(t) => Decision {
                    probs: scaled(t),
                    temperature: Some(t),
                    clamp: false,
                },
                Err(DecodeError::EntropyClamp { temperature, .. })
                | Err(DecodeError::EntropyUnreachable { temperature, .. }) => Decision {
                    probs: scaled(temperature),
                    temperature: Some(temperature),
                    clamp: true,
                },
                Err(DecodeError::TooFewCandidates(_)) => Decision {
                    probs: kept,
                    temperature: None,
                    clamp: true,
                },
                Err(e) => return Err(e),
            }
        }
    })
}

/// One autoregressive run: source, filters, sampling, dimension monitor and
/// optional regulation of the source's value cache.
pub fn simulate(source: &SourceConfig, config: &DecodeConfig, seed: u64) -> Result<RunReport, DecodeError> {
    run(source, config, seed, None)
}

/// Monitored log-probability states of one run, in step order.
pub fn simulate_states(source: &SourceConfig, config: &DecodeConfig, seed: u64) -> Result<Vec<Vec<f64>>, DecodeError> {
    let mut states = Vec::with_capacity(config.horizon);
    run(source, config, seed, Some(&mut states))?;
    Ok(states)
}

fn run(
    source: &SourceConfig,
    config: &DecodeConfig,
    seed: u64,
    mut states: Option<&mut Vec<Vec<f64>>>,
) -> Result<RunReport, DecodeError> {
    config.validate()?;
    let mut src = source.build()?;
    let mut rng_src = seed::derived_rng(seed, "source", 0);
    let mut rng_dec = seed::derived_rng(seed, "decode", 0);
    let mut monitor = Monitor::new(config.monitor.clone(), seed::derive(seed, "monitor", 0))?;
    let value_dim = src.value_dim();
    let mut regulator = if value_dim > 0 {
        let mut rc = config.regulator.clone();
        rc.seed = seed::derive(seed, "rmr", 0);
        match config.regulation {
            RegulationMode::Off => rc.apply = false,
            RegulationMode::Rmr => rc.target = Target::Persistent,
            RegulationMode::Random => rc.target = Target::Random,
        }
        Some(Regulator::new(value_dim, rc, 0, 0).map_err(|e| DecodeError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };

    let mut history: Vec<usize> = Vec::new();
    for (tok, row) in src.prefill(&mut rng_src) {
        history.push(tok);
        if let (Some(reg), Some(v)) = (regulator.as_mut(), row) {
            reg.prefill(&v).map_err(|e| DecodeError::InvalidConfig(e.to_string()))?;
        }
    }
    let prompt_len = history.len();

    let mut steps = Vec::with_capacity(config.horizon);
    let mut spectral = Vec::new();
    let mut loops: Vec<LoopRecord> = Vec::new();
    let mut distinct = Distinct2::default();
    let mut looping_steps = 0usize;
    let mut clamps = 0usize;
    let mut applications = 0usize;
    let mut d_sum = 0.0;
    let mut d_n = 0usize;
    let empty: Vec<Vec<f64>> = Vec::new();
    for t in 0..config.horizon {
        let cache = regulator.as_ref().map(|r| r.cache()).unwrap_or(&empty);
        let logits = src.logits(t, &history, cache);
        if logits.len() != src.vocab_size() || logits.iter().any(|z| !z.is_finite()) {
            return Err(DecodeError::InvalidDistribution);
        }
        let logp = log_softmax(&logits);
        let state: Vec<f32> = logp.iter().map(|&x| x as f32).collect();
        if let Some(out) = states.as_deref_mut() {
            out.push(state.iter().map(|&x| x as f64).collect());
        }
        let rec = monitor.push(&state)?;
        let tau = src.temperature();
        let scaled: Vec<f64> = logits.iter().map(|z| z / tau).collect();
        let decision = decide(&scaled, config)?;
        let token = sample(&decision.probs, &mut rng_dec);
        history.push(token);
        let generated = &history[prompt_len..];
        let lp = detect_exact_loop(generated, config.max_period, config.min_repeats);
        if let Some(ev) = lp {
            looping_steps += 1;
            let fresh = loops
                .last()
                .map(|l| l.event.start != ev.start || l.event.period != ev.period)
                .unwrap_or(true);
            if fresh {
                loops.push(LoopRecord { t, event: ev });
            }
        }
        let mut applied = false;
        if let Some(reg) = regulator.as_mut() {
            if let Some(v) = src.emit(token, reg.cache(), &mut rng_src) {
                let r = reg.observe(&v).map_err(|e| DecodeError::InvalidConfig(e.to_string()))?;
                applied = r.applied;
                if applied {
                    applications += 1;
                }
                spectral.push(r);
            }
        }
        clamps += decision.clamp as usize;
        let d = rec.and_then(|r| r.d);
        if let (Some(x), true) = (d, 10 * t >= 9 * config.horizon) {
            d_sum += x;
            d_n += 1;
        }
        steps.push(StepRecord {
            t,
            token,
            entropy: entropy(&decision.probs),
            temperature: decision.temperature,
            candidates: support(&decision.probs).len(),
            clamp: decision.clamp,
            distinct2: distinct.push(token),
            d,
            looping: lp.is_some(),
            applied,
        });
    }
    let d_horizon = monitor.current().d;
    let summary = RunSummary {
        source: source.kind().into(),
        seed,
        pipeline: config.control.pipeline().into(),
        regulation: config.regulation,
        horizon: config.horizon,
        d_horizon,
        mean_d: (d_n > 0).then(|| d_sum / d_n as f64),
        threshold: config.threshold,
        non_collapse: d_horizon.map(|d| d > config.threshold).unwrap_or(false),
        loop_rate: looping_steps as f64 / config.horizon as f64,
        loop_events: loops,
        clamp_events: clamps,
        distinct2: distinct.value(),
        applications,
    };
    Ok(RunReport {
        tokens: history[prompt_len..].to_vec(),
        steps,
        spectral,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub seeds: usize,
    pub non_collapse_rate: f64,
    pub loop_rate: f64,
    pub mean_d: f64,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub source: String,
    pub regulation: RegulationMode,
    pub threshold: f64,
    pub points: Vec<SweepPoint>,
}

/// Runs every `(beta, seed)` pair; seed `i` of the sweep uses `derive(root, "sweep", i)`.
pub fn sweep(
    source: &SourceConfig,
    betas: &[f64],
    seeds: usize,
    config: &DecodeConfig,
    root_seed: u64,
) -> Result<SweepSummary, DecodeError> {
    let mut points = Vec::with_capacity(betas.len());
    for &beta in betas {
        let src = source.with_beta(beta);
        let runs: Vec<RunSummary> = (0..seeds as u64)
            .into_par_iter()
            .map(|i| simulate(&src, config, seed::derive(root_seed, "sweep", i)).map(|r| r.summary))
            .collect::<Result<_, _>>()?;
        let n = runs.len().max(1) as f64;
        points.push(SweepPoint {
            beta,
            seeds,
            non_collapse_rate: runs.iter().filter(|r| r.non_collapse).count() as f64 / n,
            loop_rate: runs.iter().map(|r| r.loop_rate).sum::<f64>() / n,
            mean_d: runs.iter().map(|r| r.mean_d.unwrap_or(0.0)).sum::<f64>() / n,
            runs,
        });
    }
    Ok(SweepSummary {
        source: source.kind().into(),
        regulation: config.regulation,
        threshold: config.threshold,
        points,
    })
}
