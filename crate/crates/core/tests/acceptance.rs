//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use geodyn::corrdim::{
    calibrate_scale_range, dimension_of, log_spaced_scales, distance, monitor_rows, CorrelationLedger,
    MonitorConfig,
};
use geodyn::decoding::{
    decide, entropy, simulate, sweep, Control, DecodeConfig, IfsCoupledConfig, RegulationMode, SourceConfig,
};
use geodyn::ifs::{self, IfsConfig, SelfSimilarIfs, BURN_IN, CONFINED_SHARE};
use geodyn::rmr::{
    dense_generalized_eig, default_ridge, power_subspace, principal_angle_deg, random_orthonormal,
    rayleigh_eigenvalues, PowerOptions, ValueWindow,
};
use geodyn::seed;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

mod common;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, budget_s: u64) -> bool {
    elapsed <= Duration::from_secs(budget_s)
}

fn subsample(points: &[[f64; 2]], n: usize) -> Vec<Vec<f64>> {
    let stride = (points.len() / n).max(1);
    points.iter().step_by(stride).take(n).map(|p| p.to_vec()).collect()
}

fn ifs_phase_transition() -> Outcome {
    let start = Instant::now();
    let mut good = 0;
    let mut worst = String::new();
    for s in 0..10u64 {
        let hot = ifs::run(&IfsConfig::reference(3, 2.0), 50_000, s, 0.0).unwrap();
        let cold = ifs::run(&IfsConfig::reference(3, 0.5), 50_000, s, 0.0).unwrap();
        let reg = ifs::run(&IfsConfig::reference(3, 0.5), 50_000, s, 1e-4).unwrap();
        let ph = subsample(hot.points_after(BURN_IN), 5_000);
        let pc = subsample(cold.points_after(BURN_IN), 5_000);
        let (e0, e1) = calibrate_scale_range(&ph).unwrap();
        let scales = log_spaced_scales(e0, e1, 16).unwrap();
        let dh = dimension_of(&ph, &scales).map(|e| e.d).unwrap_or(0.0);
        let dc = dimension_of(&pc, &scales).map(|e| e.d).unwrap_or(0.0);
        let (l, r) = hot.half_plane_fractions(BURN_IN);
        let ok = l.min(r) >= 0.2
            && dh >= 1.7
            && cold.is_confined(BURN_IN, CONFINED_SHARE)
            && dh - dc >= 0.5
            && !reg.is_confined(BURN_IN, CONFINED_SHARE);
        if ok {
            good += 1;
        } else if worst.is_empty() {
            worst = format!(
                "seed {s}: beta=2 split {:.2}/{:.2} d={dh:.3}; beta=0.5 confined={} d={dc:.3}; eta=1e-4 confined={}",
                l,
                r,
                cold.is_confined(BURN_IN, CONFINED_SHARE),
                reg.is_confined(BURN_IN, CONFINED_SHARE)
            );
        }
    }
    let el = start.elapsed();
    outcome(
        good >= 9 && within(el, 60),
        format!("{good}/10 seeds in {:.1}s; first miss: {worst}", el.as_secs_f64()),
    )
}

fn ledger_exactness() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0;
    for k in 0..5u64 {
        let mut rng = seed::derived_rng(99, "ledger", k);
        let scales = log_spaced_scales(0.05, 1.5, 8).unwrap();
        let mut ledger = CorrelationLedger::new(scales.clone()).unwrap();
        let mut pts: Vec<Vec<f64>> = Vec::new();
        for _ in 0..500 {
            let p: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            ledger.push(&p).unwrap();
            pts.push(p);
            // Full O(t^2) recount of the prefix, all scales from one distance pass.
            let mut brute = vec![0u64; scales.len()];
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let dist = distance(&pts[i], &pts[j]);
                    for (b, &e) in brute.iter_mut().zip(&scales) {
                        *b += (dist < e) as u64;
                    }
                }
            }
            mismatches += ledger.counts().iter().zip(&brute).filter(|(a, b)| a != b).count();
        }
    }
    let el = start.elapsed();
    outcome(
        mismatches == 0 && within(el, 10),
        format!("{mismatches} count mismatches over 5x500 prefixes x 8 scales in {:.2}s", el.as_secs_f64()),
    )
}

fn known_dimensions() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(1);
    let circle: Vec<Vec<f64>> = (0..5_000)
        .map(|_| {
            let a = rng.random::<f64>() * std::f64::consts::TAU;
            vec![a.cos(), a.sin()]
        })
        .collect();
    let square: Vec<Vec<f64>> = (0..5_000).map(|_| vec![rng.random(), rng.random()]).collect();
    let gasket = SelfSimilarIfs::sierpinski().sample(5_000, 100, &mut rng).unwrap();
    let scales = log_spaced_scales(0.02, 0.2, 16).unwrap();
    let cases = [
        ("circle", &circle, 0.85, 1.15),
        ("square", &square, 1.8, 2.2),
        ("sierpinski", &gasket, 1.43, 1.74),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, pts, lo, hi) in cases {
        let d = dimension_of(pts, &scales).unwrap().d;
        pass &= (lo..=hi).contains(&d);
        parts.push(format!("{name} {d:.3}"));
    }
    let el = start.elapsed();
    outcome(pass && within(el, 30), format!("{} in {:.2}s", parts.join(", "), el.as_secs_f64()))
}

fn degenerate_loop() -> Outcome {
    let cfg = MonitorConfig {
        bins: None,
        eps0: 0.02,
        eps1: 0.2,
        scales: 16,
        stride: 1,
        reservoir: None,
    };
    let constant: Vec<Vec<f32>> = (0..300).map(|_| vec![0.3, -0.2, 1.0]).collect();
    let periodic: Vec<Vec<f32>> = (0..300)
        .map(|t| {
            let a = std::f32::consts::TAU * (t % 7) as f32 / 7.0;
            vec![a.cos(), a.sin(), 0.0]
        })
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, rows) in [("constant", &constant), ("period-7", &periodic)] {
        let recs = monitor_rows(rows.iter().map(|r| r.as_slice()), &cfg, 0).unwrap();
        let ds: Vec<f64> = recs.iter().filter_map(|r| r.d).collect();
        let exact = !ds.is_empty() && ds.iter().all(|&d| d == 0.0);
        pass &= exact;
        parts.push(format!("{name}: {} fits, all zero = {exact}", ds.len()));
    }
    outcome(pass, parts.join("; "))
}

fn eigensolver_agreement() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::derived_rng(5, "eig", 0);
    let mut worst_val = 0.0f64;
    let mut worst_angle = 0.0f64;
    for _ in 0..20 {
        let d = rng.random_range(8..=64);
        let c = rng.random_range(1..=8.min(d / 4));
        let (window, _) = common::whitened_instance(&mut rng, d, c);
        let sigma = window.sigma();
        let dense = dense_generalized_eig(&window.sigma_delta(), &sigma, default_ridge(&sigma)).unwrap();
        let res = power_subspace(&window, c, &PowerOptions::default(), None, &mut rng).unwrap();
        let est = rayleigh_eigenvalues(&res.basis, &window);
        for r in 0..c {
            worst_val = worst_val.max((est[r].lambda - dense.values[r]).abs());
        }
        let reference = dense.vectors.columns(0, c).into_owned();
        worst_angle = worst_angle.max(principal_angle_deg(&res.basis, &reference));
    }
    let el = start.elapsed();
    outcome(
        worst_val < 1e-3 && worst_angle < 5.0 && within(el, 20),
        format!(
            "max eigenvalue error {worst_val:.2e}, max principal angle {worst_angle:.3} deg over 20 instances in {:.2}s",
            el.as_secs_f64()
        ),
    )
}

fn planted_persistence() -> Outcome {
    let d = 16;
    let mut rng = seed::derived_rng(3, "planted", 0);
    let u = random_orthonormal(d, 1, &mut rng).column(0).into_owned();
    let rows = common::ar1_along(&u, 0.95, 4_096, &mut rng);
    let refs: Vec<&DVector<f64>> = rows.iter().collect();
    let window = ValueWindow::from_rows(&refs, 1.0, 1e-6).unwrap();
    let res = power_subspace(&window, 4, &PowerOptions::default(), None, &mut rng).unwrap();
    let lam = rayleigh_eigenvalues(&res.basis, &window)[0].lambda;
    let align = res.basis.column(0).dot(&u).abs();
    // Orthonormal complement of u, probed one direction at a time.
    let mut full = DMatrix::<f64>::identity(d, d);
    full.set_column(0, &u);
    let comp = geodyn::rmr::orthonormalize(&full, 1e-10).columns(1, d - 1).into_owned();
    let noise_max = rayleigh_eigenvalues(&comp, &window)
        .iter()
        .map(|r| r.lambda.abs())
        .fold(0.0, f64::max);
    outcome(
        align > 0.99 && (lam - 0.95).abs() <= 0.02 && noise_max < 0.1,
        format!("|<u_hat,u>| = {align:.5}, lambda_hat = {lam:.4}, max white-noise |lambda| = {noise_max:.4}"),
    )
}

fn regulation_efficacy() -> Outcome {
    let start = Instant::now();
    let source = SourceConfig::IfsCoupled(IfsCoupledConfig::default());
    let rate = |mode: RegulationMode| {
        let cfg = DecodeConfig {
            regulation: mode,
            ..DecodeConfig::default()
        };
        sweep(&source, &[0.5], 50, &cfg, 11).unwrap().points[0].non_collapse_rate
    };
    let off = rate(RegulationMode::Off);
    let rmr = rate(RegulationMode::Rmr);
    let random = rate(RegulationMode::Random);
    let (plain, regulated) = common::closed_loop_fast_lambda(16, 3_000, 21);
    let shift = (plain - regulated).abs();
    outcome(
        rmr > off && rmr > random && shift < 0.05,
        format!(
            "non-collapse over 50 seeds at beta 0.5: off {off:.2}, rmr {rmr:.2}, random {random:.2}; \
             rho=0.6 lambda_hat {plain:.4} -> {regulated:.4} (shift {shift:.4}); {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn entropy_lock() -> Outcome {
    let mut rng = seed::derived_rng(8, "entropy", 0);
    let mut worst = 0.0f64;
    let mut clamps = 0;
    for _ in 0..25 {
        let logits: Vec<f64> = (0..50).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        for target in [0.8, 1.0, 1.5, 2.0] {
            let cfg = DecodeConfig {
                control: Control::Entropy(target),
                top_k: 50,
                top_p: 1.0,
                ..DecodeConfig::default()
            };
            let dec = decide(&logits, &cfg).unwrap();
            clamps += dec.clamp as usize;
            worst = worst.max((entropy(&dec.probs) - target).abs());
        }
    }
    outcome(
        worst <= 1e-6 && clamps == 0,
        format!("max |H - target| = {worst:.2e} over 25 sets x 4 targets, {clamps} clamps"),
    )
}

fn block_means(values: &[f64], blocks: usize) -> Vec<f64> {
    let b = values.len() / blocks;
    (0..blocks)
        .map(|i| values[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64)
        .collect()
}

fn spectral_gap_signature() -> Outcome {
    let source = SourceConfig::IfsCoupled(IfsCoupledConfig::default()).with_beta(0.5);
    let mut base = DecodeConfig::default();
    base.regulator.estimate_every = 1;
    let lambda_min = base.regulator.lambda_min;
    let mut rising_falling = 0;
    let mut post_ok = 0;
    let mut post_total = 0;
    let mut sample = String::new();
    let seeds = 4u64;
    for s in 0..seeds {
        let run = simulate(&source, &base, s).unwrap();
        let pairs: Vec<(f64, f64)> = run
            .spectral
            .iter()
            .filter(|r| r.lambdas.len() > 1)
            .map(|r| (r.lambdas[0], r.lambdas[1]))
            .collect();
        let l1 = block_means(&pairs.iter().map(|p| p.0).collect::<Vec<_>>(), 5);
        let l2 = block_means(&pairs.iter().map(|p| p.1).collect::<Vec<_>>(), 5);
        let up = l1.windows(2).all(|w| w[1] >= w[0]);
        let down = l2.windows(2).all(|w| w[1] <= w[0]) && l2[4] < l2[0];
        if up && down {
            rising_falling += 1;
        }
        if s == 0 {
            let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
            sample = format!("seed 0 block means l1 [{}] l2 [{}]", fmt(&l1), fmt(&l2));
        }
        let cfg = DecodeConfig {
            regulation: RegulationMode::Rmr,
            ..base.clone()
        };
        let reg = simulate(&source, &cfg, s).unwrap();
        let sp = &reg.spectral;
        for i in 0..sp.len().saturating_sub(1) {
            if sp[i].applied {
                if let Some(&next) = sp[i + 1].lambdas.first() {
                    post_total += 1;
                    post_ok += (next < lambda_min) as usize;
                }
            }
        }
    }
    outcome(
        rising_falling == seeds as usize && post_total > 0 && post_ok == post_total,
        format!(
            "{rising_falling}/{seeds} runs with rising l1 and falling l2; {post_ok}/{post_total} applications \
             followed by l1 < {lambda_min}; {sample}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("ifs phase transition", ifs_phase_transition),
        ("correlation ledger exactness", ledger_exactness),
        ("known-dimension fixtures", known_dimensions),
        ("degenerate loop", degenerate_loop),
        ("eigensolver agreement", eigensolver_agreement),
        ("planted persistence", planted_persistence),
        ("regulation efficacy", regulation_efficacy),
        ("entropy lock", entropy_lock),
        ("spectral-gap signature", spectral_gap_signature),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        failed += (!o.pass) as usize;
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
