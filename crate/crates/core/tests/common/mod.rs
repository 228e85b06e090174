#![allow(dead_code)]

use geodyn::rmr::{random_orthonormal, rayleigh_eigenvalues, Regulator, RegulatorConfig, ValueWindow, EPS_STAB};
use geodyn::seed::{self, Rng};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(d: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// Unit-variance AR(1) along `u`, isotropic unit noise on the complement.
pub fn ar1_along(u: &DVector<f64>, rho: f64, n: usize, rng: &mut Rng) -> Vec<DVector<f64>> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut s: f64 = StandardNormal.sample(rng);
    (0..n)
        .map(|_| {
            s = rho * s + innov * Distribution::<f64>::sample(&StandardNormal, rng);
            let z = gaussian(u.len(), rng);
            let z = &z - u * u.dot(&z);
            z + u * s
        })
        .collect()
}

pub struct ClosedLoop {
    /// Mean lag-1 estimate along the 0.6 direction over the second half.
    pub fast_lambda: f64,
    /// Leading estimate of the last logged record.
    pub final_top: f64,
}

/// Stream whose next row is driven by the regulator's last cached row:
/// `x' = 0.97 P1 c + 0.6 P2 c + noise`, with `P1`, `P2` projections on two
/// random orthonormal directions.
pub fn closed_loop(d: usize, steps: usize, seed_root: u64, cfg: RegulatorConfig) -> ClosedLoop {
    let mut rng = seed::derived_rng(seed_root, "closed-loop", 0);
    let basis = random_orthonormal(d, 2, &mut rng);
    let (slow, fast) = (basis.column(0).into_owned(), basis.column(1).into_owned());
    let fast_m = DMatrix::from_column_slice(d, 1, fast.as_slice());
    let mut reg = Regulator::new(d, cfg, 0, 0).unwrap();
    let mut noise = seed::derived_rng(seed_root, "closed-loop-noise", 0);
    let mut acc = Vec::new();
    let mut final_top = f64::NAN;
    for t in 0..steps {
        let last = reg
            .cache()
            .last()
            .map(|r| DVector::from_column_slice(r))
            .unwrap_or_else(|| DVector::zeros(d));
        let x = &slow * (0.97 * slow.dot(&last)) + &fast * (0.6 * fast.dot(&last)) + gaussian(d, &mut noise);
        let rec = reg.observe(x.as_slice()).unwrap();
        if let Some(&l) = rec.lambdas.first() {
            final_top = l;
        }
        if t >= steps / 2 && t % 10 == 0 {
            if let Some(w) = reg.stats().window(reg.config().weight_decay, EPS_STAB) {
                acc.push(rayleigh_eigenvalues(&fast_m, &w)[0].lambda);
            }
        }
    }
    ClosedLoop {
        fast_lambda: acc.iter().sum::<f64>() / acc.len() as f64,
        final_top,
    }
}

/// Fast-direction estimate without and with damping on the same noise.
pub fn closed_loop_fast_lambda(d: usize, steps: usize, seed_root: u64) -> (f64, f64) {
    let run = |apply: bool| {
        let cfg = RegulatorConfig {
            apply,
            ..RegulatorConfig::default()
        };
        closed_loop(d, steps, seed_root, cfg).fast_lambda
    };
    (run(false), run(true))
}

// A window with V0^T W V0 = I and sym(V1^T W V0) = Q diag(lambda) Q^T, where
// the top `c` values are separated by at least 0.1.
pub fn whitened_instance(rng: &mut Rng, d: usize, c: usize) -> (ValueWindow, Vec<f64>) {
    let n = 4 * d;
    let mut lambdas: Vec<f64> = Vec::with_capacity(d);
    let mut top = 0.95;
    for _ in 0..c {
        lambdas.push(top);
        top -= 0.1 + 0.05 * rng.random::<f64>();
    }
    while lambdas.len() < d {
        lambdas.push(-0.3 + (top + 0.3) * rng.random::<f64>());
    }
    let q = random_orthonormal(d, d, rng);
    let m = &q * DMatrix::from_diagonal(&DVector::from_vec(lambdas.clone())) * q.transpose();
    let weights = DVector::from_fn(n, |k, _| 0.99f64.powi((n - 1 - k) as i32));
    let raw = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng));
    let mut wraw = raw.clone();
    for (mut row, w) in wraw.row_iter_mut().zip(weights.iter()) {
        row *= *w;
    }
    let g = raw.transpose() * wraw;
    let l = g.cholesky().unwrap().l();
    let v0 = raw * l.try_inverse().unwrap().transpose();
    let v1 = &v0 * &m;
    let window = ValueWindow {
        v0,
        v1,
        weights,
        eps_stab: 0.0,
    };
    (window, lambdas)
}
