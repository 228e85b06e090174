use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::stats::{sym, ValueWindow};
use super::RmrError;
use crate::seed::Rng;

pub const EPS_STAB: f64 = 1e-6;
pub const DEFAULT_ITERATIONS: usize = 20;
pub const CONVERGENCE_DEG: f64 = 0.5;
pub const MAX_DIRECTIONS: usize = 8;

/// Eigenpairs in descending eigenvalue order; columns are `Sigma`-orthonormal.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// `1e-6 * trace(Sigma) / D`.
pub fn default_ridge(sigma: &DMatrix<f64>) -> f64 {
    let d = sigma.nrows().max(1) as f64;
    1e-6 * sigma.trace() / d
}

/// Solves `Sigma_delta u = lambda (Sigma + ridge I) u` by Cholesky reduction.
pub fn dense_generalized_eig(
    sigma_delta: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    ridge: f64,
) -> Result<GeneralizedEigen, RmrError> {
    let d = sigma.nrows();
    if sigma.ncols() != d || sigma_delta.shape() != (d, d) {
        return Err(RmrError::DimensionMismatch {
            expected: d,
            got: sigma_delta.nrows(),
        });
    }
    if !(ridge >= 0.0) {
        return Err(RmrError::InvalidParameter("ridge must be nonnegative"));
    }
    let regular = sigma + DMatrix::identity(d, d) * ridge;
    let chol = Cholesky::new(regular).ok_or(RmrError::Conditioning)?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or(RmrError::Conditioning)?;
    let m = sym(&(&linv * sigma_delta * linv.transpose()));
    if m.iter().any(|x| !x.is_finite()) {
        return Err(RmrError::Conditioning);
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let back = linv.transpose();
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(d, d, |r, c| (&back * eig.eigenvectors.column(order[c]))[r]);
    Ok(GeneralizedEigen { values, vectors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub iterations: usize,
    pub tol_deg: f64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            iterations: DEFAULT_ITERATIONS,
            tol_deg: CONVERGENCE_DEG,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowerResult {
    /// `D x c`, orthonormal columns ordered by decreasing Ritz value.
    pub basis: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warning: Option<String>,
}

/// Largest principal angle between two column spaces, in degrees.
pub fn principal_angle_deg(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 || b.ncols() == 0 {
        return 0.0;
    }
    let qa = orthonormalize(a, 0.0);
    let qb = orthonormalize(b, 0.0);
    let s = (qa.transpose() * qb).singular_values();
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    smin.acos().to_degrees()
}

/// Modified Gram-Schmidt, applied twice; columns whose residual norm falls
/// below `drop_tol` times their original norm are discarded.
pub fn orthonormalize(m: &DMatrix<f64>, drop_tol: f64) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let mut v = m.column(j).into_owned();
        let n0 = v.norm();
        if n0 == 0.0 || !n0.is_finite() {
            continue;
        }
        for _ in 0..2 {
            for q in &cols {
                let p = q.dot(&v);
                v.axpy(-p, q, 1.0);
            }
        }
        let n = v.norm();
        if n > drop_tol * n0 && n > 0.0 {
            cols.push(v / n);
        }
    }
    if cols.is_empty() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    DMatrix::from_columns(&cols)
}

pub fn random_orthonormal(d: usize, c: usize, rng: &mut Rng) -> DMatrix<f64> {
    loop {
        let g = DMatrix::from_fn(d, c, |_, _| StandardNormal.sample(rng));
        let q = orthonormalize(&g, 1e-8);
        if q.ncols() == c {
            return q;
        }
    }
}

// Rayleigh-Ritz on span(S): the symmetric pencil (sym(P1^T W P0), P0^T W P0).
fn ritz(window: &ValueWindow, s: &DMatrix<f64>) -> Option<(DMatrix<f64>, Vec<f64>)> {
    let p0 = &window.v0 * s;
    let p1 = &window.v1 * s;
    let wp0 = window.weighted(&p0);
    let a = sym(&(p1.transpose() * &wp0));
    let b = sym(&(p0.transpose() * &wp0));
    let ridge = 1e-12 * b.trace().max(f64::MIN_POSITIVE);
    let GeneralizedEigen { values, vectors } = dense_generalized_eig(&a, &b, ridge).ok()?;
    Some((s * vectors, values))
}

/// Block iteration for the leading `c` directions of the window pencil.
///
/// Every product with the data goes through `P0 = V0 S` and `P1 = V1 S`. Each
/// step runs Rayleigh-Ritz on `[U, R, U - U_prev]`, where `R` is the block
/// residual of the pencil at `U`, then re-orthonormalises the leading Ritz vectors.
pub fn power_subspace(
    window: &ValueWindow,
    c: usize,
    options: &PowerOptions,
    start: Option<&DMatrix<f64>>,
    rng: &mut Rng,
) -> Result<PowerResult, RmrError> {
    let d = window.dim();
    if c == 0 {
        return Ok(PowerResult {
            basis: DMatrix::zeros(d, 0),
            iterations: 0,
            converged: true,
            warning: None,
        });
    }
    if c > MAX_DIRECTIONS || c > d {
        return Err(RmrError::InvalidParameter("c must not exceed 8 or the state dimension"));
    }
    if window.pairs() + 1 < 2 * c {
        return Err(RmrError::WindowTooShort {
            rows: window.pairs() + 1,
            needed: 2 * c,
        });
    }
    let mut u = match start {
        Some(s) if s.shape() == (d, c) => {
            let q = orthonormalize(s, 1e-8);
            if q.ncols() == c {
                q
            } else {
                random_orthonormal(d, c, rng)
            }
        }
        _ => random_orthonormal(d, c, rng),
    };
    let mut prev_dir: Option<DMatrix<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..options.iterations {
        iterations += 1;
        let p0 = &window.v0 * &u;
        let p1 = &window.v1 * &u;
        let wp0 = window.weighted(&p0);
        let wp1 = window.weighted(&p1);
        let sdu = (window.v1.transpose() * &wp0 + window.v0.transpose() * &wp1) * 0.5;
        let su = window.v0.transpose() * &wp0;
        let mut resid = sdu.clone();
        for r in 0..c {
            let num = u.column(r).dot(&sdu.column(r));
            let den = u.column(r).dot(&su.column(r)) + window.eps_stab;
            let lam = num / den;
            let col = resid.column(r) - su.column(r) * lam;
            resid.set_column(r, &col);
        }
        let mut blocks = vec![u.clone(), resid];
        if let Some(p) = &prev_dir {
            blocks.push(p.clone());
        }
        let stacked = DMatrix::from_columns(
            &blocks
                .iter()
                .flat_map(|b| b.column_iter().map(|col| col.into_owned()))
                .collect::<Vec<_>>(),
        );
        let search = orthonormalize(&stacked, 1e-10);
        let Some((x, _)) = ritz(window, &search) else {
            break;
        };
        if x.ncols() < c {
            break;
        }
        let lead = x.columns(0, c).into_owned();
        let next = orthonormalize(&lead, 1e-12);
        if next.ncols() < c {
            break;
        }
        let step = principal_angle_deg(&u, &next);
        prev_dir = Some(&next - &u * (u.transpose() * &next));
        u = next;
        if step < options.tol_deg {
            converged = true;
            break;
        }
    }
    // Order by Ritz value of the final basis and fix column signs.
    if let Some((x, _)) = ritz(window, &u) {
        let q = orthonormalize(&x.columns(0, c.min(x.ncols())).into_owned(), 1e-12);
        if q.ncols() == c {
            u = q;
        }
    }
    for r in 0..c {
        let col = u.column(r);
        let k = col.iamax();
        if col[k] < 0.0 {
            let flipped = -col.into_owned();
            u.set_column(r, &flipped);
        }
    }
    let p0 = &window.v0 * &u;
    let warning = p0
        .iter()
        .any(|x| x.abs() < window.eps_stab)
        .then(|| format!("projection entry below {:e}; estimates may be ill-conditioned", window.eps_stab));
    Ok(PowerResult {
        basis: u,
        iterations,
        converged,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighValue {
    pub lambda: f64,
    pub degenerate: bool,
}

/// `sum_t w_t P1[t,r] P0[t,r] / (sum_t w_t P0[t,r]^2 + eps)` per column.
pub fn rayleigh_eigenvalues(u: &DMatrix<f64>, window: &ValueWindow) -> Vec<RayleighValue> {
    let p0 = &window.v0 * u;
    let p1 = &window.v1 * u;
    (0..u.ncols())
        .map(|r| {
            let mut num = 0.0;
            let mut den = 0.0;
            for t in 0..p0.nrows() {
                let w = window.weights[t];
                num += w * p1[(t, r)] * p0[(t, r)];
                den += w * p0[(t, r)] * p0[(t, r)];
            }
            if den < window.eps_stab {
                RayleighValue {
                    lambda: 0.0,
                    degenerate: true,
                }
            } else {
                RayleighValue {
                    lambda: num / (den + window.eps_stab),
                    degenerate: false,
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pencil() {
        let s = DMatrix::identity(3, 3);
        let sd = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.9, 0.5]));
        let e = dense_generalized_eig(&sd, &s, 0.0).unwrap();
        assert!((e.values[0] - 0.9).abs() < 1e-12);
        assert!((e.values[1] - 0.5).abs() < 1e-12);
        assert!((e.values[2] - 0.1).abs() < 1e-12);
        assert!((e.vectors[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((e.vectors[(2, 1)].abs() - 1.0).abs() < 1e-12);
        let z = dense_generalized_eig(&DMatrix::zeros(3, 3), &s, 0.0).unwrap();
        assert!(z.values.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn singular_sigma_is_a_conditioning_error() {
        let s = DMatrix::zeros(2, 2);
        let sd = DMatrix::identity(2, 2);
        assert!(matches!(dense_generalized_eig(&sd, &s, 0.0), Err(RmrError::Conditioning)));
        assert!(dense_generalized_eig(&sd, &s, 1e-3).is_ok());
    }

    #[test]
    fn orthonormalize_drops_dependent_columns() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let q = orthonormalize(&m, 1e-10);
        assert_eq!(q.ncols(), 2);
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn angle_between_identical_spans_is_zero() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 1, &[-2.0, -2.0, 0.0]);
        assert!(principal_angle_deg(&a, &b) < 1e-5);
        let c = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
        assert!((principal_angle_deg(&a, &c) - 90.0).abs() < 1e-9);
    }
}
