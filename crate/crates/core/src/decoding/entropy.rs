use super::filters::{entropy, softmax};
use super::DecodeError;

pub const T_MAX: f64 = 1e4;
pub const T_MIN: f64 = 1e-4;
pub const MAX_DEPTH: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Temperature whose softmax over `logits` has entropy `target` (nats).
///
/// Entropy increases with temperature on a fixed support, so the solver
/// bisects on `ln T` in `[ln T_MIN, ln T_MAX]`. Targets at or above what
/// `T_MAX` reaches return [`DecodeError::EntropyClamp`] carrying `T_MAX`.
pub fn solve_entropy_temperature(logits: &[f64], target: f64, tol: f64) -> Result<f64, DecodeError> {
    let n = logits.len();
    if n < 2 {
        return Err(DecodeError::TooFewCandidates(n));
    }
    if !(target > 0.0) || !target.is_finite() {
        return Err(DecodeError::InvalidEntropyTarget(target));
    }
    let h = |t: f64| entropy(&softmax(logits, t));
    let max_h = (n as f64).ln();
    if logits.iter().all(|&z| z == logits[0]) {
        if (target - max_h).abs() <= tol {
            return Ok(1.0);
        }
        if target > max_h {
            return Err(DecodeError::EntropyClamp {
                temperature: T_MAX,
                achieved: max_h,
            });
        }
        return Err(DecodeError::EntropyUnreachable {
            temperature: T_MIN,
            achieved: max_h,
        });
    }
    let h_hi = h(T_MAX);
    if target >= max_h || target > h_hi {
        return Err(DecodeError::EntropyClamp {
            temperature: T_MAX,
            achieved: h_hi,
        });
    }
    let h_lo = h(T_MIN);
    if target < h_lo {
        return Err(DecodeError::EntropyUnreachable {
            temperature: T_MIN,
            achieved: h_lo,
        });
    }
    let (mut lo, mut hi) = (T_MIN.ln(), T_MAX.ln());
    let mut best = (f64::INFINITY, 1.0);
    for _ in 0..MAX_DEPTH {
        let mid = 0.5 * (lo + hi);
        let t = mid.exp();
        let e = h(t);
        let err = (e - target).abs();
        if err < best.0 {
            best = (err, t);
        }
        if err <= tol * 1e-3 {
            break;
        }
        if e < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best.1)
}
