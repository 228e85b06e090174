use super::DecodeError;

pub const TOP_K: usize = 50;
pub const TOP_P: f64 = 0.9;
pub const TYPICAL_MASS: f64 = 0.2;
// Slack for cumulative-mass comparisons so that e.g. 45 * 0.02 counts as 0.9.
const MASS_TOL: f64 = 1e-12;

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|&z| ((z - top) / temperature).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + logits.iter().map(|&z| (z - top).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Entropy in nats, ignoring zero entries.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Indices with positive probability.
pub fn support(probs: &[f64]) -> Vec<usize> {
    probs.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, _)| i).collect()
}

/// Indices by decreasing probability, ascending index among ties.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut idx = support(probs);
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

fn renormalized(probs: &[f64], keep: &[usize]) -> Vec<f64> {
    let mass: f64 = keep.iter().map(|&i| probs[i]).sum();
    let mut out = vec![0.0; probs.len()];
    for &i in keep {
        out[i] = probs[i] / mass;
    }
    out
}

/// Keeps the `k` most probable symbols, renormalises, then keeps the shortest
/// descending prefix with mass at least `p` and renormalises again.
pub fn filter_top_k_p(probs: &[f64], k: usize, p: f64) -> Result<Vec<f64>, DecodeError> {
    if probs.is_empty() {
        return Err(DecodeError::EmptyAlphabet);
    }
    if k == 0 || !(p > 0.0 && p <= 1.0) {
        return Err(DecodeError::InvalidFilter { k, p });
    }
    let order = ranked(probs);
    if order.is_empty() {
        return Err(DecodeError::InvalidDistribution);
    }
    let top: Vec<usize> = order.into_iter().take(k).collect();
    let stage = renormalized(probs, &top);
    let mut acc = 0.0;
    let mut n = top.len();
    for (j, &i) in top.iter().enumerate() {
        acc += stage[i];
        if acc >= p - MASS_TOL {
            n = j + 1;
            break;
        }
    }
    Ok(renormalized(&stage, &top[..n]))
}

/// Locally typical filter: symbols ordered by `|-ln p - H|`, shortest prefix with mass `>= tau`.
pub fn typical_filter(probs: &[f64], tau: f64) -> Result<Vec<f64>, DecodeError> {
    if probs.is_empty() {
        return Err(DecodeError::EmptyAlphabet);
    }
    let h = entropy(probs);
    let mut idx = support(probs);
    if idx.is_empty() {
        return Err(DecodeError::InvalidDistribution);
    }
    let score = |i: usize| (-probs[i].ln() - h).abs();
    idx.sort_by(|&a, &b| score(a).total_cmp(&score(b)).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut n = idx.len();
    for (j, &i) in idx.iter().enumerate() {
        acc += probs[i];
        if acc >= tau - MASS_TOL {
            n = j + 1;
            break;
        }
    }
    Ok(renormalized(probs, &idx[..n]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_hundred() {
        let p = vec![0.01; 100];
        let out = filter_top_k_p(&p, 50, 0.9).unwrap();
        let kept = support(&out);
        assert_eq!(kept, (0..45).collect::<Vec<_>>());
        for i in kept {
            assert!((out[i] - 1.0 / 45.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_symbol_and_boundary() {
        let out = filter_top_k_p(&[0.02, 0.95, 0.03], 50, 0.9).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
        let out = filter_top_k_p(&[0.5, 0.3, 0.2], 50, 0.9).unwrap();
        assert_eq!(support(&out).len(), 3);
        assert!(filter_top_k_p(&[], 50, 0.9).is_err());
        assert!(filter_top_k_p(&[1.0], 0, 0.9).is_err());
        assert!(filter_top_k_p(&[1.0], 1, 0.0).is_err());
    }

    #[test]
    fn typical_examples() {
        let out = typical_filter(&[0.9, 0.05, 0.05], 0.2).unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0]);
        let out = typical_filter(&[0.5, 0.5], 1.0).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
        let out = typical_filter(&[0.1; 10], 0.2).unwrap();
        assert_eq!(support(&out), vec![0, 1]);
    }

    #[test]
    fn log_softmax_normalises() {
        let l = log_softmax(&[1.0, 2.0, 3.0]);
        let s: f64 = l.iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }
}
