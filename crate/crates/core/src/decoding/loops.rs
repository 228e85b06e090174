use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub const MAX_PERIOD: usize = 64;
pub const MIN_REPEATS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopEvent {
    /// First index of the periodic suffix.
    pub start: usize,
    pub period: usize,
    /// Whole periods contained in the suffix.
    pub repeats: usize,
}

/// Reports the smallest period `q <= max_period` for which the sequence ends in
/// at least `min_repeats` consecutive copies of one block of length `q`.
pub fn detect_exact_loop<T: PartialEq>(tokens: &[T], max_period: usize, min_repeats: usize) -> Option<LoopEvent> {
    let n = tokens.len();
    let reps = min_repeats.max(1);
    for q in 1..=max_period.min(n / reps) {
        let need = reps * q;
        let periodic = (n - need + q..n).all(|i| tokens[i] == tokens[i - q]);
        if !periodic {
            continue;
        }
        let mut start = n - need;
        while start > 0 && tokens[start - 1] == tokens[start - 1 + q] {
            start -= 1;
        }
        return Some(LoopEvent {
            start,
            period: q,
            repeats: (n - start) / q,
        });
    }
    None
}

/// Checks a reported event against the sequence by slice comparison.
pub fn verify_loop<T: PartialEq>(tokens: &[T], event: &LoopEvent) -> bool {
    let q = event.period;
    let end = event.start + event.repeats * q;
    if q == 0 || event.repeats == 0 || end > tokens.len() {
        return false;
    }
    let block = &tokens[event.start..event.start + q];
    tokens[event.start..end].chunks(q).all(|c| c == block)
}

/// Distinct n-grams over total n-grams; zero when the sequence is shorter than `n`.
pub fn distinct_n<T: std::hash::Hash + Eq>(tokens: &[T], n: usize) -> f64 {
    if n == 0 || tokens.len() < n {
        return 0.0;
    }
    let total = tokens.len() - n + 1;
    let set: HashSet<&[T]> = tokens.windows(n).collect();
    set.len() as f64 / total as f64
}

/// Incremental Distinct-2 over a growing sequence.
#[derive(Debug, Clone, Default)]
pub struct Distinct2 {
    seen: HashSet<(usize, usize)>,
    last: Option<usize>,
    total: usize,
}

impl Distinct2 {
    pub fn push(&mut self, token: usize) -> f64 {
        if let Some(prev) = self.last {
            self.seen.insert((prev, token));
            self.total += 1;
        }
        self.last = Some(token);
        self.value()
    }

    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.seen.len() as f64 / self.total as f64
        }
    }
}
