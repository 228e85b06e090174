use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::RmrError;

pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_WINDOW: usize = 256;

/// `(A + A^T) / 2`.
pub fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Streaming second moments of one value stream.
///
/// Each update moves the mean first and centres the row against the new mean;
/// the lag-1 cross-moment pairs that row with the previous centred row.
#[derive(Debug, Clone)]
pub struct SpectralState {
    dim: usize,
    decay: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    cross: DMatrix<f64>,
    prev: Option<DVector<f64>>,
    window: VecDeque<DVector<f64>>,
    window_len: usize,
    steps: u64,
}

impl SpectralState {
    pub fn new(dim: usize) -> Self {
        Self::with_params(dim, DEFAULT_DECAY, DEFAULT_WINDOW)
    }

    pub fn with_params(dim: usize, decay: f64, window_len: usize) -> Self {
        SpectralState {
            dim,
            decay,
            mean: DVector::zeros(dim),
            cov: DMatrix::zeros(dim, dim),
            cross: DMatrix::zeros(dim, dim),
            prev: None,
            window: VecDeque::with_capacity(window_len + 1),
            window_len: window_len.max(2),
            steps: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn cross_moment(&self) -> &DMatrix<f64> {
        &self.cross
    }

    pub fn update(&mut self, v: &[f64]) -> Result<(), RmrError> {
        if v.len() != self.dim {
            return Err(RmrError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let v = DVector::from_column_slice(v);
        let g = self.decay;
        if self.steps == 0 {
            self.mean.copy_from(&v);
        } else {
            self.mean = &self.mean * g + &v * (1.0 - g);
        }
        let c = &v - &self.mean;
        self.cov = &self.cov * g + (&c * c.transpose()) * (1.0 - g);
        if let Some(p) = &self.prev {
            let outer = &c * p.transpose();
            self.cross = &self.cross * g + sym(&outer) * (1.0 - g);
        }
        self.prev = Some(c.clone());
        self.window.push_back(c);
        if self.window.len() > self.window_len {
            self.window.pop_front();
        }
        self.steps += 1;
        Ok(())
    }

    /// Centred recent rows, oldest first.
    pub fn recent(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.window.iter()
    }

    pub fn window(&self, weight_decay: f64, eps_stab: f64) -> Option<ValueWindow> {
        let rows: Vec<&DVector<f64>> = self.window.iter().collect();
        ValueWindow::from_rows(&rows, weight_decay, eps_stab)
    }
}

/// Consecutive row pairs of a centred window with per-pair weights.
#[derive(Debug, Clone)]
pub struct ValueWindow {
    /// Rows `v_1 .. v_{T-1}`.
    pub v0: DMatrix<f64>,
    /// Rows `v_2 .. v_T`.
    pub v1: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub eps_stab: f64,
}

impl ValueWindow {
    /// Pair `k` (0-based, oldest first) gets weight `decay^(pairs - 1 - k)`.
    pub fn from_rows(rows: &[&DVector<f64>], decay: f64, eps_stab: f64) -> Option<Self> {
        if rows.len() < 2 {
            return None;
        }
        let d = rows[0].len();
        let n = rows.len() - 1;
        let v0 = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let v1 = DMatrix::from_fn(n, d, |i, j| rows[i + 1][j]);
        let weights = DVector::from_fn(n, |k, _| decay.powi((n - 1 - k) as i32));
        Some(ValueWindow {
            v0,
            v1,
            weights,
            eps_stab,
        })
    }

    pub fn from_matrix(rows: &DMatrix<f64>, decay: f64, eps_stab: f64) -> Option<Self> {
        let cols: Vec<DVector<f64>> = rows.row_iter().map(|r| r.transpose()).collect();
        let refs: Vec<&DVector<f64>> = cols.iter().collect();
        Self::from_rows(&refs, decay, eps_stab)
    }

    pub fn pairs(&self) -> usize {
        self.v0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.v0.ncols()
    }

    /// `V0^T W V0`.
    pub fn sigma(&self) -> DMatrix<f64> {
        let wv0 = self.weighted(&self.v0);
        self.v0.transpose() * wv0
    }

    /// `sym(V1^T W V0)`.
    pub fn sigma_delta(&self) -> DMatrix<f64> {
        let wv0 = self.weighted(&self.v0);
        sym(&(self.v1.transpose() * wv0))
    }

    pub(crate) fn weighted(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (mut row, w) in out.row_iter_mut().zip(self.weights.iter()) {
            row *= *w;
        }
        out
    }
}
