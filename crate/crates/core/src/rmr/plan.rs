use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::RmrError;

pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Indices with `lambda > lambda_min`.
pub fn select_directions(lambdas: &[f64], lambda_min: f64) -> Vec<usize> {
    lambdas
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > lambda_min)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DampingMode {
    /// Scale only the component along the selected subspace.
    #[default]
    SubspaceOnly,
    /// `(I - eta Gamma) V (I - U U^T)`: shrink whole rows and remove the subspace.
    AsWritten,
}

/// One damping decision for a single `(layer, head)` cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulationPlan {
    pub t: u64,
    pub layer: u32,
    pub head: u32,
    /// Selected directions, one vector of length `D` each.
    pub basis: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub lambda_min: f64,
    pub eta: f64,
    pub gamma: f64,
    pub mode: DampingMode,
    pub interval: u32,
}

impl RegulationPlan {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.basis.first().map(|b| b.len())
    }

    pub fn basis_matrix(&self) -> Result<DMatrix<f64>, RmrError> {
        let d = self.dim().unwrap_or(0);
        if self.basis.iter().any(|b| b.len() != d) {
            return Err(RmrError::Plan("basis vectors differ in length".into()));
        }
        let cols: Vec<f64> = self.basis.iter().flatten().copied().collect();
        Ok(DMatrix::from_column_slice(d, self.basis.len(), &cols))
    }

    pub fn from_matrix(u: &DMatrix<f64>) -> Vec<Vec<f64>> {
        u.column_iter().map(|c| c.iter().copied().collect()).collect()
    }

    pub fn check(&self) -> Result<(), RmrError> {
        if !(0.0..=1.0).contains(&self.eta) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(RmrError::InvalidParameter("eta must lie in [0, 1] and gamma in (0, 1]"));
        }
        let u = self.basis_matrix()?;
        let dev = (u.transpose() * &u - DMatrix::identity(u.ncols(), u.ncols())).amax();
        if dev > ORTHONORMAL_TOL {
            return Err(RmrError::NotOrthonormal(dev));
        }
        Ok(())
    }
}

/// Damps stored rows (oldest first) in place; the newest row has age 1.
///
/// Plans without directions leave the rows untouched.
pub fn damp_values(rows: &mut [Vec<f64>], plan: &RegulationPlan) -> Result<(), RmrError> {
    if plan.basis.is_empty() {
        return Ok(());
    }
    plan.check()?;
    let d = plan.dim().unwrap_or(0);
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(RmrError::DimensionMismatch {
            expected: d,
            got: r.len(),
        });
    }
    let mut scale = 1.0;
    for row in rows.iter_mut().rev() {
        scale *= plan.gamma;
        let f = plan.eta * scale;
        if plan.mode == DampingMode::SubspaceOnly && 1.0 - f == 1.0 {
            // Every older row has an even smaller factor.
            break;
        }
        let coeffs: Vec<f64> = plan
            .basis
            .iter()
            .map(|u| u.iter().zip(row.iter()).map(|(a, b)| a * b).sum())
            .collect();
        match plan.mode {
            DampingMode::SubspaceOnly => {
                for (u, &a) in plan.basis.iter().zip(&coeffs) {
                    for (x, ui) in row.iter_mut().zip(u) {
                        *x -= f * a * ui;
                    }
                }
            }
            DampingMode::AsWritten => {
                for (u, &a) in plan.basis.iter().zip(&coeffs) {
                    for (x, ui) in row.iter_mut().zip(u) {
                        *x -= a * ui;
                    }
                }
                let keep = 1.0 - f;
                row.iter_mut().for_each(|x| *x *= keep);
            }
        }
    }
    Ok(())
}

pub fn write_plan(plan: &RegulationPlan, out: &mut impl Write) -> Result<(), RmrError> {
    let line = serde_json::to_string(plan).map_err(|e| RmrError::Plan(e.to_string()))?;
    writeln!(out, "{line}")?;
    Ok(())
}

/// Parses a plan JSONL stream, validating each record.
pub fn read_plans(input: impl BufRead) -> Result<Vec<RegulationPlan>, RmrError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let plan: RegulationPlan =
            serde_json::from_str(&line).map_err(|e| RmrError::Plan(format!("line {}: {e}", i + 1)))?;
        plan.check()?;
        out.push(plan);
    }
    Ok(out)
}
