//! Conformal chains: a point mass at a far fiber pulled back by the
//! transposed grid operators.
//!
//! With `r_E = δ_y` and `r_j ∝ r_{j+1} L_{x_j}` normalized to probability
//! vectors, the normalizers are `λ̂_{x_j} = r_{j+1}·(L_{x_j} 1)` and `r_j`
//! approximates the conformal measure `ν_{x_j}`. A whole trace of `n` steps
//! costs `O((n + horizon)·M)`.

use std::ops::Range;

use crate::base::SymbolPath;
use crate::error::{Error, Result};
use crate::transfer::grid::GridOperator;

#[derive(Debug, Clone)]
pub(crate) struct ConformalChain {
    pub start: i64,
    /// `λ̂_{x_j}` for `j ∈ [start, end)`.
    pub lambdas: Vec<f64>,
    kept: Range<i64>,
    rows: Vec<Vec<f64>>,
}

impl ConformalChain {
    pub fn lambda(&self, pos: i64) -> f64 {
        self.lambdas[(pos - self.start) as usize]
    }

    /// Discrete conformal measure on the fiber at `pos`.
    pub fn measure(&self, pos: i64) -> &[f64] {
        assert!(self.kept.contains(&pos), "row {pos} was not retained");
        &self.rows[(pos - self.kept.start) as usize]
    }

    pub fn integrate(&self, pos: i64, values: &[f64]) -> f64 {
        self.measure(pos).iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

pub(crate) fn build_chain(
    op: &GridOperator,
    path: &SymbolPath,
    start: i64,
    end: i64,
    anchor: f64,
    keep: Range<i64>,
) -> Result<ConformalChain> {
    assert!(end > start);
    let keep = keep.start.max(start)..keep.end.min(end + 1);
    let m = op.grid_size();
    let mut rows = vec![Vec::new(); (keep.end - keep.start).max(0) as usize];
    let mut lambdas = vec![0.0; (end - start) as usize];
    let mut r = op.point_mass(anchor);
    if keep.contains(&end) {
        rows[(end - keep.start) as usize] = r.clone();
    }
    let mut buf = vec![0.0; m];
    for j in (start..end).rev() {
        let s = path.get(j);
        op.family().check_symbol(s)?;
        op.apply_adjoint(j, s, &r, &mut buf);
        let total: f64 = buf.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Convergence(format!("degenerate pullback mass {total} at position {j}")));
        }
        for (ri, bi) in r.iter_mut().zip(&buf) {
            *ri = bi / total;
        }
        lambdas[(j - start) as usize] = total;
        if keep.contains(&j) {
            rows[(j - keep.start) as usize] = r.clone();
        }
    }
    Ok(ConformalChain { start, lambdas, kept: keep, rows })
}

#[derive(Debug, Clone)]
pub(crate) struct ConvergedChain {
    pub chain: ConformalChain,
    /// Per-position `|log λ̂(H) − log λ̂(2H)|` over the requested range.
    pub residuals: Vec<f64>,
    pub horizon: usize,
    pub converged: bool,
}

impl ConvergedChain {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// Chain covering `[start, stop)` whose horizon beyond `stop` doubles until
/// every `λ̂` changes by less than `tol` in log.
#[allow(clippy::too_many_arguments)]
pub(crate) fn converged_chain(
    op: &GridOperator,
    path: &SymbolPath,
    start: i64,
    stop: i64,
    anchor: f64,
    tol: f64,
    min_horizon: usize,
    max_horizon: usize,
    keep: Range<i64>,
) -> Result<ConvergedChain> {
    let mut horizon = min_horizon.max(1);
    let mut coarse = build_chain(op, path, start, stop + horizon as i64, anchor, keep.clone())?;
    loop {
        let fine = build_chain(op, path, start, stop + 2 * horizon as i64, anchor, keep.clone())?;
        let residuals: Vec<f64> = (start..stop).map(|j| (coarse.lambda(j).ln() - fine.lambda(j).ln()).abs()).collect();
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        if worst < tol || 2 * horizon >= max_horizon {
            return Ok(ConvergedChain { chain: fine, residuals, horizon: 2 * horizon, converged: worst < tol });
        }
        horizon *= 2;
        coarse = fine;
    }
}
