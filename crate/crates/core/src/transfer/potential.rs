use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fibers::{FiberFamily, Preimage};

/// Fiber pressures `P_x(φ)` of a base potential, needed by the multifractal family.
#[derive(Debug, Clone, PartialEq)]
pub enum FiberPressure {
    /// `P_x` depends only on the symbol `x_0`.
    PerSymbol(Vec<f64>),
    /// Values along a realized path, `values[k]` at path position `start + k`.
    Trace { start: i64, values: Arc<Vec<f64>> },
}

impl FiberPressure {
    pub fn at(&self, pos: i64, symbol: u32) -> f64 {
        match self {
            FiberPressure::PerSymbol(v) => v.get(symbol as usize).copied().unwrap_or(f64::NAN),
            FiberPressure::Trace { start, values } => {
                let k = pos - start;
                if k < 0 {
                    f64::NAN
                } else {
                    values.get(k as usize).copied().unwrap_or(f64::NAN)
                }
            }
        }
    }
}

/// Hölder potentials on the fibers.
///
/// Every variant splits as `φ(z) = local(symbol, branch, log|T'(z)|) + offset(pos, symbol)`:
/// the local part depends on the point only through the branch and the
/// derivative, the offset is constant on each fiber.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    /// `−t log|T'|`.
    Geometric { t: f64 },
    /// One value per symbol and branch.
    BranchConstant { values: Vec<Vec<f64>> },
    /// `φ − c_a` with one constant per symbol.
    Shifted { base: Box<Potential>, shifts: Vec<f64> },
    /// `q (φ − P_x(φ)) − t log|T'|`.
    Multifractal { base: Box<Potential>, q: f64, t: f64, base_pressure: FiberPressure },
}

impl Potential {
    pub fn geometric(t: f64) -> Self {
        Potential::Geometric { t }
    }

    pub fn zero(family: &FiberFamily) -> Self {
        Potential::BranchConstant {
            values: (0..family.num_symbols() as u32).map(|s| vec![0.0; family.degree(s)]).collect(),
        }
    }

    /// Same value on every branch of every symbol.
    pub fn constant(family: &FiberFamily, value: f64) -> Self {
        Potential::BranchConstant {
            values: (0..family.num_symbols() as u32).map(|s| vec![value; family.degree(s)]).collect(),
        }
    }

    pub fn multifractal(base: Potential, q: f64, t: f64, base_pressure: FiberPressure) -> Self {
        Potential::Multifractal { base: Box::new(base), q, t, base_pressure }
    }

    pub fn validate(&self, family: &FiberFamily) -> Result<()> {
        match self {
            Potential::Geometric { t } => finite(*t, "t"),
            Potential::BranchConstant { values } => {
                if values.len() < family.num_symbols() {
                    return Err(Error::Config(format!(
                        "branch-constant potential has {} symbols, family has {}",
                        values.len(),
                        family.num_symbols()
                    )));
                }
                for (s, row) in values.iter().enumerate().take(family.num_symbols()) {
                    if row.len() != family.degree(s as u32) {
                        return Err(Error::Config(format!("symbol {s}: {} values for {} branches", row.len(), family.degree(s as u32))));
                    }
                    if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                        return Err(Error::Config(format!("symbol {s}: non-finite potential value {v}")));
                    }
                }
                Ok(())
            }
            Potential::Shifted { base, shifts } => {
                if shifts.len() < family.num_symbols() {
                    return Err(Error::Config("shift vector shorter than alphabet".into()));
                }
                base.validate(family)
            }
            Potential::Multifractal { base, q, t, .. } => {
                finite(*q, "q")?;
                finite(*t, "t")?;
                base.validate(family)
            }
        }
    }

    pub fn local(&self, symbol: u32, branch: usize, log_deriv: f64) -> f64 {
        match self {
            Potential::Geometric { t } => -t * log_deriv,
            Potential::BranchConstant { values } => values[symbol as usize][branch],
            Potential::Shifted { base, .. } => base.local(symbol, branch, log_deriv),
            Potential::Multifractal { base, q, t, .. } => q * base.local(symbol, branch, log_deriv) - t * log_deriv,
        }
    }

    pub fn offset(&self, pos: i64, symbol: u32) -> f64 {
        match self {
            Potential::Geometric { .. } | Potential::BranchConstant { .. } => 0.0,
            Potential::Shifted { base, shifts } => base.offset(pos, symbol) - shifts[symbol as usize],
            Potential::Multifractal { base, q, base_pressure, .. } => {
                q * (base.offset(pos, symbol) - base_pressure.at(pos, symbol))
            }
        }
    }

    /// `φ` at a preimage lying in the fiber at path position `pos`.
    pub fn eval(&self, pos: i64, symbol: u32, pre: &Preimage) -> f64 {
        self.local(symbol, pre.branch, pre.log_deriv) + self.offset(pos, symbol)
    }

    /// Per-branch values when the potential is constant on each branch of the
    /// symbol's map at this position.
    pub fn branch_values(&self, family: &FiberFamily, pos: i64, symbol: u32) -> Option<Vec<f64>> {
        if !self.is_locally_branch_constant(family, symbol) {
            return None;
        }
        let off = self.offset(pos, symbol);
        Some(
            family
                .branches(symbol)
                .iter()
                .enumerate()
                .map(|(b, br)| {
                    let (lo, _) = br.domain();
                    self.local(symbol, b, br.derivative(lo).ln()) + off
                })
                .collect(),
        )
    }

    fn is_locally_branch_constant(&self, family: &FiberFamily, symbol: u32) -> bool {
        if !family.is_interval() {
            return false;
        }
        match self {
            Potential::Geometric { t } => *t == 0.0 || family.has_constant_derivative(symbol),
            Potential::BranchConstant { .. } => true,
            Potential::Shifted { base, .. } => base.is_locally_branch_constant(family, symbol),
            Potential::Multifractal { base, t, .. } => {
                base.is_locally_branch_constant(family, symbol) && (*t == 0.0 || family.has_constant_derivative(symbol))
            }
        }
    }

    /// Whether the fiber offsets depend only on the current symbol.
    pub fn is_symbol_local(&self) -> bool {
        match self {
            Potential::Geometric { .. } | Potential::BranchConstant { .. } => true,
            Potential::Shifted { base, .. } => base.is_symbol_local(),
            Potential::Multifractal { base, base_pressure, .. } => {
                base.is_symbol_local() && matches!(base_pressure, FiberPressure::PerSymbol(_))
            }
        }
    }

    /// Lipschitz bound of the potential along fibers (Hölder exponent 1).
    pub fn holder_bound(&self, family: &FiberFamily) -> f64 {
        let lip = family.max_log_derivative_lipschitz();
        match self {
            Potential::Geometric { t } => t.abs() * lip,
            Potential::BranchConstant { .. } => 0.0,
            Potential::Shifted { base, .. } => base.holder_bound(family),
            Potential::Multifractal { base, q, t, .. } => q.abs() * base.holder_bound(family) + t.abs() * lip,
        }
    }

    /// Short label for reports.
    pub fn describe(&self) -> String {
        match self {
            Potential::Geometric { t } => format!("geometric(t={t})"),
            Potential::BranchConstant { .. } => "branch-constant".into(),
            Potential::Shifted { base, .. } => format!("shifted({})", base.describe()),
            Potential::Multifractal { base, q, t, .. } => format!("multifractal(q={q}, t={t}, {})", base.describe()),
        }
    }
}

fn finite(v: f64, name: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be finite")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_values_on_affine_family() {
        let f = FiberFamily::cantor();
        let v = Potential::geometric(1.0).branch_values(&f, 0, 1).unwrap();
        assert!((v[0] + 4f64.ln()).abs() < 1e-14 && (v[1] + 4f64.ln()).abs() < 1e-14);
        let m = FiberFamily::mean_example();
        assert!(Potential::geometric(0.5).branch_values(&m, 0, 0).is_none());
        assert!(Potential::geometric(0.5).branch_values(&m, 0, 1).is_some());
        assert!(Potential::geometric(0.0).branch_values(&m, 0, 0).is_some());
    }

    #[test]
    fn multifractal_offsets() {
        let f = FiberFamily::doubling();
        let base = Potential::BranchConstant { values: vec![vec![0.3f64.ln(), 0.7f64.ln()]] };
        let p = Potential::multifractal(base, 2.0, 0.5, FiberPressure::PerSymbol(vec![0.1]));
        let v = p.branch_values(&f, 3, 0).unwrap();
        assert!((v[0] - (2.0 * (0.3f64.ln() - 0.1) - 0.5 * 2f64.ln())).abs() < 1e-14);
        let trace = FiberPressure::Trace { start: -2, values: Arc::new(vec![1.0, 2.0, 3.0]) };
        assert_eq!(trace.at(0, 0), 3.0);
        assert!(trace.at(1, 0).is_nan());
    }

    #[test]
    fn validation() {
        let f = FiberFamily::cantor();
        assert!(Potential::BranchConstant { values: vec![vec![0.0, 0.0]] }.validate(&f).is_err());
        assert!(Potential::zero(&f).validate(&f).is_ok());
        assert!(Potential::geometric(f64::NAN).validate(&f).is_err());
    }
}
