//! Concrete expanding random map families.
//!
//! Interval families are lists of monotone full branches per symbol, each
//! branch mapping its domain onto `[0, 1]` with a closed-form inverse.
//! Polynomial families `z ↦ z^d + c_a` act on the complex plane.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROUND_TRIP_SLACK: f64 = 1e-12;

/// A monotone branch onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Branch {
    /// Affine map of `[lo, hi]` onto `[0, 1]`.
    Affine { lo: f64, hi: f64, increasing: bool },
    /// `x ↦ lin·u + quad·u²` with `u = x - lo`, onto `[0, 1]` at `x = hi`.
    Quadratic { lo: f64, hi: f64, lin: f64, quad: f64 },
    /// `x ↦ (e^{κu} - 1)/(e^κ - 1)` with `u = (x - lo)/(hi - lo)`.
    Exponential { lo: f64, hi: f64, kappa: f64 },
}

impl Branch {
    pub fn affine(lo: f64, hi: f64) -> Self {
        Branch::Affine { lo, hi, increasing: true }
    }

    pub fn domain(&self) -> (f64, f64) {
        match *self {
            Branch::Affine { lo, hi, .. } | Branch::Quadratic { lo, hi, .. } | Branch::Exponential { lo, hi, .. } => {
                (lo, hi)
            }
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.domain();
        x >= lo - ROUND_TRIP_SLACK && x <= hi + ROUND_TRIP_SLACK
    }

    pub fn forward(&self, x: f64) -> f64 {
        match *self {
            Branch::Affine { lo, hi, increasing } => {
                let u = (x - lo) / (hi - lo);
                if increasing {
                    u
                } else {
                    1.0 - u
                }
            }
            Branch::Quadratic { lo, lin, quad, .. } => {
                let u = x - lo;
                lin * u + quad * u * u
            }
            Branch::Exponential { lo, hi, kappa } => {
                let u = (x - lo) / (hi - lo);
                (kappa * u).exp_m1() / kappa.exp_m1()
            }
        }
    }

    /// `|T'(x)|`.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Branch::Affine { lo, hi, .. } => 1.0 / (hi - lo),
            Branch::Quadratic { lo, lin, quad, .. } => lin + 2.0 * quad * (x - lo),
            Branch::Exponential { lo, hi, kappa } => {
                let u = (x - lo) / (hi - lo);
                kappa * (kappa * u).exp() / (kappa.exp_m1() * (hi - lo))
            }
        }
    }

    pub fn inverse(&self, w: f64) -> f64 {
        match *self {
            Branch::Affine { lo, hi, increasing } => {
                let u = if increasing { w } else { 1.0 - w };
                lo + u * (hi - lo)
            }
            Branch::Quadratic { lo, lin, quad, .. } => {
                if quad == 0.0 {
                    lo + w / lin
                } else {
                    lo + 2.0 * w / (lin + (lin * lin + 4.0 * quad * w).sqrt())
                }
            }
            Branch::Exponential { lo, hi, kappa } => lo + (hi - lo) * (w * kappa.exp_m1()).ln_1p() / kappa,
        }
    }

    /// Infimum of `|T'|` over the domain.
    pub fn min_derivative(&self) -> f64 {
        let (lo, hi) = self.domain();
        self.derivative(lo).min(self.derivative(hi))
    }

    /// Lipschitz constant of `log|T'|` on the domain.
    pub fn log_derivative_lipschitz(&self) -> f64 {
        match *self {
            Branch::Affine { .. } => 0.0,
            Branch::Quadratic { lin, quad, .. } => 2.0 * quad.abs() / lin,
            Branch::Exponential { lo, hi, kappa } => kappa.abs() / (hi - lo),
        }
    }

    pub fn has_constant_derivative(&self) -> bool {
        match *self {
            Branch::Affine { .. } => true,
            Branch::Quadratic { quad, .. } => quad == 0.0,
            Branch::Exponential { kappa, .. } => kappa == 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FamilyKind {
    /// Per symbol, affine full branches `(lo, hi)`; slope is `1/(hi - lo)`.
    PiecewiseAffineFull { maps: Vec<Vec<(f64, f64)>> },
    /// Single map with branches `[0, 1/s1]` and `[1 - 1/s2, 1]`.
    TwoSlopeDeterministic { s1: f64, s2: f64 },
    PiecewiseSmoothInterval { maps: Vec<Vec<Branch>> },
    /// `z ↦ z^d + c_a`.
    QuadraticRandom { degree: u32, params: Vec<Complex64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Inverse-branch ball radius.
    pub xi: f64,
    /// Hölder exponent of the potentials in use.
    pub alpha: f64,
    /// Hölder bound `H₀` of the declared potential along fibers.
    pub holder_bound: f64,
}

/// A point of a fiber.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FiberPoint {
    Real(f64),
    Complex(Complex64),
}

impl FiberPoint {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            FiberPoint::Real(x) => Some(*x),
            FiberPoint::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Complex64 {
        match *self {
            FiberPoint::Real(x) => Complex64::new(x, 0.0),
            FiberPoint::Complex(z) => z,
        }
    }

    pub fn distance(&self, other: &FiberPoint) -> f64 {
        (self.as_complex() - other.as_complex()).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preimage {
    pub point: FiberPoint,
    /// `log|T'|` at the point.
    pub log_deriv: f64,
    pub branch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreimageSet {
    pub entries: Vec<Preimage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiberFamily {
    name: String,
    kind: FamilyKind,
    geometry: Geometry,
    /// Lowered branch tables for interval kinds.
    branches: Vec<Vec<Branch>>,
}

impl FiberFamily {
    pub fn new(name: impl Into<String>, kind: FamilyKind, geometry: Option<Geometry>) -> Result<Self> {
        let branches = match &kind {
            FamilyKind::PiecewiseAffineFull { maps } => maps
                .iter()
                .map(|m| m.iter().map(|&(lo, hi)| Branch::affine(lo, hi)).collect())
                .collect(),
            FamilyKind::TwoSlopeDeterministic { s1, s2 } => {
                if *s1 <= 1.0 || *s2 <= 1.0 || 1.0 / s1 + 1.0 / s2 > 1.0 + 1e-15 {
                    return Err(Error::Config(format!("two-slope map needs s1, s2 > 1 and 1/s1 + 1/s2 <= 1, got {s1}, {s2}")));
                }
                vec![vec![Branch::affine(0.0, 1.0 / s1), Branch::affine(1.0 - 1.0 / s2, 1.0)]]
            }
            FamilyKind::PiecewiseSmoothInterval { maps } => maps.clone(),
            FamilyKind::QuadraticRandom { degree, params } => {
                if *degree < 2 {
                    return Err(Error::Config("polynomial degree must be at least 2".into()));
                }
                if params.is_empty() {
                    return Err(Error::Config("empty parameter list".into()));
                }
                let delta = params.iter().map(|c| c.norm()).fold(0.0, f64::max);
                let bound = admissible_delta(*degree);
                if delta >= bound {
                    return Err(Error::Hypothesis(format!(
                        "max |c| = {delta} is not below delta({degree}) = {bound}"
                    )));
                }
                Vec::new()
            }
        };
        for (s, map) in branches.iter().enumerate() {
            validate_interval_map(s, map)?;
        }
        let mut family = FiberFamily {
            name: name.into(),
            kind,
            geometry: Geometry { xi: 1.0, alpha: 1.0, holder_bound: 0.0 },
            branches,
        };
        family.geometry = match geometry {
            Some(g) => g,
            None => Geometry { xi: 1.0, alpha: 1.0, holder_bound: family.max_log_derivative_lipschitz() },
        };
        if !(family.geometry.alpha > 0.0 && family.geometry.alpha <= 1.0) || family.geometry.holder_bound < 0.0 {
            return Err(Error::Config("geometry needs alpha in (0, 1] and H0 >= 0".into()));
        }
        Ok(family)
    }

    /// The random Cantor family: `3x mod 1` on `[0,1/3]∪[2/3,1]` and `4x mod 1` on `[0,1/4]∪[3/4,1]`.
    pub fn cantor() -> Self {
        Self::new(
            "cantor",
            FamilyKind::PiecewiseAffineFull { maps: vec![vec![(0.0, 1.0 / 3.0), (2.0 / 3.0, 1.0)], vec![(0.0, 0.25), (0.75, 1.0)]] },
            None,
        )
        .expect("built-in family")
    }

    /// Expanding only in the mean: `f₀ = x/2 + 15x²/2` on `[0,1/3]` and `8x − 7` on `[7/8,1]`;
    /// `f₁ = 8x mod 1` on `[0,1/8]∪[7/8,1]`.
    pub fn mean_example() -> Self {
        Self::new(
            "mean-example",
            FamilyKind::PiecewiseSmoothInterval {
                maps: vec![
                    vec![
                        Branch::Quadratic { lo: 0.0, hi: 1.0 / 3.0, lin: 0.5, quad: 7.5 },
                        Branch::affine(7.0 / 8.0, 1.0),
                    ],
                    vec![Branch::affine(0.0, 0.125), Branch::affine(7.0 / 8.0, 1.0)],
                ],
            },
            None,
        )
        .expect("built-in family")
    }

    pub fn two_slope(s1: f64, s2: f64) -> Result<Self> {
        Self::new(format!("two-slope({s1},{s2})"), FamilyKind::TwoSlopeDeterministic { s1, s2 }, None)
    }

    /// `2x mod 1` as a one-symbol family.
    pub fn doubling() -> Self {
        Self::new("doubling", FamilyKind::PiecewiseAffineFull { maps: vec![vec![(0.0, 0.5), (0.5, 1.0)]] }, None)
            .expect("built-in family")
    }

    /// Two-symbol family of non-affine uniformly expanding maps with
    /// exponential branches of strength `kappa` (symbol 1 uses `-kappa`).
    pub fn warped(kappa: f64) -> Result<Self> {
        let map = |k: f64| vec![Branch::Exponential { lo: 0.0, hi: 0.5, kappa: k }, Branch::Exponential { lo: 0.5, hi: 1.0, kappa: k }];
        Self::new(format!("warped({kappa})"), FamilyKind::PiecewiseSmoothInterval { maps: vec![map(kappa), map(-kappa)] }, None)
    }

    pub fn quadratic(degree: u32, params: Vec<Complex64>) -> Result<Self> {
        Self::new(format!("quadratic(d={degree})"), FamilyKind::QuadraticRandom { degree, params }, None)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn is_interval(&self) -> bool {
        !matches!(self.kind, FamilyKind::QuadraticRandom { .. })
    }

    /// Dimension of the ambient space (1 for interval kinds, 2 for the complex plane).
    pub fn ambient_dimension(&self) -> f64 {
        if self.is_interval() {
            1.0
        } else {
            2.0
        }
    }

    pub fn num_symbols(&self) -> usize {
        match &self.kind {
            FamilyKind::QuadraticRandom { params, .. } => params.len(),
            _ => self.branches.len(),
        }
    }

    pub fn degree(&self, symbol: u32) -> usize {
        match &self.kind {
            FamilyKind::QuadraticRandom { degree, .. } => *degree as usize,
            _ => self.branches[symbol as usize].len(),
        }
    }

    /// Branch table of an interval family.
    pub fn branches(&self, symbol: u32) -> &[Branch] {
        &self.branches[symbol as usize]
    }

    pub fn quadratic_params(&self) -> Option<(u32, &[Complex64])> {
        match &self.kind {
            FamilyKind::QuadraticRandom { degree, params } => Some((*degree, params)),
            _ => None,
        }
    }

    /// Whether every branch of the symbol's map has constant `|T'|`.
    pub fn has_constant_derivative(&self, symbol: u32) -> bool {
        self.is_interval() && self.branches(symbol).iter().all(Branch::has_constant_derivative)
    }

    pub(crate) fn check_symbol(&self, symbol: u32) -> Result<()> {
        if (symbol as usize) < self.num_symbols() {
            Ok(())
        } else {
            Err(Error::Config(format!("symbol {symbol} not defined for family {}", self.name)))
        }
    }

    pub(crate) fn max_log_derivative_lipschitz(&self) -> f64 {
        self.branches.iter().flatten().map(Branch::log_derivative_lipschitz).fold(0.0, f64::max)
    }

    pub fn inverse_images(&self, symbol: u32, w: FiberPoint) -> Result<PreimageSet> {
        self.check_symbol(symbol)?;
        match &self.kind {
            FamilyKind::QuadraticRandom { degree, params } => {
                let c = params[symbol as usize];
                let w = w.as_complex();
                let entries = complex_roots(*degree, w - c)?
                    .into_iter()
                    .enumerate()
                    .map(|(branch, z)| Preimage { point: FiberPoint::Complex(z), log_deriv: log_poly_derivative(*degree, z), branch })
                    .collect();
                Ok(PreimageSet { entries })
            }
            _ => {
                let w = match w {
                    FiberPoint::Real(x) if (0.0..=1.0).contains(&x) => x,
                    FiberPoint::Real(x) => return Err(Error::Domain(x)),
                    FiberPoint::Complex(z) => return Err(Error::Domain(z.re)),
                };
                let entries = self
                    .branches(symbol)
                    .iter()
                    .enumerate()
                    .map(|(branch, b)| {
                        let z = b.inverse(w);
                        Preimage { point: FiberPoint::Real(z), log_deriv: b.derivative(z).ln(), branch }
                    })
                    .collect();
                Ok(PreimageSet { entries })
            }
        }
    }

    /// Index of the branch whose domain holds `z`.
    pub fn branch_of(&self, symbol: u32, z: f64) -> Result<usize> {
        self.check_symbol(symbol)?;
        if !(-ROUND_TRIP_SLACK..=1.0 + ROUND_TRIP_SLACK).contains(&z) {
            return Err(Error::Domain(z));
        }
        self.branches(symbol).iter().position(|b| b.contains(z)).ok_or(Error::OutsideRepeller(z))
    }

    pub fn apply_map(&self, symbol: u32, z: FiberPoint) -> Result<FiberPoint> {
        self.check_symbol(symbol)?;
        match &self.kind {
            FamilyKind::QuadraticRandom { degree, params } => {
                Ok(FiberPoint::Complex(z.as_complex().powu(*degree) + params[symbol as usize]))
            }
            _ => {
                let x = z.as_real().ok_or(Error::Domain(f64::NAN))?;
                let b = self.branch_of(symbol, x)?;
                Ok(FiberPoint::Real(self.branches(symbol)[b].forward(x).clamp(0.0, 1.0)))
            }
        }
    }

    /// `γ_a`: infimum of `|T'|` over the symbol's fiber map.
    pub fn expansion_floor(&self, symbol: u32) -> f64 {
        match &self.kind {
            FamilyKind::QuadraticRandom { degree, params } => {
                let delta = params.iter().map(|c| c.norm()).fold(0.0, f64::max);
                let eps = annulus_radius(*degree, delta);
                *degree as f64 * eps.powi(*degree as i32 - 1)
            }
            _ => self.branches(symbol).iter().map(Branch::min_derivative).fold(f64::INFINITY, f64::min),
        }
    }

    /// `γ_* = min_a γ_a`.
    pub fn min_expansion_floor(&self) -> f64 {
        (0..self.num_symbols() as u32).map(|s| self.expansion_floor(s)).fold(f64::INFINITY, f64::min)
    }

    /// Check that every symbol map is expanding, returning `γ_*`.
    pub fn require_uniformly_expanding(&self) -> Result<f64> {
        for s in 0..self.num_symbols() as u32 {
            let floor = self.expansion_floor(s);
            if floor <= 1.0 {
                return Err(Error::NotUniformlyExpanding { symbol: s, floor });
            }
        }
        Ok(self.min_expansion_floor())
    }
}

fn validate_interval_map(symbol: usize, map: &[Branch]) -> Result<()> {
    if map.is_empty() {
        return Err(Error::Config(format!("symbol {symbol} has no branches")));
    }
    let mut domains: Vec<(f64, f64)> = map.iter().map(Branch::domain).collect();
    for (b, br) in map.iter().enumerate() {
        let (lo, hi) = br.domain();
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::Config(format!("symbol {symbol} branch {b}: bad domain [{lo}, {hi}]")));
        }
        let (a, z) = (br.forward(lo), br.forward(hi));
        let (img_lo, img_hi) = if a <= z { (a, z) } else { (z, a) };
        if img_lo.abs() > 1e-9 || (img_hi - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("symbol {symbol} branch {b}: image [{img_lo}, {img_hi}] is not [0, 1]")));
        }
        if br.min_derivative() <= 0.0 {
            return Err(Error::Config(format!("symbol {symbol} branch {b}: not strictly monotone")));
        }
    }
    domains.sort_by(|a, b| a.0.total_cmp(&b.0));
    if domains.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::Config(format!("symbol {symbol}: overlapping branch domains")));
    }
    Ok(())
}

/// `log|d z^{d-1}|`.
pub(crate) fn log_poly_derivative(degree: u32, z: Complex64) -> f64 {
    (degree as f64).ln() + (degree as f64 - 1.0) * z.norm().ln()
}

/// The `d` roots of `u`, principal root times the roots of unity.
pub(crate) fn complex_roots(degree: u32, u: Complex64) -> Result<Vec<Complex64>> {
    if u.norm() < 1e-14 {
        return Err(Error::BranchSingularity(format!("{u}")));
    }
    let principal = u.powf(1.0 / degree as f64);
    Ok((0..degree)
        .map(|k| principal * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / degree as f64))
        .collect())
}

/// `δ(d) = sup{ε − ε^d : ε > (1/d)^{1/(d−1)}}`, attained at the lower endpoint.
pub fn admissible_delta(degree: u32) -> f64 {
    let d = degree as f64;
    let eps0 = (1.0 / d).powf(1.0 / (d - 1.0));
    eps0 - eps0.powf(d)
}

/// Largest `ε ∈ [ε₀, 1]` with `ε − ε^d ≥ δ`, so that `|c| ≤ δ` keeps `B(0, ε)` invariant.
fn annulus_radius(degree: u32, delta: f64) -> f64 {
    let d = degree as f64;
    let eps0 = (1.0 / d).powf(1.0 / (d - 1.0));
    let (mut lo, mut hi) = (eps0, 1.0);
    if delta <= 0.0 {
        return 1.0;
    }
    // ε − ε^d decreases on [ε₀, 1]
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - mid.powf(d) >= delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `Q = H₀ γ^{−α} / (1 − γ^{−α})`.
pub fn distortion_constant(holder_bound: f64, alpha: f64, gamma: f64) -> f64 {
    let r = gamma.powf(-alpha);
    holder_bound * r / (1.0 - r)
}

/// Distortion budget `Q` of a uniformly expanding family from its declared geometry.
pub fn holder_distortion_budget(family: &FiberFamily) -> Result<f64> {
    let gamma = family.require_uniformly_expanding()?;
    let g = family.geometry();
    Ok(distortion_constant(g.holder_bound, g.alpha, gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn reals(set: &PreimageSet) -> Vec<(f64, f64)> {
        set.entries.iter().map(|p| (p.point.as_real().unwrap(), p.log_deriv)).collect()
    }

    #[test]
    fn cantor_inverse_images() {
        let f = FiberFamily::cantor();
        let pre = reals(&f.inverse_images(0, FiberPoint::Real(0.5)).unwrap());
        assert_abs_diff_eq!(pre[0].0, 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pre[1].0, 5.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pre[0].1, 3f64.ln(), epsilon = 1e-14);
        let pre = reals(&f.inverse_images(1, FiberPoint::Real(0.0)).unwrap());
        assert_eq!(pre[0].0, 0.0);
        assert_abs_diff_eq!(pre[1].0, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(pre[1].1, 4f64.ln(), epsilon = 1e-14);
        assert!(matches!(f.inverse_images(0, FiberPoint::Real(1.5)), Err(Error::Domain(_))));
    }

    #[test]
    fn quadratic_inverse_images() {
        let f = FiberFamily::quadratic(2, vec![Complex64::new(0.0, 0.0)]).unwrap();
        let pre = f.inverse_images(0, FiberPoint::Complex(Complex64::new(1.0, 0.0))).unwrap();
        let pts: Vec<Complex64> = pre.entries.iter().map(|p| p.point.as_complex()).collect();
        assert_abs_diff_eq!(pts[0].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pts[1].re, -1.0, epsilon = 1e-15);
        for p in &pre.entries {
            assert_abs_diff_eq!(p.log_deriv, 2f64.ln(), epsilon = 1e-15);
        }
        let f = FiberFamily::quadratic(2, vec![Complex64::new(0.1, 0.0)]).unwrap();
        assert!(matches!(
            f.inverse_images(0, FiberPoint::Complex(Complex64::new(0.1, 0.0))),
            Err(Error::BranchSingularity(_))
        ));
    }

    #[test]
    fn apply_map_examples() {
        let f = FiberFamily::cantor();
        assert_abs_diff_eq!(f.apply_map(0, FiberPoint::Real(5.0 / 6.0)).unwrap().as_real().unwrap(), 0.5, epsilon = 1e-15);
        assert!(matches!(f.apply_map(0, FiberPoint::Real(0.5)), Err(Error::OutsideRepeller(_))));
        let q = FiberFamily::quadratic(2, vec![Complex64::new(0.1, 0.0)]).unwrap();
        let z = q.apply_map(0, FiberPoint::Complex(Complex64::new(1.0, 0.0))).unwrap().as_complex();
        assert_abs_diff_eq!(z.re, 1.1, epsilon = 1e-15);
        let t = FiberFamily::two_slope(2.0, 4.0).unwrap();
        assert_abs_diff_eq!(t.apply_map(0, FiberPoint::Real(0.25)).unwrap().as_real().unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn expansion_floors() {
        let f = FiberFamily::cantor();
        assert_abs_diff_eq!(f.expansion_floor(0), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.expansion_floor(1), 4.0, epsilon = 1e-12);
        let m = FiberFamily::mean_example();
        assert_abs_diff_eq!(m.expansion_floor(0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.expansion_floor(1), 8.0, epsilon = 1e-12);
        let q = FiberFamily::quadratic(2, vec![Complex64::new(0.1, 0.0), Complex64::new(-0.1, 0.0)]).unwrap();
        // ε − ε² = 0.1 ⇒ ε = (1 + √0.6)/2, floor 2ε
        assert_abs_diff_eq!(q.expansion_floor(0), 1.0 + 0.6f64.sqrt(), epsilon = 1e-10);
        let q0 = FiberFamily::quadratic(2, vec![Complex64::new(0.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(q0.expansion_floor(0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_admissibility() {
        assert_abs_diff_eq!(admissible_delta(2), 0.25, epsilon = 1e-15);
        assert!(matches!(
            FiberFamily::quadratic(2, vec![Complex64::new(0.3, 0.0)]),
            Err(Error::Hypothesis(_))
        ));
        assert!(FiberFamily::quadratic(3, vec![Complex64::new(0.3, 0.0)]).is_ok());
    }

    #[test]
    fn distortion_budgets() {
        assert_eq!(holder_distortion_budget(&FiberFamily::cantor()).unwrap(), 0.0);
        assert_abs_diff_eq!(distortion_constant(1.0, 1.0, 3.0), 0.5, epsilon = 1e-15);
        let g = Geometry { xi: 1.0, alpha: 1.0, holder_bound: 1.0 };
        let f = FiberFamily::new(
            "slope3",
            FamilyKind::PiecewiseAffineFull { maps: vec![vec![(0.0, 1.0 / 3.0), (2.0 / 3.0, 1.0)]] },
            Some(g),
        )
        .unwrap();
        assert_abs_diff_eq!(holder_distortion_budget(&f).unwrap(), 0.5, epsilon = 1e-15);
        assert!(matches!(
            holder_distortion_budget(&FiberFamily::mean_example()),
            Err(Error::NotUniformlyExpanding { symbol: 0, .. })
        ));
    }

    #[test]
    fn rejects_malformed_branches() {
        let overlapping = FamilyKind::PiecewiseAffineFull { maps: vec![vec![(0.0, 0.6), (0.5, 1.0)]] };
        assert!(FiberFamily::new("bad", overlapping, None).is_err());
        let not_onto = FamilyKind::PiecewiseSmoothInterval {
            maps: vec![vec![Branch::Quadratic { lo: 0.0, hi: 0.5, lin: 1.0, quad: 1.0 }]],
        };
        assert!(FiberFamily::new("bad", not_onto, None).is_err());
    }

    #[test]
    fn affine_cylinder_diameters_are_slope_products() {
        let f = FiberFamily::cantor();
        let word = [0u32, 1, 1, 0, 1];
        // pull back [0, 1] along the word through the first branch
        let (mut a, mut b) = (0.0, 1.0);
        for &s in word.iter().rev() {
            let br = f.branches(s)[0];
            a = br.inverse(a);
            b = br.inverse(b);
        }
        let expected: f64 = word.iter().map(|&s| 1.0 / f.expansion_floor(s)).product();
        assert_abs_diff_eq!(b - a, expected, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn interval_round_trip(w in 0.0f64..=1.0, sym in 0u32..2, fam in 0usize..3) {
            let f = [FiberFamily::cantor(), FiberFamily::mean_example(), FiberFamily::warped(0.5).unwrap()][fam].clone();
            let pre = f.inverse_images(sym, FiberPoint::Real(w)).unwrap();
            prop_assert_eq!(pre.entries.len(), f.degree(sym));
            for p in &pre.entries {
                let back = f.apply_map(sym, p.point).unwrap().as_real().unwrap();
                prop_assert!((back - w).abs() <= 1e-12, "{} vs {}", back, w);
                prop_assert!(p.log_deriv.is_finite());
            }
        }

        #[test]
        fn complex_round_trip(re in -2.0f64..2.0, im in -2.0f64..2.0, sym in 0u32..2) {
            let f = FiberFamily::quadratic(3, vec![Complex64::new(0.1, 0.05), Complex64::new(-0.2, 0.0)]).unwrap();
            let w = Complex64::new(re, im);
            prop_assume!((w - f.quadratic_params().unwrap().1[sym as usize]).norm() > 1e-6);
            let pre = f.inverse_images(sym, FiberPoint::Complex(w)).unwrap();
            prop_assert_eq!(pre.entries.len(), 3);
            for p in &pre.entries {
                let back = f.apply_map(sym, p.point).unwrap().as_complex();
                prop_assert!((back - w).norm() <= 1e-10 * w.norm().max(1.0));
            }
        }
    }
}
