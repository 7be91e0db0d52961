//! Uniform-grid discretization of the fiberwise transfer operator.
//!
//! `(L g)(w_i) = e^{offset} Σ_b g(ψ_b(w_i)) e^{local_b(ψ_b(w_i))}` where `g` is
//! read by linear interpolation. The operator is a sparse matrix with two
//! entries per branch and node; its transpose pulls measures back.

use crate::base::SymbolPath;
use crate::error::{Error, Result};
use crate::fibers::FiberFamily;
use crate::transfer::potential::Potential;

pub const DEFAULT_GRID: usize = 2048;
const RESCALE_HI: f64 = 1e300;
const RESCALE_LO: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    /// `m` equispaced nodes on `[0, 1]`.
    UniformGrid,
    /// Arbitrary fiber points without interpolation.
    TreeAnchors(Vec<crate::fibers::FiberPoint>),
}

/// A non-negative function on one fiber.
///
/// Stored values are multiplied by `exp(log_scale)`; the scale absorbs
/// growth of iterated transfer sums.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberFunction {
    support: Support,
    values: Vec<f64>,
    log_scale: f64,
}

impl FiberFunction {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config("grid needs at least 2 nodes".into()));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(FiberFunction { support: Support::UniformGrid, values, log_scale: 0.0 })
    }

    pub fn constant(m: usize, c: f64) -> Result<Self> {
        Self::from_values(vec![c; m])
    }

    pub fn from_fn(m: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values((0..m).map(|i| f(node(i, m))).collect())
    }

    pub fn on_anchors(points: Vec<crate::fibers::FiberPoint>, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("anchor values must be finite, non-negative and match the anchors".into()));
        }
        Ok(FiberFunction { support: Support::TreeAnchors(points), values, log_scale: 0.0 })
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_grid(&self) -> bool {
        matches!(self.support, Support::UniformGrid)
    }

    /// Raw stored values (to be multiplied by `exp(log_scale)`).
    pub fn raw_values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Actual node values; may overflow to infinity for large scales.
    pub fn values(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.values.iter().map(|v| v * s).collect()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| node(i, self.values.len())).collect()
    }

    /// Linear interpolation, clamped to `[0, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        interpolate(&self.values, x) * self.log_scale.exp()
    }

    pub fn log_eval(&self, x: f64) -> f64 {
        interpolate(&self.values, x).ln() + self.log_scale
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max) * self.log_scale.exp()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min) * self.log_scale.exp()
    }

    fn rescale(&mut self) {
        let m = self.values.iter().copied().fold(0.0, f64::max);
        if m > RESCALE_HI || (m > 0.0 && m < RESCALE_LO) {
            for v in &mut self.values {
                *v /= m;
            }
            self.log_scale += m.ln();
        }
    }
}

pub(crate) fn node(i: usize, m: usize) -> f64 {
    i as f64 / (m - 1) as f64
}

/// Left node index and fractional offset of `x` on an `m`-node grid.
pub(crate) fn locate(x: f64, m: usize) -> (usize, f64) {
    let s = x.clamp(0.0, 1.0) * (m - 1) as f64;
    let k = (s.floor() as usize).min(m - 2);
    (k, s - k as f64)
}

pub(crate) fn interpolate(values: &[f64], x: f64) -> f64 {
    let (k, f) = locate(x, values.len());
    (1.0 - f) * values[k] + f * values[k + 1]
}

#[derive(Debug, Clone)]
struct Stencil {
    degree: usize,
    /// Per node and branch: left index, fraction, `exp(local)`.
    entries: Vec<(u32, f64, f64)>,
    /// Per branch, `log|T'|` at the preimage of each node.
    log_derivs: Vec<f64>,
}

/// Precomputed transfer operators of an interval family on an `m`-node grid.
#[derive(Debug, Clone)]
pub struct GridOperator<'a> {
    family: &'a FiberFamily,
    potential: &'a Potential,
    m: usize,
    stencils: Vec<Stencil>,
}

impl<'a> GridOperator<'a> {
    pub fn new(family: &'a FiberFamily, potential: &'a Potential, m: usize) -> Result<Self> {
        if !family.is_interval() {
            return Err(Error::Unsupported("grid operators need an interval family; use inverse trees".into()));
        }
        if m < 2 {
            return Err(Error::Config("grid needs at least 2 nodes".into()));
        }
        potential.validate(family)?;
        let stencils = (0..family.num_symbols() as u32)
            .map(|s| {
                let branches = family.branches(s);
                let mut entries = Vec::with_capacity(m * branches.len());
                let mut log_derivs = Vec::with_capacity(m * branches.len());
                for i in 0..m {
                    let w = node(i, m);
                    for (b, br) in branches.iter().enumerate() {
                        let z = br.inverse(w);
                        let ld = br.derivative(z).ln();
                        let (k, f) = locate(z, m);
                        entries.push((k as u32, f, potential.local(s, b, ld).exp()));
                        log_derivs.push(ld);
                    }
                }
                Stencil { degree: branches.len(), entries, log_derivs }
            })
            .collect();
        Ok(GridOperator { family, potential, m, stencils })
    }

    pub fn grid_size(&self) -> usize {
        self.m
    }

    pub fn family(&self) -> &FiberFamily {
        self.family
    }

    pub fn potential(&self) -> &Potential {
        self.potential
    }

    fn weight(&self, pos: i64, symbol: u32) -> f64 {
        self.potential.offset(pos, symbol).exp()
    }

    /// `out = L_{x} g` for the fiber at path position `pos` carrying `symbol`.
    pub fn apply(&self, pos: i64, symbol: u32, g: &[f64], out: &mut [f64]) {
        let st = &self.stencils[symbol as usize];
        let scale = self.weight(pos, symbol);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(k, f, w) in &st.entries[i * st.degree..(i + 1) * st.degree] {
                let k = k as usize;
                acc += w * ((1.0 - f) * g[k] + f * g[k + 1]);
            }
            *o = acc * scale;
        }
    }

    /// `out = r L_{x}` (row vector times operator matrix): pulls a discrete
    /// measure on the image fiber back to the source fiber.
    pub fn apply_adjoint(&self, pos: i64, symbol: u32, r: &[f64], out: &mut [f64]) {
        let st = &self.stencils[symbol as usize];
        let scale = self.weight(pos, symbol);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &ri) in r.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            let ri = ri * scale;
            for &(k, f, w) in &st.entries[i * st.degree..(i + 1) * st.degree] {
                let k = k as usize;
                out[k] += ri * w * (1.0 - f);
                out[k + 1] += ri * w * f;
            }
        }
    }

    /// `log|T'|` at the preimage of node `i` under `branch`.
    pub fn preimage_log_deriv(&self, symbol: u32, i: usize, branch: usize) -> f64 {
        let st = &self.stencils[symbol as usize];
        st.log_derivs[i * st.degree + branch]
    }

    /// Interpolation weights of a point as a row vector.
    pub fn point_mass(&self, x: f64) -> Vec<f64> {
        let mut r = vec![0.0; self.m];
        let (k, f) = locate(x, self.m);
        r[k] += 1.0 - f;
        r[k + 1] += f;
        r
    }
}

fn require_grid(g: &FiberFunction, m: Option<usize>) -> Result<()> {
    if !g.is_grid() {
        return Err(Error::Unsupported("anchor-based functions cannot be pushed through the grid operator".into()));
    }
    if let Some(m) = m {
        if g.len() != m {
            return Err(Error::Config(format!("function has {} nodes, operator has {m}", g.len())));
        }
    }
    Ok(())
}

/// One application of the transfer operator for `symbol` (fiber at position 0).
pub fn apply_transfer(family: &FiberFamily, symbol: u32, potential: &Potential, g: &FiberFunction) -> Result<FiberFunction> {
    require_grid(g, None)?;
    family.check_symbol(symbol)?;
    let op = GridOperator::new(family, potential, g.len())?;
    let mut out = vec![0.0; g.len()];
    op.apply(0, symbol, &g.values, &mut out);
    let mut res = FiberFunction { support: Support::UniformGrid, values: out, log_scale: g.log_scale };
    res.rescale();
    Ok(res)
}

/// `L^n_x g0` over the fiber `x_n`.
pub fn iterate_transfer(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    g0: &FiberFunction,
    n: usize,
) -> Result<FiberFunction> {
    require_grid(g0, None)?;
    let op = GridOperator::new(family, potential, g0.len())?;
    iterate_with(&op, path, 0, g0, n)
}

pub(crate) fn iterate_with(op: &GridOperator, path: &SymbolPath, start: i64, g0: &FiberFunction, n: usize) -> Result<FiberFunction> {
    require_grid(g0, Some(op.grid_size()))?;
    let mut cur = g0.clone();
    let mut buf = vec![0.0; op.grid_size()];
    for j in 0..n as i64 {
        let pos = start + j;
        let s = path.get(pos);
        op.family().check_symbol(s)?;
        op.apply(pos, s, &cur.values, &mut buf);
        std::mem::swap(&mut cur.values, &mut buf);
        cur.rescale();
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{sample_path, BaseProcess};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn constant_images_on_affine_families() {
        let f = FiberFamily::cantor();
        let one = FiberFunction::constant(257, 1.0).unwrap();
        for t in [0.0, 0.3, 1.0] {
            let out = apply_transfer(&f, 0, &Potential::geometric(t), &one).unwrap();
            for v in out.values() {
                assert_abs_diff_eq!(v, 2.0 * 3f64.powf(-t), epsilon = 1e-14);
            }
        }
        let ts = FiberFamily::two_slope(2.0, 4.0).unwrap();
        let out = apply_transfer(&ts, 0, &Potential::geometric(1.0), &one).unwrap();
        for v in out.values() {
            assert_abs_diff_eq!(v, 0.75, epsilon = 1e-15);
        }
    }

    #[test]
    fn anchors_are_rejected() {
        let f = FiberFamily::cantor();
        let g = FiberFunction::on_anchors(vec![crate::fibers::FiberPoint::Real(0.5)], vec![1.0]).unwrap();
        assert!(matches!(apply_transfer(&f, 0, &Potential::geometric(1.0), &g), Err(Error::Unsupported(_))));
    }

    #[test]
    fn iterate_examples() {
        let f = FiberFamily::cantor();
        let h = 4f64.ln() / 12f64.ln();
        let path = sample_path(&BaseProcess::periodic(vec![0, 1]).unwrap(), 2, 0, 0).unwrap();
        let one = FiberFunction::constant(129, 1.0).unwrap();
        let out = iterate_transfer(&f, &path, &Potential::geometric(h), &one, 2).unwrap();
        for v in out.values() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
        let det = sample_path(&BaseProcess::deterministic(0), 10, 0, 0).unwrap();
        let out = iterate_transfer(&f, &det, &Potential::geometric(0.0), &one, 10).unwrap();
        assert_abs_diff_eq!(out.eval(0.37), 1024.0, epsilon = 1e-9);
        let once = iterate_transfer(&f, &det, &Potential::geometric(0.4), &one, 1).unwrap();
        let direct = apply_transfer(&f, 0, &Potential::geometric(0.4), &one).unwrap();
        assert_eq!(once.values(), direct.values());
    }

    #[test]
    fn huge_sums_stay_finite_in_log_form() {
        let f = FiberFamily::cantor();
        let det = sample_path(&BaseProcess::deterministic(1), 2000, 0, 0).unwrap();
        let one = FiberFunction::constant(17, 1.0).unwrap();
        let out = iterate_transfer(&f, &det, &Potential::geometric(-1.0), &one, 2000).unwrap();
        assert_abs_diff_eq!(out.log_eval(0.5), 2000.0 * 8f64.ln(), epsilon = 1e-8);
    }

    proptest! {
        #[test]
        fn positivity_and_linearity(
            vals1 in prop::collection::vec(0.0f64..10.0, 33),
            vals2 in prop::collection::vec(0.0f64..10.0, 33),
            a in 0.0f64..5.0, b in 0.0f64..5.0, t in -1.0f64..2.0, sym in 0u32..2,
        ) {
            let f = FiberFamily::mean_example();
            let p = Potential::geometric(t);
            let g1 = FiberFunction::from_values(vals1.clone()).unwrap();
            let g2 = FiberFunction::from_values(vals2.clone()).unwrap();
            let mix = FiberFunction::from_values(vals1.iter().zip(&vals2).map(|(x, y)| a * x + b * y).collect()).unwrap();
            let l1 = apply_transfer(&f, sym, &p, &g1).unwrap().values();
            let l2 = apply_transfer(&f, sym, &p, &g2).unwrap().values();
            let lm = apply_transfer(&f, sym, &p, &mix).unwrap().values();
            for i in 0..33 {
                prop_assert!(l1[i] >= 0.0);
                let expect = a * l1[i] + b * l2[i];
                prop_assert!((lm[i] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
            }
        }
    }
}
