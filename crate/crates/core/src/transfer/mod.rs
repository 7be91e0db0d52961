//! The fiberwise Ruelle transfer operator and the quantities it generates:
//! `λ_x`, the invariant density `q_x`, conformal cylinder masses, distortion
//! and decay of correlations.

mod chain;
mod cylinder;
mod grid;
mod potential;
mod tree;

pub use cylinder::{conformal_cylinder_masses, CylinderMasses, MAX_CYLINDERS};
pub use grid::{apply_transfer, iterate_transfer, FiberFunction, GridOperator, Support, DEFAULT_GRID};
pub use potential::{FiberPressure, Potential};
pub use tree::{default_anchor, pullback_level_log_sums, pullback_log_sum, repelling_fixed_point, MAX_TREE_LEAVES};

pub(crate) use chain::{converged_chain, ConvergedChain};
pub(crate) use grid::iterate_with;
pub(crate) use tree::log_sum_exp;

use crate::base::SymbolPath;
use crate::error::{Error, Result};
use crate::fibers::{distortion_constant, FiberFamily, FiberPoint};
#[cfg(test)]
use num_complex::Complex64;

/// Numerical knobs shared by the transfer computations.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferOptions {
    pub grid: usize,
    /// Stopping tolerance on `log λ̂`.
    pub tol: f64,
    pub min_depth: usize,
    pub max_depth: usize,
    /// Depth cap for inverse trees of polynomial families.
    pub tree_depth_cap: usize,
    /// Backward horizon of the Cesàro average defining `q̂_x`.
    pub n_back: usize,
    pub anchor: Option<f64>,
}

impl Default for TransferOptions {
    fn default() -> Self {
        TransferOptions {
            grid: DEFAULT_GRID,
            tol: 1e-10,
            min_depth: 4,
            max_depth: 512,
            tree_depth_cap: 22,
            n_back: 32,
            anchor: None,
        }
    }
}

impl TransferOptions {
    fn anchor_x(&self) -> f64 {
        self.anchor.unwrap_or(0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTrace {
    /// `λ̂_{x_j}` for `j = 0..n`.
    pub estimates: Vec<f64>,
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// Largest change of `log λ̂` at the final depth doubling.
    pub residual: f64,
    /// Pullback depth used.
    pub depth: usize,
    /// Closed form (constant-derivative branches with branch-constant potential).
    pub exact: bool,
}

impl LambdaTrace {
    /// Index of the first estimate whose residual exceeds `tol`.
    pub fn first_unconverged(&self, tol: f64) -> Option<usize> {
        self.residuals.iter().position(|r| !(*r < tol))
    }
}

/// Per-step `λ̂_{x_j}`, `j = 0..n`, along `path`.
///
/// Interval families use a conformal chain on the grid with doubling horizon;
/// polynomial families use ratios of consecutive inverse-tree levels.
pub fn lambda_trace(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    n: usize,
    opts: &TransferOptions,
) -> Result<LambdaTrace> {
    lambda_trace_from(family, path, potential, 0, n, opts)
}

pub(crate) fn lambda_trace_from(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    start: i64,
    n: usize,
    opts: &TransferOptions,
) -> Result<LambdaTrace> {
    if n == 0 {
        return Err(Error::Config("lambda trace needs n >= 1".into()));
    }
    potential.validate(family)?;
    if let Some(exact) = exact_lambdas(family, path, potential, start, n)? {
        return Ok(LambdaTrace { residuals: vec![0.0; n], estimates: exact, converged: true, residual: 0.0, depth: 1, exact: true });
    }
    if family.is_interval() {
        let op = GridOperator::new(family, potential, opts.grid)?;
        let stop = start + n as i64;
        let c = converged_chain(&op, path, start, stop, opts.anchor_x(), opts.tol, opts.min_depth, opts.max_depth, 0..0)?;
        let estimates = (start..stop).map(|j| c.chain.lambda(j)).collect();
        Ok(LambdaTrace {
            estimates,
            residual: c.max_residual(),
            residuals: c.residuals,
            converged: c.converged,
            depth: c.horizon,
            exact: false,
        })
    } else {
        tree_lambdas(family, path, potential, start, n, opts)
    }
}

/// Closed-form `λ_{x_j} = Σ_b e^{φ_b}` when every step has branch-constant data
/// on constant-derivative branches.
pub(crate) fn exact_lambdas(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    start: i64,
    n: usize,
) -> Result<Option<Vec<f64>>> {
    let mut out = Vec::with_capacity(n);
    for j in start..start + n as i64 {
        let s = path.get(j);
        family.check_symbol(s)?;
        match potential.branch_values(family, j, s) {
            Some(v) => out.push(v.iter().map(|x| x.exp()).sum()),
            None => return Ok(None),
        }
    }
    Ok(Some(out))
}

fn tree_lambdas(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    start: i64,
    n: usize,
    opts: &TransferOptions,
) -> Result<LambdaTrace> {
    let mut estimates = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut depth_used = 0;
    let cap = opts.tree_depth_cap.max(2);
    for j in start..start + n as i64 {
        let ratio = |depth: usize| -> Result<f64> {
            let top = j + depth as i64;
            let anchor = default_anchor(family, path.get(top));
            let sums = pullback_level_log_sums(family, path, potential, j, depth, anchor)?;
            Ok(sums[depth] - sums[depth - 1])
        };
        let mut depth = opts.min_depth.clamp(2, cap);
        let mut prev = ratio(depth)?;
        let mut residual = f64::INFINITY;
        while depth < cap {
            let next_depth = (2 * depth).min(cap);
            let next = ratio(next_depth)?;
            residual = (next - prev).abs();
            prev = next;
            depth = next_depth;
            if residual < opts.tol {
                break;
            }
        }
        depth_used = depth_used.max(depth);
        estimates.push(prev.exp());
        residuals.push(residual);
    }
    let residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(LambdaTrace { estimates, converged: residual < opts.tol, residual, residuals, depth: depth_used, exact: false })
}

/// Cesàro average `q̂_x = (1/n_back) Σ_{k<n_back} L̃^k_{x_{-k}} 1`, normalized
/// so that `∫ q̂ dν̂_x = 1`.
pub fn invariant_density(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    n_back: usize,
    opts: &TransferOptions,
) -> Result<FiberFunction> {
    let op = GridOperator::new(family, potential, opts.grid)?;
    let chain = density_chain(&op, path, n_back, 0, opts)?;
    let q = cesaro_density(&op, path, &chain, n_back);
    FiberFunction::from_values(q)
}

/// Chain covering `[−n_back, stop)` with the conformal measures on `[0, stop]` retained.
fn density_chain(op: &GridOperator, path: &SymbolPath, n_back: usize, stop: i64, opts: &TransferOptions) -> Result<ConvergedChain> {
    if n_back == 0 {
        return Err(Error::Config("n_back must be at least 1".into()));
    }
    let start = -(n_back as i64);
    let c = converged_chain(op, path, start, stop.max(1), opts.anchor_x(), opts.tol, opts.min_depth, opts.max_depth, 0..stop + 1)?;
    if !c.converged {
        return Err(Error::Convergence(format!("lambda residual {} above tolerance {}", c.max_residual(), opts.tol)));
    }
    Ok(c)
}

fn cesaro_density(op: &GridOperator, path: &SymbolPath, chain: &ConvergedChain, n_back: usize) -> Vec<f64> {
    let m = op.grid_size();
    let mut v = vec![1.0; m];
    let mut buf = vec![0.0; m];
    for j in -(n_back as i64 - 1)..0 {
        let s = path.get(j);
        op.apply(j, s, &v, &mut buf);
        let lam = chain.chain.lambda(j);
        for (vi, bi) in v.iter_mut().zip(&buf) {
            *vi = bi / lam + 1.0;
        }
    }
    let norm = chain.chain.integrate(0, &v);
    v.iter().map(|x| x / norm).collect()
}

/// The normalized operator `L̂_x g = L̃_x(g q_x) / q_{θx}` applied to `g ≡ 1`.
pub fn normalized_image_of_one(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    n_back: usize,
    opts: &TransferOptions,
) -> Result<FiberFunction> {
    let op = GridOperator::new(family, potential, opts.grid)?;
    let q0 = invariant_density(family, path, potential, n_back, opts)?;
    let q1 = invariant_density(family, &crate::base::shift(path, 1), potential, n_back, opts)?;
    let lam = lambda_trace(family, path, potential, 1, opts)?.estimates[0];
    let mut buf = vec![0.0; op.grid_size()];
    op.apply(0, path.get(0), q0.raw_values(), &mut buf);
    FiberFunction::from_values(buf.iter().zip(q1.raw_values()).map(|(b, q)| b / lam / q).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortionReport {
    pub max_log_ratio: f64,
    /// Budget at the worst pair (largest ratio minus budget).
    pub budget: f64,
    /// Largest `ratio − budget` over the probe pairs.
    pub worst_excess: f64,
    pub pairs_checked: usize,
    pub pairs_skipped: usize,
    pub violated: bool,
}

/// Compare `|log L^n1(w₁) − log L^n1(w₂)|` on probe pairs with the distortion
/// budget `Q ρ^α` (pathwise for non-uniform families). Sums are exact tree sums.
pub fn distortion_check(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    n: usize,
    probes: &[(f64, f64)],
) -> Result<DistortionReport> {
    let alpha = family.geometry().alpha;
    let xi = family.geometry().xi;
    let h0 = potential.holder_bound(family);
    let uniform_q = family.require_uniformly_expanding().ok().map(|gamma| distortion_constant(h0, alpha, gamma));
    // Σ_k Π_{i=n-k}^{n-1} γ_{x_i}^{-α}
    let path_factor = {
        let mut acc = 0.0;
        let mut prod = 1.0;
        for k in 1..=n as i64 {
            prod *= family.expansion_floor(path.get(n as i64 - k)).powf(-alpha);
            acc += prod;
        }
        acc
    };
    let coefficient = uniform_q.unwrap_or(h0 * path_factor);
    let mut report = DistortionReport {
        max_log_ratio: 0.0,
        budget: 0.0,
        worst_excess: f64::NEG_INFINITY,
        pairs_checked: 0,
        pairs_skipped: 0,
        violated: false,
    };
    for &(w1, w2) in probes {
        let rho = (w1 - w2).abs();
        if rho > xi {
            report.pairs_skipped += 1;
            continue;
        }
        let l1 = pullback_log_sum(family, path, potential, 0, n, FiberPoint::Real(w1))?;
        let l2 = pullback_log_sum(family, path, potential, 0, n, FiberPoint::Real(w2))?;
        let ratio = (l1 - l2).abs();
        let budget = coefficient * rho.powf(alpha);
        report.pairs_checked += 1;
        report.max_log_ratio = report.max_log_ratio.max(ratio);
        if ratio - budget > report.worst_excess {
            report.worst_excess = ratio - budget;
            report.budget = budget;
        }
        if ratio > budget + 1e-8 {
            report.violated = true;
        }
    }
    if report.pairs_checked == 0 {
        report.worst_excess = 0.0;
    }
    Ok(report)
}

/// `corr(n) = μ_x((f∘T^n) g) − μ_{θ^n x}(f) μ_x(g)` for `n = 0..=n_max`.
pub fn correlation_series(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    f: &FiberFunction,
    g: &FiberFunction,
    n_max: usize,
    opts: &TransferOptions,
) -> Result<Vec<f64>> {
    let op = GridOperator::new(family, potential, opts.grid)?;
    let m = op.grid_size();
    if f.len() != m || g.len() != m || !f.is_grid() || !g.is_grid() {
        return Err(Error::Config(format!("observables must be grid functions with {m} nodes")));
    }
    let (f, g) = (f.values(), g.values());
    let chain = density_chain(&op, path, opts.n_back, n_max as i64, opts)?;
    let q = cesaro_density(&op, path, &chain, opts.n_back);
    let mu_g: f64 = chain.chain.integrate(0, &q.iter().zip(&g).map(|(a, b)| a * b).collect::<Vec<_>>());
    let mut pushed_g: Vec<f64> = q.iter().zip(&g).map(|(a, b)| a * b).collect();
    let mut pushed_q = q;
    let mut buf = vec![0.0; m];
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max as i64 {
        let fg: Vec<f64> = f.iter().zip(&pushed_g).map(|(a, b)| a * b).collect();
        let fq: Vec<f64> = f.iter().zip(&pushed_q).map(|(a, b)| a * b).collect();
        out.push(chain.chain.integrate(n, &fg) - chain.chain.integrate(n, &fq) * mu_g);
        if n == n_max as i64 {
            break;
        }
        let s = path.get(n);
        let lam = chain.chain.lambda(n);
        op.apply(n, s, &pushed_g, &mut buf);
        pushed_g.iter_mut().zip(&buf).for_each(|(p, b)| *p = b / lam);
        op.apply(n, s, &pushed_q, &mut buf);
        pushed_q.iter_mut().zip(&buf).for_each(|(p, b)| *p = b / lam);
    }
    Ok(out)
}

/// Least-squares slope of `log|c_n|` against `n` over `range`.
pub fn log_decay_slope(series: &[f64], range: std::ops::RangeInclusive<usize>) -> f64 {
    let pts: Vec<(f64, f64)> = range.filter(|&n| n < series.len()).map(|n| (n as f64, series[n].abs().ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{sample_path, BaseProcess};
    use approx::assert_abs_diff_eq;

    fn h_cantor() -> f64 {
        4f64.ln() / 12f64.ln()
    }

    #[test]
    fn cantor_lambdas_are_exact() {
        let f = FiberFamily::cantor();
        let path = sample_path(&BaseProcess::periodic(vec![0, 1]).unwrap(), 4, 0, 0).unwrap();
        let tr = lambda_trace(&f, &path, &Potential::geometric(h_cantor()), 4, &TransferOptions::default()).unwrap();
        assert!(tr.exact && tr.converged);
        let a = 2f64.ln() - h_cantor() * 3f64.ln();
        assert_abs_diff_eq!(tr.estimates[0].ln(), a, epsilon = 1e-14);
        assert_abs_diff_eq!(tr.estimates[1].ln(), -a, epsilon = 1e-14);
        assert_abs_diff_eq!(a, 0.0802468847007215, epsilon = 1e-15);
    }

    #[test]
    fn zero_potential_gives_degree() {
        for f in [FiberFamily::cantor(), FiberFamily::mean_example(), FiberFamily::warped(0.4).unwrap()] {
            let path = sample_path(&BaseProcess::iid(vec![0.5, 0.5]).unwrap(), 6, 0, 2).unwrap();
            let tr = lambda_trace(&f, &path, &Potential::zero(&f), 6, &TransferOptions::default()).unwrap();
            for l in tr.estimates {
                assert_eq!(l, 2.0);
            }
        }
    }

    #[test]
    fn chain_agrees_with_exact_and_tree_values() {
        let opts = TransferOptions::default();
        let f = FiberFamily::cantor();
        let path = sample_path(&BaseProcess::iid(vec![0.5, 0.5]).unwrap(), 8, 0, 5).unwrap();
        let pot = Potential::geometric(0.7);
        let op = GridOperator::new(&f, &pot, 513).unwrap();
        let c = converged_chain(&op, &path, 0, 8, 0.5, 1e-12, 4, 64, 0..0).unwrap();
        for j in 0..8 {
            let exact = 2.0 * f.expansion_floor(path.get(j)).powf(-0.7);
            assert_abs_diff_eq!(c.chain.lambda(j), exact, epsilon = 1e-12);
        }

        let w = FiberFamily::warped(0.6).unwrap();
        let pot = Potential::geometric(0.9);
        let grid = lambda_trace(&w, &path, &pot, 3, &opts).unwrap();
        assert!(grid.converged && !grid.exact);
        let tree = tree_lambdas(&w, &path, &pot, 0, 3, &TransferOptions { min_depth: 4, tree_depth_cap: 16, tol: 1e-9, ..opts }).unwrap();
        for (g, t) in grid.estimates.iter().zip(&tree.estimates) {
            assert!((g.ln() - t.ln()).abs() < 1e-5, "{g} vs {t}");
        }
    }

    #[test]
    fn polynomial_lambdas_use_trees() {
        let f = FiberFamily::quadratic(2, vec![Complex64::new(0.0, 0.0)]).unwrap();
        let path = sample_path(&BaseProcess::deterministic(0), 4, 0, 0).unwrap();
        let tr = lambda_trace(&f, &path, &Potential::geometric(1.0), 2, &TransferOptions { tree_depth_cap: 12, ..Default::default() }).unwrap();
        for l in tr.estimates {
            assert_abs_diff_eq!(l, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn density_is_one_for_branch_constant_affine_data() {
        let f = FiberFamily::cantor();
        let path = sample_path(&BaseProcess::iid(vec![0.5, 0.5]).unwrap(), 4, 40, 9).unwrap();
        let q = invariant_density(&f, &path, &Potential::geometric(0.3), 20, &TransferOptions::default()).unwrap();
        for v in q.values() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn density_matches_power_iteration_on_a_single_map() {
        let w = FiberFamily::warped(0.8).unwrap();
        let pot = Potential::geometric(1.0);
        let opts = TransferOptions { grid: 257, ..Default::default() };
        let path = sample_path(&BaseProcess::deterministic(0), 4, 0, 0).unwrap();
        let q = invariant_density(&w, &path, &pot, 400, &opts).unwrap();

        let op = GridOperator::new(&w, &pot, 257).unwrap();
        let mut v = vec![1.0; 257];
        let mut buf = vec![0.0; 257];
        for _ in 0..200 {
            op.apply(0, 0, &v, &mut buf);
            let m = buf.iter().copied().fold(0.0, f64::max);
            v.iter_mut().zip(&buf).for_each(|(a, b)| *a = b / m);
        }
        // compare shapes: q / q(0) against the dominant eigenfunction
        let qv = q.values();
        for i in (0..257).step_by(16) {
            assert!((qv[i] / qv[0] - v[i] / v[0]).abs() < 5e-3, "node {i}: {} vs {}", qv[i] / qv[0], v[i] / v[0]);
        }
    }

    #[test]
    fn short_cesaro_horizons() {
        let w = FiberFamily::warped(0.8).unwrap();
        let pot = Potential::geometric(1.0);
        let opts = TransferOptions { grid: 129, ..Default::default() };
        let path = sample_path(&BaseProcess::iid(vec![0.5, 0.5]).unwrap(), 4, 4, 1).unwrap();
        let q1 = invariant_density(&w, &path, &pot, 1, &opts).unwrap();
        let first = q1.values()[0];
        assert!(q1.values().iter().all(|v| (v - first).abs() < 1e-12));

        let q2 = invariant_density(&w, &path, &pot, 2, &opts).unwrap().values();
        let op = GridOperator::new(&w, &pot, 129).unwrap();
        let mut l1 = vec![0.0; 129];
        op.apply(-1, path.get(-1), &[1.0; 129], &mut l1);
        // q2 ∝ 1 + L1/λ is an affine function of L1 with positive slope
        let slope = (q2[64] - q2[0]) / (l1[64] - l1[0]);
        assert!(slope > 0.0);
        for i in 0..129 {
            assert!((q2[i] - q2[0] - slope * (l1[i] - l1[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_operator_fixes_one() {
        // the Cesàro average leaves an O(1/n_back) defect in L̂1 = 1
        let w = FiberFamily::warped(0.5).unwrap();
        let pot = Potential::geometric(0.8);
        let path = sample_path(&BaseProcess::iid(vec![0.5, 0.5]).unwrap(), 4, 700, 11).unwrap();
        let defect = |n_back| {
            let one = normalized_image_of_one(&w, &path, &pot, n_back, &TransferOptions::default()).unwrap();
            one.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (defect(60), defect(600));
        assert!(fine < 1e-3, "{fine}");
        assert!(fine < coarse / 5.0, "{coarse} -> {fine}");
    }

    #[test]
    fn distortion_on_branch_constant_data_is_zero() {
        let f = FiberFamily::cantor();
        let path = sample_path(&BaseProcess::iid(vec![0.5, 0.5]).unwrap(), 8, 0, 4).unwrap();
        let probes = [(0.1, 0.9), (0.2, 0.25), (0.0, 1.0)];
        let r = distortion_check(&f, &path, &Potential::geometric(0.6), 8, &probes).unwrap();
        assert_eq!(r.max_log_ratio, 0.0);
        assert_eq!(r.budget, 0.0);
        assert!(!r.violated);
        let r0 = distortion_check(&f, &path, &Potential::geometric(0.6), 0, &probes).unwrap();
        assert_eq!(r0.max_log_ratio, 0.0);
    }

    #[test]
    fn distortion_within_budget_for_warped_maps() {
        let w = FiberFamily::warped(0.7).unwrap();
        let path = sample_path(&BaseProcess::iid(vec![0.5, 0.5]).unwrap(), 10, 0, 8).unwrap();
        let probes: Vec<(f64, f64)> = (0..9).map(|k| (0.05 + 0.1 * k as f64, 0.95 - 0.07 * k as f64)).collect();
        let r = distortion_check(&w, &path, &Potential::geometric(1.2), 10, &probes).unwrap();
        assert!(r.pairs_checked > 0);
        assert!(r.max_log_ratio > 0.0);
        assert!(!r.violated, "{r:?}");
    }

    #[test]
    fn correlations() {
        let f = FiberFamily::cantor();
        let path = sample_path(&BaseProcess::iid(vec![0.5, 0.5]).unwrap(), 16, 40, 3).unwrap();
        let opts = TransferOptions::default();
        let pot = Potential::geometric(h_cantor());
        let id = FiberFunction::from_fn(opts.grid, |y| y).unwrap();
        let c = FiberFunction::constant(opts.grid, 2.5).unwrap();
        for v in correlation_series(&f, &path, &pot, &id, &c, 12, &opts).unwrap() {
            assert!(v.abs() < 1e-10);
        }
        let corr = correlation_series(&f, &path, &pot, &id, &id, 12, &opts).unwrap();
        assert!(corr[0] > 0.0);
        let slope = log_decay_slope(&corr, 2..=12);
        assert!(slope <= -0.1, "slope {slope}");
    }
}
