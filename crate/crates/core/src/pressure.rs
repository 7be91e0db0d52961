//! Fiber pressure traces, expected pressure and Bowen's equation.

use rayon::prelude::*;
use serde::Serialize;

use crate::base::{sample_invariant_path, sample_seeds, BaseProcess, RunningStats, SymbolPath};
use crate::error::{Error, Result};
use crate::fibers::FiberFamily;
use crate::transfer::{lambda_trace, FiberPressure, LambdaTrace, Potential, TransferOptions};

/// `P_{x_j} = log λ̂_{x_j}` along a path, with prefix sums `S_nP`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PressureTrace {
    pub values: Vec<f64>,
    /// `partial_sums[k] = S_{k+1}P_x`.
    pub partial_sums: Vec<f64>,
    pub depth: usize,
    pub tolerance: f64,
    pub residual: f64,
    pub exact: bool,
    /// First index whose `λ̂` did not converge; the trace stops there.
    pub failure: Option<usize>,
}

impl PressureTrace {
    pub fn from_lambdas(trace: &LambdaTrace, tolerance: f64) -> Self {
        let failure = if trace.exact { None } else { trace.first_unconverged(tolerance) };
        let len = failure.unwrap_or(trace.estimates.len());
        let values: Vec<f64> = trace.estimates[..len].iter().map(|l| l.ln()).collect();
        let partial_sums = values
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        PressureTrace {
            values,
            partial_sums,
            depth: trace.depth,
            tolerance,
            residual: trace.residual,
            exact: trace.exact,
            failure,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `S_nP_x`.
    pub fn sum(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.partial_sums[n - 1]
        }
    }

    /// `S_nP_{θ^k x}`.
    pub fn sum_from(&self, k: usize, n: usize) -> f64 {
        self.values[k..k + n].iter().sum()
    }

    /// Per-step pressures as a fiber-pressure reference for multifractal potentials.
    pub fn as_fiber_pressure(&self) -> FiberPressure {
        FiberPressure::Trace { start: 0, values: std::sync::Arc::new(self.values.clone()) }
    }
}

pub fn pressure_trace(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    n: usize,
    opts: &TransferOptions,
) -> Result<PressureTrace> {
    let lt = lambda_trace(family, path, potential, n, opts)?;
    Ok(PressureTrace::from_lambdas(&lt, opts.tol))
}

/// Monte-Carlo sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarlo {
    pub n_steps: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo { n_steps: 200, n_samples: 200, seed: 1 }
    }
}

impl MonteCarlo {
    fn validate(&self) -> Result<()> {
        if self.n_steps < 10 {
            return Err(Error::Config(format!("n_steps must be at least 10, got {}", self.n_steps)));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    /// `Σ_a m(a) log λ_a` in closed form.
    Exact,
    /// Mean of `S_nP/n` over independent paths.
    MonteCarlo,
    /// Differenced inverse-tree sums.
    InverseTree,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedPressureEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_steps: usize,
    pub n_samples: usize,
    /// Samples dropped because `λ̂` did not converge.
    pub failures: usize,
    pub method: EstimateMethod,
    pub potential: String,
}

/// `E P(φ)` as the mean of `S_nP/n` over independent sample paths.
pub fn expected_pressure(
    family: &FiberFamily,
    process: &BaseProcess,
    potential: &Potential,
    mc: &MonteCarlo,
    opts: &TransferOptions,
) -> Result<ExpectedPressureEstimate> {
    let label = potential.describe();
    expected_pressure_with(family, process, mc, opts, &label, |_| Ok(potential.clone()))
}

/// Monte-Carlo expected pressure where the potential may depend on the sampled path.
pub(crate) fn expected_pressure_with<F>(
    family: &FiberFamily,
    process: &BaseProcess,
    mc: &MonteCarlo,
    opts: &TransferOptions,
    label: &str,
    build: F,
) -> Result<ExpectedPressureEstimate>
where
    F: Fn(&SymbolPath) -> Result<Potential> + Sync,
{
    mc.validate()?;
    process.validate()?;
    if process.alphabet_size() > family.num_symbols() {
        return Err(Error::Config(format!(
            "process uses {} symbols, family has {}",
            process.alphabet_size(),
            family.num_symbols()
        )));
    }
    if !family.is_interval() {
        let build = &build;
        return crate::julia::tree_expected_pressure(family, process, mc, opts.tree_depth_cap, label, |path| build(path));
    }
    let seeds = sample_seeds(mc.seed, mc.n_samples);
    let per_sample: Vec<Result<Option<RunningStats>>> = seeds
        .par_iter()
        .map(|&s| {
            let path = sample_invariant_path(process, mc.n_steps, 0, s)?;
            let pot = build(&path)?;
            let trace = pressure_trace(family, &path, &pot, mc.n_steps, opts)?;
            if trace.failure.is_some() {
                return Ok(None);
            }
            let mut st = RunningStats::new();
            trace.values.iter().for_each(|v| st.push(*v));
            Ok(Some(st))
        })
        .collect();
    let mut stats = RunningStats::new();
    let mut failures = 0;
    for r in per_sample {
        match r? {
            Some(st) => stats.push(st.mean),
            None => failures += 1,
        }
    }
    if stats.count == 0 {
        return Err(Error::Convergence(format!("all {failures} samples failed to converge")));
    }
    Ok(ExpectedPressureEstimate {
        value: stats.mean,
        stderr: stats.stderr(),
        n_steps: mc.n_steps,
        n_samples: stats.count as usize,
        failures,
        method: EstimateMethod::MonteCarlo,
        potential: label.to_string(),
    })
}

/// `Σ_a m(a) log Σ_b e^{φ_{a,b}}` when the potential is branch-constant on
/// constant-derivative branches and its fiber offsets depend only on `x_0`.
pub fn exact_expected_pressure(family: &FiberFamily, process: &BaseProcess, potential: &Potential) -> Option<f64> {
    if !potential.is_symbol_local() || potential.validate(family).is_err() || process.validate().is_err() {
        return None;
    }
    let marginal = process.marginal();
    if marginal.len() > family.num_symbols() {
        return None;
    }
    let mut total = 0.0;
    for (a, &p) in marginal.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let vals = potential.branch_values(family, 0, a as u32)?;
        total += p * crate::transfer::log_sum_exp(&vals);
    }
    Some(total)
}

/// Exact value when available, otherwise a sampled estimate.
pub fn best_expected_pressure(
    family: &FiberFamily,
    process: &BaseProcess,
    potential: &Potential,
    mc: &MonteCarlo,
    opts: &TransferOptions,
) -> Result<ExpectedPressureEstimate> {
    match exact_expected_pressure(family, process, potential) {
        Some(value) => Ok(ExpectedPressureEstimate {
            value,
            stderr: 0.0,
            n_steps: 1,
            n_samples: 1,
            failures: 0,
            method: EstimateMethod::Exact,
            potential: potential.describe(),
        }),
        None => expected_pressure(family, process, potential, mc, opts),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BowenOptions {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Requested precision; defaults to `1e-4`.
    pub tol_t: Option<f64>,
    pub mc: MonteCarlo,
    pub transfer: TransferOptions,
    pub max_iterations: usize,
}

impl Default for BowenOptions {
    fn default() -> Self {
        BowenOptions {
            t_lo: 0.0,
            t_hi: 1.0,
            tol_t: None,
            mc: MonteCarlo::default(),
            transfer: TransferOptions::default(),
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BowenResult {
    pub h: f64,
    pub bracket: (f64, f64),
    pub pressure_lo: ExpectedPressureEstimate,
    pub pressure_hi: ExpectedPressureEstimate,
    /// Precision actually targeted.
    pub tolerance: f64,
    /// Sampling noise, not bisection, limits the precision.
    pub tolerance_limited: bool,
    pub method: EstimateMethod,
    pub iterations: usize,
}

/// The zero of `t ↦ E P(−t log|T'|)` by bisection.
pub fn bowen_dimension(family: &FiberFamily, process: &BaseProcess, opts: &BowenOptions) -> Result<BowenResult> {
    if !family.is_interval() {
        return crate::julia::julia_bowen(family, process, opts);
    }
    let eval = |t: f64| best_expected_pressure(family, process, &Potential::geometric(t), &opts.mc, &opts.transfer);
    bisect_root(eval, opts, family.ambient_dimension())
}

/// Bisection for a decreasing function of `t` with sign checks and
/// automatic bracket expansion inside `[0, 2·dim]`.
pub(crate) fn bisect_root<F>(eval: F, opts: &BowenOptions, dim: f64) -> Result<BowenResult>
where
    F: Fn(f64) -> Result<ExpectedPressureEstimate>,
{
    bisect_decreasing(eval, opts, (0.0, 2.0 * dim))
}

/// Bisection for the zero of a decreasing function, expanding the bracket
/// outward (doubling its width) within `limits`.
pub(crate) fn bisect_decreasing<F>(eval: F, opts: &BowenOptions, limits: (f64, f64)) -> Result<BowenResult>
where
    F: Fn(f64) -> Result<ExpectedPressureEstimate>,
{
    let requested = opts.tol_t.unwrap_or(1e-4);
    if !(requested > 0.0) || !(opts.t_lo < opts.t_hi) {
        return Err(Error::Config("need tol_t > 0 and t_lo < t_hi".into()));
    }
    let (mut lo, mut hi) = (opts.t_lo.max(limits.0), opts.t_hi.min(limits.1));
    if !(lo < hi) {
        return Err(Error::Config(format!("bracket [{}, {}] lies outside [{}, {}]", opts.t_lo, opts.t_hi, limits.0, limits.1)));
    }
    let mut p_lo = eval(lo)?;
    let mut p_hi = eval(hi)?;
    let mut width = hi - lo;
    while !(p_lo.value > 0.0) && lo > limits.0 {
        hi = lo;
        p_hi = p_lo;
        lo = (lo - width).max(limits.0);
        width *= 2.0;
        p_lo = eval(lo)?;
    }
    while !(p_hi.value < 0.0) && hi < limits.1 {
        lo = hi;
        p_lo = p_hi;
        hi = (hi + width).min(limits.1);
        width *= 2.0;
        p_hi = eval(hi)?;
    }
    if !(p_lo.value > 0.0 && p_hi.value < 0.0) {
        return Err(Error::NoZero { t_lo: lo, t_hi: hi });
    }
    let slope = (p_hi.value - p_lo.value) / (hi - lo);
    let noise = 3.0 * p_lo.stderr.max(p_hi.stderr) / slope.abs();
    let tolerance = requested.max(noise);
    let mut iterations = 0;
    while hi - lo >= tolerance && iterations < opts.max_iterations {
        let mid = 0.5 * (lo + hi);
        let p = eval(mid)?;
        if p.value > 0.0 {
            lo = mid;
            p_lo = p;
        } else {
            hi = mid;
            p_hi = p;
        }
        iterations += 1;
    }
    let method = p_lo.method;
    Ok(BowenResult {
        h: 0.5 * (lo + hi),
        bracket: (lo, hi),
        pressure_lo: p_lo,
        pressure_hi: p_hi,
        tolerance,
        tolerance_limited: noise > requested,
        method,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPressure {
    pub q: f64,
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub points: Vec<GridPressure>,
    pub triples_checked: usize,
    /// Largest excess of a middle value over the chord, beyond the 3σ allowance (≤ 0 when none).
    pub max_violation: f64,
    /// Smallest chord-minus-middle gap over all triples.
    pub min_margin: f64,
    pub violated: bool,
    /// Second differences along `t` for each `q`, `d2[i][j]` centered at `t_{j+1}`.
    pub second_differences_t: Vec<Vec<f64>>,
    pub degenerate: bool,
}

/// Midpoint-type convexity of `(q, t) ↦ E P(qφ − t log|T'|)` on a grid:
/// along `q`, along `t` and along the diagonal.
pub fn pressure_convexity_probe(
    family: &FiberFamily,
    process: &BaseProcess,
    base: &Potential,
    q_grid: &[f64],
    t_grid: &[f64],
    mc: &MonteCarlo,
    opts: &TransferOptions,
) -> Result<ConvexityReport> {
    let mut points = Vec::with_capacity(q_grid.len() * t_grid.len());
    let zero = FiberPressure::PerSymbol(vec![0.0; family.num_symbols()]);
    for &q in q_grid {
        for &t in t_grid {
            let pot = Potential::multifractal(base.clone(), q, t, zero.clone());
            let est = best_expected_pressure(family, process, &pot, mc, opts)?;
            points.push(GridPressure { q, t, value: est.value, stderr: est.stderr });
        }
    }
    let nt = t_grid.len();
    let at = |i: usize, j: usize| &points[i * nt + j];
    let mut report = ConvexityReport {
        points: Vec::new(),
        triples_checked: 0,
        max_violation: f64::NEG_INFINITY,
        min_margin: f64::INFINITY,
        violated: false,
        second_differences_t: Vec::new(),
        degenerate: q_grid.len() < 3 && t_grid.len() < 3,
    };
    let mut check = |a: &GridPressure, b: &GridPressure, c: &GridPressure, s: f64| {
        // b sits at fraction s of the way from a to c
        let chord = (1.0 - s) * a.value + s * c.value;
        let sigma = (b.stderr.powi(2) + ((1.0 - s) * a.stderr).powi(2) + (s * c.stderr).powi(2)).sqrt();
        let gap = chord - b.value;
        report.triples_checked += 1;
        report.min_margin = report.min_margin.min(gap);
        let excess = -gap - 3.0 * sigma - 1e-12;
        report.max_violation = report.max_violation.max(excess);
        if excess > 0.0 {
            report.violated = true;
        }
    };
    let frac = |x0: f64, x1: f64, x2: f64| (x1 - x0) / (x2 - x0);
    for i in 0..q_grid.len() {
        for j in 0..nt {
            if j + 2 < nt {
                check(at(i, j), at(i, j + 1), at(i, j + 2), frac(t_grid[j], t_grid[j + 1], t_grid[j + 2]));
            }
            if i + 2 < q_grid.len() {
                check(at(i, j), at(i + 1, j), at(i + 2, j), frac(q_grid[i], q_grid[i + 1], q_grid[i + 2]));
            }
            if i + 2 < q_grid.len() && j + 2 < nt {
                let sq = frac(q_grid[i], q_grid[i + 1], q_grid[i + 2]);
                let st = frac(t_grid[j], t_grid[j + 1], t_grid[j + 2]);
                if (sq - st).abs() < 1e-12 {
                    check(at(i, j), at(i + 1, j + 1), at(i + 2, j + 2), sq);
                }
            }
        }
    }
    if report.triples_checked == 0 {
        report.max_violation = 0.0;
        report.min_margin = 0.0;
        report.degenerate = true;
    }
    report.second_differences_t = (0..q_grid.len())
        .map(|i| (0..nt.saturating_sub(2)).map(|j| at(i, j).value - 2.0 * at(i, j + 1).value + at(i, j + 2).value).collect())
        .collect();
    report.points = points;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Largest secant slope between consecutive points.
    pub max_slope: f64,
    /// `−log γ_*`.
    pub slope_bound: f64,
    pub violated: bool,
}

/// `E P(t₁) − E P(t₂) ≥ (t₂ − t₁) log γ_* − 6σ` for consecutive grid points.
pub fn pressure_monotonicity_probe(
    family: &FiberFamily,
    process: &BaseProcess,
    t_grid: &[f64],
    mc: &MonteCarlo,
    opts: &TransferOptions,
) -> Result<MonotonicityReport> {
    let gamma = family.require_uniformly_expanding()?;
    let mut values = Vec::new();
    let mut stderrs = Vec::new();
    for &t in t_grid {
        let e = best_expected_pressure(family, process, &Potential::geometric(t), mc, opts)?;
        values.push(e.value);
        stderrs.push(e.stderr);
    }
    let mut max_slope = f64::NEG_INFINITY;
    let mut violated = false;
    for k in 0..t_grid.len().saturating_sub(1) {
        let dt = t_grid[k + 1] - t_grid[k];
        let drop = values[k] - values[k + 1];
        max_slope = max_slope.max(-drop / dt);
        let sigma = (stderrs[k].powi(2) + stderrs[k + 1].powi(2)).sqrt();
        if drop < dt * gamma.ln() - 6.0 * sigma - 1e-12 {
            violated = true;
        }
    }
    Ok(MonotonicityReport { t: t_grid.to_vec(), values, stderrs, max_slope, slope_bound: -gamma.ln(), violated })
}
