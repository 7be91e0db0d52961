//! The temperature function `T(q)`, the zero in `t` of
//! `E P(q(φ − P_x(φ)) − t log|T'|)`, and its Legendre transform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::base::{sample_invariant_path, sample_seeds, BaseProcess, RunningStats, SymbolPath};
use crate::error::{Error, Result};
use crate::fibers::FiberFamily;
use crate::pressure::{
    best_expected_pressure, bisect_decreasing, exact_expected_pressure, expected_pressure_with, pressure_trace, BowenOptions,
    EstimateMethod, ExpectedPressureEstimate, MonteCarlo,
};
use crate::transfer::{log_sum_exp, FiberPressure, Potential, TransferOptions};

const T_LIMITS: (f64, f64) = (-100.0, 100.0);

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureOptions {
    pub t_lo: f64,
    pub t_hi: f64,
    pub tol: f64,
    /// Step of the central differences for `T'`.
    pub dq: f64,
    pub mc: MonteCarlo,
    pub transfer: TransferOptions,
}

impl Default for TemperatureOptions {
    fn default() -> Self {
        TemperatureOptions { t_lo: -1.0, t_hi: 2.0, tol: 1e-10, dq: 1e-2, mc: MonteCarlo::default(), transfer: TransferOptions::default() }
    }
}

/// Default grid `q = −4, −3.75, …, 4`.
pub fn default_q_grid() -> Vec<f64> {
    (0..=32).map(|k| -4.0 + 0.25 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemperaturePoint {
    pub q: f64,
    pub t: f64,
    pub bracket: (f64, f64),
    pub tolerance: f64,
    pub method: EstimateMethod,
}

/// `P_x(φ)` per symbol when it is available in closed form.
fn exact_fiber_pressure(family: &FiberFamily, base: &Potential) -> Option<FiberPressure> {
    if !base.is_symbol_local() {
        return None;
    }
    (0..family.num_symbols() as u32)
        .map(|s| base.branch_values(family, 0, s).map(|v| log_sum_exp(&v)))
        .collect::<Option<Vec<f64>>>()
        .map(FiberPressure::PerSymbol)
}

/// Evaluates `E P(φ_{q,t})` for one base potential.
struct TemperatureProblem<'a> {
    family: &'a FiberFamily,
    process: &'a BaseProcess,
    base: &'a Potential,
    fiber_pressure: Option<FiberPressure>,
    opts: &'a TemperatureOptions,
}

impl<'a> TemperatureProblem<'a> {
    fn new(family: &'a FiberFamily, process: &'a BaseProcess, base: &'a Potential, opts: &'a TemperatureOptions) -> Result<Self> {
        base.validate(family)?;
        let fiber_pressure = exact_fiber_pressure(family, base);
        let problem = TemperatureProblem { family, process, base, fiber_pressure, opts };
        let ep = best_expected_pressure(family, process, base, &opts.mc, &opts.transfer)?;
        if ep.value.abs() > 3.0 * ep.stderr + 1e-10 {
            return Err(Error::NotNormalized { value: ep.value, stderr: ep.stderr });
        }
        Ok(problem)
    }

    /// Base fiber pressures along a sampled path, long enough for every
    /// position the transfer computations touch.
    fn path_pressure(&self, path: &SymbolPath) -> Result<FiberPressure> {
        let n = self.opts.mc.n_steps + self.opts.transfer.max_depth + self.opts.transfer.tree_depth_cap + 1;
        let tr = pressure_trace(self.family, path, self.base, n, &self.opts.transfer)?;
        if let Some(i) = tr.failure {
            return Err(Error::Convergence(format!("base pressure did not converge at step {i}")));
        }
        Ok(tr.as_fiber_pressure())
    }

    fn pressure(&self, q: f64, t: f64) -> Result<ExpectedPressureEstimate> {
        match &self.fiber_pressure {
            Some(fp) => {
                let pot = Potential::multifractal(self.base.clone(), q, t, fp.clone());
                best_expected_pressure(self.family, self.process, &pot, &self.opts.mc, &self.opts.transfer)
            }
            None => {
                let label = format!("multifractal(q={q}, t={t}, {})", self.base.describe());
                expected_pressure_with(self.family, self.process, &self.opts.mc, &self.opts.transfer, &label, |path| {
                    Ok(Potential::multifractal(self.base.clone(), q, t, self.path_pressure(path)?))
                })
            }
        }
    }

    fn potential(&self, q: f64, t: f64) -> Option<Potential> {
        self.fiber_pressure.as_ref().map(|fp| Potential::multifractal(self.base.clone(), q, t, fp.clone()))
    }

    fn temperature(&self, q: f64) -> Result<TemperaturePoint> {
        let bowen = BowenOptions {
            t_lo: self.opts.t_lo,
            t_hi: self.opts.t_hi,
            tol_t: Some(self.opts.tol),
            mc: self.opts.mc,
            transfer: self.opts.transfer.clone(),
            max_iterations: 200,
        };
        let r = bisect_decreasing(|t| self.pressure(q, t), &bowen, T_LIMITS)?;
        Ok(TemperaturePoint { q, t: r.h, bracket: r.bracket, tolerance: r.tolerance, method: r.method })
    }
}

/// `T(q)` for a base potential with `E P(φ) = 0`.
pub fn temperature(
    family: &FiberFamily,
    process: &BaseProcess,
    base: &Potential,
    q: f64,
    opts: &TemperatureOptions,
) -> Result<TemperaturePoint> {
    TemperatureProblem::new(family, process, base, opts)?.temperature(q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemperatureCurve {
    pub q: Vec<f64>,
    pub t: Vec<f64>,
    /// Central-difference `T'(q)`.
    pub slope: Vec<f64>,
    /// Error bound of each slope from the root tolerances.
    pub slope_error: Vec<f64>,
    pub points: Vec<TemperaturePoint>,
    pub base: String,
    pub dq: f64,
}

impl TemperatureCurve {
    /// Largest violation of midpoint-type convexity over consecutive triples,
    /// beyond three root tolerances; ≤ 0 when convex.
    pub fn convexity_violation(&self) -> (f64, f64) {
        let mut worst = (f64::NEG_INFINITY, f64::NAN);
        for i in 1..self.q.len().saturating_sub(1) {
            let s = (self.q[i] - self.q[i - 1]) / (self.q[i + 1] - self.q[i - 1]);
            let chord = (1.0 - s) * self.t[i - 1] + s * self.t[i + 1];
            let tol = 3.0 * self.points[i - 1].tolerance.max(self.points[i].tolerance).max(self.points[i + 1].tolerance);
            let excess = self.t[i] - chord - tol;
            if excess > worst.0 {
                worst = (excess, self.q[i]);
            }
        }
        if worst.0 == f64::NEG_INFINITY {
            (0.0, f64::NAN)
        } else {
            worst
        }
    }
}

pub fn temperature_curve(
    family: &FiberFamily,
    process: &BaseProcess,
    base: &Potential,
    q_grid: &[f64],
    opts: &TemperatureOptions,
) -> Result<TemperatureCurve> {
    if q_grid.is_empty() || q_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("q grid must be non-empty and strictly increasing".into()));
    }
    let problem = TemperatureProblem::new(family, process, base, opts)?;
    let rows = q_grid
        .par_iter()
        .map(|&q| {
            let mid = problem.temperature(q)?;
            let left = problem.temperature(q - opts.dq)?;
            let right = problem.temperature(q + opts.dq)?;
            let slope = (right.t - left.t) / (2.0 * opts.dq);
            let err = (right.tolerance + left.tolerance) / (2.0 * opts.dq);
            Ok((mid, slope, err))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TemperatureCurve {
        q: q_grid.to_vec(),
        t: rows.iter().map(|r| r.0.t).collect(),
        slope: rows.iter().map(|r| r.1).collect(),
        slope_error: rows.iter().map(|r| r.2).collect(),
        points: rows.into_iter().map(|r| r.0).collect(),
        base: base.describe(),
        dq: opts.dq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMethod {
    FiniteDifference,
    /// `∫(φ − P) dμ_q / ∫ log|T'| dμ_q` from sampled Gibbs cylinders.
    GibbsRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeEstimate {
    pub q: f64,
    pub value: f64,
    pub stderr: f64,
    pub method: DerivativeMethod,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSampling {
    /// Cylinder depth.
    pub depth: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for RatioSampling {
    fn default() -> Self {
        RatioSampling { depth: 14, n_samples: 4000, seed: 1 }
    }
}

pub fn temperature_derivative(
    family: &FiberFamily,
    process: &BaseProcess,
    base: &Potential,
    q: f64,
    method: DerivativeMethod,
    opts: &TemperatureOptions,
    sampling: &RatioSampling,
) -> Result<DerivativeEstimate> {
    let problem = TemperatureProblem::new(family, process, base, opts)?;
    match method {
        DerivativeMethod::FiniteDifference => {
            let left = problem.temperature(q - opts.dq)?;
            let right = problem.temperature(q + opts.dq)?;
            Ok(DerivativeEstimate {
                q,
                value: (right.t - left.t) / (2.0 * opts.dq),
                stderr: (right.tolerance + left.tolerance) / (2.0 * opts.dq),
                method,
            })
        }
        DerivativeMethod::GibbsRatio => gibbs_ratio(&problem, q, sampling),
    }
}

fn gibbs_ratio(problem: &TemperatureProblem, q: f64, sampling: &RatioSampling) -> Result<DerivativeEstimate> {
    let family = problem.family;
    let tq = problem.temperature(q)?.t;
    let pot = problem
        .potential(q, tq)
        .ok_or_else(|| Error::Unsupported("the ratio method needs branch-constant data on constant-derivative branches".into()))?;
    let fp = problem.fiber_pressure.as_ref().expect("exact fiber pressure");
    let tables: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..family.num_symbols() as u32)
        .map(|s| {
            let w = pot.branch_values(family, 0, s).ok_or_else(|| Error::Unsupported("potential is not branch-constant".into()))?;
            let norm = log_sum_exp(&w);
            let probs: Vec<f64> = w.iter().map(|v| (v - norm).exp()).collect();
            let phi: Vec<f64> = problem
                .base
                .branch_values(family, 0, s)
                .expect("base is branch-constant")
                .iter()
                .map(|v| v - fp.at(0, s))
                .collect();
            let logd: Vec<f64> = family.branches(s).iter().map(|b| b.derivative(b.domain().0).ln()).collect();
            Ok((probs, phi, logd))
        })
        .collect::<Result<_>>()?;
    if sampling.depth == 0 || sampling.n_samples < 2 {
        return Err(Error::Config("ratio sampling needs depth >= 1 and at least 2 samples".into()));
    }
    let pairs: Vec<(f64, f64)> = sample_seeds(sampling.seed, sampling.n_samples)
        .par_iter()
        .map(|&s| {
            let path = sample_invariant_path(problem.process, sampling.depth, 0, s)?;
            let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x9e37_79b9_7f4a_7c15);
            let (mut a, mut b) = (0.0, 0.0);
            for j in 0..sampling.depth as i64 {
                let (probs, phi, logd) = &tables[path.get(j) as usize];
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut k = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                a += phi[k];
                b += logd[k];
            }
            let n = sampling.depth as f64;
            Ok((a / n, b / n))
        })
        .collect::<Result<_>>()?;
    let (mut sa, mut sb) = (RunningStats::new(), RunningStats::new());
    let mut cov = 0.0;
    for &(a, b) in &pairs {
        sa.push(a);
        sb.push(b);
    }
    for &(a, b) in &pairs {
        cov += (a - sa.mean) * (b - sb.mean);
    }
    let n = pairs.len() as f64;
    cov /= n - 1.0;
    if !(sb.mean > 0.0) {
        return Err(Error::Convergence(format!("non-positive Lyapunov average {}", sb.mean)));
    }
    let r = sa.mean / sb.mean;
    let var = (sa.variance() - 2.0 * r * cov + r * r * sb.variance()) / (sb.mean * sb.mean * n);
    Ok(DerivativeEstimate { q, value: r, stderr: var.max(0.0).sqrt(), method: DerivativeMethod::GibbsRatio })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeCrossCheck {
    pub finite_difference: DerivativeEstimate,
    pub ratio: DerivativeEstimate,
    pub combined: f64,
    /// Within three combined standard errors.
    pub agree: bool,
    /// Disagreement beyond five combined errors.
    pub flagged: bool,
}

pub fn derivative_cross_check(
    family: &FiberFamily,
    process: &BaseProcess,
    base: &Potential,
    q: f64,
    opts: &TemperatureOptions,
    sampling: &RatioSampling,
) -> Result<DerivativeCrossCheck> {
    let fd = temperature_derivative(family, process, base, q, DerivativeMethod::FiniteDifference, opts, sampling)?;
    let ratio = temperature_derivative(family, process, base, q, DerivativeMethod::GibbsRatio, opts, sampling)?;
    let combined = (fd.stderr.powi(2) + ratio.stderr.powi(2)).sqrt();
    let gap = (fd.value - ratio.value).abs();
    Ok(DerivativeCrossCheck { finite_difference: fd, ratio, combined, agree: gap <= 3.0 * combined, flagged: gap > 5.0 * combined })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumPoint {
    pub q: f64,
    pub t: f64,
    pub alpha: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumResult {
    pub points: Vec<SpectrumPoint>,
    /// All `α` coincide: `T` is affine.
    pub collapsed: bool,
    /// `g(α(1)) − α(1)` when `q = 1` is on the grid.
    pub tangency_gap: Option<f64>,
    /// `max g − T(0)` when `q = 0` is on the grid.
    pub peak_gap: Option<f64>,
    pub concave: bool,
    pub method: DerivativeMethod,
}

/// `(α, g) = (−T'(q), qα + T(q))` at every grid point of the curve.
pub fn legendre_spectrum(curve: &TemperatureCurve) -> Result<SpectrumResult> {
    let (violation, at) = curve.convexity_violation();
    if violation > 0.0 {
        return Err(Error::NotConvex { q: at, violation });
    }
    let points: Vec<SpectrumPoint> = curve
        .q
        .iter()
        .zip(&curve.t)
        .zip(&curve.slope)
        .map(|((&q, &t), &s)| SpectrumPoint { q, t, alpha: -s, g: -s * q + t })
        .collect();
    let amax = points.iter().map(|p| p.alpha).fold(f64::NEG_INFINITY, f64::max);
    let amin = points.iter().map(|p| p.alpha).fold(f64::INFINITY, f64::min);
    let err = curve.slope_error.iter().copied().fold(0.0, f64::max);
    let collapsed = amax - amin <= 1e-6 + 2.0 * err;
    let find = |q0: f64| points.iter().find(|p| (p.q - q0).abs() < 1e-12);
    let tangency_gap = find(1.0).map(|p| p.g - p.alpha);
    let gmax = points.iter().map(|p| p.g).fold(f64::NEG_INFINITY, f64::max);
    let peak_gap = find(0.0).map(|p| gmax - p.t);
    // concavity of g over α, with α decreasing along increasing q
    let mut concave = true;
    for w in points.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        if (a.alpha - c.alpha).abs() < 1e-9 {
            continue;
        }
        let s = (b.alpha - a.alpha) / (c.alpha - a.alpha);
        let chord = (1.0 - s) * a.g + s * c.g;
        if b.g < chord - 1e-6 - 4.0 * err * (a.q.abs() + b.q.abs() + c.q.abs() + 1.0) {
            concave = false;
        }
    }
    Ok(SpectrumResult { points, collapsed, tangency_gap, peak_gap, concave, method: DerivativeMethod::FiniteDifference })
}

/// `E P(φ_{q,t})` in closed form, when available.
pub fn exact_multifractal_pressure(family: &FiberFamily, process: &BaseProcess, base: &Potential, q: f64, t: f64) -> Option<f64> {
    let fp = exact_fiber_pressure(family, base)?;
    exact_expected_pressure(family, process, &Potential::multifractal(base.clone(), q, t, fp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn h() -> f64 {
        4f64.ln() / 12f64.ln()
    }

    fn cantor_base(f: &FiberFamily) -> Potential {
        Potential::constant(f, -2f64.ln())
    }

    fn bernoulli() -> Potential {
        Potential::BranchConstant { values: vec![vec![0.3f64.ln(), 0.7f64.ln()]] }
    }

    fn closed(q: f64) -> f64 {
        (0.3f64.powf(q) + 0.7f64.powf(q)).ln() / 2f64.ln()
    }

    #[test]
    fn cantor_temperature_is_linear() {
        let f = FiberFamily::cantor();
        let p = BaseProcess::iid(vec![0.5, 0.5]).unwrap();
        for q in [-2.0, 0.0, 1.0, 2.0] {
            let t = temperature(&f, &p, &cantor_base(&f), q, &TemperatureOptions::default()).unwrap();
            assert_abs_diff_eq!(t.t, (1.0 - q) * h(), epsilon = 1e-8);
        }
    }

    #[test]
    fn doubling_temperature() {
        let f = FiberFamily::doubling();
        let p = BaseProcess::deterministic(0);
        let t2 = temperature(&f, &p, &bernoulli(), 2.0, &TemperatureOptions::default()).unwrap();
        assert_abs_diff_eq!(t2.t, 0.58f64.ln() / 2f64.ln(), epsilon = 1e-8);
        assert_abs_diff_eq!(0.58f64.ln() / 2f64.ln(), -0.7858751946471527, epsilon = 1e-15);
        let t1 = temperature(&f, &p, &bernoulli(), 1.0, &TemperatureOptions::default()).unwrap();
        assert!(t1.t.abs() < 1e-8);
    }

    #[test]
    fn unnormalized_base_is_rejected() {
        let f = FiberFamily::doubling();
        let p = BaseProcess::deterministic(0);
        let bad = Potential::BranchConstant { values: vec![vec![0.0, 0.0]] };
        assert!(matches!(temperature(&f, &p, &bad, 1.0, &TemperatureOptions::default()), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn derivatives_agree() {
        let f = FiberFamily::doubling();
        let p = BaseProcess::deterministic(0);
        let opts = TemperatureOptions::default();
        let fd0 = temperature_derivative(&f, &p, &bernoulli(), 0.0, DerivativeMethod::FiniteDifference, &opts, &RatioSampling::default()).unwrap();
        let exact0 = (0.3f64.ln() + 0.7f64.ln()) / (2.0 * 2f64.ln());
        assert_abs_diff_eq!(exact0, -1.1257693834979823, epsilon = 1e-15);
        assert_abs_diff_eq!(fd0.value, exact0, epsilon = 1e-4);
        let exact1 = (0.3 * 0.3f64.ln() + 0.7 * 0.7f64.ln()) / 2f64.ln();
        assert_abs_diff_eq!(exact1, -0.8812908992306927, epsilon = 1e-15);
        let cc = derivative_cross_check(&f, &p, &bernoulli(), 1.0, &opts, &RatioSampling { n_samples: 2000, ..Default::default() }).unwrap();
        assert!(cc.agree, "{cc:?}");
        assert!(cc.ratio.value < 0.0 && cc.finite_difference.value < 0.0);
        assert!((cc.ratio.value - exact1).abs() < 4.0 * cc.ratio.stderr);
    }

    #[test]
    fn ratio_method_needs_branch_constant_data() {
        let f = FiberFamily::warped(0.3).unwrap();
        let p = BaseProcess::deterministic(0);
        let base = Potential::Shifted { base: Box::new(Potential::geometric(1.0)), shifts: vec![0.0, 0.0] };
        let opts = TemperatureOptions { mc: MonteCarlo { n_steps: 10, n_samples: 2, seed: 1 }, tol: 1e-3, transfer: TransferOptions { grid: 65, ..Default::default() }, ..Default::default() };
        let r = temperature_derivative(&f, &p, &base, 0.5, DerivativeMethod::GibbsRatio, &opts, &RatioSampling::default());
        assert!(matches!(r, Err(Error::Unsupported(_)) | Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn doubling_spectrum() {
        let f = FiberFamily::doubling();
        let p = BaseProcess::deterministic(0);
        let grid: Vec<f64> = (0..=16).map(|k| -2.0 + 0.25 * k as f64).collect();
        let curve = temperature_curve(&f, &p, &bernoulli(), &grid, &TemperatureOptions::default()).unwrap();
        for (q, t) in curve.q.iter().zip(&curve.t) {
            assert_abs_diff_eq!(*t, closed(*q), epsilon = 1e-8);
        }
        let s = legendre_spectrum(&curve).unwrap();
        assert!(!s.collapsed && s.concave);
        assert!(s.tangency_gap.unwrap().abs() < 1e-3);
        assert!(s.peak_gap.unwrap().abs() < 1e-3);
        let at0 = s.points.iter().find(|p| p.q == 0.0).unwrap();
        assert_abs_diff_eq!(at0.alpha, 1.1257693834979823, epsilon = 1e-3);
        assert_abs_diff_eq!(at0.g, 1.0, epsilon = 1e-8);
        assert!(s.points.windows(2).all(|w| w[1].alpha < w[0].alpha));
        assert!(s.points.iter().all(|p| p.alpha > 0.0));
    }

    #[test]
    fn cantor_spectrum_collapses() {
        let f = FiberFamily::cantor();
        let p = BaseProcess::iid(vec![0.5, 0.5]).unwrap();
        let curve = temperature_curve(&f, &p, &cantor_base(&f), &[-1.0, 0.0, 1.0, 2.0], &TemperatureOptions::default()).unwrap();
        let s = legendre_spectrum(&curve).unwrap();
        assert!(s.collapsed);
        for pt in &s.points {
            assert_abs_diff_eq!(pt.alpha, h(), epsilon = 1e-6);
            assert_abs_diff_eq!(pt.g, h(), epsilon = 1e-6);
        }
    }

    #[test]
    fn non_convex_curves_are_rejected() {
        let pts = |q: f64, t: f64| TemperaturePoint { q, t, bracket: (t, t), tolerance: 1e-10, method: EstimateMethod::Exact };
        let curve = TemperatureCurve {
            q: vec![0.0, 1.0, 2.0],
            t: vec![0.0, 1.0, 0.0],
            slope: vec![1.0, 0.0, -1.0],
            slope_error: vec![0.0; 3],
            points: vec![pts(0.0, 0.0), pts(1.0, 1.0), pts(2.0, 0.0)],
            base: "x".into(),
            dq: 0.01,
        };
        assert!(matches!(legendre_spectrum(&curve), Err(Error::NotConvex { .. })));
    }

    #[test]
    fn closed_form_helper() {
        let f = FiberFamily::doubling();
        let v = exact_multifractal_pressure(&f, &BaseProcess::deterministic(0), &bernoulli(), 2.0, 0.0).unwrap();
        assert_abs_diff_eq!(v, 0.58f64.ln(), epsilon = 1e-14);
    }
}
