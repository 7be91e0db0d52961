//! Essential versus quasi-deterministic systems, decided by the asymptotic
//! variance `σ² = lim Var(S_nP)/n` of the pressure at the Bowen parameter.

use rayon::prelude::*;
use serde::Serialize;

use crate::base::{sample_invariant_path, sample_seeds, BaseProcess, RunningStats, SymbolPath};
use crate::error::{Error, Result};
use crate::fibers::FiberFamily;
use crate::pressure::pressure_trace;
use crate::transfer::{Potential, TransferOptions};

pub const DEFAULT_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRung {
    pub n: usize,
    /// `Var(S_nP)/n` over blocks of length `n`.
    pub value: f64,
    pub stderr: f64,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceEstimate {
    /// Plateau value, taken at the last rung.
    pub sigma2: f64,
    pub stderr: f64,
    pub per_step_variance: f64,
    pub ladder: Vec<LadderRung>,
    /// Empirical `E P` used to center the sums.
    pub mean_pressure: f64,
    pub mean_stderr: f64,
    /// `|E P| ≤ 3σ`.
    pub centered: bool,
    /// Largest per-step `|P|`.
    pub a_max: f64,
    /// Largest centered `|S_nP|` over all samples and times.
    pub max_abs_sum: f64,
    /// Extremes of centered `S_nP/√(n log log n)` over `n ≥ 16`.
    pub lil_max: f64,
    pub lil_min: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceOptions {
    /// Block lengths; the largest is the sample path length.
    pub ladder: Vec<usize>,
    pub n_samples: usize,
    pub seed: u64,
    pub transfer: TransferOptions,
}

impl Default for VarianceOptions {
    fn default() -> Self {
        VarianceOptions { ladder: dyadic_ladder(16, 256), n_samples: 2000, seed: 1, transfer: TransferOptions::default() }
    }
}

/// `lo, 2 lo, 4 lo, …` up to `hi`.
pub fn dyadic_ladder(lo: usize, hi: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut n = lo.max(1);
    while n <= hi {
        v.push(n);
        n *= 2;
    }
    v
}

struct SampleSums {
    values: Vec<f64>,
}

pub fn asymptotic_variance(
    family: &FiberFamily,
    process: &BaseProcess,
    potential: &Potential,
    opts: &VarianceOptions,
) -> Result<VarianceEstimate> {
    let n_max = *opts.ladder.iter().max().ok_or_else(|| Error::Config("empty ladder".into()))?;
    if opts.ladder.contains(&0) {
        return Err(Error::Config("ladder entries must be positive".into()));
    }
    if opts.n_samples < 2 {
        return Err(Error::Config("need at least 2 samples".into()));
    }
    let samples: Vec<SampleSums> = sample_seeds(opts.seed, opts.n_samples)
        .par_iter()
        .map(|&s| {
            let path = sample_invariant_path(process, n_max, 0, s)?;
            let tr = pressure_trace(family, &path, potential, n_max, &opts.transfer)?;
            if let Some(i) = tr.failure {
                return Err(Error::Convergence(format!("pressure did not converge at step {i} (seed {s})")));
            }
            Ok(SampleSums { values: tr.values })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_path = RunningStats::new();
    let mut per_step = RunningStats::new();
    for s in &samples {
        let mut st = RunningStats::new();
        s.values.iter().for_each(|v| {
            st.push(*v);
            per_step.push(*v);
        });
        per_path.push(st.mean);
    }
    let mean = per_path.mean;
    let mean_stderr = per_path.stderr();
    let centered = mean.abs() <= 3.0 * mean_stderr + 1e-12;
    let mut warnings = Vec::new();
    if !centered {
        warnings.push(format!("potential not centered: E P = {mean:.3e} ± {mean_stderr:.1e}; sums centered empirically"));
    }

    let mut ladder = Vec::with_capacity(opts.ladder.len());
    for &n in &opts.ladder {
        let mut st = RunningStats::new();
        for s in &samples {
            for block in s.values.chunks_exact(n) {
                st.push(block.iter().sum::<f64>() - n as f64 * mean);
            }
        }
        let value = st.variance() / n as f64;
        let blocks = st.count as usize;
        ladder.push(LadderRung { n, value, stderr: value * (2.0 / (blocks.max(2) - 1) as f64).sqrt(), blocks });
    }
    let last = ladder.iter().max_by_key(|r| r.n).expect("non-empty ladder").clone();

    let mut a_max: f64 = 0.0;
    let mut max_abs_sum: f64 = 0.0;
    let (mut lil_max, mut lil_min) = (f64::NEG_INFINITY, f64::INFINITY);
    for s in &samples {
        let mut acc = 0.0;
        for (k, v) in s.values.iter().enumerate() {
            a_max = a_max.max(v.abs());
            acc += v - mean;
            max_abs_sum = max_abs_sum.max(acc.abs());
            let n = (k + 1) as f64;
            if k + 1 >= 16 {
                let scale = (n * n.ln().ln()).sqrt();
                lil_max = lil_max.max(acc / scale);
                lil_min = lil_min.min(acc / scale);
            }
        }
    }
    if !lil_max.is_finite() {
        lil_max = 0.0;
        lil_min = 0.0;
    }

    Ok(VarianceEstimate {
        sigma2: last.value,
        stderr: last.stderr,
        per_step_variance: per_step.variance(),
        ladder,
        mean_pressure: mean,
        mean_stderr,
        centered,
        a_max,
        max_abs_sum,
        lil_max,
        lil_min,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Essential,
    QuasiDeterministic,
    Inconclusive,
}

impl Verdict {
    /// Geometric-measure consequences of the verdict at the Bowen parameter `h`.
    pub fn consequences(&self) -> &'static str {
        match self {
            Verdict::Essential => "H^h = 0, P^h = ∞: h-dimensional Hausdorff measure vanishes and packing measure is infinite on almost every fiber",
            Verdict::QuasiDeterministic => "0 < H^h, P^h < ∞: fibers carry finite positive h-dimensional Hausdorff and packing measures",
            Verdict::Inconclusive => "no conclusion at this sample size",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationVerdict {
    pub verdict: Verdict,
    pub sigma2: f64,
    pub stderr: f64,
    pub threshold: f64,
    /// Bound on centered `|S_nP|` for the quasi-deterministic verdict.
    pub l_cap: f64,
    pub max_abs_sum: f64,
    pub lil_max: f64,
    pub lil_min: f64,
    pub consequences: String,
    pub variance: VarianceEstimate,
}

/// Classify the system at the Bowen parameter `h`.
pub fn classify_system(
    family: &FiberFamily,
    process: &BaseProcess,
    h: f64,
    opts: &VarianceOptions,
    threshold: f64,
) -> Result<ClassificationVerdict> {
    let var = asymptotic_variance(family, process, &Potential::geometric(h), opts)?;
    let band = 3.0 * var.stderr;
    let l_cap = (10.0 * var.a_max).max(1e-9);
    let verdict = if var.sigma2 - band > threshold {
        Verdict::Essential
    } else if var.sigma2 + band < threshold && var.max_abs_sum <= l_cap {
        Verdict::QuasiDeterministic
    } else {
        Verdict::Inconclusive
    };
    Ok(ClassificationVerdict {
        verdict,
        sigma2: var.sigma2,
        stderr: var.stderr,
        threshold,
        l_cap,
        max_abs_sum: var.max_abs_sum,
        lil_max: var.lil_max,
        lil_min: var.lil_min,
        consequences: verdict.consequences().to_string(),
        variance: var,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GibbsExtremes {
    pub ladder: Vec<usize>,
    /// Running minimum of `exp(−S_nP_x)` up to each rung.
    pub running_min: Vec<f64>,
    pub running_max: Vec<f64>,
}

/// Running extremes of `μ_x(C_n)/diam(C_n)^h = exp(−S_nP_x)` along one path.
pub fn gibbs_ratio_extremes(
    family: &FiberFamily,
    path: &SymbolPath,
    h: f64,
    n: usize,
    opts: &TransferOptions,
) -> Result<GibbsExtremes> {
    if n < 10 {
        return Err(Error::Config("gibbs ratio extremes need N >= 10".into()));
    }
    let tr = pressure_trace(family, path, &Potential::geometric(h), n, opts)?;
    if let Some(i) = tr.failure {
        return Err(Error::Convergence(format!("pressure did not converge at step {i}")));
    }
    let mut ladder = dyadic_ladder(1, n);
    if ladder.last() != Some(&n) {
        ladder.push(n);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut out = GibbsExtremes { ladder: ladder.clone(), running_min: Vec::new(), running_max: Vec::new() };
    let mut rung = 0;
    for k in 1..=n {
        let r = (-tr.sum(k)).exp();
        lo = lo.min(r);
        hi = hi.max(r);
        if ladder[rung] == k {
            out.running_min.push(lo);
            out.running_max.push(hi);
            rung += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::sample_path;

    fn h() -> f64 {
        4f64.ln() / 12f64.ln()
    }

    fn small() -> VarianceOptions {
        VarianceOptions { ladder: dyadic_ladder(8, 64), n_samples: 400, ..Default::default() }
    }

    #[test]
    fn ladder() {
        assert_eq!(dyadic_ladder(16, 256), vec![16, 32, 64, 128, 256]);
        assert_eq!(dyadic_ladder(3, 2), Vec::<usize>::new());
    }

    #[test]
    fn cantor_variance_and_verdict() {
        let f = FiberFamily::cantor();
        let p = BaseProcess::iid(vec![0.5, 0.5]).unwrap();
        let v = classify_system(&f, &p, h(), &small(), DEFAULT_THRESHOLD).unwrap();
        let a2 = (2f64.ln() - h() * 3f64.ln()).powi(2);
        assert!((v.sigma2 - a2).abs() < 0.2 * a2, "{}", v.sigma2);
        assert_eq!(v.verdict, Verdict::Essential);
        assert!(v.variance.centered);
        // i.i.d. steps: the ladder is flat within error bars
        for w in v.variance.ladder.windows(2) {
            let s = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            assert!((w[0].value - w[1].value).abs() <= 4.0 * s);
        }
    }

    #[test]
    fn degenerate_bases_are_quasi_deterministic() {
        let f = FiberFamily::cantor();
        let det = classify_system(&f, &BaseProcess::deterministic(0), 2f64.ln() / 3f64.ln(), &small(), DEFAULT_THRESHOLD).unwrap();
        assert!(det.sigma2 <= 1e-8);
        assert_eq!(det.verdict, Verdict::QuasiDeterministic);

        let same = FiberFamily::new(
            "same",
            crate::fibers::FamilyKind::PiecewiseAffineFull { maps: vec![vec![(0.0, 1.0 / 3.0), (2.0 / 3.0, 1.0)]; 2] },
            None,
        )
        .unwrap();
        let v = classify_system(&same, &BaseProcess::iid(vec![0.3, 0.7]).unwrap(), 2f64.ln() / 3f64.ln(), &small(), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(v.verdict, Verdict::QuasiDeterministic);

        let per = classify_system(&f, &BaseProcess::periodic(vec![0, 1]).unwrap(), h(), &small(), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(per.verdict, Verdict::QuasiDeterministic);
        assert!(per.max_abs_sum <= 0.0803);
    }

    #[test]
    fn periodic_extremes_are_bounded() {
        let f = FiberFamily::cantor();
        let path = sample_path(&BaseProcess::periodic(vec![0, 1]).unwrap(), 1000, 0, 0).unwrap();
        let g = gibbs_ratio_extremes(&f, &path, h(), 1000, &TransferOptions::default()).unwrap();
        let a = 2f64.ln() - h() * 3f64.ln();
        assert!(g.running_min.iter().all(|v| *v >= (-a).exp() - 1e-12));
        assert!(g.running_max.iter().all(|v| *v <= a.exp() + 1e-12));
        assert_eq!(*g.ladder.last().unwrap(), 1000);
    }

    #[test]
    fn zero_pressure_gives_unit_ratios() {
        let f = FiberFamily::cantor();
        let path = sample_path(&BaseProcess::deterministic(1), 20, 0, 0).unwrap();
        let g = gibbs_ratio_extremes(&f, &path, 0.5, 20, &TransferOptions::default()).unwrap();
        assert!(g.running_min.iter().chain(&g.running_max).all(|v| *v == 1.0));
        assert!(gibbs_ratio_extremes(&f, &path, 0.5, 5, &TransferOptions::default()).is_err());
    }
}
