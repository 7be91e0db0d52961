//! Random polynomial Julia sets `z ↦ z^d + c_{x}`: pressure and dimension
//! from exact inverse-branch trees.
//!
//! A tree of depth `n` over the anchor `w` in the fiber `x_n` gives
//! `Z_k = L^k 1(w)` for every level `k ≤ n`. The estimator
//! `(log Z_n − log Z_m)/(n − m)` with `m = ⌊n/2⌋` cancels the anchor term
//! that biases `(1/n) log Z_n` by `O(1/n)`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::base::{sample_invariant_path, sample_seeds, BaseProcess, RunningStats, SymbolPath};
use crate::error::{Error, Result};
use crate::fibers::{complex_roots, log_poly_derivative, FiberFamily};
use crate::pressure::{bisect_root, BowenOptions, BowenResult, EstimateMethod, ExpectedPressureEstimate, MonteCarlo};
use crate::transfer::{log_sum_exp, pullback_level_log_sums, repelling_fixed_point, Potential, MAX_TREE_LEAVES};

/// All `d^n` backward images of an anchor along a symbol word.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseTree {
    pub anchor: Complex64,
    pub depth: usize,
    /// Symbols `x_0 … x_{n−1}`; leaves live in the fiber of `x_0`.
    pub word: Vec<u32>,
    pub leaves: Vec<Complex64>,
    /// `Σ log|f'|` along the branch from each leaf to the anchor.
    pub log_derivative_sums: Vec<f64>,
}

impl InverseTree {
    pub fn build(family: &FiberFamily, word: &[u32], anchor: Complex64) -> Result<Self> {
        let (degree, params) = polynomial(family)?;
        check_leaf_count(degree, word.len())?;
        let mut leaves = vec![anchor];
        let mut sums = vec![0.0];
        for &s in word.iter().rev() {
            family.check_symbol(s)?;
            let c = params[s as usize];
            let mut next = Vec::with_capacity(leaves.len() * degree as usize);
            let mut next_sums = Vec::with_capacity(leaves.len() * degree as usize);
            for (y, acc) in leaves.iter().zip(&sums) {
                for z in complex_roots(degree, y - c)? {
                    next.push(z);
                    next_sums.push(acc + log_poly_derivative(degree, z));
                }
            }
            leaves = next;
            sums = next_sums;
        }
        Ok(InverseTree { anchor, depth: word.len(), word: word.to_vec(), leaves, log_derivative_sums: sums })
    }

    /// `log Σ_leaves e^{−t Σ log|f'|}`.
    pub fn log_sum(&self, t: f64) -> f64 {
        log_sum_exp(&self.log_derivative_sums.iter().map(|d| -t * d).collect::<Vec<_>>())
    }

    /// Largest relative distance between the anchor and a leaf pushed forward along the word.
    pub fn verify(&self, family: &FiberFamily) -> Result<f64> {
        let (degree, params) = polynomial(family)?;
        let mut worst: f64 = 0.0;
        for &z0 in &self.leaves {
            let mut z = z0;
            for &s in &self.word {
                z = z.powu(degree) + params[s as usize];
            }
            worst = worst.max((z - self.anchor).norm() / self.anchor.norm().max(1.0));
        }
        Ok(worst)
    }

    /// Smallest distance between two distinct leaves.
    pub fn min_separation(&self) -> f64 {
        let mut pts: Vec<Complex64> = self.leaves.clone();
        pts.sort_by(|a, b| a.re.total_cmp(&b.re));
        let mut best = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if pts[j].re - pts[i].re >= best {
                    break;
                }
                best = best.min((pts[j] - pts[i]).norm());
            }
        }
        best
    }
}

fn polynomial(family: &FiberFamily) -> Result<(u32, &[Complex64])> {
    family
        .quadratic_params()
        .ok_or_else(|| Error::Unsupported("inverse trees of this kind need a polynomial family".into()))
}

fn check_leaf_count(degree: u32, depth: usize) -> Result<()> {
    let leaves = (degree as f64).powi(depth as i32);
    if leaves > MAX_TREE_LEAVES as f64 {
        return Err(Error::Resource(format!("{degree}^{depth} leaves exceed {MAX_TREE_LEAVES}")));
    }
    Ok(())
}

/// Anchor for a sample path: the repelling fixed point of the top fiber's map.
fn anchor_for(params: &[Complex64], degree: u32, symbol: u32, attempt: u32) -> Complex64 {
    let z = repelling_fixed_point(degree, params[symbol as usize]);
    // re-seeded anchors are rotated off a degenerate point
    z * Complex64::from_polar(1.0, 0.1 * attempt as f64)
}

/// Leaf log-derivative sums at levels `m` and `n` of one tree.
#[derive(Debug, Clone)]
struct SampleTree {
    half: usize,
    depth: usize,
    degree: u32,
    level_half: Vec<f64>,
    /// Level `n − 1` sums completed by the last step; each stands for `d` leaves
    /// because the `d` roots share the same modulus.
    level_full: Vec<f64>,
}

impl SampleTree {
    fn build(family: &FiberFamily, path: &SymbolPath, depth: usize) -> Result<Self> {
        let (degree, params) = polynomial(family)?;
        let mut attempt = 0;
        loop {
            match Self::build_from(degree, params, path, depth, anchor_for(params, degree, path.get(depth as i64), attempt)) {
                Err(Error::BranchSingularity(_)) if attempt < 3 => attempt += 1,
                other => return other,
            }
        }
    }

    fn build_from(degree: u32, params: &[Complex64], path: &SymbolPath, depth: usize, anchor: Complex64) -> Result<Self> {
        let half = depth / 2;
        let d = degree as f64;
        let mut nodes = vec![anchor];
        let mut sums = vec![0.0];
        let mut level_half = Vec::new();
        for k in 1..depth {
            let c = params[path.get((depth - k) as i64) as usize];
            let mut next = Vec::with_capacity(nodes.len() * degree as usize);
            let mut next_sums = Vec::with_capacity(nodes.len() * degree as usize);
            for (y, acc) in nodes.iter().zip(&sums) {
                for z in complex_roots(degree, y - c)? {
                    next.push(z);
                    next_sums.push(acc + log_poly_derivative(degree, z));
                }
            }
            nodes = next;
            sums = next_sums;
            if k == half {
                level_half = sums.clone();
            }
        }
        let c = params[path.get(0) as usize];
        let mut level_full = Vec::with_capacity(nodes.len());
        for (y, acc) in nodes.iter().zip(&sums) {
            let u = (y - c).norm();
            if u < 1e-14 {
                return Err(Error::BranchSingularity(format!("target {y} coincides with the critical value")));
            }
            level_full.push(acc + d.ln() + (d - 1.0) / d * u.ln());
        }
        if half == 0 {
            level_half = vec![0.0];
        }
        Ok(SampleTree { half, depth, degree, level_half, level_full })
    }

    fn estimate(&self, t: f64) -> f64 {
        let full = log_sum_exp(&self.level_full.iter().map(|s| -t * s).collect::<Vec<_>>()) + (self.degree as f64).ln();
        let half = log_sum_exp(&self.level_half.iter().map(|s| -t * s).collect::<Vec<_>>());
        (full - half) / (self.depth - self.half) as f64
    }
}

/// Trees for a fixed set of sample paths, reusable across `t`.
#[derive(Debug, Clone)]
pub struct JuliaSampler {
    trees: Vec<SampleTree>,
    depth: usize,
}

impl JuliaSampler {
    pub fn new(family: &FiberFamily, process: &BaseProcess, depth: usize, n_samples: usize, seed: u64) -> Result<Self> {
        let (degree, _) = polynomial(family)?;
        if depth < 2 {
            return Err(Error::Config("tree depth must be at least 2".into()));
        }
        if n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        check_leaf_count(degree, depth)?;
        process.validate()?;
        if process.alphabet_size() > family.num_symbols() {
            return Err(Error::Config("process alphabet exceeds the family".into()));
        }
        let trees = sample_seeds(seed, n_samples)
            .par_iter()
            .map(|&s| {
                let path = sample_invariant_path(process, depth + 1, 0, s)?;
                SampleTree::build(family, &path, depth)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(JuliaSampler { trees, depth })
    }

    pub fn pressure(&self, t: f64) -> ExpectedPressureEstimate {
        let values: Vec<f64> = self.trees.par_iter().map(|tr| tr.estimate(t)).collect();
        let mut st = RunningStats::new();
        values.iter().for_each(|v| st.push(*v));
        ExpectedPressureEstimate {
            value: st.mean,
            stderr: st.stderr(),
            n_steps: self.depth,
            n_samples: self.trees.len(),
            failures: 0,
            method: EstimateMethod::InverseTree,
            potential: format!("geometric(t={t})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JuliaOptions {
    pub depth: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub tol_t: f64,
}

impl Default for JuliaOptions {
    fn default() -> Self {
        JuliaOptions { depth: 18, n_samples: 16, seed: 1, tol_t: 1e-4 }
    }
}

/// `E P(−t log|f'|)` on the random Julia fibers.
pub fn julia_pressure(family: &FiberFamily, process: &BaseProcess, t: f64, opts: &JuliaOptions) -> Result<ExpectedPressureEstimate> {
    Ok(JuliaSampler::new(family, process, opts.depth, opts.n_samples, opts.seed)?.pressure(t))
}

/// Bowen parameter of a random polynomial family, bisecting on a fixed tree sample.
pub fn julia_dimension(family: &FiberFamily, process: &BaseProcess, opts: &JuliaOptions) -> Result<BowenResult> {
    let sampler = JuliaSampler::new(family, process, opts.depth, opts.n_samples, opts.seed)?;
    let bowen = BowenOptions { t_lo: 0.5, t_hi: 2.0, tol_t: Some(opts.tol_t), ..Default::default() };
    bisect_root(|t| Ok(sampler.pressure(t)), &bowen, family.ambient_dimension())
}

/// Entry point used by the generic Bowen solver: depth is `min(n_steps, tree cap)`.
pub(crate) fn julia_bowen(family: &FiberFamily, process: &BaseProcess, opts: &BowenOptions) -> Result<BowenResult> {
    let jo = JuliaOptions {
        depth: opts.mc.n_steps.min(opts.transfer.tree_depth_cap),
        n_samples: opts.mc.n_samples,
        seed: opts.mc.seed,
        tol_t: opts.tol_t.unwrap_or(1e-4),
    };
    let sampler = JuliaSampler::new(family, process, jo.depth, jo.n_samples, jo.seed)?;
    let bowen = BowenOptions { tol_t: Some(jo.tol_t), ..opts.clone() };
    bisect_root(|t| Ok(sampler.pressure(t)), &bowen, family.ambient_dimension())
}

/// Differenced tree estimator for arbitrary potentials.
pub(crate) fn tree_expected_pressure<F>(
    family: &FiberFamily,
    process: &BaseProcess,
    mc: &MonteCarlo,
    depth_cap: usize,
    label: &str,
    build: F,
) -> Result<ExpectedPressureEstimate>
where
    F: Fn(&SymbolPath) -> Result<Potential> + Sync,
{
    let (degree, params) = polynomial(family)?;
    let depth = mc.n_steps.min(depth_cap);
    check_leaf_count(degree, depth)?;
    let half = depth / 2;
    let values = sample_seeds(mc.seed, mc.n_samples)
        .par_iter()
        .map(|&s| {
            let path = sample_invariant_path(process, depth + 1, 0, s)?;
            let pot = build(&path)?;
            let anchor = anchor_for(params, degree, path.get(depth as i64), 0);
            let sums = pullback_level_log_sums(family, &path, &pot, 0, depth, crate::fibers::FiberPoint::Complex(anchor))?;
            Ok((sums[depth] - sums[half]) / (depth - half) as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut st = RunningStats::new();
    values.iter().for_each(|v| st.push(*v));
    Ok(ExpectedPressureEstimate {
        value: st.mean,
        stderr: st.stderr(),
        n_steps: depth,
        n_samples: values.len(),
        failures: 0,
        method: EstimateMethod::InverseTree,
        potential: label.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn circle() -> FiberFamily {
        FiberFamily::quadratic(2, vec![Complex64::new(0.0, 0.0)]).unwrap()
    }

    #[test]
    fn tree_leaves_are_exact_preimages() {
        let f = FiberFamily::quadratic(2, vec![Complex64::new(0.1, 0.0), Complex64::new(-0.1, 0.05)]).unwrap();
        let word = [0, 1, 1, 0, 1, 0, 0, 1];
        let anchor = repelling_fixed_point(2, Complex64::new(0.1, 0.0));
        let tree = InverseTree::build(&f, &word, anchor).unwrap();
        assert_eq!(tree.leaves.len(), 256);
        assert!(tree.verify(&f).unwrap() < 1e-8);
        assert!(tree.min_separation() > 1e-10);
    }

    #[test]
    fn circle_pressures() {
        let f = circle();
        let p = BaseProcess::deterministic(0);
        let opts = JuliaOptions { depth: 16, n_samples: 2, ..Default::default() };
        let e1 = julia_pressure(&f, &p, 1.0, &opts).unwrap();
        assert!(e1.value.abs() < 1e-10);
        let e0 = julia_pressure(&f, &p, 0.0, &opts).unwrap();
        assert_abs_diff_eq!(e0.value, 2f64.ln(), epsilon = 1e-12);
        let tree = InverseTree::build(&f, &[0; 10], Complex64::new(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(tree.log_sum(0.0), 10.0 * 2f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn sampler_matches_generic_tree_sums() {
        let f = FiberFamily::quadratic(2, vec![Complex64::new(0.1, 0.0), Complex64::new(-0.1, 0.0)]).unwrap();
        let p = BaseProcess::iid(vec![0.5, 0.5]).unwrap();
        let s = JuliaSampler::new(&f, &p, 10, 4, 3).unwrap().pressure(1.2);
        let mc = MonteCarlo { n_steps: 10, n_samples: 4, seed: 3 };
        let g = tree_expected_pressure(&f, &p, &mc, 22, "g", |_| Ok(Potential::geometric(1.2))).unwrap();
        assert_abs_diff_eq!(s.value, g.value, epsilon = 1e-10);
    }

    #[test]
    fn equal_parameters_reduce_to_one_map() {
        let c = Complex64::new(0.1, 0.0);
        let two = FiberFamily::quadratic(2, vec![c, c]).unwrap();
        let one = FiberFamily::quadratic(2, vec![c]).unwrap();
        let opts = JuliaOptions { depth: 10, n_samples: 3, ..Default::default() };
        let a = julia_pressure(&two, &BaseProcess::iid(vec![0.5, 0.5]).unwrap(), 1.1, &opts).unwrap();
        let b = julia_pressure(&one, &BaseProcess::deterministic(0), 1.1, &opts).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn circle_dimension_is_one() {
        let r = julia_dimension(&circle(), &BaseProcess::deterministic(0), &JuliaOptions { depth: 12, n_samples: 1, ..Default::default() }).unwrap();
        assert!((r.h - 1.0).abs() < 1e-3, "{}", r.h);
    }

    #[test]
    fn depth_is_capped() {
        let f = circle();
        assert!(matches!(JuliaSampler::new(&f, &BaseProcess::deterministic(0), 23, 1, 0), Err(Error::Resource(_))));
    }
}
