//! Exact pullback sums `L^n_x 1(w) = Σ_{z ∈ T_x^{-n}(w)} e^{S_n φ(z)}` over
//! the full inverse-branch tree, accumulated in log space.

use num_complex::Complex64;

use crate::base::SymbolPath;
use crate::error::{Error, Result};
use crate::fibers::{complex_roots, log_poly_derivative, FiberFamily, FiberPoint};
use crate::transfer::potential::Potential;

pub const MAX_TREE_LEAVES: usize = 1 << 22;

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-level log sums: entry `k` is `log L^k_{x_{top-k}} 1(w)` for the anchor
/// `w` in the fiber at position `top = start + n`, `k = 0..=n`.
pub fn pullback_level_log_sums(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    start: i64,
    n: usize,
    w: FiberPoint,
) -> Result<Vec<f64>> {
    let mut leaves = 1usize;
    for j in 0..n as i64 {
        let s = path.get(start + j);
        family.check_symbol(s)?;
        leaves = leaves.saturating_mul(family.degree(s));
    }
    if leaves > MAX_TREE_LEAVES {
        return Err(Error::Resource(format!("inverse tree with {leaves} leaves exceeds {MAX_TREE_LEAVES}")));
    }
    potential.validate(family)?;
    let top = start + n as i64;
    let mut sums = Vec::with_capacity(n + 1);
    sums.push(0.0);
    match family.quadratic_params() {
        None => {
            let x = w.as_real().ok_or(Error::Domain(f64::NAN))?;
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Domain(x));
            }
            let mut level: Vec<(f64, f64)> = vec![(x, 0.0)];
            for k in 1..=n {
                let pos = top - k as i64;
                let s = path.get(pos);
                let off = potential.offset(pos, s);
                let branches = family.branches(s);
                let mut next = Vec::with_capacity(level.len() * branches.len());
                for &(y, acc) in &level {
                    for (b, br) in branches.iter().enumerate() {
                        let z = br.inverse(y);
                        let ld = br.derivative(z).ln();
                        next.push((z, acc + potential.local(s, b, ld) + off));
                    }
                }
                level = next;
                sums.push(log_sum_exp(&level.iter().map(|l| l.1).collect::<Vec<_>>()));
            }
        }
        Some((degree, params)) => {
            let mut level: Vec<(Complex64, f64)> = vec![(w.as_complex(), 0.0)];
            for k in 1..=n {
                let pos = top - k as i64;
                let s = path.get(pos);
                let off = potential.offset(pos, s);
                let c = params[s as usize];
                let mut next = Vec::with_capacity(level.len() * degree as usize);
                for &(y, acc) in &level {
                    for (b, z) in complex_roots(degree, y - c)?.into_iter().enumerate() {
                        let ld = log_poly_derivative(degree, z);
                        next.push((z, acc + potential.local(s, b, ld) + off));
                    }
                }
                level = next;
                sums.push(log_sum_exp(&level.iter().map(|l| l.1).collect::<Vec<_>>()));
            }
        }
    }
    Ok(sums)
}

/// `log L^n_x 1(w)` with `x` at position `start` and `w` in the fiber at `start + n`.
pub fn pullback_log_sum(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    start: i64,
    n: usize,
    w: FiberPoint,
) -> Result<f64> {
    Ok(*pullback_level_log_sums(family, path, potential, start, n, w)?.last().expect("level 0 always present"))
}

/// Largest-modulus fixed point of `z ↦ z^d + c`, by damped Newton from `z = 1`.
pub fn repelling_fixed_point(degree: u32, c: Complex64) -> Complex64 {
    let mut z = Complex64::new(1.0, 0.0);
    for _ in 0..200 {
        let f = z.powu(degree) + c - z;
        let df = z.powu(degree - 1) * degree as f64 - 1.0;
        if df.norm() < 1e-300 {
            break;
        }
        let step = f / df;
        let step = if step.norm() > 0.5 { step * (0.5 / step.norm()) } else { step };
        z -= step;
        if step.norm() < 1e-16 {
            break;
        }
    }
    z
}

/// Default anchor of the fiber carrying `symbol`.
pub fn default_anchor(family: &FiberFamily, symbol: u32) -> FiberPoint {
    match family.quadratic_params() {
        None => FiberPoint::Real(0.5),
        Some((d, params)) => FiberPoint::Complex(repelling_fixed_point(d, params[symbol as usize])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{sample_path, BaseProcess};
    use approx::assert_abs_diff_eq;

    #[test]
    fn cantor_tree_matches_closed_form() {
        let f = FiberFamily::cantor();
        let path = sample_path(&BaseProcess::periodic(vec![0, 1, 1]).unwrap(), 6, 0, 0).unwrap();
        let t = 0.7;
        let sums = pullback_level_log_sums(&f, &path, &Potential::geometric(t), 0, 6, FiberPoint::Real(0.3)).unwrap();
        // top fiber at position 6; level k uses symbols x_{6-k}..x_5
        let mut expect = 0.0;
        for k in 1..=6 {
            let s = path.get(6 - k as i64);
            expect += (2.0f64).ln() - t * f.expansion_floor(s).ln();
            assert_abs_diff_eq!(sums[k], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_circle_tree() {
        let f = FiberFamily::quadratic(2, vec![Complex64::new(0.0, 0.0)]).unwrap();
        let path = sample_path(&BaseProcess::deterministic(0), 10, 0, 0).unwrap();
        let anchor = repelling_fixed_point(2, Complex64::new(0.0, 0.0));
        assert_abs_diff_eq!(anchor.re, 1.0, epsilon = 1e-14);
        let s = pullback_log_sum(&f, &path, &Potential::geometric(1.0), 0, 10, FiberPoint::Complex(anchor)).unwrap();
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-10);
        let s0 = pullback_log_sum(&f, &path, &Potential::geometric(0.0), 0, 10, FiberPoint::Complex(anchor)).unwrap();
        assert_abs_diff_eq!(s0, 10.0 * 2f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn fixed_point_is_fixed() {
        for c in [Complex64::new(0.1, 0.0), Complex64::new(-0.2, 0.1)] {
            let z = repelling_fixed_point(2, c);
            assert!((z * z + c - z).norm() < 1e-13);
            assert!(z.norm() > 0.8);
        }
    }

    #[test]
    fn leaf_cap() {
        let f = FiberFamily::cantor();
        let path = sample_path(&BaseProcess::deterministic(0), 30, 0, 0).unwrap();
        assert!(matches!(
            pullback_log_sum(&f, &path, &Potential::geometric(1.0), 0, 23, FiberPoint::Real(0.5)),
            Err(Error::Resource(_))
        ));
    }
}
