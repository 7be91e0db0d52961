//! Conformal masses of depth-`n` cylinders, `ν_x(C) = e^{S_nφ(z_C)} / λ^n_x`.

use crate::base::SymbolPath;
use crate::error::{Error, Result};
use crate::fibers::{distortion_constant, FiberFamily};
use crate::transfer::potential::Potential;
use crate::transfer::exact_lambdas;

pub const MAX_CYLINDERS: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct CylinderMasses {
    /// Number of branches at each depth, `radices[j] = deg(T_{x_j})`.
    pub radices: Vec<usize>,
    /// Masses in lexicographic order of branch words, `b_0` most significant.
    pub masses: Vec<f64>,
    /// Midpoint evaluation of `S_nφ`, renormalized.
    pub approximate: bool,
    /// Multiplicative error bound `e^{Q diam^α}` of the midpoint rule (1 when exact).
    pub distortion_bound: f64,
}

impl CylinderMasses {
    pub fn depth(&self) -> usize {
        self.radices.len()
    }

    /// Branch word of the cylinder at `index`.
    pub fn word(&self, index: usize) -> Vec<usize> {
        let mut word = vec![0; self.radices.len()];
        let mut rest = index;
        for (j, &r) in self.radices.iter().enumerate().rev() {
            word[j] = rest % r;
            rest /= r;
        }
        word
    }

    /// Word written as dash-separated branch ids.
    pub fn label(&self, index: usize) -> String {
        self.word(index).iter().map(|b| b.to_string()).collect::<Vec<_>>().join("-")
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Masses of all depth-`n` cylinders in the fiber over `x_0`.
pub fn conformal_cylinder_masses(
    family: &FiberFamily,
    path: &SymbolPath,
    potential: &Potential,
    depth: usize,
) -> Result<CylinderMasses> {
    if !family.is_interval() {
        return Err(Error::Unsupported("cylinder masses need an interval family".into()));
    }
    potential.validate(family)?;
    let mut radices = Vec::with_capacity(depth);
    let mut count = 1usize;
    for j in 0..depth as i64 {
        let s = path.get(j);
        family.check_symbol(s)?;
        let d = family.degree(s);
        count = count.saturating_mul(d);
        radices.push(d);
    }
    if count > MAX_CYLINDERS {
        return Err(Error::Resource(format!("{count} cylinders exceed the cap {MAX_CYLINDERS}")));
    }
    if depth == 0 {
        return Ok(CylinderMasses { radices, masses: vec![1.0], approximate: false, distortion_bound: 1.0 });
    }

    if let Some(lambdas) = exact_lambdas(family, path, potential, 0, depth)? {
        let mut masses = vec![1.0];
        for j in 0..depth {
            let s = path.get(j as i64);
            let weights: Vec<f64> = potential
                .branch_values(family, j as i64, s)
                .expect("exact path has branch values")
                .iter()
                .map(|v| v.exp() / lambdas[j])
                .collect();
            masses = masses.iter().flat_map(|m| weights.iter().map(move |w| m * w)).collect();
        }
        return Ok(CylinderMasses { radices, masses, approximate: false, distortion_bound: 1.0 });
    }

    // midpoint rule: z_C = ψ_{b_0} ∘ … ∘ ψ_{b_{n-1}}(1/2)
    let mut level: Vec<(f64, f64)> = vec![(0.5, 0.0)];
    for j in (0..depth).rev() {
        let pos = j as i64;
        let s = path.get(pos);
        let off = potential.offset(pos, s);
        let branches = family.branches(s);
        let mut next = Vec::with_capacity(level.len() * branches.len());
        for (b, br) in branches.iter().enumerate() {
            for &(p, acc) in &level {
                let z = br.inverse(p);
                next.push((z, acc + potential.local(s, b, br.derivative(z).ln()) + off));
            }
        }
        level = next;
    }
    let logs: Vec<f64> = level.iter().map(|l| l.1).collect();
    let norm = super::log_sum_exp(&logs);
    let masses = logs.iter().map(|l| (l - norm).exp()).collect();
    let distortion_bound = match family.require_uniformly_expanding() {
        Ok(gamma) => {
            let g = family.geometry();
            let q = distortion_constant(potential.holder_bound(family), g.alpha, gamma);
            (q * gamma.powi(-(depth as i32)).powf(g.alpha)).exp()
        }
        Err(_) => f64::INFINITY,
    };
    Ok(CylinderMasses { radices, masses, approximate: true, distortion_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{sample_path, BaseProcess};
    use approx::assert_abs_diff_eq;

    #[test]
    fn cantor_masses_are_uniform() {
        let f = FiberFamily::cantor();
        let path = sample_path(&BaseProcess::iid(vec![0.5, 0.5]).unwrap(), 16, 0, 3).unwrap();
        for t in [0.0, 0.557, 1.3] {
            let c = conformal_cylinder_masses(&f, &path, &Potential::geometric(t), 3).unwrap();
            assert_eq!(c.masses.len(), 8);
            for m in &c.masses {
                assert_abs_diff_eq!(*m, 0.125, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn two_slope_masses() {
        let f = FiberFamily::two_slope(2.0, 4.0).unwrap();
        let path = sample_path(&BaseProcess::deterministic(0), 4, 0, 0).unwrap();
        let c = conformal_cylinder_masses(&f, &path, &Potential::geometric(1.0), 1).unwrap();
        assert_abs_diff_eq!(c.masses[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.masses[1], 1.0 / 3.0, epsilon = 1e-12);
        let z = conformal_cylinder_masses(&f, &path, &Potential::zero(&f), 1).unwrap();
        assert_eq!(z.masses, vec![0.5, 0.5]);
    }

    #[test]
    fn labels_are_most_significant_first() {
        let f = FiberFamily::two_slope(2.0, 4.0).unwrap();
        let path = sample_path(&BaseProcess::deterministic(0), 4, 0, 0).unwrap();
        let c = conformal_cylinder_masses(&f, &path, &Potential::geometric(1.0), 2).unwrap();
        assert_eq!(c.label(1), "0-1");
        assert_abs_diff_eq!(c.masses[1], 2.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn approximate_masses_normalize() {
        let f = FiberFamily::warped(0.5).unwrap();
        let path = sample_path(&BaseProcess::iid(vec![0.5, 0.5]).unwrap(), 8, 0, 1).unwrap();
        let c = conformal_cylinder_masses(&f, &path, &Potential::geometric(0.8), 6).unwrap();
        assert!(c.approximate);
        assert_abs_diff_eq!(c.total(), 1.0, epsilon = 1e-12);
        assert!(c.distortion_bound >= 1.0 && c.distortion_bound.is_finite());
    }

    #[test]
    fn cap_is_enforced() {
        let f = FiberFamily::cantor();
        let path = sample_path(&BaseProcess::deterministic(0), 30, 0, 0).unwrap();
        assert!(matches!(
            conformal_cylinder_masses(&f, &path, &Potential::geometric(1.0), 23),
            Err(Error::Resource(_))
        ));
    }
}
