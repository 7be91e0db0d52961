//! The driving base system: a symbol process, its realized two-sided orbits,
//! and streaming statistics for Birkhoff averages.
//!
//! Symbols at arbitrary indices are addressable in O(1): the i.i.d. process
//! draws index `i` from a ChaCha stream positioned at word `2 i`, so a path
//! can be materialized eagerly or extended lazily with identical results.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-12;
const FORWARD_STREAM: u64 = 0;
const BACKWARD_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProcessKind {
    /// i.i.d. symbols `0..probs.len()` drawn with the given probabilities.
    Iid { probs: Vec<f64> },
    Deterministic { symbol: u32 },
    /// The cyclic word repeated forever; index 0 is `word[0]`.
    Periodic { word: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseProcess {
    pub kind: ProcessKind,
    #[serde(default)]
    pub description: String,
}

impl BaseProcess {
    pub fn new(kind: ProcessKind, description: impl Into<String>) -> Result<Self> {
        let p = BaseProcess { kind, description: description.into() };
        p.validate()?;
        Ok(p)
    }

    pub fn iid(probs: Vec<f64>) -> Result<Self> {
        Self::new(ProcessKind::Iid { probs }, "iid")
    }

    pub fn deterministic(symbol: u32) -> Self {
        BaseProcess { kind: ProcessKind::Deterministic { symbol }, description: "deterministic".into() }
    }

    pub fn periodic(word: Vec<u32>) -> Result<Self> {
        Self::new(ProcessKind::Periodic { word }, "periodic")
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ProcessKind::Iid { probs } => {
                if probs.is_empty() {
                    return Err(Error::Config("empty symbol set".into()));
                }
                if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::Config("probabilities must be finite and non-negative".into()));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::Config(format!("probabilities sum to {total}, not 1")));
                }
            }
            ProcessKind::Deterministic { .. } => {}
            ProcessKind::Periodic { word } => {
                if word.is_empty() {
                    return Err(Error::Config("empty periodic word".into()));
                }
            }
        }
        Ok(())
    }

    /// Number of symbol ids the process can emit (`max id + 1`).
    pub fn alphabet_size(&self) -> usize {
        match &self.kind {
            ProcessKind::Iid { probs } => probs.len(),
            ProcessKind::Deterministic { symbol } => *symbol as usize + 1,
            ProcessKind::Periodic { word } => word.iter().copied().max().unwrap_or(0) as usize + 1,
        }
    }

    /// One-dimensional marginal of the invariant base measure.
    pub fn marginal(&self) -> Vec<f64> {
        let mut law = vec![0.0; self.alphabet_size()];
        match &self.kind {
            ProcessKind::Iid { probs } => law.copy_from_slice(probs),
            ProcessKind::Deterministic { symbol } => law[*symbol as usize] = 1.0,
            ProcessKind::Periodic { word } => {
                let w = 1.0 / word.len() as f64;
                for &s in word {
                    law[s as usize] += w;
                }
            }
        }
        law
    }

    /// Probability under the invariant measure that the orbit starts with `window`.
    pub fn window_probability(&self, window: &[u32]) -> f64 {
        match &self.kind {
            ProcessKind::Iid { probs } => window
                .iter()
                .map(|&s| probs.get(s as usize).copied().unwrap_or(0.0))
                .product(),
            ProcessKind::Deterministic { symbol } => {
                if window.iter().all(|s| s == symbol) {
                    1.0
                } else {
                    0.0
                }
            }
            ProcessKind::Periodic { word } => {
                let n = word.len();
                let hits = (0..n)
                    .filter(|&phase| window.iter().enumerate().all(|(i, &s)| word[(phase + i) % n] == s))
                    .count();
                hits as f64 / n as f64
            }
        }
    }

    /// Number of distinct phases of the invariant measure that a Monte-Carlo
    /// sampler should randomize over (1 except for periodic words).
    pub fn period(&self) -> usize {
        match &self.kind {
            ProcessKind::Periodic { word } => word.len(),
            _ => 1,
        }
    }

    /// Symbol at absolute index `i` of the orbit generated from `seed`.
    pub fn symbol_at(&self, seed: u64, i: i64) -> u32 {
        match &self.kind {
            ProcessKind::Deterministic { symbol } => *symbol,
            ProcessKind::Periodic { word } => word[i.rem_euclid(word.len() as i64) as usize],
            ProcessKind::Iid { probs } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (stream, pos) = stream_position(i);
                rng.set_stream(stream);
                rng.set_word_pos(2 * pos as u128);
                draw(probs, rng.gen::<f64>())
            }
        }
    }

    fn fill(&self, seed: u64, start: i64, len: usize, backward: bool) -> Vec<u32> {
        match &self.kind {
            ProcessKind::Iid { probs } => {
                if len == 0 {
                    return Vec::new();
                }
                // sequential draws from the same stream position reproduce symbol_at
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let idx = |k: usize| if backward { start - k as i64 } else { start + k as i64 };
                let mut out = Vec::with_capacity(len);
                let mut k = 0;
                while k < len {
                    let (stream, pos) = stream_position(idx(k));
                    rng.set_stream(stream);
                    rng.set_word_pos(2 * pos as u128);
                    // run forward along the stream while indices stay contiguous in it
                    loop {
                        out.push(draw(probs, rng.gen::<f64>()));
                        k += 1;
                        if k == len {
                            break;
                        }
                        let (s2, p2) = stream_position(idx(k));
                        if s2 != stream || p2 != stream_position(idx(k - 1)).1 + 1 {
                            break;
                        }
                    }
                }
                out
            }
            _ => (0..len)
                .map(|k| {
                    let i = if backward { start - k as i64 } else { start + k as i64 };
                    self.symbol_at(seed, i)
                })
                .collect(),
        }
    }
}

fn stream_position(i: i64) -> (u64, u64) {
    if i >= 0 {
        (FORWARD_STREAM, i as u64)
    } else {
        (BACKWARD_STREAM, (-(i + 1)) as u64)
    }
}

fn draw(probs: &[f64], u: f64) -> u32 {
    let mut acc = 0.0;
    for (s, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return s as u32;
        }
    }
    // u landed in the rounding slack above the last cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32
}

/// A realized two-sided orbit `(x_n)` of the base process.
///
/// `forward[i]` is `x_i` and `backward[k]` is `x_{-(k+1)}`; `get` extends the
/// orbit beyond the materialized range without changing emitted entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolPath {
    process: BaseProcess,
    seed: u64,
    offset: i64,
    forward: Vec<u32>,
    backward: Vec<u32>,
}

impl SymbolPath {
    pub fn forward(&self) -> &[u32] {
        &self.forward
    }

    pub fn backward(&self) -> &[u32] {
        &self.backward
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn process(&self) -> &BaseProcess {
        &self.process
    }

    /// Symbol `x_i` for any signed index.
    pub fn get(&self, i: i64) -> u32 {
        if i >= 0 && (i as usize) < self.forward.len() {
            self.forward[i as usize]
        } else if i < 0 && ((-i - 1) as usize) < self.backward.len() {
            self.backward[(-i - 1) as usize]
        } else {
            self.process.symbol_at(self.seed, i + self.offset)
        }
    }

    /// Symbols `x_start, ..., x_{start+len-1}`.
    pub fn window(&self, start: i64, len: usize) -> Vec<u32> {
        (0..len as i64).map(|k| self.get(start + k)).collect()
    }

    /// Ensure at least `n_forward`/`n_backward` entries are materialized.
    pub fn extend(&mut self, n_forward: usize, n_backward: usize) {
        if n_forward > self.forward.len() {
            let start = self.forward.len() as i64;
            let more = self.process.fill(self.seed, start + self.offset, n_forward - self.forward.len(), false);
            self.forward.extend(more);
        }
        if n_backward > self.backward.len() {
            let start = -(self.backward.len() as i64) - 1;
            let more = self.process.fill(self.seed, start + self.offset, n_backward - self.backward.len(), true);
            self.backward.extend(more);
        }
    }

    /// Whitespace-separated forward symbols.
    pub fn dump(&self) -> String {
        self.forward.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    }
}

pub fn sample_path(process: &BaseProcess, n_forward: usize, n_backward: usize, seed: u64) -> Result<SymbolPath> {
    if n_forward == 0 {
        return Err(Error::Config("n_forward must be at least 1".into()));
    }
    process.validate()?;
    let mut path = SymbolPath {
        process: process.clone(),
        seed,
        offset: 0,
        forward: Vec::new(),
        backward: Vec::new(),
    };
    path.extend(n_forward, n_backward);
    Ok(path)
}

/// The path seen from `θ^k x`: index `i` of the result is index `i + k` of `path`.
pub fn shift(path: &SymbolPath, k: i64) -> SymbolPath {
    let mut out = SymbolPath {
        process: path.process.clone(),
        seed: path.seed,
        offset: path.offset + k,
        forward: Vec::with_capacity(path.forward.len()),
        backward: Vec::with_capacity(path.backward.len()),
    };
    out.forward = (0..path.forward.len() as i64).map(|i| path.get(i + k)).collect();
    out.backward = (0..path.backward.len() as i64).map(|j| path.get(-j - 1 + k)).collect();
    out
}

/// Seeds for `n` independent Monte-Carlo samples derived from one master seed.
pub(crate) fn sample_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// A path for sample `s`, randomizing the phase of periodic words so that
/// samples are drawn from the invariant measure.
pub(crate) fn sample_invariant_path(
    process: &BaseProcess,
    n_forward: usize,
    n_backward: usize,
    seed: u64,
) -> Result<SymbolPath> {
    let path = sample_path(process, n_forward, n_backward, seed)?;
    let period = process.period();
    if period > 1 {
        let phase = (seed % period as u64) as i64;
        Ok(shift(&path, phase))
    } else {
        Ok(path)
    }
}

/// Streaming mean/variance accumulator (Welford) with parallel merge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for RunningStats {
    fn default() -> Self {
        RunningStats { count: 0, mean: 0.0, m2: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn merge(&self, other: &RunningStats) -> RunningStats {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        RunningStats {
            count: n,
            mean: self.mean + delta * nb / n as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n as f64,
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    /// Sample variance with the `n - 1` denominator; 0 for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

pub fn birkhoff_stats(series: &[f64]) -> Result<RunningStats> {
    if series.is_empty() {
        return Err(Error::Config("empty series".into()));
    }
    let mut stats = RunningStats::new();
    for (index, &value) in series.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
        stats.push(value);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_and_periodic_paths() {
        let p = sample_path(&BaseProcess::deterministic(0), 4, 0, 1).unwrap();
        assert_eq!(p.forward(), &[0, 0, 0, 0]);
        let p = sample_path(&BaseProcess::periodic(vec![0, 1]).unwrap(), 5, 2, 1).unwrap();
        assert_eq!(p.forward(), &[0, 1, 0, 1, 0]);
        assert_eq!(p.backward(), &[1, 0]);
        let s = shift(&p, 1);
        assert_eq!(s.forward(), &[1, 0, 1, 0, 1]);
    }

    #[test]
    fn empty_symbol_set_is_rejected() {
        assert!(matches!(BaseProcess::iid(vec![]), Err(Error::Config(_))));
        assert!(BaseProcess::iid(vec![0.5, 0.6]).is_err());
        assert!(BaseProcess::iid(vec![1.5, -0.5]).is_err());
        assert!(sample_path(&BaseProcess::deterministic(0), 0, 0, 1).is_err());
    }

    #[test]
    fn iid_frequency() {
        let p = BaseProcess::iid(vec![0.5, 0.5]).unwrap();
        let path = sample_path(&p, 100_000, 0, 7).unwrap();
        let zeros = path.forward().iter().filter(|&&s| s == 0).count() as f64 / 1e5;
        assert!((0.49..=0.51).contains(&zeros), "{zeros}");
    }

    #[test]
    fn frequency_bound_on_seed_suite() {
        let probs = vec![0.2, 0.3, 0.5];
        let p = BaseProcess::iid(probs.clone()).unwrap();
        let n = 20_000;
        for seed in 0..10 {
            let path = sample_path(&p, n, 0, seed).unwrap();
            for (a, &pa) in probs.iter().enumerate() {
                let f = path.forward().iter().filter(|&&s| s == a as u32).count() as f64 / n as f64;
                assert!((f - pa).abs() <= 5.0 * (pa * (1.0 - pa) / n as f64).sqrt());
            }
        }
    }

    #[test]
    fn lazy_extension_matches_materialized() {
        let p = BaseProcess::iid(vec![0.3, 0.7]).unwrap();
        let big = sample_path(&p, 500, 300, 42).unwrap();
        let mut small = sample_path(&p, 10, 3, 42).unwrap();
        for i in -300..500 {
            assert_eq!(small.get(i), big.get(i), "index {i}");
        }
        small.extend(500, 300);
        assert_eq!(small.forward(), big.forward());
        assert_eq!(small.backward(), big.backward());
    }

    #[test]
    fn birkhoff_examples() {
        let s = birkhoff_stats(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.variance(), 0.0);
        let s = birkhoff_stats(&[0.0, 2.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.variance(), 2.0);
        assert!(matches!(birkhoff_stats(&[0.0, f64::NAN]), Err(Error::NonFinite { index: 1, .. })));
    }

    #[test]
    fn two_point_variance() {
        // ±a with a = log2·log(4/3)/log12: variance a² = 6.4396e-3
        let a = 0.080_246_884_700_721_5_f64;
        let p = BaseProcess::iid(vec![0.5, 0.5]).unwrap();
        let path = sample_path(&p, 10_000, 0, 3).unwrap();
        let series: Vec<f64> = path.forward().iter().map(|&s| if s == 0 { a } else { -a }).collect();
        let v = birkhoff_stats(&series).unwrap().variance();
        assert!((v / (a * a) - 1.0).abs() < 0.1, "{v}");
    }

    proptest! {
        #[test]
        fn shift_group_law(a in -50i64..50, b in -50i64..50, seed in 0u64..1000) {
            let p = BaseProcess::iid(vec![0.25, 0.25, 0.5]).unwrap();
            let path = sample_path(&p, 40, 40, seed).unwrap();
            let lhs = shift(&shift(&path, a), b);
            let rhs = shift(&path, a + b);
            for i in -60..60 {
                prop_assert_eq!(lhs.get(i), rhs.get(i));
            }
            let back = shift(&shift(&path, a), -a);
            prop_assert_eq!(back.forward(), path.forward());
            prop_assert_eq!(back.backward(), path.backward());
        }

        #[test]
        fn merge_is_order_insensitive(xs in prop::collection::vec(-1e3f64..1e3, 2..60), cut in 1usize..59) {
            let cut = cut.min(xs.len() - 1);
            let whole = birkhoff_stats(&xs).unwrap();
            let a = birkhoff_stats(&xs[..cut]).unwrap();
            let b = birkhoff_stats(&xs[cut..]).unwrap();
            for m in [a.merge(&b), b.merge(&a)] {
                prop_assert!((m.mean - whole.mean).abs() <= 1e-10 * (1.0 + whole.mean.abs()));
                prop_assert!((m.variance() - whole.variance()).abs() <= 1e-10 * (1.0 + whole.variance()));
                prop_assert_eq!(m.count, whole.count);
            }
        }
    }
}
