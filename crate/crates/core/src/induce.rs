//! Inducing for systems that expand only in the mean.
//!
//! The return set `A` is built by the refinement
//! `A_{k+1} = {x ∈ A_k : Σ_{j<τ_{A_k}(x)} log γ_{x_j} > 0}` starting from
//! `A_0 = X`, with per-symbol expansion floors `γ_a` in place of pointwise
//! derivatives. Membership is three-valued: a window is accepted or rejected
//! only when every continuation agrees, and undecided windows count as
//! rejected. The refinement stops at the first level that adds no rejection;
//! after such a level no later level can reject anything, so accepted points
//! keep a return block of product `> 1` for good.

use rayon::prelude::*;
use serde::Serialize;

use crate::base::{sample_path, sample_seeds, BaseProcess, SymbolPath};
use crate::error::{Error, Result};
use crate::fibers::FiberFamily;
use crate::pressure::{
    best_expected_pressure, bisect_decreasing, BowenOptions, BowenResult, EstimateMethod, ExpectedPressureEstimate,
    MonteCarlo,
};
use crate::transfer::{FiberFunction, GridOperator, Potential, TransferOptions};

/// Largest supported window depth.
pub const MAX_DEPTH: usize = 24;
/// Cap on the number of table entries over all window lengths.
pub const MAX_TABLE_ENTRIES: usize = 1 << 26;
/// Block sums of `log γ` must exceed this to count as expanding.
pub const LOG_MARGIN: f64 = 1e-12;
const MAX_LEVELS: usize = 64;
const MAX_PATH_LEVELS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
    Undecided,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Accept => "accept",
            Decision::Reject => "reject",
            Decision::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelSummary {
    pub level: usize,
    pub new_rejections: usize,
    /// Probability of accepted windows of full length.
    pub accepted_mass: f64,
    pub rejected_mass: f64,
}

/// One step of the three-valued refinement.
///
/// `prev(j)` is the previous-level status of the point `j` steps ahead;
/// `None` once the window is exhausted.
fn refine_step(
    current: Decision,
    log_floors: &[f64],
    symbols: impl Fn(usize) -> u32,
    prev: impl Fn(usize) -> Option<Decision>,
) -> (Decision, usize) {
    if current == Decision::Reject {
        return (Decision::Reject, 0);
    }
    let mut sum = 0.0;
    let mut j = 1;
    loop {
        sum += log_floors[symbols(j - 1) as usize];
        match prev(j) {
            None | Some(Decision::Undecided) => return (Decision::Undecided, 0),
            Some(Decision::Reject) => j += 1,
            Some(Decision::Accept) => {
                let out = if sum > LOG_MARGIN {
                    if current == Decision::Accept {
                        Decision::Accept
                    } else {
                        Decision::Undecided
                    }
                } else {
                    Decision::Reject
                };
                return (out, j);
            }
        }
    }
}

/// The expanding return set as a decision table over forward windows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpandingSetSpec {
    pub depth: usize,
    pub alphabet: usize,
    /// `log γ_a` per symbol.
    pub log_floors: Vec<f64>,
    /// `Σ_a m(a) log γ_a`.
    pub mean_log_expansion: f64,
    /// Refinement level at which the table was taken.
    pub level: usize,
    pub trace: Vec<LevelSummary>,
    /// Probability of accepted full-length windows (undecided counted as rejected).
    pub measure: f64,
    /// One minus the probability of rejected full-length windows.
    pub measure_upper: f64,
    #[serde(skip)]
    status: Vec<Vec<Decision>>,
    /// Length of the return block that decided each entry (0 if none).
    #[serde(skip)]
    block_len: Vec<Vec<u8>>,
}

impl ExpandingSetSpec {
    fn code(&self, window: &[u32]) -> usize {
        window.iter().fold(0usize, |acc, &s| acc * self.alphabet + s as usize)
    }

    fn decode(&self, len: usize, code: usize) -> Vec<u32> {
        let mut w = vec![0u32; len];
        let mut rest = code;
        for k in (0..len).rev() {
            w[k] = (rest % self.alphabet) as u32;
            rest /= self.alphabet;
        }
        w
    }

    /// Decision for a window of length at most `depth`.
    pub fn decision(&self, window: &[u32]) -> Result<Decision> {
        if window.len() > self.depth {
            return Err(Error::Config(format!("window longer than depth {}", self.depth)));
        }
        if let Some(&s) = window.iter().find(|&&s| s as usize >= self.alphabet) {
            return Err(Error::Config(format!("symbol {s} outside alphabet of size {}", self.alphabet)));
        }
        Ok(self.status[window.len()][self.code(window)])
    }

    /// Whether a point whose forward window is `window` belongs to `A`.
    pub fn accepts(&self, window: &[u32]) -> bool {
        let n = window.len().min(self.depth);
        matches!(self.decision(&window[..n]), Ok(Decision::Accept))
    }

    /// The return block that decided `window`, with its `Σ log γ`.
    pub fn return_block(&self, window: &[u32]) -> Option<(Vec<u32>, f64)> {
        self.decision(window).ok()?;
        let len = self.block_len[window.len()][self.code(window)] as usize;
        if len == 0 {
            return None;
        }
        let block = window[..len].to_vec();
        let sum = block.iter().map(|&s| self.log_floors[s as usize]).sum();
        Some((block, sum))
    }

    /// All entries `(window, decision)` in order of length, then lexicographic.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<u32>, Decision)> + '_ {
        (0..=self.depth).flat_map(move |len| {
            self.status[len].iter().enumerate().map(move |(c, &d)| (self.decode(len, c), d))
        })
    }

    /// Smallest `Σ log γ` over the return blocks of accepted windows.
    pub fn min_accepted_block_log(&self) -> f64 {
        let mut min = f64::INFINITY;
        for len in 1..=self.depth {
            for (c, &d) in self.status[len].iter().enumerate() {
                if d == Decision::Accept {
                    let w = self.decode(len, c);
                    if let Some((_, sum)) = self.return_block(&w) {
                        min = min.min(sum);
                    }
                }
            }
        }
        min
    }

    fn check_family(&self, family: &FiberFamily) -> Result<()> {
        if self.alphabet > family.num_symbols() {
            return Err(Error::Config("expanding set uses more symbols than the family".into()));
        }
        for (a, &lf) in self.log_floors.iter().enumerate() {
            if family.expansion_floor(a as u32).ln() != lf {
                return Err(Error::Config("expanding set was built for a different family".into()));
            }
        }
        Ok(())
    }
}

/// Build `A` by iterating the refinement on windows of length `≤ depth`.
pub fn find_expanding_set(family: &FiberFamily, process: &BaseProcess, depth: usize) -> Result<ExpandingSetSpec> {
    process.validate()?;
    if depth == 0 || depth > MAX_DEPTH {
        return Err(Error::Config(format!("window depth must lie in 1..={MAX_DEPTH}")));
    }
    let alphabet = process.alphabet_size();
    if alphabet > family.num_symbols() {
        return Err(Error::Config(format!(
            "process uses {alphabet} symbols, family has {}",
            family.num_symbols()
        )));
    }
    let log_floors: Vec<f64> = (0..alphabet as u32).map(|a| family.expansion_floor(a).ln()).collect();
    let marginal = process.marginal();
    let mean_log_expansion: f64 = marginal.iter().zip(&log_floors).map(|(p, l)| p * l).sum();
    if !(mean_log_expansion > 0.0) {
        return Err(Error::NotMeanExpanding(mean_log_expansion));
    }

    let mut sizes = Vec::with_capacity(depth + 1);
    let mut total = 0usize;
    for len in 0..=depth {
        let size = alphabet.checked_pow(len as u32).unwrap_or(usize::MAX);
        total = total.saturating_add(size);
        sizes.push(size);
    }
    if total > MAX_TABLE_ENTRIES {
        return Err(Error::Resource(format!("{total} windows exceed the cap {MAX_TABLE_ENTRIES}")));
    }
    let probs: Vec<f64> = (0..sizes[depth])
        .map(|c| {
            let mut w = vec![0u32; depth];
            let mut rest = c;
            for k in (0..depth).rev() {
                w[k] = (rest % alphabet) as u32;
                rest /= alphabet;
            }
            process.window_probability(&w)
        })
        .collect();

    let mut status: Vec<Vec<Decision>> = sizes.iter().map(|&n| vec![Decision::Accept; n]).collect();
    let mut block_len: Vec<Vec<u8>> = sizes.iter().map(|&n| vec![0u8; n]).collect();
    let mut trace = Vec::new();
    let mut level = 0;
    while level < MAX_LEVELS {
        level += 1;
        let prev = status.clone();
        let mut new_rejections = 0;
        for len in 0..=depth {
            for code in 0..sizes[len] {
                let current = prev[len][code];
                if len == 0 {
                    status[0][0] = if current == Decision::Reject { Decision::Reject } else { Decision::Undecided };
                    continue;
                }
                let digit = |j: usize| ((code / sizes[len - 1 - j]) % alphabet) as u32;
                let (d, blen) = refine_step(current, &log_floors, digit, |j| {
                    (j <= len).then(|| prev[len - j][code % sizes[len - j]])
                });
                if d == Decision::Reject && current != Decision::Reject {
                    new_rejections += 1;
                    block_len[len][code] = blen as u8;
                } else if d == Decision::Accept {
                    block_len[len][code] = blen as u8;
                }
                status[len][code] = d;
            }
        }
        let mut accepted_mass = 0.0;
        let mut rejected_mass = 0.0;
        for (code, &p) in probs.iter().enumerate() {
            match status[depth][code] {
                Decision::Accept => accepted_mass += p,
                Decision::Reject => rejected_mass += p,
                Decision::Undecided => {}
            }
        }
        trace.push(LevelSummary { level, new_rejections, accepted_mass, rejected_mass });
        if new_rejections == 0 {
            break;
        }
    }
    let last = trace.last().copied().expect("at least one level");
    if last.new_rejections != 0 {
        return Err(Error::Convergence(format!("refinement still rejecting after {MAX_LEVELS} levels")));
    }
    if !(last.accepted_mass > 0.0) {
        return Err(Error::DepthInsufficient(depth));
    }
    Ok(ExpandingSetSpec {
        depth,
        alphabet,
        log_floors,
        mean_log_expansion,
        level,
        trace,
        measure: last.accepted_mass,
        measure_upper: 1.0 - last.rejected_mass,
        status,
        block_len,
    })
}

/// A first-return block `x_s, …, x_{s+τ-1}` between consecutive visits to `A`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InducedBlock {
    pub start: i64,
    pub word: Vec<u32>,
    pub tau: usize,
    /// `Σ_j log γ_{x_{s+j}}`.
    pub log_expansion: f64,
}

impl InducedBlock {
    /// `Π_j γ_{x_{s+j}}`.
    pub fn expansion(&self) -> f64 {
        self.log_expansion.exp()
    }

    /// Induced potential `φ̄(z) = Σ_{j<τ} φ(T^j z)` for `z` in the fiber at the block start.
    pub fn induced_potential(&self, family: &FiberFamily, potential: &Potential, z: f64) -> Result<f64> {
        if !family.is_interval() {
            return Err(Error::Unsupported("induced potential needs an interval family".into()));
        }
        let mut z = z;
        let mut total = 0.0;
        for (j, &s) in self.word.iter().enumerate() {
            let b = family.branch_of(s, z)?;
            let d = family.branches(s)[b].derivative(z);
            total += potential.local(s, b, d.ln()) + potential.offset(self.start + j as i64, s);
            z = family.branches(s)[b].forward(z).clamp(0.0, 1.0);
        }
        Ok(total)
    }
}

/// Statuses of the materialized forward positions at the first quiet level.
fn path_statuses(log_floors: &[f64], symbols: &[u32]) -> Result<Vec<Decision>> {
    let m = symbols.len();
    let mut status = vec![Decision::Accept; m];
    for _ in 0..MAX_PATH_LEVELS {
        let prev = status.clone();
        let mut new_rejections = 0;
        for i in 0..m {
            let (d, _) = refine_step(prev[i], log_floors, |j| symbols[i + j], |j| prev.get(i + j).copied());
            if d == Decision::Reject && prev[i] != Decision::Reject {
                new_rejections += 1;
            }
            status[i] = d;
        }
        if new_rejections == 0 {
            return Ok(status);
        }
    }
    Err(Error::Convergence(format!("return set not stable after {MAX_PATH_LEVELS} levels")))
}

/// The first `n_blocks` first-return blocks along the materialized forward path,
/// starting at the first visit to `A`.
pub fn induced_path(
    family: &FiberFamily,
    set: &ExpandingSetSpec,
    path: &SymbolPath,
    n_blocks: usize,
) -> Result<Vec<InducedBlock>> {
    set.check_family(family)?;
    let symbols = path.forward();
    if let Some(&s) = symbols.iter().find(|&&s| s as usize >= set.alphabet) {
        return Err(Error::Config(format!("path symbol {s} outside the expanding set's alphabet")));
    }
    let status = path_statuses(&set.log_floors, symbols)?;
    let too_short = || Error::PathTooShort(symbols.len());
    let mut p = match status.iter().position(|&d| d != Decision::Reject) {
        Some(i) if status[i] == Decision::Accept => i,
        _ => return Err(too_short()),
    };
    let mut blocks = Vec::with_capacity(n_blocks);
    while blocks.len() < n_blocks {
        let next = (p + 1..symbols.len()).find(|&j| status[j] != Decision::Reject).ok_or_else(too_short)?;
        if status[next] != Decision::Accept {
            return Err(too_short());
        }
        let word = symbols[p..next].to_vec();
        let log_expansion: f64 = word.iter().map(|&s| set.log_floors[s as usize]).sum();
        if !(log_expansion > LOG_MARGIN) {
            return Err(Error::Convergence(format!("block at {p} does not expand")));
        }
        blocks.push(InducedBlock { start: p as i64, tau: next - p, word, log_expansion });
        p = next;
    }
    Ok(blocks)
}

/// Sample a path long enough for `n_blocks` blocks.
fn sample_blocks(
    family: &FiberFamily,
    set: &ExpandingSetSpec,
    process: &BaseProcess,
    n_blocks: usize,
    seed: u64,
) -> Result<(SymbolPath, Vec<InducedBlock>)> {
    let mut len = 4 * n_blocks + 256;
    loop {
        let path = sample_path(process, len, 0, seed)?;
        match induced_path(family, set, &path, n_blocks) {
            Ok(blocks) => return Ok((path, blocks)),
            Err(Error::PathTooShort(_)) if len < (1 << 24) => len *= 2,
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KacReport {
    pub n_blocks: usize,
    pub mean_tau: f64,
    pub stderr_tau: f64,
    /// `mean τ · [measure, measure_upper]`.
    pub product: (f64, f64),
    /// Whether 1 lies in the product range widened by 3σ.
    pub consistent: bool,
}

/// Return-time bookkeeping `E_A τ · m(A) = 1` against the table's measure bracket.
pub fn kac_check(
    family: &FiberFamily,
    set: &ExpandingSetSpec,
    process: &BaseProcess,
    n_blocks: usize,
    seed: u64,
) -> Result<KacReport> {
    if n_blocks < 2 {
        return Err(Error::Config("kac check needs at least 2 blocks".into()));
    }
    let (_, blocks) = sample_blocks(family, set, process, n_blocks, seed)?;
    let taus: Vec<f64> = blocks.iter().map(|b| b.tau as f64).collect();
    let stats = crate::base::birkhoff_stats(&taus)?;
    let (mean, se) = (stats.mean, stats.stderr());
    let lo = (mean - 3.0 * se) * set.measure;
    let hi = (mean + 3.0 * se) * set.measure_upper;
    Ok(KacReport {
        n_blocks,
        mean_tau: mean,
        stderr_tau: se,
        product: (mean * set.measure, mean * set.measure_upper),
        consistent: lo <= 1.0 && 1.0 <= hi,
    })
}

/// Knobs for the induced route.
#[derive(Debug, Clone, PartialEq)]
pub struct InduceOptions {
    /// Window depth `W` of the decision table.
    pub depth: usize,
    pub n_blocks: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Extra steps pushed past the last block so the two partition sums share a far end.
    pub margin: usize,
    pub transfer: TransferOptions,
    /// Sampling of the direct route.
    pub direct: MonteCarlo,
}

impl Default for InduceOptions {
    fn default() -> Self {
        InduceOptions {
            depth: 8,
            n_blocks: 256,
            n_samples: 64,
            seed: 1,
            margin: 128,
            transfer: TransferOptions::default(),
            direct: MonteCarlo::default(),
        }
    }
}

impl InduceOptions {
    fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.n_samples < 2 {
            return Err(Error::Config("induced route needs n_blocks >= 1 and n_samples >= 2".into()));
        }
        Ok(())
    }
}

/// `E P(φ)` per unit of original time through the induced system.
///
/// On each sample path the induced pressures of `N` consecutive blocks sum to
/// `log(L^{E-s_1}1)(y) − log(L^{E-s_{N+1}}1)(y)` for a common far end `E`,
/// which is divided by `Σ τ`.
pub fn induced_expected_pressure(
    family: &FiberFamily,
    process: &BaseProcess,
    set: &ExpandingSetSpec,
    potential: &Potential,
    opts: &InduceOptions,
) -> Result<ExpectedPressureEstimate> {
    opts.validate()?;
    if !family.is_interval() {
        return Err(Error::Unsupported("the induced route needs an interval family".into()));
    }
    potential.validate(family)?;
    let op = GridOperator::new(family, potential, opts.transfer.grid)?;
    let one = FiberFunction::constant(opts.transfer.grid, 1.0)?;
    let y = opts.transfer.anchor.unwrap_or(0.5);
    let seeds = sample_seeds(opts.seed, opts.n_samples);
    let values: Vec<Result<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let (path, blocks) = sample_blocks(family, set, process, opts.n_blocks, seed)?;
            let first = blocks[0].start;
            let last = blocks.last().expect("n_blocks >= 1");
            let stop = last.start + last.tau as i64;
            let end = stop + opts.margin as i64;
            let whole = crate::transfer::iterate_with(&op, &path, first, &one, (end - first) as usize)?;
            let tail = crate::transfer::iterate_with(&op, &path, stop, &one, (end - stop) as usize)?;
            let sum = whole.log_eval(y) - tail.log_eval(y);
            if !sum.is_finite() {
                return Err(Error::NonFinite { index: first as usize, value: sum });
            }
            Ok(sum / (stop - first) as f64)
        })
        .collect();
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    let stats = crate::base::birkhoff_stats(&values)?;
    Ok(ExpectedPressureEstimate {
        value: stats.mean,
        stderr: stats.stderr(),
        n_steps: opts.n_blocks,
        n_samples: opts.n_samples,
        failures: 0,
        method: EstimateMethod::MonteCarlo,
        potential: format!("induced({})", potential.describe()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub t: f64,
    pub direct: ExpectedPressureEstimate,
    pub induced: ExpectedPressureEstimate,
    pub difference: f64,
    pub combined_stderr: f64,
    /// `|difference| ≤ 3·combined_stderr + tol`, with `tol` the transfer tolerance.
    pub agree: bool,
}

/// Compare `E P(−t log|T'|)` computed directly and through the induced system.
pub fn induced_pressure_consistency(
    family: &FiberFamily,
    process: &BaseProcess,
    t: f64,
    opts: &InduceOptions,
) -> Result<ConsistencyReport> {
    let set = find_expanding_set(family, process, opts.depth)?;
    consistency_with(family, process, &set, &Potential::geometric(t), t, opts)
}

pub(crate) fn consistency_with(
    family: &FiberFamily,
    process: &BaseProcess,
    set: &ExpandingSetSpec,
    potential: &Potential,
    t: f64,
    opts: &InduceOptions,
) -> Result<ConsistencyReport> {
    let direct = best_expected_pressure(family, process, potential, &opts.direct, &opts.transfer)?;
    let induced = induced_expected_pressure(family, process, set, potential, opts)?;
    let difference = induced.value - direct.value;
    let combined_stderr = direct.stderr.hypot(induced.stderr);
    let agree = difference.abs() <= 3.0 * combined_stderr + opts.transfer.tol.max(1e-9);
    Ok(ConsistencyReport { t, direct, induced, difference, combined_stderr, agree })
}

/// Bowen root of the built-in mean-expanding example through the induced system.
///
/// Fails with a hypothesis error if the root exceeds `1/2 + 0.02`.
pub fn mean_example_bowen(opts: &InduceOptions, tol_t: f64) -> Result<BowenResult> {
    let family = FiberFamily::mean_example();
    let process = BaseProcess::iid(vec![0.5, 0.5])?;
    let set = find_expanding_set(&family, &process, opts.depth)?;
    let bowen = BowenOptions {
        t_lo: 0.0,
        t_hi: 1.0,
        tol_t: Some(tol_t),
        mc: opts.direct,
        transfer: opts.transfer.clone(),
        max_iterations: 200,
    };
    let eval = |t: f64| induced_expected_pressure(&family, &process, &set, &Potential::geometric(t), opts);
    let result = bisect_decreasing(eval, &bowen, (0.0, 1.0))?;
    if result.h > 0.52 {
        return Err(Error::Hypothesis(format!("induced Bowen root {} exceeds 0.52", result.h)));
    }
    Ok(result)
}

/// Closed-form `E P(t)` when symbol 0 carries branches of slope `1/2` and `8`
/// and symbol 1 two branches of slope `8`, each with probability `1/2`.
pub fn affine_surrogate_pressure(t: f64) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    0.5 * ((t * ln2).exp() + (-3.0 * t * ln2).exp()).ln() + 0.5 * (ln2 - 3.0 * t * ln2)
}

/// Branch-constant potential on the mean example reproducing the surrogate.
pub fn affine_surrogate_potential(t: f64) -> Potential {
    let ln2 = std::f64::consts::LN_2;
    Potential::BranchConstant { values: vec![vec![t * ln2, -3.0 * t * ln2], vec![-3.0 * t * ln2, -3.0 * t * ln2]] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mean_set(depth: usize) -> (FiberFamily, BaseProcess, ExpandingSetSpec) {
        let f = FiberFamily::mean_example();
        let p = BaseProcess::iid(vec![0.5, 0.5]).unwrap();
        let s = find_expanding_set(&f, &p, depth).unwrap();
        (f, p, s)
    }

    fn quick() -> InduceOptions {
        InduceOptions {
            n_blocks: 96,
            n_samples: 16,
            margin: 64,
            transfer: TransferOptions { grid: 512, ..TransferOptions::default() },
            direct: MonteCarlo { n_steps: 120, n_samples: 24, seed: 3 },
            ..InduceOptions::default()
        }
    }

    #[test]
    fn first_level_keeps_expanding_symbol() {
        let (_, _, s) = mean_set(8);
        assert_eq!(s.trace[0].new_rejections, (2usize.pow(9) - 2) / 2);
        assert_eq!(s.decision(&[0]).unwrap(), Decision::Reject);
        assert_eq!(s.decision(&[0, 1, 1]).unwrap(), Decision::Reject);
    }

    #[test]
    fn mean_example_blocks() {
        let (_, _, s) = mean_set(8);
        let w = [1, 0, 1, 1, 1, 0, 0, 1];
        assert_eq!(s.decision(&w).unwrap(), Decision::Accept);
        let (block, sum) = s.return_block(&w).unwrap();
        assert_eq!(block, vec![1, 0]);
        assert_abs_diff_eq!(sum.exp(), 4.0, epsilon = 1e-12);

        let r = [1, 0, 0, 0, 1, 1, 1, 1];
        assert_eq!(s.decision(&r).unwrap(), Decision::Reject);
        let (block, sum) = s.return_block(&r).unwrap();
        assert_eq!(block, vec![1, 0, 0, 0]);
        assert_abs_diff_eq!(sum.exp(), 1.0, epsilon = 1e-12);
        assert!(s.level >= 3);
        assert!(s.min_accepted_block_log() > 0.0);
        assert!(s.measure > 0.3 && s.measure <= s.measure_upper && s.measure_upper < 0.5);
    }

    #[test]
    fn uniform_family_accepts_everything() {
        let f = FiberFamily::cantor();
        let p = BaseProcess::iid(vec![0.5, 0.5]).unwrap();
        let s = find_expanding_set(&f, &p, 6).unwrap();
        assert_eq!(s.level, 1);
        assert_eq!(s.measure, 1.0);
        let path = sample_path(&p, 50, 0, 4).unwrap();
        let blocks = induced_path(&f, &s, &path, 40).unwrap();
        assert!(blocks.iter().all(|b| b.tau == 1));
        assert_eq!(blocks[0].start, 0);
    }

    #[test]
    fn not_mean_expanding() {
        let f = FiberFamily::mean_example();
        let p = BaseProcess::iid(vec![0.9, 0.1]).unwrap();
        assert!(matches!(find_expanding_set(&f, &p, 8), Err(Error::NotMeanExpanding(v)) if v < 0.0));
        let p = BaseProcess::iid(vec![0.5, 0.5]).unwrap();
        assert!(matches!(find_expanding_set(&f, &p, 0), Err(Error::Config(_))));
        assert!(matches!(find_expanding_set(&f, &p, 25), Err(Error::Config(_))));
    }

    #[test]
    fn depth_one_is_insufficient_for_mean_example() {
        let f = FiberFamily::mean_example();
        let p = BaseProcess::iid(vec![0.5, 0.5]).unwrap();
        assert!(matches!(find_expanding_set(&f, &p, 1), Err(Error::DepthInsufficient(1))));
    }

    #[test]
    fn blocks_on_explicit_paths() {
        let (f, _, s) = mean_set(8);
        let path = sample_path(&BaseProcess::periodic(vec![1, 0]).unwrap(), 40, 0, 0).unwrap();
        let blocks = induced_path(&f, &s, &path, 5).unwrap();
        assert_eq!(blocks[0].word, vec![1, 0]);
        assert_eq!(blocks[0].tau, 2);
        assert_abs_diff_eq!(blocks[0].expansion(), 4.0, epsilon = 1e-12);

        let ones = sample_path(&BaseProcess::deterministic(1), 30, 0, 0).unwrap();
        let blocks = induced_path(&f, &s, &ones, 10).unwrap();
        assert!(blocks.iter().all(|b| b.word == vec![1] && b.tau == 1));
        assert_abs_diff_eq!(blocks[0].expansion(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn path_too_short() {
        let (f, _, s) = mean_set(8);
        let zeros = sample_path(&BaseProcess::deterministic(0), 30, 0, 0).unwrap();
        assert!(matches!(induced_path(&f, &s, &zeros, 1), Err(Error::PathTooShort(30))));
    }

    #[test]
    fn blocks_partition_and_expand() {
        let (f, p, s) = mean_set(8);
        let path = sample_path(&p, 3000, 0, 11).unwrap();
        let blocks = induced_path(&f, &s, &path, 500).unwrap();
        let first = blocks[0].start as usize;
        let joined: Vec<u32> = blocks.iter().flat_map(|b| b.word.clone()).collect();
        assert_eq!(&path.forward()[first..first + joined.len()], &joined[..]);
        for pair in blocks.windows(2) {
            assert_eq!(pair[0].start + pair[0].tau as i64, pair[1].start);
        }
        assert!(blocks.iter().all(|b| b.expansion() > 1.0));
    }

    #[test]
    fn kac_bookkeeping() {
        let (f, p, s) = mean_set(8);
        let k = kac_check(&f, &s, &p, 4000, 5).unwrap();
        assert!(k.consistent, "{k:?}");
    }

    #[test]
    fn induced_potential_is_additive() {
        let (f, _, _) = mean_set(8);
        let block = InducedBlock { start: 0, word: vec![1, 0, 0, 1], tau: 4, log_expansion: 0.0 };
        let pot = affine_surrogate_potential(0.7);
        let branches = [1usize, 0, 1, 0];
        let mut z = 0.5;
        for (&s, &b) in block.word.iter().zip(&branches).rev() {
            z = f.branches(s)[b].inverse(z);
        }
        let mut expected = 0.0;
        let mut w = z;
        for &s in &block.word {
            let b = f.branch_of(s, w).unwrap();
            let Potential::BranchConstant { values } = &pot else { unreachable!() };
            expected += values[s as usize][b];
            w = f.branches(s)[b].forward(w);
        }
        assert_eq!(block.induced_potential(&f, &pot, z).unwrap(), expected);

        // geometric: −t log|(T^τ)'|, against a central difference
        let t = 0.4;
        let g = block.induced_potential(&f, &Potential::geometric(t), z).unwrap();
        let compose = |mut x: f64| {
            for &s in &block.word {
                let b = f.branch_of(s, x).unwrap();
                x = f.branches(s)[b].forward(x);
            }
            x
        };
        let h = 1e-7;
        let slope = (compose(z + h) - compose(z - h)) / (2.0 * h);
        assert_abs_diff_eq!(g, -t * slope.abs().ln(), epsilon = 1e-5);
    }

    #[test]
    fn zero_temperature_gives_log_two() {
        let (f, p, s) = mean_set(8);
        let r = consistency_with(&f, &p, &s, &Potential::geometric(0.0), 0.0, &quick()).unwrap();
        assert_abs_diff_eq!(r.direct.value, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_eq!(r.direct.stderr, 0.0);
        assert_abs_diff_eq!(r.induced.value, std::f64::consts::LN_2, epsilon = 1e-10);
        assert!(r.agree);
    }

    #[test]
    fn surrogate_closed_form() {
        let (f, p, s) = mean_set(8);
        let t = 0.3;
        let pot = affine_surrogate_potential(t);
        let exact = affine_surrogate_pressure(t);
        let direct = best_expected_pressure(&f, &p, &pot, &MonteCarlo::default(), &TransferOptions::default()).unwrap();
        assert_abs_diff_eq!(direct.value, exact, epsilon = 1e-12);
        let induced = induced_expected_pressure(&f, &p, &s, &pot, &quick()).unwrap();
        assert!((induced.value - exact).abs() < 3.0 * induced.stderr + 1e-9, "{induced:?} vs {exact}");
    }

    #[test]
    fn cantor_routes_coincide() {
        let f = FiberFamily::cantor();
        let p = BaseProcess::iid(vec![0.5, 0.5]).unwrap();
        let s = find_expanding_set(&f, &p, 4).unwrap();
        let r = consistency_with(&f, &p, &s, &Potential::geometric(0.63), 0.63, &quick()).unwrap();
        assert!(r.agree, "{r:?}");

        let one = BaseProcess::deterministic(0);
        let s = find_expanding_set(&f, &one, 4).unwrap();
        let r = consistency_with(&f, &one, &s, &Potential::geometric(0.63), 0.63, &quick()).unwrap();
        assert!(r.difference.abs() < 1e-12, "{r:?}");
    }
}
