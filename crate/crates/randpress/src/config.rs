//! Experiment configuration: a TOML file read into typed specs.
//!
//! Validation walks the whole document and reports every offending key,
//! not just the first.

use std::fmt;
use std::path::PathBuf;

use num_complex::Complex64;
use randpress_core::base::BaseProcess;
use randpress_core::fibers::{admissible_delta, Branch, FamilyKind, FiberFamily};
use randpress_core::transfer::Potential;
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    Pressure,
    Bowen,
    Classify,
    Spectrum,
    Decay,
    Induce,
    Julia,
    Describe,
}

impl Operation {
    pub const ALL: [Operation; 8] = [
        Operation::Pressure,
        Operation::Bowen,
        Operation::Classify,
        Operation::Spectrum,
        Operation::Decay,
        Operation::Induce,
        Operation::Julia,
        Operation::Describe,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Operation::Pressure => "pressure",
            Operation::Bowen => "bowen",
            Operation::Classify => "classify",
            Operation::Spectrum => "spectrum",
            Operation::Decay => "decay",
            Operation::Induce => "induce",
            Operation::Julia => "julia",
            Operation::Describe => "describe",
        }
    }

    pub fn parse(s: &str) -> Option<Operation> {
        Operation::ALL.into_iter().find(|op| op.as_str() == s)
    }
}

/// One offending key and what is wrong with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub key: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilySpec {
    Cantor,
    MeanExample,
    Doubling,
    TwoSlope { s1: f64, s2: f64 },
    Warped { kappa: f64 },
    Quadratic { degree: u32, params: Vec<Complex64> },
    /// Affine full branches `(lo, hi)` per symbol.
    Affine { maps: Vec<Vec<(f64, f64)>> },
}

impl FamilySpec {
    pub fn build(&self) -> randpress_core::Result<FiberFamily> {
        match self {
            FamilySpec::Cantor => Ok(FiberFamily::cantor()),
            FamilySpec::MeanExample => Ok(FiberFamily::mean_example()),
            FamilySpec::Doubling => Ok(FiberFamily::doubling()),
            FamilySpec::TwoSlope { s1, s2 } => FiberFamily::two_slope(*s1, *s2),
            FamilySpec::Warped { kappa } => FiberFamily::warped(*kappa),
            FamilySpec::Quadratic { degree, params } => FiberFamily::quadratic(*degree, params.clone()),
            FamilySpec::Affine { maps } => {
                FiberFamily::new("affine", FamilyKind::PiecewiseAffineFull { maps: maps.clone() }, None)
            }
        }
    }

    pub fn num_symbols(&self) -> usize {
        match self {
            FamilySpec::Cantor | FamilySpec::MeanExample | FamilySpec::Warped { .. } => 2,
            FamilySpec::Doubling | FamilySpec::TwoSlope { .. } => 1,
            FamilySpec::Quadratic { params, .. } => params.len(),
            FamilySpec::Affine { maps } => maps.len(),
        }
    }

    /// `(max |c|, δ(d))` for polynomial families.
    pub fn admissibility(&self) -> Option<(f64, f64)> {
        match self {
            FamilySpec::Quadratic { degree, params } => {
                Some((params.iter().map(|c| c.norm()).fold(0.0, f64::max), admissible_delta(*degree)))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProcessSpec {
    /// `None` means uniform over the family's symbols.
    Iid(Option<Vec<f64>>),
    Deterministic(u32),
    Periodic(Vec<u32>),
}

impl ProcessSpec {
    pub fn build(&self, n_symbols: usize) -> randpress_core::Result<BaseProcess> {
        match self {
            ProcessSpec::Iid(None) => BaseProcess::iid(vec![1.0 / n_symbols as f64; n_symbols]),
            ProcessSpec::Iid(Some(p)) => BaseProcess::iid(p.clone()),
            ProcessSpec::Deterministic(s) => Ok(BaseProcess::deterministic(*s)),
            ProcessSpec::Periodic(w) => BaseProcess::periodic(w.clone()),
        }
    }

    fn max_symbol(&self) -> Option<u32> {
        match self {
            ProcessSpec::Iid(None) => None,
            ProcessSpec::Iid(Some(p)) => Some(p.len().saturating_sub(1) as u32),
            ProcessSpec::Deterministic(s) => Some(*s),
            ProcessSpec::Periodic(w) => w.iter().copied().max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    /// `−t log|T'|`; `None` takes `numerics.t`.
    Geometric(Option<f64>),
    BranchConstant(Vec<Vec<f64>>),
    Zero,
}

impl PotentialSpec {
    pub fn build(&self, family: &FiberFamily, default_t: f64) -> Potential {
        match self {
            PotentialSpec::Geometric(t) => Potential::geometric(t.unwrap_or(default_t)),
            PotentialSpec::BranchConstant(values) => Potential::BranchConstant { values: values.clone() },
            PotentialSpec::Zero => Potential::zero(family),
        }
    }
}

/// Numeric knobs; `None` falls back to the operation's default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Numerics {
    pub n_steps: Option<usize>,
    pub n_samples: Option<usize>,
    pub depth: Option<usize>,
    pub grid: Option<usize>,
    pub tol: Option<f64>,
    pub tol_t: Option<f64>,
    pub t: Option<f64>,
    pub t_grid: Option<Vec<f64>>,
    pub t_lo: Option<f64>,
    pub t_hi: Option<f64>,
    pub h: Option<f64>,
    pub q_grid: Option<Vec<f64>>,
    pub threshold: Option<f64>,
    pub n_blocks: Option<usize>,
    pub margin: Option<usize>,
    pub n_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub operation: Option<Operation>,
    pub family: FamilySpec,
    pub process: ProcessSpec,
    pub potential: Option<PotentialSpec>,
    pub numerics: Numerics,
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

const TOP_KEYS: &[&str] = &["operation", "seed", "workers", "family", "process", "potential", "numerics", "output"];
const NUMERIC_KEYS: &[&str] = &[
    "n_steps", "n_samples", "depth", "grid", "tol", "tol_t", "t", "t_grid", "t_lo", "t_hi", "h", "q_grid", "threshold",
    "n_blocks", "margin", "n_max",
];
const T_BOUND: f64 = 100.0;

struct Reader {
    issues: Vec<Issue>,
}

impl Reader {
    fn push(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue { key: key.into(), message: message.into() });
    }

    fn check_keys(&mut self, table: &Table, prefix: &str, allowed: &[&str]) {
        for k in table.keys() {
            if !allowed.contains(&k.as_str()) {
                self.push(join(prefix, k), "unknown key");
            }
        }
    }

    fn section<'a>(&mut self, table: &'a Table, key: &str) -> Option<&'a Table> {
        match table.get(key) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.push(key, "expected a table");
                None
            }
        }
    }

    fn string(&mut self, table: &Table, prefix: &str, key: &str) -> Option<String> {
        match table.get(key)? {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.push(join(prefix, key), "expected a string");
                None
            }
        }
    }

    fn real(&mut self, table: &Table, prefix: &str, key: &str) -> Option<f64> {
        let v = table.get(key)?;
        match as_real(v) {
            Some(x) if x.is_finite() => Some(x),
            Some(_) => {
                self.push(join(prefix, key), "must be finite");
                None
            }
            None => {
                self.push(join(prefix, key), "expected a number");
                None
            }
        }
    }

    fn real_in(&mut self, table: &Table, prefix: &str, key: &str, ok: impl Fn(f64) -> bool, range: &str) -> Option<f64> {
        let x = self.real(table, prefix, key)?;
        if ok(x) {
            Some(x)
        } else {
            self.push(join(prefix, key), format!("{x} is out of range {range}"));
            None
        }
    }

    fn integer(&mut self, table: &Table, prefix: &str, key: &str, lo: i64, hi: i64) -> Option<i64> {
        match table.get(key)? {
            Value::Integer(i) if (lo..=hi).contains(i) => Some(*i),
            Value::Integer(i) => {
                self.push(join(prefix, key), format!("{i} is out of range [{lo}, {hi}]"));
                None
            }
            _ => {
                self.push(join(prefix, key), "expected an integer");
                None
            }
        }
    }

    fn count(&mut self, table: &Table, prefix: &str, key: &str, lo: usize, hi: usize) -> Option<usize> {
        self.integer(table, prefix, key, lo as i64, hi as i64).map(|i| i as usize)
    }

    fn reals(&mut self, table: &Table, prefix: &str, key: &str) -> Option<Vec<f64>> {
        let v = table.get(key)?;
        let out = v.as_array().and_then(|a| a.iter().map(as_real).collect::<Option<Vec<f64>>>());
        match out {
            Some(xs) if xs.iter().all(|x| x.is_finite()) => Some(xs),
            _ => {
                self.push(join(prefix, key), "expected an array of finite numbers");
                None
            }
        }
    }

    fn increasing(&mut self, table: &Table, prefix: &str, key: &str) -> Option<Vec<f64>> {
        let xs = self.reals(table, prefix, key)?;
        if xs.is_empty() || xs.windows(2).any(|w| w[0] >= w[1]) {
            self.push(join(prefix, key), "must be non-empty and strictly increasing");
            return None;
        }
        if xs.iter().any(|x| x.abs() > T_BOUND) {
            self.push(join(prefix, key), format!("entries must lie in [-{T_BOUND}, {T_BOUND}]"));
            return None;
        }
        Some(xs)
    }

    fn symbols(&mut self, table: &Table, prefix: &str, key: &str) -> Option<Vec<u32>> {
        let v = table.get(key)?;
        let out = v.as_array().and_then(|a| {
            a.iter()
                .map(|x| x.as_integer().filter(|i| (0..=u32::MAX as i64).contains(i)).map(|i| i as u32))
                .collect::<Option<Vec<u32>>>()
        });
        match out {
            Some(w) if !w.is_empty() => Some(w),
            _ => {
                self.push(join(prefix, key), "expected a non-empty array of symbols");
                None
            }
        }
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn as_real(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn pair(v: &Value) -> Option<(f64, f64)> {
    match v.as_array()?.as_slice() {
        [a, b] => Some((as_real(a)?, as_real(b)?)),
        _ => None,
    }
}

impl ExperimentConfig {
    /// Parse and validate a configuration document.
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, Vec<Issue>> {
        let doc: Table = text.parse().map_err(|e: toml::de::Error| {
            vec![Issue { key: "<document>".into(), message: e.message().to_string() }]
        })?;
        let mut r = Reader { issues: Vec::new() };
        r.check_keys(&doc, "", TOP_KEYS);

        let operation = r.string(&doc, "", "operation").and_then(|s| {
            let op = Operation::parse(&s);
            if op.is_none() {
                r.push("operation", format!("unknown operation {s:?}"));
            }
            op
        });
        let seed = r.integer(&doc, "", "seed", 0, i64::MAX).map(|s| s as u64).unwrap_or(1);
        let workers = r.count(&doc, "", "workers", 1, 1024);

        let family = match r.section(&doc, "family") {
            Some(t) => parse_family(&mut r, t),
            None => {
                if !doc.contains_key("family") {
                    r.push("family", "missing section");
                }
                None
            }
        };
        let process = r.section(&doc, "process").and_then(|t| parse_process(&mut r, t)).unwrap_or(ProcessSpec::Iid(None));
        let potential = r.section(&doc, "potential").and_then(|t| parse_potential(&mut r, t));
        let numerics = r.section(&doc, "numerics").map(|t| parse_numerics(&mut r, t)).unwrap_or_default();
        let out = r.section(&doc, "output").and_then(|t| {
            r.check_keys(t, "output", &["dir"]);
            r.string(t, "output", "dir").map(PathBuf::from)
        });

        if let (Some(f), Some(max)) = (&family, process.max_symbol()) {
            if max as usize >= f.num_symbols() {
                r.push("process", format!("uses symbol {max} but the family has {} symbols", f.num_symbols()));
            }
        }
        if let (Some(f), Some(PotentialSpec::BranchConstant(values))) = (&family, &potential) {
            if values.len() != f.num_symbols() {
                r.push("potential.values", format!("needs one row per symbol ({}), got {}", f.num_symbols(), values.len()));
            }
        }
        if let (Some(lo), Some(hi)) = (numerics.t_lo, numerics.t_hi) {
            if lo >= hi {
                r.push("numerics.t_hi", format!("must exceed t_lo ({lo} >= {hi})"));
            }
        }
        if numerics.t_grid.is_some() && matches!(potential, Some(PotentialSpec::BranchConstant(_)) | Some(PotentialSpec::Zero)) {
            r.push("numerics.t_grid", "only applies to the geometric potential");
        }

        if !r.issues.is_empty() {
            return Err(r.issues);
        }
        Ok(ExperimentConfig {
            operation,
            family: family.expect("validated"),
            process,
            potential,
            numerics,
            seed,
            workers,
            out,
        })
    }
}

fn parse_family(r: &mut Reader, t: &Table) -> Option<FamilySpec> {
    let kind = match r.string(t, "family", "kind") {
        Some(k) => k,
        None => {
            if !t.contains_key("kind") {
                r.push("family.kind", "missing");
            }
            return None;
        }
    };
    let allowed: &[&str] = match kind.as_str() {
        "cantor" | "mean-example" | "doubling" => &["kind"],
        "two-slope" => &["kind", "s1", "s2"],
        "warped" => &["kind", "kappa"],
        "quadratic" => &["kind", "degree", "params", "delta"],
        "affine" => &["kind", "maps"],
        other => {
            r.push("family.kind", format!("unknown family {other:?}"));
            return None;
        }
    };
    r.check_keys(t, "family", allowed);
    let need = |r: &mut Reader, key: &str| {
        if !t.contains_key(key) {
            r.push(join("family", key), "missing");
        }
    };
    match kind.as_str() {
        "cantor" => Some(FamilySpec::Cantor),
        "mean-example" => Some(FamilySpec::MeanExample),
        "doubling" => Some(FamilySpec::Doubling),
        "two-slope" => {
            need(r, "s1");
            need(r, "s2");
            let s1 = r.real_in(t, "family", "s1", |x| x > 1.0, "(1, inf)");
            let s2 = r.real_in(t, "family", "s2", |x| x > 1.0, "(1, inf)");
            Some(FamilySpec::TwoSlope { s1: s1?, s2: s2? })
        }
        "warped" => {
            need(r, "kappa");
            let kappa = r.real_in(t, "family", "kappa", |x| x.abs() <= 2.0, "[-2, 2]")?;
            Some(FamilySpec::Warped { kappa })
        }
        "quadratic" => {
            let degree = r.integer(t, "family", "degree", 2, 16).unwrap_or(2) as u32;
            let params = match (t.get("params"), t.get("delta")) {
                (Some(_), Some(_)) => {
                    r.push("family.delta", "give either params or delta, not both");
                    None
                }
                (Some(v), None) => {
                    let ps = v.as_array().and_then(|a| a.iter().map(pair).collect::<Option<Vec<_>>>());
                    match ps {
                        Some(ps) if !ps.is_empty() && ps.iter().all(|(a, b)| a.is_finite() && b.is_finite()) => {
                            Some(ps.into_iter().map(|(re, im)| Complex64::new(re, im)).collect())
                        }
                        _ => {
                            r.push("family.params", "expected a non-empty array of [re, im] pairs");
                            None
                        }
                    }
                }
                (None, Some(_)) => r
                    .real_in(t, "family", "delta", |x| x >= 0.0, "[0, inf)")
                    .map(|d| vec![Complex64::new(d, 0.0), Complex64::new(-d, 0.0)]),
                (None, None) => {
                    r.push("family.params", "missing (or give delta)");
                    None
                }
            };
            Some(FamilySpec::Quadratic { degree, params: params? })
        }
        "affine" => {
            need(r, "maps");
            let maps = t.get("maps")?.as_array().and_then(|symbols| {
                symbols
                    .iter()
                    .map(|m| m.as_array().and_then(|bs| bs.iter().map(pair).collect::<Option<Vec<_>>>()))
                    .collect::<Option<Vec<_>>>()
            });
            match maps {
                Some(maps) if !maps.is_empty() => Some(FamilySpec::Affine { maps }),
                _ => {
                    r.push("family.maps", "expected an array (per symbol) of arrays of [lo, hi] pairs");
                    None
                }
            }
        }
        _ => unreachable!(),
    }
}

fn parse_process(r: &mut Reader, t: &Table) -> Option<ProcessSpec> {
    let kind = r.string(t, "process", "kind").unwrap_or_else(|| "iid".into());
    match kind.as_str() {
        "iid" => {
            r.check_keys(t, "process", &["kind", "probs"]);
            let probs = r.reals(t, "process", "probs");
            if let Some(p) = &probs {
                let total: f64 = p.iter().sum();
                if p.is_empty() || p.iter().any(|x| *x < 0.0) || (total - 1.0).abs() > 1e-9 {
                    r.push("process.probs", "must be non-negative and sum to 1");
                    return None;
                }
            }
            Some(ProcessSpec::Iid(probs))
        }
        "deterministic" => {
            r.check_keys(t, "process", &["kind", "symbol"]);
            let s = r.integer(t, "process", "symbol", 0, u32::MAX as i64).unwrap_or(0);
            Some(ProcessSpec::Deterministic(s as u32))
        }
        "periodic" => {
            r.check_keys(t, "process", &["kind", "word"]);
            if !t.contains_key("word") {
                r.push("process.word", "missing");
            }
            r.symbols(t, "process", "word").map(ProcessSpec::Periodic)
        }
        other => {
            r.push("process.kind", format!("unknown process {other:?}"));
            None
        }
    }
}

fn parse_potential(r: &mut Reader, t: &Table) -> Option<PotentialSpec> {
    let kind = r.string(t, "potential", "kind").unwrap_or_else(|| "geometric".into());
    match kind.as_str() {
        "geometric" => {
            r.check_keys(t, "potential", &["kind", "t"]);
            let tt = r.real_in(t, "potential", "t", |x| x.abs() <= T_BOUND, "[-100, 100]");
            Some(PotentialSpec::Geometric(tt))
        }
        "zero" => {
            r.check_keys(t, "potential", &["kind"]);
            Some(PotentialSpec::Zero)
        }
        "branch-constant" => {
            r.check_keys(t, "potential", &["kind", "values"]);
            let rows = t.get("values").and_then(Value::as_array).and_then(|rows| {
                rows.iter()
                    .map(|row| row.as_array().and_then(|xs| xs.iter().map(as_real).collect::<Option<Vec<f64>>>()))
                    .collect::<Option<Vec<_>>>()
            });
            match rows {
                Some(rows) if !rows.is_empty() && rows.iter().flatten().all(|x| x.is_finite()) => {
                    Some(PotentialSpec::BranchConstant(rows))
                }
                _ => {
                    r.push("potential.values", "expected an array (per symbol) of arrays of finite numbers");
                    None
                }
            }
        }
        other => {
            r.push("potential.kind", format!("unknown potential {other:?}"));
            None
        }
    }
}

fn parse_numerics(r: &mut Reader, t: &Table) -> Numerics {
    let p = "numerics";
    r.check_keys(t, p, NUMERIC_KEYS);
    let bounded = |x: f64| x.abs() <= T_BOUND;
    Numerics {
        n_steps: r.count(t, p, "n_steps", 10, 1_000_000),
        n_samples: r.count(t, p, "n_samples", 1, 1_000_000),
        depth: r.count(t, p, "depth", 1, 64),
        grid: r.count(t, p, "grid", 16, 1 << 16),
        tol: r.real_in(t, p, "tol", |x| x > 0.0 && x < 1.0, "(0, 1)"),
        tol_t: r.real_in(t, p, "tol_t", |x| x > 0.0 && x <= 0.1, "(0, 0.1]"),
        t: r.real_in(t, p, "t", bounded, "[-100, 100]"),
        t_grid: r.increasing(t, p, "t_grid"),
        t_lo: r.real_in(t, p, "t_lo", bounded, "[-100, 100]"),
        t_hi: r.real_in(t, p, "t_hi", bounded, "[-100, 100]"),
        h: r.real_in(t, p, "h", |x| (0.0..=2.0).contains(&x), "[0, 2]"),
        q_grid: r.increasing(t, p, "q_grid"),
        threshold: r.real_in(t, p, "threshold", |x| x > 0.0, "(0, inf)"),
        n_blocks: r.count(t, p, "n_blocks", 2, 1_000_000),
        margin: r.count(t, p, "margin", 0, 100_000),
        n_max: r.count(t, p, "n_max", 1, 10_000),
    }
}

/// Branch table rows for `describe`: `(symbol, branch, shape, lo, hi, min |T'|)`.
pub fn branch_rows(family: &FiberFamily) -> Vec<(u32, usize, &'static str, f64, f64, f64)> {
    if !family.is_interval() {
        return Vec::new();
    }
    let mut rows = Vec::new();
    for s in 0..family.num_symbols() as u32 {
        for (b, br) in family.branches(s).iter().enumerate() {
            let shape = match br {
                Branch::Affine { .. } => "affine",
                Branch::Quadratic { .. } => "quadratic",
                Branch::Exponential { .. } => "exponential",
            };
            let (lo, hi) = br.domain();
            rows.push((s, b, shape, lo, hi, br.min_derivative()));
        }
    }
    rows
}
