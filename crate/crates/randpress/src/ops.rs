//! Dispatch from a validated configuration to the library operations.

use randpress_core::base::{sample_path, BaseProcess};
use randpress_core::classify::{classify_system, dyadic_ladder, VarianceOptions, DEFAULT_THRESHOLD};
use randpress_core::fibers::FiberFamily;
use randpress_core::induce::{find_expanding_set, induced_pressure_consistency, kac_check, InduceOptions};
use randpress_core::julia::{julia_dimension, julia_pressure, JuliaOptions};
use randpress_core::multifractal::{default_q_grid, legendre_spectrum, temperature_curve, TemperatureOptions};
use randpress_core::pressure::{
    best_expected_pressure, bowen_dimension, exact_expected_pressure, BowenOptions, BowenResult, MonteCarlo,
};
use randpress_core::transfer::{correlation_series, log_decay_slope, FiberFunction, Potential, TransferOptions, DEFAULT_GRID};
use randpress_core::{Error, Result};
use serde_json::{json, Value};

use crate::config::{branch_rows, ExperimentConfig, Operation, PotentialSpec};
use crate::output::{CsvTable, ResultBundle};

const DEFAULT_T: f64 = 1.0;

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    family: FiberFamily,
    process: BaseProcess,
}

impl Context<'_> {
    fn mc(&self) -> MonteCarlo {
        let d = MonteCarlo::default();
        let n = &self.cfg.numerics;
        MonteCarlo { n_steps: n.n_steps.unwrap_or(d.n_steps), n_samples: n.n_samples.unwrap_or(d.n_samples), seed: self.cfg.seed }
    }

    fn transfer(&self) -> TransferOptions {
        let n = &self.cfg.numerics;
        TransferOptions { grid: n.grid.unwrap_or(DEFAULT_GRID), tol: n.tol.unwrap_or(1e-10), ..Default::default() }
    }

    fn t(&self) -> f64 {
        self.cfg.numerics.t.unwrap_or(DEFAULT_T)
    }

    fn potential(&self) -> Potential {
        self.cfg.potential.as_ref().unwrap_or(&PotentialSpec::Geometric(None)).build(&self.family, self.t())
    }

    fn julia(&self) -> JuliaOptions {
        let d = JuliaOptions::default();
        let n = &self.cfg.numerics;
        JuliaOptions {
            depth: n.depth.unwrap_or(d.depth),
            n_samples: n.n_samples.unwrap_or(d.n_samples),
            seed: self.cfg.seed,
            tol_t: n.tol_t.unwrap_or(d.tol_t),
        }
    }

    fn bowen(&self) -> Result<BowenResult> {
        if !self.family.is_interval() {
            return julia_dimension(&self.family, &self.process, &self.julia());
        }
        let d = BowenOptions::default();
        let n = &self.cfg.numerics;
        let opts = BowenOptions {
            t_lo: n.t_lo.unwrap_or(d.t_lo),
            t_hi: n.t_hi.unwrap_or(d.t_hi),
            tol_t: n.tol_t,
            mc: self.mc(),
            transfer: self.transfer(),
            ..d
        };
        bowen_dimension(&self.family, &self.process, &opts)
    }
}

fn to_json<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

/// Run the operation and collect its outputs. `describe` never fails on an
/// inadmissible family; every other operation needs a valid one.
pub fn run(cfg: &ExperimentConfig, op: Operation) -> Result<ResultBundle> {
    if op == Operation::Describe {
        return describe(cfg);
    }
    let family = cfg.family.build()?;
    let process = cfg.process.build(family.num_symbols())?;
    let ctx = Context { cfg, family, process };
    let mut bundle = ResultBundle::default();
    bundle.insert("operation", op.as_str());
    bundle.insert("family", ctx.family.name());
    bundle.insert("process", to_json(&ctx.process));
    match op {
        Operation::Pressure => pressure(&ctx, &mut bundle)?,
        Operation::Bowen => bowen(&ctx, &mut bundle)?,
        Operation::Classify => classify(&ctx, &mut bundle)?,
        Operation::Spectrum => spectrum(&ctx, &mut bundle)?,
        Operation::Decay => decay(&ctx, &mut bundle)?,
        Operation::Induce => induce(&ctx, &mut bundle)?,
        Operation::Julia => julia(&ctx, &mut bundle)?,
        Operation::Describe => unreachable!(),
    }
    Ok(bundle)
}

fn pressure(ctx: &Context, bundle: &mut ResultBundle) -> Result<()> {
    let potentials: Vec<Potential> = match &ctx.cfg.numerics.t_grid {
        Some(ts) => ts.iter().map(|&t| Potential::geometric(t)).collect(),
        None => vec![ctx.potential()],
    };
    let mut table = CsvTable::new("pressure", &["potential", "value", "stderr", "n_steps", "n_samples", "failures", "method"]);
    let mut rows = Vec::new();
    for pot in &potentials {
        let est = match (pot, ctx.family.is_interval()) {
            (Potential::Geometric { t }, false) => julia_pressure(&ctx.family, &ctx.process, *t, &ctx.julia())?,
            _ => best_expected_pressure(&ctx.family, &ctx.process, pot, &ctx.mc(), &ctx.transfer())?,
        };
        let exact = exact_expected_pressure(&ctx.family, &ctx.process, pot);
        let method = to_json(&est.method).as_str().unwrap_or_default().to_string();
        table.push(vec![
            est.potential.clone().into(),
            est.value.into(),
            est.stderr.into(),
            est.n_steps.into(),
            est.n_samples.into(),
            est.failures.into(),
            method.into(),
        ]);
        let mut row = to_json(&est);
        row["exact"] = json!(exact);
        rows.push(row);
    }
    bundle.insert("estimates", rows);
    bundle.tables.push(table);
    Ok(())
}

fn bracket_table(r: &BowenResult) -> CsvTable {
    let mut table = CsvTable::new("bowen", &["endpoint", "t", "value", "stderr"]);
    table.push(vec!["lo".into(), r.bracket.0.into(), r.pressure_lo.value.into(), r.pressure_lo.stderr.into()]);
    table.push(vec!["hi".into(), r.bracket.1.into(), r.pressure_hi.value.into(), r.pressure_hi.stderr.into()]);
    table
}

fn bowen(ctx: &Context, bundle: &mut ResultBundle) -> Result<()> {
    let r = ctx.bowen()?;
    bundle.insert("h", r.h);
    bundle.insert("result", to_json(&r));
    bundle.tables.push(bracket_table(&r));
    Ok(())
}

fn classify(ctx: &Context, bundle: &mut ResultBundle) -> Result<()> {
    let h = match ctx.cfg.numerics.h {
        Some(h) => h,
        None => {
            let r = ctx.bowen()?;
            bundle.insert("bowen", to_json(&r));
            r.h
        }
    };
    let d = VarianceOptions::default();
    let n = &ctx.cfg.numerics;
    let opts = VarianceOptions {
        ladder: dyadic_ladder(16, n.n_steps.unwrap_or(256)),
        n_samples: n.n_samples.unwrap_or(d.n_samples),
        seed: ctx.cfg.seed,
        transfer: ctx.transfer(),
    };
    let v = classify_system(&ctx.family, &ctx.process, h, &opts, n.threshold.unwrap_or(DEFAULT_THRESHOLD))?;
    let mut table = CsvTable::new("ladder", &["n", "value", "stderr", "blocks"]);
    for rung in &v.variance.ladder {
        table.push(vec![rung.n.into(), rung.value.into(), rung.stderr.into(), rung.blocks.into()]);
    }
    bundle.insert("h", h);
    bundle.insert("verdict", to_json(&v.verdict));
    bundle.insert("result", to_json(&v));
    bundle.tables.push(table);
    Ok(())
}

fn spectrum(ctx: &Context, bundle: &mut ResultBundle) -> Result<()> {
    let base = match &ctx.cfg.potential {
        Some(spec) => spec.build(&ctx.family, ctx.t()),
        None => uniform_branches(&ctx.family),
    };
    let d = TemperatureOptions::default();
    let n = &ctx.cfg.numerics;
    let opts = TemperatureOptions {
        t_lo: n.t_lo.unwrap_or(d.t_lo),
        t_hi: n.t_hi.unwrap_or(d.t_hi),
        tol: n.tol_t.unwrap_or(d.tol),
        mc: ctx.mc(),
        transfer: ctx.transfer(),
        ..d
    };
    let q = n.q_grid.clone().unwrap_or_else(default_q_grid);
    let curve = temperature_curve(&ctx.family, &ctx.process, &base, &q, &opts)?;
    let spec = legendre_spectrum(&curve)?;
    let mut table = CsvTable::new("spectrum", &["q", "t", "slope", "slope_error", "alpha", "g"]);
    for (i, p) in spec.points.iter().enumerate() {
        table.push(vec![p.q.into(), p.t.into(), curve.slope[i].into(), curve.slope_error[i].into(), p.alpha.into(), p.g.into()]);
    }
    bundle.insert("base", curve.base.clone());
    bundle.insert("collapsed", spec.collapsed);
    bundle.insert("concave", spec.concave);
    bundle.insert("tangency_gap", json!(spec.tangency_gap));
    bundle.insert("peak_gap", json!(spec.peak_gap));
    bundle.insert("convexity_violation", curve.convexity_violation().0);
    bundle.tables.push(table);
    Ok(())
}

/// `−log d_a` on every branch: equal weights, fiber pressure zero.
fn uniform_branches(family: &FiberFamily) -> Potential {
    let values = (0..family.num_symbols() as u32)
        .map(|s| {
            let d = family.degree(s);
            vec![-(d as f64).ln(); d]
        })
        .collect();
    Potential::BranchConstant { values }
}

fn decay(ctx: &Context, bundle: &mut ResultBundle) -> Result<()> {
    let n_max = ctx.cfg.numerics.n_max.unwrap_or(20);
    let opts = ctx.transfer();
    let path = sample_path(&ctx.process, n_max + 1, opts.n_back, ctx.cfg.seed)?;
    let pot = ctx.potential();
    let x = FiberFunction::from_fn(opts.grid, |x| x)?;
    let corr = correlation_series(&ctx.family, &path, &pot, &x, &x, n_max, &opts)?;
    let mut table = CsvTable::new("decay", &["n", "correlation"]);
    for (k, c) in corr.iter().enumerate() {
        table.push(vec![k.into(), (*c).into()]);
    }
    let slope = if n_max >= 2 && corr[1..].iter().all(|c| *c != 0.0) { Some(log_decay_slope(&corr, 1..=n_max)) } else { None };
    bundle.insert("potential", pot.describe());
    bundle.insert("observable", "f = g = x");
    bundle.insert("log_decay_slope", json!(slope));
    bundle.tables.push(table);
    Ok(())
}

fn induce(ctx: &Context, bundle: &mut ResultBundle) -> Result<()> {
    let d = InduceOptions::default();
    let n = &ctx.cfg.numerics;
    let opts = InduceOptions {
        depth: n.depth.unwrap_or(d.depth),
        n_blocks: n.n_blocks.unwrap_or(d.n_blocks),
        n_samples: n.n_samples.unwrap_or(d.n_samples),
        seed: ctx.cfg.seed,
        margin: n.margin.unwrap_or(d.margin),
        transfer: ctx.transfer(),
        direct: ctx.mc(),
    };
    let set = find_expanding_set(&ctx.family, &ctx.process, opts.depth)?;
    let kac = kac_check(&ctx.family, &set, &ctx.process, opts.n_blocks, ctx.cfg.seed)?;
    let mut decisions = CsvTable::new("decisions", &["window", "decision"]);
    for (w, dec) in set.entries() {
        decisions.push(vec![w.iter().map(|s| s.to_string()).collect::<String>().into(), dec.as_str().into()]);
    }
    let mut levels = CsvTable::new("levels", &["level", "new_rejections", "accepted_mass", "rejected_mass"]);
    for l in &set.trace {
        levels.push(vec![l.level.into(), l.new_rejections.into(), l.accepted_mass.into(), l.rejected_mass.into()]);
    }
    bundle.insert("expanding_set", to_json(&set));
    bundle.insert("kac", to_json(&kac));
    if let Some(t) = n.t {
        let report = induced_pressure_consistency(&ctx.family, &ctx.process, t, &opts)?;
        bundle.insert("consistency", to_json(&report));
    }
    bundle.tables.push(decisions);
    bundle.tables.push(levels);
    Ok(())
}

fn julia(ctx: &Context, bundle: &mut ResultBundle) -> Result<()> {
    if ctx.family.is_interval() {
        return Err(Error::Unsupported("julia needs a polynomial family".into()));
    }
    let opts = ctx.julia();
    let r = julia_dimension(&ctx.family, &ctx.process, &opts)?;
    bundle.insert("h", r.h);
    bundle.insert("depth", opts.depth);
    bundle.insert("result", to_json(&r));
    bundle.tables.push(bracket_table(&r));
    Ok(())
}

fn describe(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    let mut bundle = ResultBundle::default();
    let mut text = String::new();
    bundle.insert("operation", "describe");
    let n_symbols = cfg.family.num_symbols();
    let process = cfg.process.build(n_symbols)?;
    let marginal = process.marginal();
    let family = cfg.family.build();

    let mut admissible = true;
    if let Some((delta, bound)) = cfg.family.admissibility() {
        let ok = delta < bound;
        admissible &= ok;
        bundle.insert("admissibility", json!({ "max_abs_c": delta, "delta_d": bound, "admissible": ok }));
        text.push_str(&format!(
            "admissibility: max|c| = {delta} {} delta(d) = {bound}: {}\n",
            if ok { "<" } else { ">=" },
            if ok { "ok" } else { "FAILED" }
        ));
    }
    match &family {
        Ok(f) => {
            let degrees: Vec<usize> = (0..n_symbols as u32).map(|s| f.degree(s)).collect();
            let floors: Vec<f64> = (0..n_symbols as u32).map(|s| f.expansion_floor(s)).collect();
            let mean_log: f64 = floors.iter().zip(&marginal).map(|(g, m)| m * g.ln()).sum();
            let uniform = f.require_uniformly_expanding().is_ok();
            text.push_str(&format!("family: {}\n", f.name()));
            text.push_str(&format!("degrees: {degrees:?}\n"));
            let shown: Vec<String> = floors.iter().map(|g| format!("{g:.6}")).collect();
            text.push_str(&format!("expansion floors: [{}]\n", shown.join(", ")));
            text.push_str(&format!("uniformly expanding: {uniform}\n"));
            text.push_str(&format!(
                "mean log expansion: {mean_log:.6} ({})\n",
                if mean_log > 0.0 { "expanding in the mean" } else { "not expanding in the mean" }
            ));
            let mut table = CsvTable::new("branches", &["symbol", "branch", "shape", "lo", "hi", "min_derivative"]);
            for (s, b, shape, lo, hi, dmin) in branch_rows(f) {
                text.push_str(&format!("  symbol {s} branch {b}: {shape} on [{lo:.6}, {hi:.6}], min |T'| = {dmin:.6}\n"));
                table.push(vec![(s as usize).into(), b.into(), shape.into(), lo.into(), hi.into(), dmin.into()]);
            }
            bundle.insert("family", f.name());
            bundle.insert("degrees", json!(degrees));
            bundle.insert("expansion_floors", json!(floors));
            bundle.insert("uniformly_expanding", uniform);
            bundle.insert("mean_log_expansion", mean_log);
            bundle.insert("mean_expanding", mean_log > 0.0);
            bundle.insert("geometry", to_json(f.geometry()));
            if !table.rows.is_empty() {
                bundle.tables.push(table);
            }
        }
        Err(e) => {
            admissible = false;
            text.push_str(&format!("family rejected: {e}\n"));
            bundle.insert("family_error", json!({ "code": e.code(), "message": e.to_string() }));
        }
    }
    bundle.insert("process", to_json(&process));
    bundle.insert("admissible", admissible);
    bundle.text = Some(text);
    Ok(bundle)
}
