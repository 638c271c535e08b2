use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use gsvie::comparison::{
    check_assumptions, check_coefficient_assumptions, comparison_harness, convergence_study_n, two_step_study, AssumptionReport,
    SamplingPlan, SeparableSystem, Side,
};
use gsvie::expectation::{estimate_upper_expectation, lattice_expectation, EnsemblePlan, FunctionalSpec, LatticePayoff};
use gsvie::registry::{self, RegistryEntry};
use gsvie::scenario::{make_control, TimeGrid, VolatilityBand, SCENARIO_CSV_HEADER};
use gsvie::solver::{beta_default, solve_direct, solve_ensemble, solve_picard, solve_separable, PicardConfig};
use gsvie::{GsvieError, SCHEMA_VERSION};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Format, FunctionalKind, SolveMethod};
use crate::CliError;

/// Resolved run settings shared by every command.
pub struct Context {
    pub command: &'static str,
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub force: bool,
}

/// Files produced by a command; written only after all work is done.
#[derive(Default)]
struct Artifacts {
    files: Vec<(String, String)>,
}

impl Artifacts {
    fn csv(&mut self, ctx: &Context, name: &str, body: String) {
        if ctx.cfg.output.wants(Format::Csv) {
            let head = format!("# schema_version={SCHEMA_VERSION} command={}\n", ctx.command);
            self.files.push((name.to_string(), head + &body));
        }
    }

    fn json(&mut self, ctx: &Context, name: &str, mut value: Value) {
        if ctx.cfg.output.wants(Format::Json) {
            if let Value::Object(map) = &mut value {
                map.insert("schema_version".into(), json!(SCHEMA_VERSION));
            }
            self.files.push((name.to_string(), serde_json::to_string_pretty(&value).expect("json") + "\n"));
        }
    }

    fn write(mut self, ctx: &Context, extra: Value) -> Result<(), CliError> {
        // normalized config with the effective seed, rerunnable as is
        let mut effective = ctx.cfg.clone();
        effective.run.seed = ctx.seed;
        self.files.push(("config.toml".into(), effective.to_toml()));
        let names: Vec<String> = self.files.iter().map(|(n, _)| n.clone()).chain(["metadata.json".to_string()]).collect();
        let mut meta = json!({
            "schema_version": SCHEMA_VERSION,
            "command": ctx.command,
            "gsvie_version": env!("CARGO_PKG_VERSION"),
            "seed": ctx.seed,
            "files": names,
            "config": ctx.cfg,
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
            m.extend(e);
        }
        self.files.push(("metadata.json".into(), serde_json::to_string_pretty(&meta).expect("json") + "\n"));
        std::fs::create_dir_all(&ctx.out).map_err(|e| CliError::Other(format!("cannot create {}: {e}", ctx.out.display())))?;
        for (name, body) in &self.files {
            let path = ctx.out.join(name);
            std::fs::write(&path, body).map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn schema(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("{path}: {msg}"))
}

fn entry(ctx: &Context) -> Result<RegistryEntry<f64>, CliError> {
    let sys = ctx.cfg.system.as_ref().ok_or_else(|| schema("system", format!("required by `{}`", ctx.command)))?;
    registry::lookup(&sys.name, &sys.params, ctx.cfg.grid.horizon).map_err(|e| schema("system.params", e))
}

fn separable(ctx: &Context, e: &RegistryEntry<f64>) -> Result<SeparableSystem<f64>, CliError> {
    e.separable
        .clone()
        .ok_or_else(|| schema("system.name", format!("`{}` has no separable form, required by `{}`", e.name, ctx.command)))
}

fn band(ctx: &Context, e: Option<&RegistryEntry<f64>>) -> Result<VolatilityBand<f64>, CliError> {
    let (lo, hi) = match (ctx.cfg.band, e) {
        (Some(b), _) => (b.sigma_lo, b.sigma_hi),
        (None, Some(e)) => e.default_band,
        (None, None) => (1.0, 1.0),
    };
    VolatilityBand::new(lo, hi).map_err(|e| schema("band", e))
}

fn plan(ctx: &Context, band: &VolatilityBand<f64>) -> Result<EnsemblePlan<f64>, CliError> {
    let grid = TimeGrid::uniform(ctx.cfg.grid.horizon, ctx.cfg.grid.steps).map_err(|e| schema("grid", e))?;
    let controls = ctx
        .cfg
        .controls
        .iter()
        .enumerate()
        .map(|(k, s)| make_control(&grid, band, s, ctx.seed).map_err(|e| schema(&format!("controls[{k}]"), e)))
        .collect::<Result<Vec<_>, _>>()?;
    EnsemblePlan::new(grid, controls, ctx.cfg.run.scenarios, ctx.cfg.run.noise, ctx.seed).map_err(|e| schema("run", e))
}

fn band_json(b: &VolatilityBand<f64>) -> Value {
    json!({"sigma_lo": b.sigma_lo(), "sigma_hi": b.sigma_hi()})
}

fn scenarios_csv(plan: &EnsemblePlan<f64>) -> Result<String, GsvieError> {
    let mut out = format!("control,{SCENARIO_CSV_HEADER}\n");
    for (ci, control) in plan.controls.iter().enumerate() {
        for s in 0..plan.scenarios_per_control as u64 {
            let mut rows = String::new();
            plan.scenario(ci, s)?.write_csv_rows(&mut rows);
            for line in rows.lines() {
                let _ = writeln!(out, "{},{line}", control.label());
            }
        }
    }
    Ok(out)
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let e = entry(ctx)?;
    let band = band(ctx, Some(&e))?;
    let plan = plan(ctx, &band)?;
    let grid = &plan.grid;
    let run = &ctx.cfg.run;
    let mut art = Artifacts::default();
    let mut extra = json!({"system": e.name, "band": band_json(&band), "method": run.method, "controls": plan.labels()});

    let mut csv = String::new();
    match run.method {
        SolveMethod::Direct | SolveMethod::Picard => {
            let iterations = AtomicUsize::new(0);
            let ensembles = if run.method == SolveMethod::Direct {
                solve_ensemble(&plan, |p| solve_direct(&e.coefficients, &e.phi, p))?
            } else {
                let beta = run.beta.unwrap_or_else(|| beta_default(&band, e.coefficients.lipschitz, grid.horizon()));
                let pc = PicardConfig::new(beta, run.tol, run.max_iter).map_err(|e| schema("run", e))?;
                extra["beta"] = json!(beta);
                solve_ensemble(&plan, |p| {
                    let o = solve_picard(&e.coefficients, &e.phi, p, &pc)?;
                    iterations.fetch_max(o.iterations, Ordering::Relaxed);
                    Ok(o.solution)
                })?
            };
            if run.method == SolveMethod::Picard {
                extra["max_picard_iterations"] = json!(iterations.load(Ordering::Relaxed));
            }
            csv.push_str("control,scenario_id,step,t,X\n");
            for ens in &ensembles {
                for sol in &ens.solutions {
                    for (i, x) in sol.values.iter().enumerate() {
                        let _ = writeln!(csv, "{},{},{i},{:.16e},{:.16e}", ens.label, sol.scenario, grid.node(i), x);
                    }
                }
            }
        }
        SolveMethod::Separable => {
            let sys = separable(ctx, &e)?;
            let first = solve_ensemble(&plan, |p| solve_separable(&sys, Side::First, &sys.phi1, p))?;
            let second = solve_ensemble(&plan, |p| solve_separable(&sys, Side::Second, &sys.phi2, p))?;
            csv.push_str("control,scenario_id,step,t,X1,X2\n");
            for (a, b) in first.iter().zip(&second) {
                for (x1, x2) in a.solutions.iter().zip(&b.solutions) {
                    for (i, (u, v)) in x1.values.iter().zip(&x2.values).enumerate() {
                        let _ = writeln!(csv, "{},{},{i},{:.16e},{:.16e},{:.16e}", a.label, x1.scenario, grid.node(i), u, v);
                    }
                }
            }
        }
    }
    art.csv(ctx, "solutions.csv", csv);
    if run.write_scenarios {
        art.csv(ctx, "scenarios.csv", scenarios_csv(&plan)?);
    }
    art.write(ctx, extra)
}

pub fn expectation(ctx: &Context) -> Result<(), CliError> {
    let run = &ctx.cfg.run;
    let kind = run.functional;
    let e = if kind.needs_system() { Some(entry(ctx)?) } else { None };
    let band = band(ctx, e.as_ref())?;
    let plan = plan(ctx, &band)?;
    let spec = match (kind, &e) {
        (FunctionalKind::BTerminal, _) => FunctionalSpec::terminal(),
        (FunctionalKind::BTerminalSquare, _) => FunctionalSpec::terminal_square(),
        (_, Some(e)) => {
            let square = kind == FunctionalKind::XTerminalSquare;
            FunctionalSpec::new(kind.label(), move |p| {
                let x = solve_direct(&e.coefficients, &e.phi, p)?;
                let v = x.values[p.steps()];
                Ok(if square { v * v } else { v })
            })
        }
        (_, None) => unreachable!("X functionals resolve a system"),
    };
    let est = estimate_upper_expectation(&spec, &plan)?;
    let lattice = if run.lattice {
        let f: fn(f64) -> f64 = match kind {
            FunctionalKind::BTerminal => |x| x,
            FunctionalKind::BTerminalSquare => |x| x * x,
            _ => return Err(schema("run.lattice", "the lattice supports B(T) functionals only")),
        };
        Some(lattice_expectation(LatticePayoff::Terminal(&f), &plan.grid, &band)?)
    } else {
        None
    };

    let mut art = Artifacts::default();
    let mut doc = est.to_json();
    doc["lattice"] = json!(lattice);
    doc["band"] = band_json(&band);
    doc["grid"] = json!({"T": ctx.cfg.grid.horizon, "N": ctx.cfg.grid.steps});
    art.json(ctx, "estimate.json", doc);
    let mut csv = String::from("control,mean,se,n\n");
    for c in &est.per_control {
        let _ = writeln!(csv, "{},{:.16e},{:.16e},{}", c.label, c.mean, c.se, c.n);
    }
    let _ = writeln!(csv, "sup,{:.16e},{:.16e},{}", est.value, est.se(), est.scenarios_per_control);
    if let Some(v) = lattice {
        let _ = writeln!(csv, "lattice,{v:.16e},{:.16e},0", 0.0);
    }
    art.csv(ctx, "estimate.csv", csv);
    art.write(ctx, json!({"functional": kind.label(), "value": est.value, "lattice": lattice}))
}

fn sampling(ctx: &Context, e: &RegistryEntry<f64>, band: VolatilityBand<f64>) -> Result<SamplingPlan<f64>, CliError> {
    let grid = TimeGrid::uniform(ctx.cfg.grid.horizon, ctx.cfg.grid.steps).map_err(|e| schema("grid", e))?;
    let mut sp = SamplingPlan::new(grid, band, ctx.seed);
    sp.samples = ctx.cfg.run.samples;
    sp.probes = e.probes.clone();
    Ok(sp)
}

fn blocking(report: &AssumptionReport) -> Vec<String> {
    report.blocking_violations().iter().map(|e| e.name.clone()).collect()
}

pub fn check(ctx: &Context) -> Result<(), CliError> {
    let e = entry(ctx)?;
    let band = band(ctx, Some(&e))?;
    let sp = sampling(ctx, &e, band)?;
    let report = match &e.separable {
        Some(sys) => check_assumptions(sys, &sp)?,
        None => check_coefficient_assumptions(&e.coefficients, &sp)?,
    };
    let violated = blocking(&report);
    let mut art = Artifacts::default();
    art.json(ctx, "assumptions.json", report.to_json());
    art.write(ctx, json!({"system": e.name, "blocking_violations": violated}))?;
    if violated.is_empty() {
        Ok(())
    } else {
        Err(CliError::Violation(format!("assumptions violated on samples: {}", violated.join(", "))))
    }
}

pub fn compare(ctx: &Context) -> Result<(), CliError> {
    let e = entry(ctx)?;
    let sys = separable(ctx, &e)?;
    let band = band(ctx, Some(&e))?;
    let report = check_assumptions(&sys, &sampling(ctx, &e, band)?)?;
    let violated = blocking(&report);
    let mut art = Artifacts::default();
    art.json(ctx, "assumptions.json", report.to_json());
    if !violated.is_empty() && !ctx.force {
        art.write(ctx, json!({"system": e.name, "blocking_violations": violated, "harness": "skipped"}))?;
        return Err(CliError::Violation(format!(
            "assumptions violated on samples: {}; harness not run (use --force)",
            violated.join(", ")
        )));
    }
    let plan = plan(ctx, &band)?;
    let tol = ctx.cfg.run.tol_disc.unwrap_or_else(|| 10.0 * (ctx.cfg.grid.horizon / ctx.cfg.grid.steps as f64).sqrt());
    let cmp = comparison_harness(&sys, &plan, tol)?;
    art.json(ctx, "comparison.json", cmp.to_json());
    let mut csv = String::from("control,min_difference\n");
    for (label, v) in &cmp.per_control_min {
        let _ = writeln!(csv, "{label},{v:.16e}");
    }
    art.csv(ctx, "comparison.csv", csv);
    art.write(
        ctx,
        json!({"system": e.name, "blocking_violations": violated, "min_difference": cmp.min_difference, "tolerance": tol, "violations": cmp.violations}),
    )?;
    match (violated.is_empty(), cmp.holds()) {
        (true, true) => Ok(()),
        _ => Err(CliError::Violation(format!(
            "{} blocking assumption violation(s), {} node(s) with X1 - X2 < -{tol}; worst {:.6e} at t = {} (control {}, scenario {})",
            violated.len(),
            cmp.violations,
            cmp.worst.difference,
            cmp.worst.t,
            cmp.worst.control,
            cmp.worst.scenario
        ))),
    }
}

pub fn convergence(ctx: &Context) -> Result<(), CliError> {
    let e = entry(ctx)?;
    let sys = separable(ctx, &e)?;
    let band = band(ctx, Some(&e))?;
    let plan = plan(ctx, &band)?;
    let run = &ctx.cfg.run;
    let by_n = convergence_study_n(&sys, &plan, &run.ns)?;
    let mut csv = by_n.to_csv();
    let mut doc = json!({"system": e.name, "slope": by_n.slope, "n_table": by_n.to_json()});
    if !run.deltas.is_empty() {
        let two = two_step_study(&sys, &plan, &run.ns, &run.deltas, run.freeze)?;
        csv.extend(two.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
        doc["two_step"] = two.to_json();
    }
    let mut art = Artifacts::default();
    art.csv(ctx, "convergence.csv", csv);
    art.json(ctx, "slopes.json", doc);
    art.write(ctx, json!({"system": e.name, "slope": by_n.slope}))
}
