//! Sublinear expectation `E^[xi] = sup_P E_P[xi]`.
//!
//! Two estimators are provided:
//!
//! * [`estimate_upper_expectation`] takes the maximum of per-control Monte
//!   Carlo means over a finite, labeled control family. It never claims a
//!   true supremum; the family is reported alongside the value. The maximum
//!   of noisy means is biased upward by O(standard error).
//! * [`lattice_expectation`] computes the exact discrete G-expectation for
//!   Rademacher noise by backward recursion, taking the volatility supremum
//!   at every node (feedback controls, not only open-loop ones).

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{GsvieError, Result};
use crate::scalar::{from_usize, lit, to_f64, Scalar};
use crate::scenario::{generate_scenario, NoiseKind, ScenarioPath, TimeGrid, VolatilityBand, VolatilityControl};
use crate::solver::SolutionPath;
use crate::SCHEMA_VERSION;

type Evaluator<'a, S> = dyn Fn(&ScenarioPath<S>) -> Result<S> + Send + Sync + 'a;

/// Named path functional `xi`.
pub struct FunctionalSpec<'a, S> {
    pub name: String,
    eval: Box<Evaluator<'a, S>>,
}

impl<'a, S: Scalar> FunctionalSpec<'a, S> {
    pub fn new(name: impl Into<String>, eval: impl Fn(&ScenarioPath<S>) -> Result<S> + Send + Sync + 'a) -> Self {
        Self {
            name: name.into(),
            eval: Box::new(eval),
        }
    }

    /// Functional that cannot fail.
    pub fn infallible(name: impl Into<String>, eval: impl Fn(&ScenarioPath<S>) -> S + Send + Sync + 'a) -> Self {
        Self::new(name, move |p| Ok(eval(p)))
    }

    pub fn evaluate(&self, path: &ScenarioPath<S>) -> Result<S> {
        (self.eval)(path)
    }

    /// `B(T)`.
    pub fn terminal() -> Self {
        Self::infallible("B(T)", |p| p.b[p.steps()])
    }

    /// `B(T)^2`.
    pub fn terminal_square() -> Self {
        Self::infallible("B(T)^2", |p| {
            let x = p.b[p.steps()];
            x * x
        })
    }
}

/// Scenario family: every control is paired with the same scenario indices.
///
/// Scenario `s` uses the normalized noise stream `(seed, s)` under every
/// control (common random numbers across controls).
#[derive(Debug, Clone)]
pub struct EnsemblePlan<S> {
    pub grid: TimeGrid<S>,
    pub controls: Vec<VolatilityControl<S>>,
    pub scenarios_per_control: usize,
    pub noise: NoiseKind,
    pub seed: u64,
}

impl<S: Scalar> EnsemblePlan<S> {
    pub fn new(
        grid: TimeGrid<S>,
        controls: Vec<VolatilityControl<S>>,
        scenarios_per_control: usize,
        noise: NoiseKind,
        seed: u64,
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(GsvieError::invalid("control family must be nonempty"));
        }
        if scenarios_per_control < 2 {
            return Err(GsvieError::invalid("at least two scenarios per control are required"));
        }
        if let Some(c) = controls.iter().find(|c| c.len() != grid.steps()) {
            return Err(GsvieError::invalid(format!(
                "control `{}` has {} values, grid has {} steps",
                c.label(),
                c.len(),
                grid.steps()
            )));
        }
        Ok(Self {
            grid,
            controls,
            scenarios_per_control,
            noise,
            seed,
        })
    }

    pub fn scenario(&self, control: usize, scenario: u64) -> Result<ScenarioPath<S>> {
        generate_scenario(&self.grid, &self.controls[control], self.noise, self.seed, scenario)
    }

    pub fn labels(&self) -> Vec<String> {
        self.controls.iter().map(|c| c.label().to_string()).collect()
    }
}

/// Monte Carlo summary for one control.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlMean<S> {
    pub label: String,
    pub mean: S,
    pub se: S,
    pub n: usize,
}

impl<S: Scalar> ControlMean<S> {
    pub fn from_samples(label: impl Into<String>, samples: &[S]) -> Self {
        let n = samples.len();
        let nf = from_usize::<S>(n);
        let mean = samples.iter().copied().fold(S::zero(), |a, x| a + x) / nf;
        let se = if n > 1 {
            let ss = samples.iter().fold(S::zero(), |a, &x| a + (x - mean) * (x - mean));
            (ss / (nf - S::one())).sqrt() / nf.sqrt()
        } else {
            S::zero()
        };
        Self {
            label: label.into(),
            mean,
            se,
            n,
        }
    }
}

/// Max-over-controls estimate of a sublinear expectation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustEstimate<S> {
    pub functional: String,
    pub value: S,
    pub per_control: Vec<ControlMean<S>>,
    pub scenarios_per_control: usize,
    pub seed: u64,
}

impl<S: Scalar> RobustEstimate<S> {
    pub fn from_means(functional: impl Into<String>, per_control: Vec<ControlMean<S>>, seed: u64) -> Result<Self> {
        if per_control.is_empty() {
            return Err(GsvieError::invalid("robust estimate needs at least one control"));
        }
        let value = per_control.iter().map(|c| c.mean).fold(S::neg_infinity(), S::max);
        let scenarios_per_control = per_control.iter().map(|c| c.n).max().unwrap_or(0);
        Ok(Self {
            functional: functional.into(),
            value,
            per_control,
            scenarios_per_control,
            seed,
        })
    }

    /// The control attaining the maximum.
    pub fn argmax(&self) -> &ControlMean<S> {
        self.per_control
            .iter()
            .find(|c| c.mean == self.value)
            .unwrap_or(&self.per_control[0])
    }

    /// Standard error of the maximizing control's mean.
    pub fn se(&self) -> S {
        self.argmax().se
    }

    /// Result document `{functional, controls: [{label, mean, se, n}], value, seed}`.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "functional": self.functional,
            "controls": self.per_control.iter().map(|c| json!({
                "label": c.label,
                "mean": to_f64(c.mean),
                "se": to_f64(c.se),
                "n": c.n,
            })).collect::<Vec<_>>(),
            "value": to_f64(self.value),
            "seed": self.seed,
        })
    }
}

/// Evaluates a vector-valued functional on every scenario of the plan and
/// returns one [`RobustEstimate`] per component.
///
/// Scenarios are evaluated in parallel; samples are reduced in scenario
/// order, so results do not depend on the thread count.
pub fn estimate_upper_expectation_many<S, F>(names: &[String], plan: &EnsemblePlan<S>, eval: F) -> Result<Vec<RobustEstimate<S>>>
where
    S: Scalar,
    F: Fn(&ScenarioPath<S>) -> Result<Vec<S>> + Send + Sync,
{
    let width = names.len();
    let mut per_component: Vec<Vec<ControlMean<S>>> = vec![Vec::with_capacity(plan.controls.len()); width];
    for (ci, control) in plan.controls.iter().enumerate() {
        let rows: Vec<Result<Vec<S>>> = (0..plan.scenarios_per_control as u64)
            .into_par_iter()
            .map(|s| {
                let wrap = |e: GsvieError| GsvieError::Functional {
                    functional: names.join(","),
                    control: control.label().to_string(),
                    scenario: s,
                    source: Box::new(e),
                };
                let path = plan.scenario(ci, s).map_err(wrap)?;
                let out = eval(&path).map_err(wrap)?;
                if out.len() != width {
                    return Err(wrap(GsvieError::invalid(format!(
                        "functional returned {} components, expected {width}",
                        out.len()
                    ))));
                }
                Ok(out)
            })
            .collect();
        let mut columns: Vec<Vec<S>> = vec![Vec::with_capacity(rows.len()); width];
        for row in rows {
            for (col, v) in columns.iter_mut().zip(row?) {
                col.push(v);
            }
        }
        for (k, col) in columns.iter().enumerate() {
            per_component[k].push(ControlMean::from_samples(control.label(), col));
        }
    }
    names
        .iter()
        .zip(per_component)
        .map(|(name, means)| RobustEstimate::from_means(name.clone(), means, plan.seed))
        .collect()
}

/// `E^[f] ~ max_c mean_c(f)` over the plan's control family.
pub fn estimate_upper_expectation<S: Scalar>(f: &FunctionalSpec<'_, S>, plan: &EnsemblePlan<S>) -> Result<RobustEstimate<S>> {
    let names = [f.name.clone()];
    let mut out = estimate_upper_expectation_many(&names, plan, |p| Ok(vec![f.evaluate(p)?]))?;
    Ok(out.remove(0))
}

/// Payoff accepted by [`lattice_expectation`].
pub enum LatticePayoff<'a, S> {
    /// Function of the terminal value `B(T)`; evaluated on a recombining
    /// two-volatility lattice, cost O(N^3).
    Terminal(&'a dyn Fn(S) -> S),
    /// Function of the whole discrete path `B(t_0), ..., B(t_N)`;
    /// enumerates all 4^N branches.
    Path(&'a dyn Fn(&[S]) -> S),
}

/// Step-count cap of the terminal-payoff lattice.
pub const LATTICE_TERMINAL_MAX_STEPS: usize = 512;
/// Step-count cap of full-path enumeration.
pub const LATTICE_PATH_MAX_STEPS: usize = 12;

/// Exact discrete G-expectation under Rademacher noise:
/// `V_N = f`, `V_k = max_{sigma in {lo, hi}} (V_{k+1}(x + sigma sqrt(dt)) + V_{k+1}(x - sigma sqrt(dt))) / 2`.
pub fn lattice_expectation<S: Scalar>(payoff: LatticePayoff<'_, S>, grid: &TimeGrid<S>, band: &VolatilityBand<S>) -> Result<S> {
    if !grid.is_uniform() {
        return Err(GsvieError::invalid("lattice expectation requires a uniform grid"));
    }
    let n = grid.steps();
    let sqrt_dt = grid.dt()[0].sqrt();
    let up_lo = band.sigma_lo() * sqrt_dt;
    let up_hi = band.sigma_hi() * sqrt_dt;
    match payoff {
        LatticePayoff::Terminal(f) => {
            if n > LATTICE_TERMINAL_MAX_STEPS {
                return Err(GsvieError::SizeLimit {
                    what: "lattice steps (terminal mode)",
                    value: n,
                    limit: LATTICE_TERMINAL_MAX_STEPS,
                });
            }
            Ok(terminal_lattice(f, n, up_lo, up_hi))
        }
        LatticePayoff::Path(f) => {
            if n > LATTICE_PATH_MAX_STEPS {
                return Err(GsvieError::SizeLimit {
                    what: "lattice steps (path mode)",
                    value: n,
                    limit: LATTICE_PATH_MAX_STEPS,
                });
            }
            let mut buf = vec![S::zero(); n + 1];
            Ok(path_recursion(f, &mut buf, 0, n, up_lo, up_hi, band.is_degenerate()))
        }
    }
}

/// Backward recursion over states `(a, c)`: `a` net low-volatility moves,
/// `c` net high-volatility moves, `x = a * up_lo + c * up_hi`.
fn terminal_lattice<S: Scalar>(f: &dyn Fn(S) -> S, n: usize, up_lo: S, up_hi: S) -> S {
    let half = lit::<S>(0.5);
    let width = 2 * n + 1;
    let offset = n as isize;
    let idx = |a: isize, c: isize| ((a + offset) as usize) * width + (c + offset) as usize;
    let reachable = |k: usize, a: isize, c: isize| (a.unsigned_abs() + c.unsigned_abs()) <= k && ((a + c).rem_euclid(2) as usize) == k % 2;
    let mut next = vec![S::zero(); width * width];
    let ni = n as isize;
    for a in -ni..=ni {
        for c in -ni..=ni {
            if reachable(n, a, c) {
                let x = from_isize::<S>(a) * up_lo + from_isize::<S>(c) * up_hi;
                next[idx(a, c)] = f(x);
            }
        }
    }
    let mut cur = vec![S::zero(); width * width];
    for k in (0..n).rev() {
        let ki = k as isize;
        for a in -ki..=ki {
            for c in -ki..=ki {
                if !reachable(k, a, c) {
                    continue;
                }
                let lo = half * (next[idx(a + 1, c)] + next[idx(a - 1, c)]);
                let hi = half * (next[idx(a, c + 1)] + next[idx(a, c - 1)]);
                cur[idx(a, c)] = lo.max(hi);
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    next[idx(0, 0)]
}

fn from_isize<S: Scalar>(v: isize) -> S {
    S::from_isize(v).expect("lattice index representable")
}

fn path_recursion<S: Scalar>(
    f: &dyn Fn(&[S]) -> S,
    buf: &mut [S],
    k: usize,
    n: usize,
    up_lo: S,
    up_hi: S,
    degenerate: bool,
) -> S {
    if k == n {
        return f(buf);
    }
    let half = lit::<S>(0.5);
    let x = buf[k];
    let branch = |up: S, buf: &mut [S]| {
        buf[k + 1] = x + up;
        let v_up = path_recursion(f, buf, k + 1, n, up_lo, up_hi, degenerate);
        buf[k + 1] = x - up;
        let v_down = path_recursion(f, buf, k + 1, n, up_lo, up_hi, degenerate);
        half * (v_up + v_down)
    };
    let lo = branch(up_lo, buf);
    if degenerate {
        return lo;
    }
    let hi = branch(up_hi, buf);
    lo.max(hi)
}

/// Weight `beta` of the discounted norm `E^[int_0^T e^{-beta t} |x(t)|^2 dt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNormConfig<S> {
    pub beta: S,
    pub grid: TimeGrid<S>,
}

impl<S: Scalar> WeightedNormConfig<S> {
    pub fn new(beta: S, grid: TimeGrid<S>) -> Result<Self> {
        if !(beta >= S::zero()) || !beta.is_finite() {
            return Err(GsvieError::invalid(format!("beta must be finite and nonnegative, got {beta}")));
        }
        Ok(Self { beta, grid })
    }
}

/// Per-path discrete norm `sum_{i<N} e^{-beta t_i} |x_i|^2 dt_i`.
pub fn weighted_sq_norm<S: Scalar>(values: &[S], grid: &TimeGrid<S>, beta: S) -> S {
    grid.dt()
        .iter()
        .enumerate()
        .fold(S::zero(), |acc, (i, &dt)| acc + (-beta * grid.node(i)).exp() * values[i] * values[i] * dt)
}

/// Solutions sharing one volatility control.
#[derive(Debug, Clone)]
pub struct ControlEnsemble<S> {
    pub label: String,
    pub solutions: Vec<SolutionPath<S>>,
}

/// Max-over-controls estimate of the discounted norm of an ensemble.
pub fn weighted_norm<S: Scalar>(ensemble: &[ControlEnsemble<S>], cfg: &WeightedNormConfig<S>) -> Result<RobustEstimate<S>> {
    if ensemble.is_empty() || ensemble.iter().any(|c| c.solutions.is_empty()) {
        return Err(GsvieError::invalid("weighted norm needs a nonempty ensemble"));
    }
    let n = cfg.grid.steps();
    let mut means = Vec::with_capacity(ensemble.len());
    for group in ensemble {
        let mut samples = Vec::with_capacity(group.solutions.len());
        for sol in &group.solutions {
            if sol.values.len() != n + 1 {
                return Err(GsvieError::invalid("solution length does not match the norm grid"));
            }
            samples.push(weighted_sq_norm(&sol.values, &cfg.grid, cfg.beta));
        }
        means.push(ControlMean::from_samples(group.label.clone(), &samples));
    }
    RobustEstimate::from_means(format!("weighted_norm(beta={})", cfg.beta), means, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{make_control, ControlStrategy};
    use crate::solver::{Method, SolutionPath};
    use proptest::prelude::*;

    fn band(lo: f64, hi: f64) -> VolatilityBand<f64> {
        VolatilityBand::new(lo, hi).unwrap()
    }

    fn lo_hi_plan(n: usize, count: usize, seed: u64) -> EnsemblePlan<f64> {
        let grid = TimeGrid::uniform(1.0, n).unwrap();
        let b = band(1.0, 2.0);
        let controls = vec![
            make_control(&grid, &b, &ControlStrategy::ConstantLo, 0).unwrap(),
            make_control(&grid, &b, &ControlStrategy::ConstantHi, 0).unwrap(),
        ];
        EnsemblePlan::new(grid, controls, count, NoiseKind::Gaussian, seed).unwrap()
    }

    /// Open-loop enumeration: max over all 2^N control sequences of the
    /// average over all 2^N sign sequences.
    fn open_loop_enumeration(f: &dyn Fn(&[f64]) -> f64, n: usize, lo: f64, hi: f64) -> f64 {
        let sq = (1.0 / n as f64).sqrt();
        let mut best = f64::NEG_INFINITY;
        for ctrl in 0..(1u32 << n) {
            let mut total = 0.0;
            for signs in 0..(1u32 << n) {
                let mut path = vec![0.0; n + 1];
                for k in 0..n {
                    let s = if ctrl >> k & 1 == 1 { hi } else { lo };
                    let e = if signs >> k & 1 == 1 { 1.0 } else { -1.0 };
                    path[k + 1] = path[k] + s * sq * e;
                }
                total += f(&path);
            }
            best = best.max(total / (1u32 << n) as f64);
        }
        best
    }

    fn binomial(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn lattice_odd_payoff_is_zero() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let v = lattice_expectation(LatticePayoff::Terminal(&|x: f64| x), &grid, &band(1.0, 2.0)).unwrap();
        assert!(v.abs() < 1e-14);
    }

    #[test]
    fn lattice_square_picks_upper_volatility() {
        for n in [1, 4, 10, 64] {
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            let v = lattice_expectation(LatticePayoff::Terminal(&|x: f64| x * x), &grid, &band(1.0, 2.0)).unwrap();
            assert!((v - 4.0).abs() < 1e-12, "n={n} v={v}");
        }
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let oracle = open_loop_enumeration(&|p| p[4] * p[4], 4, 1.0, 2.0);
        assert!((oracle - 4.0).abs() < 1e-12);
        let neg = lattice_expectation(LatticePayoff::Terminal(&|x: f64| -x * x), &grid, &band(1.0, 2.0)).unwrap();
        assert!((neg + 1.0).abs() < 1e-12);
    }

    #[test]
    fn lattice_degenerate_band_is_binomial() {
        let sigma = 1.3;
        let n = 9;
        let grid = TimeGrid::uniform(2.0, n).unwrap();
        let f = |x: f64| (x - 0.2).max(0.0) + (3.0 * x).sin();
        let v = lattice_expectation(LatticePayoff::Terminal(&f), &grid, &band(sigma, sigma)).unwrap();
        let up = sigma * (2.0f64 / n as f64).sqrt();
        let classical: f64 = (0..=n)
            .map(|m| binomial(n, m) / 2f64.powi(n as i32) * f((2.0 * m as f64 - n as f64) * up))
            .sum();
        assert!((v - classical).abs() < 1e-12, "{v} vs {classical}");
    }

    #[test]
    fn path_mode_agrees_with_terminal_mode() {
        let grid = TimeGrid::uniform(1.0, 6).unwrap();
        let b = band(0.5, 1.5);
        let f = |x: f64| (x - 0.1).max(0.0) - 0.3 * (x + 0.4).max(0.0);
        let t = lattice_expectation(LatticePayoff::Terminal(&f), &grid, &b).unwrap();
        let p = lattice_expectation(LatticePayoff::Path(&|path: &[f64]| f(path[6])), &grid, &b).unwrap();
        assert!((t - p).abs() < 1e-12);
    }

    #[test]
    fn path_mode_dominates_open_loop_enumeration() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let f = |p: &[f64]| p.iter().map(|x| x.abs()).fold(0.0, f64::max) - 0.5 * p[4] * p[4];
        let exact = lattice_expectation(LatticePayoff::Path(&f), &grid, &band(1.0, 2.0)).unwrap();
        let open = open_loop_enumeration(&f, 4, 1.0, 2.0);
        assert!(exact >= open - 1e-12);
    }

    #[test]
    fn lattice_size_limits() {
        let grid = TimeGrid::uniform(1.0, 13).unwrap();
        let err = lattice_expectation(LatticePayoff::Path(&|p: &[f64]| p[0]), &grid, &band(1.0, 2.0)).unwrap_err();
        assert!(matches!(err, GsvieError::SizeLimit { .. }));
        let grid = TimeGrid::uniform(1.0, 513).unwrap();
        let err = lattice_expectation(LatticePayoff::Terminal(&|x: f64| x), &grid, &band(1.0, 2.0)).unwrap_err();
        assert!(matches!(err, GsvieError::SizeLimit { .. }));
    }

    #[test]
    fn lattice_preserves_constants() {
        let grid = TimeGrid::uniform(1.0, 7).unwrap();
        let v = lattice_expectation(LatticePayoff::Terminal(&|_| 3.25), &grid, &band(1.0, 2.0)).unwrap();
        assert_eq!(v, 3.25);
    }

    #[test]
    fn monte_carlo_martingale_and_square() {
        let plan = lo_hi_plan(8, 20_000, 3);
        let e = estimate_upper_expectation(&FunctionalSpec::terminal(), &plan).unwrap();
        for c in &e.per_control {
            assert!(c.mean.abs() < 3.0 * c.se, "{c:?}");
        }
        let sq = estimate_upper_expectation(&FunctionalSpec::terminal_square(), &plan).unwrap();
        assert!((sq.value - 4.0).abs() < 3.0 * sq.se());
        assert_eq!(sq.argmax().label, "hi");
        let neg = FunctionalSpec::infallible("-B(T)^2", |p: &ScenarioPath<f64>| -p.b[p.steps()].powi(2));
        let n = estimate_upper_expectation(&neg, &plan).unwrap();
        assert!((n.value + 1.0).abs() < 3.0 * n.se());
        assert_eq!(n.argmax().label, "lo");
    }

    #[test]
    fn value_is_max_of_means() {
        let plan = lo_hi_plan(4, 50, 1);
        let e = estimate_upper_expectation(&FunctionalSpec::terminal(), &plan).unwrap();
        let m = e.per_control.iter().map(|c| c.mean).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(e.value, m);
        let js = e.to_json();
        assert_eq!(js["controls"].as_array().unwrap().len(), 2);
        assert_eq!(js["controls"][0]["n"], 50);
        assert_eq!(js["functional"], "B(T)");
    }

    #[test]
    fn evaluator_failure_carries_scenario() {
        let plan = lo_hi_plan(4, 10, 1);
        let f = FunctionalSpec::new("fails", |p: &ScenarioPath<f64>| {
            if p.scenario == 7 {
                Err(GsvieError::invalid("boom"))
            } else {
                Ok(0.0)
            }
        });
        match estimate_upper_expectation(&f, &plan).unwrap_err() {
            GsvieError::Functional { scenario, control, .. } => {
                assert_eq!(scenario, 7);
                assert_eq!(control, "lo");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn plan_validation() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        assert!(EnsemblePlan::<f64>::new(grid.clone(), vec![], 10, NoiseKind::Gaussian, 0).is_err());
        let c = make_control(&grid, &band(1.0, 2.0), &ControlStrategy::ConstantLo, 0).unwrap();
        assert!(EnsemblePlan::new(grid, vec![c], 1, NoiseKind::Gaussian, 0).is_err());
    }

    fn ensemble_of(values: Vec<f64>) -> Vec<ControlEnsemble<f64>> {
        vec![ControlEnsemble {
            label: "c".into(),
            solutions: vec![SolutionPath {
                values,
                scenario: 0,
                method: Method::Direct,
            }],
        }]
    }

    #[test]
    fn weighted_norm_examples() {
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let zero = weighted_norm(&ensemble_of(vec![0.0; 65]), &WeightedNormConfig::new(3.0, grid.clone()).unwrap()).unwrap();
        assert_eq!(zero.value, 0.0);
        let one = weighted_norm(&ensemble_of(vec![1.0; 65]), &WeightedNormConfig::new(0.0, grid.clone()).unwrap()).unwrap();
        assert!((one.value - 1.0).abs() < 1e-14);
        let beta = 3.0;
        let disc = weighted_norm(&ensemble_of(vec![1.0; 65]), &WeightedNormConfig::new(beta, grid.clone()).unwrap()).unwrap();
        let exact = (1.0 - (-beta).exp()) / beta;
        assert!((disc.value - exact).abs() <= grid.dt()[0] * beta * 1.0);
        assert!(WeightedNormConfig::new(-1.0, grid).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn lattice_is_sublinear(c1 in proptest::collection::vec(-2.0f64..2.0, 3), c2 in proptest::collection::vec(-2.0f64..2.0, 3), n in 1usize..=8) {
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            let b = band(0.7, 1.6);
            let f = move |x: f64| c1[0] * x + c1[1] * x * x + c1[2] * (x - 0.3).max(0.0);
            let g = move |x: f64| c2[0] * x.abs() + c2[1] * (2.0 * x).sin() + c2[2] * (0.5 - x).max(0.0);
            let ef = lattice_expectation(LatticePayoff::Terminal(&f), &grid, &b).unwrap();
            let eg = lattice_expectation(LatticePayoff::Terminal(&g), &grid, &b).unwrap();
            let efg = lattice_expectation(LatticePayoff::Terminal(&|x| f(x) + g(x)), &grid, &b).unwrap();
            prop_assert!(efg <= ef + eg + 1e-12);
        }

        #[test]
        fn lattice_is_monotone(shift in 0.0f64..3.0, n in 1usize..=8) {
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            let b = band(0.7, 1.6);
            let f = |x: f64| (x - 0.2).max(0.0) - x * x * 0.1;
            let ef = lattice_expectation(LatticePayoff::Terminal(&f), &grid, &b).unwrap();
            let eg = lattice_expectation(LatticePayoff::Terminal(&|x| f(x) + shift * (1.0 + x.sin()) / 2.0), &grid, &b).unwrap();
            prop_assert!(ef <= eg + 1e-12);
        }
    }
}
