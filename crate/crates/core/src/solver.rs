//! Explicit solvers for
//! `X(t) = phi(t) + int_0^t b(t,s,X) ds + int_0^t h(t,s,X) d<B> + int_0^t sigma(t,s,X) dB`.
//!
//! All schemes are left-point Euler sums on the scenario grid. Because the
//! kernels depend on the output time `t_i`, every node re-sums the whole
//! memory, so a solve costs O(N^2) coefficient evaluations. The separable
//! solver factors `H(t_i)` out of the stochastic sum and updates that sum
//! incrementally.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::comparison::{SeparableSystem, Side};
use crate::error::{GsvieError, Result};
use crate::expectation::{weighted_sq_norm, ControlEnsemble, ControlMean, EnsemblePlan};
use crate::scalar::{from_usize, lit, to_f64, Scalar};
use crate::scenario::{ScenarioPath, TimeGrid, VolatilityBand};

/// Coefficient `k(t, s, x)` on the simplex `0 <= s <= t <= T`.
pub type Kernel<S> = Arc<dyn Fn(S, S, S) -> S + Send + Sync>;

pub fn kernel<S>(f: impl Fn(S, S, S) -> S + Send + Sync + 'static) -> Kernel<S> {
    Arc::new(f)
}

/// Modulus of continuity `rho` with `rho(0) = 0`, strictly increasing.
#[derive(Clone)]
pub struct Modulus<S> {
    pub name: String,
    f: Arc<dyn Fn(S) -> S + Send + Sync>,
}

impl<S: Scalar> Modulus<S> {
    pub fn new(name: impl Into<String>, f: impl Fn(S) -> S + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// `rho(r) = k r`.
    pub fn linear(k: S) -> Self {
        Self::new(format!("linear({k})"), move |r| k * r)
    }

    pub fn eval(&self, r: S) -> S {
        (self.f)(r)
    }
}

impl<S> std::fmt::Debug for Modulus<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Modulus").field("name", &self.name).finish()
    }
}

/// Optional Hölder constants `(C_T, alpha)`: coefficient increments in `t`
/// bounded by `C_T |t - t'|^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderConstants<S> {
    pub c_t: S,
    pub alpha: S,
}

/// Coefficients `b`, `h`, `sigma` with declared Lipschitz/growth constant
/// `L` and modulus `rho`.
#[derive(Clone)]
pub struct CoefficientSet<S> {
    pub name: String,
    pub b: Kernel<S>,
    pub h: Kernel<S>,
    pub sigma: Kernel<S>,
    pub lipschitz: S,
    pub rho: Modulus<S>,
    pub holder: Option<HolderConstants<S>>,
}

impl<S: Scalar> CoefficientSet<S> {
    pub fn new(name: impl Into<String>, b: Kernel<S>, h: Kernel<S>, sigma: Kernel<S>, lipschitz: S, rho: Modulus<S>) -> Self {
        Self {
            name: name.into(),
            b,
            h,
            sigma,
            lipschitz,
            rho,
            holder: None,
        }
    }

    pub fn zero() -> Self {
        let z = kernel(|_, _, _| S::zero());
        Self::new("zero", z.clone(), z.clone(), z, S::zero(), Modulus::linear(S::zero()))
    }

    pub fn with_holder(mut self, c_t: S, alpha: S) -> Self {
        self.holder = Some(HolderConstants { c_t, alpha });
        self
    }
}

impl<S> std::fmt::Debug for CoefficientSet<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSet").field("name", &self.name).finish_non_exhaustive()
    }
}

/// Path regularity declared by a forcing process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    Deterministic,
    MeanSquareContinuous,
    ContinuousPaths,
}

/// Adapted process evaluated at grid node `i` of a scenario.
///
/// Used for the forcing term `phi` and for the separable factor `H`.
#[derive(Clone)]
pub struct AdaptedProcess<S> {
    pub name: String,
    pub regularity: Regularity,
    f: Arc<dyn Fn(usize, &ScenarioPath<S>) -> S + Send + Sync>,
}

pub type ForcingProcess<S> = AdaptedProcess<S>;

impl<S: Scalar> AdaptedProcess<S> {
    pub fn new(
        name: impl Into<String>,
        regularity: Regularity,
        f: impl Fn(usize, &ScenarioPath<S>) -> S + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            regularity,
            f: Arc::new(f),
        }
    }

    /// Deterministic function of time.
    pub fn deterministic(name: impl Into<String>, f: impl Fn(S) -> S + Send + Sync + 'static) -> Self {
        Self::new(name, Regularity::Deterministic, move |i, p| f(p.time(i)))
    }

    pub fn constant(c: S) -> Self {
        Self::deterministic(format!("{c}"), move |_| c)
    }

    pub fn eval(&self, i: usize, path: &ScenarioPath<S>) -> S {
        (self.f)(i, path)
    }

    /// Values at every node of the scenario grid.
    pub fn sample(&self, path: &ScenarioPath<S>) -> Vec<S> {
        (0..=path.steps()).map(|i| self.eval(i, path)).collect()
    }
}

impl<S> std::fmt::Debug for AdaptedProcess<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdaptedProcess")
            .field("name", &self.name)
            .field("regularity", &self.regularity)
            .finish()
    }
}

/// Scheme that produced a [`SolutionPath`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    Picard,
    Separable,
    QuasiLinearized,
    Frozen,
}

/// Discrete solution `X(t_0), ..., X(t_N)` for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionPath<S> {
    pub values: Vec<S>,
    pub scenario: u64,
    pub method: Method,
}

pub const SOLUTION_CSV_HEADER: &str = "scenario_id,step,t,X";

impl<S: Scalar> SolutionPath<S> {
    /// Rows `scenario_id,step,t,X` (no header).
    pub fn write_csv_rows(&self, grid: &TimeGrid<S>, out: &mut String) {
        for (i, x) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:.16e},{:.16e}", self.scenario, i, grid.node(i), x);
        }
    }

    pub fn max_abs_diff(&self, other: &SolutionPath<S>) -> S {
        self.values
            .iter()
            .zip(&other.values)
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

pub(crate) fn checked<S: Scalar>(v: S, scenario: u64, step: usize) -> Result<S> {
    if v.is_finite() && v.abs() <= S::blowup_threshold() {
        Ok(v)
    } else {
        Err(GsvieError::NumericalBlowup {
            scenario,
            step,
            value: to_f64(v),
        })
    }
}

/// One Euler sweep. With `input = None` the sums read the output being
/// built (the direct solve); otherwise they read the frozen input (one
/// application of the map Lambda).
fn sweep<S: Scalar>(c: &CoefficientSet<S>, phi: &[S], path: &ScenarioPath<S>, input: Option<&[S]>, method: Method) -> Result<SolutionPath<S>> {
    let n = path.steps();
    if phi.len() != n + 1 {
        return Err(GsvieError::invalid("forcing sample length does not match the grid"));
    }
    if let Some(x) = input {
        if x.len() != n + 1 {
            return Err(GsvieError::invalid(format!("input path has {} values, expected {}", x.len(), n + 1)));
        }
    }
    let t = path.grid.nodes();
    let dt = path.grid.dt();
    let mut out: Vec<S> = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let ti = t[i];
        let src = input.unwrap_or(&out);
        let (mut drift, mut qv, mut noise) = (S::zero(), S::zero(), S::zero());
        for j in 0..i {
            let xj = src[j];
            drift += (c.b)(ti, t[j], xj) * dt[j];
            qv += (c.h)(ti, t[j], xj) * path.dqv[j];
            noise += (c.sigma)(ti, t[j], xj) * path.db[j];
        }
        out.push(checked(phi[i] + drift + qv + noise, path.scenario, i)?);
    }
    Ok(SolutionPath {
        values: out,
        scenario: path.scenario,
        method,
    })
}

/// Explicit Euler recursion
/// `X_i = phi_i + sum_{j<i} [b(t_i,t_j,X_j) dt_j + h(t_i,t_j,X_j) dQV_j + sigma(t_i,t_j,X_j) dB_j]`.
pub fn solve_direct<S: Scalar>(c: &CoefficientSet<S>, phi: &ForcingProcess<S>, path: &ScenarioPath<S>) -> Result<SolutionPath<S>> {
    sweep(c, &phi.sample(path), path, None, Method::Direct)
}

/// One application of Lambda: node `i` of the output uses the input values
/// `x_j`, `j < i`.
pub fn apply_lambda<S: Scalar>(
    c: &CoefficientSet<S>,
    phi: &ForcingProcess<S>,
    path: &ScenarioPath<S>,
    x: &SolutionPath<S>,
) -> Result<SolutionPath<S>> {
    sweep(c, &phi.sample(path), path, Some(&x.values), Method::Picard)
}

/// `beta = 6 (T + sigma_hi^4 T + sigma_hi^2) L^2`.
pub fn beta_default<S: Scalar>(band: &VolatilityBand<S>, lipschitz: S, horizon: S) -> S {
    let s2 = band.sigma_hi() * band.sigma_hi();
    lit::<S>(6.0) * (horizon + s2 * s2 * horizon + s2) * lipschitz * lipschitz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    Zero,
    #[default]
    Phi,
}

/// When the Picard loop stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once the weighted distance certifies that every node moved by
    /// less than `tol`: `e^{beta T} d / min_dt < tol^2` (evaluated in log
    /// space) and the last node moved by less than `tol`.
    #[default]
    NodeEquivalent,
    /// Stop once the weighted distance itself is below `tol^2`. The weight
    /// `e^{-beta t}` hides late-time differences, so this can stop with
    /// node differences far above `tol`.
    RawWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardConfig<S> {
    pub beta: S,
    pub tol: S,
    pub max_iter: usize,
    pub initial_guess: InitialGuess,
    pub stop_rule: StopRule,
}

impl<S: Scalar> PicardConfig<S> {
    pub fn new(beta: S, tol: S, max_iter: usize) -> Result<Self> {
        if !(tol > S::zero()) {
            return Err(GsvieError::invalid(format!("Picard tolerance must be positive, got {tol}")));
        }
        if max_iter < 1 {
            return Err(GsvieError::invalid("Picard max_iter must be at least 1"));
        }
        if !(beta >= S::zero()) || !beta.is_finite() {
            return Err(GsvieError::invalid(format!("beta must be finite and nonnegative, got {beta}")));
        }
        Ok(Self {
            beta,
            tol,
            max_iter,
            initial_guess: InitialGuess::Phi,
            stop_rule: StopRule::NodeEquivalent,
        })
    }

    /// `beta = beta_default(band, L, T)`.
    pub fn with_default_beta(band: &VolatilityBand<S>, lipschitz: S, horizon: S, tol: S, max_iter: usize) -> Result<Self> {
        Self::new(beta_default(band, lipschitz, horizon), tol, max_iter)
    }
}

#[derive(Debug, Clone)]
pub struct PicardOutcome<S> {
    pub solution: SolutionPath<S>,
    pub iterations: usize,
    /// Weighted squared distances `sum_{i<N} e^{-beta t_i} |X^{k+1}_i - X^k_i|^2 dt_i`.
    pub distances: Vec<S>,
}

/// Iterates `X^{k+1} = Lambda(X^k)` until the stop rule fires.
pub fn solve_picard<S: Scalar>(
    c: &CoefficientSet<S>,
    phi: &ForcingProcess<S>,
    path: &ScenarioPath<S>,
    cfg: &PicardConfig<S>,
) -> Result<PicardOutcome<S>> {
    let phi_vals = phi.sample(path);
    let n = path.steps();
    let grid = &path.grid;
    let mut x = match cfg.initial_guess {
        InitialGuess::Phi => phi_vals.clone(),
        InitialGuess::Zero => vec![S::zero(); n + 1],
    };
    let log_scale = cfg.beta * grid.horizon() - grid.min_step().ln();
    let log_tol2 = lit::<S>(2.0) * cfg.tol.ln();
    let mut distances = Vec::new();
    for k in 1..=cfg.max_iter {
        let next = sweep(c, &phi_vals, path, Some(&x), Method::Picard)?;
        let diff: Vec<S> = next.values.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let d = weighted_sq_norm(&diff, grid, cfg.beta);
        distances.push(d);
        let done = match cfg.stop_rule {
            StopRule::RawWeighted => d < cfg.tol * cfg.tol,
            StopRule::NodeEquivalent => (d == S::zero() || d.ln() + log_scale < log_tol2) && diff[n].abs() < cfg.tol,
        };
        x = next.values;
        if done {
            return Ok(PicardOutcome {
                solution: SolutionPath {
                    values: x,
                    scenario: path.scenario,
                    method: Method::Picard,
                },
                iterations: k,
                distances,
            });
        }
    }
    Err(GsvieError::NonConvergence {
        iterations: cfg.max_iter,
        last: distances.last().map(|&d| to_f64(d)).unwrap_or(f64::NAN),
        history: distances.iter().map(|&d| to_f64(d)).collect(),
    })
}

/// Recursion for the separable equation of one side of a system:
/// `X_i = phi_i + sum_{j<i} [b(t_i,t_j,X_j) dt_j + h(t_i,t_j,X_j) dQV_j] + H(t_i) sum_{j<i} sigma(t_j,X_j) dB_j`.
pub fn solve_separable<S: Scalar>(
    system: &SeparableSystem<S>,
    side: Side,
    phi: &ForcingProcess<S>,
    path: &ScenarioPath<S>,
) -> Result<SolutionPath<S>> {
    let n = path.steps();
    let (b, h) = system.drift(side);
    let t = path.grid.nodes();
    let dt = path.grid.dt();
    let mut out: Vec<S> = Vec::with_capacity(n + 1);
    let mut stoch = S::zero();
    for i in 0..=n {
        let ti = t[i];
        if i > 0 {
            stoch += (system.sigma)(t[i - 1], out[i - 1]) * path.db[i - 1];
        }
        let (mut drift, mut qv) = (S::zero(), S::zero());
        for j in 0..i {
            drift += b(ti, t[j], out[j]) * dt[j];
            qv += h(ti, t[j], out[j]) * path.dqv[j];
        }
        let v = phi.eval(i, path) + drift + qv + system.h_fun.eval(i, path) * stoch;
        out.push(checked(v, path.scenario, i)?);
    }
    Ok(SolutionPath {
        values: out,
        scenario: path.scenario,
        method: Method::Separable,
    })
}

/// Solves every scenario of a plan, grouped by control. Scenarios are
/// solved in parallel and collected in order.
pub fn solve_ensemble<S, F>(plan: &EnsemblePlan<S>, solve: F) -> Result<Vec<ControlEnsemble<S>>>
where
    S: Scalar,
    F: Fn(&ScenarioPath<S>) -> Result<SolutionPath<S>> + Send + Sync,
{
    plan.controls
        .iter()
        .enumerate()
        .map(|(ci, control)| {
            let solutions = (0..plan.scenarios_per_control as u64)
                .into_par_iter()
                .map(|s| solve(&plan.scenario(ci, s)?))
                .collect::<Vec<_>>()
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            Ok(ControlEnsemble {
                label: control.label().to_string(),
                solutions,
            })
        })
        .collect()
}

/// Perturbation bound `C1 f(t) + C2 int_0^t C1 f(r) e^{C2 (t - r)} dr`.
///
/// `C1` and `C2` are user inputs; the theory does not make them explicit.
#[derive(Clone)]
pub struct AprioriBound<S> {
    pub c1: S,
    pub c2: S,
    f: Arc<dyn Fn(S) -> S + Send + Sync>,
}

impl<S: Scalar> AprioriBound<S> {
    /// Requires `c1 > 0` and `c2 >= 0`.
    pub fn new(c1: S, c2: S, f: impl Fn(S) -> S + Send + Sync + 'static) -> Result<Self> {
        if !(c1 > S::zero()) || !(c2 >= S::zero()) || !c1.is_finite() || !c2.is_finite() {
            return Err(GsvieError::invalid(format!("a priori constants must satisfy C1 > 0, C2 >= 0 (got {c1}, {c2})")));
        }
        Ok(Self { c1, c2, f: Arc::new(f) })
    }

    pub fn f(&self, t: S) -> S {
        (self.f)(t)
    }
}

/// Bound at every node of `grid`, by the cumulative trapezoid rule
/// `I_{i+1} = e^{C2 dt} I_i + dt/2 (f_i e^{C2 dt} + f_{i+1})`.
///
/// The quadrature error is O(dt^2) for smooth `f`, O(dt) for Lipschitz `f`.
pub fn apriori_curve<S: Scalar>(bound: &AprioriBound<S>, grid: &TimeGrid<S>) -> Vec<S> {
    let half = lit::<S>(0.5);
    let mut integral = S::zero();
    let mut f_prev = bound.f(grid.node(0));
    let mut out = Vec::with_capacity(grid.steps() + 1);
    out.push(bound.c1 * f_prev);
    for (i, &dt) in grid.dt().iter().enumerate() {
        let grow = (bound.c2 * dt).exp();
        let f_next = bound.f(grid.node(i + 1));
        integral = grow * integral + half * dt * (f_prev * grow + f_next);
        out.push(bound.c1 * (f_next + bound.c2 * integral));
        f_prev = f_next;
    }
    out
}

/// Bound at time `t` using `steps` quadrature intervals on `[0, t]`.
pub fn apriori_bound<S: Scalar>(bound: &AprioriBound<S>, t: S, steps: usize) -> Result<S> {
    if t == S::zero() {
        return Ok(bound.c1 * bound.f(t));
    }
    let grid = TimeGrid::uniform(t, steps)?;
    Ok(*apriori_curve(bound, &grid).last().unwrap())
}

/// Sup-over-`t` estimate of `E^[|X(t + lag) - X(t)|^2]` for one lag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagEstimate<S> {
    pub lag_steps: usize,
    pub lag: S,
    pub value: S,
    /// Standard error of the mean attaining the maximum.
    pub se: S,
    pub control: String,
    /// Node `t` at which the supremum was attained.
    pub at_node: usize,
}

/// For each lag (in steps), the maximum over controls and start nodes of
/// the per-control mean of `|X(t_i + lag) - X(t_i)|^2`.
pub fn mean_square_continuity_diagnostic<S: Scalar>(
    ensembles: &[ControlEnsemble<S>],
    grid: &TimeGrid<S>,
    lags: &[usize],
) -> Result<Vec<LagEstimate<S>>> {
    let n = grid.steps();
    if ensembles.is_empty() || ensembles.iter().any(|e| e.solutions.is_empty()) {
        return Err(GsvieError::invalid("diagnostic needs a nonempty ensemble"));
    }
    if ensembles.iter().flat_map(|e| &e.solutions).any(|s| s.values.len() != n + 1) {
        return Err(GsvieError::invalid("solution length does not match the grid"));
    }
    let mut out = Vec::with_capacity(lags.len());
    for &lag in lags {
        if lag > n {
            return Err(GsvieError::invalid(format!("lag {lag} exceeds the grid ({n} steps)")));
        }
        let mut best: Option<LagEstimate<S>> = None;
        for group in ensembles {
            for i in 0..=(n - lag) {
                let samples: Vec<S> = group
                    .solutions
                    .iter()
                    .map(|s| {
                        let d = s.values[i + lag] - s.values[i];
                        d * d
                    })
                    .collect();
                let m = ControlMean::from_samples(group.label.clone(), &samples);
                if best.as_ref().map_or(true, |b| m.mean > b.value) {
                    best = Some(LagEstimate {
                        lag_steps: lag,
                        lag: grid.node(i + lag) - grid.node(i),
                        value: m.mean,
                        se: m.se,
                        control: m.label,
                        at_node: i,
                    });
                }
            }
        }
        out.push(best.expect("nonempty ensemble"));
    }
    Ok(out)
}

/// Empirical Hölder quotient `max |X(t) - X(s)| / |t - s|^alpha`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderStat<S> {
    pub alpha: S,
    pub max_quotient: S,
    /// `(scenario, s index, t index)` attaining the maximum.
    pub witness: (u64, usize, usize),
}

/// Holder quotients over all node pairs of all paths. Reported, not
/// asserted: a quotient growing under refinement indicates the exponent is
/// too large for the paths.
pub fn holder_diagnostic<S: Scalar>(paths: &[SolutionPath<S>], grid: &TimeGrid<S>, alphas: &[S]) -> Result<Vec<HolderStat<S>>> {
    let n = grid.steps();
    if paths.iter().any(|p| p.values.len() != n + 1) {
        return Err(GsvieError::invalid("solution length does not match the grid"));
    }
    let t = grid.nodes();
    let per_path: Vec<Vec<(S, (u64, usize, usize))>> = paths
        .par_iter()
        .map(|p| {
            let mut best = vec![(S::zero(), (p.scenario, 0, 0)); alphas.len()];
            for j in 0..n {
                for i in (j + 1)..=n {
                    let dx = (p.values[i] - p.values[j]).abs();
                    if dx == S::zero() {
                        continue;
                    }
                    let log_dt = (t[i] - t[j]).ln();
                    for (k, &a) in alphas.iter().enumerate() {
                        let q = dx * (-a * log_dt).exp();
                        if q > best[k].0 {
                            best[k] = (q, (p.scenario, j, i));
                        }
                    }
                }
            }
            best
        })
        .collect();
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            let (max_quotient, witness) = per_path
                .iter()
                .map(|b| b[k])
                .fold((S::zero(), (0, 0, 0)), |acc, x| if x.0 > acc.0 { x } else { acc });
            HolderStat {
                alpha,
                max_quotient,
                witness,
            }
        })
        .collect())
}

/// Mean of `values` over scenarios, per node.
pub fn node_means<S: Scalar>(solutions: &[SolutionPath<S>]) -> Vec<S> {
    let Some(first) = solutions.first() else {
        return Vec::new();
    };
    let nf = from_usize::<S>(solutions.len());
    (0..first.values.len())
        .map(|i| solutions.iter().fold(S::zero(), |a, s| a + s.values[i]) / nf)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, make_control, ControlStrategy, NoiseKind};

    fn path(n: usize, lo: f64, hi: f64, strategy: ControlStrategy, seed: u64, scenario: u64) -> ScenarioPath<f64> {
        let grid = TimeGrid::uniform(1.0, n).unwrap();
        let band = VolatilityBand::new(lo, hi).unwrap();
        let c = make_control(&grid, &band, &strategy, seed).unwrap();
        generate_scenario(&grid, &c, NoiseKind::Gaussian, seed, scenario).unwrap()
    }

    fn gbm(mu: f64, c: f64) -> CoefficientSet<f64> {
        CoefficientSet::new(
            "gbm",
            kernel(move |_, _, x| mu * x),
            kernel(|_, _, _| 0.0),
            kernel(move |_, _, x| c * x),
            mu.abs() + c.abs(),
            Modulus::linear(0.0),
        )
    }

    fn volterra() -> CoefficientSet<f64> {
        CoefficientSet::new(
            "volterra",
            kernel(|t: f64, s: f64, x: f64| (-(t - s)).exp() * x.sin()),
            kernel(|t: f64, s: f64, x: f64| 0.3 * (s - t).exp() * x),
            kernel(|t: f64, s: f64, x: f64| 0.4 * (1.0 + t - s).recip() * x.cos()),
            1.0,
            Modulus::linear(1.0),
        )
    }

    #[test]
    fn zero_coefficients_return_phi() {
        let p = path(32, 1.0, 2.0, ControlStrategy::UniformRandom, 4, 0);
        let phi = ForcingProcess::deterministic("sin", |t: f64| (3.0 * t).sin());
        let x = solve_direct(&CoefficientSet::zero(), &phi, &p).unwrap();
        assert_eq!(x.values, phi.sample(&p));
        let other = SolutionPath {
            values: vec![5.0; 33],
            scenario: 0,
            method: Method::Direct,
        };
        assert_eq!(apply_lambda(&CoefficientSet::zero(), &phi, &p, &other).unwrap().values, phi.sample(&p));
    }

    #[test]
    fn constant_drift_integrates_time() {
        let p = path(16, 1.0, 1.0, ControlStrategy::ConstantLo, 0, 0);
        let mut c = CoefficientSet::zero();
        c.b = kernel(|_, _, _| 1.0);
        let x = solve_direct(&c, &ForcingProcess::constant(0.0), &p).unwrap();
        for (i, v) in x.values.iter().enumerate() {
            assert_eq!(*v, i as f64 / 16.0);
        }
    }

    #[test]
    fn fixed_point_is_invariant_under_lambda() {
        let p = path(64, 0.5, 1.0, ControlStrategy::UniformRandom, 9, 3);
        let phi = ForcingProcess::constant(1.0);
        let x = solve_direct(&volterra(), &phi, &p).unwrap();
        let y = apply_lambda(&volterra(), &phi, &p, &x).unwrap();
        assert_eq!(x.values, y.values);
    }

    #[test]
    fn picard_matches_direct() {
        let band = VolatilityBand::new(0.5, 1.0).unwrap();
        for s in 0..5 {
            let p = path(128, 0.5, 1.0, ControlStrategy::UniformRandom, 2, s);
            let phi = ForcingProcess::constant(1.0);
            let cfg = PicardConfig::with_default_beta(&band, 1.0, 1.0, 1e-10, 60).unwrap();
            let direct = solve_direct(&volterra(), &phi, &p).unwrap();
            let pic = solve_picard(&volterra(), &phi, &p, &cfg).unwrap();
            assert!(pic.solution.max_abs_diff(&direct) <= 1e-10);
            let h = &pic.distances;
            assert!(h.len() >= 2);
            assert!(h[h.len() - 1] < h[h.len() - 2]);
        }
    }

    #[test]
    fn picard_zero_coefficients_converges_in_one_step() {
        let p = path(16, 1.0, 2.0, ControlStrategy::ConstantHi, 0, 0);
        let cfg = PicardConfig::new(1.0, 1e-10, 5).unwrap();
        let out = solve_picard(&CoefficientSet::zero(), &ForcingProcess::constant(2.0), &p, &cfg).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.solution.values.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn picard_reports_nonconvergence() {
        let p = path(64, 1.0, 1.0, ControlStrategy::ConstantHi, 0, 0);
        let cfg = PicardConfig::new(18.0, 1e-14, 2).unwrap();
        match solve_picard(&gbm(0.5, 0.8), &ForcingProcess::constant(1.0), &p, &cfg).unwrap_err() {
            GsvieError::NonConvergence { iterations, history, .. } => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 2);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(PicardConfig::<f64>::new(1.0, 0.0, 5).is_err());
        assert!(PicardConfig::<f64>::new(1.0, 1e-3, 0).is_err());
    }

    #[test]
    fn raw_weighted_rule_stops_earlier() {
        let band = VolatilityBand::new(0.5, 1.0).unwrap();
        let p = path(128, 0.5, 1.0, ControlStrategy::ConstantHi, 1, 0);
        let phi = ForcingProcess::constant(1.0);
        let mut cfg = PicardConfig::with_default_beta(&band, 3.0, 1.0, 1e-10, 200).unwrap();
        let strict = solve_picard(&volterra(), &phi, &p, &cfg).unwrap();
        cfg.stop_rule = StopRule::RawWeighted;
        let raw = solve_picard(&volterra(), &phi, &p, &cfg).unwrap();
        assert!(raw.iterations <= strict.iterations);
    }

    #[test]
    fn beta_default_examples() {
        let b1 = VolatilityBand::new(0.5, 1.0).unwrap();
        let b2 = VolatilityBand::new(1.0, 2.0).unwrap();
        assert_eq!(beta_default(&b1, 1.0, 1.0), 18.0);
        assert_eq!(beta_default(&b2, 1.0, 1.0), 126.0);
        assert_eq!(beta_default(&b2, 0.0, 1.0), 0.0);
    }

    #[test]
    fn blowup_is_reported_with_step() {
        let p = path(16, 1.0, 1.0, ControlStrategy::ConstantLo, 0, 7);
        let mut c = CoefficientSet::zero();
        c.b = kernel(|_, _, x: f64| 1e9 * x * x);
        match solve_direct(&c, &ForcingProcess::constant(1.0), &p).unwrap_err() {
            GsvieError::NumericalBlowup { scenario, step, .. } => {
                assert_eq!(scenario, 7);
                assert!(step >= 1);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn degenerate_band_matches_classical_euler() {
        let p = path(64, 0.8, 0.8, ControlStrategy::UniformRandom, 5, 2);
        let c = volterra();
        let x = solve_direct(&c, &ForcingProcess::constant(0.5), &p).unwrap();
        // reference: classical Euler with d<B> = sigma^2 dt
        let dt: f64 = 1.0 / 64.0;
        let normals: Vec<f64> = p.db.iter().map(|d| d / (0.8 * dt.sqrt())).collect();
        let mut r = vec![0.5];
        for i in 1..=64 {
            let ti = i as f64 * dt;
            let (mut a, mut q, mut w) = (0.0, 0.0, 0.0);
            for j in 0..i {
                let tj = j as f64 * dt;
                a += (c.b)(ti, tj, r[j]) * dt;
                q += (c.h)(ti, tj, r[j]) * (0.8 * 0.8 * dt);
                w += (c.sigma)(ti, tj, r[j]) * (0.8 * dt.sqrt() * normals[j]);
            }
            r.push(0.5 + a + q + w);
        }
        for (u, v) in x.values.iter().zip(&r) {
            assert!((u - v).abs() <= 1e-13 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn gbm_strong_error_shrinks() {
        let (mu, c) = (0.05, 0.2);
        let fine = 256;
        let mut errs = Vec::new();
        for factor in [8usize, 2] {
            let mut se = 0.0;
            for s in 0..100 {
                let p = path(fine, 1.0, 1.0, ControlStrategy::ConstantLo, 11, s).coarsen(factor).unwrap();
                let x = solve_direct(&gbm(mu, c), &ForcingProcess::constant(1.0), &p).unwrap();
                let n = p.steps();
                let exact = ((mu - 0.5 * c * c) + c * p.b[n]).exp();
                se += (x.values[n] - exact).powi(2);
            }
            errs.push((se / 100.0).sqrt());
        }
        assert!(errs[1] < errs[0]);
    }

    #[test]
    fn apriori_examples() {
        let zero = AprioriBound::new(1.0, 2.0, |_| 0.0).unwrap();
        assert_eq!(apriori_bound(&zero, 1.0, 100).unwrap(), 0.0);
        let one = AprioriBound::new(1.0, 1.0, |_| 1.0).unwrap();
        let steps = 100;
        let v = apriori_bound(&one, 1.0, steps).unwrap();
        assert!((v - std::f64::consts::E).abs() <= std::f64::consts::E / steps as f64);
        let flat = AprioriBound::new(1.0, 0.0, |t: f64| 1.0 + t * t).unwrap();
        assert_eq!(apriori_bound(&flat, 0.7, 50).unwrap(), 1.0 + 0.49);
        assert!(AprioriBound::new(0.0, 1.0, |_: f64| 1.0).is_err());
    }

    #[test]
    fn apriori_curve_is_monotone() {
        let grid = TimeGrid::uniform(2.0, 200).unwrap();
        for k in 0..20 {
            let a = k as f64 * 0.3;
            let bound = AprioriBound::new(0.5 + a, a, move |t: f64| a * t + (t - 1.0).max(0.0).powi(2)).unwrap();
            let c = apriori_curve(&bound, &grid);
            assert!(c.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    fn ensemble_from(values: Vec<Vec<f64>>) -> Vec<ControlEnsemble<f64>> {
        vec![ControlEnsemble {
            label: "c".into(),
            solutions: values
                .into_iter()
                .enumerate()
                .map(|(s, v)| SolutionPath {
                    values: v,
                    scenario: s as u64,
                    method: Method::Direct,
                })
                .collect(),
        }]
    }

    #[test]
    fn mean_square_diagnostic_examples() {
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let flat = ensemble_from(vec![vec![2.0; 17]; 4]);
        let d = mean_square_continuity_diagnostic(&flat, &grid, &[0, 1, 8]).unwrap();
        assert!(d.iter().all(|e| e.value == 0.0));

        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let sigma = 1.5;
        let paths: Vec<Vec<f64>> = (0..4000)
            .map(|s| path(8, sigma, sigma, ControlStrategy::ConstantLo, 21, s).b)
            .collect();
        let d = mean_square_continuity_diagnostic(&ensemble_from(paths), &grid, &[0, 6]).unwrap();
        assert_eq!(d[0].value, 0.0);
        let lag = 6.0 / 8.0;
        assert!((d[1].value - sigma * sigma * lag).abs() < 3.0 * d[1].se, "{:?}", d[1]);
    }

    #[test]
    fn holder_examples() {
        let grid = TimeGrid::uniform(2.0, 32).unwrap();
        let flat = SolutionPath {
            values: vec![1.0; 33],
            scenario: 0,
            method: Method::Direct,
        };
        let line = SolutionPath {
            values: grid.nodes().to_vec(),
            scenario: 1,
            method: Method::Direct,
        };
        let h = holder_diagnostic(&[flat.clone()], &grid, &[0.3, 0.5]).unwrap();
        assert!(h.iter().all(|s| s.max_quotient == 0.0));
        let h = holder_diagnostic(&[flat, line], &grid, &[0.3, 0.5]).unwrap();
        for s in &h {
            assert!((s.max_quotient - 2f64.powf(1.0 - s.alpha)).abs() < 1e-12);
            assert_eq!(s.witness.0, 1);
        }
    }

    #[test]
    fn f32_direct_solve_runs() {
        let grid = TimeGrid::<f32>::uniform(1.0, 32).unwrap();
        let band = VolatilityBand::new(0.5f32, 1.0).unwrap();
        let c = make_control(&grid, &band, &ControlStrategy::ConstantHi, 0).unwrap();
        let p = generate_scenario(&grid, &c, NoiseKind::Gaussian, 1, 0).unwrap();
        let coeffs = CoefficientSet::new(
            "f32",
            kernel(|_, _, x: f32| 0.1 * x),
            kernel(|_, _, _| 0.0f32),
            kernel(|_, _, x: f32| 0.2 * x),
            0.3,
            Modulus::linear(0.0),
        );
        let x = solve_direct(&coeffs, &ForcingProcess::constant(1.0f32), &p).unwrap();
        assert!(x.values.iter().all(|v| v.is_finite()));
    }
}
