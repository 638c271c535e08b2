//! Separable-diffusion systems
//! `X_i(t) = phi_i(t) + int b_i(t,s,X_i) ds + int h_i(t,s,X_i) d<B> + H(t) int sigma(s,X_i) dB`,
//! `i = 1, 2`, and the machinery around their comparison:
//!
//! * quasilinearization of `Xhat = X_1/H - X_2/H` with the truncation
//!   `gamma_n`, so the difference solves a linear Volterra system with
//!   bounded coefficients plus small residuals;
//! * stopping grids on which `1/H`, `phihat` and the kernels' first time
//!   argument are frozen;
//! * sampled assumption checks and the pathwise comparison harness.
//!
//! Kernel matrices are stored for grid pairs `j <= i` in packed
//! lower-triangular form ([`Tri`]).

use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use crate::error::{GsvieError, Result};
use crate::expectation::{estimate_upper_expectation_many, EnsemblePlan, RobustEstimate};
use crate::rng::CounterRng;
use crate::scalar::{from_usize, lit, to_f64, Scalar};
use crate::scenario::{generate_scenario, make_control, ControlStrategy, NoiseKind, ScenarioPath, TimeGrid, VolatilityBand};
use crate::solver::{checked, kernel, solve_separable, AdaptedProcess, CoefficientSet, ForcingProcess, Kernel, Method, Modulus, SolutionPath};
use crate::SCHEMA_VERSION;

/// Spatial diffusion `sigma(s, x)`.
pub type SpatialKernel<S> = Arc<dyn Fn(S, S) -> S + Send + Sync>;

pub fn spatial<S>(f: impl Fn(S, S) -> S + Send + Sync + 'static) -> SpatialKernel<S> {
    Arc::new(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    First,
    Second,
}

/// Pair of separable equations sharing `sigma` and `H`.
#[derive(Clone)]
pub struct SeparableSystem<S> {
    pub name: String,
    pub b1: Kernel<S>,
    pub b2: Kernel<S>,
    pub h1: Kernel<S>,
    pub h2: Kernel<S>,
    pub sigma: SpatialKernel<S>,
    /// `H(t, scenario)`, declared to lie in `[m, big_m]`.
    pub h_fun: AdaptedProcess<S>,
    pub phi1: ForcingProcess<S>,
    pub phi2: ForcingProcess<S>,
    pub m: S,
    pub big_m: S,
    pub lipschitz: S,
    pub rho: Modulus<S>,
}

impl<S: Scalar> SeparableSystem<S> {
    pub fn drift(&self, side: Side) -> (&Kernel<S>, &Kernel<S>) {
        match side {
            Side::First => (&self.b1, &self.h1),
            Side::Second => (&self.b2, &self.h2),
        }
    }

    pub fn phi(&self, side: Side) -> &ForcingProcess<S> {
        match side {
            Side::First => &self.phi1,
            Side::Second => &self.phi2,
        }
    }

    /// The system with the two sides exchanged.
    pub fn swapped(&self) -> Self {
        let mut s = self.clone();
        std::mem::swap(&mut s.b1, &mut s.b2);
        std::mem::swap(&mut s.h1, &mut s.h2);
        std::mem::swap(&mut s.phi1, &mut s.phi2);
        s.name = format!("{}(swapped)", self.name);
        s
    }

    /// General-form coefficients `(b_i, h_i, sigma(s, x))` of one side.
    ///
    /// This is the separable equation only when `H == 1`.
    pub fn as_coefficient_set(&self, side: Side) -> CoefficientSet<S> {
        let (b, h) = self.drift(side);
        let sigma = self.sigma.clone();
        CoefficientSet::new(
            format!("{}:{:?}", self.name, side),
            b.clone(),
            h.clone(),
            kernel(move |_t, s, x| sigma(s, x)),
            self.lipschitz,
            self.rho.clone(),
        )
    }
}

impl<S> std::fmt::Debug for SeparableSystem<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SeparableSystem").field("name", &self.name).finish_non_exhaustive()
    }
}

/// Both solutions on one scenario and the derived quantities
/// `Xbar_i = X_i / H`, `Xhat = Xbar_1 - Xbar_2`, `phihat = phi_1 - phi_2`.
#[derive(Debug, Clone)]
pub struct ComparisonState<S> {
    pub x1: SolutionPath<S>,
    pub x2: SolutionPath<S>,
    pub h: Vec<S>,
    pub inv_h: Vec<S>,
    pub xbar1: Vec<S>,
    pub xbar2: Vec<S>,
    pub xhat: Vec<S>,
    pub phihat: Vec<S>,
}

impl<S: Scalar> ComparisonState<S> {
    /// Solves both sides on `path` with the system's own forcing terms.
    pub fn solve(system: &SeparableSystem<S>, path: &ScenarioPath<S>) -> Result<Self> {
        let x1 = solve_separable(system, Side::First, &system.phi1, path)?;
        let x2 = solve_separable(system, Side::Second, &system.phi2, path)?;
        Self::from_solutions(system, path, x1, x2)
    }

    pub fn from_solutions(system: &SeparableSystem<S>, path: &ScenarioPath<S>, x1: SolutionPath<S>, x2: SolutionPath<S>) -> Result<Self> {
        let n = path.steps();
        if x1.values.len() != n + 1 || x2.values.len() != n + 1 {
            return Err(GsvieError::invalid("solutions do not match the scenario grid"));
        }
        let h = system.h_fun.sample(path);
        if let Some((i, v)) = h.iter().enumerate().find(|(_, v)| !(v.abs() > S::zero()) || !v.is_finite()) {
            return Err(GsvieError::invalid(format!("H vanishes or is not finite at step {i} ({v})")));
        }
        let inv_h: Vec<S> = h.iter().map(|v| v.recip()).collect();
        let xbar1: Vec<S> = x1.values.iter().zip(&inv_h).map(|(&x, &r)| x * r).collect();
        let xbar2: Vec<S> = x2.values.iter().zip(&inv_h).map(|(&x, &r)| x * r).collect();
        let xhat = xbar1.iter().zip(&xbar2).map(|(&a, &b)| a - b).collect();
        let phihat = system
            .phi1
            .sample(path)
            .into_iter()
            .zip(system.phi2.sample(path))
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            x1,
            x2,
            h,
            inv_h,
            xbar1,
            xbar2,
            xhat,
            phihat,
        })
    }
}

/// Packed lower-triangular matrix over grid pairs `j <= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tri<S> {
    rows: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tri<S> {
    pub fn from_fn(rows: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * (rows + 1) / 2);
        for i in 0..rows {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        Self { rows, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        debug_assert!(j <= i && i < self.rows);
        self.data[i * (i + 1) / 2 + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        let start = i * (i + 1) / 2;
        &self.data[start..start + i + 1]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn map(&self, f: impl Fn(usize, usize, S) -> S) -> Self {
        Self::from_fn(self.rows, |i, j| f(i, j, self.get(i, j)))
    }
}

/// `gamma_n(y)`: 1 on `|y| <= 1/n`, `2 - n|y|` on `1/n <= |y| <= 2/n`, 0 beyond.
pub fn gamma_n<S: Scalar>(y: S, n: usize) -> S {
    let ny = from_usize::<S>(n) * y.abs();
    if ny <= S::one() {
        S::one()
    } else if ny <= lit(2.0) {
        lit::<S>(2.0) - ny
    } else {
        S::zero()
    }
}

/// `(1 - gamma_n(y)) / y`, with value 0 on `|y| <= 1/n`; bounded by `n`.
pub fn truncated_reciprocal<S: Scalar>(y: S, n: usize) -> S {
    let ny = from_usize::<S>(n) * y.abs();
    if ny <= S::one() {
        S::zero()
    } else if ny <= lit(2.0) {
        (ny - S::one()) / y
    } else {
        y.recip()
    }
}

/// Coefficients of the linear system solved by [`solve_linear`].
#[derive(Debug, Clone)]
pub struct LinearCoefficients<S> {
    pub b: Tri<S>,
    pub h: Tri<S>,
    pub sigma: Vec<S>,
    pub b_hat: Tri<S>,
    pub h_hat: Tri<S>,
}

/// n-th quasilinearization: coefficients `b^n, h^n, sigma^n, bhat, hhat`,
/// residuals `a^n, c^n, d^n`, and optionally the solved `Xhat^n`.
#[derive(Debug, Clone)]
pub struct QuasiLinearizedRun<S> {
    pub n: usize,
    pub coefficients: LinearCoefficients<S>,
    pub a_n: Tri<S>,
    pub c_n: Tri<S>,
    pub d_n: Vec<S>,
    pub xhat_n: Option<SolutionPath<S>>,
}

/// Kernel differences along a solved pair; independent of `n`, so one base
/// serves a whole `n`-sweep.
///
/// `X_1`, `X_2` are used directly for `Xbar_1 H`, `Xbar_2 H`.
#[derive(Debug, Clone)]
pub struct LinearizationBase<S> {
    pub xhat: Vec<S>,
    /// `b_2(t_i,t_j,X_1(t_j)) - b_2(t_i,t_j,X_2(t_j))`.
    pub diff_b: Tri<S>,
    pub diff_h: Tri<S>,
    /// `sigma(t_j,X_1(t_j)) - sigma(t_j,X_2(t_j))`.
    pub diff_sigma: Vec<S>,
    /// `b_1(t_i,t_j,X_1(t_j)) - b_2(t_i,t_j,X_1(t_j))`.
    pub b_hat: Tri<S>,
    pub h_hat: Tri<S>,
}

impl<S: Scalar> LinearizationBase<S> {
    pub fn new(system: &SeparableSystem<S>, state: &ComparisonState<S>, path: &ScenarioPath<S>) -> Self {
        let t = path.grid.nodes();
        let rows = t.len();
        let x1 = &state.x1.values;
        let x2 = &state.x2.values;
        let diff = |k: &Kernel<S>| Tri::from_fn(rows, |i, j| k(t[i], t[j], x1[j]) - k(t[i], t[j], x2[j]));
        let hat = |k1: &Kernel<S>, k2: &Kernel<S>| Tri::from_fn(rows, |i, j| k1(t[i], t[j], x1[j]) - k2(t[i], t[j], x1[j]));
        Self {
            xhat: state.xhat.clone(),
            diff_b: diff(&system.b2),
            diff_h: diff(&system.h2),
            diff_sigma: (0..rows).map(|j| (system.sigma)(t[j], x1[j]) - (system.sigma)(t[j], x2[j])).collect(),
            b_hat: hat(&system.b1, &system.b2),
            h_hat: hat(&system.h1, &system.h2),
        }
    }

    /// Coefficients and residuals for truncation index `n`.
    pub fn at(&self, n: usize) -> Result<QuasiLinearizedRun<S>> {
        if n < 1 {
            return Err(GsvieError::invalid("truncation index n must be at least 1"));
        }
        let recip: Vec<S> = self.xhat.iter().map(|&y| truncated_reciprocal(y, n)).collect();
        let gamma: Vec<S> = self.xhat.iter().map(|&y| gamma_n(y, n)).collect();
        Ok(QuasiLinearizedRun {
            n,
            coefficients: LinearCoefficients {
                b: self.diff_b.map(|_, j, d| recip[j] * d),
                h: self.diff_h.map(|_, j, d| recip[j] * d),
                sigma: self.diff_sigma.iter().zip(&recip).map(|(&d, &r)| r * d).collect(),
                b_hat: self.b_hat.clone(),
                h_hat: self.h_hat.clone(),
            },
            a_n: self.diff_b.map(|_, j, d| gamma[j] * d),
            c_n: self.diff_h.map(|_, j, d| gamma[j] * d),
            d_n: self.diff_sigma.iter().zip(&gamma).map(|(&d, &g)| g * d).collect(),
            xhat_n: None,
        })
    }
}

/// Quasilinearization of `state` at truncation index `n`.
pub fn quasilinearize<S: Scalar>(
    system: &SeparableSystem<S>,
    state: &ComparisonState<S>,
    path: &ScenarioPath<S>,
    n: usize,
) -> Result<QuasiLinearizedRun<S>> {
    LinearizationBase::new(system, state, path).at(n)
}

/// Explicit recursion of the linear system
/// `Y_i = (phihat_i + sum_{j<i} (b_ij Y_j + bhat_ij) dt_j + sum_{j<i} (h_ij Y_j + hhat_ij) dQV_j) / H_i + sum_{j<i} sigma_j Y_j dB_j`.
pub fn solve_linear<S: Scalar>(
    c: &LinearCoefficients<S>,
    phihat: &[S],
    inv_h: &[S],
    path: &ScenarioPath<S>,
    method: Method,
) -> Result<SolutionPath<S>> {
    let n = path.steps();
    if c.b.rows() != n + 1 || phihat.len() != n + 1 || inv_h.len() != n + 1 || c.sigma.len() != n + 1 {
        return Err(GsvieError::invalid("linear system does not match the scenario grid"));
    }
    let dt = path.grid.dt();
    let mut y: Vec<S> = Vec::with_capacity(n + 1);
    let mut stoch = S::zero();
    for i in 0..=n {
        if i > 0 {
            stoch += c.sigma[i - 1] * y[i - 1] * path.db[i - 1];
        }
        let (b, bh, h, hh) = (c.b.row(i), c.b_hat.row(i), c.h.row(i), c.h_hat.row(i));
        let (mut drift, mut qv) = (S::zero(), S::zero());
        for j in 0..i {
            drift += (b[j] * y[j] + bh[j]) * dt[j];
            qv += (h[j] * y[j] + hh[j]) * path.dqv[j];
        }
        y.push(checked((phihat[i] + drift + qv) * inv_h[i] + stoch, path.scenario, i)?);
    }
    Ok(SolutionPath {
        values: y,
        scenario: path.scenario,
        method,
    })
}

/// Solves for `Xhat^n` and stores it in the run.
pub fn solve_quasilinearized<S: Scalar>(state: &ComparisonState<S>, run: &mut QuasiLinearizedRun<S>, path: &ScenarioPath<S>) -> Result<SolutionPath<S>> {
    let sol = solve_linear(&run.coefficients, &state.phihat, &state.inv_h, path, Method::QuasiLinearized)?;
    run.xhat_n = Some(sol.clone());
    Ok(sol)
}

/// Which processes may trigger a stopping time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeMode {
    /// Jumps of `1/H` or `phihat`.
    #[default]
    WithPhi,
    /// Jumps of `1/H` only.
    HOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Trigger {
    #[serde(rename = "H_jump")]
    HJump,
    #[serde(rename = "phi_jump")]
    PhiJump,
    #[serde(rename = "delta_cap")]
    DeltaCap,
    #[serde(rename = "horizon")]
    Horizon,
}

/// Grid-snapped stopping times `0 = tau_0 < tau_1 < ... < tau_K = T`.
///
/// `triggered_by[k]` is the reason for `tau_{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingGrid<S> {
    pub delta: S,
    pub taus: Vec<S>,
    pub indices: Vec<usize>,
    pub triggered_by: Vec<Trigger>,
}

impl<S: Scalar> StoppingGrid<S> {
    /// Index of the last stopping node `<= i`, for every node.
    pub fn anchors(&self, steps: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(steps + 1);
        let mut k = 0;
        for i in 0..=steps {
            while k + 1 < self.indices.len() && self.indices[k + 1] <= i {
                k += 1;
            }
            out.push(self.indices[k]);
        }
        out
    }
}

/// Builds the stopping grid: `tau_k` is the first node after `tau_{k-1}`
/// where `|1/H - 1/H(tau_{k-1})| >= delta` (or the same for `phihat` in
/// [`FreezeMode::WithPhi`]), capped at the first node at or after
/// `tau_{k-1} + delta`, and at `T`. A trigger on the cap node wins.
pub fn build_stopping_grid<S: Scalar>(
    delta: S,
    grid: &TimeGrid<S>,
    inv_h: &[S],
    phihat: &[S],
    mode: FreezeMode,
) -> Result<StoppingGrid<S>> {
    let n = grid.steps();
    if !(delta > S::zero()) {
        return Err(GsvieError::invalid(format!("delta must be positive, got {delta}")));
    }
    if inv_h.len() != n + 1 || phihat.len() != n + 1 {
        return Err(GsvieError::invalid("stopping-grid inputs do not match the grid"));
    }
    let t = grid.nodes();
    let eps = lit::<S>(1e-9) * grid.min_step();
    let mut indices = vec![0usize];
    let mut taus = vec![t[0]];
    let mut reasons = Vec::new();
    let mut prev = 0;
    while prev < n {
        let cap_time = t[prev] + delta;
        let cap = (prev + 1..=n).find(|&k| t[k] >= cap_time - eps);
        let limit = cap.unwrap_or(n);
        let mut chosen = None;
        for k in prev + 1..=limit {
            if (inv_h[k] - inv_h[prev]).abs() >= delta {
                chosen = Some((k, Trigger::HJump));
                break;
            }
            if mode == FreezeMode::WithPhi && (phihat[k] - phihat[prev]).abs() >= delta {
                chosen = Some((k, Trigger::PhiJump));
                break;
            }
        }
        let (k, why) = chosen.unwrap_or(match cap {
            Some(k) => (k, Trigger::DeltaCap),
            None => (n, Trigger::Horizon),
        });
        indices.push(k);
        taus.push(t[k]);
        reasons.push(why);
        prev = k;
    }
    Ok(StoppingGrid {
        delta,
        taus,
        indices,
        triggered_by: reasons,
    })
}

/// Linear system with every `t`-dependence frozen on a stopping grid.
#[derive(Debug, Clone)]
pub struct FrozenSystem<S> {
    pub anchors: Vec<usize>,
    /// `phihat(tau_k)` on `[tau_k, tau_{k+1})`.
    pub phihat: Vec<S>,
    /// `1/H(tau_k)` on `[tau_k, tau_{k+1})`.
    pub inv_h: Vec<S>,
    /// Kernels evaluated at `(tau_k v s, s)`; `sigma^n` is not frozen.
    pub coefficients: LinearCoefficients<S>,
}

/// Freezes `phihat`, `1/H` and the kernel matrices on the stopping grid.
pub fn freeze_on_stopping_grid<S: Scalar>(sg: &StoppingGrid<S>, phihat: &[S], inv_h: &[S], c: &LinearCoefficients<S>) -> FrozenSystem<S> {
    let steps = phihat.len() - 1;
    let anchors = sg.anchors(steps);
    let freeze = |m: &Tri<S>| Tri::from_fn(m.rows(), |i, j| m.get(anchors[i].max(j), j));
    FrozenSystem {
        phihat: anchors.iter().map(|&a| phihat[a]).collect(),
        inv_h: anchors.iter().map(|&a| inv_h[a]).collect(),
        coefficients: LinearCoefficients {
            b: freeze(&c.b),
            h: freeze(&c.h),
            sigma: c.sigma.clone(),
            b_hat: freeze(&c.b_hat),
            h_hat: freeze(&c.h_hat),
        },
        anchors,
    }
}

/// Solves the frozen system.
pub fn solve_frozen<S: Scalar>(frozen: &FrozenSystem<S>, path: &ScenarioPath<S>) -> Result<SolutionPath<S>> {
    solve_linear(&frozen.coefficients, &frozen.phihat, &frozen.inv_h, path, Method::Frozen)
}

/// `max_i |a_i - b_i|^2`.
pub fn sup_sq_gap<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |m, (&x, &y)| m.max((x - y) * (x - y)))
}

/// One row of a convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow<S> {
    pub n: usize,
    pub delta: Option<S>,
    pub estimate: RobustEstimate<S>,
}

/// Estimates of `E^[sup_t |Xhat - approximation|^2]` and, for the `n`-only
/// rows, the least-squares slope of `ln(estimate)` against `ln(n)`.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable<S> {
    pub system: String,
    pub rows: Vec<ConvergenceRow<S>>,
    pub slope: Option<S>,
}

pub const CONVERGENCE_CSV_HEADER: &str = "n,delta,control,estimate,se";

impl<S: Scalar> ConvergenceTable<S> {
    /// Long CSV: one row per control plus a `sup` row per table entry.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CONVERGENCE_CSV_HEADER}\n");
        for row in &self.rows {
            let delta = row.delta.map_or(String::new(), |d| format!("{:.16e}", d));
            for c in &row.estimate.per_control {
                out.push_str(&format!("{},{},{},{:.16e},{:.16e}\n", row.n, delta, c.label, c.mean, c.se));
            }
            out.push_str(&format!("{},{},sup,{:.16e},{:.16e}\n", row.n, delta, row.estimate.value, row.estimate.se()));
        }
        out
    }

    pub fn row(&self, n: usize, delta: Option<S>) -> Option<&ConvergenceRow<S>> {
        self.rows.iter().find(|r| r.n == n && r.delta == delta)
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "system": self.system,
            "slope": self.slope.map(to_f64),
            "rows": self.rows.iter().map(|r| json!({
                "n": r.n,
                "delta": r.delta.map(to_f64),
                "estimate": r.estimate.to_json(),
            })).collect::<Vec<_>>(),
        })
    }
}

/// Least-squares slope of `ln y` against `ln x` over positive `y`.
pub fn log_log_slope<S: Scalar>(xs: &[usize], ys: &[S]) -> Option<S> {
    let pts: Vec<(S, S)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > S::zero())
        .map(|(&x, &y)| (from_usize::<S>(x).ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = from_usize::<S>(pts.len());
    let mx = pts.iter().fold(S::zero(), |a, p| a + p.0) / k;
    let my = pts.iter().fold(S::zero(), |a, p| a + p.1) / k;
    let sxy = pts.iter().fold(S::zero(), |a, p| a + (p.0 - mx) * (p.1 - my));
    let sxx = pts.iter().fold(S::zero(), |a, p| a + (p.0 - mx) * (p.0 - mx));
    (sxx > S::zero()).then(|| sxy / sxx)
}

/// True when each entry is at most the previous one plus the larger of the
/// two standard errors.
pub fn nonincreasing_within_se<S: Scalar>(values: &[(S, S)]) -> bool {
    values.windows(2).all(|w| w[1].0 <= w[0].0 + w[0].1.max(w[1].1))
}

/// Per-scenario sup-errors of `Xhat^n` (for each `n`) and of the frozen
/// `Xhat^{n,delta}` (for each `(delta, n)`), against `Xhat`.
fn scenario_errors<S: Scalar>(
    system: &SeparableSystem<S>,
    path: &ScenarioPath<S>,
    ns: &[usize],
    deltas: &[S],
    mode: FreezeMode,
) -> Result<Vec<S>> {
    let state = ComparisonState::solve(system, path)?;
    let base = LinearizationBase::new(system, &state, path);
    let mut out = Vec::with_capacity(ns.len() * (1 + deltas.len()));
    let mut runs = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut run = base.at(n)?;
        let sol = solve_quasilinearized(&state, &mut run, path)?;
        out.push(sup_sq_gap(&sol.values, &state.xhat));
        runs.push(run);
    }
    for &delta in deltas {
        let sg = build_stopping_grid(delta, &path.grid, &state.inv_h, &state.phihat, mode)?;
        for run in &runs {
            let frozen = freeze_on_stopping_grid(&sg, &state.phihat, &state.inv_h, &run.coefficients);
            let sol = solve_frozen(&frozen, path)?;
            out.push(sup_sq_gap(&sol.values, &state.xhat));
        }
    }
    Ok(out)
}

fn study<S: Scalar>(
    system: &SeparableSystem<S>,
    plan: &EnsemblePlan<S>,
    ns: &[usize],
    deltas: &[S],
    mode: FreezeMode,
    include_n_rows: bool,
) -> Result<ConvergenceTable<S>> {
    if ns.is_empty() {
        return Err(GsvieError::invalid("the n-sweep must be nonempty"));
    }
    let mut keys: Vec<(usize, Option<S>)> = ns.iter().map(|&n| (n, None)).collect();
    for &d in deltas {
        keys.extend(ns.iter().map(|&n| (n, Some(d))));
    }
    let names: Vec<String> = keys
        .iter()
        .map(|(n, d)| match d {
            None => format!("sup_t|Xhat-Xhat^{n}|^2"),
            Some(d) => format!("sup_t|Xhat-Xhat^{{{n},{d}}}|^2"),
        })
        .collect();
    let estimates = estimate_upper_expectation_many(&names, plan, |p| scenario_errors(system, p, ns, deltas, mode))?;
    let rows: Vec<ConvergenceRow<S>> = keys
        .into_iter()
        .zip(estimates)
        .filter(|((_, d), _)| include_n_rows || d.is_some())
        .map(|((n, delta), estimate)| ConvergenceRow { n, delta, estimate })
        .collect();
    let n_rows: Vec<&ConvergenceRow<S>> = rows.iter().filter(|r| r.delta.is_none()).collect();
    let slope = log_log_slope(
        &n_rows.iter().map(|r| r.n).collect::<Vec<_>>(),
        &n_rows.iter().map(|r| r.estimate.value).collect::<Vec<_>>(),
    );
    Ok(ConvergenceTable {
        system: system.name.clone(),
        rows,
        slope,
    })
}

/// `E^[sup_t |Xhat - Xhat^n|^2]` for every `n`, with a log-log slope.
pub fn convergence_study_n<S: Scalar>(system: &SeparableSystem<S>, plan: &EnsemblePlan<S>, ns: &[usize]) -> Result<ConvergenceTable<S>> {
    study(system, plan, ns, &[], FreezeMode::WithPhi, true)
}

/// `E^[sup_t |Xhat - Xhat^{n,delta}|^2]` over the `(delta, n)` grid.
pub fn two_step_study<S: Scalar>(
    system: &SeparableSystem<S>,
    plan: &EnsemblePlan<S>,
    ns: &[usize],
    deltas: &[S],
    mode: FreezeMode,
) -> Result<ConvergenceTable<S>> {
    if deltas.is_empty() {
        return Err(GsvieError::invalid("the delta-sweep must be nonempty"));
    }
    study(system, plan, ns, deltas, mode, false)
}

/// Outcome of one sampled assumption check.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AssumptionStatus {
    VerifiedOnSamples,
    Violated { witness: Witness },
    NotApplicable { reason: String },
}

/// Concrete counterexample: the inequality `lhs >= rhs` failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t_prime: f64,
    pub t: f64,
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub scenario: Option<u64>,
    pub lhs: f64,
    pub rhs: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionEntry {
    pub name: String,
    pub description: String,
    #[serde(flatten)]
    pub status: AssumptionStatus,
    pub samples: usize,
}

impl AssumptionEntry {
    pub fn is_violated(&self) -> bool {
        matches!(self.status, AssumptionStatus::Violated { .. })
    }

    pub fn witness(&self) -> Option<&Witness> {
        match &self.status {
            AssumptionStatus::Violated { witness } => Some(witness),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub system: String,
    pub entries: Vec<AssumptionEntry>,
}

impl AssumptionReport {
    pub fn get(&self, name: &str) -> Option<&AssumptionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Violations of the assumptions the comparison theorem relies on
    /// (everything except the informational classical condition).
    pub fn blocking_violations(&self) -> Vec<&AssumptionEntry> {
        self.entries.iter().filter(|e| e.is_violated() && e.name != CLASSICAL).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "system": self.system,
            "entries": self.entries,
        })
    }
}

/// Name of the pointwise condition `b_1(t,s,y) >= b_2(t,s,x)`, `y >= x`.
pub const CLASSICAL: &str = "classical";

/// Hand-picked tuple checked before random sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub t_prime: f64,
    pub t: f64,
    pub s: f64,
    pub x: f64,
    pub y: f64,
}

/// Sampling ranges for [`check_assumptions`]. Times are drawn from the
/// nodes of `grid`, states uniformly from `x_range`; `H` and `phi` are
/// evaluated on `scenarios` paths per control of `{lo, hi, random}`.
#[derive(Debug, Clone)]
pub struct SamplingPlan<S> {
    pub grid: TimeGrid<S>,
    pub band: VolatilityBand<S>,
    pub samples: usize,
    pub x_range: (f64, f64),
    pub scenarios: usize,
    pub seed: u64,
    pub probes: Vec<Probe>,
}

impl<S: Scalar> SamplingPlan<S> {
    pub fn new(grid: TimeGrid<S>, band: VolatilityBand<S>, seed: u64) -> Self {
        Self {
            grid,
            band,
            samples: 10_000,
            x_range: (-5.0, 5.0),
            scenarios: 8,
            seed,
            probes: Vec::new(),
        }
    }

    fn paths(&self) -> Result<Vec<ScenarioPath<S>>> {
        let mut out = Vec::new();
        for (ci, strategy) in [ControlStrategy::ConstantLo, ControlStrategy::ConstantHi, ControlStrategy::UniformRandom]
            .iter()
            .enumerate()
        {
            let control = make_control(&self.grid, &self.band, strategy, self.seed ^ ci as u64)?;
            for s in 0..self.scenarios.max(1) {
                out.push(generate_scenario(&self.grid, &control, NoiseKind::Gaussian, self.seed, (ci * self.scenarios + s) as u64)?);
            }
        }
        Ok(out)
    }
}

/// Sampled tuple: grid indices `s <= t <= t'`, states `x <= y`, scenario.
#[derive(Clone, Copy)]
struct Sample<S> {
    ip: usize,
    it: usize,
    tp: S,
    t: S,
    s: S,
    x: S,
    y: S,
    path: usize,
}

/// Accumulates the first failure of `lhs >= rhs` (relative slack 1e-10).
struct Check<'a> {
    name: &'static str,
    description: &'static str,
    samples: usize,
    witness: Option<Witness>,
    paths: &'a [u64],
}

impl<'a> Check<'a> {
    fn new(name: &'static str, description: &'static str, paths: &'a [u64]) -> Self {
        Self {
            name,
            description,
            samples: 0,
            witness: None,
            paths,
        }
    }

    fn test<S: Scalar>(&mut self, smp: &Sample<S>, with_path: bool, lhs: S, rhs: S, detail: &str) {
        self.samples += 1;
        let slack = lit::<S>(1e-10) * (S::one() + lhs.abs() + rhs.abs());
        let ok = lhs.is_finite() && rhs.is_finite() && lhs + slack >= rhs;
        if !ok && self.witness.is_none() {
            self.witness = Some(Witness {
                t_prime: to_f64(smp.tp),
                t: to_f64(smp.t),
                s: to_f64(smp.s),
                x: to_f64(smp.x),
                y: to_f64(smp.y),
                scenario: with_path.then(|| self.paths[smp.path]),
                lhs: to_f64(lhs) + 0.0,
                rhs: to_f64(rhs) + 0.0,
                detail: detail.to_string(),
            });
        }
    }

    fn entry(self) -> AssumptionEntry {
        AssumptionEntry {
            name: self.name.to_string(),
            description: self.description.to_string(),
            status: match self.witness {
                Some(witness) => AssumptionStatus::Violated { witness },
                None => AssumptionStatus::VerifiedOnSamples,
            },
            samples: self.samples,
        }
    }
}

fn draw_samples<S: Scalar>(plan: &SamplingPlan<S>, paths: usize) -> Vec<Sample<S>> {
    let grid = &plan.grid;
    let n = grid.steps();
    let nearest = |t: f64| -> usize {
        let nodes = grid.nodes();
        (0..=n)
            .min_by(|&a, &b| {
                let da = (to_f64(nodes[a]) - t).abs();
                let db = (to_f64(nodes[b]) - t).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap()
    };
    let mut out = Vec::with_capacity(plan.samples + plan.probes.len());
    for p in &plan.probes {
        let (ip, it, is) = (nearest(p.t_prime), nearest(p.t), nearest(p.s));
        out.push(Sample {
            ip,
            it,
            tp: grid.node(ip),
            t: grid.node(it),
            s: grid.node(is),
            x: lit(p.x),
            y: lit(p.y),
            path: 0,
        });
    }
    let mut cur = CounterRng::new(plan.seed).domain(0xa55e).stream(0).cursor(0);
    let (lo, hi) = plan.x_range;
    for _ in 0..plan.samples {
        let mut idx = [cur.index(n + 1), cur.index(n + 1), cur.index(n + 1)];
        idx.sort_unstable();
        let (a, b) = (cur.uniform_in(lo, hi), cur.uniform_in(lo, hi));
        out.push(Sample {
            it: idx[1],
            ip: idx[2],
            s: grid.node(idx[0]),
            t: grid.node(idx[1]),
            tp: grid.node(idx[2]),
            x: lit(a.min(b)),
            y: lit(a.max(b)),
            path: cur.index(paths),
        });
    }
    out
}

/// Lipschitz and growth bounds plus the `t`-modulus for one coefficient
/// triple; `sigma` receives `(t, s, x)`.
fn lipschitz_checks<S: Scalar>(
    checks: (&mut Check<'_>, &mut Check<'_>),
    smp: &Sample<S>,
    b: &Kernel<S>,
    h: &Kernel<S>,
    sigma: &dyn Fn(S, S, S) -> S,
    l: S,
    rho: &Modulus<S>,
    label: &str,
) {
    let (h2, h3) = checks;
    let (t, s, x, y) = (smp.t, smp.s, smp.x, smp.y);
    let lip = (b(t, s, x) - b(t, s, y)).abs() + (h(t, s, x) - h(t, s, y)).abs() + (sigma(t, s, x) - sigma(t, s, y)).abs();
    h2.test(smp, false, l * (y - x).abs(), lip, &format!("{label}: Lipschitz in x"));
    let g = b(t, s, x).powi(2) + h(t, s, x).powi(2) + sigma(t, s, x).powi(2);
    h2.test(smp, false, l * l * (S::one() + x * x), g, &format!("{label}: linear growth"));
    let tp = smp.tp;
    let inc = (b(tp, s, x) - b(t, s, x)).abs() + (h(tp, s, x) - h(t, s, x)).abs() + (sigma(tp, s, x) - sigma(t, s, x)).abs();
    h3.test(smp, false, rho.eval(tp - t), inc, &format!("{label}: modulus in t"));
}

/// Checks Lipschitz/growth, the `t`-modulus and the optional Hölder bound
/// of `sigma` for a general coefficient set.
pub fn check_coefficient_assumptions<S: Scalar>(c: &CoefficientSet<S>, plan: &SamplingPlan<S>) -> Result<AssumptionReport> {
    let samples = draw_samples(plan, 1);
    let ids = [0u64];
    let mut h2 = Check::new("H2", "Lipschitz and linear growth with constant L", &ids);
    let mut h3 = Check::new("H3", "modulus of continuity rho in t", &ids);
    let mut h4 = Check::new("H4", "Hölder continuity of sigma in t", &ids);
    let sigma = |t, s, x| (c.sigma)(t, s, x);
    for smp in &samples {
        lipschitz_checks((&mut h2, &mut h3), smp, &c.b, &c.h, &sigma, c.lipschitz, &c.rho, &c.name);
        if let Some(hc) = c.holder {
            let inc = ((c.sigma)(smp.tp, smp.s, smp.x) - (c.sigma)(smp.t, smp.s, smp.x)).abs();
            h4.test(smp, false, hc.c_t * (smp.tp - smp.t).powf(hc.alpha), inc, "sigma: Hölder in t");
        }
    }
    let h4 = if c.holder.is_some() {
        h4.entry()
    } else {
        AssumptionEntry {
            name: "H4".into(),
            description: "Hölder continuity of sigma in t".into(),
            status: AssumptionStatus::NotApplicable {
                reason: "no Hölder constants declared".into(),
            },
            samples: 0,
        }
    };
    Ok(AssumptionReport {
        system: c.name.clone(),
        entries: vec![h2.entry(), h3.entry(), h4],
    })
}

/// Sampled checks of Lipschitz/growth, the `t`-modulus, the bounds on `H`,
/// the monotonicity conditions on the drift gap, the kernel increments and
/// the forcing gap, and the classical pointwise condition
/// `b_1(t,s,y) >= b_2(t,s,x)` for `y >= x` (informational).
///
/// Sampling can refute but never prove: a passing entry is reported as
/// `verified_on_samples`.
pub fn check_assumptions<S: Scalar>(system: &SeparableSystem<S>, plan: &SamplingPlan<S>) -> Result<AssumptionReport> {
    let paths = plan.paths()?;
    let ids: Vec<u64> = paths.iter().map(|p| p.scenario).collect();
    let h_paths: Vec<Vec<S>> = paths.iter().map(|p| system.h_fun.sample(p)).collect();
    let phihat: Vec<Vec<S>> = paths
        .iter()
        .map(|p| (0..=p.steps()).map(|i| system.phi1.eval(i, p) - system.phi2.eval(i, p)).collect())
        .collect();
    let samples = draw_samples(plan, paths.len());

    let mut h2 = Check::new("H2", "Lipschitz and linear growth with constant L", &ids);
    let mut h3 = Check::new("H3", "modulus of continuity rho in t", &ids);
    let mut a1 = Check::new("A1", "m <= H(t) <= M", &ids);
    let mut a2 = Check::new("A2", "(l_1 - l_2)/H nondecreasing in t and nonnegative, l = b, h", &ids);
    let mut a3 = [
        Check::new("A3", "(l_i(.,y) - l_i(.,x))/H nondecreasing in t for y >= x, l = b, h", &ids),
        Check::new("A3", "(l_i(.,y) - l_i(.,x))/H nondecreasing in t for y >= x, l = b, h", &ids),
    ];
    let mut a4 = Check::new("A4", "(phi_1 - phi_2)/H nondecreasing in t and nonnegative", &ids);
    let mut classical = Check::new(CLASSICAL, "b_1(t,s,y) >= b_2(t,s,x) and h_1(t,s,y) >= h_2(t,s,x) for y >= x", &ids);

    // bounds on H at every node of every sampled path
    for (pi, hp) in h_paths.iter().enumerate() {
        for (i, &hv) in hp.iter().enumerate() {
            let smp = Sample {
                ip: i,
                it: i,
                tp: plan.grid.node(i),
                t: plan.grid.node(i),
                s: plan.grid.node(i),
                x: hv,
                y: hv,
                path: pi,
            };
            a1.test(&smp, true, hv, system.m, "H >= m");
            a1.test(&smp, true, system.big_m, hv, "H <= M");
            a1.test(&smp, true, hv, S::zero(), "H > 0");
        }
    }

    let sigma = |_t: S, s: S, x: S| (system.sigma)(s, x);
    for smp in &samples {
        for (side, (b, h)) in [(Side::First, system.drift(Side::First)), (Side::Second, system.drift(Side::Second))] {
            let label = format!("{side:?}");
            lipschitz_checks((&mut h2, &mut h3), smp, b, h, &sigma, system.lipschitz, &system.rho, &label);
        }
        let hp = &h_paths[smp.path];
        let (hp_t, hp_tp) = (hp[smp.it], hp[smp.ip]);
        let (tp, t, s, x, y) = (smp.tp, smp.t, smp.s, smp.x, smp.y);

        for (k1, k2, name) in [(&system.b1, &system.b2, "b"), (&system.h1, &system.h2, "h")] {
            let late = (k1(tp, s, x) - k2(tp, s, x)) / hp_tp;
            let early = (k1(t, s, x) - k2(t, s, x)) / hp_t;
            a2.test(smp, true, late, early, &format!("{name}: gap/H nondecreasing"));
            a2.test(smp, true, early, S::zero(), &format!("{name}: gap nonnegative"));
        }
        for (i, (b, h)) in [system.drift(Side::First), system.drift(Side::Second)].into_iter().enumerate() {
            for (k, name) in [(b, "b"), (h, "h")] {
                let late = (k(tp, s, y) - k(tp, s, x)) / hp_tp;
                let early = (k(t, s, y) - k(t, s, x)) / hp_t;
                a3[i].test(smp, true, late, early, &format!("{name}_{}: increment/H nondecreasing", i + 1));
            }
        }
        let ph = &phihat[smp.path];
        a4.test(smp, true, ph[smp.ip] / hp_tp, ph[smp.it] / hp_t, "phihat/H nondecreasing");
        a4.test(smp, true, ph[smp.it] / hp_t, S::zero(), "phihat nonnegative");

        classical.test(smp, false, (system.b1)(t, s, y), (system.b2)(t, s, x), "b_1(t,s,y) >= b_2(t,s,x)");
        classical.test(smp, false, (system.h1)(t, s, y), (system.h2)(t, s, x), "h_1(t,s,y) >= h_2(t,s,x)");
    }

    let [a3_first, a3_second] = a3;
    let a3 = if a3_first.witness.is_none() {
        a3_first.entry()
    } else if a3_second.witness.is_none() {
        a3_second.entry()
    } else {
        a3_first.entry()
    };
    Ok(AssumptionReport {
        system: system.name.clone(),
        entries: vec![h2.entry(), h3.entry(), a1.entry(), a2.entry(), a3, a4.entry(), classical.entry()],
    })
}

/// Worst node of a comparison sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonWitness<S> {
    pub control: String,
    pub scenario: u64,
    pub step: usize,
    pub t: S,
    pub difference: S,
}

/// Pathwise minimum of `X_1 - X_2` over a scenario sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport<S> {
    pub system: String,
    pub min_difference: S,
    pub tolerance: S,
    /// Nodes with `X_1 - X_2 < -tolerance`.
    pub violations: usize,
    pub nodes_checked: usize,
    pub worst: ComparisonWitness<S>,
    /// Earliest node (in time) below `-tolerance`.
    pub first_violation: Option<ComparisonWitness<S>>,
    pub per_control_min: Vec<(String, S)>,
}

impl<S: Scalar> ComparisonReport<S> {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "system": self.system,
            "min_difference": to_f64(self.min_difference),
            "tolerance": to_f64(self.tolerance),
            "violations": self.violations,
            "nodes_checked": self.nodes_checked,
            "worst": {
                "control": self.worst.control,
                "scenario": self.worst.scenario,
                "step": self.worst.step,
                "t": to_f64(self.worst.t),
                "difference": to_f64(self.worst.difference),
            },
            "first_violation": self.first_violation.as_ref().map(|w| json!({
                "control": w.control,
                "scenario": w.scenario,
                "step": w.step,
                "t": to_f64(w.t),
                "difference": to_f64(w.difference),
            })),
            "per_control_min": self.per_control_min.iter().map(|(l, v)| json!({"control": l, "min": to_f64(*v)})).collect::<Vec<_>>(),
        })
    }
}

/// `X_1 - X_2` at every node, both solved on the same scenario.
pub fn comparison_difference<S: Scalar>(system: &SeparableSystem<S>, path: &ScenarioPath<S>) -> Result<Vec<S>> {
    let x1 = solve_separable(system, Side::First, &system.phi1, path)?;
    let x2 = solve_separable(system, Side::Second, &system.phi2, path)?;
    Ok(x1.values.iter().zip(&x2.values).map(|(&a, &b)| a - b).collect())
}

/// Solves both sides on every scenario of `plan` and reports the minimum
/// of `X_1 - X_2`; nodes below `-tolerance` count as violations.
pub fn comparison_harness<S: Scalar>(system: &SeparableSystem<S>, plan: &EnsemblePlan<S>, tolerance: S) -> Result<ComparisonReport<S>> {
    use rayon::prelude::*;
    let grid = &plan.grid;
    let mut worst: Option<ComparisonWitness<S>> = None;
    let mut first: Option<ComparisonWitness<S>> = None;
    let mut violations = 0;
    let mut nodes_checked = 0;
    let mut per_control_min = Vec::new();
    for (ci, control) in plan.controls.iter().enumerate() {
        let diffs: Vec<Result<Vec<S>>> = (0..plan.scenarios_per_control as u64)
            .into_par_iter()
            .map(|s| comparison_difference(system, &plan.scenario(ci, s)?))
            .collect();
        let mut cmin = S::infinity();
        for (s, d) in diffs.into_iter().enumerate() {
            for (i, &v) in d?.iter().enumerate() {
                nodes_checked += 1;
                if v < -tolerance {
                    violations += 1;
                    if first.as_ref().map_or(true, |w| i < w.step) {
                        first = Some(ComparisonWitness {
                            control: control.label().to_string(),
                            scenario: s as u64,
                            step: i,
                            t: grid.node(i),
                            difference: v,
                        });
                    }
                }
                cmin = cmin.min(v);
                if worst.as_ref().map_or(true, |w| v < w.difference) {
                    worst = Some(ComparisonWitness {
                        control: control.label().to_string(),
                        scenario: s as u64,
                        step: i,
                        t: grid.node(i),
                        difference: v,
                    });
                }
            }
        }
        per_control_min.push((control.label().to_string(), cmin));
    }
    let worst = worst.ok_or_else(|| GsvieError::invalid("empty comparison sweep"))?;
    Ok(ComparisonReport {
        system: system.name.clone(),
        min_difference: worst.difference,
        tolerance,
        violations,
        nodes_checked,
        worst,
        first_violation: first,
        per_control_min,
    })
}
