//! Discrete G-Brownian motion scenarios.
//!
//! A scenario is one joint path of `B` and its quadratic variation `<B>` on a
//! time grid, produced under an explicit piecewise-constant volatility
//! control. The quadratic-variation increment of step `k` is set to
//! `sigma_k^2 * dt_k` exactly, so the bound
//! `sigma_lo^2 dt <= d<B> <= sigma_hi^2 dt` holds by construction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{GsvieError, Result};
use crate::rng::CounterRng;
use crate::scalar::{from_usize, lit, Scalar};

/// Volatility uncertainty interval `[sigma_lo, sigma_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolatilityBand<S> {
    sigma_lo: S,
    sigma_hi: S,
}

impl<S: Scalar> VolatilityBand<S> {
    pub fn new(sigma_lo: S, sigma_hi: S) -> Result<Self> {
        if !(sigma_lo > S::zero()) || !(sigma_lo <= sigma_hi) || !sigma_hi.is_finite() {
            return Err(GsvieError::invalid(format!(
                "volatility band requires 0 < sigma_lo <= sigma_hi < inf, got [{sigma_lo}, {sigma_hi}]"
            )));
        }
        Ok(Self { sigma_lo, sigma_hi })
    }

    /// Band with `sigma_lo == sigma_hi`: the classical single-measure case.
    pub fn degenerate(sigma: S) -> Result<Self> {
        Self::new(sigma, sigma)
    }

    pub fn sigma_lo(&self) -> S {
        self.sigma_lo
    }

    pub fn sigma_hi(&self) -> S {
        self.sigma_hi
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma_lo == self.sigma_hi
    }

    pub fn contains(&self, sigma: S) -> bool {
        sigma >= self.sigma_lo && sigma <= self.sigma_hi
    }
}

/// The generator `G(a) = (sigma_hi^2 a^+ - sigma_lo^2 a^-) / 2`.
pub fn g_function<S: Scalar>(a: S, band: &VolatilityBand<S>) -> S {
    let half = lit::<S>(0.5);
    let pos = a.max(S::zero());
    let neg = (-a).max(S::zero());
    half * (band.sigma_hi * band.sigma_hi * pos - band.sigma_lo * band.sigma_lo * neg)
}

/// Time grid `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid<S> {
    nodes: Vec<S>,
    dt: Vec<S>,
    uniform: bool,
}

impl<S: Scalar> TimeGrid<S> {
    /// Uniform grid with `steps` steps of size `horizon / steps`.
    pub fn uniform(horizon: S, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(GsvieError::invalid("time grid needs at least one step"));
        }
        if !(horizon > S::zero()) || !horizon.is_finite() {
            return Err(GsvieError::invalid(format!("horizon must be positive, got {horizon}")));
        }
        let h = horizon / from_usize::<S>(steps);
        let mut nodes: Vec<S> = (0..=steps).map(|i| from_usize::<S>(i) * h).collect();
        nodes[steps] = horizon;
        let dt = vec![h; steps];
        Ok(Self {
            nodes,
            dt,
            uniform: true,
        })
    }

    /// Arbitrary strictly increasing grid starting at zero.
    pub fn from_nodes(nodes: Vec<S>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(GsvieError::invalid("time grid needs at least two nodes"));
        }
        if nodes[0] != S::zero() {
            return Err(GsvieError::invalid("time grid must start at t_0 = 0"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || !nodes[nodes.len() - 1].is_finite() {
            return Err(GsvieError::invalid("time grid nodes must be strictly increasing"));
        }
        let dt = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            nodes,
            dt,
            uniform: false,
        })
    }

    pub fn steps(&self) -> usize {
        self.dt.len()
    }

    pub fn horizon(&self) -> S {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn nodes(&self) -> &[S] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> S {
        self.nodes[i]
    }

    /// Step sizes `dt_k = t_{k+1} - t_k`.
    pub fn dt(&self) -> &[S] {
        &self.dt
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn min_step(&self) -> S {
        self.dt.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn max_step(&self) -> S {
        self.dt.iter().copied().fold(S::zero(), S::max)
    }

    /// Grid with every `factor` consecutive steps merged.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(GsvieError::invalid(format!(
                "coarsening factor {factor} must divide the step count {}",
                self.steps()
            )));
        }
        let nodes: Vec<S> = self.nodes.iter().step_by(factor).copied().collect();
        let dt = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            nodes,
            dt,
            uniform: self.uniform,
        })
    }
}

/// Strategy used to build a [`VolatilityControl`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlStrategy {
    ConstantLo,
    ConstantHi,
    /// Independent uniform draw in the band for every step.
    UniformRandom,
    /// Starts at `sigma_lo` and toggles between the band ends at every
    /// switch time (a switch at `t` applies to steps with `t_k >= t`).
    BangBang { switch_times: Vec<f64> },
}

impl ControlStrategy {
    pub fn label(&self) -> String {
        match self {
            ControlStrategy::ConstantLo => "lo".to_string(),
            ControlStrategy::ConstantHi => "hi".to_string(),
            ControlStrategy::UniformRandom => "random".to_string(),
            ControlStrategy::BangBang { switch_times } => {
                let times: Vec<String> = switch_times.iter().map(|t| format!("{t}")).collect();
                format!("bang_bang[{}]", times.join(","))
            }
        }
    }
}

/// Piecewise-constant volatility `sigma_k` on step `[t_k, t_{k+1})`.
///
/// Stands in for one measure of the representing family of the
/// G-expectation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolatilityControl<S> {
    values: Vec<S>,
    label: String,
}

impl<S: Scalar> VolatilityControl<S> {
    /// Control from explicit values; every value must lie in `band`.
    pub fn from_values(values: Vec<S>, band: &VolatilityBand<S>, label: impl Into<String>) -> Result<Self> {
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !band.contains(**v)) {
            return Err(GsvieError::invalid(format!(
                "control value {v} at step {k} outside band [{}, {}]",
                band.sigma_lo, band.sigma_hi
            )));
        }
        Ok(Self {
            values,
            label: label.into(),
        })
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Builds a control for `grid` following `strategy`; deterministic in
/// `(strategy, seed)`.
pub fn make_control<S: Scalar>(
    grid: &TimeGrid<S>,
    band: &VolatilityBand<S>,
    strategy: &ControlStrategy,
    seed: u64,
) -> Result<VolatilityControl<S>> {
    let n = grid.steps();
    let values = match strategy {
        ControlStrategy::ConstantLo => vec![band.sigma_lo; n],
        ControlStrategy::ConstantHi => vec![band.sigma_hi; n],
        ControlStrategy::UniformRandom => {
            let stream = CounterRng::new(seed).domain(0xc0_47_01).stream(0);
            (0..n)
                .map(|k| {
                    let u = lit::<S>(stream.uniform(k as u64));
                    (band.sigma_lo + (band.sigma_hi - band.sigma_lo) * u).min(band.sigma_hi)
                })
                .collect()
        }
        ControlStrategy::BangBang { switch_times } => {
            let horizon = grid.horizon();
            let mut switches = Vec::with_capacity(switch_times.len());
            for &t in switch_times {
                let ts = lit::<S>(t);
                if !(ts >= S::zero() && ts <= horizon) {
                    return Err(GsvieError::invalid(format!(
                        "bang-bang switch time {t} outside [0, {horizon}]"
                    )));
                }
                switches.push(ts);
            }
            (0..n)
                .map(|k| {
                    let tk = grid.node(k);
                    let toggles = switches.iter().filter(|&&s| s <= tk).count();
                    if toggles % 2 == 0 {
                        band.sigma_lo
                    } else {
                        band.sigma_hi
                    }
                })
                .collect()
        }
    };
    VolatilityControl::from_values(values, band, strategy.label())
}

/// Distribution of the normalized increments `zeta_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Rademacher,
}

/// One joint discrete path of `(B, <B>)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioPath<S> {
    pub grid: TimeGrid<S>,
    pub control: VolatilityControl<S>,
    /// Increments `dB_k`, `k < N`.
    pub db: Vec<S>,
    /// Quadratic-variation increments `d<B>_k = sigma_k^2 dt_k`.
    pub dqv: Vec<S>,
    /// `B(t_i)`, `i <= N`.
    pub b: Vec<S>,
    /// `<B>(t_i)`, `i <= N`.
    pub qv: Vec<S>,
    pub seed: u64,
    pub scenario: u64,
    pub noise: NoiseKind,
}

/// Generates scenario `scenario` of the ensemble keyed by `seed`.
///
/// `dB_k = sigma_k sqrt(dt_k) zeta_k`; the normalized noise `zeta` depends
/// only on `(seed, scenario, k)`, so different controls evaluated on the same
/// scenario index share their noise.
pub fn generate_scenario<S: Scalar>(
    grid: &TimeGrid<S>,
    control: &VolatilityControl<S>,
    noise: NoiseKind,
    seed: u64,
    scenario: u64,
) -> Result<ScenarioPath<S>> {
    let n = grid.steps();
    if control.len() != n {
        return Err(GsvieError::invalid(format!(
            "control has {} values but the grid has {n} steps",
            control.len()
        )));
    }
    let stream = CounterRng::new(seed).stream(scenario);
    let mut db = Vec::with_capacity(n);
    let mut dqv = Vec::with_capacity(n);
    for (k, (&sigma, &dt)) in control.values().iter().zip(grid.dt()).enumerate() {
        let zeta = match noise {
            NoiseKind::Gaussian => stream.normal(k as u64),
            NoiseKind::Rademacher => stream.sign(k as u64),
        };
        db.push(sigma * dt.sqrt() * lit::<S>(zeta));
        dqv.push(sigma * sigma * dt);
    }
    Ok(ScenarioPath {
        b: cumulative(&db),
        qv: cumulative(&dqv),
        grid: grid.clone(),
        control: control.clone(),
        db,
        dqv,
        seed,
        scenario,
        noise,
    })
}

fn cumulative<S: Scalar>(increments: &[S]) -> Vec<S> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut acc = S::zero();
    out.push(acc);
    for &d in increments {
        acc += d;
        out.push(acc);
    }
    out
}

impl<S: Scalar> ScenarioPath<S> {
    pub fn steps(&self) -> usize {
        self.db.len()
    }

    pub fn time(&self, i: usize) -> S {
        self.grid.node(i)
    }

    pub fn dt(&self) -> &[S] {
        self.grid.dt()
    }

    /// Same noise on a grid with `factor` steps merged into one.
    ///
    /// Increments are summed, so `B` and `<B>` agree with the fine path at
    /// every coarse node; the coarse control is the RMS volatility of each
    /// merged block.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        let db: Vec<S> = self.db.chunks(factor).map(|c| c.iter().copied().fold(S::zero(), |a, x| a + x)).collect();
        let dqv: Vec<S> = self.dqv.chunks(factor).map(|c| c.iter().copied().fold(S::zero(), |a, x| a + x)).collect();
        let sigmas = dqv.iter().zip(grid.dt()).map(|(&q, &dt)| (q / dt).sqrt()).collect();
        Ok(Self {
            b: cumulative(&db),
            qv: cumulative(&dqv),
            control: VolatilityControl {
                values: sigmas,
                label: self.control.label.clone(),
            },
            grid,
            db,
            dqv,
            seed: self.seed,
            scenario: self.scenario,
            noise: self.noise,
        })
    }

    /// Writes the scenario in the long CSV layout
    /// `scenario_id,step,t,sigma,dB,dQV,B,QV` (no header).
    pub fn write_csv_rows(&self, out: &mut String) {
        let n = self.steps();
        for i in 0..=n {
            let (sigma, db, dqv) = if i < n {
                (self.control.values[i], self.db[i], self.dqv[i])
            } else {
                (S::nan(), S::nan(), S::nan())
            };
            let _ = writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.scenario, i, self.grid.node(i), sigma, db, dqv, self.b[i], self.qv[i]
            );
        }
    }
}

pub const SCENARIO_CSV_HEADER: &str = "scenario_id,step,t,sigma,dB,dQV,B,QV";

fn check_len<S>(path: &ScenarioPath<S>, integrand: &[S]) -> Result<()> {
    if integrand.len() != path.db.len() {
        return Err(GsvieError::invalid(format!(
            "integrand has {} values, path has {} steps",
            integrand.len(),
            path.db.len()
        )));
    }
    Ok(())
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Left-point stochastic integral `sum_k eta_k dB_k`.
pub fn stochastic_integral<S: Scalar>(path: &ScenarioPath<S>, integrand: &[S]) -> Result<S> {
    check_len(path, integrand)?;
    Ok(dot(integrand, &path.db))
}

/// `sum_k eta_k d<B>_k`.
pub fn qv_integral<S: Scalar>(path: &ScenarioPath<S>, integrand: &[S]) -> Result<S> {
    check_len(path, integrand)?;
    Ok(dot(integrand, &path.dqv))
}

/// `sum_k eta_k dt_k`.
pub fn time_integral<S: Scalar>(path: &ScenarioPath<S>, integrand: &[S]) -> Result<S> {
    check_len(path, integrand)?;
    Ok(dot(integrand, path.grid.dt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn band12() -> VolatilityBand<f64> {
        VolatilityBand::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn g_function_examples() {
        let band = band12();
        assert_eq!(g_function(1.0, &band), 2.0);
        assert_eq!(g_function(-1.0, &band), -0.5);
        assert_eq!(g_function(0.0, &band), 0.0);
        assert_eq!(g_function(0.0, &VolatilityBand::new(0.3, 0.7).unwrap()), 0.0);
    }

    #[test]
    fn band_validation() {
        assert!(VolatilityBand::new(0.0, 1.0).is_err());
        assert!(VolatilityBand::new(2.0, 1.0).is_err());
        assert!(VolatilityBand::new(-1.0, 1.0).is_err());
        assert!(VolatilityBand::new(1.0, f64::INFINITY).is_err());
        assert!(VolatilityBand::new(1.0, 1.0).unwrap().is_degenerate());
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::<f64>::uniform(1.0, 0).is_err());
        assert!(TimeGrid::<f64>::uniform(-1.0, 4).is_err());
        assert!(TimeGrid::from_nodes(vec![0.1, 0.5]).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
        let g = TimeGrid::from_nodes(vec![0.0, 0.1, 0.4, 1.0]).unwrap();
        assert_eq!(g.steps(), 3);
        assert!(!g.is_uniform());
        assert_eq!(g.horizon(), 1.0);
        let u = TimeGrid::uniform(2.0, 8).unwrap();
        assert_eq!(u.node(8), 2.0);
        assert_eq!(u.node(0), 0.0);
        assert_eq!(u.coarsen(4).unwrap().nodes(), &[0.0, 1.0, 2.0]);
        assert!(u.coarsen(3).is_err());
    }

    #[test]
    fn constant_controls() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let lo = make_control(&grid, &band12(), &ControlStrategy::ConstantLo, 0).unwrap();
        let hi = make_control(&grid, &band12(), &ControlStrategy::ConstantHi, 0).unwrap();
        assert_eq!(lo.values(), &[1.0; 4]);
        assert_eq!(hi.values(), &[2.0; 4]);
        assert_eq!(lo.label(), "lo");
    }

    #[test]
    fn random_control_is_reproducible_and_in_band() {
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let a = make_control(&grid, &band12(), &ControlStrategy::UniformRandom, 42).unwrap();
        let b = make_control(&grid, &band12(), &ControlStrategy::UniformRandom, 42).unwrap();
        let c = make_control(&grid, &band12(), &ControlStrategy::UniformRandom, 43).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a.values(), c.values());
        assert!(a.values().iter().all(|v| (1.0..=2.0).contains(v)));
    }

    #[test]
    fn bang_bang_control() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let strat = ControlStrategy::BangBang {
            switch_times: vec![0.5],
        };
        let c = make_control(&grid, &band12(), &strat, 0).unwrap();
        assert_eq!(c.values(), &[1.0, 1.0, 2.0, 2.0]);
        let bad = ControlStrategy::BangBang {
            switch_times: vec![1.5],
        };
        assert!(matches!(
            make_control(&grid, &band12(), &bad, 0),
            Err(GsvieError::InvalidArgument(_))
        ));
    }

    #[test]
    fn control_length_must_match_grid() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let other = TimeGrid::uniform(1.0, 5).unwrap();
        let c = make_control(&other, &band12(), &ControlStrategy::ConstantLo, 0).unwrap();
        assert!(generate_scenario(&grid, &c, NoiseKind::Gaussian, 0, 0).is_err());
    }

    #[test]
    fn rademacher_increments_are_lattice_steps() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let band = VolatilityBand::degenerate(1.0).unwrap();
        let c = make_control(&grid, &band, &ControlStrategy::ConstantLo, 0).unwrap();
        let p = generate_scenario(&grid, &c, NoiseKind::Rademacher, 5, 0).unwrap();
        assert!(p.db.iter().all(|&d| d == 0.5 || d == -0.5));
    }

    #[test]
    fn qv_under_constant_lo_is_exact() {
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let c = make_control(&grid, &band12(), &ControlStrategy::ConstantLo, 0).unwrap();
        let p = generate_scenario(&grid, &c, NoiseKind::Gaussian, 1, 0).unwrap();
        assert_eq!(p.qv[16], 1.0);
        assert_eq!(p.b[0], 0.0);
        assert_eq!(p.qv[0], 0.0);
    }

    #[test]
    fn increment_variance_matches_sigma_squared_dt() {
        let sigma = 1.5;
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let band = VolatilityBand::degenerate(sigma).unwrap();
        let c = make_control(&grid, &band, &ControlStrategy::ConstantLo, 0).unwrap();
        let mut draws = Vec::with_capacity(100_000);
        for s in 0..10_000 {
            let p = generate_scenario(&grid, &c, NoiseKind::Gaussian, 11, s).unwrap();
            draws.extend_from_slice(&p.db);
        }
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = sigma * sigma * 0.1;
        assert!((var - expected).abs() / expected < 0.05, "var {var} expected {expected}");
    }

    #[test]
    fn integrals() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let c = make_control(&grid, &band12(), &ControlStrategy::UniformRandom, 3).unwrap();
        let p = generate_scenario(&grid, &c, NoiseKind::Gaussian, 2, 7).unwrap();
        assert_eq!(stochastic_integral(&p, &[0.0; 8]).unwrap(), 0.0);
        assert!((stochastic_integral(&p, &[1.0; 8]).unwrap() - p.b[8]).abs() < 1e-14);
        let qv: f64 = c.values().iter().map(|s| s * s * 0.125).sum();
        assert!((qv_integral(&p, &[1.0; 8]).unwrap() - qv).abs() < 1e-14);
        assert!((time_integral(&p, &[1.0; 8]).unwrap() - 1.0).abs() < 1e-15);
        assert!(stochastic_integral(&p, &[1.0; 7]).is_err());
    }

    #[test]
    fn coarsening_preserves_node_values() {
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let c = make_control(&grid, &band12(), &ControlStrategy::UniformRandom, 3).unwrap();
        let p = generate_scenario(&grid, &c, NoiseKind::Gaussian, 2, 7).unwrap();
        let q = p.coarsen(4).unwrap();
        for i in 0..=4 {
            assert!((q.b[i] - p.b[4 * i]).abs() < 1e-14);
            assert!((q.qv[i] - p.qv[4 * i]).abs() < 1e-14);
        }
        assert!(q.control.values().iter().all(|v| (1.0..=2.0 + 1e-12).contains(v)));
    }

    #[test]
    fn works_in_single_precision() {
        let band = VolatilityBand::<f32>::new(1.0, 2.0).unwrap();
        assert_eq!(g_function(1.0f32, &band), 2.0);
        let grid = TimeGrid::<f32>::uniform(1.0, 8).unwrap();
        let c = make_control(&grid, &band, &ControlStrategy::ConstantHi, 0).unwrap();
        let p = generate_scenario(&grid, &c, NoiseKind::Gaussian, 0, 0).unwrap();
        assert!((p.qv[8] - 4.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn scenario_qv_increments_stay_in_band(seed in any::<u64>(), lo in 0.1f64..2.0, width in 0.0f64..2.0, n in 1usize..64) {
            let band = VolatilityBand::new(lo, lo + width).unwrap();
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            let c = make_control(&grid, &band, &ControlStrategy::UniformRandom, seed).unwrap();
            let p = generate_scenario(&grid, &c, NoiseKind::Gaussian, seed, 0).unwrap();
            for (k, &q) in p.dqv.iter().enumerate() {
                let dt = grid.dt()[k];
                prop_assert!(q >= lo * lo * dt && q <= (lo + width).powi(2) * dt);
            }
        }

        #[test]
        fn g_is_sublinear_and_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0, lambda in 0.0f64..10.0) {
            let band = band12();
            let tol = 1e-9 * (1.0 + a.abs() + b.abs()) * (1.0 + lambda);
            prop_assert!(g_function(a + b, &band) <= g_function(a, &band) + g_function(b, &band) + tol);
            prop_assert!((g_function(lambda * a, &band) - lambda * g_function(a, &band)).abs() <= tol);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(g_function(lo, &band) <= g_function(hi, &band));
        }

        #[test]
        fn identical_inputs_reproduce_bitwise(seed in any::<u64>(), scenario in any::<u64>()) {
            let grid = TimeGrid::uniform(1.0, 12).unwrap();
            let c = make_control(&grid, &band12(), &ControlStrategy::UniformRandom, seed).unwrap();
            let p = generate_scenario(&grid, &c, NoiseKind::Gaussian, seed, scenario).unwrap();
            let q = generate_scenario(&grid, &c, NoiseKind::Gaussian, seed, scenario).unwrap();
            prop_assert!(p.db.iter().zip(&q.db).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
