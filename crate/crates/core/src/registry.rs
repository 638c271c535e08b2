//! Built-in coefficient systems.
//!
//! Every entry declares its Lipschitz/growth constant `L` and a modulus
//! `rho`; separable entries also declare the bounds `m <= H <= M`. Kernels
//! whose `t`-increments grow with `|x|` (the `e^{-t}` and `e^{-(t-s)}`
//! families) have their `rho` certified only on `|x| <= STATE_BOUND`, which
//! is also the default sampling range of the assumption checker.

use std::collections::BTreeMap;

use crate::comparison::{spatial, Probe, SeparableSystem, Side};
use crate::error::{GsvieError, Result};
use crate::scalar::{lit, Scalar};
use crate::solver::{kernel, AdaptedProcess, CoefficientSet, ForcingProcess, Modulus};

/// State range on which the declared moduli hold.
pub const STATE_BOUND: f64 = 5.0;

pub const NAMES: &[&str] = &["example-4.8", "linear-sde", "exp-kernel", "volterra-ramp", "identical", "broken-a4"];

/// A registry system in general form (`coefficients`, `phi`) and, when it
/// has one, in separable form.
#[derive(Debug, Clone)]
pub struct RegistryEntry<S> {
    pub name: &'static str,
    pub note: &'static str,
    pub coefficients: CoefficientSet<S>,
    pub phi: ForcingProcess<S>,
    pub separable: Option<SeparableSystem<S>>,
    /// Default volatility band `(sigma_lo, sigma_hi)`.
    pub default_band: (f64, f64),
    /// Tuples the assumption checker evaluates before random sampling.
    pub probes: Vec<Probe>,
}

fn pos<S: Scalar>(x: S) -> S {
    x.max(S::zero())
}

fn one<S: Scalar>() -> AdaptedProcess<S> {
    AdaptedProcess::constant(S::one())
}

/// Pair `b_1 = 1 - 2 x^+ e^{-t}`, `b_2 = -2 x^+ e^{-t}`, `h = 0`,
/// `sigma(s, x) = x`, `H = 1`, `phi_1 = phi_2 = 1`.
pub fn example_4_8<S: Scalar>() -> SeparableSystem<S> {
    let two = lit::<S>(2.0);
    SeparableSystem {
        name: "example-4.8".into(),
        b1: kernel(move |t: S, _s, x| S::one() - two * pos(x) * (-t).exp()),
        b2: kernel(move |t: S, _s, x| -two * pos(x) * (-t).exp()),
        h1: kernel(|_, _, _| S::zero()),
        h2: kernel(|_, _, _| S::zero()),
        sigma: spatial(|_s, x| x),
        h_fun: one(),
        phi1: ForcingProcess::constant(S::one()),
        phi2: ForcingProcess::constant(S::one()),
        m: S::one(),
        big_m: S::one(),
        lipschitz: lit(3.0),
        rho: Modulus::new("10 r (|x| <= 5)", |r: S| lit::<S>(10.0) * r),
    }
}

/// Both sides equal to the lower side of [`example_4_8`].
pub fn identical<S: Scalar>() -> SeparableSystem<S> {
    let mut s = example_4_8::<S>();
    s.name = "identical".into();
    s.b1 = s.b2.clone();
    s
}

/// [`example_4_8`] with `phi_1 = 0.25 < phi_2`, so the forcing gap is
/// negative from `t = 0`.
pub fn broken_a4<S: Scalar>() -> SeparableSystem<S> {
    let mut s = example_4_8::<S>();
    s.name = "broken-a4".into();
    s.phi1 = ForcingProcess::constant(lit(0.25));
    s
}

/// Separable pair with a time-varying `H(t) = 1 + t/2` and forcing gap:
/// `b_2 = -x^+ e^{-(t-s)}`, `b_1 = b_2 + H(t)(1+t)`,
/// `h_1 = h_2 = -0.2 x e^{-(t-s)}`, `sigma(s,x) = 0.3 x`,
/// `phi_2 = 1`, `phi_1 = 1 + 0.2 t H(t)`.
pub fn volterra_ramp<S: Scalar>(horizon: S) -> SeparableSystem<S> {
    let half = lit::<S>(0.5);
    let h_of = move |t: S| S::one() + half * t;
    let k = h_of(horizon) * (S::one() + horizon);
    SeparableSystem {
        name: "volterra-ramp".into(),
        b1: kernel(move |t: S, s: S, x: S| -pos(x) * (s - t).exp() + h_of(t) * (S::one() + t)),
        b2: kernel(|t: S, s: S, x: S| -pos(x) * (s - t).exp()),
        h1: kernel(|t: S, s: S, x: S| -lit::<S>(0.2) * x * (s - t).exp()),
        h2: kernel(|t: S, s: S, x: S| -lit::<S>(0.2) * x * (s - t).exp()),
        sigma: spatial(|_s, x: S| lit::<S>(0.3) * x),
        h_fun: AdaptedProcess::deterministic("1 + t/2", h_of),
        phi1: ForcingProcess::deterministic("1 + 0.2 t H(t)", move |t: S| S::one() + lit::<S>(0.2) * t * h_of(t)),
        phi2: ForcingProcess::constant(S::one()),
        m: S::one(),
        big_m: h_of(horizon),
        lipschitz: (lit::<S>(1.13) + k * k).sqrt(),
        rho: {
            let c = lit::<S>(8.0) + horizon;
            Modulus::new(format!("({c}) r (|x| <= 5)"), move |r: S| c * r)
        },
    }
}

fn linear_sde<S: Scalar>(mu: S, c: S, x0: S) -> SeparableSystem<S> {
    SeparableSystem {
        name: "linear-sde".into(),
        b1: kernel(move |_, _, x: S| mu * x),
        b2: kernel(move |_, _, x: S| mu * x),
        h1: kernel(|_, _, _| S::zero()),
        h2: kernel(|_, _, _| S::zero()),
        sigma: spatial(move |_, x: S| c * x),
        h_fun: one(),
        phi1: ForcingProcess::constant(x0),
        phi2: ForcingProcess::constant(x0),
        m: S::one(),
        big_m: S::one(),
        lipschitz: mu.abs() + c.abs(),
        rho: Modulus::linear(S::one()),
    }
}

fn exp_kernel<S: Scalar>(x0: S) -> (CoefficientSet<S>, ForcingProcess<S>) {
    let c = CoefficientSet::new(
        "exp-kernel",
        kernel(|t: S, s: S, x: S| (s - t).exp() * x),
        kernel(|t: S, s: S, x: S| lit::<S>(0.25) * (s - t).exp() * x),
        kernel(|t: S, s: S, x: S| lit::<S>(0.5) * (s - t).exp() * x),
        lit(1.75),
        Modulus::new("10 r (|x| <= 5)", |r: S| lit::<S>(10.0) * r),
    )
    .with_holder(lit(2.5), S::one());
    (c, ForcingProcess::constant(x0))
}

struct Params<'a> {
    name: &'a str,
    map: &'a BTreeMap<String, f64>,
    allowed: &'static [&'static str],
}

impl Params<'_> {
    fn check(&self) -> Result<()> {
        if let Some(k) = self.map.keys().find(|k| !self.allowed.contains(&k.as_str())) {
            return Err(GsvieError::InvalidArgument(format!(
                "unknown parameter `{k}` for system `{}` (allowed: {:?})",
                self.name, self.allowed
            )));
        }
        Ok(())
    }

    fn get<S: Scalar>(&self, key: &str, default: f64) -> S {
        lit(self.map.get(key).copied().unwrap_or(default))
    }
}

fn from_separable<S: Scalar>(
    name: &'static str,
    note: &'static str,
    sys: SeparableSystem<S>,
    default_band: (f64, f64),
    probes: Vec<Probe>,
) -> RegistryEntry<S> {
    RegistryEntry {
        name,
        note,
        coefficients: sys.as_coefficient_set(Side::First),
        phi: sys.phi1.clone(),
        separable: Some(sys),
        default_band,
        probes,
    }
}

/// Builds a registry entry. `params` overrides the entry's numeric
/// parameters; `horizon` fixes horizon-dependent constants.
pub fn lookup<S: Scalar>(name: &str, params: &BTreeMap<String, f64>, horizon: S) -> Result<RegistryEntry<S>> {
    let allowed: &'static [&'static str] = match name {
        "linear-sde" => &["mu", "c", "x0"],
        "exp-kernel" => &["x0"],
        _ => &[],
    };
    let p = Params { name, map: params, allowed };
    p.check()?;
    // witness of the classical condition: b_1(0,0,1) = -1 < 0 = b_2(0,0,-1)
    let classical_probe = vec![Probe {
        t_prime: 0.0,
        t: 0.0,
        s: 0.0,
        x: -1.0,
        y: 1.0,
    }];
    Ok(match name {
        "example-4.8" => from_separable(
            "example-4.8",
            "comparison pair violating the classical pointwise drift ordering; kernels not differentiable at x = 0",
            example_4_8(),
            (0.5, 1.0),
            classical_probe,
        ),
        "identical" => from_separable("identical", "both sides equal; the difference vanishes", identical(), (0.5, 1.0), Vec::new()),
        "broken-a4" => from_separable(
            "broken-a4",
            "example-4.8 with phi_1 = 0.25 < phi_2; forcing-gap condition fails at t = 0",
            broken_a4(),
            (0.5, 1.0),
            classical_probe,
        ),
        "volterra-ramp" => {
            let mut e = from_separable(
                "volterra-ramp",
                "separable pair with H(t) = 1 + t/2 and a growing forcing gap",
                volterra_ramp(horizon),
                (0.5, 1.0),
                Vec::new(),
            );
            // H is deterministic here, so the general form can carry it
            e.coefficients.sigma = kernel(|t: S, _s, x: S| (S::one() + lit::<S>(0.5) * t) * lit::<S>(0.3) * x);
            e
        }
        "linear-sde" => {
            let sys = linear_sde(p.get("mu", 0.05), p.get("c", 0.2), p.get("x0", 1.0));
            let mut e = from_separable("linear-sde", "constant-coefficient geometric SDE; closed form available", sys, (1.0, 1.0), Vec::new());
            e.coefficients.name = "linear-sde".into();
            e.coefficients.holder = Some(crate::solver::HolderConstants {
                c_t: S::one(),
                alpha: S::one(),
            });
            e
        }
        "exp-kernel" => {
            let (coefficients, phi) = exp_kernel(p.get("x0", 1.0));
            RegistryEntry {
                name: "exp-kernel",
                note: "smooth Volterra kernel e^{-(t-s)} in all three coefficients",
                coefficients,
                phi,
                separable: None,
                default_band: (0.5, 1.0),
                probes: Vec::new(),
            }
        }
        other => {
            return Err(GsvieError::InvalidArgument(format!(
                "unknown system `{other}` (known: {})",
                NAMES.join(", ")
            )))
        }
    })
}
