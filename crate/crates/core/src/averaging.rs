//! Law-of-large-numbers limit path and homogenization constants.
//!
//! As the noise vanishes the slow component concentrates on the solution of
//! the averaged ODE `dXbar/dt = lambda_bar(Xbar)`. The path is precomputed
//! once per experiment on the simulation grid and shared read-only by every
//! trajectory; the moderate-deviations drift needs `Xbar_t` at every step.
//!
//! For the rough-potential system the averaged drift is `-kappa * V'(x)`
//! with the effective rate
//!
//! ```text
//!     kappa = 4 pi^2 / (L * Lhat),
//!     L     = integral over [0, 2pi) of exp(-Q(y)/D) dy,
//!     Lhat  = integral over [0, 2pi) of exp(+Q(y)/D) dy,
//! ```
//!
//! and the periodic cell problem has the closed-form gradient factor
//! `1 + chi'(y) = (2 pi / Lhat) exp(Q(y)/D)`. Only this one-dimensional
//! closed form is implemented; general invariant measures and cell problems
//! are out of scope.

use alloc::string::String;
use alloc::vec::Vec;

use crate::math;
use crate::model::rough_potential;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum AveragingError {
    #[error("parameter `{name}` = {value} violates {constraint}")]
    ParameterDomain {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("averaged drift became non-finite at t = {t}")]
    NonFiniteDrift { t: f64 },
}

/// A scalar function sampled on a uniform time grid, with linear
/// interpolation between nodes and clamped extrapolation at the ends.
#[derive(Clone, Debug)]
pub struct GridFunction {
    t0: f64,
    dt: f64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Self {
        debug_assert!(dt > 0.0 && !values.is_empty());
        Self { t0, dt, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = (t - self.t0) / self.dt;
        if s <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        if s >= last as f64 {
            return self.values[last];
        }
        let k = s as usize;
        let frac = s - k as f64;
        self.values[k] + frac * (self.values[k + 1] - self.values[k])
    }

    /// Cumulative trapezoid integral from `t0`, returned on the same grid.
    pub fn cumulative_integral(&self) -> GridFunction {
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = math::Kahan::new();
        out.push(0.0);
        for w in self.values.windows(2) {
            acc.add(0.5 * self.dt * (w[0] + w[1]));
            out.push(acc.value());
        }
        GridFunction::new(self.t0, self.dt, out)
    }
}

/// The averaged path `Xbar` on a uniform grid.
///
/// `values` is row-major with stride `n_slow`; `values[0..n_slow]` is the
/// initial condition. Immutable after construction and shared across
/// workers.
#[derive(Clone, Debug)]
pub struct AveragedPath {
    t0: f64,
    t_end: f64,
    dt: f64,
    n_slow: usize,
    values: Vec<f64>,
    drift_tag: String,
}

impl AveragedPath {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_slow(&self) -> usize {
        self.n_slow
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.n_slow
    }

    pub fn drift_tag(&self) -> &str {
        &self.drift_tag
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_slow..(k + 1) * self.n_slow]
    }

    /// Linear interpolation between grid nodes; clamps past the ends (the
    /// simulation grid coincides with the path grid by construction, so the
    /// clamp is only ever exercised by the truncated final step).
    pub fn value_at(&self, t: f64, out: &mut [f64]) {
        let last = self.n_nodes() - 1;
        let s = (t - self.t0) / self.dt;
        if s <= 0.0 {
            out.copy_from_slice(self.node(0));
            return;
        }
        if s >= last as f64 {
            out.copy_from_slice(self.node(last));
            return;
        }
        let k = s as usize;
        let frac = s - k as f64;
        let a = self.node(k);
        let b = self.node(k + 1);
        for i in 0..self.n_slow {
            out[i] = a[i] + frac * (b[i] - a[i]);
        }
    }

    /// Scalar view for one-dimensional slow states.
    pub fn value1_at(&self, t: f64) -> f64 {
        debug_assert_eq!(self.n_slow, 1);
        let mut out = [0.0];
        self.value_at(t, &mut out);
        out[0]
    }

    /// Scalar grid view of a one-dimensional path.
    pub fn as_grid_function(&self) -> GridFunction {
        debug_assert_eq!(self.n_slow, 1);
        GridFunction::new(self.t0, self.dt, self.values.clone())
    }
}

/// Integrates `dXbar/dt = drift(Xbar)` with the classical fourth-order
/// one-step scheme on the uniform grid `t0 + k*dt`.
///
/// The final node is the first grid point at or past `t_end`, so callers
/// that need `Xbar(t_end)` between nodes interpolate.
pub fn solve_averaged_ode<F>(
    drift: F,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    dt: f64,
    drift_tag: &str,
) -> Result<AveragedPath, AveragingError>
where
    F: Fn(&[f64], &mut [f64]),
{
    if !(dt > 0.0) {
        return Err(AveragingError::ParameterDomain {
            name: "dt",
            value: dt,
            constraint: "dt > 0",
        });
    }
    if !(t_end > t0) {
        return Err(AveragingError::ParameterDomain {
            name: "t_end",
            value: t_end,
            constraint: "t_end > t0",
        });
    }
    let n_slow = x0.len();
    let n_steps = ((t_end - t0) / dt).ceil() as usize;
    let mut values = Vec::with_capacity((n_steps + 1) * n_slow);
    values.extend_from_slice(x0);

    let mut x = x0.to_vec();
    let mut k1 = alloc::vec![0.0; n_slow];
    let mut k2 = alloc::vec![0.0; n_slow];
    let mut k3 = alloc::vec![0.0; n_slow];
    let mut k4 = alloc::vec![0.0; n_slow];
    let mut stage = alloc::vec![0.0; n_slow];

    for step in 0..n_steps {
        let t = t0 + step as f64 * dt;
        drift(&x, &mut k1);
        for i in 0..n_slow {
            stage[i] = x[i] + 0.5 * dt * k1[i];
        }
        drift(&stage, &mut k2);
        for i in 0..n_slow {
            stage[i] = x[i] + 0.5 * dt * k2[i];
        }
        drift(&stage, &mut k3);
        for i in 0..n_slow {
            stage[i] = x[i] + dt * k3[i];
        }
        drift(&stage, &mut k4);
        for i in 0..n_slow {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !x[i].is_finite() {
                return Err(AveragingError::NonFiniteDrift { t });
            }
        }
        values.extend_from_slice(&x);
    }

    Ok(AveragedPath {
        t0,
        t_end,
        dt,
        n_slow,
        values,
        drift_tag: String::from(drift_tag),
    })
}

/// Averaged drift of the double-well system: `-2x(x^2 - 1)`.
///
/// Stable equilibria at -1 and +1, an unstable one at 0.
#[inline]
pub fn averaged_drift_example1(x: f64) -> f64 {
    -2.0 * x * (x * x - 1.0)
}

/// Effective constants of the rough periodic potential.
#[derive(Clone, Copy, Debug)]
pub struct RoughPotentialConstants {
    pub d: f64,
    pub l: f64,
    pub l_hat: f64,
    pub kappa_hom: f64,
    pub n_nodes: usize,
}

const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Composite Simpson quadrature of `f` over `[0, 2pi]` with `n` (even)
/// subintervals.
fn simpson_period<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
    let h = TWO_PI / n as f64;
    let mut odd = math::Kahan::new();
    let mut even = math::Kahan::new();
    for k in 1..n {
        let v = f(k as f64 * h);
        if k % 2 == 1 {
            odd.add(v);
        } else {
            even.add(v);
        }
    }
    let ends = f(0.0) + f(TWO_PI);
    h / 3.0 * (ends + 4.0 * odd.value() + 2.0 * even.value())
}

/// Computes `L`, `Lhat` by composite Simpson and `kappa = 4 pi^2 / (L Lhat)`.
///
/// The integrands are smooth and periodic, so convergence is spectral in
/// practice; the default `n_nodes = 4096` resolves the constants far beyond
/// reporting precision. `n_nodes` must be even (Simpson pairs subintervals)
/// and at least 64.
pub fn rough_potential_constants(
    d: f64,
    n_nodes: usize,
) -> Result<RoughPotentialConstants, AveragingError> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(AveragingError::ParameterDomain {
            name: "D",
            value: d,
            constraint: "D > 0",
        });
    }
    if n_nodes % 2 != 0 || n_nodes < 64 {
        return Err(AveragingError::ParameterDomain {
            name: "n_nodes",
            value: n_nodes as f64,
            constraint: "even and >= 64",
        });
    }
    let l = simpson_period(|y| math::exp(-rough_potential(y) / d), n_nodes);
    let l_hat = simpson_period(|y| math::exp(rough_potential(y) / d), n_nodes);
    let kappa_hom = 4.0 * core::f64::consts::PI * core::f64::consts::PI / (l * l_hat);
    Ok(RoughPotentialConstants {
        d,
        l,
        l_hat,
        kappa_hom,
        n_nodes,
    })
}

/// Gradient factor of the periodic corrector:
/// `1 + chi'(y) = (2 pi / Lhat) exp(Q(y)/D)`. Strictly positive, with unit
/// mean over one period by the definition of `Lhat`.
#[inline]
pub fn cell_gradient_factor(y: f64, constants: &RoughPotentialConstants) -> f64 {
    TWO_PI / constants.l_hat * math::exp(rough_potential(y) / constants.d)
}
