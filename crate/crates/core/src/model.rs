//! Data model for the two-scale SDE: scaling parameters, coefficient
//! bundles, and the bundled example systems.
//!
//! The driving system is
//!
//! ```text
//!     dX = [ (eps/delta) b(X,Y) + c(X,Y) ] dt + sqrt(eps) sigma(X,Y) dW
//!     dY = (1/delta) [ (eps/delta) f(X,Y) + g(X,Y) ] dt
//!          + (sqrt(eps)/delta) [ tau1(X,Y) dW + tau2(X,Y) dB ]
//! ```
//!
//! with `eps` the noise strength and `delta` the time-scale separation. A
//! [`MultiscaleModel`] supplies the seven coefficients; the scaling triple
//! `(eps, delta, h)` lives in [`ScalingParams`].
//!
//! Growth and ergodicity of the coefficients (recurrent fast drift,
//! sub-linear coupling) are assumptions on the user's system, not something
//! this module can check mechanically for arbitrary closures; the bundled
//! examples satisfy them by construction and document why.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Limiting behaviour of `eps/delta` as both vanish.
///
/// Regime 1: `eps/delta -> infinity` (homogenization-type scaling).
/// Regime 2: `eps/delta -> gamma` finite; at finite parameters `gamma` is
/// taken to be the ratio `eps/delta` itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    One,
    Two,
}

impl core::fmt::Display for Regime {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Regime::One => write!(f, "regime1"),
            Regime::Two => write!(f, "regime2"),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("parameter `{name}` = {value} violates {constraint}")]
    ParameterDomain {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("coefficient `{coefficient}` returned {got} entries, expected {expected}")]
    ShapeMismatch {
        coefficient: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("coefficient `{coefficient}` returned a non-finite entry at a probe point")]
    NonFiniteCoefficient { coefficient: &'static str },
}

/// Noise/time-scale parameters and the moderate-deviations speed `h(eps)`.
///
/// `h(eps) = eps^(-a)` with `a` in (0, 1/2), so that `h -> infinity` while
/// `beta = sqrt(eps) h(eps) = eps^(1/2 - a) -> 0`. The identity
/// `beta^2 = eps * h^2` holds exactly and is what converts payoff exponents
/// between the `1/eps` and `h^2` scalings.
#[derive(Clone, Copy, Debug)]
pub struct ScalingParams {
    pub epsilon: f64,
    pub delta: f64,
    pub h_exponent: f64,
    pub regime: Regime,
    h: f64,
    beta: f64,
}

/// Derived scale constants at a finite `(eps, delta)`.
///
/// `j1 = (delta/eps) / (sqrt(eps) h)` and, in Regime 2 where
/// `gamma = eps/delta`, `j2 = (eps/delta - gamma) / (sqrt(eps) h)`, which is
/// identically zero along the proportional path run here.
#[derive(Clone, Copy, Debug)]
pub struct DerivedScaling {
    pub h: f64,
    pub beta: f64,
    pub gamma: Option<f64>,
    pub j1: f64,
    pub j2: Option<f64>,
}

impl ScalingParams {
    /// Moderate-deviations scaling with `h(eps) = eps^(-h_exponent)`.
    pub fn new(
        epsilon: f64,
        delta: f64,
        h_exponent: f64,
        regime: Regime,
    ) -> Result<Self, ModelError> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(ModelError::ParameterDomain {
                name: "epsilon",
                value: epsilon,
                constraint: "epsilon > 0",
            });
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(ModelError::ParameterDomain {
                name: "delta",
                value: delta,
                constraint: "delta > 0",
            });
        }
        if !(h_exponent > 0.0 && h_exponent < 0.5) {
            return Err(ModelError::ParameterDomain {
                name: "h_exponent",
                value: h_exponent,
                constraint: "0 < a < 1/2",
            });
        }
        Ok(Self::build(epsilon, delta, h_exponent, regime))
    }

    /// Large-deviations embedding `h(eps) = eps^(-1/2)`, i.e. `beta = 1`.
    ///
    /// This sits at the boundary of the moderate-deviations window and turns
    /// `exp(-h^2 H(eta))` into `exp(-(1/eps) R(x))` with `eta = x - xbar`;
    /// it is how the closed-form large-deviations scheme for the rough
    /// potential is driven through the same sampler.
    pub fn ld_embedding(epsilon: f64, delta: f64) -> Result<Self, ModelError> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(ModelError::ParameterDomain {
                name: "epsilon",
                value: epsilon,
                constraint: "epsilon > 0",
            });
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(ModelError::ParameterDomain {
                name: "delta",
                value: delta,
                constraint: "delta > 0",
            });
        }
        Ok(Self::build(epsilon, delta, 0.5, Regime::One))
    }

    fn build(epsilon: f64, delta: f64, h_exponent: f64, regime: Regime) -> Self {
        let h = math::powf(epsilon, -h_exponent);
        let beta = math::sqrt(epsilon) * h;
        Self {
            epsilon,
            delta,
            h_exponent,
            regime,
            h,
            beta,
        }
    }

    /// `h(eps) = eps^(-a)`.
    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    /// `beta = sqrt(eps) * h(eps)`, the amplitude of the fluctuations that
    /// the moderate-deviations process resolves.
    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// All derived scale constants at the stored finite `(eps, delta)`.
    pub fn derived(&self) -> DerivedScaling {
        let sqrt_eps_h = self.beta;
        let j1 = (self.delta / self.epsilon) / sqrt_eps_h;
        let (gamma, j2) = match self.regime {
            Regime::One => (None, None),
            Regime::Two => {
                let gamma = self.epsilon / self.delta;
                (Some(gamma), Some((self.epsilon / self.delta - gamma) / sqrt_eps_h))
            }
        };
        DerivedScaling {
            h: self.h,
            beta: self.beta,
            gamma,
            j1,
            j2,
        }
    }
}

/// Simulation step `dt = 0.001 * delta^2 / eps`.
///
/// `delta^2/eps` is the relaxation time of the fast motion, so this resolves
/// it with a thousand steps regardless of how stiff the pair `(eps, delta)`
/// makes the system.
pub fn time_step(params: &ScalingParams) -> f64 {
    0.001 * params.delta * params.delta / params.epsilon
}

/// Number of Euler steps covering `[t0, t_end]` at `time_step` resolution:
/// `ceil((t_end - t0)/dt)`, the last step truncated to land exactly on
/// `t_end`.
pub fn step_count(params: &ScalingParams, t0: f64, t_end: f64) -> usize {
    let dt = time_step(params);
    let raw = (t_end - t0) / dt;
    let n = raw.ceil() as usize;
    n.max(1)
}

/// How the fast variable is realised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FastKind {
    /// `Y` carries its own equation and is integrated alongside `X`.
    ExplicitFastState,
    /// The fast variable is `y = x/delta` (diffusion in a rough periodic
    /// potential); only `x` is integrated and `f, g, tau` mirror the slow
    /// coefficients.
    HomogenizationEmbedded,
}

/// Immutable coefficient bundle for the two-scale SDE.
///
/// Matrix-valued coefficients are written row-major into the `out` slice
/// (`n_slow x n_wiener` for `sigma`, `n_fast x n_wiener` for the taus).
/// Implementations must be pure: the sampler shares one model across all
/// workers.
pub trait MultiscaleModel: Send + Sync {
    fn n_slow(&self) -> usize;
    fn n_fast(&self) -> usize;
    fn n_wiener(&self) -> usize;
    fn fast_kind(&self) -> FastKind;

    fn drift_b(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn drift_c(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn diffusion_sigma(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn drift_f(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn drift_g(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn diffusion_tau1(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn diffusion_tau2(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    /// Identifies bundled closed-form systems so tests can select analytic
    /// comparisons.
    fn closed_form_tag(&self) -> Option<&'static str> {
        None
    }
}

type Coefficient = Box<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// A coefficient bundle assembled from user closures.
///
/// Construction probes every closure at the origin and fails fast on a shape
/// mismatch; every later call re-checks the returned length, so a closure
/// whose output shape depends on its input cannot silently corrupt a
/// simulation.
pub struct ClosureModel {
    n_slow: usize,
    n_fast: usize,
    n_wiener: usize,
    kind: FastKind,
    b: Coefficient,
    c: Coefficient,
    sigma: Coefficient,
    f: Coefficient,
    g: Coefficient,
    tau1: Coefficient,
    tau2: Coefficient,
}

impl ClosureModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_slow: usize,
        n_fast: usize,
        n_wiener: usize,
        kind: FastKind,
        b: Coefficient,
        c: Coefficient,
        sigma: Coefficient,
        f: Coefficient,
        g: Coefficient,
        tau1: Coefficient,
        tau2: Coefficient,
    ) -> Result<Self, ModelError> {
        let model = Self {
            n_slow,
            n_fast,
            n_wiener,
            kind,
            b,
            c,
            sigma,
            f,
            g,
            tau1,
            tau2,
        };
        let x0 = vec![0.0; n_slow];
        let y0 = vec![0.0; n_fast];
        model.validate_shapes_at(&x0, &y0)?;
        Ok(model)
    }

    /// Checks that every coefficient returns its declared shape (and finite
    /// entries) at the given point.
    pub fn validate_shapes_at(&self, x: &[f64], y: &[f64]) -> Result<(), ModelError> {
        let checks: [(&'static str, &Coefficient, usize); 7] = [
            ("drift_b", &self.b, self.n_slow),
            ("drift_c", &self.c, self.n_slow),
            ("diffusion_sigma", &self.sigma, self.n_slow * self.n_wiener),
            ("drift_f", &self.f, self.n_fast),
            ("drift_g", &self.g, self.n_fast),
            ("diffusion_tau1", &self.tau1, self.n_fast * self.n_wiener),
            ("diffusion_tau2", &self.tau2, self.n_fast * self.n_wiener),
        ];
        for (name, coeff, expected) in checks {
            let out = coeff(x, y);
            if out.len() != expected {
                return Err(ModelError::ShapeMismatch {
                    coefficient: name,
                    expected,
                    got: out.len(),
                });
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteCoefficient { coefficient: name });
            }
        }
        Ok(())
    }

    fn fill(&self, which: &Coefficient, name: &'static str, x: &[f64], y: &[f64], out: &mut [f64]) {
        let v = which(x, y);
        assert_eq!(
            v.len(),
            out.len(),
            "coefficient `{name}` returned {} entries, expected {}",
            v.len(),
            out.len()
        );
        out.copy_from_slice(&v);
    }
}

impl core::fmt::Debug for ClosureModel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ClosureModel")
            .field("n_slow", &self.n_slow)
            .field("n_fast", &self.n_fast)
            .field("n_wiener", &self.n_wiener)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

impl MultiscaleModel for ClosureModel {
    fn n_slow(&self) -> usize {
        self.n_slow
    }
    fn n_fast(&self) -> usize {
        self.n_fast
    }
    fn n_wiener(&self) -> usize {
        self.n_wiener
    }
    fn fast_kind(&self) -> FastKind {
        self.kind
    }
    fn drift_b(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.fill(&self.b, "drift_b", x, y, out)
    }
    fn drift_c(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.fill(&self.c, "drift_c", x, y, out)
    }
    fn diffusion_sigma(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.fill(&self.sigma, "diffusion_sigma", x, y, out)
    }
    fn drift_f(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.fill(&self.f, "drift_f", x, y, out)
    }
    fn drift_g(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.fill(&self.g, "drift_g", x, y, out)
    }
    fn diffusion_tau1(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.fill(&self.tau1, "diffusion_tau1", x, y, out)
    }
    fn diffusion_tau2(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.fill(&self.tau2, "diffusion_tau2", x, y, out)
    }
}

/// Double-well potential `V1(x) = (x^2 - 1)^2 / 2` with quadratic coupling
/// `V2(x, y) = (x - y)^2 / 2`: the slow particle feels
/// `-dV/dx = -2x(x^2-1) - (x-y)` and the fast one relaxes toward the slow
/// with `-dV/dy = x - y`, an Ornstein-Uhlenbeck recurrence. Slow noise is
/// `sqrt(2D)`, fast noise is the independent Brownian motion alone.
#[derive(Clone, Copy, Debug)]
pub struct Example1Model {
    d: f64,
    sqrt_2d: f64,
}

impl Example1Model {
    pub fn new(d: f64) -> Result<Self, ModelError> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(ModelError::ParameterDomain {
                name: "D",
                value: d,
                constraint: "D > 0",
            });
        }
        Ok(Self {
            d,
            sqrt_2d: math::sqrt(2.0 * d),
        })
    }

    pub fn diffusivity(&self) -> f64 {
        self.d
    }

    /// `-d/dx [ V1(x) + V2(x,y) ] = -2x(x^2 - 1) - (x - y)`.
    #[inline(always)]
    pub fn slow_drift(x: f64, y: f64) -> f64 {
        -2.0 * x * (x * x - 1.0) - (x - y)
    }

    /// `-d/dy V2(x,y) = x - y`.
    #[inline(always)]
    pub fn fast_drift(x: f64, y: f64) -> f64 {
        x - y
    }
}

impl MultiscaleModel for Example1Model {
    fn n_slow(&self) -> usize {
        1
    }
    fn n_fast(&self) -> usize {
        1
    }
    fn n_wiener(&self) -> usize {
        1
    }
    fn fast_kind(&self) -> FastKind {
        FastKind::ExplicitFastState
    }
    #[inline(always)]
    fn drift_b(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    #[inline(always)]
    fn drift_c(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = Self::slow_drift(x[0], y[0]);
    }
    #[inline(always)]
    fn diffusion_sigma(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = self.sqrt_2d;
    }
    #[inline(always)]
    fn drift_f(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = Self::fast_drift(x[0], y[0]);
    }
    #[inline(always)]
    fn drift_g(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    #[inline(always)]
    fn diffusion_tau1(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    #[inline(always)]
    fn diffusion_tau2(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn closed_form_tag(&self) -> Option<&'static str> {
        Some("double-well-ou-coupling")
    }
}

/// Rough periodic potential `Q(y) = cos y + sin y`.
#[inline(always)]
pub fn rough_potential(y: f64) -> f64 {
    let (s, c) = math::sin_cos(y);
    c + s
}

/// `Q'(y) = -sin y + cos y`.
#[inline(always)]
pub fn rough_potential_prime(y: f64) -> f64 {
    let (s, c) = math::sin_cos(y);
    c - s
}

/// Confining potential `V(x) = x^2/2` of the rough-potential system.
#[inline(always)]
pub fn confining_potential_prime(x: f64) -> f64 {
    x
}

/// Overdamped Langevin motion in the two-scale potential
/// `V(x) + Q(x/delta)`:
///
/// ```text
///     dX = [ -(eps/delta) Q'(X/delta) - V'(X) ] dt + sqrt(2 D eps) dW
/// ```
///
/// The fast variable is `y = x/delta` itself, so only `x` is integrated
/// (`fast_kind = HomogenizationEmbedded`) and the fast coefficients mirror
/// the slow ones (`f = b`, `g = c`, `tau1 = sigma`, `tau2 = 0`).
#[derive(Clone, Copy, Debug)]
pub struct Example3Model {
    d: f64,
    sqrt_2d: f64,
}

impl Example3Model {
    pub fn new(d: f64) -> Result<Self, ModelError> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(ModelError::ParameterDomain {
                name: "D",
                value: d,
                constraint: "D > 0",
            });
        }
        Ok(Self {
            d,
            sqrt_2d: math::sqrt(2.0 * d),
        })
    }

    pub fn diffusivity(&self) -> f64 {
        self.d
    }
}

impl MultiscaleModel for Example3Model {
    fn n_slow(&self) -> usize {
        1
    }
    fn n_fast(&self) -> usize {
        1
    }
    fn n_wiener(&self) -> usize {
        1
    }
    fn fast_kind(&self) -> FastKind {
        FastKind::HomogenizationEmbedded
    }
    #[inline(always)]
    fn drift_b(&self, _x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = -rough_potential_prime(y[0]);
    }
    #[inline(always)]
    fn drift_c(&self, x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = -confining_potential_prime(x[0]);
    }
    #[inline(always)]
    fn diffusion_sigma(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = self.sqrt_2d;
    }
    #[inline(always)]
    fn drift_f(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.drift_b(x, y, out)
    }
    #[inline(always)]
    fn drift_g(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.drift_c(x, y, out)
    }
    #[inline(always)]
    fn diffusion_tau1(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.diffusion_sigma(x, y, out)
    }
    #[inline(always)]
    fn diffusion_tau2(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn closed_form_tag(&self) -> Option<&'static str> {
        Some("rough-periodic-potential")
    }
}

/// The composed slow drift `(eps/delta) b + c` at `(x, y)`.
///
/// For homogenization-embedded models call it with `y = x/delta`.
pub fn slow_drift_at<M: MultiscaleModel + ?Sized>(
    model: &M,
    eps_over_delta: f64,
    x: &[f64],
    y: &[f64],
    out: &mut [f64],
) {
    let n = model.n_slow();
    let mut b = vec![0.0; n];
    model.drift_b(x, y, &mut b);
    model.drift_c(x, y, out);
    for (o, bi) in out.iter_mut().zip(b.iter()) {
        *o += eps_over_delta * bi;
    }
}

/// Human-readable name of the bundled fast-variable convention.
pub fn fast_kind_label(kind: FastKind) -> &'static str {
    match kind {
        FastKind::ExplicitFastState => "explicit-fast-state",
        FastKind::HomogenizationEmbedded => "homogenization-embedded",
    }
}
