//! Hamilton-Jacobi-Bellman bindings, closed-form subsolutions, and the
//! feedback controls that define the importance-sampling change of measure.
//!
//! The value of the moderate-deviations control problem solves
//!
//! ```text
//!     dG/ds + Lambda(s, eta, grad G) = 0,     G(T, eta) = H(eta),
//!     Lambda(s, eta, p) = <kappa(Xbar_s, eta), p> - 1/2 |q^(1/2)(Xbar_s) p|^2
//! ```
//!
//! with `kappa` affine in `eta` and `q` independent of it, which is what
//! makes closed-form subsolutions available. A classical subsolution is a
//! `C^1` function `U` with `dU/ds + Lambda(s, eta, grad U) >= 0` on the
//! interior and `U(T, .) <= H`; it induces the feedback control
//!
//! ```text
//!     u(s, eta, y) = ( -alpha1'(Xbar_s, y) grad U(s, eta),
//!                      -alpha2'(Xbar_s, y) grad U(s, eta) )
//! ```
//!
//! whose change of measure is logarithmically efficient with margin
//! `U(t0, 0)`. The zero subsolution gives `u = 0`: naive Monte Carlo.
//!
//! Everything here is verification-grade and immutable; the sampler uses
//! monomorphized mirrors of these controls (tested against them pointwise)
//! for the hot loop.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::averaging::{AveragedPath, GridFunction, RoughPotentialConstants};
use crate::math;
use crate::model::{rough_potential, Regime};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ControlError {
    #[error("parameter `{name}` = {value} violates {constraint}")]
    ParameterDomain {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("the exact-solution variant requires a constant drift coefficient c(t); \
             observed spread {spread}")]
    NonConstantC { spread: f64 },
    #[error("HJB coefficient check failed: {0}")]
    CoefficientCheck(String),
}

/// Terminal cost `H(eta) >= 0` of the estimated functional.
#[derive(Clone, Debug, PartialEq)]
pub enum TerminalCost {
    /// `H = 0`; with naive Monte Carlo the payoff is identically one.
    Zero,
    /// `(eta - center)^2`.
    Quadratic { center: f64 },
    /// `(eta - pos_root)^2` for `eta >= boundary`, `(eta - neg_root)^2`
    /// below; the moderate-deviations image of a piecewise-quadratic cost on
    /// the original state.
    PiecewiseQuadratic {
        boundary: f64,
        pos_root: f64,
        neg_root: f64,
    },
    /// `(|eta| - root)^2`, the terminal data solved exactly by the mirrored
    /// rough-potential subsolution.
    FoldedQuadratic { root: f64 },
}

impl TerminalCost {
    #[inline]
    pub fn eval(&self, eta: f64) -> f64 {
        match *self {
            TerminalCost::Zero => 0.0,
            TerminalCost::Quadratic { center } => {
                let d = eta - center;
                d * d
            }
            TerminalCost::PiecewiseQuadratic {
                boundary,
                pos_root,
                neg_root,
            } => {
                let d = if eta >= boundary {
                    eta - pos_root
                } else {
                    eta - neg_root
                };
                d * d
            }
            TerminalCost::FoldedQuadratic { root } => {
                let d = math::abs(eta) - root;
                d * d
            }
        }
    }
}

type VecField = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
type MatField = Box<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Coefficients of the limiting HJB equation with the slow position bound to
/// the averaged path: the drift `kappa(t, eta)` (affine in `eta`), the
/// constant-in-`eta` diffusion `q(t)`, and the noise shapes `alpha1(t, y)`,
/// `alpha2(t, y)` that the feedback control contracts against.
pub struct HjbCoefficients {
    n_slow: usize,
    n_wiener: usize,
    kappa: VecField,
    q: MatField,
    alpha1: VecField,
    alpha2: VecField,
}

impl HjbCoefficients {
    pub fn new(
        n_slow: usize,
        n_wiener: usize,
        kappa: VecField,
        q: MatField,
        alpha1: VecField,
        alpha2: VecField,
    ) -> Self {
        Self {
            n_slow,
            n_wiener,
            kappa,
            q,
            alpha1,
            alpha2,
        }
    }

    pub fn n_slow(&self) -> usize {
        self.n_slow
    }

    pub fn n_wiener(&self) -> usize {
        self.n_wiener
    }

    pub fn kappa_md(&self, t: f64, eta: &[f64], out: &mut [f64]) {
        (self.kappa)(t, eta, out)
    }

    pub fn q(&self, t: f64, out: &mut [f64]) {
        (self.q)(t, out)
    }

    pub fn alpha1(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.alpha1)(t, y, out)
    }

    pub fn alpha2(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.alpha2)(t, y, out)
    }

    /// Binding for the double-well system.
    ///
    /// `kappa(t, eta) = -c(t) eta` with `c(t) = 6 Xbar(t)^2 - 2` (the second
    /// derivative of the double-well along the averaged path) and `q = 2D`,
    /// as in the limiting HJB of that system. The control shapes are
    /// `alpha1 = sqrt(2D)` and `alpha2 = 1` in Regime 2 (the fast Brownian
    /// is tilted too) or `alpha2 = 0` in Regime 1.
    ///
    /// Note the deliberate asymmetry: in Regime 2 the fast-noise channel
    /// contributes to the control but the bound `q = 2D` of the HJB display
    /// is kept, so `q` and `integral of (a1 a1' + a2 a2') d mu` differ by
    /// the unit fast contribution there. Regime 1 and the rough-potential
    /// binding satisfy the integral identity exactly.
    pub fn example12(d: f64, regime: Regime, c: CPath) -> Self {
        let sqrt_2d = math::sqrt(2.0 * d);
        let a2 = match regime {
            Regime::One => 0.0,
            Regime::Two => 1.0,
        };
        let c_for_kappa = c.clone();
        Self::new(
            1,
            1,
            Box::new(move |t, eta, out| out[0] = -c_for_kappa.c(t) * eta[0]),
            Box::new(move |_t, out| out[0] = 2.0 * d),
            Box::new(move |_t, _y, out| out[0] = sqrt_2d),
            Box::new(move |_t, _y, out| out[0] = a2),
        )
    }

    /// Binding for the rough-potential system: `kappa(t, eta) = -kappa_hom *
    /// eta`, `q = 2 kappa_hom D`, and `alpha1(t, y) = sqrt(2D) (2 pi / Lhat)
    /// exp(Q(y)/D)` carrying the cell-problem gradient factor. There is no
    /// independent fast Brownian, so `alpha2 = 0`.
    pub fn example3(d: f64, constants: &RoughPotentialConstants) -> Self {
        let sqrt_2d = math::sqrt(2.0 * d);
        let kappa_hom = constants.kappa_hom;
        let two_pi_over_lhat = 2.0 * core::f64::consts::PI / constants.l_hat;
        Self::new(
            1,
            1,
            Box::new(move |_t, eta, out| out[0] = -kappa_hom * eta[0]),
            Box::new(move |_t, out| out[0] = 2.0 * kappa_hom * d),
            Box::new(move |_t, y, out| {
                out[0] = sqrt_2d * two_pi_over_lhat * math::exp(rough_potential(y[0]) / d)
            }),
            Box::new(move |_t, _y, out| out[0] = 0.0),
        )
    }

    /// Sanity checks on sampled times: `q` symmetric to 1e-12 and positive
    /// semi-definite (via pivoted `LDL^T` with slack 1e-10), `kappa` affine
    /// in `eta` to 1e-10.
    pub fn validate(&self, t_samples: &[f64], eta_samples: &[&[f64]]) -> Result<(), ControlError> {
        let n = self.n_slow;
        let mut q = vec![0.0; n * n];
        for &t in t_samples {
            self.q(t, &mut q);
            for i in 0..n {
                for j in 0..n {
                    let gap = (q[i * n + j] - q[j * n + i]).abs();
                    if gap > 1e-12 {
                        return Err(ControlError::CoefficientCheck(alloc::format!(
                            "q({t}) asymmetric by {gap} at ({i},{j})"
                        )));
                    }
                }
            }
            if !ldlt_positive_semidefinite(&q, n, 1e-10) {
                return Err(ControlError::CoefficientCheck(alloc::format!(
                    "q({t}) has an eigenvalue below -1e-10"
                )));
            }
        }
        let mut k12 = vec![0.0; n];
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k0 = vec![0.0; n];
        let mut sum = vec![0.0; n];
        let zero = vec![0.0; n];
        for &t in t_samples {
            for pair in eta_samples.chunks(2) {
                if pair.len() < 2 {
                    continue;
                }
                let (e1, e2) = (pair[0], pair[1]);
                for i in 0..n {
                    sum[i] = e1[i] + e2[i];
                }
                self.kappa_md(t, &sum, &mut k12);
                self.kappa_md(t, e1, &mut k1);
                self.kappa_md(t, e2, &mut k2);
                self.kappa_md(t, &zero, &mut k0);
                for i in 0..n {
                    let defect = k12[i] - k1[i] - k2[i] + k0[i];
                    if defect.abs() > 1e-10 {
                        return Err(ControlError::CoefficientCheck(alloc::format!(
                            "kappa not affine in eta: defect {defect} at t = {t}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `A + slack*I = L D L^T` with nonnegative pivots is a sufficient check
/// that the symmetric matrix `A` has no eigenvalue below `-slack`.
fn ldlt_positive_semidefinite(a: &[f64], n: usize, slack: f64) -> bool {
    let mut m = a.to_vec();
    for i in 0..n {
        m[i * n + i] += slack;
    }
    let mut d = vec![0.0; n];
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut dj = m[j * n + j];
        for k in 0..j {
            dj -= l[j * n + k] * l[j * n + k] * d[k];
        }
        if dj < -1e-14 {
            return false;
        }
        d[j] = dj;
        for i in (j + 1)..n {
            if dj.abs() < 1e-300 {
                l[i * n + j] = 0.0;
                continue;
            }
            let mut v = m[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k] * d[k];
            }
            l[i * n + j] = v / dj;
        }
    }
    true
}

/// `Lambda(t, eta, p) = <kappa(t, eta), p> - 1/2 p' q(t) p`.
pub fn hamiltonian(hjb: &HjbCoefficients, t: f64, eta: &[f64], p: &[f64]) -> f64 {
    let n = hjb.n_slow();
    let mut kappa = vec![0.0; n];
    let mut q = vec![0.0; n * n];
    hjb.kappa_md(t, eta, &mut kappa);
    hjb.q(t, &mut q);
    let mut lin = 0.0;
    for i in 0..n {
        lin += kappa[i] * p[i];
    }
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += p[i] * q[i * n + j] * p[j];
        }
    }
    lin - 0.5 * quad
}

/// A classical subsolution candidate `U(t, eta)` for scalar `eta`, with its
/// analytic gradient, time derivative, and the terminal cost it is measured
/// against.
pub trait Subsolution: Send + Sync {
    fn value(&self, t: f64, eta: f64) -> f64;
    fn grad_eta(&self, t: f64, eta: f64) -> f64;
    fn dt_value(&self, t: f64, eta: f64) -> f64;
    fn terminal(&self) -> &TerminalCost;
    /// Interior points where the gradient jumps (mirror constructions);
    /// excluded from residual sweeps and hit with probability zero by the
    /// diffusion.
    fn kink_etas(&self) -> &[f64] {
        &[]
    }
    fn label(&self) -> &str;
}

/// The zero subsolution: always admissible for `H >= 0`, reproduces naive
/// Monte Carlo.
pub struct ZeroSubsolution {
    terminal: TerminalCost,
}

impl ZeroSubsolution {
    pub fn new(terminal: TerminalCost) -> Self {
        Self { terminal }
    }
}

impl Subsolution for ZeroSubsolution {
    fn value(&self, _t: f64, _eta: f64) -> f64 {
        0.0
    }
    fn grad_eta(&self, _t: f64, _eta: f64) -> f64 {
        0.0
    }
    fn dt_value(&self, _t: f64, _eta: f64) -> f64 {
        0.0
    }
    fn terminal(&self) -> &TerminalCost {
        &self.terminal
    }
    fn label(&self) -> &str {
        "zero"
    }
}

/// Drift coefficient `c(t)` together with its running integral.
#[derive(Clone, Debug)]
pub enum CPath {
    Constant(f64),
    Grid {
        c: GridFunction,
        integral: GridFunction,
    },
}

impl CPath {
    /// `c(t) = 6 Xbar(t)^2 - 2` along a one-dimensional averaged path, with
    /// the running integral accumulated by trapezoid on the path grid.
    pub fn from_averaged_path(path: &AveragedPath) -> Self {
        let xbar = path.as_grid_function();
        let c_values: Vec<f64> = xbar
            .values()
            .iter()
            .map(|&x| 6.0 * x * x - 2.0)
            .collect();
        let c = GridFunction::new(path.t0(), path.dt(), c_values);
        let integral = c.cumulative_integral();
        CPath::Grid { c, integral }
    }

    #[inline]
    pub fn c(&self, t: f64) -> f64 {
        match self {
            CPath::Constant(c0) => *c0,
            CPath::Grid { c, .. } => c.eval(t),
        }
    }

    /// The cumulative integral of `c` from the start of its grid (or from 0
    /// for a constant path).
    #[inline]
    pub fn integral(&self, t: f64) -> f64 {
        match self {
            CPath::Constant(c0) => c0 * t,
            CPath::Grid { integral, .. } => integral.eval(t),
        }
    }

    fn constant_value(&self) -> Result<f64, ControlError> {
        match self {
            CPath::Constant(c0) => Ok(*c0),
            CPath::Grid { c, .. } => {
                let first = c.values()[0];
                let spread = c
                    .values()
                    .iter()
                    .fold(0.0f64, |acc, &v| acc.max((v - first).abs()));
                if spread > 1e-10 {
                    Err(ControlError::NonConstantC { spread })
                } else {
                    Ok(first)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubsolutionVariant {
    /// Quadratic-over-exponential form valid for any `c(t)`; a strict
    /// subsolution whenever `c(t) > 1`.
    General,
    /// The exact solution of the constant-`c` equation (tighter denominator,
    /// zero residual); requires `c` constant, which holds when the averaged
    /// path sits at an equilibrium.
    ExactConstantC,
}

impl core::fmt::Display for SubsolutionVariant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SubsolutionVariant::General => write!(f, "general"),
            SubsolutionVariant::ExactConstantC => write!(f, "exact"),
        }
    }
}

/// Closed-form subsolution for the double-well HJB
/// `dU/dt - c(t) eta dU/deta - D |dU/deta|^2 = 0`, terminal `(gamma - eta)^2`.
///
/// General variant:
///
/// ```text
///     U(t, eta) = (gamma E_T - eta E_t)^2
///                 / ( -2D E_t^2 + (1 + 2D) E_T^2 ),     E_t = exp(int_0^t c)
/// ```
///
/// whose residual is `4 D E_t^2 (c(t) - 1) A^2 / g^2 >= 0` exactly when
/// `c >= 1`. Exact variant (constant `c`): the denominator
/// `-(2D/c) E_t^2 + (1 + 2D/c) E_T^2` makes the residual vanish identically.
/// Both variants meet the terminal cost with equality.
#[derive(Clone, Debug)]
pub struct Example12Subsolution {
    gamma: f64,
    d: f64,
    variant: SubsolutionVariant,
    c: CPath,
    /// `E_T = exp(int_0^T c)` (general) or `exp(c0 T)` (exact).
    e_t_end: f64,
    /// Constant value of `c` for the exact variant.
    c0: f64,
    terminal: TerminalCost,
}

/// Shared evaluation core so the sampler-grade mirror of this control
/// reproduces the same floating-point values operation for operation.
#[inline(always)]
pub(crate) fn quadratic_subsolution_parts(
    gamma_e_t_end: f64,
    e_t: f64,
    g_t: f64,
    eta: f64,
) -> (f64, f64) {
    let a = gamma_e_t_end - eta * e_t;
    let value = a * a / g_t;
    let grad = -2.0 * e_t * a / g_t;
    (value, grad)
}

impl Example12Subsolution {
    pub fn new(
        gamma: f64,
        d: f64,
        c: CPath,
        t_end: f64,
        variant: SubsolutionVariant,
    ) -> Result<Self, ControlError> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(ControlError::ParameterDomain {
                name: "D",
                value: d,
                constraint: "D > 0",
            });
        }
        if !(t_end > 0.0) {
            return Err(ControlError::ParameterDomain {
                name: "T",
                value: t_end,
                constraint: "T > 0",
            });
        }
        let c0 = match variant {
            SubsolutionVariant::ExactConstantC => c.constant_value()?,
            SubsolutionVariant::General => 0.0,
        };
        let e_t_end = match variant {
            SubsolutionVariant::General => math::exp(c.integral(t_end)),
            SubsolutionVariant::ExactConstantC => math::exp(c0 * t_end),
        };
        Ok(Self {
            gamma,
            d,
            variant,
            c,
            e_t_end,
            c0,
            terminal: TerminalCost::Quadratic { center: gamma },
        })
    }

    pub fn variant(&self) -> SubsolutionVariant {
        self.variant
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `(E_t, g(t))` of the active variant; exposed so the sampler control
    /// can precompute them on the simulation grid.
    pub fn time_factors(&self, t: f64) -> (f64, f64) {
        match self.variant {
            SubsolutionVariant::General => {
                let e_t = math::exp(self.c.integral(t));
                let g = -2.0 * self.d * e_t * e_t + (1.0 + 2.0 * self.d) * self.e_t_end * self.e_t_end;
                (e_t, g)
            }
            SubsolutionVariant::ExactConstantC => {
                let e_t = math::exp(self.c0 * t);
                let r = 2.0 * self.d / self.c0;
                let g = -r * e_t * e_t + (1.0 + r) * self.e_t_end * self.e_t_end;
                (e_t, g)
            }
        }
    }

    pub fn gamma_e_t_end(&self) -> f64 {
        self.gamma * self.e_t_end
    }
}

impl Subsolution for Example12Subsolution {
    fn value(&self, t: f64, eta: f64) -> f64 {
        let (e_t, g) = self.time_factors(t);
        quadratic_subsolution_parts(self.gamma_e_t_end(), e_t, g, eta).0
    }

    fn grad_eta(&self, t: f64, eta: f64) -> f64 {
        let (e_t, g) = self.time_factors(t);
        quadratic_subsolution_parts(self.gamma_e_t_end(), e_t, g, eta).1
    }

    fn dt_value(&self, t: f64, eta: f64) -> f64 {
        let (e_t, g) = self.time_factors(t);
        let a = self.gamma_e_t_end() - eta * e_t;
        let c_t = self.c.c(t);
        // d/dt of A^2/g with dE/dt = c E and the variant's g'(t).
        let g_prime = match self.variant {
            SubsolutionVariant::General => -4.0 * self.d * c_t * e_t * e_t,
            SubsolutionVariant::ExactConstantC => -4.0 * self.d * e_t * e_t,
        };
        ((-2.0 * eta * c_t * e_t) * a * g - a * a * g_prime) / (g * g)
    }

    fn terminal(&self) -> &TerminalCost {
        &self.terminal
    }

    fn label(&self) -> &str {
        match self.variant {
            SubsolutionVariant::General => "double-well-general",
            SubsolutionVariant::ExactConstantC => "double-well-exact",
        }
    }
}

/// Mirrored subsolution for the rough-potential HJB
/// `dG/dt - kappa eta dG/deta - kappa D |dG/deta|^2 = 0`: the minimum of the
/// two branch solutions
///
/// ```text
///     G(t, eta) = (beta e^(kappa T) -+ eta e^(kappa t))^2
///                 / ( -2D e^(2 kappa t) + (1 + 2D) e^(2 kappa T) )
/// ```
///
/// (upper sign for `eta >= 0`). Each branch solves the equation exactly;
/// the min construction leaves one gradient kink along `eta = 0`, which is
/// hit with probability zero, so no mollification is applied and the
/// `eta >= 0` branch is used on the interface. Terminal data is
/// `(|eta| - beta)^2`.
#[derive(Clone, Debug)]
pub struct Example3MdSubsolution {
    beta: f64,
    d: f64,
    kappa: f64,
    e_t_end: f64,
    terminal: TerminalCost,
    kinks: [f64; 1],
}

impl Example3MdSubsolution {
    pub fn new(beta: f64, d: f64, kappa: f64, t_end: f64) -> Result<Self, ControlError> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(ControlError::ParameterDomain {
                name: "beta",
                value: beta,
                constraint: "beta > 0",
            });
        }
        if !(d > 0.0) {
            return Err(ControlError::ParameterDomain {
                name: "D",
                value: d,
                constraint: "D > 0",
            });
        }
        Ok(Self {
            beta,
            d,
            kappa,
            e_t_end: math::exp(kappa * t_end),
            terminal: TerminalCost::FoldedQuadratic { root: beta },
            kinks: [0.0],
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `(e^(kappa t), g(t))`, shared with the sampler-grade control.
    pub fn time_factors(&self, t: f64) -> (f64, f64) {
        let e_t = math::exp(self.kappa * t);
        let g = -2.0 * self.d * e_t * e_t + (1.0 + 2.0 * self.d) * self.e_t_end * self.e_t_end;
        (e_t, g)
    }

    pub fn beta_e_t_end(&self) -> f64 {
        self.beta * self.e_t_end
    }
}

/// Active-branch evaluation used by both the subsolution and its sampler
/// mirror: fold to `|eta|`, evaluate the positive branch, restore the sign
/// on the gradient. `eta = 0` folds to the positive branch.
#[inline(always)]
pub(crate) fn mirrored_subsolution_parts(
    beta_e_t_end: f64,
    e_t: f64,
    g_t: f64,
    eta: f64,
) -> (f64, f64) {
    let sign = if eta < 0.0 { -1.0 } else { 1.0 };
    let folded = sign * eta;
    let (value, grad) = quadratic_subsolution_parts(beta_e_t_end, e_t, g_t, folded);
    (value, sign * grad)
}

impl Subsolution for Example3MdSubsolution {
    fn value(&self, t: f64, eta: f64) -> f64 {
        let (e_t, g) = self.time_factors(t);
        mirrored_subsolution_parts(self.beta_e_t_end(), e_t, g, eta).0
    }

    fn grad_eta(&self, t: f64, eta: f64) -> f64 {
        let (e_t, g) = self.time_factors(t);
        mirrored_subsolution_parts(self.beta_e_t_end(), e_t, g, eta).1
    }

    fn dt_value(&self, t: f64, eta: f64) -> f64 {
        let (e_t, g) = self.time_factors(t);
        let folded = math::abs(eta);
        let a = self.beta_e_t_end() - folded * e_t;
        let g_prime = -4.0 * self.kappa * self.d * e_t * e_t;
        ((-2.0 * folded * self.kappa * e_t) * a * g - a * a * g_prime) / (g * g)
    }

    fn terminal(&self) -> &TerminalCost {
        &self.terminal
    }

    fn kink_etas(&self) -> &[f64] {
        &self.kinks
    }

    fn label(&self) -> &str {
        "rough-potential-mirrored"
    }
}

/// `dU/dt + Lambda(t, eta, dU/deta)` at a point; nonnegative on the interior
/// is the subsolution property. Scalar slow states only.
pub fn subsolution_residual<S: Subsolution + ?Sized>(
    sub: &S,
    hjb: &HjbCoefficients,
    t: f64,
    eta: f64,
) -> f64 {
    debug_assert_eq!(hjb.n_slow(), 1);
    let p = sub.grad_eta(t, eta);
    sub.dt_value(t, eta) + hamiltonian(hjb, t, &[eta], &[p])
}

/// Numerical sweep report of the subsolution property.
#[derive(Clone, Debug)]
pub struct SubsolutionReport {
    pub min_residual: f64,
    pub argmin: (f64, f64),
    pub terminal_gap: f64,
    pub terminal_argmax: f64,
    /// Grid points skipped because they sit on a gradient kink.
    pub kinks_skipped: Vec<(f64, f64)>,
    pub tol: f64,
    pub pass: bool,
}

impl SubsolutionReport {
    /// Plain `key=value` lines, one per field.
    #[cfg(feature = "std")]
    pub fn to_key_values(&self) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "min_residual={:.16e}", self.min_residual);
        let _ = writeln!(s, "argmin_t={:.16e}", self.argmin.0);
        let _ = writeln!(s, "argmin_eta={:.16e}", self.argmin.1);
        let _ = writeln!(s, "terminal_gap={:.16e}", self.terminal_gap);
        let _ = writeln!(s, "terminal_argmax={:.16e}", self.terminal_argmax);
        let _ = writeln!(s, "kinks_skipped={}", self.kinks_skipped.len());
        let _ = writeln!(s, "tol={:.16e}", self.tol);
        let _ = writeln!(s, "pass={}", self.pass);
        s
    }
}

/// Sweeps the residual over `t_grid x eta_grid` (kink columns excluded and
/// reported separately) and the terminal gap `U(T, eta) - H(eta)` over
/// `eta_grid`; passes when the worst residual is above `-tol` and the worst
/// terminal gap below `tol`.
pub fn verify_subsolution<S: Subsolution + ?Sized>(
    sub: &S,
    hjb: &HjbCoefficients,
    t_grid: &[f64],
    eta_grid: &[f64],
    tol: f64,
) -> SubsolutionReport {
    debug_assert!(!t_grid.is_empty() && !eta_grid.is_empty());
    let t_end = t_grid[t_grid.len() - 1];
    let kinks = sub.kink_etas();
    let mut min_residual = f64::INFINITY;
    let mut argmin = (t_grid[0], eta_grid[0]);
    let mut skipped = Vec::new();
    for &t in t_grid {
        for &eta in eta_grid {
            if kinks.iter().any(|&k| (eta - k).abs() < 1e-12) {
                skipped.push((t, eta));
                continue;
            }
            let r = subsolution_residual(sub, hjb, t, eta);
            if r < min_residual {
                min_residual = r;
                argmin = (t, eta);
            }
        }
    }
    let mut terminal_gap = f64::NEG_INFINITY;
    let mut terminal_argmax = eta_grid[0];
    for &eta in eta_grid {
        let gap = sub.value(t_end, eta) - sub.terminal().eval(eta);
        if gap > terminal_gap {
            terminal_gap = gap;
            terminal_argmax = eta;
        }
    }
    let pass = min_residual >= -tol && terminal_gap <= tol;
    SubsolutionReport {
        min_residual,
        argmin,
        terminal_gap,
        terminal_argmax,
        kinks_skipped: skipped,
        tol,
        pass,
    }
}

/// `n` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    debug_assert!(n >= 2);
    let step = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { b } else { a + k as f64 * step })
        .collect()
}

/// The feedback control of a subsolution, `u = (-alpha1' grad U,
/// -alpha2' grad U)`, as a shareable callable pair.
///
/// A zero subsolution yields the identically zero control: naive Monte
/// Carlo under the same driving noise.
pub struct FeedbackControl {
    u: Box<dyn Fn(f64, f64, f64) -> (f64, f64) + Send + Sync>,
    label: String,
}

impl FeedbackControl {
    pub fn new(u: Box<dyn Fn(f64, f64, f64) -> (f64, f64) + Send + Sync>, label: String) -> Self {
        Self { u, label }
    }

    #[inline]
    pub fn eval(&self, t: f64, eta: f64, y: f64) -> (f64, f64) {
        (self.u)(t, eta, y)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Builds the feedback control from a subsolution and an HJB binding that
/// share the same averaged-path binding.
pub fn md_feedback_control(
    sub: Arc<dyn Subsolution>,
    hjb: Arc<HjbCoefficients>,
) -> FeedbackControl {
    debug_assert_eq!(hjb.n_slow(), 1);
    debug_assert_eq!(hjb.n_wiener(), 1);
    let label = alloc::format!("md-feedback({})", sub.label());
    FeedbackControl::new(
        Box::new(move |t, eta, y| {
            let p = sub.grad_eta(t, eta);
            let mut a1 = [0.0];
            let mut a2 = [0.0];
            hjb.alpha1(t, &[y], &mut a1);
            hjb.alpha2(t, &[y], &mut a2);
            (-a1[0] * p, -a2[0] * p)
        }),
        label,
    )
}

/// Closed-form large-deviations drift tilt for the rough-potential system:
///
/// ```text
///     u_LD(t, x) = -sqrt(2D) (2 pi / Lhat) e^(Q(x/delta)/D)
///                  * (-+ 2 e^(kappa t) (e^(kappa T) -+ x e^(kappa t)))
///                  / ( -2D e^(2 kappa t) + (1 + 2D) e^(2 kappa T) )
/// ```
///
/// (upper signs for `x > 0`; the `x > 0` branch is used at `x = 0`).
pub fn example3_ld_control(
    t: f64,
    x: f64,
    delta: f64,
    constants: &RoughPotentialConstants,
    d: f64,
    t_end: f64,
) -> f64 {
    let kappa = constants.kappa_hom;
    let e_t = math::exp(kappa * t);
    let e_t_end = math::exp(kappa * t_end);
    let g = -2.0 * d * e_t * e_t + (1.0 + 2.0 * d) * e_t_end * e_t_end;
    let factor = math::sqrt(2.0 * d)
        * (2.0 * core::f64::consts::PI / constants.l_hat)
        * math::exp(rough_potential(x / delta) / d);
    let ratio = if x >= 0.0 {
        -2.0 * e_t * (e_t_end - x * e_t) / g
    } else {
        2.0 * e_t * (e_t_end + x * e_t) / g
    };
    -factor * ratio
}
