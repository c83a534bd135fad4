//! Controlled trajectory simulation and the unbiased estimator.
//!
//! Under the tilted measure the pair solves
//!
//! ```text
//!     dX = [ (eps/delta) b + c + sqrt(eps) h sigma u1 ] dt + sqrt(eps) sigma dW
//!     dY = (1/delta) [ (eps/delta) f + g + sqrt(eps) h (tau1 u1 + tau2 u2) ] dt
//!          + (sqrt(eps)/delta) [ tau1 dW + tau2 dB ]
//! ```
//!
//! and each trajectory accumulates the log likelihood ratio of the original
//! measure against the simulation measure. The change of measure is defined
//! through the driving noise by
//! `dP~/dP = exp( -h^2/2 int |u|^2 ds + h int <u, dZ> )` with `Z = (W, B)`
//! the original Brownian pair; re-expressed in the increments actually drawn
//! under the simulation measure this gives per Euler step
//!
//! ```text
//!     log_weight += -h^2/2 |u|^2 dt - h ( <u1, dW> + <u2, dB> )
//! ```
//!
//! and the payoff `exp(-h^2 H(eta_T) + log_weight)` is unbiased for
//! `E[exp(-h^2 H(eta_T))]` whatever the control. With Gaussian increments
//! the weight is a martingale step for step, exactly, not just in the limit.
//!
//! Reproducibility: trajectory `j` draws from an RNG stream keyed by
//! `(base_seed, j)`, payoffs are Kahan-accumulated in index order within
//! fixed chunks, and chunk partials merge in chunk order, so the estimate is
//! bit-identical for any worker count.
//!
//! The engine integrates the scalar-slow configuration (`n_slow = n_wiener
//! = 1`, one fast coordinate or an embedded one); coefficient bundles of
//! other shapes are still validated by the model layer but are rejected
//! here.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::averaging::AveragedPath;
use crate::control::TerminalCost;
use crate::control::{mirrored_subsolution_parts, quadratic_subsolution_parts};
use crate::control::{Example12Subsolution, Example3MdSubsolution};
use crate::math;
use crate::model::{FastKind, MultiscaleModel, Regime, ScalingParams};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SamplerError {
    #[error("estimator needs at least two samples, got {0}")]
    TooFewSamples(u64),
    #[error("all {0} trajectories left the finite range; the step size or model is wrong")]
    AllTrajectoriesBlewUp(u64),
    #[error(
        "unsupported coefficient shapes (n_slow={n_slow}, n_fast={n_fast}, n_wiener={n_wiener}); \
         the engine integrates scalar-slow systems"
    )]
    UnsupportedShape {
        n_slow: usize,
        n_fast: usize,
        n_wiener: usize,
    },
}

/// Which estimator a result belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodTag {
    Nmc,
    Md,
    Ld,
}

impl core::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MethodTag::Nmc => write!(f, "nmc"),
            MethodTag::Md => write!(f, "md"),
            MethodTag::Ld => write!(f, "ld"),
        }
    }
}

/// Result of one controlled trajectory.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryOutcome {
    /// Terminal value of the rescaled fluctuation `(X_T - Xbar_T)/beta`.
    pub eta_t: f64,
    /// Accumulated log Radon-Nikodym derivative `log(dP/dP~)`.
    pub log_weight: f64,
    /// `exp(-h^2 H(eta_T) + log_weight)`, or 0 for a diverged path.
    pub payoff: f64,
    pub blew_up: bool,
}

/// Aggregated estimator statistics.
#[derive(Clone, Debug)]
pub struct EstimatorOutput {
    pub n_samples: u64,
    /// Sample mean of the payoffs.
    pub theta_hat: f64,
    /// Unbiased sample variance of the payoffs.
    pub var_hat: f64,
    /// `sqrt(var_hat) / theta_hat`: the N-independent efficiency measure.
    pub rel_err_per_sample: f64,
    /// `sqrt(var_hat / N)`.
    pub std_error: f64,
    pub seed: u64,
    pub method_tag: MethodTag,
    pub n_blowups: u64,
}

impl EstimatorOutput {
    /// Second moment `var_hat + theta_hat^2` of a single payoff.
    pub fn second_moment(&self) -> f64 {
        self.var_hat + self.theta_hat * self.theta_hat
    }
}

/// `eta = (x - xbar) / beta` componentwise.
#[inline]
pub fn md_process_value(x: f64, x_bar: f64, beta: f64) -> f64 {
    (x - x_bar) / beta
}

/// Evaluates both sides of the payoff-identity
/// `exp(-R(x_T)/eps) = exp(-h^2 H(eta_T))` that converts a cost on the
/// original state into the rescaled terminal cost. The identity is
/// algebraic (`beta^2 = eps h^2`), not statistical.
pub fn md_ld_payoff_identity<R: Fn(f64) -> f64>(
    x_t: f64,
    x_bar_t: f64,
    scaling: &ScalingParams,
    r: R,
    h: &TerminalCost,
) -> (f64, f64) {
    let lhs = math::exp(-r(x_t) / scaling.epsilon);
    let eta = md_process_value(x_t, x_bar_t, scaling.beta());
    let rhs = math::exp(-scaling.h() * scaling.h() * h.eval(eta));
    (lhs, rhs)
}

/// Dense lookup table of a `2 pi`-periodic function with linear
/// interpolation.
///
/// With `2^13` nodes the interpolation error of the smooth coefficients it
/// is used for is below `1e-7` absolute, orders of magnitude under the
/// Euler discretization bias at the bundled step sizes; the win is that a
/// lookup costs a few flops while `sin`/`cos`/`exp` would dominate the
/// whole step.
#[derive(Clone, Debug)]
pub struct PeriodicTable {
    scale: f64,
    mask: usize,
    data: Vec<f64>,
}

impl PeriodicTable {
    pub const DEFAULT_LOG2_NODES: u32 = 13;

    pub fn build<F: Fn(f64) -> f64>(f: F, log2_nodes: u32) -> Self {
        let n = 1usize << log2_nodes;
        let step = 2.0 * core::f64::consts::PI / n as f64;
        let mut data = Vec::with_capacity(n + 1);
        for k in 0..n {
            data.push(f(k as f64 * step));
        }
        data.push(data[0]);
        Self {
            scale: n as f64 / (2.0 * core::f64::consts::PI),
            mask: n - 1,
            data,
        }
    }

    #[inline(always)]
    pub fn eval(&self, y: f64) -> f64 {
        let u = y * self.scale;
        let fl = math::floor(u);
        // Two's-complement wrap makes the bitmask a correct periodic index
        // for negative arguments as well.
        let idx = (fl as i64 as usize) & self.mask;
        let frac = u - fl;
        let a = self.data[idx];
        let b = self.data[idx + 1];
        a + frac * (b - a)
    }
}

/// Per-step control evaluated on the simulation grid.
///
/// `k` is the step index; time-only factors are precomputed per grid so the
/// per-step cost is a couple of multiplies. Implementations are pure and
/// shared across workers.
pub trait StepControl: Send + Sync {
    /// Statically zero controls let the kernels skip the tilt and weight
    /// arithmetic altogether.
    const IS_ZERO: bool = false;

    fn eval(&self, k: usize, t: f64, eta: f64, y: f64) -> (f64, f64);

    /// Lane-batched evaluation used by the stepping kernels; overriding it
    /// lets a control load its per-step factors once per step instead of
    /// once per lane. Must agree with `eval` lane for lane.
    #[inline]
    fn eval_batch(
        &self,
        k: usize,
        t: f64,
        eta: &[f64],
        y: &[f64],
        u1: &mut [f64],
        u2: &mut [f64],
    ) {
        for l in 0..eta.len() {
            let (a, b) = self.eval(k, t, eta[l], y[l]);
            u1[l] = a;
            u2[l] = b;
        }
    }
}

/// Naive Monte Carlo: no tilt, unit weight.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroControl;

impl StepControl for ZeroControl {
    const IS_ZERO: bool = true;

    #[inline(always)]
    fn eval(&self, _k: usize, _t: f64, _eta: f64, _y: f64) -> (f64, f64) {
        (0.0, 0.0)
    }
}

/// Adapter driving an arbitrary verification-grade [`FeedbackControl`]
/// through the sampler; used by tests and for user-supplied controls.
///
/// [`FeedbackControl`]: crate::control::FeedbackControl
pub struct FeedbackStepControl {
    inner: crate::control::FeedbackControl,
}

impl FeedbackStepControl {
    pub fn new(inner: crate::control::FeedbackControl) -> Self {
        Self { inner }
    }
}

impl StepControl for FeedbackStepControl {
    #[inline]
    fn eval(&self, _k: usize, t: f64, eta: f64, y: f64) -> (f64, f64) {
        self.inner.eval(t, eta, y)
    }
}

/// Sampler-grade mirror of the double-well feedback control
/// `u = (-sqrt(2D) dU/deta, -alpha2 dU/deta)` with the subsolution's
/// time factors frozen on the simulation grid. Evaluates the same
/// floating-point expressions as the subsolution it was built from.
pub struct DoubleWellStepControl {
    sqrt_2d: f64,
    alpha2: f64,
    gamma_e_t_end: f64,
    e: Vec<f64>,
    g: Vec<f64>,
}

impl DoubleWellStepControl {
    pub fn new(sub: &Example12Subsolution, d: f64, regime: Regime, grid: &SimGrid) -> Self {
        let alpha2 = match regime {
            Regime::One => 0.0,
            Regime::Two => 1.0,
        };
        let mut e = Vec::with_capacity(grid.n_steps + 1);
        let mut g = Vec::with_capacity(grid.n_steps + 1);
        for k in 0..=grid.n_steps {
            let (e_k, g_k) = sub.time_factors(grid.time(k));
            e.push(e_k);
            g.push(g_k);
        }
        Self {
            sqrt_2d: math::sqrt(2.0 * d),
            alpha2,
            gamma_e_t_end: sub.gamma_e_t_end(),
            e,
            g,
        }
    }
}

impl StepControl for DoubleWellStepControl {
    #[inline(always)]
    fn eval(&self, k: usize, _t: f64, eta: f64, _y: f64) -> (f64, f64) {
        let (_, grad) = quadratic_subsolution_parts(self.gamma_e_t_end, self.e[k], self.g[k], eta);
        (-self.sqrt_2d * grad, -self.alpha2 * grad)
    }
}

/// Sampler-grade mirror of the rough-potential control
/// `u1 = -sqrt(2D) (2 pi/Lhat) e^(Q(y)/D) dG/deta`, with the corrector
/// factor tabulated and the branch handled branch-free through the fold in
/// [`mirrored_subsolution_parts`]. The large-deviations scheme is the same
/// control at `beta = 1`.
pub struct RoughPotentialStepControl {
    sqrt_2d: f64,
    beta_e_t_end: f64,
    e: Vec<f64>,
    g: Vec<f64>,
    corrector: PeriodicTable,
}

impl RoughPotentialStepControl {
    pub fn new(
        sub: &Example3MdSubsolution,
        d: f64,
        l_hat: f64,
        grid: &SimGrid,
        log2_nodes: u32,
    ) -> Self {
        let mut e = Vec::with_capacity(grid.n_steps + 1);
        let mut g = Vec::with_capacity(grid.n_steps + 1);
        for k in 0..=grid.n_steps {
            let (e_k, g_k) = sub.time_factors(grid.time(k));
            e.push(e_k);
            g.push(g_k);
        }
        let two_pi_over_lhat = 2.0 * core::f64::consts::PI / l_hat;
        let corrector = PeriodicTable::build(
            |y| two_pi_over_lhat * math::exp(crate::model::rough_potential(y) / d),
            log2_nodes,
        );
        Self {
            sqrt_2d: math::sqrt(2.0 * d),
            beta_e_t_end: sub.beta_e_t_end(),
            e,
            g,
            corrector,
        }
    }
}

impl StepControl for RoughPotentialStepControl {
    #[inline(always)]
    fn eval(&self, k: usize, _t: f64, eta: f64, y: f64) -> (f64, f64) {
        let (_, grad) = mirrored_subsolution_parts(self.beta_e_t_end, self.e[k], self.g[k], eta);
        (-self.sqrt_2d * self.corrector.eval(y) * grad, 0.0)
    }

    #[inline]
    fn eval_batch(
        &self,
        k: usize,
        _t: f64,
        eta: &[f64],
        y: &[f64],
        u1: &mut [f64],
        u2: &mut [f64],
    ) {
        let e_t = self.e[k];
        let g_t = self.g[k];
        for l in 0..eta.len() {
            // same expression order as `mirrored_subsolution_parts`, with
            // the time factors hoisted out of the lane loop
            let sign = if eta[l] < 0.0 { -1.0 } else { 1.0 };
            let folded = sign * eta[l];
            let a = self.beta_e_t_end - folded * e_t;
            let grad = sign * (-2.0 * e_t * a / g_t);
            u1[l] = -self.sqrt_2d * self.corrector.eval(y[l]) * grad;
            u2[l] = 0.0;
        }
    }
}

/// Uniform simulation grid with the last step truncated so the final node
/// lands exactly on `t_end` (the payoff is a terminal functional).
#[derive(Clone, Debug)]
pub struct SimGrid {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl SimGrid {
    pub fn new(scaling: &ScalingParams, t0: f64, t_end: f64) -> Self {
        let dt = crate::model::time_step(scaling);
        let n_steps = crate::model::step_count(scaling, t0, t_end);
        Self {
            t0,
            t_end,
            dt,
            n_steps,
        }
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt
        }
    }

    #[inline]
    pub fn dt_at(&self, k: usize) -> f64 {
        if k + 1 == self.n_steps {
            self.t_end - self.time(k)
        } else {
            self.dt
        }
    }
}

/// Everything a trajectory kernel needs, prepared once per estimate.
pub struct SamplerInputs<'a, M: MultiscaleModel, C: StepControl> {
    pub model: &'a M,
    pub scaling: &'a ScalingParams,
    pub control: &'a C,
    pub averaged: &'a AveragedPath,
    pub terminal: &'a TerminalCost,
    /// Initial fast state (ignored for homogenization-embedded models,
    /// where `y = x/delta` by definition).
    pub y0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EstimateOptions {
    pub n_samples: u64,
    pub base_seed: u64,
    pub workers: usize,
    pub method_tag: MethodTag,
}

struct Prepared {
    grid: SimGrid,
    /// Averaged path at every step node (exact node reads; the final node
    /// interpolates/clamps onto `t_end`).
    xbar: Vec<f64>,
    /// Rough-drift table for embedded models.
    qp_table: Option<PeriodicTable>,
    x0: f64,
}

fn prepare<M: MultiscaleModel, C: StepControl>(
    inputs: &SamplerInputs<'_, M, C>,
) -> Result<Prepared, SamplerError> {
    let m = inputs.model;
    let shapes_ok = m.n_slow() == 1
        && m.n_wiener() == 1
        && (m.n_fast() == 1 || m.fast_kind() == FastKind::HomogenizationEmbedded);
    if !shapes_ok {
        return Err(SamplerError::UnsupportedShape {
            n_slow: m.n_slow(),
            n_fast: m.n_fast(),
            n_wiener: m.n_wiener(),
        });
    }
    let grid = SimGrid::new(inputs.scaling, inputs.averaged.t0(), inputs.averaged.t_end());
    let n_nodes = inputs.averaged.n_nodes();
    let mut xbar = Vec::with_capacity(grid.n_steps + 1);
    for k in 0..=grid.n_steps {
        if k < n_nodes {
            xbar.push(inputs.averaged.node(k)[0]);
        } else {
            xbar.push(inputs.averaged.value1_at(grid.time(k)));
        }
    }
    // The embedded kind means diffusion in a (2 pi)-periodic rough landscape:
    // `b` depends on the fast coordinate alone, which is what makes the
    // drift tabulable once per run.
    let qp_table = if m.fast_kind() == FastKind::HomogenizationEmbedded {
        Some(PeriodicTable::build(
            |y| {
                let mut out = [0.0];
                m.drift_b(&[0.0], &[y], &mut out);
                out[0]
            },
            PeriodicTable::DEFAULT_LOG2_NODES,
        ))
    } else {
        None
    };
    Ok(Prepared {
        grid,
        xbar,
        qp_table,
        x0: inputs.averaged.node(0)[0],
    })
}

/// SplitMix64 step, the recommended seeder for the xoshiro family.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG stream for trajectory `j`: a xoshiro256++ generator whose 256-bit
/// state is expanded by SplitMix64 from the key `(base_seed, j)`. The draw
/// sequence of any trajectory depends only on that key, never on worker
/// count or on other trajectories.
#[inline]
pub fn trajectory_rng(base_seed: u64, index: u64) -> Xoshiro256PlusPlus {
    let mut index_state = index;
    let mut key = base_seed ^ splitmix64(&mut index_state);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut key).to_le_bytes());
    }
    Xoshiro256PlusPlus::from_seed(seed)
}

#[inline(always)]
fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Trajectories advanced in lockstep through one stepping loop.
///
/// A single trajectory is a long dependency chain (each state update waits
/// on the previous one), so the core sits mostly idle on it; interleaving
/// independent trajectories fills the pipeline. Every lane still owns its
/// own RNG stream, so per-trajectory results are bit-identical whatever the
/// block size.
const LANES: usize = 16;

/// Diverged lanes are not branched out of the block: IEEE non-finite states
/// absorb (NaN propagates through every update and the periodic-table index
/// saturates harmlessly), the lane keeps drawing its noise, and the payoff
/// is zeroed at the end. This keeps every lane's draw count fixed and the
/// step loop branch-free.
struct LaneBlock<R> {
    x: [f64; LANES],
    y: [f64; LANES],
    log_weight: [f64; LANES],
    rngs: [R; LANES],
    active: usize,
}

impl LaneBlock<Xoshiro256PlusPlus> {
    fn new(pre: &Prepared, y0: f64, base_seed: u64, first: u64, active: usize) -> Self {
        debug_assert!(active >= 1 && active <= LANES);
        Self {
            x: [pre.x0; LANES],
            y: [y0; LANES],
            log_weight: [0.0; LANES],
            rngs: core::array::from_fn(|l| {
                trajectory_rng(base_seed, first + (l as u64).min(active as u64 - 1))
            }),
            active,
        }
    }
}

/// Explicit-fast kernel: both coordinates integrated, two Brownian
/// increments per step per lane.
fn run_explicit<M: MultiscaleModel, C: StepControl, R: Rng>(
    model: &M,
    scaling: &ScalingParams,
    control: &C,
    pre: &Prepared,
    block: &mut LaneBlock<R>,
) {
    let eps = scaling.epsilon;
    let delta = scaling.delta;
    let h = scaling.h();
    let inv_beta = 1.0 / scaling.beta();
    let eod = eps / delta;
    let sqrt_eps = math::sqrt(eps);
    let tilt_slow = sqrt_eps * h;
    let inv_delta = 1.0 / delta;
    let fast_tilt = sqrt_eps * h * inv_delta;
    let fast_noise = sqrt_eps * inv_delta;
    let h2 = h * h;

    let grid = &pre.grid;
    let n_steps = grid.n_steps;
    let dt_main = grid.dt;
    let sqrt_dt_main = math::sqrt(dt_main);
    let dt_last = grid.dt_at(n_steps - 1);
    let sqrt_dt_last = math::sqrt(dt_last);
    let lanes = block.active;

    let (mut bv, mut cv, mut sv, mut fv, mut gv, mut t1v, mut t2v) =
        ([0.0], [0.0], [0.0], [0.0], [0.0], [0.0], [0.0]);
    let mut z1 = [0.0; LANES];
    let mut z2 = [0.0; LANES];
    let mut etas = [0.0; LANES];
    let mut u1s = [0.0; LANES];
    let mut u2s = [0.0; LANES];

    for k in 0..n_steps {
        let (dt, sqrt_dt) = if k + 1 == n_steps {
            (dt_last, sqrt_dt_last)
        } else {
            (dt_main, sqrt_dt_main)
        };
        let t_k = grid.time(k);
        let xbar_k = pre.xbar[k];
        for l in 0..lanes {
            z1[l] = normal(&mut block.rngs[l]);
            z2[l] = normal(&mut block.rngs[l]);
        }
        if !C::IS_ZERO {
            for l in 0..lanes {
                etas[l] = (block.x[l] - xbar_k) * inv_beta;
            }
            control.eval_batch(
                k,
                t_k,
                &etas[..lanes],
                &block.y[..lanes],
                &mut u1s[..lanes],
                &mut u2s[..lanes],
            );
        }
        for l in 0..lanes {
            let x = block.x[l];
            let y = block.y[l];
            let dw = sqrt_dt * z1[l];
            let db = sqrt_dt * z2[l];

            let xs = [x];
            let ys = [y];
            model.drift_b(&xs, &ys, &mut bv);
            model.drift_c(&xs, &ys, &mut cv);
            model.diffusion_sigma(&xs, &ys, &mut sv);
            model.drift_f(&xs, &ys, &mut fv);
            model.drift_g(&xs, &ys, &mut gv);
            model.diffusion_tau1(&xs, &ys, &mut t1v);
            model.diffusion_tau2(&xs, &ys, &mut t2v);

            let mut drift_x = eod * bv[0] + cv[0];
            let mut drift_y = inv_delta * (eod * fv[0] + gv[0]);

            if !C::IS_ZERO {
                let (u1, u2) = (u1s[l], u2s[l]);
                drift_x += tilt_slow * sv[0] * u1;
                drift_y += fast_tilt * (t1v[0] * u1 + t2v[0] * u2);
                block.log_weight[l] +=
                    -0.5 * h2 * (u1 * u1 + u2 * u2) * dt - h * (u1 * dw + u2 * db);
            }

            block.x[l] = x + drift_x * dt + sqrt_eps * sv[0] * dw;
            block.y[l] = y + drift_y * dt + fast_noise * (t1v[0] * dw + t2v[0] * db);
        }
    }
}

/// Homogenization-embedded kernel: only `x` is integrated, the fast
/// coordinate is `x/delta`, the rough drift comes from the periodic table,
/// one Brownian increment per step per lane.
fn run_embedded<M: MultiscaleModel, C: StepControl, R: Rng>(
    model: &M,
    scaling: &ScalingParams,
    control: &C,
    pre: &Prepared,
    block: &mut LaneBlock<R>,
) {
    let eps = scaling.epsilon;
    let delta = scaling.delta;
    let h = scaling.h();
    let inv_beta = 1.0 / scaling.beta();
    let eod = eps / delta;
    let sqrt_eps = math::sqrt(eps);
    let tilt_slow = sqrt_eps * h;
    let inv_delta = 1.0 / delta;
    let h2 = h * h;
    let qp = pre.qp_table.as_ref().expect("embedded models carry a drift table");

    let grid = &pre.grid;
    let n_steps = grid.n_steps;
    let dt_main = grid.dt;
    let sqrt_dt_main = math::sqrt(dt_main);
    let dt_last = grid.dt_at(n_steps - 1);
    let sqrt_dt_last = math::sqrt(dt_last);
    let lanes = block.active;

    let (mut cv, mut sv) = ([0.0], [0.0]);
    let mut z = [0.0; LANES];
    let mut ys = [0.0; LANES];
    let mut etas = [0.0; LANES];
    let mut u1s = [0.0; LANES];
    let mut u2s = [0.0; LANES];

    for k in 0..n_steps {
        let (dt, sqrt_dt) = if k + 1 == n_steps {
            (dt_last, sqrt_dt_last)
        } else {
            (dt_main, sqrt_dt_main)
        };
        let t_k = grid.time(k);
        let xbar_k = pre.xbar[k];
        for l in 0..lanes {
            z[l] = normal(&mut block.rngs[l]);
        }
        for l in 0..lanes {
            ys[l] = block.x[l] * inv_delta;
        }
        if !C::IS_ZERO {
            for l in 0..lanes {
                etas[l] = (block.x[l] - xbar_k) * inv_beta;
            }
            control.eval_batch(
                k,
                t_k,
                &etas[..lanes],
                &ys[..lanes],
                &mut u1s[..lanes],
                &mut u2s[..lanes],
            );
        }
        for l in 0..lanes {
            let x = block.x[l];
            let dw = sqrt_dt * z[l];
            let y = ys[l];
            let xs = [x];
            let yv = [y];
            model.drift_c(&xs, &yv, &mut cv);
            model.diffusion_sigma(&xs, &yv, &mut sv);

            let mut drift = eod * qp.eval(y) + cv[0];
            if !C::IS_ZERO {
                let u1 = u1s[l];
                drift += tilt_slow * sv[0] * u1;
                block.log_weight[l] += -0.5 * h2 * (u1 * u1) * dt - h * u1 * dw;
            }
            block.x[l] = x + drift * dt + sqrt_eps * sv[0] * dw;
        }
    }
}

fn finish(
    terminal: &TerminalCost,
    pre: &Prepared,
    scaling: &ScalingParams,
    x: f64,
    log_weight: f64,
) -> TrajectoryOutcome {
    if !x.is_finite() {
        return TrajectoryOutcome {
            eta_t: f64::NAN,
            log_weight,
            payoff: 0.0,
            blew_up: true,
        };
    }
    let h = scaling.h();
    let eta_t = (x - pre.xbar[pre.grid.n_steps]) / scaling.beta();
    let payoff = math::exp(-h * h * terminal.eval(eta_t) + log_weight);
    TrajectoryOutcome {
        eta_t,
        log_weight,
        payoff,
        blew_up: false,
    }
}

/// Runs trajectories `first .. first + active` in lockstep and reports their
/// outcomes in index order.
fn run_block<M: MultiscaleModel, C: StepControl>(
    inputs: &SamplerInputs<'_, M, C>,
    pre: &Prepared,
    base_seed: u64,
    first: u64,
    active: usize,
    out: &mut [TrajectoryOutcome; LANES],
) {
    let mut block = LaneBlock::new(pre, inputs.y0, base_seed, first, active);
    match inputs.model.fast_kind() {
        FastKind::ExplicitFastState => {
            run_explicit(inputs.model, inputs.scaling, inputs.control, pre, &mut block)
        }
        FastKind::HomogenizationEmbedded => {
            run_embedded(inputs.model, inputs.scaling, inputs.control, pre, &mut block)
        }
    }
    for l in 0..active {
        out[l] = finish(
            inputs.terminal,
            pre,
            inputs.scaling,
            block.x[l],
            block.log_weight[l],
        );
    }
}

/// Simulates the trajectory with index `index` of the stream family keyed
/// by `base_seed`; `estimate` aggregates exactly these outcomes (the lane
/// blocks it uses change nothing per trajectory).
pub fn simulate_trajectory<M: MultiscaleModel, C: StepControl>(
    inputs: &SamplerInputs<'_, M, C>,
    base_seed: u64,
    index: u64,
) -> Result<TrajectoryOutcome, SamplerError> {
    let pre = prepare(inputs)?;
    let mut out = [TrajectoryOutcome {
        eta_t: 0.0,
        log_weight: 0.0,
        payoff: 0.0,
        blew_up: false,
    }; LANES];
    run_block(inputs, &pre, base_seed, index, 1, &mut out);
    Ok(out[0])
}

/// Trajectories per accumulation chunk. Fixed so that the reduction order
/// (and therefore the estimate, bit for bit) is independent of the worker
/// count.
const CHUNK: u64 = 4096;

#[derive(Clone, Copy, Default)]
struct ChunkStats {
    sum: math::Kahan,
    sum_sq: math::Kahan,
    blowups: u64,
}

fn run_chunk<M: MultiscaleModel, C: StepControl>(
    inputs: &SamplerInputs<'_, M, C>,
    pre: &Prepared,
    base_seed: u64,
    range: core::ops::Range<u64>,
) -> ChunkStats {
    let mut stats = ChunkStats::default();
    let mut out = [TrajectoryOutcome {
        eta_t: 0.0,
        log_weight: 0.0,
        payoff: 0.0,
        blew_up: false,
    }; LANES];
    let mut j = range.start;
    while j < range.end {
        let active = ((range.end - j) as usize).min(LANES);
        run_block(inputs, pre, base_seed, j, active, &mut out);
        for o in &out[..active] {
            if o.blew_up {
                stats.blowups += 1;
            }
            stats.sum.add(o.payoff);
            stats.sum_sq.add(o.payoff * o.payoff);
        }
        j += active as u64;
    }
    stats
}

/// Runs `n_samples` independent trajectories and aggregates the unbiased
/// estimator with its variance statistics. Bit-reproducible for fixed
/// `(base_seed, n_samples)` across any worker count.
pub fn estimate<M: MultiscaleModel, C: StepControl>(
    inputs: &SamplerInputs<'_, M, C>,
    opts: &EstimateOptions,
) -> Result<EstimatorOutput, SamplerError> {
    if opts.n_samples < 2 {
        return Err(SamplerError::TooFewSamples(opts.n_samples));
    }
    let pre = prepare(inputs)?;
    let n = opts.n_samples;
    let n_chunks = n.div_ceil(CHUNK) as usize;
    let chunk_range = |c: usize| -> core::ops::Range<u64> {
        let start = c as u64 * CHUNK;
        start..(start + CHUNK).min(n)
    };

    let mut slots: Vec<Option<ChunkStats>> = vec![None; n_chunks];

    #[cfg(feature = "std")]
    {
        let workers = opts.workers.max(1).min(n_chunks.max(1));
        if workers > 1 {
            let mut handles_out: Vec<Vec<(usize, ChunkStats)>> = Vec::new();
            std::thread::scope(|scope| {
                let mut handles = Vec::with_capacity(workers);
                for w in 0..workers {
                    let pre_ref = &pre;
                    let inputs_ref = &*inputs;
                    handles.push(scope.spawn(move || {
                        let mut local = Vec::new();
                        let mut c = w;
                        while c < n_chunks {
                            local.push((
                                c,
                                run_chunk(inputs_ref, pre_ref, opts.base_seed, chunk_range(c)),
                            ));
                            c += workers;
                        }
                        local
                    }));
                }
                for handle in handles {
                    handles_out.push(handle.join().expect("sampler worker panicked"));
                }
            });
            for local in handles_out {
                for (c, stats) in local {
                    slots[c] = Some(stats);
                }
            }
        } else {
            for (c, slot) in slots.iter_mut().enumerate() {
                *slot = Some(run_chunk(inputs, &pre, opts.base_seed, chunk_range(c)));
            }
        }
    }

    #[cfg(not(feature = "std"))]
    {
        for (c, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run_chunk(inputs, &pre, opts.base_seed, chunk_range(c)));
        }
    }

    let mut sum = math::Kahan::new();
    let mut sum_sq = math::Kahan::new();
    let mut blowups = 0u64;
    for slot in slots {
        let stats = slot.expect("every chunk was scheduled");
        sum.merge(&stats.sum);
        sum_sq.merge(&stats.sum_sq);
        blowups += stats.blowups;
    }

    if blowups == n {
        return Err(SamplerError::AllTrajectoriesBlewUp(n));
    }

    let n_f = n as f64;
    let theta_hat = sum.value() / n_f;
    let var_hat = ((sum_sq.value() - n_f * theta_hat * theta_hat) / (n_f - 1.0)).max(0.0);
    let std_error = math::sqrt(var_hat / n_f);
    let rel_err_per_sample = math::sqrt(var_hat) / theta_hat;
    Ok(EstimatorOutput {
        n_samples: n,
        theta_hat,
        var_hat,
        rel_err_per_sample,
        std_error,
        seed: opts.base_seed,
        method_tag: opts.method_tag,
        n_blowups: blowups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::solve_averaged_ode;
    use crate::control::{CPath, SubsolutionVariant};
    use crate::model::Example1Model;
    use approx::assert_relative_eq;

    fn flat_path(x0: f64, dt: f64) -> AveragedPath {
        solve_averaged_ode(
            |x, out| out[0] = crate::averaging::averaged_drift_example1(x[0]),
            &[x0],
            0.0,
            1.0,
            dt,
            "double-well",
        )
        .unwrap()
    }

    fn example1_setup(
        eps: f64,
    ) -> (Example1Model, ScalingParams, AveragedPath, TerminalCost) {
        let model = Example1Model::new(1.0).unwrap();
        let scaling = ScalingParams::new(eps, eps, 0.45, Regime::Two).unwrap();
        let path = flat_path(-1.0, crate::model::time_step(&scaling));
        let terminal = TerminalCost::Quadratic { center: 3.0 };
        (model, scaling, path, terminal)
    }

    fn md_control(
        scaling: &ScalingParams,
        path: &AveragedPath,
        gamma: f64,
        d: f64,
    ) -> DoubleWellStepControl {
        let sub = Example12Subsolution::new(
            gamma,
            d,
            CPath::from_averaged_path(path),
            1.0,
            SubsolutionVariant::ExactConstantC,
        )
        .unwrap();
        let grid = SimGrid::new(scaling, 0.0, 1.0);
        DoubleWellStepControl::new(&sub, d, Regime::Two, &grid)
    }

    #[test]
    fn md_process_value_cases() {
        assert_eq!(md_process_value(1.0, 1.0, 0.5), 0.0);
        assert_relative_eq!(md_process_value(-0.8, -1.0, 0.5), 0.4, max_relative = 1e-15);
        // round trip
        let mut state = 13u64;
        for _ in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let x = ((state >> 11) as f64 / (1u64 << 53) as f64) * 6.0 - 3.0;
            let eta = md_process_value(x, -1.0, 0.7);
            let back = -1.0 + 0.7 * eta;
            assert!((back - x).abs() <= 1e-15 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn zero_control_has_unit_weight_and_matches_feedback_zero() {
        let (model, scaling, path, terminal) = example1_setup(0.5);
        let zero = ZeroControl;
        let inputs = SamplerInputs {
            model: &model,
            scaling: &scaling,
            control: &zero,
            averaged: &path,
            terminal: &terminal,
            y0: 0.0,
        };
        // feedback control of the zero subsolution, driven through the
        // generic adapter: same RNG stream must give the same path law
        // step for step.
        let hjb = alloc::sync::Arc::new(crate::control::HjbCoefficients::example12(
            1.0,
            Regime::Two,
            CPath::Constant(4.0),
        ));
        let sub = alloc::sync::Arc::new(crate::control::ZeroSubsolution::new(
            TerminalCost::Quadratic { center: 3.0 },
        ));
        let fb = FeedbackStepControl::new(crate::control::md_feedback_control(sub, hjb));
        let inputs_fb = SamplerInputs {
            model: &model,
            scaling: &scaling,
            control: &fb,
            averaged: &path,
            terminal: &terminal,
            y0: 0.0,
        };
        for j in 0..32 {
            let a = simulate_trajectory(&inputs, 42, j).unwrap();
            let b = simulate_trajectory(&inputs_fb, 42, j).unwrap();
            assert_eq!(a.log_weight, 0.0);
            assert!(!a.blew_up);
            assert_eq!(a.eta_t.to_bits(), b.eta_t.to_bits(), "trajectory {j}");
            assert_eq!(a.payoff.to_bits(), b.payoff.to_bits());
            assert_eq!(b.log_weight, 0.0);
        }
    }

    #[test]
    fn constant_control_single_step_weight() {
        // One-step run: log_weight = -h^2 c1^2 dt / 2 - h c1 dW with the
        // same dW the kernel drew.
        struct Const(f64);
        impl StepControl for Const {
            fn eval(&self, _k: usize, _t: f64, _eta: f64, _y: f64) -> (f64, f64) {
                (self.0, 0.0)
            }
        }
        let model = Example1Model::new(1.0).unwrap();
        // dt = 0.001 * delta^2/eps = 1e-3, so [0, 1e-3] is one step
        let scaling = ScalingParams::new(0.25, 0.5, 0.45, Regime::One).unwrap();
        let path = solve_averaged_ode(
            |x, out| out[0] = crate::averaging::averaged_drift_example1(x[0]),
            &[-1.0],
            0.0,
            1e-3,
            crate::model::time_step(&scaling),
            "one-step",
        )
        .unwrap();
        let terminal = TerminalCost::Zero;
        let c1 = 0.8;
        let control = Const(c1);
        let inputs = SamplerInputs {
            model: &model,
            scaling: &scaling,
            control: &control,
            averaged: &path,
            terminal: &terminal,
            y0: 0.0,
        };
        let out = simulate_trajectory(&inputs, 7, 3).unwrap();
        // replay the draw
        let mut rng = trajectory_rng(7, 3);
        let z1: f64 = rng.sample(StandardNormal);
        let _z2: f64 = rng.sample(StandardNormal);
        let dt = crate::model::time_step(&scaling);
        let h = scaling.h();
        let dw = dt.sqrt() * z1;
        let expected = -0.5 * h * h * c1 * c1 * dt - h * c1 * dw;
        assert_relative_eq!(out.log_weight, expected, max_relative = 1e-12);
    }

    #[test]
    fn estimate_equals_aggregated_single_trajectories() {
        let (model, scaling, path, terminal) = example1_setup(0.5);
        let control = md_control(&scaling, &path, 3.0, 1.0);
        let inputs = SamplerInputs {
            model: &model,
            scaling: &scaling,
            control: &control,
            averaged: &path,
            terminal: &terminal,
            y0: 0.0,
        };
        let n = 200u64;
        let opts = EstimateOptions {
            n_samples: n,
            base_seed: 9,
            workers: 1,
            method_tag: MethodTag::Md,
        };
        let agg = estimate(&inputs, &opts).unwrap();
        let mut sum = math::Kahan::new();
        for j in 0..n {
            sum.add(simulate_trajectory(&inputs, 9, j).unwrap().payoff);
        }
        assert_eq!(agg.theta_hat.to_bits(), (sum.value() / n as f64).to_bits());
    }

    #[cfg(feature = "std")]
    #[test]
    fn estimate_is_bitwise_deterministic_across_workers() {
        let (model, scaling, path, terminal) = example1_setup(0.5);
        let control = md_control(&scaling, &path, 3.0, 1.0);
        let inputs = SamplerInputs {
            model: &model,
            scaling: &scaling,
            control: &control,
            averaged: &path,
            terminal: &terminal,
            y0: 0.0,
        };
        let run = |workers: usize| {
            estimate(
                &inputs,
                &EstimateOptions {
                    n_samples: 10_000,
                    base_seed: 2024,
                    workers,
                    method_tag: MethodTag::Md,
                },
            )
            .unwrap()
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a.theta_hat.to_bits(), b.theta_hat.to_bits());
        assert_eq!(a.var_hat.to_bits(), b.var_hat.to_bits());
        assert_eq!(a.n_blowups, b.n_blowups);
    }

    #[test]
    fn trivial_payoff_under_zero_control_is_exactly_one() {
        let (model, scaling, path, _) = example1_setup(0.5);
        let terminal = TerminalCost::Zero;
        let control = ZeroControl;
        let inputs = SamplerInputs {
            model: &model,
            scaling: &scaling,
            control: &control,
            averaged: &path,
            terminal: &terminal,
            y0: 0.0,
        };
        let out = estimate(
            &inputs,
            &EstimateOptions {
                n_samples: 500,
                base_seed: 5,
                workers: 1,
                method_tag: MethodTag::Nmc,
            },
        )
        .unwrap();
        assert_eq!(out.theta_hat, 1.0);
        assert_eq!(out.var_hat, 0.0);
        assert_eq!(out.rel_err_per_sample, 0.0);
        assert_eq!(out.n_blowups, 0);
    }

    #[test]
    fn weight_mean_is_one_under_md_control() {
        // E[dP/dP~] = 1: run with H = 0 so the payoff is the weight itself.
        let (model, scaling, path, _) = example1_setup(0.5);
        let terminal = TerminalCost::Zero;
        let control = md_control(&scaling, &path, 3.0, 1.0);
        let inputs = SamplerInputs {
            model: &model,
            scaling: &scaling,
            control: &control,
            averaged: &path,
            terminal: &terminal,
            y0: 0.0,
        };
        let out = estimate(
            &inputs,
            &EstimateOptions {
                n_samples: 20_000,
                base_seed: 11,
                workers: 1,
                method_tag: MethodTag::Md,
            },
        )
        .unwrap();
        let gap = (out.theta_hat - 1.0).abs();
        assert!(
            gap <= 3.0 * out.std_error,
            "E[weight] = {} +- {}",
            out.theta_hat,
            out.std_error
        );
    }

    #[test]
    fn single_step_weight_martingale_by_quadrature() {
        // E_z[exp(-h^2 u^2 dt/2 - h u sqrt(dt) z)] = 1 exactly for z ~ N(0,1):
        // checked against Simpson quadrature of the Gaussian integral.
        for &(h, u, dt) in &[(1.866f64, 0.7f64, 5e-4f64), (3.0, -1.2, 1e-3), (10.0, 0.05, 1e-4)] {
            let integrand = |z: f64| {
                let w = -0.5 * h * h * u * u * dt - h * u * dt.sqrt() * z;
                w.exp() * (-0.5 * z * z).exp() / (2.0 * core::f64::consts::PI).sqrt()
            };
            let n = 20_000;
            let (a, b) = (-14.0f64, 14.0f64);
            let step = (b - a) / n as f64;
            let mut acc = 0.0;
            for k in 0..=n {
                let w = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * integrand(a + k as f64 * step);
            }
            let integral = acc * step / 3.0;
            assert!(
                (integral - 1.0).abs() <= 1e-10,
                "quadrature mean {integral} for (h={h}, u={u}, dt={dt})"
            );
        }
    }

    #[test]
    fn payoff_identity_is_algebraic() {
        // exp(-R(x)/eps) = exp(-h^2 H(eta)) with R(x) = (x-1)^2 and
        // H the image cost around xbar_T = -1.
        let scaling = ScalingParams::new(0.25, 0.1, 0.4, Regime::One).unwrap();
        let x_bar_t = -1.0;
        let gamma = (1.0 - x_bar_t) / scaling.beta();
        let h = TerminalCost::Quadratic { center: gamma };
        let r = |x: f64| (x - 1.0) * (x - 1.0);
        let (lhs, rhs) = md_ld_payoff_identity(1.0, x_bar_t, &scaling, r, &h);
        assert_eq!(lhs, 1.0);
        assert_eq!(rhs, 1.0);
        let (lhs, rhs) = md_ld_payoff_identity(-1.0, x_bar_t, &scaling, r, &h);
        assert_relative_eq!(lhs, (-16.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        let mut state = 17u64;
        for _ in 0..1000 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let x = ((state >> 11) as f64 / (1u64 << 53) as f64) * 6.0 - 3.0;
            let (lhs, rhs) = md_ld_payoff_identity(x, x_bar_t, &scaling, r, &h);
            assert!(
                (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()),
                "x = {x}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn blowups_are_counted_and_all_blowup_errors() {
        use crate::model::{ClosureModel, FastKind};
        // cubic explosion with a huge gain: diverges within a few steps
        let model = ClosureModel::new(
            1,
            1,
            1,
            FastKind::ExplicitFastState,
            alloc::boxed::Box::new(|_x, _y| alloc::vec![0.0]),
            alloc::boxed::Box::new(|x, _y| alloc::vec![1e8 * x[0] * x[0] * x[0] + 1e8]),
            alloc::boxed::Box::new(|_x, _y| alloc::vec![1.0]),
            alloc::boxed::Box::new(|_x, _y| alloc::vec![0.0]),
            alloc::boxed::Box::new(|_x, _y| alloc::vec![0.0]),
            alloc::boxed::Box::new(|_x, _y| alloc::vec![0.0]),
            alloc::boxed::Box::new(|_x, _y| alloc::vec![1.0]),
        )
        .unwrap();
        let scaling = ScalingParams::new(0.5, 0.5, 0.45, Regime::Two).unwrap();
        let path = solve_averaged_ode(|_x, out| out[0] = 0.0, &[1.0], 0.0, 1.0, 5e-4, "flat")
            .unwrap();
        let terminal = TerminalCost::Zero;
        let control = ZeroControl;
        let inputs = SamplerInputs {
            model: &model,
            scaling: &scaling,
            control: &control,
            averaged: &path,
            terminal: &terminal,
            y0: 0.0,
        };
        let out = simulate_trajectory(&inputs, 1, 0).unwrap();
        assert!(out.blew_up);
        assert_eq!(out.payoff, 0.0);
        let err = estimate(
            &inputs,
            &EstimateOptions {
                n_samples: 16,
                base_seed: 1,
                workers: 1,
                method_tag: MethodTag::Nmc,
            },
        )
        .unwrap_err();
        assert!(matches!(err, SamplerError::AllTrajectoriesBlewUp(16)));
    }

    #[test]
    fn rejects_unsupported_shapes() {
        use crate::model::{ClosureModel, FastKind};
        let model = ClosureModel::new(
            2,
            1,
            1,
            FastKind::ExplicitFastState,
            alloc::boxed::Box::new(|_x, _y| alloc::vec![0.0, 0.0]),
            alloc::boxed::Box::new(|_x, _y| alloc::vec![0.0, 0.0]),
            alloc::boxed::Box::new(|_x, _y| alloc::vec![1.0, 1.0]),
            alloc::boxed::Box::new(|_x, _y| alloc::vec![0.0]),
            alloc::boxed::Box::new(|_x, _y| alloc::vec![0.0]),
            alloc::boxed::Box::new(|_x, _y| alloc::vec![0.0]),
            alloc::boxed::Box::new(|_x, _y| alloc::vec![1.0]),
        )
        .unwrap();
        let scaling = ScalingParams::new(0.5, 0.5, 0.45, Regime::Two).unwrap();
        let path =
            solve_averaged_ode(|_x, out| out[0] = 0.0, &[0.0], 0.0, 1.0, 5e-4, "flat").unwrap();
        let terminal = TerminalCost::Zero;
        let control = ZeroControl;
        let inputs = SamplerInputs {
            model: &model,
            scaling: &scaling,
            control: &control,
            averaged: &path,
            terminal: &terminal,
            y0: 0.0,
        };
        assert!(matches!(
            simulate_trajectory(&inputs, 0, 0),
            Err(SamplerError::UnsupportedShape { .. })
        ));
    }

    #[test]
    fn estimator_identities() {
        let (model, scaling, path, terminal) = example1_setup(0.5);
        let control = md_control(&scaling, &path, 3.0, 1.0);
        let inputs = SamplerInputs {
            model: &model,
            scaling: &scaling,
            control: &control,
            averaged: &path,
            terminal: &terminal,
            y0: 0.0,
        };
        let out = estimate(
            &inputs,
            &EstimateOptions {
                n_samples: 5000,
                base_seed: 3,
                workers: 1,
                method_tag: MethodTag::Md,
            },
        )
        .unwrap();
        // rel_err_per_sample = sqrt(N) * (std_error / theta_hat)
        let lhs = out.rel_err_per_sample;
        let rhs = (out.n_samples as f64).sqrt() * out.std_error / out.theta_hat;
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        assert!(out.theta_hat >= 0.0);
        assert_relative_eq!(
            out.second_moment(),
            out.var_hat + out.theta_hat * out.theta_hat,
            max_relative = 1e-15
        );
    }

    #[test]
    fn periodic_table_accuracy_and_wraparound() {
        let table = PeriodicTable::build(crate::model::rough_potential_prime, 13);
        let mut state = 29u64;
        for _ in 0..10_000 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let y = ((state >> 11) as f64 / (1u64 << 53) as f64) * 400.0 - 200.0;
            let exact = crate::model::rough_potential_prime(y);
            let got = table.eval(y);
            assert!(
                (got - exact).abs() <= 2e-7,
                "table error {} at y = {y}",
                (got - exact).abs()
            );
        }
        // node values are exact
        assert_eq!(table.eval(0.0), crate::model::rough_potential_prime(0.0));
    }

    #[test]
    fn rough_step_control_matches_feedback_control() {
        let constants = crate::averaging::rough_potential_constants(1.0, 4096).unwrap();
        let beta = 0.25f64.powf(0.1);
        let sub = Example3MdSubsolution::new(beta, 1.0, constants.kappa_hom, 1.0).unwrap();
        let scaling = ScalingParams::new(0.25, 0.1, 0.4, Regime::One).unwrap();
        let grid = SimGrid::new(&scaling, 0.0, 1.0);
        let fast = RoughPotentialStepControl::new(&sub, 1.0, constants.l_hat, &grid, 13);
        let hjb = alloc::sync::Arc::new(crate::control::HjbCoefficients::example3(1.0, &constants));
        let slow = crate::control::md_feedback_control(
            alloc::sync::Arc::new(
                Example3MdSubsolution::new(beta, 1.0, constants.kappa_hom, 1.0).unwrap(),
            ),
            hjb,
        );
        let mut state = 41u64;
        for _ in 0..200 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let k = (state >> 33) as usize % grid.n_steps;
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let eta = ((state >> 11) as f64 / (1u64 << 53) as f64) * 6.0 - 3.0;
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let y = ((state >> 11) as f64 / (1u64 << 53) as f64) * 40.0 - 20.0;
            let (u1_fast, u2_fast) = fast.eval(k, grid.time(k), eta, y);
            let (u1_slow, u2_slow) = slow.eval(grid.time(k), eta, y);
            // table-resolution agreement: the corrector lookup carries ~1e-8
            assert!(
                (u1_fast - u1_slow).abs() <= 1e-6 * (1.0 + u1_slow.abs()),
                "{u1_fast} vs {u1_slow}"
            );
            assert_eq!(u2_fast, 0.0);
            assert_eq!(u2_slow, 0.0);
        }
    }

    #[test]
    fn double_well_step_control_matches_feedback_control_bitwise() {
        let scaling = ScalingParams::new(0.5, 0.5, 0.45, Regime::Two).unwrap();
        let path = flat_path(-1.0, crate::model::time_step(&scaling));
        let sub = Example12Subsolution::new(
            3.0,
            1.0,
            CPath::from_averaged_path(&path),
            1.0,
            SubsolutionVariant::ExactConstantC,
        )
        .unwrap();
        let grid = SimGrid::new(&scaling, 0.0, 1.0);
        let fast = DoubleWellStepControl::new(&sub, 1.0, Regime::Two, &grid);
        let hjb = alloc::sync::Arc::new(crate::control::HjbCoefficients::example12(
            1.0,
            Regime::Two,
            CPath::from_averaged_path(&path),
        ));
        let slow = crate::control::md_feedback_control(alloc::sync::Arc::new(sub), hjb);
        for k in [0usize, 1, 777, 1999] {
            for &eta in &[-4.0, -0.3, 0.0, 2.7] {
                let t = grid.time(k);
                let (a1, a2) = fast.eval(k, t, eta, 0.0);
                let (b1, b2) = slow.eval(t, eta, 0.0);
                assert_eq!(a1.to_bits(), b1.to_bits(), "k={k}, eta={eta}");
                assert_eq!(a2.to_bits(), b2.to_bits());
            }
        }
    }
}
