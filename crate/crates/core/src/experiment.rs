//! Ready-to-run bindings of the three bundled studies.
//!
//! * Example 1 — double-well slow-fast pair, payoff `exp(-h^2 (eta_T - 3)^2)`
//!   from the equilibrium start `(x0, y0) = (-1, 0)`.
//! * Example 2 — same dynamics, but the target is the large-deviations
//!   functional `exp(-(x_T - 1)^2 / eps)` re-expressed through the
//!   fluctuation variable: the terminal cost becomes
//!   `(eta - (1 - xbar_T)/beta)^2`.
//! * Example 3 — overdamped motion in a rough periodic potential, target
//!   `exp(-R(x_T)/eps)` with `R` the squared distance to the nearest of the
//!   two cost minima at -1 and +1; both a moderate-deviations control and
//!   the closed-form large-deviations control are available.
//!
//! A [`ExperimentSpec`] carries every knob (with paper defaults); `prepare`
//! assembles model, averaged path, subsolution, control, and payoff, and
//! `run` produces the estimator output. The subsolution bindings used by
//! the samplers can also be swept numerically through
//! [`verify_subsolution_binding`].

use alloc::string::String;
use alloc::string::ToString;
use alloc::sync::Arc;

use crate::averaging::{
    averaged_drift_example1, rough_potential_constants, solve_averaged_ode, AveragedPath,
    AveragingError, RoughPotentialConstants,
};
use crate::control::{
    linspace, verify_subsolution, CPath, ControlError, Example12Subsolution,
    Example3MdSubsolution, HjbCoefficients, Subsolution, SubsolutionReport, SubsolutionVariant,
    TerminalCost,
};
use crate::model::{
    time_step, Example1Model, Example3Model, ModelError, Regime, ScalingParams,
};
use crate::sampler::{
    estimate, DoubleWellStepControl, EstimateOptions, EstimatorOutput, MethodTag,
    PeriodicTable, RoughPotentialStepControl, SamplerError, SamplerInputs, SimGrid, ZeroControl,
};

pub use crate::sampler::MethodTag as Method;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExampleId {
    One,
    Two,
    Three,
}

impl core::fmt::Display for ExampleId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ExampleId::One => write!(f, "1"),
            ExampleId::Two => write!(f, "2"),
            ExampleId::Three => write!(f, "3"),
        }
    }
}

impl core::str::FromStr for ExampleId {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(ExampleId::One),
            "2" => Ok(ExampleId::Two),
            "3" => Ok(ExampleId::Three),
            other => Err(ExperimentError::Config(alloc::format!(
                "unknown example `{other}` (expected 1, 2 or 3)"
            ))),
        }
    }
}

impl core::str::FromStr for MethodTag {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nmc" => Ok(MethodTag::Nmc),
            "md" => Ok(MethodTag::Md),
            "ld" => Ok(MethodTag::Ld),
            other => Err(ExperimentError::Config(alloc::format!(
                "unknown method `{other}` (expected nmc, md or ld)"
            ))),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ExperimentError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Averaging(#[from] AveragingError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Full description of one estimation run.
#[derive(Clone, Copy, Debug)]
pub struct ExperimentSpec {
    pub example: ExampleId,
    pub method: Method,
    pub epsilon: f64,
    pub delta: f64,
    pub h_exponent: f64,
    pub d: f64,
    pub t_end: f64,
    pub x0: f64,
    pub y0: f64,
    /// Center of the quadratic terminal cost; `None` uses the example's
    /// own value (3 for Example 1, `(1 - xbar_T)/beta` for Example 2).
    pub gamma_target: Option<f64>,
    pub n_samples: u64,
    pub base_seed: u64,
    pub workers: usize,
    /// `None` picks the exact-solution variant at an equilibrium start and
    /// the general one otherwise.
    pub variant: Option<SubsolutionVariant>,
    /// `None` infers Regime 2 on the proportional path `eps = delta` and
    /// Regime 1 otherwise.
    pub regime: Option<Regime>,
}

impl ExperimentSpec {
    /// Paper-scale defaults of the bundled studies.
    pub fn defaults(example: ExampleId, method: Method, epsilon: f64, delta: f64) -> Self {
        let (h_exponent, x0, n_samples) = match example {
            ExampleId::One => (0.45, -1.0, 2_500_000),
            ExampleId::Two => (0.4, -1.0, 2_500_000),
            ExampleId::Three => (0.4, 0.0, 5_000_000),
        };
        let gamma_target = match example {
            ExampleId::One => Some(3.0),
            _ => None,
        };
        Self {
            example,
            method,
            epsilon,
            delta,
            h_exponent,
            d: 1.0,
            t_end: 1.0,
            x0,
            y0: 0.0,
            gamma_target,
            n_samples,
            base_seed: 0,
            workers: 1,
            variant: None,
            regime: None,
        }
    }

    pub fn regime(&self) -> Regime {
        self.regime.unwrap_or_else(|| infer_regime(self.epsilon, self.delta))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.method == Method::Ld && self.example != ExampleId::Three {
            return Err(ExperimentError::Config(
                "method `ld` is only available for example 3: the rough-potential system is the \
                 one with a closed-form large-deviations subsolution, the double-well system's \
                 large-deviations HJB would need a numerical solver"
                    .to_string(),
            ));
        }
        if self.example == ExampleId::Three
            && self.method != Method::Nmc
            && self.x0 != 0.0
        {
            return Err(ExperimentError::Config(alloc::format!(
                "the rough-potential controls are derived for the start x0 = 0 at the confining \
                 minimum; got x0 = {}",
                self.x0
            )));
        }
        if !(self.t_end > 0.0) {
            return Err(ExperimentError::Config(alloc::format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        Ok(())
    }

    fn scaling(&self) -> Result<ScalingParams, ExperimentError> {
        let regime = self.regime();
        Ok(match self.method {
            Method::Ld => ScalingParams::ld_embedding(self.epsilon, self.delta)?,
            _ => ScalingParams::new(self.epsilon, self.delta, self.h_exponent, regime)?,
        })
    }
}

/// Regime 2 on the proportional path `eps = delta`, Regime 1 otherwise.
pub fn infer_regime(epsilon: f64, delta: f64) -> Regime {
    if (epsilon / delta - 1.0).abs() < 1e-12 {
        Regime::Two
    } else {
        Regime::One
    }
}

/// `(x - 1)^2`: the smooth target cost of Example 2.
pub fn quadratic_target_cost(x: f64) -> f64 {
    let d = x - 1.0;
    d * d
}

/// Squared distance to the nearest of the two cost minima at -1 and +1:
/// the piecewise target cost of Example 3 (`x = 0` belongs to the positive
/// branch).
pub fn nearest_well_target_cost(x: f64) -> f64 {
    let d = if x >= 0.0 { x - 1.0 } else { x + 1.0 };
    d * d
}

/// Terminal cost on the fluctuation variable equivalent to
/// `exp(-quadratic_target_cost(x_T)/eps)`.
pub fn double_well_ld_terminal(x_bar_t: f64, beta: f64) -> TerminalCost {
    TerminalCost::Quadratic {
        center: (1.0 - x_bar_t) / beta,
    }
}

/// Terminal cost on the fluctuation variable equivalent to
/// `exp(-nearest_well_target_cost(x_T)/eps)`.
pub fn rough_ld_terminal(x_bar_t: f64, beta: f64) -> TerminalCost {
    TerminalCost::PiecewiseQuadratic {
        boundary: -x_bar_t / beta,
        pos_root: (1.0 - x_bar_t) / beta,
        neg_root: -(1.0 + x_bar_t) / beta,
    }
}

enum ModelBinding {
    DoubleWell(Example1Model),
    Rough(Example3Model),
}

enum ControlBinding {
    Zero(ZeroControl),
    DoubleWell(DoubleWellStepControl),
    Rough(RoughPotentialStepControl),
}

/// A fully assembled run: model, scaling, averaged path, payoff, control.
pub struct PreparedExperiment {
    pub scaling: ScalingParams,
    pub regime: Regime,
    pub averaged: AveragedPath,
    pub terminal: TerminalCost,
    /// Center of the quadratic terminal cost, where one exists.
    pub gamma: Option<f64>,
    pub variant: Option<SubsolutionVariant>,
    pub constants: Option<RoughPotentialConstants>,
    pub y0: f64,
    model: ModelBinding,
    control: ControlBinding,
}

/// Default quadrature resolution for the homogenization constants.
pub const CONSTANTS_NODES: usize = 4096;

/// Picks the exact-solution subsolution at an equilibrium start (constant
/// drift coefficient) and the general form otherwise.
fn auto_variant(x0: f64) -> SubsolutionVariant {
    if (x0.abs() - 1.0).abs() < 1e-12 {
        SubsolutionVariant::ExactConstantC
    } else {
        SubsolutionVariant::General
    }
}

pub fn prepare(spec: &ExperimentSpec) -> Result<PreparedExperiment, ExperimentError> {
    spec.validate()?;
    let scaling = spec.scaling()?;
    let regime = spec.regime();
    let dt = time_step(&scaling);
    let beta = scaling.beta();

    match spec.example {
        ExampleId::One | ExampleId::Two => {
            let model = Example1Model::new(spec.d)?;
            let averaged = solve_averaged_ode(
                |x, out| out[0] = averaged_drift_example1(x[0]),
                &[spec.x0],
                0.0,
                spec.t_end,
                dt,
                "double-well-averaged",
            )?;
            let x_bar_t = averaged.value1_at(spec.t_end);
            let gamma = spec.gamma_target.unwrap_or(match spec.example {
                ExampleId::One => 3.0,
                _ => (1.0 - x_bar_t) / beta,
            });
            let terminal = TerminalCost::Quadratic { center: gamma };
            let (control, variant) = match spec.method {
                Method::Nmc => (ControlBinding::Zero(ZeroControl), None),
                Method::Md => {
                    let variant = spec.variant.unwrap_or_else(|| auto_variant(spec.x0));
                    let sub = Example12Subsolution::new(
                        gamma,
                        spec.d,
                        CPath::from_averaged_path(&averaged),
                        spec.t_end,
                        variant,
                    )?;
                    let grid = SimGrid::new(&scaling, 0.0, spec.t_end);
                    (
                        ControlBinding::DoubleWell(DoubleWellStepControl::new(
                            &sub, spec.d, regime, &grid,
                        )),
                        Some(variant),
                    )
                }
                Method::Ld => unreachable!("validated above"),
            };
            Ok(PreparedExperiment {
                scaling,
                regime,
                averaged,
                terminal,
                gamma: Some(gamma),
                variant,
                constants: None,
                y0: spec.y0,
                model: ModelBinding::DoubleWell(model),
                control,
            })
        }
        ExampleId::Three => {
            let model = Example3Model::new(spec.d)?;
            let constants = rough_potential_constants(spec.d, CONSTANTS_NODES)?;
            let kappa = constants.kappa_hom;
            let averaged = solve_averaged_ode(
                |x, out| out[0] = -kappa * x[0],
                &[spec.x0],
                0.0,
                spec.t_end,
                dt,
                "rough-homogenized",
            )?;
            let x_bar_t = averaged.value1_at(spec.t_end);
            let terminal = rough_ld_terminal(x_bar_t, beta);
            let control = match spec.method {
                Method::Nmc => ControlBinding::Zero(ZeroControl),
                Method::Md | Method::Ld => {
                    let sub = Example3MdSubsolution::new(beta, spec.d, kappa, spec.t_end)?;
                    let grid = SimGrid::new(&scaling, 0.0, spec.t_end);
                    ControlBinding::Rough(RoughPotentialStepControl::new(
                        &sub,
                        spec.d,
                        constants.l_hat,
                        &grid,
                        PeriodicTable::DEFAULT_LOG2_NODES,
                    ))
                }
            };
            Ok(PreparedExperiment {
                scaling,
                regime,
                averaged,
                terminal,
                gamma: None,
                variant: None,
                constants: Some(constants),
                y0: spec.x0 / spec.delta,
                model: ModelBinding::Rough(model),
                control,
            })
        }
    }
}

impl PreparedExperiment {
    pub fn estimate(&self, opts: &EstimateOptions) -> Result<EstimatorOutput, ExperimentError> {
        macro_rules! dispatch {
            ($model:expr, $control:expr) => {{
                let inputs = SamplerInputs {
                    model: $model,
                    scaling: &self.scaling,
                    control: $control,
                    averaged: &self.averaged,
                    terminal: &self.terminal,
                    y0: self.y0,
                };
                Ok(estimate(&inputs, opts)?)
            }};
        }
        match (&self.model, &self.control) {
            (ModelBinding::DoubleWell(m), ControlBinding::Zero(c)) => dispatch!(m, c),
            (ModelBinding::DoubleWell(m), ControlBinding::DoubleWell(c)) => dispatch!(m, c),
            (ModelBinding::Rough(m), ControlBinding::Zero(c)) => dispatch!(m, c),
            (ModelBinding::Rough(m), ControlBinding::Rough(c)) => dispatch!(m, c),
            _ => Err(ExperimentError::Config(
                "model/control binding mismatch".to_string(),
            )),
        }
    }
}

/// Outcome of a full run, with the scale constants the result tables report.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub output: EstimatorOutput,
    pub regime: Regime,
    pub eps_over_delta: f64,
    /// `j1` in Regime 1, `j2` in Regime 2.
    pub j_value: f64,
    pub variant: Option<SubsolutionVariant>,
}

pub fn run(spec: &ExperimentSpec) -> Result<RunResult, ExperimentError> {
    let prepared = prepare(spec)?;
    let opts = EstimateOptions {
        n_samples: spec.n_samples,
        base_seed: spec.base_seed,
        workers: spec.workers,
        method_tag: spec.method,
    };
    let output = prepared.estimate(&opts)?;
    let derived = prepared.scaling.derived();
    let j_value = match prepared.regime {
        Regime::One => derived.j1,
        Regime::Two => derived.j2.unwrap_or(0.0),
    };
    Ok(RunResult {
        output,
        regime: prepared.regime,
        eps_over_delta: spec.epsilon / spec.delta,
        j_value,
        variant: prepared.variant,
    })
}

/// Verification-grade binding of a study's subsolution and HJB coefficients.
pub struct VerificationBinding {
    pub subsolution: Arc<dyn Subsolution>,
    pub hjb: Arc<HjbCoefficients>,
    pub variant: Option<SubsolutionVariant>,
    pub gamma: Option<f64>,
}

pub fn verification_binding(spec: &ExperimentSpec) -> Result<VerificationBinding, ExperimentError> {
    let scaling = spec.scaling()?;
    let beta = scaling.beta();
    let dt = time_step(&scaling);
    match spec.example {
        ExampleId::One | ExampleId::Two => {
            let averaged = solve_averaged_ode(
                |x, out| out[0] = averaged_drift_example1(x[0]),
                &[spec.x0],
                0.0,
                spec.t_end,
                dt,
                "double-well-averaged",
            )?;
            let x_bar_t = averaged.value1_at(spec.t_end);
            let gamma = spec.gamma_target.unwrap_or(match spec.example {
                ExampleId::One => 3.0,
                _ => (1.0 - x_bar_t) / beta,
            });
            let variant = spec.variant.unwrap_or_else(|| auto_variant(spec.x0));
            let c_path = CPath::from_averaged_path(&averaged);
            let sub =
                Example12Subsolution::new(gamma, spec.d, c_path.clone(), spec.t_end, variant)?;
            let hjb = HjbCoefficients::example12(spec.d, spec.regime(), c_path);
            Ok(VerificationBinding {
                subsolution: Arc::new(sub),
                hjb: Arc::new(hjb),
                variant: Some(variant),
                gamma: Some(gamma),
            })
        }
        ExampleId::Three => {
            let constants = rough_potential_constants(spec.d, CONSTANTS_NODES)?;
            let sub =
                Example3MdSubsolution::new(beta, spec.d, constants.kappa_hom, spec.t_end)?;
            let hjb = HjbCoefficients::example3(spec.d, &constants);
            Ok(VerificationBinding {
                subsolution: Arc::new(sub),
                hjb: Arc::new(hjb),
                variant: None,
                gamma: None,
            })
        }
    }
}

/// Sweeps the study's subsolution binding on the default verification grid
/// (201 x 201 nodes on `[0, T] x [-10, 10]`, tolerance 1e-8).
pub fn verify_subsolution_binding(
    spec: &ExperimentSpec,
) -> Result<SubsolutionReport, ExperimentError> {
    let binding = verification_binding(spec)?;
    let t_grid = linspace(0.0, spec.t_end, 201);
    let eta_grid = linspace(-10.0, 10.0, 201);
    Ok(verify_subsolution(
        binding.subsolution.as_ref(),
        binding.hjb.as_ref(),
        &t_grid,
        &eta_grid,
        1e-8,
    ))
}
