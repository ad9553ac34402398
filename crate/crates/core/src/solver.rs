//! Contraction construction for the mild equation.
//!
//! The solution map is
//!   Φ Y(t) = S(t)ξ + ∫_0^t S(t−s)[F1(Y(s)) + F2(s)] ds + ∫_0^t S(t−s)G(s) dW(s),
//! iterated on the ensemble norm
//!   ‖Y‖_{Ξ(S)} = [sup_{0<t≤S} t^{2(η−β)} E‖A^η Y(t)‖² + sup_{0≤t≤S} E‖A^β Y(t)‖²]^{1/2}
//! inside the ball max{sup t^{2(η−β)}E‖A^ηY‖², sup E‖A^βY‖²} ≤ κ².
//!
//! κ² = 2.02 max(C1, C2) where
//!   C1 = 1.01 [3ι_{η−β}² E‖A^βξ‖² + 6ι_η² ‖F2‖²_{F^{β,σ}} B(β,1−η)²],
//!   C2 = 1.01 [3ι_0² E‖A^βξ‖² + 6ι_β² ‖F2‖²_{F^{β,σ}} B(β,1−β)²],
//! and T_loc is the largest S ≤ T satisfying
//!   κ²/2 ≥ 3ι_θ²‖G‖²S^{1−2β}/(1−2θ) + 12ι_θ²c_{F1}²κ²B(1+2β−2η,1−2θ)S^{2(1+β−2η)}
//!          + 12ι_θ²E‖F1(0)‖²S^{2(1−β)}/(1−2θ)      for θ ∈ {η, β},
//!   1 > c_{F1}²[ι_η²B(1+2β−2η,1−2η) + ι_β²B(1+2β−2η,1−2β)]S^{2(1−η)}.
//!
//! Time stepping is a first-order exponential integrator: F1(Y) is frozen at
//! step left endpoints with exact per-mode weights (1−e^{−λΔ})/λ, F2 enters
//! through panel quadrature, and the stochastic convolution is sampled once
//! per realization and shared across Picard iterates.

use crate::convolution::{
    beta_function, convolution_panels, ConvolutionQuadrature, DETERMINISTIC_SELF_CHECK_TOL,
};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::holder::{weighted_holder_norm, ExponentSet, Trajectory};
use crate::noise::NoiseModel;
use crate::rng::{self, salt};
use crate::spectral::{semigroup_bound_constant, HVector, SpectralOperator};
use std::fmt;
use std::sync::Arc;

/// Grid resolution used when instance constants (‖F2‖, ‖G‖) are measured on
/// a reference discretization rather than supplied in closed form.
const REFERENCE_GRID_STEPS: usize = 256;

/// Relative bisection tolerance for the T_loc search.
const T_LOC_BISECTION_REL_TOL: f64 = 1e-10;

/// State-to-state drift nonlinearity in coefficient space.
pub trait Nonlinearity: Send + Sync {
    /// Writes F1(u) into `out`; slices have the operator dimension.
    fn apply_into(&self, u: &[f64], out: &mut [f64]);

    fn apply(&self, u: &HVector) -> HVector {
        let mut out = vec![0.0; u.dim()];
        self.apply_into(u.coeffs(), &mut out);
        HVector::new(out)
    }
}

/// F1 ≡ 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNonlinearity;

impl Nonlinearity for ZeroNonlinearity {
    fn apply_into(&self, _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// F1(u) = c u, Lipschitz with constant |c| whenever λ_min ≥ 1.
#[derive(Debug, Clone, Copy)]
pub struct LinearNonlinearity {
    pub c: f64,
}

impl Nonlinearity for LinearNonlinearity {
    fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(u) {
            *o = self.c * v;
        }
    }
}

/// F1 together with its declared constants.
#[derive(Clone)]
pub struct NonlinearitySpec {
    pub map: Arc<dyn Nonlinearity>,
    /// c_{F1} in ‖F1(x) − F1(y)‖ ≤ c_{F1} ‖A^η(x−y)‖.
    pub lipschitz: f64,
    /// E‖F1(0)‖².
    pub zero_second_moment: f64,
}

impl NonlinearitySpec {
    pub fn zero() -> Self {
        NonlinearitySpec {
            map: Arc::new(ZeroNonlinearity),
            lipschitz: 0.0,
            zero_second_moment: 0.0,
        }
    }

    pub fn linear(c: f64) -> Self {
        NonlinearitySpec {
            map: Arc::new(LinearNonlinearity { c }),
            lipschitz: c.abs(),
            zero_second_moment: 0.0,
        }
    }
}

impl fmt::Debug for NonlinearitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearitySpec")
            .field("lipschitz", &self.lipschitz)
            .field("zero_second_moment", &self.zero_second_moment)
            .finish_non_exhaustive()
    }
}

/// Scalar time profile used by forcing and coupling specifications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarProfile {
    Constant(f64),
    Affine { intercept: f64, slope: f64 },
    Sine { amplitude: f64, omega: f64 },
    /// scale · t^exponent with exponent ≥ 0.
    Power { scale: f64, exponent: f64 },
}

impl ScalarProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            ScalarProfile::Constant(c) => c,
            ScalarProfile::Affine { intercept, slope } => intercept + slope * t,
            ScalarProfile::Sine { amplitude, omega } => amplitude * (omega * t).sin(),
            ScalarProfile::Power { scale, exponent } => {
                if t == 0.0 && exponent == 0.0 {
                    scale
                } else {
                    scale * t.powf(exponent)
                }
            }
        }
    }

    pub fn scale(&self, c: f64) -> ScalarProfile {
        match *self {
            ScalarProfile::Constant(v) => ScalarProfile::Constant(c * v),
            ScalarProfile::Affine { intercept, slope } => {
                ScalarProfile::Affine { intercept: c * intercept, slope: c * slope }
            }
            ScalarProfile::Sine { amplitude, omega } => {
                ScalarProfile::Sine { amplitude: c * amplitude, omega }
            }
            ScalarProfile::Power { scale, exponent } => {
                ScalarProfile::Power { scale: c * scale, exponent }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = match *self {
            ScalarProfile::Constant(c) => c.is_finite(),
            ScalarProfile::Affine { intercept, slope } => {
                intercept.is_finite() && slope.is_finite()
            }
            ScalarProfile::Sine { amplitude, omega } => amplitude.is_finite() && omega.is_finite(),
            ScalarProfile::Power { scale, exponent } => {
                scale.is_finite() && exponent.is_finite() && exponent >= 0.0
            }
        };
        if finite {
            Ok(())
        } else {
            Err(Error::invalid("profile parameters must be finite (power exponent >= 0)"))
        }
    }
}

/// Forcing specification, materialized on each solve grid.
#[derive(Debug, Clone, PartialEq)]
pub enum F2Spec {
    Zero,
    /// F2(t) = t^{β−1} f(t) v.
    Singular { f: ScalarProfile, v: HVector },
    /// F2(t) = f(t) v, bounded up to t = 0.
    Bounded { f: ScalarProfile, v: HVector },
}

impl F2Spec {
    pub fn materialize(&self, grid: &TimeGrid, beta: f64, dim: usize) -> Result<Trajectory> {
        match self {
            F2Spec::Zero => Ok(Trajectory::zero(grid, dim)),
            F2Spec::Singular { f, v } => {
                let mut values = vec![HVector::zeros(dim)];
                for &t in &grid.times()[1..] {
                    values.push(v.scale(t.powf(beta - 1.0) * f.eval(t)));
                }
                Trajectory::new(grid.times().to_vec(), values, false)
            }
            F2Spec::Bounded { f, v } => {
                let values = grid.times().iter().map(|&t| v.scale(f.eval(t))).collect();
                Trajectory::new(grid.times().to_vec(), values, true)
            }
        }
    }

    pub fn scaled(&self, c: f64) -> F2Spec {
        match self {
            F2Spec::Zero => F2Spec::Zero,
            F2Spec::Singular { f, v } => F2Spec::Singular { f: *f, v: v.scale(c) },
            F2Spec::Bounded { f, v } => F2Spec::Bounded { f: *f, v: v.scale(c) },
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            F2Spec::Zero => None,
            F2Spec::Singular { v, .. } | F2Spec::Bounded { v, .. } => Some(v.dim()),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            F2Spec::Zero => Ok(()),
            F2Spec::Singular { f, .. } | F2Spec::Bounded { f, .. } => f.validate(),
        }
    }
}

/// Diffusion specification, materialized on each solve grid.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Zero,
    /// G(t) = g(t) ⟨·, e_1⟩_U φ.
    Separable { g: ScalarProfile, phi: HVector },
}

impl NoiseSpec {
    pub fn materialize(&self, grid: &TimeGrid, dim: usize) -> Result<NoiseModel> {
        match self {
            NoiseSpec::Zero => NoiseModel::separable(
                grid.times().to_vec(),
                vec![0.0; grid.len()],
                HVector::zeros(dim),
            ),
            NoiseSpec::Separable { g, phi } => NoiseModel::separable(
                grid.times().to_vec(),
                grid.times().iter().map(|&t| g.eval(t)).collect(),
                phi.clone(),
            ),
        }
    }

    pub fn scaled(&self, c: f64) -> NoiseSpec {
        match self {
            NoiseSpec::Zero => NoiseSpec::Zero,
            NoiseSpec::Separable { g, phi } => {
                NoiseSpec::Separable { g: *g, phi: phi.scale(c) }
            }
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            NoiseSpec::Zero => None,
            NoiseSpec::Separable { phi, .. } => Some(phi.dim()),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Zero => Ok(()),
            NoiseSpec::Separable { g, .. } => g.validate(),
        }
    }
}

/// Initial value ξ with E‖A^β ξ‖² available in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Deterministic(HVector),
    /// Independent Gaussian coefficients ξ_k ~ N(mean_k, sd_k²).
    GaussianModes { mean: HVector, sd: HVector },
}

impl InitialCondition {
    pub fn dim(&self) -> usize {
        match self {
            InitialCondition::Deterministic(v) => v.dim(),
            InitialCondition::GaussianModes { mean, .. } => mean.dim(),
        }
    }

    /// Realization r of ξ from the stream keyed (seed, realization, mode).
    pub fn sample(&self, seed: u64, r: usize) -> HVector {
        match self {
            InitialCondition::Deterministic(v) => v.clone(),
            InitialCondition::GaussianModes { mean, sd } => HVector::new(
                mean.coeffs()
                    .iter()
                    .zip(sd.coeffs())
                    .enumerate()
                    .map(|(k, (m, s))| {
                        m + s * rng::standard_normal(seed, salt::INITIAL, r as u64, k as u64, 0)
                    })
                    .collect(),
            ),
        }
    }

    /// E‖A^β ξ‖² = Σ_k λ_k^{2β}(mean_k² + sd_k²).
    pub fn beta_moment(&self, op: &SpectralOperator, beta: f64) -> Result<f64> {
        let (mean, sd): (&HVector, Option<&HVector>) = match self {
            InitialCondition::Deterministic(v) => (v, None),
            InitialCondition::GaussianModes { mean, sd } => (mean, Some(sd)),
        };
        if mean.dim() != op.dim() {
            return Err(Error::DimensionMismatch { expected: op.dim(), got: mean.dim() });
        }
        let mut total = 0.0;
        for (k, &lambda) in op.eigenvalues().iter().enumerate() {
            let m = mean.coeffs()[k];
            let s = sd.map_or(0.0, |v| v.coeffs()[k]);
            total += lambda.powf(2.0 * beta) * (m * m + s * s);
        }
        Ok(total)
    }

    pub fn scaled(&self, c: f64) -> InitialCondition {
        match self {
            InitialCondition::Deterministic(v) => InitialCondition::Deterministic(v.scale(c)),
            InitialCondition::GaussianModes { mean, sd } => InitialCondition::GaussianModes {
                mean: mean.scale(c),
                sd: sd.scale(c.abs()),
            },
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            InitialCondition::Deterministic(v) => {
                if v.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: v.dim() });
                }
            }
            InitialCondition::GaussianModes { mean, sd } => {
                if mean.dim() != dim || sd.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: mean.dim() });
                }
                if sd.coeffs().iter().any(|s| *s < 0.0) {
                    return Err(Error::invalid("initial-condition sds must be nonnegative"));
                }
            }
        }
        Ok(())
    }
}

/// One instance of the abstract problem dX + AX dt = [F1(X) + F2(t)]dt + G(t)dW.
#[derive(Clone)]
pub struct ProblemInstance {
    operator: SpectralOperator,
    f1: NonlinearitySpec,
    f2: F2Spec,
    noise: NoiseSpec,
    xi: InitialCondition,
    exponents: ExponentSet,
    horizon: f64,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("dim", &self.operator.dim())
            .field("f1", &self.f1)
            .field("f2", &self.f2)
            .field("noise", &self.noise)
            .field("xi", &self.xi)
            .field("exponents", &self.exponents)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl ProblemInstance {
    pub fn new(
        operator: SpectralOperator,
        f1: NonlinearitySpec,
        f2: F2Spec,
        noise: NoiseSpec,
        xi: InitialCondition,
        exponents: ExponentSet,
        horizon: f64,
    ) -> Result<Self> {
        let violations = exponents.violations();
        if !violations.is_empty() {
            return Err(Error::invalid(format!(
                "inadmissible exponents: {}",
                violations.join("; ")
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon must be positive and finite"));
        }
        if !(f1.lipschitz >= 0.0 && f1.zero_second_moment >= 0.0)
            || !f1.lipschitz.is_finite()
            || !f1.zero_second_moment.is_finite()
        {
            return Err(Error::invalid("F1 constants must be finite and nonnegative"));
        }
        f2.validate()?;
        noise.validate()?;
        let dim = operator.dim();
        if let Some(d) = f2.dim() {
            if d != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: d });
            }
        }
        if let Some(d) = noise.dim() {
            if d != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: d });
            }
        }
        xi.validate(dim)?;
        Ok(ProblemInstance { operator, f1, f2, noise, xi, exponents, horizon })
    }

    pub fn operator(&self) -> &SpectralOperator {
        &self.operator
    }

    pub fn f1(&self) -> &NonlinearitySpec {
        &self.f1
    }

    pub fn f2(&self) -> &F2Spec {
        &self.f2
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn xi(&self) -> &InitialCondition {
        &self.xi
    }

    pub fn exponents(&self) -> &ExponentSet {
        &self.exponents
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    /// Same problem with (F2, G, ξ) scaled; used by dependence experiments.
    pub fn with_scaled_data(&self, f2_c: f64, g_c: f64, xi_c: f64) -> ProblemInstance {
        ProblemInstance {
            f2: self.f2.scaled(f2_c),
            noise: self.noise.scaled(g_c),
            xi: self.xi.scaled(xi_c),
            ..self.clone()
        }
    }

    /// The four scalars driving κ and the T_loc inequalities. ξ and F1(0)
    /// moments are closed-form declarations; ‖F2‖ and ‖G‖ are measured on
    /// reference grids over [0, horizon].
    pub fn constant_bundle(&self) -> Result<ConstantBundle> {
        let beta = self.exponents.beta;
        let sigma = self.exponents.sigma;
        let xi_beta_sq = self.xi.beta_moment(&self.operator, beta)?;
        let f2_norm = match &self.f2 {
            F2Spec::Zero => 0.0,
            _ => {
                let grid = TimeGrid::graded(self.horizon, REFERENCE_GRID_STEPS, 2.0)?;
                let traj = self.f2.materialize(&grid, beta, self.dim())?;
                weighted_holder_norm(&traj, beta, sigma)?.norm
            }
        };
        let g_sup = match &self.noise {
            NoiseSpec::Zero => 0.0,
            _ => {
                let grid = TimeGrid::uniform(self.horizon, REFERENCE_GRID_STEPS)?;
                self.noise.materialize(&grid, self.dim())?.hs_norm_sup()
            }
        };
        Ok(ConstantBundle {
            xi_beta_sq,
            f1_zero_sq: self.f1.zero_second_moment,
            f2_norm,
            g_sup,
        })
    }

    /// Spot check of the declared Lipschitz constant on sampled pairs.
    pub fn spot_check_lipschitz(&self, n_pairs: usize, seed: u64) -> Result<()> {
        let ratio =
            empirical_lipschitz(self.f1.map.as_ref(), &self.operator, self.exponents.eta, n_pairs, seed)?;
        if ratio > self.f1.lipschitz * (1.0 + 1e-9) {
            return Err(Error::EstimateViolation(format!(
                "empirical Lipschitz ratio {ratio} exceeds declared {}",
                self.f1.lipschitz
            )));
        }
        Ok(())
    }
}

/// Scalars entering κ, C1, C2 and the T_loc conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantBundle {
    /// E‖A^β ξ‖².
    pub xi_beta_sq: f64,
    /// E‖F1(0)‖².
    pub f1_zero_sq: f64,
    /// ‖F2‖_{F^{β,σ}}.
    pub f2_norm: f64,
    /// sup_t ‖G(t)‖_{L2(U;H)}.
    pub g_sup: f64,
}

/// How κ² is fixed relative to C1 ∨ C2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaPolicy {
    /// κ² = 2.02 max(C1, C2): minimal slack over the strict inequality.
    Auto,
    /// Externally fixed κ² (e.g. sized for a whole ball of data); must still
    /// satisfy κ²/2 ≥ max(C1, C2).
    Fixed(f64),
}

/// Which T_loc condition is active at the selected time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindingCondition {
    /// θ = η moment inequality.
    EtaMoment,
    /// θ = β moment inequality.
    BetaMoment,
    /// The contraction factor reaching 1.
    Contraction,
    /// All conditions hold up to the horizon.
    Horizon,
}

/// Outcome of the local-time selection.
#[derive(Debug, Clone)]
pub struct TlocReport {
    pub kappa_sq: f64,
    pub c1: f64,
    pub c2: f64,
    pub t_loc: f64,
    pub contraction_factor: f64,
    pub binding: BindingCondition,
    pub constants: ConstantBundle,
}

/// Lipschitz factor of the Picard map: Φ is a contraction on Ξ(S) while this is below 1.
pub fn contraction_constant(c_f1: f64, exponents: &ExponentSet, s: f64) -> Result<f64> {
    let violations = exponents.violations();
    if !violations.is_empty() {
        return Err(Error::invalid(format!("inadmissible exponents: {}", violations.join("; "))));
    }
    if !(s > 0.0) {
        return Err(Error::invalid("contraction constant needs S > 0"));
    }
    let (eta, beta) = (exponents.eta, exponents.beta);
    let i_eta = semigroup_bound_constant(eta)?;
    let i_beta = semigroup_bound_constant(beta)?;
    let b_eta = beta_function(1.0 + 2.0 * beta - 2.0 * eta, 1.0 - 2.0 * eta)?;
    let b_beta = beta_function(1.0 + 2.0 * beta - 2.0 * eta, 1.0 - 2.0 * beta)?;
    Ok(c_f1 * c_f1 * (i_eta * i_eta * b_eta + i_beta * i_beta * b_beta)
        * s.powf(2.0 * (1.0 - eta)))
}

/// Exponent admissibility as a hard error.
pub fn validate_exponents(exponents: &ExponentSet) -> Result<()> {
    let violations = exponents.violations();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::invalid(violations.join("; ")))
    }
}

/// T_loc from explicitly supplied constants.
pub fn choose_t_loc_from_constants(
    exponents: &ExponentSet,
    c_f1: f64,
    horizon: f64,
    bundle: &ConstantBundle,
    policy: KappaPolicy,
) -> Result<TlocReport> {
    validate_exponents(exponents)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon must be positive and finite"));
    }
    let (eta, beta) = (exponents.eta, exponents.beta);
    let i_eta = semigroup_bound_constant(eta)?;
    let i_beta = semigroup_bound_constant(beta)?;
    let i_eb = semigroup_bound_constant(eta - beta)?;
    let b_beta_eta = beta_function(beta, 1.0 - eta)?;
    let b_beta_beta = beta_function(beta, 1.0 - beta)?;

    let c1 = 1.01
        * (3.0 * i_eb * i_eb * bundle.xi_beta_sq
            + 6.0 * i_eta * i_eta * bundle.f2_norm * bundle.f2_norm * b_beta_eta * b_beta_eta);
    let c2 = 1.01
        * (3.0 * bundle.xi_beta_sq
            + 6.0 * i_beta * i_beta * bundle.f2_norm * bundle.f2_norm * b_beta_beta * b_beta_beta);
    // With xi = 0 and F2 = 0 the minimal radius degenerates to zero, yet the
    // moment conditions still carry the noise and F1(0) terms; any positive
    // radius admits the fixed point, so size one from those scales at the
    // horizon.
    let degenerate_floor = |iota: f64, one_minus_two_theta: f64| -> f64 {
        let i2 = iota * iota;
        3.0 * i2 * bundle.g_sup * bundle.g_sup * horizon.powf(1.0 - 2.0 * beta)
            / one_minus_two_theta
            + 12.0 * i2 * bundle.f1_zero_sq * horizon.powf(2.0 * (1.0 - beta))
                / one_minus_two_theta
    };
    let kappa_sq = match policy {
        KappaPolicy::Auto => {
            let minimal = 2.02 * c1.max(c2);
            if minimal > 0.0 {
                minimal
            } else {
                2.02
                    * degenerate_floor(i_eta, 1.0 - 2.0 * eta)
                        .max(degenerate_floor(i_beta, 1.0 - 2.0 * beta))
            }
        }
        KappaPolicy::Fixed(k2) => {
            if !(k2 > 0.0 && k2.is_finite()) {
                return Err(Error::invalid("fixed kappa^2 must be positive"));
            }
            if k2 / 2.0 < c1.max(c2) {
                return Err(Error::invalid(format!(
                    "fixed kappa^2 = {k2} violates kappa^2/2 >= max(C1, C2) = {}",
                    c1.max(c2)
                )));
            }
            k2
        }
    };

    let b_mid_eta = beta_function(1.0 + 2.0 * beta - 2.0 * eta, 1.0 - 2.0 * eta)?;
    let b_mid_beta = beta_function(1.0 + 2.0 * beta - 2.0 * eta, 1.0 - 2.0 * beta)?;
    let g_sq = bundle.g_sup * bundle.g_sup;
    let c_sq = c_f1 * c_f1;

    let rhs = |iota: f64, one_minus_two_theta: f64, b_mid: f64, s: f64| -> f64 {
        let i2 = iota * iota;
        3.0 * i2 * g_sq * s.powf(1.0 - 2.0 * beta) / one_minus_two_theta
            + 12.0 * i2 * c_sq * kappa_sq * b_mid * s.powf(2.0 * (1.0 + beta - 2.0 * eta))
            + 12.0 * i2 * bundle.f1_zero_sq * s.powf(2.0 * (1.0 - beta)) / one_minus_two_theta
    };
    let contraction = |s: f64| -> f64 {
        c_sq * (i_eta * i_eta * b_mid_eta + i_beta * i_beta * b_mid_beta)
            * s.powf(2.0 * (1.0 - eta))
    };
    let feasible = |s: f64| -> bool {
        rhs(i_eta, 1.0 - 2.0 * eta, b_mid_eta, s) <= kappa_sq / 2.0
            && rhs(i_beta, 1.0 - 2.0 * beta, b_mid_beta, s) <= kappa_sq / 2.0
            && contraction(s) < 1.0
    };

    let t_loc;
    let binding;
    if feasible(horizon) {
        t_loc = horizon;
        binding = BindingCondition::Horizon;
    } else {
        // Every S-term vanishes as S -> 0, so a feasible point exists.
        if !feasible(horizon * 1e-15) {
            return Err(Error::ConvergenceFailure(
                "no feasible local time found near S = 0".into(),
            ));
        }
        let mut lo = horizon * 1e-15;
        let mut hi = horizon;
        while hi - lo > T_LOC_BISECTION_REL_TOL * hi {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        t_loc = lo;
        let half = kappa_sq / 2.0;
        let m_eta = (half - rhs(i_eta, 1.0 - 2.0 * eta, b_mid_eta, t_loc)) / half;
        let m_beta = (half - rhs(i_beta, 1.0 - 2.0 * beta, b_mid_beta, t_loc)) / half;
        let m_contr = 1.0 - contraction(t_loc);
        binding = if m_eta <= m_beta && m_eta <= m_contr {
            BindingCondition::EtaMoment
        } else if m_beta <= m_contr {
            BindingCondition::BetaMoment
        } else {
            BindingCondition::Contraction
        };
    }

    Ok(TlocReport {
        kappa_sq,
        c1,
        c2,
        t_loc,
        contraction_factor: contraction(t_loc),
        binding,
        constants: *bundle,
    })
}

/// T_loc for an instance, constants taken from its declarations.
pub fn choose_t_loc(instance: &ProblemInstance, policy: KappaPolicy) -> Result<TlocReport> {
    let bundle = instance.constant_bundle()?;
    choose_t_loc_from_constants(
        instance.exponents(),
        instance.f1().lipschitz,
        instance.horizon(),
        &bundle,
        policy,
    )
}

/// Max over sampled pairs of ‖F1(x)−F1(y)‖ / ‖A^η(x−y)‖.
///
/// Half the pairs are independent Gaussians, half are small perturbations
/// x, x + 1e-3 w to probe the local derivative; coincident pairs are skipped.
pub fn empirical_lipschitz(
    f1: &dyn Nonlinearity,
    op: &SpectralOperator,
    eta: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be >= 1"));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid("eta must lie in [0,1]"));
    }
    let dim = op.dim();
    let mut max_ratio = 0.0f64;
    let mut fx = vec![0.0; dim];
    let mut fy = vec![0.0; dim];
    for p in 0..n_pairs {
        let x: Vec<f64> = (0..dim)
            .map(|k| rng::standard_normal(seed, salt::LIPSCHITZ, p as u64, 0, k as u64))
            .collect();
        let y: Vec<f64> = if p % 2 == 0 {
            (0..dim)
                .map(|k| rng::standard_normal(seed, salt::LIPSCHITZ, p as u64, 1, k as u64))
                .collect()
        } else {
            x.iter()
                .enumerate()
                .map(|(k, v)| {
                    v + 1e-3 * rng::standard_normal(seed, salt::LIPSCHITZ, p as u64, 1, k as u64)
                })
                .collect()
        };
        let diff = HVector::new(x.iter().zip(&y).map(|(a, b)| a - b).collect());
        let denom = diff.graded_norm(op, eta)?;
        if denom < 1e-300 {
            continue;
        }
        f1.apply_into(&x, &mut fx);
        f1.apply_into(&y, &mut fy);
        let num: f64 = fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        max_ratio = max_ratio.max(num / denom);
    }
    Ok(max_ratio)
}

/// Ξ(S)-norm of an ensemble: ensemble means replace expectations, sups run
/// over the grid (the η part skips t = 0, where its weight vanishes).
pub fn xi_norm(
    ensemble: &Ensemble,
    op: &SpectralOperator,
    eta: f64,
    beta: f64,
) -> Result<f64> {
    if ensemble.dim() != op.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), got: ensemble.dim() });
    }
    if eta < beta {
        return Err(Error::invalid("xi norm needs eta >= beta"));
    }
    let pow_eta: Vec<f64> = op.eigenvalues().iter().map(|l| l.powf(2.0 * eta)).collect();
    let pow_beta: Vec<f64> = op.eigenvalues().iter().map(|l| l.powf(2.0 * beta)).collect();
    let (mean_eta, _) = ensemble
        .per_time_mean_se(|state| state.iter().zip(&pow_eta).map(|(x, l)| l * x * x).sum());
    let (mean_beta, _) = ensemble
        .per_time_mean_se(|state| state.iter().zip(&pow_beta).map(|(x, l)| l * x * x).sum());
    let times = ensemble.times();
    let mut sup_eta = 0.0f64;
    for j in 1..times.len() {
        sup_eta = sup_eta.max(times[j].powf(2.0 * (eta - beta)) * mean_eta[j]);
    }
    let sup_beta = mean_beta.iter().copied().fold(0.0, f64::max);
    Ok((sup_eta + sup_beta).sqrt())
}

/// How the Picard iteration is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PicardStart {
    /// Y_0(t) = S(t)ξ.
    SemigroupXi,
    /// Y_0 ≡ 0 (uniqueness-surrogate restarts).
    Zero,
}

/// Solve configuration.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub grid_steps: usize,
    pub n_realizations: usize,
    pub seed: u64,
    /// Picard stopping tolerance, relative to max(1, ‖iterate‖_Ξ).
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    /// Forwarded to Nemytskii-type nonlinearities at problem construction.
    pub collocation_points: Option<usize>,
    pub picard_start: PicardStart,
    /// Solve on [0, min(override, T_loc)] instead of [0, T_loc].
    pub t_loc_override: Option<f64>,
    pub kappa_policy: KappaPolicy,
}

impl SolverConfig {
    pub fn new(grid_steps: usize, n_realizations: usize, seed: u64) -> Self {
        SolverConfig {
            grid_steps,
            n_realizations,
            seed,
            picard_tol: 1e-6,
            picard_max_iters: 50,
            collocation_points: None,
            picard_start: PicardStart::SemigroupXi,
            t_loc_override: None,
            kappa_policy: KappaPolicy::Auto,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.grid_steps == 0 || self.n_realizations == 0 {
            return Err(Error::invalid("grid_steps and n_realizations must be >= 1"));
        }
        if !(self.picard_tol > 0.0) {
            return Err(Error::invalid("picard_tol must be positive"));
        }
        if self.picard_max_iters == 0 {
            return Err(Error::invalid("picard_max_iters must be >= 1"));
        }
        Ok(())
    }
}

/// Everything Φ needs besides the iterate: tables, forcing panels, initial
/// values, and the shared stochastic convolution.
pub struct PhiContext<'a> {
    instance: &'a ProblemInstance,
    grid: TimeGrid,
    w_g: &'a Ensemble,
    xi: Vec<HVector>,
    /// e^{−λ_k Δ_j}, steps × dim.
    decay: Vec<f64>,
    /// (1 − e^{−λ_k Δ_j})/λ_k, steps × dim.
    f1_weight: Vec<f64>,
    /// ∫_{t_j}^{t_{j+1}} e^{−λ_k(t_{j+1}−s)} F2_k(s) ds, steps × dim.
    f2_panel: Vec<f64>,
    /// e^{−λ_k t_j}, n_times × dim.
    semigroup: Vec<f64>,
}

impl<'a> PhiContext<'a> {
    pub fn new(instance: &'a ProblemInstance, w_g: &'a Ensemble, seed: u64) -> Result<Self> {
        let op = instance.operator();
        if w_g.dim() != op.dim() {
            return Err(Error::DimensionMismatch { expected: op.dim(), got: w_g.dim() });
        }
        let grid = TimeGrid::from_times(w_g.times().to_vec())?;
        let dim = op.dim();
        let beta = instance.exponents().beta;
        let f2_traj = instance.f2().materialize(&grid, beta, dim)?;

        let quad = ConvolutionQuadrature::for_beta(beta)?;
        let coarse = convolution_panels(op, &f2_traj, &quad)?;
        let fine = convolution_panels(op, &f2_traj, &quad.with_nodes_per_step(32)?)?;
        let scale = fine.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let disagreement = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if disagreement > DETERMINISTIC_SELF_CHECK_TOL * scale {
            return Err(Error::ConvergenceFailure(format!(
                "forcing panel quadrature disagreement {disagreement:.3e} at scale {scale:.3e}"
            )));
        }

        let steps = grid.steps();
        let mut decay = vec![0.0; steps * dim];
        let mut f1_weight = vec![0.0; steps * dim];
        for j in 0..steps {
            let dt = grid.step(j);
            for (k, &lambda) in op.eigenvalues().iter().enumerate() {
                decay[j * dim + k] = (-lambda * dt).exp();
                f1_weight[j * dim + k] = -(-lambda * dt).exp_m1() / lambda;
            }
        }
        let mut semigroup = vec![0.0; grid.len() * dim];
        for (j, &t) in grid.times().iter().enumerate() {
            for (k, &lambda) in op.eigenvalues().iter().enumerate() {
                semigroup[j * dim + k] = (-lambda * t).exp();
            }
        }
        let xi = (0..w_g.n_realizations()).map(|r| instance.xi().sample(seed, r)).collect();

        Ok(PhiContext {
            instance,
            grid,
            w_g,
            xi,
            decay,
            f1_weight,
            f2_panel: fine,
            semigroup,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn xi_sample(&self, r: usize) -> &HVector {
        &self.xi[r]
    }

    fn fill_phi(&self, r: usize, y_path: &[f64], out: &mut [f64]) {
        let dim = self.instance.dim();
        let steps = self.grid.steps();
        let xi = self.xi[r].coeffs();
        let w = self.w_g.path(r);
        out[..dim].copy_from_slice(xi);
        let mut conv = vec![0.0f64; dim];
        let mut f1_val = vec![0.0f64; dim];
        for j in 0..steps {
            self.instance.f1().map.apply_into(&y_path[j * dim..(j + 1) * dim], &mut f1_val);
            let base = j * dim;
            let next = (j + 1) * dim;
            for k in 0..dim {
                conv[k] = self.decay[base + k] * conv[k]
                    + f1_val[k] * self.f1_weight[base + k]
                    + self.f2_panel[base + k];
                out[next + k] = self.semigroup[next + k] * xi[k] + conv[k] + w[next + k];
            }
        }
    }

    fn fill_semigroup_start(&self, ensemble: &mut Ensemble) {
        let dim = self.instance.dim();
        let n_times = self.grid.len();
        let semigroup = &self.semigroup;
        let xi = &self.xi;
        ensemble.fill_paths(|r, path| {
            let coeffs = xi[r].coeffs();
            for j in 0..n_times {
                for k in 0..dim {
                    path[j * dim + k] = semigroup[j * dim + k] * coeffs[k];
                }
            }
        });
    }
}

/// One application of Φ to an ensemble of iterates.
pub fn phi_map(y: &Ensemble, ctx: &PhiContext<'_>) -> Result<Ensemble> {
    if y.times() != ctx.grid.times()
        || y.dim() != ctx.instance.dim()
        || y.n_realizations() != ctx.w_g.n_realizations()
    {
        return Err(Error::invalid("iterate ensemble must match the context grid and size"));
    }
    let mut out = Ensemble::zeros(
        ctx.grid.times().to_vec(),
        ctx.instance.dim(),
        y.n_realizations(),
    );
    out.fill_paths(|r, path| ctx.fill_phi(r, y.path(r), path));
    Ok(out)
}

/// Iteration record of one solve.
#[derive(Debug, Clone)]
pub struct ConvergenceLog {
    pub iterations: usize,
    /// Ξ-distance between successive iterates.
    pub distances: Vec<f64>,
    /// distances[i] / distances[i−1].
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub converged: bool,
}

/// Ball certificate for the returned ensemble.
#[derive(Debug, Clone)]
pub struct BallReport {
    pub kappa_sq: f64,
    /// sup_j t_j^{2(η−β)} E‖A^η X(t_j)‖².
    pub eta_part_sup: f64,
    /// sup_j E‖A^β X(t_j)‖².
    pub beta_part_sup: f64,
    pub max_part: f64,
    pub slack: f64,
    /// 4 standard errors of the dominating part at its arg max.
    pub se_margin: f64,
    pub within_ball: bool,
}

/// Mild solution ensemble with its certificates.
pub struct MildSolution {
    pub ensemble: Ensemble,
    /// Stochastic convolution paths retained for residual checks.
    pub noise_paths: Option<Ensemble>,
    pub grid: TimeGrid,
    pub seed: u64,
    pub t_loc: TlocReport,
    pub log: ConvergenceLog,
    pub ball: BallReport,
}

impl MildSolution {
    /// Releases the retained noise paths (residual checks become impossible).
    pub fn drop_noise_paths(&mut self) {
        self.noise_paths = None;
    }
}

fn ball_report(
    ensemble: &Ensemble,
    op: &SpectralOperator,
    exponents: &ExponentSet,
    kappa_sq: f64,
) -> BallReport {
    let (eta, beta) = (exponents.eta, exponents.beta);
    let pow_eta: Vec<f64> = op.eigenvalues().iter().map(|l| l.powf(2.0 * eta)).collect();
    let pow_beta: Vec<f64> = op.eigenvalues().iter().map(|l| l.powf(2.0 * beta)).collect();
    let (mean_eta, se_eta) = ensemble
        .per_time_mean_se(|state| state.iter().zip(&pow_eta).map(|(x, l)| l * x * x).sum());
    let (mean_beta, se_beta) = ensemble
        .per_time_mean_se(|state| state.iter().zip(&pow_beta).map(|(x, l)| l * x * x).sum());
    let times = ensemble.times();

    let mut eta_part_sup = 0.0f64;
    let mut eta_se_at_max = 0.0f64;
    for j in 1..times.len() {
        let w = times[j].powf(2.0 * (eta - beta));
        if w * mean_eta[j] > eta_part_sup {
            eta_part_sup = w * mean_eta[j];
            eta_se_at_max = w * se_eta[j];
        }
    }
    let mut beta_part_sup = 0.0f64;
    let mut beta_se_at_max = 0.0f64;
    for j in 0..times.len() {
        if mean_beta[j] > beta_part_sup {
            beta_part_sup = mean_beta[j];
            beta_se_at_max = se_beta[j];
        }
    }
    let (max_part, se_at_max) = if eta_part_sup >= beta_part_sup {
        (eta_part_sup, eta_se_at_max)
    } else {
        (beta_part_sup, beta_se_at_max)
    };
    let se_margin = 4.0 * se_at_max;
    BallReport {
        kappa_sq,
        eta_part_sup,
        beta_part_sup,
        max_part,
        slack: kappa_sq - max_part,
        se_margin,
        within_ball: max_part <= kappa_sq + se_margin,
    }
}

/// Picard iteration of Φ to the mild solution on [0, T_loc].
pub fn solve_mild(instance: &ProblemInstance, config: &SolverConfig) -> Result<MildSolution> {
    config.validate()?;
    let t_loc_report = choose_t_loc(instance, config.kappa_policy)?;
    let t_end = match config.t_loc_override {
        None => t_loc_report.t_loc,
        Some(t) => {
            if !(t > 0.0) || t > t_loc_report.t_loc * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "t_loc override {t} must lie in (0, {}]",
                    t_loc_report.t_loc
                )));
            }
            t.min(t_loc_report.t_loc)
        }
    };
    let grid = TimeGrid::uniform(t_end, config.grid_steps)?;
    let op = instance.operator();
    let noise_model = instance.noise().materialize(&grid, instance.dim())?;
    let w_g = crate::convolution::stochastic_convolution_sample(
        op,
        &noise_model,
        config.n_realizations,
        config.seed,
    )?;
    let ctx = PhiContext::new(instance, &w_g, config.seed)?;

    let mut y = Ensemble::zeros(grid.times().to_vec(), instance.dim(), config.n_realizations);
    if config.picard_start == PicardStart::SemigroupXi {
        ctx.fill_semigroup_start(&mut y);
    }

    let (eta, beta) = (instance.exponents().eta, instance.exponents().beta);
    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    let mut converged = false;
    for _ in 0..config.picard_max_iters {
        let z = phi_map(&y, &ctx)?;
        let dist = xi_norm(&z.sub(&y)?, op, eta, beta)?;
        let scale = xi_norm(&z, op, eta, beta)?.max(1.0);
        if let Some(prev) = distances.last() {
            if *prev > 0.0 {
                ratios.push(dist / prev);
            }
        }
        distances.push(dist);
        y = z;
        if dist <= config.picard_tol * scale {
            converged = true;
            break;
        }
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let log = ConvergenceLog {
        iterations: distances.len(),
        distances: distances.clone(),
        ratios,
        max_ratio,
        converged,
    };
    if !converged {
        return Err(Error::ConvergenceFailure(format!(
            "Picard did not converge in {} iterations; distances {:?}",
            config.picard_max_iters, distances
        )));
    }

    let ball = ball_report(&y, op, instance.exponents(), t_loc_report.kappa_sq);
    if !ball.within_ball {
        return Err(Error::EstimateViolation(format!(
            "solution left the kappa ball: max part {} vs kappa^2 {} (+{} SE margin)",
            ball.max_part, ball.kappa_sq, ball.se_margin
        )));
    }

    Ok(MildSolution {
        ensemble: y,
        noise_paths: Some(w_g),
        grid,
        seed: config.seed,
        t_loc: t_loc_report,
        log,
        ball,
    })
}

/// Ξ-norm of X − ΦX for a solved ensemble: the convergence certificate.
pub fn mild_residual(solution: &MildSolution, instance: &ProblemInstance) -> Result<f64> {
    let w_g = solution
        .noise_paths
        .as_ref()
        .ok_or_else(|| Error::invalid("noise paths were dropped; residual needs them"))?;
    let ctx = PhiContext::new(instance, w_g, solution.seed)?;
    let phi_x = phi_map(&solution.ensemble, &ctx)?;
    xi_norm(
        &phi_x.sub(&solution.ensemble)?,
        instance.operator(),
        instance.exponents().eta,
        instance.exponents().beta,
    )
}

/// Per-time moment summary of a solved ensemble.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub time: f64,
    pub mean_norm: f64,
    /// E‖A^β X(t)‖².
    pub beta_moment: f64,
    /// t^{2(η−β)} E‖A^η X(t)‖².
    pub weighted_eta_moment: f64,
}

pub fn per_time_summary(
    ensemble: &Ensemble,
    op: &SpectralOperator,
    exponents: &ExponentSet,
) -> Vec<SummaryRow> {
    let (eta, beta) = (exponents.eta, exponents.beta);
    let pow_eta: Vec<f64> = op.eigenvalues().iter().map(|l| l.powf(2.0 * eta)).collect();
    let pow_beta: Vec<f64> = op.eigenvalues().iter().map(|l| l.powf(2.0 * beta)).collect();
    let (mean_norm, _) = ensemble.per_time_mean_se(|state| {
        state.iter().map(|x| x * x).sum::<f64>().sqrt()
    });
    let (mean_eta, _) = ensemble
        .per_time_mean_se(|state| state.iter().zip(&pow_eta).map(|(x, l)| l * x * x).sum());
    let (mean_beta, _) = ensemble
        .per_time_mean_se(|state| state.iter().zip(&pow_beta).map(|(x, l)| l * x * x).sum());
    ensemble
        .times()
        .iter()
        .enumerate()
        .map(|(j, &t)| SummaryRow {
            time: t,
            mean_norm: mean_norm[j],
            beta_moment: mean_beta[j],
            weighted_eta_moment: if j == 0 {
                0.0
            } else {
                t.powf(2.0 * (eta - beta)) * mean_eta[j]
            },
        })
        .collect()
}
