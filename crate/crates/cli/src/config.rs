//! Run configuration: TOML schema, validation, canonical form, hashing.
//!
//! A run is fully determined by its config file plus the CLI overrides
//! (`--seed`, `--realizations`, `--out`). Overrides are folded into the
//! config before anything executes, so the manifest hash always identifies
//! the effective run. The canonical form is the TOML re-serialization of the
//! resolved config; parse → serialize → parse is semantically idempotent.

use mildsim_core::holder::ExponentSet;
use mildsim_core::problems::{
    build_example1, build_linear_instance, Diffusivity, Example1Spec, OuMixture,
};
use mildsim_core::solver::{
    F2Spec, InitialCondition, KappaPolicy, NoiseSpec, ProblemInstance, ScalarProfile,
    SolverConfig,
};
use mildsim_core::spectral::{HVector, SpectralOperator};
use mildsim_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Top-level schema of a run config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub exponents: ExponentsConfig,
    pub solver: SolverSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// 1-d reaction-diffusion with Neumann boundary; omitted fields take the
    /// reference values.
    Example1 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        diffusivity: Option<DiffusivityConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        modes: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        collocation_points: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        f: Option<ProfileConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g: Option<ProfileConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phi1: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phi2: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        xi: Option<InitialConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
    },
    /// Diagonal operator with linear drift F1(u) = c u: closed-form oracle.
    Linear {
        eigenvalues: Vec<f64>,
        c: f64,
        #[serde(default = "ForcingConfig::zero")]
        f2: ForcingConfig,
        #[serde(default = "NoiseConfig::zero")]
        noise: NoiseConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        xi: Option<InitialConfig>,
        horizon: f64,
    },
    /// Stationary OU mixture with a prescribed Hölder exponent; exact
    /// sampler, no solve. Supports `simulate` and `regularity`.
    Synthetic {
        target_exponent: f64,
        #[serde(default = "default_synthetic_modes")]
        modes: usize,
        #[serde(default = "default_rate_ratio")]
        rate_ratio: f64,
        #[serde(default = "default_synthetic_horizon")]
        horizon: f64,
    },
}

fn default_synthetic_modes() -> usize {
    23
}

fn default_rate_ratio() -> f64 {
    std::f64::consts::SQRT_2
}

fn default_synthetic_horizon() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiffusivityConfig {
    Constant(f64),
    Samples(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    Constant { value: f64 },
    Affine { intercept: f64, slope: f64 },
    Sine { amplitude: f64, omega: f64 },
    Power { scale: f64, exponent: f64 },
}

impl ProfileConfig {
    pub fn to_profile(&self) -> ScalarProfile {
        match *self {
            ProfileConfig::Constant { value } => ScalarProfile::Constant(value),
            ProfileConfig::Affine { intercept, slope } => {
                ScalarProfile::Affine { intercept, slope }
            }
            ProfileConfig::Sine { amplitude, omega } => ScalarProfile::Sine { amplitude, omega },
            ProfileConfig::Power { scale, exponent } => ScalarProfile::Power { scale, exponent },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Deterministic { coeffs: Vec<f64> },
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
}

impl InitialConfig {
    fn to_initial(&self) -> InitialCondition {
        match self {
            InitialConfig::Deterministic { coeffs } => {
                InitialCondition::Deterministic(HVector::new(coeffs.clone()))
            }
            InitialConfig::Gaussian { mean, sd } => InitialCondition::GaussianModes {
                mean: HVector::new(mean.clone()),
                sd: HVector::new(sd.clone()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingConfig {
    Zero,
    /// F2(t) = t^{β−1} f(t) v.
    Singular { f: ProfileConfig, v: Vec<f64> },
    /// F2(t) = f(t) v, bounded up to t = 0.
    Bounded { f: ProfileConfig, v: Vec<f64> },
}

impl ForcingConfig {
    fn zero() -> Self {
        ForcingConfig::Zero
    }

    fn to_spec(&self) -> F2Spec {
        match self {
            ForcingConfig::Zero => F2Spec::Zero,
            ForcingConfig::Singular { f, v } => {
                F2Spec::Singular { f: f.to_profile(), v: HVector::new(v.clone()) }
            }
            ForcingConfig::Bounded { f, v } => {
                F2Spec::Bounded { f: f.to_profile(), v: HVector::new(v.clone()) }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Zero,
    /// G(t) = g(t) ⟨·, e_1⟩ φ.
    Separable { g: ProfileConfig, phi: Vec<f64> },
}

impl NoiseConfig {
    fn zero() -> Self {
        NoiseConfig::Zero
    }

    fn to_spec(&self) -> NoiseSpec {
        match self {
            NoiseConfig::Zero => NoiseSpec::Zero,
            NoiseConfig::Separable { g, phi } => {
                NoiseSpec::Separable { g: g.to_profile(), phi: HVector::new(phi.clone()) }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentsConfig {
    pub eta: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl ExponentsConfig {
    pub fn to_set(&self) -> ExponentSet {
        ExponentSet::new(self.eta, self.beta, self.sigma)
    }
}

/// Seed is mandatory: runs never default to wall-clock entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub grid_steps: usize,
    pub realizations: usize,
    pub seed: u64,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iters")]
    pub picard_max_iters: usize,
    /// Fixed squared ball radius; absent means the automatic minimal choice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_loc_override: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collocation_points: Option<usize>,
}

fn default_picard_tol() -> f64 {
    1e-6
}

fn default_picard_max_iters() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Fractional orders for the Itô isometry report; default {0, η}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isometry_thetas: Option<Vec<f64>>,
    /// Lag multiples for the Hölder-exponent estimator.
    #[serde(default = "default_lags", skip_serializing_if = "is_default_lags")]
    pub lags: Vec<usize>,
    #[serde(default = "default_holder_p", skip_serializing_if = "is_default_holder_p")]
    pub holder_p: f64,
    /// Estimation window; default (t_loc/10, t_loc].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default = "default_membership_tol", skip_serializing_if = "is_default_membership_tol")]
    pub membership_tol: f64,
    /// Multiplier on the noise-free calibration residual in the mean budget.
    #[serde(default = "default_headroom", skip_serializing_if = "is_default_headroom")]
    pub headroom: f64,
    /// σ-Hölder profile of the forcing used in the maximal-regularity check;
    /// must vanish at t = 0 for membership. Default f(t) = t/2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularity_profile: Option<ProfileConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependence: Option<DependenceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gronwall: Option<GronwallSection>,
}

fn default_lags() -> Vec<usize> {
    vec![1, 2, 4, 8, 16]
}

fn is_default_lags(lags: &[usize]) -> bool {
    lags == default_lags()
}

fn default_holder_p() -> f64 {
    2.0
}

fn is_default_holder_p(p: &f64) -> bool {
    *p == default_holder_p()
}

fn default_membership_tol() -> f64 {
    0.5
}

fn is_default_membership_tol(tol: &f64) -> bool {
    *tol == default_membership_tol()
}

fn default_headroom() -> f64 {
    3.0
}

fn is_default_headroom(h: &f64) -> bool {
    *h == default_headroom()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependenceSection {
    /// Perturbation direction, scaled by each magnitude.
    pub direction_f2: f64,
    pub direction_g: f64,
    pub direction_xi: f64,
    /// Strictly decreasing positive magnitudes.
    pub magnitudes: Vec<f64>,
    /// Ball radii certifying one local time for every compared instance.
    pub radius_f2: f64,
    pub radius_g: f64,
    pub radius_xi: f64,
    /// Dependence horizon; absent means the largest admissible value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub grid_steps: usize,
    pub realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallSection {
    pub a: f64,
    pub b: f64,
    pub mu: f64,
    pub nu: f64,
    pub series_cutoff: usize,
    #[serde(default = "default_gronwall_samples")]
    pub samples: usize,
    /// Nondecreasing data curve f; default f ≡ 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<ProfileConfig>,
    /// Picard sweeps for the discrete fixed-point comparison.
    #[serde(default = "default_gronwall_sweeps")]
    pub fixed_point_sweeps: usize,
}

fn default_gronwall_samples() -> usize {
    101
}

fn default_gronwall_sweeps() -> usize {
    300
}

/// What a config builds: a solvable instance or an exact synthetic sampler.
pub enum BuiltProblem {
    Instance(ProblemInstance),
    Mixture { mixture: OuMixture, horizon: f64 },
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.solver.grid_steps < 2 {
            return Err(Error::invalid("solver.grid_steps must be >= 2"));
        }
        if self.solver.realizations == 0 {
            return Err(Error::invalid("solver.realizations must be >= 1"));
        }
        if !(self.solver.picard_tol > 0.0) {
            return Err(Error::invalid("solver.picard_tol must be positive"));
        }
        if self.solver.picard_max_iters == 0 {
            return Err(Error::invalid("solver.picard_max_iters must be >= 1"));
        }
        if self.output_dir.is_empty() {
            return Err(Error::invalid("output_dir must be nonempty"));
        }
        let exps = self.exponents.to_set();
        let violations = exps.violations();
        if !violations.is_empty() {
            return Err(Error::invalid(format!(
                "inadmissible exponents: {}",
                violations.join("; ")
            )));
        }
        Ok(())
    }

    /// Folds CLI overrides into the config before hashing or execution.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        realizations: Option<usize>,
        out: Option<&str>,
    ) {
        if let Some(seed) = seed {
            self.solver.seed = seed;
        }
        if let Some(n) = realizations {
            self.solver.realizations = n;
        }
        if let Some(dir) = out {
            self.output_dir = dir.to_string();
        }
    }

    /// Canonical serialized form of the resolved config.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("config serialize: {e}")))
    }

    /// First 16 hex characters of the SHA-256 of the experiment content: the
    /// canonical form with the output directory normalized away, so the same
    /// run written to two places carries one identity.
    pub fn manifest_hash(&self) -> Result<String> {
        let mut content = self.clone();
        content.output_dir = default_output_dir();
        let digest = Sha256::digest(content.canonical_toml()?.as_bytes());
        Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn exponent_set(&self) -> ExponentSet {
        self.exponents.to_set()
    }

    pub fn build(&self) -> Result<BuiltProblem> {
        match &self.problem {
            ProblemConfig::Example1 {
                diffusivity,
                modes,
                collocation_points,
                f,
                g,
                phi1,
                phi2,
                xi,
                horizon,
            } => {
                let reference = Example1Spec::reference();
                let modes = modes.unwrap_or(reference.modes);
                let pad = |coeffs: &Vec<f64>| -> Result<HVector> {
                    if coeffs.len() > modes {
                        return Err(Error::invalid(format!(
                            "profile has {} coefficients but the problem has {modes} modes",
                            coeffs.len()
                        )));
                    }
                    let mut padded = coeffs.clone();
                    padded.resize(modes, 0.0);
                    Ok(HVector::new(padded))
                };
                let spec = Example1Spec {
                    diffusivity: match diffusivity {
                        None => reference.diffusivity,
                        Some(DiffusivityConfig::Constant(a0)) => Diffusivity::Constant(*a0),
                        Some(DiffusivityConfig::Samples(s)) => Diffusivity::Samples(s.clone()),
                    },
                    modes,
                    collocation_points: collocation_points
                        .or(self.solver.collocation_points)
                        .unwrap_or(4 * modes),
                    f: f.as_ref().map(|p| p.to_profile()).unwrap_or(reference.f),
                    g: g.as_ref().map(|p| p.to_profile()).unwrap_or(reference.g),
                    phi1: match phi1 {
                        Some(v) => pad(v)?,
                        None => HVector::basis(modes, 1),
                    },
                    phi2: match phi2 {
                        Some(v) => pad(v)?,
                        None => {
                            let mut v = vec![0.0; modes];
                            v[0] = 1.0;
                            if modes > 2 {
                                v[2] = 1.0;
                            }
                            HVector::new(v)
                        }
                    },
                    exponents: self.exponent_set(),
                    xi: match xi {
                        Some(init) => init.to_initial(),
                        None => reference.xi,
                    },
                    horizon: horizon.unwrap_or(reference.horizon),
                };
                Ok(BuiltProblem::Instance(build_example1(&spec)?))
            }
            ProblemConfig::Linear { eigenvalues, c, f2, noise, xi, horizon } => {
                let op = SpectralOperator::new(eigenvalues.clone())?;
                let dim = op.dim();
                let xi = match xi {
                    Some(init) => init.to_initial(),
                    None => InitialCondition::Deterministic(HVector::zeros(dim)),
                };
                Ok(BuiltProblem::Instance(build_linear_instance(
                    op,
                    *c,
                    f2.to_spec(),
                    noise.to_spec(),
                    xi,
                    self.exponent_set(),
                    *horizon,
                )?))
            }
            ProblemConfig::Synthetic { target_exponent, modes, rate_ratio, horizon } => {
                if !(*horizon > 0.0 && horizon.is_finite()) {
                    return Err(Error::invalid("synthetic horizon must be positive"));
                }
                Ok(BuiltProblem::Mixture {
                    mixture: OuMixture::geometric(*target_exponent, *modes, *rate_ratio)?,
                    horizon: *horizon,
                })
            }
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut sc = SolverConfig::new(
            self.solver.grid_steps,
            self.solver.realizations,
            self.solver.seed,
        );
        sc.picard_tol = self.solver.picard_tol;
        sc.picard_max_iters = self.solver.picard_max_iters;
        sc.collocation_points = self.solver.collocation_points;
        sc.t_loc_override = self.solver.t_loc_override;
        sc.kappa_policy = match self.solver.kappa_sq {
            Some(k) => KappaPolicy::Fixed(k),
            None => KappaPolicy::Auto,
        };
        sc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
output_dir = "out/heat"

[problem]
kind = "example1"
modes = 8

[exponents]
eta = 0.25
beta = 0.2
sigma = 0.1

[solver]
grid_steps = 64
realizations = 128
seed = 7
"#;

    #[test]
    fn round_trip_is_semantically_idempotent() {
        let parsed = RunConfig::from_toml(SAMPLE).unwrap();
        let canon = parsed.canonical_toml().unwrap();
        let reparsed = RunConfig::from_toml(&canon).unwrap();
        assert_eq!(parsed, reparsed);
        assert_eq!(canon, reparsed.canonical_toml().unwrap());
        assert_eq!(parsed.manifest_hash().unwrap(), reparsed.manifest_hash().unwrap());
    }

    #[test]
    fn hash_is_sixteen_hex_chars_and_tracks_overrides() {
        let mut config = RunConfig::from_toml(SAMPLE).unwrap();
        let h0 = config.manifest_hash().unwrap();
        assert_eq!(h0.len(), 16);
        assert!(h0.chars().all(|c| c.is_ascii_hexdigit()));
        config.apply_overrides(Some(8), None, None);
        let h1 = config.manifest_hash().unwrap();
        assert_ne!(h0, h1, "seed override must change the effective config");
        config.apply_overrides(Some(7), None, None);
        assert_eq!(config.manifest_hash().unwrap(), h0);
        config.apply_overrides(None, None, Some("elsewhere"));
        assert_eq!(
            config.manifest_hash().unwrap(),
            h0,
            "placement is not experiment content"
        );
    }

    #[test]
    fn unknown_keys_and_bad_exponents_are_validation_errors() {
        let with_typo = SAMPLE.replace("grid_steps", "grid_stepz");
        assert!(RunConfig::from_toml(&with_typo).is_err());

        let bad_exponents = SAMPLE.replace("eta = 0.25", "eta = 0.95");
        let err = RunConfig::from_toml(&bad_exponents).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    }

    #[test]
    fn example1_defaults_build_the_reference_instance() {
        let config = RunConfig::from_toml(SAMPLE).unwrap();
        match config.build().unwrap() {
            BuiltProblem::Instance(instance) => {
                assert_eq!(instance.dim(), 8);
                assert_eq!(instance.exponents().eta, 0.25);
            }
            BuiltProblem::Mixture { .. } => panic!("example1 must build an instance"),
        }
    }

    #[test]
    fn synthetic_and_linear_kinds_build() {
        let synthetic = r#"
[problem]
kind = "synthetic"
target_exponent = 0.3

[exponents]
eta = 0.25
beta = 0.2
sigma = 0.1

[solver]
grid_steps = 64
realizations = 100
seed = 1
"#;
        let config = RunConfig::from_toml(synthetic).unwrap();
        match config.build().unwrap() {
            BuiltProblem::Mixture { mixture, horizon } => {
                assert_eq!(mixture.target_exponent(), 0.3);
                assert_eq!(horizon, 0.25);
            }
            BuiltProblem::Instance(_) => panic!("synthetic must build a mixture"),
        }

        let linear = r#"
[problem]
kind = "linear"
eigenvalues = [1.0, 2.0, 5.0]
c = 0.5
horizon = 1.0

[problem.noise]
kind = "separable"
g = { kind = "constant", value = 0.4 }
phi = [1.0, 0.0, 1.0]

[exponents]
eta = 0.25
beta = 0.2
sigma = 0.1

[solver]
grid_steps = 32
realizations = 50
seed = 3
"#;
        let config = RunConfig::from_toml(linear).unwrap();
        match config.build().unwrap() {
            BuiltProblem::Instance(instance) => assert_eq!(instance.dim(), 3),
            BuiltProblem::Mixture { .. } => panic!("linear must build an instance"),
        }
    }

    #[test]
    fn seed_is_mandatory() {
        let without_seed = SAMPLE.replace("seed = 7\n", "");
        let err = RunConfig::from_toml(&without_seed).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }
}
