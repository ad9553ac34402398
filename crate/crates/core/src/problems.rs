//! Concrete problem builders.
//!
//! The reference problem is the stochastic heat equation on (0,1) with
//! Neumann boundary,
//!   du = {[a(x)u']' − u + F1(u) + t^{β−1}f(t)φ1(x)} dt + g(t)φ2(x) dw_t,
//! written abstractly with A = −d/dx[a d/dx] + 1. For constant a ≡ a₀ the
//! eigenpairs are analytic: λ_0 = 1, λ_k = 1 + a₀(kπ)², e_0 = 1,
//! e_k = √2 cos(kπx). The drift F1(u) = u + u/(1+u²) acts pointwise in
//! physical space; since sup|F1'| = 2 and ‖v‖ ≤ ‖A^η v‖ for λ_min = 1, the
//! declared Lipschitz constant is c_F1 = 2.
//!
//! Variable a(x) goes through a symmetric cell-centered finite-difference
//! discretization with zero-flux boundary stencils and a dense symmetric
//! eigensolve; its eigenvalues converge at second order in the mesh width.
//!
//! Linear instances F1(u) = c u with |c| < λ_min provide per-mode closed
//! forms: E X_k(t) = e^{−(λ_k−c)t} E ξ_k and, for constant g,
//! Var X_k(t) = g²(1 − e^{−2(λ_k−c)t})/(2(λ_k−c)).

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::holder::ExponentSet;
use crate::rng;
use crate::solver::{
    validate_exponents, F2Spec, InitialCondition, NoiseSpec, Nonlinearity, NonlinearitySpec,
    ProblemInstance, ScalarProfile,
};
use crate::spectral::{HVector, SpectralOperator};
use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;
use std::sync::Arc;

/// Orthonormality defect allowed in a supplied collocation basis.
const BASIS_ORTHONORMALITY_TOL: f64 = 1e-10;

/// Relative eigen-residual allowed from the finite-difference eigensolve.
const FD_EIGEN_RESIDUAL_TOL: f64 = 1e-8;

/// Weighted point-value transform between coefficients and a physical grid.
///
/// Synthesis evaluates u(x_p) = Σ_k c_k e_k(x_p); analysis projects back via
/// c_k = Σ_p w_p u(x_p) e_k(x_p). With w-orthonormal basis columns the pair
/// is mutually inverse on the coefficient space.
#[derive(Debug, Clone)]
pub struct CollocationTransform {
    points: usize,
    modes: usize,
    /// Quadrature weights w_p.
    weights: Vec<f64>,
    /// e_k(x_p), point-major (points × modes).
    basis: Vec<f64>,
}

impl CollocationTransform {
    /// Cosine basis at midpoints x_p = (p + 1/2)/P with weights 1/P.
    ///
    /// P ≥ 2N keeps the quadratic images of the Nemytskii map below the
    /// aliasing threshold of the midpoint rule.
    pub fn cosine(modes: usize, points: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::invalid("transform needs at least one mode"));
        }
        if points < 2 * modes {
            return Err(Error::invalid(format!(
                "collocation needs P >= 2N (got P = {points}, N = {modes})"
            )));
        }
        let mut basis = vec![0.0; points * modes];
        for p in 0..points {
            let x = (p as f64 + 0.5) / points as f64;
            basis[p * modes] = 1.0;
            for k in 1..modes {
                basis[p * modes + k] = 2.0f64.sqrt() * (k as f64 * PI * x).cos();
            }
        }
        Ok(CollocationTransform {
            points,
            modes,
            weights: vec![1.0 / points as f64; points],
            basis,
        })
    }

    /// Arbitrary basis columns, validated to be w-orthonormal.
    pub fn from_orthonormal_basis(
        basis: Vec<f64>,
        weights: Vec<f64>,
        modes: usize,
    ) -> Result<Self> {
        let points = weights.len();
        if modes == 0 || points == 0 || basis.len() != points * modes {
            return Err(Error::invalid("basis must be points x modes"));
        }
        if points < 2 * modes {
            return Err(Error::invalid("collocation needs P >= 2N"));
        }
        for k in 0..modes {
            for l in k..modes {
                let dot: f64 = (0..points)
                    .map(|p| weights[p] * basis[p * modes + k] * basis[p * modes + l])
                    .sum();
                let target = if k == l { 1.0 } else { 0.0 };
                if (dot - target).abs() > BASIS_ORTHONORMALITY_TOL {
                    return Err(Error::invalid(format!(
                        "basis columns {k},{l} not orthonormal: inner product {dot}"
                    )));
                }
            }
        }
        Ok(CollocationTransform { points, modes, weights, basis })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// u(x_p) = Σ_k c_k e_k(x_p).
    pub fn synthesize_into(&self, coeffs: &[f64], values: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.modes);
        debug_assert_eq!(values.len(), self.points);
        for (p, v) in values.iter_mut().enumerate() {
            let row = &self.basis[p * self.modes..(p + 1) * self.modes];
            *v = row.iter().zip(coeffs).map(|(b, c)| b * c).sum();
        }
    }

    /// c_k = Σ_p w_p u(x_p) e_k(x_p).
    pub fn analyze_into(&self, values: &[f64], coeffs: &mut [f64]) {
        debug_assert_eq!(values.len(), self.points);
        debug_assert_eq!(coeffs.len(), self.modes);
        coeffs.fill(0.0);
        for p in 0..self.points {
            let wv = self.weights[p] * values[p];
            let row = &self.basis[p * self.modes..(p + 1) * self.modes];
            for (c, b) in coeffs.iter_mut().zip(row) {
                *c += wv * b;
            }
        }
    }

    /// sup-norm defect of analyze(synthesize(coeffs)) − coeffs.
    pub fn round_trip_error(&self, coeffs: &[f64]) -> f64 {
        let mut values = vec![0.0; self.points];
        let mut back = vec![0.0; self.modes];
        self.synthesize_into(coeffs, &mut values);
        self.analyze_into(&values, &mut back);
        back.iter()
            .zip(coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// ψ(u) = u + u/(1+u²), the reference drift; sup|ψ'| = ψ'(0) = 2.
#[inline]
pub fn reference_drift_scalar(u: f64) -> f64 {
    u + u / (1.0 + u * u)
}

/// Pointwise drift in physical space: synthesize, apply ψ, analyze back.
///
/// Analysis truncates the image to the resolved modes; that truncation is
/// the Galerkin projection of the abstract model, not an approximation of it.
#[derive(Debug, Clone)]
pub struct NemytskiiF1 {
    transform: CollocationTransform,
}

impl NemytskiiF1 {
    pub fn new(transform: CollocationTransform) -> Self {
        NemytskiiF1 { transform }
    }

    pub fn transform(&self) -> &CollocationTransform {
        &self.transform
    }
}

impl Nonlinearity for NemytskiiF1 {
    fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let mut values = vec![0.0; self.transform.points()];
        self.transform.synthesize_into(u, &mut values);
        for v in values.iter_mut() {
            *v = reference_drift_scalar(*v);
        }
        self.transform.analyze_into(&values, out);
    }
}

/// Diffusivity coefficient of the reference problem.
#[derive(Debug, Clone, PartialEq)]
pub enum Diffusivity {
    Constant(f64),
    /// a(x) sampled at cell midpoints (i + 1/2)/M; must stay ≥ some a₀ > 0.
    Samples(Vec<f64>),
}

/// Build recipe for the reference heat problem.
#[derive(Debug, Clone)]
pub struct Example1Spec {
    pub diffusivity: Diffusivity,
    /// Resolved spectral modes N.
    pub modes: usize,
    /// Collocation points P ≥ 2N for the drift transform.
    pub collocation_points: usize,
    /// Scalar σ-Hölder factor of the singular forcing t^{β−1} f(t) φ1.
    pub f: ScalarProfile,
    /// Scalar bounded factor of the noise coupling g(t) φ2.
    pub g: ScalarProfile,
    /// Forcing profile coefficients (dimension N).
    pub phi1: HVector,
    /// Noise profile coefficients (dimension N).
    pub phi2: HVector,
    pub exponents: ExponentSet,
    pub xi: InitialCondition,
    pub horizon: f64,
}

impl Example1Spec {
    /// Reference configuration: a ≡ 1, N = 8, P = 32, f ≡ 1, g ≡ 1,
    /// φ1 = e_1, φ2 = e_0 + e_2, exponents (0.25, 0.2, 0.1), Gaussian initial
    /// condition on the two lowest modes, horizon 1. All values are artifact
    /// conventions; only the structure is prescribed.
    pub fn reference() -> Self {
        let n = 8;
        let mut phi1 = vec![0.0; n];
        phi1[1] = 1.0;
        let mut phi2 = vec![0.0; n];
        phi2[0] = 1.0;
        phi2[2] = 1.0;
        let mut mean = vec![0.0; n];
        mean[0] = 0.5;
        mean[1] = 0.25;
        let mut sd = vec![0.0; n];
        sd[0] = 0.1;
        sd[1] = 0.05;
        Example1Spec {
            diffusivity: Diffusivity::Constant(1.0),
            modes: n,
            collocation_points: 4 * n,
            f: ScalarProfile::Constant(1.0),
            g: ScalarProfile::Constant(1.0),
            phi1: HVector::new(phi1),
            phi2: HVector::new(phi2),
            exponents: ExponentSet::new(0.25, 0.2, 0.1),
            xi: InitialCondition::GaussianModes {
                mean: HVector::new(mean),
                sd: HVector::new(sd),
            },
            horizon: 1.0,
        }
    }
}

/// Eigenpairs of the finite-difference Neumann operator.
#[derive(Debug, Clone)]
pub struct FdEigenpairs {
    /// Ascending eigenvalues of −d/dx[a d/dx] + 1 (discrete).
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors at cell midpoints, h-weighted orthonormal, first entry ≥ 0.
    pub eigenvectors: Vec<Vec<f64>>,
    /// max_k ‖Av_k − λ_k v_k‖ / λ_k.
    pub max_relative_residual: f64,
}

/// Dense symmetric eigensolve of the cell-centered flux discretization of
/// −d/dx[a d/dx] + 1 with zero-flux boundaries, a sampled at cell midpoints.
pub fn neumann_fd_eigenpairs(a_samples: &[f64], n_modes: usize) -> Result<FdEigenpairs> {
    let m = a_samples.len();
    if n_modes == 0 || m < n_modes.max(2) {
        return Err(Error::invalid("need at least max(n_modes, 2) diffusivity samples"));
    }
    if a_samples.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::invalid("diffusivity samples must be positive and finite"));
    }
    let h = 1.0 / m as f64;
    let mut matrix = DMatrix::<f64>::zeros(m, m);
    // Interior faces carry the averaged coefficient; boundary flux is zero.
    for i in 0..m - 1 {
        let face = 0.5 * (a_samples[i] + a_samples[i + 1]) / (h * h);
        matrix[(i, i)] += face;
        matrix[(i + 1, i + 1)] += face;
        matrix[(i, i + 1)] -= face;
        matrix[(i + 1, i)] -= face;
    }
    for i in 0..m {
        matrix[(i, i)] += 1.0;
    }

    let eigen = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));

    let mut eigenvalues = Vec::with_capacity(n_modes);
    let mut eigenvectors = Vec::with_capacity(n_modes);
    let mut max_rel_residual = 0.0f64;
    for &idx in order.iter().take(n_modes) {
        let lambda = eigen.eigenvalues[idx];
        let col = eigen.eigenvectors.column(idx);
        let norm_sq: f64 = col.iter().map(|v| h * v * v).sum();
        let sign = if col[0] < 0.0 { -1.0 } else { 1.0 };
        let v: Vec<f64> = col.iter().map(|x| sign * x / norm_sq.sqrt()).collect();

        let vec_na = DMatrix::from_column_slice(m, 1, &v);
        let residual = (&matrix * &vec_na - lambda * &vec_na).norm() / vec_na.norm();
        max_rel_residual = max_rel_residual.max(residual / lambda);

        eigenvalues.push(lambda);
        eigenvectors.push(v);
    }
    if max_rel_residual > FD_EIGEN_RESIDUAL_TOL {
        return Err(Error::ToleranceNotMet {
            context: "finite-difference eigensolve residual".into(),
            achieved: max_rel_residual,
            required: FD_EIGEN_RESIDUAL_TOL,
        });
    }
    Ok(FdEigenpairs { eigenvalues, eigenvectors, max_relative_residual: max_rel_residual })
}

/// Analytic eigenvalues for constant diffusivity: λ_0 = 1, λ_k = 1 + a₀(kπ)².
pub fn constant_a_eigenvalues(a0: f64, n_modes: usize) -> Vec<f64> {
    (0..n_modes)
        .map(|k| 1.0 + a0 * (k as f64 * PI).powi(2))
        .collect()
}

/// Builds the reference heat problem as an abstract instance.
pub fn build_example1(spec: &Example1Spec) -> Result<ProblemInstance> {
    validate_exponents(&spec.exponents)?;
    if spec.modes == 0 {
        return Err(Error::invalid("need at least one mode"));
    }
    let (operator, transform) = match &spec.diffusivity {
        Diffusivity::Constant(a0) => {
            if !(a0.is_finite() && *a0 > 0.0) {
                return Err(Error::invalid("constant diffusivity must be positive"));
            }
            let op = SpectralOperator::new(constant_a_eigenvalues(*a0, spec.modes))?;
            let transform = CollocationTransform::cosine(spec.modes, spec.collocation_points)?;
            (op, transform)
        }
        Diffusivity::Samples(samples) => {
            let pairs = neumann_fd_eigenpairs(samples, spec.modes)?;
            let op = SpectralOperator::new(pairs.eigenvalues.clone())?;
            let m = samples.len();
            let mut basis = vec![0.0; m * spec.modes];
            for (k, v) in pairs.eigenvectors.iter().enumerate() {
                for (p, x) in v.iter().enumerate() {
                    basis[p * spec.modes + k] = *x;
                }
            }
            let weights = vec![1.0 / m as f64; m];
            let transform =
                CollocationTransform::from_orthonormal_basis(basis, weights, spec.modes)?;
            (op, transform)
        }
    };

    let f1 = NonlinearitySpec {
        map: Arc::new(NemytskiiF1::new(transform)),
        lipschitz: 2.0,
        zero_second_moment: 0.0,
    };
    ProblemInstance::new(
        operator,
        f1,
        F2Spec::Singular { f: spec.f, v: spec.phi1.clone() },
        NoiseSpec::Separable { g: spec.g, phi: spec.phi2.clone() },
        spec.xi.clone(),
        spec.exponents,
        spec.horizon,
    )
}

/// Instance with F1(u) = c u; every mode then has a scalar closed form.
pub fn build_linear_instance(
    op: SpectralOperator,
    c: f64,
    f2: F2Spec,
    noise: NoiseSpec,
    xi: InitialCondition,
    exponents: ExponentSet,
    horizon: f64,
) -> Result<ProblemInstance> {
    if !c.is_finite() || c.abs() >= op.lambda_min() {
        return Err(Error::invalid(format!(
            "|c| = {} must stay below lambda_min = {} for a positive shifted rate",
            c.abs(),
            op.lambda_min()
        )));
    }
    ProblemInstance::new(op, NonlinearitySpec::linear(c), f2, noise, xi, exponents, horizon)
}

/// E X_k(t) = e^{−(λ−c)t} E ξ_k for F1(u) = c u with mean-zero noise.
#[inline]
pub fn linear_mean(lambda: f64, c: f64, xi_mean: f64, t: f64) -> f64 {
    (-(lambda - c) * t).exp() * xi_mean
}

/// Var X_k(t) = g²(1 − e^{−2(λ−c)t})/(2(λ−c)) for deterministic ξ and
/// constant coupling g on mode k.
#[inline]
pub fn linear_variance(lambda: f64, c: f64, g: f64, t: f64) -> f64 {
    let mu = lambda - c;
    if mu == 0.0 {
        g * g * t
    } else {
        g * g * (1.0 - (-2.0 * mu * t).exp()) / (2.0 * mu)
    }
}

/// Stationary Ornstein-Uhlenbeck mixture with a prescribed small-scale
/// Hölder exponent, used as ground truth for the exponent estimator.
///
/// Mode k relaxes at rate λ_k = ratio^k and carries coupling g_k² =
/// λ_k^{1−2h}, so the stationary structure function
///
/// ```text
///     E‖X(t+Δ) − X(t)‖² = Σ_k g_k² (1 − e^{−λ_k Δ}) / λ_k
/// ```
///
/// scales like Δ^{2h} for lags between the extreme relaxation times.
#[derive(Debug, Clone)]
pub struct OuMixture {
    operator: SpectralOperator,
    couplings_sq: Vec<f64>,
    target_exponent: f64,
}

impl OuMixture {
    /// Geometric rate ladder λ_k = ratio^k, k = 0..modes.
    pub fn geometric(target_exponent: f64, modes: usize, rate_ratio: f64) -> Result<Self> {
        if !(target_exponent > 0.0 && target_exponent < 0.5) {
            return Err(Error::invalid(format!(
                "target exponent {target_exponent} must lie in (0, 1/2)"
            )));
        }
        if modes < 2 {
            return Err(Error::invalid("mixture needs at least two modes"));
        }
        if !(rate_ratio > 1.0 && rate_ratio.is_finite()) {
            return Err(Error::invalid(format!("rate ratio {rate_ratio} must exceed 1")));
        }
        let lambdas: Vec<f64> = (0..modes).map(|k| rate_ratio.powi(k as i32)).collect();
        let couplings_sq: Vec<f64> =
            lambdas.iter().map(|l| l.powf(1.0 - 2.0 * target_exponent)).collect();
        Ok(Self { operator: SpectralOperator::new(lambdas)?, couplings_sq, target_exponent })
    }

    pub fn operator(&self) -> &SpectralOperator {
        &self.operator
    }

    pub fn target_exponent(&self) -> f64 {
        self.target_exponent
    }

    /// Exact stationary second moments E‖X(t+Δ) − X(t)‖² at the given lags.
    pub fn structure_function(&self, lag_times: &[f64]) -> Vec<f64> {
        lag_times
            .iter()
            .map(|&d| {
                self.operator
                    .eigenvalues()
                    .iter()
                    .zip(&self.couplings_sq)
                    .map(|(l, g2)| g2 * (1.0 - (-l * d).exp()) / l)
                    .sum()
            })
            .collect()
    }

    /// Exact sampler: stationary start, then the exact per-mode one-step
    /// transition on each grid interval. Valid on non-uniform grids.
    pub fn sample(&self, grid: &TimeGrid, n_realizations: usize, seed: u64) -> Ensemble {
        let dim = self.operator.dim();
        let lambdas = self.operator.eigenvalues();
        let stat_sd: Vec<f64> = lambdas
            .iter()
            .zip(&self.couplings_sq)
            .map(|(l, g2)| (g2 / (2.0 * l)).sqrt())
            .collect();
        let steps = grid.times().len() - 1;
        let mut ens = Ensemble::zeros(grid.times().to_vec(), dim, n_realizations);
        ens.fill_paths(|r, path| {
            for k in 0..dim {
                path[k] =
                    stat_sd[k] * rng::standard_normal(seed, rng::salt::INITIAL, r as u64, k as u64, 1);
            }
            for j in 0..steps {
                let dt = grid.step(j);
                for k in 0..dim {
                    let decay = (-lambdas[k] * dt).exp();
                    let step_sd = (self.couplings_sq[k] * (1.0 - (-2.0 * lambdas[k] * dt).exp())
                        / (2.0 * lambdas[k]))
                        .sqrt();
                    path[(j + 1) * dim + k] = decay * path[j * dim + k]
                        + step_sd
                            * rng::standard_normal(
                                seed,
                                rng::salt::STOCH_CONV,
                                r as u64,
                                j as u64,
                                k as u64,
                            );
                }
            }
        });
        ens
    }
}
