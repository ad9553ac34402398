//! Weighted Hölder norms for trajectories that may blow up at t = 0.
//!
//! A trajectory F on (0, T] belongs to the weighted space with exponents
//! (beta, sigma), 0 < sigma < beta < 1, when
//!
//! ```text
//! sup_t t^{1-beta} ||F(t)||
//! + sup_{s<t} s^{1-beta+sigma} ||F(t) - F(s)|| / (t-s)^sigma
//! ```
//!
//! is finite; the norm is that sum. Membership additionally requires the
//! weighted value t^{1-beta} F(t) to settle to a limit at the origin and the
//! weighted modulus
//!
//! ```text
//! w(t) = sup_{0<s<t} s^{1-beta+sigma} ||F(t) - F(s)|| / (t-s)^sigma
//! ```
//!
//! to vanish as t -> 0. On a grid both limits are diagnosed over the first
//! decile of positive grid points. The s = 0 endpoint carries weight zero in
//! every quotient and is skipped.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::spectral::{HVector, SpectralOperator};

/// Exponent tuple for the solution theory.
///
/// Admissibility:
///   0 < eta < 1/2,
///   max(0, 2 eta - 1/2) < beta < eta,
///   0 < sigma < beta,
///   gamma (optional) in (0, (1 + 2 beta)/4 - eta),
///   rho (optional) in (1/2, 1 - eta).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentSet {
    pub eta: f64,
    pub beta: f64,
    pub sigma: f64,
    pub gamma: Option<f64>,
    pub rho: Option<f64>,
}

impl ExponentSet {
    pub fn new(eta: f64, beta: f64, sigma: f64) -> Self {
        ExponentSet { eta, beta, sigma, gamma: None, rho: None }
    }

    /// Largest admissible pathwise regularity exponent (1 + 2 beta)/4 - eta.
    pub fn gamma_max(&self) -> f64 {
        (1.0 + 2.0 * self.beta) / 4.0 - self.eta
    }

    /// All violated admissibility constraints, empty when admissible.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.eta > 0.0 && self.eta < 0.5) {
            v.push(format!("eta = {} outside (0, 1/2)", self.eta));
        }
        let beta_lo = (2.0 * self.eta - 0.5).max(0.0);
        if !(self.beta > beta_lo && self.beta < self.eta) {
            v.push(format!(
                "beta = {} outside (max(0, 2 eta - 1/2), eta) = ({}, {})",
                self.beta, beta_lo, self.eta
            ));
        }
        if !(self.sigma > 0.0 && self.sigma < self.beta) {
            v.push(format!("sigma = {} outside (0, beta)", self.sigma));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < self.gamma_max()) {
                v.push(format!(
                    "gamma = {g} outside (0, (1 + 2 beta)/4 - eta) = (0, {})",
                    self.gamma_max()
                ));
            }
        }
        if let Some(r) = self.rho {
            if !(r > 0.5 && r < 1.0 - self.eta) {
                v.push(format!("rho = {r} outside (1/2, 1 - eta)"));
            }
        }
        v
    }
}

/// Grid samples of an H-valued trajectory on [0, T].
///
/// `t0_meaningful` marks whether the stored t = 0 value is a real sample;
/// trajectories with a t^(beta-1) singularity store a placeholder there.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    values: Vec<HVector>,
    t0_meaningful: bool,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, values: Vec<HVector>, t0_meaningful: bool) -> Result<Self> {
        TimeGrid::from_times(times.clone())?;
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), got: values.len() });
        }
        let dim = values[0].dim();
        if values.iter().any(|v| v.dim() != dim) {
            return Err(Error::invalid("trajectory values must share one dimension"));
        }
        Ok(Trajectory { times, values, t0_meaningful })
    }

    pub fn zero(grid: &TimeGrid, dim: usize) -> Self {
        Trajectory {
            times: grid.times().to_vec(),
            values: vec![HVector::zeros(dim); grid.len()],
            t0_meaningful: true,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    pub fn value(&self, j: usize) -> &HVector {
        &self.values[j]
    }

    pub fn values(&self) -> &[HVector] {
        &self.values
    }

    pub fn t0_meaningful(&self) -> bool {
        self.t0_meaningful
    }

    pub fn scale(&self, s: f64) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            values: self.values.iter().map(|v| v.scale(s)).collect(),
            t0_meaningful: self.t0_meaningful,
        }
    }

    pub fn add(&self, other: &Trajectory) -> Result<Trajectory> {
        self.zip_with(other, HVector::add)
    }

    pub fn sub(&self, other: &Trajectory) -> Result<Trajectory> {
        self.zip_with(other, HVector::sub)
    }

    fn zip_with(
        &self,
        other: &Trajectory,
        f: impl Fn(&HVector, &HVector) -> HVector,
    ) -> Result<Trajectory> {
        if self.times != other.times {
            return Err(Error::invalid("trajectories live on different grids"));
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        Ok(Trajectory {
            times: self.times.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(a, b))
                .collect(),
            t0_meaningful: self.t0_meaningful && other.t0_meaningful,
        })
    }

    /// Applies A^theta to every sample.
    pub fn apply_power(&self, op: &SpectralOperator, theta: f64) -> Result<Trajectory> {
        let values = self
            .values
            .iter()
            .map(|v| crate::spectral::apply_fractional_power(op, theta, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory { times: self.times.clone(), values, t0_meaningful: self.t0_meaningful })
    }

    /// Serializes to CSV with header `time,coeff_1,...,coeff_N` at full
    /// round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for k in 1..=self.dim() {
            out.push_str(&format!(",coeff_{k}"));
        }
        out.push('\n');
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{t}"));
            for c in v.coeffs() {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the `to_csv` format. The parsed t = 0 sample is taken at face
    /// value, so the flag is restored as meaningful.
    pub fn from_csv(text: &str) -> Result<Trajectory> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::invalid("empty CSV"))?;
        if !header.starts_with("time,coeff_1") {
            return Err(Error::invalid("CSV header must be time,coeff_1,..."));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let t: f64 = fields
                .next()
                .unwrap()
                .parse()
                .map_err(|_| Error::invalid(format!("bad time on row {i}")))?;
            let coeffs = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad coefficient on row {i}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            times.push(t);
            values.push(HVector::new(coeffs));
        }
        Trajectory::new(times, values, true)
    }
}

/// Components of the weighted norm, plus the weighted modulus profile
/// w(t_j) for each grid point.
#[derive(Debug, Clone)]
pub struct WeightedHolderReport {
    pub sup_component: f64,
    pub holder_component: f64,
    pub norm: f64,
    pub w_profile: Vec<f64>,
}

fn validate_beta_sigma(beta: f64, sigma: f64) -> Result<()> {
    if !(0.0 < sigma && sigma < beta && beta < 1.0) {
        return Err(Error::invalid("weighted norm needs 0 < sigma < beta < 1"));
    }
    Ok(())
}

/// Discrete weighted Hölder norm over all grid points and pairs.
pub fn weighted_holder_norm(
    f: &Trajectory,
    beta: f64,
    sigma: f64,
) -> Result<WeightedHolderReport> {
    validate_beta_sigma(beta, sigma)?;
    let times = f.times();
    let n = times.len();
    if n < 3 {
        return Err(Error::invalid("weighted norm needs at least 2 positive grid points"));
    }

    let mut sup_component = 0.0f64;
    for j in 1..n {
        sup_component = sup_component.max(times[j].powf(1.0 - beta) * f.value(j).norm());
    }

    let mut holder_component = 0.0f64;
    let mut w_profile = vec![0.0f64; n];
    for j in 2..n {
        let mut w_j = 0.0f64;
        for i in 1..j {
            let q = times[i].powf(1.0 - beta + sigma) * f.value(j).sub(f.value(i)).norm()
                / (times[j] - times[i]).powf(sigma);
            w_j = w_j.max(q);
        }
        w_profile[j] = w_j;
        holder_component = holder_component.max(w_j);
    }

    Ok(WeightedHolderReport {
        sup_component,
        holder_component,
        norm: sup_component + holder_component,
        w_profile,
    })
}

/// Origin-limit diagnosis for membership in the weighted space.
#[derive(Debug, Clone)]
pub struct MembershipDiagnosis {
    pub is_member: bool,
    /// Diameter of { t^{1-beta} F(t) } over the first decile.
    pub limit_variation: f64,
    pub limit_ok: bool,
    /// Largest weighted modulus w(t) over the first decile.
    pub w_max_first_decile: f64,
    pub w_ok: bool,
}

/// Checks the two origin conditions at tolerance `tol` over the first decile
/// of positive grid points.
pub fn check_membership(
    f: &Trajectory,
    beta: f64,
    sigma: f64,
    tol: f64,
) -> Result<MembershipDiagnosis> {
    validate_beta_sigma(beta, sigma)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("membership tolerance must be > 0"));
    }
    let report = weighted_holder_norm(f, beta, sigma)?;
    let times = f.times();
    let decile_end = ((times.len() - 1) / 10).max(1);

    let weighted: Vec<HVector> = (1..=decile_end)
        .map(|j| f.value(j).scale(times[j].powf(1.0 - beta)))
        .collect();
    let mut limit_variation = 0.0f64;
    for a in 0..weighted.len() {
        for b in (a + 1)..weighted.len() {
            limit_variation = limit_variation.max(weighted[a].sub(&weighted[b]).norm());
        }
    }

    let w_max_first_decile = report.w_profile[1..=decile_end]
        .iter()
        .fold(0.0f64, |m, &w| m.max(w));

    let limit_ok = limit_variation < tol;
    let w_ok = w_max_first_decile < tol;
    Ok(MembershipDiagnosis {
        is_member: limit_ok && w_ok,
        limit_variation,
        limit_ok,
        w_max_first_decile,
        w_ok,
    })
}

/// Builds F(t) = t^(beta-1) f(t) v from scalar samples of f on the grid.
/// Requires f(0) = 0 so that the weighted value has limit zero; the t = 0
/// slot stores zero and is flagged not meaningful.
pub fn make_weighted_example(
    grid: &TimeGrid,
    f_samples: &[f64],
    beta: f64,
    v: &HVector,
) -> Result<Trajectory> {
    if f_samples.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: f_samples.len() });
    }
    if f_samples[0] != 0.0 {
        return Err(Error::invalid("profile must vanish at t = 0"));
    }
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::invalid("weighted example needs beta in (0,1)"));
    }
    let mut values = Vec::with_capacity(grid.len());
    values.push(HVector::zeros(v.dim()));
    for (j, &t) in grid.times().iter().enumerate().skip(1) {
        values.push(v.scale(t.powf(beta - 1.0) * f_samples[j]));
    }
    Trajectory::new(grid.times().to_vec(), values, false)
}
