//! Cylindrical Wiener process machinery.
//!
//! W is cylindrical on U with orthonormal basis {e_m}: the coordinates
//! β_m(t) = ⟨W(t), e_m⟩ are independent scalar Brownian motions. The
//! embedding J e_m = e_m/m lands W in the larger space U_1 with norm
//! ‖h‖_{U_1} = sqrt(Σ_n ⟨h, e_n⟩²/n²), and Q = JJ* is nuclear with
//! Tr Q = Σ_m 1/m² = π²/6. The diffusion coefficient G(t): U → H acts
//! through the coupling matrix g_{k,m}(t) and carries the Hilbert-Schmidt
//! norm ‖G(t)‖² = Σ_{k,m} g_{k,m}(t)².
//!
//! Sampling works directly in U-coordinates: increments ΔW_m(t_j) are
//! N(0, Δt_j), drawn from counter-based streams keyed by
//! (seed, realization, step, mode) so the ensemble is bit-reproducible
//! regardless of evaluation order. The U_1 embedding appears only in
//! diagnostics, never in sampling.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng::{self, salt};
use crate::spectral::HVector;
use std::fmt::Write as _;

/// Coupling G(t_j) between the U-modes and the H-modes.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    /// G(t) = g(t) ⟨·, e_1⟩_U φ: a single U-mode driving the profile φ.
    Separable { g: Vec<f64>, phi: HVector },
    /// Full matrices g_{k,m}(t_j), row-major dim × mode_count per grid time.
    Dense { matrices: Vec<Vec<f64>> },
}

/// Time-sampled diffusion coefficient on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    times: Vec<f64>,
    dim: usize,
    mode_count: usize,
    coupling: Coupling,
}

impl NoiseModel {
    pub fn separable(times: Vec<f64>, g: Vec<f64>, phi: HVector) -> Result<Self> {
        TimeGrid::from_times(times.clone())?;
        if g.len() != times.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), got: g.len() });
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("coupling samples must be finite"));
        }
        if phi.dim() == 0 {
            return Err(Error::invalid("coupling profile must be nonempty"));
        }
        let dim = phi.dim();
        Ok(NoiseModel { times, dim, mode_count: 1, coupling: Coupling::Separable { g, phi } })
    }

    pub fn dense(
        times: Vec<f64>,
        dim: usize,
        mode_count: usize,
        matrices: Vec<Vec<f64>>,
    ) -> Result<Self> {
        TimeGrid::from_times(times.clone())?;
        if mode_count == 0 || dim == 0 {
            return Err(Error::invalid("dense coupling needs dim >= 1 and mode_count >= 1"));
        }
        if matrices.len() != times.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), got: matrices.len() });
        }
        for mat in &matrices {
            if mat.len() != dim * mode_count {
                return Err(Error::DimensionMismatch { expected: dim * mode_count, got: mat.len() });
            }
            if !mat.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("coupling entries must be finite"));
            }
        }
        Ok(NoiseModel { times, dim, mode_count, coupling: Coupling::Dense { matrices } })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode_count(&self) -> usize {
        self.mode_count
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    /// g_{k,m}(t_j).
    #[inline]
    pub fn entry(&self, j: usize, k: usize, m: usize) -> f64 {
        match &self.coupling {
            Coupling::Separable { g, phi } => {
                if m == 0 {
                    g[j] * phi.coeffs()[k]
                } else {
                    0.0
                }
            }
            Coupling::Dense { matrices } => matrices[j][k * self.mode_count + m],
        }
    }

    /// Σ_m g_{k,m}(t_j)², the variance rate injected into H-mode k.
    pub fn row_sq(&self, j: usize, k: usize) -> f64 {
        match &self.coupling {
            Coupling::Separable { g, phi } => {
                let v = g[j] * phi.coeffs()[k];
                v * v
            }
            Coupling::Dense { .. } => {
                (0..self.mode_count).map(|m| self.entry(j, k, m).powi(2)).sum()
            }
        }
    }

    /// ‖G(t_j)‖_{L2(U;H)} = sqrt(Σ_{k,m} g_{k,m}(t_j)²).
    pub fn hs_norm(&self, j: usize) -> f64 {
        (0..self.dim).map(|k| self.row_sq(j, k)).sum::<f64>().sqrt()
    }

    /// sup over the grid of the Hilbert-Schmidt norm.
    pub fn hs_norm_sup(&self) -> f64 {
        (0..self.times.len()).map(|j| self.hs_norm(j)).fold(0.0, f64::max)
    }

    /// Materialized row-major dim × mode_count matrix at t_j.
    pub fn dense_matrix(&self, j: usize) -> Vec<f64> {
        let mut mat = vec![0.0; self.dim * self.mode_count];
        for k in 0..self.dim {
            for m in 0..self.mode_count {
                mat[k * self.mode_count + m] = self.entry(j, k, m);
            }
        }
        mat
    }

    /// Variance dropped by the U-mode truncation, when it is known exactly.
    ///
    /// The separable form couples only e_1, so nothing is dropped. A dense
    /// coupling is itself the definition of the model and carries no
    /// declared decay beyond mode_count, so the tail is unknown.
    pub fn truncation_tail(&self) -> Option<f64> {
        match &self.coupling {
            Coupling::Separable { .. } => Some(0.0),
            Coupling::Dense { .. } => None,
        }
    }
}

/// ‖h‖_{U_1} = sqrt(Σ_n h_n²/n²) for coefficients over {e_n}, n from 1.
pub fn u1_norm(h: &[f64]) -> f64 {
    h.iter()
        .enumerate()
        .map(|(i, v)| {
            let n = (i + 1) as f64;
            (v / n).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Partial sum Σ_{m=1}^{M} 1/m² of Tr(JJ*); the dropped tail is below 1/M.
pub fn nuclear_trace(mode_count: usize) -> f64 {
    // Small terms first keeps the summation error at rounding level.
    (1..=mode_count).rev().map(|m| 1.0 / (m as f64 * m as f64)).sum()
}

/// Integral bound on the tail of the nuclear trace: Σ_{m>M} 1/m² < 1/M.
pub fn nuclear_trace_tail_bound(mode_count: usize) -> f64 {
    1.0 / mode_count as f64
}

/// Increments ΔW_m(t_j) for a truncated cylindrical process.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrements {
    seed: u64,
    mode_count: usize,
    times: Vec<f64>,
    n_realizations: usize,
    data: Vec<f64>,
}

/// sqrt(Δt) N(0,1) from the stream keyed (seed, realization, step, mode).
#[inline]
pub fn increment_value(seed: u64, r: usize, j: usize, m: usize, dt: f64) -> f64 {
    dt.sqrt() * rng::standard_normal(seed, salt::WIENER, r as u64, j as u64, m as u64)
}

impl WienerIncrements {
    pub fn sample(
        mode_count: usize,
        grid: &TimeGrid,
        n_realizations: usize,
        seed: u64,
    ) -> Result<Self> {
        if mode_count == 0 {
            return Err(Error::invalid("mode_count must be >= 1"));
        }
        if grid.steps() == 0 {
            return Err(Error::invalid("grid must contain at least one step"));
        }
        if n_realizations == 0 {
            return Err(Error::invalid("n_realizations must be >= 1"));
        }
        let steps = grid.steps();
        let mut data = vec![0.0; n_realizations * steps * mode_count];
        for r in 0..n_realizations {
            for j in 0..steps {
                let dt = grid.step(j);
                for m in 0..mode_count {
                    data[(r * steps + j) * mode_count + m] = increment_value(seed, r, j, m, dt);
                }
            }
        }
        Ok(WienerIncrements {
            seed,
            mode_count,
            times: grid.times().to_vec(),
            n_realizations,
            data,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode_count(&self) -> usize {
        self.mode_count
    }

    pub fn n_realizations(&self) -> usize {
        self.n_realizations
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// ΔW_m(t_j) for realization r.
    #[inline]
    pub fn increment(&self, r: usize, j: usize, m: usize) -> f64 {
        let steps = self.times.len() - 1;
        self.data[(r * steps + j) * self.mode_count + m]
    }

    /// Audit dump: one row per (realization, step, mode).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("realization,step,mode,increment\n");
        for r in 0..self.n_realizations {
            for j in 0..self.steps() {
                for m in 0..self.mode_count {
                    writeln!(out, "{},{},{},{}", r, j, m, self.increment(r, j, m))
                        .expect("string write");
                }
            }
        }
        out
    }
}
