//! Ensembles of trajectories in flat storage.
//!
//! Monte Carlo state lives in one contiguous buffer indexed by
//! (realization, grid point, mode). Reductions over realizations are chunked
//! at a fixed size and summed in chunk order, so results do not depend on
//! how many threads rayon uses.

use crate::error::{Error, Result};
use crate::holder::Trajectory;
use crate::spectral::HVector;
use rayon::prelude::*;

/// Fixed reduction chunk: determinism requires this to be independent of the
/// thread count.
pub const REDUCTION_CHUNK: usize = 64;

/// Ensemble of H-valued paths over one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    times: Vec<f64>,
    dim: usize,
    n_realizations: usize,
    data: Vec<f64>,
}

impl Ensemble {
    pub fn zeros(times: Vec<f64>, dim: usize, n_realizations: usize) -> Self {
        let len = times.len() * dim * n_realizations;
        Ensemble { times, dim, n_realizations, data: vec![0.0; len] }
    }

    pub fn from_flat(
        times: Vec<f64>,
        dim: usize,
        n_realizations: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != times.len() * dim * n_realizations {
            return Err(Error::DimensionMismatch {
                expected: times.len() * dim * n_realizations,
                got: data.len(),
            });
        }
        Ok(Ensemble { times, dim, n_realizations, data })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_realizations(&self) -> usize {
        self.n_realizations
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn state(&self, r: usize, j: usize) -> &[f64] {
        let base = (r * self.times.len() + j) * self.dim;
        &self.data[base..base + self.dim]
    }

    #[inline]
    pub fn state_mut(&mut self, r: usize, j: usize) -> &mut [f64] {
        let base = (r * self.times.len() + j) * self.dim;
        &mut self.data[base..base + self.dim]
    }

    /// Whole path of one realization: length n_times * dim.
    #[inline]
    pub fn path(&self, r: usize) -> &[f64] {
        let stride = self.times.len() * self.dim;
        &self.data[r * stride..(r + 1) * stride]
    }

    #[inline]
    pub fn path_mut(&mut self, r: usize) -> &mut [f64] {
        let stride = self.times.len() * self.dim;
        &mut self.data[r * stride..(r + 1) * stride]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_trajectory(&self, r: usize) -> Trajectory {
        let values = (0..self.times.len())
            .map(|j| HVector::new(self.state(r, j).to_vec()))
            .collect();
        Trajectory::new(self.times.clone(), values, true).expect("ensemble grid is valid")
    }

    /// Fills each realization's path through `fill` in parallel; the closure
    /// must be a pure function of the realization index.
    pub fn fill_paths<F>(&mut self, fill: F)
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        let stride = self.times.len() * self.dim;
        self.data
            .par_chunks_mut(stride)
            .enumerate()
            .for_each(|(r, path)| fill(r, path));
    }

    /// Per-time mean and standard error of a per-state scalar.
    ///
    /// Accumulation is chunked in realization order (chunk size
    /// [`REDUCTION_CHUNK`]) and the chunk sums are folded sequentially, so
    /// the result is bit-stable across thread counts.
    pub fn per_time_mean_se<F>(&self, f: F) -> (Vec<f64>, Vec<f64>)
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let n_times = self.times.len();
        let chunk_sums: Vec<(Vec<f64>, Vec<f64>)> = (0..self.n_realizations)
            .collect::<Vec<_>>()
            .par_chunks(REDUCTION_CHUNK)
            .map(|chunk| {
                let mut sum = vec![0.0; n_times];
                let mut sumsq = vec![0.0; n_times];
                for &r in chunk {
                    for j in 0..n_times {
                        let v = f(self.state(r, j));
                        sum[j] += v;
                        sumsq[j] += v * v;
                    }
                }
                (sum, sumsq)
            })
            .collect();

        let mut sum = vec![0.0; n_times];
        let mut sumsq = vec![0.0; n_times];
        for (s, q) in chunk_sums {
            for j in 0..n_times {
                sum[j] += s[j];
                sumsq[j] += q[j];
            }
        }
        let n = self.n_realizations as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let se = sumsq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                if self.n_realizations < 2 {
                    return 0.0;
                }
                let var = (q / n - m * m).max(0.0) * n / (n - 1.0);
                (var / n).sqrt()
            })
            .collect();
        (mean, se)
    }

    /// Mean path as a trajectory (chunk-deterministic).
    pub fn mean_trajectory(&self) -> Trajectory {
        let n_times = self.times.len();
        let stride = n_times * self.dim;
        let chunk_sums: Vec<Vec<f64>> = (0..self.n_realizations)
            .collect::<Vec<_>>()
            .par_chunks(REDUCTION_CHUNK)
            .map(|chunk| {
                let mut sum = vec![0.0; stride];
                for &r in chunk {
                    for (acc, v) in sum.iter_mut().zip(self.path(r)) {
                        *acc += v;
                    }
                }
                sum
            })
            .collect();
        let mut sum = vec![0.0; stride];
        for s in chunk_sums {
            for (acc, v) in sum.iter_mut().zip(&s) {
                *acc += v;
            }
        }
        let n = self.n_realizations as f64;
        let values = (0..n_times)
            .map(|j| {
                HVector::new(sum[j * self.dim..(j + 1) * self.dim].iter().map(|s| s / n).collect())
            })
            .collect();
        Trajectory::new(self.times.clone(), values, true).expect("ensemble grid is valid")
    }

    pub fn sub(&self, other: &Ensemble) -> Result<Ensemble> {
        if self.times != other.times
            || self.dim != other.dim
            || self.n_realizations != other.n_realizations
        {
            return Err(Error::invalid("ensembles must share grid, dim, and size"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ensemble::from_flat(self.times.clone(), self.dim, self.n_realizations, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn indexing_and_mean() {
        let mut e = Ensemble::zeros(vec![0.0, 0.5, 1.0], 2, 4);
        for r in 0..4 {
            for j in 0..3 {
                let s = e.state_mut(r, j);
                s[0] = r as f64;
                s[1] = j as f64;
            }
        }
        assert_eq!(e.state(2, 1), &[2.0, 1.0]);
        let mean = e.mean_trajectory();
        assert_abs_diff_eq!(mean.value(1).coeffs()[0], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(mean.value(1).coeffs()[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn per_time_stats_match_direct_formula() {
        let mut e = Ensemble::zeros(vec![0.0, 1.0], 1, 3);
        for (r, v) in [(0usize, 1.0), (1, 2.0), (2, 4.0)] {
            e.state_mut(r, 1)[0] = v;
        }
        let (mean, se) = e.per_time_mean_se(|s| s[0]);
        assert_abs_diff_eq!(mean[1], 7.0 / 3.0, epsilon = 1e-15);
        // Sample variance 7/3, SE = sqrt(var/3).
        assert_abs_diff_eq!(se[1], (7.0f64 / 3.0 / 3.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn reductions_stable_across_thread_counts() {
        let mut e = Ensemble::zeros(vec![0.0, 1.0], 1, 999);
        for r in 0..999 {
            e.state_mut(r, 1)[0] = (r as f64 * 0.7).sin() * 1e-3 + 1.0;
        }
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| e.per_time_mean_se(|s| s[0]))
        };
        let (m1, s1) = run(1);
        let (m4, s4) = run(4);
        assert_eq!(m1[1].to_bits(), m4[1].to_bits());
        assert_eq!(s1[1].to_bits(), s4[1].to_bits());
    }
}
