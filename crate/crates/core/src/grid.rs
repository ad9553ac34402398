//! Time grids on [0, T].

use crate::error::{Error, Result};

/// Strictly increasing partition 0 = t_0 < t_1 < ... < t_M = T.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `steps` steps on [0, t_end].
    pub fn uniform(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || steps == 0 {
            return Err(Error::invalid("grid needs t_end > 0 and steps >= 1"));
        }
        // j/steps first: the endpoint is t_end exactly, so a grid rebuilt
        // from its own horizon reproduces the same times bit for bit.
        let times = (0..=steps)
            .map(|j| t_end * (j as f64 / steps as f64))
            .collect();
        Ok(TimeGrid { times })
    }

    /// Graded grid t_j = t_end (j/M)^power, clustered at the origin.
    ///
    /// `power = 2` is the default used when forcing terms carry a t^(beta-1)
    /// singularity.
    pub fn graded(t_end: f64, steps: usize, power: f64) -> Result<Self> {
        if !(t_end > 0.0) || steps == 0 || !(power >= 1.0) {
            return Err(Error::invalid(
                "graded grid needs t_end > 0, steps >= 1, power >= 1",
            ));
        }
        let times = (0..=steps)
            .map(|j| t_end * (j as f64 / steps as f64).powf(power))
            .collect();
        Ok(TimeGrid { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::invalid("grid must start at t_0 = 0 with >= 2 points"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid times must be strictly increasing"));
        }
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of grid points (steps + 1).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Width of step j, i.e. t_{j+1} - t_j.
    pub fn step(&self, j: usize) -> f64 {
        self.times[j + 1] - self.times[j]
    }

    /// True when all steps agree to relative tolerance 1e-9.
    pub fn is_uniform(&self) -> bool {
        let h0 = self.step(0);
        (0..self.steps()).all(|j| (self.step(j) - h0).abs() <= 1e-9 * h0)
    }

    /// Indices of the first decile of positive grid points (at least one).
    pub fn first_decile(&self) -> std::ops::RangeInclusive<usize> {
        let m = self.steps();
        1..=((m / 10).max(1))
    }
}
