//! The subordinator on the `δ`-grid and its discretized inverse.
//!
//! `d_values[n] = D_{nδ}` is built from i.i.d. increments distributed as
//! `D_δ` until the first index exceeding the horizon. The stop index `N`
//! is the last grid index with `D_{Nδ} ≤ T`, and
//! `E^δ_t = (min{n : D_{nδ} > t} - 1)δ`.
//!
//! Paths used as a fine reference for several step sizes are extended past
//! `T` so that every coarsening `m` needed later finds its own first-passage
//! index inside the stored values.

use alloc::vec::Vec;

use crate::noise::{NoiseError, NoiseStream, SubordinatorSpec};

/// Default cap on the number of grid steps one path may take.
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TimeChangeError {
    #[error("inner-clock step must lie in (0, 1), got {0}")]
    InvalidStep(f64),
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("coarsening factor must be at least 1")]
    InvalidFactor,
    #[error("subordinator did not pass the horizon within {steps} steps")]
    StepCapExceeded { steps: u64 },
    #[error("time {t} lies outside [0, {horizon}]")]
    OutOfDomain { t: f64, horizon: f64 },
    #[error("grid values must start at 0, be nondecreasing and finite, and exceed the horizon")]
    InvalidValues,
    #[error(
        "fine path holds {available} grid values but coarsening needs index {needed}; \
         re-simulate with `simulate_extended` using a multiple of the factor"
    )]
    InsufficientExtension { needed: usize, available: usize },
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// A simulated subordinator path on the `δ`-grid with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedTimeChange {
    delta: f64,
    horizon: f64,
    d_values: Vec<f64>,
    stop_index: usize,
}

impl DiscretizedTimeChange {
    /// Simulates `D` on the `δ`-grid until it first exceeds `horizon`.
    pub fn simulate(
        spec: &SubordinatorSpec,
        delta: f64,
        horizon: f64,
        rng: &mut NoiseStream,
    ) -> Result<Self, TimeChangeError> {
        Self::simulate_extended(spec, delta, horizon, 1, DEFAULT_MAX_STEPS, rng)
    }

    /// Simulates until `D` exceeds `horizon` at a grid index divisible by
    /// `multiple`. Every coarsening by a divisor of `multiple` is then
    /// well-defined.
    pub fn simulate_extended(
        spec: &SubordinatorSpec,
        delta: f64,
        horizon: f64,
        multiple: usize,
        max_steps: u64,
        rng: &mut NoiseStream,
    ) -> Result<Self, TimeChangeError> {
        check_step(delta)?;
        check_horizon(horizon)?;
        if multiple == 0 {
            return Err(TimeChangeError::InvalidFactor);
        }
        let sampler = spec.sampler(delta)?;
        let mut d_values = Vec::with_capacity(1024);
        d_values.push(0.0);
        let mut current = 0.0;
        let mut steps = 0u64;
        loop {
            let index = d_values.len() - 1;
            if current > horizon && index % multiple == 0 {
                break;
            }
            if steps == max_steps {
                return Err(TimeChangeError::StepCapExceeded { steps });
            }
            current += sampler.sample(rng)?;
            d_values.push(current);
            steps += 1;
        }
        let stop_index = d_values.partition_point(|&d| d <= horizon) - 1;
        Ok(Self {
            delta,
            horizon,
            d_values,
            stop_index,
        })
    }

    /// Wraps precomputed grid values, for replay and tests.
    pub fn from_values(delta: f64, horizon: f64, d_values: Vec<f64>) -> Result<Self, TimeChangeError> {
        check_step(delta)?;
        check_horizon(horizon)?;
        let valid = d_values.first() == Some(&0.0)
            && d_values.iter().all(|d| d.is_finite())
            && d_values.windows(2).all(|w| w[0] <= w[1])
            && d_values.last().is_some_and(|&d| d > horizon);
        if !valid {
            return Err(TimeChangeError::InvalidValues);
        }
        let stop_index = d_values.partition_point(|&d| d <= horizon) - 1;
        Ok(Self {
            delta,
            horizon,
            d_values,
            stop_index,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// All stored grid values, including any extension past `N + 1`.
    pub fn d_values(&self) -> &[f64] {
        &self.d_values
    }

    /// `N`, the last index with `D_{Nδ} ≤ T`.
    pub fn stop_index(&self) -> usize {
        self.stop_index
    }

    /// `τ_n = D_{nδ}`.
    pub fn tau(&self, n: usize) -> f64 {
        self.d_values[n]
    }

    /// `E^δ_T = Nδ`.
    pub fn terminal_inverse(&self) -> f64 {
        self.stop_index as f64 * self.delta
    }

    /// `n_t = max{n : τ_n ≤ t}`.
    pub fn step_index(&self, t: f64) -> Result<usize, TimeChangeError> {
        self.check_domain(t)?;
        Ok(self.d_values[..=self.stop_index].partition_point(|&d| d <= t) - 1)
    }

    /// `E^δ_t`, piecewise constant on the right-open intervals `[τ_n, τ_{n+1})`.
    pub fn inverse_at(&self, t: f64) -> Result<f64, TimeChangeError> {
        Ok(self.step_index(t)? as f64 * self.delta)
    }

    /// Sequential evaluator for nondecreasing query times.
    pub fn cursor(&self) -> InverseCursor<'_> {
        InverseCursor { path: self, index: 0 }
    }

    /// The path seen at step `mδ`: every `m`-th grid value.
    pub fn coarsen(&self, m: usize) -> Result<Self, TimeChangeError> {
        if m == 0 {
            return Err(TimeChangeError::InvalidFactor);
        }
        if m == 1 {
            return Ok(self.clone());
        }
        let coarse_delta = self.delta * m as f64;
        if !(coarse_delta.is_finite() && coarse_delta > 0.0) {
            return Err(TimeChangeError::InvalidStep(coarse_delta));
        }
        let mut d_values: Vec<f64> = self.d_values.iter().step_by(m).copied().collect();
        match d_values.iter().position(|&d| d > self.horizon) {
            Some(first_above) => d_values.truncate(first_above + 1),
            None => {
                return Err(TimeChangeError::InsufficientExtension {
                    needed: (self.stop_index / m + 1) * m,
                    available: self.d_values.len(),
                })
            }
        }
        let stop_index = d_values.len() - 2;
        Ok(Self {
            // The coarse step may exceed 1 when only the grid bookkeeping
            // matters, so it bypasses `check_step`.
            delta: coarse_delta,
            horizon: self.horizon,
            d_values,
            stop_index,
        })
    }

    fn check_domain(&self, t: f64) -> Result<(), TimeChangeError> {
        if t >= 0.0 && t <= self.horizon {
            Ok(())
        } else {
            Err(TimeChangeError::OutOfDomain {
                t,
                horizon: self.horizon,
            })
        }
    }
}

/// Amortized O(1) evaluation of `n_t` along nondecreasing `t`.
#[derive(Debug, Clone)]
pub struct InverseCursor<'a> {
    path: &'a DiscretizedTimeChange,
    index: usize,
}

impl InverseCursor<'_> {
    /// `n_t`. Queries must not decrease; a smaller `t` than the previous
    /// query falls back to a binary search.
    pub fn step_index(&mut self, t: f64) -> Result<usize, TimeChangeError> {
        self.path.check_domain(t)?;
        let d = &self.path.d_values;
        if d[self.index] > t {
            self.index = self.path.step_index(t)?;
            return Ok(self.index);
        }
        while self.index < self.path.stop_index && d[self.index + 1] <= t {
            self.index += 1;
        }
        Ok(self.index)
    }

    pub fn inverse_at(&mut self, t: f64) -> Result<f64, TimeChangeError> {
        Ok(self.step_index(t)? as f64 * self.path.delta)
    }
}

fn check_step(delta: f64) -> Result<(), TimeChangeError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(TimeChangeError::InvalidStep(delta))
    }
}

fn check_horizon(horizon: f64) -> Result<(), TimeChangeError> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(TimeChangeError::InvalidHorizon(horizon))
    }
}
