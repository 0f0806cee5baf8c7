//! The interpolation weight `f(t) = 1 - γ^t` and the uniform timestep grid.

use crate::error::{Error, Result};

/// Guard applied to `γ^t` wherever it appears in a denominator.
pub const GAMMA_POW_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    gamma: f64,
    n_steps: usize,
}

/// One node of the timestep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridStep {
    pub index: usize,
    pub t: f64,
    pub dt: f64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("gamma must lie in (0, 1), got {gamma}")))
    }
}

/// `1 - γ^t` for `t ∈ [0, 1]`, `γ ∈ (0, 1)`.
pub fn f_of_t(t: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange(format!("t must lie in [0, 1], got {t}")));
    }
    Ok(1.0 - gamma.powf(t))
}

/// `(i / n, 1 / n)` for `i = 0..n`.
pub fn grid(n_steps: usize) -> Result<Vec<GridStep>> {
    if n_steps == 0 {
        return Err(Error::OutOfRange("grid needs at least one step".into()));
    }
    let dt = 1.0 / n_steps as f64;
    Ok((0..n_steps)
        .map(|index| GridStep {
            index,
            t: index as f64 / n_steps as f64,
            dt,
        })
        .collect())
}

impl Schedule {
    pub fn new(gamma: f64, n_steps: usize) -> Result<Self> {
        check_gamma(gamma)?;
        if n_steps == 0 {
            return Err(Error::OutOfRange("schedule needs at least one step".into()));
        }
        Ok(Self { gamma, n_steps })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    /// Time of grid node `i` (`i` may equal `n_steps`, the end of the last step).
    pub fn t_at(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_steps);
        i as f64 / self.n_steps as f64
    }

    pub fn weight(&self, t: f64) -> f64 {
        1.0 - self.gamma.powf(t)
    }

    /// `γ^t`, the remaining prior fraction `1 - f(t)`.
    pub fn gamma_pow(&self, t: f64) -> f64 {
        self.gamma.powf(t)
    }

    pub fn grid(&self) -> Vec<GridStep> {
        grid(self.n_steps).expect("n_steps validated at construction")
    }
}
