//! Uniform time grids.

use crate::error::{Error, Result};

/// Uniform partition 0 = t_0 < t_1 < ... < t_N = T with t_i = i * dt.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    /// Grid over [0, horizon] with the given step. `dt` must divide the
    /// horizon (up to floating-point slack).
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let ratio = horizon / dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "dt = {dt} does not divide horizon = {horizon}"
            )));
        }
        Ok(TimeGrid {
            n_steps: n as usize,
            dt,
        })
    }

    /// Grid over [0, horizon] with a fixed number of steps.
    pub fn with_steps(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidGrid("n_steps must be positive".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(TimeGrid {
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid points, n_steps + 1.
    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.dt
    }

    /// Step index owning time `t`, i.e. the k with t in [t_k, t_{k+1});
    /// t = T maps to the last step.
    pub fn step_of(&self, t: f64) -> usize {
        let k = (t / self.dt).floor() as usize;
        k.min(self.n_steps.saturating_sub(1))
    }

    /// Integer factor by which `self` refines `coarser`, if any.
    pub fn refinement_factor(&self, coarser: &TimeGrid) -> Option<usize> {
        let ratio = coarser.dt / self.dt;
        let f = ratio.round();
        if f >= 1.0
            && (ratio - f).abs() <= 1e-9 * ratio
            && self.n_steps == coarser.n_steps * f as usize
        {
            Some(f as usize)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_grid_is_exact() {
        let g = TimeGrid::new(1.0, 0.000244140625).unwrap(); // 2^-12
        assert_eq!(g.n_steps(), 4096);
        assert_eq!(g.horizon(), 1.0);
        assert_eq!(g.time(4096), 1.0);
    }

    #[test]
    fn rejects_non_dividing_dt() {
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 0.0).is_err());
        assert!(TimeGrid::new(-1.0, 0.1).is_err());
    }

    #[test]
    fn refinement_factor() {
        let fine = TimeGrid::with_steps(1.0, 64).unwrap();
        let coarse = TimeGrid::with_steps(1.0, 16).unwrap();
        assert_eq!(fine.refinement_factor(&coarse), Some(4));
        assert_eq!(coarse.refinement_factor(&fine), None);
        let odd = TimeGrid::with_steps(1.0, 24).unwrap();
        assert_eq!(fine.refinement_factor(&odd), None);
    }

    #[test]
    fn step_of_clamps_right_endpoint() {
        let g = TimeGrid::with_steps(1.0, 8).unwrap();
        assert_eq!(g.step_of(0.0), 0);
        assert_eq!(g.step_of(0.124), 0);
        assert_eq!(g.step_of(0.125), 1);
        assert_eq!(g.step_of(1.0), 7);
    }
}
