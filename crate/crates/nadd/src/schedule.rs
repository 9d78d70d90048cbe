//! Time discretization for the variance-exploding schedule `sigma(t) = t`.
//!
//! Spacing follows the rho-power rule: `t_i = (t_max^(1/rho) +
//! (N-i)/(N-1) * (t_min^(1/rho) - t_max^(1/rho)))^rho`, stored ascending.
//! With `rho = 1` this is a uniform grid; larger `rho` concentrates steps
//! near `t_min`.

use crate::{Error, Result};

/// Ascending diffusion-time grid `t_1 < ... < t_N` with `sigma(t_i) = t_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    rho: f64,
}

impl TimeGrid {
    /// Build an N-point rho-power grid on `[t_min, t_max]`.
    pub fn build(n_steps: usize, t_min: f64, t_max: f64, rho: f64) -> Result<Self> {
        if n_steps < 2 {
            return Err(Error::invalid(format!("n_steps must be >= 2, got {n_steps}")));
        }
        if !(t_min > 0.0) {
            return Err(Error::invalid(format!("t_min must be positive, got {t_min}")));
        }
        if !(t_max > t_min) {
            return Err(Error::invalid(format!(
                "t_max ({t_max}) must exceed t_min ({t_min})"
            )));
        }
        if !(rho >= 1.0) {
            return Err(Error::invalid(format!("rho must be >= 1, got {rho}")));
        }
        let n = n_steps as f64;
        let hi = t_max.powf(1.0 / rho);
        let lo = t_min.powf(1.0 / rho);
        let mut times: Vec<f64> = (1..=n_steps)
            .map(|i| (hi + (n - i as f64) / (n - 1.0) * (lo - hi)).powf(rho))
            .collect();
        // Pin the endpoints exactly; powf round-trips can drift in the last ulp.
        times[0] = t_min;
        times[n_steps - 1] = t_max;
        Ok(TimeGrid { times, rho })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.times.len()
    }

    pub fn t_min(&self) -> f64 {
        self.times[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Smallest `Delta` such that every gap satisfies
    /// `t_{i+1} - t_i <= Delta * T / N`.
    pub fn gap_bound(&self) -> f64 {
        let max_gap = self
            .times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0_f64, f64::max);
        max_gap * self.n_steps() as f64 / self.t_max()
    }

    /// Index of the largest grid time `t_i <= t`, if any.
    pub fn snap_below(&self, t: f64) -> Option<usize> {
        if t < self.times[0] {
            return None;
        }
        Some(match self.times.partition_point(|&x| x <= t) {
            0 => 0,
            p => p - 1,
        })
    }

    /// Exact membership check, used by operations that require `t` on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&x| x == t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_grid_is_the_endpoints() {
        let g = TimeGrid::build(2, 0.002, 16.0, 1.0).unwrap();
        assert_eq!(g.times(), &[0.002, 16.0]);
    }

    #[test]
    fn linear_three_point_grid() {
        let g = TimeGrid::build(3, 1.0, 4.0, 1.0).unwrap();
        assert!((g.times()[1] - 2.5).abs() < 1e-12);
        assert_eq!(g.t_min(), 1.0);
        assert_eq!(g.t_max(), 4.0);
    }

    #[test]
    fn edm_grid_is_strictly_increasing_with_finite_gap_bound() {
        let g = TimeGrid::build(29, 0.002, 16.0, 7.0).unwrap();
        assert_eq!(g.n_steps(), 29);
        for w in g.times().windows(2) {
            assert!(w[1] > w[0], "grid not strictly increasing: {w:?}");
        }
        assert_eq!(g.t_min(), 0.002);
        assert_eq!(g.t_max(), 16.0);
        let delta = g.gap_bound();
        assert!(delta.is_finite());
        // Geometric-like grids have a large final gap, so Delta > 1.
        assert!(delta > 1.0);
    }

    #[test]
    fn gap_bound_linear_example() {
        let g = TimeGrid::build(3, 1.0, 4.0, 1.0).unwrap();
        assert!((g.gap_bound() - 1.125).abs() < 1e-12);
    }

    #[test]
    fn gap_bound_matches_brute_force() {
        for &(n, rho) in &[(5usize, 1.0), (10, 3.0), (29, 7.0)] {
            let g = TimeGrid::build(n, 0.01, 8.0, rho).unwrap();
            let delta = g.gap_bound();
            let t = g.times();
            let bound = delta * g.t_max() / n as f64;
            let mut tight = false;
            for w in t.windows(2) {
                let gap = w[1] - w[0];
                assert!(gap <= bound + 1e-12);
                if (gap - bound).abs() < 1e-9 * bound {
                    tight = true;
                }
            }
            assert!(tight, "Delta is not the smallest constant");
        }
    }

    #[test]
    fn uniform_gap_bound_is_near_one() {
        let n = 20usize;
        let t_max = 5.0;
        let g = TimeGrid::build(n, t_max / n as f64, t_max, 1.0).unwrap();
        assert!((g.gap_bound() - 1.0).abs() < 0.05);
    }

    #[test]
    fn invalid_arguments_rejected() {
        assert!(TimeGrid::build(1, 0.1, 1.0, 1.0).is_err());
        assert!(TimeGrid::build(5, 0.0, 1.0, 1.0).is_err());
        assert!(TimeGrid::build(5, -0.1, 1.0, 1.0).is_err());
        assert!(TimeGrid::build(5, 2.0, 1.0, 1.0).is_err());
        assert!(TimeGrid::build(5, 0.1, 1.0, 0.5).is_err());
    }

    #[test]
    fn snap_below_picks_largest_at_or_below() {
        let g = TimeGrid::build(3, 1.0, 4.0, 1.0).unwrap();
        assert_eq!(g.snap_below(0.5), None);
        assert_eq!(g.snap_below(1.0), Some(0));
        assert_eq!(g.snap_below(3.0), Some(1));
        assert_eq!(g.snap_below(4.0), Some(2));
        assert_eq!(g.snap_below(100.0), Some(2));
    }
}
