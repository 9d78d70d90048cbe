//! Probability-flow ODE update functions (Euler and Heun) and the plain
//! reverse stepper, independent of any correction machinery.

use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::vecmath;
use crate::{Error, Result, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Euler,
    Heun,
}

/// The update function Phi evaluating dx/dt between two grid times.
#[derive(Debug, Clone)]
pub struct UpdateFn<'a> {
    pub method: SolverMethod,
    pub denoiser: &'a Denoiser,
    /// Final grid time; Heun's second evaluation is skipped once
    /// `t_lo <= t_final` (standard convention for the last step).
    pub t_final: f64,
}

impl<'a> UpdateFn<'a> {
    pub fn new(method: SolverMethod, denoiser: &'a Denoiser, t_final: f64) -> Self {
        UpdateFn {
            method,
            denoiser,
            t_final,
        }
    }

    /// Slope for the step from `t_hi` down to `t_lo`.
    ///
    /// Euler: `d = (x - D(x, t_hi)) / t_hi`. Heun averages the Euler slope
    /// with the slope re-evaluated at the provisional endpoint, except on
    /// the final step.
    pub fn phi(&self, x: &[f64], t_hi: f64, t_lo: f64) -> Result<Vec<f64>> {
        if !(t_hi > t_lo && t_lo >= 0.0) {
            return Err(Error::invalid(format!(
                "phi needs t_hi > t_lo >= 0, got t_hi={t_hi}, t_lo={t_lo}"
            )));
        }
        let d1 = self.euler_slope(x, t_hi);
        match self.method {
            SolverMethod::Euler => Ok(d1),
            SolverMethod::Heun => {
                if t_lo <= self.t_final {
                    return Ok(d1);
                }
                let x_prime = vecmath::axpy(x, t_lo - t_hi, &d1);
                let d2 = self.euler_slope(&x_prime, t_lo);
                Ok(d1.iter().zip(&d2).map(|(a, b)| 0.5 * (a + b)).collect())
            }
        }
    }

    fn euler_slope(&self, x: &[f64], t: f64) -> Vec<f64> {
        let d = self.denoiser.evaluate(x, t);
        x.iter().zip(&d).map(|(xi, di)| (xi - di) / t).collect()
    }

    /// One reverse step: `x + (t_lo - t_hi) * phi(x, t_hi, t_lo)`.
    pub fn reverse_step(&self, x: &[f64], t_hi: f64, t_lo: f64) -> Result<Sample> {
        let d = self.phi(x, t_hi, t_lo)?;
        Ok(vecmath::axpy(x, t_lo - t_hi, &d))
    }

    /// Chain reverse steps down a slice of ascending grid times, starting
    /// from the last one. Used as the no-correction reference path.
    pub fn reverse_chain(&self, x: &[f64], times: &[f64]) -> Result<Sample> {
        let mut cur = x.to_vec();
        for w in times.windows(2).rev() {
            cur = self.reverse_step(&cur, w[1], w[0])?;
        }
        Ok(cur)
    }
}
