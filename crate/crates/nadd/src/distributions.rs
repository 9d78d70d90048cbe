//! Diagonal Gaussian mixtures with exact time-t scores and denoisers.
//!
//! The smoothed marginal at noise level `sigma` is again a diagonal mixture
//! (per-axis variance `v + sigma^2`), so the score and the posterior-mean
//! denoiser have closed forms via responsibility-weighted Gaussian terms.
//! Responsibilities are computed in log space; densities at `sigma = 16`
//! underflow otherwise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::vecmath::logsumexp;
use crate::{Error, Result, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance, strictly positive.
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<MixtureComponent>,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let dim = components[0].mean.len();
        if dim == 0 {
            return Err(Error::invalid("mixture dimension must be positive"));
        }
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.variance.len() != dim {
                return Err(Error::invalid(format!(
                    "component {k}: mean/variance length mismatch (dim {dim})"
                )));
            }
            if !(c.weight >= 0.0 && c.weight <= 1.0) || !c.weight.is_finite() {
                return Err(Error::invalid(format!(
                    "component {k}: weight {} outside [0, 1]",
                    c.weight
                )));
            }
            if c.variance.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "component {k}: variances must be strictly positive"
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "component weights sum to {total}, expected 1"
            )));
        }
        Ok(GaussianMixture { components, dim })
    }

    /// Convenience constructor: a single isotropic Gaussian.
    pub fn single(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean,
            variance: vec![variance; d],
        }])
    }

    /// The 1-D two-mode toy: equal weights at +/-center with shared variance.
    pub fn bimodal_1d(center: f64, variance: f64) -> Self {
        Self::new(vec![
            MixtureComponent {
                weight: 0.5,
                mean: vec![-center],
                variance: vec![variance],
            },
            MixtureComponent {
                weight: 0.5,
                mean: vec![center],
                variance: vec![variance],
            },
        ])
        .expect("valid by construction")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// i.i.d. draws, deterministic for a fixed RNG state.
    pub fn sample<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<Sample> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }

    /// Draw one sample together with the index of its source component.
    pub fn sample_with_component<R: Rng>(&self, rng: &mut R) -> (Sample, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                k = i;
                break;
            }
        }
        let c = &self.components[k];
        let x = (0..self.dim)
            .map(|j| c.mean[j] + c.variance[j].sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, k)
    }

    pub fn sample_one<R: Rng>(&self, rng: &mut R) -> Sample {
        self.sample_with_component(rng).0
    }

    /// Per-component log densities of the sigma-smoothed mixture at `x`
    /// (weights included).
    fn smoothed_log_terms(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        const LN_2PI: f64 = 1.8378770664093453;
        self.components
            .iter()
            .map(|c| {
                let mut lp = if c.weight > 0.0 {
                    c.weight.ln()
                } else {
                    f64::NEG_INFINITY
                };
                for j in 0..self.dim {
                    let s2 = c.variance[j] + sigma * sigma;
                    let d = x[j] - c.mean[j];
                    lp += -0.5 * (LN_2PI + s2.ln()) - d * d / (2.0 * s2);
                }
                lp
            })
            .collect()
    }

    /// log p_sigma(x), the density of the mixture convolved with N(0, sigma^2 I).
    pub fn log_density(&self, x: &[f64], sigma: f64) -> f64 {
        logsumexp(&self.smoothed_log_terms(x, sigma))
    }

    /// Score of the smoothed density: grad_x log p_sigma(x).
    pub fn score(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let log_terms = self.smoothed_log_terms(x, sigma);
        let lz = logsumexp(&log_terms);
        let mut out = vec![0.0; self.dim];
        for (c, lt) in self.components.iter().zip(&log_terms) {
            let r = (lt - lz).exp();
            if r == 0.0 {
                continue;
            }
            for j in 0..self.dim {
                let s2 = c.variance[j] + sigma * sigma;
                out[j] += r * (c.mean[j] - x[j]) / s2;
            }
        }
        out
    }

    /// Exact posterior mean E[x_0 | x_sigma = x], computed as
    /// `x + sigma^2 * score(x, sigma)` so the score identity holds by
    /// construction.
    pub fn denoise(&self, x: &[f64], sigma: f64) -> Sample {
        let s = self.score(x, sigma);
        x.iter().zip(&s).map(|(xi, si)| xi + sigma * sigma * si).collect()
    }
}

/// Posterior mean by trapezoidal quadrature over a bounded box; the
/// independent oracle for [`GaussianMixture::denoise`]. Brute force, so d <= 2.
pub fn quadrature_oracle(
    mix: &GaussianMixture,
    x: &[f64],
    sigma: f64,
    grid_points: usize,
) -> Result<Sample> {
    if mix.dim() > 2 {
        return Err(Error::DimensionTooLarge {
            dim: mix.dim(),
            max: 2,
        });
    }
    if grid_points < 1000 {
        return Err(Error::invalid(format!(
            "quadrature needs >= 1000 grid points per axis, got {grid_points}"
        )));
    }
    let d = mix.dim();
    // Box covering every component's +/-8 sd and the observation's +/-8 sigma.
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for c in mix.components() {
        for j in 0..d {
            let s = (c.variance[j] + sigma * sigma).sqrt();
            lo[j] = lo[j].min(c.mean[j] - 8.0 * s).min(x[j] - 8.0 * s);
            hi[j] = hi[j].max(c.mean[j] + 8.0 * s).max(x[j] + 8.0 * s);
        }
    }
    let g = grid_points;
    let axis = |j: usize, i: usize| lo[j] + (hi[j] - lo[j]) * i as f64 / (g - 1) as f64;
    // Trapezoid weights: 1/2 at the ends, 1 inside.
    let tw = |i: usize| if i == 0 || i == g - 1 { 0.5 } else { 1.0 };
    // Unnormalized posterior over x0: p_data(x0) * N(x - x0; sigma^2 I).
    // Log-space accumulation keeps large-sigma integrands from underflowing.
    let log_post = |x0: &[f64]| -> f64 {
        let mut lp = mix.log_density(x0, 0.0);
        for j in 0..d {
            let dd = x[j] - x0[j];
            lp += -dd * dd / (2.0 * sigma * sigma) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
        }
        lp
    };
    let mut num = vec![0.0; d];
    let mut den = 0.0;
    // Streaming-logsumexp anchor: accumulators are kept relative to the
    // largest log weight seen so far and rescaled when it grows, so sharply
    // peaked posteriors neither underflow nor overflow.
    let mut anchor = f64::NEG_INFINITY;
    let mut accumulate = |lw: f64, trap: f64, x0: &[f64]| {
        if lw > anchor {
            let rescale = if anchor.is_finite() {
                (anchor - lw).exp()
            } else {
                0.0
            };
            den *= rescale;
            for n in num.iter_mut() {
                *n *= rescale;
            }
            anchor = lw;
        }
        let w = trap * (lw - anchor).exp();
        den += w;
        for (n, v) in num.iter_mut().zip(x0) {
            *n += w * v;
        }
    };
    match d {
        1 => {
            for i in 0..g {
                let x0 = [axis(0, i)];
                accumulate(log_post(&x0), tw(i), &x0);
            }
        }
        2 => {
            for i in 0..g {
                for k in 0..g {
                    let x0 = [axis(0, i), axis(1, k)];
                    accumulate(log_post(&x0), tw(i) * tw(k), &x0);
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(num.into_iter().map(|n| n / den).collect())
}

/// A mixture whose components carry class labels; the toy classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMixture {
    mixture: GaussianMixture,
    labels: Vec<usize>,
}

impl LabeledMixture {
    pub fn new(mixture: GaussianMixture, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != mixture.components().len() {
            return Err(Error::invalid(
                "labels must match the number of mixture components",
            ));
        }
        let mut classes: Vec<usize> = labels.clone();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::invalid("labeled mixture needs at least 2 classes"));
        }
        Ok(LabeledMixture { mixture, labels })
    }

    /// Bimodal 1-D toy labeled {0 at -center, 1 at +center}.
    pub fn bimodal_1d(center: f64, variance: f64) -> Self {
        Self::new(GaussianMixture::bimodal_1d(center, variance), vec![0, 1])
            .expect("valid by construction")
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().unwrap() + 1
    }

    /// Per-class log joint density `log sum_{k: label_k = c} w_k N(x; mu_k, v_k)`.
    pub fn class_log_densities(&self, x: &[f64]) -> Vec<f64> {
        let terms = self.mixture.smoothed_log_terms(x, 0.0);
        let mut per_class = vec![Vec::new(); self.n_classes()];
        for (lt, &lbl) in terms.iter().zip(&self.labels) {
            per_class[lbl].push(*lt);
        }
        per_class
            .iter()
            .map(|v| {
                if v.is_empty() {
                    f64::NEG_INFINITY
                } else {
                    logsumexp(v)
                }
            })
            .collect()
    }

    /// Bayes rule: argmax of class-conditional density times prior, ties
    /// broken by the lowest class index.
    pub fn bayes_classify(&self, x: &[f64]) -> usize {
        let ld = self.class_log_densities(x);
        let mut best = 0;
        for (c, &v) in ld.iter().enumerate() {
            if v > ld[best] {
                best = c;
            }
        }
        best
    }

    /// Draw a labeled sample.
    pub fn sample_labeled<R: Rng>(&self, rng: &mut R) -> (Sample, usize) {
        let (x, k) = self.mixture.sample_with_component(rng);
        (x, self.labels[k])
    }
}
