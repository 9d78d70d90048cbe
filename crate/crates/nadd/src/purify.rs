//! The noise-amplified purification loop: forward noising to a high level,
//! reverse diffusion with a ring-proximity correction mixed into the ODE
//! update, a power-law correction schedule with an early-stop cutoff, and
//! stochastic churn noise injected before each reverse step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::schedule::TimeGrid;
use crate::solver::UpdateFn;
use crate::vecmath;
use crate::{Error, Result, Sample};

/// All purification knobs. Field names mirror the hyperparameter table
/// (sigma_t_prime, sigma_t_stop, beta, kappa_min/max, s_churn/min/max/noise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaddConfig {
    /// Forward-noise stop: the noise level the input is diffused up to.
    #[serde(rename = "sigma_t_prime")]
    pub t_prime: f64,
    /// Correction cutoff t-stop; the correction is omitted once t <= t_stop.
    #[serde(rename = "sigma_t_stop")]
    pub t_stop: f64,
    /// Power-law decay exponent of the correction schedule, in [0, 1].
    pub beta: f64,
    /// Inner ring radius (L2, sample-space units).
    pub kappa_min: f64,
    /// Outer ring radius.
    pub kappa_max: f64,
    pub s_churn: f64,
    #[serde(default)]
    pub s_min: f64,
    /// Upper churn band edge; the config accepts the literal string "inf",
    /// stored as the largest finite value.
    #[serde(with = "s_max_serde", default = "default_s_max")]
    pub s_max: f64,
    #[serde(default = "default_s_noise")]
    pub s_noise: f64,
    /// Scale the ring radii by sqrt(dim); off by default (the reference
    /// radii target image-space norms).
    #[serde(default)]
    pub kappa_scale_sqrt_dim: bool,
}

fn default_s_max() -> f64 {
    f64::MAX
}

fn default_s_noise() -> f64 {
    1.0
}

/// `s_max` accepts either a number or the literal string "inf"; infinity is
/// stored (and re-serialized) as "inf" so configs round-trip exactly.
mod s_max_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if *v >= f64::MAX {
            ser.serialize_str("inf")
        } else {
            ser.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrStr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        match NumOrStr::deserialize(de)? {
            NumOrStr::Num(v) => Ok(v),
            NumOrStr::Str(s) if s.eq_ignore_ascii_case("inf") => Ok(f64::MAX),
            NumOrStr::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got \"{s}\""
            ))),
        }
    }
}

impl NaddConfig {
    /// Defaults from the L-infinity CIFAR column of the hyperparameter
    /// table, with the ring radii left in absolute units.
    pub fn defaults() -> Self {
        NaddConfig {
            t_prime: 16.0,
            t_stop: 0.585,
            beta: 0.03,
            kappa_min: 0.75,
            kappa_max: 1.0,
            s_churn: 2.0,
            s_min: 0.0,
            s_max: f64::MAX,
            s_noise: 1.0,
            kappa_scale_sqrt_dim: false,
        }
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if !(self.t_stop > 0.0 && self.t_stop < self.t_prime && self.t_prime <= grid.t_max()) {
            return Err(Error::invalid(format!(
                "require 0 < t_stop < t_prime <= T: t_stop={}, t_prime={}, T={}",
                self.t_stop,
                self.t_prime,
                grid.t_max()
            )));
        }
        if !(self.beta >= 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if !(self.kappa_min >= 0.0 && self.kappa_min <= self.kappa_max) {
            return Err(Error::invalid(format!(
                "require 0 <= kappa_min <= kappa_max, got [{}, {}]",
                self.kappa_min, self.kappa_max
            )));
        }
        if !(self.s_churn >= 0.0) {
            return Err(Error::invalid("s_churn must be nonnegative"));
        }
        if !(self.s_noise > 0.0) {
            return Err(Error::invalid("s_noise must be positive"));
        }
        if !(self.s_min <= self.s_max) {
            return Err(Error::invalid("require s_min <= s_max"));
        }
        Ok(())
    }

    fn ring_radii(&self, dim: usize) -> (f64, f64) {
        let k = if self.kappa_scale_sqrt_dim {
            (dim as f64).sqrt()
        } else {
            1.0
        };
        (self.kappa_min * k, self.kappa_max * k)
    }
}

/// The ring-offset correction target `x_bar = x0 + u` with `|u| = r` drawn
/// uniformly from `[kappa_min, kappa_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RingTarget {
    pub base: Sample,
    pub offset: Vec<f64>,
    pub target: Sample,
    pub radius: f64,
}

/// Everything a single purification run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Forward path (t_i, x_{t_i}), starting at the clean input.
    pub forward: Vec<(f64, Sample)>,
    /// Reverse path (t_i, x_hat_{t_i}), starting at the forward endpoint.
    pub reverse: Vec<(f64, Sample)>,
    pub purified: Sample,
    pub weights_used: Vec<f64>,
    pub gammas_used: Vec<f64>,
    pub ring: RingTarget,
}

impl Trajectory {
    /// Reverse state at the correction cutoff: the first recorded state with
    /// t <= t_stop (the point where the correction turns off). Falls back to
    /// the final state when every recorded time is above the cutoff.
    pub fn state_at_cutoff(&self, t_stop: f64) -> &Sample {
        self.reverse
            .iter()
            .find(|(t, _)| *t <= t_stop)
            .map(|(_, x)| x)
            .unwrap_or(&self.purified)
    }
}

/// Stepwise forward noising up to `t_prime` (a grid time), returning the
/// endpoint and the recorded path. Equivalent in law to the one-shot
/// closed form `x + N(0, t_prime^2 I)`.
pub fn forward_noise<R: Rng>(
    x: &[f64],
    grid: &TimeGrid,
    t_prime: f64,
    rng: &mut R,
) -> Result<(Sample, Vec<(f64, Sample)>)> {
    let Some(j) = grid.index_of(t_prime) else {
        return Err(Error::invalid(format!("t_prime={t_prime} is not a grid time")));
    };
    let times = grid.times();
    let mut path = vec![(times[0], x.to_vec())];
    let mut cur = x.to_vec();
    for i in 1..=j {
        let var = times[i] * times[i] - times[i - 1] * times[i - 1];
        let sd = var.sqrt();
        cur = cur
            .iter()
            .map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        path.push((times[i], cur.clone()));
    }
    Ok((cur, path))
}

/// One-shot forward endpoint `x + N(0, t_prime^2 I)`.
pub fn forward_noise_closed_form<R: Rng>(x: &[f64], t_prime: f64, rng: &mut R) -> Sample {
    x.iter()
        .map(|v| v + t_prime * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Draw the ring target: `v ~ N(0, I)`, `r ~ U[kappa_min, kappa_max]`,
/// `u = r * v / |v|`.
pub fn make_ring_target<R: Rng>(
    x: &[f64],
    kappa_min: f64,
    kappa_max: f64,
    rng: &mut R,
) -> Result<RingTarget> {
    if !(kappa_min <= kappa_max) {
        return Err(Error::invalid("require kappa_min <= kappa_max"));
    }
    let d = x.len();
    let mut v: Vec<f64>;
    loop {
        v = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if vecmath::norm2(&v) > 0.0 {
            break;
        }
        // Probability-zero event; resample.
    }
    let r = kappa_min + (kappa_max - kappa_min) * rng.random::<f64>();
    let n = vecmath::norm2(&v);
    let offset = vecmath::scale(&v, r / n);
    let target = vecmath::add(x, &offset);
    Ok(RingTarget {
        base: x.to_vec(),
        offset,
        target,
        radius: r,
    })
}

/// Power-law correction weight `((t - t_1)/t_N)^beta`, zero at or below the
/// cutoff `t_stop`.
pub fn correction_weight(t: f64, grid: &TimeGrid, t_stop: f64, beta: f64) -> f64 {
    if t <= t_stop {
        return 0.0;
    }
    let ratio = (t - grid.t_min()) / grid.t_max();
    if ratio <= 0.0 {
        0.0
    } else {
        ratio.powf(beta)
    }
}

/// Slope from the current state to the ring target over the step
/// `t_hi -> t_lo`; a full step along it lands exactly on the target.
pub fn correction_slope(
    target: &RingTarget,
    x_cur: &[f64],
    t_lo: f64,
    t_hi: f64,
) -> Result<Vec<f64>> {
    if !(t_lo < t_hi) {
        return Err(Error::invalid(format!(
            "correction slope needs t_lo < t_hi, got {t_lo} >= {t_hi}"
        )));
    }
    let diff = vecmath::sub(&target.target, x_cur);
    Ok(vecmath::scale(&diff, 1.0 / (t_lo - t_hi)))
}

/// Churn factor `min(S_churn/N, sqrt(2) - 1)` inside the `[S_min, S_max]`
/// band, zero outside.
pub fn gamma_schedule(t: f64, n_steps: usize, s_churn: f64, s_min: f64, s_max: f64) -> f64 {
    if t < s_min || t > s_max {
        return 0.0;
    }
    (s_churn / n_steps as f64).min(std::f64::consts::SQRT_2 - 1.0)
}

/// Inflate the state to the churned noise level `t_hat = t * (1 + gamma)`
/// by adding `sqrt(t_hat^2 - t^2) * z`, `z ~ N(0, S_noise^2 I)`. Identity
/// (no RNG consumed) when `gamma = 0`.
pub fn stochastic_inflate<R: Rng>(
    x: &[f64],
    t: f64,
    gamma: f64,
    s_noise: f64,
    rng: &mut R,
) -> (Sample, f64) {
    if gamma == 0.0 {
        return (x.to_vec(), t);
    }
    let t_hat = t * (1.0 + gamma);
    let sd = (t_hat * t_hat - t * t).sqrt();
    let out = x
        .iter()
        .map(|v| v + sd * s_noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (out, t_hat)
}

/// Full purification with an explicit per-time weight function. The public
/// [`purify`] uses the power-law schedule; the bound-verification code
/// passes constant weights instead.
pub fn purify_with_weight_fn<R: Rng>(
    x: &[f64],
    cfg: &NaddConfig,
    grid: &TimeGrid,
    update: &UpdateFn<'_>,
    weight_fn: impl Fn(f64) -> f64,
    rng: &mut R,
) -> Result<Trajectory> {
    cfg.validate(grid)?;
    // Snap t_prime to the largest grid time at or below it so forward and
    // reverse share one grid.
    let j = grid
        .snap_below(cfg.t_prime)
        .ok_or_else(|| Error::invalid("t_prime below the grid range"))?;
    let times = grid.times();
    let t_start = times[j];

    let (kmin, kmax) = cfg.ring_radii(x.len());
    // The ring target is anchored at the clean input, cached before the
    // forward loop overwrites the running state; drawn once per run.
    let ring = make_ring_target(x, kmin, kmax, rng)?;

    let (endpoint, forward) = forward_noise(x, grid, t_start, rng)?;

    let mut reverse = vec![(t_start, endpoint.clone())];
    let mut weights_used = Vec::new();
    let mut gammas_used = Vec::new();
    let mut cur = endpoint;
    for i in (0..j).rev() {
        let (t_lo, t_hi) = (times[i], times[i + 1]);
        let gamma = gamma_schedule(t_lo, grid.n_steps(), cfg.s_churn, cfg.s_min, cfg.s_max);
        let (inflated, _t_hat) = stochastic_inflate(&cur, t_hi, gamma, cfg.s_noise, rng);
        let mut d = update.phi(&inflated, t_hi, t_lo)?;
        let w = if t_lo > cfg.t_stop {
            let w = weight_fn(t_lo).clamp(0.0, 1.0);
            // The slope targets the ring from the pre-inflation state.
            let c = correction_slope(&ring, &cur, t_lo, t_hi)?;
            d = d
                .iter()
                .zip(&c)
                .map(|(di, ci)| di * (1.0 - w) + ci * w)
                .collect();
            w
        } else {
            0.0
        };
        cur = vecmath::axpy(&cur, t_lo - t_hi, &d);
        reverse.push((t_lo, cur.clone()));
        weights_used.push(w);
        gammas_used.push(gamma);
    }
    Ok(Trajectory {
        forward,
        purified: cur,
        reverse,
        weights_used,
        gammas_used,
        ring,
    })
}

/// Algorithm: forward noising to `t_prime`, ring target, reverse loop with
/// churn, the ODE update mixed with the correction slope while `t > t_stop`,
/// stopping at `t_1`.
pub fn purify<R: Rng>(
    x: &[f64],
    cfg: &NaddConfig,
    grid: &TimeGrid,
    update: &UpdateFn<'_>,
    rng: &mut R,
) -> Result<Trajectory> {
    purify_with_weight_fn(
        x,
        cfg,
        grid,
        update,
        |t| correction_weight(t, grid, cfg.t_stop, cfg.beta),
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::Denoiser;
    use crate::distributions::{GaussianMixture, LabeledMixture};
    use crate::solver::SolverMethod;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_16() -> TimeGrid {
        TimeGrid::build(29, 0.002, 16.0, 7.0).unwrap()
    }

    #[test]
    fn forward_noise_at_t1_is_identity() {
        let grid = grid_16();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (end, path) = forward_noise(&[0.5], &grid, grid.t_min(), &mut rng).unwrap();
        assert_eq!(end, vec![0.5]);
        assert_eq!(path.len(), 1);
    }

    #[test]
    fn forward_noise_requires_grid_time() {
        let grid = grid_16();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(forward_noise(&[0.0], &grid, 3.14159, &mut rng).is_err());
    }

    #[test]
    fn forward_endpoint_variance_matches_closed_form() {
        let grid = grid_16();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let (end, _) = forward_noise(&[0.0], &grid, 16.0, &mut rng).unwrap();
            sum += end[0];
            sumsq += end[0] * end[0];
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((var - 256.0).abs() / 256.0 < 0.01, "var = {var}");
    }

    #[test]
    fn stepwise_and_closed_form_moments_agree() {
        let grid = grid_16();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000usize;
        let (mut m1a, mut m2a, mut m1b, mut m2b) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let (a, _) = forward_noise(&[1.0], &grid, 16.0, &mut rng).unwrap();
            let b = forward_noise_closed_form(&[1.0], 16.0, &mut rng);
            m1a += a[0];
            m2a += a[0] * a[0];
            m1b += b[0];
            m2b += b[0] * b[0];
        }
        let n = n as f64;
        let (mean_a, mean_b) = (m1a / n, m1b / n);
        let (var_a, var_b) = (m2a / n - mean_a * mean_a, m2b / n - mean_b * mean_b);
        // Monte Carlo error on the mean is ~16/sqrt(n) ~ 0.05; on the
        // variance ~ var*sqrt(2/n) ~ 1.1. Allow 4 sigma.
        assert!((mean_a - mean_b).abs() < 0.3, "means {mean_a} vs {mean_b}");
        assert!((var_a - var_b).abs() / 256.0 < 0.02, "vars {var_a} vs {var_b}");
    }

    #[test]
    fn ring_target_degenerate_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rt = make_ring_target(&[0.0, 0.0], 1.0, 1.0, &mut rng).unwrap();
        assert!((vecmath::norm2(&rt.offset) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ring_invariant_paper_defaults() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let rt = make_ring_target(&[1.0, -1.0, 0.5], 0.75, 1.0, &mut rng).unwrap();
            let n = vecmath::norm2(&rt.offset);
            assert!((0.75..=1.0).contains(&n), "norm {n}");
            assert!((vecmath::dist2(&rt.target, &rt.base) - n).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_direction_uniform_in_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bins = 20usize;
        let n = 100_000usize;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let rt = make_ring_target(&[0.0, 0.0], 1.0, 1.0, &mut rng).unwrap();
            let angle = rt.offset[1].atan2(rt.offset[0]) + std::f64::consts::PI;
            let b = ((angle / (2.0 * std::f64::consts::PI)) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let p = crate::stats::chi_square_uniform_pvalue(&counts);
        assert!(p > 0.01, "chi-square p = {p}");
    }

    #[test]
    fn correction_weight_examples() {
        let grid = grid_16();
        // Numerator zero at t_1.
        assert_eq!(correction_weight(grid.t_min(), &grid, 0.0001, 0.03), 0.0);
        // Cutoff branch.
        assert_eq!(correction_weight(0.5, &grid, 0.585, 0.03), 0.0);
        assert_eq!(correction_weight(0.585, &grid, 0.585, 0.03), 0.0);
        // Top of the grid, beta = 0.03: just below 1.
        let w = correction_weight(16.0, &grid, 0.585, 0.03);
        assert!((w - 0.9999962497726376).abs() < 1e-12, "w = {w}");
        assert!(w < 1.0);
    }

    #[test]
    fn correction_weight_monotone_in_t() {
        let grid = grid_16();
        let ws: Vec<f64> = grid
            .times()
            .iter()
            .map(|&t| correction_weight(t, &grid, 0.585, 0.03))
            .collect();
        for (pair, &t) in ws.windows(2).zip(grid.times()) {
            assert!(pair[1] >= pair[0]);
            if t <= 0.585 {
                assert_eq!(correction_weight(t, &grid, 0.585, 0.03), 0.0);
            }
        }
    }

    #[test]
    fn correction_slope_lands_on_target() {
        let rt = RingTarget {
            base: vec![0.0],
            offset: vec![2.0],
            target: vec![2.0],
            radius: 2.0,
        };
        let c = correction_slope(&rt, &[0.0], 1.0, 2.0).unwrap();
        assert_eq!(c, vec![-2.0]);
        let landed = vecmath::axpy(&[0.0], 1.0 - 2.0, &c);
        assert_eq!(landed, vec![2.0]);
        // Zero slope when already on target.
        let z = correction_slope(&rt, &[2.0], 1.0, 2.0).unwrap();
        assert_eq!(z, vec![0.0]);
        assert!(correction_slope(&rt, &[0.0], 2.0, 2.0).is_err());
    }

    #[test]
    fn gamma_schedule_cases() {
        assert_eq!(gamma_schedule(1.0, 10, 0.0, 0.0, f64::MAX), 0.0);
        assert_eq!(gamma_schedule(5.0, 10, 2.0, 0.0, 1.0), 0.0);
        let g = gamma_schedule(1.0, 29, 2.0, 0.0, f64::MAX);
        assert!((g - 2.0 / 29.0).abs() < 1e-15);
        let capped = gamma_schedule(1.0, 10, 40.0, 0.0, f64::MAX);
        assert!((capped - (std::f64::consts::SQRT_2 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn inflate_gamma_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let before = rng.clone();
        let (out, t_hat) = stochastic_inflate(&[1.0, 2.0], 3.0, 0.0, 1.0, &mut rng);
        assert_eq!(out, vec![1.0, 2.0]);
        assert_eq!(t_hat, 3.0);
        // No RNG consumed.
        assert_eq!(rng, before);
    }

    #[test]
    fn inflate_variance_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (t, gamma, s_noise) = (2.0, 0.3, 1.1);
        let t_hat = t * (1.0 + gamma);
        let want = s_noise * s_noise * (t_hat * t_hat - t * t);
        let n = 100_000usize;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let (out, th) = stochastic_inflate(&[0.0], t, gamma, s_noise, &mut rng);
            assert_eq!(th, t_hat);
            sumsq += out[0] * out[0];
        }
        let var = sumsq / n as f64;
        assert!((var - want).abs() / want < 0.02, "var {var} want {want}");
    }

    #[test]
    fn degeneration_to_plain_solver_chain() {
        // w == 0 (t_stop = snapped t_prime boundary trick: use weight fn 0)
        // and gamma == 0 must reproduce the plain reverse chain bitwise.
        let mix = GaussianMixture::bimodal_1d(1.0, 0.05);
        let den = Denoiser::Exact(mix);
        let grid = grid_16();
        let u = UpdateFn::new(SolverMethod::Heun, &den, grid.t_min());
        let cfg = NaddConfig {
            s_churn: 0.0,
            ..NaddConfig::defaults()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let traj = purify_with_weight_fn(&[0.9], &cfg, &grid, &u, |_| 0.0, &mut rng).unwrap();
        let noisy = traj.reverse[0].1.clone();
        let t_start = traj.reverse[0].0;
        let j = grid.index_of(t_start).unwrap();
        let plain = u.reverse_chain(&noisy, &grid.times()[..=j]).unwrap();
        assert_eq!(traj.purified, plain, "reverse pass is not bitwise identical");
    }

    #[test]
    fn full_weight_correction_lands_on_ring_sphere() {
        // w == 1 on every corrected step with kappa_min == kappa_max == rho:
        // each corrected step lands exactly on the target, so the state at
        // the cutoff sits on the sphere of radius rho around the input.
        let mix = GaussianMixture::single(vec![0.0, 0.0], 1.0).unwrap();
        let den = Denoiser::Exact(mix);
        let grid = TimeGrid::build(10, 0.01, 4.0, 3.0).unwrap();
        let u = UpdateFn::new(SolverMethod::Euler, &den, grid.t_min());
        let rho = 0.5;
        let cfg = NaddConfig {
            t_prime: 4.0,
            t_stop: 0.02,
            kappa_min: rho,
            kappa_max: rho,
            s_churn: 0.0,
            ..NaddConfig::defaults()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = vec![1.0, -2.0];
        let traj = purify_with_weight_fn(&x, &cfg, &grid, &u, |_| 1.0, &mut rng).unwrap();
        // Find the last corrected state (smallest t above the cutoff).
        let corrected = traj
            .reverse
            .iter()
            .filter(|(t, _)| *t > cfg.t_stop)
            .last()
            .unwrap();
        let dist = vecmath::dist2(&corrected.1, &x);
        assert!((dist - rho).abs() < 1e-9, "dist {dist} vs rho {rho}");
    }

    #[test]
    fn pinned_output_near_input_for_point_mass() {
        // kappa == 0 and w == 1: corrections pin the trajectory to the
        // input; the final sub-cutoff segment is pure diffusion on
        // point-mass data, so the output stays close to the input.
        let x = vec![0.7];
        let mix = GaussianMixture::single(x.clone(), 1e-12).unwrap();
        let den = Denoiser::Exact(mix);
        let grid = TimeGrid::build(12, 0.01, 4.0, 3.0).unwrap();
        let u = UpdateFn::new(SolverMethod::Euler, &den, grid.t_min());
        let cfg = NaddConfig {
            t_prime: 4.0,
            t_stop: 0.05,
            kappa_min: 0.0,
            kappa_max: 0.0,
            s_churn: 0.0,
            ..NaddConfig::defaults()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let traj = purify_with_weight_fn(&x, &cfg, &grid, &u, |_| 1.0, &mut rng).unwrap();
        let err = vecmath::dist2(&traj.purified, &x);
        assert!(err < 0.05, "||output - x|| = {err}");
    }

    #[test]
    fn defaults_recover_the_start_mode() {
        let lm = LabeledMixture::bimodal_1d(1.0, 0.05);
        let den = Denoiser::Exact(lm.mixture().clone());
        let grid = grid_16();
        let u = UpdateFn::new(SolverMethod::Heun, &den, grid.t_min());
        // Ring radii scaled to the 1-D toy (see harness defaults).
        let cfg = NaddConfig {
            kappa_min: 0.075,
            kappa_max: 0.1,
            ..NaddConfig::defaults()
        };
        let mut ok = 0;
        let trials = 500;
        for s in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(1234, s));
            let x = vec![0.95];
            let traj = purify(&x, &cfg, &grid, &u, &mut rng).unwrap();
            if lm.bayes_classify(&traj.purified) == 1 {
                ok += 1;
            }
        }
        let rate = ok as f64 / trials as f64;
        assert!(rate >= 0.95, "mode-recovery rate {rate}");
    }

    #[test]
    fn trajectory_invariants() {
        let mix = GaussianMixture::bimodal_1d(1.0, 0.05);
        let den = Denoiser::Exact(mix);
        let grid = grid_16();
        let u = UpdateFn::new(SolverMethod::Heun, &den, grid.t_min());
        let cfg = NaddConfig {
            kappa_min: 0.075,
            kappa_max: 0.1,
            ..NaddConfig::defaults()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = vec![0.8];
        let traj = purify(&x, &cfg, &grid, &u, &mut rng).unwrap();
        assert_eq!(traj.forward[0].1, x);
        assert_eq!(traj.reverse[0].1, traj.forward.last().unwrap().1);
        assert_eq!(traj.reverse.last().unwrap().1, traj.purified);
        assert_eq!(traj.weights_used.len(), traj.reverse.len() - 1);
        // Weights recorded high-to-low time must be nonincreasing.
        for w in traj.weights_used.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        let grid = grid_16();
        let mut cfg = NaddConfig::defaults();
        cfg.t_stop = 17.0;
        assert!(cfg.validate(&grid).is_err());
        let mut cfg = NaddConfig::defaults();
        cfg.kappa_min = 2.0;
        assert!(cfg.validate(&grid).is_err());
        let mut cfg = NaddConfig::defaults();
        cfg.s_churn = -1.0;
        assert!(cfg.validate(&grid).is_err());
        assert!(NaddConfig::defaults().validate(&grid).is_ok());
    }
}
