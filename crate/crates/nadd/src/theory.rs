//! Numerical verification of the return-probability guarantees: the explicit
//! weight lower bound, the escape-radius threshold, the induction
//! bookkeeping from the proof, and Monte Carlo tests of both probability
//! estimates with Wilson intervals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::denoiser::Denoiser;
use crate::distributions::GaussianMixture;
use crate::purify::{self, NaddConfig};
use crate::schedule::TimeGrid;
use crate::solver::{SolverMethod, UpdateFn};
use crate::stats::wilson_interval;
use crate::vecmath;
use crate::{derive_seed, Error, Result};

/// Parameters of the return-probability theorem: step count N, horizon T,
/// gap constant Delta, failure budget delta*, and the two radii.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremParams {
    pub n_steps: usize,
    pub horizon: f64,
    pub gap_delta: f64,
    pub delta_star: f64,
    pub kappa_max: f64,
    pub kappa_min: f64,
}

impl TheoremParams {
    pub fn new(
        n_steps: usize,
        horizon: f64,
        gap_delta: f64,
        delta_star: f64,
        kappa_max: f64,
        kappa_min: f64,
    ) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("n_steps must be positive"));
        }
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        if !(gap_delta > 0.0) {
            return Err(Error::invalid("gap constant must be positive"));
        }
        if !(delta_star > 0.0 && delta_star < 1.0) {
            return Err(Error::invalid(format!(
                "delta_star must lie in (0, 1), got {delta_star}"
            )));
        }
        if !(kappa_max > 0.0) || !(kappa_min >= 0.0) {
            return Err(Error::invalid("radii must be nonnegative, kappa_max positive"));
        }
        Ok(TheoremParams {
            n_steps,
            horizon,
            gap_delta,
            delta_star,
            kappa_max,
            kappa_min,
        })
    }

    /// Read N, T and Delta off a grid.
    pub fn from_grid(
        grid: &TimeGrid,
        delta_star: f64,
        kappa_max: f64,
        kappa_min: f64,
    ) -> Result<Self> {
        TheoremParams::new(
            grid.n_steps(),
            grid.t_max(),
            grid.gap_bound(),
            delta_star,
            kappa_max,
            kappa_min,
        )
    }
}

/// The correction-weight lower bound
/// `1 - kappa_max / (2 sqrt(log(2N/delta*)) sqrt(2 Delta) T)`.
///
/// `value` is the raw bound clamped to `[0, 1)`; `vacuous` flags a negative
/// raw bound (any weight suffices).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightBound {
    pub raw: f64,
    pub value: f64,
    pub vacuous: bool,
}

pub fn weight_lower_bound(p: &TheoremParams) -> WeightBound {
    let log_term = (2.0 * p.n_steps as f64 / p.delta_star).ln();
    let denom = 2.0 * log_term.sqrt() * (2.0 * p.gap_delta).sqrt() * p.horizon;
    let raw = 1.0 - p.kappa_max / denom;
    WeightBound {
        raw,
        value: raw.max(0.0),
        vacuous: raw < 0.0,
    }
}

/// Escape-radius threshold `1 / (2 sqrt(2 pi) N)`.
pub fn kappa_min_threshold(n_steps: usize) -> f64 {
    1.0 / (2.0 * (2.0 * std::f64::consts::PI).sqrt() * n_steps as f64)
}

/// Per-index state of the induction: the slack sequence lambda_i, the
/// distance budget eps_i and the failure mass delta_i, indexed so that
/// `epsilons[i]`/`deltas[i]` are the values at step i with i = 0 the data
/// end (eps_N = delta_N = 0 at the noise end).
#[derive(Debug, Clone, Serialize)]
pub struct RecursionTrace {
    /// lambda_1 .. lambda_N (lambdas[i] is lambda_{i+1}).
    pub lambdas: Vec<f64>,
    /// eps_0 .. eps_N.
    pub epsilons: Vec<f64>,
    /// delta_0 .. delta_N.
    pub deltas: Vec<f64>,
}

impl RecursionTrace {
    pub fn eps0(&self) -> f64 {
        self.epsilons[0]
    }

    pub fn delta0(&self) -> f64 {
        self.deltas[0]
    }
}

/// Run the proof's backward recursion over the grid (with the implicit
/// t_0 = 0 prepended, so there are N gaps):
///
/// `lambda_{i+1} = 2 lambda sqrt(t_{i+1}^2 - t_i^2)`,
/// `eps_i = (eps_{i+1} + lambda_{i+1}) (1 - w_i)`,
/// `delta_i = delta_{i+1} + 2 exp(-lambda_{i+1}^2 / (4 (t_{i+1}^2 - t_i^2)))`.
///
/// Under this lambda_i choice every delta increment equals
/// `2 exp(-lambda^2)`, so `delta_0 = 2 N exp(-lambda^2)` exactly.
pub fn run_recursion(grid: &TimeGrid, weights: &[f64], lambda: f64) -> Result<RecursionTrace> {
    let n = grid.n_steps();
    if weights.len() != n {
        return Err(Error::invalid(format!(
            "need one weight per step: {} weights for N = {n}",
            weights.len()
        )));
    }
    let mut t = Vec::with_capacity(n + 1);
    t.push(0.0);
    t.extend_from_slice(grid.times());

    let mut lambdas = vec![0.0; n];
    let mut epsilons = vec![0.0; n + 1];
    let mut deltas = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let gap = t[i + 1] * t[i + 1] - t[i] * t[i];
        let lam_i = 2.0 * lambda * gap.sqrt();
        lambdas[i] = lam_i;
        epsilons[i] = (epsilons[i + 1] + lam_i) * (1.0 - weights[i]);
        deltas[i] = deltas[i + 1] + 2.0 * (-lam_i * lam_i / (4.0 * gap)).exp();
    }
    Ok(RecursionTrace {
        lambdas,
        epsilons,
        deltas,
    })
}

/// A Monte Carlo probability estimate with a Wilson 95% interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub successes: u64,
    pub trials: u64,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl McEstimate {
    fn from_counts(successes: u64, trials: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, trials, 0.05);
        McEstimate {
            successes,
            trials,
            fraction: successes as f64 / trials as f64,
            ci_low,
            ci_high,
        }
    }
}

/// Run `trials` purifications of `x` in parallel with derived per-trial
/// seeds; for each trial return the distance from `x` to the state at the
/// correction cutoff and the cutoff-to-output tail length.
fn cutoff_distances(
    x: &[f64],
    cfg: &NaddConfig,
    grid: &TimeGrid,
    update: &UpdateFn<'_>,
    weight: f64,
    trials: u64,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    cfg.validate(grid)?;
    let n_threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(trials.max(1) as usize);
    let chunk = (trials as usize).div_ceil(n_threads);
    let mut out = vec![(0.0, 0.0); trials as usize];
    std::thread::scope(|scope| {
        for (c, slot) in out.chunks_mut(chunk).enumerate() {
            scope.spawn(move || {
                for (j, entry) in slot.iter_mut().enumerate() {
                    let i = (c * chunk + j) as u64;
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
                    // Config was validated above, so this cannot fail.
                    let traj =
                        purify::purify_with_weight_fn(x, cfg, grid, update, |_| weight, &mut rng)
                            .expect("validated purify run failed");
                    let at_cutoff = traj.state_at_cutoff(cfg.t_stop);
                    *entry = (
                        vecmath::dist2(x, at_cutoff),
                        vecmath::dist2(at_cutoff, &traj.purified),
                    );
                }
            });
        }
    });
    Ok(out)
}

/// Empirical `Pr[||x - x_cutoff|| <= kappa_max]` under a constant weight
/// schedule.
pub fn monte_carlo_upper(
    x: &[f64],
    cfg: &NaddConfig,
    grid: &TimeGrid,
    update: &UpdateFn<'_>,
    p: &TheoremParams,
    weight: f64,
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    if trials < 100 {
        return Err(Error::invalid(format!("need >= 100 trials, got {trials}")));
    }
    let dists = cutoff_distances(x, cfg, grid, update, weight, trials, seed)?;
    let successes = dists.iter().filter(|(d, _)| *d <= p.kappa_max).count() as u64;
    Ok(McEstimate::from_counts(successes, trials))
}

/// Empirical `Pr[||x - x_cutoff|| >= kappa_min]`; requires `kappa_min`
/// below the escape threshold.
pub fn monte_carlo_lower(
    x: &[f64],
    cfg: &NaddConfig,
    grid: &TimeGrid,
    update: &UpdateFn<'_>,
    p: &TheoremParams,
    weight: f64,
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    if trials < 100 {
        return Err(Error::invalid(format!("need >= 100 trials, got {trials}")));
    }
    let threshold = kappa_min_threshold(p.n_steps);
    if !(p.kappa_min < threshold) {
        return Err(Error::invalid(format!(
            "kappa_min = {} must be below the escape threshold {threshold}",
            p.kappa_min
        )));
    }
    let dists = cutoff_distances(x, cfg, grid, update, weight, trials, seed)?;
    let successes = dists.iter().filter(|(d, _)| *d >= p.kappa_min).count() as u64;
    Ok(McEstimate::from_counts(successes, trials))
}

/// For each meta-trial, count purification runs until the first escape
/// (distance at cutoff >= kappa_min), capped at `max_runs`.
pub fn first_success_counts(
    x: &[f64],
    cfg: &NaddConfig,
    grid: &TimeGrid,
    update: &UpdateFn<'_>,
    kappa_min: f64,
    weight: f64,
    meta_trials: u64,
    max_runs: u64,
    seed: u64,
) -> Result<Vec<u64>> {
    cfg.validate(grid)?;
    let mut counts = Vec::with_capacity(meta_trials as usize);
    for m in 0..meta_trials {
        let meta_seed = derive_seed(seed, m);
        let mut runs = 0u64;
        loop {
            runs += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(meta_seed, runs));
            let traj = purify::purify_with_weight_fn(x, cfg, grid, update, |_| weight, &mut rng)?;
            let d = vecmath::dist2(x, traj.state_at_cutoff(cfg.t_stop));
            if d >= kappa_min || runs >= max_runs {
                break;
            }
        }
        counts.push(runs);
    }
    Ok(counts)
}

/// Extra knobs for [`verify`] beyond the purification config.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyConfig {
    pub delta_star: f64,
    pub kappa_max: f64,
    pub kappa_min: f64,
    pub trials: u64,
    pub meta_trials: u64,
    pub seed: u64,
}

/// Machine-readable verification report: parameters, bound values,
/// empirical probabilities with intervals, and one PASS/FAIL flag per
/// asserted inequality.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremReport {
    pub params: TheoremParams,
    pub weight_bound: WeightBound,
    pub kappa_min_threshold: f64,
    pub upper: McEstimate,
    pub upper_target: f64,
    pub upper_pass: bool,
    /// Rerun with the production power-law schedule (its minimum weight
    /// over the corrected steps is reported alongside).
    pub upper_power_law: McEstimate,
    pub power_law_min_weight: f64,
    pub power_law_meets_bound: bool,
    pub lower: McEstimate,
    pub lower_target: f64,
    pub lower_pass: bool,
    pub mean_first_success_runs: f64,
    pub first_success_budget: f64,
    pub first_success_pass: bool,
    /// Mean length of the (uncorrected) cutoff-to-output tail, reported
    /// separately because the theorem speaks about the cutoff state.
    pub mean_tail_distance: f64,
}

impl TheoremReport {
    pub fn all_pass(&self) -> bool {
        self.upper_pass && self.lower_pass && self.first_success_pass
    }
}

/// Full verification pass: exact denoiser, Euler updates, churn disabled,
/// constant weights at the prescribed bound. PASS criteria are one-sided:
/// the upper bound passes when the Wilson lower edge clears `1 - delta*`,
/// the lower bound when it clears the escape probability, the run budget
/// when the mean first-escape count stays within `5N`.
pub fn verify(
    mix: &GaussianMixture,
    x: &[f64],
    cfg: &NaddConfig,
    grid: &TimeGrid,
    vc: &VerifyConfig,
) -> Result<TheoremReport> {
    let params = TheoremParams::from_grid(grid, vc.delta_star, vc.kappa_max, vc.kappa_min)?;
    let bound = weight_lower_bound(&params);
    let denoiser = Denoiser::Exact(mix.clone());
    let update = UpdateFn::new(SolverMethod::Euler, &denoiser, grid.t_min());
    let cfg = NaddConfig {
        s_churn: 0.0,
        ..cfg.clone()
    };

    let upper = monte_carlo_upper(
        x,
        &cfg,
        grid,
        &update,
        &params,
        bound.value,
        vc.trials,
        vc.seed,
    )?;
    let upper_target = 1.0 - vc.delta_star;

    // Rerun with the production power-law schedule for comparison.
    let power_law_min_weight = grid
        .times()
        .iter()
        .filter(|&&t| t > cfg.t_stop)
        .map(|&t| purify::correction_weight(t, grid, cfg.t_stop, cfg.beta))
        .fold(f64::INFINITY, f64::min);
    let pl_seed = derive_seed(vc.seed, u64::MAX);
    let pl_dists = {
        cfg.validate(grid)?;
        let mut rows = Vec::with_capacity(vc.trials as usize);
        for i in 0..vc.trials {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(pl_seed, i));
            let traj = purify::purify(x, &cfg, grid, &update, &mut rng)?;
            rows.push(vecmath::dist2(x, traj.state_at_cutoff(cfg.t_stop)));
        }
        rows
    };
    let pl_successes = pl_dists.iter().filter(|&&d| d <= vc.kappa_max).count() as u64;
    let upper_power_law = McEstimate::from_counts(pl_successes, vc.trials);

    let lower = monte_carlo_lower(
        x,
        &cfg,
        grid,
        &update,
        &params,
        bound.value,
        vc.trials,
        derive_seed(vc.seed, 1 << 32),
    )?;
    let lower_target = kappa_min_threshold(params.n_steps);

    let budget = 5.0 * params.n_steps as f64;
    let counts = first_success_counts(
        x,
        &cfg,
        grid,
        &update,
        vc.kappa_min,
        bound.value,
        vc.meta_trials,
        (budget as u64) * 20,
        derive_seed(vc.seed, 2 << 32),
    )?;
    let mean_runs = counts.iter().sum::<u64>() as f64 / counts.len().max(1) as f64;

    let tails = cutoff_distances(
        x,
        &cfg,
        grid,
        &update,
        bound.value,
        vc.trials.min(1000),
        derive_seed(vc.seed, 3 << 32),
    )?;
    let mean_tail = tails.iter().map(|(_, t)| t).sum::<f64>() / tails.len() as f64;

    Ok(TheoremReport {
        upper_pass: upper.ci_low >= upper_target,
        lower_pass: lower.ci_low >= lower_target,
        first_success_pass: mean_runs <= budget,
        power_law_meets_bound: power_law_min_weight >= bound.value,
        params,
        weight_bound: bound,
        kappa_min_threshold: lower_target,
        upper,
        upper_target,
        upper_power_law,
        power_law_min_weight,
        lower,
        lower_target,
        mean_first_success_runs: mean_runs,
        first_success_budget: budget,
        mean_tail_distance: mean_tail,
    })
}
