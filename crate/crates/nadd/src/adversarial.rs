//! Toy attack/defense loop: PGD with optional expectation-over-
//! transformations against a differentiable surrogate of the Bayes rule,
//! plus robustness evaluation of purified pipelines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::LabeledMixture;
use crate::purify::{self, NaddConfig};
use crate::schedule::TimeGrid;
use crate::solver::UpdateFn;
use crate::vecmath;
use crate::{derive_seed, Error, Result, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackNorm {
    LInf,
    L2,
}

/// What the attacker differentiates through. `ClassifierOnly` ignores any
/// purifier when crafting (transfer setting); `FullPipeline` evaluates the
/// true purifier in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTarget {
    ClassifierOnly,
    FullPipeline,
}

/// Gradient route through the purifier: BPDA approximates it as identity;
/// `Full` differentiates numerically with common random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackGradient {
    Bpda,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub norm: AttackNorm,
    /// Perturbation budget; 0 disables the attack.
    pub budget: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub eot_samples: usize,
    pub attack_target: AttackTarget,
    #[serde(default = "AttackConfig::default_gradient")]
    pub attack_gradient: AttackGradient,
    /// Optional per-coordinate clamp box; toy space is unbounded by default.
    #[serde(default)]
    pub clamp_box: Option<(f64, f64)>,
}

impl AttackConfig {
    fn default_gradient() -> AttackGradient {
        AttackGradient::Bpda
    }

    pub fn linf(budget: f64, step_size: f64, iterations: usize) -> Self {
        AttackConfig {
            norm: AttackNorm::LInf,
            budget,
            step_size,
            iterations,
            eot_samples: 1,
            attack_target: AttackTarget::ClassifierOnly,
            attack_gradient: AttackGradient::Bpda,
            clamp_box: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0) {
            return Err(Error::invalid("attack budget must be nonnegative"));
        }
        if self.iterations < 1 {
            return Err(Error::invalid("attack needs at least one iteration"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("attack step size must be positive"));
        }
        if self.eot_samples < 1 {
            return Err(Error::invalid("eot_samples must be >= 1"));
        }
        if let Some((lo, hi)) = self.clamp_box {
            if !(lo < hi) {
                return Err(Error::invalid("clamp box must satisfy lo < hi"));
            }
        }
        Ok(())
    }
}

/// Differentiable surrogate of the Bayes rule: softmax over the class log
/// joint densities divided by a temperature. The argmax agrees with the
/// Bayes classifier everywhere off the decision boundary.
#[derive(Debug, Clone)]
pub struct SmoothClassifier {
    lmix: LabeledMixture,
    temperature: f64,
}

impl SmoothClassifier {
    pub fn new(lmix: LabeledMixture, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        Ok(SmoothClassifier { lmix, temperature })
    }

    pub fn mixture(&self) -> &LabeledMixture {
        &self.lmix
    }

    pub fn n_classes(&self) -> usize {
        self.lmix.n_classes()
    }

    /// Class log-probabilities: log softmax of `L_c(x) / temperature`.
    pub fn log_probs(&self, x: &[f64]) -> Vec<f64> {
        let scores: Vec<f64> = self
            .lmix
            .class_log_densities(x)
            .iter()
            .map(|l| l / self.temperature)
            .collect();
        let lz = vecmath::logsumexp(&scores);
        scores.iter().map(|s| s - lz).collect()
    }

    pub fn classify(&self, x: &[f64]) -> usize {
        let lp = self.log_probs(x);
        let mut best = 0;
        for (c, &v) in lp.iter().enumerate() {
            if v > lp[best] {
                best = c;
            }
        }
        best
    }

    /// Cross-entropy loss `-log p(label | x)`.
    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        -self.log_probs(x)[label]
    }

    /// Per-class gradients of the class log joint densities
    /// `grad L_c = sum_{k in c} r_k (mu_k - x) / v_k` with within-class
    /// responsibilities r_k.
    fn class_log_density_grads(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mix = self.lmix.mixture();
        let d = mix.dim();
        let n_classes = self.lmix.n_classes();
        const LN_2PI: f64 = 1.8378770664093453;
        let mut terms: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n_classes];
        for (k, (c, &lbl)) in mix.components().iter().zip(self.lmix.labels()).enumerate() {
            let mut lt = if c.weight > 0.0 {
                c.weight.ln()
            } else {
                f64::NEG_INFINITY
            };
            for j in 0..d {
                let diff = x[j] - c.mean[j];
                lt += -0.5 * (LN_2PI + c.variance[j].ln()) - diff * diff / (2.0 * c.variance[j]);
            }
            terms[lbl].push((lt, k));
        }
        terms
            .iter()
            .map(|class_terms| {
                let mut grad = vec![0.0; d];
                if class_terms.is_empty() {
                    return grad;
                }
                let logs: Vec<f64> = class_terms.iter().map(|(l, _)| *l).collect();
                let lz = vecmath::logsumexp(&logs);
                for &(lt, k) in class_terms {
                    let r = (lt - lz).exp();
                    if r == 0.0 {
                        continue;
                    }
                    let c = &mix.components()[k];
                    for j in 0..d {
                        grad[j] += r * (c.mean[j] - x[j]) / c.variance[j];
                    }
                }
                grad
            })
            .collect()
    }

    /// Analytic gradient of the cross-entropy loss with respect to `x`:
    /// `sum_c (p_c - [c = label]) grad L_c / temperature`.
    pub fn loss_grad(&self, x: &[f64], label: usize) -> Vec<f64> {
        let probs: Vec<f64> = self.log_probs(x).iter().map(|l| l.exp()).collect();
        let grads = self.class_log_density_grads(x);
        let mut out = vec![0.0; x.len()];
        for (c, g) in grads.iter().enumerate() {
            let coef = (probs[c] - if c == label { 1.0 } else { 0.0 }) / self.temperature;
            for j in 0..x.len() {
                out[j] += coef * g[j];
            }
        }
        out
    }
}

/// Everything needed to run the purification defense on one sample.
#[derive(Debug, Clone)]
pub struct Purifier<'a> {
    pub cfg: &'a NaddConfig,
    pub grid: &'a TimeGrid,
    pub update: &'a UpdateFn<'a>,
}

impl Purifier<'_> {
    pub fn run<R: Rng>(&self, x: &[f64], rng: &mut R) -> Result<Sample> {
        Ok(purify::purify(x, self.cfg, self.grid, self.update, rng)?.purified)
    }

    fn run_seeded(&self, x: &[f64], seed: u64) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.run(x, &mut rng)
    }
}

fn project(delta: &mut [f64], norm: AttackNorm, budget: f64) {
    match norm {
        AttackNorm::LInf => {
            for d in delta.iter_mut() {
                *d = d.clamp(-budget, budget);
            }
        }
        AttackNorm::L2 => {
            let n = vecmath::norm2(delta);
            if n > budget {
                let s = budget / n;
                for d in delta.iter_mut() {
                    *d *= s;
                }
            }
        }
    }
}

/// Mean attack gradient at `x_adv`, averaged over `eot_samples` stochastic
/// pipeline evaluations when a purifier is in the loop.
fn attack_gradient<R: Rng>(
    x_adv: &[f64],
    label: usize,
    clf: &SmoothClassifier,
    cfg: &AttackConfig,
    pipeline: Option<&Purifier<'_>>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let pipeline = match (cfg.attack_target, pipeline) {
        (AttackTarget::FullPipeline, Some(p)) => p,
        _ => return Ok(clf.loss_grad(x_adv, label)),
    };
    let mut grad = vec![0.0; x_adv.len()];
    for _ in 0..cfg.eot_samples {
        let sample_grad = match cfg.attack_gradient {
            AttackGradient::Bpda => {
                // Identity backward: evaluate the classifier gradient at
                // the purified point, apply it to the input.
                let purified = pipeline.run(x_adv, rng)?;
                clf.loss_grad(&purified, label)
            }
            AttackGradient::Full => {
                // Central differences with common random numbers: one seed
                // per EOT sample shared by every probe, so the stochastic
                // purifier is a fixed function during differentiation.
                let seed: u64 = rng.random();
                let h = 1e-4;
                let mut g = vec![0.0; x_adv.len()];
                for j in 0..x_adv.len() {
                    let mut plus = x_adv.to_vec();
                    plus[j] += h;
                    let mut minus = x_adv.to_vec();
                    minus[j] -= h;
                    let lp = clf.loss(&pipeline.run_seeded(&plus, seed)?, label);
                    let lm = clf.loss(&pipeline.run_seeded(&minus, seed)?, label);
                    g[j] = (lp - lm) / (2.0 * h);
                }
                g
            }
        };
        for (a, b) in grad.iter_mut().zip(&sample_grad) {
            *a += b / cfg.eot_samples as f64;
        }
    }
    Ok(grad)
}

/// Projected gradient ascent on the classification loss. L-infinity steps
/// follow the gradient sign; L2 steps follow the normalized gradient. The
/// perturbation is re-projected into the budget ball every iteration.
pub fn pgd_attack<R: Rng>(
    x: &[f64],
    label: usize,
    clf: &SmoothClassifier,
    cfg: &AttackConfig,
    pipeline: Option<&Purifier<'_>>,
    rng: &mut R,
) -> Result<Sample> {
    cfg.validate()?;
    if cfg.budget == 0.0 {
        return Ok(x.to_vec());
    }
    let mut delta = vec![0.0; x.len()];
    for _ in 0..cfg.iterations {
        let x_adv = vecmath::add(x, &delta);
        let g = attack_gradient(&x_adv, label, clf, cfg, pipeline, rng)?;
        match cfg.norm {
            AttackNorm::LInf => {
                for (d, gj) in delta.iter_mut().zip(&g) {
                    *d += cfg.step_size * gj.signum();
                }
            }
            AttackNorm::L2 => {
                let n = vecmath::norm2(&g);
                if n > 0.0 {
                    for (d, gj) in delta.iter_mut().zip(&g) {
                        *d += cfg.step_size * gj / n;
                    }
                }
            }
        }
        project(&mut delta, cfg.norm, cfg.budget);
        if let Some((lo, hi)) = cfg.clamp_box {
            for (d, xj) in delta.iter_mut().zip(x) {
                *d = (*d + xj).clamp(lo, hi) - xj;
            }
        }
        debug_assert!(
            match cfg.norm {
                AttackNorm::LInf => vecmath::linf(&delta) <= cfg.budget + 1e-12,
                AttackNorm::L2 => vecmath::norm2(&delta) <= cfg.budget + 1e-12,
            },
            "projection violated the budget"
        );
    }
    Ok(vecmath::add(x, &delta))
}

/// One evaluated trial; `pred_final` is the defended pipeline's decision on
/// the adversarial input.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub label: usize,
    pub input: Sample,
    pub adversarial: Sample,
    pub purified: Option<Sample>,
    /// Raw classifier decision on the clean input.
    pub pred_clean: usize,
    /// Defended pipeline's decision on the clean input.
    pub pred_standard: usize,
    pub pred_adv: usize,
    pub pred_final: usize,
    pub l2_purified_to_clean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessReport {
    /// Defended-pipeline accuracy on clean inputs.
    pub standard_accuracy: f64,
    /// Defended-pipeline accuracy on attacked inputs.
    pub robust_accuracy: f64,
    pub standard_correct: u64,
    pub robust_correct: u64,
    pub trials: u64,
    pub seed: u64,
    pub records: Vec<TrialRecord>,
}

/// Evaluate the (optionally purified) classifier under attack. Trials run
/// in parallel with derived per-trial seeds; the outcome is identical to a
/// serial run with the same master seed.
pub fn evaluate_robustness(
    lmix: &LabeledMixture,
    clf: &SmoothClassifier,
    purifier: Option<&Purifier<'_>>,
    attack: &AttackConfig,
    n_trials: u64,
    seed: u64,
) -> Result<RobustnessReport> {
    if n_trials < 1 {
        return Err(Error::invalid("need at least one trial"));
    }
    attack.validate()?;
    if let Some(p) = purifier {
        p.cfg.validate(p.grid)?;
    }

    let run_trial = |i: u64| -> Result<TrialRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
        let (x, label) = lmix.sample_labeled(&mut rng);
        let pred_clean = clf.classify(&x);
        // Standard accuracy runs the same defense on the clean input.
        let pred_standard = match purifier {
            Some(p) => clf.classify(&p.run(&x, &mut rng)?),
            None => pred_clean,
        };
        let adversarial = pgd_attack(&x, label, clf, attack, purifier, &mut rng)?;
        let pred_adv = clf.classify(&adversarial);
        let (purified, pred_final) = match purifier {
            Some(p) => {
                let out = p.run(&adversarial, &mut rng)?;
                let pred = clf.classify(&out);
                (Some(out), pred)
            }
            None => (None, pred_adv),
        };
        let l2 = purified
            .as_ref()
            .map(|p| vecmath::dist2(p, &x))
            .unwrap_or(0.0);
        Ok(TrialRecord {
            trial: i,
            label,
            input: x,
            adversarial,
            purified,
            pred_clean,
            pred_standard,
            pred_adv,
            pred_final,
            l2_purified_to_clean: l2,
        })
    };

    let n_threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(n_trials as usize);
    let chunk = (n_trials as usize).div_ceil(n_threads);
    let mut slots: Vec<Option<Result<TrialRecord>>> = (0..n_trials).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (c, part) in slots.chunks_mut(chunk).enumerate() {
            let run_trial = &run_trial;
            scope.spawn(move || {
                for (j, slot) in part.iter_mut().enumerate() {
                    *slot = Some(run_trial((c * chunk + j) as u64));
                }
            });
        }
    });
    let mut records = Vec::with_capacity(n_trials as usize);
    for slot in slots {
        records.push(slot.expect("trial not executed")?);
    }

    let standard_correct = records.iter().filter(|r| r.pred_standard == r.label).count() as u64;
    let robust_correct = records.iter().filter(|r| r.pred_final == r.label).count() as u64;
    Ok(RobustnessReport {
        standard_accuracy: standard_correct as f64 / n_trials as f64,
        robust_accuracy: robust_correct as f64 / n_trials as f64,
        standard_correct,
        robust_correct,
        trials: n_trials,
        seed,
        records,
    })
}
