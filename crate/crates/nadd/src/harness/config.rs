//! Experiment configuration: one TOML file per run, covering data, grid,
//! solver, purification, attack and verification settings, with defaults
//! from the reference hyperparameter table where one exists.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversarial::{AttackConfig, AttackGradient, AttackNorm, AttackTarget};
use crate::denoiser::TrainConfig;
use crate::distributions::{GaussianMixture, LabeledMixture, MixtureComponent};
use crate::purify::NaddConfig;
use crate::schedule::TimeGrid;
use crate::solver::SolverMethod;
use crate::{Error, Result};

/// The data distribution. `bimodal` is the 1-D two-mode toy; `single` a
/// lone Gaussian (no labels, used by the bound verifier); `custom` is an
/// arbitrary labeled mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixtureSpec {
    Bimodal { center: f64, variance: f64 },
    Single { mean: Vec<f64>, variance: f64 },
    Custom {
        components: Vec<MixtureComponent>,
        labels: Vec<usize>,
    },
}

impl MixtureSpec {
    pub fn build(&self) -> Result<GaussianMixture> {
        match self {
            MixtureSpec::Bimodal { center, variance } => {
                if !(*variance > 0.0) {
                    return Err(Error::invalid("bimodal variance must be positive"));
                }
                Ok(GaussianMixture::bimodal_1d(*center, *variance))
            }
            MixtureSpec::Single { mean, variance } => {
                GaussianMixture::single(mean.clone(), *variance)
            }
            MixtureSpec::Custom { components, .. } => GaussianMixture::new(components.clone()),
        }
    }

    /// Labeled view; fails for `single`, which has no classes.
    pub fn build_labeled(&self) -> Result<LabeledMixture> {
        match self {
            MixtureSpec::Bimodal { center, variance } => {
                if !(*variance > 0.0) {
                    return Err(Error::invalid("bimodal variance must be positive"));
                }
                Ok(LabeledMixture::bimodal_1d(*center, *variance))
            }
            MixtureSpec::Single { .. } => Err(Error::invalid(
                "a single-Gaussian mixture has no class labels; this experiment needs a labeled mixture",
            )),
            MixtureSpec::Custom { components, labels } => {
                LabeledMixture::new(GaussianMixture::new(components.clone())?, labels.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_steps: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub rho: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        TimeGrid::build(self.n_steps, self.t_min, self.t_max, self.rho)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_steps: 29,
            t_min: 0.002,
            t_max: 16.0,
            rho: 7.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    Exact,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserSpec {
    pub kind: DenoiserKind,
    /// Weights file for `learned`; written by the train-denoiser experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec {
            kind: DenoiserKind::Exact,
            weights_path: None,
            train: None,
        }
    }
}

/// Bound-verification settings (theorem-verify experiment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremSpec {
    pub delta_star: f64,
    pub kappa_max: f64,
    pub kappa_min: f64,
    pub trials: u64,
    pub meta_trials: u64,
}

impl Default for TheoremSpec {
    fn default() -> Self {
        TheoremSpec {
            delta_star: 0.1,
            kappa_max: 1.0,
            kappa_min: 0.01,
            trials: 10_000,
            meta_trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// One of the names printed by `nadd list-experiments`.
    pub experiment: String,
    pub seed: u64,
    pub trials: u64,
    /// Output root; overridden by the NADD_OUTPUT_ROOT environment variable.
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Knob values for sweep experiments (budgets, t-prime values, ...);
    /// each sweep has a sensible default when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<f64>>,
    pub mixture: MixtureSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_solver")]
    pub solver: SolverMethod,
    #[serde(default)]
    pub denoiser: DenoiserSpec,
    pub nadd: NaddConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<TheoremSpec>,
}

fn default_output_dir() -> String {
    "runs".to_string()
}

fn default_solver() -> SolverMethod {
    SolverMethod::Heun
}

pub const EXPERIMENTS: &[&str] = &[
    "purify-demo",
    "robustness-sweep",
    "theorem-verify",
    "ablation-tprime",
    "ablation-tstop",
    "ablation-churn",
    "ablation-ring",
    "train-denoiser",
    "fig1-bimodal",
];

/// One violated invariant, addressed by config field path.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Collect every violated invariant across all modules; empty means the
    /// config is runnable.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut push = |field: &str, e: &Error| {
            out.push(Diagnostic {
                field: field.to_string(),
                message: e.to_string(),
            })
        };
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            push(
                "experiment",
                &Error::UnknownExperiment(self.experiment.clone()),
            );
        }
        if self.trials == 0 {
            push("trials", &Error::invalid("trial count must be positive"));
        }
        let grid = match self.grid.build() {
            Ok(g) => Some(g),
            Err(e) => {
                push("grid", &e);
                None
            }
        };
        if let Err(e) = self.mixture.build() {
            push("mixture", &e);
        }
        if let Some(g) = &grid {
            if let Err(e) = self.nadd.validate(g) {
                push("nadd", &e);
            }
        }
        if let Some(a) = &self.attack {
            if let Err(e) = a.validate() {
                push("attack", &e);
            }
        }
        if let Some(t) = &self.theorem {
            if !(t.delta_star > 0.0 && t.delta_star < 1.0) {
                push(
                    "theorem.delta_star",
                    &Error::invalid("must lie in (0, 1)"),
                );
            }
            if !(t.kappa_min >= 0.0 && t.kappa_min < t.kappa_max) {
                push(
                    "theorem.kappa_min",
                    &Error::invalid("need 0 <= kappa_min < kappa_max"),
                );
            }
            if t.trials < 100 {
                push("theorem.trials", &Error::invalid("need >= 100 trials"));
            }
        }
        if self.denoiser.kind == DenoiserKind::Learned
            && self.denoiser.weights_path.is_none()
            && self.denoiser.train.is_none()
        {
            push(
                "denoiser",
                &Error::invalid("learned denoiser needs weights_path or a [denoiser.train] section"),
            );
        }
        if let Some(sweep) = &self.sweep {
            if sweep.is_empty() {
                push("sweep", &Error::invalid("sweep values must be non-empty"));
            }
        }
        out
    }

    /// Error out on the first violated invariant (used before running).
    pub fn validate(&self) -> Result<()> {
        match self.diagnostics().into_iter().next() {
            None => Ok(()),
            Some(d) => Err(Error::ConfigInvalid {
                field: d.field,
                message: d.message,
            }),
        }
    }

    /// Ready-to-run default config for each registered experiment; also the
    /// starting point for the checked-in examples.
    pub fn default_for(experiment: &str) -> Result<Self> {
        if !EXPERIMENTS.contains(&experiment) {
            return Err(Error::UnknownExperiment(experiment.to_string()));
        }
        // The 1-D toy uses ring radii scaled to the +/-1 mode layout (the
        // reference values target image-space norms).
        let toy_nadd = NaddConfig {
            kappa_min: 0.075,
            kappa_max: 0.1,
            ..NaddConfig::defaults()
        };
        let toy_mixture = MixtureSpec::Bimodal {
            center: 1.0,
            variance: 0.05,
        };
        let toy_attack = AttackConfig {
            norm: AttackNorm::LInf,
            budget: 1.2,
            step_size: 0.15,
            iterations: 15,
            eot_samples: 1,
            attack_target: AttackTarget::ClassifierOnly,
            attack_gradient: AttackGradient::Bpda,
            clamp_box: None,
        };
        let base = ExperimentConfig {
            experiment: experiment.to_string(),
            seed: 42,
            trials: 500,
            output_dir: default_output_dir(),
            sweep: None,
            mixture: toy_mixture.clone(),
            grid: GridSpec::default(),
            solver: SolverMethod::Heun,
            denoiser: DenoiserSpec::default(),
            nadd: toy_nadd.clone(),
            attack: None,
            theorem: None,
        };
        Ok(match experiment {
            "purify-demo" => ExperimentConfig {
                trials: 200,
                ..base
            },
            "fig1-bimodal" => ExperimentConfig {
                trials: 1000,
                ..base
            },
            "robustness-sweep" => ExperimentConfig {
                attack: Some(toy_attack),
                nadd: NaddConfig {
                    kappa_min: 0.375,
                    kappa_max: 0.5,
                    ..toy_nadd
                },
                sweep: Some(vec![0.0, 0.4, 0.8, 1.2, 1.6]),
                ..base
            },
            "theorem-verify" => ExperimentConfig {
                mixture: MixtureSpec::Single {
                    mean: vec![0.0, 0.0],
                    variance: 1.0,
                },
                grid: GridSpec {
                    n_steps: 10,
                    t_min: 0.05,
                    t_max: 1.0,
                    rho: 1.0,
                },
                solver: SolverMethod::Euler,
                nadd: NaddConfig {
                    t_prime: 1.0,
                    t_stop: 0.16,
                    kappa_min: 0.45,
                    kappa_max: 0.9,
                    s_churn: 0.0,
                    ..NaddConfig::defaults()
                },
                theorem: Some(TheoremSpec::default()),
                trials: 10_000,
                ..base
            },
            // Linear correction weights and a low cutoff so the knob sweep
            // spans useless-noise to over-noised regimes; the heavy budget
            // separates the endpoints from the interior peak.
            "ablation-tprime" => ExperimentConfig {
                attack: Some(AttackConfig {
                    budget: 1.5,
                    step_size: 0.2,
                    ..toy_attack
                }),
                nadd: NaddConfig {
                    beta: 1.0,
                    t_stop: 0.1,
                    ..toy_nadd
                },
                sweep: Some(vec![0.25, 2.0, 4.0, 8.0, 16.0]),
                ..base
            },
            "ablation-tstop" => ExperimentConfig {
                attack: Some(toy_attack),
                nadd: NaddConfig {
                    s_churn: 12.0,
                    s_noise: 3.0,
                    ..toy_nadd
                },
                sweep: Some(vec![0.002, 0.585]),
                ..base
            },
            "ablation-churn" => ExperimentConfig {
                attack: Some(AttackConfig {
                    eot_samples: 4,
                    attack_target: AttackTarget::FullPipeline,
                    ..toy_attack
                }),
                // Heavy churn noise so the stochastic arm separates from the
                // deterministic one at toy trial counts.
                nadd: NaddConfig {
                    s_noise: 3.0,
                    ..toy_nadd
                },
                sweep: Some(vec![0.0, 12.0]),
                ..base
            },
            "ablation-ring" => ExperimentConfig {
                attack: Some(toy_attack),
                sweep: Some(vec![0.0, 0.1, 0.25, 0.5, 1.0]),
                ..base
            },
            "train-denoiser" => ExperimentConfig {
                denoiser: DenoiserSpec {
                    kind: DenoiserKind::Learned,
                    weights_path: None,
                    train: Some(TrainConfig::default()),
                },
                ..base
            },
            _ => unreachable!("registry checked above"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_exist_and_validate_for_every_experiment() {
        for name in EXPERIMENTS {
            let cfg = ExperimentConfig::default_for(name).unwrap();
            let diags = cfg.diagnostics();
            assert!(diags.is_empty(), "{name}: {diags:?}");
        }
        assert!(ExperimentConfig::default_for("nope").is_err());
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        for name in EXPERIMENTS {
            let cfg = ExperimentConfig::default_for(name).unwrap();
            let text = cfg.to_toml();
            let parsed = ExperimentConfig::parse(&text).unwrap();
            assert_eq!(cfg, parsed, "{name} did not round-trip");
            assert_eq!(text, parsed.to_toml(), "{name} serialization unstable");
        }
    }

    #[test]
    fn s_max_accepts_inf_string() {
        let mut cfg = ExperimentConfig::default_for("fig1-bimodal").unwrap();
        cfg.nadd.s_max = f64::MAX;
        let text = cfg.to_toml();
        assert!(text.contains("s_max = \"inf\""), "{text}");
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed.nadd.s_max, f64::MAX);

        let numeric = text.replace("s_max = \"inf\"", "s_max = 3.5");
        assert_eq!(ExperimentConfig::parse(&numeric).unwrap().nadd.s_max, 3.5);
        let bad = text.replace("s_max = \"inf\"", "s_max = \"huge\"");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn diagnostics_list_every_violation_with_field_paths() {
        let mut cfg = ExperimentConfig::default_for("robustness-sweep").unwrap();
        cfg.nadd.t_stop = 20.0; // above t_prime
        cfg.nadd.kappa_min = 2.0; // above kappa_max
        cfg.attack.as_mut().unwrap().budget = -1.0;
        cfg.trials = 0;
        let diags = cfg.diagnostics();
        let fields: Vec<&str> = diags.iter().map(|d| d.field.as_str()).collect();
        assert!(fields.contains(&"nadd"), "{diags:?}");
        assert!(fields.contains(&"attack"), "{diags:?}");
        assert!(fields.contains(&"trials"), "{diags:?}");
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn negative_s_churn_is_diagnosed() {
        let mut cfg = ExperimentConfig::default_for("fig1-bimodal").unwrap();
        cfg.nadd.s_churn = -2.0;
        let diags = cfg.diagnostics();
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].field, "nadd");
        assert!(diags[0].message.contains("s_churn"));
    }

    #[test]
    fn parse_error_reports_position() {
        let err = ExperimentConfig::parse("experiment = [broken").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "no position info: {msg}");
    }

    #[test]
    fn unknown_experiment_is_diagnosed() {
        let mut cfg = ExperimentConfig::default_for("fig1-bimodal").unwrap();
        cfg.experiment = "fig2-trimodal".into();
        let diags = cfg.diagnostics();
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].field, "experiment");
    }

    #[test]
    fn single_mixture_has_no_labels() {
        let spec = MixtureSpec::Single {
            mean: vec![0.0],
            variance: 1.0,
        };
        assert!(spec.build().is_ok());
        assert!(spec.build_labeled().is_err());
    }
}
