//! Experiment configuration: a JSON document mirroring the training
//! configuration plus reporting knobs. Unknown keys are rejected before any
//! computation starts.

use apinn_core::advobj::{GanFamily, GanVariant, InputMode};
use apinn_core::netmod::{Activation, NetworkSpec};
use apinn_core::pdebench::ProblemName;
use apinn_core::rolltrain::{AdamParams, DecaySchedule, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Default1e3,
    DeqganTable4,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default-1e-3" => Ok(Preset::Default1e3),
            "deqgan-table4" => Ok(Preset::DeqganTable4),
            other => Err(format!("unknown preset {other}; use default-1e-3 or deqgan-table4")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub widths: Vec<usize>,
    #[serde(default)]
    pub residual_links: Option<bool>,
    #[serde(default)]
    pub spectral_norm: Option<bool>,
    #[serde(default)]
    pub sigmoid_output: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialConfig {
    pub family: GanFamily,
    #[serde(default)]
    pub input_mode: Option<InputMode>,
    #[serde(default)]
    pub gp_coefficient: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    #[serde(default)]
    pub beta1: Option<f64>,
    #[serde(default)]
    pub beta2: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub decay: Option<DecaySchedule>,
}

impl OptimizerConfig {
    fn to_adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1.unwrap_or(0.9),
            beta2: self.beta2.unwrap_or(0.999),
            eps: self.eps.unwrap_or(1e-8),
            decay: self.decay,
        }
    }
}

/// The experiment document. Fields left out fall back to the preset
/// (default: same default learning rate 1e-3 everywhere).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid_n: Option<usize>,
    #[serde(default)]
    pub jitter_seed: Option<u64>,
    #[serde(default)]
    pub outer_iterations: Option<usize>,
    #[serde(default)]
    pub mode: Option<TrainMode>,
    pub adversarial: AdversarialConfig,
    #[serde(default)]
    pub generator: Option<NetworkConfig>,
    #[serde(default)]
    pub discriminator: Option<NetworkConfig>,
    #[serde(default)]
    pub gen_optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub disc_optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub validation_resolution: Option<usize>,
    /// Moving-average window used when the CLI smooths the S series.
    #[serde(default)]
    pub ma_window: Option<usize>,
    /// Total inner-update budget shared by the runs of a ratio sweep.
    #[serde(default)]
    pub update_budget: Option<usize>,
    /// Write a checkpoint every this many outer iterations (0 = final only).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text)
        .map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })
}

/// Table-4 style per-problem settings for the DEQGAN preset.
struct Table4 {
    iterations: usize,
    g_units: usize,
    g_layers: usize,
    d_units: usize,
    d_layers: usize,
    g_lr: f64,
    d_lr: f64,
    g_betas: (f64, f64),
    d_betas: (f64, f64),
    decay_gamma: f64,
    decay_step: u64,
}

fn table4(problem: ProblemName) -> Table4 {
    match problem {
        ProblemName::Poisson => Table4 {
            iterations: 3000,
            g_units: 50,
            g_layers: 4,
            d_units: 30,
            d_layers: 2,
            g_lr: 0.019,
            d_lr: 0.021,
            g_betas: (0.139, 0.369),
            d_betas: (0.745, 0.759),
            decay_gamma: 0.957,
            decay_step: 9,
        },
        ProblemName::Laplace1 | ProblemName::Laplace2 => Table4 {
            iterations: 3000,
            g_units: 50,
            g_layers: 4,
            d_units: 50,
            d_layers: 2,
            g_lr: 0.012,
            d_lr: 0.088,
            g_betas: (0.295, 0.358),
            d_betas: (0.575, 0.133),
            decay_gamma: 0.953,
            decay_step: 10,
        },
        ProblemName::Burgers => Table4 {
            iterations: 3400,
            g_units: 50,
            g_layers: 3,
            d_units: 20,
            d_layers: 5,
            g_lr: 0.012,
            d_lr: 0.005,
            g_betas: (0.185, 0.594),
            d_betas: (0.093, 0.184),
            decay_gamma: 0.954,
            decay_step: 25,
        },
        ProblemName::ReactionDiffusion => Table4 {
            iterations: 4500,
            g_units: 50,
            g_layers: 3,
            d_units: 20,
            d_layers: 5,
            g_lr: 0.007,
            d_lr: 0.009,
            g_betas: (0.185, 0.594),
            d_betas: (0.093, 0.184),
            decay_gamma: 0.954,
            decay_step: 10,
        },
        ProblemName::KleinGordon => Table4 {
            iterations: 4000,
            g_units: 50,
            g_layers: 3,
            d_units: 20,
            d_layers: 5,
            g_lr: 0.012,
            d_lr: 0.005,
            g_betas: (0.185, 0.594),
            d_betas: (0.093, 0.184),
            decay_gamma: 0.954,
            decay_step: 10,
        },
    }
}

fn network_from(
    cfg: Option<&NetworkConfig>,
    input_dim: usize,
    default_widths: Vec<usize>,
    default_links: bool,
    gan_style: bool,
) -> NetworkSpec {
    let widths = cfg.map(|c| c.widths.clone()).unwrap_or(default_widths);
    NetworkSpec {
        input_dim,
        widths,
        activation: Activation::Tanh,
        residual_links: cfg
            .and_then(|c| c.residual_links)
            .unwrap_or(if gan_style { true } else { default_links }),
        spectral_norm: cfg.and_then(|c| c.spectral_norm).unwrap_or(gan_style),
        sigmoid_output: cfg.and_then(|c| c.sigmoid_output).unwrap_or(gan_style),
    }
}

/// Resolved settings ready for the trainer, plus CLI-side knobs.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub train: TrainConfig,
    pub ma_window: usize,
    pub update_budget: usize,
    pub checkpoint_every: usize,
}

pub fn resolve(
    cfg: &ExperimentConfig,
    preset: Preset,
    seed_override: Option<u64>,
) -> Result<Resolved, ConfigError> {
    let variant = GanVariant {
        family: cfg.adversarial.family,
        input_mode: cfg.adversarial.input_mode.unwrap_or(match cfg.adversarial.family {
            GanFamily::SaMask | GanFamily::LaLinear => InputMode::SquaredResidual,
            _ => InputMode::Residual,
        }),
        gp_coefficient: cfg.adversarial.gp_coefficient.unwrap_or(10.0),
    };
    let gan_style = variant.family == GanFamily::Gan;
    let t4 = table4(cfg.problem);
    let (gen_widths, disc_widths, grid_default, iters_default, gen_adam, disc_adam) = match preset {
        Preset::Default1e3 => (
            vec![20, 20, 20],
            vec![20, 20],
            16,
            1500,
            AdamParams::with_lr(1e-3),
            AdamParams::with_lr(1e-3),
        ),
        Preset::DeqganTable4 => (
            vec![t4.g_units; t4.g_layers],
            vec![t4.d_units; t4.d_layers],
            32,
            t4.iterations,
            AdamParams {
                lr: t4.g_lr,
                beta1: t4.g_betas.0,
                beta2: t4.g_betas.1,
                eps: 1e-8,
                decay: Some(DecaySchedule { gamma: t4.decay_gamma, step_size: t4.decay_step }),
            },
            AdamParams {
                lr: t4.d_lr,
                beta1: t4.d_betas.0,
                beta2: t4.d_betas.1,
                eps: 1e-8,
                decay: Some(DecaySchedule { gamma: t4.decay_gamma, step_size: t4.decay_step }),
            },
        ),
    };
    let train = TrainConfig {
        problem: cfg.problem,
        generator: network_from(cfg.generator.as_ref(), 2, gen_widths, true, false),
        discriminator: network_from(cfg.discriminator.as_ref(), 1, disc_widths, false, gan_style),
        adversarial: variant,
        grid_n: cfg.grid_n.unwrap_or(grid_default),
        jitter_seed: cfg.jitter_seed,
        seed: seed_override.unwrap_or(cfg.seed),
        outer_iterations: cfg.outer_iterations.unwrap_or(iters_default),
        mode: cfg.mode.unwrap_or(TrainMode::Rollback {
            t_g: 20,
            t_d: 20,
            include_noop_candidate: false,
        }),
        gen_adam: cfg.gen_optimizer.as_ref().map(|o| o.to_adam()).unwrap_or(gen_adam),
        disc_adam: cfg.disc_optimizer.as_ref().map(|o| o.to_adam()).unwrap_or(disc_adam),
        validation_resolution: cfg.validation_resolution.unwrap_or(16),
        sn_train_iters: 1,
    };
    train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(Resolved {
        train,
        ma_window: cfg.ma_window.unwrap_or(300),
        update_budget: cfg.update_budget.unwrap_or(1000),
        checkpoint_every: cfg.checkpoint_every.unwrap_or(0),
    })
}
