//! Optimizers, the fixed-ratio alternating baseline, and the adaptive
//! rollback training loop: the discriminator keeps the inner state with the
//! smallest first-order score S, the generator keeps the state with the
//! smallest residual energy.

use crate::advobj::{
    self, mask_ascent_grad, DiscNet, GanFamily, GanVariant, InputMode,
};
use crate::diffcore::{Bindings, Executor, Jet};
use crate::netmod::{self, NetworkSpec, ParamVector, SnState};
use crate::ntkdiag::{self, score_from_kr, NtkGram};
use crate::pdebench::{self, PdeProblem, ProblemName};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Collocation points per parallel work block; fixed so that reductions are
/// independent of the thread count.
const BLOCK: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] crate::netmod::NetError),
    #[error(transparent)]
    Adv(#[from] crate::advobj::AdvError),
    #[error("restore token does not match this architecture")]
    ForeignToken,
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Exponential decay: lr is multiplied by `gamma` every `step_size`
    /// optimizer steps.
    #[serde(default)]
    pub decay: Option<DecaySchedule>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> AdamParams {
        AdamParams { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay: None }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub gamma: f64,
    pub step_size: u64,
}

/// Bias-corrected Adam with optional stepwise exponential learning-rate
/// decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: Option<(f64, u64)>,
}

impl AdamState {
    pub fn new(n: usize, hp: &AdamParams) -> AdamState {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: hp.lr,
            beta1: hp.beta1,
            beta2: hp.beta2,
            eps: hp.eps,
            decay: hp.decay.map(|d| (d.gamma, d.step_size)),
        }
    }

    pub fn effective_lr(&self) -> f64 {
        match self.decay {
            Some((gamma, step)) if step > 0 => {
                self.lr * gamma.powi((self.t / step) as i32)
            }
            _ => self.lr,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let lr = match self.decay {
            Some((gamma, step)) if step > 0 => {
                self.lr * gamma.powi(((self.t - 1) / step) as i32)
            }
            _ => self.lr,
        };
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    FixedRatio { g: usize, d: usize },
    Rollback { t_g: usize, t_d: usize, include_noop_candidate: bool },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub problem: ProblemName,
    pub generator: NetworkSpec,
    /// Ignored by the masked families, which have one parameter per
    /// collocation point instead of a network.
    pub discriminator: NetworkSpec,
    pub adversarial: GanVariant,
    pub grid_n: usize,
    #[serde(default)]
    pub jitter_seed: Option<u64>,
    pub seed: u64,
    pub outer_iterations: usize,
    pub mode: TrainMode,
    pub gen_adam: AdamParams,
    pub disc_adam: AdamParams,
    #[serde(default = "default_val_res")]
    pub validation_resolution: usize,
    /// Power iterations per discriminator training step.
    #[serde(default = "default_sn_iters")]
    pub sn_train_iters: usize,
}

fn default_val_res() -> usize {
    16
}
fn default_sn_iters() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.generator.validate()?;
        self.adversarial.validate()?;
        if !self.adversarial.is_masked() {
            self.discriminator.validate()?;
            if self.discriminator.input_dim != 1 {
                return Err(TrainError::Config(
                    "discriminator input_dim must be 1".into(),
                ));
            }
            if self.discriminator.sigmoid_output
                && self.adversarial.family != GanFamily::Gan
            {
                return Err(TrainError::Config(
                    "sigmoid output is reserved for the gan family".into(),
                ));
            }
        }
        if self.generator.input_dim != 2 {
            return Err(TrainError::Config("generator input_dim must be 2".into()));
        }
        if self.grid_n < 2 {
            return Err(TrainError::Config("grid_n must be at least 2".into()));
        }
        match self.mode {
            TrainMode::FixedRatio { g, d } if g == 0 || d == 0 => {
                return Err(TrainError::Config("update budgets must be at least 1".into()))
            }
            TrainMode::Rollback { t_g, t_d, .. } if t_g == 0 || t_d == 0 => {
                return Err(TrainError::Config("rollback budgets must be at least 1".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Per-outer-iteration record. Wall time is tracked separately so that the
/// history itself is bitwise deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Residual energy at the start of the iteration.
    pub energy: f64,
    /// First-order score after the discriminator substep.
    pub score: f64,
    pub train_mse: Option<f64>,
    pub validation_mse: Option<f64>,
    pub accepted_g_depth: usize,
    pub accepted_d_depth: usize,
    pub saturation_count: u64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Rollback candidate scores S^{m,t} in candidate order.
    pub candidate_scores: Vec<f64>,
    /// Rollback candidate energies E^{m,t} in candidate order.
    pub candidate_energies: Vec<f64>,
    /// Depth of the first candidate (0 when the no-update candidate is in
    /// the set, 1 otherwise).
    pub candidate_base: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
    pub aborted: bool,
    pub total_gen_updates: usize,
    pub total_disc_updates: usize,
}

/// Wall-clock milliseconds per outer iteration, reported next to (not
/// inside) the deterministic history.
#[derive(Clone, Debug, Default)]
pub struct Timings {
    pub per_iteration_ms: Vec<f64>,
}

/// Opaque snapshot of a trainable state: parameters, optimizer moments and
/// any spectral-norm vectors. Restoring is bitwise.
#[derive(Clone, Debug, PartialEq)]
pub struct StateToken {
    fingerprint: u64,
    params: Vec<f64>,
    adam: AdamState,
    sn: Option<SnState>,
}

fn fingerprint(params: &[f64], adam: &AdamState) -> u64 {
    (params.len() as u64) ^ ((adam.m.len() as u64) << 24)
}

pub fn snapshot(params: &[f64], adam: &AdamState, sn: Option<&SnState>) -> StateToken {
    StateToken {
        fingerprint: fingerprint(params, adam),
        params: params.to_vec(),
        adam: adam.clone(),
        sn: sn.cloned(),
    }
}

pub fn restore(
    token: &StateToken,
    params: &mut [f64],
    adam: &mut AdamState,
    mut sn: Option<&mut SnState>,
) -> Result<(), TrainError> {
    if token.fingerprint != fingerprint(params, adam) {
        return Err(TrainError::ForeignToken);
    }
    params.copy_from_slice(&token.params);
    *adam = token.adam.clone();
    if let (Some(dst), Some(src)) = (sn.as_deref_mut(), token.sn.as_ref()) {
        *dst = src.clone();
    }
    Ok(())
}

enum Disc {
    Net {
        spec: NetworkSpec,
        params: ParamVector,
        sn: Option<SnState>,
        prog_fake: crate::diffcore::Program,
        built_fake: netmod::BuiltNet,
        prog_real: crate::diffcore::Program,
        built_real: netmod::BuiltNet,
        prog_gp: Option<(crate::diffcore::Program, netmod::BuiltNet)>,
    },
    Mask {
        family: GanFamily,
        lambda: Vec<f64>,
    },
}

/// Read-only view of a frozen discriminator, cheap to share across worker
/// blocks.
#[derive(Clone, Copy)]
enum DiscView<'a> {
    Net {
        spec: &'a NetworkSpec,
        params: &'a ParamVector,
        sn: Option<&'a SnState>,
        variant: GanVariant,
    },
    Mask {
        family: GanFamily,
        lambda: &'a [f64],
    },
}

impl<'a> DiscView<'a> {
    fn of(disc: &'a Disc, variant: GanVariant) -> DiscView<'a> {
        match disc {
            Disc::Net { spec, params, sn, .. } => {
                DiscView::Net { spec, params, sn: sn.as_ref(), variant }
            }
            Disc::Mask { family, lambda } => DiscView::Mask { family: *family, lambda },
        }
    }

    /// Per-sample generator-loss slope `w_i = dL_G/dr_i` (so the
    /// Theorem-1 weighting is `gamma_i = -w_i`), plus a saturation flag.
    fn loss_slope(&self, i: usize, r: f64, n: f64) -> (f64, bool) {
        match self {
            DiscView::Mask { family, lambda } => {
                let m = match family {
                    GanFamily::SaMask => crate::diffcore::softplus(lambda[i]),
                    _ => lambda[i],
                };
                ((1.0 / n) * m * r, false)
            }
            DiscView::Net { spec, params, sn, variant } => {
                let disc = DiscNet { spec, params, sn: *sn };
                match variant.input_mode {
                    InputMode::Residual => {
                        let (f, df) = disc.score(r);
                        let sat = variant.family == GanFamily::Gan
                            && advobj::pqr(variant, f).saturated;
                        ((1.0 / n) * variant.r_prime(f) * df, sat)
                    }
                    InputMode::SquaredResidual => {
                        let (f, dsf) = disc.score(r * r);
                        let sat = variant.family == GanFamily::Gan
                            && advobj::pqr(variant, f).saturated;
                        let base = (2.0 / n) * variant.r_prime(f) * dsf;
                        (r * base, sat)
                    }
                }
            }
        }
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    problem: PdeProblem,
    grid: Vec<[f64; 2]>,
    val_points: Vec<[f64; 2]>,
    res_prog: pdebench::ResidualProgram,
    /// Per-point constant tables for the residual program.
    point_consts: Vec<Vec<Jet>>,
    gen_params: ParamVector,
    gen_adam: AdamState,
    disc: Disc,
    disc_adam: AdamState,
    gp_rng: ChaCha8Rng,
    saturations: u64,
    /// Offset added to iteration indices; nonzero when resuming.
    pub start_iteration: usize,
    pub history: TrainHistory,
    pub timings: Timings,
}

/// Builds the per-sample discriminator-loss program. The input node is the
/// sample (residual or squared residual); the output is P or Q of the
/// score, or the gradient-penalty term.
fn build_disc_prog(
    spec: &NetworkSpec,
    variant: &GanVariant,
    kind: DiscProgKind,
) -> (crate::diffcore::Program, netmod::BuiltNet) {
    let mut tb = crate::diffcore::ProgramBuilder::new();
    let input = tb.input(0);
    let built = netmod::build_network(&mut tb, spec, 0, &[input]);
    let out = match kind {
        DiscProgKind::Real => advobj::apply_p(&mut tb, variant, built.score),
        DiscProgKind::Fake => advobj::apply_q(&mut tb, variant, built.score),
        DiscProgKind::Penalty => {
            // (|d score / d input| - 1)^2
            let d = tb.extract_d1(built.score, 0);
            let a = tb.abs(d);
            let one = tb.constant(1.0);
            let diff = tb.sub(a, one);
            tb.mul(diff, diff)
        }
    };
    (tb.finish(out), built)
}

#[derive(Clone, Copy)]
enum DiscProgKind {
    Real,
    Fake,
    Penalty,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Trainer, TrainError> {
        cfg.validate()?;
        let problem = pdebench::make_problem(cfg.problem);
        let grid = pdebench::collocation(&problem, cfg.grid_n, cfg.jitter_seed).points;
        let val_points = pdebench::validation_grid(&problem, cfg.validation_resolution);
        let res_prog = pdebench::build_residual_program(&problem, &cfg.generator);
        let point_consts: Vec<Vec<Jet>> = grid
            .iter()
            .map(|x| {
                let mut c = vec![Jet::ZERO; res_prog.n_consts()];
                res_prog.bind_consts(&problem, x, &mut c);
                c
            })
            .collect();
        let gen_params = netmod::init(&cfg.generator, cfg.seed)?;
        let gen_adam = AdamState::new(gen_params.len(), &cfg.gen_adam);
        let disc = if cfg.adversarial.is_masked() {
            Disc::Mask { family: cfg.adversarial.family, lambda: vec![0.0; grid.len()] }
        } else {
            let spec = cfg.discriminator.clone();
            let params = netmod::init(&spec, cfg.seed.wrapping_add(0x5eed))?;
            let sn = spec.spectral_norm.then(|| SnState::new(&spec, cfg.seed));
            let (prog_fake, built_fake) = build_disc_prog(&spec, &cfg.adversarial, DiscProgKind::Fake);
            let (prog_real, built_real) = build_disc_prog(&spec, &cfg.adversarial, DiscProgKind::Real);
            let prog_gp = (cfg.adversarial.family == GanFamily::WganGp)
                .then(|| build_disc_prog(&spec, &cfg.adversarial, DiscProgKind::Penalty));
            Disc::Net { spec, params, sn, prog_fake, built_fake, prog_real, built_real, prog_gp }
        };
        let disc_adam = match &disc {
            Disc::Net { params, .. } => AdamState::new(params.len(), &cfg.disc_adam),
            Disc::Mask { lambda, .. } => AdamState::new(lambda.len(), &cfg.disc_adam),
        };
        let gp_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x6b));
        Ok(Trainer {
            cfg,
            problem,
            grid,
            val_points,
            res_prog,
            point_consts,
            gen_params,
            gen_adam,
            disc,
            disc_adam,
            gp_rng,
            saturations: 0,
            start_iteration: 0,
            history: TrainHistory::default(),
            timings: Timings::default(),
        })
    }

    pub fn generator_params(&self) -> &ParamVector {
        &self.gen_params
    }

    pub fn generator_params_mut(&mut self) -> &mut ParamVector {
        &mut self.gen_params
    }

    pub fn discriminator_params(&self) -> Option<&ParamVector> {
        match &self.disc {
            Disc::Net { params, .. } => Some(params),
            Disc::Mask { .. } => None,
        }
    }

    pub fn set_generator_params(&mut self, values: Vec<f64>) -> Result<(), TrainError> {
        if values.len() != self.gen_params.len() {
            return Err(TrainError::Config("generator parameter length mismatch".into()));
        }
        self.gen_params.values = values;
        Ok(())
    }

    pub fn set_discriminator_params(&mut self, values: Vec<f64>) -> Result<(), TrainError> {
        match &mut self.disc {
            Disc::Net { params, .. } => {
                if values.len() != params.len() {
                    return Err(TrainError::Config(
                        "discriminator parameter length mismatch".into(),
                    ));
                }
                params.values = values;
                Ok(())
            }
            Disc::Mask { .. } => {
                Err(TrainError::Config("masked families have no network checkpoint".into()))
            }
        }
    }

    pub fn grid(&self) -> &[[f64; 2]] {
        &self.grid
    }

    /// Residual NTK Gram at the current generator state.
    pub fn ntk_gram(&self) -> NtkGram {
        self.ntk()
    }

    /// Theorem-1 weighting of the current discriminator at the given
    /// residual batch.
    pub fn gamma(&mut self, residuals: &[f64]) -> Vec<f64> {
        self.gamma_of(residuals)
    }

    /// Residuals and full generator-loss gradient at the current state.
    pub fn generator_loss_grad(&mut self) -> (Vec<f64>, Vec<f64>) {
        let (r, g) = self.gen_pass(true);
        (r, g.unwrap())
    }

    /// Residual vector of the current generator on the fixed evaluation
    /// set, evaluated in parallel over fixed-size blocks.
    pub fn residuals(&self) -> Vec<f64> {
        let spec = &self.cfg.generator;
        let params = &self.gen_params;
        let problem = &self.problem;
        self.grid
            .par_chunks(BLOCK)
            .flat_map_iter(|chunk| {
                chunk
                    .iter()
                    .map(|x| pdebench::residual(problem, spec, params, None, x))
                    .collect::<Vec<f64>>()
            })
            .collect()
    }

    /// Residual Jacobian rows d r_i / d theta.
    fn jacobian(&self) -> Vec<Vec<f64>> {
        let params = &self.gen_params.values;
        let prog = &self.res_prog.program;
        self.grid
            .par_chunks(BLOCK)
            .enumerate()
            .flat_map_iter(|(bi, chunk)| {
                let mut exec = Executor::new();
                let mut rows = Vec::with_capacity(chunk.len());
                for (k, x) in chunk.iter().enumerate() {
                    let consts = &self.point_consts[bi * BLOCK + k];
                    let bind = Bindings { params, inputs: x, consts };
                    exec.forward(prog, bind);
                    exec.backward(prog, bind, 1.0);
                    let mut g = vec![0.0; params.len()];
                    exec.grad_into(prog, &mut g, 1.0);
                    rows.push(g);
                }
                rows
            })
            .collect()
    }

    pub fn ntk(&self) -> NtkGram {
        let jac = self.jacobian();
        let n = jac.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i..n)
                    .map(|j| jac[i].iter().zip(&jac[j]).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect();
        let mut mat = crate::linalg::Mat::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                mat[(i, i + off)] = v;
                mat[(i + off, i)] = v;
            }
        }
        ntkdiag::ntk_gram_from_mat(mat)
    }

    /// Theorem-1 weighting gamma = -dL_G/dr of the current discriminator at
    /// the given residuals; counts generator-side log saturations.
    fn gamma_of(&mut self, residuals: &[f64]) -> Vec<f64> {
        let view = DiscView::of(&self.disc, self.cfg.adversarial);
        let n = residuals.len() as f64;
        let mut sats = 0u64;
        let gamma = residuals
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let (w, sat) = view.loss_slope(i, r, n);
                if sat {
                    sats += 1;
                }
                -w
            })
            .collect();
        self.saturations += sats;
        gamma
    }

    /// Fused generator pass: tape forward per point gives the residual, the
    /// frozen discriminator gives the per-sample loss slope, and (when
    /// requested) the backward sweep seeded with that slope accumulates the
    /// full generator gradient.
    fn gen_pass(&mut self, need_grad: bool) -> (Vec<f64>, Option<Vec<f64>>) {
        let params = &self.gen_params.values;
        let prog = &self.res_prog.program;
        let view = DiscView::of(&self.disc, self.cfg.adversarial);
        let n = self.grid.len() as f64;
        let blocks: Vec<(Vec<f64>, Vec<f64>, u64)> = self
            .grid
            .par_chunks(BLOCK)
            .enumerate()
            .map(|(bi, chunk)| {
                let mut exec = Executor::new();
                let mut g = vec![0.0; if need_grad { params.len() } else { 0 }];
                let mut rs = Vec::with_capacity(chunk.len());
                let mut sats = 0u64;
                for (k, x) in chunk.iter().enumerate() {
                    let idx = bi * BLOCK + k;
                    let consts = &self.point_consts[idx];
                    let bind = Bindings { params, inputs: x, consts };
                    let r = exec.forward(prog, bind);
                    rs.push(r);
                    if need_grad {
                        let (w, sat) = view.loss_slope(idx, r, n);
                        if sat {
                            sats += 1;
                        }
                        if w != 0.0 {
                            exec.backward(prog, bind, w);
                            exec.grad_into(prog, &mut g, 1.0);
                        }
                    }
                }
                (rs, g, sats)
            })
            .collect();
        let mut residuals = Vec::with_capacity(self.grid.len());
        let mut grad = need_grad.then(|| vec![0.0; params.len()]);
        for (rs, g, sats) in blocks {
            residuals.extend_from_slice(&rs);
            self.saturations += sats;
            if let Some(dst) = grad.as_mut() {
                for (d, s) in dst.iter_mut().zip(&g) {
                    *d += s;
                }
            }
        }
        (residuals, grad)
    }

    /// Discriminator objective gradient (of the loss to MAXIMIZE) at the
    /// frozen residual batch, together with the current gamma. Fake samples
    /// are processed in parallel blocks.
    fn disc_grad(&mut self, residuals: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match &mut self.disc {
            Disc::Mask { family, lambda } => {
                let grad = mask_ascent_grad(*family, residuals, lambda);
                let gamma = advobj::constrained_gamma(*family, residuals, lambda)
                    .expect("masked family");
                (grad, gamma)
            }
            Disc::Net {
                spec,
                params,
                sn,
                prog_fake,
                built_fake,
                prog_real,
                built_real,
                prog_gp,
            } => {
                let variant = self.cfg.adversarial;
                let n = residuals.len() as f64;

                let mut consts_fake = vec![Jet::ZERO; prog_fake.n_consts()];
                if spec.spectral_norm {
                    netmod::fill_sn_consts(built_fake, spec, sn.as_ref().unwrap(), &mut consts_fake);
                }
                // fake samples: Q(f(input_i)) with weight 1/N; the same
                // forward pass yields the score jet for gamma
                let pvals = &params.values;
                let blocks: Vec<(Vec<f64>, Vec<f64>, u64)> = residuals
                    .par_chunks(BLOCK)
                    .map(|chunk| {
                        let mut exec = Executor::new();
                        let mut grad = vec![0.0; pvals.len()];
                        let mut gamma = Vec::with_capacity(chunk.len());
                        for &r in chunk {
                            let input = match variant.input_mode {
                                InputMode::Residual => [r, 0.0],
                                InputMode::SquaredResidual => [r * r, 0.0],
                            };
                            let bind =
                                Bindings { params: pvals, inputs: &input, consts: &consts_fake };
                            exec.forward(prog_fake, bind);
                            exec.backward(prog_fake, bind, 1.0 / n);
                            exec.grad_into(prog_fake, &mut grad, 1.0);
                            let score = exec.jet(built_fake.score);
                            let g = match variant.input_mode {
                                InputMode::Residual => {
                                    -(1.0 / n) * variant.r_prime(score.v) * score.d1[0]
                                }
                                InputMode::SquaredResidual => {
                                    let base =
                                        (2.0 / n) * variant.r_prime(score.v) * score.d1[0];
                                    -(r * base)
                                }
                            };
                            gamma.push(g);
                        }
                        (grad, gamma, exec.saturations)
                    })
                    .collect();
                let mut grad = vec![0.0; params.len()];
                let mut gamma = Vec::with_capacity(residuals.len());
                for (g, gm, sats) in blocks {
                    for (dst, src) in grad.iter_mut().zip(&g) {
                        *dst += src;
                    }
                    gamma.extend_from_slice(&gm);
                    self.saturations += sats;
                }

                // real sample: P(f(0)) with unit weight (the N copies of
                // the zero target average to one term)
                let mut exec = Executor::new();
                let mut consts_real = vec![Jet::ZERO; prog_real.n_consts()];
                if spec.spectral_norm {
                    netmod::fill_sn_consts(built_real, spec, sn.as_ref().unwrap(), &mut consts_real);
                }
                let bind_real =
                    Bindings { params: &params.values, inputs: &[0.0, 0.0], consts: &consts_real };
                exec.forward(prog_real, bind_real);
                self.saturations += exec.saturations;
                exec.backward(prog_real, bind_real, 1.0);
                exec.grad_into(prog_real, &mut grad, 1.0);

                // gradient penalty subtracts gp_coefficient * mean(...)
                if let Some((pg, built_gp)) = prog_gp {
                    let mut consts_gp = vec![Jet::ZERO; pg.n_consts()];
                    if spec.spectral_norm {
                        netmod::fill_sn_consts(built_gp, spec, sn.as_ref().unwrap(), &mut consts_gp);
                    }
                    for &r in residuals {
                        let u: f64 = self.gp_rng.gen();
                        let base = match variant.input_mode {
                            InputMode::Residual => r,
                            InputMode::SquaredResidual => r * r,
                        };
                        let xhat = (1.0 - u) * base;
                        let inputs = [xhat, 0.0];
                        let bind_gp = Bindings {
                            params: &params.values,
                            inputs: &inputs,
                            consts: &consts_gp,
                        };
                        exec.forward(pg, bind_gp);
                        exec.backward(pg, bind_gp, -variant.gp_coefficient / n);
                        exec.grad_into(pg, &mut grad, 1.0);
                    }
                }
                (grad, gamma)
            }
        }
    }

    fn disc_update(&mut self, ascent_grad: &[f64]) {
        let descent: Vec<f64> = ascent_grad.iter().map(|g| -g).collect();
        match &mut self.disc {
            Disc::Net { params, sn, .. } => {
                self.disc_adam.step(&mut params.values, &descent);
                if let Some(s) = sn.as_mut() {
                    s.update(params, self.cfg.sn_train_iters.max(1));
                }
            }
            Disc::Mask { lambda, .. } => {
                self.disc_adam.step(lambda, &descent);
            }
        }
        self.history.total_disc_updates += 1;
    }

    fn gen_update(&mut self, grad: &[f64]) {
        self.gen_adam.step(&mut self.gen_params.values, grad);
        self.history.total_gen_updates += 1;
    }

    fn snapshot_disc(&self) -> StateToken {
        match &self.disc {
            Disc::Net { params, sn, .. } => snapshot(&params.values, &self.disc_adam, sn.as_ref()),
            Disc::Mask { lambda, .. } => snapshot(lambda, &self.disc_adam, None),
        }
    }

    fn restore_disc(&mut self, token: &StateToken) {
        // split borrows: adam state is restored through a scratch swap
        let mut adam = self.disc_adam.clone();
        match &mut self.disc {
            Disc::Net { params, sn, .. } => {
                restore(token, &mut params.values, &mut adam, sn.as_mut())
                    .expect("disc token matches");
            }
            Disc::Mask { lambda, .. } => {
                restore(token, lambda, &mut adam, None).expect("disc token matches");
            }
        }
        self.disc_adam = adam;
    }

    fn snapshot_gen(&self) -> StateToken {
        snapshot(&self.gen_params.values, &self.gen_adam, None)
    }

    fn restore_gen(&mut self, token: &StateToken) {
        let mut adam = self.gen_adam.clone();
        restore(token, &mut self.gen_params.values, &mut adam, None).expect("gen token matches");
        self.gen_adam = adam;
    }

    fn mse_pair(&self) -> (Option<f64>, Option<f64>) {
        if self.problem.exact(&[0.5, 0.5]).is_none() {
            return (None, None);
        }
        let train =
            pdebench::mse_on_points(&self.problem, &self.cfg.generator, &self.gen_params, None, &self.grid);
        let val = pdebench::mse_on_points(
            &self.problem,
            &self.cfg.generator,
            &self.gen_params,
            None,
            &self.val_points,
        );
        (Some(train), Some(val))
    }

    /// Runs one outer iteration; returns false when training must abort.
    fn outer_iteration(&mut self, m: usize) -> bool {
        let t0 = std::time::Instant::now();
        self.saturations = 0;

        // step 2: fixed evaluation set, r^m, E^m, K^m
        let (r_m, _) = self.gen_pass(false);
        let e_m = ntkdiag::residual_energy(&r_m);
        if !e_m.is_finite() {
            self.history.aborted = true;
            return false;
        }
        let k = self.ntk();
        let kr = k.apply(&r_m);
        let (lambda_min, lambda_max) = k.extreme_eigenvalues(40);

        let mut candidate_scores = Vec::new();
        let mut candidate_energies = Vec::new();
        let accepted_d;
        let accepted_g;
        let mut candidate_base = 1usize;
        let score;

        match self.cfg.mode {
            TrainMode::FixedRatio { g, d } => {
                // discriminator first, then generator
                for _ in 0..d {
                    let (grad, _) = self.disc_grad(&r_m);
                    if grad.iter().any(|v| !v.is_finite()) {
                        self.history.aborted = true;
                        return false;
                    }
                    self.disc_update(&grad);
                }
                let gamma = self.gamma_of(&r_m);
                score = score_from_kr(&kr, &gamma);
                accepted_d = d;
                for _ in 0..g {
                    let (_, grad) = self.gen_pass(true);
                    let grad = grad.unwrap();
                    if grad.iter().any(|v| !v.is_finite()) {
                        self.history.aborted = true;
                        return false;
                    }
                    self.gen_update(&grad);
                }
                accepted_g = g;
            }
            TrainMode::Rollback { t_g, t_d, include_noop_candidate } => {
                if include_noop_candidate {
                    candidate_base = 0;
                }
                // step 3: discriminator substep scored by S^{m,t} at the
                // frozen residual batch r^m and kernel K^m
                let mut tokens: Vec<StateToken> = Vec::with_capacity(t_d + 1);
                let mut depths: Vec<usize> = Vec::with_capacity(t_d + 1);
                let mut pending_grad: Option<Vec<f64>> = None;
                for t in 0..=t_d {
                    if t > 0 {
                        let grad = pending_grad.take().expect("gradient from previous state");
                        if grad.iter().any(|v| !v.is_finite()) {
                            self.history.aborted = true;
                            return false;
                        }
                        self.disc_update(&grad);
                    }
                    if t < t_d {
                        let (grad, gamma) = self.disc_grad(&r_m);
                        if t > 0 || include_noop_candidate {
                            candidate_scores.push(score_from_kr(&kr, &gamma));
                            tokens.push(self.snapshot_disc());
                            depths.push(t);
                        }
                        pending_grad = Some(grad);
                    } else {
                        let gamma = self.gamma_of(&r_m);
                        candidate_scores.push(score_from_kr(&kr, &gamma));
                        tokens.push(self.snapshot_disc());
                        depths.push(t);
                    }
                }
                let best = argmin(&candidate_scores);
                self.restore_disc(&tokens[best]);
                accepted_d = depths[best];
                score = candidate_scores[best];

                // step 4: generator substep scored by residual energy
                let mut gtokens: Vec<StateToken> = Vec::with_capacity(t_g + 1);
                let mut gdepths: Vec<usize> = Vec::with_capacity(t_g + 1);
                if include_noop_candidate {
                    candidate_energies.push(e_m);
                    gtokens.push(self.snapshot_gen());
                    gdepths.push(0);
                }
                for t in 1..=t_g {
                    let (_, grad) = self.gen_pass(true);
                    let grad = grad.unwrap();
                    if grad.iter().any(|v| !v.is_finite()) {
                        self.history.aborted = true;
                        return false;
                    }
                    self.gen_update(&grad);
                    let (r_t, _) = self.gen_pass(false);
                    let e_t = ntkdiag::residual_energy(&r_t);
                    if !e_t.is_finite() {
                        self.history.aborted = true;
                        return false;
                    }
                    candidate_energies.push(e_t);
                    gtokens.push(self.snapshot_gen());
                    gdepths.push(t);
                }
                let best = argmin(&candidate_energies);
                self.restore_gen(&gtokens[best]);
                accepted_g = gdepths[best];
            }
        }

        let (train_mse, validation_mse) = self.mse_pair();
        self.history.records.push(IterationRecord {
            iteration: m,
            energy: e_m,
            score,
            train_mse,
            validation_mse,
            accepted_g_depth: accepted_g,
            accepted_d_depth: accepted_d,
            saturation_count: self.saturations,
            lambda_min,
            lambda_max,
            candidate_scores,
            candidate_energies,
            candidate_base,
        });
        self.timings.per_iteration_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        true
    }

    /// Runs outer iterations until `outer_iterations` (counted from
    /// `start_iteration`) are complete or training aborts.
    pub fn run(&mut self) -> &TrainHistory {
        while self.start_iteration + self.history.records.len() < self.cfg.outer_iterations {
            let m = self.start_iteration + self.history.records.len();
            if !self.outer_iteration(m) {
                break;
            }
        }
        &self.history
    }
}

/// Index of the smallest value; ties resolve to the earliest candidate.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}
