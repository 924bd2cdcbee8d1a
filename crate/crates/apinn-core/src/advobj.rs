//! Adversarial objective family (GAN, LSGAN, WGAN-GP), constrained
//! discriminator families (self-adaptive mask, linear attention), residual
//! and squared-residual input modes, and the discriminator-induced
//! weighting vector gamma.

use crate::diffcore::{softplus, NodeId, ProgramBuilder, LOG_CLAMP};
use crate::netmod::{self, NetworkSpec, ParamVector, SnState};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum AdvError {
    #[error("variant {family:?} forces input mode {required:?}")]
    ForcedInputMode { family: GanFamily, required: InputMode },
    #[error("operation requires input mode {0:?}")]
    WrongInputMode(InputMode),
    #[error("operation requires a masked family (sa_mask or la_linear)")]
    NotMasked,
    #[error("discriminator must take a single input, got input_dim {0}")]
    BadDiscInput(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanFamily {
    Gan,
    Lsgan,
    WganGp,
    SaMask,
    LaLinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Residual,
    SquaredResidual,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GanVariant {
    pub family: GanFamily,
    #[serde(default = "default_input_mode")]
    pub input_mode: InputMode,
    #[serde(default = "default_gp")]
    pub gp_coefficient: f64,
}

fn default_input_mode() -> InputMode {
    InputMode::Residual
}

fn default_gp() -> f64 {
    10.0
}

impl GanVariant {
    pub fn new(family: GanFamily) -> GanVariant {
        let input_mode = match family {
            GanFamily::SaMask | GanFamily::LaLinear => InputMode::SquaredResidual,
            _ => InputMode::Residual,
        };
        GanVariant { family, input_mode, gp_coefficient: 10.0 }
    }

    /// The masked families act on squared discrepancies with the IPM-form
    /// generator potential; any other input mode is rejected.
    pub fn validate(&self) -> Result<(), AdvError> {
        match self.family {
            GanFamily::SaMask | GanFamily::LaLinear => {
                if self.input_mode != InputMode::SquaredResidual {
                    return Err(AdvError::ForcedInputMode {
                        family: self.family,
                        required: InputMode::SquaredResidual,
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_masked(&self) -> bool {
        matches!(self.family, GanFamily::SaMask | GanFamily::LaLinear)
    }

    /// Generator-potential derivative R'(f).
    pub fn r_prime(&self, f: f64) -> f64 {
        match self.family {
            GanFamily::Gan => -crate::diffcore::sigmoid(f),
            GanFamily::Lsgan => f - 1.0,
            GanFamily::WganGp | GanFamily::SaMask | GanFamily::LaLinear => -1.0,
        }
    }
}

/// Per-sample weighting through which the discriminator reshapes residual
/// descent.
pub type GammaVector = Vec<f64>;

/// Scalar objective triple (P, Q, R) and derivatives at `t`. The GAN logs
/// are clamped at [`LOG_CLAMP`]; `saturated` reports whether a clamp fired.
#[derive(Clone, Copy, Debug)]
pub struct PqrEval {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub dp: f64,
    pub dq: f64,
    pub dr: f64,
    pub saturated: bool,
}

pub fn pqr(variant: &GanVariant, t: f64) -> PqrEval {
    match variant.family {
        GanFamily::Gan => {
            let s = crate::diffcore::sigmoid(t);
            let mut saturated = false;
            let mut clamped_ln = |x: f64| {
                if x < LOG_CLAMP {
                    saturated = true;
                    LOG_CLAMP.ln()
                } else {
                    x.ln()
                }
            };
            let p = clamped_ln(s);
            let q = clamped_ln(1.0 - s);
            PqrEval { p, q, r: q, dp: 1.0 - s, dq: -s, dr: -s, saturated }
        }
        GanFamily::Lsgan => PqrEval {
            p: -0.5 * (t - 1.0) * (t - 1.0),
            q: -0.5 * t * t,
            r: 0.5 * (t - 1.0) * (t - 1.0),
            dp: -(t - 1.0),
            dq: -t,
            dr: t - 1.0,
            saturated: false,
        },
        GanFamily::WganGp | GanFamily::SaMask | GanFamily::LaLinear => PqrEval {
            p: t,
            q: -t,
            r: -t,
            dp: 1.0,
            dq: -1.0,
            dr: -1.0,
            saturated: false,
        },
    }
}

/// Discriminator objective value (to maximize): mean P over real scores
/// plus mean Q over fake scores. The WGAN-GP penalty is a separate term
/// (see [`gradient_penalty`]).
pub fn disc_loss(variant: &GanVariant, f_real: &[f64], f_fake: &[f64]) -> (f64, bool) {
    let mut saturated = false;
    let mut acc = 0.0;
    for &t in f_real {
        let e = pqr(variant, t);
        acc += e.p / f_real.len() as f64;
        saturated |= e.saturated;
    }
    for &t in f_fake {
        let e = pqr(variant, t);
        acc += e.q / f_fake.len() as f64;
        saturated |= e.saturated;
    }
    (acc, saturated)
}

/// Generator objective value (to minimize): mean R over fake scores.
pub fn gen_loss(variant: &GanVariant, f_fake: &[f64]) -> (f64, bool) {
    let mut saturated = false;
    let mut acc = 0.0;
    for &t in f_fake {
        let e = pqr(variant, t);
        acc += e.r / f_fake.len() as f64;
        saturated |= e.saturated;
    }
    (acc, saturated)
}

/// A network discriminator with its optional spectral-norm state.
#[derive(Clone, Copy)]
pub struct DiscNet<'a> {
    pub spec: &'a NetworkSpec,
    pub params: &'a ParamVector,
    pub sn: Option<&'a SnState>,
}

impl DiscNet<'_> {
    /// Pre-sigmoid score and its input derivative at a scalar input.
    pub fn score(&self, x: f64) -> (f64, f64) {
        let out = netmod::forward_jet(self.spec, self.params, self.sn, &[x]);
        (out.score.v, out.score.d1[0])
    }
}

/// Residual-input weighting: `gamma_i = -(1/N) R'(f(r_i)) d_r f(r_i)`.
/// The GAN family evaluates both factors on the pre-sigmoid score.
pub fn gamma_weights(
    variant: &GanVariant,
    residuals: &[f64],
    disc: DiscNet<'_>,
) -> Result<GammaVector, AdvError> {
    if variant.input_mode != InputMode::Residual {
        return Err(AdvError::WrongInputMode(InputMode::Residual));
    }
    if disc.spec.input_dim != 1 {
        return Err(AdvError::BadDiscInput(disc.spec.input_dim));
    }
    let n = residuals.len() as f64;
    Ok(residuals
        .iter()
        .map(|&r| {
            let (f, df) = disc.score(r);
            -(1.0 / n) * variant.r_prime(f) * df
        })
        .collect())
}

/// Squared-residual weighting and its diagonal form:
/// `gamma_i = (2/N) r_i R'(f(r_i^2)) d_s f(r_i^2)` together with
/// `gamma_tilde_i = -(2/N) R'(f(r_i^2)) d_s f(r_i^2)`, so that
/// `gamma = -GammaTilde * r` holds bitwise on the same evaluation.
pub fn gamma_squared(
    variant: &GanVariant,
    residuals: &[f64],
    disc: DiscNet<'_>,
) -> Result<(GammaVector, Vec<f64>), AdvError> {
    if variant.input_mode != InputMode::SquaredResidual {
        return Err(AdvError::WrongInputMode(InputMode::SquaredResidual));
    }
    if disc.spec.input_dim != 1 {
        return Err(AdvError::BadDiscInput(disc.spec.input_dim));
    }
    let n = residuals.len() as f64;
    let mut gamma = Vec::with_capacity(residuals.len());
    let mut tilde = Vec::with_capacity(residuals.len());
    for &r in residuals {
        let (f, dsf) = disc.score(r * r);
        let base = (2.0 / n) * variant.r_prime(f) * dsf;
        gamma.push(r * base);
        tilde.push(-base);
    }
    Ok((gamma, tilde))
}

/// Closed-form weighting of the constrained discriminator families:
/// self-adaptive monotone mask `f(x) = -m(lambda) x^2 / 2` with
/// `m = softplus`, and the linear attentional form `f(x) = -a x^2 / 2`.
pub fn constrained_gamma(
    family: GanFamily,
    residuals: &[f64],
    mask_params: &[f64],
) -> Result<GammaVector, AdvError> {
    assert_eq!(residuals.len(), mask_params.len());
    let n = residuals.len() as f64;
    match family {
        GanFamily::SaMask => Ok(residuals
            .iter()
            .zip(mask_params)
            .map(|(&x, &l)| -(1.0 / n) * softplus(l) * x)
            .collect()),
        GanFamily::LaLinear => Ok(residuals
            .iter()
            .zip(mask_params)
            .map(|(&x, &a)| -(1.0 / n) * a * x)
            .collect()),
        _ => Err(AdvError::NotMasked),
    }
}

/// Ascent gradient of the IPM discriminator loss with respect to the mask
/// parameters, `d/d lambda_i (1/2N) m(lambda_i) x_i^2`.
pub fn mask_ascent_grad(family: GanFamily, residuals: &[f64], mask_params: &[f64]) -> Vec<f64> {
    let n = residuals.len() as f64;
    residuals
        .iter()
        .zip(mask_params)
        .map(|(&x, &l)| {
            let mprime = match family {
                GanFamily::SaMask => crate::diffcore::sigmoid(l),
                _ => 1.0,
            };
            mprime * x * x / (2.0 * n)
        })
        .collect()
}

/// IPM discriminator loss of a masked family (for logging): the real term
/// f(0) vanishes by the anchoring, leaving `(1/2N) sum m_i x_i^2`.
pub fn mask_disc_loss(family: GanFamily, residuals: &[f64], mask_params: &[f64]) -> f64 {
    let n = residuals.len() as f64;
    residuals
        .iter()
        .zip(mask_params)
        .map(|(&x, &l)| {
            let m = match family {
                GanFamily::SaMask => softplus(l),
                _ => l,
            };
            m * x * x / (2.0 * n)
        })
        .sum()
}

/// One-sided gradient penalty anchored at the real point zero: mean over
/// samples of `(|d f / d x| - 1)^2` evaluated at `(1-u_i) r_i`.
pub fn gradient_penalty(disc: DiscNet<'_>, fake_inputs: &[f64], us: &[f64]) -> f64 {
    assert_eq!(fake_inputs.len(), us.len());
    let mut acc = 0.0;
    for (&r, &u) in fake_inputs.iter().zip(us) {
        let xhat = (1.0 - u) * r;
        let (_, df) = disc.score(xhat);
        let d = df.abs() - 1.0;
        acc += d * d;
    }
    acc / fake_inputs.len() as f64
}

/// Records `R(score)` on the tape.
pub fn apply_r(tb: &mut ProgramBuilder, variant: &GanVariant, score: NodeId) -> NodeId {
    match variant.family {
        GanFamily::Gan => {
            let s = tb.sigmoid(score);
            let one = tb.constant(1.0);
            let om = tb.sub(one, s);
            tb.log(om)
        }
        GanFamily::Lsgan => {
            let one = tb.constant(1.0);
            let d = tb.sub(score, one);
            let sq = tb.mul(d, d);
            let half = tb.constant(0.5);
            tb.mul(half, sq)
        }
        GanFamily::WganGp | GanFamily::SaMask | GanFamily::LaLinear => tb.neg(score),
    }
}

/// Records `P(score)` on the tape.
pub fn apply_p(tb: &mut ProgramBuilder, variant: &GanVariant, score: NodeId) -> NodeId {
    match variant.family {
        GanFamily::Gan => {
            let s = tb.sigmoid(score);
            tb.log(s)
        }
        GanFamily::Lsgan => {
            let one = tb.constant(1.0);
            let d = tb.sub(score, one);
            let sq = tb.mul(d, d);
            let mh = tb.constant(-0.5);
            tb.mul(mh, sq)
        }
        GanFamily::WganGp | GanFamily::SaMask | GanFamily::LaLinear => score,
    }
}

/// Records `Q(score)` on the tape.
pub fn apply_q(tb: &mut ProgramBuilder, variant: &GanVariant, score: NodeId) -> NodeId {
    match variant.family {
        GanFamily::Gan => {
            let s = tb.sigmoid(score);
            let one = tb.constant(1.0);
            let om = tb.sub(one, s);
            tb.log(om)
        }
        GanFamily::Lsgan => {
            let sq = tb.mul(score, score);
            let mh = tb.constant(-0.5);
            tb.mul(mh, sq)
        }
        GanFamily::WganGp | GanFamily::SaMask | GanFamily::LaLinear => tb.neg(score),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Bindings, Executor};
    use crate::netmod::init;

    fn disc_fixture(seed: u64, sigmoid_out: bool) -> (NetworkSpec, ParamVector) {
        let mut spec = NetworkSpec::new(1, vec![6, 6]);
        spec.sigmoid_output = sigmoid_out;
        let params = init(&spec, seed).unwrap();
        (spec, params)
    }

    #[test]
    fn pqr_lsgan_examples() {
        let v = GanVariant::new(GanFamily::Lsgan);
        let e = pqr(&v, 1.0);
        assert_eq!((e.p, e.q, e.r), (0.0, -0.5, 0.0));
    }

    #[test]
    fn pqr_wgan_is_linear() {
        let v = GanVariant::new(GanFamily::WganGp);
        for t in [-3.0, 0.0, 7.5] {
            let e = pqr(&v, t);
            assert_eq!((e.p, e.q, e.r), (t, -t, -t));
            assert_eq!((e.dp, e.dq, e.dr), (1.0, -1.0, -1.0));
        }
    }

    #[test]
    fn pqr_gan_at_zero() {
        let v = GanVariant::new(GanFamily::Gan);
        let e = pqr(&v, 0.0);
        assert!((e.p - 0.5f64.ln()).abs() < 1e-15);
        assert!((e.r - 0.5f64.ln()).abs() < 1e-15);
        assert!((e.dr + 0.5).abs() < 1e-15);
        assert!(!e.saturated);
    }

    #[test]
    fn pqr_gan_saturates_with_flag() {
        let v = GanVariant::new(GanFamily::Gan);
        let e = pqr(&v, -40.0);
        assert!(e.saturated);
        assert_eq!(e.p, LOG_CLAMP.ln());
    }

    #[test]
    fn disc_loss_examples() {
        let ls = GanVariant::new(GanFamily::Lsgan);
        let (l, _) = disc_loss(&ls, &[1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(l, 0.0);

        let w = GanVariant::new(GanFamily::WganGp);
        let (l, _) = disc_loss(&w, &[2.5, 2.5], &[2.5, 2.5]);
        assert_eq!(l, 0.0);

        let g = GanVariant::new(GanFamily::Gan);
        let (l, _) = disc_loss(&g, &[0.0], &[0.0]);
        assert!((l - 2.0 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn disc_loss_lsgan_maximized_at_one_zero() {
        // analytic argmax of the quadratic form over scalar probes
        let ls = GanVariant::new(GanFamily::Lsgan);
        let (best, _) = disc_loss(&ls, &[1.0], &[0.0]);
        for fr in [-0.5, 0.0, 0.5, 0.9, 1.1, 2.0] {
            for ff in [-1.0, -0.1, 0.1, 0.5, 1.0] {
                let (l, _) = disc_loss(&ls, &[fr], &[ff]);
                if (fr, ff) != (1.0, 0.0) {
                    assert!(l <= best);
                }
            }
        }
    }

    #[test]
    fn gen_loss_examples() {
        let ls = GanVariant::new(GanFamily::Lsgan);
        assert_eq!(gen_loss(&ls, &[1.0, 1.0]).0, 0.0);
        let w = GanVariant::new(GanFamily::WganGp);
        assert_eq!(gen_loss(&w, &[2.0, 4.0]).0, -3.0);
        let g = GanVariant::new(GanFamily::Gan);
        assert!((gen_loss(&g, &[0.0]).0 - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gamma_ipm_is_scaled_slope() {
        let (spec, params) = disc_fixture(5, false);
        let v = GanVariant::new(GanFamily::WganGp);
        let disc = DiscNet { spec: &spec, params: &params, sn: None };
        let rs = [0.7, -1.3];
        let g = gamma_weights(&v, &rs, disc).unwrap();
        // finite-difference slope oracle
        for (i, &r) in rs.iter().enumerate() {
            let h = 1e-6;
            let fp = netmod::forward(&spec, &params, None, &[r + h]);
            let fm = netmod::forward(&spec, &params, None, &[r - h]);
            let slope = (fp - fm) / (2.0 * h);
            let want = slope / rs.len() as f64;
            assert!(
                (g[i] - want).abs() < 1e-5 * want.abs().max(1.0),
                "gamma {} vs fd {}",
                g[i],
                want
            );
        }
    }

    #[test]
    fn gamma_lsgan_vanishes_on_target() {
        // craft f(r) = 1 with a zero network plus output bias 1: the weight
        // must vanish regardless of the slope factor.
        let spec = NetworkSpec::new(1, vec![3]);
        let mut params = ParamVector {
            values: vec![0.0; spec.param_count()],
            layout: spec.layout(),
        };
        let out = params.layout[1];
        params.values[out.b_off] = 1.0;
        let v = GanVariant::new(GanFamily::Lsgan);
        let disc = DiscNet { spec: &spec, params: &params, sn: None };
        let g = gamma_weights(&v, &[0.4, -2.0], disc).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn gen_loss_gradient_is_minus_gamma_all_variants() {
        // independent tape route: d(mean R(f(r_i)))/d r_i == -gamma_i
        for family in [GanFamily::Gan, GanFamily::Lsgan, GanFamily::WganGp] {
            for trial in 0..50u64 {
                let (spec, params) = disc_fixture(1000 + trial, family == GanFamily::Gan);
                let variant = GanVariant::new(family);
                let disc = DiscNet { spec: &spec, params: &params, sn: None };
                let rs: Vec<f64> = (0..4)
                    .map(|k| ((trial as f64) * 0.37 + k as f64 * 1.01).sin() * 2.0)
                    .collect();
                let gamma = gamma_weights(&variant, &rs, disc).unwrap();

                // record mean R(f(r)) with the residuals as parameter leaves
                let mut tb = ProgramBuilder::new();
                let mut total = tb.constant(0.0);
                for i in 0..rs.len() {
                    let leaf = tb.param(i);
                    let net = netmod::build_network(&mut tb, &spec, rs.len(), &[leaf]);
                    let r_of_f = apply_r(&mut tb, &variant, net.score);
                    total = tb.add(total, r_of_f);
                }
                let invn = tb.constant(1.0 / rs.len() as f64);
                let loss = tb.mul(total, invn);
                let prog = tb.finish(loss);
                let mut all: Vec<f64> = rs.clone();
                all.extend_from_slice(&params.values);
                let mut exec = Executor::new();
                let (_, grads) = crate::diffcore::grad_params(
                    &prog,
                    Bindings { params: &all, inputs: &[], consts: &[] },
                    &mut exec,
                );
                for i in 0..rs.len() {
                    assert!(
                        (grads[i] + gamma[i]).abs() < 1e-10,
                        "{family:?} trial {trial}: dL/dr {} vs -gamma {}",
                        grads[i],
                        -gamma[i]
                    );
                }
            }
        }
    }

    #[test]
    fn gamma_squared_identity_and_sign_flip() {
        let (spec, params) = disc_fixture(9, false);
        let mut v = GanVariant::new(GanFamily::WganGp);
        v.input_mode = InputMode::SquaredResidual;
        let disc = DiscNet { spec: &spec, params: &params, sn: None };
        let rs = [0.0, 1.7, -1.7, 0.4];
        let (g, gt) = gamma_squared(&v, &rs, disc).unwrap();
        assert_eq!(g[0], 0.0);
        // sign flips with r when f depends only on r^2
        assert_eq!(g[1].to_bits(), (-g[2]).to_bits());
        // bitwise: gamma = -gamma_tilde * r
        for i in 0..rs.len() {
            assert_eq!(g[i].to_bits(), (-gt[i] * rs[i]).to_bits());
        }
    }

    #[test]
    fn gamma_squared_hand_example() {
        // ipm, N=1, r=2, ds f=0.5 -> gamma = -2, gamma_tilde = 1
        let n = 1.0;
        let (r, dsf, rp) = (2.0, 0.5, -1.0);
        let base = (2.0 / n) * rp * dsf;
        assert_eq!(r * base, -2.0);
        assert_eq!(-base, 1.0);
        assert_eq!(-(-base) * r, -2.0);
    }

    #[test]
    fn constrained_gamma_examples() {
        // zero discrepancy -> zero weight
        let g = constrained_gamma(GanFamily::SaMask, &[0.0], &[3.0]).unwrap();
        assert_eq!(g[0], 0.0);
        // sa with m(lambda) = 2: softplus(l) = 2 at l = ln(e^2 - 1)
        let l = (2.0f64.exp() - 1.0).ln();
        let g = constrained_gamma(GanFamily::SaMask, &[3.0], &[l]).unwrap();
        assert!((g[0] + 6.0).abs() < 1e-12);
        // |gamma| never decreases in lambda (softplus is increasing)
        let lows = constrained_gamma(GanFamily::SaMask, &[1.5], &[0.0]).unwrap();
        let highs = constrained_gamma(GanFamily::SaMask, &[1.5], &[2.0]).unwrap();
        assert!(highs[0].abs() > lows[0].abs());
        // la form
        let g = constrained_gamma(GanFamily::LaLinear, &[3.0, 1.0], &[2.0, 0.0]).unwrap();
        assert!((g[0] + 3.0).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
        assert!(constrained_gamma(GanFamily::Gan, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn gradient_penalty_matches_finite_differences() {
        let (spec, params) = disc_fixture(17, false);
        let disc = DiscNet { spec: &spec, params: &params, sn: None };
        let rs = [0.9, -0.4, 2.2];
        let us = [0.3, 0.8, 0.1];
        let got = gradient_penalty(disc, &rs, &us);
        let mut want = 0.0;
        for (&r, &u) in rs.iter().zip(&us) {
            let x = (1.0 - u) * r;
            let h = 1e-6;
            let df = (netmod::forward(&spec, &params, None, &[x + h])
                - netmod::forward(&spec, &params, None, &[x - h]))
                / (2.0 * h);
            want += (df.abs() - 1.0) * (df.abs() - 1.0);
        }
        want /= rs.len() as f64;
        assert!((got - want).abs() < 1e-6);
    }

    #[test]
    fn gradient_penalty_unit_slope_witness() {
        // unit slope -> 0; slope 2 -> 1; constant witness -> 1
        let pen = |slope: f64| (slope.abs() - 1.0) * (slope.abs() - 1.0);
        assert_eq!(pen(1.0), 0.0);
        assert_eq!(pen(2.0), 1.0);
        assert_eq!(pen(0.0), 1.0);
    }

    #[test]
    fn masked_variant_forces_squared_input() {
        let mut v = GanVariant::new(GanFamily::SaMask);
        assert!(v.validate().is_ok());
        v.input_mode = InputMode::Residual;
        assert!(v.validate().is_err());
    }
}
