//! Benchmark PDE problems with hard-constraint ansatz pairs, residual
//! operators, collocation grids and validation metrics.
//!
//! Every problem uses the parameterization `u = G + H*u_tilde` where the
//! lift `G` matches the boundary/initial data and the mask `H` vanishes on
//! the constrained manifold, so the constraints hold for all parameters.

use crate::diffcore::{Bindings, Executor, Jet, NodeId, Program, ProgramBuilder};
use crate::netmod::{self, NetworkSpec, ParamVector, SnState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, thiserror::Error)]
pub enum PdeError {
    #[error("unknown problem name: {0}")]
    UnknownProblem(String),
    #[error("no reference solution available for {0:?}")]
    NoReference(ProblemName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    Laplace1,
    Laplace2,
    Poisson,
    ReactionDiffusion,
    Burgers,
    KleinGordon,
}

impl std::str::FromStr for ProblemName {
    type Err = PdeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "laplace1" => ProblemName::Laplace1,
            "laplace2" => ProblemName::Laplace2,
            "poisson" => ProblemName::Poisson,
            "reaction_diffusion" => ProblemName::ReactionDiffusion,
            "burgers" => ProblemName::Burgers,
            "klein_gordon" => ProblemName::KleinGordon,
            other => return Err(PdeError::UnknownProblem(other.to_string())),
        })
    }
}

impl ProblemName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemName::Laplace1 => "laplace1",
            ProblemName::Laplace2 => "laplace2",
            ProblemName::Poisson => "poisson",
            ProblemName::ReactionDiffusion => "reaction_diffusion",
            ProblemName::Burgers => "burgers",
            ProblemName::KleinGordon => "klein_gordon",
        }
    }
}

/// Burgers viscosity.
pub const BURGERS_NU: f64 = 0.001;

#[derive(Clone, Debug)]
pub struct PdeProblem {
    pub name: ProblemName,
    /// Axis-aligned box: per-coordinate (lo, hi).
    pub domain: [(f64, f64); 2],
}

/// A point sampled on the constrained manifold together with the data the
/// hard-constrained ansatz must reproduce there.
#[derive(Clone, Copy, Debug)]
pub struct ConstraintSample {
    pub x: [f64; 2],
    /// Prescribed solution value at the point.
    pub value: f64,
    /// Prescribed time derivative, when the constraint pins it too.
    pub d_dt: Option<f64>,
}

pub fn make_problem(name: ProblemName) -> PdeProblem {
    let domain = match name {
        ProblemName::Laplace1 | ProblemName::Laplace2 | ProblemName::Poisson => {
            [(0.0, 1.0), (0.0, 1.0)]
        }
        ProblemName::ReactionDiffusion => [(0.0, 1.0), (0.0, 5.0)],
        ProblemName::Burgers => [(-5.0, 5.0), (0.0, 2.5)],
        ProblemName::KleinGordon => [(0.0, 1.0), (0.0, 2.0)],
    };
    PdeProblem { name, domain }
}

#[inline]
fn jx(x: &[f64]) -> Jet {
    Jet::variable(x[0], 0)
}

#[inline]
fn jy(x: &[f64]) -> Jet {
    Jet::variable(x[1], 1)
}

/// sech via jets.
fn jet_sech(a: Jet) -> Jet {
    Jet::recip(Jet::cosh(a))
}

impl PdeProblem {
    /// Lift G: satisfies the boundary/initial data.
    pub fn lift(&self, x: &[f64]) -> Jet {
        match self.name {
            ProblemName::Laplace1 => {
                // G = y * tanh(pi) * sin(pi x); matches all four edges.
                let sx = Jet::sin(Jet::scale(jx(x), PI));
                Jet::scale(Jet::mul(jy(x), sx), PI.tanh())
            }
            ProblemName::Laplace2 => {
                // G = (1-y) sin(pi x) + y * g2(x),
                // g2(x) = sin(pi x)/cosh(pi) + tanh(pi)/2 * cos(pi x + pi/2)
                let y = jy(x);
                let one_minus_y = Jet::sub(Jet::constant(1.0), y);
                let sx = Jet::sin(Jet::scale(jx(x), PI));
                let cxs = Jet::cos(Jet::add(Jet::scale(jx(x), PI), Jet::constant(PI / 2.0)));
                let g2 = Jet::add(
                    Jet::scale(sx, 1.0 / PI.cosh()),
                    Jet::scale(cxs, 0.5 * PI.tanh()),
                );
                Jet::add(Jet::mul(one_minus_y, sx), Jet::mul(y, g2))
            }
            ProblemName::Poisson | ProblemName::ReactionDiffusion => Jet::constant(0.0),
            ProblemName::Burgers => jet_sech(jx(x)),
            ProblemName::KleinGordon => {
                Jet::scale(Jet::sin(Jet::scale(jx(x), PI)), -0.2)
            }
        }
    }

    /// Mask H: vanishes on the constrained manifold.
    pub fn mask(&self, x: &[f64]) -> Jet {
        match self.name {
            ProblemName::Laplace1 | ProblemName::Laplace2 | ProblemName::Poisson => {
                // x(1-x) y(1-y)
                let xx = jx(x);
                let yy = jy(x);
                let fx = Jet::mul(xx, Jet::sub(Jet::constant(1.0), xx));
                let fy = Jet::mul(yy, Jet::sub(Jet::constant(1.0), yy));
                Jet::mul(fx, fy)
            }
            ProblemName::ReactionDiffusion => {
                // x(1-x) * t
                let xx = jx(x);
                let fx = Jet::mul(xx, Jet::sub(Jet::constant(1.0), xx));
                Jet::mul(fx, jy(x))
            }
            ProblemName::Burgers => {
                // t (25 - x^2) / 25
                let xx = jx(x);
                let q = Jet::sub(Jet::constant(25.0), Jet::mul(xx, xx));
                Jet::scale(Jet::mul(jy(x), q), 1.0 / 25.0)
            }
            ProblemName::KleinGordon => {
                // x(1-x) t^2 pins both u(x,0) and u_t(x,0)
                let xx = jx(x);
                let fx = Jet::mul(xx, Jet::sub(Jet::constant(1.0), xx));
                let t = jy(x);
                Jet::mul(fx, Jet::mul(t, t))
            }
        }
    }

    /// Source term of the residual operator, when nonzero.
    pub fn source(&self, x: &[f64]) -> f64 {
        match self.name {
            ProblemName::Laplace1 | ProblemName::Laplace2 | ProblemName::Burgers => 0.0,
            ProblemName::Poisson => {
                let (xv, yv) = (x[0], x[1]);
                2.0 * xv * (yv - 1.0) * (yv - 2.0 * xv + xv * yv + 2.0) * (xv - yv).exp()
            }
            ProblemName::ReactionDiffusion => {
                let (xv, tv) = (x[0], x[1]);
                0.4 * tv - (2.0 * tv - 0.2) * xv * (1.0 - xv)
            }
            ProblemName::KleinGordon => 0.8 * (PI * x[0]).sin() * (PI * x[1]).cos(),
        }
    }

    /// Closed-form solution value; absent for Burgers.
    pub fn exact(&self, x: &[f64]) -> Option<f64> {
        self.exact_jet(x).map(|j| j.v)
    }

    /// Closed-form solution as a jet, usable as an analytic field.
    pub fn exact_jet(&self, x: &[f64]) -> Option<Jet> {
        match self.name {
            ProblemName::Laplace1 => {
                let sx = Jet::sin(Jet::scale(jx(x), PI));
                let py = Jet::scale(jy(x), PI);
                let e = Jet::sub(Jet::exp(py), Jet::exp(Jet::neg(py)));
                Some(Jet::scale(Jet::mul(sx, e), 0.5 / PI.cosh()))
            }
            ProblemName::Laplace2 => {
                let px = Jet::scale(jx(x), PI);
                let sx = Jet::sin(px);
                let y = jy(x);
                let em = Jet::exp(Jet::scale(Jet::sub(y, Jet::constant(1.0)), PI));
                let ep = Jet::exp(Jet::scale(Jet::sub(Jet::constant(1.0), y), PI));
                let first = Jet::scale(Jet::mul(sx, Jet::add(em, ep)), 0.5 / PI.cosh());
                let cxs = Jet::cos(Jet::add(px, Jet::constant(PI / 2.0)));
                let py = Jet::scale(y, PI);
                let e2 = Jet::sub(Jet::exp(py), Jet::exp(Jet::neg(py)));
                let second = Jet::scale(Jet::mul(cxs, e2), 0.25 / PI.cosh());
                Some(Jet::add(first, second))
            }
            ProblemName::Poisson => {
                let xx = jx(x);
                let yy = jy(x);
                let fx = Jet::mul(xx, Jet::sub(Jet::constant(1.0), xx));
                let fy = Jet::mul(yy, Jet::sub(Jet::constant(1.0), yy));
                let e = Jet::exp(Jet::sub(xx, yy));
                Some(Jet::mul(Jet::mul(fx, fy), e))
            }
            ProblemName::ReactionDiffusion => {
                let xx = jx(x);
                let fx = Jet::mul(xx, Jet::sub(Jet::constant(1.0), xx));
                Some(Jet::mul(Jet::scale(jy(x), 0.2), fx))
            }
            ProblemName::KleinGordon => {
                let sx = Jet::sin(Jet::scale(jx(x), PI));
                let ct = Jet::cos(Jet::scale(jy(x), PI));
                Some(Jet::scale(Jet::mul(sx, ct), -0.2))
            }
            ProblemName::Burgers => None,
        }
    }

    /// Applies the residual operator to a solution jet at `x`.
    pub fn residual_of_jet(&self, u: Jet, x: &[f64]) -> f64 {
        match self.name {
            ProblemName::Laplace1 | ProblemName::Laplace2 => u.d2[0] + u.d2[1],
            ProblemName::Poisson => u.d2[0] + u.d2[1] - self.source(x),
            ProblemName::ReactionDiffusion => {
                u.d1[1] - u.d2[0] - 10.0 * u.v - self.source(x)
            }
            ProblemName::Burgers => u.d1[1] + u.v * u.d1[0] - BURGERS_NU * u.d2[0],
            ProblemName::KleinGordon => u.d2[1] - u.d2[0] - 4.0 * u.v - self.source(x),
        }
    }

    /// Uniform samples on the constrained manifolds (boundary edges and
    /// initial lines), with the data the ansatz must reproduce.
    pub fn constraint_samples(&self, n: usize, seed: u64) -> Vec<ConstraintSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let [(x0, x1), (y0, y1)] = self.domain;
        for _ in 0..n {
            let s: f64 = rng.gen();
            let sample = match self.name {
                ProblemName::Laplace1 | ProblemName::Laplace2 | ProblemName::Poisson => {
                    let edge = rng.gen_range(0..4u8);
                    let (x, y) = match edge {
                        0 => (x0 + s * (x1 - x0), y0),
                        1 => (x0 + s * (x1 - x0), y1),
                        2 => (x0, y0 + s * (y1 - y0)),
                        _ => (x1, y0 + s * (y1 - y0)),
                    };
                    let value = match self.name {
                        ProblemName::Laplace1 => {
                            if edge == 1 {
                                PI.tanh() * (PI * x).sin()
                            } else {
                                0.0
                            }
                        }
                        ProblemName::Laplace2 => match edge {
                            0 => (PI * x).sin(),
                            1 => {
                                (PI * x).sin() / PI.cosh()
                                    + 0.5 * PI.tanh() * (PI * x + PI / 2.0).cos()
                            }
                            _ => 0.0,
                        },
                        _ => 0.0,
                    };
                    ConstraintSample { x: [x, y], value, d_dt: None }
                }
                ProblemName::ReactionDiffusion => {
                    let edge = rng.gen_range(0..3u8);
                    let (x, t) = match edge {
                        0 => (x0 + s * (x1 - x0), y0), // initial line t=0
                        1 => (x0, y0 + s * (y1 - y0)),
                        _ => (x1, y0 + s * (y1 - y0)),
                    };
                    ConstraintSample { x: [x, t], value: 0.0, d_dt: None }
                }
                ProblemName::Burgers => {
                    let edge = rng.gen_range(0..3u8);
                    let (x, t, value) = match edge {
                        0 => {
                            let x = x0 + s * (x1 - x0);
                            (x, y0, 1.0 / x.cosh())
                        }
                        1 => (x0, y0 + s * (y1 - y0), 1.0 / 5.0f64.cosh()),
                        _ => (x1, y0 + s * (y1 - y0), 1.0 / 5.0f64.cosh()),
                    };
                    ConstraintSample { x: [x, t], value, d_dt: None }
                }
                ProblemName::KleinGordon => {
                    let edge = rng.gen_range(0..3u8);
                    match edge {
                        0 => {
                            let x = x0 + s * (x1 - x0);
                            ConstraintSample {
                                x: [x, y0],
                                value: -0.2 * (PI * x).sin(),
                                d_dt: Some(0.0),
                            }
                        }
                        1 => ConstraintSample { x: [x0, y0 + s * (y1 - y0)], value: 0.0, d_dt: None },
                        _ => ConstraintSample { x: [x1, y0 + s * (y1 - y0)], value: 0.0, d_dt: None },
                    }
                }
            };
            out.push(sample);
        }
        out
    }
}

/// Hard-constrained ansatz evaluated with jet propagation:
/// `u = G(x) + H(x) * u_tilde(x)` with all derivatives carried through.
pub fn ansatz_eval(
    problem: &PdeProblem,
    spec: &NetworkSpec,
    params: &ParamVector,
    sn: Option<&SnState>,
    x: &[f64],
) -> Jet {
    let raw = netmod::forward_jet(spec, params, sn, x).output;
    Jet::mul_add(raw, problem.mask(x), problem.lift(x))
}

/// Interior residual `R(x; theta)` of the hard-constrained network field.
pub fn residual(
    problem: &PdeProblem,
    spec: &NetworkSpec,
    params: &ParamVector,
    sn: Option<&SnState>,
    x: &[f64],
) -> f64 {
    problem.residual_of_jet(ansatz_eval(problem, spec, params, sn, x), x)
}

/// Residual of the closed-form solution (reference oracle).
pub fn residual_of_exact(problem: &PdeProblem, x: &[f64]) -> Option<f64> {
    problem.exact_jet(x).map(|u| problem.residual_of_jet(u, x))
}

/// Tensor collocation grid of n x n interior cell centers, optionally with
/// a seeded uniform jitter that keeps points strictly interior.
#[derive(Clone, Debug)]
pub struct CollocationGrid {
    pub points: Vec<[f64; 2]>,
    pub n: usize,
}

pub fn collocation(problem: &PdeProblem, n: usize, jitter_seed: Option<u64>) -> CollocationGrid {
    assert!(n >= 2, "collocation resolution must be at least 2");
    let [(x0, x1), (y0, y1)] = problem.domain;
    let hx = (x1 - x0) / n as f64;
    let hy = (y1 - y0) / n as f64;
    let mut rng = jitter_seed.map(ChaCha8Rng::seed_from_u64);
    let mut points = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (mut jx, mut jy) = (0.0, 0.0);
            if let Some(r) = rng.as_mut() {
                jx = (r.gen::<f64>() - 0.5) * 0.9 * hx;
                jy = (r.gen::<f64>() - 0.5) * 0.9 * hy;
            }
            points.push([
                x0 + (i as f64 + 0.5) * hx + jx,
                y0 + (j as f64 + 0.5) * hy + jy,
            ]);
        }
    }
    CollocationGrid { points, n }
}

/// Strictly interior m x m node lattice, offset roughly half a training
/// cell, disjoint from the `collocation` centers.
pub fn validation_grid(problem: &PdeProblem, m: usize) -> Vec<[f64; 2]> {
    let [(x0, x1), (y0, y1)] = problem.domain;
    let hx = (x1 - x0) / (m + 1) as f64;
    let hy = (y1 - y0) / (m + 1) as f64;
    let mut points = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            points.push([x0 + (i as f64 + 1.0) * hx, y0 + (j as f64 + 1.0) * hy]);
        }
    }
    points
}

/// Mean squared error of the network field against the exact solution on
/// the validation lattice.
pub fn validation_mse(
    problem: &PdeProblem,
    spec: &NetworkSpec,
    params: &ParamVector,
    sn: Option<&SnState>,
    m: usize,
) -> Result<f64, PdeError> {
    if problem.exact(&[0.5, 0.5]).is_none() {
        return Err(PdeError::NoReference(problem.name));
    }
    let pts = validation_grid(problem, m);
    Ok(mse_on_points(problem, spec, params, sn, &pts))
}

/// MSE of the field against the exact solution on arbitrary points.
pub fn mse_on_points(
    problem: &PdeProblem,
    spec: &NetworkSpec,
    params: &ParamVector,
    sn: Option<&SnState>,
    pts: &[[f64; 2]],
) -> f64 {
    let mut acc = 0.0;
    for p in pts {
        let u = ansatz_eval(problem, spec, params, sn, p).v;
        let e = problem.exact(p).unwrap_or(f64::NAN);
        let d = u - e;
        acc += d * d;
    }
    acc / pts.len() as f64
}

/// A residual recorded on a tape program: one program per (problem,
/// architecture), shared by all collocation points. Per-point jet constants
/// are the lift, the mask and the source value.
pub struct ResidualProgram {
    pub program: Program,
    g_slot: usize,
    h_slot: usize,
    src_slot: usize,
    pub residual_node: NodeId,
}

pub fn build_residual_program(problem: &PdeProblem, spec: &NetworkSpec) -> ResidualProgram {
    assert!(!spec.spectral_norm, "generator networks do not use spectral norm");
    let mut tb = ProgramBuilder::new();
    let inputs: Vec<NodeId> = (0..spec.input_dim).map(|k| tb.input(k)).collect();
    let net = netmod::build_network(&mut tb, spec, 0, &inputs);
    let (g_node, g_slot) = tb.const_slot();
    let (h_node, h_slot) = tb.const_slot();
    let (src_node, src_slot) = tb.const_slot();
    let u = tb.mul_add(net.output, h_node, g_node);
    let r = match problem.name {
        ProblemName::Laplace1 | ProblemName::Laplace2 => {
            let uxx = tb.extract_d2(u, 0);
            let uyy = tb.extract_d2(u, 1);
            tb.add(uxx, uyy)
        }
        ProblemName::Poisson => {
            let uxx = tb.extract_d2(u, 0);
            let uyy = tb.extract_d2(u, 1);
            let lap = tb.add(uxx, uyy);
            tb.sub(lap, src_node)
        }
        ProblemName::ReactionDiffusion => {
            let ut = tb.extract_d1(u, 1);
            let uxx = tb.extract_d2(u, 0);
            let ten = tb.constant(10.0);
            let tu = tb.mul(ten, u);
            let a = tb.sub(ut, uxx);
            let b = tb.sub(a, tu);
            tb.sub(b, src_node)
        }
        ProblemName::Burgers => {
            let ut = tb.extract_d1(u, 1);
            let ux = tb.extract_d1(u, 0);
            let uux = tb.mul(u, ux);
            let uxx = tb.extract_d2(u, 0);
            let nu = tb.constant(BURGERS_NU);
            let nu_uxx = tb.mul(nu, uxx);
            let a = tb.add(ut, uux);
            tb.sub(a, nu_uxx)
        }
        ProblemName::KleinGordon => {
            let utt = tb.extract_d2(u, 1);
            let uxx = tb.extract_d2(u, 0);
            let four = tb.constant(4.0);
            let fu = tb.mul(four, u);
            let a = tb.sub(utt, uxx);
            let b = tb.sub(a, fu);
            tb.sub(b, src_node)
        }
    };
    let program = tb.finish(r);
    ResidualProgram { program, g_slot, h_slot, src_slot, residual_node: r }
}

impl ResidualProgram {
    /// Fills the per-point constant table.
    pub fn bind_consts(&self, problem: &PdeProblem, x: &[f64], consts: &mut [Jet]) {
        consts[self.g_slot] = problem.lift(x);
        consts[self.h_slot] = problem.mask(x);
        consts[self.src_slot] = Jet::constant(problem.source(x));
    }

    pub fn n_consts(&self) -> usize {
        self.program.n_consts()
    }
}

/// Evaluates the recorded residual at one point (forward only).
pub fn residual_via_program(
    rp: &ResidualProgram,
    problem: &PdeProblem,
    params: &ParamVector,
    x: &[f64],
    consts: &mut Vec<Jet>,
    exec: &mut Executor,
) -> f64 {
    consts.clear();
    consts.resize(rp.n_consts(), Jet::ZERO);
    rp.bind_consts(problem, x, consts);
    exec.forward(
        &rp.program,
        Bindings { params: &params.values, inputs: x, consts },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_params;

    fn all_problems() -> Vec<PdeProblem> {
        [
            ProblemName::Laplace1,
            ProblemName::Laplace2,
            ProblemName::Poisson,
            ProblemName::ReactionDiffusion,
            ProblemName::Burgers,
            ProblemName::KleinGordon,
        ]
        .into_iter()
        .map(make_problem)
        .collect()
    }

    #[test]
    fn unknown_problem_name_is_an_error() {
        assert!("helmholtz".parse::<ProblemName>().is_err());
    }

    #[test]
    fn poisson_exact_at_center() {
        let p = make_problem(ProblemName::Poisson);
        let v = p.exact(&[0.5, 0.5]).unwrap();
        assert!((v - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn reaction_diffusion_exact_vanishes_at_x0() {
        let p = make_problem(ProblemName::ReactionDiffusion);
        for t in [0.0, 1.0, 3.3, 5.0] {
            assert_eq!(p.exact(&[0.0, t]).unwrap(), 0.0);
        }
    }

    #[test]
    fn klein_gordon_exact_matches_initial_condition() {
        let p = make_problem(ProblemName::KleinGordon);
        for x in [0.1, 0.5, 0.9] {
            let u = p.exact(&[x, 0.0]).unwrap();
            assert!((u + 0.2 * (PI * x).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn mask_vanishes_on_constrained_points() {
        for p in all_problems() {
            for s in p.constraint_samples(200, 9) {
                let h = p.mask(&s.x);
                assert!(
                    h.v.abs() < 1e-14,
                    "{:?}: |H| = {} at {:?}",
                    p.name,
                    h.v.abs(),
                    s.x
                );
            }
        }
    }

    #[test]
    fn ansatz_reproduces_boundary_data() {
        for p in all_problems() {
            let mut spec = NetworkSpec::new(2, vec![8, 8]);
            spec.residual_links = true;
            for draw in 0..5u64 {
                let params = netmod::init(&spec, 100 + draw).unwrap();
                for s in p.constraint_samples(200, draw) {
                    let u = ansatz_eval(&p, &spec, &params, None, &s.x);
                    assert!(
                        (u.v - s.value).abs() < 1e-12,
                        "{:?}: |u - b| = {:e} at {:?}",
                        p.name,
                        (u.v - s.value).abs(),
                        s.x
                    );
                    if let Some(dt) = s.d_dt {
                        assert!(
                            (u.d1[1] - dt).abs() < 1e-12,
                            "{:?}: |u_t| = {:e} at {:?}",
                            p.name,
                            (u.d1[1] - dt).abs(),
                            s.x
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn exact_solutions_annihilate_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for p in all_problems() {
            if p.exact_jet(&[0.5, 0.5]).is_none() {
                continue;
            }
            let [(x0, x1), (y0, y1)] = p.domain;
            for _ in 0..100 {
                let x = [
                    x0 + rng.gen::<f64>() * (x1 - x0),
                    y0 + rng.gen::<f64>() * (y1 - y0),
                ];
                let r = residual_of_exact(&p, &x).unwrap();
                assert!(r.abs() < 1e-8, "{:?}: |R(exact)| = {:e} at {:?}", p.name, r, x);
            }
        }
    }

    #[test]
    fn zero_network_residual_is_lift_residual() {
        let p = make_problem(ProblemName::Laplace1);
        let spec = NetworkSpec::new(2, vec![4]);
        let params = ParamVector {
            values: vec![0.0; spec.param_count()],
            layout: spec.layout(),
        };
        let x = [0.3, 0.6];
        let r = residual(&p, &spec, &params, None, &x);
        let g = p.lift(&x);
        let want = g.d2[0] + g.d2[1];
        assert!((r - want).abs() < 1e-13);
        assert!(r.is_finite());
    }

    #[test]
    fn collocation_cell_centers() {
        let p = make_problem(ProblemName::Poisson);
        let g = collocation(&p, 2, None);
        let mut pts = g.points.clone();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            pts,
            vec![[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]]
        );
        assert_eq!(g.points.len(), 4);
    }

    #[test]
    fn collocation_strictly_interior_with_jitter() {
        for p in all_problems() {
            let g = collocation(&p, 9, Some(5));
            let [(x0, x1), (y0, y1)] = p.domain;
            assert_eq!(g.points.len(), 81);
            for pt in &g.points {
                assert!(pt[0] > x0 && pt[0] < x1);
                assert!(pt[1] > y0 && pt[1] < y1);
            }
        }
    }

    #[test]
    fn validation_grid_disjoint_from_training() {
        let p = make_problem(ProblemName::Poisson);
        let train = collocation(&p, 16, None);
        let val = validation_grid(&p, 16);
        assert_eq!(val.len(), 256);
        for v in &val {
            assert!(v[0] > 0.0 && v[0] < 1.0 && v[1] > 0.0 && v[1] < 1.0);
            for t in &train.points {
                assert!((v[0] - t[0]).abs() > 1e-9 || (v[1] - t[1]).abs() > 1e-9);
            }
        }
    }

    #[test]
    fn validation_mse_zero_for_exact_and_unsupported_for_burgers() {
        // no network can encode exact solutions here; probe the MSE plumbing
        // with the zero network against itself via the brute-force oracle.
        let p = make_problem(ProblemName::Poisson);
        let spec = NetworkSpec::new(2, vec![4]);
        let params = ParamVector {
            values: vec![0.0; spec.param_count()],
            layout: spec.layout(),
        };
        let m = 7;
        let got = validation_mse(&p, &spec, &params, None, m).unwrap();
        // naive double loop oracle: u = G = 0
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = [
                    (i as f64 + 1.0) / (m as f64 + 1.0),
                    (j as f64 + 1.0) / (m as f64 + 1.0),
                ];
                let e = p.exact(&x).unwrap();
                acc += e * e;
            }
        }
        let want = acc / (m * m) as f64;
        assert!((got - want).abs() < 1e-15);
        assert!(got >= 0.0);

        let b = make_problem(ProblemName::Burgers);
        assert!(validation_mse(&b, &spec, &params, None, 4).is_err());
    }

    #[test]
    fn residual_program_matches_jet_path() {
        for p in all_problems() {
            let mut spec = NetworkSpec::new(2, vec![6, 6]);
            spec.residual_links = true;
            let params = netmod::init(&spec, 3).unwrap();
            let rp = build_residual_program(&p, &spec);
            let mut exec = Executor::new();
            let mut consts = Vec::new();
            let [(x0, x1), (y0, y1)] = p.domain;
            for (a, b) in [(0.21, 0.47), (0.83, 0.12), (0.5, 0.99)] {
                let x = [x0 + a * (x1 - x0), y0 + b * (y1 - y0)];
                let via_prog = residual_via_program(&rp, &p, &params, &x, &mut consts, &mut exec);
                let via_jet = residual(&p, &spec, &params, None, &x);
                assert!(
                    (via_prog - via_jet).abs() <= 1e-12 * via_jet.abs().max(1.0),
                    "{:?}: {via_prog} vs {via_jet}",
                    p.name
                );
            }
        }
    }

    #[test]
    fn residual_program_gradient_matches_finite_differences() {
        let p = make_problem(ProblemName::Burgers);
        let spec = NetworkSpec::new(2, vec![5]);
        let mut params = netmod::init(&spec, 8).unwrap();
        let rp = build_residual_program(&p, &spec);
        let mut exec = Executor::new();
        let mut consts = vec![Jet::ZERO; rp.n_consts()];
        let x = [1.2, 0.7];
        rp.bind_consts(&p, &x, &mut consts);
        let (_, grad) = grad_params(
            &rp.program,
            Bindings { params: &params.values, inputs: &x, consts: &consts },
            &mut exec,
        );
        let h = 1e-6;
        for k in [0usize, 3, 7, params.values.len() - 1] {
            let orig = params.values[k];
            params.values[k] = orig + h;
            let rp1 = residual(&p, &spec, &params, None, &x);
            params.values[k] = orig - h;
            let rm1 = residual(&p, &spec, &params, None, &x);
            params.values[k] = orig;
            let fd = (rp1 - rm1) / (2.0 * h);
            assert!(
                (grad[k] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                "k={k}: grad {} vs fd {}",
                grad[k],
                fd
            );
        }
    }
}
