//! Differentiation engine: forward-mode jets for input derivatives, nested
//! inside reverse-mode parameter gradients over a recorded program.

mod jet;
mod tape;

pub use jet::{sigmoid, softplus, Jet};
pub use tape::{
    grad_params, jacobian_params, Bindings, DiffError, Executor, NodeId, Op, Program,
    ProgramBuilder, LOG_CLAMP,
};

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn constant_jet_has_zero_derivatives() {
        let c = Jet::constant(3.5);
        assert_eq!(c.d1, [0.0, 0.0]);
        assert_eq!(c.d2, [0.0, 0.0]);
    }

    #[test]
    fn tanh_jet_at_zero() {
        // tanh(0) = 0, tanh'(0) = 1, tanh''(0) = 0
        let j = Jet::tanh(Jet::variable(0.0, 0));
        assert_eq!(j.v, 0.0);
        assert_eq!(j.d1[0], 1.0);
        assert_eq!(j.d2[0], 0.0);
    }

    #[test]
    fn polynomial_composition_matches_symbolic() {
        // u(x) = (2x + 1)^3: u' = 6(2x+1)^2, u'' = 24(2x+1)
        let x = 0.7;
        let j = Jet::powi(
            Jet::add(Jet::scale(Jet::variable(x, 0), 2.0), Jet::constant(1.0)),
            3,
        );
        let b = 2.0 * x + 1.0;
        assert!((j.v - b.powi(3)).abs() < 1e-14);
        assert!((j.d1[0] - 6.0 * b * b).abs() < 1e-12);
        assert!((j.d2[0] - 24.0 * b).abs() < 1e-12);
    }

    #[test]
    fn primitives_match_finite_differences() {
        type Pair = (fn(Jet) -> Jet, fn(f64) -> f64);
        let cases: Vec<(&str, Pair)> = vec![
            ("tanh", (Jet::tanh, |x| x.tanh())),
            ("exp", (Jet::exp, |x| x.exp())),
            ("sin", (Jet::sin, |x| x.sin())),
            ("cos", (Jet::cos, |x| x.cos())),
            ("cosh", (Jet::cosh, |x| x.cosh())),
            ("sigmoid", (Jet::sigmoid, sigmoid)),
            ("recip", (Jet::recip, |x| 1.0 / x)),
            ("ln", (Jet::ln, |x| x.ln())),
        ];
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for (name, (jf, sf)) in cases {
            for _ in 0..100 {
                // keep arguments away from singularities of recip/ln
                let x = 0.2 + 2.3 * next();
                let j = jf(Jet::variable(x, 0));
                let h = 1e-6 * x.abs().max(1.0);
                let h2 = 1e-4 * x.abs().max(1.0);
                let fd1 = fd_central(sf, x, h);
                let fd2 = (sf(x + h2) - 2.0 * sf(x) + sf(x - h2)) / (h2 * h2);
                let r1 = (j.d1[0] - fd1).abs() / fd1.abs().max(1e-3);
                let r2 = (j.d2[0] - fd2).abs() / fd2.abs().max(1e-2);
                assert!(r1 < 1e-7, "{name}: first deriv rel err {r1} at x={x}");
                assert!(r2 < 1e-4, "{name}: second deriv rel err {r2} at x={x}");
            }
        }
    }

    #[test]
    fn grad_of_quadratic() {
        // loss = theta^2 at theta = 3 -> grad = [6]
        let mut tb = ProgramBuilder::new();
        let t = tb.param(0);
        let loss = tb.mul(t, t);
        let prog = tb.finish(loss);
        let mut exec = Executor::new();
        let (v, g) = grad_params(
            &prog,
            Bindings { params: &[3.0], inputs: &[], consts: &[] },
            &mut exec,
        );
        assert_eq!(v, 9.0);
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn grad_of_bilinear() {
        // loss = t0*t1 at (2,5) -> grad = [5,2]
        let mut tb = ProgramBuilder::new();
        let a = tb.param(0);
        let b = tb.param(1);
        let loss = tb.mul(a, b);
        let prog = tb.finish(loss);
        let mut exec = Executor::new();
        let (_, g) = grad_params(
            &prog,
            Bindings { params: &[2.0, 5.0], inputs: &[], consts: &[] },
            &mut exec,
        );
        assert_eq!(g, vec![5.0, 2.0]);
    }

    #[test]
    fn unused_parameter_gets_exact_zero_gradient() {
        let mut tb = ProgramBuilder::new();
        let a = tb.param(0);
        tb.param(2); // referenced but not used in the output expression
        let loss = tb.mul(a, a);
        let prog = tb.finish(loss);
        let mut exec = Executor::new();
        let (_, g) = grad_params(
            &prog,
            Bindings { params: &[1.5, 7.0, -2.0], inputs: &[], consts: &[] },
            &mut exec,
        );
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn grad_linearity_of_sums() {
        // grad(f + g) == grad(f) + grad(g) to within 1e-12 relative
        let build = |which: u8| {
            let mut tb = ProgramBuilder::new();
            let a = tb.param(0);
            let b = tb.param(1);
            let f = {
                let t = tb.tanh(a);
                tb.mul(t, b)
            };
            let g = {
                let e = tb.exp(b);
                tb.mul(a, e)
            };
            let out = match which {
                0 => f,
                1 => g,
                _ => tb.add(f, g),
            };
            tb.finish(out)
        };
        let params = [0.4, -0.7];
        let bind = Bindings { params: &params, inputs: &[], consts: &[] };
        let mut exec = Executor::new();
        let (_, gf) = grad_params(&build(0), bind, &mut exec);
        let (_, gg) = grad_params(&build(1), bind, &mut exec);
        let (_, gs) = grad_params(&build(2), bind, &mut exec);
        for i in 0..2 {
            let want = gf[i] + gg[i];
            assert!((gs[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn reverse_through_second_input_derivative() {
        // loss = d2/dx2 [ tanh(w * x) ] = w^2 * tanh''(w x);
        // check d(loss)/dw against central differences.
        let build = || {
            let mut tb = ProgramBuilder::new();
            let w = tb.param(0);
            let x = tb.input(0);
            let wx = tb.mul(w, x);
            let t = tb.tanh(wx);
            let uxx = tb.extract_d2(t, 0);
            tb.finish(uxx)
        };
        let prog = build();
        let x = [0.37, 0.0];
        let mut exec = Executor::new();
        let eval = |w: f64, exec: &mut Executor| {
            exec.forward(&prog, Bindings { params: &[w], inputs: &x, consts: &[] })
        };
        let w0 = 1.3;
        let (_, g) = grad_params(
            &prog,
            Bindings { params: &[w0], inputs: &x, consts: &[] },
            &mut exec,
        );
        let h = 1e-6;
        let fd = (eval(w0 + h, &mut exec) - eval(w0 - h, &mut exec)) / (2.0 * h);
        assert!(
            (g[0] - fd).abs() < 1e-7 * fd.abs().max(1.0),
            "grad {} vs fd {}",
            g[0],
            fd
        );
    }

    #[test]
    fn forward_replay_is_bitwise_deterministic() {
        let mut tb = ProgramBuilder::new();
        let a = tb.param(0);
        let x = tb.input(0);
        let m = tb.mul(a, x);
        let t = tb.tanh(m);
        let e = tb.exp(t);
        let prog = tb.finish(e);
        let bind = Bindings { params: &[0.9], inputs: &[1.7, 0.0], consts: &[] };
        let mut exec = Executor::new();
        let v1 = exec.forward(&prog, bind);
        let v2 = exec.forward(&prog, bind);
        assert_eq!(v1.to_bits(), v2.to_bits());
    }

    #[test]
    fn jacobian_rejects_inconsistent_slot_maps() {
        let mut tb1 = ProgramBuilder::new();
        let a = tb1.param(0);
        let p1 = tb1.finish(a);
        let mut tb2 = ProgramBuilder::new();
        let b = tb2.param(1);
        let p2 = tb2.finish(b);
        let mut exec = Executor::new();
        let r = jacobian_params(
            &[
                (&p1, Bindings { params: &[1.0], inputs: &[], consts: &[] }),
                (&p2, Bindings { params: &[1.0, 2.0], inputs: &[], consts: &[] }),
            ],
            &mut exec,
        );
        assert!(matches!(r, Err(DiffError::InconsistentSlots { .. })));
    }

    #[test]
    fn jacobian_of_linear_model_is_feature_matrix() {
        // r_i = theta . (1, x_i) at points {0, 1} -> J = [[1,0],[1,1]]
        let build = |x: f64| {
            let mut tb = ProgramBuilder::new();
            let t0 = tb.param(0);
            let t1 = tb.param(1);
            let c = tb.constant(x);
            let m = tb.mul_add(t1, c, t0);
            tb.finish(m)
        };
        let p0 = build(0.0);
        let p1 = build(1.0);
        let params = [0.3, -0.4];
        let bind = Bindings { params: &params, inputs: &[], consts: &[] };
        let mut exec = Executor::new();
        let j = jacobian_params(&[(&p0, bind), (&p1, bind)], &mut exec).unwrap();
        assert_eq!(j, vec![vec![1.0, 0.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn log_clamp_counts_saturation_and_flattens_gradient() {
        let mut tb = ProgramBuilder::new();
        let a = tb.param(0);
        let l = tb.log(a);
        let prog = tb.finish(l);
        let mut exec = Executor::new();
        let bind = Bindings { params: &[0.0], inputs: &[], consts: &[] };
        let v = exec.forward(&prog, bind);
        assert_eq!(v, LOG_CLAMP.ln());
        assert_eq!(exec.saturations, 1);
        exec.backward(&prog, bind, 1.0);
        let mut g = vec![0.0];
        exec.grad_into(&prog, &mut g, 1.0);
        assert_eq!(g[0], 0.0);
    }
}
