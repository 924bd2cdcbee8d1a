//! Forward-mode jets carrying a value, first partials and pure second
//! partials with respect to up to two input coordinates.

/// Truncated Taylor data of a scalar quantity: value, first derivatives
/// `d1[k] = du/dx_k` and pure second derivatives `d2[k] = d2u/dx_k^2`.
///
/// Mixed second partials are not carried; none of the supported residual
/// operators need them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d1: [f64; 2],
    pub d2: [f64; 2],
}

#[allow(clippy::should_implement_trait)] // operator impls below delegate here
impl Jet {
    pub const ZERO: Jet = Jet { v: 0.0, d1: [0.0; 2], d2: [0.0; 2] };

    /// A constant: all derivative slots zero.
    #[inline]
    pub fn constant(v: f64) -> Jet {
        Jet { v, d1: [0.0; 2], d2: [0.0; 2] }
    }

    /// An input variable seeded in coordinate slot `k`.
    #[inline]
    pub fn variable(v: f64, k: usize) -> Jet {
        let mut d1 = [0.0; 2];
        d1[k] = 1.0;
        Jet { v, d1, d2: [0.0; 2] }
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.v.is_finite()
            && self.d1.iter().all(|x| x.is_finite())
            && self.d2.iter().all(|x| x.is_finite())
    }

    #[inline]
    pub fn add(a: Jet, b: Jet) -> Jet {
        Jet {
            v: a.v + b.v,
            d1: [a.d1[0] + b.d1[0], a.d1[1] + b.d1[1]],
            d2: [a.d2[0] + b.d2[0], a.d2[1] + b.d2[1]],
        }
    }

    #[inline]
    pub fn sub(a: Jet, b: Jet) -> Jet {
        Jet {
            v: a.v - b.v,
            d1: [a.d1[0] - b.d1[0], a.d1[1] - b.d1[1]],
            d2: [a.d2[0] - b.d2[0], a.d2[1] - b.d2[1]],
        }
    }

    #[inline]
    pub fn neg(a: Jet) -> Jet {
        Jet {
            v: -a.v,
            d1: [-a.d1[0], -a.d1[1]],
            d2: [-a.d2[0], -a.d2[1]],
        }
    }

    /// Product rule: (fg)'' = f''g + 2f'g' + fg''.
    #[inline]
    pub fn mul(a: Jet, b: Jet) -> Jet {
        Jet {
            v: a.v * b.v,
            d1: [
                a.d1[0] * b.v + a.v * b.d1[0],
                a.d1[1] * b.v + a.v * b.d1[1],
            ],
            d2: [
                a.d2[0] * b.v + 2.0 * a.d1[0] * b.d1[0] + a.v * b.d2[0],
                a.d2[1] * b.v + 2.0 * a.d1[1] * b.d1[1] + a.v * b.d2[1],
            ],
        }
    }

    /// Fused `a*b + c`.
    #[inline]
    pub fn mul_add(a: Jet, b: Jet, c: Jet) -> Jet {
        Jet {
            v: a.v * b.v + c.v,
            d1: [
                a.d1[0] * b.v + a.v * b.d1[0] + c.d1[0],
                a.d1[1] * b.v + a.v * b.d1[1] + c.d1[1],
            ],
            d2: [
                a.d2[0] * b.v + 2.0 * a.d1[0] * b.d1[0] + a.v * b.d2[0] + c.d2[0],
                a.d2[1] * b.v + 2.0 * a.d1[1] * b.d1[1] + a.v * b.d2[1] + c.d2[1],
            ],
        }
    }

    /// Scale by a plain constant.
    #[inline]
    pub fn scale(a: Jet, c: f64) -> Jet {
        Jet {
            v: a.v * c,
            d1: [a.d1[0] * c, a.d1[1] * c],
            d2: [a.d2[0] * c, a.d2[1] * c],
        }
    }

    /// Chain rule through a scalar function given its value and first two
    /// derivatives at `a.v`.
    #[inline]
    pub fn compose(a: Jet, g0: f64, g1: f64, g2: f64) -> Jet {
        Jet {
            v: g0,
            d1: [g1 * a.d1[0], g1 * a.d1[1]],
            d2: [
                g2 * a.d1[0] * a.d1[0] + g1 * a.d2[0],
                g2 * a.d1[1] * a.d1[1] + g1 * a.d2[1],
            ],
        }
    }

    #[inline]
    pub fn div(a: Jet, b: Jet) -> Jet {
        Jet::mul(a, Jet::recip(b))
    }

    #[inline]
    pub fn recip(a: Jet) -> Jet {
        let inv = 1.0 / a.v;
        Jet::compose(a, inv, -inv * inv, 2.0 * inv * inv * inv)
    }

    #[inline]
    pub fn tanh(a: Jet) -> Jet {
        let t = a.v.tanh();
        let s = 1.0 - t * t;
        Jet::compose(a, t, s, -2.0 * t * s)
    }

    #[inline]
    pub fn exp(a: Jet) -> Jet {
        let e = a.v.exp();
        Jet::compose(a, e, e, e)
    }

    #[inline]
    pub fn ln(a: Jet) -> Jet {
        let inv = 1.0 / a.v;
        Jet::compose(a, a.v.ln(), inv, -inv * inv)
    }

    #[inline]
    pub fn sigmoid(a: Jet) -> Jet {
        let s = sigmoid(a.v);
        let s1 = s * (1.0 - s);
        Jet::compose(a, s, s1, s1 * (1.0 - 2.0 * s))
    }

    #[inline]
    pub fn sin(a: Jet) -> Jet {
        let (s, c) = a.v.sin_cos();
        Jet::compose(a, s, c, -s)
    }

    #[inline]
    pub fn cos(a: Jet) -> Jet {
        let (s, c) = a.v.sin_cos();
        Jet::compose(a, c, -s, -c)
    }

    #[inline]
    pub fn cosh(a: Jet) -> Jet {
        Jet::compose(a, a.v.cosh(), a.v.sinh(), a.v.cosh())
    }

    /// Integer power with the convention `powi(0) = 1`.
    #[inline]
    pub fn powi(a: Jet, n: i32) -> Jet {
        let g0 = a.v.powi(n);
        let g1 = f64::from(n) * a.v.powi(n - 1);
        let g2 = f64::from(n) * f64::from(n - 1) * a.v.powi(n - 2);
        Jet::compose(a, g0, g1, g2)
    }
}

impl std::ops::Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        Jet::add(self, rhs)
    }
}

impl std::ops::Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        Jet::sub(self, rhs)
    }
}

impl std::ops::Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        Jet::mul(self, rhs)
    }
}

impl std::ops::Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        Jet::div(self, rhs)
    }
}

impl std::ops::Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet::neg(self)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}
