//! Reverse-mode differentiation over a recorded sequence of jet operations.
//!
//! A [`Program`] is an immutable straight-line recording of elementary
//! operations; an [`Executor`] owns the value/adjoint buffers and replays the
//! program forward (computing jet values) and backward (accumulating adjoint
//! jets). Node values are jets, so losses that contain second input
//! derivatives of a network output can still be differentiated with respect
//! to the parameters in a single reverse sweep.

use super::jet::Jet;

/// Log arguments below this are clamped; hits are counted as saturations.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("non-finite intermediate value at layer {layer}")]
    NonFinite { layer: usize },
    #[error("inconsistent parameter slot maps across tapes ({left} vs {right})")]
    InconsistentSlots { left: usize, right: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug)]
pub enum Op {
    /// Constant baked into the program.
    Const(f64),
    /// Jet constant read from the per-evaluation constant table.
    ConstJet(u32),
    /// Input coordinate `k`, seeded with `d1[k] = 1`.
    Input(u8),
    /// Trainable parameter slot (a constant jet whose adjoint is collected).
    Param(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Neg(u32),
    Mul(u32, u32),
    /// a*b + c
    MulAdd(u32, u32, u32),
    Recip(u32),
    Tanh(u32),
    Exp(u32),
    /// Natural log, clamped at [`LOG_CLAMP`] with a flat gradient beyond it.
    Log(u32),
    Sigmoid(u32),
    Sin(u32),
    Cos(u32),
    Cosh(u32),
    Abs(u32),
    Powi(u32, i32),
    /// Value = parent's first derivative in slot `k`.
    ExtractD1(u32, u8),
    /// Value = parent's pure second derivative in slot `k`.
    ExtractD2(u32, u8),
    /// Affine neuron: `params[bias] + sum_k params[w+k] * node(h0 + k*stride)`.
    /// Reads the weight row directly from the parameter slice; adjoints of
    /// those weights accumulate in the executor's parameter-adjoint buffer.
    Dot { w: u32, bias: u32, h0: u32, stride: u32, len: u32 },
    /// As `Dot` but without the bias term (used under weight normalization
    /// where the row is rescaled before the bias is added).
    DotNb { w: u32, h0: u32, stride: u32, len: u32 },
    /// Scalar contraction of a parameter block with per-evaluation
    /// constants: `sum_k params[w+k] * consts[c+k].v`.
    ParamDotConst { w: u32, c: u32, len: u32 },
}

/// An immutable recorded computation. One program is typically shared by
/// many evaluations that differ only in inputs, constants and parameters.
#[derive(Clone, Debug)]
pub struct Program {
    ops: Vec<Op>,
    n_consts: usize,
    n_params: usize,
    param_nodes: Vec<(u32, u32)>,
    uses_param_block: bool,
    output: u32,
}

impl Program {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_consts(&self) -> usize {
        self.n_consts
    }

    pub fn output(&self) -> NodeId {
        NodeId(self.output)
    }
}

#[derive(Default)]
pub struct ProgramBuilder {
    ops: Vec<Op>,
    n_consts: usize,
    n_params: usize,
    param_nodes: Vec<(u32, u32)>,
    uses_param_block: bool,
}

/// First id and stride of an arithmetic progression of node ids.
fn progression(ids: &[NodeId]) -> (u32, u32) {
    assert!(!ids.is_empty());
    let h0 = ids[0].0;
    let stride = if ids.len() > 1 { ids[1].0 - ids[0].0 } else { 1 };
    debug_assert!(ids
        .iter()
        .enumerate()
        .all(|(k, id)| id.0 == h0 + k as u32 * stride));
    (h0, stride)
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = self.ops.len() as u32;
        self.ops.push(op);
        NodeId(id)
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn constant(&mut self, v: f64) -> NodeId {
        self.push(Op::Const(v))
    }

    /// Reserves a slot in the per-evaluation jet-constant table.
    pub fn const_slot(&mut self) -> (NodeId, usize) {
        let slot = self.n_consts;
        self.n_consts += 1;
        (self.push(Op::ConstJet(slot as u32)), slot)
    }

    pub fn input(&mut self, k: usize) -> NodeId {
        debug_assert!(k < 2);
        self.push(Op::Input(k as u8))
    }

    pub fn param(&mut self, slot: usize) -> NodeId {
        self.n_params = self.n_params.max(slot + 1);
        let id = self.push(Op::Param(slot as u32));
        self.param_nodes.push((id.0, slot as u32));
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a.0, b.0))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a.0))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a.0, b.0))
    }

    pub fn mul_add(&mut self, a: NodeId, b: NodeId, c: NodeId) -> NodeId {
        self.push(Op::MulAdd(a.0, b.0, c.0))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let r = self.recip(b);
        self.mul(a, r)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Recip(a.0))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a.0))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a.0))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sin(a.0))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Cos(a.0))
    }

    pub fn cosh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Cosh(a.0))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Abs(a.0))
    }

    pub fn powi(&mut self, a: NodeId, n: i32) -> NodeId {
        self.push(Op::Powi(a.0, n))
    }

    pub fn extract_d1(&mut self, a: NodeId, k: usize) -> NodeId {
        self.push(Op::ExtractD1(a.0, k as u8))
    }

    pub fn extract_d2(&mut self, a: NodeId, k: usize) -> NodeId {
        self.push(Op::ExtractD2(a.0, k as u8))
    }

    /// Affine neuron over evenly spaced input nodes. `inputs` must be an
    /// arithmetic progression of node ids.
    pub fn dot(&mut self, w_slot: usize, bias_slot: usize, inputs: &[NodeId]) -> NodeId {
        let (h0, stride) = progression(inputs);
        self.n_params = self.n_params.max(w_slot + inputs.len()).max(bias_slot + 1);
        self.uses_param_block = true;
        self.push(Op::Dot {
            w: w_slot as u32,
            bias: bias_slot as u32,
            h0,
            stride,
            len: inputs.len() as u32,
        })
    }

    /// Weight-row contraction without the bias.
    pub fn dot_nb(&mut self, w_slot: usize, inputs: &[NodeId]) -> NodeId {
        let (h0, stride) = progression(inputs);
        self.n_params = self.n_params.max(w_slot + inputs.len());
        self.uses_param_block = true;
        self.push(Op::DotNb { w: w_slot as u32, h0, stride, len: inputs.len() as u32 })
    }

    /// `sum_k params[w+k] * consts[c+k]` as a scalar node.
    pub fn param_dot_const(&mut self, w_slot: usize, c_slot: usize, len: usize) -> NodeId {
        self.n_params = self.n_params.max(w_slot + len);
        self.n_consts = self.n_consts.max(c_slot + len);
        self.uses_param_block = true;
        self.push(Op::ParamDotConst { w: w_slot as u32, c: c_slot as u32, len: len as u32 })
    }

    /// Reserves a run of `len` per-evaluation constant slots, returning the
    /// first index.
    pub fn const_block(&mut self, len: usize) -> usize {
        let base = self.n_consts;
        self.n_consts += len;
        base
    }

    pub fn finish(self, output: NodeId) -> Program {
        Program {
            ops: self.ops,
            n_consts: self.n_consts,
            n_params: self.n_params,
            param_nodes: self.param_nodes,
            uses_param_block: self.uses_param_block,
            output: output.0,
        }
    }
}

/// Per-evaluation bindings for a program.
#[derive(Clone, Copy)]
pub struct Bindings<'a> {
    pub params: &'a [f64],
    pub inputs: &'a [f64],
    pub consts: &'a [Jet],
}

/// Owns the forward/adjoint buffers; reusable across evaluations.
#[derive(Default)]
pub struct Executor {
    vals: Vec<Jet>,
    adj: Vec<Jet>,
    param_adj: Vec<f64>,
    /// Number of clamped log evaluations since the last reset.
    pub saturations: u64,
}

impl Executor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset_saturations(&mut self) {
        self.saturations = 0;
    }

    pub fn value(&self, id: NodeId) -> f64 {
        self.vals[id.0 as usize].v
    }

    pub fn jet(&self, id: NodeId) -> Jet {
        self.vals[id.0 as usize]
    }

    pub fn adjoint(&self, id: NodeId) -> Jet {
        self.adj[id.0 as usize]
    }

    /// Replays the program forward and returns the output value.
    pub fn forward(&mut self, p: &Program, b: Bindings<'_>) -> f64 {
        debug_assert!(b.consts.len() >= p.n_consts);
        debug_assert!(b.params.len() >= p.n_params);
        self.vals.clear();
        self.vals.reserve(p.ops.len());
        for op in &p.ops {
            let j = match *op {
                Op::Const(v) => Jet::constant(v),
                Op::ConstJet(s) => b.consts[s as usize],
                Op::Input(k) => Jet::variable(b.inputs[k as usize], k as usize),
                Op::Param(s) => Jet::constant(b.params[s as usize]),
                Op::Add(a, c) => Jet::add(self.vals[a as usize], self.vals[c as usize]),
                Op::Sub(a, c) => Jet::sub(self.vals[a as usize], self.vals[c as usize]),
                Op::Neg(a) => Jet::neg(self.vals[a as usize]),
                Op::Mul(a, c) => Jet::mul(self.vals[a as usize], self.vals[c as usize]),
                Op::MulAdd(a, c, d) => Jet::mul_add(
                    self.vals[a as usize],
                    self.vals[c as usize],
                    self.vals[d as usize],
                ),
                Op::Recip(a) => Jet::recip(self.vals[a as usize]),
                Op::Tanh(a) => Jet::tanh(self.vals[a as usize]),
                Op::Exp(a) => Jet::exp(self.vals[a as usize]),
                Op::Log(a) => {
                    let x = self.vals[a as usize];
                    if x.v < LOG_CLAMP {
                        self.saturations += 1;
                        Jet::constant(LOG_CLAMP.ln())
                    } else {
                        Jet::ln(x)
                    }
                }
                Op::Sigmoid(a) => Jet::sigmoid(self.vals[a as usize]),
                Op::Sin(a) => Jet::sin(self.vals[a as usize]),
                Op::Cos(a) => Jet::cos(self.vals[a as usize]),
                Op::Cosh(a) => Jet::cosh(self.vals[a as usize]),
                Op::Abs(a) => {
                    let x = self.vals[a as usize];
                    Jet::compose(x, x.v.abs(), sign(x.v), 0.0)
                }
                Op::Powi(a, n) => Jet::powi(self.vals[a as usize], n),
                Op::ExtractD1(a, k) => Jet::constant(self.vals[a as usize].d1[k as usize]),
                Op::ExtractD2(a, k) => Jet::constant(self.vals[a as usize].d2[k as usize]),
                Op::Dot { w, bias, h0, stride, len } => {
                    let mut acc = Jet::constant(b.params[bias as usize]);
                    let ws = &b.params[w as usize..w as usize + len as usize];
                    for (k, &wk) in ws.iter().enumerate() {
                        let h = self.vals[(h0 + k as u32 * stride) as usize];
                        acc.v += wk * h.v;
                        acc.d1[0] += wk * h.d1[0];
                        acc.d1[1] += wk * h.d1[1];
                        acc.d2[0] += wk * h.d2[0];
                        acc.d2[1] += wk * h.d2[1];
                    }
                    acc
                }
                Op::DotNb { w, h0, stride, len } => {
                    let mut acc = Jet::ZERO;
                    let ws = &b.params[w as usize..w as usize + len as usize];
                    for (k, &wk) in ws.iter().enumerate() {
                        let h = self.vals[(h0 + k as u32 * stride) as usize];
                        acc.v += wk * h.v;
                        acc.d1[0] += wk * h.d1[0];
                        acc.d1[1] += wk * h.d1[1];
                        acc.d2[0] += wk * h.d2[0];
                        acc.d2[1] += wk * h.d2[1];
                    }
                    acc
                }
                Op::ParamDotConst { w, c, len } => {
                    let ws = &b.params[w as usize..w as usize + len as usize];
                    let cs = &b.consts[c as usize..c as usize + len as usize];
                    let mut acc = 0.0;
                    for (wk, ck) in ws.iter().zip(cs) {
                        acc += wk * ck.v;
                    }
                    Jet::constant(acc)
                }
            };
            self.vals.push(j);
        }
        self.vals[p.output as usize].v
    }

    /// Reverse sweep. Seeds the output adjoint value with `seed` and visits
    /// each node exactly once in reverse recording order. Weight-row
    /// adjoints accumulate into the parameter-adjoint buffer.
    pub fn backward(&mut self, p: &Program, b: Bindings<'_>, seed: f64) {
        self.adj.clear();
        self.adj.resize(p.ops.len(), Jet::ZERO);
        if p.uses_param_block {
            self.param_adj.clear();
            self.param_adj.resize(p.n_params.max(b.params.len()), 0.0);
        }
        self.adj[p.output as usize].v = seed;
        for (i, op) in p.ops.iter().enumerate().rev() {
            let cb = self.adj[i];
            if cb == Jet::ZERO {
                continue;
            }
            match *op {
                Op::Const(_) | Op::ConstJet(_) | Op::Input(_) | Op::Param(_) => {}
                Op::Add(a, c) => {
                    acc(&mut self.adj[a as usize], cb, 1.0);
                    acc(&mut self.adj[c as usize], cb, 1.0);
                }
                Op::Sub(a, c) => {
                    acc(&mut self.adj[a as usize], cb, 1.0);
                    acc(&mut self.adj[c as usize], cb, -1.0);
                }
                Op::Neg(a) => acc(&mut self.adj[a as usize], cb, -1.0),
                Op::Mul(a, c) => {
                    let (av, cv) = (self.vals[a as usize], self.vals[c as usize]);
                    mul_back(&mut self.adj[a as usize], cb, cv);
                    mul_back(&mut self.adj[c as usize], cb, av);
                }
                Op::MulAdd(a, c, d) => {
                    let (av, cv) = (self.vals[a as usize], self.vals[c as usize]);
                    mul_back(&mut self.adj[a as usize], cb, cv);
                    mul_back(&mut self.adj[c as usize], cb, av);
                    acc(&mut self.adj[d as usize], cb, 1.0);
                }
                Op::Recip(a) => {
                    let v = self.vals[a as usize].v;
                    let inv = 1.0 / v;
                    let i2 = inv * inv;
                    unary_back(
                        &mut self.adj[a as usize],
                        cb,
                        self.vals[a as usize],
                        -i2,
                        2.0 * i2 * inv,
                        -6.0 * i2 * i2,
                    );
                }
                Op::Tanh(a) => {
                    let t = self.vals[i].v;
                    let s = 1.0 - t * t;
                    let g2 = -2.0 * t * s;
                    let g3 = -2.0 * (s * s + t * g2);
                    unary_back(&mut self.adj[a as usize], cb, self.vals[a as usize], s, g2, g3);
                }
                Op::Exp(a) => {
                    let e = self.vals[i].v;
                    unary_back(&mut self.adj[a as usize], cb, self.vals[a as usize], e, e, e);
                }
                Op::Log(a) => {
                    let v = self.vals[a as usize].v;
                    if v >= LOG_CLAMP {
                        let inv = 1.0 / v;
                        unary_back(
                            &mut self.adj[a as usize],
                            cb,
                            self.vals[a as usize],
                            inv,
                            -inv * inv,
                            2.0 * inv * inv * inv,
                        );
                    }
                }
                Op::Sigmoid(a) => {
                    let s = self.vals[i].v;
                    let s1 = s * (1.0 - s);
                    let g2 = s1 * (1.0 - 2.0 * s);
                    let g3 = g2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1;
                    unary_back(&mut self.adj[a as usize], cb, self.vals[a as usize], s1, g2, g3);
                }
                Op::Sin(a) => {
                    let (s, c) = self.vals[a as usize].v.sin_cos();
                    unary_back(&mut self.adj[a as usize], cb, self.vals[a as usize], c, -s, -c);
                }
                Op::Cos(a) => {
                    let (s, c) = self.vals[a as usize].v.sin_cos();
                    unary_back(&mut self.adj[a as usize], cb, self.vals[a as usize], -s, -c, s);
                }
                Op::Cosh(a) => {
                    let v = self.vals[a as usize].v;
                    unary_back(
                        &mut self.adj[a as usize],
                        cb,
                        self.vals[a as usize],
                        v.sinh(),
                        v.cosh(),
                        v.sinh(),
                    );
                }
                Op::Abs(a) => {
                    let s = sign(self.vals[a as usize].v);
                    unary_back(&mut self.adj[a as usize], cb, self.vals[a as usize], s, 0.0, 0.0);
                }
                Op::Powi(a, n) => {
                    let v = self.vals[a as usize].v;
                    let nf = f64::from(n);
                    let g1 = nf * v.powi(n - 1);
                    let g2 = nf * f64::from(n - 1) * v.powi(n - 2);
                    let g3 = nf * f64::from(n - 1) * f64::from(n - 2) * v.powi(n - 3);
                    unary_back(&mut self.adj[a as usize], cb, self.vals[a as usize], g1, g2, g3);
                }
                Op::ExtractD1(a, k) => self.adj[a as usize].d1[k as usize] += cb.v,
                Op::ExtractD2(a, k) => self.adj[a as usize].d2[k as usize] += cb.v,
                Op::Dot { w, bias, h0, stride, len } => {
                    self.param_adj[bias as usize] += cb.v;
                    let ws = &b.params[w as usize..w as usize + len as usize];
                    for (k, &wk) in ws.iter().enumerate() {
                        let hidx = (h0 + k as u32 * stride) as usize;
                        let h = self.vals[hidx];
                        self.param_adj[w as usize + k] += cb.v * h.v
                            + cb.d1[0] * h.d1[0]
                            + cb.d1[1] * h.d1[1]
                            + cb.d2[0] * h.d2[0]
                            + cb.d2[1] * h.d2[1];
                        acc(&mut self.adj[hidx], cb, wk);
                    }
                }
                Op::DotNb { w, h0, stride, len } => {
                    let ws = &b.params[w as usize..w as usize + len as usize];
                    for (k, &wk) in ws.iter().enumerate() {
                        let hidx = (h0 + k as u32 * stride) as usize;
                        let h = self.vals[hidx];
                        self.param_adj[w as usize + k] += cb.v * h.v
                            + cb.d1[0] * h.d1[0]
                            + cb.d1[1] * h.d1[1]
                            + cb.d2[0] * h.d2[0]
                            + cb.d2[1] * h.d2[1];
                        acc(&mut self.adj[hidx], cb, wk);
                    }
                }
                Op::ParamDotConst { w, c, len } => {
                    let cs = &b.consts[c as usize..c as usize + len as usize];
                    for (k, ck) in cs.iter().enumerate() {
                        self.param_adj[w as usize + k] += cb.v * ck.v;
                    }
                }
            }
        }
    }

    /// Accumulates `scale * d(output)/d(params)` into `grad`.
    pub fn grad_into(&self, p: &Program, grad: &mut [f64], scale: f64) {
        for &(node, slot) in &p.param_nodes {
            grad[slot as usize] += scale * self.adj[node as usize].v;
        }
        if p.uses_param_block {
            for (dst, src) in grad.iter_mut().zip(&self.param_adj) {
                *dst += scale * src;
            }
        }
    }
}

/// Convenience wrapper: forward + backward + gradient extraction for a loss
/// recorded as a program. The gradient has one entry per parameter slot;
/// slots the program never references stay exactly zero.
pub fn grad_params(p: &Program, b: Bindings<'_>, exec: &mut Executor) -> (f64, Vec<f64>) {
    let value = exec.forward(p, b);
    exec.backward(p, b, 1.0);
    let mut grad = vec![0.0; b.params.len().max(p.n_params())];
    exec.grad_into(p, &mut grad, 1.0);
    (value, grad)
}

/// Row i is `grad_params` of output i. All rows must come from programs
/// with identical parameter-slot counts.
pub fn jacobian_params(
    rows: &[(&Program, Bindings<'_>)],
    exec: &mut Executor,
) -> Result<Vec<Vec<f64>>, DiffError> {
    let mut jac = Vec::with_capacity(rows.len());
    let width = rows.first().map(|(p, b)| p.n_params().max(b.params.len()));
    for (p, b) in rows {
        let w = p.n_params().max(b.params.len());
        if Some(w) != width {
            return Err(DiffError::InconsistentSlots {
                left: width.unwrap_or(0),
                right: w,
            });
        }
        let (_, g) = grad_params(p, *b, exec);
        jac.push(g);
    }
    Ok(jac)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn acc(dst: &mut Jet, cb: Jet, s: f64) {
    dst.v += s * cb.v;
    dst.d1[0] += s * cb.d1[0];
    dst.d1[1] += s * cb.d1[1];
    dst.d2[0] += s * cb.d2[0];
    dst.d2[1] += s * cb.d2[1];
}

/// Adjoint of one side of a product: `c = a*b`, accumulate into `a_bar`
/// given the co-factor jet `b`.
#[inline]
fn mul_back(abar: &mut Jet, cb: Jet, b: Jet) {
    abar.v += cb.v * b.v
        + cb.d1[0] * b.d1[0]
        + cb.d1[1] * b.d1[1]
        + cb.d2[0] * b.d2[0]
        + cb.d2[1] * b.d2[1];
    abar.d1[0] += cb.d1[0] * b.v + 2.0 * cb.d2[0] * b.d1[0];
    abar.d1[1] += cb.d1[1] * b.v + 2.0 * cb.d2[1] * b.d1[1];
    abar.d2[0] += cb.d2[0] * b.v;
    abar.d2[1] += cb.d2[1] * b.v;
}

/// Adjoint through a unary composition `c = g(a)` with derivatives g1..g3
/// evaluated at `a.v`.
#[inline]
fn unary_back(abar: &mut Jet, cb: Jet, a: Jet, g1: f64, g2: f64, g3: f64) {
    abar.v += cb.v * g1
        + cb.d1[0] * g2 * a.d1[0]
        + cb.d1[1] * g2 * a.d1[1]
        + cb.d2[0] * (g3 * a.d1[0] * a.d1[0] + g2 * a.d2[0])
        + cb.d2[1] * (g3 * a.d1[1] * a.d1[1] + g2 * a.d2[1]);
    abar.d1[0] += cb.d1[0] * g1 + 2.0 * cb.d2[0] * g2 * a.d1[0];
    abar.d1[1] += cb.d1[1] * g1 + 2.0 * cb.d2[1] * g2 * a.d1[1];
    abar.d2[0] += cb.d2[0] * g1;
    abar.d2[1] += cb.d2[1] * g1;
}
