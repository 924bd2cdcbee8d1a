//! Generator and discriminator networks: tanh MLPs with optional residual
//! links, spectral normalization and a sigmoid output head.

use crate::diffcore::{Jet, NodeId, ProgramBuilder};
use crate::linalg::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("network has a zero-width layer")]
    ZeroWidth,
    #[error("network has no layers")]
    Empty,
    #[error("parameter vector does not match the network layout")]
    LayoutMismatch,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("checkpoint is truncated or malformed")]
    Malformed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// Architecture descriptor. The output dimension is always 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    /// Hidden layer widths.
    pub widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub residual_links: bool,
    #[serde(default)]
    pub spectral_norm: bool,
    #[serde(default)]
    pub sigmoid_output: bool,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub w_off: usize,
    pub b_off: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, widths: Vec<usize>) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            widths,
            activation: Activation::Tanh,
            residual_links: false,
            spectral_norm: false,
            sigmoid_output: false,
        }
    }

    pub fn output_dim(&self) -> usize {
        1
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.widths.is_empty() || self.input_dim == 0 {
            return Err(NetError::Empty);
        }
        if self.widths.contains(&0) {
            return Err(NetError::ZeroWidth);
        }
        Ok(())
    }

    /// Per-layer (weights, bias) offsets into the flat parameter vector.
    /// Layers are the hidden stack followed by the scalar output head.
    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut layers = Vec::with_capacity(self.widths.len() + 1);
        let mut off = 0;
        let mut fan_in = self.input_dim;
        for &w in &self.widths {
            layers.push(LayerLayout { w_off: off, b_off: off + fan_in * w, fan_in, fan_out: w });
            off += (fan_in + 1) * w;
            fan_in = w;
        }
        layers.push(LayerLayout { w_off: off, b_off: off + fan_in, fan_in, fan_out: 1 });
        layers
    }

    pub fn param_count(&self) -> usize {
        let l = self.layout();
        let last = l.last().unwrap();
        last.b_off + last.fan_out
    }

    /// A residual link is inserted at every hidden layer whose fan-in equals
    /// its fan-out.
    pub fn has_link(&self, layer: usize) -> bool {
        if !self.residual_links || layer >= self.widths.len() {
            return false;
        }
        let fan_in = if layer == 0 { self.input_dim } else { self.widths[layer - 1] };
        fan_in == self.widths[layer]
    }
}

/// Flat trainable parameter vector plus its per-layer layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Vec<LayerLayout>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weight matrix of a layer as a dense (fan_out x fan_in) matrix.
    pub fn weight_matrix(&self, layer: usize) -> Mat {
        let l = self.layout[layer];
        Mat {
            rows: l.fan_out,
            cols: l.fan_in,
            data: self.values[l.w_off..l.w_off + l.fan_in * l.fan_out].to_vec(),
        }
    }
}

/// Weights i.i.d. normal with standard deviation `1/sqrt(fan_in)`, biases
/// zero; deterministic under a fixed seed.
pub fn init(spec: &NetworkSpec, seed: u64) -> Result<ParamVector, NetError> {
    spec.validate()?;
    let layout = spec.layout();
    let mut values = vec![0.0; spec.param_count()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &layout {
        let std = 1.0 / (l.fan_in as f64).sqrt();
        for w in values[l.w_off..l.w_off + l.fan_in * l.fan_out].iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = std * z;
        }
        // biases stay zero
    }
    Ok(ParamVector { values, layout })
}

/// Persistent left/right singular-vector cache for power iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SnVectors {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl SnVectors {
    pub fn seeded(fan_out: usize, fan_in: usize, seed: u64) -> SnVectors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u: Vec<f64> = (0..fan_out).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut v: Vec<f64> = (0..fan_in).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        normalize(&mut u);
        normalize(&mut v);
        SnVectors { u, v }
    }
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// Power-iteration estimate of the largest singular value; returns the
/// normalized matrix `W / sigma` and the estimate itself. A zero matrix is
/// returned unchanged with sigma treated as 1.
pub fn spectral_normalize(w: &Mat, iters: usize, state: &mut SnVectors) -> (Mat, f64) {
    let sigma = power_iterate_sigma(w, iters, state);
    (w.scale(1.0 / sigma), sigma)
}

fn power_iterate_sigma(w: &Mat, iters: usize, state: &mut SnVectors) -> f64 {
    assert_eq!(state.u.len(), w.rows);
    assert_eq!(state.v.len(), w.cols);
    if w.max_abs() == 0.0 {
        return 1.0;
    }
    for _ in 0..iters.max(1) {
        // v <- normalize(W^T u)
        for j in 0..w.cols {
            let mut s = 0.0;
            for i in 0..w.rows {
                s += w[(i, j)] * state.u[i];
            }
            state.v[j] = s;
        }
        normalize(&mut state.v);
        // u <- normalize(W v)
        for i in 0..w.rows {
            let mut s = 0.0;
            let row = w.row(i);
            for j in 0..w.cols {
                s += row[j] * state.v[j];
            }
            state.u[i] = s;
        }
        normalize(&mut state.u);
    }
    let mut sigma = 0.0;
    for i in 0..w.rows {
        let row = w.row(i);
        let mut s = 0.0;
        for j in 0..w.cols {
            s += row[j] * state.v[j];
        }
        sigma += state.u[i] * s;
    }
    if sigma.abs() < f64::MIN_POSITIVE {
        1.0
    } else {
        sigma
    }
}

/// Per-network spectral-normalization state: one vector cache and sigma
/// estimate per layer. Single-writer, owned by the trainer.
#[derive(Clone, Debug, PartialEq)]
pub struct SnState {
    pub layers: Vec<SnVectors>,
    pub sigmas: Vec<f64>,
}

impl SnState {
    pub fn new(spec: &NetworkSpec, seed: u64) -> SnState {
        let layout = spec.layout();
        let layers: Vec<SnVectors> = layout
            .iter()
            .enumerate()
            .map(|(i, l)| SnVectors::seeded(l.fan_out, l.fan_in, seed ^ ((i as u64 + 1) << 32)))
            .collect();
        SnState { layers, sigmas: vec![1.0; layout.len()] }
    }

    /// Runs `iters` power iterations per layer against the current weights
    /// and refreshes the cached sigma estimates.
    pub fn update(&mut self, params: &ParamVector, iters: usize) {
        for (i, sv) in self.layers.iter_mut().enumerate() {
            let w = params.weight_matrix(i);
            self.sigmas[i] = power_iterate_sigma(&w, iters, sv);
        }
    }

    pub fn sigma(&self, layer: usize) -> f64 {
        self.sigmas[layer]
    }
}

/// Pure jet-arithmetic forward pass. Applies spectral normalization with
/// the sigmas cached in `sn` when the spec requests it, and the output
/// sigmoid when configured. Also returns the pre-sigmoid score.
pub fn forward_jet(
    spec: &NetworkSpec,
    params: &ParamVector,
    sn: Option<&SnState>,
    x: &[f64],
) -> JetOutput {
    debug_assert_eq!(x.len(), spec.input_dim);
    let mut h: Vec<Jet> = (0..spec.input_dim).map(|k| Jet::variable(x[k], k)).collect();
    let mut next: Vec<Jet> = Vec::new();
    let n_layers = params.layout.len();
    for (li, l) in params.layout.iter().enumerate() {
        let inv_sigma = match (spec.spectral_norm, sn) {
            (true, Some(s)) => 1.0 / s.sigma(li),
            _ => 1.0,
        };
        next.clear();
        for o in 0..l.fan_out {
            let mut acc = Jet::constant(params.values[l.b_off + o]);
            let wrow = &params.values[l.w_off + o * l.fan_in..l.w_off + (o + 1) * l.fan_in];
            for (j, hv) in h.iter().enumerate() {
                acc = Jet::mul_add(Jet::constant(wrow[j] * inv_sigma), *hv, acc);
            }
            if li < n_layers - 1 {
                acc = Jet::tanh(acc);
                if spec.has_link(li) {
                    acc = Jet::add(acc, h[o]);
                }
            }
            next.push(acc);
        }
        std::mem::swap(&mut h, &mut next);
    }
    let score = h[0];
    let out = if spec.sigmoid_output { Jet::sigmoid(score) } else { score };
    JetOutput { output: out, score }
}

#[derive(Clone, Copy, Debug)]
pub struct JetOutput {
    /// Network output (post-sigmoid when configured).
    pub output: Jet,
    /// Pre-sigmoid score.
    pub score: Jet,
}

/// Forward pass that checks every layer for finite values, reporting the
/// offending layer index on overflow.
pub fn eval_with_input_derivs(
    spec: &NetworkSpec,
    params: &ParamVector,
    sn: Option<&SnState>,
    x: &[f64],
) -> Result<Jet, crate::diffcore::DiffError> {
    let mut h: Vec<Jet> = (0..spec.input_dim).map(|k| Jet::variable(x[k], k)).collect();
    let mut next: Vec<Jet> = Vec::new();
    let n_layers = params.layout.len();
    for (li, l) in params.layout.iter().enumerate() {
        let inv_sigma = match (spec.spectral_norm, sn) {
            (true, Some(s)) => 1.0 / s.sigma(li),
            _ => 1.0,
        };
        next.clear();
        for o in 0..l.fan_out {
            let mut acc = Jet::constant(params.values[l.b_off + o]);
            let wrow = &params.values[l.w_off + o * l.fan_in..l.w_off + (o + 1) * l.fan_in];
            for (j, hv) in h.iter().enumerate() {
                acc = Jet::mul_add(Jet::constant(wrow[j] * inv_sigma), *hv, acc);
            }
            if li < n_layers - 1 {
                acc = Jet::tanh(acc);
                if spec.has_link(li) {
                    acc = Jet::add(acc, h[o]);
                }
            }
            next.push(acc);
        }
        if next.iter().any(|j| !j.is_finite()) {
            return Err(crate::diffcore::DiffError::NonFinite { layer: li });
        }
        std::mem::swap(&mut h, &mut next);
    }
    let score = h[0];
    Ok(if spec.sigmoid_output { Jet::sigmoid(score) } else { score })
}

/// Plain scalar forward value.
pub fn forward(spec: &NetworkSpec, params: &ParamVector, sn: Option<&SnState>, x: &[f64]) -> f64 {
    forward_jet(spec, params, sn, x).output.v
}

/// A network recorded on a tape program. `score` is pre-sigmoid; `output`
/// has the sigmoid applied when the spec requests it.
pub struct BuiltNet {
    pub score: NodeId,
    pub output: NodeId,
    /// Per-layer base of the constant block holding the `u_i*v_j` outer
    /// products when spectral normalization is on.
    pub sn_const_base: Vec<usize>,
}

/// Records the network into `tb` using fused affine-neuron ops. Parameters
/// occupy slots `param_base .. param_base + spec.param_count()`. Inputs are
/// existing tape nodes (one per input coordinate).
pub fn build_network(
    tb: &mut ProgramBuilder,
    spec: &NetworkSpec,
    param_base: usize,
    inputs: &[NodeId],
) -> BuiltNet {
    assert_eq!(inputs.len(), spec.input_dim);
    let layout = spec.layout();
    let n_layers = layout.len();
    let mut h: Vec<NodeId> = inputs.to_vec();
    let mut sn_const_base: Vec<usize> = Vec::new();
    for (li, l) in layout.iter().enumerate() {
        let inv_sigma = if spec.spectral_norm {
            // sigma_hat = sum_ij W_ij (u_i v_j); the outer products live in
            // a per-evaluation constant block refreshed by power iteration
            let c_base = tb.const_block(l.fan_in * l.fan_out);
            sn_const_base.push(c_base);
            let sigma = tb.param_dot_const(param_base + l.w_off, c_base, l.fan_in * l.fan_out);
            Some(tb.recip(sigma))
        } else {
            None
        };
        let mut next: Vec<NodeId> = Vec::with_capacity(l.fan_out);
        for o in 0..l.fan_out {
            let w_slot = param_base + l.w_off + o * l.fan_in;
            let bias_slot = param_base + l.b_off + o;
            let mut acc = match inv_sigma {
                Some(inv) => {
                    let pre = tb.dot_nb(w_slot, &h);
                    let bias = tb.param(bias_slot);
                    tb.mul_add(pre, inv, bias)
                }
                None => tb.dot(w_slot, bias_slot, &h),
            };
            if li < n_layers - 1 {
                acc = tb.tanh(acc);
                if spec.has_link(li) {
                    acc = tb.add(acc, h[o]);
                }
            }
            next.push(acc);
        }
        h = next;
    }
    let score = h[0];
    let output = if spec.sigmoid_output { tb.sigmoid(score) } else { score };
    BuiltNet { score, output, sn_const_base }
}

/// Fills the spectral-norm constant blocks of a built network given the
/// current power-iteration vectors.
pub fn fill_sn_consts(built: &BuiltNet, spec: &NetworkSpec, sn: &SnState, consts: &mut [Jet]) {
    if !spec.spectral_norm {
        return;
    }
    let layout = spec.layout();
    for (li, &base) in built.sn_const_base.iter().enumerate() {
        let l = layout[li];
        let sv = &sn.layers[li];
        for i in 0..l.fan_out {
            for j in 0..l.fan_in {
                consts[base + i * l.fan_in + j] = Jet::constant(sv.u[i] * sv.v[j]);
            }
        }
    }
}

const MAGIC: &[u8; 6] = b"APINN1";

/// Writes a checkpoint: magic, spec header, then the flat parameter vector
/// as little-endian 64-bit floats.
pub fn save_checkpoint(
    path: &Path,
    spec: &NetworkSpec,
    params: &ParamVector,
) -> Result<(), NetError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let flags = (spec.residual_links as u8)
        | ((spec.spectral_norm as u8) << 1)
        | ((spec.sigmoid_output as u8) << 2);
    buf.push(flags);
    buf.push(0u8); // activation tag: 0 = tanh
    buf.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.widths.len() as u32).to_le_bytes());
    for &w in &spec.widths {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(params.values.len() as u64).to_le_bytes());
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, ParamVector), NetError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 16 || &buf[0..6] != MAGIC {
        return Err(NetError::BadMagic);
    }
    let flags = buf[6];
    let mut pos = 8usize;
    let rd_u32 = |b: &[u8], p: &mut usize| -> Result<u32, NetError> {
        if *p + 4 > b.len() {
            return Err(NetError::Malformed);
        }
        let v = u32::from_le_bytes(b[*p..*p + 4].try_into().unwrap());
        *p += 4;
        Ok(v)
    };
    let input_dim = rd_u32(&buf, &mut pos)? as usize;
    let n_widths = rd_u32(&buf, &mut pos)? as usize;
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(rd_u32(&buf, &mut pos)? as usize);
    }
    if pos + 8 > buf.len() {
        return Err(NetError::Malformed);
    }
    let n_params = u64::from_le_bytes(buf[pos..pos + 8].try_into().unwrap()) as usize;
    pos += 8;
    if pos + 8 * n_params != buf.len() {
        return Err(NetError::Malformed);
    }
    let mut values = Vec::with_capacity(n_params);
    for i in 0..n_params {
        let off = pos + 8 * i;
        values.push(f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()));
    }
    let spec = NetworkSpec {
        input_dim,
        widths,
        activation: Activation::Tanh,
        residual_links: flags & 1 != 0,
        spectral_norm: flags & 2 != 0,
        sigmoid_output: flags & 4 != 0,
    };
    if values.len() != spec.param_count() {
        return Err(NetError::Malformed);
    }
    let layout = spec.layout();
    Ok((spec, ParamVector { values, layout }))
}
