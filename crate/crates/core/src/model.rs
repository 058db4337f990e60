//! Small fully-connected networks: the online network (trunk + predictor),
//! its EMA twin, exact backpropagation, SGD and checkpoints.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::{FeatureMatrix, RngState};
use crate::par::{self, Execution};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Checkpoint(format!("unknown activation code {other}"))),
        }
    }
}

/// Affine map followed by an element-wise activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Weights and biases uniform in `±1/sqrt(in_dim)`.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut RngState) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        let bias = (0..out_dim).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self {
            in_dim: dim,
            out_dim: dim,
            weights,
            bias: vec![0.0; dim],
            activation: Activation::Identity,
        }
    }

    fn forward_row(&self, x: &[f64], out: &mut [f64]) {
        for (o, (w, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.in_dim).zip(&self.bias))
        {
            let pre: f64 = b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
            *o = self.activation.apply(pre);
        }
    }

    fn forward(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut out = FeatureMatrix::zeros(x.rows(), self.out_dim);
        for i in 0..x.rows() {
            self.forward_row(x.row(i), out.row_mut(i));
        }
        out
    }
}

/// Parameter gradients of one [`Dense`] layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients congruent with an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::StaleCache);
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights.len() != b.weights.len() || a.bias.len() != b.bias.len() {
                return Err(Error::StaleCache);
            }
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= factor);
            l.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Inputs and outputs of every layer from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<FeatureMatrix>,
    outputs: Vec<FeatureMatrix>,
}

/// A chain of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`; tanh on hidden layers, identity on the last.
    pub fn new(dims: &[usize], rng: &mut RngState) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::ConfigInvalid(format!("bad layer dims {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Tanh
                };
                Dense::init(w[0], w[1], act, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ConfigInvalid("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::DimensionMismatch {
                    expected: w[0].out_dim,
                    actual: w[1].in_dim,
                });
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::ConfigInvalid("layer parameter count mismatch".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(f64::is_finite)
    }

    fn check_input(&self, x: &FeatureMatrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.cols(),
            });
        }
        Ok(())
    }

    /// Inference-only forward pass, parallel over rows.
    pub fn forward(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.forward_with(Execution::default(), x)
    }

    pub fn forward_with(&self, exec: Execution, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.check_input(x)?;
        let width = self.layers.iter().map(|l| l.out_dim).max().unwrap_or(0);
        let rows = par::map_indexed(exec, x.rows(), |i| {
            let mut cur = x.row(i).to_vec();
            let mut next = vec![0.0; width];
            for l in &self.layers {
                l.forward_row(&cur, &mut next[..l.out_dim]);
                cur.clear();
                cur.extend_from_slice(&next[..l.out_dim]);
            }
            cur
        });
        Ok(FeatureMatrix::from_raw(x.rows(), self.output_dim(), rows.concat()))
    }

    /// Forward pass that keeps every layer's activations for [`Mlp::backward`].
    pub fn forward_cached(&self, x: &FeatureMatrix) -> Result<(FeatureMatrix, ForwardCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let out = l.forward(&cur);
            inputs.push(cur);
            outputs.push(out.clone());
            cur = out;
        }
        Ok((cur, ForwardCache { inputs, outputs }))
    }

    /// Parameter gradients and the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &FeatureMatrix,
    ) -> Result<(Gradients, FeatureMatrix)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let last = &cache.outputs[cache.outputs.len() - 1];
        if upstream.rows() != last.rows() || upstream.cols() != last.cols() {
            return Err(Error::StaleCache);
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (idx, l) in self.layers.iter().enumerate().rev() {
            let (x, y) = (&cache.inputs[idx], &cache.outputs[idx]);
            if x.cols() != l.in_dim || y.cols() != l.out_dim || x.rows() != delta.rows() {
                return Err(Error::StaleCache);
            }
            // delta on the pre-activation
            for (d, &yv) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *d *= l.activation.derivative_from_output(yv);
            }
            let mut gw = vec![0.0; l.weights.len()];
            let mut gb = vec![0.0; l.out_dim];
            let mut gx = FeatureMatrix::zeros(x.rows(), l.in_dim);
            for i in 0..x.rows() {
                let xi = x.row(i);
                let di = delta.row(i);
                for (o, &dv) in di.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    gb[o] += dv;
                    let wrow = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                    let grow = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                    for j in 0..l.in_dim {
                        grow[j] += dv * xi[j];
                    }
                    for (g, w) in gx.row_mut(i).iter_mut().zip(wrow) {
                        *g += dv * w;
                    }
                }
            }
            grads.push(DenseGrad {
                weights: gw,
                bias: gb,
            });
            delta = gx;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    fn check_congruent(&self, layers: &[DenseGrad]) -> Result<()> {
        if layers.len() != self.layers.len()
            || self
                .layers
                .iter()
                .zip(layers)
                .any(|(l, g)| l.weights.len() != g.weights.len() || l.bias.len() != g.bias.len())
        {
            return Err(Error::StaleCache);
        }
        Ok(())
    }

    /// `params -= lr * grads`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::ConfigInvalid(format!("learning rate must be >= 0, got {lr}")));
        }
        self.check_congruent(&grads.layers)?;
        for (p, g) in self.params_mut().zip(grads.iter()) {
            *p -= lr * g;
        }
        Ok(())
    }

    /// `self = m * self + (1 - m) * online`, element-wise.
    pub fn ema_update(&mut self, online: &Mlp, m: f64) -> Result<()> {
        if !(0.0..1.0).contains(&m) {
            return Err(Error::InvalidMomentum(m));
        }
        if self.dims() != online.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: online.param_count(),
            });
        }
        for (t, o) in self.params_mut().zip(online.params()) {
            *t = ema(*t, o, m);
        }
        Ok(())
    }
}

#[inline]
pub fn ema(target: f64, online: f64, m: f64) -> f64 {
    m * target + (1.0 - m) * online
}

/// Layer widths of the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    /// Hidden widths of the encoder, e.g. `[64, 32]`.
    pub encoder: Vec<usize>,
    pub projection_dim: usize,
    /// Hidden widths of the predictor; its output matches the projection.
    pub predictor_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder: vec![64, 32],
            projection_dim: 16,
            predictor_hidden: vec![16],
        }
    }
}

impl Architecture {
    pub fn trunk_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.encoder);
        dims.push(self.projection_dim);
        dims
    }

    pub fn predictor_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.projection_dim];
        dims.extend(&self.predictor_hidden);
        dims.push(self.projection_dim);
        dims
    }
}

/// Where to stop an online forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Projector,
    Predictor,
}

/// Encoder + projector ("trunk") followed by the predictor head.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineNetwork {
    pub trunk: Mlp,
    pub predictor: Mlp,
}

/// Gradients for both parts of the online network.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineGradients {
    pub trunk: Gradients,
    pub predictor: Gradients,
}

impl OnlineGradients {
    pub fn zeros_like(net: &OnlineNetwork) -> Self {
        Self {
            trunk: Gradients::zeros_like(&net.trunk),
            predictor: Gradients::zeros_like(&net.predictor),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.trunk.iter().chain(self.predictor.iter())
    }

    pub fn max_abs(&self) -> f64 {
        self.trunk.max_abs().max(self.predictor.max_abs())
    }
}

impl OnlineNetwork {
    pub fn new(input_dim: usize, arch: &Architecture, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            trunk: Mlp::new(&arch.trunk_dims(input_dim), rng)?,
            predictor: Mlp::new(&arch.predictor_dims(), rng)?,
        })
    }

    /// Raw (unnormalized) output at the requested stage.
    pub fn forward(&self, x: &FeatureMatrix, upto: Stage) -> Result<FeatureMatrix> {
        let z = self.trunk.forward(x)?;
        match upto {
            Stage::Projector => Ok(z),
            Stage::Predictor => self.predictor.forward(&z),
        }
    }

    pub fn sgd_step(&mut self, grads: &OnlineGradients, lr: f64) -> Result<()> {
        self.trunk.sgd_step(&grads.trunk, lr)?;
        self.predictor.sgd_step(&grads.predictor, lr)
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.trunk.params().chain(self.predictor.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.trunk.params_mut().chain(self.predictor.params_mut())
    }
}

/// EMA copy of the online trunk. It has no backward pass: the only way to
/// change its parameters is [`TargetNetwork::ema_update`].
#[derive(Clone, Debug, PartialEq)]
pub struct TargetNetwork {
    trunk: Mlp,
}

impl TargetNetwork {
    pub fn from_online(online: &OnlineNetwork) -> Self {
        Self {
            trunk: online.trunk.clone(),
        }
    }

    pub fn from_trunk(trunk: Mlp) -> Self {
        Self { trunk }
    }

    pub fn forward(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.trunk.forward(x)
    }

    pub fn forward_with(&self, exec: Execution, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.trunk.forward_with(exec, x)
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn ema_update(&mut self, online: &OnlineNetwork, m: f64) -> Result<()> {
        self.trunk.ema_update(&online.trunk, m)
    }
}

const MAGIC: &[u8; 4] = b"CPCC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes networks as: magic, version, network count, per-network layer
/// headers `(in, out, activation)` as little-endian u32, then every
/// parameter as a little-endian f64 (weights row-major, then bias).
pub fn write_checkpoint<W: Write>(mut out: W, nets: &[&Mlp]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(nets.len() as u32).to_le_bytes())?;
    for net in nets {
        out.write_all(&(net.layers.len() as u32).to_le_bytes())?;
        for l in &net.layers {
            for v in [l.in_dim as u32, l.out_dim as u32, l.activation.code()] {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    for net in nets {
        for p in net.params() {
            out.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<Mlp>> {
    fn u32_of<R: Read>(r: &mut R) -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        Ok(u32::from_le_bytes(b))
    }
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32_of(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32_of(&mut input)? as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let layers = u32_of(&mut input)? as usize;
        let mut net = Vec::with_capacity(layers);
        for _ in 0..layers {
            let (i, o) = (u32_of(&mut input)? as usize, u32_of(&mut input)? as usize);
            let act = Activation::from_code(u32_of(&mut input)?)?;
            net.push((i, o, act));
        }
        shapes.push(net);
    }
    let mut nets = Vec::with_capacity(count);
    for shape in shapes {
        let mut layers = Vec::with_capacity(shape.len());
        for (in_dim, out_dim, activation) in shape {
            let mut read_f64s = |len: usize| -> Result<Vec<f64>> {
                let mut buf = vec![0u8; len * 8];
                input
                    .read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint("truncated parameters".into()))?;
                Ok(buf
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect())
            };
            let weights = read_f64s(in_dim * out_dim)?;
            let bias = read_f64s(out_dim)?;
            layers.push(Dense {
                in_dim,
                out_dim,
                weights,
                bias,
                activation,
            });
        }
        nets.push(Mlp::from_layers(layers)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(nets)
}
