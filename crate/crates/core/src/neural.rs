//! Small fully connected networks with hand-written backprop and Adam.
//!
//! Rows are samples: a batch is a `(batch, features)` matrix. Hidden layers use
//! ReLU; the output head is either the identity or a logistic squash onto (0, 1).

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::config::Initializer;

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("network needs at least an input and an output layer")]
    TooFewLayers,
    #[error("cache does not belong to this network")]
    CacheMismatch,
    #[error("non-finite gradient")]
    NonFinite,
    #[error("blend factor {0} outside (0, 1]")]
    Tau(f64),
    #[error("malformed network data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHead {
    Identity,
    Sigmoid,
}

impl OutputHead {
    fn tag(self) -> u8 {
        match self {
            OutputHead::Identity => 0,
            OutputHead::Sigmoid => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, NeuralError> {
        match tag {
            0 => Ok(OutputHead::Identity),
            1 => Ok(OutputHead::Sigmoid),
            t => Err(NeuralError::Format(format!("unknown output head {t}"))),
        }
    }
}

/// Weights (`fan_in × fan_out`) and biases of every layer. Also used for
/// gradients and optimizer moments, which share the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Params {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            weights: dims.windows(2).map(|d| Array2::zeros((d[0], d[1]))).collect(),
            biases: dims[1..].iter().map(|&d| Array1::zeros(d)).collect(),
        }
    }

    pub fn zeros_like(other: &Params) -> Self {
        Self {
            weights: other.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: other.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.weights.len() == other.weights.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&other.biases).all(|(a, b)| a.dim() == b.dim())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// All entries, layer by layer, weights (row-major) before biases.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.iter_mut().for_each(|x| *x *= k);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    dims: Vec<usize>,
    pub params: Params,
    head: OutputHead,
}

/// Activations saved by [`DenseNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: Vec<usize>,
    /// Input of each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Output of the final layer after the head.
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl DenseNet {
    /// A zero-initialised network with layer sizes `dims` (input first).
    pub fn new(dims: &[usize], head: OutputHead) -> Result<Self, NeuralError> {
        if dims.len() < 2 {
            return Err(NeuralError::TooFewLayers);
        }
        if dims.contains(&0) {
            return Err(NeuralError::Format("zero-width layer".into()));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params: Params::zeros(dims),
            head,
        })
    }

    pub fn initialized<R: Rng + ?Sized>(
        dims: &[usize],
        head: OutputHead,
        init: Initializer,
        rng: &mut R,
    ) -> Result<Self, NeuralError> {
        let mut net = Self::new(dims, head)?;
        match init {
            Initializer::Xavier => net.init_xavier(rng),
            Initializer::FanIn => net.init_fan_in(rng),
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R, bound: impl Fn(usize, usize) -> f64) {
        for (w, b) in self.params.weights.iter_mut().zip(self.params.biases.iter_mut()) {
            let (fan_in, fan_out) = w.dim();
            let a = bound(fan_in, fan_out);
            let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
            w.iter_mut().for_each(|x| *x = dist.sample(rng));
            b.fill(0.0);
        }
    }

    /// Weights ~ U(±1/√fan_in), biases zero.
    pub fn init_fan_in<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.init_uniform(rng, |fi, _| 1.0 / (fi as f64).sqrt());
    }

    /// Weights ~ U(±√(6/(fan_in + fan_out))), biases zero.
    pub fn init_xavier<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.init_uniform(rng, |fi, fo| (6.0 / (fi + fo) as f64).sqrt());
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<ForwardCache, NeuralError> {
        if x.ncols() != self.input_dim() {
            return Err(NeuralError::Dim {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let n_layers = self.params.weights.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut a = x.to_owned();
        for (k, (w, b)) in self.params.weights.iter().zip(&self.params.biases).enumerate() {
            let mut z = a.dot(w);
            z += b;
            if k + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            } else if self.head == OutputHead::Sigmoid {
                z.mapv_inplace(sigmoid);
            }
            inputs.push(a);
            a = z;
        }
        Ok(ForwardCache {
            dims: self.dims.clone(),
            inputs,
            output: a,
        })
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NeuralError> {
        Ok(self.forward(x)?.output)
    }

    /// Gradients of `Σ upstream ⊙ output` with respect to the parameters and the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<(Params, Array2<f64>), NeuralError> {
        if cache.dims != self.dims || cache.inputs.len() != self.params.weights.len() {
            return Err(NeuralError::CacheMismatch);
        }
        if upstream.dim() != cache.output.dim() {
            return Err(NeuralError::Dim {
                expected: cache.output.len(),
                got: upstream.len(),
            });
        }
        let n_layers = self.params.weights.len();
        let mut grads = Params::zeros_like(&self.params);
        let mut delta = upstream.to_owned();
        if self.head == OutputHead::Sigmoid {
            Zip::from(&mut delta).and(&cache.output).for_each(|d, &y| *d *= y * (1.0 - y));
        }
        for k in (0..n_layers).rev() {
            let input = &cache.inputs[k];
            grads.weights[k] = input.t().dot(&delta);
            grads.biases[k] = delta.sum_axis(Axis(0));
            let mut below = delta.dot(&self.params.weights[k].t());
            if k > 0 {
                // input to layer k is the ReLU output of layer k-1
                Zip::from(&mut below).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = below;
        }
        Ok((grads, delta))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NeuralError> {
        w.write_u8(self.head.tag())?;
        w.write_u32::<LittleEndian>(self.dims.len() as u32)?;
        for &d in &self.dims {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        write_params(w, &self.params)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, NeuralError> {
        let head = OutputHead::from_tag(r.read_u8()?)?;
        let n = r.read_u32::<LittleEndian>()? as usize;
        if !(2..=64).contains(&n) {
            return Err(NeuralError::Format(format!("{n} layers")));
        }
        let dims = (0..n)
            .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let mut net = Self::new(&dims, head)?;
        read_params_into(r, &mut net.params)?;
        Ok(net)
    }
}

pub fn write_params<W: Write>(w: &mut W, p: &Params) -> Result<(), NeuralError> {
    for x in p.iter() {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

/// Fills an already shaped `Params` from the stream.
pub fn read_params_into<R: Read>(r: &mut R, p: &mut Params) -> Result<(), NeuralError> {
    for x in p.iter_mut() {
        *x = r.read_f64::<LittleEndian>()?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &Params, lr: f64) -> Self {
        Self {
            m: Params::zeros_like(params),
            v: Params::zeros_like(params),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NeuralError> {
        w.write_u64::<LittleEndian>(self.step)?;
        for x in [self.lr, self.beta1, self.beta2, self.eps] {
            w.write_f64::<LittleEndian>(x)?;
        }
        write_params(w, &self.m)?;
        write_params(w, &self.v)
    }

    /// Reads a state whose moments are shaped like `params`.
    pub fn read_from<R: Read>(r: &mut R, params: &Params) -> Result<Self, NeuralError> {
        let step = r.read_u64::<LittleEndian>()?;
        let mut s = Self::new(params, r.read_f64::<LittleEndian>()?);
        s.step = step;
        s.beta1 = r.read_f64::<LittleEndian>()?;
        s.beta2 = r.read_f64::<LittleEndian>()?;
        s.eps = r.read_f64::<LittleEndian>()?;
        read_params_into(r, &mut s.m)?;
        read_params_into(r, &mut s.v)?;
        Ok(s)
    }
}

/// One bias-corrected Adam descent step. Non-finite gradients leave both the
/// parameters and the state untouched.
pub fn adam_step(state: &mut AdamState, params: &mut Params, grads: &Params) -> Result<(), NeuralError> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(NeuralError::Dim {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if !grads.is_finite() {
        return Err(NeuralError::NonFinite);
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.lr, state.eps);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    };
    for k in 0..params.weights.len() {
        Zip::from(&mut params.weights[k])
            .and(&mut state.m.weights[k])
            .and(&mut state.v.weights[k])
            .and(&grads.weights[k])
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut params.biases[k])
            .and(&mut state.m.biases[k])
            .and(&mut state.v.biases[k])
            .and(&grads.biases[k])
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}

/// θ̂ ← τθ + (1−τ)θ̂, elementwise.
pub fn soft_blend(target: &mut Params, online: &Params, tau: f64) -> Result<(), NeuralError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(NeuralError::Tau(tau));
    }
    if !target.same_shape(online) {
        return Err(NeuralError::Dim {
            expected: target.len(),
            got: online.len(),
        });
    }
    for (t, o) in target.iter_mut().zip(online.iter()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}
