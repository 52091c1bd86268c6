//! Dense value network with an optional dueling decomposition.
//!
//! Two fully parallel streams of three rectifier layers estimate a scalar
//! state value and a per-action advantage; their combination yields Q-values
//! with a mean-centered advantage. The non-dueling variant keeps a single
//! stream with a direct Q head. Everything is double precision and fully
//! deterministic given a seeded generator.

use std::path::Path;

use ndarray::{azip, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::env::{Action, MicrogridConfig};
use crate::error::{Error, Result};
use crate::schemes::StateSpec;

/// Hidden layer widths used by the default architecture (per stream).
pub const DEFAULT_HIDDEN: [usize; 3] = [64, 64, 64];

/// Adam first-moment decay.
pub const ADAM_BETA1: f64 = 0.9;
/// Adam second-moment decay.
pub const ADAM_BETA2: f64 = 0.999;
/// Adam denominator fuzz.
pub const ADAM_EPS: f64 = 1e-8;

/// One dense layer; `weights` is `(out, in)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn dims(&self) -> [usize; 2] {
        [self.weights.nrows(), self.weights.ncols()]
    }
}

/// A stack of rectifier layers followed by a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub hidden: Vec<Layer>,
    pub head: Layer,
}

fn relu_mask_inplace(delta: &mut Array2<f64>, activation: &Array2<f64>) {
    delta.zip_mut_with(activation, |d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
}

impl Stream {
    /// Forward pass keeping every post-activation for the backward pass.
    /// `activations[0]` is the input, `activations[k + 1]` the output of
    /// hidden layer `k`; the returned matrix is the linear head output.
    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let mut activations = Vec::with_capacity(self.hidden.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.hidden {
            let mut z = activations.last().unwrap().dot(&layer.weights.t());
            z += &layer.bias;
            z.mapv_inplace(|v| v.max(0.0));
            activations.push(z);
        }
        let mut out = activations.last().unwrap().dot(&self.head.weights.t());
        out += &self.head.bias;
        (activations, out)
    }

    /// Head output only.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward_cached(x).1
    }

    /// Backpropagates `head_grad` through the stream, returning gradients in
    /// the stream's own shape.
    fn backward(&self, activations: &[Array2<f64>], head_grad: &Array2<f64>) -> Stream {
        let n = self.hidden.len();
        let head = Layer {
            weights: head_grad.t().dot(&activations[n]),
            bias: head_grad.sum_axis(Axis(0)),
        };
        let mut hidden: Vec<Layer> = (0..n).map(|k| self.hidden[k].zeros_like()).collect();
        if n > 0 {
            let mut delta = head_grad.dot(&self.head.weights);
            relu_mask_inplace(&mut delta, &activations[n]);
            for k in (0..n).rev() {
                hidden[k] = Layer {
                    weights: delta.t().dot(&activations[k]),
                    bias: delta.sum_axis(Axis(0)),
                };
                if k > 0 {
                    delta = delta.dot(&self.hidden[k].weights);
                    relu_mask_inplace(&mut delta, &activations[k]);
                }
            }
        }
        Stream { hidden, head }
    }
}

/// Full parameter set of the value network (one architecture instance).
///
/// The online and target copies of a learner are simply two values of this
/// type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub input_dim: usize,
    pub dueling: bool,
    /// Advantage stream (dueling) or the plain Q stream (non-dueling);
    /// the head always has [`Action::COUNT`] outputs.
    pub advantage: Stream,
    /// Scalar value stream, present only in the dueling variant.
    pub value: Option<Stream>,
}

fn init_layer<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Layer {
    // He-style initialization for rectifier units; biases start at zero.
    let std = (2.0 / inp as f64).sqrt();
    let mut weights = Array2::zeros((out, inp));
    for v in weights.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = std * z;
    }
    Layer { weights, bias: Array1::zeros(out) }
}

fn init_stream<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], head_out: usize, rng: &mut R) -> Stream {
    let mut layers = Vec::with_capacity(hidden.len());
    let mut prev = input_dim;
    for &width in hidden {
        layers.push(init_layer(width, prev, rng));
        prev = width;
    }
    Stream { hidden: layers, head: init_layer(head_out, prev, rng) }
}

impl NetParams {
    /// Random initialization with explicit hidden widths.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, dueling: bool, hidden: &[usize], rng: &mut R) -> NetParams {
        let advantage = init_stream(input_dim, hidden, Action::COUNT, rng);
        let value = dueling.then(|| init_stream(input_dim, hidden, 1, rng));
        NetParams { input_dim, dueling, advantage, value }
    }

    /// Random initialization with the default three 64-unit layers per stream.
    pub fn init_default<R: Rng + ?Sized>(input_dim: usize, dueling: bool, rng: &mut R) -> NetParams {
        NetParams::init(input_dim, dueling, &DEFAULT_HIDDEN, rng)
    }

    /// All layers in canonical order: advantage hidden, advantage head, then
    /// (when dueling) value hidden and value head.
    pub fn layers(&self) -> Vec<&Layer> {
        let mut out: Vec<&Layer> = self.advantage.hidden.iter().collect();
        out.push(&self.advantage.head);
        if let Some(value) = &self.value {
            out.extend(value.hidden.iter());
            out.push(&value.head);
        }
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer> {
        let mut out: Vec<&mut Layer> = self.advantage.hidden.iter_mut().collect();
        out.push(&mut self.advantage.head);
        if let Some(value) = &mut self.value {
            out.extend(value.hidden.iter_mut());
            out.push(&mut value.head);
        }
        out
    }

    /// Same-shape copy with every parameter zeroed.
    pub fn zeros_like(&self) -> NetParams {
        let zero_stream = |s: &Stream| Stream {
            hidden: s.hidden.iter().map(Layer::zeros_like).collect(),
            head: s.head.zeros_like(),
        };
        NetParams {
            input_dim: self.input_dim,
            dueling: self.dueling,
            advantage: zero_stream(&self.advantage),
            value: self.value.as_ref().map(zero_stream),
        }
    }

    /// Errors unless `other` has the identical architecture.
    pub fn check_same_shape(&self, other: &NetParams) -> Result<()> {
        let mine: Vec<[usize; 2]> = self.layers().iter().map(|l| l.dims()).collect();
        let theirs: Vec<[usize; 2]> = other.layers().iter().map(|l| l.dims()).collect();
        if self.input_dim != other.input_dim || self.dueling != other.dueling || mine != theirs {
            return Err(Error::ShapeMismatch(format!(
                "parameter sets differ: {mine:?} (dueling={}) vs {theirs:?} (dueling={})",
                self.dueling, other.dueling
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "state dimension {} does not match network input dimension {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Q-values for a batch of states, `(batch, actions)`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut q = self.advantage.forward_batch(x);
        if let Some(value) = &self.value {
            let v = value.forward_batch(x);
            let mean = q.mean_axis(Axis(1)).unwrap();
            for (i, mut row) in q.axis_iter_mut(Axis(0)).enumerate() {
                let shift = v[[i, 0]] - mean[i];
                row.mapv_inplace(|a| a + shift);
            }
        }
        Ok(q)
    }

    /// Q-values for a single state vector.
    pub fn forward_one(&self, features: &[f64]) -> Result<[f64; Action::COUNT]> {
        let x = ArrayView2::from_shape((1, features.len()), features)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let q = self.forward_batch(x)?;
        let mut out = [0.0; Action::COUNT];
        for (o, v) in out.iter_mut().zip(q.row(0).iter()) {
            *o = *v;
        }
        Ok(out)
    }

    /// Mean-squared-error loss over the selected actions and its gradient.
    ///
    /// Targets are constants: no gradient flows through them, and only the
    /// selected action's Q output receives a loss signal.
    pub fn loss_and_grad(
        &self,
        states: ArrayView2<'_, f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, NetParams)> {
        let batch = states.nrows();
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        if actions.len() != batch || targets.len() != batch {
            return Err(Error::ShapeMismatch(format!(
                "batch of {batch} states with {} actions and {} targets",
                actions.len(),
                targets.len()
            )));
        }
        self.check_input(&states)?;
        if let Some(&bad) = actions.iter().find(|&&a| a >= Action::COUNT) {
            return Err(Error::ShapeMismatch(format!("action index {bad} out of range 0..5")));
        }

        let (adv_acts, adv_out) = self.advantage.forward_cached(states);
        let value_pass = self.value.as_ref().map(|v| v.forward_cached(states));

        // Combined Q-values.
        let mut q = adv_out;
        if let Some((_, v_out)) = &value_pass {
            let mean = q.mean_axis(Axis(1)).unwrap();
            for (i, mut row) in q.axis_iter_mut(Axis(0)).enumerate() {
                let shift = v_out[[i, 0]] - mean[i];
                row.mapv_inplace(|a| a + shift);
            }
        }

        let inv = 1.0 / batch as f64;
        let mut loss = 0.0;
        let mut g_q = Array2::<f64>::zeros((batch, Action::COUNT));
        for i in 0..batch {
            let err = q[[i, actions[i]]] - targets[i];
            loss += err * err;
            g_q[[i, actions[i]]] = 2.0 * err * inv;
        }
        loss *= inv;

        let grads = if let Some((v_acts, _)) = &value_pass {
            // Q = V + A - mean(A): the advantage head sees the mean-centered
            // share of the signal, the value head the full row sum.
            let row = g_q.sum_axis(Axis(1));
            let mut g_adv = g_q;
            for (i, mut r) in g_adv.axis_iter_mut(Axis(0)).enumerate() {
                let share = row[i] / Action::COUNT as f64;
                r.mapv_inplace(|g| g - share);
            }
            let g_val = row.insert_axis(Axis(1));
            NetParams {
                input_dim: self.input_dim,
                dueling: true,
                advantage: self.advantage.backward(&adv_acts, &g_adv),
                value: Some(self.value.as_ref().unwrap().backward(v_acts, &g_val)),
            }
        } else {
            NetParams {
                input_dim: self.input_dim,
                dueling: false,
                advantage: self.advantage.backward(&adv_acts, &g_q),
                value: None,
            }
        };
        Ok((loss, grads))
    }
}

/// Mean-centered dueling combination for a single state.
pub fn dueling_combine(value: f64, advantage: &[f64; Action::COUNT]) -> [f64; Action::COUNT] {
    let mean = advantage.iter().sum::<f64>() / Action::COUNT as f64;
    let mut q = [0.0; Action::COUNT];
    for (q, a) in q.iter_mut().zip(advantage.iter()) {
        *q = value + a - mean;
    }
    q
}

/// Index of the maximum entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Adam accumulator state mirroring a parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: NetParams,
    v: NetParams,
    step: u64,
}

impl AdamState {
    pub fn new(like: &NetParams) -> AdamState {
        AdamState { m: like.zeros_like(), v: like.zeros_like(), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction.
pub fn adam_step(params: &mut NetParams, opt: &mut AdamState, grads: &NetParams, lr: f64) -> Result<()> {
    params.check_same_shape(grads)?;
    params.check_same_shape(&opt.m)?;
    opt.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(opt.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(opt.step as i32);
    let p_layers = params.layers_mut();
    let m_layers = opt.m.layers_mut();
    let v_layers = opt.v.layers_mut();
    let g_layers = grads.layers();
    for (((p, m), v), g) in p_layers.into_iter().zip(m_layers).zip(v_layers).zip(g_layers) {
        azip!((p in &mut p.weights, m in &mut m.weights, v in &mut v.weights, g in &g.weights) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * *g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * *g * *g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
        });
        azip!((p in &mut p.bias, m in &mut m.bias, v in &mut v.bias, g in &g.bias) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * *g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * *g * *g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
        });
    }
    Ok(())
}

/// Geometric blend of the target toward the online weights.
pub fn soft_update(target: &mut NetParams, online: &NetParams, tau: f64) -> Result<()> {
    target.check_same_shape(online)?;
    for (t, o) in target.layers_mut().into_iter().zip(online.layers()) {
        azip!((t in &mut t.weights, o in &o.weights) *t = (1.0 - tau) * *t + tau * *o);
        azip!((t in &mut t.bias, o in &o.bias) *t = (1.0 - tau) * *t + tau * *o);
    }
    Ok(())
}

/// Bit-identical copy of the online weights into the target.
pub fn hard_update(target: &mut NetParams, online: &NetParams) -> Result<()> {
    target.check_same_shape(online)?;
    for (t, o) in target.layers_mut().into_iter().zip(online.layers()) {
        t.weights.assign(&o.weights);
        t.bias.assign(&o.bias);
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MGRIDCK1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    state_spec: StateSpec,
    double: bool,
    dueling: bool,
    input_dim: usize,
    advantage_dims: Vec<[usize; 2]>,
    value_dims: Option<Vec<[usize; 2]>>,
    scaler: Scaler,
    microgrid: MicrogridConfig,
}

/// A trained policy together with everything needed to act on fresh data:
/// architecture flags, the data scaler and the microgrid configuration.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state_spec: StateSpec,
    /// Whether the policy was trained with the double-Q target.
    pub double: bool,
    pub scaler: Scaler,
    pub microgrid: MicrogridConfig,
    pub params: NetParams,
}

fn stream_dims(stream: &Stream) -> Vec<[usize; 2]> {
    let mut dims: Vec<[usize; 2]> = stream.hidden.iter().map(Layer::dims).collect();
    dims.push(stream.head.dims());
    dims
}

impl Checkpoint {
    /// Serializes the checkpoint: magic, length-prefixed JSON header, then
    /// little-endian 64-bit float parameter blocks in canonical layer order.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let header = CheckpointHeader {
            state_spec: self.state_spec,
            double: self.double,
            dueling: self.params.dueling,
            input_dim: self.params.input_dim,
            advantage_dims: stream_dims(&self.params.advantage),
            value_dims: self.params.value.as_ref().map(stream_dims),
            scaler: self.scaler,
            microgrid: self.microgrid.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut buf = Vec::with_capacity(json.len() + 16);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for layer in self.params.layers() {
            for v in layer.weights.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in layer.bias.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Reads and validates a checkpoint file.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Checkpoint> {
        let bytes = std::fs::read(path.as_ref())?;
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint file (bad magic)",
                path.as_ref().display()
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + header_len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + header_len])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.dueling != header.value_dims.is_some() {
            return Err(Error::Checkpoint("dueling flag inconsistent with stored streams".into()));
        }
        if header.input_dim != header.state_spec.dim() {
            return Err(Error::Checkpoint(format!(
                "input dimension {} inconsistent with scheme {} horizon {} (expects {})",
                header.input_dim,
                header.state_spec.scheme,
                header.state_spec.horizon,
                header.state_spec.dim()
            )));
        }

        let mut offset = 16 + header_len;
        let mut read_f64 = |n: usize| -> Result<Vec<f64>> {
            let byte_len = n * 8;
            if bytes.len() < offset + byte_len {
                return Err(Error::Checkpoint("truncated parameter block".into()));
            }
            let out = bytes[offset..offset + byte_len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += byte_len;
            Ok(out)
        };
        let mut read_stream = |dims: &[[usize; 2]], input_dim: usize, head_out: usize| -> Result<Stream> {
            if dims.is_empty() {
                return Err(Error::Checkpoint("stream with no layers".into()));
            }
            let mut prev = input_dim;
            for (i, d) in dims.iter().enumerate() {
                if d[1] != prev {
                    return Err(Error::Checkpoint(format!("layer {i} expects input {prev}, header says {}", d[1])));
                }
                prev = d[0];
            }
            if dims.last().unwrap()[0] != head_out {
                return Err(Error::Checkpoint(format!(
                    "head output {} does not match expected {head_out}",
                    dims.last().unwrap()[0]
                )));
            }
            let mut layers = Vec::with_capacity(dims.len());
            for d in dims {
                let weights = Array2::from_shape_vec((d[0], d[1]), read_f64(d[0] * d[1])?)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                let bias = Array1::from_vec(read_f64(d[0])?);
                layers.push(Layer { weights, bias });
            }
            let head = layers.pop().unwrap();
            Ok(Stream { hidden: layers, head })
        };

        let advantage = read_stream(&header.advantage_dims, header.input_dim, Action::COUNT)?;
        let value = match &header.value_dims {
            Some(dims) => Some(read_stream(dims, header.input_dim, 1)?),
            None => None,
        };
        if offset != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after parameter blocks",
                bytes.len() - offset
            )));
        }
        Ok(Checkpoint {
            state_spec: header.state_spec,
            double: header.double,
            scaler: header.scaler,
            microgrid: header.microgrid,
            params: NetParams {
                input_dim: header.input_dim,
                dueling: header.dueling,
                advantage,
                value,
            },
        })
    }
}
