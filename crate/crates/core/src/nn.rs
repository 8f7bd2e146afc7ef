//! Dense feed-forward networks with exact backpropagation and ADAM.
//!
//! Networks operate on row-major batches (`batch × features`). All math is
//! done in `f64`.
//!
//! Binary network record (all integers and floats little-endian):
//!
//! ```text
//! "AGRL" | version: u16 | layer_count: u32
//! per layer:  inputs: u32 | outputs: u32 | activation: u8 (0 identity, 1 relu, 2 tanh)
//! per layer:  weights (outputs × inputs, row-major) f64 | bias (outputs) f64
//! adam_step: u64
//! per layer:  m_weights | m_bias | v_weights | v_bias   (f64)
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NETWORK_MAGIC: [u8; 4] = *b"AGRL";
pub const NETWORK_FORMAT_VERSION: u16 = 1;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Tanh),
            other => Err(Error::Checkpoint(format!("unknown activation code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `outputs × inputs`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Gradient (or first/second moment) of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<LayerGrad>,
    pub second: Vec<LayerGrad>,
}

/// Activations recorded by [`Network::forward_cached`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s output.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache always holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Dense>,
    pub adam: AdamState,
}

impl Network {
    /// Wraps `layers`, checking that their dimensions chain.
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        let zeros: Vec<LayerGrad> = layers.iter().map(LayerGrad::zeros_like).collect();
        Ok(Self {
            adam: AdamState {
                step: 0,
                first: zeros.clone(),
                second: zeros,
            },
            layers,
        })
    }

    /// Builds an MLP with the given widths. Hidden layers use `hidden`, the
    /// last layer uses `output`. Weights are Xavier-uniform with the ReLU gain
    /// on rectified layers; biases start at zero.
    pub fn mlp<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("an MLP needs input and output widths".into()));
        }
        let count = widths.len() - 1;
        let layers = (0..count)
            .map(|l| {
                let activation = if l + 1 == count { output } else { hidden };
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                let gain = if activation == Activation::Relu { 2f64.sqrt() } else { 1.0 };
                let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, fan_out, activation);
                layer.weights.mapv_inplace(|_| rng.random_range(-bound..=bound));
                layer
            })
            .collect();
        Network::new(layers)
    }

    /// Value network: observation → one Q-value per discrete action.
    pub fn value_net<R: Rng + ?Sized>(obs_dim: usize, actions: usize, rng: &mut R) -> Self {
        Self::mlp(&[obs_dim, 64, 128, actions], Activation::Relu, Activation::Identity, rng)
            .expect("fixed widths chain")
    }

    /// Deterministic actor: observation → action in (-1, 1) per component.
    /// The output layer starts near zero so early actions are small.
    pub fn actor<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, rng: &mut R) -> Self {
        let mut net =
            Self::mlp(&[obs_dim, 400, 300, action_dim], Activation::Relu, Activation::Tanh, rng)
                .expect("fixed widths chain");
        let last = net.layers.last_mut().expect("three layers");
        last.weights.mapv_inplace(|_| rng.random_range(-3e-3..=3e-3));
        last.bias.mapv_inplace(|_| rng.random_range(-3e-3..=3e-3));
        net
    }

    /// Critic: observation and action concatenated at the input → scalar Q.
    pub fn critic<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, rng: &mut R) -> Self {
        Self::mlp(
            &[obs_dim + action_dim, 400, 300, 1],
            Activation::Relu,
            Activation::Identity,
            rng,
        )
        .expect("fixed widths chain")
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn same_topology(&self, other: &Network) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.dim() == b.weights.dim() && a.activation == b.activation
            })
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let mut x = self.layers[0].apply(input);
        for layer in &self.layers[1..] {
            x = layer.apply(x.view());
        }
        Ok(x)
    }

    /// Forward pass that keeps every intermediate activation for [`Network::backward`].
    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(input.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for layer in &self.layers {
            let next = layer.apply(activations.last().expect("non-empty").view());
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    /// Reverse-mode pass. `upstream` is dLoss/dOutput for each batch row.
    /// Returns parameter gradients summed over the batch and dLoss/dInput.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.activations.len() != self.layers.len() + 1
            || cache
                .activations
                .iter()
                .skip(1)
                .zip(&self.layers)
                .any(|(a, l)| a.ncols() != l.outputs())
        {
            return Err(Error::Usage("forward cache does not belong to this network".into()));
        }
        if upstream.dim() != cache.output().dim() {
            return Err(Error::Usage(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                upstream.dim(),
                cache.output().dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let output = &cache.activations[l + 1];
            let act = layer.activation;
            if act != Activation::Identity {
                Zip::from(&mut delta)
                    .and(output)
                    .for_each(|d, &y| *d *= act.derivative_from_output(y));
            }
            let input = &cache.activations[l];
            grads.push(LayerGrad {
                weights: delta.t().dot(input),
                bias: delta.sum_axis(Axis(0)),
            });
            delta = delta.dot(&layer.weights);
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// One bias-corrected ADAM step.
    pub fn adam_update(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || grads.layers.iter().zip(&self.layers).any(|(g, l)| {
                g.weights.dim() != l.weights.dim() || g.bias.len() != l.bias.len()
            })
        {
            return Err(Error::Config("gradient shapes do not match the network".into()));
        }
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let step_size = learning_rate / (1.0 - ADAM_BETA1.powi(t));
        let v_correction = 1.0 / (1.0 - ADAM_BETA2.powi(t));
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= step_size * *m / ((*v * v_correction).sqrt() + ADAM_EPSILON);
        };
        for (((layer, g), m), v) in self
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.adam.first)
            .zip(&mut self.adam.second)
        {
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }

    /// `self ← tau·online + (1 − tau)·self`, parameter by parameter.
    pub fn soft_update(&mut self, online: &Network, tau: f64) -> Result<()> {
        if !self.same_topology(online) {
            return Err(Error::Config("soft update between different topologies".into()));
        }
        if tau == 1.0 {
            for (t, o) in self.layers.iter_mut().zip(&online.layers) {
                t.weights.assign(&o.weights);
                t.bias.assign(&o.bias);
            }
            return Ok(());
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.weights)
                .and(&o.weights)
                .for_each(|t, &o| *t += tau * (o - *t));
            Zip::from(&mut t.bias)
                .and(&o.bias)
                .for_each(|t, &o| *t += tau * (o - *t));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::Config(format!(
                "input has {width} features, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(&NETWORK_MAGIC)?;
        out.write_all(&NETWORK_FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            out.write_all(&(l.inputs() as u32).to_le_bytes())?;
            out.write_all(&(l.outputs() as u32).to_le_bytes())?;
            out.write_all(&[l.activation.code()])?;
        }
        for l in &self.layers {
            write_floats(out, l.weights.iter())?;
            write_floats(out, l.bias.iter())?;
        }
        out.write_all(&self.adam.step.to_le_bytes())?;
        for (m, v) in self.adam.first.iter().zip(&self.adam.second) {
            write_floats(out, m.weights.iter())?;
            write_floats(out, m.bias.iter())?;
            write_floats(out, v.weights.iter())?;
            write_floats(out, v.bias.iter())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        Self::read_bounded(input, usize::MAX)
    }

    /// Like [`Network::read_from`], but refuses records whose parameters
    /// could not fit in `max_bytes`, before allocating them.
    fn read_bounded<R: Read>(input: &mut R, max_bytes: usize) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if magic != NETWORK_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = u16::from_le_bytes(read_array(input)?);
        if version != NETWORK_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported network format version {version}"
            )));
        }
        let count = u32::from_le_bytes(read_array(input)?) as usize;
        if count == 0 || count > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {count}")));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = u32::from_le_bytes(read_array(input)?) as usize;
            let outputs = u32::from_le_bytes(read_array(input)?) as usize;
            let [code] = read_array::<_, 1>(input)?;
            if inputs == 0 || outputs == 0 || inputs * outputs > 1 << 26 {
                return Err(Error::Checkpoint(format!("implausible layer {inputs}×{outputs}")));
            }
            shapes.push((inputs, outputs, Activation::from_code(code)?));
        }
        let params: usize = shapes.iter().map(|&(i, o, _)| i * o + o).sum();
        if params.saturating_mul(8) > max_bytes {
            return Err(Error::Checkpoint(format!(
                "record declares {params} parameters but holds at most {max_bytes} bytes"
            )));
        }
        let mut layers = Vec::with_capacity(count);
        for &(inputs, outputs, activation) in &shapes {
            let mut layer = Dense::zeros(inputs, outputs, activation);
            read_floats(input, layer.weights.iter_mut())?;
            read_floats(input, layer.bias.iter_mut())?;
            layers.push(layer);
        }
        let mut net = Network::new(layers)
            .map_err(|e| Error::Checkpoint(format!("inconsistent layer chain: {e}")))?;
        net.adam.step = u64::from_le_bytes(read_array(input)?);
        for (m, v) in net.adam.first.iter_mut().zip(&mut net.adam.second) {
            read_floats(input, m.weights.iter_mut())?;
            read_floats(input, m.bias.iter_mut())?;
            read_floats(input, v.weights.iter_mut())?;
            read_floats(input, v.bias.iter_mut())?;
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(32 + 8 * 3 * self.parameter_count());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let net = Self::read_bounded(&mut cursor, bytes.len())?;
        if !cursor.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", cursor.len())));
        }
        Ok(net)
    }
}

impl Dense {
    fn apply(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weights.t());
        let act = self.activation;
        Zip::from(z.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row)
                .and(&self.bias)
                .for_each(|v, &b| *v = act.apply(*v + b));
        });
        z
    }
}

fn write_floats<'a, W: Write>(out: &mut W, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_floats<'a, R: Read>(input: &mut R, slots: impl Iterator<Item = &'a mut f64>) -> Result<()> {
    for slot in slots {
        *slot = f64::from_le_bytes(read_array(input)?);
    }
    Ok(())
}

fn read_array<R: Read, const N: usize>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint("truncated network record".into())
        } else {
            Error::Io(e)
        }
    })?;
    Ok(buf)
}
