use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Label, LossKind, NnError, Sample};
use crate::seed;

/// Probability floor used when taking logarithms in the cross-entropy loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    Identity,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Softmax => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Softmax),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self { input_dim, output_dim, activation }
    }

    pub fn param_count(&self) -> usize {
        self.input_dim * self.output_dim + self.output_dim
    }
}

/// Checks that a layer chain is well formed.
pub fn validate_layers(layers: &[LayerSpec]) -> Result<(), NnError> {
    if layers.is_empty() {
        return Err(NnError::EmptyNetwork);
    }
    for (i, layer) in layers.iter().enumerate() {
        if layer.input_dim == 0 || layer.output_dim == 0 {
            return Err(NnError::ZeroWidth { layer: i });
        }
        if layer.activation == Activation::Softmax && i + 1 != layers.len() {
            return Err(NnError::SoftmaxNotFinal { layer: i });
        }
        if i > 0 && layers[i - 1].output_dim != layer.input_dim {
            return Err(NnError::LayerMismatch {
                layer: i,
                expected: layers[i - 1].output_dim,
                found: layer.input_dim,
            });
        }
    }
    Ok(())
}

/// Dense feed-forward network stored as one flat parameter vector.
///
/// Each layer contributes its weights in row-major `[output][input]` order,
/// followed by its biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetwork {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

impl DenseNetwork {
    /// Builds a network from explicit parameters.
    pub fn from_params(layers: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self, NnError> {
        validate_layers(&layers)?;
        let expected: usize = layers.iter().map(LayerSpec::param_count).sum();
        if params.len() != expected {
            return Err(NnError::ParamCount { expected, found: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NnError::NonFinite("parameters"));
        }
        Ok(Self { layers, params })
    }

    /// All-zero network with the given layer chain.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        validate_layers(&layers)?;
        let n = layers.iter().map(LayerSpec::param_count).sum();
        Ok(Self { layers, params: vec![0.0; n] })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    fn widest(&self) -> usize {
        self.layers.iter().map(|l| l.output_dim.max(l.input_dim)).max().unwrap_or(0)
    }

    /// Runs inference on one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let mut scratch = Scratch::new(self);
        let out = self.forward_with(input, &mut scratch);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("forward output"));
        }
        Ok(out.to_vec())
    }

    pub(crate) fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::InputDimension { expected: self.input_dim(), found: input.len() });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("input"));
        }
        Ok(())
    }

    /// Forward pass reusing preallocated buffers; returns the output slice.
    pub(crate) fn forward_with<'s>(&self, input: &[f64], scratch: &'s mut Scratch) -> &'s [f64] {
        let Scratch { ping, pong, .. } = scratch;
        ping[..input.len()].copy_from_slice(input);
        let mut offset = 0;
        let mut width = input.len();
        for layer in &self.layers {
            let (src, dst) = (&ping[..width], &mut pong[..layer.output_dim]);
            offset = affine(&self.params, offset, layer, src, dst);
            activate(layer.activation, dst);
            width = layer.output_dim;
            std::mem::swap(ping, pong);
        }
        &ping[..width]
    }

    /// Per-sample loss of the network output against a label.
    pub fn sample_loss(&self, output: &[f64], label: &Label, loss: LossKind) -> Result<f64, NnError> {
        check_label(label, self.output_dim(), loss, self.layers.last().map(|l| l.activation))?;
        Ok(loss_value(output, label, loss))
    }

    /// Mean gradient of the loss over a batch, with respect to all parameters.
    pub fn gradient(&self, batch: &[Sample], loss: LossKind) -> Result<Vec<f64>, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        for s in batch {
            self.check_input(&s.features)?;
            check_label(&s.label, self.output_dim(), loss, self.layers.last().map(|l| l.activation))?;
        }
        let mut grad = vec![0.0; self.param_count()];
        let mut trace = Trace::new(self);
        self.accumulate_gradient(batch.iter(), loss, &mut grad, &mut trace)?;
        Ok(grad)
    }

    /// Writes the mean gradient over `batch` into `grad` (overwritten).
    ///
    /// Inputs and labels are assumed validated.
    pub(crate) fn accumulate_gradient<'a>(
        &self,
        batch: impl ExactSizeIterator<Item = &'a Sample>,
        loss: LossKind,
        grad: &mut [f64],
        trace: &mut Trace,
    ) -> Result<(), NnError> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = batch.len();
        for sample in batch {
            self.backprop_one(sample, loss, grad, trace);
        }
        let scale = 1.0 / n as f64;
        let mut finite = true;
        for g in grad.iter_mut() {
            *g *= scale;
            finite &= g.is_finite();
        }
        if !finite {
            return Err(NnError::NonFinite("gradient"));
        }
        Ok(())
    }

    fn backprop_one(&self, sample: &Sample, loss: LossKind, grad: &mut [f64], trace: &mut Trace) {
        let depth = self.layers.len();
        // activations[0] is the input, activations[l + 1] the output of layer l.
        trace.activations[0].clear();
        trace.activations[0].extend_from_slice(&sample.features);
        let mut offset = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = trace.activations.split_at_mut(l + 1);
            let out = &mut tail[0];
            out.resize(layer.output_dim, 0.0);
            offset = affine(&self.params, offset, layer, &head[l], out);
            activate(layer.activation, out);
        }

        let last = &self.layers[depth - 1];
        let output = &trace.activations[depth];
        let delta = &mut trace.delta;
        delta.resize(last.output_dim, 0.0);
        output_delta(output, &sample.label, loss, last.activation, delta);

        let mut end = self.params.len();
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let start = end - layer.param_count();
            let w_len = layer.input_dim * layer.output_dim;
            let input = &trace.activations[l];
            let (gw, gb) = grad[start..end].split_at_mut(w_len);
            let delta = &trace.delta;
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.input_dim..(o + 1) * layer.input_dim];
                for (g, &x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if l > 0 {
                let w = &self.params[start..start + w_len];
                let prev = &mut trace.prev_delta;
                prev.clear();
                prev.resize(layer.input_dim, 0.0);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * layer.input_dim..(o + 1) * layer.input_dim];
                    for (p, &wv) in prev.iter_mut().zip(row) {
                        *p += wv * d;
                    }
                }
                // Hidden activations are relu or identity (softmax is final-only).
                if self.layers[l - 1].activation == Activation::Relu {
                    for (p, &a) in prev.iter_mut().zip(input) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
                std::mem::swap(&mut trace.delta, &mut trace.prev_delta);
            }
            end = start;
        }
    }
}

/// Initializes weights He-uniform (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`) and biases to zero.
///
/// The result is a pure function of `(layers, seed)`.
pub fn init_network(layers: &[LayerSpec], seed: u64) -> Result<DenseNetwork, NnError> {
    validate_layers(layers)?;
    let mut rng = seed::rng(seed);
    let mut params = Vec::with_capacity(layers.iter().map(LayerSpec::param_count).sum());
    for layer in layers {
        let limit = (6.0 / layer.input_dim as f64).sqrt();
        for _ in 0..layer.input_dim * layer.output_dim {
            params.push(rng.gen_range(-limit..limit));
        }
        params.extend(std::iter::repeat_n(0.0, layer.output_dim));
    }
    Ok(DenseNetwork { layers: layers.to_vec(), params })
}

/// Computes `dst = W src + b` for one layer and returns the offset of the next layer.
fn affine(params: &[f64], offset: usize, layer: &LayerSpec, src: &[f64], dst: &mut [f64]) -> usize {
    let w_len = layer.input_dim * layer.output_dim;
    let w = &params[offset..offset + w_len];
    let b = &params[offset + w_len..offset + w_len + layer.output_dim];
    for (o, out) in dst.iter_mut().enumerate() {
        let row = &w[o * layer.input_dim..(o + 1) * layer.input_dim];
        let mut acc = b[o];
        for (wv, xv) in row.iter().zip(src) {
            acc += wv * xv;
        }
        *out = acc;
    }
    offset + w_len + layer.output_dim
}

fn activate(activation: Activation, values: &mut [f64]) {
    match activation {
        Activation::Identity => {}
        Activation::Relu => values.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Softmax => softmax_in_place(values),
    }
}

/// Numerically stable softmax.
pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    values.iter_mut().for_each(|v| *v /= sum);
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_label(
    label: &Label,
    output_dim: usize,
    loss: LossKind,
    final_activation: Option<Activation>,
) -> Result<(), NnError> {
    if loss == LossKind::CrossEntropy && final_activation != Some(Activation::Softmax) {
        return Err(NnError::LossActivation);
    }
    match label {
        Label::Class(c) if *c >= output_dim => {
            Err(NnError::InvalidLabel(format!("class {c} out of range for {output_dim} outputs")))
        }
        Label::Target(t) if t.len() != output_dim => {
            Err(NnError::InvalidLabel(format!("target length {} does not match {output_dim} outputs", t.len())))
        }
        Label::Target(t) if t.iter().any(|v| !v.is_finite()) => Err(NnError::InvalidLabel("non-finite target".into())),
        _ => Ok(()),
    }
}

fn target_value(label: &Label, i: usize) -> f64 {
    match label {
        Label::Class(c) => f64::from(u8::from(*c == i)),
        Label::Target(t) => t[i],
    }
}

pub(crate) fn loss_value(output: &[f64], label: &Label, loss: LossKind) -> f64 {
    match loss {
        LossKind::CrossEntropy => match label {
            Label::Class(c) => -output[*c].max(PROB_FLOOR).ln(),
            Label::Target(t) => {
                t.iter().zip(output).filter(|(y, _)| **y != 0.0).map(|(y, p)| -y * p.max(PROB_FLOOR).ln()).sum()
            }
        },
        LossKind::Mse => {
            let n = output.len() as f64;
            output.iter().enumerate().map(|(i, p)| (p - target_value(label, i)).powi(2)).sum::<f64>() / n
        }
    }
}

/// Gradient of the per-sample loss with respect to the final pre-activations.
fn output_delta(output: &[f64], label: &Label, loss: LossKind, activation: Activation, delta: &mut [f64]) {
    match loss {
        // Softmax + cross-entropy collapses to p - y (targets sum to one).
        LossKind::CrossEntropy => {
            for (i, d) in delta.iter_mut().enumerate() {
                *d = output[i] - target_value(label, i);
            }
        }
        LossKind::Mse => {
            let n = output.len() as f64;
            for (i, d) in delta.iter_mut().enumerate() {
                *d = 2.0 * (output[i] - target_value(label, i)) / n;
            }
            match activation {
                Activation::Identity => {}
                Activation::Relu => {
                    for (d, &a) in delta.iter_mut().zip(output) {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Softmax => {
                    let dot: f64 = delta.iter().zip(output).map(|(g, p)| g * p).sum();
                    for (d, &p) in delta.iter_mut().zip(output) {
                        *d = p * (*d - dot);
                    }
                }
            }
        }
    }
}

/// Reusable buffers for inference.
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    ping: Vec<f64>,
    pong: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(net: &DenseNetwork) -> Self {
        let w = net.widest();
        Self { ping: vec![0.0; w], pong: vec![0.0; w] }
    }
}

/// Reusable buffers for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    prev_delta: Vec<f64>,
}

impl Trace {
    pub(crate) fn new(net: &DenseNetwork) -> Self {
        let mut activations = vec![Vec::with_capacity(net.input_dim())];
        activations.extend(net.layers.iter().map(|l| Vec::with_capacity(l.output_dim)));
        Self { activations, delta: Vec::new(), prev_delta: Vec::new() }
    }
}
