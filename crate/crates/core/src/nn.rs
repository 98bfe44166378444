//! Minimal feed-forward network engine: dense and 2-D convolution layers
//! over flat parameter vectors, with explicit backpropagation.
//!
//! A 1-D convolution is a 2-D one over a `1 x L` grid with a `1 x k` kernel.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::tensor::{gemm, Matrix};
use crate::{rng, Error, Result};

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => libm::tanh(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given both the pre-activation and the activated value.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if pre > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Sigmoid => post * (1.0 - post),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Channel-major activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn flat(len: usize) -> Self {
        Self {
            channels: 1,
            height: 1,
            width: len,
        }
    }

    pub const fn grid(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn size(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LayerSpec {
    /// Fully connected; flattens its input.
    Dense { units: usize, activation: Activation },
    Conv {
        channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn activation(&self) -> Activation {
        match self {
            LayerSpec::Dense { activation, .. } | LayerSpec::Conv { activation, .. } => *activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Architecture {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Dense stack `input -> hidden... -> output`.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        output: usize,
        output_activation: Activation,
    ) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&units| LayerSpec::Dense {
                units,
                activation: hidden_activation,
            })
            .collect();
        layers.push(LayerSpec::Dense {
            units: output,
            activation: output_activation,
        });
        Self {
            input: Shape::flat(input),
            layers,
        }
    }

    /// Output shape of every layer, validating the descriptor on the way.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.input.size() == 0 {
            return Err(invalid("input shape must be non-empty"));
        }
        if self.layers.is_empty() {
            return Err(invalid("at least one layer is required"));
        }
        let mut current = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            current = match *layer {
                LayerSpec::Dense { units, .. } => {
                    if units == 0 {
                        return Err(invalid("dense layer needs at least one unit"));
                    }
                    Shape::flat(units)
                }
                LayerSpec::Conv {
                    channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    if channels == 0 || kernel.contains(&0) || stride.contains(&0) {
                        return Err(invalid("convolution sizes must be positive"));
                    }
                    let h = current.height + 2 * padding[0];
                    let w = current.width + 2 * padding[1];
                    if h < kernel[0] || w < kernel[1] {
                        return Err(invalid("convolution kernel larger than its input"));
                    }
                    Shape::grid(
                        channels,
                        (h - kernel[0]) / stride[0] + 1,
                        (w - kernel[1]) / stride[1] + 1,
                    )
                }
            };
            out.push(current);
        }
        Ok(out)
    }

    pub fn layout(&self) -> Result<Vec<LayoutEntry>> {
        let shapes = self.shapes()?;
        let mut input = self.input;
        let mut layout = Vec::with_capacity(2 * self.layers.len());
        for (i, (layer, out)) in self.layers.iter().zip(&shapes).enumerate() {
            let (weight, bias) = match *layer {
                LayerSpec::Dense { units, .. } => (vec![units, input.size()], units),
                LayerSpec::Conv { channels, kernel, .. } => {
                    (vec![channels, input.channels, kernel[0], kernel[1]], channels)
                }
            };
            layout.push(LayoutEntry::new(format!("layer{i}.weight"), weight));
            layout.push(LayoutEntry::new(format!("layer{i}.bias"), vec![bias]));
            input = *out;
        }
        Ok(layout)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layout()?.iter().map(LayoutEntry::len).sum())
    }

    pub fn input_size(&self) -> usize {
        self.input.size()
    }

    pub fn output_size(&self) -> Result<usize> {
        Ok(self.shapes()?.last().map(Shape::size).unwrap_or(0))
    }
}

fn invalid(reason: &str) -> Error {
    Error::InvalidConfig {
        key: "architecture",
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Role {
    Generator,
    Discriminator,
    Encoder,
    Decoder,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn new(name: String, shape: Vec<usize>) -> Self {
        Self { name, shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector plus the layer layout that gives it meaning.
///
/// Invariants: the layout element counts sum to `values.len()` and every value
/// is finite.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelParams {
    values: Vec<f64>,
    layout: Vec<LayoutEntry>,
    role: Role,
}

impl ModelParams {
    pub fn new(values: Vec<f64>, layout: Vec<LayoutEntry>, role: Role) -> Result<Self> {
        let expected: usize = layout.iter().map(LayoutEntry::len).sum();
        if expected != values.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter layout",
                expected,
                actual: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { values, layout, role })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.layout == other.layout && self.role == other.role
    }

    /// Replaces the values, keeping the layout. Rejects wrong length or non-finite input.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone(), self.role)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
pub fn init_model(arch: &Architecture, role: Role, seed: u64) -> Result<ModelParams> {
    let shapes = arch.shapes()?;
    let layout = arch.layout()?;
    let mut rng = rng::stream(seed, rng::Purpose::Init, role as u64);
    let mut values = Vec::with_capacity(layout.iter().map(LayoutEntry::len).sum());
    let mut input = arch.input;
    for (layer, out) in arch.layers.iter().zip(&shapes) {
        let (fan_in, fan_out, weights, biases) = match *layer {
            LayerSpec::Dense { units, .. } => (input.size(), units, units * input.size(), units),
            LayerSpec::Conv { channels, kernel, .. } => {
                let area = kernel[0] * kernel[1];
                (
                    input.channels * area,
                    channels * area,
                    channels * input.channels * area,
                    channels,
                )
            }
        };
        let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        values.extend((0..weights).map(|_| rng.random_range(-bound..bound)));
        values.extend(core::iter::repeat_n(0.0, biases));
        input = *out;
    }
    ModelParams::new(values, layout, role)
}

#[derive(Debug, Clone)]
struct Compiled {
    spec: LayerSpec,
    input: Shape,
    output: Shape,
    weight_offset: usize,
    weight_len: usize,
    bias_offset: usize,
}

/// An [`Architecture`] with precomputed shapes and parameter offsets.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    layers: Vec<Compiled>,
    param_count: usize,
}

/// Activations recorded by a forward pass, needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("trace always holds the input")
    }

    pub fn into_output(mut self) -> Matrix {
        self.acts.pop().expect("trace always holds the input")
    }

    pub fn input(&self) -> &Matrix {
        &self.acts[0]
    }

    /// Pre-activation of the last layer.
    pub fn output_pre(&self) -> &Matrix {
        self.pre.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Option<Matrix>,
}

impl Network {
    pub fn new(arch: Architecture) -> Result<Self> {
        let shapes = arch.shapes()?;
        let mut layers = Vec::with_capacity(shapes.len());
        let mut input = arch.input;
        let mut offset = 0;
        for (spec, &output) in arch.layers.iter().zip(&shapes) {
            let (weight_len, bias_len) = match *spec {
                LayerSpec::Dense { units, .. } => (units * input.size(), units),
                LayerSpec::Conv { channels, kernel, .. } => {
                    (channels * input.channels * kernel[0] * kernel[1], channels)
                }
            };
            layers.push(Compiled {
                spec: spec.clone(),
                input,
                output,
                weight_offset: offset,
                weight_len,
                bias_offset: offset + weight_len,
            });
            offset += weight_len + bias_len;
            input = output;
        }
        Ok(Self {
            arch,
            layers,
            param_count: offset,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn input_size(&self) -> usize {
        self.arch.input.size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(|l| l.output.size()).unwrap_or(0)
    }

    fn check(&self, params: &ModelParams, x: &Matrix) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::DimensionMismatch {
                context: "network parameters",
                expected: self.param_count,
                actual: params.len(),
            });
        }
        if x.cols() != self.input_size() {
            return Err(Error::DimensionMismatch {
                context: "network input width",
                expected: self.input_size(),
                actual: x.cols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &ModelParams, x: &Matrix) -> Result<Trace> {
        self.check(params, x)?;
        let p = params.values();
        let batch = x.rows();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for layer in &self.layers {
            let input = acts.last().expect("non-empty");
            let w = &p[layer.weight_offset..layer.weight_offset + layer.weight_len];
            let bias = &p[layer.bias_offset..layer.bias_offset + bias_len(layer)];
            let mut z = Matrix::zeros(batch, layer.output.size());
            match layer.spec {
                LayerSpec::Dense { units, .. } => {
                    let n_in = layer.input.size();
                    gemm(
                        batch,
                        n_in,
                        units,
                        1.0,
                        (input.as_slice(), n_in as isize, 1),
                        (w, 1, n_in as isize),
                        0.0,
                        (z.as_mut_slice(), units as isize, 1),
                    );
                    for r in 0..batch {
                        for (v, b) in z.row_mut(r).iter_mut().zip(bias) {
                            *v += b;
                        }
                    }
                }
                LayerSpec::Conv { .. } => {
                    let geo = ConvGeometry::new(layer);
                    let mut col = vec![0.0; geo.k * geo.p];
                    for r in 0..batch {
                        geo.im2col(input.row(r), &mut col);
                        let out = z.row_mut(r);
                        gemm(
                            geo.c_out,
                            geo.k,
                            geo.p,
                            1.0,
                            (w, geo.k as isize, 1),
                            (&col, geo.p as isize, 1),
                            0.0,
                            (out, geo.p as isize, 1),
                        );
                        for (co, b) in bias.iter().enumerate() {
                            for v in &mut out[co * geo.p..(co + 1) * geo.p] {
                                *v += b;
                            }
                        }
                    }
                }
            }
            let act = layer.spec.activation();
            let mut a = z.clone();
            if act != Activation::Identity {
                a.map_inplace(|v| act.apply(v));
            }
            pre.push(z);
            acts.push(a);
        }
        Ok(Trace { acts, pre })
    }

    pub fn predict(&self, params: &ModelParams, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(params, x)?.into_output())
    }

    /// Backpropagates `grad_out` (dL/d output, same shape as the output).
    pub fn backward(
        &self,
        params: &ModelParams,
        trace: &Trace,
        grad_out: &Matrix,
        need_input_grad: bool,
    ) -> Result<Gradients> {
        self.backward_impl(params, trace, grad_out, need_input_grad, false)
    }

    /// Like [`Network::backward`], but `grad_pre` is taken with respect to the
    /// last layer's pre-activation, skipping its activation function.
    pub fn backward_from_pre(
        &self,
        params: &ModelParams,
        trace: &Trace,
        grad_pre: &Matrix,
        need_input_grad: bool,
    ) -> Result<Gradients> {
        self.backward_impl(params, trace, grad_pre, need_input_grad, true)
    }

    fn backward_impl(
        &self,
        params: &ModelParams,
        trace: &Trace,
        grad_out: &Matrix,
        need_input_grad: bool,
        from_pre: bool,
    ) -> Result<Gradients> {
        if grad_out.rows() != trace.output().rows() || grad_out.cols() != self.output_size() {
            return Err(Error::DimensionMismatch {
                context: "output gradient",
                expected: trace.output().rows() * self.output_size(),
                actual: grad_out.rows() * grad_out.cols(),
            });
        }
        let p = params.values();
        let batch = grad_out.rows();
        let mut grads = vec![0.0; self.param_count];
        let mut upstream = grad_out.clone();
        let mut input_grad = None;
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.spec.activation();
            let z = &trace.pre[idx];
            let a = &trace.acts[idx + 1];
            let input = &trace.acts[idx];
            let mut delta = upstream;
            let skip = from_pre && idx + 1 == self.layers.len();
            if act != Activation::Identity && !skip {
                for ((d, &zv), &av) in delta.as_mut_slice().iter_mut().zip(z.as_slice()).zip(a.as_slice()) {
                    *d *= act.derivative(zv, av);
                }
            }
            let want_dx = idx > 0 || need_input_grad;
            let w = &p[layer.weight_offset..layer.weight_offset + layer.weight_len];
            let (gw, gb) = grads[layer.weight_offset..].split_at_mut(layer.weight_len);
            let gb = &mut gb[..bias_len(layer)];
            let mut dx = Matrix::zeros(batch, layer.input.size());
            match layer.spec {
                LayerSpec::Dense { units, .. } => {
                    let n_in = layer.input.size();
                    gemm(
                        units,
                        batch,
                        n_in,
                        1.0,
                        (delta.as_slice(), 1, units as isize),
                        (input.as_slice(), n_in as isize, 1),
                        0.0,
                        (gw, n_in as isize, 1),
                    );
                    for r in 0..batch {
                        for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                            *g += d;
                        }
                    }
                    if want_dx {
                        gemm(
                            batch,
                            units,
                            n_in,
                            1.0,
                            (delta.as_slice(), units as isize, 1),
                            (w, n_in as isize, 1),
                            0.0,
                            (dx.as_mut_slice(), n_in as isize, 1),
                        );
                    }
                }
                LayerSpec::Conv { .. } => {
                    let geo = ConvGeometry::new(layer);
                    let mut col = vec![0.0; geo.k * geo.p];
                    let mut dcol = vec![0.0; geo.k * geo.p];
                    for r in 0..batch {
                        geo.im2col(input.row(r), &mut col);
                        let d = delta.row(r);
                        gemm(
                            geo.c_out,
                            geo.p,
                            geo.k,
                            1.0,
                            (d, geo.p as isize, 1),
                            (&col, 1, geo.p as isize),
                            1.0,
                            (&mut *gw, geo.k as isize, 1),
                        );
                        for (co, g) in gb.iter_mut().enumerate() {
                            *g += d[co * geo.p..(co + 1) * geo.p].iter().sum::<f64>();
                        }
                        if want_dx {
                            gemm(
                                geo.k,
                                geo.c_out,
                                geo.p,
                                1.0,
                                (w, 1, geo.k as isize),
                                (d, geo.p as isize, 1),
                                0.0,
                                (&mut dcol, geo.p as isize, 1),
                            );
                            geo.col2im(&dcol, dx.row_mut(r));
                        }
                    }
                }
            }
            if idx == 0 && need_input_grad {
                input_grad = Some(dx);
                break;
            }
            upstream = dx;
        }
        Ok(Gradients {
            params: grads,
            input: input_grad,
        })
    }
}

fn bias_len(layer: &Compiled) -> usize {
    match layer.spec {
        LayerSpec::Dense { units, .. } => units,
        LayerSpec::Conv { channels, .. } => channels,
    }
}

struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
    /// rows of the unfolded input
    k: usize,
    /// output positions
    p: usize,
}

impl ConvGeometry {
    fn new(layer: &Compiled) -> Self {
        let LayerSpec::Conv {
            channels,
            kernel,
            stride,
            padding,
            ..
        } = layer.spec
        else {
            unreachable!("geometry of a dense layer")
        };
        let c_in = layer.input.channels;
        Self {
            c_in,
            h: layer.input.height,
            w: layer.input.width,
            c_out: channels,
            kh: kernel[0],
            kw: kernel[1],
            sh: stride[0],
            sw: stride[1],
            ph: padding[0],
            pw: padding[1],
            oh: layer.output.height,
            ow: layer.output.width,
            k: c_in * kernel[0] * kernel[1],
            p: layer.output.height * layer.output.width,
        }
    }

    /// Source index in the input for unfolded row `kk` and output position `(oy, ox)`.
    #[inline]
    fn source(&self, c: usize, i: usize, j: usize, oy: usize, ox: usize) -> Option<usize> {
        let y = (oy * self.sh + i).checked_sub(self.ph)?;
        let x = (ox * self.sw + j).checked_sub(self.pw)?;
        (y < self.h && x < self.w).then(|| (c * self.h + y) * self.w + x)
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        for c in 0..self.c_in {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * self.p;
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            col[row + oy * self.ow + ox] = self.source(c, i, j, oy, ox).map_or(0.0, |s| x[s]);
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        for c in 0..self.c_in {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * self.p;
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some(s) = self.source(c, i, j, oy, ox) {
                                dx[s] += col[row + oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_difference_check(arch: Architecture, seed: u64) {
        let net = Network::new(arch.clone()).unwrap();
        let params = init_model(&arch, Role::Classifier, seed).unwrap();
        let mut rng = rng::stream(seed, rng::Purpose::Data, 0);
        let x = Matrix::from_vec(
            3,
            net.input_size(),
            (0..3 * net.input_size()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let weights: Vec<f64> = (0..3 * net.output_size())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        // loss = sum(weights * output)
        let loss = |p: &ModelParams, x: &Matrix| -> f64 {
            let y = net.predict(p, x).unwrap();
            y.as_slice().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let trace = net.forward(&params, &x).unwrap();
        let g = Matrix::from_vec(3, net.output_size(), weights.clone()).unwrap();
        let grads = net.backward(&params, &trace, &g, true).unwrap();
        let h = 1e-6;
        for i in (0..params.len()).step_by(7) {
            let mut plus = params.values().to_vec();
            plus[i] += h;
            let mut minus = params.values().to_vec();
            minus[i] -= h;
            let fd = (loss(&params.with_values(plus).unwrap(), &x) - loss(&params.with_values(minus).unwrap(), &x))
                / (2.0 * h);
            let an = grads.params[i];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {i}: fd {fd} analytic {an}"
            );
        }
        let dx = grads.input.unwrap();
        for i in (0..x.as_slice().len()).step_by(5) {
            let mut plus = x.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = x.clone();
            minus.as_mut_slice()[i] -= h;
            let fd = (loss(&params, &plus) - loss(&params, &minus)) / (2.0 * h);
            assert!((fd - dx.as_slice()[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn dense_backprop_matches_finite_differences() {
        finite_difference_check(
            Architecture::mlp(6, &[5, 4], Activation::Tanh, 3, Activation::Sigmoid),
            3,
        );
    }

    #[test]
    fn conv_backprop_matches_finite_differences() {
        let arch = Architecture {
            input: Shape::grid(1, 6, 6),
            layers: vec![
                LayerSpec::Conv {
                    channels: 3,
                    kernel: [3, 3],
                    stride: [2, 2],
                    padding: [1, 1],
                    activation: Activation::Tanh,
                },
                LayerSpec::Conv {
                    channels: 2,
                    kernel: [1, 3],
                    stride: [1, 1],
                    padding: [0, 1],
                    activation: Activation::Sigmoid,
                },
                LayerSpec::Dense {
                    units: 2,
                    activation: Activation::Identity,
                },
            ],
        };
        finite_difference_check(arch, 11);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let arch = Architecture::mlp(4, &[3], Activation::Relu, 2, Activation::Identity);
        let a = init_model(&arch, Role::Generator, 1).unwrap();
        let b = init_model(&arch, Role::Generator, 1).unwrap();
        let c = init_model(&arch, Role::Generator, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values(), c.values());
        assert_eq!(a.len(), arch.param_count().unwrap());
        assert_eq!(a.len(), 4 * 3 + 3 + 3 * 2 + 2);
    }

    #[test]
    fn invalid_descriptors_are_rejected() {
        let arch = Architecture::mlp(4, &[0], Activation::Relu, 2, Activation::Identity);
        assert!(init_model(&arch, Role::Generator, 1).is_err());
        let conv = Architecture {
            input: Shape::grid(1, 2, 2),
            layers: vec![LayerSpec::Conv {
                channels: 1,
                kernel: [3, 3],
                stride: [1, 1],
                padding: [0, 0],
                activation: Activation::Relu,
            }],
        };
        assert!(Network::new(conv).is_err());
    }

    #[test]
    fn params_reject_layout_mismatch_and_nan() {
        let layout = vec![LayoutEntry::new("w".into(), vec![2])];
        assert!(ModelParams::new(vec![1.0], layout.clone(), Role::Encoder).is_err());
        assert!(ModelParams::new(vec![1.0, f64::NAN], layout, Role::Encoder).is_err());
    }
}
