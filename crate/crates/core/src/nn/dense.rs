use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn fresh_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative at `z`. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully connected layer computing `activation(W a + b)`, with `W` stored out x in.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    biases: Array1<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, biases: Array1<f64>, activation: Activation) -> Result<Self> {
        check_len("layer biases", weights.nrows(), biases.len())?;
        if weights.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            biases,
            activation,
        })
    }

    /// Zero-bias layer with He-style uniform weights: `U(-sqrt(k/fan_in), sqrt(k/fan_in))`
    /// where `k = 6` for ReLU and `k = 3` for linear outputs.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let gain = match activation {
            Activation::Relu => 6.0,
            Activation::Identity => 3.0,
        };
        let limit = (gain / inputs.max(1) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-limit..limit));
        Self {
            weights,
            biases: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Feed-forward stack of dense layers.
///
/// Every parameter change assigns a new revision; traces remember the revision
/// they were produced under so `backward` can refuse stale ones.
#[derive(Clone, Debug)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
    revision: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_len("layer chaining", pair[0].output_dim(), pair[1].input_dim())?;
        }
        Ok(Self {
            layers,
            revision: fresh_revision(),
        })
    }

    /// Randomly initialized net with the given layer widths, `dims[0]` being the input.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need input and output widths");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| DenseLayer::init(w[0], w[1], if k == last { output } else { hidden }, rng))
            .collect();
        Self {
            layers,
            revision: fresh_revision(),
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::output_dim))
            .collect()
    }

    /// Parameter slices in declaration order: for each layer, weights (row-major) then biases.
    pub fn parameters(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.biases.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.revision = fresh_revision();
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.biases.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<ActivationTrace> {
        check_len("network input", self.input_dim(), input.len())?;
        let batch = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        self.forward_batch(batch)
    }

    /// Forward pass over a batch, one sample per row.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<ActivationTrace> {
        check_len("network input", self.input_dim(), inputs.ncols())?;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut a = inputs.as_standard_layout().into_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.biases;
            let act = layer.activation;
            let post = z.mapv(|v| act.apply(v));
            layer_inputs.push(a);
            pre_activations.push(z);
            a = post;
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(ActivationTrace {
            revision: self.revision,
            dims: self.dims(),
            layer_inputs,
            pre_activations,
            output: a,
        })
    }

    /// Output only, for a single sample.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.output().to_vec())
    }

    fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        if trace.dims != self.dims() {
            return Err(Error::StaleTrace(format!(
                "trace layer widths {:?} vs network {:?}",
                trace.dims,
                self.dims()
            )));
        }
        if trace.revision != self.revision {
            return Err(Error::StaleTrace("parameters changed since the forward pass".into()));
        }
        Ok(())
    }

    /// Gradients of `sum(output_gradient . output)` with respect to all parameters and the input.
    pub fn backward(&self, trace: &ActivationTrace, output_gradient: &[f64]) -> Result<Gradients> {
        let batch = trace.batch_size();
        check_len("output gradient", batch * self.output_dim(), output_gradient.len())?;
        let grad = ArrayView2::from_shape((batch, self.output_dim()), output_gradient).expect("checked");
        let mut params = NetGradients::zeros_for(self);
        let input = self
            .accumulate_gradients(trace, grad, &mut params, true)?
            .expect("input gradient requested");
        Ok(Gradients {
            params,
            input: input.into_raw_vec_and_offset().0,
        })
    }

    /// Adds parameter gradients (summed over the batch) into `acc`. Returns the
    /// input gradient when `want_input` is set.
    pub fn accumulate_gradients(
        &self,
        trace: &ActivationTrace,
        output_gradient: ArrayView2<f64>,
        acc: &mut NetGradients,
        want_input: bool,
    ) -> Result<Option<Array2<f64>>> {
        self.check_trace(trace)?;
        check_len("output gradient rows", trace.batch_size(), output_gradient.nrows())?;
        check_len("output gradient cols", self.output_dim(), output_gradient.ncols())?;
        check_len("gradient accumulator", self.layers.len(), acc.weights.len())?;
        let mut delta = output_gradient.to_owned();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            if act != Activation::Identity {
                delta.zip_mut_with(&trace.pre_activations[k], |d, &z| *d *= act.derivative(z));
            }
            acc.weights[k] += &delta.t().dot(&trace.layer_inputs[k]);
            acc.biases[k] += &delta.sum_axis(Axis(0));
            if k > 0 || want_input {
                delta = delta.dot(&layer.weights);
            }
        }
        Ok(want_input.then_some(delta))
    }
}

/// Per-layer intermediates of a forward pass, retained for backward and LRP.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    revision: u64,
    dims: Vec<usize>,
    layer_inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ActivationTrace {
    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }

    /// Network output, row-major `batch x output_dim`.
    pub fn output(&self) -> &[f64] {
        self.output.as_slice().expect("standard layout")
    }

    pub fn output_matrix(&self) -> &Array2<f64> {
        &self.output
    }

    /// Activations feeding layer `k` (the network input for `k = 0`).
    pub fn layer_input(&self, k: usize) -> &Array2<f64> {
        &self.layer_inputs[k]
    }

    pub fn pre_activation(&self, k: usize) -> &Array2<f64> {
        &self.pre_activations[k]
    }

    pub fn layer_count(&self) -> usize {
        self.layer_inputs.len()
    }
}

/// Parameter gradients shaped like a [`DenseNet`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl NetGradients {
    pub fn zeros_for(net: &DenseNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.biases.len())).collect(),
        }
    }

    /// Same ordering as [`DenseNet::parameters`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice().expect("standard layout"), b.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        for b in &mut self.biases {
            *b *= factor;
        }
    }

    pub fn fill_zero(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: NetGradients,
    /// Row-major `batch x input_dim`.
    pub input: Vec<f64>,
}
