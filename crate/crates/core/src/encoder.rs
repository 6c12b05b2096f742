//! Small feed-forward encoder producing unit-norm embeddings, with exact backprop.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Pre-normalization vectors shorter than this are rejected.
pub const NORM_FLOOR: f64 = 1e-8;

/// Default layer widths: 40 input features, two hidden layers of 64, 16-d embeddings.
pub const DEFAULT_DIMS: [usize; 4] = [40, 64, 64, 16];

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Elementwise nonlinearity applied after every hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation value.
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::Identity => T::one(),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "identity" => Ok(Self::Identity),
            other => Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Identity => "identity",
        })
    }
}

/// One affine layer `y = W x + b`, `W` stored as outputs x inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams<T> {
    layers: Vec<Layer<T>>,
    activation: Activation,
    id: u64,
}

impl<T: Real> PartialEq for EncoderParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.activation == other.activation
    }
}

impl<T: Real> EncoderParams<T> {
    pub fn new(layers: Vec<Layer<T>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("encoder needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::DimensionMismatch {
                    what: "layer bias",
                    expected: layer.outputs(),
                    found: layer.bias.len(),
                });
            }
            if k > 0 && layers[k - 1].outputs() != layer.inputs() {
                return Err(Error::DimensionMismatch {
                    what: "consecutive layer widths",
                    expected: layers[k - 1].outputs(),
                    found: layer.inputs(),
                });
            }
        }
        if layers.last().map(Layer::outputs).unwrap_or(0) < 2 {
            return Err(Error::InvalidConfig("embedding dimension must be >= 2".into()));
        }
        Ok(Self {
            layers,
            activation,
            id: fresh_id(),
        })
    }

    /// Glorot-uniform weights `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("invalid encoder dims {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                        T::lit(rng.random_range(-a..a))
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Layer widths from input to embedding.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    /// All parameters, layer by layer: weight (row-major) then bias.
    pub fn flatten(&self) -> Vec<T> {
        flatten_layers(&self.layers)
    }

    /// Overwrites all parameters from a vector in [`flatten`](Self::flatten) order.
    /// Invalidates caches from earlier `encode` calls.
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                what: "flat encoder parameters",
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for layer in &mut self.layers {
            for (dst, src) in layer.weight.iter_mut().zip(it.by_ref()) {
                *dst = src;
            }
            for (dst, src) in layer.bias.iter_mut().zip(it.by_ref()) {
                *dst = src;
            }
        }
        self.id = fresh_id();
        Ok(())
    }

    /// Overwrites the parameter at position `index` of [`flatten`](Self::flatten) order.
    pub fn set_param(&mut self, index: usize, value: T) -> Result<()> {
        let mut k = index;
        for layer in &mut self.layers {
            if k < layer.weight.len() {
                let cols = layer.weight.ncols();
                layer.weight[[k / cols, k % cols]] = value;
                self.id = fresh_id();
                return Ok(());
            }
            k -= layer.weight.len();
            if k < layer.bias.len() {
                layer.bias[k] = value;
                self.id = fresh_id();
                return Ok(());
            }
            k -= layer.bias.len();
        }
        Err(Error::DimensionMismatch {
            what: "encoder parameter index",
            expected: self.num_params(),
            found: index,
        })
    }

    /// Forward pass without keeping activations.
    pub fn embed(&self, features: &Array2<T>) -> Result<Array2<T>> {
        self.check_input(features)?;
        let last = self.layers.len() - 1;
        let mut x = features.dot(&self.layers[0].weight.t());
        for (k, layer) in self.layers.iter().enumerate() {
            if k > 0 {
                x = x.dot(&layer.weight.t());
            }
            x += &layer.bias;
            if k < last {
                let act = self.activation;
                x.mapv_inplace(|v| act.apply(v));
            }
        }
        normalize_output(&mut x)?;
        Ok(x)
    }

    fn check_input(&self, features: &Array2<T>) -> Result<()> {
        if features.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "encoder input",
                expected: self.input_dim(),
                found: features.ncols(),
            });
        }
        Ok(())
    }

    /// Maps the rows of `features` (batch x input) to unit-norm embeddings.
    pub fn encode(&self, features: &Array2<T>) -> Result<(Array2<T>, EncoderCache<T>)> {
        self.check_input(features)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = features.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut u = x.dot(&layer.weight.t());
            u += &layer.bias;
            let next = if k < last {
                u.mapv(|v| self.activation.apply(v))
            } else {
                u.clone()
            };
            inputs.push(x);
            pre.push(u);
            x = next;
        }
        let norms = normalize_output(&mut x)?;
        let cache = EncoderCache {
            params_id: self.id,
            inputs,
            pre,
            norms,
            output: x.clone(),
        };
        Ok((x, cache))
    }

    /// Chain rule from a gradient on the embeddings back to every weight, bias and
    /// input feature.
    pub fn backprop(&self, cache: &EncoderCache<T>, grad_embeddings: &Array2<T>) -> Result<EncoderGrads<T>> {
        if cache.params_id != self.id {
            return Err(Error::StaleCache);
        }
        if grad_embeddings.dim() != cache.output.dim() {
            return Err(Error::DimensionMismatch {
                what: "embedding gradient rows",
                expected: cache.output.nrows(),
                found: grad_embeddings.nrows(),
            });
        }
        // through z = u / |u|: dL/du = (g - (g . z) z) / |u|
        let mut delta = grad_embeddings.clone();
        for ((mut g, z), &n) in delta
            .axis_iter_mut(Axis(0))
            .zip(cache.output.axis_iter(Axis(0)))
            .zip(cache.norms.iter())
        {
            let radial = g.dot(&z);
            g.scaled_add(-radial, &z);
            g.mapv_inplace(|v| v / n);
        }
        let mut grads: Vec<Layer<T>> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            grads.push(Layer {
                weight: delta.t().dot(&cache.inputs[k]),
                bias: delta.sum_axis(Axis(0)),
            });
            let mut upstream = delta.dot(&layer.weight);
            if k > 0 {
                let act = self.activation;
                upstream.zip_mut_with(&cache.pre[k - 1], |g, &u| *g *= act.derivative(u));
            }
            delta = upstream;
        }
        grads.reverse();
        Ok(EncoderGrads {
            layers: grads,
            input: delta,
        })
    }
}

/// Normalizes rows in place and returns their original norms.
fn normalize_output<T: Real>(x: &mut Array2<T>) -> Result<Array1<T>> {
    let floor = T::lit(NORM_FLOOR);
    let mut norms = Array1::zeros(x.nrows());
    for (row, mut r) in x.axis_iter_mut(Axis(0)).enumerate() {
        let n = r.dot(&r).sqrt();
        if !(n >= floor) {
            return Err(Error::ZeroNorm { row });
        }
        norms[row] = n;
        r.mapv_inplace(|v| v / n);
    }
    Ok(norms)
}

fn flatten_layers<T: Real>(layers: &[Layer<T>]) -> Vec<T> {
    let mut out = Vec::with_capacity(layers.iter().map(Layer::len).sum());
    for layer in layers {
        out.extend(layer.weight.iter().copied());
        out.extend(layer.bias.iter().copied());
    }
    out
}

/// Activations saved by [`EncoderParams::encode`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    params_id: u64,
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    norms: Array1<T>,
    output: Array2<T>,
}

impl<T: Real> EncoderCache<T> {
    /// Norms of the final layer outputs before normalization.
    pub fn norms(&self) -> &Array1<T> {
        &self.norms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads<T> {
    pub layers: Vec<Layer<T>>,
    pub input: Array2<T>,
}

impl<T: Real> EncoderGrads<T> {
    /// Parameter gradient in [`EncoderParams::flatten`] order.
    pub fn flatten(&self) -> Vec<T> {
        flatten_layers(&self.layers)
    }
}
