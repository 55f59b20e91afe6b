//! Layer compositions built from graph primitives: convolution blocks with
//! optional batch normalization and an activation, and a dense head.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Graph, Mode, ParamId, ParamKind, ParamStore, Real, Tensor, Var};

/// Leaky-ReLU slope used throughout the networks.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Conv,
    Transpose,
}

/// Geometry and options of one block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockSpec {
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub batch_norm: bool,
    pub activation: Activation,
}

impl BlockSpec {
    /// 4×4, stride 2, pad 1: halves (or, transposed, doubles) both extents.
    pub fn down(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: ConvKind::Conv,
            in_channels,
            out_channels,
            kernel: 4,
            stride: 2,
            pad: 1,
            batch_norm: true,
            activation: Activation::LeakyRelu(LEAKY_SLOPE),
        }
    }

    /// 3×3, stride 1, pad 1: keeps both extents.
    pub fn same(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel: 3,
            stride: 1,
            ..Self::down(in_channels, out_channels)
        }
    }

    pub fn transposed(mut self) -> Self {
        self.kind = ConvKind::Transpose;
        self
    }

    pub fn without_norm(mut self) -> Self {
        self.batch_norm = false;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.stride, self.pad)
    }

    /// Output `(H, W)` for an `(h, w)` input, or `None` if the input is too small.
    pub fn output_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let geo = self.geometry();
        match self.kind {
            ConvKind::Conv => Some((geo.conv_out(h, self.kernel)?, geo.conv_out(w, self.kernel)?)),
            ConvKind::Transpose => Some((geo.transpose_out(h, self.kernel)?, geo.transpose_out(w, self.kernel)?)),
        }
    }

    /// Number of input values feeding each output value, used for He scaling.
    /// For a transposed convolution each output sees `kernel / stride` taps
    /// per axis.
    pub fn fan_in(&self) -> usize {
        let taps = match self.kind {
            ConvKind::Conv => self.kernel * self.kernel,
            ConvKind::Transpose => (self.kernel / self.stride).max(1).pow(2),
        };
        self.in_channels * taps
    }

    pub fn num_weights(&self) -> usize {
        let conv = self.in_channels * self.out_channels * self.kernel * self.kernel + self.out_channels;
        conv + if self.batch_norm { 2 * self.out_channels } else { 0 }
    }
}

/// Seeded parameter initializer: He-uniform weights, zero biases, unit
/// batch-norm scale and zero shift.
#[derive(Clone, Debug)]
pub struct InitSpec {
    rng: ChaCha8Rng,
}

impl InitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Initializer for the `stream`-th network derived from one seed.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn he_uniform<T: Real>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        Tensor::from_fn(shape.to_vec(), |_| T::c(dist.sample(&mut self.rng)))
    }
}

#[derive(Clone, Copy, Debug)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

/// Convolution (or transposed convolution), optional batch norm, activation.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub spec: BlockSpec,
    weight: ParamId,
    bias: ParamId,
    bn: Option<BnIds>,
}

impl ConvBlock {
    /// Registers the block's tensors in `store` under `prefix` (`prefix.w`,
    /// `prefix.b`, `prefix.bn.gamma`, ...).
    pub fn build<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: BlockSpec,
        init: &mut InitSpec,
    ) -> Result<Self> {
        if spec.in_channels == 0 || spec.out_channels == 0 || spec.kernel == 0 || spec.stride == 0 {
            return Err(Error::InvalidArgument(format!("degenerate block spec {spec:?}")));
        }
        let (i, o, k) = (spec.in_channels, spec.out_channels, spec.kernel);
        let shape = match spec.kind {
            ConvKind::Conv => [o, i, k, k],
            ConvKind::Transpose => [i, o, k, k],
        };
        let weight = store.add(
            format!("{prefix}.w"),
            init.he_uniform(&shape, spec.fan_in()),
            ParamKind::Weight,
        );
        let bias = store.add(format!("{prefix}.b"), Tensor::zeros([o]), ParamKind::Weight);
        let bn = spec.batch_norm.then(|| BnIds {
            gamma: store.add(format!("{prefix}.bn.gamma"), Tensor::ones([o]), ParamKind::Weight),
            beta: store.add(format!("{prefix}.bn.beta"), Tensor::zeros([o]), ParamKind::Weight),
            mean: store.add(format!("{prefix}.bn.mean"), Tensor::zeros([o]), ParamKind::Buffer),
            var: store.add(format!("{prefix}.bn.var"), Tensor::ones([o]), ParamKind::Buffer),
        });
        Ok(Self { spec, weight, bias, bn })
    }

    /// conv → (batch norm) → activation. Train mode updates the running
    /// statistics held in `store`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let geo = self.spec.geometry();
        let mut y = match self.spec.kind {
            ConvKind::Conv => g.conv2d(x, w, Some(b), geo)?,
            ConvKind::Transpose => g.conv_transpose2d(x, w, Some(b), geo)?,
        };
        if let Some(bn) = self.bn {
            let gamma = g.param(store, bn.gamma);
            let beta = g.param(store, bn.beta);
            let stats = store.running_stats(bn.mean, bn.var, BN_MOMENTUM);
            y = g.batch_norm(y, gamma, beta, stats, mode)?;
        }
        Ok(match self.spec.activation {
            Activation::LeakyRelu(s) => g.leaky_relu(y, T::c(s)),
            Activation::Sigmoid => g.sigmoid(y),
            Activation::None => y,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }
}

/// Affine layer `x·W + b` with `W: [inputs, outputs]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    pub fn build<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        init: &mut InitSpec,
    ) -> Self {
        let weight = store.add(
            format!("{prefix}.w"),
            init.he_uniform(&[inputs, outputs], inputs),
            ParamKind::Weight,
        );
        let bias = store.add(format!("{prefix}.b"), Tensor::zeros([outputs]), ParamKind::Weight);
        Self {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }

    pub fn num_weights(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }
}
