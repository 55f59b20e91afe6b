//! The three network archetypes: generators, domain discriminators and the
//! style discriminator, plus the domain-sample representation they consume.

mod sample;

pub use sample::{grid_to_tensor, stack_grids, tensor_to_grid, DomainSample, Reconstruction, FREQ_BINS};

use crate::error::{Error, Result};
use crate::nn::{Activation, BlockSpec, ConvBlock, Dense, InitSpec};
use crate::tensor::{Graph, Mode, ParamStore, Real, Tensor, Var};

/// Shortest time extent any network accepts.
pub const MIN_FRAMES: usize = 8;
/// Time extents are padded to a multiple of this before the generator runs.
pub const TIME_MULTIPLE: usize = 8;

/// The two voice styles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StyleLabel {
    A,
    B,
}

impl StyleLabel {
    /// `A = [1, 0]`, `B = [0, 1]`.
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            StyleLabel::A => [1.0, 0.0],
            StyleLabel::B => [0.0, 1.0],
        }
    }

    pub fn index(self) -> usize {
        match self {
            StyleLabel::A => 0,
            StyleLabel::B => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            StyleLabel::A => StyleLabel::B,
            StyleLabel::B => StyleLabel::A,
        }
    }

    /// `[n, 2]` tensor of one-hot rows.
    pub fn batch<T: Real>(self, n: usize) -> Tensor<T> {
        let row = self.one_hot();
        Tensor::from_fn([n, 2], |i| T::c(row[i % 2]))
    }
}

fn check_input<T: Real>(g: &Graph<T>, x: Var) -> Result<[usize; 4]> {
    let dims = g.value(x).dims4()?;
    if dims[1] != 1 {
        return Err(Error::Shape(format!("expected one input channel, got {:?}", dims)));
    }
    if dims[3] < MIN_FRAMES {
        return Err(Error::Shape(format!(
            "time extent {} is below the minimum of {MIN_FRAMES}",
            dims[3]
        )));
    }
    Ok(dims)
}

fn build_stack<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    tag: &str,
    specs: &[BlockSpec],
    init: &mut InitSpec,
) -> Result<Vec<ConvBlock>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, &s)| ConvBlock::build(store, &format!("{prefix}.{tag}{}", i + 1), s, init))
        .collect()
}

/// Anything mapping a `[N, 1, F, T]` spectrogram batch to the same shape.
pub trait Transform<T: Real> {
    fn transform(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var>;
}

/// Encoder-decoder generator mapping one style's spectrogram to the other's.
#[derive(Clone, Debug)]
pub struct Generator<T: Real> {
    pub store: ParamStore<T>,
    encoder: Vec<ConvBlock>,
    decoder: Vec<ConvBlock>,
}

impl<T: Real> Generator<T> {
    pub fn encoder_specs() -> Vec<BlockSpec> {
        vec![
            BlockSpec::down(1, 32),
            BlockSpec::down(32, 64),
            BlockSpec::down(64, 128),
            BlockSpec::same(128, 128),
            BlockSpec::same(128, 128),
            BlockSpec::same(128, 128),
        ]
    }

    pub fn decoder_specs() -> Vec<BlockSpec> {
        vec![
            BlockSpec::same(128, 128).transposed(),
            BlockSpec::same(128, 128).transposed(),
            BlockSpec::same(128, 128).transposed(),
            BlockSpec::down(128, 64).transposed(),
            BlockSpec::down(64, 32).transposed(),
            BlockSpec::down(32, 1)
                .transposed()
                .without_norm()
                .with_activation(Activation::Sigmoid),
        ]
    }

    pub fn new(prefix: &str, init: &mut InitSpec) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = build_stack(&mut store, prefix, "enc", &Self::encoder_specs(), init)?;
        let decoder = build_stack(&mut store, prefix, "dec", &Self::decoder_specs(), init)?;
        Ok(Self {
            store,
            encoder,
            decoder,
        })
    }

    /// `[N, 1, F, T] -> [N, 1, F, T]` with `F` a multiple of 8 and `T ≥ 8`.
    /// The time axis is edge-padded to a multiple of 8 and cropped back.
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let [_, _, f, t] = check_input(g, x)?;
        if f % TIME_MULTIPLE != 0 {
            return Err(Error::Shape(format!("frequency extent {f} is not a multiple of 8")));
        }
        let padded = t.div_ceil(TIME_MULTIPLE) * TIME_MULTIPLE;
        let mut h = if padded == t { x } else { g.pad_time_edge(x, padded)? };
        for block in self.encoder.iter().chain(&self.decoder) {
            h = block.forward(g, &mut self.store, h, mode)?;
        }
        if padded == t {
            Ok(h)
        } else {
            g.crop_time(h, t)
        }
    }
}

impl<T: Real> Generator<T> {
    /// Eval-mode conversion of one full-length sample's normalized magnitude.
    pub fn convert(&mut self, sample: &DomainSample) -> Result<crate::dsp::Grid> {
        let mut g = Graph::new();
        let x = g.constant(sample.to_tensor());
        let y = self.forward(&mut g, x, Mode::Eval)?;
        tensor_to_grid(g.value(y), 0)
    }
}

impl<T: Real> Transform<T> for Generator<T> {
    fn transform(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        self.forward(g, x, mode)
    }
}

/// Convolution stack shared by the domain and style discriminators.
#[derive(Clone, Debug)]
struct Backbone {
    blocks: Vec<ConvBlock>,
}

/// Layers (1-based) whose activations feed the feature loss.
pub const FEATURE_TAPS: [usize; 3] = [2, 4, 6];

impl Backbone {
    fn specs() -> Vec<BlockSpec> {
        vec![
            BlockSpec::down(1, 32).without_norm(),
            BlockSpec::down(32, 64),
            BlockSpec::down(64, 128),
            BlockSpec::same(128, 128),
            BlockSpec::same(128, 128),
            BlockSpec::same(128, 128),
            BlockSpec::same(128, 128),
        ]
    }

    fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, init: &mut InitSpec) -> Result<Self> {
        Ok(Self {
            blocks: build_stack(store, prefix, "conv", &Self::specs(), init)?,
        })
    }

    /// Pooled `[N, 128]` summary plus pooled feature taps.
    fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<Var>)> {
        check_input(g, x)?;
        let mut h = x;
        let mut features = Vec::with_capacity(FEATURE_TAPS.len());
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(g, store, h, mode)?;
            if FEATURE_TAPS.contains(&(i + 1)) {
                features.push(g.adaptive_avg_pool(h)?);
            }
        }
        Ok((g.adaptive_avg_pool(h)?, features))
    }
}

/// Output of a discriminator pass.
#[derive(Clone, Debug)]
pub struct DiscOutput {
    /// `[N, 1]` probabilities for domain discriminators, `[N, 2]` softmax
    /// rows for the style discriminator.
    pub out: Var,
    /// Pooled `[N, C]` activations of the tapped layers.
    pub features: Vec<Var>,
}

/// Estimates the probability that its input is a genuine sample of one domain.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Real> {
    pub store: ParamStore<T>,
    backbone: Backbone,
    head: Dense,
}

impl<T: Real> Discriminator<T> {
    pub fn new(prefix: &str, init: &mut InitSpec) -> Result<Self> {
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, prefix, init)?;
        let head = Dense::build(&mut store, &format!("{prefix}.fc"), 128, 1, init);
        Ok(Self { store, backbone, head })
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<DiscOutput> {
        let (pooled, features) = self.backbone.forward(g, &mut self.store, x, mode)?;
        let logit = self.head.forward(g, &self.store, pooled)?;
        Ok(DiscOutput {
            out: g.sigmoid(logit),
            features,
        })
    }
}

/// Two-way style classifier used as an adversary.
#[derive(Clone, Debug)]
pub struct StyleDiscriminator<T: Real> {
    pub store: ParamStore<T>,
    backbone: Backbone,
    head: Dense,
}

impl<T: Real> StyleDiscriminator<T> {
    pub fn new(prefix: &str, init: &mut InitSpec) -> Result<Self> {
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, prefix, init)?;
        let head = Dense::build(&mut store, &format!("{prefix}.fc"), 128, 2, init);
        Ok(Self { store, backbone, head })
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<DiscOutput> {
        let (pooled, features) = self.backbone.forward(g, &mut self.store, x, mode)?;
        let logits = self.head.forward(g, &self.store, pooled)?;
        Ok(DiscOutput {
            out: g.softmax(logits)?,
            features,
        })
    }
}

/// The five networks of the system, each with its own parameter store.
#[derive(Clone, Debug)]
pub struct VoiceGan<T: Real> {
    pub gab: Generator<T>,
    pub gba: Generator<T>,
    pub da: Discriminator<T>,
    pub db: Discriminator<T>,
    pub ds: StyleDiscriminator<T>,
}

impl<T: Real> VoiceGan<T> {
    /// Builds all networks; each draws from its own stream of `seed`.
    pub fn new(seed: u64) -> Result<Self> {
        Ok(Self {
            gab: Generator::new("gab", &mut InitSpec::stream(seed, 1))?,
            gba: Generator::new("gba", &mut InitSpec::stream(seed, 2))?,
            da: Discriminator::new("da", &mut InitSpec::stream(seed, 3))?,
            db: Discriminator::new("db", &mut InitSpec::stream(seed, 4))?,
            ds: StyleDiscriminator::new("ds", &mut InitSpec::stream(seed, 5))?,
        })
    }

    pub fn stores(&self) -> [&ParamStore<T>; 5] {
        [
            &self.gab.store,
            &self.gba.store,
            &self.da.store,
            &self.db.store,
            &self.ds.store,
        ]
    }

    pub fn stores_mut(&mut self) -> [&mut ParamStore<T>; 5] {
        [
            &mut self.gab.store,
            &mut self.gba.store,
            &mut self.da.store,
            &mut self.db.store,
            &mut self.ds.store,
        ]
    }

    pub fn generator(&mut self, from: StyleLabel) -> &mut Generator<T> {
        match from {
            StyleLabel::A => &mut self.gab,
            StyleLabel::B => &mut self.gba,
        }
    }
}

/// Translated and round-tripped batches of one source domain.
#[derive(Clone, Copy, Debug)]
pub struct Chain {
    /// `G_AB(x_A)` (or `G_BA(x_B)`).
    pub translated: Var,
    /// `G_BA(G_AB(x_A))` (or `G_AB(G_BA(x_B))`).
    pub round_trip: Var,
}

/// Runs `forward` then `backward` on `x`.
pub fn transfer_chain<T: Real>(
    g: &mut Graph<T>,
    forward: &mut impl Transform<T>,
    backward: &mut impl Transform<T>,
    x: Var,
    mode: Mode,
) -> Result<Chain> {
    let translated = forward.transform(g, x, mode)?;
    let round_trip = backward.transform(g, translated, mode)?;
    Ok(Chain { translated, round_trip })
}
