//! A style classifier trained on real samples only, used to score
//! conversions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Grid;
use crate::error::{Error, Result};
use crate::model::{stack_grids, DomainSample, StyleLabel, MIN_FRAMES};
use crate::nn::{BlockSpec, ConvBlock, Dense, InitSpec};
use crate::tensor::{Adam, AdamConfig, Graph, Mode, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub steps: usize,
    /// Split evenly between the two styles.
    pub batch_size: usize,
    pub crop_frames: usize,
    /// Fraction of each pool held out for the accuracy estimate.
    pub holdout: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 8,
            crop_frames: 32,
            holdout: 0.2,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.steps == 0 {
            return bad("classifier needs at least one step".into());
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return bad(format!("batch size {} must be even and at least 2", self.batch_size));
        }
        if self.crop_frames < MIN_FRAMES {
            return bad(format!("crop {} is below {MIN_FRAMES} frames", self.crop_frames));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout fraction {} outside [0, 1)", self.holdout));
        }
        Ok(())
    }
}

/// Four convolution blocks, global pooling and a two-way softmax.
#[derive(Clone, Debug)]
pub struct StyleClassifier {
    pub store: ParamStore<f32>,
    blocks: Vec<ConvBlock>,
    head: Dense,
}

/// Held-out accuracy of a freshly trained classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierReport {
    pub heldout_accuracy: f64,
    pub heldout: usize,
}

impl StyleClassifier {
    pub fn specs() -> Vec<BlockSpec> {
        vec![
            BlockSpec::down(1, 32),
            BlockSpec::down(32, 64),
            BlockSpec::down(64, 128),
            BlockSpec::same(128, 128),
        ]
    }

    pub fn new(seed: u64) -> Result<Self> {
        let mut init = InitSpec::new(seed);
        let mut store = ParamStore::new();
        let blocks = Self::specs()
            .into_iter()
            .enumerate()
            .map(|(i, s)| ConvBlock::build(&mut store, &format!("clf.conv{}", i + 1), s, &mut init))
            .collect::<Result<_>>()?;
        let head = Dense::build(&mut store, "clf.fc", 128, 2, &mut init);
        Ok(Self { store, blocks, head })
    }

    fn forward(&mut self, g: &mut Graph<f32>, x: Tensor<f32>, mode: Mode) -> Result<crate::tensor::Var> {
        let mut h = g.constant(x);
        for block in &self.blocks {
            h = block.forward(g, &mut self.store, h, mode)?;
        }
        let pooled = g.adaptive_avg_pool(h)?;
        let logits = self.head.forward(g, &self.store, pooled)?;
        g.softmax(logits)
    }

    /// `[P(A), P(B)]` for one normalized magnitude grid of any length.
    /// Grids shorter than the minimum are edge padded.
    pub fn classify(&mut self, grid: &Grid) -> Result<[f64; 2]> {
        let grid = if grid.cols() < MIN_FRAMES {
            grid.pad_cols_edge(MIN_FRAMES)
        } else {
            grid.clone()
        };
        let mut g = Graph::new();
        let p = self.forward(&mut g, stack_grids(&[&grid])?, Mode::Eval)?;
        let v = g.value(p).data();
        Ok([v[0] as f64, v[1] as f64])
    }

    pub fn predict(&mut self, grid: &Grid) -> Result<StyleLabel> {
        let [pa, pb] = self.classify(grid)?;
        Ok(if pb > pa { StyleLabel::B } else { StyleLabel::A })
    }

    /// Fraction of `samples` predicted as `label`.
    pub fn accuracy(&mut self, samples: &[&Grid], label: StyleLabel) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty("no samples to classify".into()));
        }
        let mut hits = 0;
        for s in samples {
            if self.predict(s)? == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.len() as f64)
    }
}

fn random_crop(s: &DomainSample, crop: usize, rng: &mut impl Rng) -> Grid {
    if s.frames() <= crop {
        return s.magnitude.pad_cols_edge(crop);
    }
    s.magnitude.columns(rng.gen_range(0..=s.frames() - crop), crop)
}

/// Trains on fixed-size random crops of the real pools with cross-entropy.
/// A shuffled `holdout` fraction of each pool is kept back and scored on
/// full-length samples.
pub fn train_classifier(
    pool_a: &[DomainSample],
    pool_b: &[DomainSample],
    cfg: &ClassifierConfig,
) -> Result<(StyleClassifier, ClassifierReport)> {
    cfg.validate()?;
    if pool_a.is_empty() || pool_b.is_empty() {
        return Err(Error::InvalidArgument("classifier needs samples of both styles".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let split = |pool: &[DomainSample], rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(rng);
        let held = ((pool.len() as f64 * cfg.holdout).round() as usize).min(pool.len() - 1);
        let (test, train) = idx.split_at(held);
        (train.to_vec(), test.to_vec())
    };
    let (train_a, test_a) = split(pool_a, &mut rng);
    let (train_b, test_b) = split(pool_b, &mut rng);

    let mut clf = StyleClassifier::new(cfg.seed)?;
    let mut opt = Adam::new(&clf.store, cfg.adam);
    let half = cfg.batch_size / 2;
    let labels = Tensor::from_fn([cfg.batch_size, 2], |i| {
        let row = if i / 2 < half { StyleLabel::A } else { StyleLabel::B };
        row.one_hot()[i % 2] as f32
    });
    for step in 0..cfg.steps {
        let mut crops = Vec::with_capacity(cfg.batch_size);
        for (pool, idx) in [(pool_a, &train_a), (pool_b, &train_b)] {
            for _ in 0..half {
                let s = &pool[idx[rng.gen_range(0..idx.len())]];
                crops.push(random_crop(s, cfg.crop_frames, &mut rng));
            }
        }
        let x = stack_grids(&crops.iter().collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let p = clf.forward(&mut g, x, Mode::Train)?;
        let t = g.constant(labels.clone());
        let loss = g.cross_entropy(p, t)?;
        let l = g.value(loss).item();
        if !l.is_finite() {
            return Err(Error::Diverged {
                step: step as u64 + 1,
                reason: format!("classifier loss is {l}"),
            });
        }
        g.backward(loss)?;
        clf.store.accumulate_grads(&g);
        opt.step(&mut clf.store);
        clf.store.zero_grad();
    }

    let mut hits = 0;
    let heldout = test_a.len() + test_b.len();
    for (pool, idx, label) in [(pool_a, &test_a, StyleLabel::A), (pool_b, &test_b, StyleLabel::B)] {
        for &i in idx.iter() {
            if clf.predict(&pool[i].magnitude)? == label {
                hits += 1;
            }
        }
    }
    let heldout_accuracy = if heldout == 0 {
        f64::NAN
    } else {
        hits as f64 / heldout as f64
    };
    Ok((
        clf,
        ClassifierReport {
            heldout_accuracy,
            heldout,
        },
    ))
}

/// Fraction of converted grids the classifier assigns to `target`.
pub fn style_transfer_rate(clf: &mut StyleClassifier, converted: &[Grid], target: StyleLabel) -> Result<f64> {
    clf.accuracy(&converted.iter().collect::<Vec<_>>(), target)
}
