use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::TIME_MULTIPLE;
use crate::tensor::AdamConfig;

/// Everything that determines a training run besides the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Training crop length in frames.
    pub crop_frames: usize,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    /// Write sample conversions every this many steps (0: never).
    pub eval_every: u64,
    /// Griffin-Lim iterations for sample conversions.
    pub gl_iters: usize,
    /// Decay of the generator weight average used for inference (0: latest weights).
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            crop_frames: 64,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 500,
            eval_every: 500,
            gl_iters: 100,
            ema_decay: 0.999,
        }
    }
}

pub(crate) fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config {
        line,
        reason: format!("{key}: {e}"),
    })
}

/// `(line, key, value)` for every `key = value` line; `#` starts a comment.
pub(crate) fn key_values(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            reason: format!("expected key = value, got {content:?}"),
        })?;
        out.push((line, key.trim(), value.trim()));
    }
    Ok(out)
}

pub(crate) fn unknown_key(line: usize, key: &str) -> Error {
    Error::Config {
        line,
        reason: format!("unknown key {key:?}"),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Config { line: 0, reason });
        if self.crop_frames == 0 || !self.crop_frames.is_multiple_of(TIME_MULTIPLE) {
            return bad(format!(
                "crop_frames {} must be a positive multiple of 8",
                self.crop_frames
            ));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 for batch normalization".into());
        }
        if !self.adam.lr.is_finite()
            || self.adam.lr <= 0.0
            || !(0.0..1.0).contains(&self.adam.beta1)
            || !(0.0..1.0).contains(&self.adam.beta2)
        {
            return bad(format!("invalid optimizer settings {:?}", self.adam));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay {} must be in [0, 1)", self.ema_decay));
        }
        self.weights.validate().map_err(|e| Error::Config {
            line: 0,
            reason: e.to_string(),
        })
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line, key, value) in key_values(text)? {
            match key {
                "steps" => cfg.steps = parse(line, key, value)?,
                "batch_size" => cfg.batch_size = parse(line, key, value)?,
                "crop_frames" => cfg.crop_frames = parse(line, key, value)?,
                "alpha" => cfg.weights.alpha = parse(line, key, value)?,
                "beta" => cfg.weights.beta = parse(line, key, value)?,
                "feat_w" => cfg.weights.feat_w = parse(line, key, value)?,
                "smooth_w" => cfg.weights.smooth_w = parse(line, key, value)?,
                "style_gen_w" => cfg.weights.style_gen_w = parse(line, key, value)?,
                "lr" => cfg.adam.lr = parse(line, key, value)?,
                "beta1" => cfg.adam.beta1 = parse(line, key, value)?,
                "beta2" => cfg.adam.beta2 = parse(line, key, value)?,
                "eps" => cfg.adam.eps = parse(line, key, value)?,
                "seed" => cfg.seed = parse(line, key, value)?,
                "checkpoint_every" => cfg.checkpoint_every = parse(line, key, value)?,
                "eval_every" => cfg.eval_every = parse(line, key, value)?,
                "gl_iters" => cfg.gl_iters = parse(line, key, value)?,
                "ema_decay" => cfg.ema_decay = parse(line, key, value)?,
                _ => return Err(unknown_key(line, key)),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The `key = value` form read by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let a = &self.adam;
        let mut s = String::new();
        let pairs: [(&str, String); 17] = [
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("crop_frames", self.crop_frames.to_string()),
            ("alpha", format!("{:?}", w.alpha)),
            ("beta", format!("{:?}", w.beta)),
            ("feat_w", format!("{:?}", w.feat_w)),
            ("smooth_w", format!("{:?}", w.smooth_w)),
            ("style_gen_w", format!("{:?}", w.style_gen_w)),
            ("lr", format!("{:?}", a.lr)),
            ("beta1", format!("{:?}", a.beta1)),
            ("beta2", format!("{:?}", a.beta2)),
            ("eps", format!("{:?}", a.eps)),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("gl_iters", self.gl_iters.to_string()),
            ("ema_decay", format!("{:?}", self.ema_decay)),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
