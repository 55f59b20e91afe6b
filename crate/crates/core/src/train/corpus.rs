use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::dsp::{load_wav, resample, stft, NormStats, Spectrogram, StftConfig, Waveform, MODEL_RATE_HZ};
use crate::error::{Error, Result};
use crate::model::{stack_grids, DomainSample, StyleLabel, FREQ_BINS};
use crate::tensor::{Real, Tensor};

/// Two pools of domain samples sharing one normalization.
#[derive(Clone, Debug)]
pub struct StyleCorpus {
    pub pool_a: Vec<DomainSample>,
    pub pool_b: Vec<DomainSample>,
    pub stats: NormStats,
    pub config: StftConfig,
}

fn analyze(w: &Waveform, cfg: StftConfig) -> Result<Spectrogram> {
    let mut w = if w.sample_rate_hz == MODEL_RATE_HZ {
        w.clone()
    } else {
        resample(w, MODEL_RATE_HZ)?
    };
    if w.samples.len() < cfg.n_fft {
        w.samples.resize(cfg.n_fft, 0.0);
    }
    stft(&w, cfg)
}

fn spectrograms(waves: &[Waveform], cfg: StftConfig) -> Result<Vec<Spectrogram>> {
    waves.par_iter().map(|w| analyze(w, cfg)).collect()
}

fn to_sample(s: &Spectrogram, stats: NormStats, min_frames: usize) -> Result<DomainSample> {
    let mut d = DomainSample::from_spectrogram(s, stats)?;
    if d.frames() < min_frames {
        d.magnitude = d.magnitude.pad_cols_edge(min_frames);
        d.phase = d.phase.pad_cols_edge(min_frames);
        d.source_len = (min_frames - 1) * d.config.hop + d.config.n_fft;
    }
    Ok(d)
}

fn to_samples(specs: &[Spectrogram], stats: NormStats, min_frames: usize) -> Result<Vec<DomainSample>> {
    specs.iter().map(|s| to_sample(s, stats, min_frames)).collect()
}

/// One waveform prepared the way corpus samples are: resampled to the model
/// rate, analyzed, normalized with `stats` and edge padded to `min_frames`.
pub fn domain_sample(w: &Waveform, stats: NormStats, cfg: StftConfig, min_frames: usize) -> Result<DomainSample> {
    to_sample(&analyze(w, cfg)?, stats, min_frames)
}

impl StyleCorpus {
    /// Analyzes both pools (resampling to the model rate), fits one
    /// normalization over both, and edge-pads samples shorter than
    /// `min_frames`.
    pub fn from_waveforms(a: &[Waveform], b: &[Waveform], cfg: StftConfig, min_frames: usize) -> Result<Self> {
        let (sa, sb) = (spectrograms(a, cfg)?, spectrograms(b, cfg)?);
        let tops: Vec<_> = sa.iter().chain(&sb).map(|s| s.magnitude.top_rows(FREQ_BINS)).collect();
        let stats = NormStats::fit(tops.iter())?;
        Self::assemble(&sa, &sb, stats, cfg, min_frames)
    }

    /// Like [`StyleCorpus::from_waveforms`] but reusing existing statistics,
    /// for held-out pools.
    pub fn with_stats(
        a: &[Waveform],
        b: &[Waveform],
        stats: NormStats,
        cfg: StftConfig,
        min_frames: usize,
    ) -> Result<Self> {
        Self::assemble(&spectrograms(a, cfg)?, &spectrograms(b, cfg)?, stats, cfg, min_frames)
    }

    fn assemble(
        sa: &[Spectrogram],
        sb: &[Spectrogram],
        stats: NormStats,
        cfg: StftConfig,
        min_frames: usize,
    ) -> Result<Self> {
        if sa.is_empty() || sb.is_empty() {
            return Err(Error::Empty("both style pools need at least one sample".into()));
        }
        Ok(Self {
            pool_a: to_samples(sa, stats, min_frames)?,
            pool_b: to_samples(sb, stats, min_frames)?,
            stats,
            config: cfg,
        })
    }

    pub fn pool(&self, label: StyleLabel) -> &[DomainSample] {
        match label {
            StyleLabel::A => &self.pool_a,
            StyleLabel::B => &self.pool_b,
        }
    }

    /// Independent random crops from each pool: `[batch, 1, 128, crop]` twice.
    /// The two batches are drawn separately and never aligned.
    pub fn next_batch<T: Real>(&self, rng: &mut impl Rng, batch: usize, crop: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let draw = |pool: &[DomainSample], rng: &mut dyn rand::RngCore| -> Result<Tensor<T>> {
            let crops: Vec<_> = (0..batch)
                .map(|_| {
                    let s = &pool[rng.gen_range(0..pool.len())];
                    if s.frames() < crop {
                        return Err(Error::Shape(format!(
                            "sample of {} frames is shorter than crop {crop}",
                            s.frames()
                        )));
                    }
                    let start = rng.gen_range(0..=s.frames() - crop);
                    Ok(s.magnitude.columns(start, crop))
                })
                .collect::<Result<_>>()?;
            stack_grids(&crops.iter().collect::<Vec<_>>())
        };
        let a = draw(&self.pool_a, rng)?;
        let b = draw(&self.pool_b, rng)?;
        Ok((a, b))
    }
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Empty(format!("no .wav files in {}", dir.display())));
    }
    Ok(files)
}

/// Loads every `.wav` in `dir` in name order, skipping unreadable files with
/// a warning.
pub fn load_wav_dir(dir: impl AsRef<Path>) -> Result<Vec<Waveform>> {
    let dir = dir.as_ref();
    let files = wav_files(dir)?;
    let loaded: Vec<_> = files.par_iter().map(|p| (p, load_wav(p))).collect();
    let mut waves = Vec::with_capacity(loaded.len());
    for (path, r) in loaded {
        match r {
            Ok(w) if !w.is_empty() => waves.push(w),
            Ok(_) => log::warn!("skipping empty {}", path.display()),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if waves.is_empty() {
        return Err(Error::Empty(format!("every file in {} was skipped", dir.display())));
    }
    Ok(waves)
}

/// Builds a corpus from two directories of WAV files.
pub fn ingest_dir(
    dir_a: impl AsRef<Path>,
    dir_b: impl AsRef<Path>,
    cfg: StftConfig,
    min_frames: usize,
) -> Result<StyleCorpus> {
    let a = load_wav_dir(dir_a)?;
    let b = load_wav_dir(dir_b)?;
    StyleCorpus::from_waveforms(&a, &b, cfg, min_frames)
}
