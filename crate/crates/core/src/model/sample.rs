use crate::dsp::{griffin_lim, istft, Grid, NormStats, Spectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Frequency rows seen by the networks: the lowest 128 of 129 STFT bins.
pub const FREQ_BINS: usize = 128;

/// One utterance in network form: normalized magnitude and phase, both
/// `FREQ_BINS × T`, with what is needed to return to a spectrogram.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSample {
    pub magnitude: Grid,
    pub phase: Grid,
    pub stats: NormStats,
    pub config: StftConfig,
    pub sample_rate_hz: u32,
    pub source_len: usize,
}

impl DomainSample {
    pub fn from_spectrogram(s: &Spectrogram, stats: NormStats) -> Result<Self> {
        if s.bins() < FREQ_BINS {
            return Err(Error::Shape(format!(
                "spectrogram has {} bins, need at least {FREQ_BINS}",
                s.bins()
            )));
        }
        Ok(Self {
            magnitude: stats.normalize(&s.magnitude.top_rows(FREQ_BINS)),
            phase: s.phase.top_rows(FREQ_BINS),
            stats,
            config: s.config,
            sample_rate_hz: s.sample_rate_hz,
            source_len: s.source_len,
        })
    }

    pub fn frames(&self) -> usize {
        self.magnitude.cols()
    }

    /// Frames `start..start + len`; the source length shrinks to match.
    pub fn crop(&self, start: usize, len: usize) -> Self {
        Self {
            magnitude: self.magnitude.columns(start, len),
            phase: self.phase.columns(start, len),
            source_len: (len - 1) * self.config.hop + self.config.n_fft,
            ..self.clone()
        }
    }

    /// `[1, 1, FREQ_BINS, T]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        grid_to_tensor(&self.magnitude)
    }

    /// Full spectrogram from a normalized grid of this sample's shape, reusing
    /// this sample's phase. The dropped top bin comes back as zero.
    pub fn to_spectrogram(&self, normalized: &Grid) -> Result<Spectrogram> {
        if normalized.rows() != FREQ_BINS || normalized.cols() != self.frames() {
            return Err(Error::Shape(format!(
                "grid {}x{} does not match sample {FREQ_BINS}x{}",
                normalized.rows(),
                normalized.cols(),
                self.frames()
            )));
        }
        let mag = self.stats.denormalize(normalized);
        let bins = self.config.bins();
        let extend = |g: &Grid| Grid::from_fn(bins, g.cols(), |f, t| if f < g.rows() { g.get(f, t) } else { 0.0 });
        Ok(Spectrogram {
            magnitude: extend(&mag),
            phase: extend(&self.phase),
            config: self.config,
            sample_rate_hz: self.sample_rate_hz,
            source_len: self.source_len,
        })
    }
}

/// How a waveform is recovered from a converted magnitude grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reconstruction {
    /// Iterative phase recovery from magnitude alone, from zero phase.
    GriffinLim { iters: usize },
    /// Reuse the source utterance's phase.
    SourcePhase,
}

impl Default for Reconstruction {
    fn default() -> Self {
        Reconstruction::GriffinLim { iters: 100 }
    }
}

impl DomainSample {
    /// Waveform for a normalized grid of this sample's shape, trimmed to the
    /// source length.
    pub fn reconstruct(&self, normalized: &Grid, how: Reconstruction) -> Result<Waveform> {
        let spec = self.to_spectrogram(normalized)?;
        match how {
            Reconstruction::SourcePhase => istft(&spec),
            Reconstruction::GriffinLim { iters } => {
                let mut w = griffin_lim(&spec.magnitude, spec.config, iters, None, spec.sample_rate_hz)?.wave;
                w.samples.resize(spec.source_len, 0.0);
                Ok(w)
            }
        }
    }
}

/// `[1, 1, rows, cols]` view of a grid.
pub fn grid_to_tensor<T: Real>(g: &Grid) -> Tensor<T> {
    Tensor::from_fn([1, 1, g.rows(), g.cols()], |i| T::c(g.data()[i]))
}

/// Item `n` of a `[N, 1, F, T]` tensor as a grid.
pub fn tensor_to_grid<T: Real>(t: &Tensor<T>, n: usize) -> Result<Grid> {
    let [count, c, f, frames] = t.dims4()?;
    if c != 1 || n >= count {
        return Err(Error::Shape(format!("cannot take item {n} of {:?}", t.shape())));
    }
    let plane = f * frames;
    let data = t.data()[n * plane..(n + 1) * plane].iter().map(|v| v.f64()).collect();
    Ok(Grid::from_vec(f, frames, data).expect("plane size"))
}

/// Stacks equally sized grids into `[N, 1, F, T]`.
pub fn stack_grids<T: Real>(grids: &[&Grid]) -> Result<Tensor<T>> {
    let first = grids.first().ok_or_else(|| Error::Empty("no grids to stack".into()))?;
    let (f, t) = (first.rows(), first.cols());
    if grids.iter().any(|g| g.rows() != f || g.cols() != t) {
        return Err(Error::Shape("grids in one batch must share a shape".into()));
    }
    let data = grids.iter().flat_map(|g| g.data().iter().map(|&v| T::c(v))).collect();
    Tensor::new([grids.len(), 1, f, t], data)
}
