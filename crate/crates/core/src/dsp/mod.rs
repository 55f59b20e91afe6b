//! Audio I/O and spectral analysis/synthesis.

mod grid;
mod griffin_lim;
mod norm;
mod resample;
mod stft;
mod wav;

pub use grid::Grid;
pub use griffin_lim::{griffin_lim, GriffinLimResult};
pub use norm::{NormStats, LOG_EPS};
pub use resample::resample;
pub use stft::{istft, stft, Spectrogram, StftConfig};
pub use wav::{load_wav, save_wav};

/// Mono audio at a fixed sample rate, amplitudes nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

/// Working sample rate of the model (0–4 kHz band).
pub const MODEL_RATE_HZ: u32 = 8000;

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate_hz)
    }
}
