use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Grid, Waveform};
use crate::error::{Error, Result};

/// Frame length and hop of the analysis, with a periodic Hann window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    /// 32 ms frames with an 8 ms hop at 8 kHz.
    fn default() -> Self {
        Self { n_fft: 256, hop: 64 }
    }
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize) -> Result<Self> {
        let cfg = Self { n_fft, hop };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.hop == 0 || !self.n_fft.is_multiple_of(self.hop) || self.hop > self.n_fft / 2 {
            return Err(Error::InvalidArgument(format!(
                "hop {} must divide n_fft {} and be at most n_fft/2",
                self.hop, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frames(&self, len: usize) -> Option<usize> {
        (len >= self.n_fft).then(|| 1 + (len - self.n_fft) / self.hop)
    }

    pub fn window(&self) -> Vec<f64> {
        (0..self.n_fft)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / self.n_fft as f64).cos())
            .collect()
    }
}

/// Magnitude and phase of a short-time Fourier transform, `F × T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub magnitude: Grid,
    pub phase: Grid,
    pub config: StftConfig,
    pub sample_rate_hz: u32,
    pub source_len: usize,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.magnitude.rows()
    }

    pub fn frames(&self) -> usize {
        self.magnitude.cols()
    }
}

/// Planned FFTs and window for one configuration.
pub(crate) struct StftEngine {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftEngine {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            window: cfg.window(),
            forward: planner.plan_fft_forward(cfg.n_fft),
            inverse: planner.plan_fft_inverse(cfg.n_fft),
        })
    }

    /// Complex one-sided STFT as `(magnitude, phase)`.
    pub fn analyze(&self, x: &[f64]) -> Result<(Grid, Grid)> {
        let n = self.cfg.n_fft;
        let frames = self
            .cfg
            .frames(x.len())
            .ok_or_else(|| Error::TooShort(format!("{} samples, frame length {n}", x.len())))?;
        let bins = self.cfg.bins();
        let mut mag = Grid::zeros(bins, frames);
        let mut phase = Grid::zeros(bins, frames);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            let start = t * self.cfg.hop;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[start + k] * self.window[k], 0.0);
            }
            self.forward.process(&mut buf);
            for (f, z) in buf.iter().take(bins).enumerate() {
                mag.set(f, t, z.norm());
                let mut ph = z.arg();
                if ph <= -PI {
                    ph = PI;
                }
                phase.set(f, t, ph);
            }
        }
        Ok((mag, phase))
    }

    /// Least-squares overlap-add inverse: each frame is windowed again and
    /// the sum is divided by the summed squared window.
    pub fn synthesize(&self, mag: &Grid, phase: &Grid, len: usize) -> Vec<f64> {
        let n = self.cfg.n_fft;
        let bins = self.cfg.bins();
        let frames = mag.cols();
        let span = (frames.saturating_sub(1)) * self.cfg.hop + n;
        let mut acc = vec![0.0; span.max(len)];
        let mut wsum = vec![0.0; span.max(len)];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            buf.fill(Complex64::new(0.0, 0.0));
            for f in 0..bins.min(mag.rows()) {
                let z = Complex64::from_polar(mag.get(f, t), phase.get(f, t));
                buf[f] = z;
                if f > 0 && f < n - f {
                    buf[n - f] = z.conj();
                }
            }
            self.inverse.process(&mut buf);
            let start = t * self.cfg.hop;
            for k in 0..n {
                let w = self.window[k];
                acc[start + k] += buf[k].re / n as f64 * w;
                wsum[start + k] += w * w;
            }
        }
        acc.truncate(len);
        acc.iter()
            .zip(&wsum)
            .map(|(&a, &w)| if w > 1e-10 { a / w } else { 0.0 })
            .collect()
    }
}

/// Short-time Fourier transform without padding:
/// `T = 1 + floor((len − n_fft) / hop)` frames.
pub fn stft(w: &Waveform, cfg: StftConfig) -> Result<Spectrogram> {
    let engine = StftEngine::new(cfg)?;
    let (magnitude, phase) = engine.analyze(&w.samples)?;
    Ok(Spectrogram {
        magnitude,
        phase,
        config: cfg,
        sample_rate_hz: w.sample_rate_hz,
        source_len: w.samples.len(),
    })
}

/// Inverse of [`stft`], trimmed (or zero-extended) to the source length.
pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    let engine = StftEngine::new(s.config)?;
    let samples = engine.synthesize(&s.magnitude, &s.phase, s.source_len);
    Ok(Waveform::new(samples, s.sample_rate_hz))
}

const VGSP_MAGIC: &[u8; 4] = b"VGSP";
const VGSP_VERSION: u32 = 1;

impl Spectrogram {
    /// Flat binary container: `"VGSP"`, version, F, T, sample rate, n_fft,
    /// hop (`u32` each), source length (`u64`), then `F·T` little-endian
    /// `f32` magnitudes and `F·T` phases, both row-major by frequency.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (f, t) = (self.bins(), self.frames());
        let mut out = Vec::with_capacity(36 + 8 * f * t);
        out.extend_from_slice(VGSP_MAGIC);
        for v in [
            VGSP_VERSION,
            f as u32,
            t as u32,
            self.sample_rate_hz,
            self.config.n_fft as u32,
            self.config.hop as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.source_len as u64).to_le_bytes());
        for grid in [&self.magnitude, &self.phase] {
            for &v in grid.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |why: &str| Error::format("<spectrogram>", why);
        let mut r = bytes;
        let mut word = [0u8; 4];
        let mut u32_at = |r: &mut &[u8]| -> Result<u32> {
            r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
            Ok(u32::from_le_bytes(word))
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != VGSP_MAGIC {
            return Err(bad("bad magic"));
        }
        if u32_at(&mut r)? != VGSP_VERSION {
            return Err(bad("unsupported version"));
        }
        let f = u32_at(&mut r)? as usize;
        let t = u32_at(&mut r)? as usize;
        let sample_rate_hz = u32_at(&mut r)?;
        let n_fft = u32_at(&mut r)? as usize;
        let hop = u32_at(&mut r)? as usize;
        let mut long = [0u8; 8];
        r.read_exact(&mut long).map_err(|_| bad("truncated header"))?;
        let source_len = u64::from_le_bytes(long) as usize;
        if r.len() != 8 * f * t {
            return Err(bad("payload length does not match F·T"));
        }
        let floats: Vec<f64> = r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let (m, p) = floats.split_at(f * t);
        let config = StftConfig { n_fft, hop };
        Ok(Self {
            magnitude: Grid::from_vec(f, t, m.to_vec()).ok_or_else(|| bad("grid"))?,
            phase: Grid::from_vec(f, t, p.to_vec()).ok_or_else(|| bad("grid"))?,
            config,
            sample_rate_hz,
            source_len,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path)?).map_err(|e| match e {
            Error::Format { reason, .. } => Error::format(path, reason),
            other => other,
        })
    }
}
