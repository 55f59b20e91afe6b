use super::stft::StftEngine;
use super::{Grid, StftConfig, Waveform};
use crate::error::{Error, Result};

/// Output of [`griffin_lim`].
#[derive(Clone, Debug)]
pub struct GriffinLimResult {
    pub wave: Waveform,
    /// Spectral-convergence error `‖|STFT(x_i)| − mag‖ / ‖mag‖` of the
    /// estimate entering iteration `i`, one entry per iteration.
    pub errors: Vec<f64>,
}

/// Weighted squared distance over the one-sided spectrum, counting each
/// interior bin twice so the norm equals the full two-sided one.
fn two_sided_sq(a: &Grid, b: Option<&Grid>, n_fft: usize) -> f64 {
    let nyquist = n_fft / 2;
    let mut acc = 0.0;
    for f in 0..a.rows() {
        let w = if f == 0 || (n_fft.is_multiple_of(2) && f == nyquist) {
            1.0
        } else {
            2.0
        };
        for t in 0..a.cols() {
            let d = a.get(f, t) - b.map_or(0.0, |b| b.get(f, t));
            acc += w * d * d;
        }
    }
    acc
}

/// Iterative phase recovery from a magnitude grid.
///
/// Starts from `init_phase` (zeros if absent), then alternates least-squares
/// inverse STFT and re-analysis, keeping the target magnitude and the
/// estimated phase. Grids with fewer than `n_fft/2 + 1` rows are treated as
/// zero above their top row. The waveform spans `(T − 1)·hop + n_fft` samples.
pub fn griffin_lim(
    mag: &Grid,
    cfg: StftConfig,
    iters: usize,
    init_phase: Option<&Grid>,
    sample_rate_hz: u32,
) -> Result<GriffinLimResult> {
    if iters == 0 {
        return Err(Error::InvalidArgument("griffin_lim needs iters >= 1".into()));
    }
    let bins = cfg.bins();
    if mag.rows() > bins {
        return Err(Error::Shape(format!("{} rows exceed {bins} bins", mag.rows())));
    }
    if mag.data().iter().any(|&m| m < 0.0 || !m.is_finite()) {
        return Err(Error::InvalidArgument(
            "magnitude must be finite and nonnegative".into(),
        ));
    }
    let engine = StftEngine::new(cfg)?;
    let frames = mag.cols();
    let target = Grid::from_fn(bins, frames, |f, t| if f < mag.rows() { mag.get(f, t) } else { 0.0 });
    let mut phase = match init_phase {
        Some(p) if p.rows() >= mag.rows() && p.cols() == frames => {
            Grid::from_fn(bins, frames, |f, t| if f < p.rows() { p.get(f, t) } else { 0.0 })
        }
        Some(p) => {
            return Err(Error::Shape(format!(
                "initial phase {}x{} does not cover magnitude {}x{}",
                p.rows(),
                p.cols(),
                mag.rows(),
                frames
            )))
        }
        None => Grid::zeros(bins, frames),
    };
    let len = (frames - 1) * cfg.hop + cfg.n_fft;
    let denom = two_sided_sq(&target, None, cfg.n_fft).sqrt().max(f64::MIN_POSITIVE);
    let mut x = engine.synthesize(&target, &phase, len);
    let mut errors = Vec::with_capacity(iters);
    for _ in 0..iters {
        let (m, p) = engine.analyze(&x)?;
        errors.push(two_sided_sq(&m, Some(&target), cfg.n_fft).sqrt() / denom);
        phase = p;
        x = engine.synthesize(&target, &phase, len);
    }
    Ok(GriffinLimResult {
        wave: Waveform::new(x, sample_rate_hz),
        errors,
    })
}
