//! Band-limited resampling with a Kaiser-windowed sinc kernel.

use super::Waveform;
use crate::error::{Error, Result};

/// Stopband attenuation the kernel is designed for, in dB.
const ATTENUATION_DB: f64 = 80.0;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Resamples `w` to `target_hz`.
///
/// The low-pass cutoff sits at 90% of the lower Nyquist frequency and the
/// Kaiser transition band ends exactly at that Nyquist frequency, so content
/// above it is suppressed by at least [`ATTENUATION_DB`] in design.
pub fn resample(w: &Waveform, target_hz: u32) -> Result<Waveform> {
    if target_hz == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if target_hz == w.sample_rate_hz {
        return Ok(w.clone());
    }
    let fs_in = w.sample_rate_hz as f64;
    let ratio = target_hz as f64 / fs_in;
    let out_len = (w.samples.len() as f64 * ratio).round() as usize;

    // Frequencies in cycles per input sample.
    let nyquist = 0.5 * fs_in.min(target_hz as f64) / fs_in;
    let cutoff = 0.9 * nyquist;
    let transition = 2.0 * (nyquist - cutoff);
    let order = (ATTENUATION_DB - 8.0) / (2.285 * 2.0 * std::f64::consts::PI * transition);
    let half = (order / 2.0).ceil();
    let beta = 0.1102 * (ATTENUATION_DB - 8.7);
    let norm = bessel_i0(beta);

    let kernel = |tau: f64| -> f64 {
        let r = tau / half;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let arg = 2.0 * cutoff * tau;
        let sinc = if arg.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
        };
        2.0 * cutoff * sinc * bessel_i0(beta * (1.0 - r * r).sqrt()) / norm
    };

    let x = &w.samples;
    let samples = (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = ((t - half).ceil().max(0.0)) as usize;
            let hi = ((t + half).floor() as usize).min(x.len().saturating_sub(1));
            (lo..=hi).map(|i| x[i] * kernel(t - i as f64)).sum()
        })
        .collect();
    Ok(Waveform::new(samples, target_hz))
}
