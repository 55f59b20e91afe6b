//! Speech-to-noise ratio from the distribution of short-time frame powers.

use crate::dsp::Waveform;
use crate::error::{Error, Result};

use super::check_duration;

pub const FRAME_S: f64 = 0.020;
pub const HOP_S: f64 = 0.010;
/// Percentile of frame power taken as the speech level.
pub const SIGNAL_PERCENTILE: f64 = 95.0;
/// Histogram bin width in dB.
pub const BIN_DB: f64 = 1.0;

/// Frame powers in dB; frames of exact digital silence are dropped.
pub fn frame_powers_db(w: &Waveform) -> Vec<f64> {
    let rate = w.sample_rate_hz as f64;
    let frame = ((FRAME_S * rate).round() as usize).max(1);
    let hop = ((HOP_S * rate).round() as usize).max(1);
    if w.samples.len() < frame {
        return Vec::new();
    }
    (0..=(w.samples.len() - frame) / hop)
        .map(|i| {
            let f = &w.samples[i * hop..i * hop + frame];
            f.iter().map(|v| v * v).sum::<f64>() / frame as f64
        })
        .filter(|&p| p > 0.0)
        .map(|p| 10.0 * p.log10())
        .collect()
}

/// Linear-interpolated percentile of sorted data.
pub(crate) fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// Signal level minus noise floor, in dB.
///
/// The signal level is the 95th percentile of frame power. The noise floor
/// is the mean power of the frames in the most populated 1 dB histogram bin
/// (plus its two neighbours) among frames in the lower half of the observed
/// power range. Bins are anchored at the signal level, which makes the
/// estimate exactly invariant to a gain change.
pub fn stnr(w: &Waveform) -> Result<f64> {
    check_duration(w)?;
    let mut db = frame_powers_db(w);
    if db.is_empty() {
        return Err(Error::InvalidArgument("no frames with signal energy".into()));
    }
    db.sort_by(f64::total_cmp);
    let signal = percentile(&db, SIGNAL_PERCENTILE);
    let mid = 0.5 * (db[0] + signal);
    let low: Vec<f64> = db.iter().copied().take_while(|&v| v <= mid).collect();
    let low = if low.is_empty() { db } else { low };
    let bin = |v: f64| ((signal - v) / BIN_DB).floor().max(0.0) as usize;
    let nbins = bin(low[0]) + 1;
    let mut counts = vec![0usize; nbins];
    for &v in &low {
        counts[bin(v)] += 1;
    }
    // Ties go to the quieter bin.
    let mode = (0..nbins).max_by_key(|&k| (counts[k], k)).unwrap_or(0);
    let near: Vec<f64> = low.iter().copied().filter(|&v| bin(v).abs_diff(mode) <= 1).collect();
    let noise = near.iter().sum::<f64>() / near.len() as f64;
    Ok(signal - noise)
}
