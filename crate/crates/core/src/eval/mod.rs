//! Evaluation battery: an independent style classifier, two SNR estimators
//! and spectrogram images.

mod classifier;
mod image;
mod stnr;
mod wada;

pub use classifier::{style_transfer_rate, train_classifier, ClassifierConfig, ClassifierReport, StyleClassifier};
pub use image::{emit_spectrogram_png, spectrogram_pixels, DYNAMIC_RANGE_DB};
pub use stnr::{frame_powers_db, stnr};
pub use wada::{amplitude_statistic, wada, wada_with, WadaTable, GAMMA_SHAPE, TABLE_MAX_DB, TABLE_MIN_DB};

use std::fmt;

use rayon::prelude::*;

use crate::dsp::{Grid, Waveform};
use crate::error::{Error, Result};
use crate::model::{DomainSample, Reconstruction, StyleLabel, VoiceGan};

/// Shortest input either SNR estimator accepts.
pub const MIN_DURATION_S: f64 = 0.5;

fn check_duration(w: &Waveform) -> Result<()> {
    let need = (MIN_DURATION_S * w.sample_rate_hz as f64).ceil() as usize;
    if w.samples.len() < need {
        return Err(Error::TooShort(format!(
            "{} samples at {} Hz, need at least {MIN_DURATION_S} s",
            w.samples.len(),
            w.sample_rate_hz
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SnrMethod {
    Stnr,
    Wada,
}

impl SnrMethod {
    pub const ALL: [SnrMethod; 2] = [SnrMethod::Stnr, SnrMethod::Wada];

    pub fn estimate(self, w: &Waveform) -> Result<f64> {
        match self {
            SnrMethod::Stnr => stnr(w),
            SnrMethod::Wada => wada(w),
        }
    }
}

impl fmt::Display for SnrMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SnrMethod::Stnr => "stnr",
            SnrMethod::Wada => "wada",
        })
    }
}

/// Which processing stage a pool of audio comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    /// The source recordings.
    Original,
    /// Source magnitudes resynthesized with Griffin-Lim (`x_A`, `x_B`).
    Resynthesized,
    /// One pass through a generator (`x_AB`, `x_BA`).
    Converted,
    /// Through both generators (`x_ABA`, `x_BAB`).
    RoundTrip,
}

impl PoolKind {
    pub const ALL: [PoolKind; 4] = [
        PoolKind::Original,
        PoolKind::Resynthesized,
        PoolKind::Converted,
        PoolKind::RoundTrip,
    ];

    /// Short tag for file names and CSV cells.
    pub fn tag(self) -> &'static str {
        match self {
            PoolKind::Original => "original",
            PoolKind::Resynthesized => "resynth",
            PoolKind::Converted => "converted",
            PoolKind::RoundTrip => "round_trip",
        }
    }

    /// Row caption of the pretty table.
    pub fn caption(self) -> &'static str {
        match self {
            PoolKind::Original => "Original signal",
            PoolKind::Resynthesized => "X_A and X_B",
            PoolKind::Converted => "X_AB and X_BA",
            PoolKind::RoundTrip => "X_ABA and X_BAB",
        }
    }
}

/// Audio files of one pool, labelled by stage and source style.
#[derive(Clone, Debug)]
pub struct Pool {
    pub kind: PoolKind,
    pub source: StyleLabel,
    pub waves: Vec<Waveform>,
}

/// Per-file estimates of one method over one pool.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrReport {
    pub kind: PoolKind,
    pub source: StyleLabel,
    pub method: SnrMethod,
    pub estimates: Vec<f64>,
}

impl SnrReport {
    pub fn mean(&self) -> f64 {
        self.estimates.iter().sum::<f64>() / self.estimates.len() as f64
    }

    /// Sample standard deviation.
    pub fn std(&self) -> f64 {
        let n = self.estimates.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

/// All reports of a battery run.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrTable {
    pub reports: Vec<SnrReport>,
}

impl SnrTable {
    pub const CSV_HEADER: &'static str = "pool,source,method,files,mean_db,std_db";

    pub fn get(&self, kind: PoolKind, source: StyleLabel, method: SnrMethod) -> Option<&SnrReport> {
        self.reports
            .iter()
            .find(|r| r.kind == kind && r.source == source && r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.reports {
            out.push_str(&format!(
                "{},{:?},{},{},{:.4},{:.4}\n",
                r.kind.tag(),
                r.source,
                r.method,
                r.estimates.len(),
                r.mean(),
                r.std()
            ));
        }
        out
    }

    /// One block per method: pool rows, source-style columns, `mean±std`.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        for method in SnrMethod::ALL {
            if !self.reports.iter().any(|r| r.method == method) {
                continue;
            }
            out.push_str(&format!(
                "{:<18} {:>16} {:>16}\n",
                method.to_string().to_uppercase(),
                "A (dB)",
                "B (dB)"
            ));
            for kind in PoolKind::ALL {
                let cell = |s| {
                    self.get(kind, s, method)
                        .map(|r| format!("{:.2}±{:.2}", r.mean(), r.std()))
                        .unwrap_or_else(|| "-".into())
                };
                if self.reports.iter().any(|r| r.kind == kind && r.method == method) {
                    out.push_str(&format!(
                        "{:<18} {:>16} {:>16}\n",
                        kind.caption(),
                        cell(StyleLabel::A),
                        cell(StyleLabel::B)
                    ));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Runs both estimators over every pool. Files are processed in parallel.
pub fn snr_battery(pools: &[Pool]) -> Result<SnrTable> {
    let mut reports = Vec::with_capacity(pools.len() * SnrMethod::ALL.len());
    for pool in pools {
        if pool.waves.len() < 2 {
            return Err(Error::Empty(format!(
                "{} pool of style {:?} has {} files, need at least 2",
                pool.kind.tag(),
                pool.source,
                pool.waves.len()
            )));
        }
        for method in SnrMethod::ALL {
            let estimates = pool
                .waves
                .par_iter()
                .map(|w| method.estimate(w))
                .collect::<Result<Vec<_>>>()?;
            reports.push(SnrReport {
                kind: pool.kind,
                source: pool.source,
                method,
                estimates,
            });
        }
    }
    Ok(SnrTable { reports })
}

/// Generator outputs for one source pool.
#[derive(Clone, Debug)]
pub struct Conversions {
    pub source: StyleLabel,
    /// One generator pass, normalized.
    pub converted: Vec<Grid>,
    /// Back through the other generator, normalized.
    pub round_trip: Vec<Grid>,
}

/// Converts every sample of `pool` (of style `source`) and back, in eval mode.
pub fn convert_pool(model: &mut VoiceGan<f32>, pool: &[DomainSample], source: StyleLabel) -> Result<Conversions> {
    let mut converted = Vec::with_capacity(pool.len());
    let mut round_trip = Vec::with_capacity(pool.len());
    for s in pool {
        let c = model.generator(source).convert(s)?;
        let there = DomainSample {
            magnitude: c.clone(),
            ..s.clone()
        };
        round_trip.push(model.generator(source.other()).convert(&there)?);
        converted.push(c);
    }
    Ok(Conversions {
        source,
        converted,
        round_trip,
    })
}

/// The four pools of one source style, all but the originals resynthesized
/// with Griffin-Lim.
pub fn battery_pools(
    originals: &[Waveform],
    samples: &[DomainSample],
    conv: &Conversions,
    gl_iters: usize,
) -> Result<Vec<Pool>> {
    let how = Reconstruction::GriffinLim { iters: gl_iters };
    let resynth = |grids: Vec<&Grid>| -> Result<Vec<Waveform>> {
        samples
            .par_iter()
            .zip(grids)
            .map(|(s, g)| s.reconstruct(g, how))
            .collect()
    };
    let pool = |kind, waves| Pool {
        kind,
        source: conv.source,
        waves,
    };
    Ok(vec![
        pool(PoolKind::Original, originals.to_vec()),
        pool(
            PoolKind::Resynthesized,
            resynth(samples.iter().map(|s| &s.magnitude).collect())?,
        ),
        pool(PoolKind::Converted, resynth(conv.converted.iter().collect())?),
        pool(PoolKind::RoundTrip, resynth(conv.round_trip.iter().collect())?),
    ])
}

#[cfg(test)]
mod tests;
