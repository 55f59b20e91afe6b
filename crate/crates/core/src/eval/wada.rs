//! Waveform-amplitude-distribution SNR estimation.
//!
//! Clean speech amplitudes are modelled as Gamma distributed with shape 0.4
//! and the noise as Gaussian. The statistic `ln(mean|x|) - mean(ln|x|)`
//! depends only on the mixing ratio, so a table of statistic against SNR,
//! built once by Monte Carlo, inverts it.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

use super::check_duration;

/// Shape of the Gamma amplitude model.
pub const GAMMA_SHAPE: f64 = 0.4;
/// Lowest and highest SNR in the shipped table, in dB.
pub const TABLE_MIN_DB: i32 = -20;
pub const TABLE_MAX_DB: i32 = 100;

/// Amplitudes below this fraction of the peak are floored before the log.
const LOG_FLOOR: f64 = 1e-10;

const BUILTIN: &str = include_str!("wada_table.txt");

/// Monotone map from the amplitude statistic to SNR in dB.
#[derive(Clone, Debug, PartialEq)]
pub struct WadaTable {
    stat: Vec<f64>,
    snr_db: Vec<f64>,
}

impl WadaTable {
    /// The table shipped with the crate.
    pub fn builtin() -> &'static WadaTable {
        static TABLE: OnceLock<WadaTable> = OnceLock::new();
        TABLE.get_or_init(|| WadaTable::parse(BUILTIN).expect("shipped WADA table parses"))
    }

    /// Monte Carlo construction over the integer SNR grid. Every grid point
    /// reuses the same speech and noise draws, so the curve is smooth.
    pub fn build(samples: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = Gamma::new(GAMMA_SHAPE, 1.0).expect("valid gamma");
        let speech: Vec<f64> = (0..samples)
            .map(|_| {
                let a: f64 = gamma.sample(&mut rng);
                if rng.gen::<bool>() {
                    a
                } else {
                    -a
                }
            })
            .collect();
        let noise: Vec<f64> = (0..samples).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ps = power(&speech);
        let pn = power(&noise);
        let (snr_db, stat): (Vec<f64>, Vec<f64>) = (TABLE_MIN_DB..=TABLE_MAX_DB)
            .into_par_iter()
            .map(|db| {
                let gain = (ps / pn / 10f64.powf(db as f64 / 10.0)).sqrt();
                let mix: Vec<f64> = speech.iter().zip(&noise).map(|(s, n)| s + gain * n).collect();
                (db as f64, statistic_unchecked(&mix))
            })
            .unzip();
        Self { stat, snr_db }
    }

    /// Two whitespace-separated columns per line: statistic, SNR in dB.
    /// Lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut stat = Vec::new();
        let mut snr_db = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| Error::Config {
                line: i + 1,
                reason: reason.to_string(),
            };
            let mut cols = line.split_whitespace().map(str::parse::<f64>);
            match (cols.next(), cols.next(), cols.next()) {
                (Some(Ok(g)), Some(Ok(db)), None) => {
                    stat.push(g);
                    snr_db.push(db);
                }
                _ => return Err(bad("expected two numeric columns")),
            }
        }
        if stat.len() < 2 {
            return Err(Error::Empty("WADA table needs at least two rows".into()));
        }
        let table = Self { stat, snr_db };
        if !table.is_monotone() {
            return Err(Error::InvalidArgument("WADA table is not strictly increasing".into()));
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# statistic snr_db\n");
        for (g, db) in self.stat.iter().zip(&self.snr_db) {
            out.push_str(&format!("{g:.12} {db}\n"));
        }
        out
    }

    /// Both columns strictly increasing.
    pub fn is_monotone(&self) -> bool {
        self.stat.windows(2).all(|w| w[0] < w[1]) && self.snr_db.windows(2).all(|w| w[0] < w[1])
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.stat.iter().copied().zip(self.snr_db.iter().copied())
    }

    /// SNR range covered, in dB.
    pub fn range(&self) -> (f64, f64) {
        (self.snr_db[0], *self.snr_db.last().unwrap())
    }

    /// Piecewise-linear inverse, clamped to the table range.
    pub fn lookup(&self, g: f64) -> f64 {
        let n = self.stat.len();
        if g <= self.stat[0] {
            return self.snr_db[0];
        }
        if g >= self.stat[n - 1] {
            return self.snr_db[n - 1];
        }
        let i = self.stat.partition_point(|&s| s <= g) - 1;
        let t = (g - self.stat[i]) / (self.stat[i + 1] - self.stat[i]);
        self.snr_db[i] + t * (self.snr_db[i + 1] - self.snr_db[i])
    }
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn statistic_unchecked(x: &[f64]) -> f64 {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = peak * LOG_FLOOR;
    let n = x.len() as f64;
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mean_log = x.iter().map(|v| v.abs().max(floor).ln()).sum::<f64>() / n;
    mean_abs.ln() - mean_log
}

/// `ln(mean|x|) - mean(ln|x|)`, with amplitudes floored at a fixed fraction
/// of the peak so the value is scale invariant.
pub fn amplitude_statistic(x: &[f64]) -> Result<f64> {
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("all-zero signal".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("waveform sample".into()));
    }
    Ok(statistic_unchecked(x))
}

/// WADA SNR estimate in dB using the shipped table.
pub fn wada(w: &Waveform) -> Result<f64> {
    wada_with(w, WadaTable::builtin())
}

pub fn wada_with(w: &Waveform, table: &WadaTable) -> Result<f64> {
    check_duration(w)?;
    Ok(table.lookup(amplitude_statistic(&w.samples)?))
}
