use super::Grid;
use crate::error::{Error, Result};

/// Offset inside the log compression `ln(1 + mag/ε)`.
pub const LOG_EPS: f64 = 1e-5;

/// Affine range of the log-compressed magnitudes, fitted on a corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub lo: f64,
    pub hi: f64,
}

fn compress(m: f64) -> f64 {
    (m.max(0.0) / LOG_EPS).ln_1p()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

impl NormStats {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || hi <= lo {
            return Err(Error::DegenerateStats { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// 1st and 99th percentiles of the compressed magnitudes of `grids`.
    pub fn fit<'a>(grids: impl IntoIterator<Item = &'a Grid>) -> Result<Self> {
        let mut all: Vec<f64> = grids
            .into_iter()
            .flat_map(|g| g.data().iter().map(|&m| compress(m)))
            .collect();
        if all.is_empty() {
            return Err(Error::Empty("no magnitudes to fit".into()));
        }
        all.sort_by(f64::total_cmp);
        let lo = percentile(&all, 0.01);
        let hi = percentile(&all, 0.99);
        Self::new(lo, hi)
    }

    pub fn normalize(&self, mag: &Grid) -> Grid {
        mag.map(|m| ((compress(m) - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0))
    }

    pub fn denormalize(&self, grid: &Grid) -> Grid {
        grid.map(|v| {
            let c = v.clamp(0.0, 1.0) * (self.hi - self.lo) + self.lo;
            (LOG_EPS * c.exp_m1()).max(0.0)
        })
    }
}
