//! Spectral analysis, synthesis and phase recovery properties.

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voicegan::dsp::{griffin_lim, istft, resample, stft, Grid, StftConfig, Waveform};

fn sine(freq: f64, rate: u32, len: usize) -> Waveform {
    let x = (0..len)
        .map(|n| 0.5 * (2.0 * PI * freq * n as f64 / rate as f64).sin())
        .collect();
    Waveform::new(x, rate)
}

fn interior_max_err(a: &[f64], b: &[f64], n_fft: usize) -> f64 {
    let end = a.len().saturating_sub(n_fft);
    (n_fft..end).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_interior_error_is_tiny(
        seed in any::<u64>(),
        len in 256usize..3000,
        amp in 0.01f64..1.0,
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..len).map(|_| amp * r.gen_range(-1.0..1.0)).collect();
        let cfg = StftConfig::default();
        let back = istft(&stft(&Waveform::new(x.clone(), 8000), cfg).unwrap()).unwrap();
        prop_assert_eq!(back.samples.len(), len);
        prop_assert!(interior_max_err(&x, &back.samples, cfg.n_fft) < 1e-6);
    }

    #[test]
    fn resampled_tone_keeps_its_bin(freq in 200.0f64..3400.0) {
        let w = resample(&sine(freq, 16000, 8000), 8000).unwrap();
        let s = stft(&w, StftConfig::default()).unwrap();
        let t = s.frames() / 2;
        let peak = (0..s.bins())
            .max_by(|&a, &b| s.magnitude.get(a, t).total_cmp(&s.magnitude.get(b, t)))
            .unwrap() as f64;
        let expected = freq * 256.0 / 8000.0;
        prop_assert!((peak - expected).abs() <= 1.0, "peak {} expected {}", peak, expected);
    }
}

#[test]
fn random_signal_round_trip_snr_exceeds_100_db() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..8000).map(|_| r.gen_range(-1.0..1.0)).collect();
    let cfg = StftConfig::default();
    let back = istft(&stft(&Waveform::new(x.clone(), 8000), cfg).unwrap()).unwrap();
    let span = cfg.n_fft..x.len() - cfg.n_fft;
    let sig: f64 = x[span.clone()].iter().map(|v| v * v).sum();
    let err: f64 = span.map(|i| (x[i] - back.samples[i]).powi(2)).sum();
    let snr = 10.0 * (sig / err).log10();
    assert!(snr > 100.0, "round-trip SNR {snr:.1} dB");
}

#[test]
fn griffin_lim_error_never_increases() {
    let cfg = StftConfig::default();
    for seed in 0..10 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let frames = r.gen_range(8..40);
        let mag = Grid::from_fn(cfg.bins(), frames, |_, _| r.gen_range(0.0..1.0));
        let out = griffin_lim(&mag, cfg, 100, None, 8000).unwrap();
        assert_eq!(out.errors.len(), 100);
        for (i, w) in out.errors.windows(2).enumerate() {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-12),
                "seed {seed} iter {i}: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
}

#[test]
fn griffin_lim_recovers_sine_magnitude() {
    let cfg = StftConfig::default();
    let s = stft(&sine(1000.0, 8000, 4000), cfg).unwrap();
    let out = griffin_lim(&s.magnitude, cfg, 100, None, 8000).unwrap();
    let rec = stft(&out.wave, cfg).unwrap();
    let sig: f64 = s.magnitude.data().iter().map(|m| m * m).sum();
    let err: f64 = s
        .magnitude
        .data()
        .iter()
        .zip(rec.magnitude.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let snr = 10.0 * (sig / err).log10();
    assert!(snr > 20.0, "magnitude SNR {snr:.1} dB");
}

#[test]
fn griffin_lim_with_true_phase_is_a_fixed_point() {
    let cfg = StftConfig::default();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..2048).map(|_| r.gen_range(-1.0..1.0)).collect();
    let s = stft(&Waveform::new(x, 8000), cfg).unwrap();
    let out = griffin_lim(&s.magnitude, cfg, 2, Some(&s.phase), 8000).unwrap();
    assert!(out.errors[0] < 1e-6, "{:?}", out.errors);
}

#[test]
fn griffin_lim_rejects_bad_input() {
    let cfg = StftConfig::default();
    let mag = Grid::filled(129, 4, 1.0);
    assert!(griffin_lim(&mag, cfg, 0, None, 8000).is_err());
    let neg = Grid::filled(129, 4, -1.0);
    assert!(griffin_lim(&neg, cfg, 1, None, 8000).is_err());
}
