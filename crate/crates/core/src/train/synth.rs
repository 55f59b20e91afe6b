use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dsp::{save_wav, Waveform};
use crate::error::{Error, Result};
use crate::model::StyleLabel;

use super::config::{key_values, parse, unknown_key};

/// Formant frequencies (Hz) of the shared vowel inventory. Both styles speak
/// the same vowels; each style scales the formants by its own factor.
pub const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];

const FORMANT_BANDWIDTHS: [f64; 3] = [90.0, 110.0, 160.0];
const HIGHEST_HARMONIC_HZ: f64 = 3800.0;

/// Voice parameters of one style.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleSpec {
    /// Range of the per-utterance base pitch.
    pub f0_hz: (f64, f64),
    /// Spectral slope of the harmonic source.
    pub tilt_db_per_octave: f64,
    /// Multiplier applied to every vowel formant (the envelope peaks).
    pub formant_scale: f64,
}

/// Recipe for a synthetic two-style corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub style_a: StyleSpec,
    pub style_b: StyleSpec,
    /// Utterance duration range in seconds.
    pub duration_s: (f64, f64),
    /// Utterances per style.
    pub count: usize,
    pub sample_rate_hz: u32,
    /// Level of the white background noise relative to the utterance's
    /// active-speech RMS.
    pub noise_db: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            style_a: StyleSpec {
                f0_hz: (100.0, 150.0),
                tilt_db_per_octave: -4.0,
                formant_scale: 1.0,
            },
            style_b: StyleSpec {
                f0_hz: (200.0, 300.0),
                tilt_db_per_octave: -9.0,
                formant_scale: 1.18,
            },
            duration_s: (0.5, 1.5),
            count: 200,
            sample_rate_hz: 8000,
            noise_db: -50.0,
            seed: 0,
        }
    }
}

/// Pitch contour excursion around the base f0.
pub const CONTOUR_SPAN: f64 = 0.08;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::InvalidArgument(why));
        for s in [&self.style_a, &self.style_b] {
            if !(s.f0_hz.0 > 0.0 && s.f0_hz.0 <= s.f0_hz.1) || s.formant_scale <= 0.0 {
                return bad(format!("invalid style {s:?}"));
            }
        }
        let lo = |s: &StyleSpec| s.f0_hz.0 * (1.0 - CONTOUR_SPAN);
        let hi = |s: &StyleSpec| s.f0_hz.1 * (1.0 + CONTOUR_SPAN);
        let (a, b) = (&self.style_a, &self.style_b);
        if hi(a) >= lo(b) && hi(b) >= lo(a) {
            return bad("style pitch ranges (with contour) overlap".into());
        }
        if !(self.duration_s.0 > 0.0 && self.duration_s.0 <= self.duration_s.1) || self.count == 0 {
            return bad(format!(
                "invalid duration {:?} or count {}",
                self.duration_s, self.count
            ));
        }
        if self.sample_rate_hz < 8000 {
            return bad("sample rate below 8 kHz".into());
        }
        Ok(())
    }

    /// Parses `key = value` lines over [`SynthSpec::default`]. Keys are the
    /// ones written by [`SynthSpec::to_text`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (line, key, value) in key_values(text)? {
            let (style, field) = match key.split_once('.') {
                Some(("a", f)) => (Some(StyleLabel::A), f),
                Some(("b", f)) => (Some(StyleLabel::B), f),
                _ => (None, key),
            };
            match style {
                Some(label) => {
                    let s = match label {
                        StyleLabel::A => &mut spec.style_a,
                        StyleLabel::B => &mut spec.style_b,
                    };
                    match field {
                        "f0_min_hz" => s.f0_hz.0 = parse(line, key, value)?,
                        "f0_max_hz" => s.f0_hz.1 = parse(line, key, value)?,
                        "tilt_db_per_octave" => s.tilt_db_per_octave = parse(line, key, value)?,
                        "formant_scale" => s.formant_scale = parse(line, key, value)?,
                        _ => return Err(unknown_key(line, key)),
                    }
                }
                None => match key {
                    "duration_min_s" => spec.duration_s.0 = parse(line, key, value)?,
                    "duration_max_s" => spec.duration_s.1 = parse(line, key, value)?,
                    "count" => spec.count = parse(line, key, value)?,
                    "sample_rate_hz" => spec.sample_rate_hz = parse(line, key, value)?,
                    "noise_db" => spec.noise_db = parse(line, key, value)?,
                    "seed" => spec.seed = parse(line, key, value)?,
                    _ => return Err(unknown_key(line, key)),
                },
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (tag, s) in [("a", &self.style_a), ("b", &self.style_b)] {
            out.push_str(&format!("{tag}.f0_min_hz = {:?}\n", s.f0_hz.0));
            out.push_str(&format!("{tag}.f0_max_hz = {:?}\n", s.f0_hz.1));
            out.push_str(&format!("{tag}.tilt_db_per_octave = {:?}\n", s.tilt_db_per_octave));
            out.push_str(&format!("{tag}.formant_scale = {:?}\n", s.formant_scale));
        }
        out.push_str(&format!("duration_min_s = {:?}\n", self.duration_s.0));
        out.push_str(&format!("duration_max_s = {:?}\n", self.duration_s.1));
        out.push_str(&format!("count = {}\n", self.count));
        out.push_str(&format!("sample_rate_hz = {}\n", self.sample_rate_hz));
        out.push_str(&format!("noise_db = {:?}\n", self.noise_db));
        out.push_str(&format!("seed = {}\n", self.seed));
        out
    }

    pub fn style(&self, label: StyleLabel) -> &StyleSpec {
        match label {
            StyleLabel::A => &self.style_a,
            StyleLabel::B => &self.style_b,
        }
    }
}

/// Parameters drawn for one utterance, kept for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub wave: Waveform,
    pub base_f0_hz: f64,
    /// Vowel index (into [`VOWELS`]) of each pseudo-syllable.
    pub vowels: Vec<usize>,
}

fn envelope(style: &StyleSpec, vowel: usize, f: f64) -> f64 {
    let tilt = 10f64.powf(style.tilt_db_per_octave * (f / 100.0).log2() / 20.0);
    let peaks: f64 = VOWELS[vowel]
        .iter()
        .zip(FORMANT_BANDWIDTHS)
        .map(|(&fk, bw)| {
            let d = (f - fk * style.formant_scale) / (bw * style.formant_scale);
            1.0 / (1.0 + d * d)
        })
        .sum();
    tilt * (0.03 + peaks)
}

/// Raised-cosine taper over `len` samples with `ramp`-sample edges.
fn taper(i: usize, len: usize, ramp: usize) -> f64 {
    let edge = i.min(len - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
    }
}

/// One harmonic utterance of `style` drawn from `rng`.
pub fn synth_utterance(spec: &SynthSpec, label: StyleLabel, rng: &mut ChaCha8Rng) -> Utterance {
    let style = spec.style(label);
    let sr = spec.sample_rate_hz as f64;
    let dur = rng.gen_range(spec.duration_s.0..=spec.duration_s.1);
    let n = (dur * sr).round() as usize;
    let base_f0 = rng.gen_range(style.f0_hz.0..=style.f0_hz.1);
    let contour: [f64; 3] = std::array::from_fn(|_| 1.0 + rng.gen_range(-CONTOUR_SPAN..=CONTOUR_SPAN));

    // Pseudo-syllable layout: gaps before, between and after.
    let syllables = rng.gen_range(2..=4);
    let gaps: Vec<f64> = (0..=syllables).map(|_| rng.gen_range(0.04..0.09)).collect();
    let weights: Vec<f64> = (0..syllables).map(|_| rng.gen_range(0.7..1.3)).collect();
    let voiced = (dur - gaps.iter().sum::<f64>()).max(0.1 * syllables as f64);
    let wsum: f64 = weights.iter().sum();
    let vowels: Vec<usize> = (0..syllables).map(|_| rng.gen_range(0..VOWELS.len())).collect();
    let mut segments = Vec::with_capacity(syllables);
    let mut t = gaps[0];
    for k in 0..syllables {
        let len = voiced * weights[k] / wsum;
        let start = (t * sr) as usize;
        let end = (((t + len) * sr) as usize).min(n);
        segments.push((start.min(n), end, vowels[k]));
        t += len + gaps[k + 1];
    }

    let mut x = vec![0.0; n];
    let mut phase = 0.0;
    let ramp = (0.025 * sr) as usize;
    for (i, xi) in x.iter_mut().enumerate() {
        let pos = i as f64 / n.max(2) as f64 * 2.0;
        let f0 = base_f0
            * if pos < 1.0 {
                contour[0] + (contour[1] - contour[0]) * pos
            } else {
                contour[1] + (contour[2] - contour[1]) * (pos - 1.0)
            };
        phase += 2.0 * PI * f0 / sr;
        let Some(&(start, end, vowel)) = segments.iter().find(|(s, e, _)| i >= *s && i < *e) else {
            continue;
        };
        let amp = taper(i - start, end - start, ramp.min((end - start) / 2).max(1));
        let mut s = 0.0;
        let mut h = 1;
        while h as f64 * f0 < HIGHEST_HARMONIC_HZ {
            s += envelope(style, vowel, h as f64 * f0) * (h as f64 * phase).sin();
            h += 1;
        }
        *xi = amp * s;
    }

    let active: Vec<f64> = x.iter().copied().filter(|v| *v != 0.0).collect();
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let gain = 0.5 / peak;
    let rms = (active.iter().map(|v| v * v).sum::<f64>() / active.len().max(1) as f64).sqrt() * gain;
    let noise = Normal::new(0.0, rms * 10f64.powf(spec.noise_db / 20.0)).expect("finite noise level");
    for v in &mut x {
        *v = *v * gain + noise.sample(rng);
    }
    Utterance {
        wave: Waveform::new(x, spec.sample_rate_hz),
        base_f0_hz: base_f0,
        vowels,
    }
}

/// `count` utterances per style. Utterance `i` of style `s` draws from its
/// own random stream, so results do not depend on scheduling.
pub fn synth_utterances(spec: &SynthSpec) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    spec.validate()?;
    let make = |label: StyleLabel| -> Vec<Utterance> {
        (0..spec.count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(((label.index() as u64 + 1) << 32) | i as u64);
                synth_utterance(spec, label, &mut rng)
            })
            .collect()
    };
    Ok((make(StyleLabel::A), make(StyleLabel::B)))
}

/// Writes utterances as `dir/{A,B}/utt-NNNN.wav` plus a manifest.
pub fn write_corpus(dir: impl AsRef<Path>, a: &[Utterance], b: &[Utterance]) -> Result<()> {
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for (label, pool) in [("A", a), ("B", b)] {
        let sub = dir.as_ref().join(label);
        std::fs::create_dir_all(&sub)?;
        for (i, u) in pool.iter().enumerate() {
            let name = format!("{label}/utt-{i:04}.wav");
            save_wav(dir.as_ref().join(&name), &u.wave)?;
            let vowels: Vec<String> = u.vowels.iter().map(|v| v.to_string()).collect();
            manifest.push_str(&format!(
                "{label},{name},{},{:.3},{}\n",
                u.wave.len(),
                u.base_f0_hz,
                vowels.join("-")
            ));
        }
    }
    std::fs::write(dir.as_ref().join(MANIFEST), manifest)?;
    Ok(())
}

/// File listing every utterance written by [`write_corpus`].
pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "style,file,samples,base_f0_hz,vowels";
