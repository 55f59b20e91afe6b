//! Corpora, batching, the alternating optimization loop and run directories.

mod config;
mod corpus;
mod synth;
mod trainer;

pub use config::TrainConfig;
pub use corpus::{domain_sample, ingest_dir, load_wav_dir, StyleCorpus};
pub use synth::{
    synth_utterance, synth_utterances, write_corpus, StyleSpec, SynthSpec, Utterance, CONTOUR_SPAN, MANIFEST,
    MANIFEST_HEADER, VOWELS,
};
pub use trainer::{
    parameter_snapshot, read_losses, step_rng, train, write_samples, RunDir, StepState, TrainSummary, Trainer,
    WARMUP_STEPS,
};

use crate::dsp::StftConfig;
use crate::error::Result;

/// Synthesizes a corpus and analyzes it into a [`StyleCorpus`].
pub fn synth_corpus(spec: &SynthSpec, cfg: StftConfig, min_frames: usize) -> Result<StyleCorpus> {
    let (a, b) = synth_utterances(spec)?;
    let wa: Vec<_> = a.into_iter().map(|u| u.wave).collect();
    let wb: Vec<_> = b.into_iter().map(|u| u.wave).collect();
    StyleCorpus::from_waveforms(&wa, &wb, cfg, min_frames)
}
