//! Voice style transfer with spectrogram-domain adversarial networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`dsp`]: WAV I/O, resampling, STFT/ISTFT, Griffin-Lim, magnitude normalization.
//! - [`tensor`]: dense tensors with reverse-mode differentiation and Adam.
//! - [`nn`]: convolution blocks and initialization.
//! - [`model`]: generators, domain discriminators and the style discriminator.
//! - [`losses`]: adversarial, reconstruction, style, feature and smoothness terms.
//! - [`train`]: corpora, batching, the alternating optimization loop, checkpoints.
//! - [`eval`]: style classifier, SNR estimators, spectrogram images.

pub mod dsp;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

// The guide in book/ is compiled here so its examples run with `cargo test --doc`.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
    #[doc = include_str!("../../../book/src/signals.md")]
    mod signals {}
    #[doc = include_str!("../../../book/src/differentiation.md")]
    mod differentiation {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
