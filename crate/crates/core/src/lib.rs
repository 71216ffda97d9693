//! Unsupervised speech quality scoring with discrete-unit language models.
//!
//! Speech is encoded into frame features, quantized against a k-means
//! codebook into discrete units, and scored by the mean log-probability a
//! unit language model assigns to that unit sequence. Higher scores mean
//! the utterance looks more like the speech the model was trained on.
//!
//! The modules follow the pipeline:
//!
//! - [`audio`]: WAV loading, downmix, resampling
//! - [`features`]: log-mel front end and the `SLMF` feature file
//! - [`quantizer`]: k-means codebook (`SLMC` file) and assignment
//! - [`tokenizer`]: unit sequences and the repeated-token policy
//! - [`ulm`]: n-gram and LSTM unit language models
//! - [`scoring`]: per-utterance and corpus scores
//! - [`evaluation`]: correlation with MOS and the degradation benchmark
//!
//! The guide in `book/` walks through each stage; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod audio;
mod binfmt;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod manifest;
pub mod quantizer;
pub mod scoring;
pub mod synth;
pub mod tokenizer;
pub mod ulm;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/audio-and-features.md")]
    mod audio_and_features {}
    #[doc = include_str!("../../../book/src/quantizer.md")]
    mod quantizer {}
    #[doc = include_str!("../../../book/src/tokens.md")]
    mod tokens {}
    #[doc = include_str!("../../../book/src/unit-language-models.md")]
    mod unit_language_models {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
