//! Online Arabic handwriting recognition from Beta-elliptic stroke features.
//!
//! The pipeline runs: ink → size normalization and low-pass filtering →
//! velocity-valley segmentation → per-segment Beta/ellipse features plus
//! baseline features → one MLP per character → scaled likelihoods → vector
//! quantization → discrete HMM word models decoded against a lexicon.

pub mod baseline;
pub mod config;
pub mod features;
pub mod hmm;
pub mod ink;
pub mod mlp;
pub mod pipeline;
pub mod preprocess;
pub mod segment;
pub mod synth;
pub mod vq;

// The guide's snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ink.md")]
    mod ink {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/baseline.md")]
    mod baseline {}
    #[doc = include_str!("../../../book/src/posteriors.md")]
    mod posteriors {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/hmm.md")]
    mod hmm {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
