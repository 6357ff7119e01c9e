//! Naturally perturbed reading-comprehension test sets from Wikipedia
//! revision histories.
//!
//! The pipeline harvests revision histories ([`harvest`]), cleans them
//! ([`wikitext`]), aligns adjacent revisions to mine original/perturbed
//! paragraph pairs ([`diff`]), matches those pairs against SQuAD-style
//! datasets ([`testset`]), and scores external model predictions on the
//! resulting paired sets ([`metrics`], [`challenge`]). [`synth`] provides
//! the synthetic character- and word-level perturbations used as a
//! comparison point and for augmentation.

pub mod challenge;
pub mod dataset;
pub mod diff;
pub mod harvest;
pub mod metrics;
pub mod seed;
pub mod sentence;
pub mod synth;
pub mod testset;
pub mod wikitext;
