//! Reliability detection for short texts by independent component analysis.
//!
//! The pipeline turns a labeled corpus into a tf-idf word-by-document
//! matrix ([`text`]), projects it onto its leading principal subspace
//! ([`whitening`]), separates that projection into maximally independent
//! sources ([`ica`]) and classifies documents from their source coordinates
//! with a kernel SVM ([`svm`]). The estimated mixing matrix doubles as a
//! word-loading table for each latent component ([`evaluation`]).

pub mod codec;
pub mod evaluation;
pub mod ica;
pub mod pipeline;
pub mod svm;
pub mod text;
pub mod whitening;
