//! Semantic clustering and topic discovery for short texts such as tweets.
//!
//! The pipeline cleans and tokenizes tweets ([`corpus`]), learns skip-gram
//! word embeddings ([`embed`]), groups words into semantic clusters with
//! cosine k-means ([`cluster`]), turns every tweet into a TF-IDF weighted
//! vector over those word clusters ([`vectorize`]), compresses the vectors
//! with a deep autoencoder ([`autoenc`]), clusters the codes, and summarizes
//! each tweet cluster with LDA topics and frequent words ([`topics`]).
//! [`pipeline`] runs the stages with content-addressed artifact caching.

pub mod autoenc;
pub mod cluster;
pub mod config;
pub mod corpus;
pub mod embed;
mod error;
pub(crate) mod io;
pub mod pipeline;
pub mod report;
pub mod topics;
pub mod vectorize;

pub use error::{Error, Result};
