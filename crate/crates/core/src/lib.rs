//! Semantic change scoring from contextualised sibling embeddings.
//!
//! Each word's embeddings in a corpus are summarised as a Gaussian
//! `N(μ, V)`. Two corpora are compared either with closed-form divergences
//! between the Gaussians or by averaging a point distance over equal-sized
//! clouds sampled from them. Rankings are evaluated against graded gold
//! scores with Spearman's ρ.

pub mod archive;
pub mod cache;
pub mod cloud;
pub mod distribution;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod measures;
pub mod scoring;

pub use archive::{write_archive, Archive, ArchiveManifest, LayerMode, SiblingSet};
pub use cloud::Cloud;
pub use distribution::{
    covariance_rank, fit_distribution, repair_psd, sample_siblings, CovMode, Covariance,
    CovarianceRep, Estimator, SampleConfig, SiblingDistribution,
};
pub use error::{Error, Result};
pub use evaluation::{
    evaluate, fisher_significance, spearman, AblationTable, EvalResult, GoldRanking,
};
pub use exec::Execution;
pub use measures::{distance, jeffreys_divergence, kl_divergence, MeasureKind};
pub use scoring::{
    average_pairwise_distance, score_corpus_pair, score_corpus_pair_measures, score_word,
    score_word_measures, Accumulation, CloudSource, ScoreConfig, ScoreReport, Variant,
};
