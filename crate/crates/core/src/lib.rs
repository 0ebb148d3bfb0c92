//! Probabilistic translation lexicons from monolingual word embeddings.
//!
//! A bilinear weight matrix `W` maps a source embedding space onto a target
//! one; `Pr(f | e; W)` is a softmax over target candidates of the scores
//! `φ_s(e)ᵀ W φ_t(f)`. `W` is learned from a small seed dictionary by
//! forward-backward splitting with a Frobenius or trace-norm penalty.
//!
//! - [`embeddings`]: loading and serving monolingual vectors
//! - [`lexicon`]: seed dictionary, coverage filtering, train/dev split
//! - [`model`]: scores, distributions, likelihood and gradient
//! - [`optim`]: proximal operators, FOBOS training, grid selection
//! - [`eval`]: precision@k, rank queries, compressed embeddings
//! - [`smt`]: OOV detection and decoder markup

pub mod embeddings;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod smt;

pub use embeddings::{EmbeddingStore, LoadOptions, LoadReport};
pub use error::{Error, Result};
pub use eval::{compress, precision_at_k, rank_of, CompressedEmbeddings, EvalResult};
pub use lexicon::{FilterReport, Pair, SeedLexicon};
pub use model::{BilinearModel, CandidateSet, Translation, TranslationDistribution};
pub use optim::{
    fobos_step, prox_frobenius, prox_trace, select_model, train, CandidatePolicy, Init, Regularizer, Schedule,
    TrainConfig, TrainReport,
};
