//! Log-bilinear softmax translation model.
//!
//! For a source word `e` and a target word `f` the model scores
//! `φ_s(e)ᵀ W φ_t(f)` and normalizes the exponentiated scores over a candidate
//! set of target words:
//!
//! ```text
//! Pr(f | e; W) = exp(φ_s(e)ᵀ W φ_t(f)) / Σ_{f' ∈ candidates} exp(φ_s(e)ᵀ W φ_t(f'))
//! ```
//!
//! All arithmetic is carried out in `f64`; stored `f32` embeddings are widened
//! when the candidate matrix is built.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, Zip};
use rayon::prelude::*;

use crate::embeddings::{read_string, read_u32, to_u32, EmbeddingStore};
use crate::error::{Error, Result};
use crate::lexicon::Pair;

const MODEL_MAGIC: &[u8; 4] = b"BLXM";
const MODEL_VERSION: u8 = 1;

/// Source groups handled by one parallel gradient task. Fixed so that the
/// reduction order, and therefore the result, does not depend on thread count.
const GROUPS_PER_CHUNK: usize = 64;

/// Ordered, duplicate-free subset of the target vocabulary over which the
/// softmax partition function runs.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    store_indices: Vec<usize>,
    position: HashMap<String, usize>,
    tokens: Vec<String>,
    vectors: Array2<f64>,
}

impl CandidateSet {
    /// Every token of the target store, in store order.
    pub fn full(target: &EmbeddingStore) -> Self {
        Self::from_indices(target, (0..target.len()).collect())
    }

    pub fn from_tokens<S: AsRef<str>>(target: &EmbeddingStore, tokens: &[S]) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("candidate set"));
        }
        let mut seen = HashSet::new();
        let mut indices = Vec::with_capacity(tokens.len());
        for token in tokens {
            let token = token.as_ref();
            let idx = target.index_of(token).ok_or_else(|| Error::UnknownToken {
                kind: "target",
                token: token.to_owned(),
            })?;
            if !seen.insert(idx) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate candidate {token:?}"
                )));
            }
            indices.push(idx);
        }
        Ok(Self::from_indices(target, indices))
    }

    /// Only the target types that occur in `pairs`, in target-store order.
    pub fn dictionary_targets(target: &EmbeddingStore, pairs: &[Pair]) -> Result<Self> {
        let mut indices = Vec::new();
        for p in pairs {
            indices.push(target.index_of(&p.target).ok_or_else(|| Error::UnknownToken {
                kind: "target",
                token: p.target.clone(),
            })?);
        }
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::Empty("candidate set"));
        }
        Ok(Self::from_indices(target, indices))
    }

    fn from_indices(target: &EmbeddingStore, store_indices: Vec<usize>) -> Self {
        let tokens: Vec<String> = store_indices.iter().map(|&i| target.token(i).to_owned()).collect();
        let position = tokens.iter().cloned().zip(0..).collect();
        let dim = target.dimension();
        let vectors = Array2::from_shape_fn((store_indices.len(), dim), |(r, c)| {
            f64::from(target.matrix()[[store_indices[r], c]])
        });
        CandidateSet {
            store_indices,
            position,
            tokens,
            vectors,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn position(&self, token: &str) -> Option<usize> {
        self.position.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.position.contains_key(token)
    }

    /// Candidate vectors as rows, widened to `f64`.
    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn store_indices(&self) -> &[usize] {
        &self.store_indices
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub token: String,
    pub probability: f64,
}

/// Candidate translations of one source word by descending probability, ties
/// broken by ascending target token.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationDistribution {
    pub source: String,
    pub entries: Vec<Translation>,
}

impl TranslationDistribution {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|t| t.probability).sum()
    }
}

/// A dictionary pair resolved to (source store row, candidate position).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct IndexedPair {
    pub source: usize,
    pub candidate: usize,
}

/// Stabilized softmax: returns the probabilities and `log Σ exp(scores)`.
pub fn softmax(scores: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = scores.mapv(|s| (s - max).exp());
    let z = probs.sum();
    probs /= z;
    (probs, max + z.ln())
}

#[derive(Clone, Debug)]
pub struct BilinearModel<'a> {
    weights: Array2<f64>,
    source: &'a EmbeddingStore,
    target: &'a EmbeddingStore,
    candidates: CandidateSet,
}

impl<'a> BilinearModel<'a> {
    pub fn new(
        source: &'a EmbeddingStore,
        target: &'a EmbeddingStore,
        weights: Array2<f64>,
        candidates: CandidateSet,
    ) -> Result<Self> {
        check_weights(&weights, source.dimension(), target.dimension())?;
        if candidates.is_empty() {
            return Err(Error::Empty("candidate set"));
        }
        if candidates.vectors.ncols() != target.dimension() {
            return Err(Error::Dimension(
                "candidate set was built from a different target store".into(),
            ));
        }
        Ok(BilinearModel {
            weights,
            source,
            target,
            candidates,
        })
    }

    pub fn zeros(
        source: &'a EmbeddingStore,
        target: &'a EmbeddingStore,
        candidates: CandidateSet,
    ) -> Result<Self> {
        let w = Array2::zeros((source.dimension(), target.dimension()));
        Self::new(source, target, w, candidates)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Array2<f64>) -> Result<()> {
        check_weights(&weights, self.source.dimension(), self.target.dimension())?;
        self.weights = weights;
        Ok(())
    }

    pub fn source(&self) -> &'a EmbeddingStore {
        self.source
    }

    pub fn target(&self) -> &'a EmbeddingStore {
        self.target
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    fn source_index(&self, token: &str) -> Result<usize> {
        self.source.index_of(token).ok_or_else(|| Error::UnknownToken {
            kind: "source",
            token: token.to_owned(),
        })
    }

    /// The bilinear form `φ_s(e)ᵀ W φ_t(f)` before exponentiation.
    pub fn score(&self, source: &str, target: &str) -> Result<f64> {
        let e = self.source_index(source)?;
        let f = self.target.index_of(target).ok_or_else(|| Error::UnknownToken {
            kind: "target",
            token: target.to_owned(),
        })?;
        let projected = self.project(e);
        Ok(projected.dot(&self.target.vector_f64(f)))
    }

    /// `φ_s(e)ᵀ W` for the source row `e`.
    pub fn project(&self, source_row: usize) -> Array1<f64> {
        self.source.vector_f64(source_row).dot(&self.weights)
    }

    /// Scores of every candidate for the source row `e`.
    pub fn candidate_scores(&self, source_row: usize) -> Array1<f64> {
        self.candidates.vectors.dot(&self.project(source_row))
    }

    pub fn probabilities(&self, source_row: usize) -> Array1<f64> {
        softmax(self.candidate_scores(source_row).view()).0
    }

    /// Candidate positions sorted by descending probability, then token, along
    /// with the probabilities indexed by candidate position.
    pub fn ranking(&self, source: &str) -> Result<(Vec<usize>, Array1<f64>)> {
        let e = self.source_index(source)?;
        let probs = self.probabilities(e);
        let mut order: Vec<usize> = (0..probs.len()).collect();
        let tokens = &self.candidates.tokens;
        order.sort_by(|&a, &b| match probs[b].total_cmp(&probs[a]) {
            Ordering::Equal => tokens[a].cmp(&tokens[b]),
            other => other,
        });
        Ok((order, probs))
    }

    pub fn distribution(&self, source: &str) -> Result<TranslationDistribution> {
        self.top_n(source, usize::MAX)
    }

    /// The first `n` entries of the full distribution, not renormalized.
    pub fn top_n(&self, source: &str, n: usize) -> Result<TranslationDistribution> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        let (order, probs) = self.ranking(source)?;
        let entries = order
            .into_iter()
            .take(n)
            .map(|c| Translation {
                token: self.candidates.tokens[c].clone(),
                probability: probs[c],
            })
            .collect();
        Ok(TranslationDistribution {
            source: source.to_owned(),
            entries,
        })
    }

    /// Resolves dictionary pairs against the stores and the candidate set.
    pub fn index_pairs(&self, pairs: &[Pair]) -> Result<Vec<IndexedPair>> {
        pairs
            .iter()
            .map(|p| {
                let source = self.source_index(&p.source)?;
                if !self.target.contains(&p.target) {
                    return Err(Error::UnknownToken {
                        kind: "target",
                        token: p.target.clone(),
                    });
                }
                let candidate = self
                    .candidates
                    .position(&p.target)
                    .ok_or_else(|| Error::NotACandidate(p.target.clone()))?;
                Ok(IndexedPair { source, candidate })
            })
            .collect()
    }

    /// `Σ −log Pr(f | e; W)` over `pairs`.
    pub fn nll(&self, pairs: &[Pair]) -> Result<f64> {
        Ok(self.nll_indexed(&self.index_pairs(pairs)?))
    }

    pub fn nll_gradient(&self, pairs: &[Pair]) -> Result<Array2<f64>> {
        Ok(self.nll_and_gradient_indexed(&self.index_pairs(pairs)?, GROUPS_PER_CHUNK).1)
    }

    /// Gradient accumulated in parallel chunks of `groups_per_chunk` source
    /// groups. Different chunkings agree up to floating-point reassociation.
    pub fn nll_gradient_chunked(&self, pairs: &[Pair], groups_per_chunk: usize) -> Result<Array2<f64>> {
        let pairs = self.index_pairs(pairs)?;
        Ok(self.nll_and_gradient_indexed(&pairs, groups_per_chunk.max(1)).1)
    }

    pub fn nll_indexed(&self, pairs: &[IndexedPair]) -> f64 {
        let groups = group_by_source(pairs);
        let partials: Vec<f64> = groups
            .par_chunks(GROUPS_PER_CHUNK)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|(e, targets)| {
                        let scores = self.candidate_scores(*e);
                        let (_, lse) = softmax(scores.view());
                        targets.iter().map(|&f| lse - scores[f]).sum::<f64>()
                    })
                    .sum()
            })
            .collect();
        partials.into_iter().sum()
    }

    /// Negative log-likelihood and its gradient with respect to `W`:
    /// `Σ φ_s(e) (E_{f'∼Pr(·|e)}[φ_t(f')] − φ_t(f))ᵀ`.
    pub fn nll_and_gradient_indexed(
        &self,
        pairs: &[IndexedPair],
        groups_per_chunk: usize,
    ) -> (f64, Array2<f64>) {
        let groups = group_by_source(pairs);
        let shape = self.weights.raw_dim();
        let partials: Vec<(f64, Array2<f64>)> = groups
            .par_chunks(groups_per_chunk)
            .map(|chunk| {
                let mut grad = Array2::zeros(shape);
                let mut nll = 0.0;
                for (e, targets) in chunk {
                    let x = self.source.vector_f64(*e);
                    let scores = self.candidates.vectors.dot(&x.dot(&self.weights));
                    let (probs, lse) = softmax(scores.view());
                    let expected = self.candidates.vectors.t().dot(&probs);
                    let mut direction = expected * targets.len() as f64;
                    for &f in targets {
                        nll += lse - scores[f];
                        direction -= &self.candidates.vectors.row(f);
                    }
                    Zip::from(grad.rows_mut()).and(&x).for_each(|mut row, &xi| {
                        row.scaled_add(xi, &direction);
                    });
                }
                (nll, grad)
            })
            .collect();
        let mut nll = 0.0;
        let mut grad = Array2::zeros(shape);
        for (n, g) in partials {
            nll += n;
            grad += &g;
        }
        (nll, grad)
    }

    /// Writes the model file: magic, version byte, source and target
    /// dimensions (u32), candidate count (u32), length-prefixed candidate
    /// tokens, then `W` row-major as `f64`. Little-endian throughout.
    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(MODEL_MAGIC)?;
        writer.write_all(&[MODEL_VERSION])?;
        writer.write_all(&to_u32(self.weights.nrows())?.to_le_bytes())?;
        writer.write_all(&to_u32(self.weights.ncols())?.to_le_bytes())?;
        writer.write_all(&to_u32(self.candidates.len())?.to_le_bytes())?;
        for token in &self.candidates.tokens {
            writer.write_all(&to_u32(token.len())?.to_le_bytes())?;
            writer.write_all(token.as_bytes())?;
        }
        for v in self.weights.iter() {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(
        mut reader: R,
        source: &'a EmbeddingStore,
        target: &'a EmbeddingStore,
    ) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("bad model magic".into()));
        }
        let mut version = [0u8; 1];
        reader.read_exact(&mut version)?;
        if version[0] != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", version[0])));
        }
        let rows = read_u32(&mut reader)? as usize;
        let cols = read_u32(&mut reader)? as usize;
        if rows != source.dimension() || cols != target.dimension() {
            return Err(Error::Dimension(format!(
                "model is {rows}x{cols} but embeddings are {}x{}",
                source.dimension(),
                target.dimension()
            )));
        }
        let count = read_u32(&mut reader)? as usize;
        let mut tokens = Vec::with_capacity(count);
        for _ in 0..count {
            tokens.push(read_string(&mut reader)?);
        }
        let mut bytes = vec![0u8; rows * cols * 8];
        reader.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let weights = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))?;
        let candidates = CandidateSet::from_tokens(target, &tokens)?;
        Self::new(source, target, weights, candidates)
    }
}

fn check_weights(w: &Array2<f64>, rows: usize, cols: usize) -> Result<()> {
    if w.dim() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "W is {}x{}, embeddings need {rows}x{cols}",
            w.nrows(),
            w.ncols()
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("W has non-finite entries".into()));
    }
    Ok(())
}

fn group_by_source(pairs: &[IndexedPair]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.source).or_default().push(p.candidate);
    }
    groups.into_iter().collect()
}
