//! Precision@k, rank queries and low-rank compressed embeddings.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::lexicon::Pair;
use crate::linalg::Svd;
use crate::model::BilinearModel;

/// 1-based rank of candidate `c` under the distribution ordering (descending
/// probability, ascending token on ties).
fn rank_in(probs: &Array1<f64>, tokens: &[String], c: usize) -> usize {
    let p = probs[c];
    let ahead = probs
        .iter()
        .zip(tokens)
        .filter(|&(&q, t)| q > p || (q == p && *t < tokens[c]))
        .count();
    ahead + 1
}

/// 1-based position of `target` in the full distribution for `source`.
pub fn rank_of(model: &BilinearModel<'_>, source: &str, target: &str) -> Result<usize> {
    let e = model.source().index_of(source).ok_or_else(|| Error::UnknownToken {
        kind: "source",
        token: source.to_owned(),
    })?;
    let c = model
        .candidates()
        .position(target)
        .ok_or_else(|| Error::NotACandidate(target.to_owned()))?;
    Ok(rank_in(&model.probabilities(e), model.candidates().tokens(), c))
}

/// Dev words resolved against a model's stores and candidate set.
#[derive(Clone, Debug)]
pub struct DevSet {
    /// (source token, source row, gold candidate positions); empty golds mean
    /// every gold target lies outside the candidate set.
    words: Vec<(String, usize, Vec<usize>)>,
}

impl DevSet {
    pub fn new(model: &BilinearModel<'_>, pairs: &[Pair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("dev set"));
        }
        let mut order: Vec<&str> = Vec::new();
        let mut golds: HashMap<&str, Vec<usize>> = HashMap::new();
        for p in pairs {
            if !model.source().contains(&p.source) {
                return Err(Error::UnknownToken {
                    kind: "source",
                    token: p.source.clone(),
                });
            }
            let entry = golds.entry(p.source.as_str()).or_insert_with(|| {
                order.push(p.source.as_str());
                Vec::new()
            });
            if let Some(c) = model.candidates().position(&p.target) {
                if !entry.contains(&c) {
                    entry.push(c);
                }
            }
        }
        let words = order
            .into_iter()
            .map(|s| {
                let row = model.source().index_of(s).expect("checked above");
                (s.to_owned(), row, golds.remove(s).unwrap_or_default())
            })
            .collect();
        Ok(DevSet { words })
    }

    /// Best gold rank per source type, `None` when no gold is a candidate.
    pub fn best_ranks(&self, model: &BilinearModel<'_>) -> Vec<(String, Option<usize>)> {
        let tokens = model.candidates().tokens();
        self.words
            .iter()
            .map(|(word, row, golds)| {
                if golds.is_empty() {
                    return (word.clone(), None);
                }
                let probs = model.probabilities(*row);
                let best = golds.iter().map(|&c| rank_in(&probs, tokens, c)).min();
                (word.clone(), best)
            })
            .collect()
    }

    pub fn precision_at_1(&self, model: &BilinearModel<'_>) -> f64 {
        let ranks = self.best_ranks(model);
        let evaluated = ranks.iter().filter(|(_, r)| r.is_some()).count();
        if evaluated == 0 {
            return 0.0;
        }
        let hits = ranks.iter().filter(|(_, r)| *r == Some(1)).count();
        hits as f64 / evaluated as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub k_values: Vec<usize>,
    pub precision_at_k: BTreeMap<usize, f64>,
    /// Best gold rank per source type; `None` marks a gold-uncovered word.
    pub per_word_ranks: Vec<(String, Option<usize>)>,
    /// Source types that entered the precision denominator.
    pub evaluated: usize,
    /// Source types excluded because no gold target is a candidate.
    pub uncovered: usize,
}

impl EvalResult {
    /// `k<TAB>precision` rows.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k\tprecision")?;
        for (k, p) in &self.precision_at_k {
            writeln!(w, "{k}\t{p}")?;
        }
        Ok(())
    }

    /// `source<TAB>rank` rows, `NA` for gold-uncovered words.
    pub fn write_ranks<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "source\trank")?;
        for (word, rank) in &self.per_word_ranks {
            match rank {
                Some(r) => writeln!(w, "{word}\t{r}")?,
                None => writeln!(w, "{word}\tNA")?,
            }
        }
        Ok(())
    }
}

/// Precision@k over source types: a type is a hit at `k` when any of its gold
/// targets ranks within the first `k` candidates.
pub fn precision_at_k(model: &BilinearModel<'_>, pairs: &[Pair], ks: &[usize]) -> Result<EvalResult> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("k values must be non-empty and positive".into()));
    }
    let dev = DevSet::new(model, pairs)?;
    let per_word_ranks = dev.best_ranks(model);
    let ranks: Vec<usize> = per_word_ranks.iter().filter_map(|(_, r)| *r).collect();
    let evaluated = ranks.len();
    let uncovered = per_word_ranks.len() - evaluated;
    if uncovered > 0 {
        log::warn!("{uncovered} dev source types have no gold target in the candidate set");
    }
    let precision_at_k = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            let p = if evaluated == 0 { 0.0 } else { hits as f64 / evaluated as f64 };
            (k, p)
        })
        .collect();
    let mut k_values = ks.to_vec();
    k_values.sort_unstable();
    k_values.dedup();
    Ok(EvalResult {
        k_values,
        precision_at_k,
        per_word_ranks,
        evaluated,
        uncovered,
    })
}

/// Source and target vocabularies projected through a rank-`k` factorization
/// of `W`, so that `source[e] · target[f] = φ_s(e)ᵀ W_k φ_t(f)`.
#[derive(Clone, Debug)]
pub struct CompressedEmbeddings {
    pub rank_k: usize,
    pub source_tokens: Vec<String>,
    pub source: Array2<f64>,
    pub target_tokens: Vec<String>,
    pub target: Array2<f64>,
}

impl CompressedEmbeddings {
    pub fn score(&self, source_row: usize, target_row: usize) -> f64 {
        self.source.row(source_row).dot(&self.target.row(target_row))
    }

    pub fn write_source_text<W: Write>(&self, w: W) -> Result<()> {
        write_text(&self.source_tokens, &self.source, w)
    }

    pub fn write_target_text<W: Write>(&self, w: W) -> Result<()> {
        write_text(&self.target_tokens, &self.target, w)
    }
}

fn write_text<W: Write>(tokens: &[String], m: &Array2<f64>, mut w: W) -> Result<()> {
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    for (token, row) in tokens.iter().zip(m.outer_iter()) {
        write!(w, "{token}")?;
        for v in row {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Factorizes `W = U Σ Vᵀ`, keeps the leading `k` triplets and splits `Σ_k`
/// as `√Σ_k` onto each side. The source side covers the whole source store,
/// the target side the candidate set. `k` defaults to the numerical rank.
pub fn compress(model: &BilinearModel<'_>, k: Option<usize>) -> Result<CompressedEmbeddings> {
    let w = model.weights();
    let max_k = w.nrows().min(w.ncols());
    if w.iter().all(|&v| v == 0.0) && k.is_none() {
        return Err(Error::InvalidArgument("W is zero; its numerical rank is 0".into()));
    }
    let svd = Svd::new(w)?;
    let k = k.unwrap_or_else(|| svd.rank());
    if k == 0 || k > max_k {
        return Err(Error::InvalidArgument(format!("rank k={k} must lie in 1..={max_k}")));
    }
    let root = svd.s.slice(ndarray::s![..k]).mapv(f64::sqrt);
    let left = &svd.u.slice(ndarray::s![.., ..k]) * &root;
    let right = &svd.vt.slice(ndarray::s![..k, ..]).t() * &root;

    let src = model.source();
    let src_vectors = src.matrix().mapv(f64::from);
    let source = src_vectors.dot(&left);
    let target = model.candidates().vectors().dot(&right);
    debug_assert_eq!(source.len_of(Axis(1)), k);
    Ok(CompressedEmbeddings {
        rank_k: k,
        source_tokens: src.vocab().to_vec(),
        source,
        target_tokens: model.candidates().tokens().to_vec(),
        target,
    })
}
