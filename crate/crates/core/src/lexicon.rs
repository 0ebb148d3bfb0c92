//! Seed bilingual dictionary and its train/dev partition.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};

/// One dictionary entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub source: String,
    pub target: String,
}

impl Pair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Pair {
            source: source.into(),
            target: target.into(),
        }
    }
}

/// Counts gathered while reading and filtering a dictionary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub kept: usize,
    /// Pairs whose source or target token has no embedding.
    pub dropped: usize,
    pub duplicates: usize,
    pub multiword: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedLexicon {
    pairs: Vec<Pair>,
    train: Vec<usize>,
    dev: Vec<usize>,
    split_seed: Option<u64>,
}

impl SeedLexicon {
    /// Keeps the first occurrence of every pair and drops pairs that are not
    /// covered by both stores. All pairs start in the train partition.
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = Pair>,
        src: &EmbeddingStore,
        tgt: &EmbeddingStore,
    ) -> Result<(Self, FilterReport)> {
        let mut report = FilterReport::default();
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for pair in pairs {
            if !seen.insert(pair.clone()) {
                report.duplicates += 1;
                continue;
            }
            if !src.contains(&pair.source) || !tgt.contains(&pair.target) {
                report.dropped += 1;
                continue;
            }
            kept.push(pair);
        }
        report.kept = kept.len();
        if kept.is_empty() {
            return Err(Error::Empty("lexicon after filtering"));
        }
        let train = (0..kept.len()).collect();
        Ok((
            SeedLexicon {
                pairs: kept,
                train,
                dev: Vec::new(),
                split_seed: None,
            },
            report,
        ))
    }

    /// Reads a dictionary file and filters it against both stores.
    ///
    /// Each line holds a source and a target token separated by a tab or by
    /// whitespace. Lines starting with `#` and blank lines are skipped. With tab
    /// separation a field may contain spaces; such multiword entries are
    /// dropped and counted.
    pub fn load(
        path: impl AsRef<Path>,
        src: &EmbeddingStore,
        tgt: &EmbeddingStore,
    ) -> Result<(Self, FilterReport)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), src, tgt)
    }

    pub fn read<R: BufRead>(
        reader: R,
        src: &EmbeddingStore,
        tgt: &EmbeddingStore,
    ) -> Result<(Self, FilterReport)> {
        let mut pairs = Vec::new();
        let mut multiword = 0;
        for (lineno, line) in (1..).zip(reader.lines()) {
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = if line.contains('\t') {
                line.split('\t').map(str::trim).collect()
            } else {
                line.split_whitespace().collect()
            };
            if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::FieldCount {
                    line: lineno,
                    found: fields.iter().filter(|f| !f.is_empty()).count(),
                });
            }
            if fields.iter().any(|f| f.contains(char::is_whitespace)) {
                multiword += 1;
                continue;
            }
            pairs.push(Pair::new(fields[0], fields[1]));
        }
        let (lexicon, mut report) = Self::from_pairs(pairs, src, tgt)?;
        report.multiword = multiword;
        Ok((lexicon, report))
    }

    /// Re-applies coverage filtering, keeping the current partition for the
    /// surviving pairs.
    pub fn filter(&self, src: &EmbeddingStore, tgt: &EmbeddingStore) -> Result<(Self, FilterReport)> {
        let covered = |p: &Pair| src.contains(&p.source) && tgt.contains(&p.target);
        let mut remap = vec![None; self.pairs.len()];
        let mut pairs = Vec::new();
        for (i, p) in self.pairs.iter().enumerate() {
            if covered(p) {
                remap[i] = Some(pairs.len());
                pairs.push(p.clone());
            }
        }
        if pairs.is_empty() {
            return Err(Error::Empty("lexicon after filtering"));
        }
        let report = FilterReport {
            kept: pairs.len(),
            dropped: self.pairs.len() - pairs.len(),
            ..Default::default()
        };
        let keep = |idx: &[usize]| idx.iter().filter_map(|&i| remap[i]).collect();
        Ok((
            SeedLexicon {
                train: keep(&self.train),
                dev: keep(&self.dev),
                pairs,
                split_seed: self.split_seed,
            },
            report,
        ))
    }

    /// Partitions the pairs into train and dev by source-token group.
    ///
    /// Groups are shuffled with a seeded ChaCha8 generator and assigned to train
    /// while they fit in `round(train_fraction * len)`; the remainder goes to
    /// dev. With one pair per source the train size is exactly that target.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {train_fraction} is outside (0, 1)"
            )));
        }
        let target = (train_fraction * self.pairs.len() as f64).round() as usize;

        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut by_source: HashMap<&str, usize> = HashMap::new();
        for (i, p) in self.pairs.iter().enumerate() {
            let g = *by_source.entry(&p.source).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        groups.shuffle(&mut rng);

        let mut train = Vec::with_capacity(target);
        let mut dev = Vec::new();
        for group in groups {
            if train.len() + group.len() <= target {
                train.extend(group);
            } else {
                dev.extend(group);
            }
        }
        train.sort_unstable();
        dev.sort_unstable();
        Ok(SeedLexicon {
            pairs: self.pairs.clone(),
            train,
            dev,
            split_seed: Some(seed),
        })
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn dev_indices(&self) -> &[usize] {
        &self.dev
    }

    pub fn split_seed(&self) -> Option<u64> {
        self.split_seed
    }

    pub fn train_pairs(&self) -> Vec<Pair> {
        self.train.iter().map(|&i| self.pairs[i].clone()).collect()
    }

    pub fn dev_pairs(&self) -> Vec<Pair> {
        self.dev.iter().map(|&i| self.pairs[i].clone()).collect()
    }
}
