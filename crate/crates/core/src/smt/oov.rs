use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Source-side vocabulary of the downstream translation system.
#[derive(Clone, Debug)]
pub struct SystemVocabulary {
    tokens: HashSet<String>,
}

impl SystemVocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: HashSet<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::Empty("system vocabulary"));
        }
        Ok(SystemVocabulary { tokens })
    }

    /// One token per line; blank lines are ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            let token = line.trim();
            if !token.is_empty() {
                tokens.push(token.to_owned());
            }
        }
        Self::new(tokens)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Reads a pre-tokenized corpus, one sentence per line.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|line| Ok(line?.split_whitespace().map(str::to_owned).collect()))
        .collect()
}

/// Capitalization heuristic for named entities.
///
/// Tokens that follow one of `boundaries` (or open the sentence) are not
/// judged by their initial capital, only by being fully capitalized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeRule {
    pub boundaries: Vec<String>,
}

impl Default for NeRule {
    fn default() -> Self {
        NeRule {
            boundaries: [".", "!", "?", ":", ";", "\""].map(String::from).to_vec(),
        }
    }
}

impl NeRule {
    pub fn after_boundary(&self, previous: Option<&str>) -> bool {
        match previous {
            None => true,
            Some(p) => self.boundaries.iter().any(|b| b == p),
        }
    }
}

/// True for a capitalized token outside a boundary position, or for a fully
/// capitalized token anywhere.
pub fn classify_named_entity(token: &str, after_boundary: bool) -> bool {
    let starts_upper = token.chars().next().is_some_and(char::is_uppercase);
    let mut letters = token.chars().filter(|c| c.is_alphabetic()).peekable();
    let all_caps = letters.peek().is_some() && letters.all(char::is_uppercase);
    (starts_upper && !after_boundary) || all_caps
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenFlag {
    Known,
    Oov { named_entity: bool },
}

impl TokenFlag {
    pub fn is_oov(self) -> bool {
        matches!(self, TokenFlag::Oov { .. })
    }

    pub fn is_content_oov(self) -> bool {
        matches!(self, TokenFlag::Oov { named_entity: false })
    }
}

/// Corpus OOV statistics: sentences, tokens, all OOVs and content-word OOVs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OovReport {
    pub sentences: usize,
    pub tokens: usize,
    pub oov_all: usize,
    pub oov_cw: usize,
    /// OOVs that fell back to a verbatim copy because they have no source
    /// embedding. Only filled in by markup generation.
    pub embedding_fallbacks: usize,
}

impl OovReport {
    pub fn oov_all_fraction(&self) -> f64 {
        self.oov_all as f64 / self.tokens as f64
    }

    pub fn oov_cw_fraction(&self) -> f64 {
        self.oov_cw as f64 / self.tokens as f64
    }

    /// Tab-separated header and one data row, with percentages in the
    /// `count (x.y%)` style, followed by exact fractions.
    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "sentences\ttokens\toov_all\toov_cw\toov_all_fraction\toov_cw_fraction\tembedding_fallbacks"
        )?;
        writeln!(
            w,
            "{}\t{}\t{} ({:.1}%)\t{} ({:.1}%)\t{}\t{}\t{}",
            self.sentences,
            self.tokens,
            self.oov_all,
            100.0 * self.oov_all_fraction(),
            self.oov_cw,
            100.0 * self.oov_cw_fraction(),
            self.oov_all_fraction(),
            self.oov_cw_fraction(),
            self.embedding_fallbacks
        )?;
        Ok(())
    }
}

/// Flags every token absent from `vocab`. With `ne_rule`, OOVs are split into
/// named entities and content words; without it every OOV is a content word.
pub fn scan_oov(
    corpus: &[Vec<String>],
    vocab: &SystemVocabulary,
    ne_rule: Option<&NeRule>,
) -> Result<(OovReport, Vec<Vec<TokenFlag>>)> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut report = OovReport {
        sentences: corpus.len(),
        ..Default::default()
    };
    let flags: Vec<Vec<TokenFlag>> = corpus
        .iter()
        .map(|sentence| {
            sentence
                .iter()
                .enumerate()
                .map(|(i, token)| {
                    if vocab.contains(token) {
                        return TokenFlag::Known;
                    }
                    let named_entity = ne_rule.is_some_and(|rule| {
                        let previous = i.checked_sub(1).map(|j| sentence[j].as_str());
                        classify_named_entity(token, rule.after_boundary(previous))
                    });
                    TokenFlag::Oov { named_entity }
                })
                .collect()
        })
        .collect();
    for f in flags.iter().flatten() {
        report.tokens += 1;
        report.oov_all += f.is_oov() as usize;
        report.oov_cw += f.is_content_oov() as usize;
    }
    if report.tokens == 0 {
        return Err(Error::Empty("corpus (no tokens)"));
    }
    Ok((report, flags))
}
