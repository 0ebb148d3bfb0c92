use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::oov::TokenFlag;
use crate::error::{Error, Result};
use crate::model::{BilinearModel, Translation};

pub const DEFAULT_TAG: &str = "oov";

const SEPARATOR: &str = "||";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarkupMode {
    /// No options; OOVs are passed through for the decoder to drop.
    None,
    /// The OOV itself as the only option.
    Verbatim,
    /// Model options for every OOV.
    BweAll,
    /// Model options for content-word OOVs, verbatim for named entities.
    BweCw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MarkupPolicy {
    pub mode: MarkupMode,
    pub top_n: usize,
    pub add_verbatim_option: bool,
}

impl Default for MarkupPolicy {
    fn default() -> Self {
        MarkupPolicy {
            mode: MarkupMode::BweCw,
            top_n: 10,
            add_verbatim_option: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuiltOptions {
    pub options: Vec<Translation>,
    /// The OOV has no source embedding and was copied verbatim instead.
    pub fell_back: bool,
}

fn verbatim(token: &str) -> Vec<Translation> {
    vec![Translation {
        token: token.to_owned(),
        probability: 1.0,
    }]
}

/// Translation options for one OOV under `policy`.
///
/// Model-backed options are the top-`n` list; with `add_verbatim_option` the
/// OOV itself is appended with the highest model probability in the list. The
/// returned list is always renormalized to sum to one. An OOV without a source
/// embedding, or a missing model, falls back to the verbatim option.
pub fn build_options(
    model: Option<&BilinearModel<'_>>,
    oov: &str,
    policy: &MarkupPolicy,
    is_ne: bool,
) -> Result<BuiltOptions> {
    let use_model = match policy.mode {
        MarkupMode::None => {
            return Ok(BuiltOptions {
                options: Vec::new(),
                fell_back: false,
            })
        }
        MarkupMode::Verbatim => false,
        MarkupMode::BweAll => true,
        MarkupMode::BweCw => !is_ne,
    };
    let model = match model {
        Some(m) if use_model && m.source().contains(oov) => m,
        _ => {
            return Ok(BuiltOptions {
                options: verbatim(oov),
                fell_back: use_model,
            })
        }
    };
    if policy.top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be positive".into()));
    }
    let mut options = model.top_n(oov, policy.top_n)?.entries;
    if policy.add_verbatim_option && !options.iter().any(|t| t.token == oov) {
        let p_max = options.iter().map(|t| t.probability).fold(0.0, f64::max);
        options.push(Translation {
            token: oov.to_owned(),
            probability: p_max,
        });
    }
    let total: f64 = options.iter().map(|t| t.probability).sum();
    for t in &mut options {
        t.probability /= total;
    }
    Ok(BuiltOptions {
        options,
        fell_back: false,
    })
}

/// Escapes `<`, `>`, `&` and `"`.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let (entity, c) = [("&lt;", '<'), ("&gt;", '>'), ("&amp;", '&'), ("&quot;", '"')]
            .into_iter()
            .find(|(e, _)| rest.starts_with(e))
            .ok_or_else(|| Error::Format(format!("unknown entity in {s:?}")))?;
        out.push(c);
        rest = &rest[entity.len()..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Six significant digits, trailing zeros kept (`0.600000`, `0.0123457`).
/// Values below 1e-5 use exponent notation.
pub fn format_probability(p: f64) -> String {
    if p == 0.0 {
        return "0.00000".to_owned();
    }
    let sci = format!("{p:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    if (-5..6).contains(&exp) {
        format!("{p:.*}", (5 - exp) as usize)
    } else {
        sci
    }
}

/// Formats a descending probability list so the printed values still sum to
/// one: the rounding residual is folded into the top entry (or, when the
/// residual is negative, into the last entry tied with it).
fn printed_probabilities(probs: &[f64]) -> Vec<String> {
    let mut out: Vec<String> = probs.iter().map(|&p| format_probability(p)).collect();
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return out;
    }
    let parsed: Vec<f64> = out.iter().map(|s| s.parse().expect("formatted float")).collect();
    let residual = 1.0 - parsed.iter().sum::<f64>();
    if residual == 0.0 {
        return out;
    }
    let target = if residual > 0.0 {
        0
    } else {
        parsed.iter().take_while(|&&p| p == parsed[0]).count() - 1
    };
    let others: f64 = parsed.iter().enumerate().filter(|&(i, _)| i != target).map(|(_, p)| p).sum();
    out[target] = format_probability(1.0 - others);
    out
}

/// Replaces flagged tokens by `<tag translation="t1||t2" prob="p1||p2">token</tag>`.
///
/// `options[i]` is `None` for tokens that pass through unchanged. Options are
/// emitted by descending probability (stable for ties).
pub fn emit_markup(sentence: &[String], options: &[Option<Vec<Translation>>], tag: &str) -> Result<String> {
    if sentence.len() != options.len() {
        return Err(Error::InvalidArgument(format!(
            "{} tokens but {} option slots",
            sentence.len(),
            options.len()
        )));
    }
    let mut out = Vec::with_capacity(sentence.len());
    for (token, opts) in sentence.iter().zip(options) {
        let Some(opts) = opts else {
            out.push(token.clone());
            continue;
        };
        if opts.is_empty() {
            return Err(Error::InvalidArgument(format!("no options for flagged token {token:?}")));
        }
        let mut sorted: Vec<&Translation> = opts.iter().collect();
        sorted.sort_by(|a, b| b.probability.total_cmp(&a.probability));
        let translations: Vec<String> = sorted.iter().map(|t| escape(&t.token)).collect();
        let probs = printed_probabilities(&sorted.iter().map(|t| t.probability).collect::<Vec<_>>());
        out.push(format!(
            "<{tag} translation=\"{}\" prob=\"{}\">{}</{tag}>",
            translations.join(SEPARATOR),
            probs.join(SEPARATOR),
            escape(token)
        ));
    }
    Ok(out.join(" "))
}

/// Builds options for every OOV and emits one marked-up line per sentence, in
/// input order. Returns the lines and the number of embedding fallbacks.
pub fn markup_corpus(
    corpus: &[Vec<String>],
    flags: &[Vec<TokenFlag>],
    model: Option<&BilinearModel<'_>>,
    policy: &MarkupPolicy,
    tag: &str,
) -> Result<(Vec<String>, usize)> {
    if corpus.len() != flags.len() {
        return Err(Error::InvalidArgument("corpus and flags differ in length".into()));
    }
    let lines: Vec<Result<(String, usize)>> = corpus
        .par_iter()
        .zip(flags)
        .map(|(sentence, flags)| {
            let mut fallbacks = 0;
            let mut slots = Vec::with_capacity(sentence.len());
            for (token, flag) in sentence.iter().zip(flags) {
                let slot = match flag {
                    TokenFlag::Known => None,
                    TokenFlag::Oov { named_entity } => {
                        let built = build_options(model, token, policy, *named_entity)?;
                        fallbacks += built.fell_back as usize;
                        Some(built.options).filter(|o| !o.is_empty())
                    }
                };
                slots.push(slot);
            }
            Ok((emit_markup(sentence, &slots, tag)?, fallbacks))
        })
        .collect();
    let mut out = Vec::with_capacity(lines.len());
    let mut fallbacks = 0;
    for line in lines {
        let (text, n) = line?;
        out.push(text);
        fallbacks += n;
    }
    Ok((out, fallbacks))
}

/// A token recovered from a marked-up line.
#[derive(Clone, Debug, PartialEq)]
pub enum MarkupToken {
    Plain(String),
    Marked { token: String, options: Vec<Translation> },
}

/// Parses a line produced by [`emit_markup`] with the same tag name.
pub fn parse_markup(line: &str, tag: &str) -> Result<Vec<MarkupToken>> {
    let open = format!("<{tag} translation=\"");
    let close = format!("</{tag}>");
    let mut tokens = Vec::new();
    let mut rest = line.trim_start();
    let bad = |what: &str| Error::Format(format!("{what} in markup line {line:?}"));
    while !rest.is_empty() {
        if let Some(body) = rest.strip_prefix(&open) {
            let (translations, body) = body.split_once('"').ok_or_else(|| bad("unterminated translation"))?;
            let body = body.strip_prefix(" prob=\"").ok_or_else(|| bad("missing prob"))?;
            let (probs, body) = body.split_once('"').ok_or_else(|| bad("unterminated prob"))?;
            let body = body.strip_prefix('>').ok_or_else(|| bad("missing '>'"))?;
            let end = body.find(&close).ok_or_else(|| bad("missing closing tag"))?;
            let token = unescape(&body[..end])?;
            rest = body[end + close.len()..].trim_start();

            let translations: Vec<&str> = translations.split(SEPARATOR).collect();
            let probs: Vec<&str> = probs.split(SEPARATOR).collect();
            if translations.len() != probs.len() {
                return Err(bad("translation/prob length mismatch"));
            }
            let options = translations
                .iter()
                .zip(&probs)
                .map(|(t, p)| {
                    Ok(Translation {
                        token: unescape(t)?,
                        probability: p.parse().map_err(|_| bad("non-numeric prob"))?,
                    })
                })
                .collect::<Result<_>>()?;
            tokens.push(MarkupToken::Marked { token, options });
        } else {
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            tokens.push(MarkupToken::Plain(rest[..end].to_owned()));
            rest = rest[end..].trim_start();
        }
    }
    Ok(tokens)
}

impl fmt::Display for MarkupMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarkupMode::None => "none",
            MarkupMode::Verbatim => "verbatim",
            MarkupMode::BweAll => "bwe_all",
            MarkupMode::BweCw => "bwe_cw",
        })
    }
}

impl FromStr for MarkupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MarkupMode::None),
            "verbatim" => Ok(MarkupMode::Verbatim),
            "bwe_all" => Ok(MarkupMode::BweAll),
            "bwe_cw" => Ok(MarkupMode::BweCw),
            _ => Err(Error::InvalidArgument(format!("unknown markup policy {s:?}"))),
        }
    }
}
