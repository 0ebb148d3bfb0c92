//! Bridge to a phrase-based decoder: OOV detection, named-entity heuristics,
//! translation-option policies and inline XML markup.

mod markup;
mod oov;

pub use markup::{
    build_options, emit_markup, escape, format_probability, markup_corpus, parse_markup, BuiltOptions,
    MarkupMode, MarkupPolicy, MarkupToken, DEFAULT_TAG,
};
pub use oov::{
    classify_named_entity, read_corpus, scan_oov, NeRule, OovReport, SystemVocabulary, TokenFlag,
};
