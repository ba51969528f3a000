//! Sentence normalization and a lexicon/suffix part-of-speech tagger.
//!
//! `normalize` applies, in order: lowercasing, replacement of every
//! non-alphanumeric character by a space, whitespace tokenization,
//! dictionary lemmatization, stopword removal (against the lemma) and removal
//! of tokens of length two or less.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BloomLabel, LabeledSentence};
use crate::wordlist;

#[derive(Debug, thiserror::Error)]
pub enum PrepError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed record")]
    Malformed { file: &'static str, line: usize },
    #[error("{file}:{line}: unknown POS tag `{tag}`")]
    UnknownTag {
        file: &'static str,
        line: usize,
        tag: String,
    },
    #[error("stopword list is empty")]
    EmptyStopwords,
    #[error("lemma `{lemma}` of `{form}` is itself mapped to another lemma")]
    LemmaNotFixedPoint { form: String, lemma: String },
    #[error("lemma `{lemma}` of `{form}` is not lowercase alphanumeric")]
    InvalidLemma { form: String, lemma: String },
    #[error("no sentence survived preprocessing")]
    EmptyCorpusAfterPrep,
}

/// Coarse part-of-speech tag. Declaration order fixes the POS feature columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Adv,
    Other,
}

impl PosTag {
    pub const ALL: [PosTag; 5] = [PosTag::Noun, PosTag::Verb, PosTag::Adj, PosTag::Adv, PosTag::Other];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Adj => "ADJ",
            PosTag::Adv => "ADV",
            PosTag::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        PosTag::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Normalized token sequence, optionally with one POS tag per token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDoc {
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<PosTag>>,
}

impl TokenDoc {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenDoc { tokens, pos: None }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Tokens joined by single spaces.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

const MIN_TOKEN_LEN: usize = 3;

/// Read-only lexical resources for preprocessing and tagging.
#[derive(Debug, Clone)]
pub struct PrepResources {
    stopwords: HashSet<String>,
    lemma_map: HashMap<String, String>,
    pos_lexicon: HashMap<String, PosTag>,
    pos_suffix_rules: Vec<(String, PosTag)>,
}

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const BUNDLED_LEMMAS: &str = include_str!("../data/lemmas.tsv");
const BUNDLED_POS: &str = include_str!("../data/pos_lexicon.tsv");

/// Suffix rules tried in order when a word is missing from the POS lexicon.
pub const DEFAULT_SUFFIX_RULES: &[(&str, PosTag)] = &[
    ("ing", PosTag::Verb),
    ("tion", PosTag::Noun),
    ("sion", PosTag::Noun),
    ("ment", PosTag::Noun),
    ("ness", PosTag::Noun),
    ("ity", PosTag::Noun),
    ("ism", PosTag::Noun),
    ("ly", PosTag::Adv),
    ("ous", PosTag::Adj),
    ("ive", PosTag::Adj),
    ("able", PosTag::Adj),
    ("ible", PosTag::Adj),
    ("ful", PosTag::Adj),
    ("less", PosTag::Adj),
    ("ical", PosTag::Adj),
    ("ize", PosTag::Verb),
    ("ise", PosTag::Verb),
    ("ate", PosTag::Verb),
    ("ify", PosTag::Verb),
    ("ed", PosTag::Verb),
];

impl PrepResources {
    /// Validate and assemble resources.
    pub fn new(
        stopwords: HashSet<String>,
        lemma_map: HashMap<String, String>,
        pos_lexicon: HashMap<String, PosTag>,
        pos_suffix_rules: Vec<(String, PosTag)>,
    ) -> Result<Self, PrepError> {
        if stopwords.is_empty() {
            return Err(PrepError::EmptyStopwords);
        }
        for (form, lemma) in &lemma_map {
            if lemma.is_empty() || !lemma.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()) {
                return Err(PrepError::InvalidLemma {
                    form: form.clone(),
                    lemma: lemma.clone(),
                });
            }
            if lemma_map.get(lemma).is_some_and(|l| l != lemma) {
                return Err(PrepError::LemmaNotFixedPoint {
                    form: form.clone(),
                    lemma: lemma.clone(),
                });
            }
        }
        Ok(PrepResources {
            stopwords,
            lemma_map,
            pos_lexicon,
            pos_suffix_rules,
        })
    }

    /// Resources shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_texts(BUNDLED_STOPWORDS, BUNDLED_LEMMAS, BUNDLED_POS)
            .expect("bundled preprocessing resources are valid")
    }

    /// Load `stopwords.txt`, `lemmas.tsv` and `pos_lexicon.tsv` from disk.
    pub fn load(stopwords: &Path, lemmas: &Path, pos_lexicon: &Path) -> Result<Self, PrepError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| PrepError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        Self::from_texts(&read(stopwords)?, &read(lemmas)?, &read(pos_lexicon)?)
    }

    pub fn from_texts(stopwords: &str, lemmas: &str, pos_lexicon: &str) -> Result<Self, PrepError> {
        let stop = parse_stopwords(stopwords);
        let mut lemma_map = HashMap::new();
        for (line, rec) in wordlist::records(lemmas) {
            let (form, lemma) = wordlist::tab_pair(rec).ok_or(PrepError::Malformed {
                file: "lemmas.tsv",
                line,
            })?;
            lemma_map.insert(form.to_lowercase(), lemma.to_lowercase());
        }
        let mut pos = HashMap::new();
        for (line, rec) in wordlist::records(pos_lexicon) {
            let (word, tag) = wordlist::tab_pair(rec).ok_or(PrepError::Malformed {
                file: "pos_lexicon.tsv",
                line,
            })?;
            let tag = PosTag::parse(tag).ok_or_else(|| PrepError::UnknownTag {
                file: "pos_lexicon.tsv",
                line,
                tag: tag.to_string(),
            })?;
            pos.insert(word.to_lowercase(), tag);
        }
        let rules = DEFAULT_SUFFIX_RULES.iter().map(|(s, t)| (s.to_string(), *t)).collect();
        Self::new(stop, lemma_map, pos, rules)
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(word)
    }

    /// Dictionary lemma, identity when absent.
    pub fn lemma<'a>(&'a self, word: &'a str) -> &'a str {
        self.lemma_map.get(word).map(String::as_str).unwrap_or(word)
    }

    pub fn tag_word(&self, word: &str) -> PosTag {
        if let Some(tag) = self.pos_lexicon.get(word) {
            return *tag;
        }
        self.pos_suffix_rules
            .iter()
            .find(|(suffix, _)| word.len() > suffix.len() && word.ends_with(suffix.as_str()))
            .map(|(_, tag)| *tag)
            .unwrap_or(PosTag::Other)
    }
}

pub(crate) fn parse_stopwords(text: &str) -> HashSet<String> {
    wordlist::records(text).map(|(_, w)| w.trim().to_lowercase()).collect()
}

/// Run the six normalization steps over one sentence.
pub fn normalize(text: &str, res: &PrepResources) -> TokenDoc {
    let lowered = text.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { ' ' })
        .collect();
    let tokens = cleaned
        .split_whitespace()
        .map(|t| res.lemma(t))
        .filter(|t| !res.is_stopword(t))
        .filter(|t| t.len() >= MIN_TOKEN_LEN)
        .map(str::to_owned)
        .collect();
    TokenDoc::new(tokens)
}

/// Attach one tag per token: lexicon hit, else first matching suffix rule,
/// else `OTHER`. Existing tags are replaced; tokens are untouched.
pub fn tag_pos(doc: &TokenDoc, res: &PrepResources) -> TokenDoc {
    TokenDoc {
        tokens: doc.tokens.clone(),
        pos: Some(doc.tokens.iter().map(|t| res.tag_word(t)).collect()),
    }
}

/// A normalized sentence that survived preprocessing, with its source id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreppedItem {
    pub id: u32,
    pub doc: TokenDoc,
    pub label: BloomLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreppedCorpus {
    pub items: Vec<PreppedItem>,
    /// Sentences whose token list was empty after normalization.
    pub dropped_empty: usize,
}

pub fn prep_corpus(
    corpus: &[LabeledSentence],
    res: &PrepResources,
    with_pos: bool,
) -> Result<PreppedCorpus, PrepError> {
    let docs: Vec<Option<PreppedItem>> = corpus
        .par_iter()
        .map(|s| {
            let doc = normalize(&s.text, res);
            if doc.is_empty() {
                return None;
            }
            let doc = if with_pos { tag_pos(&doc, res) } else { doc };
            Some(PreppedItem {
                id: s.id,
                doc,
                label: s.label,
            })
        })
        .collect();
    let dropped_empty = docs.iter().filter(|d| d.is_none()).count();
    let items: Vec<_> = docs.into_iter().flatten().collect();
    if items.is_empty() {
        return Err(PrepError::EmptyCorpusAfterPrep);
    }
    Ok(PreppedCorpus { items, dropped_empty })
}
