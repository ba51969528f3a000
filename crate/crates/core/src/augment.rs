//! Synonym-replacement augmentation of normalized training documents.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::BloomLabel;
use crate::seed::{rng_from_seed, StageRng};
use crate::textprep::{PreppedItem, TokenDoc};
use crate::wordlist;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("synonyms.tsv:{line}: malformed record")]
    Malformed { line: usize },
    #[error("synonyms.tsv:{line}: synonym `{word}` must be lowercase alphanumeric and longer than 3 characters")]
    InvalidSynonym { line: usize, word: String },
    #[error("augmentation rate {0} is outside [0, 1]")]
    InvalidRate(f64),
    #[error("training set is empty")]
    EmptyTrain,
}

/// Word → ordered synonym list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

const BUNDLED_SYNONYMS: &str = include_str!("../data/synonyms.tsv");
const MIN_SYNONYM_LEN: usize = 4;
const MAX_ATTEMPTS_PER_SLOT: usize = 10;

fn valid_synonym(w: &str) -> bool {
    w.len() >= MIN_SYNONYM_LEN && w.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

impl SynonymLexicon {
    /// Build from pairs; self-references are removed and words left without
    /// synonyms are dropped. Invalid synonyms are skipped.
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        let mut out = BTreeMap::new();
        for (word, syns) in entries {
            let word: String = word.into();
            let syns: Vec<String> = syns
                .into_iter()
                .map(Into::into)
                .filter(|s| *s != word && valid_synonym(s))
                .collect();
            if !syns.is_empty() {
                out.insert(word, syns);
            }
        }
        SynonymLexicon { entries: out }
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SYNONYMS).expect("bundled synonym table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let text = fs::read_to_string(path).map_err(|source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parse `word<TAB>syn1,syn2,...` records.
    pub fn parse(text: &str) -> Result<Self, AugmentError> {
        let mut entries = BTreeMap::new();
        for (line, rec) in wordlist::records(text) {
            let (word, syns) = wordlist::tab_pair(rec).ok_or(AugmentError::Malformed { line })?;
            let word = word.to_lowercase();
            let mut list = Vec::new();
            for s in syns.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                if !valid_synonym(s) {
                    return Err(AugmentError::InvalidSynonym {
                        line,
                        word: s.to_string(),
                    });
                }
                if s != word {
                    list.push(s.to_string());
                }
            }
            if !list.is_empty() {
                entries.insert(word, list);
            }
        }
        Ok(SynonymLexicon { entries })
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.entries.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// New items to add, as a fraction of the training set size.
    pub rate: f64,
    /// Minimum length of a replaceable word.
    pub min_word_len: usize,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            rate: 0.10,
            min_word_len: 4,
            seed: 0,
        }
    }
}

/// Positions of `doc` whose token may be replaced.
pub fn eligible_positions(
    doc: &TokenDoc,
    lex: &SynonymLexicon,
    stopwords: &HashSet<String>,
    min_word_len: usize,
) -> Vec<usize> {
    doc.tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.len() >= min_word_len && !stopwords.contains(*t) && !lex.synonyms(t).is_empty())
        .map(|(i, _)| i)
        .collect()
}

/// Replace one uniformly chosen eligible word by a uniformly chosen synonym.
/// Returns `None` when no word is eligible.
pub fn augment_once(
    doc: &TokenDoc,
    label: BloomLabel,
    lex: &SynonymLexicon,
    stopwords: &HashSet<String>,
    rng: &mut StageRng,
) -> Option<(TokenDoc, BloomLabel)> {
    augment_once_with(doc, label, lex, stopwords, AugmentPolicy::default().min_word_len, rng)
}

fn augment_once_with(
    doc: &TokenDoc,
    label: BloomLabel,
    lex: &SynonymLexicon,
    stopwords: &HashSet<String>,
    min_word_len: usize,
    rng: &mut StageRng,
) -> Option<(TokenDoc, BloomLabel)> {
    let eligible = eligible_positions(doc, lex, stopwords, min_word_len);
    if eligible.is_empty() {
        return None;
    }
    let pos = eligible[rng.gen_range(0..eligible.len())];
    let syns = lex.synonyms(&doc.tokens[pos]);
    let replacement = syns[rng.gen_range(0..syns.len())].clone();
    let mut out = doc.clone();
    out.tokens[pos] = replacement;
    Some((out, label))
}

/// An appended training item and the id of the document it was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedItem {
    pub source_id: u32,
    pub doc: TokenDoc,
    pub label: BloomLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedCorpus {
    pub originals: Vec<PreppedItem>,
    pub augmented: Vec<AugmentedItem>,
    /// Slots that stayed empty after every retry.
    pub shortfall: usize,
}

impl AugmentedCorpus {
    /// `round(rate * |train|)`.
    pub fn target(&self, rate: f64) -> usize {
        target_count(self.originals.len(), rate)
    }
}

fn target_count(n: usize, rate: f64) -> usize {
    (rate * n as f64).round() as usize
}

/// Append `round(rate * |train|)` synonym-replaced copies of training items,
/// drawing sources uniformly with replacement. Each slot is retried up to
/// ten times before being counted as shortfall.
pub fn augment_corpus(
    train: &[PreppedItem],
    lex: &SynonymLexicon,
    stopwords: &HashSet<String>,
    policy: &AugmentPolicy,
) -> Result<AugmentedCorpus, AugmentError> {
    if !(0.0..=1.0).contains(&policy.rate) {
        return Err(AugmentError::InvalidRate(policy.rate));
    }
    if train.is_empty() {
        return Err(AugmentError::EmptyTrain);
    }
    let mut rng = rng_from_seed(policy.seed);
    let target = target_count(train.len(), policy.rate);
    let mut augmented = Vec::with_capacity(target);
    let mut shortfall = 0;
    for _ in 0..target {
        let mut produced = None;
        for _ in 0..MAX_ATTEMPTS_PER_SLOT {
            let src = &train[rng.gen_range(0..train.len())];
            if let Some((doc, label)) =
                augment_once_with(&src.doc, src.label, lex, stopwords, policy.min_word_len, &mut rng)
            {
                produced = Some(AugmentedItem {
                    source_id: src.id,
                    doc,
                    label,
                });
                break;
            }
        }
        match produced {
            Some(item) => augmented.push(item),
            None => shortfall += 1,
        }
    }
    Ok(AugmentedCorpus {
        originals: train.to_vec(),
        augmented,
        shortfall,
    })
}
