//! Bag-of-words count vectors over a frozen vocabulary, an optional block of
//! POS-tag counts, and SMOTE oversampling.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::BloomLabel;
use crate::seed::{fnv1a64_extend, rng_from_seed};
use crate::textprep::{PosTag, TokenDoc};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("vocabulary would be empty")]
    EmptyVocabulary,
    #[error("vocabulary has a POS block but the document carries no tags")]
    MissingPosTags,
    #[error("class {0} has fewer than 2 samples")]
    DegenerateClass(BloomLabel),
    #[error("vector {0} carries no label")]
    UnlabeledVector(usize),
    #[error("k_neighbors must be at least 1")]
    InvalidNeighbors,
    #[error("vectors come from different vocabularies")]
    MixedVocabularies,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Frozen column layout: one column per token (lexicographic), then five POS
/// columns when enabled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_index: HashMap<String, u32>,
    with_pos: bool,
    fingerprint: u64,
}

/// Serializable form of a [`Vocabulary`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularySpec {
    pub tokens: Vec<String>,
    pub with_pos: bool,
}

impl Vocabulary {
    /// Build from an already sorted, deduplicated token list.
    pub fn from_sorted_tokens(tokens: Vec<String>, with_pos: bool) -> Result<Self, FeatureError> {
        if tokens.is_empty() {
            return Err(FeatureError::EmptyVocabulary);
        }
        debug_assert!(tokens.windows(2).all(|w| w[0] < w[1]));
        let token_index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let mut fp = fnv1a64_extend(0xcbf2_9ce4_8422_2325, b"bloomtax-vocab-v1\n");
        for (i, t) in tokens.iter().enumerate() {
            fp = fnv1a64_extend(fp, format!("tok:{t}={i}\n").as_bytes());
        }
        if with_pos {
            for tag in PosTag::ALL {
                let col = tokens.len() + tag.index();
                fp = fnv1a64_extend(fp, format!("pos:{tag}={col}\n").as_bytes());
            }
        }
        Ok(Vocabulary {
            tokens,
            token_index,
            with_pos,
            fingerprint: fp,
        })
    }

    pub fn from_spec(spec: VocabularySpec) -> Result<Self, FeatureError> {
        let mut tokens = spec.tokens;
        tokens.sort();
        tokens.dedup();
        Self::from_sorted_tokens(tokens, spec.with_pos)
    }

    pub fn spec(&self) -> VocabularySpec {
        VocabularySpec {
            tokens: self.tokens.clone(),
            with_pos: self.with_pos,
        }
    }

    pub fn dim(&self) -> usize {
        self.tokens.len() + if self.with_pos { PosTag::ALL.len() } else { 0 }
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn has_pos(&self) -> bool {
        self.with_pos
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn column_of(&self, token: &str) -> Option<u32> {
        self.token_index.get(token).copied()
    }

    pub fn pos_column(&self, tag: PosTag) -> Option<u32> {
        self.with_pos.then(|| (self.tokens.len() + tag.index()) as u32)
    }

    /// Human-readable column name: the token, or `POS:<TAG>`.
    pub fn column_name(&self, col: usize) -> String {
        if col < self.tokens.len() {
            self.tokens[col].clone()
        } else {
            format!("POS:{}", PosTag::ALL[col - self.tokens.len()])
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.dim()).map(|c| self.column_name(c)).collect()
    }
}

/// Keep tokens with document frequency of at least `min_df`.
pub fn build_vocab<'a, I>(train_docs: I, with_pos: bool, min_df: usize) -> Result<Vocabulary, FeatureError>
where
    I: IntoIterator<Item = &'a TokenDoc>,
{
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in train_docs {
        let mut seen: Vec<&str> = doc.tokens.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let tokens: Vec<String> = df
        .into_iter()
        .filter(|(_, n)| *n >= min_df.max(1))
        .map(|(t, _)| t.to_string())
        .collect();
    Vocabulary::from_sorted_tokens(tokens, with_pos)
}

/// Where a training vector came from, carried through the pipeline so that
/// cross-validation can keep derived samples on the side of their sources.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    /// Not tied to a corpus item.
    #[default]
    External,
    /// A corpus sentence, by id.
    Item(u32),
    /// Synonym-replaced copy of a corpus sentence.
    Augmented { source: u32 },
    /// SMOTE interpolation between two vectors of the balancing input, by
    /// position in that input.
    Synthetic { base: u32, neighbor: u32 },
}

impl Origin {
    /// The corpus id this sample is derived from, if any.
    pub fn source_item(self) -> Option<u32> {
        match self {
            Origin::Item(id) | Origin::Augmented { source: id } => Some(id),
            Origin::External | Origin::Synthetic { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Strictly increasing column ids.
    pub indices: Vec<u32>,
    /// Positive values parallel to `indices`.
    pub values: Vec<f64>,
    pub label: Option<BloomLabel>,
    /// Fingerprint of the vocabulary that produced the vector.
    pub fingerprint: u64,
    #[serde(default)]
    pub origin: Origin,
}

impl FeatureVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .map(|&i| i as usize)
            .zip(self.values.iter().copied())
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn get(&self, col: u32) -> f64 {
        match self.indices.binary_search(&col) {
            Ok(p) => self.values[p],
            Err(_) => 0.0,
        }
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| dense[i] * v).sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn with_label(mut self, label: BloomLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    /// Build from (column, value) pairs; zero entries are dropped and
    /// duplicate columns summed.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>, fingerprint: u64) -> Self {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for (c, v) in pairs {
            *acc.entry(c).or_default() += v;
        }
        let (indices, values) = acc.into_iter().filter(|(_, v)| *v != 0.0).unzip();
        FeatureVector {
            indices,
            values,
            label: None,
            fingerprint,
            origin: Origin::External,
        }
    }
}

/// Count in-vocabulary tokens; the POS block counts tags over every token,
/// including out-of-vocabulary ones.
pub fn vectorize(doc: &TokenDoc, vocab: &Vocabulary) -> Result<FeatureVector, FeatureError> {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for t in &doc.tokens {
        if let Some(c) = vocab.column_of(t) {
            *counts.entry(c).or_default() += 1.0;
        }
    }
    if vocab.has_pos() {
        let tags = doc.pos.as_ref().ok_or(FeatureError::MissingPosTags)?;
        for tag in tags {
            let c = vocab.pos_column(*tag).expect("POS block present");
            *counts.entry(c).or_default() += 1.0;
        }
    }
    let (indices, values) = counts.into_iter().unzip();
    Ok(FeatureVector {
        indices,
        values,
        label: None,
        fingerprint: vocab.fingerprint(),
        origin: Origin::External,
    })
}

pub fn squared_distance(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.indices.len() || j < b.indices.len() {
        let ca = a.indices.get(i).copied().unwrap_or(u32::MAX);
        let cb = b.indices.get(j).copied().unwrap_or(u32::MAX);
        let d = if ca == cb {
            let d = a.values[i] - b.values[j];
            i += 1;
            j += 1;
            d
        } else if ca < cb {
            i += 1;
            a.values[i - 1]
        } else {
            j += 1;
            b.values[j - 1]
        };
        acc += d * d;
    }
    acc
}

/// `a + u * (b - a)`, sparse, dropping exact zeros.
pub fn interpolate(a: &FeatureVector, b: &FeatureVector, u: f64) -> FeatureVector {
    let mut indices = Vec::with_capacity(a.nnz().max(b.nnz()));
    let mut values = Vec::with_capacity(indices.capacity());
    let (mut i, mut j) = (0, 0);
    while i < a.indices.len() || j < b.indices.len() {
        let ca = a.indices.get(i).copied().unwrap_or(u32::MAX);
        let cb = b.indices.get(j).copied().unwrap_or(u32::MAX);
        let (col, x, y) = if ca == cb {
            i += 1;
            j += 1;
            (ca, a.values[i - 1], b.values[j - 1])
        } else if ca < cb {
            i += 1;
            (ca, a.values[i - 1], 0.0)
        } else {
            j += 1;
            (cb, 0.0, b.values[j - 1])
        };
        let v = x + u * (y - x);
        if v > 0.0 {
            indices.push(col);
            values.push(v);
        }
    }
    FeatureVector {
        indices,
        values,
        label: a.label,
        fingerprint: a.fingerprint,
        origin: Origin::External,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmotePolicy {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmotePolicy {
    fn default() -> Self {
        SmotePolicy {
            k_neighbors: 5,
            seed: 0,
        }
    }
}

/// Oversample every class up to the largest class count.
///
/// The input is returned unchanged as a prefix of the output; synthetic
/// vectors follow, each tagged with [`Origin::Synthetic`] naming its parent
/// pair by position in `train`.
pub fn smote_balance(train: &[FeatureVector], policy: &SmotePolicy) -> Result<Vec<FeatureVector>, FeatureError> {
    if policy.k_neighbors == 0 {
        return Err(FeatureError::InvalidNeighbors);
    }
    if let Some(first) = train.first() {
        if train.iter().any(|v| v.fingerprint != first.fingerprint) {
            return Err(FeatureError::MixedVocabularies);
        }
    }
    let mut by_class: BTreeMap<BloomLabel, Vec<usize>> = BTreeMap::new();
    for (i, v) in train.iter().enumerate() {
        let label = v.label.ok_or(FeatureError::UnlabeledVector(i))?;
        by_class.entry(label).or_default().push(i);
    }
    let target = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut rng = rng_from_seed(policy.seed);
    let mut out = train.to_vec();
    for (label, members) in &by_class {
        let need = target - members.len();
        if need == 0 {
            continue;
        }
        if members.len() < 2 {
            return Err(FeatureError::DegenerateClass(*label));
        }
        let k = policy.k_neighbors.min(members.len() - 1);
        let mut neighbor_cache: HashMap<usize, Vec<usize>> = HashMap::new();
        for _ in 0..need {
            let base = members[rng.gen_range(0..members.len())];
            let neighbors = neighbor_cache
                .entry(base)
                .or_insert_with(|| nearest_neighbors(train, members, base, k));
            let neighbor = neighbors[rng.gen_range(0..neighbors.len())];
            let u: f64 = rng.gen_range(0.0..=1.0);
            let synth = interpolate(&train[base], &train[neighbor], u).with_origin(Origin::Synthetic {
                base: base as u32,
                neighbor: neighbor as u32,
            });
            out.push(synth);
        }
    }
    Ok(out)
}

/// The `k` members closest to `base` (Euclidean), ties broken by lower index.
fn nearest_neighbors(train: &[FeatureVector], members: &[usize], base: usize, k: usize) -> Vec<usize> {
    let mut dists: Vec<(f64, usize)> = members
        .iter()
        .filter(|&&m| m != base)
        .map(|&m| (squared_distance(&train[base], &train[m]), m))
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dists.truncate(k);
    dists.into_iter().map(|(_, m)| m).collect()
}

/// JSON sidecar describing a triplet dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSidecar {
    pub dim: usize,
    pub fingerprint: String,
    pub label_order: Vec<String>,
    pub labels: Vec<Option<String>>,
    pub columns: Vec<String>,
}

/// Write vectors as `row,col,value` lines and return the matching sidecar.
pub fn write_triplets<W: Write>(
    mut out: W,
    vectors: &[FeatureVector],
    vocab: &Vocabulary,
) -> Result<TripletSidecar, FeatureError> {
    writeln!(out, "row,col,value")?;
    for (row, v) in vectors.iter().enumerate() {
        for (col, val) in v.iter() {
            writeln!(out, "{row},{col},{val}")?;
        }
    }
    Ok(TripletSidecar {
        dim: vocab.dim(),
        fingerprint: format!("{:016x}", vocab.fingerprint()),
        label_order: BloomLabel::ALL.iter().map(|l| l.name().to_string()).collect(),
        labels: vectors.iter().map(|v| v.label.map(|l| l.name().to_string())).collect(),
        columns: vocab.column_names(),
    })
}
