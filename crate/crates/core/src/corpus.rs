//! Labelled corpus: the six-level label codec, CSV ingestion, stratified
//! train/test splitting and a seeded synthetic corpus generator.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::rng_from_seed;
use crate::wordlist;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: unknown label `{value}`")]
    UnknownLabel { row: usize, value: String },
    #[error("class {0} has fewer than 2 members")]
    DegenerateClass(BloomLabel),
    #[error("test fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error("verb lexicon for {0} is empty")]
    EmptyLexicon(BloomLabel),
    #[error("per-class count must be at least 1")]
    ZeroPerClass,
}

/// One of the six levels of the original Bloom taxonomy.
///
/// The discriminant is the label code; declaration order is the canonical
/// axis order used by every report and confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BloomLabel {
    Knowledge = 0,
    Comprehension = 1,
    Application = 2,
    Analysis = 3,
    Synthesis = 4,
    Evaluation = 5,
}

impl BloomLabel {
    pub const COUNT: usize = 6;

    pub const ALL: [BloomLabel; 6] = [
        BloomLabel::Knowledge,
        BloomLabel::Comprehension,
        BloomLabel::Application,
        BloomLabel::Analysis,
        BloomLabel::Synthesis,
        BloomLabel::Evaluation,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BloomLabel::Knowledge => "Knowledge",
            BloomLabel::Comprehension => "Comprehension",
            BloomLabel::Application => "Application",
            BloomLabel::Analysis => "Analysis",
            BloomLabel::Synthesis => "Synthesis",
            BloomLabel::Evaluation => "Evaluation",
        }
    }

    /// Case-insensitive match on the canonical name only. No aliases.
    pub fn from_name(s: &str) -> Option<Self> {
        let s = s.trim();
        Self::ALL.into_iter().find(|l| l.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for BloomLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BloomLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_name(s).ok_or_else(|| format!("unknown label `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: u32,
    pub text: String,
    pub label: BloomLabel,
}

/// Result of [`load_csv`]: the surviving sentences and how many rows were
/// dropped for having no text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedCorpus {
    pub sentences: Vec<LabeledSentence>,
    pub dropped_empty: usize,
}

/// Read a `Sentence,Label` CSV (headers matched case-insensitively).
pub fn load_csv(path: impl AsRef<Path>) -> Result<LoadedCorpus, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file)
}

pub fn read_csv<R: io::Read>(reader: R) -> Result<LoadedCorpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.trim().trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
            .ok_or(CorpusError::MissingColumn(name))
    };
    let text_col = find("sentence")?;
    let label_col = find("label")?;

    let mut sentences = Vec::new();
    let mut dropped_empty = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let text = record.get(text_col).unwrap_or("");
        let raw_label = record.get(label_col).unwrap_or("");
        if text.trim().is_empty() {
            dropped_empty += 1;
            continue;
        }
        let label = BloomLabel::from_name(raw_label).ok_or_else(|| CorpusError::UnknownLabel {
            row,
            value: raw_label.to_string(),
        })?;
        sentences.push(LabeledSentence {
            id: sentences.len() as u32,
            text: text.to_string(),
            label,
        });
    }
    Ok(LoadedCorpus {
        sentences,
        dropped_empty,
    })
}

/// Write sentences as a `Sentence,Label` CSV.
pub fn write_csv<W: io::Write>(writer: W, sentences: &[LabeledSentence]) -> Result<(), CorpusError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["Sentence", "Label"])?;
    for s in sentences {
        wtr.write_record([s.text.as_str(), s.label.name()])?;
    }
    wtr.flush().map_err(|source| CorpusError::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPair {
    pub train: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
    pub seed: u64,
}

/// Per-class shuffled split. Each class contributes
/// `round(test_frac * class_count)` items to the test side; both sides are
/// returned in id order.
pub fn stratified_split(corpus: &[LabeledSentence], test_frac: f64, seed: u64) -> Result<SplitPair, CorpusError> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(CorpusError::InvalidFraction(test_frac));
    }
    let by_class = group_by_label(corpus);
    for (label, members) in &by_class {
        if members.len() < 2 {
            return Err(CorpusError::DegenerateClass(*label));
        }
    }

    let mut rng = rng_from_seed(seed);
    let mut train = Vec::with_capacity(corpus.len());
    let mut test = Vec::new();
    for members in by_class.into_values() {
        let mut members = members;
        members.shuffle(&mut rng);
        let n_test = (test_frac * members.len() as f64).round() as usize;
        let (t, rest) = members.split_at(n_test);
        test.extend(t.iter().map(|s| (*s).clone()));
        train.extend(rest.iter().map(|s| (*s).clone()));
    }
    train.sort_by_key(|s| s.id);
    test.sort_by_key(|s| s.id);
    Ok(SplitPair { train, test, seed })
}

fn group_by_label(corpus: &[LabeledSentence]) -> BTreeMap<BloomLabel, Vec<&LabeledSentence>> {
    let mut by_class: BTreeMap<BloomLabel, Vec<&LabeledSentence>> = BTreeMap::new();
    for s in corpus {
        by_class.entry(s.label).or_default().push(s);
    }
    for members in by_class.values_mut() {
        members.sort_by_key(|s| s.id);
    }
    by_class
}

/// Bloom action-verb lists, one per level.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerbLexicons(BTreeMap<BloomLabel, Vec<String>>);

const BUNDLED_VERBS: [(BloomLabel, &str); 6] = [
    (BloomLabel::Knowledge, include_str!("../data/verbs/knowledge.txt")),
    (
        BloomLabel::Comprehension,
        include_str!("../data/verbs/comprehension.txt"),
    ),
    (BloomLabel::Application, include_str!("../data/verbs/application.txt")),
    (BloomLabel::Analysis, include_str!("../data/verbs/analysis.txt")),
    (BloomLabel::Synthesis, include_str!("../data/verbs/synthesis.txt")),
    (BloomLabel::Evaluation, include_str!("../data/verbs/evaluation.txt")),
];

impl VerbLexicons {
    pub fn new(map: BTreeMap<BloomLabel, Vec<String>>) -> Self {
        VerbLexicons(map)
    }

    /// The verb lists shipped with the crate.
    pub fn bundled() -> Self {
        VerbLexicons(
            BUNDLED_VERBS
                .iter()
                .map(|(label, text)| (*label, parse_word_list(text)))
                .collect(),
        )
    }

    /// Load `<dir>/<label>.txt` for each of the six labels (lowercase names).
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let mut map = BTreeMap::new();
        for label in BloomLabel::ALL {
            let path = dir.as_ref().join(format!("{}.txt", label.name().to_lowercase()));
            let text = fs::read_to_string(&path).map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
            map.insert(label, parse_word_list(&text));
        }
        Ok(VerbLexicons(map))
    }

    pub fn get(&self, label: BloomLabel) -> &[String] {
        self.0.get(&label).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Label whose list contains `word` (first in canonical order).
    pub fn label_of(&self, word: &str) -> Option<BloomLabel> {
        BloomLabel::ALL
            .into_iter()
            .find(|l| self.get(*l).iter().any(|v| v == word))
    }
}

fn parse_word_list(text: &str) -> Vec<String> {
    wordlist::records(text).map(|(_, w)| w.trim().to_lowercase()).collect()
}

const FILLER_NOUNS: &[&str] = &[
    "structure",
    "function",
    "role",
    "process",
    "properties",
    "principles",
    "effect",
    "impact",
    "relationship",
    "components",
    "causes",
    "significance",
    "characteristics",
    "importance",
    "limitations",
    "advantages",
    "results",
    "method",
    "mechanism",
    "stages",
];

const FILLER_TOPICS: &[&str] = &[
    "photosynthesis",
    "cell division",
    "supply and demand",
    "the water cycle",
    "climate change",
    "binary search",
    "the French Revolution",
    "Newton's laws of motion",
    "chemical bonding",
    "plate tectonics",
    "the circulatory system",
    "market competition",
    "sorting algorithms",
    "renewable energy",
    "human memory",
    "electric circuits",
    "population growth",
    "the immune system",
    "global trade",
    "soil erosion",
];

const FILLER_TAILS: &[&str] = &[
    "",
    " in a short essay",
    " for the given case study",
    " with reference to the course material",
    " using the data provided",
    " in no more than 200 words",
];

/// Generate `per_class` template sentences for every label:
/// `"<Verb> the <noun> of <topic><tail>."`, with the verb drawn from that
/// label's lexicon and the rest from pools shared by all labels.
///
/// Sentences are interleaved across labels; ids run 0..6*per_class.
pub fn generate_synthetic(
    per_class: usize,
    seed: u64,
    lexicons: &VerbLexicons,
) -> Result<Vec<LabeledSentence>, CorpusError> {
    if per_class == 0 {
        return Err(CorpusError::ZeroPerClass);
    }
    for label in BloomLabel::ALL {
        if lexicons.get(label).is_empty() {
            return Err(CorpusError::EmptyLexicon(label));
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(per_class * BloomLabel::COUNT);
    for _ in 0..per_class {
        for label in BloomLabel::ALL {
            let verbs = lexicons.get(label);
            let verb = &verbs[rng.gen_range(0..verbs.len())];
            let noun = FILLER_NOUNS[rng.gen_range(0..FILLER_NOUNS.len())];
            let topic = FILLER_TOPICS[rng.gen_range(0..FILLER_TOPICS.len())];
            let tail = FILLER_TAILS[rng.gen_range(0..FILLER_TAILS.len())];
            let text = format!("{} the {noun} of {topic}{tail}.", capitalize(verb));
            out.push(LabeledSentence {
                id: out.len() as u32,
                text,
                label,
            });
        }
    }
    Ok(out)
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sentence(id: u32, text: &str, label: BloomLabel) -> LabeledSentence {
        LabeledSentence {
            id,
            text: text.into(),
            label,
        }
    }

    #[test]
    fn label_codec_round_trips_in_canonical_order() {
        for (i, l) in BloomLabel::ALL.iter().enumerate() {
            assert_eq!(l.code(), i);
            assert_eq!(BloomLabel::from_code(i), Some(*l));
            assert_eq!(BloomLabel::from_name(l.name()), Some(*l));
            assert_eq!(BloomLabel::from_name(&l.name().to_uppercase()), Some(*l));
        }
        assert_eq!(BloomLabel::from_code(6), None);
        let mut shuffled = vec![BloomLabel::Evaluation, BloomLabel::Knowledge, BloomLabel::Analysis];
        shuffled.sort();
        assert_eq!(
            shuffled,
            vec![BloomLabel::Knowledge, BloomLabel::Analysis, BloomLabel::Evaluation]
        );
    }

    #[test]
    fn aliases_are_rejected() {
        assert_eq!(BloomLabel::from_name("analyse"), None);
        assert_eq!(BloomLabel::from_name("Knowledge "), Some(BloomLabel::Knowledge));
    }

    #[test]
    fn csv_maps_rows_and_drops_empty_text() {
        let data = "sentence,LABEL\n\"Define osmosis.\",Knowledge\n\"   \",Analysis\n\"Compare X, Y\",analysis\n";
        let loaded = read_csv(data.as_bytes()).unwrap();
        assert_eq!(loaded.dropped_empty, 1);
        assert_eq!(
            loaded.sentences,
            vec![
                sentence(0, "Define osmosis.", BloomLabel::Knowledge),
                sentence(1, "Compare X, Y", BloomLabel::Analysis),
            ]
        );
    }

    #[test]
    fn csv_unknown_label() {
        let data = "Sentence,Label\nDefine osmosis.,Knowledge\nCompare X and Y,analyse\n";
        match read_csv(data.as_bytes()) {
            Err(CorpusError::UnknownLabel { row, value }) => {
                assert_eq!(row, 2);
                assert_eq!(value, "analyse");
            }
            other => panic!("expected UnknownLabel, got {other:?}"),
        }
    }

    #[test]
    fn csv_missing_column() {
        let data = "Text,Label\nDefine osmosis.,Knowledge\n";
        assert!(matches!(
            read_csv(data.as_bytes()),
            Err(CorpusError::MissingColumn("sentence"))
        ));
    }

    #[test]
    fn csv_write_read_round_trip() {
        let corpus = generate_synthetic(3, 1, &VerbLexicons::bundled()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &corpus).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.sentences, corpus);
    }

    #[test]
    fn split_600_gives_480_120() {
        let corpus = generate_synthetic(100, 3, &VerbLexicons::bundled()).unwrap();
        let split = stratified_split(&corpus, 0.2, 11).unwrap();
        assert_eq!(split.train.len(), 480);
        assert_eq!(split.test.len(), 120);
        for label in BloomLabel::ALL {
            assert_eq!(split.test.iter().filter(|s| s.label == label).count(), 20);
        }
    }

    #[test]
    fn split_half_of_ten() {
        let corpus: Vec<_> = (0..10).map(|i| sentence(i, "x", BloomLabel::Synthesis)).collect();
        let split = stratified_split(&corpus, 0.5, 0).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (5, 5));
    }

    #[test]
    fn split_is_deterministic() {
        let corpus = generate_synthetic(20, 5, &VerbLexicons::bundled()).unwrap();
        let a = stratified_split(&corpus, 0.2, 42).unwrap();
        let b = stratified_split(&corpus, 0.2, 42).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&corpus, 0.2, 43).unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn split_errors() {
        let corpus = vec![
            sentence(0, "a", BloomLabel::Knowledge),
            sentence(1, "b", BloomLabel::Knowledge),
            sentence(2, "c", BloomLabel::Analysis),
        ];
        assert!(matches!(
            stratified_split(&corpus, 0.2, 0),
            Err(CorpusError::DegenerateClass(BloomLabel::Analysis))
        ));
        assert!(matches!(
            stratified_split(&corpus[..2], 1.0, 0),
            Err(CorpusError::InvalidFraction(_))
        ));
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let lex = VerbLexicons::bundled();
        let a = generate_synthetic(100, 7, &lex).unwrap();
        assert_eq!(a.len(), 600);
        for label in BloomLabel::ALL {
            assert_eq!(a.iter().filter(|s| s.label == label).count(), 100);
        }
        let b = generate_synthetic(100, 7, &lex).unwrap();
        let bytes = |c: &[LabeledSentence]| {
            let mut buf = Vec::new();
            write_csv(&mut buf, c).unwrap();
            buf
        };
        assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn synthetic_singleton_lexicons() {
        let map = BloomLabel::ALL
            .into_iter()
            .map(|l| (l, vec![format!("verb{}", l.code())]))
            .collect();
        let out = generate_synthetic(1, 0, &VerbLexicons::new(map)).unwrap();
        assert_eq!(out.len(), 6);
        for (s, l) in out.iter().zip(BloomLabel::ALL) {
            assert_eq!(s.label, l);
            assert!(s.text.starts_with(&format!("Verb{} the ", l.code())), "{}", s.text);
        }
    }

    #[test]
    fn synthetic_rejects_empty_lexicon() {
        let mut map: BTreeMap<_, _> = BloomLabel::ALL
            .into_iter()
            .map(|l| (l, vec!["define".to_string()]))
            .collect();
        map.insert(BloomLabel::Application, vec![]);
        assert!(matches!(
            generate_synthetic(2, 0, &VerbLexicons::new(map)),
            Err(CorpusError::EmptyLexicon(BloomLabel::Application))
        ));
    }

    #[test]
    fn bundled_lexicons_are_disjoint() {
        let lex = VerbLexicons::bundled();
        let mut seen = std::collections::HashSet::new();
        for label in BloomLabel::ALL {
            assert!(lex.get(label).len() >= 10);
            for v in lex.get(label) {
                assert!(seen.insert(v.clone()), "{v} listed twice");
            }
        }
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<LabeledSentence>> {
        proptest::collection::vec(2usize..30, 6).prop_map(|sizes| {
            let mut out = Vec::new();
            for (label, n) in BloomLabel::ALL.into_iter().zip(sizes) {
                for _ in 0..n {
                    let id = out.len() as u32;
                    out.push(sentence(id, "s", label));
                }
            }
            out
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn split_partitions_by_id(corpus in arb_corpus(), seed in any::<u64>(), frac in 0.05f64..0.95) {
            let split = stratified_split(&corpus, frac, seed).unwrap();
            let mut ids: Vec<u32> = split.train.iter().chain(&split.test).map(|s| s.id).collect();
            ids.sort_unstable();
            let expected: Vec<u32> = (0..corpus.len() as u32).collect();
            prop_assert_eq!(ids, expected);
            for label in BloomLabel::ALL {
                let n = corpus.iter().filter(|s| s.label == label).count();
                let t = split.test.iter().filter(|s| s.label == label).count();
                let want = (frac * n as f64).round();
                prop_assert!((t as f64 - want).abs() <= 1.0);
            }
        }
    }
}
