//! Fixtures shared by the benchmarks.

use bloomtax_core::corpus::{generate_synthetic, VerbLexicons};
use bloomtax_core::features::{build_vocab, vectorize, FeatureVector, Origin, Vocabulary};
use bloomtax_core::textprep::{prep_corpus, PrepResources};
use bloomtax_core::LabeledSentence;

pub fn corpus(per_class: usize) -> Vec<LabeledSentence> {
    generate_synthetic(per_class, 7, &VerbLexicons::bundled()).expect("synthetic corpus")
}

/// Labelled bag-of-words vectors for a synthetic corpus.
pub fn vectors(per_class: usize, with_pos: bool) -> (Vocabulary, Vec<FeatureVector>) {
    let res = PrepResources::bundled();
    let prepped = prep_corpus(&corpus(per_class), &res, with_pos).expect("prep");
    let vocab = build_vocab(prepped.items.iter().map(|i| &i.doc), with_pos, 1).expect("vocab");
    let xs = prepped
        .items
        .iter()
        .map(|i| {
            vectorize(&i.doc, &vocab)
                .expect("vectorize")
                .with_label(i.label)
                .with_origin(Origin::Item(i.id))
        })
        .collect();
    (vocab, xs)
}

/// Drop every other vector of the first three classes to create imbalance.
pub fn imbalanced(xs: &[FeatureVector]) -> Vec<FeatureVector> {
    let mut seen = [0usize; 6];
    xs.iter()
        .filter(|v| {
            let c = v.label.map_or(5, |l| l.code());
            seen[c] += 1;
            c >= 3 || seen[c] % 2 == 0
        })
        .cloned()
        .collect()
}
