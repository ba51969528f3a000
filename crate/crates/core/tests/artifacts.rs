use bloomtax_core::features::{FeatureVector, Vocabulary};
use bloomtax_core::models::{LogRegConfig, ModelArtifact, ModelSpec, SvmConfig};
use bloomtax_core::BloomLabel;
use proptest::prelude::*;

fn toy(dim: usize, rows: &[(usize, Vec<(u32, f64)>)], vocab: &Vocabulary) -> Vec<FeatureVector> {
    rows.iter()
        .map(|(c, pairs)| {
            let mut pairs: Vec<(u32, f64)> = pairs.iter().map(|&(i, v)| (i % dim as u32, v)).collect();
            pairs.sort_by_key(|p| p.0);
            pairs.dedup_by_key(|p| p.0);
            FeatureVector::from_pairs(pairs, vocab.fingerprint()).with_label(BloomLabel::ALL[c % 6])
        })
        .collect()
}

fn specs() -> [ModelSpec; 3] {
    [
        ModelSpec::NaiveBayes { alpha: 0.5 },
        ModelSpec::LogisticRegression(LogRegConfig {
            epochs: 20,
            ..LogRegConfig::default()
        }),
        ModelSpec::LinearSvm(SvmConfig {
            lambda: 0.01,
            epochs: 5,
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn save_load_is_bit_exact(
        n_tok in 2usize..12,
        extra in prop::collection::vec((0usize..6, prop::collection::vec((0u32..64, 0.5f64..4.0), 1..5)), 0..20),
        seed in any::<u64>(),
        which in 0usize..3,
    ) {
        let tokens: Vec<String> = (0..n_tok).map(|i| format!("tok{i:02}")).collect();
        let vocab = Vocabulary::from_sorted_tokens(tokens, which == 1).unwrap();
        let dim = vocab.dim();
        // One guaranteed example per class, then random extras.
        let mut rows: Vec<(usize, Vec<(u32, f64)>)> = (0..6).map(|c| (c, vec![(c as u32, 1.0)])).collect();
        rows.extend(extra);
        let train = toy(dim, &rows, &vocab);
        let model = specs()[which].fit(&train, &vocab, seed).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let (json, bin) = model.save(dir.path(), "m").unwrap();
        let back = ModelArtifact::load(&json).unwrap();
        prop_assert_eq!(&back, &model);
        let (meta_a, bin_a) = model.to_parts("m.bin");
        let (meta_b, bin_b) = back.to_parts("m.bin");
        prop_assert_eq!(&std::fs::read(&bin).unwrap(), &bin_a);
        prop_assert_eq!(bin_a, bin_b);
        prop_assert_eq!(serde_json::to_string(&meta_a).unwrap(), serde_json::to_string(&meta_b).unwrap());
        for v in &train {
            let a = model.predict_scores(v).unwrap();
            let b = back.predict_scores(v).unwrap();
            prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn corrupted_metadata_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(&path, "{\"schema_version\": 99}").unwrap();
    let err = ModelArtifact::load(&path).unwrap_err().to_string();
    assert!(err.contains("schema version 1"), "{err}");
    std::fs::write(&path, "\u{0}\u{1}garbage").unwrap();
    assert!(ModelArtifact::load(&path).is_err());
}
