use bloomtax_core::textprep::{normalize, PrepResources};
use proptest::prelude::*;

const GOLDEN: &str = include_str!("data/normalize_golden.tsv");

fn golden_cases() -> Vec<(&'static str, &'static str)> {
    GOLDEN
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_once('\t').expect("input<TAB>expected"))
        .collect()
}

#[test]
fn golden_file_matches_byte_for_byte() {
    let res = PrepResources::bundled();
    let cases = golden_cases();
    assert_eq!(cases.len(), 25);
    for (input, expected) in cases {
        assert_eq!(normalize(input, &res).joined(), expected, "input {input:?}");
    }
}

#[test]
fn golden_covers_empty_and_all_stopword_inputs() {
    let cases = golden_cases();
    assert!(cases.iter().any(|(i, _)| i.is_empty()));
    assert!(
        cases
            .iter()
            .filter(|(i, e)| !i.trim().is_empty() && e.is_empty())
            .count()
            >= 2
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn normalize_is_idempotent(s in "[A-Za-z0-9 .,;:!?'()éü-]{0,80}") {
        let res = PrepResources::bundled();
        let once = normalize(&s, &res).joined();
        let twice = normalize(&once, &res).joined();
        prop_assert_eq!(once, twice);
    }
}
