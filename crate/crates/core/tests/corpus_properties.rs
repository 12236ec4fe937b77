use std::collections::HashMap;
use std::fs;

use dfn::corpus::{
    batches, gen_mixed, gen_synthetic, load_race, read_jsonl, satisfying_candidates, tokenize, write_jsonl, Family,
    OnMalformed, SynthSpec, Truncation,
};
use dfn::Error;
use proptest::prelude::*;

fn token() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9]{1,8}",
        prop::sample::select(vec![".", ",", "_", "?", "!", "'", "\""]).prop_map(str::to_string),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn tokens_joined_by_spaces_round_trip(toks in prop::collection::vec(token(), 0..20)) {
        let lowered: Vec<String> = toks.iter().map(|t| t.to_lowercase()).collect();
        prop_assert_eq!(tokenize(&toks.join(" ")), lowered);
    }

    #[test]
    fn tokenize_is_a_fixed_point_on_its_output(text in "\\PC{0,60}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.join(" ")), once.clone());
        prop_assert!(once.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn batches_cover_every_sample_once(n in 1usize..90, size in 1usize..40, seed in any::<u64>()) {
        let samples = gen_mixed(30, n.div_ceil(3), 5).unwrap();
        let samples = &samples[..n];
        let parts: Vec<_> = batches(samples, size, seed).collect();
        prop_assert_eq!(parts.len(), n.div_ceil(size));
        prop_assert!(parts[..parts.len() - 1].iter().all(|b| b.len() == size));
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for s in parts.iter().flatten() {
            *seen.entry(s.id.as_str()).or_default() += 1;
        }
        prop_assert_eq!(seen.len(), n);
        prop_assert!(seen.values().all(|&c| c == 1));
    }

    #[test]
    fn generated_samples_have_one_satisfying_candidate(
        family in prop::sample::select(Family::ALL.to_vec()),
        vocab in 30usize..300,
        seed in any::<u64>(),
    ) {
        for s in gen_synthetic(&SynthSpec::new(family, vocab, 20, seed)).unwrap() {
            prop_assert!(s.validate().is_ok());
            prop_assert_eq!(satisfying_candidates(&s), vec![s.gold]);
        }
    }
}

#[test]
fn synthetic_passages_use_the_configured_sentence_range() {
    for family in Family::ALL {
        for s in gen_synthetic(&SynthSpec::new(family, 80, 100, 4)).unwrap() {
            let periods = s.passage.iter().filter(|t| *t == ".").count();
            assert!((5..=6).contains(&periods), "{}", s.id);
            assert_eq!(s.passage.len(), periods * 5);
        }
    }
}

#[test]
fn every_family_has_four_candidates_and_spread_gold() {
    for family in Family::ALL {
        let samples = gen_synthetic(&SynthSpec::new(family, 60, 400, 8)).unwrap();
        let mut counts = [0usize; 4];
        for s in &samples {
            assert_eq!(s.num_candidates(), 4);
            counts[s.gold] += 1;
        }
        assert!(counts.iter().all(|&c| c > 60), "{family}: {counts:?}");
    }
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let samples = gen_mixed(40, 5, 1).unwrap();
    write_jsonl(&path, &samples).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), samples);
}

#[test]
fn jsonl_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let mut text = String::new();
    for s in gen_mixed(40, 1, 1).unwrap() {
        text.push_str(&serde_json::to_string(&s).unwrap());
        text.push('\n');
    }
    text.push_str("{\"id\":\"x\",\"passage\":[\"a\"],\"question\":[\"b\"],\"candidates\":[[\"c\"],[\"d\"]],\"gold\":5}\n");
    fs::write(&path, text).unwrap();
    match read_jsonl(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

const GOOD: &str = r#"{"id": "high1", "article": "Tom has a red ball. He likes it.",
  "questions": ["What colour is the ball?", "Tom likes _ ."],
  "options": [["Red", "Blue", "Green", "Black"], ["it", "dogs", "rain", "school"]],
  "answers": ["A", "A"]}"#;
const BAD_LETTER: &str = r#"{"article": "x", "questions": ["q"], "options": [["a","b","c","d"]], "answers": ["E"]}"#;

#[test]
fn race_loader_skips_or_aborts_on_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("high")).unwrap();
    fs::write(dir.path().join("high/1.txt"), GOOD).unwrap();
    fs::write(dir.path().join("high/2.txt"), BAD_LETTER).unwrap();
    fs::write(dir.path().join("high/3.txt"), "not json").unwrap();

    let load = load_race(dir.path(), Truncation::default(), OnMalformed::SkipAndWarn).unwrap();
    assert_eq!(load.passages, 1);
    assert_eq!(load.samples.len(), 2);
    assert_eq!(load.skipped.len(), 2);
    let s = &load.samples[0];
    assert_eq!(s.id, "high1#0");
    assert_eq!(s.question, tokenize("What colour is the ball?"));
    assert_eq!(s.candidates[0], vec!["red"]);
    assert!(load.samples[1].question_contains("_"));

    let err = load_race(dir.path(), Truncation::default(), OnMalformed::Abort).unwrap_err();
    assert!(matches!(err, Error::MalformedRecord { .. }), "{err:?}");
}
