//! Regression tests over the raw-output fixture corpus: every `*.txt` under
//! `tests/fixtures/parser/` has a matching expected-result JSON under
//! `expected/`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pcot::parser::{parse_analysis, parse_verdict};
use pcot::taxonomy::resolve_strategy;
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Expected {
    Analysis { parse_grade: String, labels: BTreeMap<String, String> },
    Verdict { parse_grade: String, label: String },
}

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/parser")
}

#[test]
fn fixture_corpus_parses_as_expected() {
    let dir = fixtures_dir();
    let mut checked = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let stem = path.file_stem().unwrap().to_str().unwrap().to_string();
        let raw = std::fs::read_to_string(&path).unwrap();
        let expected_path = dir.join("expected").join(format!("{stem}.json"));
        let expected: Expected =
            serde_json::from_str(&std::fs::read_to_string(&expected_path).unwrap())
                .unwrap_or_else(|e| panic!("{stem}: bad expected json: {e}"));
        match expected {
            Expected::Analysis { parse_grade, labels } => {
                let analysis = parse_analysis(&raw);
                assert_eq!(format!("{:?}", analysis.parse_grade), parse_grade, "{stem}");
                for (name, label) in labels {
                    let id = resolve_strategy(&name).unwrap().id;
                    assert_eq!(analysis.label(id).as_str(), label, "{stem}: {name}");
                }
            }
            Expected::Verdict { parse_grade, label } => {
                let verdict = parse_verdict(&raw);
                assert_eq!(format!("{:?}", verdict.parse_grade), parse_grade, "{stem}");
                assert_eq!(format!("{:?}", verdict.label), label, "{stem}");
            }
        }
        checked += 1;
    }
    assert!(checked >= 10, "expected a populated fixture corpus, found {checked}");
}

#[test]
fn strict_fixtures_round_trip_losslessly() {
    let dir = fixtures_dir();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let raw = std::fs::read_to_string(&path).unwrap();
        let analysis = parse_analysis(&raw);
        if analysis.parse_grade == pcot::ParseGrade::Strict {
            let reparsed = parse_analysis(&analysis.to_prompt_json());
            assert_eq!(reparsed.labels, analysis.labels);
            assert_eq!(reparsed.explanations, analysis.explanations);
        }
    }
}
