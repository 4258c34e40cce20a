//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values. Run with `cargo test -p pcot --test acceptance --
//! --nocapture` to see the lines.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pcot::corpus::{self, SourceDataset};
use pcot::metrics::{
    f1_binary, f1_micro_multilabel, mcc, mcnemar, percentage_change, ContingencyTable2x2,
    DistributionBy, EvalRecord, McNemarMode,
};
use pcot::parser::{parse_analysis, parse_verdict};
use pcot::prompt::render_all_for_document;
use pcot::report::{
    build_distribution_csv, build_main_table, build_main_table_external, dis_all_exceeds_rel_all,
    render_main_markdown, ExternalScores, ReportSpec,
};
use pcot::runner::{self, CorpusSpec, MockSection, RunPlan};
use pcot::taxonomy::{all_strategies, StrategyId};
use pcot::{Credibility, MethodVariant, ParseGrade};

fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(path)
}

fn golden(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(path)
}

/// Criterion 1: the statistics implementations agree with independent
/// oracles, in under ten seconds.
#[test]
fn criterion_1_statistics_oracle_suite() {
    let started = Instant::now();

    // McNemar Exact vs brute-force binomial enumeration, every table with
    // n01 + n10 <= 20, exact rational match. The oracle counts outcomes by
    // Pascal's triangle; for small n a full bitmask enumeration
    // cross-checks the oracle itself.
    fn pascal_oracle(n01: u64, n10: u64) -> f64 {
        let n = (n01 + n10) as usize;
        if n == 0 {
            return 1.0;
        }
        let mut row = vec![1u128];
        for _ in 0..n {
            let mut next = vec![1u128; row.len() + 1];
            for i in 1..row.len() {
                next[i] = row[i - 1] + row[i];
            }
            row = next;
        }
        let m = n01.min(n10) as usize;
        let tail: u128 = row[..=m].iter().sum();
        (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
    }
    fn bitmask_oracle(n01: u64, n10: u64) -> f64 {
        let n = (n01 + n10) as u32;
        if n == 0 {
            return 1.0;
        }
        let m = n01.min(n10);
        let hits = (0u64..(1 << n)).filter(|mask| u64::from(mask.count_ones()) <= m).count();
        (2.0 * hits as f64 / 2f64.powi(n as i32)).min(1.0)
    }
    let mut tables_checked = 0;
    for n01 in 0..=20u64 {
        for n10 in 0..=(20 - n01) {
            let table = ContingencyTable2x2::new(7, n01, n10, 3);
            let ours = mcnemar(&table, McNemarMode::Exact);
            let oracle = pascal_oracle(n01, n10);
            assert_eq!(ours, oracle, "exact mismatch at ({n01},{n10})");
            if n01 + n10 <= 12 {
                assert_eq!(oracle, bitmask_oracle(n01, n10), "oracle self-check ({n01},{n10})");
            }
            tables_checked += 1;
        }
    }

    // MCC vs direct Pearson correlation of binary vectors, 1000 cases.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mcc_checked = 0;
    for _ in 0..1000 {
        let n = rng.random_range(10..200);
        let xs: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let ys: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for (&x, &y) in xs.iter().zip(&ys) {
            match (x, y) {
                (1, 1) => tp += 1,
                (0, 0) => tn += 1,
                (1, 0) => fp += 1,
                _ => fn_ += 1,
            }
        }
        let ours = mcc(tp, tn, fp, fn_).unwrap();
        let nf = n as f64;
        let sx: f64 = xs.iter().map(|&v| v as f64).sum();
        let sy: f64 = ys.iter().map(|&v| v as f64).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(&a, &b)| (a * b) as f64).sum();
        let denom = ((nf * sx - sx * sx) * (nf * sy - sy * sy)).sqrt();
        if denom == 0.0 {
            assert_eq!(ours, 0.0);
        } else {
            let pearson = (nf * sxy - sx * sy) / denom;
            assert!((ours - pearson).abs() < 1e-9, "mcc {ours} vs pearson {pearson}");
        }
        mcc_checked += 1;
    }

    // Micro F1 vs pooled-count brute force, 500 random 6-strategy instances.
    for case in 0..500 {
        let docs = rng.random_range(1..40);
        let mut gold: BTreeMap<String, BTreeSet<StrategyId>> = BTreeMap::new();
        let mut pred: BTreeMap<String, BTreeSet<StrategyId>> = BTreeMap::new();
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for d in 0..docs {
            let id = format!("doc{d}");
            let mut g = BTreeSet::new();
            let mut p = BTreeSet::new();
            for s in StrategyId::ALL {
                let in_gold = rng.random_bool(0.4);
                let in_pred = rng.random_bool(0.4);
                if in_gold {
                    g.insert(s);
                }
                if in_pred {
                    p.insert(s);
                }
                match (in_pred, in_gold) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            gold.insert(id.clone(), g);
            pred.insert(id, p);
        }
        let ours = f1_micro_multilabel(&gold, &pred).unwrap();
        let denom = 2 * tp + fp + fn_;
        let brute = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
        assert!((ours - brute).abs() < 1e-12, "case {case}: {ours} vs {brute}");
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "oracle suite took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 PASS: {tables_checked} exact tables, {mcc_checked} mcc cases, \
         500 micro-F1 cases in {elapsed:?}"
    );
}

/// Criterion 2: the worked examples reproduce exactly.
#[test]
fn criterion_2_worked_examples() {
    let p = mcnemar(&ContingencyTable2x2::new(0, 8, 2, 0), McNemarMode::Exact);
    assert_eq!(p, 0.109375);

    // TP=2, FP=1, FN=1 -> F1 = 0.6667
    let d = Credibility::Disinformation;
    let c = Credibility::Credible;
    let record = |id: &str, gold, predicted| EvalRecord {
        doc_id: id.to_string(),
        gold_label: gold,
        predicted,
        analysis: None,
        model_id: "m".into(),
        method: MethodVariant::baseline(pcot::Stage2Kind::VaN),
        dataset: SourceDataset::Isot,
        genre: pcot::corpus::Genre::Article,
        flags: BTreeSet::new(),
    };
    let records = [
        record("1", d, d),
        record("2", d, d),
        record("3", c, d),
        record("4", d, c),
        record("5", c, c),
    ];
    let f1 = f1_binary(&records).unwrap();
    assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(format!("{f1:.4}"), "0.6667");

    let m = mcc(2, 2, 1, 1).unwrap();
    assert!((m - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(format!("{m:.4}"), "0.3333");

    println!("ACCEPTANCE 2 PASS: mcnemar(8,2)={p}, f1={f1:.4}, mcc={m:.4}");
}

/// Criterion 3: percentage-change arithmetic reproduces the published
/// rounded claims within one integer percentage point.
#[test]
fn criterion_3_published_number_arithmetic() {
    let check = |base: f64, new: f64, stated_pct: i64, label: &str| -> f64 {
        let delta = percentage_change(base, new).unwrap();
        let rounded = delta.round() as i64;
        assert!(
            (rounded - stated_pct).abs() <= 1,
            "{label}: computed {delta:.1}% rounds to {rounded}, stated {stated_pct}"
        );
        delta
    };
    let stage1_delta = check(0.664, 0.722, 9, "stage-1 prompt comparison");
    let overall_delta = check(0.711, 0.815, 15, "overall average");
    let subset_delta = check(0.753, 0.847, 12, "persuasion subset average");
    assert_eq!(format!("{stage1_delta:.1}"), "8.7");
    assert_eq!(format!("{overall_delta:.1}"), "14.6");
    assert_eq!(format!("{subset_delta:.1}"), "12.5");

    // The same numbers flow through the external-store report path.
    let overall = ExternalScores::from_file(&fixture("external/published_overall_scores.json")).unwrap();
    let table = build_main_table_external(&overall).unwrap();
    let overall = table.groupings.iter().position(|g| g == "Overall").unwrap();
    let avg = table.average.cells[overall].as_ref().unwrap();
    assert_eq!(avg.base_f1, 0.711);
    assert_eq!(avg.pcot_f1, 0.815);
    assert_eq!(format!("{:.1}", avg.delta_pct.unwrap()), "14.6");
    // The published per-model cells recompute to the published average row.
    let recomputed: Vec<f64> = table
        .rows
        .iter()
        .filter_map(|r| r.cells[overall].as_ref())
        .map(|c| c.base_f1)
        .collect();
    assert_eq!(recomputed.len(), 15);
    let mean_base: f64 = recomputed.iter().sum::<f64>() / 15.0;
    assert!((mean_base - 0.711).abs() < 5e-4);

    let subset = ExternalScores::from_file(&fixture("external/published_subset_scores.json")).unwrap();
    let t5 = build_main_table_external(&subset).unwrap();
    let persuasion = t5.groupings.iter().position(|g| g == "Persuasion").unwrap();
    let none = t5.groupings.iter().position(|g| g == "No Persuasion").unwrap();
    let avg_p = t5.average.cells[persuasion].as_ref().unwrap();
    let avg_n = t5.average.cells[none].as_ref().unwrap();
    assert_eq!((avg_p.base_f1, avg_p.pcot_f1), (0.753, 0.847));
    assert_eq!((avg_n.base_f1, avg_n.pcot_f1), (0.368, 0.392));

    let stage1 = ExternalScores::from_file(&fixture("external/published_stage1_scores.json")).unwrap();
    let t2 = build_main_table_external(&stage1).unwrap();
    let dmt = t2.rows.iter().find(|r| r.method == "DMT").unwrap();
    assert_eq!(format!("{:.1}", dmt.cells[0].as_ref().unwrap().delta_pct.unwrap()), "8.7");

    println!(
        "ACCEPTANCE 3 PASS: deltas {stage1_delta:.1}% / {overall_delta:.1}% / {subset_delta:.1}% \
         match the stated 9/15/12"
    );
}

/// Criterion 4: full mock pipeline in under 30 seconds, byte-stable store,
/// stage-1 reuse verified by gateway instrumentation.
#[test]
fn criterion_4_end_to_end_mock_determinism() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    // Ingest the fixture corpus.
    let (docs, report) =
        corpus::load_dataset(&fixture("corpus/multidis.csv"), SourceDataset::MultiDis).unwrap();
    assert!(report.ingested >= 20);
    let corpus_path = dir.path().join("multidis.jsonl");
    corpus::write_jsonl(&docs, &corpus_path).unwrap();

    // Two PCoT stage-2 methods sharing one stage-1 analysis, 20 documents.
    let make_plan = |out: &str| RunPlan {
        models: vec![pcot::gateway::ModelSpec::mock("mock-small")],
        variants: vec!["pcot-van".parse().unwrap(), "pcot-zcot".parse().unwrap()],
        corpora: vec![CorpusSpec {
            dataset: SourceDataset::MultiDis,
            path: corpus_path.clone(),
            sample_n: Some(20),
            sample_seed: Some(7),
        }],
        parallelism: 2,
        budget: 50_000,
        output_dir: dir.path().join(out),
        abstain_maps_to: Credibility::Credible,
        stage1_max_output_tokens: 2048,
        stage2_max_output_tokens: 512,
        mock: Some(MockSection { rulebook: Some(fixture("rulebook.json")), fallback: None }),
        gateway: None,
    };
    let plan_a = make_plan("a");
    let plan_b = make_plan("b");
    let gateway_a = runner::build_gateway(&plan_a).unwrap();
    let outcome_a = runner::execute(&plan_a, &gateway_a).unwrap();
    let gateway_b = runner::build_gateway(&plan_b).unwrap();
    let outcome_b = runner::execute(&plan_b, &gateway_b).unwrap();

    // Stage-1 reuse: exactly 20 stage-1 calls for two PCoT stage-2 methods.
    assert_eq!(outcome_a.summary.stage1_calls, 20, "{:?}", outcome_a.summary);
    assert_eq!(outcome_a.summary.stage2_calls, 40);
    assert_eq!(outcome_a.stats.calls_by_tag.get("stage1"), Some(&20));
    assert_eq!(outcome_a.summary.records_written, 40);
    // Zero failed parses on the mock corpus.
    assert_eq!(outcome_a.summary.stage1_parse_failures, 0);
    assert_eq!(outcome_a.summary.stage2_parse_failures, 0);

    // Byte-stable across executions.
    let bytes_a = std::fs::read(outcome_a.store_path.clone()).unwrap();
    let bytes_b = std::fs::read(outcome_b.store_path).unwrap();
    assert_eq!(bytes_a, bytes_b);

    // Report generation from the store completes the pipeline.
    let records = pcot::store::read_records(&outcome_a.store_path).unwrap();
    let spec = ReportSpec {
        compare: vec!["pcot-van:pcot-zcot".parse().unwrap()],
        significance_level: 0.05,
        ..ReportSpec::default()
    };
    let table = build_main_table(&records, &spec).unwrap();
    let markdown = render_main_markdown(&table);
    assert!(markdown.contains("| mock-small |"));
    let (csv, _) = build_distribution_csv(&records, DistributionBy::GoldLabel).unwrap();
    assert!(csv.starts_with("class,"));

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "pipeline took {elapsed:?}");
    println!(
        "ACCEPTANCE 4 PASS: 20 stage-1 calls for 2 PCoT methods, byte-stable store, {elapsed:?}"
    );
}

/// Criterion 5: every rendered prompt byte-matches its pinned golden file,
/// and the detailed multitask prompt carries each name exactly once.
#[test]
fn criterion_5_prompt_golden_files() {
    let doc = pcot::corpus::Document {
        id: "golden-001".into(),
        text: "The so-called experts admitted everything collapses next week. \
               Wake up and share this before it is deleted. Officials refused to comment."
            .into(),
        gold_label: Credibility::Disinformation,
        source_dataset: SourceDataset::MultiDis,
        genre: pcot::corpus::Genre::Article,
        published_date: None,
        topic: Some("Institutional and Media Distrust".into()),
        cutoff_class: pcot::corpus::CutoffClass::Post,
    };
    let labels: BTreeMap<StrategyId, pcot::Presence> = StrategyId::ALL
        .iter()
        .map(|&s| {
            let yes = matches!(
                s,
                StrategyId::AttackOnReputation | StrategyId::Call | StrategyId::ManipulativeWording
            );
            (s, if yes { pcot::Presence::Yes } else { pcot::Presence::No })
        })
        .collect();
    let explanations = StrategyId::ALL
        .iter()
        .map(|&s| {
            let text = match s {
                StrategyId::AttackOnReputation => "Experts are dismissed as so-called.",
                StrategyId::Call => "Readers are urged to wake up and share.",
                StrategyId::ManipulativeWording => "Everything collapses is an exaggeration.",
                _ => "",
            };
            (s, text.to_string())
        })
        .collect();
    let analysis =
        pcot::PersuasionAnalysis::new(labels, explanations, ParseGrade::Strict).unwrap();
    let rendered = render_all_for_document(
        &doc,
        &analysis,
        "The text leans on urgency and distrust of institutions rather than evidence.",
    )
    .unwrap();
    let mut checked = 0;
    for (name, prompt) in &rendered {
        let path = golden(&format!("prompts/{name}.txt"));
        let expected = std::fs::read_to_string(&path)
            .unwrap_or_else(|_| panic!("missing golden {}", path.display()));
        assert_eq!(expected, prompt.text, "golden mismatch: {name}");
        checked += 1;
    }
    assert_eq!(checked, 37);

    // DMT: all 6 strategy names and all 23 technique names exactly once.
    let dmt = rendered.iter().find(|(name, _)| name == "stage1_dmt").unwrap();
    let count = |needle: &str| {
        regex::Regex::new(&format!(r"\b{}\b", regex::escape(needle)))
            .unwrap()
            .find_iter(&dmt.1.text)
            .count()
    };
    let mut names = 0;
    for s in all_strategies() {
        assert_eq!(count(s.name), 1, "strategy {}", s.name);
        names += 1;
        for t in &s.techniques {
            assert_eq!(count(t.name), 1, "technique {}", t.name);
            names += 1;
        }
    }
    assert_eq!(names, 29);
    println!("ACCEPTANCE 5 PASS: {checked} golden prompts byte-match; DMT carries 6+23 names once each");
}

/// Criterion 6: the parsers are total over arbitrary input and strict
/// fixtures round-trip losslessly.
#[test]
fn criterion_6_parser_totality_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..10_000 {
        let len = rng.random_range(0..400);
        let bytes: Vec<u8> = match i % 3 {
            // Arbitrary bytes, lossily decoded.
            0 => (0..len).map(|_| rng.random()).collect(),
            // JSON-ish ASCII soup to stress the repair paths.
            1 => (0..len)
                .map(|_| {
                    let set = b"{}[]\":,yesno YESNO truefalse\\\n`AR";
                    set[rng.random_range(0..set.len())]
                })
                .collect(),
            // Valid UTF-8 with multi-byte content.
            _ => "persuasion ❌ {\"label\": ".as_bytes().iter().copied().cycle().take(len).collect(),
        };
        let text = String::from_utf8_lossy(&bytes);
        let analysis = parse_analysis(&text);
        assert_eq!(analysis.labels.len(), 6);
        let verdict = parse_verdict(&text);
        let _ = verdict.label;
    }

    // Strict-parseable fixtures round-trip losslessly.
    let dir = fixture("parser");
    let mut strict = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let raw = std::fs::read_to_string(&path).unwrap();
        let analysis = parse_analysis(&raw);
        if analysis.parse_grade == ParseGrade::Strict {
            let reparsed = parse_analysis(&analysis.to_prompt_json());
            assert_eq!(reparsed.labels, analysis.labels);
            assert_eq!(reparsed.explanations, analysis.explanations);
            strict += 1;
        }
    }
    assert!(strict >= 2);
    println!("ACCEPTANCE 6 PASS: 10000 fuzz inputs parsed totally; {strict} strict fixtures round-trip");
}

/// Criterion 7: desk-scale reproduction of the published live F1 values is
/// explicitly out of reach (commercial model access plus unpublished test
/// samples and seeds); the repository documents the manual live-run
/// procedure instead, and the direction check used for live runs
/// (DIS ALL% > REL ALL%) is implemented and exercised on the mock store.
#[test]
fn criterion_7_live_reproduction_statement() {
    let readme_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let readme = std::fs::read_to_string(&readme_path).expect("workspace README present");
    assert!(
        readme.contains("## Live provider runs"),
        "README must document the manual live-run procedure"
    );
    let flat = readme.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    assert!(
        flat.contains("not reproducible"),
        "README must state that published scores are not reproducible offline"
    );

    // The direction check is wired and holds on the deterministic fixture
    // run (the exact published percentages are not asserted anywhere).
    let dir = tempfile::tempdir().unwrap();
    let (docs, _) =
        corpus::load_dataset(&fixture("corpus/multidis.csv"), SourceDataset::MultiDis).unwrap();
    let corpus_path = dir.path().join("multidis.jsonl");
    corpus::write_jsonl(&docs, &corpus_path).unwrap();
    let plan = RunPlan {
        models: vec![pcot::gateway::ModelSpec::mock("mock-small")],
        variants: vec!["pcot-van".parse().unwrap()],
        corpora: vec![CorpusSpec {
            dataset: SourceDataset::MultiDis,
            path: corpus_path,
            sample_n: None,
            sample_seed: None,
        }],
        parallelism: 2,
        budget: 50_000,
        output_dir: dir.path().join("run"),
        abstain_maps_to: Credibility::Credible,
        stage1_max_output_tokens: 2048,
        stage2_max_output_tokens: 512,
        mock: Some(MockSection { rulebook: Some(fixture("rulebook.json")), fallback: None }),
        gateway: None,
    };
    let gateway = runner::build_gateway(&plan).unwrap();
    let outcome = runner::execute(&plan, &gateway).unwrap();
    let records = pcot::store::read_records(&outcome.store_path).unwrap();
    let (csv, _) = build_distribution_csv(&records, DistributionBy::GoldLabel).unwrap();
    assert_eq!(dis_all_exceeds_rel_all(&csv), Some(true), "direction check on the mock run:\n{csv}");

    println!(
        "ACCEPTANCE 7 PASS: live F1 values stated as not reproducible at desk scale; \
         manual procedure documented; DIS>REL direction check wired"
    );
}
