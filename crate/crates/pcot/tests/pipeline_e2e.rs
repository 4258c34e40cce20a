//! End-to-end pipeline tests on the mock backend: call economics, stage-1
//! reuse, determinism, resume after interruption, and budget behavior.

use std::path::{Path, PathBuf};

use pcot::corpus::{self, SourceDataset};
use pcot::gateway::Provider;
use pcot::metrics::RecordFlag;
use pcot::runner::{self, CorpusSpec, MockSection, RunPlan, RunnerError};
use pcot::store;
use pcot::{Adaptation, Credibility, MethodVariant, ParseGrade, Stage2Kind};

fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(path)
}

/// Ingest the MultiDis fixture CSV into a JSONL corpus under `dir`.
fn ingest_multidis(dir: &Path) -> PathBuf {
    let (docs, _) =
        corpus::load_dataset(&fixture("corpus/multidis.csv"), SourceDataset::MultiDis).unwrap();
    let out = dir.join("multidis.jsonl");
    corpus::write_jsonl(&docs, &out).unwrap();
    out
}

fn plan(
    dir: &Path,
    corpus_path: &Path,
    variants: &[&str],
    sample_n: Option<usize>,
    out_name: &str,
) -> RunPlan {
    RunPlan {
        models: vec![pcot::gateway::ModelSpec::mock("mock-small")],
        variants: variants.iter().map(|v| v.parse::<MethodVariant>().unwrap()).collect(),
        corpora: vec![CorpusSpec {
            dataset: SourceDataset::MultiDis,
            path: corpus_path.to_path_buf(),
            sample_n,
            sample_seed: Some(7),
        }],
        parallelism: 2,
        budget: 50_000,
        output_dir: dir.join(out_name),
        abstain_maps_to: Credibility::Credible,
        stage1_max_output_tokens: 2048,
        stage2_max_output_tokens: 512,
        mock: Some(MockSection {
            rulebook: Some(fixture("rulebook.json")),
            fallback: None,
        }),
        gateway: None,
    }
}

#[test]
fn baseline_plus_pcot_call_economics() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());
    let plan = plan(dir.path(), &corpus_path, &["baseline-van", "pcot-van"], Some(10), "run");
    let gateway = runner::build_gateway(&plan).unwrap();
    let outcome = runner::execute(&plan, &gateway).unwrap();
    // 10 stage-1 calls (one DMT per document), 20 stage-2 calls, 20 records.
    assert_eq!(outcome.summary.stage1_calls, 10);
    assert_eq!(outcome.summary.stage2_calls, 20);
    assert_eq!(outcome.summary.records_written, 20);
    let records = store::read_records(&outcome.store_path).unwrap();
    assert_eq!(records.len(), 20);
    // Zero failed parses on the mock corpus.
    assert_eq!(outcome.summary.stage1_parse_failures, 0);
    assert_eq!(outcome.summary.stage2_parse_failures, 0);
    assert_eq!(outcome.summary.requeries, 0);
    // Baseline records carry no analysis; PCoT records carry one.
    for r in &records {
        match r.method.adaptation() {
            Adaptation::Baseline => assert!(r.analysis.is_none()),
            Adaptation::PCoT => {
                let a = r.analysis.as_ref().unwrap();
                assert_ne!(a.parse_grade, ParseGrade::Failed);
            }
            _ => unreachable!(),
        }
    }
}

#[test]
fn stage1_analysis_is_shared_across_pcot_methods() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());
    let plan = plan(dir.path(), &corpus_path, &["pcot-van", "pcot-zcot"], Some(10), "run");
    let gateway = runner::build_gateway(&plan).unwrap();
    let outcome = runner::execute(&plan, &gateway).unwrap();
    // Exactly 10 stage-1 calls: the DMT analysis is reused by both methods.
    assert_eq!(outcome.summary.stage1_calls, 10);
    assert_eq!(outcome.summary.stage2_calls, 20);
    // Both methods saw identical analyses per document.
    let records = store::read_records(&outcome.store_path).unwrap();
    for doc_id in records.iter().map(|r| r.doc_id.clone()).collect::<std::collections::BTreeSet<_>>() {
        let per_doc: Vec<_> = records.iter().filter(|r| r.doc_id == doc_id).collect();
        assert_eq!(per_doc.len(), 2);
        assert_eq!(per_doc[0].analysis, per_doc[1].analysis);
    }
    // The stage-1 artifacts file holds one row per document.
    let artifacts = std::fs::read_to_string(plan.artifacts_path()).unwrap();
    assert_eq!(artifacts.lines().count(), 10);
}

#[test]
fn reexecuting_a_completed_plan_makes_no_calls() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());
    let plan = plan(dir.path(), &corpus_path, &["baseline-van", "pcot-van"], Some(5), "run");
    let gateway = runner::build_gateway(&plan).unwrap();
    runner::execute(&plan, &gateway).unwrap();
    let before = std::fs::read(plan.store_path()).unwrap();
    let outcome = runner::execute(&plan, &gateway).unwrap();
    assert_eq!(outcome.summary.records_written, 0);
    assert_eq!(outcome.summary.cells_resumed, 10);
    assert_eq!(outcome.stats.provider_calls, 0);
    assert_eq!(std::fs::read(plan.store_path()).unwrap(), before);
}

#[test]
fn stores_are_byte_identical_across_executions() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());
    let plan_a =
        plan(dir.path(), &corpus_path, &["baseline-van", "pcot-van", "pcot-single-van"], Some(12), "a");
    let plan_b =
        plan(dir.path(), &corpus_path, &["baseline-van", "pcot-van", "pcot-single-van"], Some(12), "b");
    let ga = runner::build_gateway(&plan_a).unwrap();
    let gb = runner::build_gateway(&plan_b).unwrap();
    runner::execute(&plan_a, &ga).unwrap();
    runner::execute(&plan_b, &gb).unwrap();
    let a = std::fs::read(plan_a.store_path()).unwrap();
    let b = std::fs::read(plan_b.store_path()).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "stores from independent executions must be byte-identical");
    let a_art = std::fs::read(plan_a.artifacts_path()).unwrap();
    let b_art = std::fs::read(plan_b.artifacts_path()).unwrap();
    assert_eq!(a_art, b_art);
}

#[test]
fn budget_halt_saves_state_and_resume_completes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());

    // Uninterrupted reference run.
    let reference = plan(dir.path(), &corpus_path, &["baseline-van", "pcot-van"], Some(8), "ref");
    let gateway = runner::build_gateway(&reference).unwrap();
    runner::execute(&reference, &gateway).unwrap();
    let reference_bytes = std::fs::read(reference.store_path()).unwrap();

    // Interrupted run: tiny budget, then resume with a full one.
    let mut interrupted =
        plan(dir.path(), &corpus_path, &["baseline-van", "pcot-van"], Some(8), "resumed");
    interrupted.budget = 5;
    let gateway = runner::build_gateway(&interrupted).unwrap();
    let mut warned = interrupted.validate().unwrap();
    assert!(warned.iter().any(|w| w.contains("outside the standard")), "{warned:?}");
    warned.clear();
    match runner::execute(&interrupted, &gateway) {
        Err(RunnerError::BudgetExceeded { store_path, .. }) => {
            assert!(store_path.exists());
        }
        other => panic!("expected BudgetExceeded, got {other:?}"),
    }
    let partial = store::read_records(&interrupted.store_path()).unwrap();
    assert!(partial.len() < 16);

    interrupted.budget = 50_000;
    let gateway = runner::build_gateway(&interrupted).unwrap();
    let outcome = runner::execute(&interrupted, &gateway).unwrap();
    assert_eq!(outcome.summary.cells_resumed, partial.len());
    let resumed_bytes = std::fs::read(interrupted.store_path()).unwrap();
    assert_eq!(
        resumed_bytes, reference_bytes,
        "resumed store must equal the uninterrupted store"
    );
}

#[test]
fn single_step_and_base_version_execute() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());
    let plan = plan(dir.path(), &corpus_path, &["pcot-single-van", "pcot-bv-van"], Some(5), "run");
    let gateway = runner::build_gateway(&plan).unwrap();
    let outcome = runner::execute(&plan, &gateway).unwrap();
    // Single-step needs no stage-1 call; the base version needs one per doc.
    assert_eq!(outcome.summary.stage1_calls, 5);
    assert_eq!(outcome.summary.stage2_calls, 10);
    let records = store::read_records(&outcome.store_path).unwrap();
    for r in &records {
        match r.method.adaptation() {
            Adaptation::PCoTSingleStep => {
                assert!(r.analysis.is_some(), "single-step records carry the parsed analysis");
            }
            Adaptation::PCoTBaseVersion => assert!(r.analysis.is_none()),
            _ => unreachable!(),
        }
    }
    // Free-form stage-1 artifacts were persisted.
    let artifacts = std::fs::read_to_string(plan.artifacts_path()).unwrap();
    assert_eq!(artifacts.lines().count(), 5);
    assert!(artifacts.contains("\"free_form\""));
}

#[test]
fn per_strategy_stage1_family_merges_six_responses() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());
    let plan = plan(dir.path(), &corpus_path, &["pcot-tat-van", "pcot-dtat-van"], Some(3), "run");
    let gateway = runner::build_gateway(&plan).unwrap();
    let outcome = runner::execute(&plan, &gateway).unwrap();
    // Two distinct per-strategy stage-1 kinds: 6 prompts per (kind, doc).
    assert_eq!(outcome.summary.stage1_calls, 2 * 6 * 3);
    assert_eq!(outcome.summary.stage2_calls, 6);
    assert_eq!(outcome.summary.stage1_parse_failures, 0);
    let records = store::read_records(&outcome.store_path).unwrap();
    for r in &records {
        let analysis = r.analysis.as_ref().expect("per-strategy variants carry analyses");
        assert_ne!(analysis.parse_grade, ParseGrade::Failed);
        assert_eq!(analysis.labels.len(), 6);
    }
    // Artifacts hold the six raw responses per stage-1 unit.
    let artifacts = std::fs::read_to_string(plan.artifacts_path()).unwrap();
    let first: serde_json::Value =
        serde_json::from_str(artifacts.lines().next().unwrap()).unwrap();
    assert_eq!(first["raw_responses"].as_array().unwrap().len(), 6);

    // Dry-run arithmetic accounts for the 6-prompt family.
    let estimate = runner::dry_run(&plan, &gateway).unwrap();
    assert_eq!(estimate.stage1_calls, 36);
    assert_eq!(estimate.net_calls, 0, "everything is cached after the run: {estimate:?}");
}

#[test]
fn unparseable_fallback_degrades_to_sentinels_not_errors() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());
    let mut plan = plan(dir.path(), &corpus_path, &["pcot-van"], Some(4), "run");
    plan.mock = Some(MockSection { rulebook: None, fallback: Some("no structure here".into()) });
    let gateway = runner::build_gateway(&plan).unwrap();
    let outcome = runner::execute(&plan, &gateway).unwrap();
    let records = store::read_records(&outcome.store_path).unwrap();
    assert_eq!(records.len(), 4);
    for r in &records {
        assert!(r.flags.contains(&RecordFlag::StageOneFailed));
        // "no structure here" token-scans to a No verdict (repaired).
        assert!(r.flags.contains(&RecordFlag::StageTwoRepaired));
        let analysis = r.analysis.as_ref().unwrap();
        assert_eq!(analysis.parse_grade, ParseGrade::Failed);
        assert!(!analysis.has_any_yes());
    }
    // One re-query per failed stage-1 unit.
    assert_eq!(outcome.summary.requeries, 4);
    assert!(outcome.summary.failed_parse_fraction() < 0.5);
}

#[test]
fn mismatched_resume_plan_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());
    let plan_a = plan(dir.path(), &corpus_path, &["baseline-van"], Some(4), "run");
    let gateway = runner::build_gateway(&plan_a).unwrap();
    runner::execute(&plan_a, &gateway).unwrap();
    let plan_b = plan(dir.path(), &corpus_path, &["baseline-zcot"], Some(4), "run");
    let gateway = runner::build_gateway(&plan_b).unwrap();
    assert!(matches!(
        runner::execute(&plan_b, &gateway),
        Err(RunnerError::PlanMismatch { .. })
    ));
}

#[test]
fn dry_run_closed_form_and_cache_awareness() {
    let dir = tempfile::tempdir().unwrap();
    // Synthetic 450-document corpus, 5 models, 4 variants with one shared
    // stage-1 kind.
    let docs: Vec<pcot::corpus::Document> = (0..450)
        .map(|i| pcot::corpus::Document {
            id: format!("doc-{i:04}"),
            text: format!("synthetic text number {i}"),
            gold_label: if i % 3 == 0 { Credibility::Disinformation } else { Credibility::Credible },
            source_dataset: SourceDataset::MultiDis,
            genre: pcot::corpus::Genre::Article,
            published_date: None,
            topic: None,
            cutoff_class: pcot::corpus::CutoffClass::Post,
        })
        .collect();
    let corpus_path = dir.path().join("big.jsonl");
    corpus::write_jsonl(&docs, &corpus_path).unwrap();
    let plan = RunPlan {
        models: (0..5).map(|i| pcot::gateway::ModelSpec::mock(format!("mock-{i}"))).collect(),
        variants: ["baseline-van", "pcot-van", "pcot-zcot", "pcot-defspec"]
            .iter()
            .map(|v| v.parse().unwrap())
            .collect(),
        corpora: vec![CorpusSpec {
            dataset: SourceDataset::MultiDis,
            path: corpus_path.clone(),
            sample_n: None,
            sample_seed: None,
        }],
        parallelism: 1,
        budget: 50_000,
        output_dir: dir.path().join("big-run"),
        abstain_maps_to: Credibility::Credible,
        stage1_max_output_tokens: 2048,
        stage2_max_output_tokens: 512,
        mock: None,
        gateway: None,
    };
    let gateway = runner::build_gateway(&plan).unwrap();
    let estimate = runner::dry_run(&plan, &gateway).unwrap();
    // Closed form: stage 1 = 5 models x 450 docs x 1 shared DMT kind;
    // stage 2 = 5 x 4 x 450.
    assert_eq!(estimate.stage1_calls, 5 * 450);
    assert_eq!(estimate.stage2_calls, 5 * 4 * 450);
    assert_eq!(estimate.total_calls, 2250 + 9000);
    assert_eq!(estimate.expected_cache_hits, 0);
    assert_eq!(estimate.net_calls, estimate.total_calls);

    // Fully cached after a real (smaller) run: net calls drop to zero.
    let small = RunPlan {
        models: vec![pcot::gateway::ModelSpec::mock("mock-0")],
        variants: vec!["baseline-van".parse().unwrap(), "pcot-van".parse().unwrap()],
        corpora: vec![CorpusSpec {
            dataset: SourceDataset::MultiDis,
            path: corpus_path,
            sample_n: Some(6),
            sample_seed: Some(1),
        }],
        parallelism: 1,
        budget: 50_000,
        output_dir: dir.path().join("small-run"),
        abstain_maps_to: Credibility::Credible,
        stage1_max_output_tokens: 2048,
        stage2_max_output_tokens: 512,
        mock: None,
        gateway: None,
    };
    let gateway = runner::build_gateway(&small).unwrap();
    runner::execute(&small, &gateway).unwrap();
    let estimate = runner::dry_run(&small, &gateway).unwrap();
    assert_eq!(estimate.net_calls, 0, "{estimate:?}");
    assert_eq!(estimate.expected_cache_hits, estimate.total_calls);

    // A zero-document plan estimates zero calls.
    let mut empty = small.clone();
    empty.corpora[0].sample_n = Some(0);
    let estimate = runner::dry_run(&empty, &gateway).unwrap();
    assert_eq!(estimate.total_calls, 0);
}

#[test]
fn matrix_order_does_not_affect_results() {
    // Same cells, different parallelism: stores must match byte for byte.
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());
    let mut p1 = plan(dir.path(), &corpus_path, &["baseline-van", "pcot-van"], Some(8), "p1");
    p1.parallelism = 1;
    let mut p4 = plan(dir.path(), &corpus_path, &["baseline-van", "pcot-van"], Some(8), "p4");
    p4.parallelism = 4;
    let g1 = runner::build_gateway(&p1).unwrap();
    let g4 = runner::build_gateway(&p4).unwrap();
    runner::execute(&p1, &g1).unwrap();
    runner::execute(&p4, &g4).unwrap();
    assert_eq!(
        std::fs::read(p1.store_path()).unwrap(),
        std::fs::read(p4.store_path()).unwrap()
    );
}

#[test]
fn rulebook_drives_fixture_analyses() {
    // The marker phrases planted in the disinformation fixtures map to
    // canned analyses with multiple strategies present.
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());
    let plan = plan(dir.path(), &corpus_path, &["pcot-van"], None, "run");
    let gateway = runner::build_gateway(&plan).unwrap();
    let outcome = runner::execute(&plan, &gateway).unwrap();
    let records = store::read_records(&outcome.store_path).unwrap();
    let dis_with_persuasion = records
        .iter()
        .filter(|r| r.gold_label == Credibility::Disinformation)
        .filter(|r| r.analysis.as_ref().is_some_and(|a| a.has_any_yes()))
        .count();
    let dis_total =
        records.iter().filter(|r| r.gold_label == Credibility::Disinformation).count();
    assert_eq!(dis_with_persuasion, dis_total, "every disinformation fixture matched a rule");
    assert_eq!(dis_total, 5);
}

#[test]
fn fixture_rulebook_file_drives_the_marker_rule() {
    // The rulebook fixture maps the marker token to a fixed analysis naming
    // Manipulative wording; exercised through the gateway end to end.
    use pcot::gateway::{CompletionRequest, Gateway, GatewayConfig, MockBackend, ModelSpec};
    use pcot::prompt::render_stage1;
    use pcot::taxonomy::{all_strategies, StrategyId};

    let mock = MockBackend::from_file(&fixture("rulebook.json")).unwrap();
    let gateway = Gateway::new(GatewayConfig::default()).unwrap().with_mock(mock);
    let doc = pcot::corpus::Document {
        id: "marker".into(),
        text: "A plain sentence carrying the LOADED_LANGUAGE_MARKER token.".into(),
        gold_label: Credibility::Credible,
        source_dataset: SourceDataset::MultiDis,
        genre: pcot::corpus::Genre::Article,
        published_date: None,
        topic: None,
        cutoff_class: pcot::corpus::CutoffClass::Post,
    };
    let prompt = render_stage1(MethodVariant::pcot(Stage2Kind::VaN), &doc, all_strategies())
        .unwrap()
        .remove(0)
        .prompt;
    let result = gateway
        .complete(&CompletionRequest::new(ModelSpec::mock("m"), prompt, "stage1/marker"))
        .unwrap();
    let analysis = pcot::parser::parse_analysis(&result.text);
    assert_eq!(analysis.yes_strategies(), vec![StrategyId::ManipulativeWording]);
}

#[test]
fn plan_round_trips_through_toml() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = ingest_multidis(dir.path());
    let toml_text = format!(
        r#"
output_dir = "out"
parallelism = 2
variants = ["baseline-van", "pcot-van"]

[[models]]
provider = "mock"
model_id = "mock-small"
max_output_tokens = 2048
knowledge_cutoff = "2023-10-01"

[[corpora]]
dataset = "multidis"
path = "{}"
sample_n = 5
sample_seed = 7
"#,
        corpus_path.display()
    );
    let plan_path = dir.path().join("plan.toml");
    std::fs::write(&plan_path, toml_text).unwrap();
    let plan = RunPlan::from_toml_file(&plan_path).unwrap();
    assert_eq!(plan.models[0].provider, Provider::Mock);
    assert_eq!(plan.models[0].knowledge_cutoff.unwrap().to_string(), "2023-10-01");
    assert_eq!(plan.variants[1], MethodVariant::pcot(Stage2Kind::VaN));
    assert_eq!(plan.parallelism, 2);
    assert_eq!(plan.budget, 50_000); // default
    assert!(plan.output_dir.ends_with("out"));
    assert!(plan.output_dir.is_absolute() || plan.output_dir.starts_with(dir.path()));

    // Structural errors are configuration errors.
    std::fs::write(&plan_path, "output_dir = \"x\"\nvariants = []\nmodels = []\ncorpora = []\n")
        .unwrap();
    assert!(matches!(RunPlan::from_toml_file(&plan_path), Err(RunnerError::Config(_))));
}
