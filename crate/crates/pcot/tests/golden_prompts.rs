//! Golden-file tests pinning every rendered prompt variant, the taxonomy
//! export, and the report renderings over the deterministic fixture run.
//!
//! Regenerate after an intentional wording change with:
//! `PCOT_UPDATE_GOLDEN=1 cargo test -p pcot --test golden_prompts`

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pcot::corpus::{self, CutoffClass, Document, Genre, SourceDataset};
use pcot::metrics::DistributionBy;
use pcot::parser::{ParseGrade, PersuasionAnalysis, Presence};
use pcot::prompt::render_all_for_document;
use pcot::report::{
    build_distribution_csv, build_main_table, build_subset_table, render_main_markdown,
    render_subset_csv, render_subset_markdown, ReportSpec,
};
use pcot::runner::{self, CorpusSpec, MockSection, RunPlan};
use pcot::taxonomy::{export_text, StrategyId};
use pcot::Credibility;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(path)
}

fn check_golden(path: &Path, actual: &str) {
    if std::env::var_os("PCOT_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(path)
        .unwrap_or_else(|_| panic!("missing golden file {}; regenerate with PCOT_UPDATE_GOLDEN=1", path.display()));
    assert_eq!(
        expected,
        actual,
        "golden mismatch for {}; regenerate with PCOT_UPDATE_GOLDEN=1 if intentional",
        path.display()
    );
}

/// The fixed document every prompt golden is rendered over.
fn golden_document() -> Document {
    Document {
        id: "golden-001".into(),
        text: "The so-called experts admitted everything collapses next week. \
               Wake up and share this before it is deleted. Officials refused to comment."
            .into(),
        gold_label: Credibility::Disinformation,
        source_dataset: SourceDataset::MultiDis,
        genre: Genre::Article,
        published_date: None,
        topic: Some("Institutional and Media Distrust".into()),
        cutoff_class: CutoffClass::Post,
    }
}

fn golden_analysis() -> PersuasionAnalysis {
    let labels: BTreeMap<StrategyId, Presence> = StrategyId::ALL
        .iter()
        .map(|&s| {
            let yes = matches!(
                s,
                StrategyId::AttackOnReputation | StrategyId::Call | StrategyId::ManipulativeWording
            );
            (s, if yes { Presence::Yes } else { Presence::No })
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
    PersuasionAnalysis::new(labels, explanations, ParseGrade::Strict).unwrap()
}

#[test]
fn every_prompt_variant_matches_its_golden_file() {
    let doc = golden_document();
    let rendered = render_all_for_document(
        &doc,
        &golden_analysis(),
        "The text leans on urgency and distrust of institutions rather than evidence.",
    )
    .unwrap();
    // 6 stage-1 kinds (3 single + 3 x 6 per-strategy) + bv stage 1 +
    // 3 x (baseline, pcot, noexp, single-step, bv) stage 2.
    assert_eq!(rendered.len(), 3 + 18 + 1 + 15);
    for (name, prompt) in &rendered {
        let path = golden_dir().join("prompts").join(format!("{name}.txt"));
        check_golden(&path, &prompt.text);
    }
    // Rendering is pure: a second pass yields identical text and hashes.
    let again = render_all_for_document(
        &doc,
        &golden_analysis(),
        "The text leans on urgency and distrust of institutions rather than evidence.",
    )
    .unwrap();
    for ((name_a, a), (name_b, b)) in rendered.iter().zip(&again) {
        assert_eq!(name_a, name_b);
        assert_eq!(a.content_hash, b.content_hash);
    }
}

#[test]
fn taxonomy_export_matches_golden() {
    check_golden(&golden_dir().join("taxonomy_export.txt"), &export_text());
}

/// The deterministic fixture run behind the report goldens: 1 mock model,
/// VaN and Z-CoT in base and PCoT forms, 20 sampled documents.
fn fixture_store() -> Vec<pcot::metrics::EvalRecord> {
    let dir = tempfile::tempdir().unwrap();
    let (docs, _) =
        corpus::load_dataset(&fixture("corpus/multidis.csv"), SourceDataset::MultiDis).unwrap();
    let corpus_path = dir.path().join("multidis.jsonl");
    corpus::write_jsonl(&docs, &corpus_path).unwrap();
    let plan = RunPlan {
        models: vec![pcot::gateway::ModelSpec::mock("mock-small")],
        variants: ["baseline-van", "pcot-van", "baseline-zcot", "pcot-zcot"]
            .iter()
            .map(|v| v.parse().unwrap())
            .collect(),
        corpora: vec![CorpusSpec {
            dataset: SourceDataset::MultiDis,
            path: corpus_path,
            sample_n: Some(20),
            sample_seed: Some(7),
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
    pcot::store::read_records(&outcome.store_path).unwrap()
}

#[test]
fn fixture_reports_match_goldens() {
    let records = fixture_store();
    let spec = ReportSpec {
        compare: vec![
            "baseline-van:pcot-van".parse().unwrap(),
            "baseline-zcot:pcot-zcot".parse().unwrap(),
        ],
        significance_level: 0.05,
        extended: true,
        ..ReportSpec::default()
    };
    let table = build_main_table(&records, &spec).unwrap();
    check_golden(&golden_dir().join("report_main.md"), &render_main_markdown(&table));

    let subset = build_subset_table(&records, &spec.compare).unwrap();
    check_golden(&golden_dir().join("report_subset.md"), &render_subset_markdown(&subset));
    check_golden(&golden_dir().join("report_subset.csv"), &render_subset_csv(&subset));

    let (csv, _notes) = build_distribution_csv(&records, DistributionBy::GoldLabel).unwrap();
    check_golden(&golden_dir().join("distribution_gold.csv"), &csv);
}
