//! Smoke tests for the `pcot` binary: subcommand wiring and the exit-code
//! contract (0 success, 1 validation failure, 2 configuration error).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pcot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pcot"))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../pcot/tests/fixtures")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn ingest_multidis(dir: &Path) -> PathBuf {
    let out = dir.join("multidis.jsonl");
    let output = run(pcot()
        .arg("ingest")
        .args(["--source", "multidis"])
        .arg("--in")
        .arg(fixtures().join("corpus/multidis.csv"))
        .arg("--out")
        .arg(&out));
    assert_eq!(code(&output), 0, "{output:?}");
    out
}

fn write_plan(dir: &Path, corpus: &Path, variants: &[&str]) -> PathBuf {
    let list =
        variants.iter().map(|v| format!("\"{v}\"")).collect::<Vec<_>>().join(", ");
    let text = format!(
        r#"
output_dir = "run"
parallelism = 2
variants = [{list}]

[[models]]
provider = "mock"
model_id = "mock-small"
max_output_tokens = 2048

[[corpora]]
dataset = "multidis"
path = "{}"
sample_n = 10
sample_seed = 7

[mock]
rulebook = "{}"
"#,
        corpus.display(),
        fixtures().join("rulebook.json").display()
    );
    let path = dir.join("plan.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn ingest_and_validate_shares() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_multidis(dir.path());

    let output = run(pcot()
        .arg("validate")
        .arg("--in")
        .arg(&corpus)
        .args(["--expect-share", "0.26", "--tolerance", "0.03"]));
    assert_eq!(code(&output), 0, "{}", stdout(&output));
    assert!(stdout(&output).contains("\"passes\": true"));

    // An impossible expectation is a validation failure, exit 1.
    let output = run(pcot()
        .arg("validate")
        .arg("--in")
        .arg(&corpus)
        .args(["--expect-share", "0.9", "--tolerance", "0.01"]));
    assert_eq!(code(&output), 1);
}

#[test]
fn sample_is_seeded_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_multidis(dir.path());
    let out = dir.path().join("sampled.jsonl");
    let output = run(pcot()
        .arg("sample")
        .arg("--in")
        .arg(&corpus)
        .arg("--out")
        .arg(&out)
        .args(["--n", "5", "--seed", "42"]));
    assert_eq!(code(&output), 0);
    let lines = std::fs::read_to_string(&out).unwrap();
    assert_eq!(lines.lines().count(), 5);

    // Oversampling is a configuration error.
    let output = run(pcot()
        .arg("sample")
        .arg("--in")
        .arg(&corpus)
        .arg("--out")
        .arg(dir.path().join("x.jsonl"))
        .args(["--n", "999", "--seed", "42"]));
    assert_eq!(code(&output), 2);
}

#[test]
fn plan_run_and_report_flow() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_multidis(dir.path());
    let plan = write_plan(dir.path(), &corpus, &["baseline-van", "pcot-van"]);

    let output = run(pcot().arg("plan").arg("--plan").arg(&plan));
    assert_eq!(code(&output), 0, "{output:?}");
    assert!(stdout(&output).contains("baseline-van, pcot-van"));

    let output = run(pcot().arg("dry-run").arg("--plan").arg(&plan).arg("--mock"));
    assert_eq!(code(&output), 0);
    assert!(stdout(&output).contains("\"stage1_calls\": 10"));
    assert!(stdout(&output).contains("\"stage2_calls\": 20"));

    let output = run(pcot().arg("run").arg("--plan").arg(&plan).arg("--mock"));
    assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    let store = dir.path().join("run/records.jsonl");
    assert!(store.exists());
    assert!(stdout(&output).contains("failed stage-2 parse fraction: 0.0000"));

    let output = run(pcot()
        .arg("report")
        .arg("--store")
        .arg(&store)
        .args(["--compare", "baseline-van:pcot-van", "--level", "0.05"])
        .args(["--subset", "--distribution"]));
    assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    let text = stdout(&output);
    assert!(text.contains("| mock-small | VaN |"));
    assert!(text.contains("# F1 by predicted-persuasion subset"));
    assert!(text.contains("class,AR,J,S,D,C,MW,ALL"));

    // CSV mirror into a directory.
    let report_dir = dir.path().join("report");
    let output = run(pcot()
        .arg("report")
        .arg("--store")
        .arg(&store)
        .args(["--compare", "baseline-van:pcot-van", "--format", "csv"])
        .arg("--out")
        .arg(&report_dir));
    assert_eq!(code(&output), 0);
    assert!(report_dir.join("main.csv").exists());

    // A compare pair that is not in the store is a configuration error.
    let output = run(pcot()
        .arg("report")
        .arg("--store")
        .arg(&store)
        .args(["--compare", "baseline-zcot:pcot-zcot"]));
    assert_eq!(code(&output), 2);
}

#[test]
fn budget_halt_exits_one_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_multidis(dir.path());
    let plan = write_plan(dir.path(), &corpus, &["baseline-van", "pcot-van"]);
    let mut text = std::fs::read_to_string(&plan).unwrap();
    text = text.replace("parallelism = 2", "parallelism = 2\nbudget = 4");
    std::fs::write(&plan, text).unwrap();

    let output = run(pcot().arg("run").arg("--plan").arg(&plan).arg("--mock"));
    assert_eq!(code(&output), 1, "{}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stderr).contains("budget exhausted"));

    let mut text = std::fs::read_to_string(&plan).unwrap();
    text = text.replace("budget = 4", "budget = 50000");
    std::fs::write(&plan, text).unwrap();
    let output = run(pcot().arg("run").arg("--plan").arg(&plan).arg("--mock"));
    assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    let store = std::fs::read_to_string(dir.path().join("run/records.jsonl")).unwrap();
    assert_eq!(store.lines().count(), 20);
}

#[test]
fn external_report_reproduces_published_average() {
    let output = run(pcot()
        .arg("report")
        .arg("--external")
        .arg(fixtures().join("external/published_overall_scores.json")));
    assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    let text = stdout(&output);
    assert!(text.contains("| Average |  | 0.711 | 0.815 | +14.6% |"), "{text}");
}

#[test]
fn dump_prompts_writes_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest_multidis(dir.path());
    let out = dir.path().join("prompts");
    let output = run(pcot()
        .arg("dump-prompts")
        .arg("--in")
        .arg(&corpus)
        .args(["--id", "multidis-1"])
        .arg("--out")
        .arg(&out));
    assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    let count = std::fs::read_dir(&out).unwrap().count();
    assert_eq!(count, 37);
    let dmt = std::fs::read_to_string(out.join("stage1_dmt.txt")).unwrap();
    assert!(dmt.contains("MIRACLE CURE"));
}

#[test]
fn config_errors_exit_two() {
    // Unknown dataset name.
    let dir = tempfile::tempdir().unwrap();
    let output = run(pcot()
        .arg("ingest")
        .args(["--source", "nonsense"])
        .arg("--in")
        .arg(fixtures().join("corpus/multidis.csv"))
        .arg("--out")
        .arg(dir.path().join("x.jsonl")));
    assert_eq!(code(&output), 2);

    // Broken plan file.
    let plan = dir.path().join("broken.toml");
    std::fs::write(&plan, "variants = [\"baseline-van\"]\n").unwrap();
    let output = run(pcot().arg("run").arg("--plan").arg(&plan).arg("--mock"));
    assert_eq!(code(&output), 2);

    // Report without any table selected.
    let output = run(pcot().arg("report").args(["--store", "missing.jsonl"]));
    assert_eq!(code(&output), 2);

    // Clap usage errors also exit 2.
    let output = run(pcot().arg("frobnicate"));
    assert_eq!(code(&output), 2);
}
