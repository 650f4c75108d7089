//! End-to-end checks of the `codeprep` binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn codeprep() -> Command {
    Command::new(env!("CARGO_BIN_EXE_codeprep"))
}

fn write_corpus(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("docs.jsonl");
    fs::write(
        &path,
        concat!(
            r#"{"id":"f1","repo_id":"r1","path":"a.py","language":"python","text":"def f():\n    return 1\n"}"#,
            "\n",
            r#"{"id":"f2","repo_id":"r1","path":"b.py","language":"python","text":"print('hi')\n"}"#,
            "\n",
        ),
    )
    .unwrap();
    path
}

#[test]
fn ingest_reports_document_count() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let out = codeprep().arg("ingest").arg(&corpus).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("documents: 2"));
}

#[test]
fn ingest_rejects_malformed_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    fs::write(&path, "{\"id\":\"x\"}\n").unwrap();
    let out = codeprep().arg("ingest").arg(&path).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn mixture_validate_flags_builtin_table_and_fails() {
    let out = codeprep().args(["mixture", "validate"]).output().unwrap();
    assert!(!out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL weight_sum"));
    assert!(stdout.contains("PASS code_share"));
}

#[test]
fn pipeline_rerun_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run1 = dir.path().join("run1");
    let run2 = dir.path().join("run2");
    let out = codeprep()
        .args(["pipeline", "--stage", "sft", "--seed", "5", "--synth-repos", "10", "--out"])
        .arg(&run1)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = codeprep()
        .arg("pipeline")
        .arg("--manifest")
        .arg(run1.join("manifest.json"))
        .arg("--out")
        .arg(&run2)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(run1.join("sequences.bin")).unwrap(),
        fs::read(run2.join("sequences.bin")).unwrap()
    );
}

#[test]
fn evol_uses_mock_client_offline() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = dir.path().join("seeds.txt");
    fs::write(&seeds, "Write a parser\n").unwrap();
    let out_path = dir.path().join("evolved.jsonl");
    let out = codeprep()
        .arg("evol")
        .arg(&seeds)
        .args(["--rounds", "2", "--strategy", "breadth", "--out"])
        .arg(&out_path)
        .env_remove("CODEPREP_EVOL_ENDPOINT")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 2);
}
