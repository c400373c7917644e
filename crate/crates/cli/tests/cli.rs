//! End-to-end tests of the `ginfer` binary: argument handling, exit
//! codes, file outputs, and the oracle wiring.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ginfer"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary should spawn")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process should exit normally")
}

/// A seeds directory holding one file per program, named in order.
fn seeds_dir(programs: &[&str]) -> TempDir {
    let dir = TempDir::new().expect("tempdir");
    for (i, program) in programs.iter().enumerate() {
        fs::write(dir.path().join(format!("s{:02}.txt", i)), format!("{}\n", program))
            .expect("write seed");
    }
    dir
}

fn write_grammar_file(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).expect("write grammar");
    path
}

#[test]
fn parse_accepts_a_member_with_exit_zero() {
    let out = run(bin().arg("parse").arg(fixture("while.g")).arg("skip"));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    assert_eq!(stdout_of(&out), "accepted\n");
}

#[test]
fn parse_rejects_a_nonmember_with_exit_one() {
    let out = run(bin().arg("parse").arg(fixture("while.g")).arg("skip skip"));
    assert_eq!(exit_code(&out), 1);
    assert_eq!(stdout_of(&out), "rejected\n");
}

#[test]
fn missing_grammar_file_is_a_config_error() {
    let out = run(bin().arg("parse").arg("/nonexistent/g.g").arg("x"));
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).starts_with("error:"), "stderr: {}", stderr_of(&out));
}

#[test]
fn malformed_grammar_file_is_a_config_error_naming_the_line() {
    let dir = TempDir::new().unwrap();
    let bad = write_grammar_file(&dir, "bad.g", "t0 : t9 ;\n");
    let out = run(bin().arg("parse").arg(&bad).arg("x"));
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("never defined"), "stderr: {}", stderr_of(&out));
}

#[test]
fn sample_prints_one_escaped_program_per_line() {
    let dir = TempDir::new().unwrap();
    let grammar = write_grammar_file(&dir, "nl.g", "t0 : \"a\nb\" ;\n");
    let out = run(bin().arg("sample").arg(&grammar).arg("3").arg("7"));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    assert_eq!(stdout_of(&out), "a\\nb\na\\nb\na\\nb\n");
}

#[test]
fn sample_out_dir_writes_one_file_per_program() {
    let dir = TempDir::new().unwrap();
    let grammar = write_grammar_file(&dir, "x.g", "t0 : \"x\" ;\n");
    let out_dir = dir.path().join("programs");
    let out = run(bin()
        .arg("sample")
        .arg(&grammar)
        .arg("3")
        .arg("0")
        .arg("--out-dir")
        .arg(&out_dir));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    for i in 0..3 {
        let file = out_dir.join(format!("t{:04}.txt", i));
        assert_eq!(fs::read_to_string(&file).unwrap(), "x\n", "{}", file.display());
    }
}

#[test]
fn sample_is_deterministic_in_the_seed() {
    let first = run(bin().arg("sample").arg(fixture("while.g")).arg("20").arg("5"));
    let second = run(bin().arg("sample").arg(fixture("while.g")).arg("20").arg("5"));
    assert_eq!(exit_code(&first), 0);
    assert_eq!(stdout_of(&first), stdout_of(&second));
}

/// Nested parens around a digit: small enough to infer in milliseconds,
/// structured enough to exercise the whole pipeline.
const PAREN_GOLDEN: &str = "t0 : \"(\" t0 \")\" ;\nt0 : \"0\" ;\n";

fn infer_parens(out_path: &Path) -> Output {
    let seeds = seeds_dir(&["(0)", "((0))"]);
    let golden_dir = TempDir::new().unwrap();
    let golden = write_grammar_file(&golden_dir, "parens.g", PAREN_GOLDEN);
    run(bin()
        .arg("infer")
        .arg("--seeds")
        .arg(seeds.path())
        .arg("--out")
        .arg(out_path)
        .arg("--golden")
        .arg(&golden))
}

#[test]
fn infer_writes_grammar_and_stats_and_accepts_its_seeds() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("learned.g");
    let out = infer_parens(&out_path);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let text = fs::read_to_string(&out_path).expect("grammar file written");
    ginfer_core::read_grammar(&text).expect("learned grammar re-reads");

    let stats_path = dir.path().join("learned.g.stats.json");
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&stats_path).expect("stats written")).unwrap();
    assert_eq!(stats["seed_count"], 2);
    assert!(stats["queries"].as_u64().unwrap() > 0);

    for seed in ["(0)", "((0))"] {
        let parse = run(bin().arg("parse").arg(&out_path).arg(seed));
        assert_eq!(exit_code(&parse), 0, "learned grammar must accept seed {:?}", seed);
    }
}

#[test]
fn infer_is_deterministic_across_runs() {
    let dir = TempDir::new().unwrap();
    let first_path = dir.path().join("first.g");
    let second_path = dir.path().join("second.g");
    assert_eq!(exit_code(&infer_parens(&first_path)), 0);
    assert_eq!(exit_code(&infer_parens(&second_path)), 0);
    let first = fs::read(&first_path).unwrap();
    let second = fs::read(&second_path).unwrap();
    assert_eq!(first, second, "two runs on the same input must write identical grammars");
}

#[test]
fn empty_seeds_directory_is_a_config_error_naming_the_directory() {
    let empty = TempDir::new().unwrap();
    let dir = TempDir::new().unwrap();
    let golden = write_grammar_file(&dir, "g.g", PAREN_GOLDEN);
    let out = run(bin()
        .arg("infer")
        .arg("--seeds")
        .arg(empty.path())
        .arg("--out")
        .arg(dir.path().join("o.g"))
        .arg("--golden")
        .arg(&golden));
    assert_eq!(exit_code(&out), 2);
    let err = stderr_of(&out);
    assert!(err.contains(empty.path().to_str().unwrap()), "stderr: {}", err);
    assert!(err.contains("no program files"), "stderr: {}", err);
}

#[test]
fn golden_and_command_oracles_are_mutually_exclusive() {
    let seeds = seeds_dir(&["x"]);
    let dir = TempDir::new().unwrap();
    let golden = write_grammar_file(&dir, "g.g", "t0 : \"x\" ;\n");
    let out = run(bin()
        .arg("infer")
        .arg("--seeds")
        .arg(seeds.path())
        .arg("--out")
        .arg(dir.path().join("o.g"))
        .arg("--golden")
        .arg(&golden)
        .arg("--oracle-cmd")
        .arg("true"));
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("exactly one"), "stderr: {}", stderr_of(&out));
}

#[test]
fn rejected_seed_is_a_domain_error() {
    let seeds = seeds_dir(&["y"]);
    let dir = TempDir::new().unwrap();
    let golden = write_grammar_file(&dir, "g.g", "t0 : \"x\" ;\n");
    let out = run(bin()
        .arg("infer")
        .arg("--seeds")
        .arg(seeds.path())
        .arg("--out")
        .arg(dir.path().join("o.g"))
        .arg("--golden")
        .arg(&golden));
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("seed"), "stderr: {}", stderr_of(&out));
}

#[test]
fn command_oracle_receives_programs_on_stdin() {
    let seeds = seeds_dir(&["ab"]);
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("o.g");
    let out = run(bin()
        .arg("infer")
        .arg("--seeds")
        .arg(seeds.path())
        .arg("--out")
        .arg(&out_path)
        .arg("--oracle-cmd")
        .arg("sh")
        .arg("-c")
        .arg("cat >/dev/null; exit 0"));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(out_path.exists());
}

#[test]
fn eval_scores_a_grammar_against_itself_as_perfect() {
    let dir = TempDir::new().unwrap();
    let report_path = dir.path().join("report.json");
    let out = run(bin()
        .arg("eval")
        .arg("--grammar")
        .arg(fixture("while.g"))
        .arg("--golden")
        .arg(fixture("while.g"))
        .arg("--sample-tests")
        .arg("30")
        .arg("--n-precision")
        .arg("30")
        .arg("--out")
        .arg(&report_path));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let text = stdout_of(&out);
    assert!(text.contains("precision = 1.0000"), "stdout: {}", text);
    assert!(text.contains("recall = 1.0000"), "stdout: {}", text);
    assert!(text.contains("f1 = 1.0000"), "stdout: {}", text);

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["precision"], 1.0);
    assert_eq!(report["recall"], 1.0);
    assert_eq!(report["samples_total"], 30);
    assert_eq!(report["tests_total"], 30);
}
