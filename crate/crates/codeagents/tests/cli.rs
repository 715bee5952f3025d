use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codeagents"))
        .args(args)
        .env_remove("CODEAGENTS_API_KEY")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_report_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (suite, config) = (fixtures().join("suite.toml"), fixtures().join("config.toml"));
    let first = dir.path().join("first");
    let o = cli(&[
        "run",
        "--suite",
        path(&suite),
        "--config",
        path(&config),
        "--out",
        path(&first),
        "--repeats",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "records.ndjson", "transcripts.ndjson", "episodes.ndjson"] {
        assert!(first.join(f).exists(), "{f}");
    }
    assert_eq!(
        fs::read_to_string(first.join("records.ndjson"))
            .unwrap()
            .lines()
            .count(),
        6
    );

    let o = cli(&["report", path(&first.join("report.json"))]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("SR") && table.contains("watch_tv"));

    let second = dir.path().join("second");
    let o = cli(&[
        "replay",
        "--suite",
        path(&suite),
        "--config",
        path(&config),
        "--transcripts",
        path(&first.join("transcripts.ndjson")),
        "--out",
        path(&second),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // the replay runs one repeat, so compare the first repeat's transcript lines
    let a = fs::read_to_string(first.join("transcripts.ndjson")).unwrap();
    let b = fs::read_to_string(second.join("transcripts.ndjson")).unwrap();
    let a0: Vec<&str> = a.lines().filter(|l| l.contains("#0\"")).collect();
    assert_eq!(a0, b.lines().collect::<Vec<_>>());
}

#[test]
fn presets_and_constant_backend() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "run",
        "--suite",
        path(&fixtures().join("suite.toml")),
        "--config",
        path(&fixtures().join("config.toml")),
        "--out",
        path(dir.path()),
        "--backend",
        "constant",
        "--completion",
        "garbage",
        "--preset",
        "3",
    ]);
    assert!(o.status.success());
    let records = fs::read_to_string(dir.path().join("records.ndjson")).unwrap();
    assert!(records.lines().all(|l| l.contains("\"model_calls\":1")));
}

#[test]
fn infrastructure_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "run",
        "--suite",
        "/nonexistent/suite.toml",
        "--config",
        path(&fixtures().join("config.toml")),
        "--out",
        path(dir.path()),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonexistent"));

    let o = cli(&[
        "run",
        "--suite",
        path(&fixtures().join("suite.toml")),
        "--config",
        path(&fixtures().join("config.toml")),
        "--out",
        path(dir.path()),
        "--preset",
        "12",
    ]);
    assert!(!o.status.success());

    let o = cli(&[
        "run",
        "--suite",
        path(&fixtures().join("suite.toml")),
        "--config",
        path(&fixtures().join("config.toml")),
        "--out",
        path(dir.path()),
        "--backend",
        "http",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("CODEAGENTS_API_KEY"));
}

#[test]
fn api_key_is_never_written() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let secret = "sk-cli-test-0123456789";
    let o = Command::new(env!("CARGO_BIN_EXE_codeagents"))
        .args([
            "run",
            "--suite",
            path(&fixtures().join("qa_suite.toml")),
            "--config",
            path(&fixtures().join("config.toml")),
            "--out",
            path(dir.path()),
            "--backend",
            "http",
            "--endpoint",
            &format!("http://127.0.0.1:{port}/v1/chat/completions"),
        ])
        .env("CODEAGENTS_API_KEY", secret)
        .env("RUST_LOG", "debug")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut seen = String::from_utf8_lossy(&o.stdout).to_string() + &String::from_utf8_lossy(&o.stderr);
    for f in fs::read_dir(dir.path()).unwrap() {
        seen.push_str(&fs::read_to_string(f.unwrap().path()).unwrap());
    }
    assert!(seen.contains("model_error"));
    assert!(!seen.contains(secret));
}
