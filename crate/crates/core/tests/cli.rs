use std::path::Path;
use std::process::{Command, Output};

fn ndd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndd"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&ndd(&["--help"])), 0);
    assert_eq!(code(&ndd(&["--version"])), 0);
    assert_eq!(code(&ndd(&[])), 1);
    assert_eq!(code(&ndd(&["gen", "--bogus"])), 1);
    assert_eq!(code(&ndd(&["fit", "x", "--families", "cauchy"])), 1);
}

#[test]
fn missing_file_is_an_io_error() {
    let out = ndd(&["ingest", "/nonexistent/corpus.txt"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn invalid_data_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.txt");
    std::fs::write(&path, "dim=2\nr0\treference\t0.6 0.8 0.0\n").unwrap();
    std::fs::write(dir.path().join("c.txt.gt"), "").unwrap();
    assert_eq!(code(&ndd(&["ingest", p(&path)])), 2);
}

#[test]
fn small_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("c.bin");
    let run = |args: &[&str]| {
        let out = ndd(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    run(&[
        "gen",
        "--refs",
        "20",
        "--noise",
        "100",
        "--feats",
        "20",
        "--dim",
        "32",
        "--seed",
        "5",
        "--format",
        "binary",
        "--out",
        p(&corpus),
    ]);
    let text = d.join("c.txt");
    let summary = run(&[
        "ingest",
        p(&corpus),
        "--format",
        "binary",
        "--out",
        p(&text),
        "--out-format",
        "text",
    ]);
    assert!(
        summary.contains("20 reference, 100 noise, 20 query"),
        "{summary}"
    );
    let index = d.join("c.idx");
    run(&["build-index", "--corpus", p(&text), "--out", p(&index)]);
    let model = d.join("m.json");
    let trained = run(&[
        "train",
        "--corpus",
        p(&text),
        "--index",
        p(&index),
        "--out",
        p(&model),
    ]);
    assert!(trained.contains("correct,chi,"));

    let trace = d.join("trace.csv");
    let answer = run(&[
        "query",
        "--corpus",
        p(&text),
        "--model",
        p(&model),
        "--query",
        "query-0001",
        "--threshold",
        "0.99",
        "--trace-csv",
        p(&trace),
    ]);
    assert!(answer.contains("ground truth"), "{answer}");
    let trace = std::fs::read_to_string(trace).unwrap();
    assert!(trace.starts_with("step,matched_image,distance,log_L,posterior\n"));

    let report = run(&[
        "eval",
        "--corpus",
        p(&text),
        "--index",
        p(&index),
        "--model",
        p(&model),
        "--thresholds",
        "0.9,0.99",
    ]);
    assert_eq!(report.lines().count(), 3);
    // query-0001 is a training query under the default split
    let out = ndd(&[
        "eval",
        "--corpus",
        p(&text),
        "--model",
        p(&model),
        "--thresholds",
        "1.5",
    ]);
    assert_eq!(code(&out), 1);

    let plots = d.join("plots");
    run(&[
        "plot",
        "--corpus",
        p(&text),
        "--model",
        p(&model),
        "--out",
        p(&plots),
    ]);
    assert_eq!(std::fs::read_dir(&plots).unwrap().count(), 4);

    let distances = d.join("d.txt");
    let values: Vec<String> = (1..200)
        .map(|i| format!("{}", 1.0 + (i as f64 * 0.37).sin()))
        .collect();
    std::fs::write(&distances, values.join("\n")).unwrap();
    let ranked = run(&["fit", p(&distances), "--bins", "16"]);
    assert_eq!(ranked.lines().count(), 6);
    assert!(ranked.starts_with("rank,family,param1,param2,sse\n"));
}
