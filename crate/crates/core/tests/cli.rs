use std::fs;
use std::process::{Command, Output};

fn invfree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invfree"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn example_runs_and_is_byte_identical() {
    let first = invfree(&["example"]);
    let second = invfree(&["example"]);
    assert_eq!(first.status.code(), Some(0), "{}", stdout(&first));
    assert_eq!(first.stdout, second.stdout);
    let text = stdout(&first);
    assert!(text.contains("Theorem 2: FAIL (h > a)"));
    assert!(text.contains("Theorem 3: PASS"));
    assert!(text.contains("r0 = 0.115428"));
    // header plus rows i = 0..4
    let table: Vec<&str> = text
        .lines()
        .skip_while(|l| !l.starts_with("Iterates"))
        .skip(2)
        .take_while(|l| !l.is_empty())
        .collect();
    assert_eq!(table.len(), 5);
    assert!(table[4].contains("1.23427448411") && table[4].contains("1.6615264668"));
}

#[test]
fn exit_codes() {
    assert_eq!(invfree(&["solve"]).status.code(), Some(2));
    assert_eq!(
        invfree(&["solve", "--problem", "nope"]).status.code(),
        Some(3)
    );
    assert_eq!(
        invfree(&["sequences", "--h", "0.9", "--k", "3"])
            .status
            .code(),
        Some(4)
    );
    assert_eq!(invfree(&["--version"]).status.code(), Some(0));
}

#[test]
fn solve_from_file_with_norm_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("circle.json");
    fs::write(
        &path,
        r#"{
            "name": "circle_line",
            "variables": ["x", "y"],
            "equations": ["x^2 + y^2 - 2", "x - y"],
            "initial_point": [1.2, 0.9],
            "domain": {"lower": [0, 0], "upper": [2, 2]},
            "options": {"norm": "max", "tolerance": 1e-12}
        }"#,
    )
    .unwrap();
    let out = invfree(&[
        "solve",
        "--problem",
        path.to_str().unwrap(),
        "--norm",
        "euclidean",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("residual norm (euclidean)"));
    assert!(text.contains("Converged"));

    let newton = invfree(&[
        "solve",
        "--problem",
        path.to_str().unwrap(),
        "--method",
        "newton",
    ]);
    assert!(stdout(&newton).contains("inversions: 0, linear solves:"));
}

#[test]
fn bench_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = invfree(&[
        "bench",
        "--problems",
        "builtin",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("paper_example: inverse_free Converged"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    let names: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["problem"].as_str().unwrap())
        .collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    for r in v.as_array().unwrap() {
        assert_eq!(r["methods"][0]["inversions"], 1);
    }
}

#[test]
fn bench_rejects_broken_directory_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.json"), "{\"name\": 1}").unwrap();
    let out = invfree(&["bench", "--problems", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
}

#[test]
fn regions_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("regions.csv");
    let out = invfree(&[
        "regions",
        "--problem",
        "paper_example",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("G0: radius 0.115428, NOT contained in D"));
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn certify_newton_kantorovich() {
    let out = invfree(&["certify", "--problem", "mild_3x3", "--theorem", "nk"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["theorem"], "NK");
    assert!(v["h"].as_f64().unwrap() >= 0.0);
}
