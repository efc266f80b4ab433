use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unigraph"))
        .args(args)
        .env("UNIGRAPH_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn build_graph_matches_golden_bytes() {
    for name in ["einstein", "corpus"] {
        let input = fixture(&format!("{name}.json"));
        let o = run(&["build-graph", path_str(&input)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let golden = std::fs::read(fixture(&format!("{name}.graph.json"))).unwrap();
        assert_eq!(o.stdout, golden, "{name}");
    }
}

#[test]
fn build_graph_writes_file_and_dot() {
    let dir = tempfile::tempdir().unwrap();
    let (out, dot) = (dir.path().join("g.json"), dir.path().join("g.dot"));
    let o = run(&[
        "build-graph",
        path_str(&fixture("einstein.json")),
        "-o",
        path_str(&out),
        "--dot",
        path_str(&dot),
        "--augment",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("wrote 11 nodes"));
    assert!(std::fs::read_to_string(&dot)
        .unwrap()
        .starts_with("digraph"));
    let g: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(g["nodes"].as_array().unwrap().len(), 11);
}

#[test]
fn missing_input_is_an_io_error() {
    let o = run(&["build-graph", "/definitely/not/here.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no such input"), "{}", stderr(&o));

    let o = run(&["--json", "stats", "/definitely/not/here.json"]);
    assert_eq!(code(&o), 2);
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["exit_code"], 2);
    assert!(err["error"].as_str().unwrap().contains("no such input"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&run(&["no-such-command"])), 2);
    assert_eq!(code(&run(&["build-graph"])), 2);
    assert_eq!(code(&run(&["stats", "x.json", "--bucket-size", "zero"])), 2);
    let o = run(&[
        "stats",
        path_str(&fixture("einstein.json")),
        "--bucket-size",
        "0",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_annotations_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"documents": [{}]}"#).unwrap();
    let o = run(&["build-graph", path_str(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("parse error"));
}

#[test]
fn empty_document_set_gives_empty_graph() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"documents": []}"#).unwrap();
    let o = run(&["build-graph", path_str(&empty)]);
    assert_eq!(code(&o), 0);
    let g: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(g["nodes"].as_array().unwrap().is_empty());
    assert!(g["edges"].as_array().unwrap().is_empty());
}

#[test]
fn stats_reports_buckets_and_json() {
    let input = fixture("corpus.json");
    let o = run(&["stats", path_str(&input)]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("tokens_from,documents,avg_nodes,avg_edges\n"));
    assert!(text.contains("# unified graph:"));

    let o = run(&["--json", "stats", path_str(&input), "--bucket-size", "10"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["buckets"].as_array().unwrap().len() > 1);
    let docs: u64 = v["buckets"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["documents"].as_u64().unwrap())
        .sum();
    assert_eq!(docs, 5);

    let graph = fixture("einstein.graph.json");
    let o = run(&["stats", path_str(&graph)]);
    assert_eq!(stdout(&o), "nodes,edges,components\n10,10,1\n");
}

#[test]
fn export_dot_from_graph_or_annotations() {
    let a = run(&["export-dot", path_str(&fixture("einstein.json"))]);
    let b = run(&["export-dot", path_str(&fixture("einstein.graph.json"))]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("Albert Einstein"));
}

#[test]
fn selfcheck_passes_and_catches_injected_fault() {
    let o = run(&["selfcheck"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));

    let o = run(&["--json", "selfcheck", "--inject-fault"]);
    assert_eq!(code(&o), 1);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["passed"], false);
    let failing: Vec<&str> = v["properties"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| p["passed"] == false)
        .map(|p| p["name"].as_str().unwrap())
        .collect();
    assert!(failing.contains(&"propagation_equivalence"), "{failing:?}");
}

const SMALL: &[&str] = &[
    "--examples",
    "4",
    "--d-model",
    "16",
    "--heads",
    "2",
    "--dropout",
    "0",
];

#[test]
fn train_zero_steps_writes_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    let mut args = vec!["--json", "train", "-o", path_str(&ck), "--steps", "0"];
    args.extend(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(ck.exists());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["steps"], 0);
}

#[test]
fn train_then_generate() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    let csv = dir.path().join("loss.csv");
    let mut args = vec![
        "train",
        "-o",
        path_str(&ck),
        "--steps",
        "30",
        "--lr",
        "5e-3",
        "--loss-csv",
        path_str(&csv),
    ];
    args.extend(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let curve = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(curve.lines().count(), 31);
    assert!(curve.starts_with("step,loss,grad_norm,clipped_norm\n"));

    let gen = |extra: &[&str]| {
        let mut a = vec!["generate", "--checkpoint", path_str(&ck), "--examples", "4"];
        a.extend(extra);
        let o = run(&a);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout(&o)
    };
    let base = gen(&[]);
    assert_eq!(base.lines().count(), 4);
    for line in base.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["input_id"].as_str().unwrap().starts_with("toy-"));
    }
    assert_eq!(base, gen(&[]), "generation is deterministic");
    assert_ne!(gen(&["--p", "0"]), gen(&["--p", "2"]));
    let tokens = |s: String| -> Vec<serde_json::Value> {
        s.lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["tokens"].clone())
            .collect()
    };
    assert_eq!(tokens(gen(&["--beam", "1"])), tokens(gen(&["--greedy"])));

    let o = run(&[
        "generate",
        "--checkpoint",
        path_str(&ck),
        "--input",
        path_str(&fixture("einstein.json")),
        "--max-len",
        "5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1);

    let o = run(&["generate", "--checkpoint", path_str(&ck), "--beam", "0"]);
    assert_eq!(code(&o), 2);
    let o = run(&[
        "generate",
        "--checkpoint",
        path_str(&dir.path().join("none")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("bad.ckpt");
    std::fs::write(&ck, b"not a checkpoint").unwrap();
    let o = run(&["generate", "--checkpoint", path_str(&ck)]);
    assert_eq!(code(&o), 2);
}
