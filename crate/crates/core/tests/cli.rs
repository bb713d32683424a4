mod common;

use std::fs;
use std::io::{BufRead, BufReader};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use common::*;
use ragkit::fl::{read_frame, write_frame, FlMessage};

fn ragkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ragkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// Writes corpus.jsonl and train.jsonl and ingests them into `store`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let world = fact_world(5);
    let corpus: String = world.facts[..20]
        .iter()
        .map(|f| serde_json::to_string(&f.record()).unwrap() + "\n")
        .collect();
    fs::write(dir.path().join("corpus.jsonl"), corpus).unwrap();
    let train: String = world.train[..6]
        .iter()
        .map(|ex| serde_json::json!({"query": ex.query, "response": ex.response}).to_string() + "\n")
        .collect();
    fs::write(dir.path().join("train.jsonl"), &train).unwrap();
    fs::write(dir.path().join("bench.jsonl"), &train).unwrap();
    let out = ragkit(
        dir.path(),
        &["ingest", "--corpus", "corpus.jsonl", "--store", "store", "--dim", "8", "--features", "256", "--vocab-dataset", "train.jsonl"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), "ingested 20 chunks\n");
    dir
}

#[test]
fn ingest_refuses_to_overwrite_without_force() {
    let dir = workspace();
    let args = ["ingest", "--corpus", "corpus.jsonl", "--store", "store", "--dim", "8", "--features", "256"];
    let out = ragkit(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: "));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(ragkit(dir.path(), &forced).status.success());
}

#[test]
fn ingest_rejects_duplicate_ids() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("corpus.jsonl"),
        "{\"id\": \"a\", \"text\": \"one\"}\n{\"id\": \"a\", \"text\": \"two\"}\n",
    )
    .unwrap();
    let out = ragkit(dir.path(), &["ingest", "--corpus", "corpus.jsonl", "--store", "store"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("store/meta.json").exists());
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let dir = workspace();
    let out = ragkit(dir.path(), &["train", "--mode", "both", "--dataset", "train.jsonl", "--store", "store", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn one_epoch_writes_one_log_line() {
    let dir = workspace();
    for mode in ["generator", "retriever"] {
        let out_dir = format!("out-{mode}");
        let out = ragkit(dir.path(), &["train", "--mode", mode, "--dataset", "train.jsonl", "--store", "store", "--out", &out_dir]);
        assert!(out.status.success(), "{}", stderr(&out));
        let result: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
        assert_eq!(result["losses_per_epoch"].as_array().unwrap().len(), 1);
        let log = fs::read_to_string(dir.path().join(&out_dir).join("train_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 1);
        let line: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(line["epoch"], 1);
        assert!(dir.path().join(&out_dir).join("params.bin").is_file());
    }
}

#[test]
fn query_prints_answer_then_retrieved_chunks() {
    let dir = workspace();
    let out = ragkit(dir.path(), &["query", "--store", "store", "what is the color of anything?"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    // untrained generator: empty answer, then top_k = 2 chunks
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "");
    for line in &lines[1..] {
        let (id, score) = line.split_once('\t').unwrap();
        assert!(!id.is_empty());
        score.parse::<f64>().unwrap();
    }

    let out = ragkit(dir.path(), &["query", "--store", "store", "--json", "what is the color of anything?"]);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["retrieved"].as_array().unwrap().len(), 2);
    assert!(json["prompt"].as_str().unwrap().ends_with("what is the color of anything?"));
}

#[test]
fn benchmark_prints_evaluation_result() {
    let dir = workspace();
    let out = ragkit(dir.path(), &["benchmark", "--store", "store", "--benchmark", "bench.jsonl", "--num-examples", "3", "--agg", "sum"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["num_examples"], 3);
    assert_eq!(json["agg_mode"], "sum");
    assert_eq!(json["aggregate"], 0.0);
}

#[test]
fn missing_input_file_fails() {
    let dir = workspace();
    let out = ragkit(dir.path(), &["benchmark", "--store", "store", "--benchmark", "nope.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn client_without_server_exits_1() {
    let dir = workspace();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let server = format!("127.0.0.1:{port}");
    let out = ragkit(
        dir.path(),
        &["fl-client", "--server", &server, "--mode", "generator", "--dataset", "train.jsonl", "--store", "store", "--out", "c"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains(&server));
}

#[test]
fn server_exits_1_when_a_client_drops() {
    let dir = workspace();
    let mut server = Command::new(env!("CARGO_BIN_EXE_ragkit"))
        .current_dir(dir.path())
        .args(["fl-server", "--listen", "127.0.0.1:0", "--mode", "generator", "--store", "store", "--out", "g"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr_reader = BufReader::new(server.stderr.take().unwrap());
    let mut banner = String::new();
    stderr_reader.read_line(&mut banner).unwrap();
    let address = banner.trim().strip_prefix("listening on ").unwrap();
    {
        let mut stream = TcpStream::connect(address).unwrap();
        write_frame(&mut stream, &FlMessage::Join { client_id: "x".into() }).unwrap();
        assert_eq!(read_frame(&mut stream).unwrap().kind(), "params");
    }
    let status = server.wait().unwrap();
    assert_eq!(status.code(), Some(1));
    let mut rest = String::new();
    std::io::Read::read_to_string(&mut stderr_reader, &mut rest).unwrap();
    assert!(rest.starts_with("error: "), "{rest}");
    assert!(!dir.path().join("g").exists());
}

#[test]
fn federated_round_trip_over_the_cli() {
    let dir = workspace();
    let mut server = Command::new(env!("CARGO_BIN_EXE_ragkit"))
        .current_dir(dir.path())
        .args(["fl-server", "--listen", "127.0.0.1:0", "--mode", "retriever", "--rounds", "2", "--store", "store", "--out", "global"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(server.stderr.take().unwrap()).read_line(&mut banner).unwrap();
    let address = banner.trim().strip_prefix("listening on ").unwrap().to_string();
    let client = ragkit(
        dir.path(),
        &["fl-client", "--server", &address, "--mode", "retriever", "--dataset", "train.jsonl", "--store", "store", "--out", "local"],
    );
    assert!(client.status.success(), "{}", stderr(&client));
    let out = server.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("round 1\texamples 6\tnorm "));
    let global = fs::read(dir.path().join("global/params.bin")).unwrap();
    let local = fs::read(dir.path().join("local/params.bin")).unwrap();
    assert_eq!(global, local);
}
