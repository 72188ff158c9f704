//! End-to-end runs of the `gamelm` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn gamelm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gamelm"))
        .args(args)
        .env("GAMELM_ENGINE", env!("CARGO_BIN_EXE_gamelm-engine"))
        .env("RUST_LOG", "warn")
        .output()
        .expect("gamelm runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gamelm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn digests(m: &Value) -> Vec<String> {
    m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["sha256"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn usage_errors_exit_with_1() {
    assert_eq!(gamelm(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        gamelm(&["nim-gen", "--out", "x.txt", "--frobnicate"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(gamelm(&["nim-gen"]).status.code(), Some(1));
    let bad = gamelm(&["nim-gen", "--out", "x.txt", "--noise", "1.5"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(!bad.stderr.is_empty());
    assert_eq!(gamelm(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let out = gamelm(&["stats", "--corpus", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nim_gen_writes_corpus_stats_splits_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("nim.txt");
    ok(&[
        "nim-gen",
        "--games",
        "100",
        "--variant",
        "player-id",
        "--noise",
        "0.3",
        "--seed",
        "7",
        "--pairings",
        "G-R",
        "--out",
        p(&corpus),
    ]);
    let text = std::fs::read_to_string(&corpus).unwrap();
    assert_eq!(text.split("\n\n").count(), 100);
    let stats: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("nim.txt.stats.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(stats["number_of_games"], 100);
    let train = std::fs::read_to_string(dir.path().join("nim.train.txt")).unwrap();
    let test = std::fs::read_to_string(dir.path().join("nim.test.txt")).unwrap();
    assert_eq!(test.split("\n\n").count(), 20);
    assert_eq!(train.split("\n\n").count(), 80);
    let m = manifest(&dir.path().join("nim.txt.manifest.json"));
    assert_eq!(m["subcommand"], "nim-gen");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["noise"], 0.3);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 4);
}

#[test]
fn identical_invocations_give_identical_digests() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, jobs: &str| {
        let corpus = dir.path().join(name);
        ok(&[
            "nim-gen",
            "--games",
            "60",
            "--seed",
            "3",
            "--q-episodes",
            "2000",
            "--jobs",
            jobs,
            "--out",
            p(&corpus),
        ]);
        let text = std::fs::read_to_string(&corpus).unwrap();
        (
            text,
            manifest(&dir.path().join(format!("{name}.manifest.json"))),
        )
    };
    let (a, ma) = run("a.txt", "1");
    let (b, _) = run("b.txt", "3");
    let (c, mc) = run("a.txt", "1");
    assert_eq!(a, b);
    assert_eq!(digests(&ma), digests(&mc));
    assert_eq!(a, c);
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "# small run\ngames = 12\npairings = G-R\nseed = 4\n").unwrap();
    let corpus = dir.path().join("c.txt");
    ok(&[
        "nim-gen",
        "--config",
        p(&conf),
        "--games",
        "8",
        "--out",
        p(&corpus),
    ]);
    let m = manifest(&dir.path().join("c.txt.manifest.json"));
    assert_eq!(m["config"]["games"], 8);
    assert_eq!(m["config"]["seed"], 4);
    assert_eq!(m["config"]["pairings"], "G-R");
    std::fs::write(&conf, "gamez = 12\n").unwrap();
    assert_eq!(
        gamelm(&["nim-gen", "--config", p(&conf), "--out", p(&corpus)])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn chess_gen_uses_the_engine_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("chess.txt");
    ok(&[
        "chess-gen",
        "--games",
        "10",
        "--plies",
        "6",
        "--depth",
        "1",
        "--noise",
        "0.2",
        "--seed",
        "7",
        "--out",
        p(&corpus),
    ]);
    let games = gamelm::corpus::read_games(&std::fs::read_to_string(&corpus).unwrap());
    assert_eq!(games.len(), 10);
    for game in &games {
        assert!(game.len() <= 6);
        for line in game {
            let r = gamelm::corpus::decode_chess_record(line).unwrap();
            assert!(gamelm::chess::is_legal(&r.position, r.mv));
        }
    }
    let m = manifest(&dir.path().join("chess.txt.manifest.json"));
    assert_eq!(m["inputs"].as_array().unwrap().len(), 1);
    let missing = gamelm(&[
        "chess-gen",
        "--games",
        "1",
        "--engine",
        "/nonexistent/engine",
        "--out",
        p(&corpus),
    ]);
    assert_eq!(missing.status.code(), Some(2));
}

fn train_small_model(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let corpus = dir.join("nim.txt");
    ok(&[
        "nim-gen",
        "--games",
        "120",
        "--pairings",
        "G-R",
        "--seed",
        "2",
        "--out",
        p(&corpus),
    ]);
    let vocab = dir.join("vocab.json");
    ok(&["tok-train", "--corpus", p(&corpus), "--out", p(&vocab)]);
    let model = dir.join("model.ckpt");
    ok(&[
        "mlm-train",
        "--corpus",
        p(&corpus),
        "--vocab",
        p(&vocab),
        "--mask-p",
        "0.15",
        "--steps",
        "60",
        "--seed",
        "7",
        "--out",
        p(&model),
    ]);
    (corpus, vocab, model)
}

#[test]
fn training_and_arena_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, vocab, model) = train_small_model(dir.path());
    let loss = std::fs::read_to_string(dir.path().join("model.ckpt.loss.csv")).unwrap();
    assert!(loss.starts_with("step,loss\n"));
    assert_eq!(loss.lines().count(), 61);
    assert!(dir.path().join("model.ckpt.loss.svg").exists());
    let m = manifest(&dir.path().join("model.ckpt.manifest.json"));
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);

    let arena = dir.path().join("arena");
    let spec = format!("0.0:{}:{}", p(&model), p(&vocab));
    ok(&[
        "nim-arena",
        "--model",
        &spec,
        "--agents",
        "G,R",
        "--games",
        "20",
        "--out-dir",
        p(&arena),
    ]);
    let csv = std::fs::read_to_string(arena.join("roster.csv")).unwrap();
    assert!(csv.starts_with("noise,agent_a,agent_b,seat,wins,games,invalid_preds\n"));
    // three pairings, two agents per pairing, two seats each
    assert_eq!(csv.lines().count(), 1 + 12);
    assert!(arena.join("roster.svg").exists());

    let redo = dir.path().join("redo");
    ok(&[
        "report",
        "--input",
        p(&arena.join("roster.json")),
        "--out-dir",
        p(&redo),
    ]);
    assert_eq!(
        std::fs::read_to_string(redo.join("roster.csv")).unwrap(),
        csv
    );

    let out = ok(&["stats", "--corpus", p(&corpus)]);
    let stats: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["number_of_games"], 120);
}

#[test]
fn chess_eval_writes_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("chess.txt");
    ok(&[
        "chess-gen",
        "--games",
        "20",
        "--noise",
        "0.3",
        "--out",
        p(&corpus),
    ]);
    let vocab = dir.path().join("vocab.json");
    ok(&[
        "tok-train",
        "--corpus",
        p(&corpus),
        "--preset",
        "chess",
        "--out",
        p(&vocab),
    ]);
    let model = dir.path().join("chess.ckpt");
    ok(&[
        "mlm-train",
        "--corpus",
        p(&corpus),
        "--vocab",
        p(&vocab),
        "--steps",
        "20",
        "--out",
        p(&model),
    ]);
    let eval = dir.path().join("eval");
    ok(&[
        "chess-eval",
        "--model",
        p(&model),
        "--vocab",
        p(&vocab),
        "--games",
        "2",
        "--ply-limit",
        "40",
        "--heldout",
        p(&dir.path().join("chess.test.txt")),
        "--out-dir",
        p(&eval),
    ]);
    let validity = std::fs::read_to_string(eval.join("validity.csv")).unwrap();
    assert!(validity.starts_with("ply,valid,total\n"));
    assert!(validity.lines().count() >= 71);
    let lengths = std::fs::read_to_string(eval.join("game_lengths.csv")).unwrap();
    assert_eq!(lengths.lines().count(), 3);
    for name in [
        "validity.svg",
        "game_lengths.svg",
        "heldout_validity.csv",
        "chess.json",
        "manifest.json",
    ] {
        assert!(eval.join(name).exists(), "{name} missing");
    }
}
