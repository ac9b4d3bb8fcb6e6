use std::path::Path;
use std::process::{Command, Output};

fn urnng(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urnng")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, name: &str, n: &str, seed: &str) -> (String, String) {
    let prefix = dir.join(name);
    let o = urnng(&["synth", "--n", n, "--min-len", "3", "--max-len", "8", "--seed", seed, "--out-prefix", p(&prefix)]);
    assert!(o.status.success(), "{}", stderr(&o));
    (format!("{}.tokens", p(&prefix)), format!("{}.trees", p(&prefix)))
}

const TINY: &str = "epochs = 1\nsamples = 2\nbatch_size = 8\nword_dim = 8\nq_hidden = 6\nmlp_hidden = 6\nmax_len = 12\n";

#[test]
fn usage_errors_exit_one() {
    let o = urnng(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = urnng(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(urnng(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_corpus_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let o = urnng(&["train", "--corpus", p(&missing), "--valid", p(&missing), "--out", p(&dir.path().join("m.ckpt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.txt"), "{}", stderr(&o));
    assert_eq!(stderr(&o).trim().lines().count(), 1);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a_tok, a_tree) = synth(dir.path(), "a", "30", "5");
    let (b_tok, b_tree) = synth(dir.path(), "b", "30", "5");
    assert_eq!(std::fs::read(&a_tok).unwrap(), std::fs::read(&b_tok).unwrap());
    assert_eq!(std::fs::read(&a_tree).unwrap(), std::fs::read(&b_tree).unwrap());
    assert_eq!(std::fs::read_to_string(&a_tok).unwrap().lines().count(), 30);
}

#[test]
fn verify_passes() {
    let o = urnng(&["verify", "--max-length", "6", "--trials", "5"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn train_parse_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (train_tok, _) = synth(dir.path(), "train", "40", "1");
    let (valid_tok, valid_tree) = synth(dir.path(), "valid", "10", "2");
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let o = urnng(&["train", "--corpus", &train_tok, "--valid", &valid_tok, "--config", p(&cfg), "--out", p(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("epoch=1 "));

    let parsed = dir.path().join("parsed.txt");
    let o = urnng(&["parse", "--corpus", &valid_tok, "--checkpoint", p(&ckpt), "--out", p(&parsed)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = std::fs::read_to_string(&parsed).unwrap().lines().count();
    assert_eq!(lines, std::fs::read_to_string(&valid_tok).unwrap().lines().count());

    let o = urnng(&[
        "evaluate", "--corpus", &valid_tok, "--gold", &valid_tree, "--checkpoint", p(&ckpt), "--samples", "20",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for key in ["perplexity=", "f1=", "posterior_entropy=", "recall_NP="] {
        assert!(out.contains(key), "missing {key} in {out}");
    }

    let o = urnng(&["sample", "--corpus", &valid_tok, "--checkpoint", p(&ckpt), "--samples", "2"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 20);
    let o = urnng(&["generate", "--checkpoint", p(&ckpt), "--n", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3);

    // Resuming a finished run with a larger budget trains one more epoch.
    let o = urnng(&["train", "--corpus", &train_tok, "--valid", &valid_tok, "--resume", p(&ckpt), "--epochs", "2", "--out", p(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("epoch=2 ") && !stdout(&o).contains("epoch=1 "));
}

#[test]
fn supervised_training_reads_trees() {
    let dir = tempfile::tempdir().unwrap();
    let (_, train_tree) = synth(dir.path(), "train", "30", "3");
    let (valid_tok, _) = synth(dir.path(), "valid", "5", "4");
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let ckpt = dir.path().join("sup.ckpt");
    let o = urnng(&[
        "train", "--corpus", &train_tree, "--valid", &valid_tok, "--config", p(&cfg), "--mode", "supervised", "--out",
        p(&ckpt),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = urnng(&[
        "train", "--corpus", &train_tree, "--valid", &valid_tok, "--config", p(&cfg), "--mode", "finetune", "--init",
        p(&ckpt), "--out", p(&dir.path().join("ft.ckpt")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mode=finetune"));
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (tok, _) = synth(dir.path(), "c", "3", "1");
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"URNNGCKP\x01\x00").unwrap();
    let o = urnng(&["parse", "--corpus", &tok, "--checkpoint", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("truncated"), "{}", stderr(&o));
}
