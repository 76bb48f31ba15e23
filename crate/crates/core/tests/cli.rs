use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use triplet_rank::data::load_triplets;

const BIN: &str = env!("CARGO_BIN_EXE_triplet-rank");

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("RUST_LOG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
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

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// 3 tags × 8 items × 4 users on a 2×6 frame layout.
    fn synth(&self) -> PathBuf {
        let corpus = self.path("corpus");
        let o = run(&[
            "synth",
            "--tags",
            "3",
            "--items-per-tag",
            "8",
            "--users-per-tag",
            "4",
            "--noise",
            "0.5",
            "--frames",
            "2",
            "--frame-dim",
            "6",
            "--seed",
            "3",
            "--out",
            s(&corpus),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        corpus
    }

    fn pairs(&self, corpus: &Path, strategy: &[&str], name: &str) -> PathBuf {
        let out = self.path(name);
        let mut args = vec![
            "build-pairs",
            "--corpus",
            s(corpus),
            "--seed",
            "5",
            "--out",
            s(&out),
        ];
        args.extend_from_slice(strategy);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    }

    fn train(&self, corpus: &Path, pairs: &Path, model: &str, name: &str) -> PathBuf {
        let ckpt = self.path(name);
        let o = run(&[
            "train",
            "--corpus",
            s(corpus),
            "--pairs",
            s(pairs),
            "--model",
            model,
            "--epochs",
            "1",
            "--batch",
            "16",
            "--item-hidden",
            "10,8,6,4",
            "--user-hidden",
            "6,4",
            "--latent",
            "3",
            "--seed",
            "9",
            "--ckpt",
            s(&ckpt),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        ckpt
    }
}

#[test]
fn gradcheck_passes_and_reports_error() {
    let o = run(&["gradcheck", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("max relative error"), "{text}");
    assert!(text.contains("(ok)"), "{text}");
}

#[test]
fn one_to_n_emits_n_triplets_per_positive() {
    let ws = Workspace::new();
    let corpus = ws.synth();
    let pairs = ws.pairs(
        &corpus,
        &["--strategy", "one-to-n", "--n", "10"],
        "pairs.csv",
    );
    let positives = 3 * 4 * 8;
    let triplets = load_triplets(&pairs).unwrap();
    assert_eq!(triplets.len(), 10 * positives);

    let unbalanced = ws.pairs(&corpus, &["--strategy", "unbalanced"], "u.csv");
    assert_eq!(load_triplets(&unbalanced).unwrap().len(), positives);
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let ws = Workspace::new();
    let corpus = ws.synth();
    let pairs = ws.pairs(&corpus, &["--strategy", "balanced"], "pairs.csv");
    for model in ["triplet", "twonet"] {
        let a = ws.train(&corpus, &pairs, model, &format!("{model}-a.ckpt"));
        let b = ws.train(&corpus, &pairs, model, &format!("{model}-b.ckpt"));
        assert_eq!(
            std::fs::read(a).unwrap(),
            std::fs::read(b).unwrap(),
            "{model}"
        );
    }
}

#[test]
fn train_logs_one_json_line_per_epoch() {
    let ws = Workspace::new();
    let corpus = ws.synth();
    let pairs = ws.pairs(&corpus, &["--strategy", "unbalanced"], "pairs.csv");
    let ckpt = ws.path("m.ckpt");
    let o = run(&[
        "train",
        "--corpus",
        s(&corpus),
        "--pairs",
        s(&pairs),
        "--epochs",
        "3",
        "--item-hidden",
        "8,6",
        "--user-hidden",
        "4",
        "--latent",
        "3",
        "--ckpt",
        s(&ckpt),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["epoch"], i + 1, "{line}");
    }
}

#[test]
fn eval_and_retrieve_json_parse() {
    let ws = Workspace::new();
    let corpus = ws.synth();
    let pairs = ws.pairs(&corpus, &["--strategy", "unbalanced"], "pairs.csv");
    let ckpt = ws.train(&corpus, &pairs, "triplet", "m.ckpt");

    let o = run(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--pairs",
        s(&pairs),
        "--k",
        "1,5",
        "--json",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v.is_object());

    let o = run(&[
        "retrieve",
        "--ckpt",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--user",
        "0",
        "--k",
        "5",
        "--json",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 5);

    let o = run(&[
        "retrieve",
        "--ckpt",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--item",
        "3",
        "--k",
        "4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split('\t').nth(1) != Some("3")));
}

#[test]
fn eval_output_does_not_depend_on_thread_count() {
    let ws = Workspace::new();
    let corpus = ws.synth();
    let pairs = ws.pairs(
        &corpus,
        &["--strategy", "one-to-n", "--n", "3"],
        "pairs.csv",
    );
    let ckpt = ws.train(&corpus, &pairs, "triplet", "m.ckpt");
    let args = [
        "eval",
        "--ckpt",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--pairs",
        s(&pairs),
        "--k",
        "1,3,10",
        "--json",
    ];
    let outputs: Vec<Vec<u8>> = ["1", "2", "4"]
        .iter()
        .map(|t| {
            let o = run_env(&args, &[("TRIPLET_RANK_THREADS", t)]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            o.stdout
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn usage_errors_exit_one() {
    let o = run(&["train", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--bogus"));

    let ws = Workspace::new();
    let corpus = ws.synth();
    let out = ws.path("p.csv");
    let o = run(&[
        "build-pairs",
        "--corpus",
        s(&corpus),
        "--strategy",
        "balanced",
        "--n",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("--n only applies to --strategy one-to-n"),
        "{}",
        stderr(&o)
    );
    assert!(!out.exists());

    let o = run(&["retrieve", "--ckpt", "a", "--corpus", "b"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    for cmd in [
        "synth",
        "build-pairs",
        "train",
        "eval",
        "retrieve",
        "compare",
        "gradcheck",
    ] {
        assert!(stdout(&o).contains(cmd), "{cmd}");
    }
}

#[test]
fn missing_or_bad_inputs_exit_two() {
    let ws = Workspace::new();
    let o = run(&[
        "build-pairs",
        "--corpus",
        s(&ws.path("nope")),
        "--strategy",
        "unbalanced",
        "--out",
        s(&ws.path("p.csv")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let corpus = ws.synth();
    let junk = ws.path("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let o = run(&["eval", "--ckpt", s(&junk), "--corpus", s(&corpus)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = run(&[
        "retrieve",
        "--ckpt",
        s(&ws.path("absent.ckpt")),
        "--corpus",
        s(&corpus),
        "--user",
        "0",
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn checkpoint_from_another_corpus_is_rejected() {
    let ws = Workspace::new();
    let corpus = ws.synth();
    let pairs = ws.pairs(&corpus, &["--strategy", "unbalanced"], "pairs.csv");
    let ckpt = ws.train(&corpus, &pairs, "triplet", "m.ckpt");
    let other = ws.path("other");
    let o = run(&[
        "synth",
        "--tags",
        "3",
        "--frames",
        "2",
        "--frame-dim",
        "5",
        "--items-per-tag",
        "4",
        "--users-per-tag",
        "2",
        "--out",
        s(&other),
    ]);
    assert_eq!(code(&o), 0);
    let o = run(&["eval", "--ckpt", s(&ckpt), "--corpus", s(&other)]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("corpus does not match checkpoint"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn compare_reports_every_arm() {
    let ws = Workspace::new();
    let corpus = ws.synth();
    let common = [
        "compare",
        "--corpus",
        s(&corpus),
        "--seeds",
        "1,2,3",
        "--epochs",
        "1",
        "--item-hidden",
        "8,6",
        "--user-hidden",
        "4",
        "--latent",
        "3",
        "--k",
        "3",
        "--json",
    ];
    let o = run(&common);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let arms = v["arms"].as_array().unwrap();
    assert_eq!(arms.len(), 2);
    assert_eq!(arms[0]["per_seed"].as_array().unwrap().len(), 3);

    let mut args = common.to_vec();
    args.extend_from_slice(&["--regimes", "--strategy", "one-to-n", "--n", "2"]);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["arms"].as_array().unwrap().len(), 3);

    let o = run(&["compare", "--corpus", s(&corpus), "--seeds", "1,2"]);
    assert_eq!(code(&o), 1);
}
