use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn signshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signshot")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = signshot(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    signshot(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes 6 classes split 3/3, trains a tiny model on the first half and
/// indexes the first sample of each one-shot class.
struct Pipeline {
    dir: tempfile::TempDir,
}

impl Pipeline {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        ok(&["synth", "--out", s(&data), "--classes", "6", "--samples", "4", "--min-len", "8", "--max-len", "12",
            "--split", "0.5", "--seed", "3"]);
        let p = Pipeline { dir };
        ok(&["train", "--data", s(&p.path("data/pretrain")), "--out", s(&p.path("model.pf")), "--config", "tiny",
            "--epochs", "2", "--seed", "1", "--history", s(&p.path("history.csv"))]);
        ok(&["index", "--model", s(&p.path("model.pf")), "--dict", s(&p.path("data/oneshot")), "--out",
            s(&p.path("support.sset")), "--similarity", "cosine"]);
        p
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn first_query(&self) -> PathBuf {
        let class = std::fs::read_dir(self.path("data/oneshot")).unwrap().map(|e| e.unwrap().path()).min().unwrap();
        class.join("0000.json")
    }
}

#[test]
fn help_exits_zero_and_lists_flags() {
    let top = ok(&["--help"]);
    for sub in ["synth", "train", "embed", "index", "query", "eval", "perturb", "scale", "ablate", "gradcheck", "serve"] {
        assert!(top.contains(sub), "{sub} missing from top-level help");
        let help = ok(&[sub, "--help"]);
        assert!(help.contains("--jobs") && help.contains("--help"), "{sub}");
    }
    for (sub, flags) in [
        ("synth", &["--out", "--seed", "--classes", "--split", "--noise"][..]),
        ("train", &["--data", "--seed", "--config", "--train-config", "--epochs"]),
        ("query", &["--support", "--model", "--in", "--k", "--temperature"]),
        ("perturb", &["--seeds", "--seed", "--candidates", "--format", "--similarity", "--ks", "--out"]),
        ("scale", &["--sizes", "--seed", "--format"]),
        ("ablate", &["--pretrain", "--model-seed", "--seeds", "--format"]),
        ("gradcheck", &["--config", "--seed", "--tolerance", "--format"]),
        ("serve", &["--addr", "--wal"]),
    ] {
        let help = ok(&[sub, "--help"]);
        for flag in flags {
            assert!(help.contains(flag), "{sub} --help lacks {flag}");
        }
    }
    assert!(ok(&["--version"]).starts_with("signshot"));
}

#[test]
fn usage_errors_exit_one() {
    let out = signshot(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["query", "--bogus"]), 1);
    assert_eq!(code(&["gradcheck", "--format", "xml"]), 1);
    assert_eq!(code(&["--jobs", "0", "gradcheck"]), 1);
    assert_eq!(code(&["gradcheck", "--config", "no-such-preset"]), 1);
    assert_eq!(code(&["gradcheck", "--ablation", "no_everything"]), 1);
}

#[test]
fn gradcheck_exit_status_follows_the_tolerance() {
    let out = ok(&["gradcheck", "--config", "tiny"]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("max_relative_error,coords_checked,tolerance,passed"));
    let err: f64 = lines.next().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(err < 1e-4);
    assert_eq!(code(&["gradcheck", "--config", "tiny", "--tolerance", "1e-300"]), 3);
    let json: serde_json::Value = serde_json::from_str(&ok(&["gradcheck", "--ablation", "no_input_conv", "--format", "json"])).unwrap();
    assert_eq!(json["passed"], true);
}

#[test]
fn end_to_end_pipeline() {
    let p = Pipeline::new();
    let history = std::fs::read_to_string(p.path("history.csv")).unwrap();
    assert!(history.starts_with("epoch,loss,train_accuracy,validation_accuracy"));
    assert_eq!(history.lines().count(), 3);

    // query prints rank<TAB>label<TAB>probability
    let model = p.path("model.pf");
    let support = p.path("support.sset");
    let query = p.first_query();
    let out = ok(&["query", "--support", s(&support), "--model", s(&model), "--in", s(&query), "--k", "3"]);
    let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    let own_label = query.parent().unwrap().file_name().unwrap().to_str().unwrap();
    assert_eq!(rows[0][..2], ["1", own_label]);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 3);
        assert_eq!(row[0], (i + 1).to_string());
        let p: f64 = row[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    assert_eq!(code(&["query", "--support", s(&support), "--model", s(&model), "--in", s(&query), "--k", "4"]), 1);

    // embeddings
    let csv = ok(&["embed", "--model", s(&model), "--in", s(&query)]);
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 2 + 16);
    let json: serde_json::Value =
        serde_json::from_str(&ok(&["embed", "--model", s(&model), "--in", s(&p.path("data/oneshot")), "--format", "json"]))
            .unwrap();
    assert_eq!(json.as_array().unwrap().len(), 12);

    // evaluation of every one-shot sample against the dictionary
    let eval = ok(&["eval", "--support", s(&support), "--model", s(&model), "--queries", s(&p.path("data/oneshot")), "--ks", "1,2"]);
    let mut lines = eval.lines();
    assert_eq!(lines.next(), Some("dataset,seed,n_support,recall@1,recall@2,mrr,ndcg"));
    assert!(lines.next().unwrap().starts_with("synthetic,0,3,"));
}

#[test]
fn experiment_commands_are_reproducible() {
    let p = Pipeline::new();
    let model = p.path("model.pf");
    let data = p.path("data/oneshot");
    let perturb = |out: &Path| {
        ok(&["perturb", "--model", s(&model), "--data", s(&data), "--candidates", "2", "--seeds", "6", "--seed", "4",
            "--ks", "1,2", "--out", s(out)])
    };
    let (a, b) = (p.path("run-a"), p.path("run-b"));
    let summary = perturb(&a);
    assert_eq!(summary, perturb(&b));
    assert!(summary.starts_with("condition,metric,mean,std,n_seeds\n"));
    assert!(summary.lines().skip(1).all(|l| l.starts_with("perturbation,") && l.ends_with(",6")));
    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics, std::fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert_eq!(metrics.lines().count(), 7);

    let json: serde_json::Value = serde_json::from_str(&ok(&[
        "scale", "--model", s(&model), "--data", s(&data), "--sizes", "1,2,3", "--format", "json", "--seed", "2",
    ]))
    .unwrap();
    let rows = json["rows"].as_array().unwrap();
    let mrr: Vec<f64> = rows.iter().map(|r| r["metrics"]["mrr"].as_f64().unwrap()).collect();
    assert_eq!(mrr.len(), 3);
    assert!(mrr.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(code(&["scale", "--model", s(&model), "--data", s(&data), "--sizes", "2,9"]), 1);

    let ablate = ok(&[
        "ablate", "--pretrain", s(&p.path("data/pretrain")), "--data", s(&data), "--config", "tiny", "--epochs", "1",
        "--seeds", "2",
    ]);
    for variant in ["full", "no_input_conv", "no_frame_embedding", "no_intermediate_conv"] {
        assert!(ablate.lines().any(|l| l.starts_with(&format!("{variant},mrr,"))), "{variant}");
    }
}

#[test]
fn training_is_bit_reproducible_under_a_seed() {
    let p = Pipeline::new();
    let again = p.path("again.pf");
    let fp = ok(&["train", "--data", s(&p.path("data/pretrain")), "--out", s(&again), "--config", "tiny", "--epochs", "2",
        "--seed", "1"]);
    assert_eq!(std::fs::read(p.path("model.pf")).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(fp.trim().len(), 64);
}

#[test]
fn data_errors_exit_two() {
    let p = Pipeline::new();
    let (model, support) = (p.path("model.pf"), p.path("support.sset"));
    let missing = p.path("missing.json");
    assert_eq!(code(&["query", "--support", s(&support), "--model", s(&model), "--in", s(&missing), "--k", "1"]), 2);
    std::fs::write(&missing, "{\"version\": 1}").unwrap();
    assert_eq!(code(&["query", "--support", s(&support), "--model", s(&model), "--in", s(&missing), "--k", "1"]), 2);

    // a support set built with another model is refused
    let other = p.path("other.pf");
    ok(&["train", "--data", s(&p.path("data/pretrain")), "--out", s(&other), "--config", "tiny", "--epochs", "1",
        "--seed", "2"]);
    let query = p.first_query();
    let out = signshot(&["query", "--support", s(&support), "--model", s(&other), "--in", s(&query), "--k", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
    assert_eq!(code(&["serve", "--support", s(&support), "--model", s(&other), "--addr", "127.0.0.1:0"]), 2);

    // refuses to write into a non-empty directory
    assert_eq!(code(&["synth", "--out", s(&p.path("data")), "--classes", "2"]), 2);
    // queries of labels the dictionary lacks
    assert_eq!(
        code(&["eval", "--support", s(&support), "--model", s(&model), "--queries", s(&p.path("data/pretrain"))]),
        2
    );
}
