use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 16] = [
    "synth.n_alternations=4",
    "synth.instantiations=30",
    "synth.distractor_lemmas=10",
    "synth.noise_lemmas=5",
    "encoder.d_model=16",
    "encoder.n_heads=2",
    "encoder.d_ff=32",
    "encoder.n_layers=1",
    "encoder.max_len=16",
    "train.epochs_pretrain=1",
    "train.lr_pretrain=1e-3",
    "chain.epochs_analogical=1",
    "chain.epochs_associative=1",
    "chain.lr=1e-4",
    "eval.usages_per_token=1",
    "seed=3",
];

fn metasense(dir: &Path, args: &[&str]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_metasense"));
    c.current_dir(dir).env("RUST_LOG", "warn").env_remove("METASENSE_WORDNET_DIR");
    for s in SMALL {
        c.args(["--set", s]);
    }
    c.args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = metasense(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn first_line(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn stepwise_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth-gen", "--out", "synth"]);
    ok(d, &["ingest", "--corpus", "synth/corpus.jsonl", "--out", "store.jsonl"]);
    let mined = ok(d, &["mine", "--store", "store.jsonl", "--out", "alts.tsv"]);
    assert!(mined.contains("4 systematic"), "{mined}");
    ok(d, &["partition", "--store", "store.jsonl", "--alternations", "alts.tsv", "--alpha", "0.4", "--out", "part"]);
    ok(d, &["pretrain", "--partition", "part", "--out", "model"]);
    ok(d, &[
        "chain", "--model", "model", "--partition", "part", "--alternations", "alts.tsv", "--store", "store.jsonl",
        "--objective", "both", "--out", "chained",
    ]);
    ok(d, &["evaluate", "--model", "chained", "--partition", "part", "--out", "ev"]);
    let header = first_line(&d.join("synth/truth.tsv"));
    assert!(header.starts_with("# config_hash=") && header.contains("seed=3"), "{header}");
    for f in ["alts.tsv", "part/registry.tsv", "model/mlm_curve.csv", "chained/chain_curve.csv"] {
        assert!(first_line(&d.join(f)).starts_with(&header), "{f}");
    }
    let hash = header.split_whitespace().nth(1).unwrap();
    let strata = first_line(&d.join("ev/strata.csv"));
    assert!(strata.contains(hash) && strata.contains(" seed="), "{strata}");
}

#[test]
fn experiment_writes_identical_reports_twice() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let args = ["--set", "alphas=[0.4]", "--set", "runs=1", "--set", "variants=[\"mlm\",\"analogical\"]"];
    for out in ["a", "b"] {
        let mut v: Vec<&str> = args.to_vec();
        v.extend(["experiment", "--out", out]);
        ok(d, &v);
    }
    let a = std::fs::read(d.join("a/report.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b/report.csv")).unwrap());
    assert_eq!(std::fs::read(d.join("a/strata.csv")).unwrap(), std::fs::read(d.join("b/strata.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 2 + 2);
}

#[test]
fn exit_codes_follow_error_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let bad_key = metasense(d, &["--set", "encoder.nope=1", "synth-gen", "--out", "x"]);
    assert_eq!(bad_key.status.code(), Some(1));
    let bad_alpha = {
        ok(d, &["synth-gen", "--out", "synth"]);
        ok(d, &["ingest", "--corpus", "synth/corpus.jsonl", "--out", "store.jsonl"]);
        ok(d, &["mine", "--store", "store.jsonl", "--out", "alts.tsv"]);
        metasense(d, &["partition", "--store", "store.jsonl", "--alternations", "alts.tsv", "--alpha", "0.5", "--out", "p"])
    };
    assert_eq!(bad_alpha.status.code(), Some(1));
    let missing = metasense(d, &["ingest", "--corpus", "absent.jsonl", "--out", "s.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));
    let strict = metasense(d, &["gradcheck", "--tol", "1e-30"]);
    assert_eq!(strict.status.code(), Some(3));
    let usage = metasense(d, &["no-such-command"]);
    assert_eq!(usage.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_at_default_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["gradcheck"]);
    for k in ["mlm", "analogical", "associative"] {
        assert!(out.contains(k), "{out}");
    }
}
