use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use recycle::report::ExperimentReport;
use recycle_core::vocab::MANDATORY;

fn recycle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recycle")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = recycle(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn vocab_file(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut text = String::new();
    for e in MANDATORY.iter().chain(extra) {
        text.push_str(e);
        text.push('\n');
    }
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn vocab_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let corpus = d.path().join("t.txt");
    fs::write(&corpus, "the cat sat\nна ковре\nthe mat\n").unwrap();
    let (a, b) = (d.path().join("a.vocab"), d.path().join("b.vocab"));
    ok(&["vocab", "--corpus", p(&corpus), "--size", "64", "--out", p(&a)]);
    ok(&["vocab", "--corpus", p(&corpus), "--size", "64", "--out", p(&b)]);
    let text = fs::read(&a).unwrap();
    assert_eq!(text, fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(text).unwrap().lines().count(), 64);
}

#[test]
fn transform_traced_example() {
    let d = tempfile::tempdir().unwrap();
    let parent = vocab_file(d.path(), "p.vocab", &["a", "b", "c", "d"]);
    let child = vocab_file(d.path(), "c.vocab", &["b", "e", "c", "f"]);
    let out = d.path().join("t.vocab");
    ok(&["transform", "--parent", p(&parent), "--child", p(&child), "--strategy", "ordered", "--out", p(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    let tail: Vec<&str> = text.lines().skip(MANDATORY.len()).collect();
    assert_eq!(tail, ["e", "b", "c", "f"]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("t.vocab.mapping.json")).unwrap()).unwrap();
    assert_eq!(report["strategy"], "ordered");
    assert_eq!(report["reassigned_count"], 2);
}

#[test]
fn frequency_transform_needs_a_corpus() {
    let d = tempfile::tempdir().unwrap();
    let parent = vocab_file(d.path(), "p.vocab", &["a", "b"]);
    let child = vocab_file(d.path(), "c.vocab", &["b", "e"]);
    let out = recycle(&["transform", "--parent", p(&parent), "--child", p(&child), "--out", p(&d.path().join("t"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[usage]:"));
}

#[test]
fn bleu_and_significance() {
    let d = tempfile::tempdir().unwrap();
    let refs = d.path().join("r.txt");
    let lines: Vec<String> = (0..40).map(|i| format!("w{i} x y{i} z")).collect();
    fs::write(&refs, lines.join("\n") + "\n").unwrap();
    let s = ok(&["bleu", "--hyp", p(&refs), "--refs", p(&refs)]);
    assert!(s.starts_with("BLEU = 100.00"), "{s}");
    assert!(s.contains("signature: ngram=4|tok=13a-punct|smooth=none|case=mixed"));
    let json = d.path().join("sig.json");
    let s = ok(&["significance", "--hyp-a", p(&refs), "--hyp-b", p(&refs), "--refs", p(&refs), "--out-json", p(&json)]);
    assert!(s.contains("not significant"), "{s}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["significant"], false);
    assert_eq!(v["n_samples"], 1000);
}

#[test]
fn error_lines_and_exit_codes() {
    let out = recycle(&["bleu", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[usage]:") && err.lines().count() == 1, "{err}");

    let out = recycle(&["bleu", "--hyp", "/nonexistent/h", "--refs", "/nonexistent/r"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]:"));

    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("x.ckpt");
    fs::write(&bad, b"RCYCKPT\0garbage").unwrap();
    let v = vocab_file(d.path(), "v.vocab", &[]);
    let input = d.path().join("in.txt");
    fs::write(&input, "a\n").unwrap();
    let out = recycle(&["translate", "--ckpt", p(&bad), "--vocab", p(&v), "--input", p(&input), "--out", p(&d.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[format]:"));

    let dup = d.path().join("dup.vocab");
    fs::write(&dup, MANDATORY.join("\n") + "\na\na\n").unwrap();
    let out = recycle(&["segment", "--vocab", p(&dup), "--input", p(&input), "--out", p(&d.path().join("s"))]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 17") && err.contains("duplicate"), "{err}");

    assert!(recycle(&["--help"]).status.success());
}

#[test]
fn synth_segment_stats() {
    let d = tempfile::tempdir().unwrap();
    let task = d.path().join("ru");
    ok(&["synth", "--out", p(&task), "--pairs", "60", "--lexicon", "20", "--script", "cyrillic"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(task.join("manifest.json")).unwrap()).unwrap();
    assert_eq!((manifest["train"].as_u64(), manifest["dev"].as_u64(), manifest["test"].as_u64()), (Some(54), Some(3), Some(3)));
    assert_eq!(manifest["target_script"], "cyrillic");

    let latin = d.path().join("latin.vocab");
    let child = d.path().join("child.vocab");
    ok(&["vocab", "--corpus", p(&task.join("train.src")), "--size", "80", "--out", p(&latin)]);
    ok(&["vocab", "--corpus", p(&task.join("train.tgt")), "--size", "80", "--out", p(&child)]);
    let seg = d.path().join("seg.txt");
    ok(&["segment", "--vocab", p(&latin), "--input", p(&task.join("dev.tgt")), "--out", p(&seg)]);
    // Cyrillic is absent from the Latin vocabulary: every letter is a codepoint escape.
    let first = fs::read_to_string(&seg).unwrap().lines().next().unwrap().to_string();
    assert!(first.starts_with("\\\\ 1 0"), "{first}");

    let tsv = d.path().join("stats.tsv");
    ok(&["stats", "--vocab", p(&latin), p(&child), "--corpus", p(&task.join("train.tgt")), "--out-tsv", p(&tsv)]);
    let text = fs::read_to_string(&tsv).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0], ["vocab_name", "tokens_per_sentence", "tokens_per_word", "sentence_count", "filtered_count"]);
    let tpw = |r: &[&str]| r[2].parse::<f64>().unwrap();
    assert_eq!(rows[1][0], "latin");
    assert!(tpw(&rows[1]) > tpw(&rows[2]));
}

const TINY: &[&str] = &[
    "--set", "d_model=32", "--set", "ffn_dim=64", "--set", "max_len=64",
    "--set", "max_steps=120", "--set", "min_steps=120", "--set", "eval_every=40",
    "--set", "warmup_steps=40", "--set", "batch_tokens=512",
];

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(TINY.iter().copied()).collect()
}

fn report(dir: &Path) -> ExperimentReport {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn train_translate_transfer() {
    let d = tempfile::tempdir().unwrap();
    let task = d.path().join("copy");
    ok(&["synth", "--out", p(&task), "--pairs", "100", "--lexicon", "8", "--script", "copy"]);
    let v = d.path().join("v.vocab");
    ok(&["vocab", "--corpus", p(&task.join("train.src")), "--size", "96", "--out", p(&v)]);
    let run = d.path().join("run");
    let s = ok(&with_tiny(&["train", "--vocab", p(&v), "--task", p(&task), "--out", p(&run)]));
    assert!(s.contains("best dev BLEU"));
    let traj = fs::read_to_string(run.join("trajectory.tsv")).unwrap();
    assert_eq!(traj.lines().next(), Some("step\tbleu\tloss\tlr"));
    assert_eq!(traj.lines().count(), 1 + 4);
    let cfg = fs::read_to_string(run.join("train.cfg")).unwrap();
    assert!(cfg.contains("d_model = 32"));

    let hyp = d.path().join("hyp.txt");
    ok(&["translate", "--ckpt", p(&run.join("best.ckpt")), "--vocab", p(&v), "--input", p(&task.join("test.src")), "--out", p(&hyp)]);
    assert_eq!(fs::read_to_string(&hyp).unwrap().lines().count(), 5);

    let child = d.path().join("child.ckpt");
    ok(&["transfer", "--parent-ckpt", p(&run.join("last.ckpt")), "--parent-vocab", p(&v), "--mode", "direct", "--out", p(&child)]);
    let a = recycle::ckpt::load(&run.join("last.ckpt")).unwrap();
    let b = recycle::ckpt::load(&child).unwrap();
    assert!(a.bitwise_eq(&b));

    // Model settings cannot be changed under a checkpoint.
    let out = recycle(&["train", "--vocab", p(&v), "--task", p(&task), "--init", p(&child), "--set", "d_model=64", "--out", p(&d.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn experiments_are_reproducible_and_compare() {
    let d = tempfile::tempdir().unwrap();
    let task = d.path().join("copy");
    ok(&["synth", "--out", p(&task), "--pairs", "100", "--lexicon", "8", "--script", "copy"]);
    let base = d.path().join("scratch");
    let args = ["experiment", "--child-task", p(&task), "--mode", "scratch", "--vocab-size", "96"];
    let mut a1 = with_tiny(&args);
    a1.extend(["--out", p(&base)]);
    ok(&a1);
    let r1 = report(&base);
    assert!(r1.trajectory.len() >= 2);
    assert_eq!(r1.spec.model.d_model, 32);
    assert!(r1.signature.contains("tok=13a-punct"));

    let again = d.path().join("again");
    ok(&["experiment", "--spec", p(&base.join("report.json")), "--out", p(&again)]);
    let r2 = report(&again);
    assert_eq!(r1.trajectory, r2.trajectory);
    assert_eq!(r1.test, r2.test);

    let out = recycle(&["experiment", "--spec", p(&base.join("report.json")), "--out", p(&again)]);
    assert_eq!(out.status.code(), Some(2), "non-empty output dir needs --overwrite");
    let out = recycle(&["experiment", "--spec", p(&base.join("report.json")), "--set", "seed=2", "--out", p(&again)]);
    assert_eq!(out.status.code(), Some(2), "--spec takes no pipeline flags");

    // Parent trained on the same task: the child starts where the parent's best was.
    let direct = d.path().join("direct");
    let mut a3 = with_tiny(&["experiment", "--child-task", p(&task), "--parent-task", p(&task), "--mode", "direct", "--vocab-size", "96"]);
    let base_report = base.join("report.json");
    a3.extend(["--baseline", p(&base_report), "--samples", "200", "--out", p(&direct)]);
    let s = ok(&a3);
    assert!(s.contains("speed-up"));
    let r3 = report(&direct);
    let parent = r3.parent.as_ref().unwrap();
    assert!(parent.trained_here);
    assert_eq!(Some(r3.trajectory[0].bleu), parent.best_dev_bleu);
    let cmp = r3.comparison.as_ref().unwrap();
    assert_eq!(cmp.baseline_steps, r1.steps_to_best);
    assert_eq!(cmp.better_than_baseline.n_samples, 200);
    assert!(direct.join("parent/best.ckpt").exists());
    let table = fs::read_to_string(direct.join("report.tsv")).unwrap();
    assert!(table.starts_with("system\tBLEU\tSteps\tdBLEU\tSpeed-up"));

    // Everything frozen: the first evaluation stays the best.
    let frozen = d.path().join("frozen");
    let (pck, pvoc) = (direct.join("parent/best.ckpt"), direct.join("parent/parent.vocab"));
    let mut a4 = with_tiny(&["experiment", "--child-task", p(&task), "--mode", "direct", "--freeze", "all"]);
    a4.extend([
        "--parent-ckpt", p(&pck),
        "--parent-vocab", p(&pvoc),
        "--out", p(&frozen),
    ]);
    ok(&a4);
    let r4 = report(&frozen);
    assert_eq!(r4.steps_to_best, 0);
    assert_eq!(r4.freeze, "embeddings,encoder,decoder,attention");
}

#[test]
fn transformed_experiment_records_mapping() {
    let d = tempfile::tempdir().unwrap();
    let parent = d.path().join("lat");
    let child = d.path().join("cyr");
    ok(&["synth", "--out", p(&parent), "--pairs", "100", "--lexicon", "10", "--script", "latin"]);
    ok(&["synth", "--out", p(&child), "--pairs", "60", "--lexicon", "10", "--script", "cyrillic", "--sample-seed", "2"]);
    let out = d.path().join("tv");
    let mut a = with_tiny(&["experiment", "--child-task", p(&child), "--parent-task", p(&parent), "--mode", "transformed"]);
    a.extend(["--vocab-size", "96", "--set", "parent.max_steps=80", "--out", p(&out)]);
    ok(&a);
    let r = report(&out);
    let m = r.mapping.as_ref().unwrap();
    assert_eq!(m.strategy, "frequency");
    assert!(m.shared_fraction > 0.0 && m.shared_fraction < 1.0);
    assert!(r.parent.as_ref().unwrap().step <= 80);
    assert_eq!(r.spec.parent_train.max_steps, 80);
    assert!(r.moments_carried);
    let child_vocab = recycle::io::read_vocab(&out.join("child.vocab")).unwrap();
    assert_eq!(child_vocab.content_hash(), r.vocab_hash);
}
