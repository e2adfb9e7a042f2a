use std::path::Path;
use std::process::Command;

use reverso::cli::{sha256_file, RunManifest};
use reverso::corpus::{read_jsonl_all, write_jsonl, Document};
use reverso::textseg::normalize;

const CRUISE: &str = "Cruise was born on July 3, 1962, in Syracuse, New York, to Mary Lee Pfeiffer.";

fn reverso(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_reverso"))
        .args(args)
        .env_remove("REVERSO_JOBS")
        .output()
        .expect("spawn reverso")
}

fn ok(args: &[&str]) -> String {
    let out = reverso(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_docs(path: &Path, docs: &[Document]) {
    write_jsonl(docs, path).unwrap();
}

#[test]
fn transform_none_passes_text_through_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let output = dir.path().join("out.jsonl");
    let docs = vec![
        Document::new("a", "  odd   spacing,\tand tabs  "),
        Document::new("b", CRUISE),
        Document::new("c", "ünïcödé · text"),
    ];
    write_docs(&input, &docs);
    ok(&["transform", p(&input), p(&output), "--kind", "none"]);
    let out = read_jsonl_all(&output).unwrap();
    let texts: Vec<&str> = out.iter().map(|d| d.text.as_str()).collect();
    assert_eq!(texts, docs.iter().map(|d| d.text.as_str()).collect::<Vec<_>>());

    let manifest = RunManifest::read(&dir.path().join("out.jsonl.manifest.json")).unwrap();
    assert_eq!(manifest.subcommand, "transform");
    assert_eq!(manifest.inputs[p(&input)], sha256_file(&input).unwrap());
    assert_eq!(manifest.outputs[p(&output)], sha256_file(&output).unwrap());
}

#[test]
fn transform_word_reproduces_table_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let output = dir.path().join("out.jsonl");
    write_docs(&input, &[Document::new("cruise", CRUISE)]);
    ok(&["transform", p(&input), p(&output), "--kind", "word", "--mix", "1.0"]);
    let out = read_jsonl_all(&output).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(
        out[0].text,
        normalize(". Pfeiffer Lee Mary to, York New , Syracuse in , 1962 , 3 July on born was Cruise")
    );
    assert_eq!(out[0].meta["direction"], "reverse");
}

#[test]
fn transform_entity_with_gazetteer() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let output = dir.path().join("out.jsonl");
    let gaz = dir.path().join("gaz.txt");
    std::fs::write(&gaz, "Mary Lee Pfeiffer\nSyracuse\nNew York\nCruise\n").unwrap();
    write_docs(&input, &[Document::new("cruise", CRUISE)]);
    ok(&[
        "transform", p(&input), p(&output), "--kind", "entity", "--mix", "1.0", "--gazetteer", p(&gaz),
    ]);
    let out = read_jsonl_all(&output).unwrap();
    assert_eq!(
        out[0].text,
        ". Mary Lee Pfeiffer to , New York , Syracuse in , 1962 , 3 July on born was Cruise"
    );
}

#[test]
fn transform_mix_half_interleaves_both_directions() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let output = dir.path().join("out.jsonl");
    let docs: Vec<Document> = (0..50).map(|i| Document::new(format!("d{i}"), format!("w{i} x y z"))).collect();
    write_docs(&input, &docs);
    ok(&["transform", p(&input), p(&output), "--kind", "rand", "--k", "2", "--seed", "7"]);
    let out = read_jsonl_all(&output).unwrap();
    let reversed = out.iter().filter(|d| d.meta["direction"] == "reverse").count();
    assert_eq!(out.len() - reversed, 50);
    assert_eq!(reversed, 50);
    assert!(out.iter().filter(|d| d.meta["direction"] == "reverse").all(|d| d.text.starts_with("[REV]")));

    let again = dir.path().join("again.jsonl");
    ok(&["transform", p(&input), p(&again), "--kind", "rand", "--k", "2", "--seed", "7"]);
    assert_eq!(std::fs::read(&output).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    write_docs(&input, &[Document::new("a", "b c")]);
    let out_path = dir.path().join("o.jsonl");
    let out = reverso(&["transform", p(&input), p(&out_path), "--kind", "rand", "--k", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = reverso(&["transform", p(&input), p(&out_path), "--kind", "rand"]);
    assert_eq!(out.status.code(), Some(1));
    let out = reverso(&["reproduce-table3", "--scale", "huge"]);
    assert_eq!(out.status.code(), Some(1));
    let out = reverso(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(reverso(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_input_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.jsonl");
    std::fs::write(&input, "{\"id\":\"a\",\"text\":\"fine\"}\n{\"id\":\"b\",\"text\":\n").unwrap();
    let out = reverso(&["transform", p(&input), p(&dir.path().join("o.jsonl")), "--kind", "word"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad.jsonl:2:"), "{stderr}");
}

#[test]
fn gen_symbolic_writes_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sym");
    let stdout = ok(&["gen-symbolic", "--entity-len", "3", "--pairs", "10", "--out", p(&out)]);
    assert!(stdout.contains("15 train statements, 5 test items"), "{stdout}");
    let train = read_jsonl_all(&out.join("train.jsonl")).unwrap();
    let test = read_jsonl_all(&out.join("test.jsonl")).unwrap();
    assert_eq!((train.len(), test.len()), (15, 5));
    assert!(test.iter().all(|d| d.meta["prompt"].ends_with("is a feature of")));
    let manifest = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.outputs.len(), 3);
    assert_eq!(manifest.seeds, vec![1]);
}

#[test]
fn train_missing_data_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = reverso(&["train", p(&missing), "--out", p(&dir.path().join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_resume_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sym");
    ok(&["gen-symbolic", "--entity-len", "2", "--pairs", "8", "--out", p(&data)]);
    let model = dir.path().join("model.cfg");
    std::fs::write(&model, "# tiny\nn_layers = 1\ndim = 16\nn_heads = 2\ndropout = 0.0\n").unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let args = [
        "train", p(&data), "--out", p(&ckpt), "--model-cfg", p(&model), "--kind", "entity",
        "--set", "train.epochs=4", "--set", "train.batch_size=4", "--set", "train.learning_rate=0.01",
    ];
    ok(&args);
    let csv = std::fs::read_to_string(dir.path().join("m.ckpt.loss.csv")).unwrap();
    let losses: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 4);
    assert!(losses[3] < losses[0], "{losses:?}");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.ckpt.json")).unwrap()).unwrap();
    let step = meta["step"].as_u64().unwrap();
    assert!(step > 0);

    // Same flags, same bytes.
    let ckpt2 = dir.path().join("m2.ckpt");
    let mut again = args;
    again[3] = p(&ckpt2);
    ok(&again);
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&ckpt2).unwrap());

    let resumed = dir.path().join("r.ckpt");
    ok(&[
        "train", p(&data), "--out", p(&resumed), "--resume", p(&ckpt), "--kind", "entity",
        "--set", "train.epochs=2", "--set", "train.batch_size=4", "--set", "train.learning_rate=0.01",
    ]);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.ckpt.json")).unwrap()).unwrap();
    assert_eq!(meta["epoch"].as_u64(), Some(6));
    assert!(meta["step"].as_u64().unwrap() > step);

    let test = data.join("test.jsonl");
    for metric in ["exact", "contain64", "best@3"] {
        let report = dir.path().join(format!("{metric}.json"));
        let stdout = ok(&["eval", p(&resumed), p(&test), "--metric", metric, "--out", p(&report)]);
        assert!(stdout.starts_with(metric), "{stdout}");
        let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(r["n_items"].as_u64(), Some(4));
    }
    let out = reverso(&["eval", p(&resumed), p(&test), "--metric", "bleu"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reproduce_table3_full_prints_reference_column() {
    let stdout = ok(&["reproduce-table3", "--scale", "full", "--dry-run"]);
    for v in ["95.8", "16.9", "22.7", "98.4", "79.2"] {
        assert!(stdout.contains(v), "{v} missing from\n{stdout}");
    }
    assert!(stdout.contains("\"n_pairs\": 10000"));
}
