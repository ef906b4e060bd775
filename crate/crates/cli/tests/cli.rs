use std::path::Path;
use std::process::{Command, Output};

use qcloze::corpus::{read_jsonl, Datapoint, Quantifier};
use qcloze::train::EvalReport;
use qcloze_cli::manifest::{sha256_file, RunManifest, MANIFEST_FILE};

fn qcloze(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcloze"))
        .args(args)
        .env("QCLOZE_RUN_ROOT", root)
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

fn fixture() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/corpus/three_docs.txt").to_string()
}

fn synth(root: &Path) -> String {
    let out = root.join("synth");
    let o = qcloze(
        &["synth", "--n", "180", "--dim", "8", "--out", out.to_str().unwrap()],
        root,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.display().to_string()
}

#[test]
fn usage_errors_exit_1() {
    let root = tempfile::tempdir().unwrap();
    assert_eq!(qcloze(&["frobnicate"], root.path()).status.code(), Some(1));
    assert_eq!(qcloze(&["train"], root.path()).status.code(), Some(1));
    let o = qcloze(&["train", "--family", "nope", "--data", "x"], root.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
    assert_eq!(qcloze(&["--help"], root.path()).status.code(), Some(0));
}

#[test]
fn missing_data_exits_2() {
    let root = tempfile::tempdir().unwrap();
    let o = qcloze(&["build", "--corpus", "/definitely/not/here"], root.path());
    assert_eq!(o.status.code(), Some(2));
    let o = qcloze(&["aggregate", "--run", root.path().to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn build_records_inputs_and_defaults_to_a_hashed_run_dir() {
    let root = tempfile::tempdir().unwrap();
    let corpus = fixture();
    let o = qcloze(&["build", "--corpus", &corpus], root.path());
    assert!(o.status.success());
    let dirs: Vec<_> = std::fs::read_dir(root.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(dirs.len(), 1);
    let dir = &dirs[0];
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("build-"));
    let m = manifest(dir);
    assert_eq!(m.command, ["build", "--corpus", corpus.as_str()]);
    assert_eq!(
        m.inputs.values().next().unwrap(),
        &sha256_file(Path::new(&corpus)).unwrap()
    );
    assert_eq!(m.outputs, ["pool.jsonl", "skips.json"]);
    let pool: Vec<Datapoint> = read_jsonl(&dir.join("pool.jsonl")).unwrap();
    assert_eq!(pool.len(), 9);
    // same command line, same directory
    assert!(qcloze(&["build", "--corpus", &corpus], root.path()).status.success());
    assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 1);
}

#[test]
fn synth_writes_balanced_splits_and_vectors() {
    let root = tempfile::tempdir().unwrap();
    let dir = synth(root.path());
    let dir = Path::new(&dir);
    for cond in ["one_sent", "three_sent"] {
        let mut total = 0;
        for (split, per_class) in [("train", 16), ("val", 2), ("test", 2)] {
            let items: Vec<Datapoint> = read_jsonl(&dir.join(cond).join(format!("{split}.jsonl"))).unwrap();
            for q in Quantifier::ALL {
                assert_eq!(
                    items.iter().filter(|d| d.label == q).count(),
                    per_class,
                    "{cond} {split} {q}"
                );
            }
            total += items.len();
        }
        assert_eq!(total, 180);
    }
    let m = manifest(dir);
    assert_eq!(m.seeds["synth"], 7);
    assert!(m.outputs.contains(&"vectors.bin".to_string()));
    assert!(dir.join("cues.jsonl").exists());
}

#[test]
fn train_eval_report_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path());
    let vectors = format!("{data}/vectors.bin");
    let run = root.path().join("train");
    let o = qcloze(
        &[
            "train",
            "--family",
            "bow_sum",
            "--data",
            &data,
            "--vectors",
            &vectors,
            "--epochs",
            "3",
            "--out",
            run.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(run.join("history.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    let ev = root.path().join("eval");
    let ckpt = run.join("model.ckpt");
    let o = qcloze(
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            &data,
            "--vectors",
            &vectors,
            "--out",
            ev.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("binomial p"));
    let reports: Vec<EvalReport> = read_jsonl(&ev.join("report.jsonl")).unwrap();
    assert_eq!((reports[0].system.as_str(), reports[0].n), ("bow_sum", 18));

    let rep = root.path().join("report");
    let o = qcloze(
        &[
            "report",
            "--models",
            ev.to_str().unwrap(),
            "--out",
            rep.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(o.status.success());
    let table = std::fs::read_to_string(rep.join("table.txt")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("bow_sum")));

    // vectors other than the training ones are refused
    let other = root.path().join("other");
    let o = qcloze(
        &[
            "synth",
            "--n",
            "180",
            "--dim",
            "8",
            "--seed",
            "8",
            "--out",
            other.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(o.status.success());
    let wrong = other.join("vectors.bin");
    let o = qcloze(
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            &data,
            "--vectors",
            wrong.to_str().unwrap(),
        ],
        root.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergent_training_exits_3_with_last_good_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path());
    let vectors = format!("{data}/vectors.bin");
    let run = root.path().join("nan");
    let o = qcloze(
        &[
            "train",
            "--family",
            "lstm",
            "--data",
            &data,
            "--vectors",
            &vectors,
            "--epochs",
            "3",
            "--learning-rate",
            "1e30",
            "--out",
            run.to_str().unwrap(),
        ],
        root.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("last_good.ckpt").exists());
    let abort: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("abort.json")).unwrap()).unwrap();
    assert!(abort["message"].as_str().unwrap().contains("non-finite"));
}

#[test]
fn ablate_writes_all_cells() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path());
    let vectors = format!("{data}/vectors.bin");
    let run = root.path().join("ablate");
    let o = qcloze(
        &[
            "ablate",
            "--family",
            "bow_sum",
            "--data",
            &data,
            "--vectors",
            &vectors,
            "--epochs",
            "2",
            "--workers",
            "2",
            "--out",
            run.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(run.join("cells.jsonl"))
            .unwrap()
            .lines()
            .count(),
        18
    );
    assert!(run.join("winner.ckpt").exists());
}
