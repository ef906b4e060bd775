//! `qcloze` subcommands. Every run writes into its own directory with a
//! `manifest.json`; the directory defaults to `$QCLOZE_RUN_ROOT/<command>-<hash>`
//! where the hash covers the command line.

pub mod manifest;

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qcloze::annotation::{sample_survey, AnnotationService, ItemVerdict, Survey, SurveyConfig};
use qcloze::autodiff::Method;
use qcloze::corpus::{
    balance_and_split, build_triples, extract_one_sent, read_corpus, read_jsonl, write_jsonl, Condition, Datapoint,
    DatasetSplits, DocumentMode, Quantifier, Split,
};
use qcloze::embeddings::{load_vectors, EmbeddingTable};
use qcloze::models::{load_checkpoint, save_checkpoint, Family, ModelConfig};
use qcloze::synth::{generate, synth_vectors, SynthTemplates};
use qcloze::train::{
    ablate, compare_report, cue_analysis, evaluate, train, truncate3, CueAnnotation, EvalReport, TrainError,
    TrainOptions, CHANCE,
};
use serde_json::json;
use sha2::{Digest, Sha256};

use manifest::RunManifest;

pub const RUN_ROOT_ENV: &str = "QCLOZE_RUN_ROOT";

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(m: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: m.into(),
        }
    }

    fn data(m: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: m.into(),
        }
    }
}

impl From<qcloze::Error> for CliError {
    fn from(e: qcloze::Error) -> Self {
        let code = match e {
            qcloze::Error::Config(_) => EXIT_USAGE,
            ref e if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "qcloze", version, about = "Quantifier cloze workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract masked triples from raw text and optionally balance them into splits.
    Build(BuildArgs),
    /// Train one model configuration.
    Train(TrainArgs),
    /// Train all 18 grid configurations of a family and keep the best.
    Ablate(AblateArgs),
    /// Score a checkpoint on a split.
    Eval(EvalArgs),
    /// Side-by-side accuracy table and per-quantifier comparison.
    Report(ReportArgs),
    /// Distribution of annotated cues over correctly guessed items.
    Cues(CuesArgs),
    /// Run the annotation service over HTTP.
    Serve(ServeArgs),
    /// Screen annotators and aggregate a judgment log by majority.
    Aggregate(AggregateArgs),
    /// Generate the planted-cue synthetic dataset and vectors.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct OutArg {
    /// Run directory (default: $QCLOZE_RUN_ROOT/<command>-<hash>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Text file or directory of text files.
    #[arg(long)]
    corpus: PathBuf,
    /// `line`: one document per line; `file`: one document per file.
    #[arg(long, default_value = "line")]
    mode: String,
    /// Items per quantifier in the balanced dataset (multiple of 10).
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset directory holding `<condition>/{train,val,test}.jsonl` or the split files directly.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "one_sent")]
    condition: String,
    /// Pretrained vectors (word2vec binary or text); not needed for fasttext.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Read only the first N vectors.
    #[arg(long)]
    vocab_limit: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    family: String,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "adam")]
    optimizer: String,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0.25)]
    dropout: f64,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Allow hidden/dropout values outside the ablation grid.
    #[arg(long)]
    off_grid: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    family: String,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Grid cells trained in parallel (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    vocab_limit: Option<usize>,
    /// Row label in reports (default: the family name).
    #[arg(long)]
    system: Option<String>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Human report file(s) written by `aggregate`.
    #[arg(long)]
    human: Vec<PathBuf>,
    /// Model report files, or directories searched for `*report.jsonl`.
    #[arg(long)]
    models: Vec<PathBuf>,
    /// Model paired with the human reports for the per-quantifier comparison.
    #[arg(long)]
    bars_model: Option<String>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct CuesArgs {
    /// JSONL records `{item_id, cue}`.
    #[arg(long)]
    annotations: PathBuf,
    /// Ids guessed correctly in one_sent: one per line, or a `verdicts.jsonl`.
    #[arg(long = "correct-1sent")]
    correct_one: PathBuf,
    /// Ids guessed correctly in three_sent.
    #[arg(long = "correct-3sent")]
    correct_three: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Dataset directory; items are sampled from the validation split.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "three_sent")]
    condition: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 506)]
    items: usize,
    #[arg(long, default_value_t = 50)]
    gold_items: usize,
    /// Hand-picked gold items (JSONL datapoints) instead of sampled ones.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    quota: usize,
    #[arg(long, default_value_t = 0.7)]
    threshold: f64,
    #[arg(long, default_value_t = 5)]
    real_per_gold: usize,
    /// Seconds before an unanswered assignment lapses.
    #[arg(long)]
    ttl: Option<u64>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, env = "QCLOZE_ADMIN_TOKEN")]
    admin_token: Option<String>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    /// Directory of a `serve` run (survey.json + judgments.jsonl).
    #[arg(long)]
    run: PathBuf,
    /// Fail when any item lacks judgments.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 900)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Template file (default: the bundled set).
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Width of the generated vectors.
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[command(flatten)]
    out: OutArg,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run(argv: &[String]) -> Result<()> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::usage(e.render().to_string()));
        }
    };
    let args = &argv[1..];
    match cli.command {
        Command::Build(a) => build(a, args),
        Command::Train(a) => train_cmd(a, args),
        Command::Ablate(a) => ablate_cmd(a, args),
        Command::Eval(a) => eval_cmd(a, args),
        Command::Report(a) => report_cmd(a, args),
        Command::Cues(a) => cues_cmd(a, args),
        Command::Serve(a) => serve_cmd(a, args),
        Command::Aggregate(a) => aggregate_cmd(a, args),
        Command::Synth(a) => synth_cmd(a, args),
    }
}

fn run_dir(out: &OutArg, args: &[String]) -> PathBuf {
    if let Some(o) = &out.out {
        return o.clone();
    }
    let root = std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    let digest = hex::encode(Sha256::digest(args.join("\u{1f}").as_bytes()));
    root.join(format!("{}-{}", args[0], &digest[..12]))
}

fn parse<T: std::str::FromStr<Err = qcloze::Error>>(s: &str) -> Result<T> {
    s.parse().map_err(|e: qcloze::Error| CliError::usage(e.to_string()))
}

fn finish(mut m: RunManifest, dir: &Path, outputs: &[&str]) -> Result<()> {
    for o in outputs {
        m.output(*o);
    }
    m.write(dir)?;
    println!("run directory: {}", dir.display());
    Ok(())
}

fn write_splits(dir: &Path, three: &DatasetSplits, m: &mut RunManifest) -> Result<()> {
    let one = extract_one_sent(three)?;
    for ds in [three, &one] {
        ds.write_dir(&dir.join(ds.condition.name()))?;
        for s in ["train", "val", "test"] {
            m.output(format!("{}/{s}.jsonl", ds.condition.name()));
        }
    }
    Ok(())
}

fn build(a: BuildArgs, args: &[String]) -> Result<()> {
    let dir = run_dir(&a.out, args);
    let mode: DocumentMode = a
        .mode
        .parse()
        .map_err(|e: qcloze::Error| CliError::usage(e.to_string()))?;
    let mut m = RunManifest::new(args.to_vec(), json!({"mode": a.mode, "per_class": a.per_class}));
    m.seed("split", a.seed);
    m.input(&a.corpus)?;
    let docs = read_corpus(&a.corpus, mode)?;
    let (pool, report) = build_triples(&docs, &Quantifier::ALL);
    fs::create_dir_all(&dir)?;
    write_jsonl(&dir.join("pool.jsonl"), &pool)?;
    fs::write(dir.join("skips.json"), serde_json::to_vec_pretty(&report)?)?;
    println!(
        "{} documents, {} candidates, {} kept",
        docs.len(),
        report.candidates,
        report.kept
    );
    for (reason, n) in &report.counts {
        println!(
            "  skipped {n:>6} {}",
            serde_json::to_value(reason)?.as_str().unwrap_or_default()
        );
    }
    if let Some(per_class) = a.per_class {
        let three = balance_and_split(&pool, per_class, a.seed)?;
        write_splits(&dir, &three, &mut m)?;
        println!(
            "balanced {per_class} per class: {} train, {} val, {} test",
            three.train.len(),
            three.val.len(),
            three.test.len()
        );
    }
    finish(m, &dir, &["pool.jsonl", "skips.json"])
}

fn dataset_dir(data: &Path, condition: Condition) -> PathBuf {
    let nested = data.join(condition.name());
    if nested.join("train.jsonl").exists() {
        nested
    } else {
        data.to_path_buf()
    }
}

fn read_split(data: &Path, condition: Condition, split: Split) -> Result<Vec<Datapoint>> {
    let path = dataset_dir(data, condition).join(format!("{}.jsonl", split.name()));
    let items: Vec<Datapoint> = read_jsonl(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    for dp in &items {
        dp.validate(condition)?;
    }
    Ok(items)
}

fn load_table(path: Option<&Path>, limit: Option<usize>, m: &mut RunManifest) -> Result<Option<EmbeddingTable>> {
    let Some(p) = path else { return Ok(None) };
    m.input(p)?;
    Ok(Some(load_vectors(p, limit)?))
}

fn table_extra(table: Option<&EmbeddingTable>) -> serde_json::Value {
    json!({ "vectors_sha256": table.map(EmbeddingTable::checksum) })
}

fn history_lines(dir: &Path, name: &str, h: &[qcloze::train::EpochRecord]) -> Result<()> {
    write_jsonl(&dir.join(name), h)?;
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!(
        "{} {} {}: accuracy {} on {} items (chance {}, one-sided binomial p = {:.3e})",
        r.system,
        r.condition,
        r.split.name(),
        truncate3(r.accuracy),
        r.n,
        truncate3(CHANCE),
        r.p_value_against(CHANCE)
    );
    for q in Quantifier::BY_MAGNITUDE {
        let acc = r.class_accuracy(q).map_or("------".to_string(), truncate3);
        println!("  {:16}{acc:>8}", q.display());
    }
}

fn train_cmd(a: TrainArgs, args: &[String]) -> Result<()> {
    let dir = run_dir(&a.out, args);
    let condition: Condition = parse(&a.data.condition)?;
    let config = ModelConfig {
        hidden_units: a.hidden,
        dropout_rate: a.dropout,
        optimizer: parse::<Method>(&a.optimizer)?,
        seed: a.seed,
        learning_rate: a.learning_rate,
        off_grid: a.off_grid,
        ..ModelConfig::new(parse::<Family>(&a.family)?, condition)
    };
    config.validate()?;
    let opts = TrainOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        ..TrainOptions::default()
    };
    let mut m = RunManifest::new(args.to_vec(), json!({"model": config, "train": opts}));
    m.seed("model", a.seed);
    m.input(&dataset_dir(&a.data.data, condition))?;
    let table = load_table(a.data.vectors.as_deref(), a.data.vocab_limit, &mut m)?;
    let train_set = read_split(&a.data.data, condition, Split::Train)?;
    let val_set = read_split(&a.data.data, condition, Split::Val)?;
    fs::create_dir_all(&dir)?;
    match train::<f32>(config, &train_set, &val_set, table.as_ref(), &opts) {
        Ok(t) => {
            history_lines(&dir, "history.jsonl", &t.history)?;
            save_checkpoint(&t.model, table_extra(table.as_ref()), &dir.join("model.ckpt"))?;
            let report = evaluate(&t.model, &val_set, Split::Val, table.as_ref())?;
            write_jsonl(&dir.join("val_report.jsonl"), std::slice::from_ref(&report))?;
            if let Some(b) = t.best() {
                println!("best epoch {} val loss {:.4}", b.epoch, b.val_loss);
            }
            print_report(&report);
            finish(m, &dir, &["history.jsonl", "model.ckpt", "val_report.jsonl"])
        }
        Err(TrainError::Abort(abort)) => {
            history_lines(&dir, "history.jsonl", &abort.history)?;
            save_checkpoint(
                &abort.last_good,
                table_extra(table.as_ref()),
                &dir.join("last_good.ckpt"),
            )?;
            let diag = json!({"message": abort.message, "epoch": abort.epoch, "step": abort.step});
            fs::write(dir.join("abort.json"), serde_json::to_vec_pretty(&diag)?)?;
            finish(m, &dir, &["history.jsonl", "last_good.ckpt", "abort.json"])?;
            Err(CliError {
                code: EXIT_NUMERIC,
                message: format!(
                    "training aborted at epoch {} step {}: {}",
                    abort.epoch, abort.step, abort.message
                ),
            })
        }
        Err(TrainError::Invalid(e)) => Err(e.into()),
    }
}

fn ablate_cmd(a: AblateArgs, args: &[String]) -> Result<()> {
    let dir = run_dir(&a.out, args);
    let condition: Condition = parse(&a.data.condition)?;
    let base = ModelConfig {
        seed: a.seed,
        ..ModelConfig::new(parse::<Family>(&a.family)?, condition)
    };
    let opts = TrainOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        ..TrainOptions::default()
    };
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let mut m = RunManifest::new(args.to_vec(), json!({"base": base, "train": opts, "workers": workers}));
    m.seed("model", a.seed);
    m.input(&dataset_dir(&a.data.data, condition))?;
    let table = load_table(a.data.vectors.as_deref(), a.data.vocab_limit, &mut m)?;
    let train_set = read_split(&a.data.data, condition, Split::Train)?;
    let val_set = read_split(&a.data.data, condition, Split::Val)?;
    let result = ablate::<f32>(&base, &train_set, &val_set, table.as_ref(), &opts, workers, None)?;
    fs::create_dir_all(&dir)?;
    write_jsonl(&dir.join("cells.jsonl"), &result.cells)?;
    let mut table_txt = String::new();
    let _ = writeln!(
        table_txt,
        "{:>2}  {:22}{:>6}{:>10}{:>9}",
        "#", "cell", "epoch", "val_loss", "val_acc"
    );
    for c in &result.cells {
        let mark = if Some(c.index) == result.winner { "*" } else { " " };
        match &c.status {
            qcloze::train::CellStatus::Trained {
                best_epoch,
                best_val_loss,
                val_accuracy,
            } => {
                let _ = writeln!(
                    table_txt,
                    "{:>2}{mark} {:22}{best_epoch:>6}{best_val_loss:>10.4}{:>9}",
                    c.index,
                    c.label,
                    truncate3(*val_accuracy)
                );
            }
            qcloze::train::CellStatus::Failed { message, epoch, .. } => {
                let _ = writeln!(
                    table_txt,
                    "{:>2}  {:22} failed at epoch {epoch}: {message}",
                    c.index, c.label
                );
            }
        }
    }
    fs::write(dir.join("table.txt"), &table_txt)?;
    print!("{table_txt}");
    let mut outputs = vec!["cells.jsonl", "table.txt"];
    if let Some(t) = &result.model {
        save_checkpoint(&t.model, table_extra(table.as_ref()), &dir.join("winner.ckpt"))?;
        history_lines(&dir, "winner_history.jsonl", &t.history)?;
        let report = evaluate(&t.model, &val_set, Split::Val, table.as_ref())?;
        write_jsonl(&dir.join("val_report.jsonl"), std::slice::from_ref(&report))?;
        print_report(&report);
        outputs.extend(["winner.ckpt", "winner_history.jsonl", "val_report.jsonl"]);
    } else {
        finish(m, &dir, &outputs)?;
        return Err(CliError {
            code: EXIT_NUMERIC,
            message: "every grid cell failed".into(),
        });
    }
    finish(m, &dir, &outputs)
}

fn eval_cmd(a: EvalArgs, args: &[String]) -> Result<()> {
    let dir = run_dir(&a.out, args);
    let split: Split = parse(&a.split)?;
    let mut m = RunManifest::new(args.to_vec(), json!({"split": a.split, "system": a.system}));
    m.input(&a.checkpoint)?;
    let ckpt = load_checkpoint::<f32>(&a.checkpoint)?;
    let model = ckpt.model;
    let condition = model.config.condition;
    m.input(&dataset_dir(&a.data, condition))?;
    let table = load_table(a.vectors.as_deref(), a.vocab_limit, &mut m)?;
    let want = ckpt.extra.get("vectors_sha256").and_then(|v| v.as_str());
    if let (Some(want), Some(t)) = (want, &table) {
        if t.checksum() != want {
            return Err(CliError::data(
                "vectors differ from the ones the checkpoint was trained with",
            ));
        }
    }
    let data = read_split(&a.data, condition, split)?;
    let mut report = evaluate(&model, &data, split, table.as_ref())?;
    if let Some(s) = a.system {
        report.system = s;
    }
    fs::create_dir_all(&dir)?;
    write_jsonl(&dir.join("report.jsonl"), std::slice::from_ref(&report))?;
    print_report(&report);
    finish(m, &dir, &["report.jsonl"])
}

fn report_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for e in entries {
        if e.is_dir() {
            out.extend(report_files(&e)?);
        } else if e
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with("report.jsonl"))
        {
            out.push(e);
        }
    }
    Ok(out)
}

fn read_reports(paths: &[PathBuf], m: &mut RunManifest) -> Result<Vec<EvalReport>> {
    let mut out: Vec<EvalReport> = Vec::new();
    for p in paths {
        for f in report_files(p)? {
            m.input(&f)?;
            for r in read_jsonl::<EvalReport>(&f).map_err(|e| CliError::data(format!("{}: {e}", f.display())))? {
                if !out.contains(&r) {
                    out.push(r);
                }
            }
        }
    }
    Ok(out)
}

fn report_cmd(a: ReportArgs, args: &[String]) -> Result<()> {
    let dir = run_dir(&a.out, args);
    let mut m = RunManifest::new(args.to_vec(), json!({"bars_model": a.bars_model}));
    let humans = read_reports(&a.human, &mut m)?;
    let models = read_reports(&a.models, &mut m)?;
    if humans.is_empty() && models.is_empty() {
        return Err(CliError::usage("no reports given"));
    }
    let c = compare_report(&models, &humans, a.bars_model.as_deref())?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("comparison.json"), serde_json::to_vec_pretty(&c)?)?;
    let text = c.render();
    fs::write(dir.join("table.txt"), &text)?;
    print!("{text}");
    finish(m, &dir, &["comparison.json", "table.txt"])
}

fn correct_ids(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeSet::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line.starts_with('{') {
            let v: ItemVerdict = serde_json::from_str(line)?;
            if v.correct {
                out.insert(v.item_id);
            }
        } else {
            out.insert(line.to_string());
        }
    }
    Ok(out)
}

fn cues_cmd(a: CuesArgs, args: &[String]) -> Result<()> {
    let dir = run_dir(&a.out, args);
    let mut m = RunManifest::new(args.to_vec(), json!({}));
    for p in [&a.annotations, &a.correct_one, &a.correct_three] {
        m.input(p)?;
    }
    let anns: Vec<CueAnnotation> = read_jsonl(&a.annotations)?;
    let analysis = cue_analysis(&correct_ids(&a.correct_one)?, &correct_ids(&a.correct_three)?, &anns)?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("cues.json"), serde_json::to_vec_pretty(&analysis)?)?;
    for (name, d) in [
        ("correct in one_sent", &analysis.one_sent),
        ("gained in three_sent", &analysis.gained_in_three),
    ] {
        println!(
            "{name}: {} items, non-meaning share {}",
            d.n,
            truncate3(d.non_meaning_share())
        );
        for (cue, n) in &d.counts {
            println!("  {:12}{n:>5}{:>8}", cue.name(), truncate3(d.share(*cue)));
        }
    }
    finish(m, &dir, &["cues.json"])
}

const SURVEY_FILE: &str = "survey.json";
const LOG_FILE: &str = "judgments.jsonl";

fn serve_cmd(a: ServeArgs, args: &[String]) -> Result<()> {
    let dir = run_dir(&a.out, args);
    let condition: Condition = parse(&a.condition)?;
    fs::create_dir_all(&dir)?;
    let survey_path = dir.join(SURVEY_FILE);
    let mut m = RunManifest::new(args.to_vec(), json!({"addr": a.addr.to_string()}));
    m.seed("survey", a.seed);
    let survey: Survey = if survey_path.exists() {
        serde_json::from_slice(&fs::read(&survey_path)?)?
    } else {
        let config = SurveyConfig {
            item_count: a.items,
            gold_item_count: a.gold_items,
            max_items_per_annotator: a.quota,
            gold_pass_threshold: a.threshold,
            real_per_gold: a.real_per_gold,
            reservation_ttl_secs: a.ttl,
            ..SurveyConfig::new(condition)
        };
        m.input(&dataset_dir(&a.data, condition))?;
        let val = read_split(&a.data, condition, Split::Val)?;
        let survey = match &a.gold {
            Some(g) => {
                m.input(g)?;
                let gold: Vec<Datapoint> = read_jsonl(g)?;
                let gold_ids: HashSet<&str> = gold.iter().map(|d| d.id.as_str()).collect();
                let rest: Vec<Datapoint> = val
                    .iter()
                    .filter(|d| !gold_ids.contains(d.id.as_str()))
                    .cloned()
                    .collect();
                let items = qcloze::annotation::sample_items(&rest, config.item_count, a.seed)?;
                Survey::new(config, items, gold)?
            }
            None => sample_survey(&val, &config, a.seed)?,
        };
        fs::write(&survey_path, serde_json::to_vec_pretty(&survey)?)?;
        survey
    };
    println!(
        "{} items, {} gold, majority-class chance {}",
        survey.items.len(),
        survey.gold.len(),
        truncate3(survey.majority_class_chance())
    );
    let service = AnnotationService::open(survey, &dir.join(LOG_FILE))?;
    finish(m, &dir, &[SURVEY_FILE, LOG_FILE])?;
    println!("listening on http://{}", a.addr);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(qcloze_annotate::serve(
        a.addr,
        qcloze_annotate::AppState::new(service, a.admin_token),
    ))?;
    Ok(())
}

fn aggregate_cmd(a: AggregateArgs, args: &[String]) -> Result<()> {
    let dir = run_dir(&a.out, args);
    let mut m = RunManifest::new(args.to_vec(), json!({"strict": a.strict}));
    let survey_path = a.run.join(SURVEY_FILE);
    let log_path = a.run.join(LOG_FILE);
    m.input(&survey_path)?;
    m.input(&log_path)?;
    let survey: Survey = serde_json::from_slice(&fs::read(&survey_path)?)?;
    let events: Vec<qcloze::annotation::Event> = read_jsonl(&log_path)?;
    let service = AnnotationService::replay(survey, &events)?;
    let agg = service.results(a.strict)?;
    fs::create_dir_all(&dir)?;
    write_jsonl(&dir.join("verdicts.jsonl"), &agg.verdicts)?;
    write_jsonl(
        &dir.join("human_report.jsonl"),
        std::slice::from_ref(&agg.majority_report),
    )?;
    write_jsonl(
        &dir.join("judgment_report.jsonl"),
        std::slice::from_ref(&agg.judgment_report),
    )?;
    fs::write(dir.join("aggregate.json"), serde_json::to_vec_pretty(&agg)?)?;
    let r = &agg.majority_report;
    println!(
        "{}/{} items correct by majority: accuracy {} (majority-class chance {})",
        r.correct(),
        r.n,
        truncate3(r.accuracy),
        truncate3(agg.majority_class_chance)
    );
    if !agg.under_judged.is_empty() {
        println!("{} items under-judged and excluded", agg.under_judged.len());
    }
    if !agg.failed_annotators.is_empty() {
        println!("{} annotators failed screening", agg.failed_annotators.len());
    }
    finish(
        m,
        &dir,
        &[
            "verdicts.jsonl",
            "human_report.jsonl",
            "judgment_report.jsonl",
            "aggregate.json",
        ],
    )
}

fn synth_cmd(a: SynthArgs, args: &[String]) -> Result<()> {
    let dir = run_dir(&a.out, args);
    let mut m = RunManifest::new(args.to_vec(), json!({"n": a.n, "dim": a.dim}));
    m.seed("synth", a.seed);
    let templates = match &a.templates {
        Some(p) => {
            m.input(p)?;
            SynthTemplates::load(p)?
        }
        None => SynthTemplates::bundled(),
    };
    m.config["template_version"] = json!(templates.version);
    let corpus = generate(&templates, a.n, a.seed)?;
    let per_class = a.n / Quantifier::ALL.len();
    let three = balance_and_split(&corpus.pool, per_class, a.seed)?;
    let table = synth_vectors(&corpus.pool, a.dim, a.seed)?;
    fs::create_dir_all(&dir)?;
    write_jsonl(&dir.join("pool.jsonl"), &corpus.pool)?;
    write_jsonl(&dir.join("cues.jsonl"), &corpus.cues)?;
    table.write_binary(&dir.join("vectors.bin"))?;
    write_splits(&dir, &three, &mut m)?;
    println!(
        "{} items ({per_class} per quantifier), templates v{}, {} vectors of width {}",
        corpus.pool.len(),
        templates.version,
        table.vocab_size(),
        table.dim()
    );
    finish(m, &dir, &["pool.jsonl", "cues.jsonl", "vectors.bin"])
}
