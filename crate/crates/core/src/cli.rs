//! Command-line surface. Every command writes into its own output directory
//! together with a `manifest.json` recording the resolved configuration,
//! seed, input and output hashes, and timestamps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::corpus::{
    corpus_stats, generate_synthetic, read_corpus_dir, write_corpus, Corpus, SplitName, SyntheticSpec, LABELS_FILE, NOTES_FILE, SPLITS_FILE,
};
use crate::error::{HtdsError, Result};
use crate::experiment::{evaluate, train_run};
use crate::metrics::{aggregate_runs, compare_groups, mean_sd, MetricsReport};
use crate::model::{Checkpoint, MetaFlags};
use crate::pipeline::{threads_from_env, NotesMode};
use crate::selection::SelectionStrategy;
use crate::tokenizer::{build_vocab, Vocabulary};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

pub const ABLATIONS: [&str; 5] = ["chunk_budget", "meta_embeddings", "cls_only", "second_transformer", "note_selection"];

#[derive(Debug, Parser)]
#[command(name = "htds", version, about = "Hierarchical transformer for multi-label coding of document sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    GenData(GenDataArgs),
    /// Train one model and select its epoch and threshold on dev.
    Train(TrainArgs),
    /// Score a trained run on one split.
    Evaluate(EvaluateArgs),
    /// Train a base configuration and its variants over several seeds.
    Ablate(AblateArgs),
    /// Per-stay document, word and token counts.
    Stats(StatsArgs),
    /// Aggregate two groups of runs and test each metric for a difference.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub n_stays: usize,
    #[arg(long, default_value_t = 10)]
    pub n_labels: usize,
    /// Comma-separated non-discharge categories.
    #[arg(long, default_value = "Nursing,Physician,Radiology", value_delimiter = ',')]
    pub categories: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub notes_min: usize,
    #[arg(long, default_value_t = 5)]
    pub notes_max: usize,
    #[arg(long, default_value_t = 8)]
    pub words_min: usize,
    #[arg(long, default_value_t = 16)]
    pub words_max: usize,
    #[arg(long, default_value_t = 2)]
    pub keywords_per_label: usize,
    #[arg(long, default_value_t = 0.5)]
    pub discharge_signal_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub labels_min: usize,
    #[arg(long, default_value_t = 3)]
    pub labels_max: usize,
    #[arg(long, default_value_t = 0.1)]
    pub decoy_rate: f64,
    /// Train, dev and test fractions; defaults to the proportions of the
    /// reference benchmark.
    #[arg(long, value_parser = parse_fracs)]
    pub split_fracs: Option<(f64, f64, f64)>,
}

fn parse_fracs(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected three comma-separated fractions, got {}", v.len())),
    }
}

impl GenDataArgs {
    pub fn spec(&self) -> SyntheticSpec {
        let base = SyntheticSpec::default();
        SyntheticSpec {
            seed: self.seed,
            n_stays: self.n_stays,
            n_labels: self.n_labels,
            categories: self.categories.clone(),
            notes_per_stay: (self.notes_min, self.notes_max),
            words_per_note: (self.words_min, self.words_max),
            keywords_per_label: self.keywords_per_label,
            discharge_signal_fraction: self.discharge_signal_fraction,
            labels_per_stay: (self.labels_min, self.labels_max),
            decoy_rate: self.decoy_rate,
            split_fracs: self.split_fracs.unwrap_or(base.split_fracs),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `all` or `discharge_only`; overrides the config.
    #[arg(long)]
    pub notes: Option<NotesMode>,
    /// `diversity`, `first`, `last` or `category:<name>`; overrides the config.
    #[arg(long)]
    pub strategy: Option<SelectionStrategy>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "dev")]
    pub split: SplitName,
    /// Re-select the threshold on dev before scoring. Refused for test.
    #[arg(long)]
    pub retune_threshold: bool,
    /// Output directory; defaults to `<checkpoint>/eval_<split>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// One of chunk_budget, meta_embeddings, cls_only, second_transformer,
    /// note_selection.
    #[arg(long)]
    pub ablation: String,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// First seed; run `k` uses `seed + k`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub notes: Option<NotesMode>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict to one split.
    #[arg(long)]
    pub split: Option<SplitName>,
    #[arg(long, default_value_t = 50)]
    pub max_labels: usize,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories (or metrics files) of the first group.
    #[arg(long, num_args = 1.., required = true)]
    pub a: Vec<PathBuf>,
    /// Run directories (or metrics files) of the second group.
    #[arg(long, num_args = 1.., required = true)]
    pub b: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

/// Reproducibility record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| HtdsError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hash_files(dir: &Path, names: &[&str]) -> Result<BTreeMap<String, String>> {
    names.iter().map(|n| Ok((dir.join(n).display().to_string(), sha256_file(&dir.join(n))?))).collect()
}

fn config_map(text: &str) -> BTreeMap<String, String> {
    text.lines().filter_map(|l| l.split_once('=')).map(|(k, v)| (k.trim().to_string(), v.trim().to_string())).collect()
}

struct ManifestBuilder {
    command: String,
    config: BTreeMap<String, String>,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    started_at: String,
}

impl ManifestBuilder {
    fn new(command: &str) -> Self {
        ManifestBuilder { command: command.into(), config: BTreeMap::new(), seed: None, inputs: BTreeMap::new(), started_at: now() }
    }

    fn finish(self, out_dir: &Path, outputs: &[&str]) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            outputs: hash_files(out_dir, outputs)?,
            started_at: self.started_at,
            finished_at: now(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| HtdsError::Data(e.to_string()))?;
        write_file(&out_dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(manifest)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| HtdsError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HtdsError::io(path, e))
}

fn corpus_inputs(data: &Path) -> Result<BTreeMap<String, String>> {
    hash_files(data, &[NOTES_FILE, LABELS_FILE, SPLITS_FILE])
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut m = ManifestBuilder::new("gen-data");
    let spec = args.spec();
    let corpus = generate_synthetic(&spec)?;
    create_dir(&args.out)?;
    write_corpus(&corpus, &args.out)?;
    m.seed = Some(spec.seed);
    m.config = config_map(&format!(
        "n_stays={}\nn_labels={}\ncategories={}\nnotes_per_stay={},{}\nwords_per_note={},{}\nkeywords_per_label={}\n\
         discharge_signal_fraction={}\nlabels_per_stay={},{}\ndecoy_rate={}\nsplit_fracs={},{},{}",
        spec.n_stays,
        spec.n_labels,
        spec.categories.join(","),
        spec.notes_per_stay.0,
        spec.notes_per_stay.1,
        spec.words_per_note.0,
        spec.words_per_note.1,
        spec.keywords_per_label,
        spec.discharge_signal_fraction,
        spec.labels_per_stay.0,
        spec.labels_per_stay.1,
        spec.decoy_rate,
        spec.split_fracs.0,
        spec.split_fracs.1,
        spec.split_fracs.2,
    ));
    m.finish(&args.out, &[NOTES_FILE, LABELS_FILE, SPLITS_FILE])?;
    println!("wrote {} stays to {}", corpus.stays.len(), args.out.display());
    Ok(())
}

/// Trains one configuration into `out`; returns the dev metrics at the
/// selected epoch and threshold.
pub fn train_into(run: &RunConfig, corpus: &Corpus, data: &Path, out: &Path, threads: usize) -> Result<MetricsReport> {
    let mut m = ManifestBuilder::new("train");
    m.inputs = corpus_inputs(data)?;
    let outcome = train_run(corpus, run, threads)?;
    create_dir(out)?;

    let mut resolved = run.clone();
    resolved.model = outcome.checkpoint.header.config.clone();
    let config_text = resolved.to_text();
    write_file(&out.join(CONFIG_FILE), config_text.as_bytes())?;
    outcome.vocab.save(&out.join(VOCAB_FILE))?;
    outcome.checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    let mut log = String::new();
    for record in &outcome.fit.log {
        log.push_str(&record.to_json_line());
        log.push('\n');
    }
    write_file(&out.join(TRAIN_LOG_FILE), log.as_bytes())?;

    let report = evaluate(&outcome.checkpoint, &outcome.vocab, corpus, SplitName::Dev, false, threads)?;
    write_file(&out.join(METRICS_FILE), format!("{}\n", report.to_json_line()).as_bytes())?;

    m.config = config_map(&config_text);
    m.seed = Some(run.train.seed);
    m.finish(out, &[CONFIG_FILE, VOCAB_FILE, CHECKPOINT_FILE, TRAIN_LOG_FILE, METRICS_FILE])?;
    Ok(report)
}

fn resolve_run(config: &Path, seed: Option<u64>, notes: Option<NotesMode>, strategy: Option<SelectionStrategy>) -> Result<RunConfig> {
    let mut run = RunConfig::load(config)?;
    if let Some(s) = seed {
        run.train.seed = s;
    }
    if let Some(n) = notes {
        run.notes = n;
    }
    if let Some(s) = strategy {
        run.strategy = s;
    }
    Ok(run)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run = resolve_run(&args.config, args.seed, args.notes, args.strategy.clone())?;
    let (corpus, _) = read_corpus_dir(&args.data, run.model.n_labels)?;
    let report = train_into(&run, &corpus, &args.data, &args.out, threads_from_env())?;
    print!("split=dev\n{}", report.to_kv());
    Ok(())
}

/// Checkpoint and vocabulary of a run directory.
pub fn load_run(dir: &Path) -> Result<(Checkpoint, Vocabulary)> {
    let checkpoint = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    Ok((checkpoint, vocab))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    if args.retune_threshold && args.split == SplitName::Test {
        return Err(HtdsError::Config("--retune-threshold is not allowed on the test split".into()));
    }
    let mut m = ManifestBuilder::new("evaluate");
    let (checkpoint, vocab) = load_run(&args.checkpoint)?;
    let (corpus, _) = read_corpus_dir(&args.data, checkpoint.header.config.n_labels)?;
    let report = evaluate(&checkpoint, &vocab, &corpus, args.split, args.retune_threshold, threads_from_env())?;
    let out = args.out.clone().unwrap_or_else(|| args.checkpoint.join(format!("eval_{}", args.split)));
    create_dir(&out)?;
    write_file(&out.join(METRICS_FILE), format!("{}\n", report.to_json_line()).as_bytes())?;
    m.inputs = corpus_inputs(&args.data)?;
    m.inputs.extend(hash_files(&args.checkpoint, &[CHECKPOINT_FILE, VOCAB_FILE])?);
    m.config.insert("split".into(), args.split.to_string());
    m.config.insert("retune_threshold".into(), args.retune_threshold.to_string());
    m.seed = Some(checkpoint.header.seed);
    m.finish(&out, &[METRICS_FILE])?;
    print!("split={}\n{}", args.split, report.to_kv());
    Ok(())
}

/// Named configurations of an ablation; the first is the unmodified base.
pub fn ablation_variants(name: &str, base: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let variants = match name {
        "chunk_budget" => {
            let half = (base.model.n_c / 2).max(1);
            vec![(format!("n_c={}", base.model.n_c), base.clone()), (format!("n_c={half}"), with(&|c| c.model.n_c = half))]
        }
        "meta_embeddings" => vec![
            ("all".to_string(), base.clone()),
            ("-CE".to_string(), with(&|c| c.model.meta.ce = false)),
            ("-(PE+Rev-PE)".to_string(), with(&|c| c.model.meta = MetaFlags { pe: false, rev_pe: false, ..c.model.meta })),
            ("-(TE+Rev-TE)".to_string(), with(&|c| c.model.meta = MetaFlags { te: false, rev_te: false, ..c.model.meta })),
        ],
        "cls_only" => vec![("all_tokens".to_string(), base.clone()), ("cls_only".to_string(), with(&|c| c.model.cls_only = true))],
        "second_transformer" => vec![
            (format!("second_layers={}", base.model.second_layers), base.clone()),
            ("second_layers=0".to_string(), with(&|c| c.model.second_layers = 0)),
        ],
        "note_selection" => ["diversity", "first", "last", "category:Radiology", "category:Nursing", "category:Physician"]
            .iter()
            .map(|s| Ok((s.to_string(), with(&|c| c.strategy = s.parse().expect("known strategy")))))
            .collect::<Result<Vec<_>>>()?,
        other => return Err(HtdsError::Config(format!("unknown ablation {other:?}; expected one of {}", ABLATIONS.join(", ")))),
    };
    Ok(variants)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub micro_f1_mean: f64,
    pub micro_f1_sd: f64,
    pub runs: usize,
}

pub fn format_ablation_table(name: &str, rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.variant.len()).max().unwrap_or(0).max(7);
    let mut out = format!("# {name}\n{:<width$}  {:>8}  {:>6}\n", "variant", "micro-F1", "SD");
    for r in rows {
        let _ = writeln!(out, "{:<width$}  {:>8.2}  {:>6.2}", r.variant, 100.0 * r.micro_f1_mean, 100.0 * r.micro_f1_sd);
    }
    out
}

/// Directory-safe form of a variant name.
fn slug(variant: &str) -> String {
    variant.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '=' { c } else { '_' }).collect()
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let base = resolve_run(&args.config, args.seed, args.notes, None)?;
    let variants = ablation_variants(&args.ablation, &base)?;
    if args.seeds == 0 {
        return Err(HtdsError::Config("--seeds must be >= 1".into()));
    }
    let (corpus, _) = read_corpus_dir(&args.data, base.model.n_labels)?;
    let threads = threads_from_env();
    let mut m = ManifestBuilder::new("ablate");
    m.inputs = corpus_inputs(&args.data)?;
    m.config = config_map(&base.to_text());
    m.config.insert("ablation".into(), args.ablation.clone());
    m.config.insert("seeds".into(), args.seeds.to_string());
    m.seed = Some(base.train.seed);
    create_dir(&args.out)?;

    let mut rows = Vec::new();
    for (variant, cfg) in &variants {
        let mut scores = Vec::new();
        for k in 0..args.seeds {
            let mut run = cfg.clone();
            run.train.seed = base.train.seed + k;
            let dir = args.out.join(slug(variant)).join(format!("seed{}", run.train.seed));
            scores.push(train_into(&run, &corpus, &args.data, &dir, threads)?.micro_f1);
        }
        let s = mean_sd(&scores);
        rows.push(AblationRow { variant: variant.clone(), micro_f1_mean: s.mean, micro_f1_sd: s.sd, runs: scores.len() });
    }
    let table = format_ablation_table(&args.ablation, &rows);
    write_file(&args.out.join("ablation.txt"), table.as_bytes())?;
    m.finish(&args.out, &["ablation.txt"])?;
    print!("{table}");
    Ok(())
}

pub fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let (corpus, _) = read_corpus_dir(&args.data, args.max_labels)?;
    let stays: Vec<_> = match args.split {
        Some(s) => corpus.stays_in(s),
        None => corpus.stays.iter().collect(),
    };
    let vocab = build_vocab(stays.iter().copied(), usize::MAX)?;
    print!("{}", corpus_stats(&stays, &vocab)?);
    Ok(())
}

/// A metrics report from a run directory or a metrics file.
pub fn read_metrics(path: &Path) -> Result<MetricsReport> {
    let file = if path.is_dir() { path.join(METRICS_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| HtdsError::io(&file, e))?;
    serde_json::from_str(text.trim()).map_err(|e| HtdsError::parse(file.display().to_string(), 1, e.to_string()))
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let a: Vec<MetricsReport> = args.a.iter().map(|p| read_metrics(p)).collect::<Result<_>>()?;
    let b: Vec<MetricsReport> = args.b.iter().map(|p| read_metrics(p)).collect::<Result<_>>()?;
    println!("group a ({} runs)\n{}", a.len(), aggregate_runs(&a)?);
    println!("group b ({} runs)\n{}", b.len(), aggregate_runs(&b)?);
    println!("{:<10}  {:>8}  {:>8}  {:>10}  significant", "metric", "mean a", "mean b", "p");
    for c in compare_groups(&a, &b)? {
        let p = c.p_value.map_or("n/a".to_string(), |p| format!("{p:.4}"));
        println!("{:<10}  {:>8.4}  {:>8.4}  {:>10}  {}", c.metric, c.a.mean, c.b.mean, p, c.significant(args.alpha));
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
