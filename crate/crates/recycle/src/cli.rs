//! The `recycle` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use recycle_core::checkpoint::{transfer_init, TransferPlan};
use recycle_core::eval::{bleu, paired_bootstrap, signature};
use recycle_core::nmt::{train, translate, FreezeMask, Init, ModelConfig, OptimizerConfig, TrainConfig, TrainRequest};
use recycle_core::stats::fragmentation;
use recycle_core::synth::{CipherLang, Script, TaskSpec};
use recycle_core::transform::{token_frequencies, transform_vocabulary, MappingReport, Strategy};
use recycle_core::build_vocabulary;
use serde::Serialize;

use crate::ckpt;
use crate::config::{render, Settings};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, ExperimentSpec, Mode};
use crate::io::{
    read_json, read_lines, read_parallel, read_task, read_vocab, write_atomic, write_json, write_lines, write_tsv,
    write_vocab,
};
use crate::report::{write_trajectory, ExperimentReport};
use crate::synth_io::write_synth;

#[derive(Debug, Parser)]
#[command(name = "recycle", version, about = "Vocabulary transformation and transfer learning for small NMT models")]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a subword vocabulary from corpus files.
    Vocab(VocabArgs),
    /// Segment a corpus into subwords.
    Segment(SegmentArgs),
    /// Fragmentation statistics of a corpus under vocabularies.
    Stats(StatsArgs),
    /// Transform a parent vocabulary to hold a child vocabulary.
    Transform(TransformArgs),
    /// Initialize a child checkpoint from a parent.
    Transfer(TransferArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Translate sentences with a checkpoint.
    Translate(TranslateArgs),
    /// Corpus BLEU.
    Bleu(BleuArgs),
    /// Paired bootstrap significance test.
    Significance(SignificanceArgs),
    /// Generate a synthetic parallel task.
    Synth(SynthArgs),
    /// Run a parent/child experiment end to end.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct VocabArgs {
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write entry ids instead of escaped subwords.
    #[arg(long)]
    ids: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Vocabularies to compare; the file stem names each row.
    #[arg(long, required = true, num_args = 1..)]
    vocab: Vec<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 100)]
    length_limit: usize,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    out_tsv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TransformArgs {
    #[arg(long)]
    parent: PathBuf,
    #[arg(long)]
    child: PathBuf,
    #[arg(long, default_value = "frequency")]
    strategy: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Child corpus files, required by the frequency strategy.
    #[arg(long, num_args = 1..)]
    child_corpus: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Mapping report; defaults to `<out>.mapping.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TransferArgs {
    #[arg(long)]
    parent_ckpt: PathBuf,
    #[arg(long)]
    parent_vocab: PathBuf,
    /// `direct` or `transformed`.
    #[arg(long)]
    mode: String,
    #[arg(long, required_if_eq("mode", "transformed"))]
    child_vocab: Option<PathBuf>,
    #[arg(long, default_value = "frequency")]
    strategy: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, num_args = 1..)]
    child_corpus: Vec<PathBuf>,
    #[arg(long)]
    reset_step: bool,
    #[arg(long)]
    reset_moments: bool,
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary of the new checkpoint; defaults to `<out>.vocab`.
    #[arg(long)]
    out_vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Task directory with `{train,dev}.{src,tgt}`.
    #[arg(long, conflicts_with_all = ["train_src", "train_tgt", "dev_src", "dev_tgt"])]
    task: Option<PathBuf>,
    #[arg(long, requires_all = ["train_tgt", "dev_src", "dev_tgt"])]
    train_src: Option<PathBuf>,
    #[arg(long)]
    train_tgt: Option<PathBuf>,
    #[arg(long)]
    dev_src: Option<PathBuf>,
    #[arg(long)]
    dev_tgt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key = value` file with model and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        s.push_overrides(&self.set)?;
        Ok(s)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value = "none")]
    freeze: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    beam: usize,
}

#[derive(Debug, Args)]
struct BleuArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    /// Add-one smoothing of higher-order precisions.
    #[arg(long)]
    smooth: bool,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SignificanceArgs {
    #[arg(long)]
    hyp_a: PathBuf,
    #[arg(long)]
    hyp_b: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 300)]
    lexicon: usize,
    #[arg(long, default_value_t = 1)]
    base_seed: u64,
    #[arg(long, default_value_t = 1)]
    sample_seed: u64,
    /// `latin`, `cyrillic`, `private_use`, or `copy` for target = source.
    #[arg(long, default_value = "latin")]
    script: String,
    #[arg(long, default_value_t = 1)]
    cipher_seed: u64,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Spec or report JSON to rerun; only `--out` and `--overwrite` may accompany it.
    #[arg(long, conflicts_with_all = [
        "child_task", "parent_task", "parent_ckpt", "parent_vocab", "mode", "strategy", "strategy_seed",
        "freeze", "vocab_size", "config", "set", "reset_step", "reset_moments", "beam", "baseline",
        "samples", "alpha", "bootstrap_seed",
    ])]
    spec: Option<PathBuf>,
    #[arg(long, required_unless_present = "spec")]
    child_task: Option<PathBuf>,
    #[arg(long)]
    parent_task: Option<PathBuf>,
    #[arg(long, requires = "parent_vocab")]
    parent_ckpt: Option<PathBuf>,
    #[arg(long)]
    parent_vocab: Option<PathBuf>,
    /// `scratch`, `direct` or `transformed`.
    #[arg(long, required_unless_present = "spec")]
    mode: Option<String>,
    #[arg(long, default_value = "frequency")]
    strategy: String,
    #[arg(long, default_value_t = 1)]
    strategy_seed: u64,
    #[arg(long, default_value = "none")]
    freeze: String,
    #[arg(long, default_value_t = 512)]
    vocab_size: usize,
    /// Settings for both runs; `parent.`-prefixed keys only for the parent.
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    reset_step: bool,
    #[arg(long)]
    reset_moments: bool,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    /// Report of a baseline run to compare against.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    bootstrap_seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Errors are printed as one `error[category]: message` line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return 2;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Vocab(a) => cmd_vocab(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Train(a) => cmd_train(a),
        Command::Translate(a) => cmd_translate(a),
        Command::Bleu(a) => cmd_bleu(a),
        Command::Significance(a) => cmd_significance(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn read_corpora(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_lines(p)?);
    }
    Ok(out)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_vocab(a: VocabArgs) -> Result<()> {
    let lines = read_corpora(&a.corpus)?;
    let v = build_vocabulary(lines.iter().map(String::as_str), a.size)?;
    write_vocab(&a.out, &v)?;
    println!("wrote {} entries to {} (sha256 {})", v.len(), a.out.display(), v.content_hash());
    Ok(())
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    let v = read_vocab(&a.vocab)?;
    let lines = read_lines(&a.input)?;
    let mut out = Vec::with_capacity(lines.len());
    let mut tokens = 0usize;
    for l in &lines {
        let ids = v.encode(l);
        tokens += ids.len();
        let parts: Vec<String> = if a.ids {
            ids.iter().map(u32::to_string).collect()
        } else {
            ids.iter().map(|&i| recycle_core::vocab::escape(v.get(i).expect("valid id"))).collect()
        };
        out.push(parts.join(" "));
    }
    write_lines(&a.out, &out)?;
    println!("segmented {} sentences into {tokens} tokens", lines.len());
    Ok(())
}

#[derive(Serialize)]
struct StatsRow {
    vocab_name: String,
    tokens_per_sentence: f64,
    tokens_per_word: f64,
    sentence_count: usize,
    filtered_count: usize,
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let lines = read_lines(&a.corpus)?;
    let mut rows = Vec::new();
    for p in &a.vocab {
        let v = read_vocab(p)?;
        let r = fragmentation(lines.iter().map(String::as_str), &v, Some(a.length_limit))?;
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        println!(
            "{name}\ttokens/sentence {:.3}\ttokens/word {:.3}\tsentences {}\tover limit {}",
            r.tokens_per_sentence, r.tokens_per_word, r.sentence_count, r.filtered_count
        );
        rows.push(StatsRow {
            vocab_name: name,
            tokens_per_sentence: r.tokens_per_sentence,
            tokens_per_word: r.tokens_per_word,
            sentence_count: r.sentence_count,
            filtered_count: r.filtered_count,
        });
    }
    if let Some(p) = &a.out_json {
        write_json(p, &rows)?;
    }
    if let Some(p) = &a.out_tsv {
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.vocab_name.clone(),
                    format!("{:.4}", r.tokens_per_sentence),
                    format!("{:.4}", r.tokens_per_word),
                    r.sentence_count.to_string(),
                    r.filtered_count.to_string(),
                ]
            })
            .collect();
        let header = ["vocab_name", "tokens_per_sentence", "tokens_per_word", "sentence_count", "filtered_count"];
        write_tsv(p, &header, &table)?;
    }
    Ok(())
}

fn mapping_for(
    parent: &recycle_core::Vocabulary,
    child: &recycle_core::Vocabulary,
    strategy: &str,
    seed: u64,
    corpus: &[PathBuf],
) -> Result<recycle_core::transform::VocabMapping> {
    let strategy = Strategy::parse(strategy, seed)?;
    let freqs = if strategy == Strategy::Frequency {
        if corpus.is_empty() {
            return Err(Error::usage("the frequency strategy needs --child-corpus"));
        }
        let lines = read_corpora(corpus)?;
        Some(token_frequencies(lines.iter().map(String::as_str), child))
    } else {
        None
    };
    Ok(transform_vocabulary(parent, child, strategy, freqs.as_deref())?)
}

fn cmd_transform(a: TransformArgs) -> Result<()> {
    let parent = read_vocab(&a.parent)?;
    let child = read_vocab(&a.child)?;
    let m = mapping_for(&parent, &child, &a.strategy, a.seed, &a.child_corpus)?;
    write_vocab(&a.out, &m.transformed)?;
    let report = MappingReport::from(&m);
    write_json(&a.report.clone().unwrap_or_else(|| sibling(&a.out, ".mapping.json")), &report)?;
    println!(
        "{}: {} entries, shared fraction {:.4}, {} reassigned",
        report.strategy,
        m.transformed.len(),
        report.shared_fraction,
        report.reassigned_count
    );
    Ok(())
}

fn cmd_transfer(a: TransferArgs) -> Result<()> {
    let parent = ckpt::load(&a.parent_ckpt)?;
    let pv = read_vocab(&a.parent_vocab)?;
    let (mut plan, vocab) = match a.mode.as_str() {
        "direct" => (TransferPlan::direct(), pv),
        "transformed" => {
            let cv = read_vocab(a.child_vocab.as_ref().expect("required by clap"))?;
            let m = mapping_for(&pv, &cv, &a.strategy, a.seed, &a.child_corpus)?;
            let v = m.transformed.clone();
            (TransferPlan::transformed(m), v)
        }
        other => return Err(Error::usage(format!("unknown transfer mode {other:?}"))),
    };
    plan.reset_step = a.reset_step;
    plan.reset_moments = a.reset_moments;
    let child = transfer_init(&parent, &plan)?;
    ckpt::save(&child, &a.out)?;
    let vpath = a.out_vocab.unwrap_or_else(|| a.out.with_extension("vocab"));
    write_vocab(&vpath, &vocab)?;
    println!("{} transfer: step {}, vocabulary {}", a.mode, child.step, vpath.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    freeze: String,
    init: Option<String>,
    best_step: u64,
    best_bleu: f64,
    steps: u64,
    stopped_early: bool,
    moments_carried: bool,
    first_lr: Option<f64>,
    filtered_train: usize,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let vocab = read_vocab(&a.vocab)?;
    let (train_pairs, dev_pairs) = match (&a.corpus.task, &a.corpus.train_src) {
        (Some(dir), _) => {
            let t = read_task(dir)?;
            (t.train, t.dev)
        }
        (None, Some(ts)) => {
            let c = &a.corpus;
            (
                read_parallel(ts, c.train_tgt.as_ref().expect("clap"))?,
                read_parallel(c.dev_src.as_ref().expect("clap"), c.dev_tgt.as_ref().expect("clap"))?,
            )
        }
        _ => return Err(Error::usage("give --task or --train-src/--train-tgt/--dev-src/--dev-tgt")),
    };
    let settings = a.config.settings()?;
    let (init, mut model) = match &a.init {
        Some(p) => {
            let ck = ckpt::load(p)?;
            let m = ck.metadata.model.clone();
            (Some(ck), m)
        }
        None => (None, ModelConfig::default()),
    };
    let mut cfg = TrainConfig::default();
    let before = model.clone();
    settings.apply(None, &mut model, &mut cfg)?;
    let init = match init {
        Some(ck) => {
            if model != before {
                return Err(Error::usage("model settings cannot change when training from a checkpoint"));
            }
            Init::From(Box::new(ck))
        }
        None => {
            model.vocab_size = vocab.len();
            Init::Fresh(model.clone())
        }
    };
    let freeze = FreezeMask::parse(&a.freeze)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_atomic(&a.out.join("train.cfg"), render(&model, &cfg).as_bytes())?;
    let out = match train(TrainRequest {
        init,
        vocab: &vocab,
        train: &train_pairs,
        dev: &dev_pairs,
        cfg: cfg.clone(),
        optimizer: OptimizerConfig::default(),
        freeze,
    }) {
        Ok(o) => o,
        Err(abort) => {
            if let Some(ck) = abort.checkpoint.as_deref() {
                let _ = std::fs::write(a.out.join("aborted.json"), format!("{{\"step\":{}}}\n", ck.step));
            }
            return Err(abort.error.into());
        }
    };
    ckpt::save(&out.best, &a.out.join("best.ckpt"))?;
    ckpt::save(&out.last, &a.out.join("last.ckpt"))?;
    write_trajectory(&a.out.join("trajectory.tsv"), &out.trajectory)?;
    write_json(
        &a.out.join("summary.json"),
        &TrainSummary {
            model: &model,
            train: &cfg,
            freeze: freeze.describe(),
            init: a.init.as_ref().map(|p| p.display().to_string()),
            best_step: out.best_step,
            best_bleu: out.best_bleu,
            steps: out.steps,
            stopped_early: out.stopped_early,
            moments_carried: out.moments_carried,
            first_lr: out.first_lr,
            filtered_train: out.filtered_train,
        },
    )?;
    println!(
        "trained {} steps{}; best dev BLEU {:.2} at step {}",
        out.steps,
        if out.stopped_early { " (early stop)" } else { "" },
        out.best_bleu,
        out.best_step
    );
    Ok(())
}

fn cmd_translate(a: TranslateArgs) -> Result<()> {
    let ck = ckpt::load(&a.ckpt)?;
    let vocab = read_vocab(&a.vocab)?;
    let lines = read_lines(&a.input)?;
    let hyps = translate(&ck, &vocab, &lines, a.beam)?;
    write_lines(&a.out, &hyps)?;
    println!("translated {} sentences", hyps.len());
    Ok(())
}

fn cmd_bleu(a: BleuArgs) -> Result<()> {
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&a.refs)?;
    let b = bleu(&hyps, &refs, a.smooth)?;
    println!(
        "BLEU = {:.2} {:.1}/{:.1}/{:.1}/{:.1} (BP = {:.3} hyp_len = {} ref_len = {})",
        b.score, b.precisions[0], b.precisions[1], b.precisions[2], b.precisions[3], b.brevity_penalty, b.hyp_len, b.ref_len
    );
    println!("signature: {}", b.signature());
    if let Some(p) = &a.out_json {
        write_json(p, &serde_json::json!({ "bleu": b, "signature": b.signature() }))?;
    }
    Ok(())
}

fn cmd_significance(a: SignificanceArgs) -> Result<()> {
    let ha = read_lines(&a.hyp_a)?;
    let hb = read_lines(&a.hyp_b)?;
    let refs = read_lines(&a.refs)?;
    let r = paired_bootstrap(&ha, &hb, &refs, a.samples, a.alpha, a.seed)?;
    println!(
        "A {:.2}  B {:.2}  p = {:.4}  {} at alpha {}",
        r.bleu_a,
        r.bleu_b,
        r.p_like,
        if r.significant { "B significantly better" } else { "not significant" },
        r.alpha
    );
    println!("signature: {}", signature(false));
    if let Some(p) = &a.out_json {
        write_json(p, &r)?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = TaskSpec { base_seed: a.base_seed, sample_seed: a.sample_seed, n_pairs: a.pairs, lexicon_size: a.lexicon };
    let cipher = if a.script == "copy" {
        None
    } else {
        let script = Script::parse(&a.script)?;
        let name = a.name.clone().unwrap_or_else(|| script.name().to_string());
        Some(CipherLang::new(&name, script, a.lexicon, a.cipher_seed)?)
    };
    let (_, m) = write_synth(&a.out, &spec, cipher.as_ref())?;
    println!("wrote {}/{}/{} train/dev/test pairs to {}", m.train, m.dev, m.test, a.out.display());
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => {
            let v: serde_json::Value = read_json(p)?;
            let inner = v.get("spec").cloned().unwrap_or(v);
            let mut s: ExperimentSpec =
                serde_json::from_value(inner).map_err(|e| Error::format(p, e.to_string()))?;
            s.out_dir = a.out.clone();
            s.overwrite = a.overwrite;
            s
        }
        None => {
            let mode = Mode::parse(a.mode.as_deref().expect("clap"))?;
            let mut s = ExperimentSpec::new(a.child_task.clone().expect("clap"), mode, a.out.clone());
            let settings = a.config.settings()?;
            settings.apply(None, &mut s.model, &mut s.train)?;
            let mut parent_model = s.model.clone();
            s.parent_train = s.train.clone();
            settings.apply(Some("parent"), &mut parent_model, &mut s.parent_train)?;
            if parent_model != s.model {
                return Err(Error::usage("parent.* keys may only set training fields"));
            }
            s.parent_task = a.parent_task.clone();
            s.parent_checkpoint = a.parent_ckpt.clone();
            s.parent_vocab = a.parent_vocab.clone();
            s.strategy = a.strategy.clone();
            s.strategy_seed = a.strategy_seed;
            s.freeze = a.freeze.clone();
            s.vocab_size = a.vocab_size;
            s.reset_step = a.reset_step;
            s.reset_moments = a.reset_moments;
            s.beam = a.beam;
            s.baseline = a.baseline.clone();
            s.bootstrap_samples = a.samples;
            s.alpha = a.alpha;
            s.bootstrap_seed = a.bootstrap_seed;
            s.overwrite = a.overwrite;
            s
        }
    };
    let r: ExperimentReport = run_experiment(&spec)?;
    println!(
        "{}: best dev BLEU {:.2} at step {}, test BLEU {:.2}",
        r.mode, r.best_dev_bleu, r.steps_to_best, r.test.score
    );
    if let Some(c) = &r.comparison {
        println!(
            "vs {}: dBLEU {:+.2}, speed-up {:.0}%, better p = {:.4}, worse p = {:.4}",
            c.baseline_mode, c.delta_bleu, c.speedup_pct, c.better_than_baseline.p_like, c.worse_than_baseline.p_like
        );
    }
    println!("signature: {}", r.signature);
    Ok(())
}
