//! Parent/child transfer pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use recycle_core::checkpoint::{transfer_init, Checkpoint, TransferPlan};
use recycle_core::eval::{bleu, paired_bootstrap};
use recycle_core::nmt::{
    translate, FreezeMask, Init, ModelConfig, OptimizerConfig, TrainConfig, TrainOutcome, TrainRequest,
};
use recycle_core::stats::fragmentation;
use recycle_core::synth::SplitCorpus;
use recycle_core::transform::{token_frequencies, transform_vocabulary, MappingReport, Strategy};
use recycle_core::{build_vocabulary, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::ckpt;
use crate::error::{Error, Result, StageExt};
use crate::io::{read_json, read_lines, read_task, read_vocab, write_json, write_lines, write_vocab};
use crate::report::{speedup_pct, steps_to_reach, write_trajectory, Comparison, ExperimentReport, ParentInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Scratch,
    Direct,
    Transformed,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Scratch => "scratch",
            Mode::Direct => "direct",
            Mode::Transformed => "transformed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(Mode::Scratch),
            "direct" => Ok(Mode::Direct),
            "transformed" => Ok(Mode::Transformed),
            _ => Err(Error::usage(format!("unknown mode {s:?}"))),
        }
    }
}

/// Everything needed to rerun an experiment. Reports embed it verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Task directory of the parent; needed when no parent checkpoint is given.
    pub parent_task: Option<PathBuf>,
    pub parent_checkpoint: Option<PathBuf>,
    /// Vocabulary of `parent_checkpoint`.
    pub parent_vocab: Option<PathBuf>,
    pub child_task: PathBuf,
    pub mode: Mode,
    pub strategy: String,
    pub strategy_seed: u64,
    /// Comma separated components, `none` or `all`.
    pub freeze: String,
    /// Size of every vocabulary built here.
    pub vocab_size: usize,
    /// Architecture of models trained from scratch (parent or scratch child).
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub parent_train: TrainConfig,
    pub reset_step: bool,
    pub reset_moments: bool,
    pub beam: usize,
    /// Report of the run to compare against.
    pub baseline: Option<PathBuf>,
    pub bootstrap_samples: usize,
    pub alpha: f64,
    pub bootstrap_seed: u64,
    pub out_dir: PathBuf,
    pub overwrite: bool,
}

impl ExperimentSpec {
    pub fn new(child_task: PathBuf, mode: Mode, out_dir: PathBuf) -> Self {
        ExperimentSpec {
            parent_task: None,
            parent_checkpoint: None,
            parent_vocab: None,
            child_task,
            mode,
            strategy: "frequency".into(),
            strategy_seed: 1,
            freeze: "none".into(),
            vocab_size: 512,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            parent_train: TrainConfig::default(),
            reset_step: false,
            reset_moments: false,
            beam: 1,
            baseline: None,
            bootstrap_samples: 1000,
            alpha: 0.05,
            bootstrap_seed: 1,
            out_dir,
            overwrite: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.parent_train.validate()?;
        FreezeMask::parse(&self.freeze)?;
        Strategy::parse(&self.strategy, self.strategy_seed)?;
        if self.mode != Mode::Scratch && self.parent_checkpoint.is_none() && self.parent_task.is_none() {
            return Err(Error::usage("transfer modes need a parent checkpoint or a parent task"));
        }
        if self.parent_checkpoint.is_some() != self.parent_vocab.is_some() {
            return Err(Error::usage("parent checkpoint and parent vocabulary go together"));
        }
        for p in [&self.parent_task, &self.parent_checkpoint, &self.parent_vocab, &self.baseline].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::usage(format!("{} does not exist", p.display())));
            }
        }
        if !self.child_task.is_dir() {
            return Err(Error::usage(format!("{} is not a task directory", self.child_task.display())));
        }
        Ok(())
    }
}

/// A trained parent and the vocabulary its embedding rows refer to.
#[derive(Debug, Clone)]
pub struct Parent {
    pub vocab: Vocabulary,
    pub checkpoint: Checkpoint,
    pub best_dev_bleu: Option<f64>,
    pub trained_here: bool,
}

/// Shared vocabulary over both sides of the training pairs.
pub fn task_vocabulary(corpus: &SplitCorpus, size: usize) -> recycle_core::Result<Vocabulary> {
    build_vocabulary(corpus.train.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()]), size)
}

pub fn train_on(
    init: Init,
    vocab: &Vocabulary,
    corpus: &SplitCorpus,
    cfg: &TrainConfig,
    freeze: FreezeMask,
) -> Result<TrainOutcome> {
    recycle_core::nmt::train(TrainRequest {
        init,
        vocab,
        train: &corpus.train,
        dev: &corpus.dev,
        cfg: cfg.clone(),
        optimizer: OptimizerConfig::default(),
        freeze,
    })
    .map_err(|a| Error::Core(a.error))
}

pub fn train_parent(corpus: &SplitCorpus, vocab_size: usize, model: &ModelConfig, cfg: &TrainConfig) -> Result<Parent> {
    let vocab = task_vocabulary(corpus, vocab_size)?;
    let model = ModelConfig { vocab_size: vocab.len(), ..model.clone() };
    let out = train_on(Init::Fresh(model), &vocab, corpus, cfg, FreezeMask::none())?;
    Ok(Parent { vocab, checkpoint: out.best, best_dev_bleu: Some(out.best_bleu), trained_here: true })
}

/// Child initialization for one mode.
pub struct ChildStart {
    pub vocab: Vocabulary,
    pub init: Init,
    pub mapping: Option<MappingReport>,
}

#[allow(clippy::too_many_arguments)]
pub fn prepare_child(
    mode: Mode,
    parent: Option<&Parent>,
    child: &SplitCorpus,
    vocab_size: usize,
    model: &ModelConfig,
    strategy: Strategy,
    reset_step: bool,
    reset_moments: bool,
) -> Result<ChildStart> {
    let need_parent = || parent.ok_or_else(|| Error::usage("transfer mode without a parent"));
    let plan_flags = |mut plan: TransferPlan| {
        plan.reset_step = reset_step;
        plan.reset_moments = reset_moments;
        plan
    };
    match mode {
        Mode::Scratch => {
            let vocab = task_vocabulary(child, vocab_size)?;
            let model = ModelConfig { vocab_size: vocab.len(), ..model.clone() };
            Ok(ChildStart { vocab, init: Init::Fresh(model), mapping: None })
        }
        Mode::Direct => {
            let p = need_parent()?;
            let ck = transfer_init(&p.checkpoint, &plan_flags(TransferPlan::direct()))?;
            Ok(ChildStart { vocab: p.vocab.clone(), init: Init::From(Box::new(ck)), mapping: None })
        }
        Mode::Transformed => {
            let p = need_parent()?;
            let child_vocab = task_vocabulary(child, p.vocab.len())?;
            let freqs = (strategy == Strategy::Frequency).then(|| {
                token_frequencies(child.train.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()]), &child_vocab)
            });
            let mapping = transform_vocabulary(&p.vocab, &child_vocab, strategy, freqs.as_deref())?;
            let report = MappingReport::from(&mapping);
            let vocab = mapping.transformed.clone();
            let ck = transfer_init(&p.checkpoint, &plan_flags(TransferPlan::transformed(mapping)))?;
            Ok(ChildStart { vocab, init: Init::From(Box::new(ck)), mapping: Some(report) })
        }
    }
}

/// Result of a child run before it is written out.
pub struct ChildRun {
    pub start_vocab: Vocabulary,
    pub mapping: Option<MappingReport>,
    pub outcome: TrainOutcome,
    pub test_hyps: Vec<String>,
    pub test_bleu: recycle_core::eval::BleuScore,
}

pub fn run_child(start: ChildStart, child: &SplitCorpus, cfg: &TrainConfig, freeze: FreezeMask, beam: usize) -> Result<ChildRun> {
    let outcome = train_on(start.init, &start.vocab, child, cfg, freeze).stage("child-train")?;
    let srcs: Vec<&str> = child.test.iter().map(|p| p.0.as_str()).collect();
    let refs: Vec<&str> = child.test.iter().map(|p| p.1.as_str()).collect();
    let test_hyps = translate(&outcome.best, &start.vocab, &srcs, beam).stage("test-translate")?;
    let test_bleu = bleu(&test_hyps, &refs, false).stage("test-bleu")?;
    Ok(ChildRun { start_vocab: start.vocab, mapping: start.mapping, outcome, test_hyps, test_bleu })
}

fn prepare_out_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty && !overwrite {
            return Err(Error::usage(format!("{} is not empty; pass --overwrite to reuse it", dir.display())));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn compare(
    spec: &ExperimentSpec,
    run: &ChildRun,
    refs: &[&str],
    baseline_path: &Path,
) -> Result<Comparison> {
    let base: ExperimentReport = read_json(baseline_path)?;
    let base_dir = baseline_path.parent().unwrap_or(Path::new("."));
    let base_hyps = read_lines(&base_dir.join(&base.test_hypotheses))?;
    let better = paired_bootstrap(&base_hyps, &run.test_hyps, refs, spec.bootstrap_samples, spec.alpha, spec.bootstrap_seed)?;
    let worse = paired_bootstrap(&run.test_hyps, &base_hyps, refs, spec.bootstrap_samples, spec.alpha, spec.bootstrap_seed)?;
    Ok(Comparison {
        baseline_report: baseline_path.display().to_string(),
        baseline_mode: base.mode.clone(),
        baseline_test_bleu: base.test.score,
        baseline_best_dev_bleu: base.best_dev_bleu,
        baseline_steps: base.steps_to_best,
        delta_bleu: run.test_bleu.score - base.test.score,
        speedup_pct: speedup_pct(base.steps_to_best, run.outcome.best_step),
        steps_to_baseline_best: steps_to_reach(&run.outcome.trajectory, base.best_dev_bleu),
        better_than_baseline: better,
        worse_than_baseline: worse,
    })
}

/// Runs the whole pipeline and writes its artifacts under `spec.out_dir`:
/// `parent/` (when trained here), `child.vocab`, `best.ckpt`, `last.ckpt`,
/// `trajectory.tsv`, `test.hyp`, `report.json` and `report.tsv`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let out = &spec.out_dir;
    prepare_out_dir(out, spec.overwrite)?;
    write_json(&out.join("spec.json"), spec)?;
    let child = read_task(&spec.child_task).stage("load-child")?;
    let strategy = Strategy::parse(&spec.strategy, spec.strategy_seed)?;
    let freeze = FreezeMask::parse(&spec.freeze)?;

    let parent = if spec.mode == Mode::Scratch {
        None
    } else if let (Some(ck), Some(v)) = (&spec.parent_checkpoint, &spec.parent_vocab) {
        let vocab = read_vocab(v).stage("load-parent")?;
        let checkpoint = ckpt::load(ck).stage("load-parent")?;
        Some(Parent { vocab, checkpoint, best_dev_bleu: None, trained_here: false })
    } else {
        let dir = spec.parent_task.as_ref().expect("validated");
        let task = read_task(dir).stage("load-parent")?;
        info!("training parent on {}", dir.display());
        let p = train_parent(&task, spec.vocab_size, &spec.model, &spec.parent_train).stage("parent-train")?;
        let pdir = out.join("parent");
        write_vocab(&pdir.join("parent.vocab"), &p.vocab).stage("parent-train")?;
        ckpt::save(&p.checkpoint, &pdir.join("best.ckpt")).stage("parent-train")?;
        Some(p)
    };

    let start = prepare_child(
        spec.mode,
        parent.as_ref(),
        &child,
        spec.vocab_size,
        &spec.model,
        strategy,
        spec.reset_step,
        spec.reset_moments,
    )
    .stage("child-init")?;
    write_vocab(&out.join("child.vocab"), &start.vocab)?;
    let fragmentation = fragmentation(child.train.iter().map(|p| p.1.as_str()), &start.vocab, Some(spec.train.length_limit))?;
    info!("training {} child", spec.mode.name());
    let run = run_child(start, &child, &spec.train, freeze, spec.beam)?;

    ckpt::save(&run.outcome.best, &out.join("best.ckpt")).stage("write")?;
    ckpt::save(&run.outcome.last, &out.join("last.ckpt")).stage("write")?;
    write_trajectory(&out.join("trajectory.tsv"), &run.outcome.trajectory)?;
    write_lines(&out.join("test.hyp"), &run.test_hyps)?;

    let refs: Vec<&str> = child.test.iter().map(|p| p.1.as_str()).collect();
    let comparison = match &spec.baseline {
        Some(b) => Some(compare(spec, &run, &refs, b).stage("significance")?),
        None => None,
    };
    let o = &run.outcome;
    let report = ExperimentReport {
        spec: spec.clone(),
        mode: spec.mode.name().into(),
        freeze: freeze.describe(),
        parent: parent.as_ref().map(|p| ParentInfo {
            trained_here: p.trained_here,
            step: p.checkpoint.step,
            best_dev_bleu: p.best_dev_bleu,
            vocab_hash: p.vocab.content_hash(),
        }),
        vocab_hash: run.start_vocab.content_hash(),
        vocab_size: run.start_vocab.len(),
        mapping: run.mapping.clone(),
        target_fragmentation: fragmentation,
        best_dev_bleu: o.best_bleu,
        steps_to_best: o.best_step,
        steps_trained: o.steps,
        stopped_early: o.stopped_early,
        moments_carried: o.moments_carried,
        first_lr: o.first_lr,
        filtered_train: o.filtered_train,
        signature: run.test_bleu.signature(),
        test: run.test_bleu.clone(),
        test_hypotheses: "test.hyp".into(),
        comparison,
        trajectory: o.trajectory.clone(),
    };
    write_json(&out.join("report.json"), &report)?;
    report.write_table(&out.join("report.tsv"))?;
    Ok(report)
}
