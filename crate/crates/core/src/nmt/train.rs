//! Training loop: packed batches, Adam with freezing, periodic dev
//! evaluation, best-checkpoint selection and early stopping.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FreezeMask, ModelConfig, OptimizerConfig, TrainConfig};
use super::model::{Batch, LossStats, Transformer};
use super::optim::Adam;
use super::schedule::{early_stop, lr_schedule};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::bleu;
use crate::vocab::Vocabulary;

/// One dev evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Updates made in this run.
    pub step: u64,
    /// Step counter including any steps carried over from the initial checkpoint.
    pub global_step: u64,
    pub bleu: f64,
    /// Mean dev negative log-likelihood per target token.
    pub loss: f64,
    /// Teacher-forced dev token accuracy.
    pub accuracy: f64,
    /// Learning rate of the most recent update (of the next one at step 0).
    pub lr: f64,
    /// Mean smoothed training loss since the previous evaluation (0 if no
    /// update ran in between).
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub enum Init {
    Fresh(ModelConfig),
    From(Box<Checkpoint>),
}

#[derive(Debug, Clone)]
pub struct TrainRequest<'a> {
    pub init: Init,
    pub vocab: &'a Vocabulary,
    pub train: &'a [(String, String)],
    pub dev: &'a [(String, String)],
    pub cfg: TrainConfig,
    pub optimizer: OptimizerConfig,
    pub freeze: FreezeMask,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the highest dev BLEU (earliest on ties).
    pub best: Checkpoint,
    /// State after the last update.
    pub last: Checkpoint,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Local step of the best checkpoint.
    pub best_step: u64,
    pub best_bleu: f64,
    /// Learning rate applied by the first update, if any update ran.
    pub first_lr: Option<f64>,
    pub steps: u64,
    pub stopped_early: bool,
    pub moments_carried: bool,
    /// Training pairs dropped by the length limit.
    pub filtered_train: usize,
    /// Dev pairs longer than the model's maximum length.
    pub truncated_dev: usize,
}

/// Training failure, with the model state at the point of failure when one
/// exists.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub checkpoint: Option<Box<Checkpoint>>,
}

impl fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl From<Error> for TrainAbort {
    fn from(error: Error) -> Self {
        TrainAbort { error, checkpoint: None }
    }
}

type Encoded = Vec<(Vec<u32>, Vec<u32>)>;

fn encode_pairs(pairs: &[(String, String)], vocab: &Vocabulary, limit: usize) -> (Encoded, usize) {
    let mut out = Vec::with_capacity(pairs.len());
    for (s, t) in pairs {
        let (s, t) = (vocab.encode(s), vocab.encode(t));
        if s.len() <= limit && t.len() <= limit {
            out.push((s, t));
        }
    }
    let dropped = pairs.len() - out.len();
    (out, dropped)
}

/// Consecutive runs of `order` whose source plus target tokens (each with
/// its `<eos>`) fit in `budget`; an oversized pair forms its own batch.
fn pack(order: &[usize], data: &Encoded, budget: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for &i in order {
        let n = data[i].0.len() + data[i].1.len() + 2;
        if !cur.is_empty() && used + n > budget {
            batches.push(core::mem::take(&mut cur));
            used = 0;
        }
        cur.push(i);
        used += n;
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

fn make_batch(idx: &[usize], data: &Encoded, eos: u32) -> Batch {
    let pairs: Vec<(&[u32], &[u32])> = idx.iter().map(|&i| (&data[i].0[..], &data[i].1[..])).collect();
    Batch::new(&pairs, eos)
}

const DECODE_CHUNK: usize = 64;

/// Dev loss, accuracy and greedy BLEU.
fn evaluate_dev(
    model: &Transformer<f32>,
    vocab: &Vocabulary,
    dev: &Encoded,
    dev_refs: &[&str],
    batch_tokens: usize,
) -> Result<(LossStats, f64)> {
    let eos = vocab.eos_id();
    let order: Vec<usize> = (0..dev.len()).collect();
    let mut stats = LossStats::default();
    for b in pack(&order, dev, batch_tokens) {
        stats.add(&model.evaluate(&make_batch(&b, dev, eos), 0.0));
    }
    let mut hyps = Vec::with_capacity(dev.len());
    for chunk in dev.chunks(DECODE_CHUNK) {
        let srcs: Vec<&[u32]> = chunk.iter().map(|p| &p.0[..]).collect();
        for out in model.greedy(&srcs, eos) {
            hyps.push(vocab.detokenize(&out)?);
        }
    }
    let score = bleu(&hyps, dev_refs, false)?.score;
    Ok((stats, score))
}

struct Snapshot {
    params: Vec<Vec<f32>>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    global: u64,
}

/// Trains until the stopping rule fires or `max_steps` updates have run.
pub fn train(req: TrainRequest<'_>) -> core::result::Result<TrainOutcome, TrainAbort> {
    let cfg = &req.cfg;
    cfg.validate()?;
    let vocab = req.vocab;
    let vocab_hash = vocab.content_hash();
    let (mut model, start_step, init_ckpt) = match &req.init {
        Init::Fresh(mc) => (Transformer::<f32>::new(mc)?, 0, None),
        Init::From(ck) => {
            ck.validate()?;
            if !ck.metadata.vocab_hash.is_empty() && ck.metadata.vocab_hash != vocab_hash {
                return Err(Error::config("checkpoint was trained with a different vocabulary file").into());
            }
            (Transformer::<f32>::from_checkpoint(ck)?, ck.step, Some(ck))
        }
    };
    let mc = model.config().clone();
    if mc.vocab_size != vocab.len() {
        return Err(Error::config(format!(
            "model vocab_size {} but the vocabulary has {} entries",
            mc.vocab_size,
            vocab.len()
        ))
        .into());
    }

    let limit = cfg.length_limit.min(mc.max_len - 1);
    let (train_data, filtered_train) = encode_pairs(req.train, vocab, limit);
    if train_data.is_empty() {
        return Err(Error::data("no training pair fits the length limit").into());
    }
    if req.dev.is_empty() {
        return Err(Error::data("dev set is empty").into());
    }
    // Dev pairs are never dropped: over-long ones are truncated for the loss
    // and scored in full for BLEU.
    let cap = mc.max_len - 1;
    let mut truncated_dev = 0;
    let dev_data: Encoded = req
        .dev
        .iter()
        .map(|(s, t)| {
            let (mut s, mut t) = (vocab.encode(s), vocab.encode(t));
            if s.len() > cap || t.len() > cap {
                truncated_dev += 1;
            }
            s.truncate(cap);
            t.truncate(cap);
            (s, t)
        })
        .collect();
    let dev_refs: Vec<&str> = req.dev.iter().map(|(_, t)| t.as_str()).collect();

    let sizes: Vec<usize> = model.params().iter().map(Vec::len).collect();
    let mut adam = Adam::<f32>::new(req.optimizer, &sizes);
    let mut moments_carried = false;
    if let Some(ck) = init_ckpt {
        if !ck.optimizer_state.is_empty() {
            if ck.metadata.optimizer == Some(req.optimizer) {
                for (i, p) in model.param_info().iter().enumerate() {
                    if let Some(mo) = ck.optimizer_state.get(&p.name) {
                        adam.m[i].copy_from_slice(&mo.m.data);
                        adam.v[i].copy_from_slice(&mo.v.data);
                    }
                }
                adam.age = ck.step;
                moments_carried = true;
            } else {
                log::warn!("checkpoint moments come from a different optimizer; starting from zero moments");
            }
        }
    }
    let frozen: Vec<bool> = model.param_info().iter().map(|p| req.freeze.is_frozen(p.component)).collect();
    let all_frozen = frozen.iter().all(|&f| f);

    let eos = vocab.eos_id();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let mut trajectory: Vec<TrajectoryPoint> = Vec::new();
    let mut best: Option<(f64, u64, Snapshot)> = None;
    let mut grads = model.zero_grads();
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut queue: Vec<Vec<usize>> = Vec::new();
    let mut first_lr = None;
    let mut last_lr = lr_schedule(start_step + 1, cfg.base_lr, cfg.warmup_steps);
    let (mut loss_acc, mut loss_n) = (0.0f64, 0usize);
    let mut step = 0u64;
    let mut stopped_early = false;

    loop {
        let evaluate_now = step.is_multiple_of(cfg.eval_every) || step == cfg.max_steps;
        if evaluate_now && trajectory.last().is_none_or(|p| p.step != step) {
            let (st, score) = evaluate_dev(&model, vocab, &dev_data, &dev_refs, cfg.batch_tokens)?;
            let point = TrajectoryPoint {
                step,
                global_step: start_step + step,
                bleu: score,
                loss: st.mean_nll(),
                accuracy: st.accuracy(),
                lr: last_lr,
                train_loss: if loss_n == 0 { 0.0 } else { loss_acc / loss_n as f64 },
            };
            log::info!(
                "step {} (global {}): dev bleu {:.2} loss {:.4} acc {:.3} lr {:.3e}",
                point.step,
                point.global_step,
                point.bleu,
                point.loss,
                point.accuracy,
                point.lr
            );
            (loss_acc, loss_n) = (0.0, 0);
            trajectory.push(point);
            if best.as_ref().is_none_or(|b| score > b.0) {
                let snap = Snapshot {
                    params: model.params().to_vec(),
                    m: adam.m.clone(),
                    v: adam.v.clone(),
                    global: start_step + step,
                };
                best = Some((score, step, snap));
            }
            if step > 0 && step < cfg.max_steps && early_stop(&trajectory, cfg.stop_rel_threshold, cfg.stop_window_frac, cfg.min_steps) {
                stopped_early = true;
                break;
            }
        }
        if step >= cfg.max_steps {
            break;
        }

        if queue.is_empty() {
            order.shuffle(&mut shuffle_rng);
            queue = pack(&order, &train_data, cfg.batch_tokens);
            queue.reverse();
        }
        let Some(idx) = queue.pop() else { break };
        let batch = make_batch(&idx, &train_data, eos);
        step += 1;
        let global = start_step + step;
        let lr = lr_schedule(global, cfg.base_lr, cfg.warmup_steps);
        let stats = if all_frozen {
            model.evaluate(&batch, cfg.label_smoothing)
        } else {
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x = 0.0));
            model.train_step_grads(&batch, cfg.label_smoothing, &mut grads, &mut dropout_rng)
        };
        let loss = stats.smoothed_sum / stats.tokens as f64;
        if !loss.is_finite() {
            let ck = model.to_checkpoint(global - 1, &vocab_hash, Some((&adam.m, &adam.v, req.optimizer)));
            return Err(TrainAbort {
                error: Error::Training { step: global, message: format!("non-finite loss {loss}") },
                checkpoint: Some(Box::new(ck)),
            });
        }
        loss_acc += loss;
        loss_n += 1;
        if !all_frozen {
            adam.step(model.params_mut(), &grads, &frozen, lr);
        }
        first_lr.get_or_insert(lr);
        last_lr = lr;
    }

    let final_global = start_step + step;
    let last = model.to_checkpoint(final_global, &vocab_hash, Some((&adam.m, &adam.v, req.optimizer)));
    let (best_bleu, best_step, snap) = best.ok_or_else(|| Error::data("training produced no evaluation"))?;
    model.params_mut().clone_from_slice(&snap.params);
    let best_ckpt = model.to_checkpoint(snap.global, &vocab_hash, Some((&snap.m, &snap.v, req.optimizer)));
    Ok(TrainOutcome {
        best: best_ckpt,
        last,
        trajectory,
        best_step,
        best_bleu,
        first_lr,
        steps: step,
        stopped_early,
        moments_carried,
        filtered_train,
        truncated_dev,
    })
}

/// Translates sentences with a checkpoint; `beam == 1` decodes greedily.
pub fn translate<S: AsRef<str>>(ckpt: &Checkpoint, vocab: &Vocabulary, sentences: &[S], beam: usize) -> Result<Vec<String>> {
    if beam == 0 {
        return Err(Error::config("beam must be at least 1"));
    }
    if ckpt.metadata.vocab_size != vocab.len() {
        return Err(Error::config(format!(
            "checkpoint expects {} vocabulary entries, got {}",
            ckpt.metadata.vocab_size,
            vocab.len()
        )));
    }
    let model = Transformer::<f32>::from_checkpoint(ckpt)?;
    translate_with(&model, vocab, sentences, beam)
}

pub fn translate_with<S: AsRef<str>>(
    model: &Transformer<f32>,
    vocab: &Vocabulary,
    sentences: &[S],
    beam: usize,
) -> Result<Vec<String>> {
    let eos = vocab.eos_id();
    let encoded: Vec<Vec<u32>> = sentences.iter().map(|s| vocab.encode(s.as_ref())).collect();
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in encoded.chunks(DECODE_CHUNK) {
        let srcs: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
        for ids in model.beam_search(&srcs, eos, beam) {
            out.push(vocab.detokenize(&ids)?);
        }
    }
    Ok(out)
}
