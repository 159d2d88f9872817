use recycle_core::checkpoint::{transfer_init, TransferPlan};
use recycle_core::nmt::{
    lr_schedule, train, translate, Component, FreezeMask, Init, ModelConfig, OptimizerConfig, TrainConfig, TrainOutcome,
    TrainRequest,
};
use recycle_core::synth::{make_copy_task, SplitCorpus, TaskSpec};
use recycle_core::{build_vocabulary, Vocabulary};

fn copy_task(n: usize, lexicon: usize) -> SplitCorpus {
    make_copy_task(&TaskSpec { base_seed: 5, sample_seed: 6, n_pairs: n, lexicon_size: lexicon }).unwrap()
}

fn vocab(c: &SplitCorpus) -> Vocabulary {
    build_vocabulary(c.train.iter().map(|p| p.0.as_str()), 96).unwrap()
}

fn tiny_model(v: &Vocabulary) -> ModelConfig {
    ModelConfig { d_model: 32, n_heads: 2, ffn_dim: 64, vocab_size: v.len(), max_len: 64, ..ModelConfig::default() }
}

fn cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        max_steps: steps,
        min_steps: steps,
        warmup_steps: 50,
        eval_every: 50,
        batch_tokens: 256,
        base_lr: 0.1,
        ..TrainConfig::default()
    }
}

fn run(init: Init, v: &Vocabulary, c: &SplitCorpus, tc: TrainConfig, freeze: FreezeMask) -> TrainOutcome {
    train(TrainRequest {
        init,
        vocab: v,
        train: &c.train,
        dev: &c.dev,
        cfg: tc,
        optimizer: OptimizerConfig::default(),
        freeze,
    })
    .unwrap()
}

#[test]
fn short_run_reduces_dev_loss() {
    let c = copy_task(50, 12);
    let v = vocab(&c);
    let out = run(Init::Fresh(tiny_model(&v)), &v, &c, cfg(200), FreezeMask::none());
    let first = out.trajectory.first().unwrap();
    let last = out.trajectory.last().unwrap();
    assert_eq!((first.step, last.step), (0, 200));
    let lowest = out.trajectory.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
    assert!(lowest < first.loss * 0.8, "{:?}", out.trajectory);
    assert!(last.train_loss < out.trajectory[1].train_loss);
    assert!(!out.stopped_early);
}

#[test]
fn fully_frozen_model_is_bitwise_unchanged() {
    let c = copy_task(50, 12);
    let v = vocab(&c);
    let warm = run(Init::Fresh(tiny_model(&v)), &v, &c, cfg(50), FreezeMask::none());
    let out = run(Init::From(Box::new(warm.last.clone())), &v, &c, cfg(100), FreezeMask::all());
    for (name, t) in &warm.last.tensors {
        assert!(out.last.tensors[name].bitwise_eq(t), "{name} changed");
    }
    let b0 = out.trajectory[0].bleu;
    assert!(out.trajectory.iter().all(|p| p.bleu == b0 && p.loss == out.trajectory[0].loss));
    assert_eq!(out.best_step, 0);
}

#[test]
fn frozen_component_keeps_its_values() {
    let c = copy_task(50, 12);
    let v = vocab(&c);
    let init = run(Init::Fresh(tiny_model(&v)), &v, &c, cfg(20), FreezeMask::none()).last;
    let out = run(Init::From(Box::new(init.clone())), &v, &c, cfg(40), FreezeMask::only(Component::Attention));
    let mut changed = 0;
    for (name, t) in &init.tensors {
        let same = out.last.tensors[name].bitwise_eq(t);
        if name.contains("self_attn") || name.contains("cross_attn") {
            assert!(same, "{name} moved while frozen");
        } else if !same {
            changed += 1;
        }
    }
    assert!(changed > 0);
}

#[test]
fn transferred_run_continues_the_schedule() {
    let c = copy_task(50, 12);
    let v = vocab(&c);
    let tc = cfg(30);
    let parent = run(Init::Fresh(tiny_model(&v)), &v, &c, tc.clone(), FreezeMask::none());
    assert_eq!(parent.last.step, 30);
    let child = transfer_init(&parent.last, &TransferPlan::direct()).unwrap();
    let out = run(Init::From(Box::new(child)), &v, &c, cfg(10), FreezeMask::none());
    let expect = lr_schedule(31, tc.base_lr, tc.warmup_steps);
    assert_eq!(out.first_lr, Some(expect));
    assert!(out.moments_carried);
    assert_eq!(out.trajectory[0].global_step, 30);
    assert_eq!(out.last.step, 40);

    let mut reset = TransferPlan::direct();
    reset.reset_step = true;
    reset.reset_moments = true;
    let fresh = transfer_init(&parent.last, &reset).unwrap();
    let out = run(Init::From(Box::new(fresh)), &v, &c, cfg(10), FreezeMask::none());
    assert_eq!(out.first_lr, Some(lr_schedule(1, tc.base_lr, tc.warmup_steps)));
    assert!(!out.moments_carried);
}

#[test]
fn same_seed_same_trajectory() {
    let c = copy_task(50, 12);
    let v = vocab(&c);
    let a = run(Init::Fresh(tiny_model(&v)), &v, &c, cfg(60), FreezeMask::none());
    let b = run(Init::Fresh(tiny_model(&v)), &v, &c, cfg(60), FreezeMask::none());
    assert_eq!(a.trajectory, b.trajectory);
    assert!(a.last.bitwise_eq(&b.last));
}

#[test]
fn copy_task_converges_to_identity() {
    let c = copy_task(300, 8);
    let v = vocab(&c);
    let tc = TrainConfig { eval_every: 100, batch_tokens: 512, ..cfg(600) };
    let out = run(Init::Fresh(tiny_model(&v)), &v, &c, tc, FreezeMask::none());
    let srcs: Vec<&str> = c.test.iter().map(|p| p.0.as_str()).collect();
    let hyps = translate(&out.best, &v, &srcs, 1).unwrap();
    let exact = hyps.iter().zip(&srcs).filter(|(h, s)| h == *s).count();
    assert!(exact * 10 >= srcs.len() * 9, "{exact}/{} exact copies: {:?}", srcs.len(), out.trajectory.iter().map(|p| (p.step, p.bleu, p.accuracy)).collect::<Vec<_>>());
}

#[test]
fn empty_and_odd_inputs_translate() {
    let c = copy_task(50, 12);
    let v = vocab(&c);
    let out = run(Init::Fresh(tiny_model(&v)), &v, &c, cfg(10), FreezeMask::none());
    let inputs = ["", "   ", "Сьерра-Леоне \u{E001}", &"x ".repeat(200)];
    let hyps = translate(&out.best, &v, &inputs, 1).unwrap();
    assert_eq!(hyps.len(), inputs.len());
    let beam = translate(&out.best, &v, &inputs, 3).unwrap();
    assert_eq!(beam.len(), inputs.len());
    assert!(translate::<&str>(&out.best, &v, &[], 1).unwrap().is_empty());
}
