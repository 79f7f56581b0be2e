mod common;

use silt_core::cot::build_inference_prompt;
use silt_core::cot::CotMode;
use silt_core::interleave::{units_to_global, Schedule};
use silt_core::model::{
    assemble_at_step, greedy_decode, masked_nll, train, AdamConfig, ModelConfig, TrainConfig, Trainer,
};
use silt_core::synth::CorpusParams;
use silt_core::vocab::Special;

fn small_corpus() -> CorpusParams {
    CorpusParams { n_words: 8, min_len: 2, max_len: 3, expansion_r: 3, jitter: 1, n_units: 16, ..Default::default() }
}

fn model(vocab_size: usize, dropout: f64) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        max_seq_len: 64,
        vocab_size,
        dropout_rate: dropout,
        seed: 1,
        ..Default::default()
    }
}

#[test]
fn baseline_never_interleaves() {
    let t = common::toy(&small_corpus(), 3, 20, 300);
    let cfg = TrainConfig { schedule: Schedule::None, total_steps: 5, batch_size: 4, ..Default::default() };
    let mut logs = Vec::new();
    train(&t.pairs, &model(t.vocab.total(), 0.2), &cfg, &t.vocab, &t.bpe, |l| logs.push(*l)).unwrap();
    assert_eq!(logs.len(), 5);
    for l in &logs {
        assert_eq!((l.p, l.f_src, l.f_tgt), (0.0, 0.0, 0.0));
    }
    for step in 0..5 {
        for pair in &t.pairs {
            let ex =
                assemble_at_step(pair, cfg.schedule.text_ratio(step), &cfg, &t.vocab, &t.bpe, step).unwrap().example;
            let s = &ex.segments;
            assert!(ex.tokens[s.i_src.clone()].iter().chain(&ex.tokens[s.i_tgt.clone()]).all(|&x| t.vocab.is_unit(x)));
        }
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let t = common::toy(&small_corpus(), 4, 20, 300);
    let cfg = TrainConfig { total_steps: 1, batch_size: 8, ..Default::default() };
    let mut first = None;
    train(&t.pairs, &model(t.vocab.total(), 0.2), &cfg, &t.vocab, &t.bpe, |l| first = Some(l.loss)).unwrap();
    let uniform = (t.vocab.total() as f64).ln();
    let l0 = first.unwrap();
    assert!((l0 - uniform).abs() < 0.1 * uniform, "{l0} vs {uniform}");
}

#[test]
fn resumed_run_matches_uninterrupted_trace() {
    let t = common::toy(&small_corpus(), 5, 30, 300);
    let cfg = TrainConfig {
        total_steps: 8,
        batch_size: 3,
        schedule: Schedule::Scheduled { p0: 0.9, delta: 0.2, interval: 2 },
        ..Default::default()
    };
    let mcfg = model(t.vocab.total(), 0.2);
    let mut full = Vec::new();
    let end = train(&t.pairs, &mcfg, &cfg, &t.vocab, &t.bpe, |l| full.push(*l)).unwrap();

    let mut a = Trainer::new(&t.pairs, &mcfg, &cfg, &t.vocab, &t.bpe).unwrap();
    let mut split = Vec::new();
    for _ in 0..3 {
        split.push(a.step().unwrap());
    }
    let mut b = Trainer::resume(&t.pairs, a.checkpoint(), &t.vocab, &t.bpe).unwrap();
    while !b.is_done() {
        split.push(b.step().unwrap());
    }
    assert_eq!(
        full.iter().map(|l| l.loss.to_bits()).collect::<Vec<_>>(),
        split.iter().map(|l| l.loss.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(full, split);
    assert_eq!(end, b.checkpoint());
}

#[test]
fn overfits_ten_pairs() {
    let t = common::toy(&small_corpus(), 6, 10, 300);
    let cfg = TrainConfig {
        total_steps: 2000,
        batch_size: 10,
        schedule: Schedule::None,
        adam: AdamConfig { lr: 3e-3, ..Default::default() },
        ..Default::default()
    };
    let mut trainer = Trainer::new(&t.pairs, &model(t.vocab.total(), 0.0), &cfg, &t.vocab, &t.bpe).unwrap();
    let mut reached = None;
    while !trainer.is_done() {
        let log = trainer.step().unwrap();
        if log.loss < 0.05 {
            reached = Some(log.step);
            break;
        }
    }
    assert!(reached.is_some(), "loss never went below 0.05");
}

#[test]
fn copy_task_decodes_the_prompt() {
    let mut t = common::toy(&small_corpus(), 7, 10, 300);
    for p in &mut t.pairs {
        p.tgt_units = p.src_units.clone();
        p.tgt_align = p.src_align.clone();
    }
    let cfg = TrainConfig {
        total_steps: 3000,
        batch_size: 10,
        schedule: Schedule::None,
        cot_mode: CotMode::Direct,
        adam: AdamConfig { lr: 3e-3, ..Default::default() },
        ..Default::default()
    };
    let mut trainer = Trainer::new(&t.pairs, &model(t.vocab.total(), 0.0), &cfg, &t.vocab, &t.bpe).unwrap();
    let mean_loss = |tr: &Trainer| {
        let mut s = 0.0;
        for p in &t.pairs {
            let ex = assemble_at_step(p, 0.0, &cfg, &t.vocab, &t.bpe, 0).unwrap().example;
            s += masked_nll(&tr.params, &ex.tokens, &ex.loss_mask).unwrap().mean();
        }
        s / t.pairs.len() as f64
    };
    while !trainer.is_done() {
        trainer.step().unwrap();
        if trainer.step % 100 == 0 && mean_loss(&trainer) < 0.01 {
            break;
        }
    }
    assert!(mean_loss(&trainer) < 0.01);
    for p in &t.pairs {
        let src = units_to_global(&p.src_units, &t.vocab).unwrap();
        let prompt = build_inference_prompt(&src, CotMode::Direct, &t.vocab).unwrap();
        let out = greedy_decode(&trainer.params, &prompt, 64, &t.vocab).unwrap();
        assert!(out.hit_eos);
        assert_eq!(&out.tokens[..out.tokens.len() - 1], src.as_slice());
        assert_eq!(*out.tokens.last().unwrap(), t.vocab.special(Special::Eos));
    }
}
