use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use turnrank::encoder_input::{ContextMode, PairEncoder};
use turnrank::model::{Model, ModelConfig, ModelParams};
use turnrank::synthetic::TopicCorpus;
use turnrank::tokenizer::Vocabulary;
use turnrank::training::{
    adaptation_validation_set, build_nsp_pair, encode_examples, encode_pools, learning_rate_at, train, AdamW, NspBranch,
    TrainConfig, TrainData, Validation,
};

fn small(vocab: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: 16,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 32,
        max_seq_len: 48,
        ..ModelConfig::toy(vocab)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn finetuning_is_deterministic_and_seed_sensitive() {
    let mut corpus = TopicCorpus::new(4);
    let vocab = Vocabulary::build(corpus.lexicon(), 1, 100).unwrap();
    let encoder = PairEncoder::new(&vocab, 48, 3, ContextMode::Alternation);
    let data = encode_examples(&encoder, &corpus.examples(60)).unwrap();
    let config = TrainConfig { learning_rate: 1e-3, batch_size: 8, max_epochs: 1, seed: 3, ..Default::default() };
    let run = |config: &TrainConfig| train(TrainData::Finetune(&data), Model::new(small(vocab.len())).unwrap(), config, None).unwrap();
    let a = run(&config);
    let b = run(&config);
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);
    assert_eq!(a.steps, 8);
    let c = run(&TrainConfig { seed: 4, ..config });
    assert_ne!(a.model, c.model);
}

#[test]
fn adaptation_loss_falls_and_is_deterministic() {
    let mut corpus = TopicCorpus::new(5);
    let vocab = Vocabulary::build(corpus.lexicon(), 1, 100).unwrap();
    let encoder = PairEncoder::new(&vocab, 48, 3, ContextMode::Alternation);
    let dialogues = corpus.dialogues(400);
    let config = TrainConfig { learning_rate: 3e-3, batch_size: 10, max_epochs: 2, seed: 1, ..Default::default() };
    let run = || {
        train(
            TrainData::Adapt { dialogues: &dialogues, encoder: encoder.clone() },
            Model::new(small(vocab.len())).unwrap(),
            &config,
            None,
        )
        .unwrap()
    };
    let out = run();
    let losses: Vec<f64> = out.log.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 80);
    assert!(median(&losses[60..]) < median(&losses[..20]), "{losses:?}");
    assert_eq!(out.model, run().model);
}

#[test]
fn learning_rate_decays_linearly() {
    let mut corpus = TopicCorpus::new(6);
    let vocab = Vocabulary::build(corpus.lexicon(), 1, 100).unwrap();
    let encoder = PairEncoder::new(&vocab, 48, 3, ContextMode::Alternation);
    let data = encode_examples(&encoder, &corpus.examples(40)).unwrap();
    let config = TrainConfig { learning_rate: 0.01, batch_size: 4, max_epochs: 2, ..Default::default() };
    let out = train(TrainData::Finetune(&data), Model::new(small(vocab.len())).unwrap(), &config, None).unwrap();
    assert_eq!(out.log.len(), 20);
    for (i, r) in out.log.iter().enumerate() {
        assert!((r.lr - 0.01 * (1.0 - i as f64 / 20.0)).abs() < 1e-15);
        assert_eq!(r.lr, learning_rate_at(0.01, i, 20));
    }
    let capped = train(
        TrainData::Finetune(&data),
        Model::new(small(vocab.len())).unwrap(),
        &TrainConfig { max_steps: Some(7), ..config },
        None,
    )
    .unwrap();
    assert_eq!(capped.steps, 7);
}

#[test]
fn validation_keeps_the_best_epoch() {
    let mut corpus = TopicCorpus::new(7);
    let vocab = Vocabulary::build(corpus.lexicon(), 1, 100).unwrap();
    let encoder = PairEncoder::new(&vocab, 48, 3, ContextMode::Alternation);
    let data = encode_examples(&encoder, &corpus.examples(40)).unwrap();
    let pools = Validation::Pools(encode_pools(&encoder, &corpus.pools(10, 10)).unwrap());
    let config = TrainConfig { learning_rate: 1e-3, batch_size: 10, max_epochs: 3, ..Default::default() };
    let out = train(TrainData::Finetune(&data), Model::new(small(vocab.len())).unwrap(), &config, Some(&pools)).unwrap();
    assert_eq!(out.validation.len(), 3);
    let best = out.best_epoch.unwrap();
    assert!(out.validation.iter().all(|&v| v <= out.validation[best]));

    let dialogues = corpus.dialogues(40);
    let items = Validation::Adaptation(adaptation_validation_set(&dialogues, &encoder, 0.15, 0).unwrap());
    let adapted = train(
        TrainData::Adapt { dialogues: &dialogues, encoder: encoder.clone() },
        Model::new(small(vocab.len())).unwrap(),
        &config,
        Some(&items),
    )
    .unwrap();
    assert_eq!(adapted.validation.len(), 3);
}

#[test]
fn negatives_take_the_true_speaker() {
    let mut corpus = TopicCorpus::new(8);
    let vocab = Vocabulary::build(corpus.lexicon(), 1, 100).unwrap();
    let encoder = PairEncoder::new(&vocab, 48, 3, ContextMode::Disentangle { max_utterances: 25 });
    let dialogues = corpus.dialogues(20);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..dialogues.len() {
        let (pos, one) = build_nsp_pair(&dialogues, i, &encoder, &mut rng, Some(NspBranch::Positive)).unwrap();
        let (neg, zero) = build_nsp_pair(&dialogues, i, &encoder, &mut rng, Some(NspBranch::Negative)).unwrap();
        assert_eq!((one, zero), (1, 0));
        let (c, _) = encoder.roles(&dialogues[i].context, &dialogues[i].response);
        assert!(!c.is_empty());
        let ctx_end = pos.segment_ids.iter().position(|&s| s == 1).unwrap();
        assert_eq!(&pos.speaker_ids[..ctx_end], &neg.speaker_ids[..ctx_end]);
        assert_eq!(&pos.token_ids[..ctx_end], &neg.token_ids[..ctx_end]);
        assert_eq!(neg.speaker_ids[ctx_end], pos.speaker_ids[ctx_end]);
    }
}

/// Element-by-element AdamW, written from the update rule.
struct ReferenceAdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl ReferenceAdamW {
    fn step(&mut self, params: &mut [(String, Vec<f64>)], grads: &[Vec<f64>], lr: f64, wd: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-6);
        self.t += 1;
        for (k, (name, p)) in params.iter_mut().enumerate() {
            let decay = if name.ends_with("_bias") || name.contains("norm") { 0.0 } else { wd };
            for i in 0..p.len() {
                let g = grads[k][i];
                self.m[k][i] = b1 * self.m[k][i] + (1.0 - b1) * g;
                self.v[k][i] = b2 * self.v[k][i] + (1.0 - b2) * g * g;
                let m_hat = self.m[k][i] / (1.0 - b1.powi(self.t));
                let v_hat = self.v[k][i] / (1.0 - b2.powi(self.t));
                p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + decay * p[i]);
            }
        }
    }
}

fn flatten(p: &ModelParams) -> Vec<(String, Vec<f64>)> {
    p.tensors().into_iter().map(|(n, t)| (n, t.iter().copied().collect())).collect()
}

#[test]
fn adamw_matches_reference() {
    let config = small(20);
    let mut params = ModelParams::init(&config).unwrap();
    let mut reference = flatten(&params);
    let mut ours = AdamW::new(&params, 0.9, 0.999, 1e-6, 0.01);
    let mut oracle = ReferenceAdamW {
        m: reference.iter().map(|(_, v)| vec![0.0; v.len()]).collect(),
        v: reference.iter().map(|(_, v)| vec![0.0; v.len()]).collect(),
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for step in 0..4 {
        let mut grads = params.zeros_like();
        for (_, g) in grads.tensors_mut() {
            g.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        let flat: Vec<Vec<f64>> = flatten(&grads).into_iter().map(|(_, v)| v).collect();
        let lr = 0.01 / f64::from(step + 1);
        ours.step(&mut params, &grads, lr);
        oracle.step(&mut reference, &flat, lr, 0.01);
    }
    for ((name, got), (_, want)) in flatten(&params).iter().zip(&reference) {
        let worst = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-14, "{name}: {worst}");
    }
}

#[test]
fn checkpoints_round_trip_exactly() {
    let mut corpus = TopicCorpus::new(9);
    let vocab = Vocabulary::build(corpus.lexicon(), 1, 100).unwrap();
    let encoder = PairEncoder::new(&vocab, 48, 3, ContextMode::Alternation);
    let data = encode_examples(&encoder, &corpus.examples(20)).unwrap();
    let config = TrainConfig { learning_rate: 1e-3, batch_size: 10, max_epochs: 1, ..Default::default() };
    let trained = train(TrainData::Finetune(&data), Model::new(small(vocab.len())).unwrap(), &config, None).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    trained.save(&path).unwrap();
    let restored = Model::load(&path).unwrap();
    assert_eq!(restored, trained);
    for x in &data {
        assert_eq!(restored.score(&x.input).unwrap().to_bits(), trained.score(&x.input).unwrap().to_bits());
    }
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.truncate(text.len() / 2);
    assert!(Model::from_checkpoint_str(&text).is_err());
}
