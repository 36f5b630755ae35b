//! Two-phase training on a topic corpus against fine-tuning alone.

use turnrank::encoder_input::{ContextMode, PairEncoder};
use turnrank::model::{Model, ModelConfig};
use turnrank::synthetic::TopicCorpus;
use turnrank::tokenizer::Vocabulary;
use turnrank::training::{encode_examples, encode_pools, train, validation_recall_at_1, TrainConfig, TrainData};

fn main() -> turnrank::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut corpus = TopicCorpus::new(seed);
    let vocab = Vocabulary::build(corpus.lexicon(), 1, 1000)?;
    let encoder = PairEncoder::new(&vocab, 48, 3, ContextMode::Alternation);
    let dialogues = corpus.dialogues(2000);
    let labelled = encode_examples(&encoder, &corpus.examples(500))?;
    let pools = encode_pools(&encoder, &corpus.pools(100, 10))?;

    let model_config = ModelConfig {
        hidden_dim: 32,
        num_heads: 2,
        ffn_dim: 64,
        max_seq_len: 48,
        seed,
        ..ModelConfig::toy(vocab.len())
    };
    let adapt = TrainConfig { learning_rate: 3e-3, batch_size: 20, max_epochs: 3, seed, ..Default::default() };
    let finetune = TrainConfig { learning_rate: 3e-3, batch_size: 10, max_epochs: 4, seed, ..Default::default() };

    let plain = train(TrainData::Finetune(&labelled), Model::new(model_config.clone())?, &finetune, None)?;
    println!("fine-tune only:      R_10@1 = {:.3}", validation_recall_at_1(&plain.model, &pools)?);

    let adapted = train(TrainData::Adapt { dialogues: &dialogues, encoder: encoder.clone() }, Model::new(model_config)?, &adapt, None)?;
    let log = &adapted.log;
    println!("adaptation loss {:.3} -> {:.3} over {} steps", log[0].loss, log[log.len() - 1].loss, adapted.steps);
    let tuned = train(TrainData::Finetune(&labelled), adapted.model, &finetune, None)?;
    println!("adapt then fine-tune: R_10@1 = {:.3}", validation_recall_at_1(&tuned.model, &pools)?);
    Ok(())
}
