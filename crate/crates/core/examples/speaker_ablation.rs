//! Token-identical pairs whose label depends only on who speaks the response.
//! Without speaker embeddings the pair members are indistinguishable.

use turnrank::encoder_input::{ContextMode, PairEncoder};
use turnrank::model::{Model, ModelConfig};
use turnrank::synthetic::speaker_task;
use turnrank::tokenizer::Vocabulary;
use turnrank::training::{accuracy, encode_examples, train, TrainConfig, TrainData};

fn main() -> turnrank::Result<()> {
    let examples = speaker_task(100, 1);
    let texts = examples.iter().flat_map(|e| e.context.iter().chain([&e.response]).map(|u| u.text.clone()));
    let vocab = Vocabulary::build(texts.collect::<Vec<_>>(), 1, 100)?;
    let encoder = PairEncoder::new(&vocab, 32, 3, ContextMode::Alternation);
    let data = encode_examples(&encoder, &examples)?;
    let model_config = ModelConfig { max_seq_len: 32, ..ModelConfig::toy(vocab.len()) };

    for disabled in [true, false] {
        let config = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 20,
            max_epochs: 50,
            max_steps: Some(500),
            seed: 1,
            disable_speaker_embeddings: disabled,
            ..Default::default()
        };
        let trained = train(TrainData::Finetune(&data), Model::new(model_config.clone())?, &config, None)?.model;
        let identical = data
            .chunks(2)
            .filter(|pair| trained.score(&pair[0].input).unwrap() == trained.score(&pair[1].input).unwrap())
            .count();
        println!(
            "speaker embeddings {}: accuracy {:.3}, {identical}/{} pairs scored identically",
            if disabled { "off" } else { "on " },
            accuracy(&trained, &data)?,
            data.len() / 2
        );
    }
    Ok(())
}
