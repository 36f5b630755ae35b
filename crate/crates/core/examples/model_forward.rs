//! Runs the encoder on one input, inspects the heads and attention, and
//! round-trips a checkpoint.

use turnrank::corpus::Utterance;
use turnrank::encoder_input::{ContextMode, PairEncoder};
use turnrank::model::{Model, ModelConfig};
use turnrank::tokenizer::Vocabulary;

fn main() -> turnrank::Result<()> {
    let context = vec![Utterance::new(0, "spk_A", "is the mirror down"), Utterance::new(1, "spk_B", "works for me")];
    let response = Utterance::new(2, "spk_A", "then it is my proxy");
    let vocab = Vocabulary::build(context.iter().chain([&response]).map(|u| u.text.as_str()), 1, 64)?;
    let encoder = PairEncoder::new(&vocab, 32, 3, ContextMode::Alternation);
    let input = encoder.encode(&context, &response)?;

    let model = Model::new(ModelConfig { max_seq_len: 32, ..ModelConfig::toy(vocab.len()) })?;
    println!("{} parameters", model.params.num_parameters());
    let out = model.forward(&input)?;
    println!("match logit {:.6}, score {:.6}", out.match_logit, model.score(&input)?);
    println!("nsp logits {:?}", out.nsp_logits);
    let mlm = out.mlm_logits.as_ref().expect("mlm head on by default");
    println!("mlm logits {:?}", mlm.dim());
    let cls_attention = out.trace.attention(0, 0).row(0);
    println!("layer 0 head 0 [CLS] attention sums to {:.12}", cls_attention.sum());

    let restored = Model::from_checkpoint_str(&model.to_checkpoint_string())?;
    assert_eq!(restored.score(&input)?, model.score(&input)?);
    println!("checkpoint round-trip reproduces the score exactly");
    Ok(())
}
