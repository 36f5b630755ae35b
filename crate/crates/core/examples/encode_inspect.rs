//! Shows the four id tracks built for one context/response pair under both
//! context modes.

use turnrank::corpus::Utterance;
use turnrank::encoder_input::{ContextMode, PairEncoder};
use turnrank::tokenizer::Vocabulary;

fn main() -> turnrank::Result<()> {
    let context = vec![
        Utterance::new(0, "ana", "my wifi dropped").addressed_to("cy"),
        Utterance::new(1, "bo", "anyone around"),
        Utterance::new(2, "cy", "which driver").addressed_to("ana"),
        Utterance::new(3, "cy", "check lspci").addressed_to("ana"),
    ];
    let response = Utterance::new(4, "ana", "it says iwlwifi").addressed_to("cy");
    let texts = context.iter().chain([&response]).map(|u| u.text.as_str());
    let vocab = Vocabulary::build(texts, 1, 100)?;

    for mode in [ContextMode::Alternation, ContextMode::Disentangle { max_utterances: 25 }] {
        let encoder = PairEncoder::new(&vocab, 24, 3, mode);
        println!("{mode:?}");
        print!("{}", encoder.encode(&context, &response)?.inspect(&vocab));
        println!();
    }
    Ok(())
}
