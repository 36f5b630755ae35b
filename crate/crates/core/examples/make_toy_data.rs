//! Regenerates the bundled toy corpus.
//!
//! ```text
//! cargo run --example make_toy_data -- data/toy
//! ```

use std::fs;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use turnrank::corpus::{channel_to_jsonl, DialogueExample, Utterance};
use turnrank::synthetic::{random_channel, TopicCorpus};

fn jsonl<T>(items: &[T], line: impl Fn(&T) -> String) -> String {
    items.iter().map(|i| line(i) + "\n").collect()
}

/// An entangled channel; addressees appear only as `name:` prefixes.
fn irc_channel() -> Vec<Utterance> {
    let lines = [
        ("ana", "has anyone set up wifi on the new kernel"),
        ("bo", "my sound card stopped working after the upgrade"),
        ("cy", "ana: which driver does lspci report"),
        ("ana", "cy: it says iwlwifi"),
        ("dee", "bo: try reinstalling pulseaudio"),
        ("bo", "dee: that fixed nothing"),
        ("cy", "ana: load the firmware package then reboot"),
        ("ed", "what time is the release meeting"),
        ("ana", "cy: thanks, wifi works now"),
        ("dee", "ed: tomorrow at noon"),
    ];
    lines
        .iter()
        .enumerate()
        .map(|(i, (from, text))| Utterance::new(i, *from, *text))
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/toy".into()));
    fs::create_dir_all(&dir)?;
    let mut corpus = TopicCorpus::new(2024);

    let adapt: Vec<DialogueExample> = corpus
        .dialogues(2000)
        .into_iter()
        .map(|d| DialogueExample {
            context: d.context,
            response: d.response,
            label: 1,
        })
        .collect();
    fs::write(dir.join("adapt.jsonl"), jsonl(&adapt, DialogueExample::to_jsonl))?;
    fs::write(dir.join("train.jsonl"), jsonl(&corpus.examples(500), DialogueExample::to_jsonl))?;
    fs::write(dir.join("valid.jsonl"), jsonl(&corpus.pools(50, 10), |p| p.to_jsonl()))?;
    fs::write(dir.join("test.jsonl"), jsonl(&corpus.pools(100, 10), |p| p.to_jsonl()))?;

    fs::write(dir.join("channel.jsonl"), channel_to_jsonl(&irc_channel()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut random = random_channel(&mut rng, 50, 8, 0.3);
    while random.len() < 30 {
        random = random_channel(&mut rng, 50, 8, 0.3);
    }
    fs::write(dir.join("random_channel.jsonl"), channel_to_jsonl(&random))?;
    println!("wrote toy corpus to {}", dir.display());
    Ok(())
}
