//! Seeded toy corpora for demos, tests and the bundled toy data.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{alternating_speaker, CandidatePool, DialogueExample, Utterance};
use crate::training::Dialogue;

fn speaker_name(i: usize) -> String {
    format!("user{i}")
}

/// A random multi-party channel: up to `max_utterances` messages by up to
/// `max_speakers` speakers, each addressed to another speaker with
/// probability `addressed_fraction`.
pub fn random_channel<R: Rng + ?Sized>(
    rng: &mut R,
    max_utterances: usize,
    max_speakers: usize,
    addressed_fraction: f64,
) -> Vec<Utterance> {
    let len = rng.random_range(1..=max_utterances.max(1));
    let speakers = rng.random_range(1..=max_speakers.max(1));
    (0..len)
        .map(|i| {
            let from = rng.random_range(0..speakers);
            let words = rng.random_range(1..6);
            let text: Vec<String> = (0..words).map(|_| format!("w{}", rng.random_range(0..40))).collect();
            let mut utt = Utterance::new(i, speaker_name(from), text.join(" "));
            if speakers > 1 && rng.random_bool(addressed_fraction) {
                let mut to = rng.random_range(0..speakers - 1);
                if to >= from {
                    to += 1;
                }
                utt = utt.addressed_to(speaker_name(to));
            }
            utt
        })
        .collect()
}

/// Pairs of examples with identical tokens whose label depends only on who
/// speaks the response: the context opener (label 1) or the other speaker
/// (label 0). Returns `2 * pairs` examples, pair members adjacent.
pub fn speaker_task(pairs: usize, seed: u64) -> Vec<DialogueExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phrase = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(2..5);
        (0..n).map(|_| format!("tok{}", rng.random_range(0..12))).collect::<Vec<_>>().join(" ")
    };
    let mut out = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let context = vec![
            Utterance::new(0, "spk_A", phrase(&mut rng)),
            Utterance::new(1, "spk_B", phrase(&mut rng)),
        ];
        let text = phrase(&mut rng);
        for (speaker, label) in [("spk_A", 1), ("spk_B", 0)] {
            out.push(DialogueExample {
                context: context.clone(),
                response: Utterance::new(2, speaker, text.clone()),
                label,
            });
        }
    }
    out
}

/// Two-party dialogues whose utterances share a hidden topic: each topic owns a
/// small word set, and every utterance mixes topic words with shared filler
/// words. Each utterance is addressed to the other party.
#[derive(Debug, Clone)]
pub struct TopicCorpus {
    pub topics: usize,
    pub words_per_topic: usize,
    pub filler_words: usize,
    /// Probability that a word is drawn from the topic rather than filler.
    pub topic_density: f64,
    pub min_context: usize,
    pub max_context: usize,
    rng: ChaCha8Rng,
}

impl TopicCorpus {
    pub fn new(seed: u64) -> Self {
        TopicCorpus {
            topics: 4,
            words_per_topic: 6,
            filler_words: 10,
            topic_density: 0.8,
            min_context: 2,
            max_context: 4,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Every word the corpus can emit.
    pub fn lexicon(&self) -> Vec<String> {
        let mut words: Vec<String> = (0..self.topics)
            .flat_map(|t| (0..self.words_per_topic).map(move |w| format!("t{t}w{w}")))
            .collect();
        words.extend((0..self.filler_words).map(|f| format!("f{f}")));
        words
    }

    fn utterance_text(&mut self, topic: usize) -> String {
        let n = self.rng.random_range(3..7);
        (0..n)
            .map(|_| {
                if self.rng.random_bool(self.topic_density) {
                    format!("t{topic}w{}", self.rng.random_range(0..self.words_per_topic))
                } else {
                    format!("f{}", self.rng.random_range(0..self.filler_words))
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn dialogue_on(&mut self, topic: usize) -> Dialogue {
        let turns = self.rng.random_range(self.min_context..=self.max_context);
        let context = (0..turns)
            .map(|i| {
                let text = self.utterance_text(topic);
                Utterance::new(i, alternating_speaker(i), text).addressed_to(alternating_speaker(i + 1))
            })
            .collect();
        let response = Utterance::new(turns, alternating_speaker(turns), self.utterance_text(topic))
            .addressed_to(alternating_speaker(turns + 1));
        Dialogue { context, response }
    }

    fn other_topic(&mut self, topic: usize) -> usize {
        let t = self.rng.random_range(0..self.topics - 1);
        if t >= topic {
            t + 1
        } else {
            t
        }
    }

    pub fn dialogue(&mut self) -> Dialogue {
        let topic = self.rng.random_range(0..self.topics);
        self.dialogue_on(topic)
    }

    pub fn dialogues(&mut self, n: usize) -> Vec<Dialogue> {
        (0..n).map(|_| self.dialogue()).collect()
    }

    /// Balanced labelled pairs; negatives take a response about another topic.
    pub fn examples(&mut self, n: usize) -> Vec<DialogueExample> {
        (0..n)
            .map(|i| {
                let topic = self.rng.random_range(0..self.topics);
                let Dialogue { context, mut response } = self.dialogue_on(topic);
                let label = u8::from(i % 2 == 0);
                if label == 0 {
                    let other = self.other_topic(topic);
                    response.text = self.utterance_text(other);
                }
                DialogueExample { context, response, label }
            })
            .collect()
    }

    /// Pools of `size` candidates with the true response at a random slot and
    /// off-topic distractors elsewhere.
    pub fn pools(&mut self, n: usize, size: usize) -> Vec<CandidatePool> {
        (0..n)
            .map(|_| {
                let topic = self.rng.random_range(0..self.topics);
                let Dialogue { context, response } = self.dialogue_on(topic);
                let slot = self.rng.random_range(0..size);
                let candidates = (0..size)
                    .map(|j| {
                        if j == slot {
                            (response.clone(), 1)
                        } else {
                            let other = self.other_topic(topic);
                            let text = self.utterance_text(other);
                            (Utterance { text, ..response.clone() }, 0)
                        }
                    })
                    .collect();
                CandidatePool::new(context, candidates).expect("pool has candidates")
            })
            .collect()
    }
}

/// Examples with unrelated random tokens and alternating labels, for
/// memorization probes.
pub fn random_examples(n: usize, seed: u64) -> Vec<DialogueExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..30).map(|i| format!("r{i}")).collect();
    let phrase = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(3..7);
        (0..n).map(|_| words.choose(rng).unwrap().clone()).collect::<Vec<_>>().join(" ")
    };
    (0..n)
        .map(|i| DialogueExample {
            context: vec![
                Utterance::new(0, "spk_A", phrase(&mut rng)),
                Utterance::new(1, "spk_B", phrase(&mut rng)),
            ],
            response: Utterance::new(2, "spk_A", phrase(&mut rng)),
            label: u8::from(i % 2 == 0),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speaker_pairs_share_text() {
        let ex = speaker_task(10, 3);
        assert_eq!(ex.len(), 20);
        for pair in ex.chunks(2) {
            assert_eq!(pair[0].context, pair[1].context);
            assert_eq!(pair[0].response.text, pair[1].response.text);
            assert_ne!(pair[0].label, pair[1].label);
        }
    }

    #[test]
    fn pools_have_one_positive() {
        let mut corpus = TopicCorpus::new(1);
        for pool in corpus.pools(20, 10) {
            assert_eq!(pool.candidates.len(), 10);
            assert_eq!(pool.labels().iter().filter(|&&l| l == 1).count(), 1);
        }
    }

    #[test]
    fn channels_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let ch = random_channel(&mut rng, 50, 8, 0.3);
            assert!(!ch.is_empty() && ch.len() <= 50);
            for u in &ch {
                assert_ne!(u.spoken_to.as_deref(), Some(u.spoken_from.as_str()));
            }
        }
    }
}
