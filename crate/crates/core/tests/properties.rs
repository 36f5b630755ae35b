mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use turnrank::corpus::Utterance;
use turnrank::disentangle::{cap_context, filter_channel, Role};
use turnrank::encoder_input::{trim_to_budget, ContextMode, PairEncoder, RESPONSE_FLOOR};
use turnrank::eval::{evaluate, rank_scores, EvalMode, RankedPool};
use turnrank::model::Model;
use turnrank::synthetic::random_channel;
use turnrank::tokenizer::{Vocabulary, CLS, EOT, EOU, PAD, SEP};
use turnrank::training::plan_masking;

fn channel_strategy() -> impl Strategy<Value = Vec<Utterance>> {
    (any::<u64>(), 1usize..60, 1usize..10, 0.0f64..1.0)
        .prop_map(|(seed, len, speakers, density)| random_channel(&mut ChaCha8Rng::seed_from_u64(seed), len, speakers, density))
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["ls", "grep", "mount", "disk", "why", "ok", "sudo", "boot"]), 1..8)
        .prop_map(|w| w.join(" "))
}

fn fixed_vocab() -> Vocabulary {
    Vocabulary::build(["ls grep mount disk why ok sudo boot"], 1, 100).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn filtering_is_an_ordered_subsequence(channel in channel_strategy(), s in 0usize..10) {
        let target = format!("user{s}");
        let filtered = filter_channel(&channel, &target);
        let indices: Vec<usize> = filtered.utterances.iter().map(|(u, _)| u.index).collect();
        prop_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        for (u, role) in &filtered.utterances {
            prop_assert_eq!(u, &channel[u.index]);
            match role {
                Role::FromMatch => prop_assert_eq!(&u.spoken_from, &target),
                Role::ToMatch => {
                    prop_assert_ne!(&u.spoken_from, &target);
                    prop_assert_eq!(u.spoken_to.as_deref(), Some(target.as_str()));
                }
            }
        }
        let involved = channel
            .iter()
            .filter(|u| u.spoken_from == target || u.spoken_to.as_deref() == Some(&target))
            .count();
        prop_assert_eq!(filtered.len(), involved);
    }

    #[test]
    fn capping_keeps_the_most_recent(channel in channel_strategy(), cap in 1usize..30) {
        let filtered = filter_channel(&channel, "user0");
        let capped = cap_context(filtered.clone(), cap);
        let keep = filtered.len().min(cap);
        prop_assert_eq!(&capped.utterances[..], &filtered.utterances[filtered.len() - keep..]);
    }

    #[test]
    fn trimming_respects_the_budget(ctx in 0usize..80, resp in 1usize..40, max_len in 8usize..64) {
        let context: Vec<usize> = (0..ctx).collect();
        let response: Vec<usize> = (1000..1000 + resp).collect();
        match trim_to_budget(&context, &response, max_len) {
            Ok((c, r)) => {
                prop_assert!(c.len() + r.len() + 3 <= max_len);
                prop_assert!(context.ends_with(&c));
                prop_assert!(response.starts_with(&r));
                if r.len() < response.len() {
                    prop_assert!(c.is_empty());
                    prop_assert!(r.len() >= RESPONSE_FLOOR);
                }
                if ctx + resp + 3 <= max_len {
                    prop_assert_eq!((c.len(), r.len()), (ctx, resp));
                }
            }
            Err(_) => prop_assert!(resp > max_len - 3 && max_len - 3 < RESPONSE_FLOOR),
        }
    }

    #[test]
    fn encoded_tracks_are_parallel(texts in prop::collection::vec(words(), 1..6), resp in words(), max_len in 16usize..64) {
        let vocab = fixed_vocab();
        let context: Vec<Utterance> = texts.iter().enumerate().map(|(i, t)| Utterance::new(i, format!("s{}", i % 3), t.clone())).collect();
        let response = Utterance::new(texts.len(), "s0", resp);
        for mode in [ContextMode::Alternation, ContextMode::Disentangle { max_utterances: 25 }] {
            let input = PairEncoder::new(&vocab, max_len, 3, mode).encode(&context, &response).unwrap();
            prop_assert_eq!(input.len(), max_len);
            for track in [&input.segment_ids, &input.speaker_ids, &input.position_ids] {
                prop_assert_eq!(track.len(), max_len);
            }
            let active = input.active_len();
            prop_assert!(input.attention_mask[..active].iter().all(|&m| m == 1));
            prop_assert!(input.attention_mask[active..].iter().all(|&m| m == 0));
            prop_assert!(input.token_ids[active..].iter().all(|&t| t == PAD));
            prop_assert_eq!(input.token_ids[0], CLS);
            prop_assert_eq!(input.token_ids[active - 1], SEP);
            prop_assert_eq!(input.token_ids.iter().filter(|&&t| t == SEP).count(), 2);
            prop_assert!(input.speaker_ids.iter().all(|&s| s < 3));
        }
    }

    #[test]
    fn ranking_is_a_sorted_permutation(scores in prop::collection::vec(0u8..6, 1..20)) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let order = rank_scores(&scores).unwrap();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..scores.len()).collect::<Vec<_>>());
        for w in order.windows(2) {
            prop_assert!(scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
        }
    }

    #[test]
    fn metrics_lie_in_the_unit_interval(
        pools in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 10), prop::collection::vec(0u8..2, 10)), 1..20)
    ) {
        let ranked: Vec<RankedPool> = pools.into_iter().map(|(s, l)| RankedPool::from_scores(s, l).unwrap()).collect();
        if let Ok(report) = evaluate(&ranked, &[(10, 1), (10, 5)], EvalMode::Lenient) {
            let r1 = report.recall_at[&(10, 1)];
            let r5 = report.recall_at[&(10, 5)];
            for v in [r1, r5, report.map_score, report.mrr, report.p_at_1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(r1 <= r5);
            prop_assert!(report.p_at_1 <= report.mrr);
        } else {
            prop_assert!(ranked.iter().all(|p| !p.has_answer()));
        }
    }

    #[test]
    fn masking_never_touches_structure(texts in prop::collection::vec(words(), 1..6), resp in words(), seed in any::<u64>()) {
        let vocab = fixed_vocab();
        let context: Vec<Utterance> = texts.iter().enumerate().map(|(i, t)| Utterance::new(i, format!("s{}", i % 2), t.clone())).collect();
        let input = PairEncoder::new(&vocab, 64, 3, ContextMode::Alternation).encode(&context, &Utterance::new(9, "s0", resp)).unwrap();
        let plan = plan_masking(&input, vocab.len(), 0.15, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let idx = plan.indices();
        prop_assert!(!idx.is_empty());
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        for p in &plan.positions {
            prop_assert_eq!(input.attention_mask[p.index], 1);
            prop_assert!(!matches!(p.original, CLS | SEP | EOU | EOT | PAD));
            prop_assert_eq!(p.original, input.token_ids[p.index]);
        }
        let corrupted = plan.apply(&input);
        for i in 0..input.len() {
            if !idx.contains(&i) {
                prop_assert_eq!(corrupted.token_ids[i], input.token_ids[i]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn padding_does_not_change_scores(seed in any::<u64>(), active in 4usize..16, extra in 1usize..8) {
        let config = common::grad_check_config();
        let model = Model::new(config.clone()).unwrap();
        let mut rng = common::seeded(seed);
        let short = common::random_input(&mut rng, config.vocab_size, 16, active);
        let mut long = short.clone();
        let len = 16 + extra;
        long.token_ids.resize(len, PAD);
        long.segment_ids.resize(len, 0);
        long.speaker_ids.resize(len, 0);
        long.attention_mask.resize(len, 0);
        long.position_ids = (0..len).collect();
        // Garbage in padded rows must stay invisible.
        let mut noisy = long.clone();
        for i in active..len {
            noisy.token_ids[i] = 7 + i % 5;
            noisy.speaker_ids[i] = 2;
        }
        let a = model.score(&short).unwrap();
        prop_assert!((a - model.score(&long).unwrap()).abs() < 1e-12);
        prop_assert!((a - model.score(&noisy).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zeroed_speaker_table_ignores_roles(seed in any::<u64>(), active in 4usize..20) {
        let config = common::grad_check_config();
        let mut model = Model::new(config.clone()).unwrap();
        model.params.zero_speaker_table();
        let mut rng = common::seeded(seed);
        let input = common::random_input(&mut rng, config.vocab_size, config.max_seq_len, active);
        let mut swapped = input.clone();
        for s in &mut swapped.speaker_ids[1..active] {
            *s = 3 - (*s).max(1);
        }
        prop_assert_eq!(model.score(&input).unwrap().to_bits(), model.score(&swapped).unwrap().to_bits());
    }
}
