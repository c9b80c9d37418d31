use proptest::prelude::*;

use framekit::codec::{
    args_input_words, args_target, frame_input_words, fullgen_encode, fullgen_input_words,
    fullgen_parse, multitask_index_text, multitask_parse_args, parse_index_text, Vocabulary, UNK,
};
use framekit::corpus::{
    generate_synthetic, split_corpus, Corpus, GeneratorSpec, RoleAssignment, TokenSpan,
};

fn small_corpus(seed: u64, n: usize) -> Corpus {
    let spec = GeneratorSpec {
        num_examples: n,
        ..GeneratorSpec::default()
    };
    generate_synthetic(&spec, seed).unwrap()
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "the", "rain", "a", "b", "neck", "his", ".", ",", "down", "x1",
    ])
    .prop_map(str::to_owned)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn synthetic_examples_are_valid_and_reload(seed in any::<u64>()) {
        let corpus = small_corpus(seed, 40);
        corpus.validate().unwrap();
        for ex in &corpus.examples {
            prop_assert!(ex.validate().is_ok());
        }
        let back = Corpus::from_jsonl(&corpus.to_jsonl()).unwrap();
        prop_assert_eq!(back, corpus);
    }

    #[test]
    fn generator_is_pure(seed in any::<u64>()) {
        prop_assert_eq!(small_corpus(seed, 15), small_corpus(seed, 15));
    }

    #[test]
    fn split_partitions_the_corpus(seed in any::<u64>(), n in 10usize..60) {
        let corpus = small_corpus(seed, n);
        let (a, b, c) = split_corpus(&corpus, [0.8, 0.1, 0.1], seed).unwrap();
        prop_assert_eq!(a.len() + b.len() + c.len(), n);
        let mut all: Vec<String> = [a, b, c]
            .iter()
            .flat_map(|s| s.examples.iter().map(|e| serde_json::to_string(e).unwrap()))
            .collect();
        let mut orig: Vec<String> = corpus
            .examples
            .iter()
            .map(|e| serde_json::to_string(e).unwrap())
            .collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
    }

    #[test]
    fn index_text_parses_back(
        tokens in prop::collection::vec(word(), 1..15),
        a in any::<prop::sample::Index>(),
        b in any::<prop::sample::Index>(),
    ) {
        let (i, j) = (a.index(tokens.len()), b.index(tokens.len()));
        let trigger = TokenSpan::new(i.min(j), i.max(j)).unwrap();
        let text = multitask_index_text(&tokens, trigger);
        let (back, span) = parse_index_text(&text).unwrap();
        prop_assert_eq!(back, tokens);
        prop_assert_eq!(span, trigger);
    }

    #[test]
    fn args_round_trip_with_overlaps(
        n in 1usize..20,
        raw in prop::collection::vec((0usize..4, any::<prop::sample::Index>(), any::<prop::sample::Index>()), 0..8),
    ) {
        let labels = ["Agent", "Theme", "Goal", "Path"];
        let mut roles: Vec<RoleAssignment> = raw
            .iter()
            .map(|(l, a, b)| {
                let (i, j) = (a.index(n), b.index(n));
                RoleAssignment::new(labels[*l], TokenSpan::new(i.min(j), i.max(j)).unwrap())
            })
            .collect();
        roles.sort_by_key(|r| r.span.start());
        let (parsed, diags) = multitask_parse_args(&args_target(&roles), n);
        prop_assert!(diags.is_empty());
        prop_assert_eq!(parsed, roles);
    }

    #[test]
    fn fullgen_round_trip_keeps_surface_text(seed in any::<u64>()) {
        for ex in &small_corpus(seed, 20).examples {
            let parsed = fullgen_parse(&fullgen_encode(ex).target_text, &ex.tokens, ex.trigger);
            prop_assert_eq!(&parsed.annotation.frame, &ex.frame);
            let surface = |roles: &[RoleAssignment]| {
                let mut v: Vec<(String, String)> = roles
                    .iter()
                    .map(|r| (r.label.clone(), ex.span_text(r.span)))
                    .collect();
                v.sort();
                v
            };
            prop_assert_eq!(surface(&parsed.annotation.roles), surface(&ex.roles));
        }
    }

    #[test]
    fn corpus_vocabulary_has_no_unknowns(seed in any::<u64>()) {
        let corpus = small_corpus(seed, 30);
        let vocab = Vocabulary::build(&corpus);
        for ex in &corpus.examples {
            for words in [
                fullgen_input_words(&ex.tokens, ex.trigger),
                frame_input_words(&ex.tokens, ex.trigger),
                args_input_words(&ex.frame, &ex.tokens, ex.trigger),
            ] {
                let enc = vocab.encode_words(&words);
                prop_assert!(!enc.ids.contains(&UNK));
                prop_assert!(!enc.trigger_positions.is_empty());
            }
            prop_assert!(!vocab.encode(&fullgen_encode(ex).target_text).contains(&UNK));
            prop_assert!(!vocab.encode(&args_target(&ex.roles)).contains(&UNK));
        }
    }
}
