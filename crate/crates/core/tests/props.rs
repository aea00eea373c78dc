//! Property tests over generator-driven documents and random numeric inputs.

use docrel_core::corpus::markup::{insert_markup, WordTokenizer, CLS_TOKEN, MARKER_TOKEN};
use docrel_core::corpus::synthetic::{generate, SyntheticConfig};
use docrel_core::corpus::{build_pseudo_document, docred};
use docrel_core::encoder::{Encoder, EncoderConfig};
use docrel_core::graph::{Graph, ParamStore};
use docrel_core::infer::{self, TripletKey};
use docrel_core::repr;
use docrel_core::tensor::Tensor;
use proptest::prelude::*;
use std::collections::BTreeSet;

fn small_corpus(seed: u64) -> docrel_core::corpus::Corpus {
    generate(&SyntheticConfig {
        documents: 2,
        seed,
        min_entities: 3,
        max_entities: 5,
        min_relations: 1,
        max_relations: 3,
        distractors: 1,
        fillers: 1,
        ..SyntheticConfig::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn markup_strip_reproduces_tokens_and_anchors_hold(seed in 0u64..10_000) {
        for doc in &small_corpus(seed).documents {
            let marked = insert_markup(doc, &WordTokenizer).unwrap();
            let flat: Vec<String> = doc.sentences.iter().flatten().cloned().collect();
            prop_assert_eq!(marked.strip_special(), flat);
            for s in 0..doc.sentences.len() {
                prop_assert_eq!(&marked.tokens[marked.sentence_anchor(s).unwrap()], CLS_TOKEN);
            }
            for (ei, e) in doc.entities.iter().enumerate() {
                for oi in 0..e.mentions.len() {
                    let a = marked.mention_anchor(ei, oi).unwrap();
                    prop_assert_eq!(&marked.tokens[a], MARKER_TOKEN);
                }
            }
        }
    }

    #[test]
    fn parse_serialize_parse_is_fixed_point(seed in 0u64..10_000) {
        let corpus = small_corpus(seed);
        let json = docred::corpus_to_json(&corpus);
        let reparsed = docred::parse_corpus(&json).unwrap();
        prop_assert_eq!(&corpus, &reparsed);
        prop_assert_eq!(docred::corpus_to_json(&reparsed), json);
    }

    #[test]
    fn full_sentence_pseudo_document_serializes_identically(seed in 0u64..10_000) {
        for doc in &small_corpus(seed).documents {
            let kept: BTreeSet<usize> = (0..doc.sentences.len()).collect();
            let pseudo = build_pseudo_document(doc, &kept).unwrap();
            prop_assert_eq!(
                serde_json::to_string(&pseudo).unwrap(),
                serde_json::to_string(doc).unwrap()
            );
        }
    }

    #[test]
    fn pooling_is_permutation_invariant_and_monotone(
        rows in proptest::collection::vec(
            proptest::collection::vec(-3.0f64..3.0, 6),
            1..5,
        ),
        extra in proptest::collection::vec(-3.0f64..3.0, 6),
    ) {
        let mut g = Graph::new();
        let vars: Vec<_> = rows
            .iter()
            .map(|r| g.constant(Tensor::row_vec(r.clone())))
            .collect();
        let pooled = repr::pool_entity(&mut g, &vars).unwrap();
        let mut reversed = vars.clone();
        reversed.reverse();
        let pooled_rev = repr::pool_entity(&mut g, &reversed).unwrap();
        prop_assert!(g.value(pooled).max_abs_diff(g.value(pooled_rev)) < 1e-12);

        // adding a mention never decreases any component
        let extra_var = g.constant(Tensor::row_vec(extra));
        let mut grown = vars.clone();
        grown.push(extra_var);
        let pooled_grown = repr::pool_entity(&mut g, &grown).unwrap();
        for j in 0..6 {
            prop_assert!(g.value(pooled_grown).get(0, j) >= g.value(pooled).get(0, j) - 1e-12);
        }
    }

    #[test]
    fn pair_context_weights_are_a_simplex_and_c_is_bounded(
        a in proptest::collection::vec(0.0f64..1.0, 5),
        b in proptest::collection::vec(0.0f64..1.0, 5),
    ) {
        prop_assume!(a.iter().zip(&b).any(|(&x, &y)| x * y > 1e-12));
        let mut g = Graph::new();
        let h = Tensor::from_fn(5, 3, |r, c| ((r * 3 + c) as f64 * 0.7).sin());
        let hv = g.constant(h.clone());
        let av = g.constant(Tensor::row_vec(a));
        let bv = g.constant(Tensor::row_vec(b));
        let ctx = repr::pair_context(&mut g, hv, av, bv).unwrap();
        let w = g.value(ctx.weights);
        let sum: f64 = w.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
        prop_assert!(w.data().iter().all(|&x| x >= 0.0));
        // weighted average stays inside the columnwise hull bounds
        for j in 0..3 {
            let col: Vec<f64> = (0..5).map(|i| h.get(i, j)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let c = g.value(ctx.c).get(0, j);
            prop_assert!(c >= lo - 1e-9 && c <= hi + 1e-9);
        }
    }

    #[test]
    fn attention_rows_stay_stochastic_after_windowing(
        seed in 0u64..500,
        n_tokens in 30usize..90,
    ) {
        // force multi-window encoding with a small window
        let mut cfg = EncoderConfig::miniature(seed);
        cfg.window = 24;
        cfg.overlap = 8;
        let mut store = ParamStore::new();
        let enc = Encoder::new_miniature(&mut store, cfg).unwrap();
        // single synthetic sentence long enough to window
        let words: Vec<Vec<String>> = vec![(0..n_tokens).map(|i| format!("w{i}")).collect()];
        let doc = docrel_core::corpus::Document {
            title: "w".into(),
            sentences: words,
            entities: vec![],
            gold_relations: vec![],
        };
        let marked = insert_markup(&doc, &WordTokenizer).unwrap();
        let mut g = Graph::new();
        let out = enc.encode(&mut g, &store, &marked).unwrap();
        let a = g.value(out.a);
        for r in 0..a.rows() {
            let s: f64 = a.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-5, "row {} sums to {}", r, s);
            prop_assert!(a.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn retained_sets_nest_for_any_confidences(
        l_o in proptest::collection::vec(-4.0f64..4.0, 1..120),
    ) {
        let confs: Vec<infer::TripletConfidence> = l_o
            .iter()
            .enumerate()
            .map(|(i, &v)| infer::TripletConfidence {
                key: TripletKey { doc: i / 9, head: i % 3, tail: 3 + i % 2, relation: i % 5 },
                l_o: v,
                l_d: None,
                l_m: None,
                l_b: None,
            })
            .collect();
        let mut prev_rejected: Option<BTreeSet<usize>> = None;
        for theta in [0.0, 5.0, 17.3, 50.0, 99.9, 100.0] {
            let set = infer::build_uncertain_set(&confs, theta, usize::MAX);
            let rejected: BTreeSet<usize> = set.members.iter().copied().collect();
            if let Some(prev) = &prev_rejected {
                prop_assert!(prev.is_subset(&rejected));
            }
            prev_rejected = Some(rejected);
        }
    }
}
