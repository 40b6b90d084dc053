use gain_core::corpus::{
    entity_spans, repair_bio, spans_to_tags, tags_to_onehot, validate_bio, Dataset, Sentence, Tag,
    NUM_TAGS,
};
use gain_core::ensemble::{avg_logits, kfold_split, weighted_token_vote};
use gain_core::gazetteer::FeatureMatrix;
use gain_core::metrics::evaluate;
use gain_core::model::{
    softmax_decode, span_decode, ClassifierKind, CrfScores, IntegrationMode, ModelBundle, ModelConfig, Vocab,
};
use gain_core::numcore::{kl_pair_loss, log_softmax_rows, softmax_rows, Tape, Tensor};
use gain_core::seed::rng_from;
use proptest::prelude::*;
use rand::Rng;

fn valid_tags(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Tag>> {
    prop::collection::vec(0..NUM_TAGS, len).prop_map(|v| {
        let mut tags: Vec<Tag> = v.into_iter().map(|i| Tag::new(i).unwrap()).collect();
        repair_bio(&mut tags);
        tags
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-8.0f64..8.0, rows * cols).prop_map(move |v| Tensor::matrix(rows, cols, v).unwrap())
}

fn sentence_pair() -> impl Strategy<Value = (Sentence, Sentence)> {
    (1usize..10)
        .prop_flat_map(|n| (valid_tags(n..n + 1), valid_tags(n..n + 1)))
        .prop_map(|(g, p)| {
            let toks: Vec<String> = (0..g.len()).map(|i| format!("w{i}")).collect();
            (Sentence::new(toks.clone(), g).unwrap(), Sentence::new(toks, p).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn spans_and_tags_are_inverse(tags in valid_tags(0..20)) {
        let spans = entity_spans(&tags);
        prop_assert_eq!(spans_to_tags(&spans, tags.len()), tags.clone());
        prop_assert_eq!(entity_spans(&spans_to_tags(&spans, tags.len())), spans);
    }

    #[test]
    fn onehot_has_one_per_row(tags in valid_tags(0..20)) {
        let m = tags_to_onehot(&tags);
        prop_assert_eq!(m.count_ones(), tags.len());
        for i in 0..tags.len() {
            prop_assert_eq!(m.row(i).iter().map(|&v| v as usize).sum::<usize>(), 1);
            prop_assert_eq!(m.get(i, tags[i].index()), 1);
        }
    }
}

proptest! {
    #[test]
    fn softmax_and_log_softmax_agree(x in matrix(3, NUM_TAGS)) {
        let s = softmax_rows(&x);
        let ls = log_softmax_rows(&x);
        for r in 0..3 {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for c in 0..NUM_TAGS {
                prop_assert!((ls.get(r, c) - s.get(r, c).ln()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn kl_pair_is_non_negative_and_zero_on_equal_rows(a in matrix(4, NUM_TAGS), b in matrix(4, NUM_TAGS), shift in -3.0f64..3.0) {
        let ps = gain_core::numcore::ParamSet::new();
        let mut tape = Tape::new(&ps);
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b));
        let l = kl_pair_loss(&mut tape, va, vb).unwrap();
        prop_assert!(tape.value(l).item() >= 0.0);
        // Shifted logits give the same distributions.
        let vs = tape.constant(a.map(|v| v + shift));
        let va = tape.constant(a);
        let same = kl_pair_loss(&mut tape, va, vs).unwrap();
        prop_assert!(tape.value(same).item().abs() < 1e-12);
    }

    #[test]
    fn mse_matches_definition(a in matrix(3, 5), b in matrix(3, 5)) {
        let ps = gain_core::numcore::ParamSet::new();
        let mut tape = Tape::new(&ps);
        let want = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 15.0;
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b));
        let l = tape.mse(va, vb).unwrap();
        prop_assert!((tape.value(l).item() - want).abs() < 1e-12);
        let va2 = tape.constant(a);
        let zero = tape.mse(va, va2).unwrap();
        prop_assert_eq!(tape.value(zero).item(), 0.0);
    }

    #[test]
    fn decoders_emit_valid_bio(x in matrix(9, NUM_TAGS), s in matrix(9, 14), w in 1usize..6) {
        prop_assert!(validate_bio(&softmax_decode(&x)).is_empty());
        prop_assert!(validate_bio(&span_decode(&s, w)).is_empty());
        prop_assert!(entity_spans(&span_decode(&s, w)).iter().all(|sp| sp.len() <= w));
    }

    #[test]
    fn avg_logits_is_permutation_invariant(ms in prop::collection::vec(matrix(4, NUM_TAGS), 1..6), seed in any::<u64>()) {
        let mut shuffled = ms.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng_from(seed));
        let (a, b) = (avg_logits(&ms).unwrap(), avg_logits(&shuffled).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_argmax_members_keep_it(base in matrix(5, NUM_TAGS), noise in prop::collection::vec(0.0f64..1.0, 3)) {
        // Members that raise the same per-row winner by a margin agree on argmax.
        let members: Vec<Tensor> = noise
            .iter()
            .map(|&n| {
                let mut m = base.map(|v| v * n);
                for (r, c) in base.argmax_rows().into_iter().enumerate() {
                    m.set(r, c, 100.0);
                }
                m
            })
            .collect();
        prop_assert_eq!(avg_logits(&members).unwrap().argmax_rows(), members[0].argmax_rows());
    }

    #[test]
    fn vote_is_valid_and_invariant(
        k in 1usize..6,
        n in 1usize..12,
        seed in any::<u64>(),
        scale in 1u32..50,
    ) {
        let mut rng = rng_from(seed);
        let members: Vec<Vec<Tag>> = (0..k)
            .map(|_| (0..n).map(|_| Tag::new(rng.gen_range(0..NUM_TAGS)).unwrap()).collect())
            .collect();
        let mut weights: Vec<f64> = (0..k).map(|_| f64::from(rng.gen_range(0u32..5))).collect();
        weights[0] += 1.0;
        let out = weighted_token_vote(&members, &weights).unwrap();
        prop_assert!(validate_bio(&out).is_empty());

        let scaled: Vec<f64> = weights.iter().map(|w| w * f64::from(scale)).collect();
        prop_assert_eq!(&weighted_token_vote(&members, &scaled).unwrap(), &out);

        let mut order: Vec<usize> = (0..k).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let pm: Vec<Vec<Tag>> = order.iter().map(|&i| members[i].clone()).collect();
        let pw: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
        prop_assert_eq!(weighted_token_vote(&pm, &pw).unwrap(), out);
    }

    #[test]
    fn metrics_bounds_and_count_order(pairs in prop::collection::vec(sentence_pair(), 1..8)) {
        let gold = Dataset::new("g", pairs.iter().map(|p| p.0.clone()).collect());
        let pred = Dataset::new("p", pairs.iter().map(|p| p.1.clone()).collect());
        let r = evaluate(&pred, &gold).unwrap();
        let mut typed = 0;
        for s in r.per_label.values() {
            for v in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            typed += s.matched_count;
        }
        prop_assert!(typed <= r.mention.matched_count);
        prop_assert!((0.0..=1.0).contains(&r.macro_f1) && (0.0..=1.0).contains(&r.md_f1));

        let same = evaluate(&gold, &gold).unwrap();
        prop_assert!(same.per_label.values().filter(|s| s.is_present()).all(|s| s.f1 == 1.0));
    }

    #[test]
    fn macro_f1_ignores_sentence_order(pairs in prop::collection::vec(sentence_pair(), 1..8), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rng_from(seed));
        let eval = |ps: &[(Sentence, Sentence)]| {
            let gold = Dataset::new("g", ps.iter().map(|p| p.0.clone()).collect());
            let pred = Dataset::new("p", ps.iter().map(|p| p.1.clone()).collect());
            evaluate(&pred, &gold).unwrap()
        };
        prop_assert_eq!(eval(&pairs).macro_f1, eval(&shuffled).macro_f1);
    }

    #[test]
    fn a_correct_entity_never_lowers_f1(pairs in prop::collection::vec(sentence_pair(), 1..8), t in 0usize..6) {
        let gold = Dataset::new("g", pairs.iter().map(|p| p.0.clone()).collect());
        let pred = Dataset::new("p", pairs.iter().map(|p| p.1.clone()).collect());
        let before = evaluate(&pred, &gold).unwrap();
        let tag = Tag::new(1 + 2 * t).unwrap();
        let extra = Sentence::new(vec!["x".into()], vec![tag]).unwrap();
        let after = evaluate(
            &pred.concat("p", &Dataset::new("e", vec![extra.clone()])),
            &gold.concat("g", &Dataset::new("e", vec![extra])),
        )
        .unwrap();
        for (label, s) in &before.per_label {
            if s.is_present() {
                prop_assert!(after.per_label[label].f1 >= s.f1);
            }
        }
    }
}

#[test]
fn crf_path_probabilities_sum_to_one() {
    let mut rng = rng_from(21);
    for n in 1..=4 {
        let mut t = |r: usize, c: usize| Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let (em, tr, st, en) = (t(n, NUM_TAGS), t(NUM_TAGS, NUM_TAGS), t(1, NUM_TAGS), t(1, NUM_TAGS));
        let s = CrfScores::new(&em, &tr, &st, &en).unwrap();
        let log_z = s.log_partition();
        let mut total = 0.0;
        for code in 0..NUM_TAGS.pow(n as u32) {
            let path: Vec<usize> = (0..n).map(|k| code / NUM_TAGS.pow(k as u32) % NUM_TAGS).collect();
            total += (s.path_score(&path) - log_z).exp();
        }
        assert!((total - 1.0).abs() < 1e-8, "n = {n}: {total}");
    }
}

#[test]
fn five_member_average_matches_oracle() {
    let mut rng = rng_from(31);
    for _ in 0..50 {
        let members: Vec<Vec<Vec<f64>>> =
            (0..5).map(|_| (0..4).map(|_| (0..NUM_TAGS).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect()).collect();
        // Mean then argmax, written out longhand.
        let mut oracle = Vec::new();
        for r in 0..4 {
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..NUM_TAGS {
                let mean = (members[0][r][c] + members[1][r][c] + members[2][r][c] + members[3][r][c] + members[4][r][c]) / 5.0;
                if mean > best.1 {
                    best = (c, mean);
                }
            }
            oracle.push(Tag::new(best.0).unwrap());
        }
        repair_bio(&mut oracle);
        let tensors: Vec<Tensor> = members.iter().map(|m| Tensor::from_rows(m).unwrap()).collect();
        assert_eq!(softmax_decode(&avg_logits(&tensors).unwrap()), oracle);
    }
}

#[test]
fn every_sentence_is_validated_once() {
    let mut rng = rng_from(41);
    for _ in 0..100 {
        let n = rng.gen_range(5..200);
        let k = rng.gen_range(2..=5);
        let plan = kfold_split(n, k, rng.gen()).unwrap();
        let mut seen = vec![0; n];
        for f in &plan.folds {
            for &i in f {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

#[test]
fn closed_gate_makes_features_irrelevant() {
    let toks: Vec<String> = "find kazo near the lake".split_whitespace().map(str::to_string).collect();
    let data = Dataset::new("d", vec![Sentence::untagged(toks.clone())]);
    let cfg = ModelConfig {
        embed_dim: 6,
        hidden: 6,
        gaz_hidden: 4,
        classifier: ClassifierKind::Crf,
        integration: IntegrationMode::WeightedSum,
        ..ModelConfig::default()
    };
    let mut b = ModelBundle::new(cfg, Vocab::build([&data], 1), 2).unwrap();
    let id = b.integration.lambda.unwrap();
    // σ(-800) underflows to exactly zero.
    b.params.get_mut(id).value = Tensor::filled(1, 6, -800.0);
    let base = b.logits(&toks, &FeatureMatrix::zeros(toks.len())).unwrap();
    let mut rng = rng_from(3);
    for _ in 0..50 {
        let mut f = FeatureMatrix::zeros(toks.len());
        for i in 0..toks.len() {
            for _ in 0..rng.gen_range(0..3) {
                f.set(i, rng.gen_range(1..NUM_TAGS));
            }
        }
        assert_eq!(b.logits(&toks, &f).unwrap(), base);
    }
}

