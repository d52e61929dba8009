use attnrank::data_io::{
    generate_synthetic, read_records, read_trec_qa, write_records, Candidate, QuestionGroup, SyntheticSpec,
    RECORD_HEADER,
};
use attnrank::evaluation::{mrr, overlap_baseline_run, EvalOptions};
use attnrank::model::{
    encode_branch, encode_pair, forward, init_params, read_checkpoint, write_checkpoint, AttentionMode, Model,
    ModelConfig, PoolingMode, Side,
};
use attnrank::numerics::Matrix;
use attnrank::text::{EmbeddingMatrix, Embeddings, Vocab, PAD_TOKEN};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 5;

fn embeddings(seed: u64) -> Embeddings {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = Vocab::from_tokens((0..20).map(|i| format!("w{i}")), 1).unwrap();
    let mut rows = vec![vec![0.0; DIM]];
    for _ in 1..vocab.len() {
        rows.push((0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    Embeddings::new(vocab, EmbeddingMatrix::new(Matrix::from_rows(&rows).unwrap()).unwrap()).unwrap()
}

fn model(seed: u64, mode: AttentionMode, pooling: PoolingMode) -> Model {
    let cfg = ModelConfig {
        attention_mode: mode,
        pooling_mode: pooling,
        max_q_len: 12,
        max_a_len: 24,
        ..ModelConfig::with_emb_dim(DIM)
    };
    let params = init_params(&cfg, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    Model::new(cfg, params).unwrap()
}

fn modes() -> impl Strategy<Value = (AttentionMode, PoolingMode)> {
    (
        prop_oneof![Just(AttentionMode::Scalar), Just(AttentionMode::Featurewise), Just(AttentionMode::Uniform)],
        prop_oneof![Just(PoolingMode::Max), Just(PoolingMode::Sum)],
    )
}

// "w20".."w24" are out of vocabulary and map to the unknown token.
fn tokens(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0usize..25).prop_map(|i| format!("w{i}")), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn attention_is_normalized_and_padding_is_inert(
        seed in 0u64..1000,
        (mode, pooling) in modes(),
        q in tokens(8),
        a in tokens(16),
        pads in 1usize..8,
    ) {
        let m = model(seed, mode, pooling);
        let e = embeddings(seed);
        let p = forward(&q, &a, &m, &e).unwrap();
        for trace in [&p.question_trace, &p.answer_trace] {
            prop_assert!((trace.total() - 1.0).abs() < 1e-6, "{:?} sums to {}", trace.side, trace.total());
            prop_assert!(trace.weights.iter().all(|&w| w >= 0.0));
        }

        let mut a_padded = a.clone();
        a_padded.extend(std::iter::repeat(PAD_TOKEN.to_string()).take(pads));
        let mut q_padded = q.clone();
        q_padded.push(PAD_TOKEN.to_string());
        let padded = forward(&q_padded, &a_padded, &m, &e).unwrap();
        prop_assert_eq!(padded.relevance.to_bits(), p.relevance.to_bits());
        let tr = &padded.answer_trace;
        prop_assert!(tr.tokens.iter().zip(&tr.weights).filter(|(t, _)| t.as_str() == PAD_TOKEN).all(|(_, &w)| w == 0.0));
        prop_assert!((tr.total() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn branch_width_and_score_are_stable(seed in 0u64..1000, (mode, pooling) in modes(), len in 1usize..=24) {
        let m = model(seed, mode, pooling);
        let e = embeddings(seed);
        let a: Vec<String> = (0..len).map(|i| format!("w{}", i % 20)).collect();
        let pair = encode_pair(&["w1"], &a, 0, &m.config, &e).unwrap();
        let (v, _) = encode_branch(&pair.answer, &m.params.answer, &m.config, Side::Answer).unwrap();
        prop_assert_eq!(v.len(), m.config.hidden2_dim);
        let once = forward(&["w1"], &a, &m, &e).unwrap().relevance;
        let twice = forward(&["w1"], &a, &m, &e).unwrap().relevance;
        prop_assert_eq!(once.to_bits(), twice.to_bits());
        prop_assert!(once > 0.0 && once < 1.0);
    }

    #[test]
    fn checkpoint_reload_scores_identically(seed in 0u64..1000, (mode, pooling) in modes(), probes in prop::collection::vec((tokens(6), tokens(12)), 1..6)) {
        let m = model(seed, mode, pooling);
        let e = embeddings(seed);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &m).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        for (q, a) in &probes {
            let x = forward(q, a, &m, &e).unwrap();
            let y = forward(q, a, &back, &e).unwrap();
            prop_assert_eq!(x.relevance.to_bits(), y.relevance.to_bits());
            prop_assert_eq!(x.answer_trace, y.answer_trace);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_corpora_are_solvable_by_overlap(seed in any::<u64>(), long in any::<bool>(), candidates in 2usize..6) {
        let spec = if long {
            SyntheticSpec::long_noise(20, 10, candidates, seed)
        } else {
            SyntheticSpec::toy(30, candidates, seed)
        };
        let split = generate_synthetic(&spec).unwrap();
        for groups in [&split.train, &split.test].into_iter().filter(|g| !g.is_empty()) {
            let m = mrr(&overlap_baseline_run(groups), &EvalOptions::default()).unwrap();
            prop_assert!(m > 0.9, "overlap baseline MRR {m}");
        }
    }
}

// Question text is a function of the id and answer ids are unique, so only the broken lines are rejected.
fn record_line() -> impl Strategy<Value = (String, bool)> {
    let valid = (0usize..3, "[a-z]{1,8}( [a-z]{1,8}){0,3}", 0u32..5)
        .prop_map(|(q, a, g)| (format!("q{q}\tquestion {q}\t{{id}}\t{a}\t{g}"), true));
    let broken = prop_oneof![
        "[a-z]{1,8}".prop_map(|s| (format!("{s}\tonly two"), false)),
        "[a-z]{1,8}".prop_map(|s| (format!("q0\tquestion 0\t{{id}}\t{s}\tgood"), false)),
        "[a-z]{1,8}".prop_map(|s| (format!("q1\tquestion 1\t{{id}}\t{s}\t-1"), false)),
    ];
    prop_oneof![3 => valid, 1 => broken]
}

proptest! {
    #[test]
    fn loaders_account_for_every_record(lines in prop::collection::vec(record_line(), 0..40)) {
        let mut text = format!("{RECORD_HEADER}\n");
        for (i, (l, _)) in lines.iter().enumerate() {
            text.push_str(&l.replace("{id}", &format!("a{i}")));
            text.push('\n');
        }
        let report = read_records(text.as_bytes()).unwrap();
        prop_assert_eq!(report.total_records(), lines.len());
        prop_assert_eq!(report.accepted, lines.iter().filter(|(_, ok)| *ok).count());
        let grouped: usize = report.groups.iter().map(|g| g.candidates.len()).sum();
        prop_assert_eq!(grouped, report.accepted);
    }

    #[test]
    fn trec_loader_accounts_for_every_line(rows in prop::collection::vec(("[a-z]{1,6}", "[a-z ]{1,12}", 0u32..4), 1..30)) {
        let text: String = rows.iter().map(|(q, a, l)| format!("{q}\tx {a}\t{l}\n")).collect();
        let report = read_trec_qa(text.as_bytes()).unwrap();
        prop_assert_eq!(report.total_records(), rows.len());
        prop_assert_eq!(report.accepted, rows.iter().filter(|r| r.2 <= 1).count());
    }

    #[test]
    fn written_groups_reload_identically(n in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups: Vec<QuestionGroup> = (0..n)
            .map(|i| QuestionGroup {
                question_id: format!("q{i}"),
                question: format!("question\t{i}\nline two"),
                candidates: (0..rng.gen_range(1..4))
                    .map(|j| Candidate { answer_id: format!("q{i}-{j}"), text: format!("answer {j} \\ {}", rng.gen::<u16>()), grade: rng.gen_range(0..5) })
                    .collect(),
            })
            .collect();
        let mut bytes = Vec::new();
        write_records(&mut bytes, &groups).unwrap();
        let back = read_records(bytes.as_slice()).unwrap().into_strict().unwrap();
        prop_assert_eq!(back, groups);
    }
}
