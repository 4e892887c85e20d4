mod common;

use common::*;
use dahcrf_core::attention::{condition, dual_step, mean_pool, weighted_sum, TaskAttention};
use dahcrf_core::config::{ModelConfig, TopicSource, Variant};
use dahcrf_core::corpus::Vocabulary;
use dahcrf_core::crf::LinearChainCrf;
use dahcrf_core::encoder::{BiGru, CharEncoderKind, EncoderDims, SharedUtteranceEncoder};
use dahcrf_core::nn::ParamStore;
use dahcrf_core::tagger::ConversationTagger;
use dahcrf_core::train::{prepare_topics, train};
use dahcrf_tensor::Tensor;

fn t(data: &[f64], shape: &[usize]) -> Tensor<f64> {
    Tensor::new(data.to_vec(), shape).unwrap()
}

#[test]
fn palindrome_with_tied_directions_mirrors_states() {
    let mut store = ParamStore::<f64>::new(3);
    let rnn = BiGru::new(&mut store, "rnn", 2, 3);
    for (f, b) in [
        (&rnn.fwd.w, &rnn.bwd.w),
        (&rnn.fwd.b, &rnn.bwd.b),
        (&rnn.fwd.u_zr, &rnn.bwd.u_zr),
        (&rnn.fwd.u_h, &rnn.bwd.u_h),
    ] {
        b.data_mut().copy_from_slice(&f.data());
    }
    let xs = t(&[0.3, -1.0, 0.8, 0.2, -0.5, 0.9, 0.8, 0.2, 0.3, -1.0], &[5, 2]);
    let h = rnn.run(&xs, &[5]).unwrap().time_major().unwrap().to_vec();
    let k = 5;
    let d = 3;
    for i in 0..k {
        let row = &h[i * 2 * d..(i + 1) * 2 * d];
        let mirror = &h[(k - 1 - i) * 2 * d..(k - i) * 2 * d];
        assert_eq!(row[..d], mirror[d..]);
        assert_eq!(row[d..], mirror[..d]);
    }
}

#[test]
fn default_sizes_give_350_dim_tokens_and_512_dim_states() {
    let cfg = ModelConfig::default();
    let vocab = Vocabulary::new(["hello".to_string()], "helo".chars());
    let dims = EncoderDims {
        vocab: vocab.len(),
        word_dim: cfg.word_dim,
        chars: vocab.num_chars(),
        char_dim: cfg.char_dim,
        char_features: cfg.char_features,
        char_kind: CharEncoderKind::Cnn,
        hidden: cfg.hidden,
    };
    let words = Tensor::<f64>::zeros(&[vocab.len(), cfg.word_dim]);
    let enc = SharedUtteranceEncoder::new(&mut ParamStore::new(1), dims, &words).unwrap();
    assert_eq!(enc.token_dim(), 350);
    let h = enc
        .encode_utterance(&[(vocab.word_id("hello"), vocab.char_ids("hello"))])
        .unwrap();
    assert_eq!(h.shape(), &[1, 512]);
}

fn hand_attention() -> TaskAttention<f64> {
    let att = TaskAttention::<f64>::new(&mut ParamStore::new(1), "a", 1, 2, 2);
    att.w_cond.data_mut().copy_from_slice(&[1.0, 0.0]);
    att.w_token.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    att.b.data_mut().fill(0.0);
    att.w_a.data_mut().copy_from_slice(&[1.0, 1.0]);
    att
}

#[test]
fn two_token_attention_matches_hand_trace() {
    // Scores: tanh(0.5 + 0.2) + tanh(0) and tanh(0.2) + tanh(-1).
    let att = hand_attention();
    let h = t(&[0.5, 0.0, 0.0, -1.0], &[2, 2]);
    let a = att.weights(&h, &t(&[0.2], &[1, 1]), &[true, true]).unwrap().to_vec();
    assert!((a[0] - 0.762889444344188).abs() < 1e-6, "{a:?}");
    assert!((a[1] - 0.23711055565581196).abs() < 1e-6, "{a:?}");
}

#[test]
fn uniform_weights_over_identical_rows_return_that_row() {
    let h = t(&[0.1, -0.4, 0.1, -0.4, 0.1, -0.4], &[3, 2]);
    let c = weighted_sum(&Tensor::vector(vec![1.0 / 3.0; 3]), &h).unwrap().to_vec();
    assert!((c[0] - 0.1).abs() < 1e-12 && (c[1] + 0.4).abs() < 1e-12);
    let m = mean_pool(&h, &[true, true, true]).unwrap().to_vec();
    assert!((m[0] - 0.1).abs() < 1e-12 && (m[1] + 0.4).abs() < 1e-12);
}

#[test]
fn dominant_score_selects_its_row() {
    let att = hand_attention();
    att.w_a.data_mut().copy_from_slice(&[40.0, 0.0]);
    let h = t(&[0.9, 0.3, -0.9, -0.7], &[2, 2]);
    let (ctx, a) = att.attend(&h, &t(&[0.0], &[1, 1]), &[true, true]).unwrap();
    assert!(a.to_vec()[0] > 1.0 - 1e-4);
    let c = ctx.to_vec();
    assert!((c[0] - 0.9).abs() < 1e-4 && (c[1] - 0.3).abs() < 1e-4, "{c:?}");
}

#[test]
fn first_step_conditions_on_zero_states() {
    let tagger = ConversationTagger::<f64>::new(&mut ParamStore::new(2), "g", 4, 3);
    let g0 = tagger.initial();
    assert_eq!(g0.shape(), &[1, 3]);
    assert!(g0.to_vec().iter().all(|&v| v == 0.0));
    let cond = condition(Some(&g0), &g0).unwrap();
    assert_eq!(cond.to_vec(), vec![0.0; 6]);
}

#[test]
fn identical_task_parameters_give_identical_contexts() {
    let mut store = ParamStore::<f64>::new(9);
    let act = TaskAttention::new(&mut store, "act", 4, 3, 5);
    let h = t(&[0.2, -0.3, 0.5, 0.9, 0.1, -0.6, -0.4, 0.7, 0.0], &[3, 3]);
    let s = t(&[0.1, 0.2], &[1, 2]);
    let g = t(&[-0.3, 0.4], &[1, 2]);
    let step = dual_step(&h, &s, &g, &act, &act, &[true, true, true]).unwrap();
    assert_eq!(step.l.to_vec(), step.v.to_vec());
    assert_eq!(step.alpha.to_vec(), step.beta.to_vec());
}

#[test]
fn identity_projection_emits_the_tagger_state() {
    let g = t(&[0.3, -0.2, 0.7, 0.1], &[2, 2]);
    let crf = LinearChainCrf::from_parts(
        t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]),
        Tensor::vector(vec![0.0, 0.0]),
        None,
        None,
        None,
    )
    .unwrap();
    assert_eq!(crf.emissions(&g).unwrap().to_vec(), g.to_vec());
}

#[test]
fn single_step_decodes_to_the_emission_argmax() {
    let crf = LinearChainCrf::from_parts(
        t(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]),
        Tensor::vector(vec![0.0; 3]),
        Some(t(&[5.0, -1.0, 2.0, 0.3, 0.0, -4.0, 1.0, 1.0, 1.0], &[3, 3])),
        None,
        None,
    )
    .unwrap();
    let em = crf.emissions(&t(&[0.1, 0.9, -0.2], &[1, 3])).unwrap();
    assert_eq!(crf.viterbi(&em).unwrap().labels, vec![1]);
}

#[test]
fn attention_concentrates_on_planted_cues_after_training() {
    // DA labels are announced by one cue token per utterance. Over five
    // seeds the trained DA attention should put most of its mass there.
    let data: Vec<_> = planted_da_corpus(20, 4, 91)
        .into_iter()
        .map(|mut c| {
            for u in &mut c.utterances {
                u.topic_label = Some("x".into());
            }
            c
        })
        .collect();
    let mut concentrated = 0;
    let mut masses = Vec::new();
    for seed in 1..=5 {
        let cfg = ModelConfig {
            seed,
            epochs: 60,
            patience: 60,
            topic_source: TopicSource::ManualConv,
            ..tiny_config(Variant::DahCrf)
        };
        let prepared = prepare_topics(&cfg, &data).unwrap();
        let (model, _) = train(&cfg, &prepared, &prepared).unwrap();
        let records = model.attention(&prepared).unwrap();
        let mass: f64 = records
            .iter()
            .map(|r| {
                r.tokens
                    .iter()
                    .zip(&r.da_attention)
                    .filter(|(tok, _)| tok.starts_with("cue"))
                    .map(|(_, a)| a)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / records.len() as f64;
        masses.push(mass);
        concentrated += usize::from(mass > 0.5);
    }
    assert!(concentrated >= 3, "mean cue mass per seed {masses:?}");
}
