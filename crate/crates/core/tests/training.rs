mod common;

use common::*;
use dahcrf_core::ablation::{run_ablation, write_ablation_csv, write_runs_csv};
use dahcrf_core::config::{ModelConfig, TopicSource, Variant};
use dahcrf_core::corpus::{make_batches, Batching, Conversation};
use dahcrf_core::encoder::DropoutCtx;
use dahcrf_core::train::{build, fit, prepare_topics, train, write_jsonl, TrainedModel};
use dahcrf_core::Error;

fn with_conv_topics(convs: Vec<Conversation>) -> Vec<Conversation> {
    convs
        .into_iter()
        .enumerate()
        .map(|(i, mut c)| {
            for u in &mut c.utterances {
                u.topic_label = Some(format!("t{}", i % 2));
            }
            c
        })
        .collect()
}

fn config(variant: Variant) -> ModelConfig {
    ModelConfig {
        topic_source: if variant.has_topic() { TopicSource::ManualConv } else { TopicSource::None },
        epochs: 3,
        ..tiny_config(variant)
    }
}

fn one_batch(tm: &TrainedModel, convs: &[Conversation]) -> dahcrf_core::corpus::Batch {
    let cfg = Batching {
        max_batch: convs.len(),
        seed: None,
        max_conversation_len: None,
    };
    make_batches(convs, &tm.vocab, &tm.da_labels, tm.topic_labels.as_ref(), &cfg)
        .unwrap()
        .0
        .remove(0)
}

#[test]
fn zero_learning_rate_leaves_parameters_and_loss_unchanged() {
    let data = with_conv_topics(planted_da_corpus(8, 3, 1));
    let cfg = ModelConfig {
        lr: 0.0,
        dropout: 0.0,
        max_batch: 50,
        ..config(Variant::DahCrf)
    };
    let tm = build(&cfg, &data, &data).unwrap();
    let before = tm.model.state();
    let report = fit(&tm, &data, &data).unwrap();
    assert_eq!(tm.model.state(), before);
    let first = report.history[0].train_loss;
    for e in &report.history {
        assert!((e.train_loss - first).abs() <= 1e-6 * first.abs(), "{:?}", report.history);
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let data = with_conv_topics(planted_da_corpus(6, 3, 2));
    for variant in Variant::ALL {
        let tm = build(&config(variant), &data, &data).unwrap();
        let batch = one_batch(&tm, &data);
        tm.model.zero_grad();
        tm.model
            .loss(&batch, &mut DropoutCtx::eval(), 0.5)
            .unwrap()
            .backward()
            .unwrap();
        for (name, p) in tm.model.parameters() {
            let norm: f32 = p.grad().unwrap_or_default().iter().map(|g| g * g).sum();
            assert!(norm > 0.0, "{variant}: {name} has no gradient");
        }
    }
}

#[test]
fn alpha_zero_leaves_only_the_dialogue_act_loss() {
    let data = with_conv_topics(planted_da_corpus(4, 3, 3));
    let tm = build(&config(Variant::DahCrf), &data, &data).unwrap();
    let batch = one_batch(&tm, &data);
    let loss = tm.model.loss(&batch, &mut DropoutCtx::eval(), 0.0).unwrap().item().unwrap();
    let outputs = tm.model.forward(&batch, &mut DropoutCtx::eval(), false).unwrap();
    let mut da = 0.0;
    for (out, span) in outputs.iter().zip(&batch.spans) {
        da -= tm
            .model
            .da_crf
            .log_likelihood(&out.da_emissions, &batch.da_ids[span.clone()])
            .unwrap()
            .item()
            .unwrap();
    }
    da /= outputs.len() as f32;
    assert!((loss - da).abs() < 1e-5, "{loss} vs {da}");
    let joint = tm.model.loss(&batch, &mut DropoutCtx::eval(), 0.5).unwrap().item().unwrap();
    assert!(joint > loss);
}

#[test]
fn stops_after_patience_epochs_without_improvement() {
    let data = planted_da_corpus(6, 3, 4);
    let cfg = ModelConfig {
        lr: 0.0,
        epochs: 50,
        patience: 2,
        ..config(Variant::SahCrf)
    };
    let (_, report) = train(&cfg, &data, &data).unwrap();
    assert_eq!(report.history.len(), 3);
    assert_eq!(report.best_epoch, 1);
    assert!(report.stopped_early);
}

#[test]
fn topic_variant_without_topic_labels_is_a_config_error() {
    let data = planted_da_corpus(4, 2, 5);
    let err = train(&config(Variant::DahCrf), &data, &data).err().unwrap();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    let lda = ModelConfig {
        topic_source: TopicSource::LdaUtt,
        ..config(Variant::Dah)
    };
    assert!(matches!(prepare_topics(&lda, &data), Err(Error::Config(_))));
}

#[test]
fn manual_topics_are_broadcast_from_the_first_labelled_utterance() {
    let mut data = planted_da_corpus(2, 2, 6);
    data[0].utterances[1].topic_label = Some("sports".into());
    data[1].utterances[0].topic_label = Some("food".into());
    let out = prepare_topics(&config(Variant::DahCrf), &data).unwrap();
    assert!(out[0].utterances.iter().all(|u| u.topic_label.as_deref() == Some("sports")));
    assert!(out[1].utterances.iter().all(|u| u.topic_label.as_deref() == Some("food")));
    // Variants without the topic task leave the corpus alone.
    assert_eq!(prepare_topics(&config(Variant::SahCrf), &data).unwrap(), data);
}

#[test]
fn evaluation_errors() {
    let data = planted_da_corpus(4, 2, 7);
    let (tm, _) = train(&config(Variant::Sah), &data, &data).unwrap();
    assert!(matches!(tm.evaluate(&[]), Err(Error::Data(_))));
    let mut odd = data.clone();
    odd[0].utterances[0].da_label = "never-seen".into();
    match tm.evaluate(&odd) {
        Err(Error::UnknownLabels(labels)) => assert_eq!(labels, vec!["never-seen".to_string()]),
        other => panic!("{:?}", other.map(|m| m.accuracy)),
    }
    // Prediction does not need known gold labels.
    assert_eq!(tm.predict(&odd).unwrap().len(), odd.len());
}

#[test]
fn metrics_are_consistent() {
    let data = planted_da_corpus(6, 3, 8);
    let (tm, _) = train(&config(Variant::SahCrf), &data, &data).unwrap();
    let m = tm.evaluate(&data).unwrap();
    let total: usize = data.iter().map(Conversation::len).sum();
    assert_eq!(m.utterances, total);
    assert_eq!(m.accuracy, m.correct as f64 / total as f64);
    for (row, class) in m.confusion.iter().zip(&m.per_class) {
        assert_eq!(row.iter().sum::<usize>(), class.support);
    }
    let preds = tm.predict(&data).unwrap();
    let agree: usize = preds
        .iter()
        .map(|p| p.gold.iter().zip(&p.pred).filter(|(g, q)| g == q).count())
        .sum();
    assert_eq!(agree, m.correct);
}

#[test]
fn predictions_and_attention_dumps() {
    let data = with_conv_topics(planted_da_corpus(4, 3, 9));
    let (tm, _) = train(&config(Variant::DahCrf), &data, &data).unwrap();
    let preds = tm.predict(&data).unwrap();
    for (p, c) in preds.iter().zip(&data) {
        assert_eq!(p.id, c.id);
        assert_eq!(p.pred.len(), c.len());
        assert!(p.pred.iter().all(|l| tm.da_labels.id(l).is_some()));
        assert_eq!(p.topic_pred.as_ref().unwrap().len(), c.len());
    }
    let mut out = Vec::new();
    write_jsonl(&mut out, &preds).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), data.len());
    assert!(text.lines().next().unwrap().contains("\"topic_pred\""));

    let records = tm.attention(&data).unwrap();
    assert_eq!(records.len(), data.iter().map(Conversation::len).sum::<usize>());
    for r in &records {
        assert_eq!(r.da_attention.len(), r.tokens.len());
        assert!((r.da_attention.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        assert_eq!(r.topic_attention.as_ref().unwrap().len(), r.tokens.len());
    }

    let (pooled, _) = train(&config(Variant::DahCrfNoDual), &data, &data).unwrap();
    assert!(pooled.attention(&data).unwrap().is_empty());
}

#[test]
fn long_conversations_are_truncated_for_training_only() {
    let data = planted_da_corpus(6, 2, 10);
    let cfg = ModelConfig {
        max_conversation_len: Some(2),
        ..config(Variant::SahCrf)
    };
    let (tm, report) = train(&cfg, &data, &data).unwrap();
    let long: Vec<&str> = data.iter().filter(|c| c.len() > 2).map(|c| c.id.as_str()).collect();
    assert!(!long.is_empty());
    assert_eq!(report.truncated, long);
    let preds = tm.predict(&data).unwrap();
    assert!(preds.iter().zip(&data).all(|(p, c)| p.pred.len() == c.len()));
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let data = planted_da_corpus(4, 2, 11);
    let (tm, _) = train(&config(Variant::Sah), &data, &data).unwrap();
    let mut buf = Vec::new();
    tm.to_json_writer(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(TrainedModel::from_json_str(&text).is_ok());
    let bumped = text.replacen("\"format_version\":1", "\"format_version\":99", 1);
    assert!(matches!(TrainedModel::from_json_str(&bumped), Err(Error::Data(_))));
    let retuned = text.replacen("\"hidden\":12", "\"hidden\":13", 1);
    assert!(matches!(TrainedModel::from_json_str(&retuned), Err(Error::Data(_))));
    assert!(TrainedModel::from_json_str("{").is_err());
}

#[test]
fn single_config_ablation_gives_one_row() {
    let data = planted_da_corpus(4, 2, 12);
    let rows = run_ablation(&[config(Variant::SahCrf)], &[1, 2], &data, &data, &data).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].runs.len(), 2);
    assert_eq!(rows[0].label, "SAH-CRF");
    let mut csv = Vec::new();
    write_ablation_csv(&mut csv, &rows).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("SAH-CRF,SAH-CRF,none,2,"));
    let mut runs = Vec::new();
    write_runs_csv(&mut runs, &rows).unwrap();
    assert_eq!(String::from_utf8(runs).unwrap().lines().count(), 3);
    assert!(run_ablation(&[], &[1], &data, &data, &data).is_err());
}

#[test]
fn default_hyperparameters() {
    let c = ModelConfig::default();
    assert_eq!((c.hidden, c.word_dim, c.char_dim), (256, 300, 50));
    assert_eq!(c.dropout, 0.2);
    assert_eq!(c.lr, 0.001);
    assert_eq!(c.weight_decay, 1e-4);
    assert_eq!(c.max_batch, 50);
    assert_eq!(c.alpha, 0.5);
    assert_eq!(c.vocab_coverage, 0.85);
    assert_eq!(dahcrf_core::lda::SweepSettings::default().iters, 1000);
}
