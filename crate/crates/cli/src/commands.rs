use dahcrf_core::ablation::{run_ablation, write_ablation_csv, write_runs_csv};
use dahcrf_core::config::{ContextKind, ModelConfig, TopicSource, Variant};
use dahcrf_core::corpus::{save_corpus, Preprocess};
use dahcrf_core::lda::{label_corpus, select_topic_count, write_coherence_csv, LdaBundle, LdaParams, SweepSettings, TopicVocabulary};
use dahcrf_core::train::{prepare_topics, train, write_jsonl, Metrics, TrainReport, TrainedModel};
use dahcrf_core::{Error, Result};
use serde::Serialize;

use crate::files::{self, Output};
use crate::{
    AblateArgs, Command, EvalArgs, PredictArgs, TopicsCommand, TopicsFitArgs, TopicsLabelArgs, TopicsSelectArgs,
    TrainArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Topics(TopicsCommand::Fit(a)) => topics_fit(a),
        Command::Topics(TopicsCommand::Select(a)) => topics_select(a),
        Command::Topics(TopicsCommand::Label(a)) => topics_label(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn prep(raw: bool) -> Preprocess {
    if raw {
        Preprocess::none()
    } else {
        Preprocess::default()
    }
}

fn topics_fit(a: TopicsFitArgs) -> Result<()> {
    let convs = files::corpus(&a.input.corpus, &prep(a.input.raw))?;
    let stop = files::stopwords(a.input.stopwords.as_ref())?;
    let params = LdaParams {
        k: a.k,
        alpha: a.alpha.unwrap_or(50.0 / a.k.max(1) as f64),
        beta: a.beta,
        iters: a.iters,
        seed: a.seed,
    };
    let bundle = LdaBundle::fit(&convs, &params, a.input.min_count, &stop)?;
    bundle.save(&a.out)?;
    for (k, words) in bundle.describe_topics(10).iter().enumerate() {
        println!("{}\t{}", dahcrf_core::lda::topic_name(k), words.join(" "));
    }
    Ok(())
}

fn topics_select(a: TopicsSelectArgs) -> Result<()> {
    let p = prep(a.input.raw);
    let convs = files::corpus(&a.input.corpus, &p)?;
    let stop = files::stopwords(a.input.stopwords.as_ref())?;
    let vocab = TopicVocabulary::build(&convs, a.input.min_count, &stop);
    if vocab.is_empty() {
        return Err(Error::Data("topic vocabulary is empty".into()));
    }
    let docs = vocab.documents(&convs);
    let reference = match &a.reference {
        Some(path) => vocab.documents(&files::corpus(path, &p)?),
        None => docs.clone(),
    };
    let settings = SweepSettings {
        candidates: a.candidates,
        iters: a.iters,
        alpha: a.alpha,
        beta: a.beta,
        top_n: a.top_n,
        window: a.window,
        seed: a.seed,
    };
    let selection = select_topic_count(&docs, vocab.len(), &reference, &settings)?;
    let mut out = Output::or_stdout(a.out.as_ref())?;
    let r = write_coherence_csv(out.writer(), &selection);
    out.check(r)?;
    out.finish()?;
    eprintln!("best K = {} (coherence {:.4})", selection.best_k, selection.best_score);
    Ok(())
}

fn topics_label(a: TopicsLabelArgs) -> Result<()> {
    let bundle = LdaBundle::load(&a.model)?;
    let convs = files::corpus(&a.corpus, &prep(a.raw))?;
    let labelled = label_corpus(&bundle, &convs, a.strategy, a.sweeps, a.seed)?;
    if labelled.uninformative > 0 {
        log::warn!(
            "{} documents had no in-vocabulary words and were labelled {}",
            labelled.uninformative,
            dahcrf_core::lda::topic_name(0)
        );
    }
    save_corpus(&a.out, &labelled.conversations)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    variant: Variant,
    topic_source: TopicSource,
    config_hash: String,
    report: &'a TrainReport,
    valid: Metrics,
    test: Option<Metrics>,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = files::load_config(&a.config)?;
    let p = cfg.preprocess();
    let train_set = prepare_topics(&cfg, &files::corpus(&a.train, &p)?)?;
    let valid = prepare_topics(&cfg, &files::corpus(&a.valid, &p)?)?;
    let test = a.test.as_ref().map(|t| files::corpus(t, &p)).transpose()?;
    let (tm, report) = train(&cfg, &train_set, &valid)?;
    tm.save(&a.out)?;
    let summary = TrainSummary {
        variant: cfg.variant,
        topic_source: cfg.topic_source,
        config_hash: cfg.hash(),
        report: &report,
        valid: tm.evaluate(&valid)?,
        test: test.as_deref().map(|t| tm.evaluate(t)).transpose()?,
    };
    println!(
        "best epoch {} of {}: valid accuracy {:.4}",
        report.best_epoch,
        report.history.len(),
        report.best_valid_accuracy
    );
    if let Some(m) = &summary.test {
        println!("test accuracy {:.4} ({}/{})", m.accuracy, m.correct, m.utterances);
    }
    if let Some(path) = &a.metrics {
        Output::create(path)?.json(&summary)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let tm = TrainedModel::load(&a.model)?;
    let convs = files::corpus(&a.corpus, &tm.config.preprocess())?;
    let metrics = tm.evaluate(&convs)?;
    if let Some(path) = &a.confusion {
        let mut out = Output::create(path)?;
        let r = metrics.write_confusion_csv(out.writer());
        out.check(r)?;
        out.finish()?;
    }
    if a.metrics.is_some() {
        println!("accuracy {:.4} ({}/{})", metrics.accuracy, metrics.correct, metrics.utterances);
    }
    Output::or_stdout(a.metrics.as_ref())?.json(&metrics)
}

fn predict(a: PredictArgs) -> Result<()> {
    let tm = TrainedModel::load(&a.model)?;
    let convs = files::corpus(&a.corpus, &tm.config.preprocess())?;
    let mut out = Output::or_stdout(a.out.as_ref())?;
    write_jsonl(out.writer(), &tm.predict(&convs)?)?;
    out.finish()?;
    if let Some(path) = &a.attention {
        if tm.config.variant.context() != ContextKind::MeanPool {
            let mut out = Output::create(path)?;
            write_jsonl(out.writer(), &tm.attention(&convs)?)?;
            out.finish()?;
        } else {
            log::warn!("{} pools tokens without attention; nothing to dump", tm.config.variant);
        }
    }
    Ok(())
}

/// `VARIANT` or `VARIANT+TOPIC_SOURCE` on top of the base config. A topic
/// variant without an explicit source inherits the base one.
fn grid_entry(base: &ModelConfig, entry: &str) -> Result<ModelConfig> {
    let (variant, source) = match entry.split_once('+') {
        Some((v, s)) => (v.trim().parse::<Variant>()?, Some(s.trim().parse::<TopicSource>()?)),
        None => (entry.trim().parse::<Variant>()?, None),
    };
    let topic_source = match (variant.has_topic(), source) {
        (false, None) => TopicSource::None,
        (true, None) if base.topic_source != TopicSource::None => base.topic_source,
        (true, None) => {
            return Err(Error::Config(format!("grid entry {entry:?} needs a topic source")));
        }
        (_, Some(s)) => s,
    };
    let cfg = ModelConfig {
        variant,
        topic_source,
        ..base.clone()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let base = files::load_config(&a.config)?;
    let grid = a
        .grid
        .iter()
        .map(|e| grid_entry(&base, e))
        .collect::<Result<Vec<_>>>()?;
    let p = base.preprocess();
    let train_set = files::corpus(&a.train, &p)?;
    let valid = files::corpus(&a.valid, &p)?;
    let test = files::corpus(&a.test, &p)?;
    let rows = run_ablation(&grid, &a.seeds, &train_set, &valid, &test)?;
    let mut out = Output::or_stdout(a.out.as_ref())?;
    let r = write_ablation_csv(out.writer(), &rows);
    out.check(r)?;
    out.finish()?;
    if let Some(path) = &a.runs {
        let mut out = Output::create(path)?;
        let r = write_runs_csv(out.writer(), &rows);
        out.check(r)?;
        out.finish()?;
    }
    Ok(())
}
