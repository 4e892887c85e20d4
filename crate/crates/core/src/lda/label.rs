use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LdaBundle, TopicDistribution};
use crate::corpus::Conversation;
use crate::error::{Error, Result};
use crate::util::derive_seed;

pub const DEFAULT_FOLD_IN_SWEEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelStrategy {
    /// One label per conversation, shared by all its utterances.
    Conv,
    /// Fold-in inference on every utterance separately.
    Utt,
}

impl std::str::FromStr for LabelStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(LabelStrategy::Conv),
            "utt" => Ok(LabelStrategy::Utt),
            other => Err(Error::Argument(format!(
                "unknown labelling strategy {other:?} (expected conv or utt)"
            ))),
        }
    }
}

pub fn topic_name(k: usize) -> String {
    format!("t{k}")
}

#[derive(Debug, Clone)]
pub struct Labelled {
    pub conversations: Vec<Conversation>,
    /// Documents (conversations or utterances) without a single in-vocabulary
    /// token; they received the uniform distribution, hence topic 0.
    pub uninformative: usize,
}

/// Fills `topic_label` on every utterance.
///
/// Under `Conv`, a conversation the model was trained on uses its training
/// proportions; any other conversation is folded in. Every fold-in chain has
/// its own seed derived from `seed` and its position, so the output does not
/// depend on thread scheduling.
pub fn label_corpus(
    bundle: &LdaBundle,
    convs: &[Conversation],
    strategy: LabelStrategy,
    iters: usize,
    seed: u64,
) -> Result<Labelled> {
    if iters == 0 {
        return Err(Error::Argument("fold-in needs at least one sweep".into()));
    }
    let labelled: Vec<(Conversation, usize)> = convs
        .par_iter()
        .enumerate()
        .map(|(ci, conv)| -> Result<(Conversation, usize)> {
            let mut out = conv.clone();
            let mut uninformative = 0;
            match strategy {
                LabelStrategy::Conv => {
                    let (theta, unknown) =
                        conversation_topics(bundle, conv, iters, derive_seed(seed, &[ci as u64, 0]))?;
                    uninformative += usize::from(unknown);
                    let label = topic_name(theta.argmax());
                    for u in &mut out.utterances {
                        u.topic_label = Some(label.clone());
                    }
                }
                LabelStrategy::Utt => {
                    for (ui, u) in out.utterances.iter_mut().enumerate() {
                        let doc = bundle.vocab.encode(u.tokens.iter().map(String::as_str));
                        let inf = bundle.model.infer_topics(
                            &doc,
                            iters,
                            derive_seed(seed, &[ci as u64, ui as u64]),
                        )?;
                        uninformative += usize::from(inf.no_known_tokens);
                        u.topic_label = Some(topic_name(inf.theta.argmax()));
                    }
                }
            }
            Ok((out, uninformative))
        })
        .collect::<Result<_>>()?;
    let uninformative = labelled.iter().map(|(_, n)| n).sum();
    if uninformative > 0 {
        log::warn!("{uninformative} documents had no in-vocabulary tokens and got the uniform topic distribution");
    }
    Ok(Labelled {
        conversations: labelled.into_iter().map(|(c, _)| c).collect(),
        uninformative,
    })
}

/// Topic distribution of one conversation as `label_corpus` uses it, and
/// whether it fell back to the prior for lack of known tokens.
fn conversation_topics(
    bundle: &LdaBundle,
    conv: &Conversation,
    iters: usize,
    seed: u64,
) -> Result<(TopicDistribution, bool)> {
    match bundle.training_doc(&conv.id) {
        Some(d) if !bundle.model.skipped_docs.contains(&d) => {
            Ok((bundle.model.doc_topic_proportions(d)?, false))
        }
        _ => {
            let inf = bundle
                .model
                .infer_topics(&bundle.vocab.encode(conv.tokens()), iters, seed)?;
            Ok((inf.theta, inf.no_known_tokens))
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::corpus::Utterance;
    use crate::lda::LdaParams;

    fn utt(words: &str) -> Utterance {
        Utterance {
            speaker: None,
            tokens: words.split(' ').map(String::from).collect(),
            da_label: "s".into(),
            topic_label: None,
        }
    }

    fn corpus() -> Vec<Conversation> {
        let a = "apple pear plum fig kiwi lime";
        let b = "car bus train tram ship boat";
        (0..40)
            .map(|i| Conversation {
                id: format!("c{i}"),
                utterances: vec![utt(if i % 2 == 0 { a } else { b }); 3],
            })
            .collect()
    }

    fn bundle(convs: &[Conversation]) -> LdaBundle {
        let params = LdaParams {
            iters: 100,
            ..LdaParams::new(2, 7)
        };
        LdaBundle::fit(convs, &LdaParams { alpha: 0.1, ..params }, 1, &BTreeSet::new()).unwrap()
    }

    #[test]
    fn conv_strategy_shares_one_label() {
        let convs = corpus();
        let b = bundle(&convs);
        let out = label_corpus(&b, &convs, LabelStrategy::Conv, 20, 1).unwrap();
        for c in &out.conversations {
            let labels: BTreeSet<_> = c.utterances.iter().map(|u| u.topic_label.clone()).collect();
            assert_eq!(labels.len(), 1);
        }
        assert_ne!(
            out.conversations[0].utterances[0].topic_label,
            out.conversations[1].utterances[0].topic_label
        );
    }

    #[test]
    fn utt_strategy_separates_mixed_conversation() {
        let convs = corpus();
        let b = bundle(&convs);
        let mixed = Conversation {
            id: "new".into(),
            utterances: vec![
                utt("apple pear plum fig"),
                utt("kiwi lime apple"),
                utt("car bus train tram"),
                utt("ship boat car"),
            ],
        };
        let out = label_corpus(&b, &[mixed], LabelStrategy::Utt, 20, 3).unwrap();
        let labels: Vec<_> = out.conversations[0]
            .utterances
            .iter()
            .map(|u| u.topic_label.clone().unwrap())
            .collect();
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[2], labels[3]);
        assert_ne!(labels[0], labels[2]);
    }

    #[test]
    fn oov_utterances_are_counted() {
        let convs = corpus();
        let b = bundle(&convs);
        let odd = Conversation {
            id: "x".into(),
            utterances: vec![utt("zzz qqq")],
        };
        let out = label_corpus(&b, &[odd], LabelStrategy::Utt, 20, 3).unwrap();
        assert_eq!(out.uninformative, 1);
        assert_eq!(out.conversations[0].utterances[0].topic_label.as_deref(), Some("t0"));
    }

    #[test]
    fn parses_strategy_names() {
        assert_eq!("conv".parse::<LabelStrategy>().unwrap(), LabelStrategy::Conv);
        assert!("both".parse::<LabelStrategy>().is_err());
    }
}
