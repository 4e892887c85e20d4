//! Model and training configuration: a flat TOML table plus `key=value`
//! overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Preprocess;
use crate::encoder::CharEncoderKind;
use crate::error::{Error, Result};
use crate::util::hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Single attention, DA task only, softmax outputs.
    #[serde(rename = "SAH")]
    Sah,
    #[serde(rename = "SAH-CRF")]
    SahCrf,
    /// Dual attention with the topic task, softmax outputs.
    #[serde(rename = "DAH")]
    Dah,
    /// Topic task and CRFs, attention replaced by mean pooling.
    #[serde(rename = "DAH-CRF-noDual")]
    DahCrfNoDual,
    #[serde(rename = "DAH-CRF")]
    DahCrf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextKind {
    /// Attention conditioned on the DA tagger state only.
    Single,
    /// Attention conditioned on both tagger states.
    Dual,
    MeanPool,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Sah,
        Variant::SahCrf,
        Variant::Dah,
        Variant::DahCrfNoDual,
        Variant::DahCrf,
    ];

    pub fn has_topic(self) -> bool {
        matches!(self, Variant::Dah | Variant::DahCrfNoDual | Variant::DahCrf)
    }

    pub fn has_crf(self) -> bool {
        matches!(self, Variant::SahCrf | Variant::DahCrfNoDual | Variant::DahCrf)
    }

    pub fn context(self) -> ContextKind {
        match self {
            Variant::Sah | Variant::SahCrf => ContextKind::Single,
            Variant::Dah | Variant::DahCrf => ContextKind::Dual,
            Variant::DahCrfNoDual => ContextKind::MeanPool,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sah => "SAH",
            Variant::SahCrf => "SAH-CRF",
            Variant::Dah => "DAH",
            Variant::DahCrfNoDual => "DAH-CRF-noDual",
            Variant::DahCrf => "DAH-CRF",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicSource {
    None,
    /// Gold conversation topics from the corpus file.
    ManualConv,
    LdaConv,
    LdaUtt,
}

impl TopicSource {
    pub fn name(self) -> &'static str {
        match self {
            TopicSource::None => "none",
            TopicSource::ManualConv => "manual_conv",
            TopicSource::LdaConv => "lda_conv",
            TopicSource::LdaUtt => "lda_utt",
        }
    }
}

impl fmt::Display for TopicSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopicSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            TopicSource::None,
            TopicSource::ManualConv,
            TopicSource::LdaConv,
            TopicSource::LdaUtt,
        ]
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown topic source {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub topic_source: TopicSource,
    /// GRU size per direction, for both the encoder and the taggers.
    pub hidden: usize,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_features: usize,
    pub char_encoder: CharEncoderKind,
    pub attention_dim: usize,
    pub dropout: f64,
    pub dropout_embeddings: bool,
    pub dropout_encoder: bool,
    pub dropout_tagger: bool,
    pub lr: f64,
    pub weight_decay: f64,
    /// Apply weight decay directly to the weights instead of adding it to
    /// the gradient.
    pub decoupled_weight_decay: bool,
    pub alpha: f64,
    pub max_batch: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Global gradient-norm limit; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub vocab_coverage: f64,
    pub lowercase: bool,
    pub split_whitespace: bool,
    /// Pretrained word vectors (`token v1 .. vD` per line).
    pub embeddings: Option<String>,
    pub crf_start_stop: bool,
    pub max_conversation_len: Option<usize>,
    /// Topic model used to label corpora for the `lda_*` topic sources.
    pub topic_model: Option<String>,
    pub fold_in_sweeps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::DahCrf,
            topic_source: TopicSource::LdaUtt,
            hidden: 256,
            word_dim: 300,
            char_dim: 50,
            char_features: 50,
            char_encoder: CharEncoderKind::Cnn,
            attention_dim: 256,
            dropout: 0.2,
            dropout_embeddings: true,
            dropout_encoder: true,
            dropout_tagger: true,
            lr: 0.001,
            weight_decay: 0.0001,
            decoupled_weight_decay: false,
            alpha: 0.5,
            max_batch: 50,
            epochs: 100,
            patience: 10,
            clip_norm: 5.0,
            seed: 1,
            vocab_coverage: 0.85,
            lowercase: true,
            split_whitespace: true,
            embeddings: None,
            crf_start_stop: false,
            max_conversation_len: None,
            topic_model: None,
            fold_in_sweeps: crate::lda::DEFAULT_FOLD_IN_SWEEPS,
        }
    }
}

fn toml_error(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_error)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(toml_error)
    }

    /// Applies `key=value` overrides. Values are read as TOML literals, so
    /// `lr=0.01` is a number and `variant=SAH-CRF` falls back to a string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml_string()?).map_err(toml_error)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let key = key.trim();
            let raw = raw.trim();
            let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
                Ok(mut t) => t.remove("v").expect("parsed key"),
                Err(_) => toml::Value::String(raw.to_owned()),
            };
            table.insert(key.to_owned(), value);
        }
        table.try_into().map_err(toml_error)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.variant.has_topic() != (self.topic_source != TopicSource::None) {
            return bad(format!(
                "variant {} {} a topic task but topic_source is {}",
                self.variant,
                if self.variant.has_topic() { "has" } else { "has no" },
                self.topic_source
            ));
        }
        for (name, v) in [
            ("dropout", self.dropout),
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be a finite non-negative weight, got {}", self.alpha));
        }
        if !(self.vocab_coverage > 0.0 && self.vocab_coverage <= 1.0) {
            return bad(format!("vocab_coverage must be in (0, 1], got {}", self.vocab_coverage));
        }
        if !(self.clip_norm >= 0.0) {
            return bad(format!("clip_norm must be non-negative, got {}", self.clip_norm));
        }
        for (name, v) in [
            ("hidden", self.hidden),
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_features", self.char_features),
            ("attention_dim", self.attention_dim),
            ("max_batch", self.max_batch),
            ("epochs", self.epochs),
            ("fold_in_sweeps", self.fold_in_sweeps),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.char_encoder == CharEncoderKind::Bigru && self.char_features % 2 != 0 {
            return bad(format!(
                "char_features must be even for the character BiGRU, got {}",
                self.char_features
            ));
        }
        if self.max_conversation_len == Some(0) {
            return bad("max_conversation_len must be positive".into());
        }
        Ok(())
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            lowercase: self.lowercase,
            split_whitespace: self.split_whitespace,
        }
    }

    /// Hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        let back = ModelConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ModelConfig::from_toml_str("variant = \"SAH-CRF\"\ntopic_source = \"none\"\nhidden = 32\n").unwrap();
        assert_eq!(c.variant, Variant::SahCrf);
        assert_eq!(c.hidden, 32);
        assert_eq!(c.lr, 0.001);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = ModelConfig::from_toml_str("hiden = 3").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn overrides_parse_values() {
        let c = ModelConfig::default()
            .with_overrides(&["lr=0.01", "variant=SAH", "topic_source=none", "embeddings=vec.txt"])
            .unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.variant, Variant::Sah);
        assert_eq!(c.embeddings.as_deref(), Some("vec.txt"));
        assert!(ModelConfig::default().with_overrides(&["lr"]).is_err());
        assert!(ModelConfig::default().with_overrides(&["hidden=big"]).is_err());
    }

    #[test]
    fn topic_source_must_match_variant() {
        let c = ModelConfig {
            variant: Variant::SahCrf,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ModelConfig {
            topic_source: TopicSource::None,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn rates_must_be_below_one() {
        for o in ["dropout=1.0", "lr=-0.1", "weight_decay=2"] {
            let c = ModelConfig::default().with_overrides(&[o]).unwrap();
            assert!(c.validate().is_err(), "{o}");
        }
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("DAH-X".parse::<Variant>().is_err());
    }
}
