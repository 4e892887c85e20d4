use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dahcrf_core::config::ModelConfig;
use dahcrf_core::corpus::{load_corpus, Conversation, Preprocess};
use dahcrf_core::{Error, Result};
use serde::Serialize;

use crate::ConfigArgs;

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Defaults, then the config file, then `--set` overrides. Any failure here
/// counts as a configuration error, including an unreadable file.
pub fn load_config(args: &ConfigArgs) -> Result<ModelConfig> {
    let base = match &args.config {
        Some(path) => ModelConfig::load(path).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        })?,
        None => ModelConfig::default(),
    };
    let cfg = base.with_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn corpus(path: &Path, prep: &Preprocess) -> Result<Vec<Conversation>> {
    let convs = load_corpus(path, prep)?;
    log::info!("{}: {} conversations", path.display(), convs.len());
    Ok(convs)
}

pub fn stopwords(path: Option<&PathBuf>) -> Result<BTreeSet<String>> {
    let Some(path) = path else {
        return Ok(BTreeSet::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|w| !w.is_empty() && !w.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}

pub struct Output {
    path: PathBuf,
    inner: Box<dyn Write>,
}

impl Output {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| io_error(path, e))?;
        Ok(Output {
            path: path.to_path_buf(),
            inner: Box::new(BufWriter::new(f)),
        })
    }

    /// The file at `path`, or stdout.
    pub fn or_stdout(path: Option<&PathBuf>) -> Result<Self> {
        match path {
            Some(p) => Self::create(p),
            None => Ok(Output {
                path: PathBuf::from("<stdout>"),
                inner: Box::new(std::io::stdout().lock()),
            }),
        }
    }

    pub fn writer(&mut self) -> &mut dyn Write {
        &mut self.inner
    }

    /// Wraps an I/O result with this output's path.
    pub fn check<T>(&self, r: std::io::Result<T>) -> Result<T> {
        r.map_err(|e| io_error(&self.path, e))
    }

    pub fn json<T: Serialize>(mut self, value: &T) -> Result<()> {
        let r = serde_json::to_writer_pretty(&mut self.inner, value)
            .map_err(std::io::Error::from)
            .and_then(|()| writeln!(self.inner));
        self.check(r)?;
        self.finish()
    }

    pub fn finish(mut self) -> Result<()> {
        let r = self.inner.flush();
        self.check(r)
    }
}
