//! Experiment configuration: a TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use icadetect::evaluation::DEFAULT_LEXICON_SIZE;
use icadetect::pipeline::{CvOptions, HyperGrid};
use icadetect::text::{default_stop_words, TokenizeConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopWords {
    /// The bundled English list.
    #[default]
    Default,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSettings {
    pub stop_words: StopWords,
    /// Added to the base list.
    pub extra_stop_words: Vec<String>,
    /// Non-alphanumeric characters kept at token edges.
    pub keep_chars: Vec<char>,
    pub allow_empty: bool,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        let base = TokenizeConfig::default();
        Self {
            stop_words: StopWords::Default,
            extra_stop_words: Vec::new(),
            keep_chars: base.keep_chars,
            allow_empty: base.allow_empty,
        }
    }
}

impl TokenizerSettings {
    pub fn build(&self) -> TokenizeConfig {
        let mut stop_words = match self.stop_words {
            StopWords::Default => default_stop_words(),
            StopWords::None => Default::default(),
        };
        stop_words.extend(self.extra_stop_words.iter().map(|w| w.to_lowercase()));
        TokenizeConfig {
            stop_words,
            keep_chars: self.keep_chars.clone(),
            allow_empty: self.allow_empty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Labeled CSV corpus with columns `id,label,text`.
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub tokenizer: TokenizerSettings,
    /// Terms listed per component in `lexicons.json`.
    pub lexicon_size: usize,
    pub grid: HyperGrid,
    pub cv: CvOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            output_dir: PathBuf::from("icadetect-out"),
            tokenizer: TokenizerSettings::default(),
            lexicon_size: DEFAULT_LEXICON_SIZE,
            grid: HyperGrid::default(),
            cv: CvOptions::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies the overrides in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.grid.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.cv.ica.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.cv.svm_tol > 0.0 && self.cv.svm_tol.is_finite()) {
            return Err(CliError::Config("cv.svm_tol must be a positive number".into()));
        }
        if self.lexicon_size == 0 {
            return Err(CliError::Config("lexicon_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<&Path, CliError> {
        self.dataset
            .as_deref()
            .ok_or_else(|| CliError::Config("no dataset given (set `dataset` in the config or pass --set dataset=PATH)".into()))
    }

    /// SHA-256 of the resolved configuration in canonical JSON form, with
    /// the output directory left out.
    pub fn hash(&self) -> String {
        let keyed = RunConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_vec(&keyed).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Sets a dotted key in `table`. The value is read as a TOML value and
/// falls back to a bare string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid override key `{key}`")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));

    let (last, parents) = path.split_last().expect("non-empty key");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
