//! Text featurization: tokenization, vocabulary construction and tf-idf
//! weighting of word-by-document count matrices.
//!
//! Documents are columns and vocabulary terms are rows, so a corpus of `V`
//! documents over a vocabulary of `d` terms yields a `d x V` matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag of the bundled stop-word list.
pub const DEFAULT_STOP_WORDS_VERSION: &str = "en-v1";

const DEFAULT_STOP_WORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Error)]
pub enum TextError {
    #[error("no tokens survived tokenization; vocabulary is empty")]
    EmptyVocabulary,
    #[error("expected a {expected:?} matrix, got {found:?}")]
    WrongWeighting { expected: Weighting, found: Weighting },
    #[error("corpus contains no documents")]
    NoDocuments,
    #[error("line {line}: missing required column `{column}`")]
    MissingColumn { line: u64, column: &'static str },
    #[error("line {line}: invalid label `{value}` (expected reliable or unreliable)")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: duplicate document id `{id}`")]
    DuplicateId { line: u64, id: String },
    #[error("line {line}: empty text for document `{id}`")]
    EmptyText { line: u64, id: String },
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary reliability label. `Unreliable` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Reliable,
    Unreliable,
}

impl Label {
    /// `+1` for unreliable, `-1` for reliable.
    pub fn sign(self) -> f64 {
        match self {
            Label::Unreliable => 1.0,
            Label::Reliable => -1.0,
        }
    }

    pub fn from_sign(value: f64) -> Self {
        if value >= 0.0 {
            Label::Unreliable
        } else {
            Label::Reliable
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "reliable" => Ok(Label::Reliable),
            "unreliable" => Ok(Label::Unreliable),
            other => Err(other.to_string()),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Reliable => f.write_str("reliable"),
            Label::Unreliable => f.write_str("unreliable"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: Label,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

/// Tokenizer settings.
///
/// Tokens are split on Unicode whitespace, stripped of leading and trailing
/// punctuation (except the characters in `keep_chars`), lowercased, and
/// filtered against the stop-word list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizeConfig {
    pub stop_words: BTreeSet<String>,
    pub keep_chars: Vec<char>,
    pub allow_empty: bool,
}

impl Default for TokenizeConfig {
    fn default() -> Self {
        Self {
            stop_words: default_stop_words(),
            keep_chars: vec!['#', '@'],
            allow_empty: false,
        }
    }
}

impl TokenizeConfig {
    /// A config without any stop-words.
    pub fn without_stop_words() -> Self {
        Self {
            stop_words: BTreeSet::new(),
            ..Self::default()
        }
    }

    pub fn with_stop_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            stop_words: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
            ..Self::default()
        }
    }

    fn is_kept(&self, c: char) -> bool {
        c.is_alphanumeric() || self.keep_chars.contains(&c)
    }
}

/// The bundled English stop-word list.
pub fn default_stop_words() -> BTreeSet<String> {
    DEFAULT_STOP_WORDS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn tokenize(text: &str, config: &TokenizeConfig) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let stripped = raw.trim_matches(|c: char| !config.is_kept(c));
            // a token made only of kept symbols ("#", "@@") is punctuation
            if !stripped.chars().any(char::is_alphanumeric) {
                return None;
            }
            let token = stripped.to_lowercase();
            (!config.stop_words.contains(&token)).then_some(token)
        })
        .collect()
}

/// Lexicographically ordered set of unique terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = terms.into_iter().map(Into::into).collect();
        let terms: Vec<String> = set.into_iter().collect();
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { terms, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term(&self, row: usize) -> Option<&str> {
        self.terms.get(row).map(String::as_str)
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(terms: Vec<String>) -> Self {
        Vocabulary::from_terms(terms)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.terms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    RawCount,
    TfIdf,
}

/// Inverse-document-frequency formula.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdfVariant {
    /// `ln((1 + V) / (1 + df)) + 1`
    #[default]
    Smooth,
    /// `ln(V / df) + 1`
    Plain,
}

/// Word-by-document matrix: rows are vocabulary terms, columns are documents.
#[derive(Debug, Clone, PartialEq)]
pub struct TermDocMatrix {
    pub values: DMatrix<f64>,
    pub vocab: Vocabulary,
    pub doc_ids: Vec<String>,
    pub weighting: Weighting,
}

impl TermDocMatrix {
    pub fn n_terms(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_docs(&self) -> usize {
        self.values.ncols()
    }

    /// Restricts the matrix to the given document columns, in order.
    pub fn select_docs(&self, columns: &[usize]) -> TermDocMatrix {
        TermDocMatrix {
            values: self.values.select_columns(columns),
            vocab: self.vocab.clone(),
            doc_ids: columns.iter().map(|&c| self.doc_ids[c].clone()).collect(),
            weighting: self.weighting,
        }
    }
}

/// Builds the raw-count matrix; the vocabulary is every token that survives
/// tokenization anywhere in `docs`.
pub fn build_matrix(docs: &[Document], config: &TokenizeConfig) -> Result<TermDocMatrix, TextError> {
    if docs.is_empty() {
        return Err(TextError::NoDocuments);
    }
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.text, config)).collect();
    let vocab = Vocabulary::from_terms(tokenized.iter().flatten().cloned());
    if vocab.is_empty() {
        return Err(TextError::EmptyVocabulary);
    }
    Ok(count_tokens(&tokenized, docs, vocab))
}

/// Counts `docs` against a fixed vocabulary. Terms absent from `vocab` are dropped.
pub fn counts_for_vocab(docs: &[Document], vocab: &Vocabulary, config: &TokenizeConfig) -> TermDocMatrix {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.text, config)).collect();
    count_tokens(&tokenized, docs, vocab.clone())
}

fn count_tokens(tokenized: &[Vec<String>], docs: &[Document], vocab: Vocabulary) -> TermDocMatrix {
    let mut values = DMatrix::zeros(vocab.len(), docs.len());
    for (col, tokens) in tokenized.iter().enumerate() {
        for token in tokens {
            if let Some(row) = vocab.position(token) {
                values[(row, col)] += 1.0;
            }
        }
    }
    TermDocMatrix {
        values,
        vocab,
        doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
        weighting: Weighting::RawCount,
    }
}

/// Per-term idf weights fitted on a training count matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfWeights {
    pub variant: IdfVariant,
    pub weights: Vec<f64>,
}

impl IdfWeights {
    pub fn fit(counts: &TermDocMatrix, variant: IdfVariant) -> Result<Self, TextError> {
        expect_raw(counts)?;
        let n_docs = counts.n_docs() as f64;
        let weights = counts
            .values
            .row_iter()
            .map(|row| {
                let df = row.iter().filter(|&&v| v > 0.0).count() as f64;
                match variant {
                    IdfVariant::Smooth => ((1.0 + n_docs) / (1.0 + df)).ln() + 1.0,
                    // df is at least 1 for a fitted vocabulary term
                    IdfVariant::Plain => (n_docs / df.max(1.0)).ln() + 1.0,
                }
            })
            .collect();
        Ok(Self { variant, weights })
    }

    pub fn apply(&self, counts: &TermDocMatrix) -> Result<TermDocMatrix, TextError> {
        expect_raw(counts)?;
        let mut values = counts.values.clone();
        for (mut row, &w) in values.row_iter_mut().zip(&self.weights) {
            row *= w;
        }
        Ok(TermDocMatrix {
            values,
            vocab: counts.vocab.clone(),
            doc_ids: counts.doc_ids.clone(),
            weighting: Weighting::TfIdf,
        })
    }
}

fn expect_raw(counts: &TermDocMatrix) -> Result<(), TextError> {
    if counts.weighting != Weighting::RawCount {
        return Err(TextError::WrongWeighting {
            expected: Weighting::RawCount,
            found: counts.weighting,
        });
    }
    Ok(())
}

/// Smoothed tf-idf: raw term frequency times `ln((1 + V) / (1 + df)) + 1`.
pub fn tfidf(counts: &TermDocMatrix) -> Result<TermDocMatrix, TextError> {
    IdfWeights::fit(counts, IdfVariant::Smooth)?.apply(counts)
}

/// Reads a labeled corpus from CSV with header `id,label,text`.
pub fn read_corpus<R: Read>(reader: R, allow_empty: bool) -> Result<Vec<Document>, TextError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(&e))?
        .iter()
        .map(|h| h.trim().to_lowercase())
        .collect::<Vec<_>>();
    let column = |name: &'static str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(TextError::MissingColumn { line: 1, column: name })
    };
    let (id_col, label_col, text_col) = (column("id")?, column("label")?, column("text")?);

    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize, column: &'static str| {
            record.get(col).ok_or(TextError::MissingColumn { line, column })
        };
        let id = field(id_col, "id")?.to_string();
        let label_raw = field(label_col, "label")?;
        let text = field(text_col, "text")?.to_string();
        let label = label_raw.parse::<Label>().map_err(|value| TextError::BadLabel { line, value })?;
        if !seen.insert(id.clone()) {
            return Err(TextError::DuplicateId { line, id });
        }
        if text.trim().is_empty() && !allow_empty {
            return Err(TextError::EmptyText { line, id });
        }
        docs.push(Document { id, text, label });
    }
    if docs.is_empty() {
        return Err(TextError::NoDocuments);
    }
    Ok(docs)
}

pub fn read_corpus_file(path: impl AsRef<Path>, allow_empty: bool) -> Result<Vec<Document>, TextError> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file), allow_empty)
}

fn csv_error(e: &csv::Error) -> TextError {
    TextError::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Writes the non-zero entries of `m` as `row,col,value` triplets, preceded
/// by a comment line naming the shape and weighting.
pub fn write_triplets<W: std::io::Write>(m: &TermDocMatrix, mut out: W) -> std::io::Result<()> {
    let weighting = match m.weighting {
        Weighting::RawCount => "raw-count",
        Weighting::TfIdf => "tf-idf",
    };
    writeln!(out, "# d={},V={},weighting={}", m.n_terms(), m.n_docs(), weighting)?;
    writeln!(out, "row,col,value")?;
    for col in 0..m.n_docs() {
        for row in 0..m.n_terms() {
            let v = m.values[(row, col)];
            if v != 0.0 {
                writeln!(out, "{row},{col},{v:?}")?;
            }
        }
    }
    Ok(())
}

/// Class counts keyed by label, sorted.
pub fn label_counts(docs: &[Document]) -> BTreeMap<Label, usize> {
    let mut counts = BTreeMap::new();
    for d in docs {
        *counts.entry(d.label).or_insert(0) += 1;
    }
    counts
}
