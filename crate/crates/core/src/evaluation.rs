//! Classification metrics and word lexicons for estimated components.
//!
//! `Unreliable` is the positive class. Ratios with a zero denominator are
//! reported as `None` (serialized as `null`), never as zero.

use std::cmp::Ordering;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{Label, Vocabulary};

/// Number of terms per lexicon unless configured otherwise.
pub const DEFAULT_LEXICON_SIZE: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("{what} {index} is out of range (limit {limit})")]
    IndexOutOfRange { what: &'static str, index: usize, limit: usize },
    #[error("labels contain a single class")]
    SingleClass,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub r#fn: u64,
}

impl ConfusionCounts {
    pub fn from_labels(truth: &[Label], predicted: &[Label]) -> Result<Self, EvalError> {
        if truth.len() != predicted.len() {
            return Err(EvalError::LengthMismatch(format!(
                "{} true labels, {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (Label::Unreliable, Label::Unreliable) => c.tp += 1,
                (Label::Reliable, Label::Unreliable) => c.fp += 1,
                (Label::Reliable, Label::Reliable) => c.tn += 1,
                (Label::Unreliable, Label::Reliable) => c.r#fn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.r#fn
    }

    /// Counts with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            fp: self.r#fn,
            tn: self.tp,
            r#fn: self.fp,
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            r#fn: self.r#fn + o.r#fn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics, EvalError> {
    if c.total() == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    let sensitivity = ratio(c.tp, c.tp + c.r#fn);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        _ => None,
    };
    Ok(Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity,
        precision,
        f1,
    })
}

/// Per-field mean over the entries where the metric is defined.
pub fn mean_metrics(all: &[Metrics]) -> Metrics {
    let mean = |get: fn(&Metrics) -> Option<f64>| {
        let vals: Vec<f64> = all.iter().filter_map(get).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Metrics {
        accuracy: mean(|m| m.accuracy),
        sensitivity: mean(|m| m.sensitivity),
        precision: mean(|m| m.precision),
        f1: mean(|m| m.f1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub term: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentLexicon {
    pub component_index: usize,
    /// Point-biserial correlation with the label, positive toward unreliable.
    pub association: Option<f64>,
    pub entries: Vec<LexiconEntry>,
}

/// The `k` terms with the largest `|a_hat[·, component]|`, by decreasing
/// magnitude and then by term.
pub fn top_words(a_hat: &DMatrix<f64>, vocab: &Vocabulary, component: usize, k: usize) -> Result<ComponentLexicon, EvalError> {
    if a_hat.nrows() != vocab.len() {
        return Err(EvalError::LengthMismatch(format!(
            "mixing matrix has {} rows, vocabulary has {} terms",
            a_hat.nrows(),
            vocab.len()
        )));
    }
    if component >= a_hat.ncols() {
        return Err(EvalError::IndexOutOfRange {
            what: "component",
            index: component,
            limit: a_hat.ncols(),
        });
    }
    if k == 0 || k > vocab.len() {
        return Err(EvalError::IndexOutOfRange {
            what: "lexicon size",
            index: k,
            limit: vocab.len(),
        });
    }
    let col = a_hat.column(component);
    let terms = vocab.terms();
    let mut order: Vec<usize> = (0..terms.len()).collect();
    order.sort_by(|&i, &j| {
        col[j]
            .abs()
            .partial_cmp(&col[i].abs())
            .unwrap_or(Ordering::Equal)
            .then_with(|| terms[i].cmp(&terms[j]))
    });
    Ok(ComponentLexicon {
        component_index: component,
        association: None,
        entries: order
            .into_iter()
            .take(k)
            .map(|i| LexiconEntry {
                term: terms[i].clone(),
                weight: col[i].abs(),
            })
            .collect(),
    })
}

/// Point-biserial correlation of each row of `y` with the label coded
/// `+1` unreliable, `−1` reliable. `None` for constant rows.
pub fn component_class_association(y: &DMatrix<f64>, labels: &[Label]) -> Result<Vec<Option<f64>>, EvalError> {
    if y.ncols() != labels.len() {
        return Err(EvalError::LengthMismatch(format!("{} samples, {} labels", y.ncols(), labels.len())));
    }
    let signs: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    if !(signs.contains(&1.0) && signs.contains(&-1.0)) {
        return Err(EvalError::SingleClass);
    }
    let n = signs.len() as f64;
    let ls_mean = signs.iter().sum::<f64>() / n;
    let ls_var: f64 = signs.iter().map(|s| (s - ls_mean).powi(2)).sum();
    Ok(y
        .row_iter()
        .map(|row| {
            let mean = row.sum() / n;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum();
            if !(var > 0.0) {
                return None;
            }
            let cov: f64 = row.iter().zip(&signs).map(|(v, s)| (v - mean) * (s - ls_mean)).sum();
            Some(cov / (var * ls_var).sqrt())
        })
        .collect())
}

/// Component indices by decreasing association; undefined scores last.
pub fn rank_components(association: &[Option<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..association.len()).collect();
    idx.sort_by(|&i, &j| match (association[i], association[j]) {
        (Some(a), Some(b)) => b.partial_cmp(&a).unwrap_or(Ordering::Equal).then(i.cmp(&j)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => i.cmp(&j),
    });
    idx
}

/// One lexicon per component, ordered by [`rank_components`].
pub fn lexicons(
    a_hat: &DMatrix<f64>,
    vocab: &Vocabulary,
    association: &[Option<f64>],
    k: usize,
) -> Result<Vec<ComponentLexicon>, EvalError> {
    if association.len() != a_hat.ncols() {
        return Err(EvalError::LengthMismatch(format!(
            "{} association scores for {} components",
            association.len(),
            a_hat.ncols()
        )));
    }
    rank_components(association)
        .into_iter()
        .map(|c| {
            let mut lex = top_words(a_hat, vocab, c, k)?;
            lex.association = association[c];
            Ok(lex)
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |x| format!("{x:.3}"))
}

/// Side-by-side term columns, one column per lexicon.
pub fn render_lexicon_table(lexicons: &[ComponentLexicon]) -> String {
    let headers: Vec<String> = lexicons
        .iter()
        .map(|l| format!("C{} ({})", l.component_index, fmt_opt(l.association)))
        .collect();
    let width = lexicons
        .iter()
        .flat_map(|l| l.entries.iter().map(|e| e.term.chars().count()))
        .chain(headers.iter().map(|h| h.chars().count()))
        .max()
        .unwrap_or(0);
    let rows = lexicons.iter().map(|l| l.entries.len()).max().unwrap_or(0);
    let mut out = String::new();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .map(|c| format!("{c:<width$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    out.push_str(&line(headers.iter().map(String::as_str).collect()));
    out.push('\n');
    for r in 0..rows {
        let cells = lexicons
            .iter()
            .map(|l| l.entries.get(r).map_or("", |e| e.term.as_str()))
            .collect();
        out.push_str(&line(cells));
        out.push('\n');
    }
    out
}

/// Metrics for the kernel families of one run, alongside an optional
/// reference row per family.
pub fn render_metrics_table(rows: &[(String, Metrics)], reference: &[(String, Metrics)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<32} {:>9} {:>11} {:>9} {:>9}",
        "model", "accuracy", "sensitivity", "precision", "f1"
    );
    for (name, m) in rows.iter().chain(reference) {
        let _ = writeln!(
            out,
            "{:<32} {:>9} {:>11} {:>9} {:>9}",
            name,
            fmt_opt(m.accuracy),
            fmt_opt(m.sensitivity),
            fmt_opt(m.precision),
            fmt_opt(m.f1)
        );
    }
    out
}
