use std::collections::BTreeMap;
use std::path::Path;

use icadetect::evaluation::{ComponentLexicon, ConfusionCounts, Metrics};
use icadetect::pipeline::{CvReport, ModelBundle};
use icadetect::text::Label;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

/// Schema version stamped into every report.
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub report_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub cv_seed: u64,
    pub ica_seed: u64,
    /// `true` when the sparsity-penalized ICA cost was used.
    pub sparse: bool,
    pub lambda: f64,
}

impl Provenance {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            report_version: REPORT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            cv_seed: config.cv.seed,
            ica_seed: config.cv.ica.seed,
            sparse: config.cv.ica.is_sparse(),
            lambda: config.cv.ica.lambda,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvReportFile {
    pub provenance: Provenance,
    pub config: RunConfig,
    pub documents: usize,
    pub vocabulary_size: usize,
    pub label_counts: BTreeMap<Label, usize>,
    /// Mean best validation accuracy per order.
    pub order_scores: BTreeMap<usize, f64>,
    pub selected_order: usize,
    pub report: CvReport,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub provenance: Provenance,
    pub bundle: ModelBundle,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconFile {
    pub provenance: Provenance,
    pub k: usize,
    pub components: Vec<ComponentLexicon>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    pub label: Label,
    pub predicted: Label,
    pub decision: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    pub model_provenance: Provenance,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
}

/// Wall-clock data kept apart from the reproducible reports.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub tool_version: String,
    pub threads: usize,
    pub started_unix_secs: u64,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

/// Published accuracy, sensitivity, precision and F1 for the three kernel
/// families, printed beside the run's own numbers.
pub fn published_reference() -> Vec<(String, Metrics)> {
    [
        ("gaussian", 0.812, 0.763, 0.859, 0.803),
        ("rbf", 0.796, 0.768, 0.824, 0.791),
        ("polynomial", 0.794, 0.762, 0.8267, 0.784),
    ]
    .into_iter()
    .map(|(name, a, s, p, f)| {
        (
            format!("published reference/{name}"),
            Metrics {
                accuracy: Some(a),
                sensitivity: Some(s),
                precision: Some(p),
                f1: Some(f),
            },
        )
    })
    .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let model: ModelFile =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: corrupt model file: {e}", path.display())))?;
    model
        .bundle
        .validate()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(model)
}
