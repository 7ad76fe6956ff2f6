use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use icadetect::evaluation::{self, metrics, render_lexicon_table, render_metrics_table, ConfusionCounts};
use icadetect::ica::synth::{mixture, standard_mix, SourceFamily};
use icadetect::ica::{ica_ebm, isi, sparse_ica_ebm, IcaConfig};
use icadetect::pipeline::{fit_final, nested_cv, order_scores, select_order};
use icadetect::text::{build_matrix, label_counts, read_corpus_file, write_triplets, IdfWeights, Label};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{
    published_reference, read_model, write_json, CvReportFile, EvalFile, LexiconFile, Metadata, ModelFile, Prediction,
    Provenance,
};

/// Single-run timing reference: order 50 on 560 samples took 2.96 s on a
/// 4-core 1.9 GHz machine.
const REFERENCE_ORDER: usize = 50;
const REFERENCE_SAMPLES: usize = 560;
const REFERENCE_SECONDS: f64 = 2.96;

pub fn run(config: &RunConfig, threads: usize) -> Result<(), CliError> {
    let started = Instant::now();
    let mut timings = BTreeMap::new();
    let mut lap = Instant::now();
    let mut stage = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), lap.elapsed().as_secs_f64());
        lap = Instant::now();
    };

    let tokenizer = config.tokenizer.build();
    let docs = read_corpus_file(config.dataset()?, config.tokenizer.allow_empty)
        .map_err(|e| CliError::Data(format!("{}: {e}", config.dataset().unwrap().display())))?;
    let counts = build_matrix(&docs, &tokenizer)?;
    let labels: Vec<Label> = docs.iter().map(|d| d.label).collect();
    stage("featurize", &mut timings);

    let report = nested_cv(&counts, &labels, &config.grid, &config.cv)?;
    let order = select_order(&report).ok_or_else(|| CliError::Data("no grid order fits the training folds".into()))?;
    stage("nested_cv", &mut timings);

    let bundle = fit_final(&counts, &labels, &tokenizer, &config.grid, order, &config.cv)?;
    stage("final_fit", &mut timings);

    let provenance = Provenance::new(config);
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let k = config.lexicon_size.min(bundle.d);
    let components = evaluation::lexicons(&bundle.extractor.a_hat, &bundle.vocab, &bundle.association, k)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let mut rows = Vec::new();
    for scope in &report.scopes {
        rows.push((format!("ica/{}", scope.scope), scope.mean));
    }
    let table = render_metrics_table(&rows, &published_reference());

    write_json(
        &out.join("cv_report.json"),
        &CvReportFile {
            provenance: provenance.clone(),
            config: config.clone(),
            documents: docs.len(),
            vocabulary_size: counts.n_terms(),
            label_counts: label_counts(&docs),
            order_scores: order_scores(&report),
            selected_order: order,
            report,
        },
    )?;
    write_json(
        &out.join("lexicons.json"),
        &LexiconFile {
            provenance: provenance.clone(),
            k,
            components,
        },
    )?;
    write_json(&out.join("model.json"), &ModelFile { provenance, bundle })?;
    let table_path = out.join("metrics.txt");
    std::fs::write(&table_path, &table).map_err(|e| CliError::io(&table_path, e))?;
    stage("write_reports", &mut timings);
    timings.insert("total".into(), started.elapsed().as_secs_f64());

    write_json(
        &out.join("metadata.json"),
        &Metadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads,
            started_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
                .saturating_sub(started.elapsed().as_secs()),
            timings,
        },
    )?;
    println!("selected order N = {order}");
    print!("{table}");
    println!("reports written to {}", out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BenchRun {
    pub seed: u64,
    pub isi: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub iters: usize,
    pub restart: usize,
    pub seconds: f64,
    pub cost_trace: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BenchSummary {
    pub mean_isi: f64,
    pub median_isi: f64,
    pub max_isi: f64,
    pub seeds_below_0_1: usize,
    pub total_seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReferenceTiming {
    pub order: usize,
    pub samples: usize,
    pub seconds: f64,
    pub published_reference_seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub tool_version: String,
    pub sources: Vec<SourceFamily>,
    pub samples: usize,
    pub ica: IcaConfig,
    pub runs: Vec<BenchRun>,
    pub summary: BenchSummary,
    pub reference_timing: Option<ReferenceTiming>,
}

pub struct BenchParams {
    pub sources: Vec<String>,
    pub samples: usize,
    pub seeds: u64,
    pub first_seed: u64,
    pub ica: IcaConfig,
    pub reference_timing: bool,
    pub out: Option<PathBuf>,
}

fn parse_sources(names: &[String]) -> Result<Vec<SourceFamily>, CliError> {
    let mut out = Vec::new();
    for name in names {
        if name.trim().eq_ignore_ascii_case("standard") {
            out.extend(standard_mix());
        } else {
            out.push(name.parse::<SourceFamily>().map_err(CliError::Config)?);
        }
    }
    if out.len() < 2 {
        return Err(CliError::Config("at least two sources are needed".into()));
    }
    Ok(out)
}

fn fit(x: &icadetect::ica::synth::Mixture, config: &IcaConfig) -> Result<icadetect::ica::IcaResult, CliError> {
    let res = if config.is_sparse() {
        sparse_ica_ebm(&x.observed, config)
    } else {
        ica_ebm(&x.observed, config)
    };
    res.map_err(|e| CliError::Numerical(e.to_string()))
}

pub fn bss_bench(p: &BenchParams) -> Result<(), CliError> {
    let sources = parse_sources(&p.sources)?;
    if p.seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    if p.samples < 2 * sources.len() {
        return Err(CliError::Config(format!("--samples must be at least {}", 2 * sources.len())));
    }
    p.ica.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let started = Instant::now();
    let mut runs = Vec::new();
    for seed in p.first_seed..p.first_seed + p.seeds {
        let m = mixture(&sources, p.samples, seed);
        let t = Instant::now();
        let res = fit(&m, &IcaConfig { seed, ..p.ica.clone() })?;
        runs.push(BenchRun {
            seed,
            isi: isi(&res.w, &m.mixing),
            final_cost: res.final_cost(),
            converged: res.converged,
            iters: res.iters,
            restart: res.restart,
            seconds: t.elapsed().as_secs_f64(),
            cost_trace: res.cost_trace,
        });
    }
    let total_seconds = started.elapsed().as_secs_f64();
    let mut isis: Vec<f64> = runs.iter().map(|r| r.isi).collect();
    isis.sort_by(f64::total_cmp);
    let n = isis.len();
    let median_isi = if n % 2 == 1 {
        isis[n / 2]
    } else {
        0.5 * (isis[n / 2 - 1] + isis[n / 2])
    };
    let summary = BenchSummary {
        mean_isi: isis.iter().sum::<f64>() / n as f64,
        median_isi,
        max_isi: isis[n - 1],
        seeds_below_0_1: isis.iter().filter(|&&v| v < 0.1).count(),
        total_seconds,
    };

    let reference_timing = if p.reference_timing {
        let families: Vec<SourceFamily> = standard_mix().into_iter().cycle().take(REFERENCE_ORDER).collect();
        let m = mixture(&families, REFERENCE_SAMPLES, p.first_seed);
        let t = Instant::now();
        fit(&m, &IcaConfig { seed: p.first_seed, ..p.ica.clone() })?;
        Some(ReferenceTiming {
            order: REFERENCE_ORDER,
            samples: REFERENCE_SAMPLES,
            seconds: t.elapsed().as_secs_f64(),
            published_reference_seconds: REFERENCE_SECONDS,
        })
    } else {
        None
    };

    eprintln!(
        "{} seeds: median ISI {:.4}, mean {:.4}, max {:.4}, {:.1} s",
        n, summary.median_isi, summary.mean_isi, summary.max_isi, summary.total_seconds
    );
    let report = BenchReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        sources,
        samples: p.samples,
        ica: p.ica.clone(),
        runs,
        summary,
        reference_timing,
    };
    emit_json(p.out.as_deref(), &report)
}

pub fn discover(model: &Path, k: usize, show: usize, out: Option<&Path>) -> Result<(), CliError> {
    let file = read_model(model)?;
    let b = &file.bundle;
    if k == 0 || k > b.d {
        return Err(CliError::Config(format!("k must be between 1 and the vocabulary size {}, got {k}", b.d)));
    }
    let components = evaluation::lexicons(&b.extractor.a_hat, &b.vocab, &b.association, k)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let shown = &components[..show.min(components.len())];
    eprint!("{}", render_lexicon_table(shown));
    emit_json(
        out,
        &LexiconFile {
            provenance: file.provenance.clone(),
            k,
            components,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MatrixWeighting {
    Counts,
    Tfidf,
}

pub fn featurize(config: &RunConfig, data: &Path, weighting: MatrixWeighting, out: Option<&Path>) -> Result<(), CliError> {
    let docs = read_corpus_file(data, config.tokenizer.allow_empty)
        .map_err(|e| CliError::Data(format!("{}: {e}", data.display())))?;
    let counts = build_matrix(&docs, &config.tokenizer.build())?;
    let m = match weighting {
        MatrixWeighting::Counts => counts,
        MatrixWeighting::Tfidf => IdfWeights::fit(&counts, config.cv.idf)?.apply(&counts)?,
    };
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
            let mut w = std::io::BufWriter::new(file);
            write_triplets(&m, &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| CliError::io(path, e))
        }
        None => write_triplets(&m, std::io::stdout().lock()).map_err(|e| CliError::Data(e.to_string())),
    }
}

pub fn eval(model: &Path, data: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let file = read_model(model)?;
    let docs = read_corpus_file(data, file.bundle.tokenizer.allow_empty)
        .map_err(|e| CliError::Data(format!("{}: {e}", data.display())))?;
    let scored = file.bundle.score(&docs)?;
    let truth: Vec<Label> = docs.iter().map(|d| d.label).collect();
    let counts = ConfusionCounts::from_labels(&truth, &scored.labels).map_err(|e| CliError::Data(e.to_string()))?;
    let m = metrics(&counts).map_err(|e| CliError::Data(e.to_string()))?;
    eprint!("{}", render_metrics_table(&[("model".into(), m)], &[]));
    let predictions = docs
        .iter()
        .zip(&scored.labels)
        .zip(scored.decision.iter())
        .map(|((d, &p), &v)| Prediction {
            id: d.id.clone(),
            label: d.label,
            predicted: p,
            decision: v,
        })
        .collect();
    emit_json(
        out,
        &EvalFile {
            model_provenance: file.provenance,
            counts,
            metrics: m,
            predictions,
        },
    )
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), CliError> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
            Ok(())
        }
    }
}
