//! Feature extraction (center, PCA, ICA), train/test projection, nested
//! cross-validation and the saved model bundle.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec;
use crate::evaluation::{self, ConfusionCounts, EvalError, Metrics};
use crate::ica::{ica_ebm, sparse_ica_ebm, IcaConfig, IcaError};
use crate::svm::{self, KernelSpec, SvmError, SvmModel};
use crate::text::{self, Document, IdfVariant, IdfWeights, Label, TermDocMatrix, TextError, TokenizeConfig, Vocabulary, Weighting};
use crate::whitening::{self, fit_center, fit_pca, CenteringStats, PcaError, PcaProjector};

/// Number of outer cross-validation folds.
pub const OUTER_FOLDS: usize = 5;
/// Inner partitions of each outer-train set: 8 train, 1 validation, 1 test.
pub const INNER_PARTS: usize = 10;
/// Largest accepted condition number of `ÂᵀÂ`.
pub const MAX_CONDITION: f64 = 1e12;
/// Format tag written into every model bundle.
pub const BUNDLE_FORMAT: &str = "icadetect-model/1";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Ica(#[from] IcaError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("mixing matrix is ill-conditioned (cond(ÂᵀÂ) = {0:e})")]
    IllConditioned(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("hyperparameter grid is empty: {0}")]
    GridEmpty(String),
    #[error("invalid hyperparameter grid: {0}")]
    InvalidGrid(String),
    #[error("{0}")]
    FoldTooSmall(String),
    #[error("invalid model bundle: {0}")]
    InvalidBundle(String),
}

/// Which mean is removed from test columns before projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestCentering {
    #[default]
    TrainingMean,
    /// The mean of the test batch itself; needs at least two test columns.
    TestMean,
}

/// Convergence diagnostics of the ICA fit behind an extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaSummary {
    pub converged: bool,
    pub iters: usize,
    pub final_cost: f64,
    pub restart: usize,
    pub sparse: bool,
}

/// Fitted center, PCA and ICA stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub stats: CenteringStats,
    pub proj: PcaProjector,
    /// Demixing matrix `W`, `N x N`.
    #[serde(with = "codec::matrix")]
    pub w: DMatrix<f64>,
    /// Estimated mixing matrix `Â = Fᵀ W⁻¹`, `d x N`.
    #[serde(with = "codec::matrix")]
    pub a_hat: DMatrix<f64>,
    pub ica: IcaSummary,
}

impl FeatureExtractor {
    pub fn order(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.a_hat.nrows()
    }

    fn check_rows(&self, x: &DMatrix<f64>) -> Result<(), PipelineError> {
        if x.nrows() != self.input_dim() {
            return Err(PipelineError::DimensionMismatch(format!(
                "extractor expects {} rows, got {}",
                self.input_dim(),
                x.nrows()
            )));
        }
        Ok(())
    }
}

/// Fits the extractor on the `d x V` training matrix. Labels are not used.
pub fn fit_extractor(x_train: &DMatrix<f64>, order: usize, config: &IcaConfig) -> Result<FeatureExtractor, PipelineError> {
    let stats = fit_center(x_train)?;
    let proj = fit_pca(&stats.center(x_train)?, order)?;
    let x_hat = whitening::project(&stats, &proj, x_train)?;
    extractor_from_projection(stats, proj, &x_hat, config)
}

fn extractor_from_projection(
    stats: CenteringStats,
    proj: PcaProjector,
    x_hat: &DMatrix<f64>,
    config: &IcaConfig,
) -> Result<FeatureExtractor, PipelineError> {
    let res = if config.is_sparse() {
        sparse_ica_ebm(x_hat, config)?
    } else {
        ica_ebm(x_hat, config)?
    };
    let w_inv = res.w.clone().try_inverse().ok_or(IcaError::SingularW)?;
    let a_hat = proj.f.transpose() * w_inv;
    Ok(FeatureExtractor {
        ica: IcaSummary {
            converged: res.converged,
            iters: res.iters,
            final_cost: res.final_cost(),
            restart: res.restart,
            sparse: config.is_sparse(),
        },
        stats,
        proj,
        w: res.w,
        a_hat,
    })
}

/// `Y = W F (X − mean)` for the training columns.
pub fn transform_train(fx: &FeatureExtractor, x_train: &DMatrix<f64>) -> Result<DMatrix<f64>, PipelineError> {
    fx.check_rows(x_train)?;
    Ok(&fx.w * whitening::project(&fx.stats, &fx.proj, x_train)?)
}

/// Least-squares coordinates `(ÂᵀÂ)⁻¹ Âᵀ (X − mean)` of test columns.
pub fn transform_test(fx: &FeatureExtractor, x_test: &DMatrix<f64>, centering: TestCentering) -> Result<DMatrix<f64>, PipelineError> {
    fx.check_rows(x_test)?;
    let xc = match centering {
        TestCentering::TrainingMean => fx.stats.center(x_test)?,
        TestCentering::TestMean => fit_center(x_test)?.center(x_test)?,
    };
    let gram = fx.a_hat.tr_mul(&fx.a_hat);
    let eig = SymmetricEigen::new(gram.clone());
    let (min, max) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(PipelineError::IllConditioned(cond));
    }
    let chol = gram.cholesky().ok_or(PipelineError::IllConditioned(cond))?;
    Ok(chol.solve(&fx.a_hat.tr_mul(&xc)))
}

/// Deals the indices of each class, shuffled, round-robin into `parts`
/// groups. Each group's per-class count is within one of every other's.
pub fn stratified_partition(indices: &[usize], labels: &[Label], parts: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); parts];
    let mut next = 0;
    for class in [Label::Reliable, Label::Unreliable] {
        let mut members: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            out[next % parts].push(i);
            next += 1;
        }
    }
    out.iter_mut().for_each(|p| p.sort_unstable());
    out
}

/// Outer folds and the inner 8/1/1 split of every outer-train set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub outer: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

fn derived_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_add(1).wrapping_mul(0xD134_2543_DE82_EF95)
}

impl SplitPlan {
    pub fn new(labels: &[Label], seed: u64) -> Result<Self, PipelineError> {
        let all: Vec<usize> = (0..labels.len()).collect();
        let outer = stratified_partition(&all, labels, OUTER_FOLDS, seed);
        for (k, fold) in outer.iter().enumerate() {
            for class in [Label::Reliable, Label::Unreliable] {
                let count = fold.iter().filter(|&&i| labels[i] == class).count();
                if count < 2 {
                    return Err(PipelineError::FoldTooSmall(format!(
                        "outer fold {k} holds {count} {class} sample(s); need at least 2 per class"
                    )));
                }
            }
        }
        Ok(Self { seed, outer })
    }

    /// All indices outside outer fold `k`, ascending.
    pub fn outer_train(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .outer
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }

    pub fn inner(&self, k: usize, labels: &[Label]) -> InnerSplit {
        let parts = stratified_partition(&self.outer_train(k), labels, INNER_PARTS, derived_seed(self.seed, k as u64));
        let mut train: Vec<usize> = parts[..INNER_PARTS - 2].concat();
        train.sort_unstable();
        InnerSplit {
            train,
            validation: parts[INNER_PARTS - 2].clone(),
            test: parts[INNER_PARTS - 1].clone(),
        }
    }
}

/// Kernel settings relative to the median pairwise distance `m` of the
/// training features: `σ = sigma_scale·m`, `γ = gamma_scale/m²`, and the
/// polynomial inner product is scaled by `scale_factor/m²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelChoice {
    Gaussian { sigma_scale: f64 },
    Rbf { gamma_scale: f64 },
    Polynomial { degree: u32, coef0: f64, scale_factor: f64 },
}

impl KernelChoice {
    pub fn family(&self) -> &'static str {
        match self {
            KernelChoice::Gaussian { .. } => "gaussian",
            KernelChoice::Rbf { .. } => "rbf",
            KernelChoice::Polynomial { .. } => "polynomial",
        }
    }

    pub fn resolve(&self, median: f64) -> KernelSpec {
        let m = if median > 0.0 && median.is_finite() { median } else { 1.0 };
        match *self {
            KernelChoice::Gaussian { sigma_scale } => KernelSpec::Gaussian { sigma: sigma_scale * m },
            KernelChoice::Rbf { gamma_scale } => KernelSpec::Rbf { gamma: gamma_scale / (m * m) },
            KernelChoice::Polynomial {
                degree,
                coef0,
                scale_factor,
            } => KernelSpec::Polynomial {
                degree,
                coef0,
                scale: scale_factor / (m * m),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperGrid {
    pub orders: Vec<usize>,
    pub c_values: Vec<f64>,
    pub kernels: Vec<KernelChoice>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        let mut kernels: Vec<KernelChoice> = [0.5, 1.0, 2.0, 5.0]
            .into_iter()
            .map(|s| KernelChoice::Gaussian { sigma_scale: s })
            .collect();
        kernels.extend([0.1, 0.5, 2.0, 10.0].into_iter().map(|g| KernelChoice::Rbf { gamma_scale: g }));
        kernels.extend([2, 3].into_iter().map(|degree| KernelChoice::Polynomial {
            degree,
            coef0: 1.0,
            scale_factor: 1.0,
        }));
        Self {
            orders: vec![10, 25, 50, 100],
            c_values: vec![0.1, 1.0, 10.0, 100.0],
            kernels,
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, empty) in [
            ("orders", self.orders.is_empty()),
            ("c_values", self.c_values.is_empty()),
            ("kernels", self.kernels.is_empty()),
        ] {
            if empty {
                return Err(PipelineError::GridEmpty(format!("no {name}")));
            }
        }
        if self.orders.contains(&0) {
            return Err(PipelineError::InvalidGrid("orders must be at least 1".into()));
        }
        if let Some(c) = self.c_values.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(PipelineError::InvalidGrid(format!("C must be positive, got {c}")));
        }
        for k in &self.kernels {
            k.resolve(1.0).validate().map_err(|e| PipelineError::InvalidGrid(e.to_string()))?;
        }
        Ok(())
    }

    /// Kernel families in order of first appearance.
    pub fn families(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for k in &self.kernels {
            if !out.contains(&k.family()) {
                out.push(k.family());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvOptions {
    pub seed: u64,
    pub ica: IcaConfig,
    pub centering: TestCentering,
    /// Idf formula refitted on every training set when the input holds raw
    /// counts. Ignored for tf-idf input.
    pub idf: IdfVariant,
    pub svm_tol: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            ica: IcaConfig::default(),
            centering: TestCentering::default(),
            idf: IdfVariant::default(),
            svm_tol: svm::DEFAULT_TOL,
        }
    }
}

/// Validation outcome of one grid point inside one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointResult {
    pub order: usize,
    pub kernel_index: usize,
    pub c: f64,
    pub kernel: KernelSpec,
    /// `None` when the SVM fit failed.
    pub validation_accuracy: Option<f64>,
    pub inner_test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub inner_train_size: usize,
    pub validation_size: usize,
    pub inner_test_size: usize,
    /// Orders from the grid that fit this fold's inner-train size.
    pub orders: Vec<usize>,
    pub ica: Vec<IcaSummary>,
    pub grid: Vec<GridPointResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub selected: GridPointResult,
    /// Kernel after re-resolving its scale on the outer-train features.
    pub refit_kernel: KernelSpec,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

/// Outer-fold results when selection is restricted to one kernel family,
/// or open to all (`scope = "all"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeReport {
    pub scope: String,
    pub folds: Vec<FoldOutcome>,
    /// Per-metric mean over folds where the metric is defined.
    pub mean: Metrics,
    /// Metrics of the summed confusion counts.
    pub pooled: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub grid: HyperGrid,
    pub plan: SplitPlan,
    pub folds: Vec<FoldReport>,
    pub scopes: Vec<ScopeReport>,
}

impl CvReport {
    pub fn scope(&self, name: &str) -> Option<&ScopeReport> {
        self.scopes.iter().find(|s| s.scope == name)
    }
}

/// `x` restricted to `columns`, tf-idf weighted with weights fitted on
/// `fit_columns` when `x` holds raw counts.
struct FoldData {
    train: DMatrix<f64>,
    others: Vec<DMatrix<f64>>,
}

fn fold_data(x: &TermDocMatrix, train: &[usize], others: &[&[usize]], idf: IdfVariant) -> Result<FoldData, PipelineError> {
    let train_m = x.select_docs(train);
    match x.weighting {
        Weighting::TfIdf => Ok(FoldData {
            train: train_m.values,
            others: others.iter().map(|cols| x.values.select_columns(*cols)).collect(),
        }),
        Weighting::RawCount => {
            let weights = IdfWeights::fit(&train_m, idf)?;
            let others = others
                .iter()
                .map(|cols| Ok(weights.apply(&x.select_docs(cols))?.values))
                .collect::<Result<Vec<_>, PipelineError>>()?;
            Ok(FoldData {
                train: weights.apply(&train_m)?.values,
                others,
            })
        }
    }
}

fn signs(labels: &[Label], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| labels[i].sign()).collect()
}

fn accuracy(pred: &[f64], truth: &[f64]) -> Option<f64> {
    (!truth.is_empty()).then(|| pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64)
}

/// Orders usable with `v` training columns of dimension `d`.
fn feasible_orders(orders: &[usize], d: usize, v: usize) -> Vec<usize> {
    let bound = d.min(v.saturating_sub(1));
    let mut out: Vec<usize> = orders.iter().copied().filter(|&n| n <= bound).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Extractors for several orders from one PCA fit at the largest order.
fn fit_extractors(x: &DMatrix<f64>, orders: &[usize], config: &IcaConfig) -> Result<Vec<FeatureExtractor>, PipelineError> {
    let max = *orders.iter().max().expect("at least one order");
    let stats = fit_center(x)?;
    let full = fit_pca(&stats.center(x)?, max)?;
    let x_hat_full = whitening::project(&stats, &full, x)?;
    orders
        .par_iter()
        .map(|&n| {
            let proj = full.truncate(n)?;
            let x_hat = x_hat_full.rows(0, n).into_owned();
            extractor_from_projection(stats.clone(), proj, &x_hat, config)
        })
        .collect()
}

/// Ordering used to pick a grid point: higher validation accuracy, then
/// smaller C, then smaller order, then earlier kernel.
fn better(a: &GridPointResult, b: &GridPointResult) -> bool {
    let (va, vb) = (a.validation_accuracy.unwrap_or(-1.0), b.validation_accuracy.unwrap_or(-1.0));
    if va != vb {
        return va > vb;
    }
    (a.c, a.order, a.kernel_index) < (b.c, b.order, b.kernel_index)
}

fn select<'a>(grid: impl Iterator<Item = &'a GridPointResult>) -> Option<&'a GridPointResult> {
    grid.filter(|g| g.validation_accuracy.is_some())
        .fold(None, |best: Option<&GridPointResult>, g| match best {
            Some(b) if !better(g, b) => Some(b),
            _ => Some(g),
        })
}

/// Evaluates every grid point on one train/validation(/test) split.
fn grid_search(
    x: &TermDocMatrix,
    labels: &[Label],
    split: &InnerSplit,
    grid: &HyperGrid,
    orders: &[usize],
    opts: &CvOptions,
) -> Result<(Vec<IcaSummary>, Vec<GridPointResult>), PipelineError> {
    let data = fold_data(x, &split.train, &[&split.validation, &split.test], opts.idf)?;
    let extractors = fit_extractors(&data.train, orders, &opts.ica)?;
    let y_train = signs(labels, &split.train);
    let y_val = signs(labels, &split.validation);
    let y_test = signs(labels, &split.test);
    let per_order = extractors
        .par_iter()
        .map(|fx| -> Result<Vec<GridPointResult>, PipelineError> {
            let tr = transform_train(fx, &data.train)?.transpose();
            let va = transform_test(fx, &data.others[0], opts.centering)?.transpose();
            let te = if split.test.is_empty() {
                None
            } else {
                Some(transform_test(fx, &data.others[1], opts.centering)?.transpose())
            };
            let median = svm::median_pairwise_distance(&tr);
            let points: Vec<(usize, &KernelChoice, f64)> = grid
                .kernels
                .iter()
                .enumerate()
                .flat_map(|(ki, k)| grid.c_values.iter().map(move |&c| (ki, k, c)))
                .collect();
            Ok(points
                .par_iter()
                .map(|&(kernel_index, choice, c)| {
                    let kernel = choice.resolve(median);
                    let fitted = svm::fit(&tr, &y_train, kernel, c, opts.svm_tol).ok();
                    let score = |m: &SvmModel, feats: &DMatrix<f64>, truth: &[f64]| {
                        m.predict(feats).ok().and_then(|(p, _)| accuracy(&p, truth))
                    };
                    GridPointResult {
                        order: fx.order(),
                        kernel_index,
                        c,
                        kernel,
                        validation_accuracy: fitted.as_ref().and_then(|m| score(m, &va, &y_val)),
                        inner_test_accuracy: fitted
                            .as_ref()
                            .zip(te.as_ref())
                            .and_then(|(m, te)| score(m, te, &y_test)),
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((extractors.into_iter().map(|f| f.ica).collect(), per_order.concat()))
}

/// Trains extractor and SVM on `train` and scores `test`.
fn refit_and_score(
    labels: &[Label],
    train: &[usize],
    test: &[usize],
    fx: &FeatureExtractor,
    x_train: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    choice: &KernelChoice,
    c: f64,
    opts: &CvOptions,
) -> Result<(KernelSpec, ConfusionCounts), PipelineError> {
    let tr = transform_train(fx, x_train)?.transpose();
    let te = transform_test(fx, x_test, opts.centering)?.transpose();
    let kernel = choice.resolve(svm::median_pairwise_distance(&tr));
    let model = svm::fit(&tr, &signs(labels, train), kernel, c, opts.svm_tol)?;
    let (pred, _) = model.predict(&te)?;
    let predicted: Vec<Label> = pred.into_iter().map(Label::from_sign).collect();
    let truth: Vec<Label> = test.iter().map(|&i| labels[i]).collect();
    Ok((kernel, ConfusionCounts::from_labels(&truth, &predicted)?))
}

/// Nested cross-validation over `grid`. Selection is reported both across
/// all kernels (scope `"all"`) and within each kernel family; all scopes
/// share the fitted extractors.
pub fn nested_cv(x: &TermDocMatrix, labels: &[Label], grid: &HyperGrid, opts: &CvOptions) -> Result<CvReport, PipelineError> {
    grid.validate()?;
    opts.ica.validate()?;
    if labels.len() != x.n_docs() {
        return Err(PipelineError::DimensionMismatch(format!(
            "{} documents but {} labels",
            x.n_docs(),
            labels.len()
        )));
    }
    let plan = SplitPlan::new(labels, opts.seed)?;
    let mut scopes: Vec<&'static str> = vec!["all"];
    scopes.extend(grid.families());

    let per_fold = (0..OUTER_FOLDS)
        .into_par_iter()
        .map(|k| -> Result<(FoldReport, Vec<FoldOutcome>), PipelineError> {
            let inner = plan.inner(k, labels);
            let orders = feasible_orders(&grid.orders, x.n_terms(), inner.train.len());
            if orders.is_empty() {
                return Err(PipelineError::FoldTooSmall(format!(
                    "fold {k}: no grid order fits {} inner-train documents",
                    inner.train.len()
                )));
            }
            let (ica, results) = grid_search(x, labels, &inner, grid, &orders, opts)?;

            let train = plan.outer_train(k);
            let test = &plan.outer[k];
            let data = fold_data(x, &train, &[test], opts.idf)?;
            let chosen: Vec<&GridPointResult> = scopes
                .iter()
                .map(|&scope| {
                    select(results.iter().filter(|g| scope == "all" || grid.kernels[g.kernel_index].family() == scope))
                        .ok_or_else(|| PipelineError::GridEmpty(format!("fold {k}: every SVM fit failed in scope {scope}")))
                })
                .collect::<Result<_, _>>()?;
            let mut needed: Vec<usize> = chosen.iter().map(|g| g.order).collect();
            needed.sort_unstable();
            needed.dedup();
            let outer_orders = feasible_orders(&needed, x.n_terms(), train.len());
            let extractors = fit_extractors(&data.train, &outer_orders, &opts.ica)?;
            let outcomes = chosen
                .into_iter()
                .map(|sel| {
                    let fx = extractors
                        .iter()
                        .find(|f| f.order() == sel.order)
                        .expect("outer-train is larger than inner-train");
                    let (refit_kernel, counts) = refit_and_score(
                        labels,
                        &train,
                        test,
                        fx,
                        &data.train,
                        &data.others[0],
                        &grid.kernels[sel.kernel_index],
                        sel.c,
                        opts,
                    )?;
                    Ok(FoldOutcome {
                        fold: k,
                        selected: sel.clone(),
                        refit_kernel,
                        counts,
                        metrics: evaluation::metrics(&counts)?,
                    })
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            let report = FoldReport {
                fold: k,
                train_size: train.len(),
                test_size: test.len(),
                inner_train_size: inner.train.len(),
                validation_size: inner.validation.len(),
                inner_test_size: inner.test.len(),
                orders,
                ica,
                grid: results,
            };
            Ok((report, outcomes))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let scopes = scopes
        .iter()
        .enumerate()
        .map(|(s, &name)| -> Result<ScopeReport, PipelineError> {
            let folds: Vec<FoldOutcome> = per_fold.iter().map(|(_, o)| o[s].clone()).collect();
            let pooled = folds.iter().fold(ConfusionCounts::default(), |acc, f| acc + f.counts);
            Ok(ScopeReport {
                scope: name.to_string(),
                mean: evaluation::mean_metrics(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>()),
                pooled: evaluation::metrics(&pooled)?,
                folds,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CvReport {
        grid: grid.clone(),
        plan,
        folds: per_fold.into_iter().map(|(r, _)| r).collect(),
        scopes,
    })
}

/// Mean over folds of the best validation accuracy reached at each order.
pub fn order_scores(report: &CvReport) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for fold in &report.folds {
        for &n in &fold.orders {
            let best = fold
                .grid
                .iter()
                .filter(|g| g.order == n)
                .filter_map(|g| g.validation_accuracy)
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
            if let Some(b) = best {
                let e = acc.entry(n).or_insert((0.0, 0));
                e.0 += b;
                e.1 += 1;
            }
        }
    }
    acc.into_iter().map(|(n, (s, c))| (n, s / c as f64)).collect()
}

/// The order with the highest [`order_scores`] value; ties go to the
/// smaller order. `None` when no order was evaluated.
pub fn select_order(report: &CvReport) -> Option<usize> {
    order_scores(report)
        .into_iter()
        .fold(None, |best: Option<(usize, f64)>, (n, s)| match best {
            Some((_, bs)) if s <= bs => best,
            _ => Some((n, s)),
        })
        .map(|(n, _)| n)
}

/// Everything needed to score new documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format: String,
    /// Vocabulary size.
    pub d: usize,
    /// Number of components.
    pub n: usize,
    pub tokenizer: TokenizeConfig,
    pub vocab: Vocabulary,
    /// Present when the model was trained on tf-idf features.
    pub idf: Option<IdfWeights>,
    pub centering: TestCentering,
    pub extractor: FeatureExtractor,
    pub svm: SvmModel,
    /// The hyperparameters the final SVM was chosen with.
    pub selected: GridPointResult,
    /// Point-biserial correlation of each training source row with the
    /// label, positive toward unreliable.
    pub association: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub labels: Vec<Label>,
    pub decision: DVector<f64>,
}

impl ModelBundle {
    /// Checks that all stored shapes agree.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidBundle(m));
        if self.format != BUNDLE_FORMAT {
            return bad(format!("unsupported format `{}`", self.format));
        }
        let fx = &self.extractor;
        if self.vocab.len() != self.d {
            return bad(format!("vocabulary has {} terms, header says d = {}", self.vocab.len(), self.d));
        }
        if let Some(idf) = &self.idf {
            if idf.weights.len() != self.d {
                return bad(format!("{} idf weights for d = {}", idf.weights.len(), self.d));
            }
        }
        let shapes = [
            ("mean", (fx.stats.mean.len(), 1), (self.d, 1)),
            ("F", fx.proj.f.shape(), (self.n, self.d)),
            ("W", fx.w.shape(), (self.n, self.n)),
            ("A_hat", fx.a_hat.shape(), (self.d, self.n)),
        ];
        for (name, found, expected) in shapes {
            if found != expected {
                return bad(format!("{name} is {}x{}, expected {}x{}", found.0, found.1, expected.0, expected.1));
            }
        }
        if self.association.len() != self.n {
            return bad(format!("{} association scores for n = {}", self.association.len(), self.n));
        }
        if self.svm.dim() != self.n || self.svm.alphas.len() != self.svm.support_vectors.nrows() {
            return bad("SVM shape does not match the component count".into());
        }
        Ok(())
    }

    /// Featurizes `docs` against the stored vocabulary and classifies them.
    pub fn score(&self, docs: &[Document]) -> Result<Scored, PipelineError> {
        let counts = text::counts_for_vocab(docs, &self.vocab, &self.tokenizer);
        let x = match &self.idf {
            Some(w) => w.apply(&counts)?.values,
            None => counts.values,
        };
        let y = transform_test(&self.extractor, &x, self.centering)?.transpose();
        let (pred, decision) = self.svm.predict(&y)?;
        Ok(Scored {
            labels: pred.into_iter().map(Label::from_sign).collect(),
            decision,
        })
    }
}

/// Fits the deployable model at a fixed order: one stratified 9:1 split of
/// all documents picks the kernel and C, then everything is refitted on the
/// full corpus.
pub fn fit_final(
    counts: &TermDocMatrix,
    labels: &[Label],
    tokenizer: &TokenizeConfig,
    grid: &HyperGrid,
    order: usize,
    opts: &CvOptions,
) -> Result<ModelBundle, PipelineError> {
    grid.validate()?;
    let all: Vec<usize> = (0..labels.len()).collect();
    let parts = stratified_partition(&all, labels, INNER_PARTS, derived_seed(opts.seed, OUTER_FOLDS as u64));
    let mut train: Vec<usize> = parts[..INNER_PARTS - 1].concat();
    train.sort_unstable();
    let split = InnerSplit {
        train,
        validation: parts[INNER_PARTS - 1].clone(),
        test: Vec::new(),
    };
    let orders = feasible_orders(&[order], counts.n_terms(), split.train.len());
    if orders.is_empty() {
        return Err(PipelineError::FoldTooSmall(format!(
            "order {order} does not fit {} training documents",
            split.train.len()
        )));
    }
    let (_, results) = grid_search(counts, labels, &split, grid, &orders, opts)?;
    let sel = select(results.iter()).ok_or_else(|| PipelineError::GridEmpty("every SVM fit failed".into()))?;

    let (x, idf) = match counts.weighting {
        Weighting::RawCount => {
            let w = IdfWeights::fit(counts, opts.idf)?;
            (w.apply(counts)?.values, Some(w))
        }
        Weighting::TfIdf => (counts.values.clone(), None),
    };
    let fx = fit_extractor(&x, order, &opts.ica)?;
    let y_rows = transform_train(&fx, &x)?;
    let association = evaluation::component_class_association(&y_rows, labels)?;
    let y = y_rows.transpose();
    let kernel = grid.kernels[sel.kernel_index].resolve(svm::median_pairwise_distance(&y));
    let model = svm::fit(&y, &signs(labels, &all), kernel, sel.c, opts.svm_tol)?;
    let bundle = ModelBundle {
        format: BUNDLE_FORMAT.to_string(),
        d: counts.n_terms(),
        n: order,
        tokenizer: tokenizer.clone(),
        vocab: counts.vocab.clone(),
        idf,
        centering: opts.centering,
        extractor: fx,
        svm: model,
        selected: sel.clone(),
        association,
    };
    bundle.validate()?;
    Ok(bundle)
}
