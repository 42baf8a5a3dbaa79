//! Penalized affine model selection.
//!
//! A feature `x` is assigned to
//! `argmin_i min_{k <= K} ||x - P_{A_{k,i}} x||^2 + beta * k`,
//! with ties broken by the smaller class id, then the smaller `k`. The
//! dimension is selected per sample.
//!
//! Penalties are usually given relative to the median centered energy
//! `||x - mu_{class(x)}||^2` of the training features, so that one grid of
//! relative values transfers across scattering scales.

use rayon::prelude::*;

use crate::datasets::{stratified_folds, stratified_holdout, LabeledDataset};
use crate::error::{Error, Result};
use crate::models::{fit_affine_model_with, AffineModel, FitOptions};
use crate::scattering::{Scatterer, ScatteringConfig};

/// Default upper bound on the model dimension.
pub const DEFAULT_MAX_DIM: usize = 140;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    /// Penalty per model dimension, in feature energy units.
    pub beta: f64,
    /// Largest model dimension `K` considered.
    pub max_dim: usize,
    /// Scattering scale `J` the models were trained with.
    pub max_scale: u32,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            max_dim: DEFAULT_MAX_DIM,
            max_scale: 3,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class_id: usize,
    pub chosen_k: usize,
    /// Penalized projection error of the winning `(class, k)`.
    pub score: f64,
}

/// Selects the dimension minimizing `projection_error(k) + beta * k` for
/// one model, scanning the nested spaces in eigenvalue order. Returns the
/// smallest minimizing `k` and the minimum.
pub fn inner_k_selection(feature: &[f64], model: &AffineModel, config: &ClassifierConfig) -> Result<(usize, f64)> {
    let (energy, coords) = model.coordinates(feature, config.max_dim)?;
    Ok(select_dimension(energy, &coords, config.beta))
}

fn select_dimension(energy: f64, coords: &[f64], beta: f64) -> (usize, f64) {
    let mut best = (0, energy.max(0.0));
    let mut residual = energy;
    for (l, c) in coords.iter().enumerate() {
        residual -= c;
        let score = residual.max(0.0) + beta * (l + 1) as f64;
        if score < best.1 {
            best = (l + 1, score);
        }
    }
    best
}

fn better(score: f64, class_id: usize, best: &Prediction) -> bool {
    score < best.score || (score == best.score && class_id < best.class_id)
}

/// Classifies one feature vector against per-class models.
pub fn classify(feature: &[f64], models: &[AffineModel], config: &ClassifierConfig) -> Result<Prediction> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::Config("no class models to classify against".into()));
    }
    let mut best: Option<Prediction> = None;
    for model in models {
        let (k, score) = inner_k_selection(feature, model, config)?;
        let candidate = Prediction {
            class_id: model.class_id(),
            chosen_k: k,
            score,
        };
        best = match best {
            Some(b) if !better(score, model.class_id(), &b) => Some(b),
            _ => Some(candidate),
        };
    }
    Ok(best.expect("at least one model"))
}

/// Test-set outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub error_rate: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<Prediction>,
    /// Average selected model dimension.
    pub mean_k: f64,
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.predictions.len()
    }
}

/// Classifies every feature and tallies the confusion matrix.
pub fn evaluate<V: AsRef<[f64]> + Sync>(
    features: &[V],
    labels: &[usize],
    models: &[AffineModel],
    config: &ClassifierConfig,
) -> Result<Evaluation> {
    if features.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let predictions: Vec<Prediction> = features
        .par_iter()
        .map(|x| classify(x.as_ref(), models, config))
        .collect::<Result<_>>()?;
    let classes = labels
        .iter()
        .copied()
        .chain(models.iter().map(|m| m.class_id()))
        .max()
        .unwrap_or(0)
        + 1;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut wrong = 0usize;
    for (p, &y) in predictions.iter().zip(labels) {
        confusion[y][p.class_id] += 1;
        if p.class_id != y {
            wrong += 1;
        }
    }
    let mean_k = predictions.iter().map(|p| p.chosen_k as f64).sum::<f64>() / predictions.len() as f64;
    Ok(Evaluation {
        error_rate: wrong as f64 / predictions.len() as f64,
        confusion,
        predictions,
        mean_k,
    })
}

/// Fits one model per class id `0..class_count`.
pub fn train_models<V: AsRef<[f64]> + Sync>(
    features: &[V],
    labels: &[usize],
    class_count: usize,
    options: &FitOptions,
) -> Result<Vec<AffineModel>> {
    if features.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    (0..class_count)
        .into_par_iter()
        .map(|c| {
            let members: Vec<&[f64]> = features
                .iter()
                .zip(labels)
                .filter(|(_, &y)| y == c)
                .map(|(x, _)| x.as_ref())
                .collect();
            if members.is_empty() {
                return Err(Error::Data(format!("class {c} has no training samples")));
            }
            fit_affine_model_with(c, &members, options)
        })
        .collect()
}

/// Median over samples of `||x - mu_{class(x)}||^2`.
pub fn median_centered_energy<V: AsRef<[f64]>>(
    features: &[V],
    labels: &[usize],
    models: &[AffineModel],
) -> Result<f64> {
    let mut energies = Vec::with_capacity(features.len());
    for (x, &y) in features.iter().zip(labels) {
        let model = models
            .iter()
            .find(|m| m.class_id() == y)
            .ok_or_else(|| Error::Data(format!("no model for class {y}")))?;
        energies.push(model.coordinates(x.as_ref(), 0)?.0);
    }
    if energies.is_empty() {
        return Err(Error::Data("no samples".into()));
    }
    energies.sort_by(|a, b| a.total_cmp(b));
    let n = energies.len();
    Ok(if n % 2 == 1 {
        energies[n / 2]
    } else {
        0.5 * (energies[n / 2 - 1] + energies[n / 2])
    })
}

/// Relative penalty grid: zero followed by `10^{-4}, 10^{-3.5}, ..., 10^0`.
pub fn default_beta_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..=8).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValidationPolicy {
    /// One stratified split holding out `fraction` of every class.
    Holdout { fraction: f64 },
    /// Stratified k-fold; errors are averaged over folds.
    KFold { folds: usize },
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        ValidationPolicy::Holdout { fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub policy: ValidationPolicy,
    pub seed: u64,
    pub max_dim: usize,
    pub standardize: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            policy: ValidationPolicy::default(),
            seed: 0,
            max_dim: DEFAULT_MAX_DIM,
            standardize: false,
        }
    }
}

/// One grid point of the validation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvRow {
    pub max_scale: u32,
    /// Penalty relative to the median centered energy of the fit split.
    pub beta_rel: f64,
    /// Absolute penalty (averaged over folds for k-fold).
    pub beta: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best: CvRow,
    /// Rows in grid order: scale-major, penalty-minor.
    pub table: Vec<CvRow>,
}

fn splits(labels: &[usize], options: &CvOptions) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    match options.policy {
        ValidationPolicy::Holdout { fraction } => Ok(vec![stratified_holdout(labels, fraction, options.seed)?]),
        ValidationPolicy::KFold { folds } => {
            let parts = stratified_folds(labels, folds, options.seed)?;
            Ok((0..parts.len())
                .map(|v| {
                    let fit: Vec<usize> = {
                        let mut f: Vec<usize> = parts
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| *i != v)
                            .flat_map(|(_, p)| p.iter().copied())
                            .collect();
                        f.sort_unstable();
                        f
                    };
                    (fit, parts[v].clone())
                })
                .collect())
        }
    }
}

/// Validation errors over a `(J, beta)` grid from precomputed features,
/// one feature set per scale.
pub fn cross_validate_features(
    labels: &[usize],
    features_by_scale: &[(u32, Vec<Vec<f64>>)],
    beta_grid_rel: &[f64],
    options: &CvOptions,
) -> Result<CvResult> {
    if features_by_scale.is_empty() || beta_grid_rel.is_empty() {
        return Err(Error::Config("empty cross-validation grid".into()));
    }
    if let Some(b) = beta_grid_rel.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return Err(Error::Config(format!("invalid relative penalty {b}")));
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    let splits = splits(labels, options)?;
    let fit_opts = FitOptions {
        max_dim: options.max_dim,
        standardize: options.standardize,
    };
    let mut table = Vec::new();
    for (scale, features) in features_by_scale {
        if features.len() != labels.len() {
            return Err(Error::Data(format!(
                "scale {scale}: {} features for {} labels",
                features.len(),
                labels.len()
            )));
        }
        let mut errors = vec![0usize; beta_grid_rel.len()];
        let mut betas = vec![0.0; beta_grid_rel.len()];
        let mut total = 0usize;
        for (fit, val) in &splits {
            let fit_x: Vec<&[f64]> = fit.iter().map(|&i| features[i].as_slice()).collect();
            let fit_y: Vec<usize> = fit.iter().map(|&i| labels[i]).collect();
            let models = train_models(&fit_x, &fit_y, class_count, &fit_opts)?;
            let scale_ref = median_centered_energy(&fit_x, &fit_y, &models)?;
            let abs: Vec<f64> = beta_grid_rel.iter().map(|b| b * scale_ref).collect();
            let wrong: Vec<Vec<bool>> = val
                .par_iter()
                .map(|&i| {
                    let per_class: Vec<(f64, Vec<f64>)> = models
                        .iter()
                        .map(|m| m.coordinates(&features[i], options.max_dim))
                        .collect::<Result<_>>()?;
                    Ok(abs
                        .iter()
                        .map(|&beta| {
                            let mut best = Prediction {
                                class_id: usize::MAX,
                                chosen_k: 0,
                                score: f64::INFINITY,
                            };
                            for (m, (energy, coords)) in models.iter().zip(&per_class) {
                                let (k, s) = select_dimension(*energy, coords, beta);
                                if better(s, m.class_id(), &best) {
                                    best = Prediction {
                                        class_id: m.class_id(),
                                        chosen_k: k,
                                        score: s,
                                    };
                                }
                            }
                            best.class_id != labels[i]
                        })
                        .collect())
                })
                .collect::<Result<_>>()?;
            for w in &wrong {
                for (e, &bad) in errors.iter_mut().zip(w) {
                    *e += bad as usize;
                }
            }
            for (b, a) in betas.iter_mut().zip(&abs) {
                *b += a / splits.len() as f64;
            }
            total += val.len();
        }
        for (i, &rel) in beta_grid_rel.iter().enumerate() {
            table.push(CvRow {
                max_scale: *scale,
                beta_rel: rel,
                beta: betas[i],
                error: errors[i] as f64 / total as f64,
            });
        }
    }
    let best = *table
        .iter()
        .fold(None, |best: Option<&CvRow>, row| match best {
            Some(b) if b.error <= row.error => Some(b),
            _ => Some(row),
        })
        .expect("non-empty table");
    Ok(CvResult { best, table })
}

/// Scatters `train` once per scale in `scale_grid` and cross-validates.
pub fn cross_validate(
    train: &LabeledDataset,
    scale_grid: &[u32],
    beta_grid_rel: &[f64],
    base: &ScatteringConfig,
    options: &CvOptions,
) -> Result<CvResult> {
    let mut features = Vec::with_capacity(scale_grid.len());
    for &j in scale_grid {
        let config = ScatteringConfig {
            params: base.params.with_max_scale(j),
            ..*base
        };
        let scatterer = Scatterer::new(config, train.image_shape()?)?;
        let vectors = scatterer.scatter_batch(train.images())?;
        features.push((j, vectors.into_iter().map(|v| v.into_coefficients()).collect()));
    }
    cross_validate_features(train.labels(), &features, beta_grid_rel, options)
}

/// Everything needed to rerun a train/test protocol: the scale and
/// penalty grids searched on the training set and the base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOptions {
    pub scale_grid: Vec<u32>,
    pub beta_grid_rel: Vec<f64>,
    pub base: ScatteringConfig,
    pub cv: CvOptions,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            scale_grid: vec![1, 2, 3, 4],
            beta_grid_rel: default_beta_grid(),
            base: ScatteringConfig::default(),
            cv: CvOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub train_size: usize,
    pub cv: CvResult,
    /// Configuration at the selected scale.
    pub config: ScatteringConfig,
    /// Absolute penalty used on the test set.
    pub beta: f64,
    pub models: Vec<AffineModel>,
    pub evaluation: Evaluation,
}

fn scatter_all(dataset: &LabeledDataset, config: ScatteringConfig) -> Result<Vec<Vec<f64>>> {
    let scatterer = Scatterer::new(config, dataset.image_shape()?)?;
    Ok(scatterer
        .scatter_batch(dataset.images())?
        .into_iter()
        .map(|v| v.into_coefficients())
        .collect())
}

/// Cross-validates `(J, beta)` on `train`, refits the models on all of
/// `train` at the selected point and reports the test error. The selected
/// relative penalty is rescaled by the median centered energy of the full
/// training set.
pub fn run_protocol(
    train: &LabeledDataset,
    test: &LabeledDataset,
    options: &ProtocolOptions,
) -> Result<ProtocolOutcome> {
    let with_scale = |j: u32| ScatteringConfig {
        params: options.base.params.with_max_scale(j),
        ..options.base
    };
    let mut by_scale = Vec::with_capacity(options.scale_grid.len());
    for &j in &options.scale_grid {
        by_scale.push((j, scatter_all(train, with_scale(j))?));
    }
    let cv = cross_validate_features(train.labels(), &by_scale, &options.beta_grid_rel, &options.cv)?;
    let config = with_scale(cv.best.max_scale);
    let train_x = by_scale
        .into_iter()
        .find(|(j, _)| *j == cv.best.max_scale)
        .map(|(_, x)| x)
        .expect("selected scale is in the grid");
    let fit = FitOptions {
        max_dim: options.cv.max_dim,
        standardize: options.cv.standardize,
    };
    let models = train_models(&train_x, train.labels(), train.class_count(), &fit)?;
    let beta = cv.best.beta_rel * median_centered_energy(&train_x, train.labels(), &models)?;
    let test_x = scatter_all(test, config)?;
    let classifier = ClassifierConfig {
        beta,
        max_dim: options.cv.max_dim,
        max_scale: cv.best.max_scale,
    };
    let evaluation = evaluate(&test_x, test.labels(), &models, &classifier)?;
    Ok(ProtocolOutcome {
        train_size: train.len(),
        cv,
        config,
        beta,
        models,
        evaluation,
    })
}
