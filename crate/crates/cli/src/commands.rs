use std::path::Path;

use anyhow::{bail, Result};
use scatnet::classifier::{
    cross_validate, evaluate, median_centered_energy, run_protocol, train_models, ClassifierConfig, CvOptions,
    CvResult, ProtocolOptions, ProtocolOutcome,
};
use scatnet::container::{features_to_bytes, models_to_bytes, read_models, FeatureSet, ModelSet};
use scatnet::datasets::{
    load_idx_dir, load_texture_dir, split_alternating, subsample_train, IdxSplit, LabeledDataset, TextureOptions,
};
use scatnet::models::{in_out_curves, FitOptions};
use scatnet::scattering::{Scatterer, ScatteringConfig};

use crate::config::{DatasetFormat, RunConfig};
use crate::output::{write_atomic, Csv};

fn split_name(split: IdxSplit) -> &'static str {
    match split {
        IdxSplit::Train => "train",
        IdxSplit::Test => "test",
    }
}

fn load_split(cfg: &RunConfig, split: IdxSplit) -> Result<LabeledDataset> {
    let path = cfg.resolve(&cfg.dataset);
    match cfg.format {
        DatasetFormat::Idx => Ok(load_idx_dir(&path, split)?),
        DatasetFormat::Texture => {
            let options = TextureOptions {
                per_class: cfg.per_class,
                ..TextureOptions::new(cfg.patch_size)
            };
            let (all, _) = load_texture_dir(&path, &options)?;
            let (train, test) = split_alternating(&all);
            Ok(match split {
                IdxSplit::Train => train,
                IdxSplit::Test => test,
            })
        }
    }
}

fn check_train_size(size: usize) -> Result<()> {
    if size == 0 {
        bail!("train_size must be positive");
    }
    Ok(())
}

/// The training split, reduced to `train_size` samples when configured.
fn load_train(cfg: &RunConfig) -> Result<LabeledDataset> {
    if let Some(size) = cfg.train_size {
        check_train_size(size)?;
    }
    let train = load_split(cfg, IdxSplit::Train)?;
    match cfg.train_size {
        Some(size) => Ok(subsample_train(&train, size, cfg.subsample_seed())?),
        None => Ok(train),
    }
}

fn scatter_dataset(dataset: &LabeledDataset, config: ScatteringConfig) -> Result<Vec<Vec<f64>>> {
    let scatterer = Scatterer::new(config, dataset.image_shape()?)?;
    Ok(scatterer
        .scatter_batch(dataset.images())?
        .into_iter()
        .map(|v| v.into_coefficients())
        .collect())
}

fn cv_options(cfg: &RunConfig) -> CvOptions {
    CvOptions {
        policy: cfg.cv_policy,
        seed: cfg.seed,
        max_dim: cfg.max_dim,
        standardize: cfg.standardize,
    }
}

fn protocol_options(cfg: &RunConfig, scale_grid: &[u32]) -> ProtocolOptions {
    ProtocolOptions {
        scale_grid: scale_grid.to_vec(),
        beta_grid_rel: cfg.beta_grid.clone(),
        base: cfg.scattering,
        cv: cv_options(cfg),
    }
}

fn cv_table(cv: &CvResult) -> Result<Csv> {
    let mut csv = Csv::new(&["max_scale", "beta_rel", "beta", "error"])?;
    for row in &cv.table {
        csv.row([
            row.max_scale.to_string(),
            row.beta_rel.to_string(),
            row.beta.to_string(),
            row.error.to_string(),
        ])?;
    }
    Ok(csv)
}

pub fn scatter(cfg: &RunConfig) -> Result<()> {
    for split in [IdxSplit::Train, IdxSplit::Test] {
        let dataset = load_split(cfg, split)?;
        let scatterer = Scatterer::new(cfg.scattering, dataset.image_shape()?)?;
        let vectors = scatterer.scatter_batch(dataset.images())?;
        let set = FeatureSet::from_vectors(vectors, Some(dataset.labels().to_vec()))?;
        let path = cfg.out_path(&format!("features-{}.scat", split_name(split)));
        write_atomic(&path, &features_to_bytes(&set)?)?;
        eprintln!(
            "{}: {} images, {} paths of {}x{}",
            path.display(),
            set.len(),
            set.paths().len(),
            set.spatial_shape().0,
            set.spatial_shape().1
        );
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let dataset = load_train(cfg)?;
    let features = scatter_dataset(&dataset, cfg.scattering)?;
    let fit = FitOptions {
        max_dim: cfg.max_dim,
        standardize: cfg.standardize,
    };
    let models = train_models(&features, dataset.labels(), dataset.class_count(), &fit)?;
    let beta = match cfg.beta {
        Some(beta) => beta,
        None => cfg.beta_rel * median_centered_energy(&features, dataset.labels(), &models)?,
    };
    let set = ModelSet {
        config: cfg.scattering,
        beta,
        max_dim: cfg.max_dim,
        models,
    };
    write_atomic(&cfg.models_path(), &models_to_bytes(&set)?)?;
    println!(
        "trained {} models on {} samples, J={}, beta={beta:e}",
        set.models.len(),
        dataset.len(),
        cfg.scattering.max_scale()
    );
    Ok(())
}

pub fn cv(cfg: &RunConfig) -> Result<()> {
    let dataset = load_train(cfg)?;
    let result = cross_validate(
        &dataset,
        &cfg.scale_grid,
        &cfg.beta_grid,
        &cfg.scattering,
        &cv_options(cfg),
    )?;
    cv_table(&result)?.write(&cfg.out_path("cv.csv"))?;
    println!(
        "best: J={} beta_rel={:e} beta={:e} validation error {:.2}%",
        result.best.max_scale,
        result.best.beta_rel,
        result.best.beta,
        100.0 * result.best.error
    );
    Ok(())
}

fn load_models(cfg: &RunConfig) -> Result<ModelSet> {
    Ok(read_models(cfg.models_path())?)
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let set = load_models(cfg)?;
    let test = load_split(cfg, IdxSplit::Test)?;
    let features = scatter_dataset(&test, set.config)?;
    let classifier = ClassifierConfig {
        beta: cfg.beta.unwrap_or(set.beta),
        max_dim: set.max_dim,
        max_scale: set.config.max_scale(),
    };
    let e = evaluate(&features, test.labels(), &set.models, &classifier)?;

    let classes = e.confusion.len();
    let mut header = vec!["label".to_string()];
    header.extend((0..classes).map(|c| format!("pred_{c}")));
    let mut confusion = Csv::new(&header)?;
    for (c, row) in e.confusion.iter().enumerate() {
        confusion.row(std::iter::once(c.to_string()).chain(row.iter().map(|v| v.to_string())))?;
    }
    confusion.write(&cfg.out_path("confusion.csv"))?;

    let mut predictions = Csv::new(&["index", "label", "predicted", "k", "score"])?;
    for (i, (p, l)) in e.predictions.iter().zip(test.labels()).enumerate() {
        predictions.row([
            i.to_string(),
            l.to_string(),
            p.class_id.to_string(),
            p.chosen_k.to_string(),
            p.score.to_string(),
        ])?;
    }
    predictions.write(&cfg.out_path("predictions.csv"))?;

    let mut summary = Csv::new(&["samples", "errors", "test_error_percent", "mean_k"])?;
    let errors = e
        .predictions
        .iter()
        .zip(test.labels())
        .filter(|(p, &l)| p.class_id != l)
        .count();
    summary.row([
        e.total().to_string(),
        errors.to_string(),
        format!("{:.4}", 100.0 * e.error_rate),
        format!("{:.4}", e.mean_k),
    ])?;
    summary.write(&cfg.out_path("eval.csv"))?;
    println!(
        "test error {:.2}% on {} samples, mean k {:.1}",
        100.0 * e.error_rate,
        e.total(),
        e.mean_k
    );
    Ok(())
}

pub fn curves(cfg: &RunConfig) -> Result<()> {
    let set = load_models(cfg)?;
    let split = if cfg.curve_split == "train" {
        IdxSplit::Train
    } else {
        IdxSplit::Test
    };
    let dataset = load_split(cfg, split)?;
    let features = scatter_dataset(&dataset, set.config)?;
    let curves = in_out_curves(&set.models, &features, dataset.labels(), cfg.curve_k)?;
    let mut csv = Csv::new(&["class", "k", "In", "Out"])?;
    for curve in &curves {
        for (k, (i, o)) in curve.intra.iter().zip(&curve.outer).enumerate() {
            csv.row([curve.class_id.to_string(), k.to_string(), i.to_string(), o.to_string()])?;
        }
    }
    csv.write(&cfg.out_path("curves.csv"))
}

fn results_table(outcomes: &[ProtocolOutcome]) -> Result<Csv> {
    let mut csv = Csv::new(&["train_size", "j_star", "beta_star", "mean_k", "test_error_percent"])?;
    for o in outcomes {
        csv.row([
            o.train_size.to_string(),
            o.cv.best.max_scale.to_string(),
            o.cv.best.beta_rel.to_string(),
            format!("{:.4}", o.evaluation.mean_k),
            format!("{:.4}", 100.0 * o.evaluation.error_rate),
        ])?;
    }
    Ok(csv)
}

fn report(name: &str, o: &ProtocolOutcome) {
    println!(
        "{name} n={}: test error {:.2}%, J*={}, beta*={:e} (absolute {:e}), mean k {:.1}",
        o.train_size,
        100.0 * o.evaluation.error_rate,
        o.cv.best.max_scale,
        o.cv.best.beta_rel,
        o.beta,
        o.evaluation.mean_k
    );
}

fn run_and_record(
    cfg: &RunConfig,
    name: &str,
    train: &LabeledDataset,
    test: &LabeledDataset,
    options: &ProtocolOptions,
) -> Result<ProtocolOutcome> {
    let outcome = run_protocol(train, test, options)?;
    cv_table(&outcome.cv)?.write(&cfg.out_path(&format!("{name}-cv-{}.csv", train.len())))?;
    report(name, &outcome);
    Ok(outcome)
}

fn load_idx_pair(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    Ok((load_idx_dir(dir, IdxSplit::Train)?, load_idx_dir(dir, IdxSplit::Test)?))
}

pub fn reproduce_mnist(cfg: &RunConfig) -> Result<()> {
    for &size in &cfg.mnist_train_sizes {
        check_train_size(size)?;
    }
    let (pool, test) = load_idx_pair(&cfg.resolve(&cfg.mnist_dir))?;
    let options = protocol_options(cfg, &cfg.scale_grid);
    let mut outcomes = Vec::new();
    for &size in &cfg.mnist_train_sizes {
        let train = subsample_train(&pool, size, cfg.subsample_seed())?;
        outcomes.push(run_and_record(cfg, "mnist", &train, &test, &options)?);
    }
    results_table(&outcomes)?.write(&cfg.out_path("mnist.csv"))
}

pub fn reproduce_usps(cfg: &RunConfig) -> Result<()> {
    if let Some(size) = cfg.train_size {
        check_train_size(size)?;
    }
    let (mut train, test) = load_idx_pair(&cfg.resolve(&cfg.usps_dir))?;
    if let Some(size) = cfg.train_size {
        train = subsample_train(&train, size, cfg.subsample_seed())?;
    }
    let outcome = run_and_record(cfg, "usps", &train, &test, &protocol_options(cfg, &cfg.scale_grid))?;
    results_table(&[outcome])?.write(&cfg.out_path("usps.csv"))
}

pub fn reproduce_curet(cfg: &RunConfig) -> Result<()> {
    let options = TextureOptions {
        per_class: cfg.per_class,
        ..TextureOptions::new(cfg.curet_patch_size)
    };
    let (all, names) = load_texture_dir(cfg.resolve(&cfg.curet_dir), &options)?;
    eprintln!("{} classes, {} images", names.len(), all.len());
    let (train, test) = split_alternating(&all);
    let outcome = run_and_record(
        cfg,
        "curet",
        &train,
        &test,
        &protocol_options(cfg, &cfg.curet_scale_grid),
    )?;
    results_table(&[outcome])?.write(&cfg.out_path("curet.csv"))
}
