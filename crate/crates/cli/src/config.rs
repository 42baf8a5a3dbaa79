//! Flat run configuration.
//!
//! The `--config` file is a flat TOML table (`max_scale = 3`,
//! `cv_policy = "kfold:5"`, `scale_grid = [1, 2, 3]`); `--set key=value`
//! takes the same keys with unquoted values (`scale_grid=1,2,3`).
//!
//! Values are applied in this order, later ones winning: built-in defaults,
//! the `--config` file, the `SCATNET_DATA` environment variable (for
//! `data_root` only), `--set key=value` overrides, then dedicated flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use scatnet::classifier::{default_beta_grid, ValidationPolicy, DEFAULT_MAX_DIM};
use scatnet::scattering::ScatteringConfig;

pub const DATA_ENV: &str = "SCATNET_DATA";

/// How to read the dataset named by `dataset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// `train-*`/`t10k-*` IDX files, optionally gzipped.
    Idx,
    /// One directory of images per class, split alternately into train/test.
    Texture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    pub patch_size: usize,
    pub per_class: Option<usize>,
    pub train_size: Option<usize>,
    pub scattering: ScatteringConfig,
    pub max_dim: usize,
    pub standardize: bool,
    pub beta: Option<f64>,
    pub beta_rel: f64,
    pub scale_grid: Vec<u32>,
    pub beta_grid: Vec<f64>,
    pub cv_policy: ValidationPolicy,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub models: Option<PathBuf>,
    pub curve_k: usize,
    pub curve_split: String,
    pub mnist_dir: PathBuf,
    pub mnist_train_sizes: Vec<usize>,
    pub usps_dir: PathBuf,
    pub curet_dir: PathBuf,
    pub curet_patch_size: usize,
    pub curet_scale_grid: Vec<u32>,
}

/// Every key with its default (as written in a config file) and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "data_root",
        "data",
        "root that relative dataset paths are resolved against",
    ),
    ("dataset", "mnist-subset", "dataset for scatter/train/cv/eval/curves"),
    ("format", "idx", "dataset layout: idx or texture"),
    ("patch_size", "200", "texture crop size in pixels"),
    ("per_class", "all", "texture images kept per class"),
    (
        "train_size",
        "all",
        "stratified training subset size (train, cv, reproduce-usps)",
    ),
    ("xi", "2.356194490192345", "mother wavelet center frequency (3pi/4)"),
    ("sigma", "1", "mother wavelet spatial std"),
    ("lowpass_sigma", "0.6666666666666666", "mother lowpass spatial std"),
    ("orientations", "6", "number of orientations"),
    ("max_scale", "3", "number of scales J"),
    ("max_order", "2", "maximum path length"),
    ("dc_correction", "true", "force zero-mean wavelets"),
    (
        "subsample_intermediate",
        "true",
        "subsample intermediate layers (faster, near-identical)",
    ),
    ("max_dim", "140", "largest affine model dimension K"),
    ("standardize", "false", "standardize features per class before PCA"),
    (
        "beta",
        "auto",
        "absolute penalty per dimension (auto: beta_rel x median energy)",
    ),
    ("beta_rel", "0.001", "relative penalty used by train when beta is auto"),
    ("scale_grid", "1,2,3,4", "scales searched by cv and reproduce-*"),
    ("beta_grid", "0,1e-4,10^-3.5,...,1", "relative penalties searched"),
    ("cv_policy", "kfold:5", "validation: kfold:N or holdout:FRACTION"),
    ("seed", "11", "single seed; training subsets use seed+2000"),
    ("out_dir", "out", "directory receiving every artifact"),
    ("threads", "0", "worker threads (0: one per CPU)"),
    ("models", "<out_dir>/models.scat", "model container read by eval/curves"),
    ("curve_k", "20", "largest k reported by curves"),
    ("curve_split", "test", "split used by curves: train or test"),
    ("mnist_dir", "mnist-subset", "MNIST IDX directory"),
    ("mnist_train_sizes", "300,1000", "training sizes for reproduce-mnist"),
    ("usps_dir", "usps", "USPS IDX directory"),
    ("curet_dir", "curet", "CUReT directory, one subdirectory per class"),
    ("curet_patch_size", "200", "CUReT crop size"),
    ("curet_scale_grid", "3,4,5", "scales searched by reproduce-curet"),
];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            dataset: PathBuf::from("mnist-subset"),
            format: DatasetFormat::Idx,
            patch_size: 200,
            per_class: None,
            train_size: None,
            scattering: ScatteringConfig {
                subsample_intermediate: true,
                ..ScatteringConfig::default()
            },
            max_dim: DEFAULT_MAX_DIM,
            standardize: false,
            beta: None,
            beta_rel: 1e-3,
            scale_grid: vec![1, 2, 3, 4],
            beta_grid: default_beta_grid(),
            cv_policy: ValidationPolicy::KFold { folds: 5 },
            seed: 11,
            out_dir: PathBuf::from("out"),
            threads: 0,
            models: None,
            curve_k: 20,
            curve_split: "test".into(),
            mnist_dir: PathBuf::from("mnist-subset"),
            mnist_train_sizes: vec![300, 1000],
            usps_dir: PathBuf::from("usps"),
            curet_dir: PathBuf::from("curet"),
            curet_patch_size: 200,
            curet_scale_grid: vec![3, 4, 5],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value {value:?} for {key}: {e}"))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        bail!("{key} must list at least one value");
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("invalid value {value:?} for {key}: expected true or false"),
    }
}

fn parse_optional<T: std::str::FromStr>(key: &str, value: &str, none: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value == none {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

/// Renders a TOML value in the textual form `set` accepts.
fn value_text(key: &str, value: &toml::Value) -> Result<String> {
    Ok(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items
            .iter()
            .map(|v| value_text(key, v))
            .collect::<Result<Vec<_>>>()?
            .join(","),
        _ => bail!("{key}: tables and dates are not configuration values"),
    })
}

fn parse_policy(value: &str) -> Result<ValidationPolicy> {
    match value.split_once(':') {
        Some(("kfold", n)) => Ok(ValidationPolicy::KFold {
            folds: parse("cv_policy", n)?,
        }),
        Some(("holdout", f)) => Ok(ValidationPolicy::Holdout {
            fraction: parse("cv_policy", f)?,
        }),
        _ => bail!("invalid value {value:?} for cv_policy: expected kfold:N or holdout:FRACTION"),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let params = &mut self.scattering.params;
        match key {
            "data_root" => self.data_root = value.into(),
            "dataset" => self.dataset = value.into(),
            "format" => {
                self.format = match value {
                    "idx" => DatasetFormat::Idx,
                    "texture" => DatasetFormat::Texture,
                    _ => bail!("invalid value {value:?} for format: expected idx or texture"),
                }
            }
            "patch_size" => self.patch_size = parse(key, value)?,
            "per_class" => self.per_class = parse_optional(key, value, "all")?,
            "train_size" => self.train_size = parse_optional(key, value, "all")?,
            "xi" => params.xi = parse(key, value)?,
            "sigma" => params.sigma = parse(key, value)?,
            "lowpass_sigma" => params.lowpass_sigma = parse(key, value)?,
            "orientations" => params.num_orientations = parse(key, value)?,
            "max_scale" => params.max_scale = parse(key, value)?,
            "dc_correction" => params.dc_correction = parse_bool(key, value)?,
            "max_order" => self.scattering.max_order = parse(key, value)?,
            "subsample_intermediate" => self.scattering.subsample_intermediate = parse_bool(key, value)?,
            "max_dim" => self.max_dim = parse(key, value)?,
            "standardize" => self.standardize = parse_bool(key, value)?,
            "beta" => self.beta = parse_optional(key, value, "auto")?,
            "beta_rel" => self.beta_rel = parse(key, value)?,
            "scale_grid" => self.scale_grid = parse_list(key, value)?,
            "beta_grid" => self.beta_grid = parse_list(key, value)?,
            "cv_policy" => self.cv_policy = parse_policy(value)?,
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => self.out_dir = value.into(),
            "threads" => self.threads = parse(key, value)?,
            "models" => self.models = Some(value.into()),
            "curve_k" => self.curve_k = parse(key, value)?,
            "curve_split" => match value {
                "train" | "test" => self.curve_split = value.into(),
                _ => bail!("invalid value {value:?} for curve_split: expected train or test"),
            },
            "mnist_dir" => self.mnist_dir = value.into(),
            "mnist_train_sizes" => self.mnist_train_sizes = parse_list(key, value)?,
            "usps_dir" => self.usps_dir = value.into(),
            "curet_dir" => self.curet_dir = value.into(),
            "curet_patch_size" => self.curet_patch_size = parse(key, value)?,
            "curet_scale_grid" => self.curet_scale_grid = parse_list(key, value)?,
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Applies `key=value` (or `key = value`) assignments.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .with_context(|| format!("expected key=value, got {assignment:?}"))?;
        self.set(key.trim(), value)
    }

    /// Applies the keys of a flat TOML document.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let table: toml::Table = toml::from_str(text).with_context(|| format!("cannot parse {}", origin.display()))?;
        for (key, value) in &table {
            let value = value_text(key, value)?;
            self.set(key, &value)
                .with_context(|| format!("{}: key {key}", origin.display()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        self.apply_text(&text, path)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.data_root.join(path)
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn models_path(&self) -> PathBuf {
        self.models.clone().unwrap_or_else(|| self.out_path("models.scat"))
    }

    /// Seed for drawing training subsets.
    pub fn subsample_seed(&self) -> u64 {
        self.seed.wrapping_add(2000)
    }

    pub fn help_text() -> String {
        let mut text = String::from("Configuration keys (default in brackets):\n");
        for (key, default, doc) in KEYS {
            text.push_str(&format!("  {key:<24} {doc} [{default}]\n"));
        }
        text.push_str(
            "\nThe --config file is flat TOML (quote strings, lists as arrays); --set takes\n\
             unquoted values. Precedence, lowest first: defaults, --config file,\n\
             SCATNET_DATA (data_root), --set overrides, dedicated flags.",
        );
        text
    }
}
