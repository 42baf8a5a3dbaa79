//! Per-class affine space models: the class centroid plus the leading
//! principal directions of the class, estimated with a thin SVD of the
//! centered `T x N` training matrix (the covariance is never formed).
//!
//! Eigenvalues are those of the empirical covariance
//! `(1/T) sum_t (x_t - mu)(x_t - mu)^T`, i.e. `s_l^2 / T` for singular
//! values `s_l`.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative singular-value cutoff below which directions are dropped.
pub const RANK_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    /// Upper bound `K` on the number of stored directions.
    pub max_dim: usize,
    /// Divide every feature by its training standard deviation first.
    pub standardize: bool,
}

impl FitOptions {
    pub fn new(max_dim: usize) -> Self {
        Self {
            max_dim,
            standardize: false,
        }
    }
}

/// Affine model `mu + span(e_1..e_k)` of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineModel {
    class_id: usize,
    mean: Vec<f64>,
    /// Row-major `count x dim` block of orthonormal directions.
    eigenvectors: Vec<f64>,
    eigenvalues: Vec<f64>,
    max_dim: usize,
    train_count: usize,
    scale: Option<Vec<f64>>,
}

impl AffineModel {
    pub(crate) fn from_parts(
        class_id: usize,
        mean: Vec<f64>,
        eigenvectors: Vec<f64>,
        eigenvalues: Vec<f64>,
        max_dim: usize,
        train_count: usize,
        scale: Option<Vec<f64>>,
    ) -> Result<Self> {
        let dim = mean.len();
        if eigenvectors.len() != eigenvalues.len() * dim || scale.as_ref().is_some_and(|s| s.len() != dim) {
            return Err(Error::Dimension(format!(
                "model block sizes disagree with feature dimension {dim}"
            )));
        }
        Ok(Self {
            class_id,
            mean,
            eigenvectors,
            eigenvalues,
            max_dim,
            train_count,
            scale,
        })
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Number of stored directions.
    pub fn num_directions(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, l: usize) -> &[f64] {
        let d = self.dim();
        &self.eigenvectors[l * d..(l + 1) * d]
    }

    pub(crate) fn eigenvector_block(&self) -> &[f64] {
        &self.eigenvectors
    }

    pub fn max_dim(&self) -> usize {
        self.max_dim
    }

    pub fn train_count(&self) -> usize {
        self.train_count
    }

    pub fn feature_scale(&self) -> Option<&[f64]> {
        self.scale.as_deref()
    }

    fn centered(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "feature has {} entries, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(match &self.scale {
            None => x.iter().zip(&self.mean).map(|(a, m)| a - m).collect(),
            Some(s) => x.iter().zip(s).zip(&self.mean).map(|((a, s), m)| a / s - m).collect(),
        })
    }

    /// `||x - mu||^2` and the squared coordinates `<x - mu, e_l>^2` for the
    /// first `min(limit, stored)` directions.
    pub fn coordinates(&self, x: &[f64], limit: usize) -> Result<(f64, Vec<f64>)> {
        let d = self.centered(x)?;
        let energy = dot(&d, &d);
        let count = limit.min(self.num_directions());
        let coords = (0..count)
            .map(|l| {
                let c = dot(&d, self.eigenvector(l));
                c * c
            })
            .collect();
        Ok((energy, coords))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Fits the affine model of one class with raw features.
pub fn fit_affine_model<V: AsRef<[f64]>>(class_id: usize, features: &[V], max_dim: usize) -> Result<AffineModel> {
    fit_affine_model_with(class_id, features, &FitOptions::new(max_dim))
}

pub fn fit_affine_model_with<V: AsRef<[f64]>>(
    class_id: usize,
    features: &[V],
    options: &FitOptions,
) -> Result<AffineModel> {
    let t = features.len();
    if t == 0 {
        return Err(Error::Data(format!("class {class_id} has no training vectors")));
    }
    let dim = features[0].as_ref().len();
    if let Some(i) = features.iter().position(|f| f.as_ref().len() != dim) {
        return Err(Error::Data(format!(
            "training vector {i} of class {class_id} has {} entries, expected {dim}",
            features[i].as_ref().len()
        )));
    }

    // Canonical row order makes every reduction independent of input order.
    let mut rows: Vec<&[f64]> = features.iter().map(|f| f.as_ref()).collect();
    rows.sort_by(|a, b| lexicographic(a, b));

    let scale = if options.standardize {
        Some(feature_std(&rows, dim))
    } else {
        None
    };
    let scaled: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| match &scale {
            None => r.to_vec(),
            Some(s) => r.iter().zip(s).map(|(a, s)| a / s).collect(),
        })
        .collect();

    let mut mean = vec![0.0; dim];
    for r in &scaled {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);

    let limit = options.max_dim.min(t.saturating_sub(1)).min(dim);
    let (eigenvectors, eigenvalues) = if limit == 0 {
        (Vec::new(), Vec::new())
    } else {
        principal_directions(&scaled, &mean, limit)
    };

    Ok(AffineModel {
        class_id,
        mean,
        eigenvectors,
        eigenvalues,
        max_dim: options.max_dim,
        train_count: t,
        scale,
    })
}

fn feature_std(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    let t = rows.len() as f64;
    (0..dim)
        .map(|k| {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / t;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / t;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

/// Leading right singular vectors of the centered data matrix.
fn principal_directions(rows: &[Vec<f64>], mean: &[f64], limit: usize) -> (Vec<f64>, Vec<f64>) {
    let t = rows.len();
    let dim = mean.len();
    let centered = DMatrix::from_fn(t, dim, |i, k| rows[i][k] - mean[k]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let s_max = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let mut vectors = Vec::with_capacity(limit * dim);
    let mut values = Vec::with_capacity(limit);
    for &i in order.iter().take(limit) {
        let s = svd.singular_values[i];
        if s_max <= 0.0 || s < RANK_CUTOFF * s_max {
            break;
        }
        let mut v: Vec<f64> = v_t.row(i).iter().cloned().collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold(
                (0, 0.0f64),
                |best, (k, x)| if x.abs() > best.1 { (k, x.abs()) } else { best },
            )
            .0;
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        vectors.extend_from_slice(&v);
        values.push((s * s / t as f64).max(0.0));
    }
    (vectors, values)
}

/// Squared distance from `x` to the `k`-dimensional affine model space.
pub fn projection_error(model: &AffineModel, x: &[f64], k: usize) -> Result<f64> {
    if k > model.num_directions() {
        return Err(Error::Argument(format!(
            "dimension {k} exceeds the {} stored directions",
            model.num_directions()
        )));
    }
    let (energy, coords) = model.coordinates(x, k)?;
    Ok(coords.iter().fold(energy, |r, c| r - c).max(0.0))
}

/// Relative intra-class and outer-class approximation errors of one class
/// model as a function of the model dimension `k = 0..`.
#[derive(Debug, Clone, PartialEq)]
pub struct InOutCurve {
    pub class_id: usize,
    /// `E{||x - P_k x||^2} / E{||x||^2}` over samples of the class.
    pub intra: Vec<f64>,
    /// Same ratio over samples of every other class.
    pub outer: Vec<f64>,
}

/// In/Out approximation curves for every model, for `k = 0..=min(k_max, stored)`.
pub fn in_out_curves<V: AsRef<[f64]>>(
    models: &[AffineModel],
    features: &[V],
    labels: &[usize],
    k_max: usize,
) -> Result<Vec<InOutCurve>> {
    if features.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    models
        .iter()
        .map(|model| {
            let kk = k_max.min(model.num_directions());
            let mut inn = vec![0.0; kk + 1];
            let mut out = vec![0.0; kk + 1];
            let (mut inn_norm, mut out_norm) = (0.0, 0.0);
            let (mut n_in, mut n_out) = (0usize, 0usize);
            for (x, &label) in features.iter().zip(labels) {
                let x = x.as_ref();
                let (energy, coords) = model.coordinates(x, kk)?;
                let norm = dot(x, x);
                let (acc, denom, n) = if label == model.class_id() {
                    (&mut inn, &mut inn_norm, &mut n_in)
                } else {
                    (&mut out, &mut out_norm, &mut n_out)
                };
                *denom += norm;
                *n += 1;
                let mut residual = energy;
                acc[0] += residual.max(0.0);
                for (k, c) in coords.iter().enumerate() {
                    residual -= c;
                    acc[k + 1] += residual.max(0.0);
                }
            }
            if n_in == 0 || n_out == 0 {
                return Err(Error::Data(format!(
                    "class {} needs samples both inside and outside the class",
                    model.class_id()
                )));
            }
            inn.iter_mut().for_each(|v| *v /= inn_norm);
            out.iter_mut().for_each(|v| *v /= out_norm);
            Ok(InOutCurve {
                class_id: model.class_id(),
                intra: inn,
                outer: out,
            })
        })
        .collect()
}
