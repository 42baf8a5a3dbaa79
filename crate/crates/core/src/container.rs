//! Binary containers for filter banks, scattering features and model sets.
//!
//! Every file is little-endian and starts with a 16-byte header: the magic
//! `SCATNET\0`, a `u32` kind (1 bank, 2 features, 3 models) and a `u32`
//! version (1), followed by a 40-byte configuration block. The README lists
//! the complete byte layout of each kind.

use std::fs;
use std::path::Path as FsPath;
use std::sync::Arc;

use num_complex::Complex64;

use crate::engine::ComplexImage;
use crate::error::{Error, Result};
use crate::filterbank::{FilterBank, GaborParams};
use crate::models::AffineModel;
use crate::scattering::{enumerate_paths, Path, ScatteringConfig, ScatteringVector};

pub const MAGIC: [u8; 8] = *b"SCATNET\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const CONFIG_LEN: usize = 40;

const FLAG_DC_CORRECTION: u32 = 1;
const FLAG_SUBSAMPLE_INTERMEDIATE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Kind {
    FilterBank = 1,
    Features = 2,
    Models = 3,
}

impl Kind {
    fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(Kind::FilterBank),
            2 => Some(Kind::Features),
            3 => Some(Kind::Models),
            _ => None,
        }
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(kind: Kind, config: &ScatteringConfig) -> Self {
        let mut w = Writer::default();
        w.buf.extend_from_slice(&MAGIC);
        w.u32(kind as u32);
        w.u32(VERSION);
        let p = &config.params;
        w.f64(p.xi);
        w.f64(p.sigma);
        w.f64(p.lowpass_sigma);
        w.u32(p.num_orientations as u32);
        w.u32(p.max_scale);
        w.u32(config.max_order as u32);
        let mut flags = 0;
        if p.dc_correction {
            flags |= FLAG_DC_CORRECTION;
        }
        if config.subsample_intermediate {
            flags |= FLAG_SUBSAMPLE_INTERMEDIATE;
        }
        w.u32(flags);
        w
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Argument(format!("{v} does not fit in a u32 field")))?;
        self.u32(v);
        Ok(())
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a FsPath,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::format(self.path, offset as u64, message)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(self.bytes.len(), format!("file truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        self.u32(what).map(|v| v as usize)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        // Check the length up front so a corrupt count cannot trigger a huge allocation.
        let bytes = self.take(n.saturating_mul(8), what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn header(&mut self, expected: Kind) -> Result<ScatteringConfig> {
        let magic = self.take(8, "magic")?;
        if magic != MAGIC {
            return Err(self.err(0, "not a scatnet container (bad magic)"));
        }
        let kind_at = self.pos;
        let kind = self.u32("kind")?;
        match Kind::from_u32(kind) {
            Some(k) if k == expected => {}
            Some(k) => return Err(self.err(kind_at, format!("expected a {expected:?} container, found {k:?}"))),
            None => return Err(self.err(kind_at, format!("unknown container kind {kind}"))),
        }
        let version_at = self.pos;
        let version = self.u32("version")?;
        if version != VERSION {
            return Err(self.err(version_at, format!("unsupported container version {version}")));
        }
        let config_at = self.pos;
        let xi = self.f64("xi")?;
        let sigma = self.f64("sigma")?;
        let lowpass_sigma = self.f64("lowpass sigma")?;
        let num_orientations = self.usize("orientation count")?;
        let max_scale = self.u32("max scale")?;
        let max_order = self.usize("max order")?;
        let flags = self.u32("flags")?;
        let config = ScatteringConfig {
            params: GaborParams {
                xi,
                sigma,
                num_orientations,
                max_scale,
                lowpass_sigma,
                dc_correction: flags & FLAG_DC_CORRECTION != 0,
            },
            max_order,
            subsample_intermediate: flags & FLAG_SUBSAMPLE_INTERMEDIATE != 0,
        };
        config
            .validate()
            .map_err(|e| self.err(config_at, format!("invalid configuration block: {e}")))?;
        Ok(config)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_file(path: &FsPath, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &FsPath) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Serializes a filter bank. Filter values are stored as complex64
/// (two `f32`), so a reloaded bank matches the original to `f32` precision.
pub fn filterbank_to_bytes(bank: &FilterBank) -> Result<Vec<u8>> {
    let config = ScatteringConfig::new(*bank.params(), 0);
    let mut w = Writer::header(Kind::FilterBank, &config);
    let (rows, cols) = bank.grid_shape();
    w.usize(rows)?;
    w.usize(cols)?;
    w.usize(bank.bandpass_filters().len() + 1)?;
    w.f64(bank.normalization());
    w.f64(bank.frame_defect());
    for filter in bank.bandpass_filters().iter().chain(std::iter::once(bank.lowpass())) {
        for z in filter.data() {
            w.f32(z.re as f32);
            w.f32(z.im as f32);
        }
    }
    Ok(w.buf)
}

pub fn filterbank_from_bytes(bytes: &[u8], path: &FsPath) -> Result<FilterBank> {
    let mut r = Reader { bytes, pos: 0, path };
    let config = r.header(Kind::FilterBank)?;
    let params = config.params;
    let rows = r.usize("rows")?;
    let cols = r.usize("cols")?;
    let count_at = r.pos;
    let count = r.usize("filter count")?;
    let expected = params.max_scale as usize * params.num_orientations + 1;
    if count != expected {
        return Err(r.err(count_at, format!("{count} filters stored, parameters imply {expected}")));
    }
    let normalization = r.f64("normalization")?;
    let frame_defect = r.f64("frame defect")?;
    let mut filters = Vec::with_capacity(count);
    for _ in 0..count {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let re = r.f32("filter value")? as f64;
            let im = r.f32("filter value")? as f64;
            data.push(Complex64::new(re, im));
        }
        filters.push(ComplexImage::new(rows, cols, data)?);
    }
    r.finish()?;
    let lowpass = filters.pop().expect("count >= 1");
    Ok(FilterBank::from_parts(
        params,
        rows,
        cols,
        filters,
        lowpass,
        normalization,
        frame_defect,
    ))
}

pub fn write_filterbank(path: impl AsRef<FsPath>, bank: &FilterBank) -> Result<()> {
    write_file(path.as_ref(), &filterbank_to_bytes(bank)?)
}

pub fn read_filterbank(path: impl AsRef<FsPath>) -> Result<FilterBank> {
    let path = path.as_ref();
    filterbank_from_bytes(&read_file(path)?, path)
}

/// Scattering vectors of a set of images sharing one configuration,
/// optionally with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    config: ScatteringConfig,
    source_shape: (usize, usize),
    spatial_shape: (usize, usize),
    paths: Arc<[Path]>,
    features: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
}

impl FeatureSet {
    /// Builds a set from vectors computed with one configuration.
    pub fn from_vectors(vectors: Vec<ScatteringVector>, labels: Option<Vec<usize>>) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::Data("cannot store an empty feature set".into()))?;
        if labels.as_ref().is_some_and(|l| l.len() != vectors.len()) {
            return Err(Error::Data("label count differs from feature count".into()));
        }
        let (config, source_shape, spatial_shape) = (*first.config(), first.source_shape(), first.spatial_shape());
        let paths: Arc<[Path]> = first.paths().into();
        if let Some(v) = vectors
            .iter()
            .find(|v| v.config() != &config || v.source_shape() != source_shape || v.spatial_shape() != spatial_shape)
        {
            return Err(Error::Incompatible(format!(
                "feature computed for {:?} differs from {:?}",
                v.source_shape(),
                source_shape
            )));
        }
        Ok(Self {
            config,
            source_shape,
            spatial_shape,
            paths,
            features: vectors.into_iter().map(ScatteringVector::into_coefficients).collect(),
            labels,
        })
    }

    pub fn config(&self) -> &ScatteringConfig {
        &self.config
    }

    pub fn source_shape(&self) -> (usize, usize) {
        self.source_shape
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        self.spatial_shape
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn into_features(self) -> Vec<Vec<f64>> {
        self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.paths.len() * self.spatial_shape.0 * self.spatial_shape.1
    }

    pub fn vector(&self, index: usize) -> Result<ScatteringVector> {
        ScatteringVector::from_parts(
            self.config,
            self.source_shape,
            self.spatial_shape,
            self.paths.clone(),
            self.features[index].clone(),
        )
    }
}

/// Serializes features; coefficients are stored as `f32`.
pub fn features_to_bytes(set: &FeatureSet) -> Result<Vec<u8>> {
    let mut w = Writer::header(Kind::Features, &set.config);
    for v in [
        set.source_shape.0,
        set.source_shape.1,
        set.spatial_shape.0,
        set.spatial_shape.1,
        set.paths.len(),
        set.features.len(),
        usize::from(set.labels.is_some()),
    ] {
        w.usize(v)?;
    }
    for p in set.paths.iter() {
        w.usize(p.len())?;
        for s in p.steps() {
            w.u32(s.scale);
            w.u32(s.orientation);
        }
    }
    if let Some(labels) = &set.labels {
        for &l in labels {
            w.usize(l)?;
        }
    }
    for f in &set.features {
        f.iter().for_each(|&v| w.f32(v as f32));
    }
    Ok(w.buf)
}

pub fn features_from_bytes(bytes: &[u8], path: &FsPath) -> Result<FeatureSet> {
    let mut r = Reader { bytes, pos: 0, path };
    let config = r.header(Kind::Features)?;
    let source_shape = (r.usize("source rows")?, r.usize("source cols")?);
    let spatial_shape = (r.usize("spatial rows")?, r.usize("spatial cols")?);
    let path_count = r.usize("path count")?;
    let count = r.usize("sample count")?;
    let has_labels = r.u32("label flag")? != 0;
    let table_at = r.pos;
    let mut paths = Vec::with_capacity(path_count.min(bytes.len()));
    for _ in 0..path_count {
        let len = r.usize("path length")?;
        let mut steps = Vec::with_capacity(len.min(4));
        for _ in 0..len {
            steps.push((r.u32("path scale")?, r.u32("path orientation")?));
        }
        paths.push(Path::new(&steps).map_err(|e| r.err(table_at, e.to_string()))?);
    }
    if paths != enumerate_paths(&config) {
        return Err(r.err(table_at, "path table does not match the stored configuration"));
    }
    let labels = if has_labels {
        Some((0..count).map(|_| r.usize("label")).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let len = path_count * spatial_shape.0 * spatial_shape.1;
    let body_at = r.pos;
    if bytes.len() - body_at != count * len * 4 {
        return Err(r.err(
            body_at,
            format!(
                "coefficient block holds {} bytes, expected {}",
                bytes.len() - body_at,
                count * len * 4
            ),
        ));
    }
    let mut features = Vec::with_capacity(count);
    for _ in 0..count {
        features.push(
            (0..len)
                .map(|_| r.f32("coefficient").map(f64::from))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    r.finish()?;
    Ok(FeatureSet {
        config,
        source_shape,
        spatial_shape,
        paths: paths.into(),
        features,
        labels,
    })
}

pub fn write_features(path: impl AsRef<FsPath>, set: &FeatureSet) -> Result<()> {
    write_file(path.as_ref(), &features_to_bytes(set)?)
}

pub fn read_features(path: impl AsRef<FsPath>) -> Result<FeatureSet> {
    let path = path.as_ref();
    features_from_bytes(&read_file(path)?, path)
}

/// Trained class models with the scattering configuration and penalty they
/// were selected with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub config: ScatteringConfig,
    /// Absolute penalty per dimension.
    pub beta: f64,
    /// Largest model dimension `K`.
    pub max_dim: usize,
    pub models: Vec<AffineModel>,
}

pub fn models_to_bytes(set: &ModelSet) -> Result<Vec<u8>> {
    let dim = set.models.first().map_or(0, |m| m.dim());
    if set.models.iter().any(|m| m.dim() != dim) {
        return Err(Error::Dimension("models disagree on the feature dimension".into()));
    }
    let mut w = Writer::header(Kind::Models, &set.config);
    w.usize(set.models.len())?;
    w.usize(set.max_dim)?;
    w.usize(dim)?;
    w.f64(set.beta);
    for m in &set.models {
        w.usize(m.class_id())?;
        w.usize(m.train_count())?;
        w.usize(m.max_dim())?;
        w.usize(m.num_directions())?;
        w.u32(u32::from(m.feature_scale().is_some()));
        w.f64s(m.mean());
        w.f64s(m.eigenvalues());
        w.f64s(m.eigenvector_block());
        if let Some(s) = m.feature_scale() {
            w.f64s(s);
        }
    }
    Ok(w.buf)
}

pub fn models_from_bytes(bytes: &[u8], path: &FsPath) -> Result<ModelSet> {
    let mut r = Reader { bytes, pos: 0, path };
    let config = r.header(Kind::Models)?;
    let count = r.usize("model count")?;
    let max_dim = r.usize("max dimension")?;
    let dim = r.usize("feature dimension")?;
    let beta = r.f64("beta")?;
    let mut models = Vec::with_capacity(count.min(bytes.len()));
    for _ in 0..count {
        let at = r.pos;
        let class_id = r.usize("class id")?;
        let train_count = r.usize("train count")?;
        let model_k = r.usize("model max dimension")?;
        let directions = r.usize("direction count")?;
        let has_scale = r.u32("scale flag")? != 0;
        let mean = r.f64s(dim, "mean")?;
        let eigenvalues = r.f64s(directions, "eigenvalues")?;
        let eigenvectors = r.f64s(directions.saturating_mul(dim), "eigenvectors")?;
        let scale = if has_scale {
            Some(r.f64s(dim, "feature scale")?)
        } else {
            None
        };
        let model = AffineModel::from_parts(class_id, mean, eigenvectors, eigenvalues, model_k, train_count, scale)
            .map_err(|e| r.err(at, e.to_string()))?;
        models.push(model);
    }
    r.finish()?;
    Ok(ModelSet {
        config,
        beta,
        max_dim,
        models,
    })
}

pub fn write_models(path: impl AsRef<FsPath>, set: &ModelSet) -> Result<()> {
    write_file(path.as_ref(), &models_to_bytes(set)?)
}

pub fn read_models(path: impl AsRef<FsPath>) -> Result<ModelSet> {
    let path = path.as_ref();
    models_from_bytes(&read_file(path)?, path)
}
