//! Labeled image datasets: IDX digit files, texture directories and
//! seeded stratified sampling.
//!
//! IDX files may be gzip-compressed; format errors then report offsets into
//! the decompressed stream.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::Image;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    images: Vec<Image>,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, images: Vec<Image>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!("label {l} out of range for {class_count} classes")));
        }
        if let Some(first) = images.first() {
            if let Some(i) = images.iter().position(|im| im.shape() != first.shape()) {
                return Err(Error::Data(format!(
                    "image {i} is {:?}, expected {:?}",
                    images[i].shape(),
                    first.shape()
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            class_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_shape(&self) -> Result<(usize, usize)> {
        self.images
            .first()
            .map(|i| i.shape())
            .ok_or_else(|| Error::Data(format!("dataset {} is empty", self.name)))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Dataset restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, offset as u64, format!("file truncated while reading {what}")))
}

/// Parses an IDX image file into `(rows, cols, pixels per image)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    let magic = read_u32(bytes, 0, path, "magic number")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("expected image magic 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let count = read_u32(bytes, 4, path, "image count")? as usize;
    let rows = read_u32(bytes, 8, path, "row count")? as usize;
    let cols = read_u32(bytes, 12, path, "column count")? as usize;
    let size = rows * cols;
    let needed = 16 + count * size;
    if bytes.len() < needed {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("file truncated: {count} images of {rows}x{cols} need {needed} bytes"),
        ));
    }
    let images = bytes[16..needed]
        .chunks_exact(size.max(1))
        .take(count)
        .map(|c| c.to_vec())
        .collect();
    Ok((rows, cols, images))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, path, "magic number")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("expected label magic 0x{IDX_LABELS_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let count = read_u32(bytes, 4, path, "label count")? as usize;
    if bytes.len() < 8 + count {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("file truncated: {count} labels need {} bytes", 8 + count),
        ));
    }
    Ok(bytes[8..8 + count].to_vec())
}

/// Loads an IDX image/label pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (rows, cols, pixels) = parse_idx_images(&read_maybe_gz(ip)?, ip)?;
    let labels = parse_idx_labels(&read_maybe_gz(lp)?, lp)?;
    if labels.len() != pixels.len() {
        return Err(Error::format(
            lp,
            4,
            format!(
                "{} labels for {} images in {}",
                labels.len(),
                pixels.len(),
                ip.display()
            ),
        ));
    }
    let images = pixels
        .into_iter()
        .map(|p| Image::new(rows, cols, p.into_iter().map(|v| v as f64 / 255.0).collect()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    let name = ip
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(name, images, labels, class_count)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path.extension().is_some_and(|e| e == "gz");
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let result = if gz {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut file = file;
        file.write_all(bytes)
    };
    result.map_err(|e| Error::io(path, e))
}

/// Writes a dataset as an IDX pair (gzip when the path ends in `.gz`).
/// Pixels are mapped back with `round(255 * v)`, clamped to `[0, 255]`.
pub fn write_idx(dataset: &LabeledDataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (rows, cols) = dataset.image_shape().unwrap_or((0, 0));
    let mut img_bytes = Vec::with_capacity(16 + dataset.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC, dataset.len() as u32, rows as u32, cols as u32] {
        img_bytes.extend_from_slice(&v.to_be_bytes());
    }
    for im in dataset.images() {
        img_bytes.extend(im.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    let mut label_bytes = Vec::with_capacity(8 + dataset.len());
    for v in [IDX_LABELS_MAGIC, dataset.len() as u32] {
        label_bytes.extend_from_slice(&v.to_be_bytes());
    }
    for &l in dataset.labels() {
        if l > 255 {
            return Err(Error::Data(format!("label {l} does not fit in one byte")));
        }
        label_bytes.push(l as u8);
    }
    write_bytes(images_path.as_ref(), &img_bytes)?;
    write_bytes(labels_path.as_ref(), &label_bytes)
}

/// Which half of a standard IDX directory to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxSplit {
    Train,
    Test,
}

fn find_idx_file(dir: &Path, prefixes: &[&str], kind: &str) -> Result<std::path::PathBuf> {
    for prefix in prefixes {
        for suffix in ["", ".gz"] {
            let candidate = dir.join(format!("{prefix}-{kind}{suffix}"));
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    let expected = dir.join(format!("{}-{kind}[.gz]", prefixes[0]));
    Err(Error::io(
        expected,
        std::io::Error::new(std::io::ErrorKind::NotFound, "no such IDX file"),
    ))
}

/// Loads `train-*` or `t10k-*`/`test-*` IDX files from `dir`, accepting
/// gzipped and raw variants.
pub fn load_idx_dir(dir: impl AsRef<Path>, split: IdxSplit) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    let prefixes: &[&str] = match split {
        IdxSplit::Train => &["train"],
        IdxSplit::Test => &["t10k", "test"],
    };
    let images = find_idx_file(dir, prefixes, "images-idx3-ubyte")?;
    let labels = find_idx_file(dir, prefixes, "labels-idx1-ubyte")?;
    let name = format!(
        "{}-{}",
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        if split == IdxSplit::Train { "train" } else { "test" }
    );
    Ok(load_idx(images, labels)?.with_name(name))
}

const TEXTURE_EXTENSIONS: [&str; 5] = ["png", "pgm", "ppm", "pnm", "pbm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextureOptions {
    /// Side of the square patch taken from every image.
    pub patch_size: usize,
    /// Keep at most this many images per class (first in file order).
    pub per_class: Option<usize>,
    /// Divide each patch by its L2 norm.
    pub normalize: bool,
}

impl TextureOptions {
    pub fn new(patch_size: usize) -> Self {
        Self {
            patch_size,
            per_class: None,
            normalize: true,
        }
    }
}

/// Top-left corner of the centered `patch x patch` window in an
/// `rows x cols` image.
pub fn center_crop_offsets(rows: usize, cols: usize, patch: usize) -> (usize, usize) {
    ((rows.saturating_sub(patch)) / 2, (cols.saturating_sub(patch)) / 2)
}

fn texture_patch(path: &Path, patch: usize) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let mut gray = img.to_luma32f();
    let (w, h) = gray.dimensions();
    let p = patch as u32;
    if w < p || h < p {
        // Upscale so the short side covers the patch, then crop.
        let s = p as f64 / w.min(h) as f64;
        let nw = ((w as f64 * s).ceil() as u32).max(p);
        let nh = ((h as f64 * s).ceil() as u32).max(p);
        gray = image::imageops::resize(&gray, nw, nh, image::imageops::FilterType::Triangle);
    }
    let (w, h) = gray.dimensions();
    let (top, left) = center_crop_offsets(h as usize, w as usize, patch);
    Ok(Image::from_fn(patch, patch, |r, c| {
        gray.get_pixel((left + c) as u32, (top + r) as u32)[0] as f64
    }))
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

/// Loads `root/<class>/*.{png,pgm,ppm,pnm}` as grayscale square patches.
/// Classes are numbered in lexicographic directory order and files are
/// read in lexicographic order.
pub fn load_texture_dir(root: impl AsRef<Path>, options: &TextureOptions) -> Result<(LabeledDataset, Vec<String>)> {
    let root = root.as_ref();
    if options.patch_size == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    let class_dirs: Vec<_> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("no class directories under {}", root.display())));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for (class, dir) in class_dirs.iter().enumerate() {
        let files: Vec<_> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| TEXTURE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .take(options.per_class.unwrap_or(usize::MAX))
            .collect();
        if files.is_empty() {
            return Err(Error::Data(format!("class directory {} has no images", dir.display())));
        }
        for f in files {
            let mut patch = texture_patch(&f, options.patch_size)?;
            if options.normalize {
                let norm = patch.norm_sq().sqrt();
                if norm > 0.0 {
                    patch = patch.scale(1.0 / norm);
                }
            }
            images.push(patch);
            labels.push(class);
        }
        names.push(
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((LabeledDataset::new(name, images, labels, class_dirs.len())?, names))
}

fn indices_by_class(labels: &[usize], class_count: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Seeded stratified subset of `size` samples: `size / C` per class, the
/// remainder going to the lowest class ids, with shortfalls of small
/// classes redistributed. Selected samples keep their original order.
pub fn subsample_train(dataset: &LabeledDataset, size: usize, seed: u64) -> Result<LabeledDataset> {
    let classes = dataset.class_count();
    if size < classes || size == 0 {
        return Err(Error::Data(format!(
            "training size {size} is smaller than the {classes} classes"
        )));
    }
    if size > dataset.len() {
        return Err(Error::Data(format!(
            "training size {size} exceeds the {} available samples",
            dataset.len()
        )));
    }
    if size == dataset.len() {
        return Ok(dataset.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = indices_by_class(dataset.labels(), classes);
    for idx in &mut by_class {
        idx.shuffle(&mut rng);
    }
    let mut quota: Vec<usize> = (0..classes)
        .map(|c| size / classes + usize::from(c < size % classes))
        .collect();
    // Move quota from classes that are too small to those with spare samples.
    let mut deficit: usize = 0;
    for c in 0..classes {
        if quota[c] > by_class[c].len() {
            deficit += quota[c] - by_class[c].len();
            quota[c] = by_class[c].len();
        }
    }
    while deficit > 0 {
        for c in 0..classes {
            if deficit > 0 && quota[c] < by_class[c].len() {
                quota[c] += 1;
                deficit -= 1;
            }
        }
    }
    let mut chosen: Vec<usize> = by_class
        .iter()
        .zip(&quota)
        .flat_map(|(idx, &q)| idx[..q].iter().copied())
        .collect();
    chosen.sort_unstable();
    Ok(dataset.subset(&chosen))
}

/// Seeded stratified split into `(fit, validation)` index sets, holding out
/// `round(fraction * n_c)` samples of each class (at least one, and never
/// all of them).
pub fn stratified_holdout(labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} must lie in (0, 1)")));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for (c, mut idx) in indices_by_class(labels, classes).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class {c} has {} sample; at least 2 are needed to hold one out",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_val = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        fit.extend_from_slice(&idx[n_val..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    Ok((fit, val))
}

/// Seeded stratified partition into `folds` disjoint index sets.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("k-fold needs at least 2 folds, got {folds}")));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = vec![Vec::new(); folds];
    let mut next = 0;
    for mut idx in indices_by_class(labels, classes) {
        idx.shuffle(&mut rng);
        for i in idx {
            parts[next % folds].push(i);
            next += 1;
        }
    }
    parts.iter_mut().for_each(|p| p.sort_unstable());
    Ok(parts)
}

/// Splits every class by alternating file order: even positions train,
/// odd positions test.
pub fn split_alternating(dataset: &LabeledDataset) -> (LabeledDataset, LabeledDataset) {
    let mut seen = vec![0usize; dataset.class_count()];
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, &l) in dataset.labels().iter().enumerate() {
        if seen[l].is_multiple_of(2) {
            train.push(i);
        } else {
            test.push(i);
        }
        seen[l] += 1;
    }
    (dataset.subset(&train), dataset.subset(&test))
}
