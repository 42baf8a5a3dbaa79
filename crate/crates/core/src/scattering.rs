//! Scattering cascade: iterated wavelet-modulus propagation along
//! frequency-decreasing paths, each branch averaged by the lowpass and
//! sampled at interval `2^J`.
//!
//! Path admissibility: scale indices strictly increase along a path
//! (`j1 < j2 < ...`). Since a larger `j` is a coarser scale, each step moves
//! to a lower center frequency.
//!
//! Norms: coefficients are sampled every `2^J` pixels, so each sample stands
//! for a `2^J x 2^J` cell. [`ScatteringVector::cell_weight`] (`4^J`) is the
//! weight that makes sums over coefficients comparable with pixel sums over
//! the input image.

use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;

use crate::engine::{filter_and_subsample, mirror_pad, modulus, subsample, Fft2, Image, Padding};
use crate::error::{Error, Result};
use crate::filterbank::{build_coarse_level, build_filterbank, FilterBank, GaborParams};

/// One wavelet index along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Step {
    pub scale: u32,
    pub orientation: u32,
}

/// Ordered wavelet indices selecting one cascade branch.
///
/// Paths order by length, then lexicographically on `(scale, orientation)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Path {
    steps: Vec<Step>,
}

impl Path {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a path from `(scale, orientation)` pairs, checking that scales
    /// strictly increase.
    pub fn new(steps: &[(u32, u32)]) -> Result<Self> {
        let steps: Vec<Step> = steps
            .iter()
            .map(|&(scale, orientation)| Step { scale, orientation })
            .collect();
        if steps.windows(2).any(|w| w[0].scale >= w[1].scale) {
            return Err(Error::Argument(format!(
                "path scales must strictly increase: {steps:?}"
            )));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_scale(&self) -> Option<u32> {
        self.steps.last().map(|s| s.scale)
    }

    pub fn child(&self, scale: u32, orientation: u32) -> Path {
        let mut steps = self.steps.clone();
        steps.push(Step { scale, orientation });
        Path { steps }
    }

    /// Whether this path is valid under `config`.
    pub fn is_admissible(&self, config: &ScatteringConfig) -> bool {
        self.len() <= config.max_order
            && self
                .steps
                .iter()
                .all(|s| s.scale < config.params.max_scale && (s.orientation as usize) < config.params.num_orientations)
            && self.steps.windows(2).all(|w| w[0].scale < w[1].scale)
    }
}

impl Ord for Path {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len().cmp(&other.len()).then_with(|| self.steps.cmp(&other.steps))
    }
}

impl PartialOrd for Path {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for Path {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.steps.is_empty() {
            return write!(f, "()");
        }
        let parts: Vec<String> = self
            .steps
            .iter()
            .map(|s| format!("{}:{}", s.scale, s.orientation))
            .collect();
        write!(f, "{}", parts.join("/"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringConfig {
    pub params: GaborParams,
    /// Maximum path length `m0`, at most 3.
    pub max_order: usize,
    /// Subsample each modulus output at `2^{j-1}` before propagating further.
    pub subsample_intermediate: bool,
}

impl Default for ScatteringConfig {
    fn default() -> Self {
        Self {
            params: GaborParams::default(),
            max_order: 2,
            subsample_intermediate: false,
        }
    }
}

impl ScatteringConfig {
    pub fn new(params: GaborParams, max_order: usize) -> Self {
        Self {
            params,
            max_order,
            subsample_intermediate: false,
        }
    }

    pub fn max_scale(&self) -> u32 {
        self.params.max_scale
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.max_order > 3 {
            return Err(Error::Config(format!(
                "maximum path length {} exceeds 3",
                self.max_order
            )));
        }
        Ok(())
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// `sum_{n=0}^{m0} L^n C(J, n)`.
pub fn path_count(max_scale: u32, num_orientations: usize, max_order: usize) -> usize {
    (0..=max_order as u64)
        .map(|n| (num_orientations as u64).pow(n as u32) * binomial(max_scale as u64, n))
        .sum::<u64>() as usize
}

/// All admissible paths in canonical order, starting with the empty path.
pub fn enumerate_paths(config: &ScatteringConfig) -> Vec<Path> {
    fn extend(prefix: &Path, remaining: usize, config: &ScatteringConfig, out: &mut Vec<Path>) {
        if remaining == 0 {
            out.push(prefix.clone());
            return;
        }
        let start = prefix.last_scale().map_or(0, |j| j + 1);
        for j in start..config.params.max_scale {
            for g in 0..config.params.num_orientations as u32 {
                extend(&prefix.child(j, g), remaining - 1, config, out);
            }
        }
    }
    let mut out = Vec::new();
    for n in 0..=config.max_order {
        extend(&Path::empty(), n, config, &mut out);
    }
    out
}

/// Scattering coefficients of one image, path-major and spatial-minor in
/// canonical path order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringVector {
    config: ScatteringConfig,
    source_shape: (usize, usize),
    spatial_shape: (usize, usize),
    paths: Arc<[Path]>,
    coeffs: Vec<f64>,
}

impl ScatteringVector {
    pub(crate) fn from_parts(
        config: ScatteringConfig,
        source_shape: (usize, usize),
        spatial_shape: (usize, usize),
        paths: Arc<[Path]>,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        if coeffs.len() != paths.len() * spatial_shape.0 * spatial_shape.1 {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} paths of {}x{} samples",
                coeffs.len(),
                paths.len(),
                spatial_shape.0,
                spatial_shape.1
            )));
        }
        Ok(Self {
            config,
            source_shape,
            spatial_shape,
            paths,
            coeffs,
        })
    }

    pub fn config(&self) -> &ScatteringConfig {
        &self.config
    }

    pub fn source_shape(&self) -> (usize, usize) {
        self.source_shape
    }

    /// Samples per path, `(rows, cols)`.
    pub fn spatial_shape(&self) -> (usize, usize) {
        self.spatial_shape
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    /// Flat coefficient block, usable directly as a feature vector.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn path_coefficients(&self, index: usize) -> &[f64] {
        let n = self.spatial_shape.0 * self.spatial_shape.1;
        &self.coeffs[index * n..(index + 1) * n]
    }

    pub fn get(&self, path: &Path) -> Option<&[f64]> {
        self.paths.binary_search(path).ok().map(|i| self.path_coefficients(i))
    }

    /// Area represented by one coefficient sample, `4^J`.
    pub fn cell_weight(&self) -> f64 {
        let s = (1u64 << self.config.max_scale()) as f64;
        s * s
    }

    /// `sum_p ||S_J(p) f||^2` with cell weighting.
    pub fn norm_sq(&self) -> f64 {
        self.cell_weight() * self.coeffs.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Euclidean scattering metric, `sqrt(sum_p ||S_J(p) a - S_J(p) b||^2)`.
pub fn scattering_distance(a: &ScatteringVector, b: &ScatteringVector) -> Result<f64> {
    if a.config != b.config
        || a.spatial_shape != b.spatial_shape
        || a.paths.len() != b.paths.len()
        || a.paths.iter().zip(b.paths.iter()).any(|(x, y)| x != y)
    {
        return Err(Error::Incompatible(
            "scattering vectors were computed with different configurations".into(),
        ));
    }
    let sum: f64 = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((a.cell_weight() * sum).sqrt())
}

/// Output of one wavelet-modulus propagator step.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// `f * phi_J`.
    pub lowpass: Image,
    /// `|f * psi_{j,g}|` keyed by `(j, g)`, scale-major.
    pub children: Vec<((u32, u32), Image)>,
}

impl Propagation {
    /// `||A_J f||^2 + sum ||W_{j,g} f||^2`, the branch-summed energy.
    pub fn energy(&self) -> f64 {
        self.lowpass.norm_sq() + self.children.iter().map(|(_, c)| c.norm_sq()).sum::<f64>()
    }

    /// Branch-summed squared distance to another propagation.
    pub fn distance_sq(&self, other: &Propagation) -> f64 {
        let d = |a: &Image, b: &Image| -> f64 { a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum() };
        d(&self.lowpass, &other.lowpass)
            + self
                .children
                .iter()
                .zip(&other.children)
                .map(|((_, a), (_, b))| d(a, b))
                .sum::<f64>()
    }
}

/// Applies the wavelet-modulus propagator: the lowpass average and the
/// modulus of every bandpass output, all at full resolution.
pub fn propagate(signal: &Image, bank: &FilterBank) -> Result<Propagation> {
    if signal.shape() != bank.grid_shape() {
        return Err(Error::Dimension(format!(
            "signal is {:?} but filters are {:?}",
            signal.shape(),
            bank.grid_shape()
        )));
    }
    let (rows, cols) = bank.grid_shape();
    let fft = Fft2::new(rows, cols);
    let spectrum = fft.forward_real(signal)?;
    let lowpass = fft.filter_spectrum(&spectrum, bank.lowpass())?.real();
    let mut children = Vec::with_capacity(bank.bandpass_filters().len());
    for j in 0..bank.max_scale() {
        for g in 0..bank.num_orientations() {
            let w = fft.filter_spectrum(&spectrum, bank.bandpass(j, g))?;
            children.push(((j, g as u32), modulus(&w)));
        }
    }
    Ok(Propagation { lowpass, children })
}

/// Filters and FFT plans for signals living on the grid subsampled by `2^offset`.
#[derive(Debug, Clone)]
struct Level {
    offset: u32,
    fft: Fft2,
    /// Bandpass filters for scales `offset..J`, scale-major.
    bandpass: Vec<crate::engine::ComplexImage>,
    lowpass: crate::engine::ComplexImage,
}

impl Level {
    fn bandpass(&self, j: u32, g: u32, num_orientations: usize) -> &crate::engine::ComplexImage {
        &self.bandpass[(j - self.offset) as usize * num_orientations + g as usize]
    }
}

/// Energy accounting for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBudget {
    /// `||f||^2` on the (padded) grid.
    pub input: f64,
    /// `sum_{|p| = n} ||S_J(p) f||^2` for `n = 0..=m0`, cell weighted.
    pub averaged_by_order: Vec<f64>,
    /// `sum_{|p| = m0} ||U(p) f||^2`, the unaveraged deepest layer.
    pub deepest_unaveraged: f64,
}

impl EnergyBudget {
    /// Averaged energy of all paths shorter than `m0` plus the unaveraged
    /// deepest layer: what a lossless frame would return exactly.
    pub fn retained(&self) -> f64 {
        let m0 = self.averaged_by_order.len() - 1;
        self.averaged_by_order[..m0].iter().sum::<f64>() + self.deepest_unaveraged
    }
}

/// Energy of second-layer wavelet outputs `| |f * psi_{j1}| * psi_{j2} |`,
/// summed over orientations, for one `(j1, j2)` scale pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchEnergy {
    pub first_scale: u32,
    pub second_scale: u32,
    pub energy: f64,
}

impl BranchEnergy {
    pub fn is_frequency_decreasing(&self) -> bool {
        self.second_scale > self.first_scale
    }
}

/// Scattering transform for images of one fixed shape.
///
/// Images are mirror-padded into the smallest power-of-two square that holds
/// them (and at least `2^J` wide); all convolutions are periodic on that
/// grid, and the output keeps the subsampled positions covering the
/// original image.
#[derive(Debug, Clone)]
pub struct Scatterer {
    config: ScatteringConfig,
    padding: Padding,
    bank: Arc<FilterBank>,
    levels: Vec<Level>,
    output_fft: Fft2,
    paths: Arc<[Path]>,
}

impl Scatterer {
    pub fn new(config: ScatteringConfig, image_shape: (usize, usize)) -> Result<Self> {
        config.validate()?;
        let min = 1usize << config.max_scale();
        let padding = Padding::for_shape(image_shape.0, image_shape.1, min);
        let bank = build_filterbank(config.params, (padding.size, padding.size))?;
        Self::assemble(config, padding, Arc::new(bank))
    }

    /// Uses a prebuilt bank; images must already match its grid, which must
    /// be square with a power-of-two side.
    pub fn from_bank(config: ScatteringConfig, bank: Arc<FilterBank>) -> Result<Self> {
        config.validate()?;
        if config.params != *bank.params() {
            return Err(Error::Incompatible(
                "configuration parameters differ from the filter bank".into(),
            ));
        }
        let (rows, cols) = bank.grid_shape();
        let padding = Padding::for_shape(rows, cols, 1 << config.max_scale());
        if !padding.is_identity() {
            return Err(Error::Config(format!(
                "filter grid {rows}x{cols} is not a power-of-two square"
            )));
        }
        Self::assemble(config, padding, bank)
    }

    fn assemble(config: ScatteringConfig, padding: Padding, bank: Arc<FilterBank>) -> Result<Self> {
        let size = padding.size;
        let j_max = config.max_scale();
        let mut levels = vec![Level {
            offset: 0,
            fft: Fft2::new(size, size),
            bandpass: bank.bandpass_filters().to_vec(),
            lowpass: bank.lowpass().clone(),
        }];
        if config.subsample_intermediate {
            for offset in 1..j_max.saturating_sub(1) {
                let n = size >> offset;
                let (bandpass, lowpass) = build_coarse_level(&config.params, (n, n), offset, bank.normalization());
                levels.push(Level {
                    offset,
                    fft: Fft2::new(n, n),
                    bandpass,
                    lowpass,
                });
            }
        }
        let out = size >> j_max;
        Ok(Self {
            config,
            padding,
            bank,
            levels,
            output_fft: Fft2::new(out, out),
            paths: enumerate_paths(&config).into(),
        })
    }

    pub fn config(&self) -> &ScatteringConfig {
        &self.config
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn padding(&self) -> &Padding {
        &self.padding
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    /// Samples per path after cropping.
    pub fn spatial_shape(&self) -> (usize, usize) {
        let ((_, rows), (_, cols)) = self.padding.cropped_ranges(1 << self.config.max_scale());
        (rows, cols)
    }

    /// Length of the flat feature vector.
    pub fn feature_len(&self) -> usize {
        let (r, c) = self.spatial_shape();
        self.paths.len() * r * c
    }

    fn padded(&self, image: &Image) -> Result<Image> {
        if image.shape() != (self.padding.rows, self.padding.cols) {
            return Err(Error::Dimension(format!(
                "scatterer expects {}x{} images, got {:?}",
                self.padding.rows,
                self.padding.cols,
                image.shape()
            )));
        }
        mirror_pad(image, &self.padding)
    }

    /// Runs the cascade on a padded image. `emit` receives each path index
    /// with its averaged, `2^J`-subsampled output on the padded grid. When
    /// `deepest` is given it accumulates the cell-weighted energy of the
    /// unaveraged signals of the deepest layer.
    fn cascade(
        &self,
        padded: &Image,
        mut emit: impl FnMut(usize, &Image),
        mut deepest: Option<&mut f64>,
    ) -> Result<()> {
        let j_max = self.config.max_scale();
        let num_orient = self.config.params.num_orientations;
        let mut layer: Vec<(Path, usize, Image)> = vec![(Path::empty(), 0, padded.clone())];
        for order in 0..=self.config.max_order {
            let mut next = Vec::new();
            for (path, level_idx, signal) in &layer {
                let level = &self.levels[*level_idx];
                let spectrum = level.fft.forward_real(signal)?;
                let step = 1usize << (j_max - level.offset);
                let averaged = filter_and_subsample(&spectrum, &level.lowpass, step, &self.output_fft)?.real();
                let index = self
                    .paths
                    .binary_search(path)
                    .expect("cascade only visits enumerated paths");
                emit(index, &averaged);
                if order == self.config.max_order {
                    if let Some(acc) = deepest.as_deref_mut() {
                        let cell = (1u64 << (2 * level.offset)) as f64;
                        *acc += cell * signal.norm_sq();
                    }
                    continue;
                }
                let start = path.last_scale().map_or(0, |j| j + 1);
                for j in start..j_max {
                    for g in 0..num_orient as u32 {
                        let w = level.fft.filter_spectrum(&spectrum, level.bandpass(j, g, num_orient))?;
                        let mut u = modulus(&w);
                        let mut target = *level_idx;
                        if self.config.subsample_intermediate {
                            let wanted = (j.saturating_sub(1) as usize).min(self.levels.len() - 1);
                            if wanted > target {
                                u = subsample(&u, 1 << (wanted - target))?;
                                target = wanted;
                            }
                        }
                        next.push((path.child(j, g), target, u));
                    }
                }
            }
            layer = next;
        }
        Ok(())
    }

    /// Scattering coefficients of one image.
    pub fn scatter(&self, image: &Image) -> Result<ScatteringVector> {
        let padded = self.padded(image)?;
        let step = 1usize << self.config.max_scale();
        let ((r0, nr), (c0, nc)) = self.padding.cropped_ranges(step);
        let per_path = nr * nc;
        let mut coeffs = vec![0.0; self.paths.len() * per_path];
        self.cascade(
            &padded,
            |index, averaged| {
                let slot = &mut coeffs[index * per_path..(index + 1) * per_path];
                for r in 0..nr {
                    for c in 0..nc {
                        slot[r * nc + c] = averaged.get(r0 + r, c0 + c);
                    }
                }
            },
            None,
        )?;
        ScatteringVector::from_parts(self.config, image.shape(), (nr, nc), self.paths.clone(), coeffs)
    }

    /// Scatters a batch in parallel; output order matches input order.
    pub fn scatter_batch(&self, images: &[Image]) -> Result<Vec<ScatteringVector>> {
        images.par_iter().map(|img| self.scatter(img)).collect()
    }

    /// Energy per layer on the padded grid, including the unaveraged
    /// deepest layer that is not part of the feature vector.
    pub fn energy_budget(&self, image: &Image) -> Result<EnergyBudget> {
        let padded = self.padded(image)?;
        let s = (1u64 << self.config.max_scale()) as f64;
        let mut by_order = vec![0.0; self.config.max_order + 1];
        let mut deepest = 0.0;
        let paths = self.paths.clone();
        self.cascade(
            &padded,
            |index, averaged| by_order[paths[index].len()] += s * s * averaged.norm_sq(),
            Some(&mut deepest),
        )?;
        Ok(EnergyBudget {
            input: padded.norm_sq(),
            averaged_by_order: by_order,
            deepest_unaveraged: deepest,
        })
    }

    /// Second-layer wavelet energies for every `(j1, j2)` scale pair,
    /// including the non-frequency-decreasing pairs `j2 <= j1` that the
    /// cascade skips. Diagnostic only.
    pub fn second_layer_energies(&self, image: &Image) -> Result<Vec<BranchEnergy>> {
        let padded = self.padded(image)?;
        let first = propagate(&padded, &self.bank)?;
        let j_max = self.config.max_scale();
        let mut table: Vec<BranchEnergy> = (0..j_max)
            .flat_map(|j1| {
                (0..j_max).map(move |j2| BranchEnergy {
                    first_scale: j1,
                    second_scale: j2,
                    energy: 0.0,
                })
            })
            .collect();
        for ((j1, _), u) in &first.children {
            let second = propagate(u, &self.bank)?;
            for ((j2, _), v) in &second.children {
                table[(*j1 * j_max + *j2) as usize].energy += v.norm_sq();
            }
        }
        Ok(table)
    }
}

/// Scattering of an image that already lives on the bank's grid (no padding).
pub fn scatter(image: &Image, config: &ScatteringConfig, bank: &FilterBank) -> Result<ScatteringVector> {
    Scatterer::from_bank(*config, Arc::new(bank.clone()))?.scatter(image)
}
