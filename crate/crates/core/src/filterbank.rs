//! Multiscale oriented Gabor wavelets and the Gaussian lowpass, built
//! analytically in the Fourier domain.
//!
//! Scale convention: `psi_{j,g}(x) = 2^{-2j} psi_g(2^{-j} x)`, so the filter
//! for scale `j` is `psi_hat_g(2^j w)` with center frequency `2^{-j} xi`.
//! Larger `j` is coarser. The lowpass is `phi_hat(2^J w)` where `phi` is a
//! unit-mass Gaussian of standard deviation `lowpass_sigma` (the mother std,
//! before dilation).
//!
//! Every filter is periodized on the sampling grid by summing its analytic
//! transform over the aliases `w + 2 pi k`, `k` in `{-1, 0, 1}^2`. Bandpass
//! filters are then multiplied by one common constant chosen so that the
//! Littlewood-Paley profile never exceeds 1 while `phi_hat(0) = 1` is kept.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::engine::ComplexImage;
use crate::error::{Error, Result};

const ALIASES: [f64; 3] = [-1.0, 0.0, 1.0];

/// Parameters of the Gabor wavelet family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborParams {
    /// Radial center frequency of the mother wavelet, radians per pixel.
    pub xi: f64,
    /// Spatial standard deviation of the mother wavelet envelope, pixels.
    pub sigma: f64,
    /// Number of orientations covering `[0, pi)`.
    pub num_orientations: usize,
    /// Number of wavelet scales `J`; the lowpass lives at scale `2^J`.
    pub max_scale: u32,
    /// Spatial standard deviation of the mother lowpass Gaussian.
    pub lowpass_sigma: f64,
    /// Subtract a multiple of the envelope so that every `psi_hat(0) = 0`.
    pub dc_correction: bool,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self {
            xi: 3.0 * PI / 4.0,
            sigma: 1.0,
            num_orientations: 6,
            max_scale: 3,
            lowpass_sigma: 2.0 / 3.0,
            dc_correction: true,
        }
    }
}

impl GaborParams {
    pub fn with_max_scale(self, max_scale: u32) -> Self {
        Self { max_scale, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::Config(format!("xi must be positive, got {}", self.xi)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.lowpass_sigma > 0.0 && self.lowpass_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "lowpass sigma must be positive, got {}",
                self.lowpass_sigma
            )));
        }
        if self.num_orientations == 0 {
            return Err(Error::Config("at least one orientation is required".into()));
        }
        if self.max_scale > 30 {
            return Err(Error::Config(format!("max scale {} is out of range", self.max_scale)));
        }
        Ok(())
    }

    /// Orientation angle of wavelet `gamma`.
    pub fn angle(&self, gamma: usize) -> f64 {
        PI * gamma as f64 / self.num_orientations as f64
    }

    /// Mother Gabor transform for orientation `gamma`, without DC correction
    /// or normalization: `exp(-sigma^2 |w - xi_gamma|^2 / 2)`.
    pub fn gabor_hat(&self, gamma: usize, w1: f64, w2: f64) -> f64 {
        let theta = self.angle(gamma);
        let (c1, c2) = (self.xi * theta.cos(), self.xi * theta.sin());
        let d = (w1 - c1).powi(2) + (w2 - c2).powi(2);
        (-0.5 * self.sigma * self.sigma * d).exp()
    }

    /// Transform of the Gaussian envelope, `exp(-sigma^2 |w|^2 / 2)`.
    pub fn envelope_hat(&self, w1: f64, w2: f64) -> f64 {
        (-0.5 * self.sigma * self.sigma * (w1 * w1 + w2 * w2)).exp()
    }

    /// Continuous bandpass transform at scale `j` (Morlet-corrected when
    /// `dc_correction` is set), before periodization and normalization.
    pub fn bandpass_hat(&self, j: u32, gamma: usize, w1: f64, w2: f64) -> f64 {
        let s = (1u64 << j) as f64;
        let (u1, u2) = (s * w1, s * w2);
        let g = self.gabor_hat(gamma, u1, u2);
        if self.dc_correction {
            g - (-0.5 * self.sigma * self.sigma * self.xi * self.xi).exp() * self.envelope_hat(u1, u2)
        } else {
            g
        }
    }

    /// Continuous lowpass transform at scale `2^J`, equal to 1 at the origin.
    pub fn lowpass_hat(&self, w1: f64, w2: f64) -> f64 {
        let s = (1u64 << self.max_scale) as f64;
        let sp = self.lowpass_sigma * s;
        (-0.5 * sp * sp * (w1 * w1 + w2 * w2)).exp()
    }

    /// Inner and outer radius of the frequency annulus spanned by the
    /// wavelet centers, `[2^{-(J-1)} xi, xi]`. `None` when `J = 0`.
    pub fn resolved_annulus(&self) -> Option<(f64, f64)> {
        if self.max_scale == 0 {
            None
        } else {
            Some((self.xi / (1u64 << (self.max_scale - 1)) as f64, self.xi))
        }
    }
}

/// Angular frequency of DFT index `k` on an `n`-point axis, in `[-pi, pi)`.
pub fn frequency(k: usize, n: usize) -> f64 {
    let k = k as isize;
    let n = n as isize;
    let wrapped = if k >= n - n / 2 { k - n } else { k };
    2.0 * PI * wrapped as f64 / n as f64
}

/// Samples `f(2^dilation * (w + 2 pi a))` summed over aliases, on a grid.
fn periodized(rows: usize, cols: usize, dilation: u32, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let s = (1u64 << dilation) as f64;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let w1 = frequency(r, rows);
        for c in 0..cols {
            let w2 = frequency(c, cols);
            let mut acc = 0.0;
            for a in ALIASES {
                for b in ALIASES {
                    acc += f(s * (w1 + 2.0 * PI * a), s * (w2 + 2.0 * PI * b));
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Sampled, periodized bandpass filter at dilation `2^d`, unnormalized.
fn sampled_bandpass(params: &GaborParams, rows: usize, cols: usize, d: u32, gamma: usize) -> Vec<f64> {
    let gabor = periodized(rows, cols, d, |u1, u2| params.gabor_hat(gamma, u1, u2));
    if !params.dc_correction {
        return gabor;
    }
    let env = periodized(rows, cols, d, |u1, u2| params.envelope_hat(u1, u2));
    let beta = gabor[0] / env[0];
    gabor.iter().zip(&env).map(|(g, e)| g - beta * e).collect()
}

/// Sampled, periodized lowpass at dilation `2^d`, scaled to 1 at the origin.
fn sampled_lowpass(params: &GaborParams, rows: usize, cols: usize, d: u32) -> Vec<f64> {
    let sp = params.lowpass_sigma;
    let mut phi = periodized(rows, cols, d, |u1, u2| (-0.5 * sp * sp * (u1 * u1 + u2 * u2)).exp());
    let dc = phi[0];
    phi.iter_mut().for_each(|v| *v /= dc);
    phi
}

fn to_complex(rows: usize, cols: usize, values: &[f64], scale: f64) -> ComplexImage {
    ComplexImage::new(
        rows,
        cols,
        values.iter().map(|&v| Complex64::new(scale * v, 0.0)).collect(),
    )
    .expect("filter length matches grid")
}

/// Frequency-domain Gabor filter bank on a fixed grid.
#[derive(Debug, Clone)]
pub struct FilterBank {
    params: GaborParams,
    rows: usize,
    cols: usize,
    /// Filters indexed `j * |Gamma| + gamma`.
    bandpass: Vec<ComplexImage>,
    lowpass: ComplexImage,
    normalization: f64,
    frame_defect: f64,
}

impl FilterBank {
    pub fn params(&self) -> &GaborParams {
        &self.params
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn max_scale(&self) -> u32 {
        self.params.max_scale
    }

    pub fn num_orientations(&self) -> usize {
        self.params.num_orientations
    }

    pub fn bandpass(&self, j: u32, gamma: usize) -> &ComplexImage {
        &self.bandpass[j as usize * self.params.num_orientations + gamma]
    }

    pub fn bandpass_filters(&self) -> &[ComplexImage] {
        &self.bandpass
    }

    pub fn lowpass(&self) -> &ComplexImage {
        &self.lowpass
    }

    /// Common constant applied to every bandpass filter.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// `delta = 1 - min` of the Littlewood-Paley profile over the resolved
    /// annulus (0 when there are no wavelets).
    pub fn frame_defect(&self) -> f64 {
        self.frame_defect
    }

    /// Reassembles a bank from stored parts (used by the container reader).
    pub(crate) fn from_parts(
        params: GaborParams,
        rows: usize,
        cols: usize,
        bandpass: Vec<ComplexImage>,
        lowpass: ComplexImage,
        normalization: f64,
        frame_defect: f64,
    ) -> Self {
        Self {
            params,
            rows,
            cols,
            bandpass,
            lowpass,
            normalization,
            frame_defect,
        }
    }
}

/// Builds all `J * |Gamma|` bandpass filters and the lowpass on a
/// `rows x cols` grid.
pub fn build_filterbank(params: GaborParams, grid_shape: (usize, usize)) -> Result<FilterBank> {
    params.validate()?;
    let (rows, cols) = grid_shape;
    let min = 1usize << params.max_scale;
    if rows < min || cols < min {
        return Err(Error::Config(format!(
            "grid {rows}x{cols} is smaller than the coarsest scale 2^{} = {min}",
            params.max_scale
        )));
    }
    let raw: Vec<Vec<f64>> = (0..params.max_scale)
        .flat_map(|j| (0..params.num_orientations).map(move |g| (j, g)))
        .map(|(j, g)| sampled_bandpass(&params, rows, cols, j, g))
        .collect();
    let phi = sampled_lowpass(&params, rows, cols, params.max_scale);

    let normalization = normalization_constant(&params, rows, cols, &raw, &phi);
    let bandpass = raw.iter().map(|v| to_complex(rows, cols, v, normalization)).collect();
    let mut bank = FilterBank {
        params,
        rows,
        cols,
        bandpass,
        lowpass: to_complex(rows, cols, &phi, 1.0),
        normalization,
        frame_defect: 0.0,
    };
    bank.frame_defect = littlewood_paley_profile(&bank).frame_defect(&params);
    Ok(bank)
}

/// Filters for a signal that has already been subsampled by `2^offset`:
/// the bandpass filters for scales `offset..J` and the lowpass, evaluated on
/// the coarse grid with dilations reduced by `offset`.
pub(crate) fn build_coarse_level(
    params: &GaborParams,
    grid_shape: (usize, usize),
    offset: u32,
    normalization: f64,
) -> (Vec<ComplexImage>, ComplexImage) {
    let (rows, cols) = grid_shape;
    let bandpass = (offset..params.max_scale)
        .flat_map(|j| (0..params.num_orientations).map(move |g| (j, g)))
        .map(|(j, g)| {
            let v = sampled_bandpass(params, rows, cols, j - offset, g);
            to_complex(rows, cols, &v, normalization)
        })
        .collect();
    let phi = sampled_lowpass(params, rows, cols, params.max_scale - offset);
    (bandpass, to_complex(rows, cols, &phi, 1.0))
}

/// Index of `-w` for DFT index `k` on an `n`-point axis.
fn negate_index(k: usize, n: usize) -> usize {
    (n - k) % n
}

/// Sum of the symmetrized bandpass energies, `1/2 sum (|psi(w)|^2 + |psi(-w)|^2)`.
fn bandpass_energy(rows: usize, cols: usize, filters: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for f in filters {
        for r in 0..rows {
            let nr = negate_index(r, rows);
            for c in 0..cols {
                let nc = negate_index(c, cols);
                out[r * cols + c] += 0.5 * (f[r * cols + c].powi(2) + f[nr * cols + nc].powi(2));
            }
        }
    }
    out
}

fn normalization_constant(params: &GaborParams, rows: usize, cols: usize, raw: &[Vec<f64>], phi: &[f64]) -> f64 {
    if raw.is_empty() {
        return 1.0;
    }
    let energy = bandpass_energy(rows, cols, raw);
    if params.dc_correction {
        // Largest c with |phi|^2 + c^2 B <= 1 away from the origin, where
        // B vanishes by construction.
        let mut c2 = f64::INFINITY;
        for (i, (&b, &p)) in energy.iter().zip(phi).enumerate() {
            if i == 0 || b <= 0.0 {
                continue;
            }
            c2 = c2.min((1.0 - p * p).max(0.0) / b);
        }
        c2.sqrt()
    } else {
        // The profile exceeds 1 at the origin regardless of c; bound the
        // bandpass part alone.
        let max = energy.iter().cloned().fold(0.0, f64::max);
        1.0 / max.sqrt()
    }
}

/// Littlewood-Paley profile sampled on the filter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LittlewoodPaleyProfile {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl LittlewoodPaleyProfile {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Value at DFT index `(r, c)`.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Minimum over grid frequencies with `inner <= |w| <= outer`, or `None`
    /// if no grid point falls in the annulus.
    pub fn min_over_annulus(&self, inner: f64, outer: f64) -> Option<f64> {
        let lo = inner * (1.0 - 1e-12);
        let hi = outer * (1.0 + 1e-12);
        let mut min: Option<f64> = None;
        for r in 0..self.rows {
            let w1 = frequency(r, self.rows);
            for c in 0..self.cols {
                let w2 = frequency(c, self.cols);
                let rad = (w1 * w1 + w2 * w2).sqrt();
                if rad >= lo && rad <= hi {
                    let v = self.at(r, c);
                    min = Some(min.map_or(v, |m: f64| m.min(v)));
                }
            }
        }
        min
    }

    /// `1 - min` over the resolved annulus of `params`; 0 without wavelets.
    pub fn frame_defect(&self, params: &GaborParams) -> f64 {
        match params.resolved_annulus() {
            None => 0.0,
            Some((inner, outer)) => {
                let min = self.min_over_annulus(inner, outer).unwrap_or(1.0);
                (1.0 - min).max(0.0)
            }
        }
    }
}

/// `|phi_hat(w)|^2 + 1/2 sum_{j,g} (|psi_hat_{j,g}(w)|^2 + |psi_hat_{j,g}(-w)|^2)`
/// at every grid frequency.
pub fn littlewood_paley_profile(bank: &FilterBank) -> LittlewoodPaleyProfile {
    let (rows, cols) = bank.grid_shape();
    let moduli: Vec<Vec<f64>> = bank
        .bandpass
        .iter()
        .map(|f| f.data().iter().map(|v| v.norm()).collect())
        .collect();
    let mut values = bandpass_energy(rows, cols, &moduli);
    for (v, p) in values.iter_mut().zip(bank.lowpass.data()) {
        *v += p.norm_sqr();
    }
    LittlewoodPaleyProfile { rows, cols, values }
}
