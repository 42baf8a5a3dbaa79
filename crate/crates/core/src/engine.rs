//! FFT-based periodic convolution, complex modulus and subsampling.
//!
//! FFT normalization: the forward transform is unnormalized and the inverse
//! is scaled by `1/N` with `N = rows * cols`, so that
//! `sum |FFT(f)|^2 = N * sum |f|^2` and `ifft(fft(f)) = f`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Real-valued 2-D signal stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Complex-valued 2-D array stored row-major. Used both for complex signals
/// and for frequency-domain filters and spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} image needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite pixel at index {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn to_complex(&self) -> ComplexImage {
        ComplexImage {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    /// Periodic translation: `out[r][c] = self[r - dr][c - dc]`, indices mod shape.
    pub fn roll(&self, dr: isize, dc: isize) -> Image {
        let (rows, cols) = (self.rows as isize, self.cols as isize);
        Image::from_fn(self.rows, self.cols, |r, c| {
            let sr = (r as isize - dr).rem_euclid(rows) as usize;
            let sc = (c as isize - dc).rem_euclid(cols) as usize;
            self.get(sr, sc)
        })
    }

    pub fn scale(&self, factor: f64) -> Image {
        Image {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

impl ComplexImage {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} array needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn real(&self) -> Image {
        Image {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.re).collect(),
        }
    }
}

/// Planned 2-D FFT for one grid shape. Plans are immutable and shareable;
/// scratch space is allocated per call.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn check(&self, rows: usize, cols: usize) -> Result<()> {
        if (rows, cols) != (self.rows, self.cols) {
            return Err(Error::Dimension(format!(
                "FFT planned for {}x{}, got {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    fn run(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        let (rows, cols) = (self.rows, self.cols);
        row.process(buf);
        if rows > 1 {
            let mut t = transpose(buf, rows, cols);
            col.process(&mut t);
            let back = transpose(&t, cols, rows);
            buf.copy_from_slice(&back);
        }
    }

    /// Unnormalized forward transform in place.
    pub fn forward_in_place(&self, img: &mut ComplexImage) -> Result<()> {
        self.check(img.rows, img.cols)?;
        let (r, c) = (self.row_fwd.clone(), self.col_fwd.clone());
        self.run(&mut img.data, &r, &c);
        Ok(())
    }

    /// Inverse transform in place, scaled by `1/N`.
    pub fn inverse_in_place(&self, img: &mut ComplexImage) -> Result<()> {
        self.check(img.rows, img.cols)?;
        let (r, c) = (self.row_inv.clone(), self.col_inv.clone());
        self.run(&mut img.data, &r, &c);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        img.data.iter_mut().for_each(|v| *v *= scale);
        Ok(())
    }

    pub fn forward(&self, img: &ComplexImage) -> Result<ComplexImage> {
        let mut out = img.clone();
        self.forward_in_place(&mut out)?;
        Ok(out)
    }

    pub fn forward_real(&self, img: &Image) -> Result<ComplexImage> {
        let mut out = img.to_complex();
        self.forward_in_place(&mut out)?;
        Ok(out)
    }

    pub fn inverse(&self, spectrum: &ComplexImage) -> Result<ComplexImage> {
        let mut out = spectrum.clone();
        self.inverse_in_place(&mut out)?;
        Ok(out)
    }

    /// Circular convolution of `signal` with a filter given by its DFT.
    pub fn convolve(&self, signal: &ComplexImage, filter_freq: &ComplexImage) -> Result<ComplexImage> {
        check_same_shape(signal.shape(), filter_freq.shape())?;
        let spectrum = self.forward(signal)?;
        self.filter_spectrum(&spectrum, filter_freq)
    }

    /// Inverse transform of `spectrum * filter_freq`.
    pub fn filter_spectrum(&self, spectrum: &ComplexImage, filter_freq: &ComplexImage) -> Result<ComplexImage> {
        check_same_shape(spectrum.shape(), filter_freq.shape())?;
        let mut prod = multiply(spectrum, filter_freq);
        self.inverse_in_place(&mut prod)?;
        Ok(prod)
    }
}

fn check_same_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "signal is {}x{} but filter is {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

fn multiply(a: &ComplexImage, b: &ComplexImage) -> ComplexImage {
    ComplexImage {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    }
}

fn transpose(buf: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); buf.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = buf[r * cols + c];
        }
    }
    out
}

/// Circular convolution `ifft(fft(signal) * filter_freq)`.
pub fn fft_convolve(signal: &Image, filter_freq: &ComplexImage) -> Result<ComplexImage> {
    check_same_shape(signal.shape(), filter_freq.shape())?;
    let fft = Fft2::new(signal.rows, signal.cols);
    fft.convolve(&signal.to_complex(), filter_freq)
}

/// Pointwise complex modulus.
pub fn modulus(signal: &ComplexImage) -> Image {
    Image {
        rows: signal.rows,
        cols: signal.cols,
        data: signal.data.iter().map(|v| v.norm()).collect(),
    }
}

/// Keeps every `step`-th sample along both axes, starting at index 0.
pub fn subsample(signal: &Image, step: usize) -> Result<Image> {
    if step == 0 || !signal.rows.is_multiple_of(step) || !signal.cols.is_multiple_of(step) {
        return Err(Error::Dimension(format!(
            "step {step} does not divide {}x{}",
            signal.rows, signal.cols
        )));
    }
    let (rows, cols) = (signal.rows / step, signal.cols / step);
    Ok(Image::from_fn(rows, cols, |r, c| signal.get(r * step, c * step)))
}

/// Samples `ifft(spectrum * filter)` on the grid of every `step`-th point
/// without computing the full-resolution inverse: the product is folded
/// onto the coarse frequency grid and inverted there.
pub fn filter_and_subsample(
    spectrum: &ComplexImage,
    filter_freq: &ComplexImage,
    step: usize,
    coarse_fft: &Fft2,
) -> Result<ComplexImage> {
    check_same_shape(spectrum.shape(), filter_freq.shape())?;
    let (rows, cols) = spectrum.shape();
    if step == 0 || rows % step != 0 || cols % step != 0 {
        return Err(Error::Dimension(format!("step {step} does not divide {rows}x{cols}")));
    }
    let (cr, cc) = (rows / step, cols / step);
    let mut folded = ComplexImage::zeros(cr, cc);
    for r in 0..rows {
        let fr = (r % cr) * cc;
        let base = r * cols;
        for c in 0..cols {
            folded.data[fr + c % cc] += spectrum.data[base + c] * filter_freq.data[base + c];
        }
    }
    coarse_fft.inverse_in_place(&mut folded)?;
    let scale = 1.0 / (step * step) as f64;
    folded.data.iter_mut().for_each(|v| *v *= scale);
    Ok(folded)
}

/// Placement of an image inside its padded square grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub size: usize,
    pub top: usize,
    pub left: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Padding {
    /// Smallest power-of-two square holding the image and at least `min_size` wide.
    pub fn for_shape(rows: usize, cols: usize, min_size: usize) -> Self {
        let size = rows.max(cols).max(min_size).max(1).next_power_of_two();
        Self {
            size,
            top: (size - rows) / 2,
            left: (size - cols) / 2,
            rows,
            cols,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.size == self.rows && self.size == self.cols
    }

    /// Subsampled index range `(start, count)` along rows and columns covering
    /// the original image after subsampling the padded grid by `step`.
    pub fn cropped_ranges(&self, step: usize) -> ((usize, usize), (usize, usize)) {
        let range = |offset: usize, len: usize| (offset / step, len.div_ceil(step));
        (range(self.top, self.rows), range(self.left, self.cols))
    }
}

/// Symmetric (half-sample) reflection of an index into `[0, n)`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Mirror-pads `img` into the square grid described by `pad`.
pub fn mirror_pad(img: &Image, pad: &Padding) -> Result<Image> {
    if img.shape() != (pad.rows, pad.cols) {
        return Err(Error::Dimension(format!(
            "padding planned for {}x{}, got {}x{}",
            pad.rows, pad.cols, img.rows, img.cols
        )));
    }
    if pad.is_identity() {
        return Ok(img.clone());
    }
    Ok(Image::from_fn(pad.size, pad.size, |r, c| {
        let sr = reflect(r as isize - pad.top as isize, img.rows);
        let sc = reflect(c as isize - pad.left as isize, img.cols);
        img.get(sr, sc)
    }))
}

/// Extracts the `rows x cols` window starting at `(top, left)`.
pub fn crop(img: &Image, top: usize, left: usize, rows: usize, cols: usize) -> Result<Image> {
    if top + rows > img.rows || left + cols > img.cols {
        return Err(Error::Dimension(format!(
            "crop {rows}x{cols}+{top}+{left} exceeds {}x{}",
            img.rows, img.cols
        )));
    }
    Ok(Image::from_fn(rows, cols, |r, c| img.get(top + r, left + c)))
}
