//! Sampled planes and the discrete Fourier machinery shared by every module.
//!
//! Conventions fixed crate-wide:
//!
//! - arrays are row-major, `values[y * nx + x]`;
//! - `fft2`/`ifft2` are unitary (`1/sqrt(nx*ny)` in both directions);
//! - frequency bin `k` (signed, `-n/2 <= k < n/2`) sits at `k / (n * pitch)`
//!   cycles per meter;
//! - all convolutions and correlations are circular.
//!
//! A [`MagnitudeSpectrum`] records whether it is stored uncentered (DC at
//! index 0) or centered (DC at index `n/2`).

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

use crate::error::{self, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    pitch: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, pitch: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return error::config(format!("grid must be at least 2x2, got {nx}x{ny}"));
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return error::config(format!("grid pitch must be positive, got {pitch}"));
        }
        Ok(Self { nx, ny, pitch })
    }

    /// Square grid.
    pub fn square(n: usize, pitch: f64) -> Result<Self> {
        Self::new(n, n, pitch)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.nx + x
    }

    /// Index of a signed (possibly out-of-range) coordinate, wrapped periodically.
    #[inline]
    pub fn wrapped_index(&self, x: isize, y: isize) -> usize {
        let xi = x.rem_euclid(self.nx as isize) as usize;
        let yi = y.rem_euclid(self.ny as isize) as usize;
        yi * self.nx + xi
    }

    /// Frequency spacing along x, cycles per meter.
    pub fn df_x(&self) -> f64 {
        1.0 / (self.nx as f64 * self.pitch)
    }

    pub fn df_y(&self) -> f64 {
        1.0 / (self.ny as f64 * self.pitch)
    }

    /// Nyquist frequency, cycles per meter.
    pub fn nyquist(&self) -> f64 {
        0.5 / self.pitch
    }

    /// Spatial frequency (cycles/m) of the uncentered bin at `(kx, ky)`.
    pub fn frequency(&self, kx: usize, ky: usize) -> (f64, f64) {
        (
            signed_bin(kx, self.nx) as f64 * self.df_x(),
            signed_bin(ky, self.ny) as f64 * self.df_y(),
        )
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub(crate) fn check_same(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self.same_shape(other) && self.pitch == other.pitch {
            Ok(())
        } else {
            error::config(format!(
                "{what}: grid mismatch ({}x{} @ {} vs {}x{} @ {})",
                self.nx, self.ny, self.pitch, other.nx, other.ny, other.pitch
            ))
        }
    }
}

/// Signed frequency/lag of uncentered index `k` on an axis of length `n`.
#[inline]
pub fn signed_bin(k: usize, n: usize) -> isize {
    let k = k as isize;
    let n = n as isize;
    if k >= (n + 1) / 2 {
        k - n
    } else {
        k
    }
}

/// Array position of signed bin `k` in the centered layout.
#[inline]
pub fn centered_position(k: isize, n: usize) -> usize {
    (k + (n / 2) as isize).rem_euclid(n as isize) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    grid: Grid2D,
    values: Vec<f64>,
}

impl RealImage {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return error::data(format!(
                "image has {} values, grid needs {}",
                values.len(),
                grid.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return error::data(format!("non-finite value at index {i}"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for y in 0..grid.ny {
            for x in 0..grid.nx {
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    /// Unit impulse at `(x, y)`.
    pub fn impulse(grid: Grid2D, x: usize, y: usize) -> Self {
        let mut img = Self::zeros(grid);
        img.values[grid.index(x, y)] = 1.0;
        img
    }

    pub(crate) fn from_raw(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[self.grid.index(x, y)]
    }

    pub fn get_wrapped(&self, x: isize, y: isize) -> f64 {
        self.values[self.grid.wrapped_index(x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = self.grid.index(x, y);
        self.values[i] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|v| v * s).collect())
    }

    /// Circular translation: output(x, y) = self(x - dx, y - dy).
    pub fn shifted(&self, dx: isize, dy: isize) -> Self {
        let g = self.grid;
        Self::from_fn(g, |x, y| self.get_wrapped(x as isize - dx, y as isize - dy))
    }

    /// Point reflection about the origin: output(x, y) = self(-x, -y).
    pub fn point_reflected(&self) -> Self {
        let g = self.grid;
        Self::from_fn(g, |x, y| self.get_wrapped(-(x as isize), -(y as isize)))
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField {
            grid: self.grid,
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid2D,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid2D, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return error::data(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return error::data(format!("non-finite value at index {i}"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self { grid, values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub(crate) fn from_raw(grid: Grid2D, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn real_part(&self) -> RealImage {
        RealImage::from_raw(self.grid, self.values.iter().map(|c| c.re).collect())
    }

    pub fn magnitude(&self) -> MagnitudeSpectrum {
        MagnitudeSpectrum {
            grid: self.grid,
            values: self.values.iter().map(|c| c.norm()).collect(),
            centered: false,
        }
    }
}

/// Nonnegative Fourier magnitude on a grid, centered or not.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrum {
    grid: Grid2D,
    values: Vec<f64>,
    centered: bool,
}

impl MagnitudeSpectrum {
    pub fn new(grid: Grid2D, values: Vec<f64>, centered: bool) -> Result<Self> {
        if values.len() != grid.len() {
            return error::data(format!(
                "spectrum has {} values, grid needs {}",
                values.len(),
                grid.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return error::data(format!(
                "spectrum value {} at index {i} is negative or non-finite",
                values[i]
            ));
        }
        Ok(Self { grid, values, centered })
    }

    pub(crate) fn from_raw(grid: Grid2D, values: Vec<f64>, centered: bool) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values, centered }
    }

    /// Spectrum filled with `value` everywhere.
    pub fn constant(grid: Grid2D, value: f64, centered: bool) -> Self {
        Self { grid, values: vec![value; grid.len()], centered }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Value at signed frequency bin `(kx, ky)`, whatever the layout.
    pub fn at(&self, kx: isize, ky: isize) -> f64 {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let (x, y) = if self.centered {
            (centered_position(kx, nx), centered_position(ky, ny))
        } else {
            (kx.rem_euclid(nx as isize) as usize, ky.rem_euclid(ny as isize) as usize)
        };
        self.values[y * nx + x]
    }

    pub fn to_centered(&self) -> Self {
        if self.centered {
            return self.clone();
        }
        Self {
            grid: self.grid,
            values: shift_layout(&self.values, self.grid.nx, self.grid.ny, true),
            centered: true,
        }
    }

    pub fn to_uncentered(&self) -> Self {
        if !self.centered {
            return self.clone();
        }
        Self {
            grid: self.grid,
            values: shift_layout(&self.values, self.grid.nx, self.grid.ny, false),
            centered: false,
        }
    }

    /// Pointwise product; the result takes `self`'s layout.
    pub fn product(&self, other: &MagnitudeSpectrum) -> Result<Self> {
        self.grid.check_same(&other.grid, "spectrum product")?;
        let other = if other.centered == self.centered {
            other.clone()
        } else if self.centered {
            other.to_centered()
        } else {
            other.to_uncentered()
        };
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
            centered: self.centered,
        })
    }
}

/// fftshift (`to_centered = true`) or ifftshift of a row-major array.
pub fn shift_layout<T: Copy>(values: &[T], nx: usize, ny: usize, to_centered: bool) -> Vec<T> {
    let (sx, sy) = if to_centered {
        (nx / 2, ny / 2)
    } else {
        (nx - nx / 2, ny - ny / 2)
    };
    let mut out = values.to_vec();
    for y in 0..ny {
        let ty = (y + sy) % ny;
        for x in 0..nx {
            let tx = (x + sx) % nx;
            out[ty * nx + tx] = values[y * nx + x];
        }
    }
    out
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction))
}

/// Unitary 2-D transform of a row-major buffer in place.
pub(crate) fn fft2_in_place(buf: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), nx * ny);
    let direction = if inverse { FftDirection::Inverse } else { FftDirection::Forward };
    let row = plan(nx, direction);
    let col = plan(ny, direction);
    let mut scratch =
        vec![Complex64::new(0.0, 0.0); row.get_inplace_scratch_len().max(col.get_inplace_scratch_len())];
    row.process_with_scratch(buf, &mut scratch);
    let mut column = vec![Complex64::new(0.0, 0.0); ny];
    for x in 0..nx {
        for y in 0..ny {
            column[y] = buf[y * nx + x];
        }
        col.process_with_scratch(&mut column, &mut scratch);
        for y in 0..ny {
            buf[y * nx + x] = column[y];
        }
    }
    let norm = 1.0 / ((nx * ny) as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= norm;
    }
}

fn check_finite(field: &ComplexField) -> Result<()> {
    match field.values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
        Some(i) => error::data(format!("non-finite value at index {i}")),
        None => Ok(()),
    }
}

/// Unitary forward 2-D DFT.
pub fn fft2(field: &ComplexField) -> Result<ComplexField> {
    check_finite(field)?;
    let mut values = field.values.clone();
    fft2_in_place(&mut values, field.grid.nx, field.grid.ny, false);
    Ok(ComplexField::from_raw(field.grid, values))
}

/// Unitary inverse 2-D DFT.
pub fn ifft2(spectrum: &ComplexField) -> Result<ComplexField> {
    check_finite(spectrum)?;
    let mut values = spectrum.values.clone();
    fft2_in_place(&mut values, spectrum.grid.nx, spectrum.grid.ny, true);
    Ok(ComplexField::from_raw(spectrum.grid, values))
}

pub fn fft2_real(image: &RealImage) -> ComplexField {
    let mut values: Vec<Complex64> = image.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut values, image.grid.nx, image.grid.ny, false);
    ComplexField::from_raw(image.grid, values)
}

/// Circular convolution `(a * b)(r) = sum_s a(s) b(r - s)`.
pub fn circ_convolve(a: &RealImage, b: &RealImage) -> Result<RealImage> {
    a.grid.check_same(&b.grid, "circ_convolve")?;
    let (nx, ny) = (a.grid.nx, a.grid.ny);
    let fa = fft2_real(a);
    let fb = fft2_real(b);
    let scale = ((nx * ny) as f64).sqrt();
    let mut prod: Vec<Complex64> =
        fa.values.iter().zip(&fb.values).map(|(x, y)| x * y * scale).collect();
    fft2_in_place(&mut prod, nx, ny, true);
    Ok(RealImage::from_raw(a.grid, prod.into_iter().map(|c| c.re).collect()))
}

/// Circular cross-correlation `(a ⋆ b)(l) = sum_r a(r + l) b(r)`.
pub fn circ_correlate(a: &RealImage, b: &RealImage) -> Result<RealImage> {
    a.grid.check_same(&b.grid, "circ_correlate")?;
    let (nx, ny) = (a.grid.nx, a.grid.ny);
    let fa = fft2_real(a);
    let fb = fft2_real(b);
    let scale = ((nx * ny) as f64).sqrt();
    let mut prod: Vec<Complex64> =
        fa.values.iter().zip(&fb.values).map(|(x, y)| x * y.conj() * scale).collect();
    fft2_in_place(&mut prod, nx, ny, true);
    Ok(RealImage::from_raw(a.grid, prod.into_iter().map(|c| c.re).collect()))
}

/// Binary disk of the given pixel diameter, placed at the origin of an
/// uncentered grid.
///
/// Integer-rounded odd diameters are centered on a pixel, even ones on a
/// pixel corner, so a diameter of `d` spans exactly `round(d)` pixels along
/// each axis.
pub fn disk_mask(nx: usize, ny: usize, diameter_px: f64) -> Vec<bool> {
    let r2 = (diameter_px / 2.0).powi(2);
    let c = if (diameter_px.round() as i64) % 2 == 0 { 0.5 } else { 0.0 };
    let mut mask = vec![false; nx * ny];
    for y in 0..ny {
        let dy = signed_bin(y, ny) as f64 - c;
        for x in 0..nx {
            let dx = signed_bin(x, nx) as f64 - c;
            mask[y * nx + x] = dx * dx + dy * dy <= r2;
        }
    }
    mask
}

/// Normalized circular autocorrelation of a binary disk, centered layout.
///
/// Peak 1 at zero lag; the support is the disk of twice the diameter.
pub fn disk_autocorrelation(diameter_px: f64, grid: &Grid2D) -> Result<MagnitudeSpectrum> {
    let limit = grid.nx.min(grid.ny) as f64;
    if !(diameter_px > 0.0 && diameter_px <= limit) {
        return error::config(format!(
            "disk diameter {diameter_px} px must lie in (0, {limit}]"
        ));
    }
    let mask = disk_mask(grid.nx, grid.ny, diameter_px);
    let count = mask.iter().filter(|&&m| m).count() as f64;
    let counts = mask_autocorrelation_counts(&mask, grid.nx, grid.ny);
    let values: Vec<f64> = counts.iter().map(|c| c / count).collect();
    Ok(MagnitudeSpectrum::from_raw(*grid, shift_layout(&values, grid.nx, grid.ny, true), true))
}

/// Overlap counts `sum_p m(p + l) m(p)` at every circular lag, uncentered.
pub(crate) fn mask_autocorrelation_counts(mask: &[bool], nx: usize, ny: usize) -> Vec<f64> {
    let mut buf: Vec<Complex64> =
        mask.iter().map(|&m| Complex64::new(if m { 1.0 } else { 0.0 }, 0.0)).collect();
    fft2_in_place(&mut buf, nx, ny, false);
    for v in buf.iter_mut() {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    fft2_in_place(&mut buf, nx, ny, true);
    let scale = ((nx * ny) as f64).sqrt();
    // Overlap counts are integers; rounding removes the transform's roundoff.
    buf.iter().map(|c| (c.re * scale).round().max(0.0)).collect()
}

/// Radial bin (rounded distance from DC, in bins) of each position of a
/// spectrum laid out as `centered` says.
pub fn radial_bins(grid: &Grid2D, centered: bool) -> Vec<usize> {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        let ky = if centered { y as isize - (ny / 2) as isize } else { signed_bin(y, ny) };
        for x in 0..nx {
            let kx = if centered { x as isize - (nx / 2) as isize } else { signed_bin(x, nx) };
            out.push(((kx * kx + ky * ky) as f64).sqrt().round() as usize);
        }
    }
    out
}
