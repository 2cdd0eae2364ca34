//! Fourier phase retrieval with error reduction (ER) and hybrid input-output
//! (HIO) iterations under support and nonnegativity constraints.
//!
//! Iterates live in the object domain as real images. Spectra are handled in
//! the uncentered layout internally; targets may arrive in either layout.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{self, Result};
use crate::grid::{fft2_in_place, signed_bin, ComplexField, Grid2D, MagnitudeSpectrum, RealImage};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct SupportMask {
    grid: Grid2D,
    mask: Vec<bool>,
}

impl SupportMask {
    /// Arbitrary mask. It must be non-empty and lie inside the central half
    /// of the grid.
    pub fn new(grid: Grid2D, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.len() {
            return error::data(format!("support has {} pixels, grid needs {}", mask.len(), grid.len()));
        }
        let s = Self { grid, mask };
        if s.count() == 0 {
            return error::numerical("support mask is empty");
        }
        let (x0, x1) = (grid.nx() / 4, grid.nx() - grid.nx() / 4);
        let (y0, y1) = (grid.ny() / 4, grid.ny() - grid.ny() / 4);
        for y in 0..grid.ny() {
            for x in 0..grid.nx() {
                if s.mask[grid.index(x, y)] && !((x0..x1).contains(&x) && (y0..y1).contains(&y)) {
                    return error::config(format!("support pixel ({x},{y}) lies outside the central half"));
                }
            }
        }
        Ok(s)
    }

    /// Every pixel allowed. This lifts the central-half rule and turns the
    /// support constraint off.
    pub fn full(grid: Grid2D) -> Self {
        Self { grid, mask: vec![true; grid.len()] }
    }

    /// A `w x h` box centered on the grid, clamped to the central half.
    pub fn centered_box(grid: Grid2D, w: usize, h: usize) -> Result<Self> {
        let w = w.clamp(1, grid.nx() / 2);
        let h = h.clamp(1, grid.ny() / 2);
        let x0 = grid.nx() / 2 - w / 2;
        let y0 = grid.ny() / 2 - h / 2;
        let mut mask = vec![false; grid.len()];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                mask[grid.index(x, y)] = true;
            }
        }
        Self::new(grid, mask)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `(width, height)` of the bounding box of the true pixels.
    pub fn extent(&self) -> (usize, usize) {
        let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
        for y in 0..self.grid.ny() {
            for x in 0..self.grid.nx() {
                if self.mask[self.grid.index(x, y)] {
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == usize::MAX {
            (0, 0)
        } else {
            (x1 - x0 + 1, y1 - y0 + 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    Er,
    Hio { beta: f64 },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Er => "ER",
            Algorithm::Hio { .. } => "HIO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub algorithm: Algorithm,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSchedule {
    pub blocks: Vec<Block>,
    pub restarts: usize,
    pub seed: u64,
    /// Frequency bins closer than this to DC are left unconstrained.
    pub free_dc_radius: f64,
    pub nonnegative: bool,
}

impl RetrievalSchedule {
    /// `cycles` x (HIO `hio_iters`, ER `er_iters`) followed by ER `final_er`.
    pub fn alternating(cycles: usize, hio_iters: usize, beta: f64, er_iters: usize, final_er: usize) -> Vec<Block> {
        let mut blocks = Vec::with_capacity(2 * cycles + 1);
        for _ in 0..cycles {
            blocks.push(Block { algorithm: Algorithm::Hio { beta }, iterations: hio_iters });
            blocks.push(Block { algorithm: Algorithm::Er, iterations: er_iters });
        }
        if final_er > 0 {
            blocks.push(Block { algorithm: Algorithm::Er, iterations: final_er });
        }
        blocks
    }

    pub fn total_iterations(&self) -> usize {
        self.blocks.iter().map(|b| b.iterations).sum()
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions { free_dc_radius: self.free_dc_radius, nonnegative: self.nonnegative }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return error::config("retrieval schedule has no blocks");
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.iterations < 1 {
                return error::config(format!("block {i} has no iterations"));
            }
            if let Algorithm::Hio { beta } = b.algorithm {
                if !(beta > 0.0 && beta <= 1.0) {
                    return error::config(format!("block {i}: beta must lie in (0, 1], got {beta}"));
                }
            }
        }
        if self.restarts < 1 {
            return error::config("at least one restart is required");
        }
        if !(self.free_dc_radius.is_finite() && self.free_dc_radius >= 0.0) {
            return error::config(format!("free_dc_radius must be >= 0, got {}", self.free_dc_radius));
        }
        Ok(())
    }
}

impl Default for RetrievalSchedule {
    fn default() -> Self {
        Self {
            blocks: Self::alternating(20, 40, 0.9, 10, 100),
            restarts: 16,
            seed: 0,
            free_dc_radius: 1.0,
            nonnegative: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub free_dc_radius: f64,
    pub nonnegative: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { free_dc_radius: 1.0, nonnegative: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub image: RealImage,
    pub fourier_error: f64,
    pub restart_id: usize,
    pub iterations_run: usize,
}

/// Fourier error after one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub block: usize,
    pub algorithm: Algorithm,
    pub fourier_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartResult {
    pub reconstruction: Reconstruction,
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOutcome {
    pub best: Reconstruction,
    /// One entry per restart, in restart order.
    pub restarts: Vec<RestartResult>,
}

/// Uncentered target magnitude with the free-bin mask and its norm.
struct Projector {
    grid: Grid2D,
    target: Vec<f64>,
    free: Vec<bool>,
    norm2: f64,
}

impl Projector {
    fn new(target: &MagnitudeSpectrum, free_dc_radius: f64) -> Result<Self> {
        let grid = *target.grid();
        let t = target.to_uncentered();
        if let Some(i) = t.values().iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return error::data(format!("target magnitude {} at bin {i} is negative or non-finite", t.values()[i]));
        }
        let free = free_bins(&grid, free_dc_radius);
        let norm2: f64 = t.values().iter().zip(&free).filter(|(_, &f)| !f).map(|(v, _)| v * v).sum();
        Ok(Self { grid, target: t.values().to_vec(), free, norm2 })
    }

    /// Replaces the spectrum magnitude at constrained bins, in place, and
    /// returns the squared distance moved in the Fourier domain.
    fn project_spectrum(&self, spec: &mut [Complex64]) -> f64 {
        let mut dist = 0.0;
        for ((g, &t), &f) in spec.iter_mut().zip(&self.target).zip(&self.free) {
            if f {
                continue;
            }
            let m = g.norm();
            dist += (m - t) * (m - t);
            *g = if m > 0.0 { *g * (t / m) } else { Complex64::new(t, 0.0) };
        }
        dist
    }

    fn error_from_distance(&self, dist: f64) -> Result<f64> {
        if self.norm2 <= 0.0 {
            return error::numerical("target has no energy at constrained bins");
        }
        Ok((dist / self.norm2).sqrt())
    }

    /// `P_M` applied to a real iterate. Returns the projected field and the
    /// Fourier error of the input.
    fn project_real(&self, g: &[f64], buf: &mut Vec<Complex64>) -> f64 {
        buf.clear();
        buf.extend(g.iter().map(|&v| Complex64::new(v, 0.0)));
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        fft2_in_place(buf, nx, ny, false);
        let dist = self.project_spectrum(buf);
        fft2_in_place(buf, nx, ny, true);
        dist
    }

    fn fourier_distance(&self, g: &[f64], buf: &mut Vec<Complex64>) -> f64 {
        buf.clear();
        buf.extend(g.iter().map(|&v| Complex64::new(v, 0.0)));
        fft2_in_place(buf, self.grid.nx(), self.grid.ny(), false);
        buf.iter()
            .zip(&self.target)
            .zip(&self.free)
            .filter(|(_, &f)| !f)
            .map(|((c, &t), _)| (c.norm() - t).powi(2))
            .sum()
    }
}

fn free_bins(grid: &Grid2D, radius: f64) -> Vec<bool> {
    let r2 = radius * radius;
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut out = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        let ky = signed_bin(y, ny) as f64;
        for x in 0..nx {
            let kx = signed_bin(x, nx) as f64;
            out.push(kx * kx + ky * ky < r2);
        }
    }
    out
}

/// Keeps the phase of `iterate`'s spectrum and imposes `target` at every bin
/// outside the free DC disk. Bins with zero magnitude take zero phase.
pub fn project_magnitude(iterate: &ComplexField, target: &MagnitudeSpectrum, free_dc_radius: f64) -> Result<ComplexField> {
    iterate.grid().check_same(target.grid(), "project_magnitude")?;
    let p = Projector::new(target, free_dc_radius)?;
    let mut buf = iterate.values().to_vec();
    let (nx, ny) = (p.grid.nx(), p.grid.ny());
    fft2_in_place(&mut buf, nx, ny, false);
    p.project_spectrum(&mut buf);
    fft2_in_place(&mut buf, nx, ny, true);
    ComplexField::new(p.grid, buf)
}

/// `E_F = sqrt(sum (|G̃| - T)² / sum T²)` over constrained bins.
pub fn fourier_error(image: &RealImage, target: &MagnitudeSpectrum, free_dc_radius: f64) -> Result<f64> {
    image.grid().check_same(target.grid(), "fourier_error")?;
    let p = Projector::new(target, free_dc_radius)?;
    let mut buf = Vec::new();
    let d = p.fourier_distance(image.values(), &mut buf);
    p.error_from_distance(d)
}

fn apply_er(projected: &[Complex64], support: &[bool], nonnegative: bool, out: &mut [f64]) {
    for ((o, p), &s) in out.iter_mut().zip(projected).zip(support) {
        *o = if !s {
            0.0
        } else if nonnegative {
            p.re.max(0.0)
        } else {
            p.re
        };
    }
}

fn apply_hio(projected: &[Complex64], support: &[bool], nonnegative: bool, beta: f64, g: &mut [f64]) {
    for ((v, p), &s) in g.iter_mut().zip(projected).zip(support) {
        let ok = s && (!nonnegative || p.re >= 0.0);
        *v = if ok { p.re } else { *v - beta * p.re };
    }
}

/// Object-domain constraint: zero outside the support, and clamp negatives
/// when `nonnegative`.
pub fn constrain(image: &RealImage, support: &SupportMask, nonnegative: bool) -> Result<RealImage> {
    image.grid().check_same(support.grid(), "constrain")?;
    let values = image
        .values()
        .iter()
        .zip(&support.mask)
        .map(|(&v, &s)| if !s { 0.0 } else if nonnegative { v.max(0.0) } else { v })
        .collect();
    RealImage::new(*image.grid(), values)
}

pub fn er_step(
    iterate: &RealImage,
    target: &MagnitudeSpectrum,
    support: &SupportMask,
    opts: &StepOptions,
) -> Result<RealImage> {
    iterate.grid().check_same(target.grid(), "er_step")?;
    iterate.grid().check_same(support.grid(), "er_step")?;
    let p = Projector::new(target, opts.free_dc_radius)?;
    let mut buf = Vec::new();
    p.project_real(iterate.values(), &mut buf);
    let mut out = vec![0.0; iterate.grid().len()];
    apply_er(&buf, &support.mask, opts.nonnegative, &mut out);
    RealImage::new(*iterate.grid(), out)
}

pub fn hio_step(
    iterate: &RealImage,
    target: &MagnitudeSpectrum,
    support: &SupportMask,
    beta: f64,
    opts: &StepOptions,
) -> Result<RealImage> {
    if !(0.0..=1.0).contains(&beta) {
        return error::config(format!("beta must lie in [0, 1], got {beta}"));
    }
    iterate.grid().check_same(target.grid(), "hio_step")?;
    iterate.grid().check_same(support.grid(), "hio_step")?;
    let p = Projector::new(target, opts.free_dc_radius)?;
    let mut buf = Vec::new();
    p.project_real(iterate.values(), &mut buf);
    let mut g = iterate.values().to_vec();
    apply_hio(&buf, &support.mask, opts.nonnegative, beta, &mut g);
    RealImage::new(*iterate.grid(), g)
}

/// Target magnitude with uniform random phases from restart stream
/// `restart`, inverse-transformed; the real part is the starting iterate.
pub fn initial_iterate(target: &MagnitudeSpectrum, seed: u64, restart: usize) -> RealImage {
    let g = *target.grid();
    let t = target.to_uncentered();
    let mut rng = rng::stream(seed, Domain::Restart, restart as u64);
    let mut buf: Vec<Complex64> =
        t.values().iter().map(|&m| Complex64::from_polar(m, 2.0 * PI * rng.random::<f64>())).collect();
    fft2_in_place(&mut buf, g.nx(), g.ny(), true);
    RealImage::new(g, buf.iter().map(|c| c.re).collect()).expect("finite initial iterate")
}

/// Autocorrelation-box support estimate.
///
/// The autocorrelation is the inverse transform of the squared magnitude
/// with the free DC bins zeroed, which strips the constant floor a strong DC
/// term would add. Its bounding box above `threshold_fraction * peak` is
/// halved per dimension, widened by `margin` pixels in total and centered.
pub fn estimate_support(
    spectrum: &MagnitudeSpectrum,
    threshold_fraction: f64,
    margin: usize,
    free_dc_radius: f64,
) -> Result<SupportMask> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return error::config(format!("threshold fraction must lie in (0, 1), got {threshold_fraction}"));
    }
    let g = *spectrum.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let s = spectrum.to_uncentered();
    let free = free_bins(&g, free_dc_radius);
    let mut buf: Vec<Complex64> = s
        .values()
        .iter()
        .zip(&free)
        .map(|(&v, &f)| Complex64::new(if f { 0.0 } else { v * v }, 0.0))
        .collect();
    fft2_in_place(&mut buf, nx, ny, true);
    let peak = buf.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return error::numerical("spectrum has no energy outside the free DC bins");
    }
    let thr = threshold_fraction * peak;
    let (mut lx0, mut lx1, mut ly0, mut ly1) = (isize::MAX, isize::MIN, isize::MAX, isize::MIN);
    for y in 0..ny {
        for x in 0..nx {
            if buf[y * nx + x].re >= thr {
                let (lx, ly) = (signed_bin(x, nx), signed_bin(y, ny));
                lx0 = lx0.min(lx);
                lx1 = lx1.max(lx);
                ly0 = ly0.min(ly);
                ly1 = ly1.max(ly);
            }
        }
    }
    if lx0 > lx1 {
        return error::numerical("thresholded autocorrelation is empty");
    }
    let half = |a: isize, b: isize| ((b - a + 2) / 2) as usize;
    SupportMask::centered_box(g, half(lx0, lx1) + margin, half(ly0, ly1) + margin)
}

/// Runs the whole schedule from one restart's random start.
pub fn run_restart(
    target: &MagnitudeSpectrum,
    schedule: &RetrievalSchedule,
    support: &SupportMask,
    restart_id: usize,
) -> Result<RestartResult> {
    schedule.validate()?;
    target.grid().check_same(support.grid(), "retrieval")?;
    let p = Projector::new(target, schedule.free_dc_radius)?;
    let mut g = initial_iterate(target, schedule.seed, restart_id).into_values();
    let mut buf = Vec::with_capacity(g.len());
    let mut trace = Vec::with_capacity(schedule.total_iterations());
    let mut iteration = 0usize;
    for (bi, block) in schedule.blocks.iter().enumerate() {
        for _ in 0..block.iterations {
            let dist = p.project_real(&g, &mut buf);
            if let Some(last) = trace.last_mut() {
                let last: &mut TracePoint = last;
                last.fourier_error = p.error_from_distance(dist)?;
            }
            match block.algorithm {
                Algorithm::Er => apply_er(&buf, &support.mask, schedule.nonnegative, &mut g),
                Algorithm::Hio { beta } => apply_hio(&buf, &support.mask, schedule.nonnegative, beta, &mut g),
            }
            trace.push(TracePoint { iteration, block: bi, algorithm: block.algorithm, fourier_error: f64::NAN });
            iteration += 1;
        }
    }
    let last_dist = p.fourier_distance(&g, &mut buf);
    if let Some(last) = trace.last_mut() {
        last.fourier_error = p.error_from_distance(last_dist)?;
    }
    let image = constrain(&RealImage::new(p.grid, g)?, support, schedule.nonnegative)?;
    let fourier_error = p.error_from_distance(p.fourier_distance(image.values(), &mut buf))?;
    if !fourier_error.is_finite() {
        return error::numerical(format!("restart {restart_id} diverged"));
    }
    Ok(RestartResult {
        reconstruction: Reconstruction { image, fourier_error, restart_id, iterations_run: iteration },
        trace,
    })
}

/// All restarts in parallel; the winner has the lowest final Fourier error,
/// ties going to the lower restart id.
pub fn run(target: &MagnitudeSpectrum, schedule: &RetrievalSchedule, support: &SupportMask) -> Result<RetrievalOutcome> {
    schedule.validate()?;
    let restarts: Vec<RestartResult> = (0..schedule.restarts)
        .into_par_iter()
        .map(|r| run_restart(target, schedule, support, r))
        .collect::<Result<_>>()?;
    let best = restarts
        .iter()
        .map(|r| &r.reconstruction)
        .min_by(|a, b| a.fourier_error.total_cmp(&b.fourier_error).then(a.restart_id.cmp(&b.restart_id)))
        .expect("at least one restart")
        .clone();
    Ok(RetrievalOutcome { best, restarts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fft2_real;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid2D {
        Grid2D::square(32, 1.0).unwrap()
    }

    fn magnitude(img: &RealImage) -> MagnitudeSpectrum {
        fft2_real(img).magnitude().to_centered()
    }

    fn blob(g: Grid2D) -> RealImage {
        RealImage::from_fn(g, |x, y| if (12..18).contains(&x) && (13..17).contains(&y) { 1.0 + (x % 3) as f64 } else { 0.0 })
    }

    #[test]
    fn projection_fixed_point_and_zero_iterate() {
        let g = grid();
        let o = blob(g);
        let t = magnitude(&o);
        let out = project_magnitude(&o.to_complex(), &t, 1.0).unwrap();
        for (a, b) in out.values().iter().zip(o.values()) {
            assert!((a.re - b).abs() < 1e-10 && a.im.abs() < 1e-10);
        }
        let z = project_magnitude(&ComplexField::zeros(g), &t, 1.0).unwrap();
        let spec = crate::grid::fft2(&z).unwrap();
        let tu = t.to_uncentered();
        for (i, (c, m)) in spec.values().iter().zip(tu.values()).enumerate() {
            if i == 0 {
                assert!(c.norm() < 1e-12);
            } else {
                assert!((c.re - m).abs() < 1e-10 && c.im.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn projection_sets_constrained_bins_only() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let it = ComplexField::new(
            g,
            (0..g.len()).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect(),
        )
        .unwrap();
        let t = MagnitudeSpectrum::new(g, (0..g.len()).map(|_| rng.random::<f64>()).collect(), true).unwrap();
        let before = crate::grid::fft2(&it).unwrap();
        let after = crate::grid::fft2(&project_magnitude(&it, &t, 2.0).unwrap()).unwrap();
        let tu = t.to_uncentered();
        let free = free_bins(&g, 2.0);
        assert_eq!(free.iter().filter(|&&f| f).count(), 9);
        for i in 0..g.len() {
            if free[i] {
                assert!((after.values()[i] - before.values()[i]).norm() < 1e-12);
            } else {
                assert!((after.values()[i].norm() - tu.values()[i]).abs() <= 1e-10 * tu.values()[i].max(1.0));
            }
        }
    }

    #[test]
    fn negative_target_rejected() {
        let g = grid();
        let bad = MagnitudeSpectrum::from_raw(g, vec![-1.0; g.len()], true);
        assert!(matches!(project_magnitude(&ComplexField::zeros(g), &bad, 1.0), Err(crate::Error::Data(_))));
    }

    #[test]
    fn er_fixed_point_at_truth() {
        let g = grid();
        let o = blob(g);
        let t = magnitude(&o);
        let s = SupportMask::centered_box(g, 6, 4).unwrap();
        // blob occupies x 12..18, y 13..17; the centered 6x4 box is x 13..19, y 14..18.
        let o = o.shifted(1, 1);
        let out = er_step(&o, &t, &s, &StepOptions::default()).unwrap();
        for (a, b) in out.values().iter().zip(o.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn hio_beta_zero_and_feasible_case() {
        let g = grid();
        let o = blob(g).shifted(1, 1);
        let t = magnitude(&o);
        let s = SupportMask::centered_box(g, 6, 4).unwrap();
        let opts = StepOptions::default();
        let out = hio_step(&o, &t, &s, 0.9, &opts).unwrap();
        let er = er_step(&o, &t, &s, &opts).unwrap();
        for (a, b) in out.values().iter().zip(er.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let start = RealImage::from_fn(g, |_, _| rng.random::<f64>() - 0.5);
        let h = hio_step(&start, &t, &s, 0.0, &opts).unwrap();
        let p = project_magnitude(&start.to_complex(), &t, 1.0).unwrap();
        for i in 0..g.len() {
            let inside = s.mask()[i];
            let pr = p.values()[i].re;
            if inside && pr >= 0.0 {
                assert!((h.values()[i] - pr).abs() < 1e-12);
            } else {
                assert_eq!(h.values()[i], start.values()[i]);
            }
        }
        assert!(hio_step(&start, &t, &s, 1.5, &opts).is_err());
    }

    #[test]
    fn support_estimates() {
        let g = Grid2D::square(64, 1.0).unwrap();
        let flat = MagnitudeSpectrum::constant(g, 1.0, true);
        let s = estimate_support(&flat, 0.04, 2, 1.0).unwrap();
        assert_eq!(s.extent(), (3, 3));
        let rect = RealImage::from_fn(g, |x, y| if (20..40).contains(&x) && (28..38).contains(&y) { 1.0 } else { 0.0 });
        let t = magnitude(&rect);
        let loose = estimate_support(&t, 0.04, 2, 1.0).unwrap();
        let (w, h) = loose.extent();
        assert!(w.abs_diff(20) <= 2 && h.abs_diff(10) <= 2, "{w}x{h}");
        let tight = estimate_support(&t, 0.9, 2, 1.0).unwrap();
        assert!(tight.count() < loose.count());
        assert!(estimate_support(&t, 1.0, 2, 1.0).is_err());
    }

    #[test]
    fn support_mask_rules() {
        let g = Grid2D::square(16, 1.0).unwrap();
        assert!(SupportMask::new(g, vec![false; 256]).is_err());
        let mut m = vec![false; 256];
        m[0] = true;
        assert!(SupportMask::new(g, m).is_err());
        let b = SupportMask::centered_box(g, 100, 3).unwrap();
        assert_eq!(b.extent(), (8, 3));
    }

    #[test]
    fn single_er_iteration_matches_er_step() {
        let g = grid();
        let t = magnitude(&blob(g));
        let s = SupportMask::centered_box(g, 8, 8).unwrap();
        let sched = RetrievalSchedule {
            blocks: vec![Block { algorithm: Algorithm::Er, iterations: 1 }],
            restarts: 1,
            seed: 4,
            ..Default::default()
        };
        let r = run(&t, &sched, &s).unwrap();
        let manual = er_step(&initial_iterate(&t, 4, 0), &t, &s, &sched.step_options()).unwrap();
        assert_eq!(r.best.image, manual);
        assert_eq!(r.best.iterations_run, 1);
        let ef = fourier_error(&manual, &t, 1.0).unwrap();
        assert_eq!(r.best.fourier_error, ef);
        assert_eq!(r.restarts[0].trace[0].fourier_error, ef);
    }

    #[test]
    fn more_restarts_never_worse_and_deterministic() {
        let g = grid();
        let t = magnitude(&blob(g));
        let s = estimate_support(&t, 0.04, 2, 1.0).unwrap();
        let mut sched = RetrievalSchedule {
            blocks: RetrievalSchedule::alternating(3, 20, 0.9, 5, 20),
            restarts: 1,
            seed: 11,
            ..Default::default()
        };
        let one = run(&t, &sched, &s).unwrap();
        sched.restarts = 6;
        let many = run(&t, &sched, &s).unwrap();
        assert!(many.best.fourier_error <= one.best.fourier_error);
        assert_eq!(many.restarts[0].reconstruction, one.best);
        let again = run(&t, &sched, &s).unwrap();
        assert_eq!(again, many);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| run(&t, &sched, &s)).unwrap();
        assert_eq!(serial, many);
    }

    #[test]
    fn er_trace_is_monotone() {
        let g = grid();
        let t = magnitude(&blob(g));
        let s = SupportMask::centered_box(g, 10, 8).unwrap();
        let sched = RetrievalSchedule {
            blocks: RetrievalSchedule::alternating(2, 10, 0.9, 15, 30),
            restarts: 3,
            seed: 1,
            ..Default::default()
        };
        for r in run(&t, &sched, &s).unwrap().restarts {
            for w in r.trace.windows(2) {
                if w[0].block == w[1].block && w[1].algorithm == Algorithm::Er {
                    assert!(w[1].fourier_error <= w[0].fourier_error + 1e-12);
                }
            }
        }
    }

    #[test]
    fn schedule_validation() {
        let mut s = RetrievalSchedule::default();
        assert_eq!(s.total_iterations(), 1100);
        s.validate().unwrap();
        s.restarts = 0;
        assert!(s.validate().is_err());
        let s = RetrievalSchedule { blocks: vec![Block { algorithm: Algorithm::Hio { beta: 0.0 }, iterations: 1 }], ..Default::default() };
        assert!(s.validate().is_err());
        let s = RetrievalSchedule { blocks: vec![Block { algorithm: Algorithm::Er, iterations: 0 }], ..Default::default() };
        assert!(s.validate().is_err());
    }
}
