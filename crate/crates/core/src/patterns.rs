//! Preset source patterns `M_j` and their ensemble statistics.
//!
//! Patterns are never stored: pattern `j` is regenerated on demand from
//! `(seed, j)`, which keeps a `10^6`-pattern acquisition in bounded memory
//! and makes every consumer independent of evaluation order.

use rand::RngCore;
use rayon::prelude::*;

use crate::error::{self, Result};
use crate::grid::{fft2_in_place, Grid2D, RealImage};
use crate::rng::{self, Domain};
use num_complex::Complex64;

/// Patterns per work unit when sharding over `j`. Fixed so that partial sums
/// merge in the same order for any number of workers.
pub(crate) const SHARD: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnsembleKind {
    /// Independent Bernoulli pixels with the given probability of being on.
    RandomBinary { fill_fraction: f64 },
    /// Rows of the Sylvester-ordered 2-D Hadamard basis mapped to `{0, 1}`.
    Hadamard,
    /// Pattern `j` lights pixel `j` only (row-major raster scan).
    PixelScan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub grid: Grid2D,
    pub count: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn random_binary(grid: Grid2D, count: usize, fill_fraction: f64, seed: u64) -> Result<Self> {
        let spec = Self { kind: EnsembleKind::RandomBinary { fill_fraction }, grid, count, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn hadamard(grid: Grid2D, count: usize) -> Result<Self> {
        let spec = Self { kind: EnsembleKind::Hadamard, grid, count, seed: 0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn pixel_scan(grid: Grid2D) -> Result<Self> {
        let spec = Self { kind: EnsembleKind::PixelScan, grid, count: grid.len(), seed: 0 };
        spec.validate()?;
        Ok(spec)
    }

    /// The complete Hadamard basis, `nx * ny` patterns.
    pub fn hadamard_complete(grid: Grid2D) -> Result<Self> {
        Self::hadamard(grid, grid.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return error::usage("ensemble needs at least one pattern");
        }
        match self.kind {
            EnsembleKind::RandomBinary { fill_fraction } => {
                if !(fill_fraction > 0.0 && fill_fraction < 1.0) {
                    return error::config(format!(
                        "fill fraction must lie in (0, 1), got {fill_fraction}"
                    ));
                }
            }
            EnsembleKind::Hadamard => {
                if !self.grid.nx().is_power_of_two() || !self.grid.ny().is_power_of_two() {
                    return error::config(format!(
                        "hadamard ensemble needs a power-of-two pixel count, grid is {}x{}",
                        self.grid.nx(),
                        self.grid.ny()
                    ));
                }
                if self.count > self.grid.len() {
                    return error::config(format!(
                        "hadamard ensemble has only {} patterns, {} requested",
                        self.grid.len(),
                        self.count
                    ));
                }
            }
            EnsembleKind::PixelScan => {
                if self.count > self.grid.len() {
                    return error::config(format!(
                        "pixel scan has only {} patterns, {} requested",
                        self.grid.len(),
                        self.count
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub index: usize,
    nx: usize,
    ny: usize,
    values: Vec<u8>,
}

impl Pattern {
    /// Wraps explicit on/off states; any nonzero entry counts as on.
    pub fn from_bits(grid: Grid2D, bits: &[u8]) -> Self {
        assert_eq!(bits.len(), grid.len(), "pattern length does not match the grid");
        Self {
            index: 0,
            nx: grid.nx(),
            ny: grid.ny(),
            values: bits.iter().map(|&b| (b != 0) as u8).collect(),
        }
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn on_count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn to_image(&self, grid: Grid2D) -> Result<RealImage> {
        if grid.nx() != self.nx || grid.ny() != self.ny {
            return error::config("pattern does not match the requested grid");
        }
        RealImage::new(grid, self.values.iter().map(|&v| v as f64).collect())
    }
}

pub fn generate_pattern(spec: &EnsembleSpec, j: usize) -> Result<Pattern> {
    spec.validate()?;
    if j >= spec.count {
        return error::usage(format!("pattern index {j} out of range 0..{}", spec.count));
    }
    let mut values = vec![0u8; spec.grid.len()];
    fill_pattern(spec, j, &mut values);
    Ok(Pattern { index: j, nx: spec.grid.nx(), ny: spec.grid.ny(), values })
}

/// Writes pattern `j` into `out` without range checks.
pub(crate) fn fill_pattern(spec: &EnsembleSpec, j: usize, out: &mut [u8]) {
    match spec.kind {
        EnsembleKind::RandomBinary { fill_fraction } => {
            let threshold = (fill_fraction * 4_294_967_296.0) as u64;
            let mut rng = rng::stream(spec.seed, Domain::Pattern, j as u64);
            for v in out.iter_mut() {
                *v = ((rng.next_u32() as u64) < threshold) as u8;
            }
        }
        EnsembleKind::Hadamard => {
            let nx = spec.grid.nx();
            let (kx, ky) = (j % nx, j / nx);
            for (i, v) in out.iter_mut().enumerate() {
                let (x, y) = (i % nx, i / nx);
                let parity = ((kx & x).count_ones() + (ky & y).count_ones()) & 1;
                *v = (parity == 0) as u8;
            }
        }
        EnsembleKind::PixelScan => {
            out.fill(0);
            out[j] = 1;
        }
    }
}

/// Per-pixel count of "on" states over the whole ensemble.
pub fn ensemble_on_counts(spec: &EnsembleSpec) -> Result<Vec<u64>> {
    spec.validate()?;
    let n = spec.grid.len();
    let partials: Vec<Vec<u64>> = (0..spec.count)
        .collect::<Vec<_>>()
        .par_chunks(SHARD)
        .map(|js| {
            let mut counts = vec![0u64; n];
            let mut buf = vec![0u8; n];
            for &j in js {
                fill_pattern(spec, j, &mut buf);
                for (c, &b) in counts.iter_mut().zip(&buf) {
                    *c += b as u64;
                }
            }
            counts
        })
        .collect();
    let mut total = vec![0u64; n];
    for p in partials {
        for (t, c) in total.iter_mut().zip(p) {
            *t += c;
        }
    }
    Ok(total)
}

/// `(1/J) sum_j <dM_j(r) dM_j(r + lag)>_r` with `dM = M - ensemble mean`.
///
/// Lags wrap periodically. Every sum is an integer count, so the result does
/// not depend on evaluation order.
pub fn ensemble_autocorrelation(spec: &EnsembleSpec, lag: (isize, isize)) -> Result<f64> {
    spec.validate()?;
    let g = spec.grid;
    let (nx, ny) = (g.nx() as isize, g.ny() as isize);
    if lag.0.abs() >= nx || lag.1.abs() >= ny {
        return error::usage(format!("lag {lag:?} outside the {nx}x{ny} grid"));
    }
    let n = g.len();
    let partner: Vec<usize> = (0..n)
        .map(|i| {
            let (x, y) = ((i % g.nx()) as isize, (i / g.nx()) as isize);
            g.wrapped_index(x + lag.0, y + lag.1)
        })
        .collect();
    let partials: Vec<(u64, Vec<u64>)> = (0..spec.count)
        .collect::<Vec<_>>()
        .par_chunks(SHARD)
        .map(|js| {
            let mut pair = 0u64;
            let mut counts = vec![0u64; n];
            let mut buf = vec![0u8; n];
            for &j in js {
                fill_pattern(spec, j, &mut buf);
                for i in 0..n {
                    pair += (buf[i] & buf[partner[i]]) as u64;
                    counts[i] += buf[i] as u64;
                }
            }
            (pair, counts)
        })
        .collect();
    let mut pair = 0u64;
    let mut counts = vec![0u64; n];
    for (p, c) in partials {
        pair += p;
        for (t, v) in counts.iter_mut().zip(c) {
            *t += v;
        }
    }
    let j = spec.count as f64;
    let mean_product: f64 = (0..n)
        .map(|i| (counts[i] as f64 / j) * (counts[partner[i]] as f64 / j))
        .sum();
    Ok((pair as f64 / j - mean_product) / n as f64)
}

/// [`ensemble_autocorrelation`] at every lag at once, uncentered layout.
pub fn ensemble_autocorrelation_map(spec: &EnsembleSpec) -> Result<RealImage> {
    spec.validate()?;
    let g = spec.grid;
    let (nx, ny) = (g.nx(), g.ny());
    let n = g.len();
    let partials: Vec<(Vec<u64>, Vec<u64>)> = (0..spec.count)
        .collect::<Vec<_>>()
        .par_chunks(SHARD)
        .map(|js| {
            let mut pairs = vec![0u64; n];
            let mut counts = vec![0u64; n];
            let mut buf = vec![0u8; n];
            let mut spec_buf = vec![Complex64::new(0.0, 0.0); n];
            for &j in js {
                fill_pattern(spec, j, &mut buf);
                for (c, &b) in counts.iter_mut().zip(&buf) {
                    *c += b as u64;
                }
                let mask: Vec<bool> = buf.iter().map(|&b| b == 1).collect();
                for (s, &m) in spec_buf.iter_mut().zip(&mask) {
                    *s = Complex64::new(if m { 1.0 } else { 0.0 }, 0.0);
                }
                let overlaps = autocorrelation_counts(&mut spec_buf, nx, ny);
                for (p, o) in pairs.iter_mut().zip(overlaps) {
                    *p += o;
                }
            }
            (pairs, counts)
        })
        .collect();
    let mut pairs = vec![0u64; n];
    let mut counts = vec![0u64; n];
    for (p, c) in partials {
        for (t, v) in pairs.iter_mut().zip(p) {
            *t += v;
        }
        for (t, v) in counts.iter_mut().zip(c) {
            *t += v;
        }
    }
    let j = spec.count as f64;
    let mut mean: Vec<Complex64> =
        counts.iter().map(|&c| Complex64::new(c as f64 / j, 0.0)).collect();
    fft2_in_place(&mut mean, nx, ny, false);
    for v in mean.iter_mut() {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    fft2_in_place(&mut mean, nx, ny, true);
    let scale = (n as f64).sqrt();
    let values = pairs
        .iter()
        .zip(&mean)
        .map(|(&p, m)| (p as f64 / j - m.re * scale) / n as f64)
        .collect();
    Ok(RealImage::from_raw(g, values))
}

fn autocorrelation_counts(buf: &mut [Complex64], nx: usize, ny: usize) -> Vec<u64> {
    fft2_in_place(buf, nx, ny, false);
    for v in buf.iter_mut() {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    fft2_in_place(buf, nx, ny, true);
    let scale = ((nx * ny) as f64).sqrt();
    buf.iter().map(|c| (c.re * scale).round().max(0.0) as u64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid2D {
        Grid2D::square(n, 7.4e-6).unwrap()
    }

    #[test]
    fn random_binary_fill_is_near_half() {
        let spec = EnsembleSpec::random_binary(grid(64), 100, 0.5, 11).unwrap();
        for j in [0, 1, 57, 99] {
            let p = generate_pattern(&spec, j).unwrap();
            let mean = p.on_count() as f64 / 4096.0;
            assert!((mean - 0.5).abs() < 5.0 / 64.0, "j={j} mean {mean}");
            assert!(p.values().iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn generation_is_order_and_thread_independent() {
        let spec = EnsembleSpec::random_binary(grid(32), 64, 0.3, 5).unwrap();
        let serial: Vec<Pattern> = (0..64).rev().map(|j| generate_pattern(&spec, j).unwrap()).collect();
        let parallel: Vec<Pattern> =
            (0..64).into_par_iter().map(|j| generate_pattern(&spec, j).unwrap()).collect();
        for p in &parallel {
            assert_eq!(*p, serial[63 - p.index]);
        }
        let other = EnsembleSpec::random_binary(grid(32), 64, 0.3, 6).unwrap();
        assert_ne!(generate_pattern(&other, 0).unwrap(), parallel[0]);
    }

    #[test]
    fn hadamard_first_pattern_is_all_ones() {
        let spec = EnsembleSpec::hadamard_complete(grid(16)).unwrap();
        assert_eq!(generate_pattern(&spec, 0).unwrap().on_count(), 256);
        for j in 1..256 {
            assert_eq!(generate_pattern(&spec, j).unwrap().on_count(), 128);
        }
    }

    #[test]
    fn pixel_scan_lights_one_pixel() {
        let spec = EnsembleSpec::pixel_scan(grid(8)).unwrap();
        assert_eq!(spec.count, 64);
        for j in [0, 9, 63] {
            let p = generate_pattern(&spec, j).unwrap();
            assert_eq!(p.on_count(), 1);
            assert_eq!(p.values()[j], 1);
        }
    }

    #[test]
    fn validation() {
        let g = grid(16);
        assert!(EnsembleSpec::random_binary(g, 0, 0.5, 1).is_err());
        assert!(EnsembleSpec::random_binary(g, 4, 1.0, 1).is_err());
        assert!(EnsembleSpec::random_binary(g, 4, 0.0, 1).is_err());
        assert!(EnsembleSpec::hadamard(g, 257).is_err());
        assert!(EnsembleSpec::hadamard(Grid2D::square(12, 1.0).unwrap(), 4).is_err());
        let spec = EnsembleSpec::random_binary(g, 4, 0.5, 1).unwrap();
        assert!(matches!(generate_pattern(&spec, 4), Err(crate::Error::Usage(_))));
        assert!(ensemble_autocorrelation(&spec, (16, 0)).is_err());
    }

    #[test]
    fn lag_zero_is_bernoulli_variance() {
        let j = 4096;
        let spec = EnsembleSpec::random_binary(grid(64), j, 0.5, 3).unwrap();
        let v = ensemble_autocorrelation(&spec, (0, 0)).unwrap();
        let tol = 3.0 / ((j * 4096) as f64).sqrt();
        assert!((v - 0.25).abs() < tol, "{v}");
        let off = ensemble_autocorrelation(&spec, (1, 0)).unwrap();
        assert!(off.abs() < 0.25 * 4.0 / ((j * 4096) as f64).sqrt(), "{off}");
    }

    #[test]
    fn hadamard_off_peak_is_exactly_zero() {
        let spec = EnsembleSpec::hadamard_complete(grid(16)).unwrap();
        for lag in [(1, 0), (0, 1), (3, -2), (-7, 5), (8, 8)] {
            assert_eq!(ensemble_autocorrelation(&spec, lag).unwrap(), 0.0, "{lag:?}");
        }
        let map = ensemble_autocorrelation_map(&spec).unwrap();
        assert!(map.values()[1..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn hadamard_fluctuations_are_diagonal() {
        // sum_j dM_j(r) dM_j(r') over the complete basis vanishes off the diagonal.
        let g = grid(8);
        let spec = EnsembleSpec::hadamard_complete(g).unwrap();
        let pats: Vec<Pattern> = (0..64).map(|j| generate_pattern(&spec, j).unwrap()).collect();
        let mean: Vec<f64> =
            (0..64).map(|i| pats.iter().map(|p| p.values()[i] as f64).sum::<f64>() / 64.0).collect();
        for a in 0..64 {
            for b in 0..64 {
                let s: f64 = pats
                    .iter()
                    .map(|p| (p.values()[a] as f64 - mean[a]) * (p.values()[b] as f64 - mean[b]))
                    .sum();
                if a != b {
                    assert_eq!(s, 0.0, "({a},{b})");
                }
            }
        }
    }

    #[test]
    fn map_agrees_with_single_lag() {
        let spec = EnsembleSpec::random_binary(grid(16), 300, 0.4, 8).unwrap();
        let map = ensemble_autocorrelation_map(&spec).unwrap();
        for lag in [(0isize, 0isize), (1, 0), (0, 1), (-2, 3), (5, -5)] {
            let direct = ensemble_autocorrelation(&spec, lag).unwrap();
            assert!((map.get_wrapped(lag.0, lag.1) - direct).abs() < 1e-14, "{lag:?}");
        }
    }
}
