//! Pattern-bucket correlation, its Fourier magnitude, and the system filter.

use rayon::prelude::*;

use crate::error::{self, Result};
use crate::forward::{Case, MeasurementSet, OpticalConfig};
use crate::grid::{self, disk_autocorrelation, Grid2D, MagnitudeSpectrum, RealImage};
use crate::patterns::{fill_pattern, SHARD};

/// `C(ρ) = (1/J) sum_j (B_j - B̄)(M_j(ρ) - M̄(ρ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationImage {
    pub image: RealImage,
    pub count_used: usize,
}

impl CorrelationImage {
    pub fn grid(&self) -> &Grid2D {
        self.image.grid()
    }
}

fn check_measurements(m: &MeasurementSet) -> Result<()> {
    if m.ensemble.count < 2 || m.buckets.len() < 2 {
        return error::usage(format!("correlation needs at least 2 patterns, got {}", m.buckets.len()));
    }
    m.validate()
}

/// Streaming fluctuation correlation.
///
/// Patterns are regenerated shard by shard; each shard keeps one
/// weighted-sum image and one on-count image, and shards are merged in index
/// order, so the result is the same for any number of workers.
pub fn correlate(m: &MeasurementSet) -> Result<CorrelationImage> {
    check_measurements(m)?;
    let spec = &m.ensemble;
    let n = spec.grid.len();
    let j_total = m.buckets.len();
    let mean_b = m.buckets.iter().sum::<f64>() / j_total as f64;

    let shards: Vec<(Vec<f64>, Vec<u64>, f64)> = m
        .buckets
        .par_chunks(SHARD)
        .enumerate()
        .map(|(s, chunk)| {
            let mut weighted = vec![0.0f64; n];
            let mut counts = vec![0u64; n];
            let mut dsum = 0.0;
            let mut buf = vec![0u8; n];
            for (k, &b) in chunk.iter().enumerate() {
                fill_pattern(spec, s * SHARD + k, &mut buf);
                let d = b - mean_b;
                dsum += d;
                for ((w, c), &bit) in weighted.iter_mut().zip(counts.iter_mut()).zip(&buf) {
                    if bit != 0 {
                        *w += d;
                        *c += 1;
                    }
                }
            }
            (weighted, counts, dsum)
        })
        .collect();

    let mut weighted = vec![0.0f64; n];
    let mut counts = vec![0u64; n];
    let mut dsum = 0.0;
    for (w, c, d) in shards {
        for (a, b) in weighted.iter_mut().zip(w) {
            *a += b;
        }
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
        dsum += d;
    }
    let jf = j_total as f64;
    let mean_d = dsum / jf;
    let values = weighted
        .iter()
        .zip(&counts)
        .map(|(&w, &c)| w / jf - mean_d * (c as f64 / jf))
        .collect();
    Ok(CorrelationImage { image: RealImage::new(spec.grid, values)?, count_used: j_total })
}

/// Reference implementation that materializes every pattern first. Only
/// meant for small `J`.
pub fn correlate_two_pass(m: &MeasurementSet) -> Result<CorrelationImage> {
    check_measurements(m)?;
    let spec = &m.ensemble;
    let n = spec.grid.len();
    let jf = m.buckets.len() as f64;
    let patterns: Vec<Vec<u8>> = (0..m.buckets.len())
        .map(|j| {
            let mut buf = vec![0u8; n];
            fill_pattern(spec, j, &mut buf);
            buf
        })
        .collect();
    let mean_b = m.buckets.iter().sum::<f64>() / jf;
    let mut mean_m = vec![0.0; n];
    for p in &patterns {
        for (a, &b) in mean_m.iter_mut().zip(p) {
            *a += b as f64;
        }
    }
    for a in mean_m.iter_mut() {
        *a /= jf;
    }
    let mut values = vec![0.0; n];
    for (p, &b) in patterns.iter().zip(&m.buckets) {
        let d = b - mean_b;
        for ((v, &bit), mm) in values.iter_mut().zip(p).zip(&mean_m) {
            *v += d * (bit as f64 - mm);
        }
    }
    for v in values.iter_mut() {
        *v /= jf;
    }
    Ok(CorrelationImage { image: RealImage::new(spec.grid, values)?, count_used: m.buckets.len() })
}

/// `|fft2(C)|`, centered, unitary scaling. The DC bin is kept; retrieval
/// treats it as free.
pub fn magnitude_spectrum(c: &CorrelationImage) -> MagnitudeSpectrum {
    grid::fft2_real(&c.image).magnitude().to_centered()
}

/// The overall filter `F = |S̃_L| |S̃_S| |δ̃_D|` and its factors, centered.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel {
    pub mtf: MagnitudeSpectrum,
    pub lens: MagnitudeSpectrum,
    pub speckle: MagnitudeSpectrum,
    pub pixel: MagnitudeSpectrum,
}

impl FilterModel {
    pub fn max(&self) -> f64 {
        self.mtf.max()
    }

    /// The default regularizer, `1e-2 max(F)`.
    pub fn default_epsilon(&self) -> f64 {
        1e-2 * self.max()
    }
}

/// Speckle MTF model `sqrt(disk autocorrelation)` on the frequency disk of
/// radius `D / (λ z_o)`.
pub fn speckle_mtf_model(config: &OpticalConfig) -> Result<MagnitudeSpectrum> {
    config.validate()?;
    let k = disk_autocorrelation(config.aperture_diameter_px(), &config.object_grid)?;
    let g = *k.grid();
    Ok(MagnitudeSpectrum::from_raw(g, k.values().iter().map(|v| v.sqrt()).collect(), true))
}

/// Incoherent lens OTF magnitude at the object plane.
pub fn lens_mtf_model(config: &OpticalConfig) -> Result<MagnitudeSpectrum> {
    config.validate()?;
    disk_autocorrelation(config.lens_pupil_diameter_px(), &config.object_grid)
}

/// Footprint of one source pixel mapped to the object grid. Each source
/// cell lands on exactly one grid pixel, so the footprint is a Kronecker
/// delta and its spectrum is flat.
pub fn pixel_mtf(grid: Grid2D) -> MagnitudeSpectrum {
    MagnitudeSpectrum::constant(grid, 1.0, true)
}

pub fn filter_model(config: &OpticalConfig) -> Result<FilterModel> {
    config.validate()?;
    let g = config.object_grid;
    let (lens, speckle) = match config.case {
        Case::LensOnly => (lens_mtf_model(config)?, MagnitudeSpectrum::constant(g, 1.0, true)),
        // The speckle passband lies inside the lens passband here, so the
        // lens factor is unity.
        Case::Scattering => (MagnitudeSpectrum::constant(g, 1.0, true), speckle_mtf_model(config)?),
    };
    let pixel = pixel_mtf(g);
    let mtf = lens.product(&speckle)?.product(&pixel)?;
    Ok(FilterModel { mtf, lens, speckle, pixel })
}

/// Wiener-style magnitude compensation `|C̃| F / (F² + ε²)`, DC zeroed.
/// The output takes the layout of `spectrum`.
pub fn compensate(spectrum: &MagnitudeSpectrum, filter: &FilterModel, epsilon: f64) -> Result<MagnitudeSpectrum> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return error::usage(format!("epsilon must be positive, got {epsilon}"));
    }
    spectrum.grid().check_same(filter.mtf.grid(), "compensate")?;
    let f = if spectrum.is_centered() { filter.mtf.to_centered() } else { filter.mtf.to_uncentered() };
    let e2 = epsilon * epsilon;
    let mut values: Vec<f64> = spectrum
        .values()
        .iter()
        .zip(f.values())
        .map(|(&c, &fv)| (c * fv / (fv * fv + e2)).max(0.0))
        .collect();
    let g = *spectrum.grid();
    let dc = if spectrum.is_centered() { g.index(g.nx() / 2, g.ny() / 2) } else { 0 };
    values[dc] = 0.0;
    MagnitudeSpectrum::new(g, values, spectrum.is_centered())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{clean_buckets, NoiseModel, Psf};
    use crate::patterns::EnsembleSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn measurement(ensemble: EnsembleSpec, buckets: Vec<f64>) -> MeasurementSet {
        let config = OpticalConfig::reference(532e-9, Grid2D::square(64, 7.4e-6).unwrap(), Case::Scattering);
        MeasurementSet { ensemble, buckets, config, noise: NoiseModel::None, psf_seed: 0 }
    }

    #[test]
    fn constant_buckets_give_zero() {
        let g = Grid2D::square(16, 1e-5).unwrap();
        let e = EnsembleSpec::random_binary(g, 50, 0.5, 1).unwrap();
        let c = correlate(&measurement(e, vec![3.25; 50])).unwrap();
        assert!(c.image.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn needs_two_patterns() {
        let g = Grid2D::square(16, 1e-5).unwrap();
        let e = EnsembleSpec::random_binary(g, 1, 0.5, 1).unwrap();
        assert!(matches!(correlate(&measurement(e, vec![1.0])), Err(crate::Error::Usage(_))));
        let e = EnsembleSpec::random_binary(g, 3, 0.5, 1).unwrap();
        assert!(matches!(correlate(&measurement(e, vec![1.0, 2.0])), Err(crate::Error::Data(_))));
    }

    #[test]
    fn streaming_matches_two_pass() {
        let g = Grid2D::square(16, 1e-5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = EnsembleSpec::random_binary(g, 1000, 0.5, 9).unwrap();
        let b: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let m = measurement(e, b);
        let a = correlate(&m).unwrap();
        let t = correlate_two_pass(&m).unwrap();
        let scale = t.image.values().iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for (x, y) in a.image.values().iter().zip(t.image.values()) {
            assert!((x - y).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn hadamard_basis_recovers_response() {
        // With M_j = (1 + H_j)/2 over the complete basis, C(ρ) = G(ρ)/4 for
        // every ρ except the origin, where the all-ones pattern cancels it.
        let g = Grid2D::square(16, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obj = RealImage::from_fn(g, |_, _| rng.random::<f64>());
        let psf = Psf::from_image(RealImage::from_fn(g, |_, _| rng.random::<f64>())).unwrap();
        let e = EnsembleSpec::hadamard_complete(g).unwrap();
        let b = clean_buckets(&obj, &psf, &e).unwrap();
        let c = correlate(&measurement(e, b)).unwrap();
        let resp = grid::circ_correlate(&obj, psf.image()).unwrap();
        assert!(c.image.values()[0].abs() < 1e-10);
        for (cv, gv) in c.image.values().iter().zip(resp.values()).skip(1) {
            assert!((cv - 0.25 * gv).abs() < 1e-10, "{cv} vs {gv}");
        }
    }

    #[test]
    fn spectrum_properties() {
        let g = Grid2D::square(16, 1e-5).unwrap();
        let imp = CorrelationImage { image: RealImage::impulse(g, 3, 4), count_used: 2 };
        let s = magnitude_spectrum(&imp);
        assert!(s.is_centered());
        assert!(s.values().iter().all(|v| (v - 0.0625).abs() < 1e-14));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = RealImage::from_fn(g, |_, _| rng.random::<f64>() - 0.3);
        let c = CorrelationImage { image: img.clone(), count_used: 2 };
        let s = magnitude_spectrum(&c);
        for ky in -7..8isize {
            for kx in -7..8isize {
                assert!((s.at(kx, ky) - s.at(-kx, -ky)).abs() < 1e-12);
            }
        }
        let moved = CorrelationImage { image: img.shifted(5, -3), count_used: 2 };
        let s2 = magnitude_spectrum(&moved);
        for (a, b) in s.values().iter().zip(s2.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_filter() {
        let c = OpticalConfig::reference(532e-9, Grid2D::square(64, 7.4e-6).unwrap(), Case::Scattering);
        let f = filter_model(&c).unwrap();
        assert!((c.aperture_cutoff() - 3.76e4).abs() / 3.76e4 < 0.01);
        assert!((f.pixel.at(0, 0) - 1.0).abs() < 1e-15);
        assert!((f.mtf.at(0, 0) - 1.0).abs() < 1e-12);
        for i in 0..f.mtf.values().len() {
            let p = f.lens.values()[i] * f.speckle.values()[i] * f.pixel.values()[i];
            assert!((f.mtf.values()[i] - p).abs() <= 1e-12);
            let m = f.lens.values()[i].min(f.speckle.values()[i]).min(f.pixel.values()[i]);
            assert!(f.mtf.values()[i] <= m + 1e-15);
        }
        let lens = filter_model(&OpticalConfig { case: Case::LensOnly, ..c }).unwrap();
        assert!(lens.speckle.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn compensation() {
        let g = Grid2D::square(16, 1e-5).unwrap();
        let one = MagnitudeSpectrum::constant(g, 1.0, true);
        let filt = FilterModel { mtf: one.clone(), lens: one.clone(), speckle: one.clone(), pixel: one.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = MagnitudeSpectrum::new(g, (0..256).map(|_| rng.random::<f64>()).collect(), true).unwrap();
        let out = compensate(&s, &filt, 1e-9).unwrap();
        assert_eq!(out.at(0, 0), 0.0);
        for ky in -8..8isize {
            for kx in -8..8isize {
                if (kx, ky) != (0, 0) {
                    assert!((out.at(kx, ky) - s.at(kx, ky)).abs() < 1e-12);
                }
            }
        }
        assert!(compensate(&s, &filt, 0.0).is_err());

        let c = OpticalConfig::reference(532e-9, Grid2D::square(64, 7.4e-6).unwrap(), Case::Scattering);
        let f = filter_model(&c).unwrap();
        let o = MagnitudeSpectrum::new(c.object_grid, (0..4096).map(|_| 0.5 + rng.random::<f64>()).collect(), true)
            .unwrap();
        let cmag = o.product(&f.mtf).unwrap();
        let eps = 1e-3 * f.max();
        let est = compensate(&cmag, &f, eps).unwrap();
        for i in 0..4096 {
            let fv = f.mtf.values()[i];
            if fv > 10.0 * eps && i != c.object_grid.index(32, 32) {
                assert!((est.values()[i] - o.values()[i]).abs() < 0.01 * o.values()[i]);
            }
            if fv == 0.0 {
                assert_eq!(est.values()[i], 0.0);
            }
        }
    }
}
