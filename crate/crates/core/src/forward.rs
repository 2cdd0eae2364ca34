//! Forward model: PSF synthesis, illumination and bucket signals.
//!
//! All planes share the object grid. The source pattern is taken as already
//! mapped onto object-plane coordinates, one source cell per grid pixel, so
//! `P_j = M_j * S` is a circular convolution on that grid.
//!
//! The PSFs are built in a pupil plane sampled at `λ z / (N · pitch)`, which
//! puts a physical aperture of diameter `D` at distance `z` exactly on the
//! frequency disk of diameter `D / (λ z)` of the object grid.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{self, Result};
use crate::grid::{self, circ_correlate, circ_convolve, disk_mask, fft2_in_place, Grid2D, MagnitudeSpectrum, RealImage};
use crate::patterns::{fill_pattern, EnsembleSpec, Pattern};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    /// No diffuser: the lens projects the patterns onto the object.
    LensOnly,
    /// A strong-scattering diffuser with a circular stop sits between the
    /// lens and the object.
    Scattering,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalConfig {
    /// Illumination wavelength, meters. Has no default.
    pub wavelength: f64,
    /// Source (DMD) to lens distance.
    pub z_m: f64,
    /// Lens to diffuser distance.
    pub z_l: f64,
    /// Diffuser to object distance.
    pub z_o: f64,
    pub focal_length: f64,
    /// Diameter `D` of the stop in front of the diffuser.
    pub aperture_diameter: f64,
    /// Clear aperture of the projection lens; sets the lens-only PSF.
    pub lens_aperture_diameter: f64,
    /// Source cell size.
    pub dmd_pitch: f64,
    pub object_grid: Grid2D,
    pub case: Case,
}

impl OpticalConfig {
    /// Bench geometry of the reference experiment (70/250/300 mm spacings,
    /// 25 mm lens, 6 mm stop, 7.4 µm cells) on the given object grid.
    ///
    /// The lens clear aperture (12.7 mm) is not part of the reference
    /// geometry and is a stand-in value.
    pub fn reference(wavelength: f64, object_grid: Grid2D, case: Case) -> Self {
        Self {
            wavelength,
            z_m: 0.070,
            z_l: 0.250,
            z_o: 0.300,
            focal_length: 0.025,
            aperture_diameter: 6e-3,
            lens_aperture_diameter: 12.7e-3,
            dmd_pitch: 7.4e-6,
            object_grid,
            case,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("wavelength", self.wavelength),
            ("z_m", self.z_m),
            ("z_l", self.z_l),
            ("z_o", self.z_o),
            ("focal_length", self.focal_length),
            ("aperture_diameter", self.aperture_diameter),
            ("lens_aperture_diameter", self.lens_aperture_diameter),
            ("dmd_pitch", self.dmd_pitch),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return error::config(format!("{name} must be a positive length, got {v}"));
            }
        }
        let g = self.object_grid;
        if g.nx() != g.ny() {
            return error::config(format!(
                "PSF synthesis needs a square object grid, got {}x{}",
                g.nx(),
                g.ny()
            ));
        }
        let nyquist = g.nyquist();
        match self.case {
            Case::Scattering => {
                let cutoff = self.aperture_cutoff();
                if cutoff > nyquist {
                    return error::config(format!(
                        "aperture cutoff D/(wavelength*z_o) = {cutoff:.4e} cycles/m exceeds the grid Nyquist \
                         frequency {nyquist:.4e} (aperture_diameter={}, wavelength={}, z_o={}, pitch={})",
                        self.aperture_diameter,
                        self.wavelength,
                        self.z_o,
                        g.pitch()
                    ));
                }
            }
            Case::LensOnly => {
                let cutoff = self.lens_cutoff();
                if cutoff > nyquist {
                    return error::config(format!(
                        "lens cutoff D_lens/(wavelength*(z_l+z_o)) = {cutoff:.4e} cycles/m exceeds the grid \
                         Nyquist frequency {nyquist:.4e} (lens_aperture_diameter={}, wavelength={}, z_l={}, z_o={}, pitch={})",
                        self.lens_aperture_diameter,
                        self.wavelength,
                        self.z_l,
                        self.z_o,
                        g.pitch()
                    ));
                }
            }
        }
        Ok(())
    }

    /// Support radius `D / (λ z_o)` of the speckle MTF, cycles per meter.
    pub fn aperture_cutoff(&self) -> f64 {
        self.aperture_diameter / (self.wavelength * self.z_o)
    }

    /// Speckle grain size `λ z_o / D`, meters.
    pub fn speckle_grain(&self) -> f64 {
        self.wavelength * self.z_o / self.aperture_diameter
    }

    /// Support radius of the lens OTF at the object plane, cycles per meter.
    pub fn lens_cutoff(&self) -> f64 {
        self.lens_aperture_diameter / (self.wavelength * (self.z_l + self.z_o))
    }

    /// Diameter of the diffuser stop in pupil-plane pixels.
    pub fn aperture_diameter_px(&self) -> f64 {
        self.aperture_cutoff() / self.object_grid.df_x()
    }

    /// Diameter of the lens pupil in pupil-plane pixels.
    pub fn lens_pupil_diameter_px(&self) -> f64 {
        self.lens_cutoff() / self.object_grid.df_x()
    }
}

/// Nonnegative, unit-sum intensity PSF.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    image: RealImage,
}

impl Psf {
    /// Normalizes a nonnegative image to unit sum.
    pub fn from_image(image: RealImage) -> Result<Self> {
        if !image.is_nonnegative() {
            return error::data("PSF values must be nonnegative");
        }
        let total = image.sum();
        if total <= 0.0 {
            return error::data("PSF has no energy");
        }
        Ok(Self { image: image.scaled(1.0 / total) })
    }

    /// Kronecker delta at the origin.
    pub fn delta(grid: Grid2D) -> Self {
        Self { image: RealImage::impulse(grid, 0, 0) }
    }

    pub fn image(&self) -> &RealImage {
        &self.image
    }

    pub fn grid(&self) -> &Grid2D {
        self.image.grid()
    }

    /// `|OTF|`, normalized to 1 at DC, uncentered.
    pub fn mtf(&self) -> MagnitudeSpectrum {
        let g = *self.grid();
        let spectrum = grid::fft2_real(&self.image);
        let scale = (g.len() as f64).sqrt();
        MagnitudeSpectrum::from_raw(g, spectrum.values().iter().map(|c| c.norm() * scale).collect(), false)
    }
}

fn intensity_of_pupil(grid: Grid2D, mut pupil: Vec<Complex64>) -> Result<Psf> {
    fft2_in_place(&mut pupil, grid.nx(), grid.ny(), false);
    let values: Vec<f64> = pupil.iter().map(|c| c.norm_sqr()).collect();
    Psf::from_image(RealImage::from_raw(grid, values))
}

/// Incoherent PSF of a clear circular pupil `diameter_px` pupil pixels wide.
pub fn lens_psf_px(grid: Grid2D, diameter_px: f64) -> Result<Psf> {
    let limit = grid.nx().min(grid.ny()) as f64;
    if !(diameter_px > 0.0 && diameter_px <= limit) {
        return error::config(format!("pupil diameter {diameter_px} px must lie in (0, {limit}]"));
    }
    let pupil = disk_mask(grid.nx(), grid.ny(), diameter_px)
        .into_iter()
        .map(|m| Complex64::new(if m { 1.0 } else { 0.0 }, 0.0))
        .collect();
    intensity_of_pupil(grid, pupil)
}

/// One speckle intensity realization behind a random-phase stop of
/// `diameter_px` pupil pixels. Phases are drawn in row-major order over the
/// stop from the diffuser stream of `seed`.
pub fn speckle_intensity(grid: Grid2D, diameter_px: f64, seed: u64) -> Result<Psf> {
    let limit = grid.nx().min(grid.ny()) as f64;
    if !(diameter_px > 0.0 && diameter_px <= limit) {
        return error::config(format!("stop diameter {diameter_px} px must lie in (0, {limit}]"));
    }
    let mut rng = rng::stream(seed, Domain::Diffuser, 0);
    let pupil = disk_mask(grid.nx(), grid.ny(), diameter_px)
        .into_iter()
        .map(|m| {
            if m {
                Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>())
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    intensity_of_pupil(grid, pupil)
}

/// Case 1 PSF: the lens alone, imaged through its clear pupil.
pub fn lens_psf(config: &OpticalConfig) -> Result<Psf> {
    if config.case != Case::LensOnly {
        return error::usage("lens_psf needs the lens-only case");
    }
    config.validate()?;
    lens_psf_px(config.object_grid, config.lens_pupil_diameter_px())
}

/// Case 2 PSF: one static speckle realization of the diffuser.
pub fn speckle_psf(config: &OpticalConfig, psf_seed: u64) -> Result<Psf> {
    if config.case != Case::Scattering {
        return error::usage("speckle_psf needs the scattering case");
    }
    config.validate()?;
    speckle_intensity(config.object_grid, config.aperture_diameter_px(), psf_seed)
}

/// The source-to-object PSF for the configured case.
pub fn system_psf(config: &OpticalConfig, psf_seed: u64) -> Result<Psf> {
    match config.case {
        Case::LensOnly => lens_psf(config),
        Case::Scattering => speckle_psf(config, psf_seed),
    }
}

/// Illumination on the object plane, `M * S`.
pub fn illuminate(pattern: &Pattern, psf: &Psf) -> Result<RealImage> {
    let m = pattern.to_image(*psf.grid())?;
    let mut p = circ_convolve(&m, psf.image())?;
    for v in p.values_mut() {
        // Roundoff from the transform can dip a hair below zero.
        *v = v.max(0.0);
    }
    Ok(p)
}

/// `sum_r O(r) P(r) · pitch²`.
pub fn bucket(object: &RealImage, illumination: &RealImage) -> Result<f64> {
    object.grid().check_same(illumination.grid(), "bucket")?;
    if !object.is_nonnegative() {
        return error::data("object transmittance must be nonnegative");
    }
    let pitch = object.grid().pitch();
    let s: f64 = object.values().iter().zip(illumination.values()).map(|(o, p)| o * p).sum();
    Ok(s * pitch * pitch)
}

/// Object seen through the reflected PSF, `G(ρ) = sum_r O(r) S(r - ρ)`.
///
/// This is `O * S(-·)`; with it the bucket becomes `sum_ρ G(ρ) M(ρ) · pitch²`.
pub fn object_response(object: &RealImage, psf: &Psf) -> Result<RealImage> {
    circ_correlate(object, psf.image())
}

/// Bucket from the object response, `sum_ρ G(ρ) M(ρ) · pitch²`.
pub fn bucket_from_response(response: &RealImage, pattern: &Pattern) -> Result<f64> {
    let g = response.grid();
    if pattern.dims() != (g.nx(), g.ny()) {
        return error::config("pattern does not match the object grid");
    }
    Ok(masked_sum(response.values(), pattern.values()) * g.pitch() * g.pitch())
}

#[inline]
fn masked_sum(values: &[f64], mask: &[u8]) -> f64 {
    values.iter().zip(mask).filter(|(_, &m)| m != 0).map(|(v, _)| v).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NoiseModel {
    #[default]
    None,
    /// Additive white Gaussian noise at the given SNR, measured against the
    /// mean-removed bucket fluctuation.
    Gaussian { snr_db: f64 },
    /// Shot noise, scaled so the mean bucket corresponds to `photons`.
    Poisson { photons: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian { snr_db } if snr_db.is_finite() => Ok(()),
            NoiseModel::Gaussian { snr_db } => error::config(format!("snr_db must be finite, got {snr_db}")),
            NoiseModel::Poisson { photons } if photons.is_finite() && photons > 0.0 => Ok(()),
            NoiseModel::Poisson { photons } => {
                error::config(format!("photon count must be positive, got {photons}"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub ensemble: EnsembleSpec,
    pub buckets: Vec<f64>,
    pub config: OpticalConfig,
    pub noise: NoiseModel,
    pub psf_seed: u64,
}

impl MeasurementSet {
    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        if self.buckets.len() != self.ensemble.count {
            return error::data(format!(
                "{} buckets for an ensemble of {}",
                self.buckets.len(),
                self.ensemble.count
            ));
        }
        if let Some(j) = self.buckets.iter().position(|b| !b.is_finite()) {
            return error::data(format!("bucket {j} is not finite"));
        }
        Ok(())
    }
}

/// Objects must sit inside the central half of the grid so circular
/// convolution never wraps them onto themselves.
pub fn check_object_support(object: &RealImage) -> Result<()> {
    let g = object.grid();
    let (x0, x1) = (g.nx() / 4, g.nx() - g.nx() / 4);
    let (y0, y1) = (g.ny() / 4, g.ny() - g.ny() / 4);
    for y in 0..g.ny() {
        for x in 0..g.nx() {
            let inside = (x0..x1).contains(&x) && (y0..y1).contains(&y);
            if object.get(x, y) != 0.0 && !inside {
                return error::config(format!(
                    "object pixel ({x},{y}) lies outside the central half [{x0},{x1})x[{y0},{y1})"
                ));
            }
        }
    }
    Ok(())
}

/// Clean bucket signals for every pattern of the ensemble, in order of `j`.
pub fn clean_buckets(object: &RealImage, psf: &Psf, ensemble: &EnsembleSpec) -> Result<Vec<f64>> {
    ensemble.validate()?;
    object.grid().check_same(&ensemble.grid, "simulate")?;
    if !object.is_nonnegative() {
        return error::data("object transmittance must be nonnegative");
    }
    let response = object_response(object, psf)?;
    let pitch2 = object.grid().pitch().powi(2);
    let n = object.grid().len();
    Ok((0..ensemble.count)
        .into_par_iter()
        .map_init(
            || vec![0u8; n],
            |buf, j| {
                fill_pattern(ensemble, j, buf);
                masked_sum(response.values(), buf) * pitch2
            },
        )
        .collect())
}

/// Applies the noise model in order of `j` from the noise stream of `seed`.
pub fn apply_noise(buckets: &mut [f64], noise: &NoiseModel, seed: u64) -> Result<()> {
    noise.validate()?;
    let mut rng = rng::stream(seed, Domain::Noise, 0);
    match *noise {
        NoiseModel::None => {}
        NoiseModel::Gaussian { snr_db } => {
            let n = buckets.len() as f64;
            let mean = buckets.iter().sum::<f64>() / n;
            let var = buckets.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / n;
            let sigma = (var / 10f64.powf(snr_db / 10.0)).sqrt();
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).map_err(|e| crate::Error::Numerical(e.to_string()))?;
                for b in buckets.iter_mut() {
                    *b += normal.sample(&mut rng);
                }
            }
        }
        NoiseModel::Poisson { photons } => {
            let mean = buckets.iter().sum::<f64>() / buckets.len() as f64;
            if mean <= 0.0 {
                return Ok(());
            }
            let scale = photons / mean;
            for b in buckets.iter_mut() {
                let lambda = *b * scale;
                *b = if lambda > 0.0 {
                    let d = Poisson::new(lambda).map_err(|e| crate::Error::Numerical(e.to_string()))?;
                    d.sample(&mut rng) / scale
                } else {
                    0.0
                };
            }
        }
    }
    Ok(())
}

/// Full acquisition: one static PSF realization shared by all `J` patterns,
/// bucket integration, then detector noise.
pub fn simulate(
    object: &RealImage,
    config: &OpticalConfig,
    ensemble: &EnsembleSpec,
    noise: &NoiseModel,
    psf_seed: u64,
) -> Result<MeasurementSet> {
    config.validate()?;
    noise.validate()?;
    config.object_grid.check_same(object.grid(), "simulate")?;
    check_object_support(object)?;
    let psf = system_psf(config, psf_seed)?;
    let mut buckets = clean_buckets(object, &psf, ensemble)?;
    apply_noise(&mut buckets, noise, psf_seed)?;
    Ok(MeasurementSet { ensemble: *ensemble, buckets, config: *config, noise: *noise, psf_seed })
}
