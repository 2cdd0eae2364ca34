//! Scoring modulo translation and point reflection, and the two-point
//! resolution probe.

use rayon::prelude::*;

use crate::error::{self, Result};
use crate::forward::{simulate, NoiseModel, OpticalConfig};
use crate::grid::{circ_correlate, signed_bin, RealImage};
use crate::objects::two_points;
use crate::patterns::EnsembleSpec;
use crate::pipeline::{reconstruct, ReconstructParams};

/// `recon ≈ shift applied to (flipped ? point-reflected truth : truth)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub shift: (isize, isize),
    pub flipped: bool,
    pub pearson: f64,
}

fn centered(img: &RealImage) -> Result<(Vec<f64>, f64)> {
    let m = img.mean();
    let v: Vec<f64> = img.values().iter().map(|x| x - m).collect();
    let ss: f64 = v.iter().map(|x| x * x).sum();
    if !(ss > 0.0) {
        return error::numerical("correlation is undefined for a constant image");
    }
    Ok((v, ss))
}

pub fn pearson(a: &RealImage, b: &RealImage) -> Result<f64> {
    a.grid().check_same(b.grid(), "pearson")?;
    let (a, saa) = centered(a)?;
    let (b, sbb) = centered(b)?;
    let sab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Scores below the best by less than this count as ties.
const TIE: f64 = 1e-12;

pub fn align_and_score(recon: &RealImage, truth: &RealImage) -> Result<AlignmentResult> {
    recon.grid().check_same(truth.grid(), "align_and_score")?;
    let g = *recon.grid();
    let (rc, srr) = centered(recon)?;
    let (_, stt) = centered(truth)?;
    let rc = RealImage::new(g, rc)?;
    let norm = (srr * stt).sqrt();
    let mut candidates: Vec<(f64, bool, isize, isize)> = Vec::with_capacity(2 * g.len());
    for flipped in [false, true] {
        let t = if flipped { truth.point_reflected() } else { truth.clone() };
        let (tc, _) = centered(&t)?;
        let xc = circ_correlate(&rc, &RealImage::new(g, tc)?)?;
        for y in 0..g.ny() {
            for x in 0..g.nx() {
                candidates.push((xc.get(x, y) / norm, flipped, signed_bin(x, g.nx()), signed_bin(y, g.ny())));
            }
        }
    }
    let best = candidates.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let (_, flipped, sx, sy) = candidates
        .into_iter()
        .filter(|c| c.0 >= best - TIE)
        .min_by_key(|c| (c.1, c.2, c.3))
        .expect("non-empty grid");
    let mut result = AlignmentResult { shift: (sx, sy), flipped, pearson: 0.0 };
    result.pearson = pearson(&apply_alignment(recon, &result), truth)?;
    Ok(result)
}

/// Maps `recon` back onto the truth frame.
pub fn apply_alignment(recon: &RealImage, a: &AlignmentResult) -> RealImage {
    let back = recon.shifted(-a.shift.0, -a.shift.1);
    if a.flipped {
        back.point_reflected()
    } else {
        back
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    pub pattern_count: usize,
    pub fill_fraction: f64,
    pub pattern_seed: u64,
    pub psf_seed: u64,
    pub reconstruct: ReconstructParams,
    /// Minimum relative dip between the two peaks.
    pub dip_threshold: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self {
            pattern_count: 1 << 16,
            fill_fraction: 0.5,
            pattern_seed: 1,
            psf_seed: 1,
            reconstruct: ReconstructParams::default(),
            dip_threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub separation: f64,
    pub separation_px: usize,
    pub resolved: bool,
    /// `(min peak - valley) / min peak` along the row through both points.
    pub contrast: f64,
    pub pearson: f64,
}

/// Rayleigh-style dip between two known point positions of an aligned
/// image: `(min peak - midpoint) / min peak`. Peaks are taken within one
/// pixel of each position; the midpoint value is the pixel halfway between
/// the peaks, or the mean of the two central pixels when that falls between
/// pixels.
pub fn two_point_contrast(aligned: &RealImage, x1: usize, x2: usize, y: usize) -> f64 {
    let nx = aligned.grid().nx();
    let peak_near = |x: usize| -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, x);
        for dx in [-1isize, 0, 1] {
            let xx = (x as isize + dx).rem_euclid(nx as isize) as usize;
            let v = aligned.get(xx, y);
            if v > best.0 {
                best = (v, xx);
            }
        }
        best
    };
    let (p1, a) = peak_near(x1);
    let (p2, b) = peak_near(x2);
    let (a, b) = (a.min(b), a.max(b));
    let peak = p1.min(p2);
    if b <= a + 1 || !(peak > 0.0) {
        return 0.0;
    }
    let mid = if (a + b) % 2 == 0 {
        aligned.get((a + b) / 2, y)
    } else {
        0.5 * (aligned.get((a + b) / 2, y) + aligned.get((a + b) / 2 + 1, y))
    };
    (peak - mid) / peak
}

/// Full simulate-and-reconstruct run on two points `separation` meters
/// apart, noiseless.
pub fn resolution_probe(config: &OpticalConfig, separation: f64, params: &ProbeParams) -> Result<ProbeResult> {
    config.validate()?;
    let g = config.object_grid;
    if !(separation >= 2.0 * g.pitch()) {
        return error::config(format!(
            "separation {separation} m is below two pixels ({} m)",
            2.0 * g.pitch()
        ));
    }
    let sep_px = (separation / g.pitch()).round() as usize;
    let truth = two_points(g, sep_px)?;
    let ensemble = EnsembleSpec::random_binary(g, params.pattern_count, params.fill_fraction, params.pattern_seed)?;
    let m = simulate(&truth, config, &ensemble, &NoiseModel::None, params.psf_seed)?;
    let out = reconstruct(&m, &params.reconstruct)?;
    let a = align_and_score(&out.retrieval.best.image, &truth)?;
    let aligned = apply_alignment(&out.retrieval.best.image, &a);
    let x1 = g.nx() / 2 - sep_px / 2;
    let contrast = two_point_contrast(&aligned, x1, x1 + sep_px, g.ny() / 2);
    Ok(ProbeResult {
        separation,
        separation_px: sep_px,
        resolved: contrast >= params.dip_threshold,
        contrast,
        pearson: a.pearson,
    })
}

/// Probes each separation independently, in parallel; results keep the
/// input order.
pub fn resolution_scan(config: &OpticalConfig, separations: &[f64], params: &ProbeParams) -> Result<Vec<ProbeResult>> {
    if separations.is_empty() {
        return error::usage("resolution scan needs at least one separation");
    }
    separations.par_iter().map(|&s| resolution_probe(config, s, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::objects::letter;

    #[test]
    fn identity_shift_and_flip() {
        let g = Grid2D::square(64, 1.0).unwrap();
        let t = letter(g);
        let a = align_and_score(&t, &t).unwrap();
        assert_eq!(a, AlignmentResult { shift: (0, 0), flipped: false, pearson: 1.0 });

        let s = align_and_score(&t.shifted(3, 5), &t).unwrap();
        assert_eq!((s.shift, s.flipped), ((3, 5), false));
        assert!((s.pearson - 1.0).abs() < 1e-12);

        let f = align_and_score(&t.point_reflected(), &t).unwrap();
        assert!(f.flipped);
        assert!((f.pearson - 1.0).abs() < 1e-12);
        assert_eq!(apply_alignment(&t.point_reflected(), &f), t);

        let both = t.point_reflected().shifted(-7, 2);
        let r = align_and_score(&both, &t).unwrap();
        assert_eq!(apply_alignment(&both, &r), t);
    }

    #[test]
    fn constant_input_is_an_error() {
        let g = Grid2D::square(16, 1.0).unwrap();
        let c = RealImage::from_fn(g, |_, _| 2.0);
        let t = RealImage::impulse(g, 3, 3);
        assert!(matches!(align_and_score(&c, &t), Err(crate::Error::Numerical(_))));
        assert!(align_and_score(&t, &c).is_err());
    }

    #[test]
    fn contrast_of_ideal_and_merged_pairs() {
        let g = Grid2D::square(32, 1.0).unwrap();
        let pts = two_points(g, 6).unwrap();
        assert_eq!(two_point_contrast(&pts, 13, 19, 16), 1.0);
        let blob = RealImage::from_fn(g, |x, y| if y == 16 { (-((x as f64 - 16.0).powi(2)) / 20.0).exp() } else { 0.0 });
        assert!(two_point_contrast(&blob, 13, 19, 16) <= 0.0);
    }

    #[test]
    fn odd_separation_uses_the_two_central_pixels() {
        let g = Grid2D::square(32, 1.0).unwrap();
        let row = [(10, 1.0), (11, 0.1), (12, 0.4), (13, 0.2), (14, 0.1), (15, 1.0)];
        let mut img = RealImage::zeros(g);
        for (x, v) in row {
            img.set(x, 16, v);
        }
        assert!((two_point_contrast(&img, 10, 15, 16) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn probe_rejects_tiny_separation() {
        let c = OpticalConfig::reference(532e-9, Grid2D::square(64, 7.4e-6).unwrap(), crate::forward::Case::Scattering);
        assert!(resolution_probe(&c, 7.4e-6, &ProbeParams::default()).is_err());
        assert!(resolution_scan(&c, &[], &ProbeParams::default()).is_err());
    }
}
