//! In-process reconstruction chain: correlate, take the magnitude,
//! optionally compensate, estimate the support, retrieve the phase.

use crate::correlation::{compensate, correlate, filter_model, magnitude_spectrum, CorrelationImage, FilterModel};
use crate::error::{self, Result};
use crate::forward::MeasurementSet;
use crate::grid::MagnitudeSpectrum;
use crate::retrieval::{estimate_support, run, RetrievalOutcome, RetrievalSchedule, SupportMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// `|C̃|` goes straight to phase retrieval.
    PaperFaithful,
    /// `|C̃|` is divided by the filter model first. `None` picks
    /// `1e-2 max(F)`.
    Compensated { epsilon: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructParams {
    pub schedule: RetrievalSchedule,
    pub mode: Mode,
    pub support_threshold: f64,
    pub support_margin: usize,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        Self {
            schedule: RetrievalSchedule::default(),
            mode: Mode::PaperFaithful,
            support_threshold: 0.04,
            support_margin: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub correlation: CorrelationImage,
    /// `|C̃|`, centered.
    pub spectrum: MagnitudeSpectrum,
    /// What phase retrieval was given: `spectrum` or its compensated form.
    pub target: MagnitudeSpectrum,
    pub filter: Option<FilterModel>,
    pub epsilon: Option<f64>,
    pub support: SupportMask,
    pub retrieval: RetrievalOutcome,
}

/// Turns a correlation image into a phase-retrieval target.
pub fn prepare_target(
    correlation: &CorrelationImage,
    m: &MeasurementSet,
    mode: Mode,
) -> Result<(MagnitudeSpectrum, MagnitudeSpectrum, Option<FilterModel>, Option<f64>)> {
    let spectrum = magnitude_spectrum(correlation);
    match mode {
        Mode::PaperFaithful => Ok((spectrum.clone(), spectrum, None, None)),
        Mode::Compensated { epsilon } => {
            let f = filter_model(&m.config)?;
            let eps = epsilon.unwrap_or_else(|| f.default_epsilon());
            if !(eps > 0.0) {
                return error::config(format!("compensation epsilon must be positive, got {eps}"));
            }
            let target = compensate(&spectrum, &f, eps)?;
            Ok((spectrum, target, Some(f), Some(eps)))
        }
    }
}

pub fn reconstruct_from_correlation(
    correlation: CorrelationImage,
    m: &MeasurementSet,
    params: &ReconstructParams,
) -> Result<PipelineOutput> {
    params.schedule.validate()?;
    let (spectrum, target, filter, epsilon) = prepare_target(&correlation, m, params.mode)?;
    // The support always comes from the raw magnitude: compensation boosts
    // high frequencies and shrinks the autocorrelation peak.
    let support = estimate_support(
        &spectrum,
        params.support_threshold,
        params.support_margin,
        params.schedule.free_dc_radius,
    )?;
    let retrieval = run(&target, &params.schedule, &support)?;
    Ok(PipelineOutput { correlation, spectrum, target, filter, epsilon, support, retrieval })
}

pub fn reconstruct(m: &MeasurementSet, params: &ReconstructParams) -> Result<PipelineOutput> {
    let correlation = correlate(m)?;
    reconstruct_from_correlation(correlation, m, params)
}
