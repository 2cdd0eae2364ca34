//! Flat `key = value` run configuration with dotted keys.
//!
//! Values are kept as strings in a sorted map so a resolved configuration
//! can be written back verbatim; typed views are built on demand.

use std::collections::BTreeMap;
use std::path::Path;

use gi_core::evaluation::ProbeParams;
use gi_core::forward::{Case, NoiseModel, OpticalConfig};
use gi_core::grid::Grid2D;
use gi_core::patterns::{EnsembleKind, EnsembleSpec};
use gi_core::pipeline::{Mode, ReconstructParams};
use gi_core::retrieval::RetrievalSchedule;
use gi_core::Error;

use crate::CliError;

const DEFAULTS: &[(&str, &str)] = &[
    ("compensation.epsilon", "auto"),
    ("compensation.mode", "paper-faithful"),
    ("ensemble.count", "16384"),
    ("ensemble.fill-fraction", "0.5"),
    ("ensemble.kind", "random-binary"),
    ("ensemble.seed", "1"),
    ("grid.n", "64"),
    ("grid.pitch", "7.4e-6"),
    ("noise.model", "none"),
    ("noise.photons", "1e4"),
    ("noise.snr-db", "20"),
    ("object", "letter"),
    ("optical.aperture-diameter", "6e-3"),
    ("optical.case", "scattering"),
    ("optical.dmd-pitch", "7.4e-6"),
    ("optical.focal-length", "0.025"),
    ("optical.lens-aperture-diameter", "12.7e-3"),
    ("optical.wavelength", "532e-9"),
    ("optical.z-l", "0.25"),
    ("optical.z-m", "0.07"),
    ("optical.z-o", "0.3"),
    ("psf.seed", "1"),
    ("resolution.dip-threshold", "0.2"),
    ("resolution.separations", "0.3,0.5,1,1.5,2,3"),
    ("retrieval.beta", "0.9"),
    ("retrieval.cycles", "20"),
    ("retrieval.er-iterations", "10"),
    ("retrieval.final-er-iterations", "100"),
    ("retrieval.free-dc-radius", "1"),
    ("retrieval.hio-iterations", "40"),
    ("retrieval.nonnegative", "true"),
    ("retrieval.restarts", "16"),
    ("retrieval.seed", "0"),
    ("retrieval.support-margin", "2"),
    ("retrieval.support-threshold", "0.04"),
];

/// Lower-cases a key and spells word breaks with `-`.
pub fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

pub fn is_known_key(key: &str) -> bool {
    DEFAULTS.iter().any(|(k, _)| *k == key)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self { values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let k = normalize_key(key);
        if !is_known_key(&k) {
            return Err(Error::Config(format!("unknown configuration key '{key}'")).into());
        }
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("defaults cover every key")
    }

    /// Merges `key = value` lines. `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, origin: &Path) -> Result<(), CliError> {
        let mut offset = 0usize;
        for (n, line) in text.split_inclusive('\n').enumerate() {
            let start = offset;
            offset += line.len();
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(CliError::Format {
                    path: origin.to_path_buf(),
                    offset: start,
                    msg: format!("line {}: expected 'key = value'", n + 1),
                });
            };
            let k = normalize_key(k);
            if !is_known_key(&k) {
                return Err(CliError::Format {
                    path: origin.to_path_buf(),
                    offset: start,
                    msg: format!("line {}: unknown key '{k}'", n + 1),
                });
            }
            self.values.insert(k, v.trim().to_string());
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = crate::formats::read_text(path)?;
        self.merge_text(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, Error>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key);
        v.parse::<T>().map_err(|e| Error::Config(format!("{key} = '{v}': {e}")))
    }

    fn parse_bool(&self, key: &str) -> Result<bool, Error> {
        match self.get(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(Error::Config(format!("{key} = '{v}' is not a boolean"))),
        }
    }

    pub fn grid(&self) -> Result<Grid2D, Error> {
        Grid2D::square(self.parse("grid.n")?, self.parse("grid.pitch")?)
    }

    pub fn optical(&self) -> Result<OpticalConfig, Error> {
        let case = match self.get("optical.case") {
            "scattering" => Case::Scattering,
            "lens-only" => Case::LensOnly,
            v => return Err(Error::Config(format!("optical.case = '{v}': expected scattering or lens-only"))),
        };
        let c = OpticalConfig {
            wavelength: self.parse("optical.wavelength")?,
            z_m: self.parse("optical.z-m")?,
            z_l: self.parse("optical.z-l")?,
            z_o: self.parse("optical.z-o")?,
            focal_length: self.parse("optical.focal-length")?,
            aperture_diameter: self.parse("optical.aperture-diameter")?,
            lens_aperture_diameter: self.parse("optical.lens-aperture-diameter")?,
            dmd_pitch: self.parse("optical.dmd-pitch")?,
            object_grid: self.grid()?,
            case,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn ensemble(&self) -> Result<EnsembleSpec, Error> {
        let count: i64 = self.parse("ensemble.count")?;
        if count < 1 {
            return Err(Error::Usage(format!("ensemble.count must be at least 1, got {count}")));
        }
        let kind = match self.get("ensemble.kind") {
            "random-binary" => EnsembleKind::RandomBinary { fill_fraction: self.parse("ensemble.fill-fraction")? },
            "hadamard" => EnsembleKind::Hadamard,
            "pixel-scan" => EnsembleKind::PixelScan,
            v => {
                return Err(Error::Config(format!(
                    "ensemble.kind = '{v}': expected random-binary, hadamard or pixel-scan"
                )))
            }
        };
        let spec = EnsembleSpec { kind, grid: self.grid()?, count: count as usize, seed: self.parse("ensemble.seed")? };
        spec.validate()?;
        Ok(spec)
    }

    pub fn noise(&self) -> Result<NoiseModel, Error> {
        let n = match self.get("noise.model") {
            "none" => NoiseModel::None,
            "gaussian" => NoiseModel::Gaussian { snr_db: self.parse("noise.snr-db")? },
            "poisson" => NoiseModel::Poisson { photons: self.parse("noise.photons")? },
            v => return Err(Error::Config(format!("noise.model = '{v}': expected none, gaussian or poisson"))),
        };
        n.validate()?;
        Ok(n)
    }

    pub fn psf_seed(&self) -> Result<u64, Error> {
        self.parse("psf.seed")
    }

    pub fn schedule(&self) -> Result<RetrievalSchedule, Error> {
        let s = RetrievalSchedule {
            blocks: RetrievalSchedule::alternating(
                self.parse("retrieval.cycles")?,
                self.parse("retrieval.hio-iterations")?,
                self.parse("retrieval.beta")?,
                self.parse("retrieval.er-iterations")?,
                self.parse("retrieval.final-er-iterations")?,
            ),
            restarts: self.parse("retrieval.restarts")?,
            seed: self.parse("retrieval.seed")?,
            free_dc_radius: self.parse("retrieval.free-dc-radius")?,
            nonnegative: self.parse_bool("retrieval.nonnegative")?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn mode(&self) -> Result<Mode, Error> {
        match self.get("compensation.mode") {
            "paper-faithful" => Ok(Mode::PaperFaithful),
            "compensated" => {
                let epsilon = match self.get("compensation.epsilon") {
                    "auto" => None,
                    _ => Some(self.parse::<f64>("compensation.epsilon")?),
                };
                Ok(Mode::Compensated { epsilon })
            }
            v => Err(Error::Config(format!("compensation.mode = '{v}': expected paper-faithful or compensated"))),
        }
    }

    pub fn reconstruct_params(&self) -> Result<ReconstructParams, Error> {
        Ok(ReconstructParams {
            schedule: self.schedule()?,
            mode: self.mode()?,
            support_threshold: self.parse("retrieval.support-threshold")?,
            support_margin: self.parse("retrieval.support-margin")?,
        })
    }

    /// Separations in multiples of the speckle grain `λ z_o / D`.
    pub fn separations(&self) -> Result<Vec<f64>, Error> {
        self.get("resolution.separations")
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|e| Error::Config(format!("resolution.separations: '{t}': {e}"))))
            .collect()
    }

    pub fn probe_params(&self) -> Result<ProbeParams, Error> {
        let ensemble = self.ensemble()?;
        let fill_fraction = match ensemble.kind {
            EnsembleKind::RandomBinary { fill_fraction } => fill_fraction,
            EnsembleKind::Hadamard | EnsembleKind::PixelScan => {
                return Err(Error::Config("the resolution probe needs a random-binary ensemble".into()))
            }
        };
        Ok(ProbeParams {
            pattern_count: ensemble.count,
            fill_fraction,
            pattern_seed: ensemble.seed,
            psf_seed: self.psf_seed()?,
            reconstruct: self.reconstruct_params()?,
            dip_threshold: self.parse("resolution.dip-threshold")?,
        })
    }
}
