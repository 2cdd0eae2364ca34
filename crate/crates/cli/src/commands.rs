//! Subcommands and argument handling.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use gi_core::evaluation::{align_and_score, apply_alignment, resolution_scan};
use gi_core::forward::{simulate, system_psf, MeasurementSet};
use gi_core::grid::{Grid2D, RealImage};
use gi_core::objects::BuiltinObject;
use gi_core::pipeline::{reconstruct, Mode};
use gi_core::Error;

use crate::config::{is_known_key, normalize_key, RawConfig};
use crate::formats::{self, ArrayFile, ArrayKind};
use crate::CliError;

pub const MEASUREMENT_CONFIG: &str = "measurement.cfg";
pub const BUCKETS: &str = "buckets.csv";
pub const ORACLE_OBJECT: &str = "oracle-object.f64";
pub const ORACLE_PSF: &str = "oracle-psf.f64";

#[derive(Debug, Parser)]
#[command(
    name = "gi",
    about = "Ghost imaging through a static diffuser: simulate buckets, reconstruct, score",
    after_help = "Any configuration key can be overridden on the command line as --<key> <value>, \
                  e.g. --optical.z-o 0.3 --ensemble.count 65536."
)]
struct Cli {
    /// Cap on worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an acquisition and write buckets plus oracle data.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Correlate, retrieve the phase and write every intermediate.
    Reconstruct {
        /// Directory written by `simulate`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Two-point resolution scan; separations are in units of the speckle
    /// grain.
    Resolution {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Align a reconstruction with a reference and report the score.
    Evaluate {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Pulls `--<config key> value` and `--<config key>=value` pairs out of the
/// argument list.
fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(s) = a.to_str().and_then(|s| s.strip_prefix("--")) else {
            rest.push(a);
            continue;
        };
        let (k, inline) = match s.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (s, None),
        };
        let key = normalize_key(k);
        if !is_known_key(&key) {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .and_then(|v| v.into_string().ok())
                .ok_or_else(|| Error::Usage(format!("--{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let (rest, overrides) = match split_overrides(args) {
        Ok(x) => x,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli, &overrides) {
        Ok(()) => 0,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> i32 {
    eprintln!("gi: {e}");
    e.exit_code()
}

fn execute(cli: Cli, overrides: &[(String, String)]) -> Result<(), CliError> {
    match cli.workers {
        Some(0) => Err(Error::Usage("--workers must be at least 1".into()).into()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Usage(format!("cannot start {n} workers: {e}")))?;
            pool.install(|| dispatch(cli.command, overrides))
        }
        None => dispatch(cli.command, overrides),
    }
}

fn dispatch(command: Command, overrides: &[(String, String)]) -> Result<(), CliError> {
    match command {
        Command::Simulate { out, config } => {
            let cfg = resolve(None, config.as_deref(), overrides)?;
            cmd_simulate(&cfg, &out)
        }
        Command::Reconstruct { input, out, config } => {
            let base = input.join(MEASUREMENT_CONFIG);
            let cfg = resolve(Some(&base), config.as_deref(), overrides)?;
            cmd_reconstruct(&cfg, &input, &out)
        }
        Command::Resolution { out, config } => {
            let cfg = resolve(None, config.as_deref(), overrides)?;
            cmd_resolution(&cfg, &out)
        }
        Command::Evaluate { recon, truth, out } => cmd_evaluate(&recon, &truth, out.as_deref()),
    }
}

fn resolve(base: Option<&Path>, file: Option<&Path>, overrides: &[(String, String)]) -> Result<RawConfig, CliError> {
    let mut cfg = RawConfig::default();
    if let Some(b) = base {
        cfg.merge_file(b)?;
    }
    if let Some(f) = file {
        cfg.merge_file(f)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn load_object(spec: &str, grid: Grid2D) -> Result<RealImage, CliError> {
    if spec.ends_with(".f64") {
        let path = Path::new(spec);
        let a = formats::read_array(path)?;
        if !matches!(a.kind, ArrayKind::Object | ArrayKind::Image) {
            return Err(CliError::Format { path: path.into(), offset: 48, msg: "not an object or image array".into() });
        }
        if a.grid != grid {
            return Err(Error::Config(format!("object file grid {:?} does not match the configured grid", a.grid)).into());
        }
        let img = RealImage::new(grid, a.values)?;
        gi_core::forward::check_object_support(&img)?;
        Ok(img)
    } else {
        Ok(BuiltinObject::parse(spec)?.render(grid)?)
    }
}

fn write_image(dir: &Path, stem: &str, kind: ArrayKind, img: &RealImage, pgm: bool) -> Result<(), CliError> {
    let a = ArrayFile { kind, grid: *img.grid(), centered: false, values: img.values().to_vec() };
    formats::write_array(&dir.join(format!("{stem}.f64")), &a)?;
    if pgm {
        formats::write_pgm(&dir.join(format!("{stem}.pgm")), img.grid(), img.values())?;
    }
    Ok(())
}

pub fn cmd_simulate(cfg: &RawConfig, out: &Path) -> Result<(), CliError> {
    let optical = cfg.optical()?;
    let ensemble = cfg.ensemble()?;
    let noise = cfg.noise()?;
    let psf_seed = cfg.psf_seed()?;
    let object = load_object(cfg.get("object"), optical.object_grid)?;
    let m = simulate(&object, &optical, &ensemble, &noise, psf_seed)?;
    let psf = system_psf(&optical, psf_seed)?;

    formats::create_dir(out)?;
    formats::write_bytes(&out.join(MEASUREMENT_CONFIG), cfg.to_text().as_bytes())?;
    formats::write_bytes(&out.join(BUCKETS), formats::encode_buckets(&m.buckets).as_bytes())?;
    write_image(out, "oracle-object", ArrayKind::Object, &object, true)?;
    write_image(out, "oracle-psf", ArrayKind::Psf, psf.image(), true)?;
    println!("simulated {} buckets into {}", m.buckets.len(), out.display());
    Ok(())
}

pub fn cmd_reconstruct(cfg: &RawConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    let buckets_path = input.join(BUCKETS);
    let buckets = formats::read_buckets(&buckets_path)?;
    let ensemble = cfg.ensemble()?;
    if buckets.len() != ensemble.count {
        return Err(Error::Data(format!(
            "{} holds {} buckets but ensemble.count is {}",
            buckets_path.display(),
            buckets.len(),
            ensemble.count
        ))
        .into());
    }
    let m = MeasurementSet { ensemble, buckets, config: cfg.optical()?, noise: cfg.noise()?, psf_seed: cfg.psf_seed()? };
    let params = cfg.reconstruct_params()?;
    let p = reconstruct(&m, &params)?;
    let g = *p.correlation.grid();

    formats::create_dir(out)?;
    write_image(out, "correlation", ArrayKind::Correlation, &p.correlation.image, true)?;
    for (stem, s) in [("spectrum", &p.spectrum), ("target", &p.target)] {
        let a = ArrayFile { kind: ArrayKind::Spectrum, grid: g, centered: s.is_centered(), values: s.values().to_vec() };
        formats::write_array(&out.join(format!("{stem}.f64")), &a)?;
        formats::write_pgm(&out.join(format!("{stem}.pgm")), &g, s.values())?;
    }
    let support: Vec<f64> = p.support.mask().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    formats::write_pgm(&out.join("support.pgm"), &g, &support)?;
    let best = &p.retrieval.best;
    write_image(out, "reconstruction", ArrayKind::Image, &best.image, true)?;

    let mut trace = String::from("restart,iteration,block,algorithm,fourier_error\n");
    for r in &p.retrieval.restarts {
        for t in &r.trace {
            trace.push_str(&format!(
                "{},{},{},{},{:?}\n",
                r.reconstruction.restart_id,
                t.iteration,
                t.block,
                t.algorithm.name(),
                t.fourier_error
            ));
        }
    }
    formats::write_bytes(&out.join("trace.csv"), trace.as_bytes())?;

    let (sw, sh) = p.support.extent();
    let mode = match params.mode {
        Mode::PaperFaithful => "paper-faithful",
        Mode::Compensated { .. } => "compensated",
    };
    let mut metrics = String::from("key,value\n");
    metrics.push_str(&format!("mode,{mode}\n"));
    if let Some(eps) = p.epsilon {
        metrics.push_str(&format!("epsilon,{eps:?}\n"));
    }
    metrics.push_str(&format!("patterns,{}\n", p.correlation.count_used));
    metrics.push_str(&format!("support_width,{sw}\nsupport_height,{sh}\n"));
    metrics.push_str(&format!("best_restart,{}\n", best.restart_id));
    metrics.push_str(&format!("fourier_error,{:?}\n", best.fourier_error));
    metrics.push_str(&format!("iterations,{}\n", best.iterations_run));

    let oracle = input.join(ORACLE_OBJECT);
    let mut summary = format!("reconstructed {} (E_F {:.3e})", out.display(), best.fourier_error);
    if oracle.exists() {
        let truth = formats::read_array(&oracle)?;
        let truth = RealImage::new(truth.grid, truth.values)?;
        let a = align_and_score(&best.image, &truth)?;
        let aligned = apply_alignment(&best.image, &a);
        write_image(out, "aligned", ArrayKind::Image, &aligned, true)?;
        formats::write_pgm(&out.join("truth.pgm"), &g, truth.values())?;
        metrics.push_str(&format!(
            "shift_x,{}\nshift_y,{}\nflipped,{}\npearson,{:?}\n",
            a.shift.0, a.shift.1, a.flipped, a.pearson
        ));
        summary.push_str(&format!(", aligned Pearson {:.4}", a.pearson));
    }
    formats::write_bytes(&out.join("metrics.csv"), metrics.as_bytes())?;
    println!("{summary}");
    Ok(())
}

pub fn cmd_resolution(cfg: &RawConfig, out: &Path) -> Result<(), CliError> {
    let optical = cfg.optical()?;
    let multiples = cfg.separations()?;
    if multiples.is_empty() {
        return Err(Error::Usage("resolution.separations is empty".into()).into());
    }
    let grain = optical.speckle_grain();
    let seps: Vec<f64> = multiples.iter().map(|m| m * grain).collect();
    let results = resolution_scan(&optical, &seps, &cfg.probe_params()?)?;
    let mut csv = String::from("separation_grain,separation_m,separation_px,resolved,contrast,pearson\n");
    for (m, r) in multiples.iter().zip(&results) {
        csv.push_str(&format!(
            "{m:?},{:?},{},{},{:?},{:?}\n",
            r.separation, r.separation_px, r.resolved, r.contrast, r.pearson
        ));
    }
    formats::create_dir(out)?;
    formats::write_bytes(&out.join("resolution.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_evaluate(recon: &Path, truth: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let r = formats::read_array(recon)?;
    let t = formats::read_array(truth)?;
    if r.grid != t.grid {
        return Err(Error::Config("reconstruction and reference grids differ".into()).into());
    }
    let a = align_and_score(&RealImage::new(r.grid, r.values)?, &RealImage::new(t.grid, t.values)?)?;
    let csv = format!("shift_x,shift_y,flipped,pearson\n{},{},{},{:?}\n", a.shift.0, a.shift.1, a.flipped, a.pearson);
    if let Some(dir) = out {
        formats::create_dir(dir)?;
        formats::write_bytes(&dir.join("evaluation.csv"), csv.as_bytes())?;
    }
    print!("{csv}");
    Ok(())
}
