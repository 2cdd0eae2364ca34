use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const FAST: &[&str] = &[
    "--grid.n",
    "32",
    "--ensemble.count",
    "2048",
    "--retrieval.restarts",
    "2",
    "--retrieval.cycles",
    "2",
    "--retrieval.final-er-iterations",
    "20",
];

fn gi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gi")).args(args).output().expect("gi runs")
}

fn gi_ok(args: &[&str]) -> Output {
    let o = gi(args);
    assert!(o.status.success(), "gi {args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn with_fast<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(FAST.iter().copied()).collect()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let out = dir.to_str().unwrap();
    let mut args = with_fast(&["simulate", "--out", out]);
    args.extend_from_slice(extra);
    gi_ok(&args);
}

fn metric(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in metrics"))
}

#[test]
fn simulate_writes_measurement_and_oracles() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("sim");
    simulate(&d, &[]);
    for f in ["measurement.cfg", "buckets.csv", "oracle-object.f64", "oracle-object.pgm", "oracle-psf.f64", "oracle-psf.pgm"] {
        assert!(d.join(f).is_file(), "{f} missing");
    }
    let csv = fs::read_to_string(d.join("buckets.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("j,value"));
    assert_eq!(lines.count(), 2048);
    let cfg = fs::read_to_string(d.join("measurement.cfg")).unwrap();
    assert!(cfg.contains("grid.n = 32"));
    assert!(cfg.contains("ensemble.count = 2048"));
}

#[test]
fn default_run_has_one_row_per_pattern() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("sim");
    gi_ok(&["simulate", "--out", d.to_str().unwrap(), "--grid.n", "32"]);
    let csv = fs::read_to_string(d.join("buckets.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + (1 << 14));
}

#[test]
fn reconstruct_writes_every_panel_in_both_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    for mode in ["paper-faithful", "compensated"] {
        let out = tmp.path().join(mode);
        gi_ok(&[
            "reconstruct",
            "--input",
            sim.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--compensation.mode",
            mode,
        ]);
        for f in [
            "correlation.f64",
            "correlation.pgm",
            "spectrum.f64",
            "spectrum.pgm",
            "target.f64",
            "target.pgm",
            "support.pgm",
            "reconstruction.f64",
            "reconstruction.pgm",
            "aligned.f64",
            "aligned.pgm",
            "truth.pgm",
            "trace.csv",
            "metrics.csv",
        ] {
            assert!(out.join(f).is_file(), "{mode}: {f} missing");
        }
        assert_eq!(metric(&out, "mode"), mode);
        let pearson: f64 = metric(&out, "pearson").parse().unwrap();
        assert!((-1.0..=1.0).contains(&pearson));
        let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
        // 2 restarts x (2 x (40 + 10) + 20) iterations.
        assert_eq!(trace.lines().count(), 1 + 2 * 120);
    }
    assert!(fs::read_to_string(tmp.path().join("compensated/metrics.csv")).unwrap().contains("epsilon,"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, &["--noise.model", "poisson", "--workers", "1"]);
    simulate(&b, &["--noise.model", "poisson", "--workers", "2"]);
    for f in ["buckets.csv", "oracle-psf.f64", "measurement.cfg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seeds_change_the_buckets() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, &[]);
    simulate(&b, &["--ensemble.seed", "2"]);
    assert_ne!(fs::read(a.join("buckets.csv")).unwrap(), fs::read(b.join("buckets.csv")).unwrap());
}

#[test]
fn evaluate_scores_an_array_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    let obj = sim.join("oracle-object.f64");
    let o = gi_ok(&["evaluate", "--recon", obj.to_str().unwrap(), "--truth", obj.to_str().unwrap()]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("shift_x,shift_y,flipped,pearson"));
    assert_eq!(text.lines().nth(1), Some("0,0,false,1.0"));
}

#[test]
fn resolution_scan_writes_one_row_per_separation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("res");
    let mut args = with_fast(&["resolution", "--out", out.to_str().unwrap()]);
    args.extend_from_slice(&["--resolution.separations", "1,3"]);
    gi_ok(&args);
    let csv = fs::read_to_string(out.join("resolution.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("separation_grain,separation_m,separation_px,resolved,contrast,pearson"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn empty_separation_list_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("res");
    let o = gi(&["resolution", "--out", out.to_str().unwrap(), "--resolution.separations", ""]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_overrides_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# small run\ngrid.n = 32\nensemble.count = 100\nensemble.seed = 9\n").unwrap();
    let out = tmp.path().join("sim");
    gi_ok(&["simulate", "--out", out.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--ensemble.count=50"]);
    let text = fs::read_to_string(out.join("measurement.cfg")).unwrap();
    assert!(text.contains("ensemble.count = 50"));
    assert!(text.contains("ensemble.seed = 9"));
    assert_eq!(fs::read_to_string(out.join("buckets.csv")).unwrap().lines().count(), 51);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = out.to_str().unwrap();
    let missing = tmp.path().join("nothing");
    let code = |args: &[&str]| gi(args).status.code();

    assert_eq!(code(&["simulate", "--out", o, "--ensemble.count", "0"]), Some(2));
    assert_eq!(code(&["simulate", "--out", o, "--optical.case", "mirror"]), Some(2));
    assert_eq!(code(&["simulate", "--out", o, "--workers", "0"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["reconstruct", "--input", missing.to_str().unwrap(), "--out", o]), Some(3));

    let bad_cfg = tmp.path().join("bad.cfg");
    fs::write(&bad_cfg, "grid.n = 32\nthis line is wrong\n").unwrap();
    assert_eq!(code(&["simulate", "--out", o, "--config", bad_cfg.to_str().unwrap()]), Some(3));

    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    fs::write(sim.join("buckets.csv"), "j,value\n0,1.0\n1,oops\n").unwrap();
    assert_eq!(code(&["reconstruct", "--input", sim.to_str().unwrap(), "--out", o]), Some(3));
}

#[test]
fn truncated_bucket_file_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, &[]);
    let csv = fs::read_to_string(sim.join("buckets.csv")).unwrap();
    let short: String = csv.lines().take(100).map(|l| format!("{l}\n")).collect();
    fs::write(sim.join("buckets.csv"), short).unwrap();
    let out = tmp.path().join("rec");
    let o = gi(&["reconstruct", "--input", sim.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn help_succeeds() {
    let o = gi_ok(&["--help"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for sub in ["simulate", "reconstruct", "resolution", "evaluate"] {
        assert!(text.contains(sub), "{sub}");
    }
}
