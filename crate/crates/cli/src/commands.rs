use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use spin_readout::eval::{self, boundary_contrast};
use spin_readout::gate::{sweep_gate, GateCalibration};
use spin_readout::io;
use spin_readout::rabi::{self, RabiCurve};
use spin_readout::regression::{self, predict as predict_one, prediction_variance};
use spin_readout::trace::{derive_seed, make_profiles, simulate_trace};
use spin_readout::{RabiDataset, ReadoutModel, TimeTrace};

use crate::config::{parse_reps, preset, reps_from_f64, RunConfig, TrainFlags};

/// Invalid combination of flags; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn name(path: &Path) -> String {
    path.display().to_string()
}

/// Final path component, so outputs do not depend on where inputs live.
fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| name(path), |f| f.to_string_lossy().into_owned())
}

fn load_trace(path: &Path) -> anyhow::Result<TimeTrace> {
    Ok(io::read_trace(
        &io::read_file(path).with_context(|| name(path))?,
        &name(path),
    )?)
}

fn load_rabi(path: &Path) -> anyhow::Result<RabiDataset> {
    Ok(io::read_rabi(
        &io::read_file(path).with_context(|| name(path))?,
        &name(path),
    )?)
}

fn load_model(path: &Path) -> anyhow::Result<ReadoutModel> {
    Ok(io::read_model(
        &io::read_file(path).with_context(|| name(path))?,
        &name(path),
    )?)
}

fn save(path: &Path, contents: &str) -> anyhow::Result<()> {
    io::write_file(path, contents).with_context(|| format!("writing {}", name(path)))
}

fn absolute(path: &Path) -> PathBuf {
    path.canonicalize()
        .or_else(|_| std::path::absolute(path))
        .unwrap_or_else(|_| path.to_path_buf())
}

/// Refuses to write over any input file or to write two outputs to one path.
fn ensure_distinct(inputs: &[&Path], outputs: &[&Path]) -> anyhow::Result<()> {
    let ins: Vec<PathBuf> = inputs.iter().map(|p| absolute(p)).collect();
    let mut outs: Vec<PathBuf> = Vec::new();
    for o in outputs {
        let a = absolute(o);
        if ins.contains(&a) {
            return Err(usage(format!(
                "output {} would overwrite an input file",
                name(o)
            )));
        }
        if outs.contains(&a) {
            return Err(usage(format!("output {} given twice", name(o))));
        }
        outs.push(a);
    }
    Ok(())
}

fn meta(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

#[derive(Debug, Clone, Args)]
pub struct BoundaryFiles {
    /// Bright-state (population 1) boundary trace.
    #[arg(long)]
    pub bright: Option<PathBuf>,
    /// Dark-state (population 0) boundary trace.
    #[arg(long)]
    pub dark: Option<PathBuf>,
}

impl BoundaryFiles {
    fn paths(&self) -> Vec<&Path> {
        self.bright
            .iter()
            .chain(&self.dark)
            .map(PathBuf::as_path)
            .collect()
    }

    fn load(&self) -> anyhow::Result<Option<(TimeTrace, TimeTrace)>> {
        match (&self.bright, &self.dark) {
            (Some(b), Some(d)) => Ok(Some((load_trace(b)?, load_trace(d)?))),
            (None, None) => Ok(None),
            _ => Err(usage("--bright and --dark must be given together")),
        }
    }

    fn require(&self) -> anyhow::Result<(TimeTrace, TimeTrace)> {
        self.load()?
            .ok_or_else(|| usage("boundary traces required: pass --bright and --dark"))
    }
}

/// Max-contrast and min-variance gates from labelled boundaries, plus their
/// full-window contrast. Swapped labels are warned about and the gates are
/// computed with the brighter trace as the bright boundary.
fn boundary_gates(
    bright: &TimeTrace,
    dark: &TimeTrace,
    start_bin: usize,
) -> anyhow::Result<(GateCalibration, GateCalibration, f64)> {
    let c = boundary_contrast(bright, dark)?;
    let sweep = if c < 0.0 {
        warn(&format!(
            "negative contrast {c:.4} between the bright and dark boundary traces; the labels look swapped"
        ));
        sweep_gate(dark, bright, start_bin)?
    } else {
        sweep_gate(bright, dark, start_bin)?
    };
    Ok((
        sweep.max_contrast_calibration()?,
        sweep.min_variance_calibration()?,
        c,
    ))
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimulateKind {
    Boundary,
    Rabi,
    Both,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// paper-like (default) or uncalibrated.
    #[arg(long)]
    preset: Option<String>,
    /// Repetitions per trace, e.g. 1e6 (default 1e6).
    #[arg(long, value_parser = parse_reps)]
    reps: Option<u64>,
    /// Repetitions per Rabi trace (default: --reps).
    #[arg(long, value_parser = parse_reps)]
    rabi_reps: Option<u64>,
    /// Base seed; every trace seed is derived from it (default 1).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SimulateKind::Both)]
    kind: SimulateKind,
    /// Number of Rabi pulse durations (default 60).
    #[arg(long)]
    rabi_points: Option<usize>,
    #[arg(long)]
    rabi_start_ns: Option<f64>,
    /// Pulse-duration step (default 10 ns).
    #[arg(long)]
    rabi_step_ns: Option<f64>,
    /// Period of the simulated oscillation (default 200 ns).
    #[arg(long)]
    rabi_period_ns: Option<f64>,
    /// Output directory; receives bright.csv, dark.csv, rabi.csv and rabi_truth.csv.
    #[arg(long, short)]
    out: PathBuf,
}

pub fn simulate(a: &SimulateArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let s = &cfg.simulate;
    let preset_name = a
        .preset
        .clone()
        .or(s.preset.clone())
        .unwrap_or_else(|| "paper-like".into());
    let params = cfg
        .physics
        .apply(preset(&preset_name).map_err(|e| usage(e.to_string()))?);
    let reps = match (a.reps, s.reps) {
        (Some(r), _) => r,
        (None, Some(r)) => reps_from_f64(r).map_err(|e| usage(format!("simulate.reps: {e}")))?,
        (None, None) => 1_000_000,
    };
    let rabi_reps = match (a.rabi_reps, s.rabi_reps) {
        (Some(r), _) => r,
        (None, Some(r)) => {
            reps_from_f64(r).map_err(|e| usage(format!("simulate.rabi_reps: {e}")))?
        }
        (None, None) => reps,
    };
    let seed = a.seed.or(s.seed).unwrap_or(1);
    let (p0, p1) = make_profiles(&params)?;
    std::fs::create_dir_all(&a.out).with_context(|| name(&a.out))?;
    let provenance = meta(&[
        ("preset", preset_name.clone()),
        ("base_seed", seed.to_string()),
    ]);

    if a.kind != SimulateKind::Rabi {
        let bright = simulate_trace(&p0, reps, derive_seed(seed, 0))?.with_label("bright");
        let dark = simulate_trace(&p1, reps, derive_seed(seed, 1))?.with_label("dark");
        save(
            &a.out.join("bright.csv"),
            &io::write_trace(&bright, &provenance),
        )?;
        save(
            &a.out.join("dark.csv"),
            &io::write_trace(&dark, &provenance),
        )?;
        println!(
            "boundary traces: {} repetitions, {} bins",
            reps,
            bright.len()
        );
    }
    if a.kind != SimulateKind::Boundary {
        let r = &cfg.rabi;
        let count = a.rabi_points.or(r.points).unwrap_or(60);
        let start = a.rabi_start_ns.or(r.start_ns).unwrap_or(0.0);
        let step = a.rabi_step_ns.or(r.step_ns).unwrap_or(10.0);
        let curve = RabiCurve {
            period_ns: a.rabi_period_ns.or(r.period_ns).unwrap_or(200.0),
            ..RabiCurve::default()
        };
        if !(curve.period_ns > 0.0) || !(step > 0.0) {
            return Err(usage("Rabi period and step must be positive"));
        }
        let durations = rabi::durations(count, start, step);
        let rabi_seed = derive_seed(seed, 2);
        let (ds, truth) = rabi::simulate_rabi(&p0, &p1, &curve, &durations, rabi_reps, rabi_seed)?;
        let mut m = provenance.clone();
        m.push(("seed".into(), rabi_seed.to_string()));
        m.push(("period_ns".into(), format!("{}", curve.period_ns)));
        save(&a.out.join("rabi.csv"), &io::write_rabi(&ds, &m))?;
        save(
            &a.out.join("rabi_truth.csv"),
            &io::write_truth(&durations, &truth, &m),
        )?;
        println!("Rabi dataset: {count} points, {rabi_reps} repetitions");
    }
    Ok(())
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    boundary: BoundaryFiles,
    /// First bin of every gate (default 0).
    #[arg(long)]
    start_bin: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
}

pub fn sweep(a: &SweepArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    ensure_distinct(&a.boundary.paths(), &[&a.out])?;
    let (bright, dark) = a.boundary.require()?;
    let start = a.start_bin.or(cfg.sweep.start_bin).unwrap_or(0);
    let c = boundary_contrast(&bright, &dark)?;
    if c < 0.0 {
        warn(&format!(
            "negative contrast {c:.4}; the bright and dark labels look swapped"
        ));
    }
    let result = sweep_gate(&bright, &dark, start)?;
    let m = meta(&[
        ("bright", file_name(a.boundary.bright.as_ref().unwrap())),
        ("dark", file_name(a.boundary.dark.as_ref().unwrap())),
    ]);
    save(&a.out, &io::write_sweep(&result, &m))?;
    let bw = result.bin_width_ns;
    match (result.max_contrast(), result.min_variance()) {
        (Some(c), Some(v)) => {
            println!(
                "max contrast: width {} ns, contrast {:.4}, total variance {:.6e}",
                c.window.width_bins as f64 * bw,
                c.contrast,
                c.total_variance
            );
            println!(
                "min variance: width {} ns, contrast {:.4}, total variance {:.6e}",
                v.window.width_bins as f64 * bw,
                v.contrast,
                v.total_variance
            );
        }
        _ => warn("every gate width is degenerate"),
    }
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    Boundary,
    Rabi,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    mode: TrainMode,
    #[command(flatten)]
    boundary: BoundaryFiles,
    /// Rabi training set (rabi mode).
    #[arg(long)]
    rabi: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
    /// Model file to write.
    #[arg(long, short)]
    out: PathBuf,
}

pub fn train(a: &TrainArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let config = a
        .flags
        .resolve(&cfg.train)
        .map_err(|e| usage(e.to_string()))?;
    let model = match a.mode {
        TrainMode::Boundary => {
            if a.rabi.is_some() {
                return Err(usage("--rabi is only used with --mode rabi"));
            }
            ensure_distinct(&a.boundary.paths(), &[&a.out])?;
            let (bright, dark) = a.boundary.require()?;
            let c = boundary_contrast(&bright, &dark)?;
            if c < 0.0 {
                warn(&format!(
                    "negative contrast {c:.4}: the trace labelled bright is dimmer; the model cannot separate them"
                ));
            }
            regression::train_boundary(&bright, &dark, &config)?
        }
        TrainMode::Rabi => {
            let path = a
                .rabi
                .as_ref()
                .ok_or_else(|| usage("--mode rabi needs --rabi FILE"))?;
            if !a.boundary.paths().is_empty() {
                return Err(usage("--bright/--dark are only used with --mode boundary"));
            }
            ensure_distinct(&[path], &[&a.out])?;
            let mut ds = load_rabi(path)?;
            ds.fit_and_assign()?;
            let fit = ds.fit.expect("set by fit_and_assign");
            println!("fitted period {:.3} ns", fit.period_ns());
            regression::train_rabi(&ds, &config)?
        }
    };
    save(&a.out, &io::write_model(&model))?;
    println!("trained: {}", model.trained_on);
    if let Some(l) = &model.training_loss {
        println!(
            "loss {:.6e} (prediction {:.3e}, variance {:.6e})",
            l.total, l.prediction_term, l.variance_term
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- fit-rabi

#[derive(Debug, Args)]
pub struct FitRabiArgs {
    #[arg(long)]
    rabi: PathBuf,
    /// Calibrate the gate on boundary traces instead of on the dataset itself.
    #[command(flatten)]
    boundary: BoundaryFiles,
    #[arg(long, short)]
    out: PathBuf,
}

/// Minimum-variance gate from boundaries when given, else self-calibrated on `ds`.
fn original_gate(ds: &RabiDataset, boundary: &BoundaryFiles) -> anyhow::Result<GateCalibration> {
    match boundary.load()? {
        Some((bright, dark)) => Ok(boundary_gates(&bright, &dark, 0)?.1),
        None => Ok(ds.clone().fit_and_assign()?),
    }
}

pub fn fit_rabi(a: &FitRabiArgs) -> anyhow::Result<()> {
    let mut inputs = a.boundary.paths();
    inputs.push(&a.rabi);
    ensure_distinct(&inputs, &[&a.out])?;
    let ds = load_rabi(&a.rabi)?;
    let cal = original_gate(&ds, &a.boundary)?;
    let points = ds
        .points()
        .iter()
        .map(|p| Ok((p.duration_ns, cal.population(&p.trace)?.0)))
        .collect::<spin_readout::Result<Vec<_>>>()?;
    let fit = rabi::fit_rabi(&points)?;
    let m = meta(&[
        ("gate_start_bin", cal.window.start_bin.to_string()),
        ("gate_width_bins", cal.window.width_bins.to_string()),
    ]);
    save(&a.out, &io::write_fit_report(&points, &fit, &m))?;
    println!(
        "period {:.4} ns, amplitude {:.4}, offset {:.4}, residual rms {:.4}",
        fit.period_ns(),
        fit.amplitude,
        fit.offset,
        fit.residual_rms
    );
    Ok(())
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Trace files (repeatable).
    #[arg(long)]
    trace: Vec<PathBuf>,
    /// Rabi dataset; one prediction per duration.
    #[arg(long)]
    rabi: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

pub fn predict(a: &PredictArgs) -> anyhow::Result<()> {
    let mut inputs: Vec<&Path> = a.trace.iter().map(PathBuf::as_path).collect();
    inputs.extend(a.rabi.as_deref());
    inputs.push(&a.model);
    ensure_distinct(&inputs, &[&a.out])?;
    let model = load_model(&a.model)?;
    let mut rows = Vec::new();
    match (&a.rabi, a.trace.is_empty()) {
        (Some(path), true) => {
            for p in load_rabi(path)?.points() {
                rows.push((
                    format!("{}", p.duration_ns),
                    predict_one(&model, &p.trace)?,
                    prediction_variance(&model, &p.trace)?,
                ));
            }
        }
        (None, false) => {
            for path in &a.trace {
                let t = load_trace(path)?;
                let label = t.label.clone().unwrap_or_else(|| file_name(path));
                rows.push((
                    label,
                    predict_one(&model, &t)?,
                    prediction_variance(&model, &t)?,
                ));
            }
        }
        _ => return Err(usage("pass either --rabi FILE or one or more --trace FILE")),
    }
    save(&a.out, &io::write_predictions(&rows, &[]))?;
    println!("{} predictions", rows.len());
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Rabi test set.
    #[arg(long)]
    test: PathBuf,
    /// Gate baselines are calibrated on these boundary traces.
    #[command(flatten)]
    boundary: BoundaryFiles,
    /// Known populations of the test set; otherwise errors are taken against each method's fit.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    start_bin: Option<usize>,
    /// Report CSV.
    #[arg(long, short)]
    out: PathBuf,
    /// Text summary (also printed).
    #[arg(long)]
    summary: Option<PathBuf>,
}

pub fn evaluate(a: &EvaluateArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let mut inputs = a.boundary.paths();
    inputs.extend([a.model.as_path(), a.test.as_path()]);
    inputs.extend(a.truth.as_deref());
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.summary.as_deref());
    ensure_distinct(&inputs, &outputs)?;

    let model = load_model(&a.model)?;
    let test = load_rabi(&a.test)?;
    let (bright, dark) = a.boundary.require()?;
    let start = a.start_bin.or(cfg.sweep.start_bin).unwrap_or(0);
    let (max_c, min_v, c) = boundary_gates(&bright, &dark, start)?;
    let truth = match &a.truth {
        Some(path) => {
            let rows = io::read_truth(
                &io::read_file(path).with_context(|| name(path))?,
                &name(path),
            )?;
            if rows.iter().map(|r| r.0).ne(test.durations()) {
                bail!(spin_readout::Error::Shape(format!(
                    "{} does not list the durations of {}",
                    name(path),
                    name(&a.test)
                )));
            }
            Some(rows.into_iter().map(|r| r.1).collect::<Vec<_>>())
        }
        None => None,
    };
    let mut report = eval::evaluate(test.points(), &model, &max_c, &min_v, truth.as_deref())?;
    report.boundary_contrast = Some(c);
    if report.negative_contrast() {
        warn("evaluation ran with negative boundary contrast; check the bright/dark labels");
    }
    save(&a.out, &io::write_eval(&report, &[]))?;
    let summary = report.summary();
    if let Some(path) = &a.summary {
        save(path, &summary)?;
    }
    print!("{summary}");
    Ok(())
}

// ---------------------------------------------------------------- repair

#[derive(Debug, Args)]
pub struct RepairArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rabi: PathBuf,
    /// Calibrate the original gate on boundary traces.
    #[command(flatten)]
    boundary: BoundaryFiles,
    /// Calibrate the original gate on another Rabi dataset (e.g. the training set).
    #[arg(long)]
    calibrate_from: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

pub fn repair(a: &RepairArgs, _cfg: &RunConfig) -> anyhow::Result<()> {
    let mut inputs = a.boundary.paths();
    inputs.extend([a.model.as_path(), a.rabi.as_path()]);
    inputs.extend(a.calibrate_from.as_deref());
    ensure_distinct(&inputs, &[&a.out])?;
    if a.calibrate_from.is_some() && !a.boundary.paths().is_empty() {
        return Err(usage("use either --calibrate-from or --bright/--dark"));
    }
    let model = load_model(&a.model)?;
    let ds = load_rabi(&a.rabi)?;
    let cal = match &a.calibrate_from {
        Some(path) => load_rabi(path)?.fit_and_assign()?,
        None => original_gate(&ds, &a.boundary)?,
    };
    let result = eval::repair(&ds, &model, &cal)?;
    let m = meta(&[
        ("gate_start_bin", cal.window.start_bin.to_string()),
        ("gate_width_bins", cal.window.width_bins.to_string()),
    ]);
    save(&a.out, &io::write_repair(&result, &m))?;
    println!(
        "contrast: original {:.4}, repaired {:.4}",
        result.original_contrast(),
        result.repaired_contrast()
    );
    Ok(())
}
