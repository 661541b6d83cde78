//! Plain-text file formats.
//!
//! Tables are CSV with `# key=value` comment lines carrying metadata; the first
//! comment of every file names its schema (`# format=trace v1`). Numbers are
//! written with the shortest decimal that round-trips, so a file read and
//! written again is byte-identical. Unknown metadata keys are ignored on read.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{EvalReport, MethodRecord, MseReference, Repair, RepairPoint};
use crate::gate::{GateMetrics, GateWindow, SweepResult};
use crate::rabi::{RabiDataset, RabiPoint, SinusoidFit};
use crate::regression::{LossBreakdown, ReadoutModel};
use crate::trace::{TimeTrace, DEFAULT_BIN_WIDTH_NS};

/// Schema names and versions of every file this module reads and writes.
pub const SCHEMAS: &[(&str, u32)] = &[
    ("trace", 1),
    ("rabi", 1),
    ("truth", 1),
    ("model", 1),
    ("sweep", 1),
    ("fit", 1),
    ("repair", 1),
    ("eval", 1),
    ("predictions", 1),
];

/// Extra `# key=value` provenance lines (seeds, presets) written after the schema line.
pub type Meta = [(String, String)];

fn schema_version(name: &str) -> u32 {
    SCHEMAS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, v)| *v)
        .expect("schema is registered")
}

pub fn read_file(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    Ok(std::fs::write(path, contents)?)
}

/// Shortest round-trip decimal.
fn num(x: f64) -> String {
    format!("{x}")
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn header(out: &mut String, schema: &str, meta: &Meta) {
    let _ = writeln!(out, "# format={schema} v{}", schema_version(schema));
    for (k, v) in meta {
        let _ = writeln!(out, "# {}={}", one_line(k), one_line(v));
    }
}

// ---------------------------------------------------------------- parsing

struct Table<'a> {
    source: &'a str,
    meta: Vec<(usize, &'a str, &'a str)>,
    rows: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Table<'a> {
    fn parse(text: &'a str, source: &'a str, schema: &str, columns: &[&str]) -> Result<Self> {
        let mut meta = Vec::new();
        let mut rows = Vec::new();
        let mut header_seen = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    meta.push((line_no, k.trim(), v.trim()));
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !header_seen {
                if fields != columns {
                    return Err(parse_err(
                        source,
                        line_no,
                        format!("expected header `{}`, found `{line}`", columns.join(",")),
                    ));
                }
                header_seen = true;
                continue;
            }
            if fields.len() != columns.len() {
                return Err(parse_err(
                    source,
                    line_no,
                    format!("expected {} fields, found {}", columns.len(), fields.len()),
                ));
            }
            rows.push((line_no, fields));
        }
        if !header_seen {
            return Err(parse_err(
                source,
                text.lines().count().max(1),
                "missing header row".into(),
            ));
        }
        let table = Self { source, meta, rows };
        table.check_schema(schema)?;
        Ok(table)
    }

    fn check_schema(&self, schema: &str) -> Result<()> {
        check_schema(self.source, self.get("format"), schema)
    }

    fn get(&self, key: &str) -> Option<(usize, &'a str)> {
        // Last occurrence wins so typed fields override provenance lines.
        self.meta
            .iter()
            .rev()
            .find(|(_, k, _)| *k == key)
            .map(|&(l, _, v)| (l, v))
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        match self.get(key) {
            Some((line, v)) => field(self.source, line, key, v),
            None => Err(parse_err(
                self.source,
                1,
                format!("missing `# {key}=` header line"),
            )),
        }
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|(line, v)| field(self.source, line, key, v))
            .transpose()
    }
}

fn check_schema(source: &str, found: Option<(usize, &str)>, schema: &str) -> Result<()> {
    let Some((line, value)) = found else {
        return Ok(());
    };
    let expected = schema_version(schema);
    let ok = value
        .split_once(" v")
        .filter(|(name, _)| *name == schema)
        .and_then(|(_, v)| v.parse::<u32>().ok())
        .is_some_and(|v| v <= expected);
    if ok {
        Ok(())
    } else {
        Err(parse_err(
            source,
            line,
            format!("expected format `{schema} v{expected}` or older, found `{value}`"),
        ))
    }
}

fn parse_err(source: &str, line: usize, message: String) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        line,
        message,
    }
}

fn field<T: FromStr>(source: &str, line: usize, name: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        parse_err(
            source,
            line,
            format!("invalid {name} `{value}` (expected {})", type_hint::<T>()),
        )
    })
}

fn type_hint<T>() -> &'static str {
    let name = std::any::type_name::<T>();
    if name.contains("u64") || name.contains("usize") || name.contains("u32") {
        "a nonnegative integer"
    } else if name.contains("f64") {
        "a number"
    } else if name.contains("bool") {
        "true or false"
    } else {
        "a valid value"
    }
}

fn flag(source: &str, line: usize, name: &str, value: &str) -> Result<bool> {
    match value {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(parse_err(
            source,
            line,
            format!("invalid {name} `{value}` (expected 0 or 1)"),
        )),
    }
}

// ---------------------------------------------------------------- traces

const TRACE_COLUMNS: &[&str] = &["bin_index", "counts"];

pub fn write_trace(trace: &TimeTrace, meta: &Meta) -> String {
    let mut out = String::new();
    header(&mut out, "trace", meta);
    let _ = writeln!(out, "# repetitions={}", trace.repetitions());
    let _ = writeln!(out, "# bin_width_ns={}", num(trace.bin_width_ns()));
    if let Some(label) = &trace.label {
        let _ = writeln!(out, "# label={}", one_line(label));
    }
    if let Some(seed) = trace.seed {
        let _ = writeln!(out, "# seed={seed}");
    }
    out += &TRACE_COLUMNS.join(",");
    out.push('\n');
    for (i, c) in trace.counts().iter().enumerate() {
        let _ = writeln!(out, "{i},{c}");
    }
    out
}

pub fn read_trace(text: &str, source: &str) -> Result<TimeTrace> {
    let table = Table::parse(text, source, "trace", TRACE_COLUMNS)?;
    let repetitions: u64 = table.required("repetitions")?;
    let bin_width: f64 = table
        .optional("bin_width_ns")?
        .unwrap_or(DEFAULT_BIN_WIDTH_NS);
    let mut counts = Vec::with_capacity(table.rows.len());
    for (line, f) in &table.rows {
        let index: usize = field(source, *line, "bin_index", f[0])?;
        if index != counts.len() {
            return Err(parse_err(
                source,
                *line,
                format!("expected bin_index {}, found {index}", counts.len()),
            ));
        }
        counts.push(field::<u64>(source, *line, "counts", f[1])?);
    }
    let mut trace = TimeTrace::new(counts, bin_width, repetitions)
        .map_err(|e| parse_err(source, 1, e.to_string()))?;
    trace.label = table.get("label").map(|(_, v)| v.to_string());
    trace.seed = table.optional("seed")?;
    Ok(trace)
}

// ---------------------------------------------------------------- Rabi datasets

const RABI_COLUMNS: &[&str] = &["duration_ns", "bin_index", "counts"];

pub fn write_rabi(dataset: &RabiDataset, meta: &Meta) -> String {
    let mut out = String::new();
    header(&mut out, "rabi", meta);
    let _ = writeln!(out, "# repetitions={}", dataset.repetitions());
    let _ = writeln!(out, "# bin_width_ns={}", num(dataset.bin_width_ns()));
    out += &RABI_COLUMNS.join(",");
    out.push('\n');
    for p in dataset.points() {
        let t = num(p.duration_ns);
        for (i, c) in p.trace.counts().iter().enumerate() {
            let _ = writeln!(out, "{t},{i},{c}");
        }
    }
    out
}

/// Reads a long-format Rabi file; rows are grouped by duration and points sorted
/// by duration.
pub fn read_rabi(text: &str, source: &str) -> Result<RabiDataset> {
    let table = Table::parse(text, source, "rabi", RABI_COLUMNS)?;
    let repetitions: u64 = table.required("repetitions")?;
    let bin_width: f64 = table
        .optional("bin_width_ns")?
        .unwrap_or(DEFAULT_BIN_WIDTH_NS);
    let mut groups: Vec<(f64, Vec<u64>)> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    for (line, f) in &table.rows {
        let t: f64 = field(source, *line, "duration_ns", f[0])?;
        if !t.is_finite() {
            return Err(parse_err(
                source,
                *line,
                format!("duration `{}` is not finite", f[0]),
            ));
        }
        let g = *index.entry((t + 0.0).to_bits()).or_insert_with(|| {
            groups.push((t, Vec::new()));
            groups.len() - 1
        });
        let bin: usize = field(source, *line, "bin_index", f[1])?;
        let counts = &mut groups[g].1;
        if bin != counts.len() {
            return Err(parse_err(
                source,
                *line,
                format!(
                    "duration {t}: expected bin_index {}, found {bin}",
                    counts.len()
                ),
            ));
        }
        counts.push(field::<u64>(source, *line, "counts", f[2])?);
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    let points = groups
        .into_iter()
        .map(|(duration_ns, counts)| {
            Ok(RabiPoint {
                duration_ns,
                trace: TimeTrace::new(counts, bin_width, repetitions)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .and_then(RabiDataset::new)
        .map_err(|e| parse_err(source, 1, e.to_string()))?;
    Ok(points)
}

// ---------------------------------------------------------------- ground truth

const TRUTH_COLUMNS: &[&str] = &["duration_ns", "population"];

pub fn write_truth(durations: &[f64], populations: &[f64], meta: &Meta) -> String {
    let mut out = String::new();
    header(&mut out, "truth", meta);
    out += &TRUTH_COLUMNS.join(",");
    out.push('\n');
    for (t, p) in durations.iter().zip(populations) {
        let _ = writeln!(out, "{},{}", num(*t), num(*p));
    }
    out
}

pub fn read_truth(text: &str, source: &str) -> Result<Vec<(f64, f64)>> {
    let table = Table::parse(text, source, "truth", TRUTH_COLUMNS)?;
    table
        .rows
        .iter()
        .map(|(line, f)| {
            Ok((
                field(source, *line, "duration_ns", f[0])?,
                field(source, *line, "population", f[1])?,
            ))
        })
        .collect()
}

// ---------------------------------------------------------------- models

pub fn write_model(model: &ReadoutModel) -> String {
    let mut out = String::new();
    header(&mut out, "model", &[]);
    let _ = writeln!(out, "dimension={}", model.dimension());
    let _ = writeln!(out, "bin_width_ns={}", num(model.bin_width_ns()));
    let _ = writeln!(out, "normalization={}", num(model.normalization));
    let _ = writeln!(out, "intercept={}", num(model.intercept()));
    let _ = writeln!(out, "trained_on={}", one_line(&model.trained_on));
    if let Some(l) = &model.training_loss {
        let _ = writeln!(out, "loss_weight_factor={}", num(l.weight_factor));
        let _ = writeln!(out, "loss_prediction_term={}", num(l.prediction_term));
        let _ = writeln!(out, "loss_variance_term={}", num(l.variance_term));
        let _ = writeln!(out, "loss_total={}", num(l.total));
    }
    out += "weights\n";
    for w in model.weights() {
        let _ = writeln!(out, "{}", num(*w));
    }
    out
}

pub fn read_model(text: &str, source: &str) -> Result<ReadoutModel> {
    let mut keys: Vec<(usize, &str, &str)> = Vec::new();
    let mut weights = Vec::new();
    let mut in_weights = false;
    let mut format = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                if k.trim() == "format" {
                    format = Some((line_no, v.trim()));
                }
            }
            continue;
        }
        if in_weights {
            weights.push(field::<f64>(source, line_no, "weight", line)?);
        } else if line == "weights" {
            in_weights = true;
        } else if let Some((k, v)) = line.split_once('=') {
            keys.push((line_no, k.trim(), v.trim()));
        } else {
            return Err(parse_err(
                source,
                line_no,
                format!("expected `key=value`, found `{line}`"),
            ));
        }
    }
    check_schema(source, format, "model")?;
    let last = text.lines().count().max(1);
    if !in_weights {
        return Err(parse_err(source, last, "missing `weights` section".into()));
    }
    let get = |key: &str| {
        keys.iter()
            .find(|(_, k, _)| *k == key)
            .map(|&(l, _, v)| (l, v))
    };
    let required = |key: &str| -> Result<(usize, &str)> {
        get(key).ok_or_else(|| parse_err(source, 1, format!("missing `{key}=` line")))
    };
    let num_of = |key: &str| -> Result<f64> {
        let (l, v) = required(key)?;
        field(source, l, key, v)
    };
    let (dim_line, dim) = required("dimension")?;
    let dimension: usize = field(source, dim_line, "dimension", dim)?;
    if dimension != weights.len() {
        return Err(parse_err(
            source,
            last,
            format!("dimension={dimension} but {} weights listed", weights.len()),
        ));
    }
    let mut model = ReadoutModel::new(weights, num_of("intercept")?, num_of("bin_width_ns")?)
        .map_err(|e| parse_err(source, 1, e.to_string()))?;
    model.normalization = num_of("normalization")?;
    model.trained_on = get("trained_on")
        .map(|(_, v)| v.to_string())
        .unwrap_or_default();
    if get("loss_total").is_some() {
        model.training_loss = Some(LossBreakdown {
            prediction_term: num_of("loss_prediction_term")?,
            variance_term: num_of("loss_variance_term")?,
            weight_factor: num_of("loss_weight_factor")?,
            total: num_of("loss_total")?,
        });
    }
    Ok(model)
}

// ---------------------------------------------------------------- gate sweeps

const SWEEP_COLUMNS: &[&str] = &[
    "width_bins",
    "width_ns",
    "L0",
    "L1",
    "contrast",
    "total_variance",
    "degenerate",
];

pub fn write_sweep(sweep: &SweepResult, meta: &Meta) -> String {
    let mut out = String::new();
    header(&mut out, "sweep", meta);
    let _ = writeln!(out, "# repetitions={}", num(sweep.repetitions));
    let _ = writeln!(out, "# bin_width_ns={}", num(sweep.bin_width_ns));
    let start = sweep.rows.first().map_or(0, |r| r.window.start_bin);
    let _ = writeln!(out, "# start_bin={start}");
    out += &SWEEP_COLUMNS.join(",");
    out.push('\n');
    for r in &sweep.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.window.width_bins,
            num(r.window.width_bins as f64 * sweep.bin_width_ns),
            num(r.l0),
            num(r.l1),
            num(r.contrast),
            num(r.total_variance),
            u8::from(r.degenerate)
        );
    }
    if let Some(m) = sweep.max_contrast() {
        let _ = writeln!(out, "# argmax_contrast_width_bins={}", m.window.width_bins);
    }
    if let Some(m) = sweep.min_variance() {
        let _ = writeln!(out, "# argmin_variance_width_bins={}", m.window.width_bins);
    }
    out
}

pub fn read_sweep(text: &str, source: &str) -> Result<SweepResult> {
    let table = Table::parse(text, source, "sweep", SWEEP_COLUMNS)?;
    let repetitions: f64 = table.required("repetitions")?;
    let bin_width: f64 = table.required("bin_width_ns")?;
    let start_bin: usize = table.optional("start_bin")?.unwrap_or(0);
    let mut rows = Vec::with_capacity(table.rows.len());
    for (line, f) in &table.rows {
        let width_bins: usize = field(source, *line, "width_bins", f[0])?;
        let window = GateWindow::new(start_bin, width_bins)
            .map_err(|e| parse_err(source, *line, e.to_string()))?;
        let l0: f64 = field(source, *line, "L0", f[2])?;
        let l1: f64 = field(source, *line, "L1", f[3])?;
        let degenerate = flag(source, *line, "degenerate", f[6])?;
        let row = GateMetrics::from_sums(window, l0, l1);
        if row.degenerate != degenerate {
            return Err(parse_err(
                source,
                *line,
                "degenerate flag disagrees with L0/L1".into(),
            ));
        }
        rows.push(row);
    }
    let sweep = SweepResult::from_rows(rows, repetitions, bin_width);
    for (key, found) in [
        ("argmax_contrast_width_bins", sweep.max_contrast()),
        ("argmin_variance_width_bins", sweep.min_variance()),
    ] {
        if let Some((line, v)) = table.get(key) {
            let stated: usize = field(source, line, key, v)?;
            if found.map(|m| m.window.width_bins) != Some(stated) {
                return Err(parse_err(
                    source,
                    line,
                    format!("{key}={stated} disagrees with the table rows"),
                ));
            }
        }
    }
    Ok(sweep)
}

// ---------------------------------------------------------------- fit reports

const FIT_COLUMNS: &[&str] = &["duration_ns", "p_raw", "p_fit", "residual"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitRow {
    pub duration_ns: f64,
    pub p_raw: f64,
    pub p_fit: f64,
    pub residual: f64,
}

pub fn write_fit_report(points: &[(f64, f64)], fit: &SinusoidFit, meta: &Meta) -> String {
    let mut out = String::new();
    header(&mut out, "fit", meta);
    let _ = writeln!(out, "# offset={}", num(fit.offset));
    let _ = writeln!(out, "# amplitude={}", num(fit.amplitude));
    let _ = writeln!(out, "# frequency_per_ns={}", num(fit.frequency));
    let _ = writeln!(out, "# phase={}", num(fit.phase));
    let _ = writeln!(out, "# residual_rms={}", num(fit.residual_rms));
    let _ = writeln!(out, "# period_ns={}", num(fit.period_ns()));
    out += &FIT_COLUMNS.join(",");
    out.push('\n');
    for &(t, p) in points {
        let q = fit.eval(t);
        let _ = writeln!(out, "{},{},{},{}", num(t), num(p), num(q), num(p - q));
    }
    out
}

pub fn read_fit_report(text: &str, source: &str) -> Result<(Vec<FitRow>, SinusoidFit)> {
    let table = Table::parse(text, source, "fit", FIT_COLUMNS)?;
    let fit = SinusoidFit {
        offset: table.required("offset")?,
        amplitude: table.required("amplitude")?,
        frequency: table.required("frequency_per_ns")?,
        phase: table.required("phase")?,
        residual_rms: table.required("residual_rms")?,
    };
    let rows = table
        .rows
        .iter()
        .map(|(line, f)| {
            Ok(FitRow {
                duration_ns: field(source, *line, "duration_ns", f[0])?,
                p_raw: field(source, *line, "p_raw", f[1])?,
                p_fit: field(source, *line, "p_fit", f[2])?,
                residual: field(source, *line, "residual", f[3])?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((rows, fit))
}

// ---------------------------------------------------------------- repair

const REPAIR_COLUMNS: &[&str] = &["duration_ns", "p_original", "p_repaired", "q_fit"];

pub fn write_repair(repair: &Repair, meta: &Meta) -> String {
    let mut out = String::new();
    header(&mut out, "repair", meta);
    let _ = writeln!(
        out,
        "# original_contrast={}",
        num(repair.original_contrast())
    );
    let _ = writeln!(
        out,
        "# repaired_contrast={}",
        num(repair.repaired_contrast())
    );
    out += &REPAIR_COLUMNS.join(",");
    out.push('\n');
    for p in &repair.points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            num(p.duration_ns),
            num(p.p_original),
            num(p.p_repaired),
            num(p.q_fit)
        );
    }
    out
}

pub fn read_repair(text: &str, source: &str) -> Result<Vec<RepairPoint>> {
    let table = Table::parse(text, source, "repair", REPAIR_COLUMNS)?;
    table
        .rows
        .iter()
        .map(|(line, f)| {
            Ok(RepairPoint {
                duration_ns: field(source, *line, "duration_ns", f[0])?,
                p_original: field(source, *line, "p_original", f[1])?,
                p_repaired: field(source, *line, "p_repaired", f[2])?,
                q_fit: field(source, *line, "q_fit", f[3])?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- evaluation

const EVAL_COLUMNS: &[&str] = &[
    "method",
    "avg_formula_variance",
    "empirical_mse",
    "contrast_measured",
];

pub fn write_eval(report: &EvalReport, meta: &Meta) -> String {
    let mut out = String::new();
    header(&mut out, "eval", meta);
    let _ = writeln!(out, "# points={}", report.points);
    let _ = writeln!(out, "# repetitions={}", report.repetitions);
    let _ = writeln!(out, "# mse_reference={}", report.mse_reference.as_str());
    if let Some(c) = report.boundary_contrast {
        let _ = writeln!(out, "# boundary_contrast={}", num(c));
    }
    out += &EVAL_COLUMNS.join(",");
    out.push('\n');
    for r in &report.records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.name,
            num(r.avg_formula_variance),
            num(r.empirical_mse),
            num(r.contrast_measured)
        );
    }
    for r in &report.reductions {
        let _ = writeln!(
            out,
            "# reduction {} vs {}={}",
            r.method,
            r.baseline,
            num(r.value)
        );
    }
    out
}

/// Reads an evaluation report; stored reductions must agree with the averages
/// to 1e-12.
pub fn read_eval(text: &str, source: &str) -> Result<EvalReport> {
    let table = Table::parse(text, source, "eval", EVAL_COLUMNS)?;
    let records = table
        .rows
        .iter()
        .map(|(line, f)| {
            Ok(MethodRecord {
                name: f[0].to_string(),
                avg_formula_variance: field(source, *line, "avg_formula_variance", f[1])?,
                empirical_mse: field(source, *line, "empirical_mse", f[2])?,
                contrast_measured: field(source, *line, "contrast_measured", f[3])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (ref_line, reference) = table
        .get("mse_reference")
        .ok_or_else(|| parse_err(source, 1, "missing `# mse_reference=` header line".into()))?;
    let reference: MseReference = reference
        .parse()
        .map_err(|e: Error| parse_err(source, ref_line, e.to_string()))?;
    let mut report = EvalReport::new(
        table.required("points")?,
        table.required("repetitions")?,
        reference,
        records,
    );
    report.boundary_contrast = table.optional("boundary_contrast")?;
    for &(line, key, value) in &table.meta {
        let Some(pair) = key.strip_prefix("reduction ") else {
            continue;
        };
        let stated: f64 = field(source, line, "reduction", value)?;
        let (method, baseline) = pair
            .split_once(" vs ")
            .ok_or_else(|| parse_err(source, line, format!("malformed reduction `{key}`")))?;
        match report.reduction(method, baseline) {
            Some(v) if (v - stated).abs() <= 1e-12 || (v.is_nan() && stated.is_nan()) => {}
            _ => {
                return Err(parse_err(
                    source,
                    line,
                    format!(
                        "reduction {method} vs {baseline}={stated} disagrees with the averages"
                    ),
                ))
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- predictions

const PREDICTION_COLUMNS: &[&str] = &["point", "p", "variance"];

/// One prediction per input trace; `point` is the pulse duration or the trace label.
pub fn write_predictions(rows: &[(String, f64, f64)], meta: &Meta) -> String {
    let mut out = String::new();
    header(&mut out, "predictions", meta);
    out += &PREDICTION_COLUMNS.join(",");
    out.push('\n');
    for (point, p, v) in rows {
        let _ = writeln!(
            out,
            "{},{},{}",
            one_line(point).replace(',', ";"),
            num(*p),
            num(*v)
        );
    }
    out
}

pub fn read_predictions(text: &str, source: &str) -> Result<Vec<(String, f64, f64)>> {
    let table = Table::parse(text, source, "predictions", PREDICTION_COLUMNS)?;
    table
        .rows
        .iter()
        .map(|(line, f)| {
            Ok((
                f[0].to_string(),
                field(source, *line, "p", f[1])?,
                field(source, *line, "variance", f[2])?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{evaluate, repair};
    use crate::gate::{sweep_expected, sweep_gate};
    use crate::rabi::{durations, fit_rabi, simulate_rabi, RabiCurve};
    use crate::trace::{make_profiles, simulate_trace, PhotodynamicsParams};
    use proptest::prelude::*;

    fn meta() -> Vec<(String, String)> {
        vec![("seed".to_string(), "7".to_string())]
    }

    fn boundary(reps: u64, seed: u64) -> (TimeTrace, TimeTrace) {
        let (p0, p1) = make_profiles(&PhotodynamicsParams::paper_like()).unwrap();
        (
            simulate_trace(&p0, reps, seed)
                .unwrap()
                .with_label("bright"),
            simulate_trace(&p1, reps, seed + 1).unwrap(),
        )
    }

    fn rabi_set(reps: u64, seed: u64) -> (RabiDataset, Vec<f64>) {
        let (p0, p1) = make_profiles(&PhotodynamicsParams::paper_like()).unwrap();
        simulate_rabi(
            &p0,
            &p1,
            &RabiCurve::default(),
            &durations(20, 0.0, 12.5),
            reps,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn trace_round_trip() {
        let (t, _) = boundary(1_000_000, 4);
        let text = write_trace(&t, &meta());
        let back = read_trace(&text, "t.csv").unwrap();
        assert_eq!(back, t);
        assert_eq!(write_trace(&back, &meta()), text);
    }

    #[test]
    fn trace_requires_repetitions() {
        let err = read_trace("bin_index,counts\n0,1\n", "x.csv").unwrap_err();
        assert!(err.to_string().contains("repetitions"), "{err}");
    }

    #[test]
    fn trace_rejects_fractional_counts_with_line_number() {
        let text = "# repetitions=10\nbin_index,counts\n0,1\n1,2.5\n";
        match read_trace(text, "x.csv").unwrap_err() {
            Error::Parse {
                line, source_name, ..
            } => {
                assert_eq!(line, 4);
                assert_eq!(source_name, "x.csv");
            }
            e => panic!("unexpected {e}"),
        }
        let text = "# repetitions=10\nbin_index,counts\n0,-1\n";
        assert!(matches!(
            read_trace(text, "x").unwrap_err(),
            Error::Parse { line: 3, .. }
        ));
    }

    #[test]
    fn trace_rejects_wrong_schema_and_header() {
        let text = "# format=model v1\n# repetitions=10\nbin_index,counts\n0,1\n";
        assert!(matches!(
            read_trace(text, "x").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
        let text = "# repetitions=10\nbin,count\n0,1\n";
        assert!(matches!(
            read_trace(text, "x").unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
        let text = "# repetitions=10\nbin_index,counts\n1,1\n";
        assert!(matches!(
            read_trace(text, "x").unwrap_err(),
            Error::Parse { line: 3, .. }
        ));
    }

    #[test]
    fn rabi_round_trip_and_grouping() {
        let (ds, truth) = rabi_set(100_000, 3);
        let text = write_rabi(&ds, &meta());
        let back = read_rabi(&text, "r.csv").unwrap();
        assert_eq!(back.points().len(), ds.points().len());
        for (a, b) in back.points().iter().zip(ds.points()) {
            assert_eq!(a.duration_ns, b.duration_ns);
            assert_eq!(a.trace.counts(), b.trace.counts());
        }
        assert_eq!(write_rabi(&back, &meta()), text);

        // Reversed point order still groups by duration.
        let mut lines: Vec<&str> = text.lines().collect();
        let body = lines.split_off(
            lines
                .iter()
                .position(|l| l.starts_with("duration_ns"))
                .unwrap()
                + 1,
        );
        let per_point = ds.bins();
        let mut reordered = lines.join("\n") + "\n";
        for chunk in body.chunks(per_point).rev() {
            reordered += &(chunk.join("\n") + "\n");
        }
        assert_eq!(
            write_rabi(&read_rabi(&reordered, "r").unwrap(), &meta()),
            text
        );

        let tt = write_truth(&ds.durations(), &truth, &meta());
        let back = read_truth(&tt, "truth.csv").unwrap();
        assert_eq!(back.iter().map(|p| p.1).collect::<Vec<_>>(), truth);
    }

    #[test]
    fn model_round_trip_is_byte_identical() {
        let (t0, t1) = boundary(10_000_000, 5);
        let cal = sweep_gate(&t0, &t1, 0)
            .unwrap()
            .min_variance_calibration()
            .unwrap();
        let mut model = ReadoutModel::gated_equivalent(&cal, t0.len(), 2.0).unwrap();
        model.trained_on = "test\nmultiline".into();
        model.training_loss = Some(LossBreakdown {
            prediction_term: 1e-30,
            variance_term: 0.1 + 0.2,
            weight_factor: 1e4,
            total: 0.3,
        });
        let text = write_model(&model);
        let back = read_model(&text, "m.txt").unwrap();
        assert_eq!(back.weights(), model.weights());
        assert_eq!(back.intercept(), model.intercept());
        assert_eq!(back.training_loss, model.training_loss);
        assert_eq!(write_model(&back), text);
    }

    #[test]
    fn model_rejects_dimension_mismatch() {
        let text = "dimension=3\nbin_width_ns=2\nnormalization=1\nintercept=0\nweights\n1\n2\n";
        assert!(matches!(
            read_model(text, "m").unwrap_err(),
            Error::Parse { .. }
        ));
        let text = "dimension=1\nbin_width_ns=2\nnormalization=1\nintercept=0\nweights\nabc\n";
        assert!(matches!(
            read_model(text, "m").unwrap_err(),
            Error::Parse { line: 6, .. }
        ));
    }

    #[test]
    fn sweep_round_trip() {
        let (p0, p1) = make_profiles(&PhotodynamicsParams::paper_like()).unwrap();
        let sweep = sweep_expected(&p0, &p1, 1e6, 0).unwrap();
        let text = write_sweep(&sweep, &meta());
        let back = read_sweep(&text, "s.csv").unwrap();
        assert_eq!(
            back.max_contrast().unwrap().window,
            sweep.max_contrast().unwrap().window
        );
        assert_eq!(
            back.min_variance().unwrap().window,
            sweep.min_variance().unwrap().window
        );
        assert_eq!(write_sweep(&back, &meta()), text);
        let tampered = text.replace(
            &format!(
                "argmin_variance_width_bins={}",
                sweep.min_variance().unwrap().window.width_bins
            ),
            "argmin_variance_width_bins=1",
        );
        assert!(read_sweep(&tampered, "s").is_err());
    }

    #[test]
    fn fit_repair_eval_round_trips() {
        let (t0, t1) = boundary(10_000_000, 6);
        let sweep = sweep_gate(&t0, &t1, 0).unwrap();
        let (max_c, min_v) = (
            sweep.max_contrast_calibration().unwrap(),
            sweep.min_variance_calibration().unwrap(),
        );
        let (ds, truth) = rabi_set(1_000_000, 7);
        let pts = ds.gated_signal(min_v.window).unwrap();
        let fit = fit_rabi(&pts).unwrap();
        let text = write_fit_report(&pts, &fit, &meta());
        let (rows, back) = read_fit_report(&text, "f").unwrap();
        assert_eq!(back, fit);
        assert_eq!(rows.len(), pts.len());
        assert_eq!(write_fit_report(&pts, &back, &meta()), text);

        let model = ReadoutModel::gated_equivalent(&min_v, ds.bins(), 2.0).unwrap();
        let rep = repair(&ds, &model, &min_v).unwrap();
        let text = write_repair(&rep, &meta());
        assert_eq!(read_repair(&text, "r").unwrap(), rep.points);

        let mut report = evaluate(ds.points(), &model, &max_c, &min_v, Some(&truth)).unwrap();
        report.boundary_contrast = Some(0.25);
        let text = write_eval(&report, &meta());
        let back = read_eval(&text, "e").unwrap();
        assert_eq!(back, report);
        assert_eq!(write_eval(&back, &meta()), text);
        let tampered = text.replacen(
            "# reduction weighted vs max-contrast-gate=",
            "# reduction weighted vs max-contrast-gate=9",
            1,
        );
        assert!(read_eval(&tampered, "e").is_err());

        let preds = vec![
            ("0".to_string(), 0.5, 1e-3),
            ("a,b".to_string(), 0.25, 2e-3),
        ];
        let text = write_predictions(&preds, &meta());
        let back = read_predictions(&text, "p").unwrap();
        assert_eq!(back[1].0, "a;b");
        assert_eq!(write_predictions(&back, &meta()), text);
    }

    proptest! {
        #[test]
        fn prop_trace_round_trip(
            counts in proptest::collection::vec(0u64..u64::MAX, 1..50),
            reps in 1u64..u64::MAX,
            bw in 0.001f64..1e3,
            seed in proptest::option::of(any::<u64>()),
        ) {
            let mut t = TimeTrace::new(counts, bw, reps).unwrap();
            t.seed = seed;
            let text = write_trace(&t, &[]);
            let back = read_trace(&text, "p").unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(write_trace(&back, &[]), text);
        }

        #[test]
        fn prop_model_round_trip(
            weights in proptest::collection::vec(0.0f64..1e6, 1..50),
            b in -1e3f64..1e3,
            norm in 1e-9f64..1e9,
        ) {
            let mut m = ReadoutModel::new(weights, b, 2.0).unwrap();
            m.normalization = norm;
            let text = write_model(&m);
            let back = read_model(&text, "p").unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(write_model(&back), text);
        }
    }
}
