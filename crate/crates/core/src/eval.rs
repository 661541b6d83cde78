//! Side-by-side comparison of the gated and weighted estimators on a test set.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gate::{contrast, GateCalibration};
use crate::rabi::{fit_rabi, RabiDataset, RabiPoint, SinusoidFit};
use crate::regression::{predict, prediction_variance, ReadoutModel};
use crate::stats;
use crate::trace::TimeTrace;

pub const MAX_CONTRAST_GATE: &str = "max-contrast-gate";
pub const MIN_VARIANCE_GATE: &str = "min-variance-gate";
pub const WEIGHTED: &str = "weighted";

/// What `empirical_mse` is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MseReference {
    Truth,
    Fit,
}

impl MseReference {
    pub fn as_str(&self) -> &'static str {
        match self {
            MseReference::Truth => "truth",
            MseReference::Fit => "fit",
        }
    }
}

impl std::str::FromStr for MseReference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truth" => Ok(MseReference::Truth),
            "fit" => Ok(MseReference::Fit),
            other => Err(Error::Domain(format!("unknown mse reference `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRecord {
    pub name: String,
    /// Mean of the per-point Poisson variance of the estimate.
    pub avg_formula_variance: f64,
    pub empirical_mse: f64,
    /// Peak-to-trough of the sinusoid fitted to this method's estimates (NaN if
    /// no oscillation could be fitted).
    pub contrast_measured: f64,
}

/// `1 - V_method / V_baseline` for average formula variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub method: String,
    pub baseline: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub points: usize,
    pub repetitions: u64,
    pub mse_reference: MseReference,
    pub records: Vec<MethodRecord>,
    pub reductions: Vec<Reduction>,
    /// Full-window contrast of the labelled boundary traces, when known; negative
    /// when the bright and dark labels are swapped.
    pub boundary_contrast: Option<f64>,
}

impl EvalReport {
    /// Builds a report and derives the pairwise reductions from the records.
    pub fn new(
        points: usize,
        repetitions: u64,
        mse_reference: MseReference,
        records: Vec<MethodRecord>,
    ) -> Self {
        let mut reductions = Vec::new();
        for (i, a) in records.iter().enumerate().rev() {
            for b in records[..i].iter() {
                reductions.push(Reduction {
                    method: a.name.clone(),
                    baseline: b.name.clone(),
                    value: relative_reduction(a.avg_formula_variance, b.avg_formula_variance),
                });
            }
        }
        Self {
            points,
            repetitions,
            mse_reference,
            records,
            reductions,
            boundary_contrast: None,
        }
    }

    pub fn record(&self, name: &str) -> Option<&MethodRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn reduction(&self, method: &str, baseline: &str) -> Option<f64> {
        self.reductions
            .iter()
            .find(|r| r.method == method && r.baseline == baseline)
            .map(|r| r.value)
    }

    /// Method with the lowest average formula variance.
    pub fn best_by_variance(&self) -> Option<&MethodRecord> {
        self.records.iter().reduce(|a, b| {
            if b.avg_formula_variance < a.avg_formula_variance {
                b
            } else {
                a
            }
        })
    }

    pub fn best_by_mse(&self) -> Option<&MethodRecord> {
        self.records.iter().reduce(|a, b| {
            if b.empirical_mse < a.empirical_mse {
                b
            } else {
                a
            }
        })
    }

    /// True when the boundary labels produce a negative contrast.
    pub fn negative_contrast(&self) -> bool {
        self.boundary_contrast.is_some_and(|c| c < 0.0)
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} test points at {} repetitions; mse against {}\n\n",
            self.points,
            self.repetitions,
            self.mse_reference.as_str()
        );
        out += &format!(
            "{:<20} {:>14} {:>14} {:>10}\n",
            "method", "avg variance", "mse", "contrast"
        );
        for r in &self.records {
            out += &format!(
                "{:<20} {:>14.6e} {:>14.6e} {:>10.4}\n",
                r.name, r.avg_formula_variance, r.empirical_mse, r.contrast_measured
            );
        }
        if let Some(c) = self.boundary_contrast {
            out += &format!("\nboundary contrast (full window): {c:.4}\n");
        }
        out += "\naverage variance reductions:\n";
        for r in &self.reductions {
            out += &format!(
                "  {} vs {}: {:.2}%\n",
                r.method,
                r.baseline,
                100.0 * r.value
            );
        }
        out
    }
}

pub fn relative_reduction(v: f64, baseline: f64) -> f64 {
    1.0 - v / baseline
}

/// Per-point estimates `(p, sigma^2)` of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub name: String,
    pub values: Vec<f64>,
    pub variances: Vec<f64>,
    /// Population reported for a trace with no photons.
    pub zero_signal: f64,
}

pub fn gate_estimates(
    name: &str,
    points: &[RabiPoint],
    cal: &GateCalibration,
) -> Result<Estimates> {
    let pv: Vec<(f64, f64)> = points
        .par_iter()
        .map(|p| cal.population(&p.trace))
        .collect::<Result<_>>()?;
    Ok(split(name, pv, -cal.l1 / (cal.l0 - cal.l1)))
}

pub fn model_estimates(
    name: &str,
    points: &[RabiPoint],
    model: &ReadoutModel,
) -> Result<Estimates> {
    let pv: Vec<(f64, f64)> = points
        .par_iter()
        .map(|p| {
            Ok((
                predict(model, &p.trace)?,
                prediction_variance(model, &p.trace)?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(split(name, pv, model.intercept()))
}

fn split(name: &str, pv: Vec<(f64, f64)>, zero_signal: f64) -> Estimates {
    let (values, variances) = pv.into_iter().unzip();
    Estimates {
        name: name.to_string(),
        values,
        variances,
        zero_signal,
    }
}

fn try_fit(durations: &[f64], values: &[f64]) -> Option<SinusoidFit> {
    let pts: Vec<(f64, f64)> = durations
        .iter()
        .copied()
        .zip(values.iter().copied())
        .collect();
    fit_rabi(&pts).ok()
}

fn record(est: &Estimates, durations: &[f64], truth: Option<&[f64]>) -> MethodRecord {
    let fit = try_fit(durations, &est.values);
    let empirical_mse = match (truth, &fit) {
        (Some(truth), _) => mse(&est.values, truth),
        (None, Some(fit)) => mse(
            &est.values,
            &durations.iter().map(|&t| fit.eval(t)).collect::<Vec<_>>(),
        ),
        (None, None) => f64::NAN,
    };
    MethodRecord {
        name: est.name.clone(),
        avg_formula_variance: stats::mean(&est.variances),
        empirical_mse,
        contrast_measured: fit.map_or(f64::NAN, |f| f.signal_contrast(est.zero_signal)),
    }
}

/// `(S0 - S1) / S0` over the full trace, with `S1` rescaled to the repetitions of `S0`.
pub fn boundary_contrast(trace0: &TimeTrace, trace1: &TimeTrace) -> Result<f64> {
    trace0.check_compatible(trace1)?;
    let reps = trace0.repetitions();
    let s0: f64 = trace0.counts_at(reps).iter().sum();
    let s1: f64 = trace1.counts_at(reps).iter().sum();
    contrast(s0, s1)
}

fn mse(values: &[f64], reference: &[f64]) -> f64 {
    stats::mean(
        &values
            .iter()
            .zip(reference)
            .map(|(p, q)| (p - q) * (p - q))
            .collect::<Vec<_>>(),
    )
}

/// Compares the maximum-contrast gate, the minimum-variance gate and the
/// weighted model on `points`. MSE is taken against `truth` when given, else
/// against each method's own sinusoid fit.
pub fn evaluate(
    points: &[RabiPoint],
    model: &ReadoutModel,
    max_contrast: &GateCalibration,
    min_variance: &GateCalibration,
    truth: Option<&[f64]>,
) -> Result<EvalReport> {
    if points.is_empty() {
        return Err(Error::Shape("empty test set".into()));
    }
    if let Some(truth) = truth {
        if truth.len() != points.len() {
            return Err(Error::Shape(format!(
                "{} truth values for {} test points",
                truth.len(),
                points.len()
            )));
        }
    }
    let reps = points[0].trace.repetitions();
    if points.iter().any(|p| p.trace.repetitions() != reps) {
        return Err(Error::Shape("test traces differ in repetitions".into()));
    }
    let durations: Vec<f64> = points.iter().map(|p| p.duration_ns).collect();
    let all = [
        gate_estimates(MAX_CONTRAST_GATE, points, max_contrast)?,
        gate_estimates(MIN_VARIANCE_GATE, points, min_variance)?,
        model_estimates(WEIGHTED, points, model)?,
    ];
    let records = all.iter().map(|e| record(e, &durations, truth)).collect();
    let reference = if truth.is_some() {
        MseReference::Truth
    } else {
        MseReference::Fit
    };
    Ok(EvalReport::new(points.len(), reps, reference, records))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepairPoint {
    pub duration_ns: f64,
    pub p_original: f64,
    pub p_repaired: f64,
    /// Sinusoid fitted to the repaired values, evaluated at this duration (NaN if
    /// no fit).
    pub q_fit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repair {
    pub points: Vec<RepairPoint>,
    pub original_fit: Option<SinusoidFit>,
    pub repaired_fit: Option<SinusoidFit>,
    pub original_zero: f64,
    pub repaired_zero: f64,
}

impl Repair {
    pub fn original(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.p_original).collect()
    }

    pub fn repaired(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.p_repaired).collect()
    }

    pub fn original_contrast(&self) -> f64 {
        self.original_fit
            .map_or(f64::NAN, |f| f.signal_contrast(self.original_zero))
    }

    pub fn repaired_contrast(&self) -> f64 {
        self.repaired_fit
            .map_or(f64::NAN, |f| f.signal_contrast(self.repaired_zero))
    }
}

/// Gated (`original`) and weighted-model (`repaired`) populations for every point.
pub fn repair(
    dataset: &RabiDataset,
    model: &ReadoutModel,
    original: &GateCalibration,
) -> Result<Repair> {
    let points = dataset.points();
    let orig = gate_estimates(MIN_VARIANCE_GATE, points, original)?;
    let rep = model_estimates(WEIGHTED, points, model)?;
    let durations = dataset.durations();
    let original_fit = try_fit(&durations, &orig.values);
    let repaired_fit = try_fit(&durations, &rep.values);
    let points = durations
        .iter()
        .zip(orig.values.iter().zip(&rep.values))
        .map(|(&t, (&po, &pr))| RepairPoint {
            duration_ns: t,
            p_original: po,
            p_repaired: pr,
            q_fit: repaired_fit.map_or(f64::NAN, |f| f.eval(t)),
        })
        .collect();
    Ok(Repair {
        points,
        original_fit,
        repaired_fit,
        original_zero: orig.zero_signal,
        repaired_zero: rep.zero_signal,
    })
}

/// Root-mean-square difference between two equally long sequences.
pub fn rms_error(values: &[f64], reference: &[f64]) -> f64 {
    mse(values, reference).sqrt()
}
