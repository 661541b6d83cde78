//! Traditional time-gated readout.
//!
//! A gate sums the counts of a contiguous window of bins. Against the gated sums
//! `L0` (bright, p = 1) and `L1` (dark, p = 0) of two boundary traces, a gated sum
//! `x` maps to `p = (x - L1) / (L0 - L1)` with Poisson variance `x / (L0 - L1)^2`.

use crate::error::{Error, Result};
use crate::trace::{EmissionProfile, TimeTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GateWindow {
    pub start_bin: usize,
    pub width_bins: usize,
}

impl GateWindow {
    pub fn new(start_bin: usize, width_bins: usize) -> Result<Self> {
        if width_bins == 0 {
            return Err(Error::param("width_bins", "must be at least 1"));
        }
        Ok(Self {
            start_bin,
            width_bins,
        })
    }

    pub fn end_bin(&self) -> usize {
        self.start_bin + self.width_bins
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start_bin..self.end_bin()
    }

    pub fn check_fits(&self, bins: usize) -> Result<()> {
        if self.width_bins == 0 || self.end_bin() > bins {
            return Err(Error::Shape(format!(
                "gate [{}, {}) does not fit a trace of {bins} bins",
                self.start_bin,
                self.end_bin()
            )));
        }
        Ok(())
    }
}

/// One row of a gate-width sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateMetrics {
    pub window: GateWindow,
    pub l0: f64,
    pub l1: f64,
    /// NaN when `degenerate`.
    pub contrast: f64,
    /// NaN when `degenerate`.
    pub total_variance: f64,
    /// Set when the boundary sums at this width do not satisfy `L0 > L1 >= 0`.
    pub degenerate: bool,
}

impl GateMetrics {
    pub fn from_sums(window: GateWindow, l0: f64, l1: f64) -> Self {
        let degenerate = !(l0 > l1 && l1 >= 0.0);
        let (contrast, total_variance) = if degenerate {
            (f64::NAN, f64::NAN)
        } else {
            ((l0 - l1) / l0, (l0 + l1) / (2.0 * (l0 - l1).powi(2)))
        };
        Self {
            window,
            l0,
            l1,
            contrast,
            total_variance,
            degenerate,
        }
    }
}

pub fn gate_sum(trace: &TimeTrace, window: GateWindow) -> Result<f64> {
    window.check_fits(trace.len())?;
    Ok(trace.counts()[window.range()].iter().sum::<u64>() as f64)
}

pub fn gate_sum_values(values: &[f64], window: GateWindow) -> Result<f64> {
    window.check_fits(values.len())?;
    Ok(values[window.range()].iter().sum())
}

/// Gated population estimate and its Poisson variance. `x_sum`, `l0` and `l1`
/// must refer to the same number of repetitions. The estimate is not clipped.
pub fn gated_population(x_sum: f64, l0: f64, l1: f64) -> Result<(f64, f64)> {
    if !(l0 > l1) {
        return Err(Error::DegenerateBoundary { l0, l1 });
    }
    if !(x_sum >= 0.0) {
        return Err(Error::Domain(format!("gated sum {x_sum} is negative")));
    }
    let span = l0 - l1;
    Ok(((x_sum - l1) / span, x_sum / (span * span)))
}

/// Signal contrast `(L0 - L1) / L0`.
pub fn contrast(l0: f64, l1: f64) -> Result<f64> {
    if !(l0 > 0.0) {
        return Err(Error::DegenerateBoundary { l0, l1 });
    }
    Ok((l0 - l1) / l0)
}

/// Gated variance integrated over populations in [0, 1]: `(L0 + L1) / (2 (L0 - L1)^2)`.
pub fn total_variance(l0: f64, l1: f64) -> Result<f64> {
    if !(l0 > l1) {
        return Err(Error::DegenerateBoundary { l0, l1 });
    }
    Ok((l0 + l1) / (2.0 * (l0 - l1).powi(2)))
}

/// Boundary sums of one gate, tied to the repetition count they were measured at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateCalibration {
    pub window: GateWindow,
    pub l0: f64,
    pub l1: f64,
    pub repetitions: f64,
}

impl GateCalibration {
    pub fn new(window: GateWindow, l0: f64, l1: f64, repetitions: f64) -> Result<Self> {
        if !(l0 > l1) {
            return Err(Error::DegenerateBoundary { l0, l1 });
        }
        if !(repetitions > 0.0) {
            return Err(Error::param("repetitions", "must be positive"));
        }
        Ok(Self {
            window,
            l0,
            l1,
            repetitions,
        })
    }

    pub fn from_metrics(metrics: &GateMetrics, repetitions: f64) -> Result<Self> {
        Self::new(metrics.window, metrics.l0, metrics.l1, repetitions)
    }

    /// Boundary sums rescaled to `repetitions` measurements.
    pub fn sums_at(&self, repetitions: f64) -> (f64, f64) {
        if repetitions == self.repetitions {
            (self.l0, self.l1)
        } else {
            let s = repetitions / self.repetitions;
            (self.l0 * s, self.l1 * s)
        }
    }

    /// `(p, sigma_p^2)` for a trace, rescaling the boundary sums to the trace's repetitions.
    pub fn population(&self, trace: &TimeTrace) -> Result<(f64, f64)> {
        let x = gate_sum(trace, self.window)?;
        let (l0, l1) = self.sums_at(trace.repetitions() as f64);
        gated_population(x, l0, l1)
    }

    pub fn contrast(&self) -> f64 {
        (self.l0 - self.l1) / self.l0
    }

    pub fn total_variance(&self) -> f64 {
        (self.l0 + self.l1) / (2.0 * (self.l0 - self.l1).powi(2))
    }
}

/// Gate metrics for every width at a fixed start bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<GateMetrics>,
    /// Repetition count the `l0`/`l1` sums refer to.
    pub repetitions: f64,
    pub bin_width_ns: f64,
    argmax_contrast: Option<usize>,
    argmin_variance: Option<usize>,
}

impl SweepResult {
    pub fn max_contrast(&self) -> Option<&GateMetrics> {
        self.argmax_contrast.map(|i| &self.rows[i])
    }

    pub fn min_variance(&self) -> Option<&GateMetrics> {
        self.argmin_variance.map(|i| &self.rows[i])
    }

    pub fn max_contrast_calibration(&self) -> Result<GateCalibration> {
        let m = self
            .max_contrast()
            .ok_or_else(|| Error::Domain("every gate width is degenerate".into()))?;
        GateCalibration::from_metrics(m, self.repetitions)
    }

    pub fn min_variance_calibration(&self) -> Result<GateCalibration> {
        let m = self
            .min_variance()
            .ok_or_else(|| Error::Domain("every gate width is degenerate".into()))?;
        GateCalibration::from_metrics(m, self.repetitions)
    }

    /// Wraps precomputed rows and locates the optima; strict comparisons keep
    /// the smallest width on ties.
    pub fn from_rows(rows: Vec<GateMetrics>, repetitions: f64, bin_width_ns: f64) -> Self {
        let mut argmax_contrast: Option<usize> = None;
        let mut argmin_variance: Option<usize> = None;
        for (i, r) in rows.iter().enumerate() {
            if r.degenerate {
                continue;
            }
            if argmax_contrast.is_none_or(|j| r.contrast > rows[j].contrast) {
                argmax_contrast = Some(i);
            }
            if argmin_variance.is_none_or(|j| r.total_variance < rows[j].total_variance) {
                argmin_variance = Some(i);
            }
        }
        Self {
            rows,
            repetitions,
            bin_width_ns,
            argmax_contrast,
            argmin_variance,
        }
    }

    pub fn degenerate_count(&self) -> usize {
        self.rows.iter().filter(|r| r.degenerate).count()
    }
}

/// Sweeps widths `1..=N - start_bin` over two count vectors at a common repetition count.
pub fn sweep_values(
    counts0: &[f64],
    counts1: &[f64],
    start_bin: usize,
    repetitions: f64,
    bin_width_ns: f64,
) -> Result<SweepResult> {
    if counts0.len() != counts1.len() {
        return Err(Error::Shape(format!(
            "boundary traces have {} and {} bins",
            counts0.len(),
            counts1.len()
        )));
    }
    let n = counts0.len();
    if start_bin >= n {
        return Err(Error::Shape(format!(
            "start bin {start_bin} outside a trace of {n} bins"
        )));
    }
    let mut rows = Vec::with_capacity(n - start_bin);
    let (mut l0, mut l1) = (0.0, 0.0);
    for i in start_bin..n {
        l0 += counts0[i];
        l1 += counts1[i];
        let window = GateWindow {
            start_bin,
            width_bins: i - start_bin + 1,
        };
        rows.push(GateMetrics::from_sums(window, l0, l1));
    }
    Ok(SweepResult::from_rows(rows, repetitions, bin_width_ns))
}

/// Gate sweep over measured boundary traces; the dark trace is rescaled to the
/// repetition count of the bright one.
pub fn sweep_gate(trace0: &TimeTrace, trace1: &TimeTrace, start_bin: usize) -> Result<SweepResult> {
    trace0.check_compatible(trace1)?;
    let reps = trace0.repetitions();
    let c0 = trace0.counts_at(reps);
    let c1 = trace1.counts_at(reps);
    sweep_values(&c0, &c1, start_bin, reps as f64, trace0.bin_width_ns())
}

/// Gate sweep over noiseless expected counts at `repetitions` measurements.
pub fn sweep_expected(
    profile0: &EmissionProfile,
    profile1: &EmissionProfile,
    repetitions: f64,
    start_bin: usize,
) -> Result<SweepResult> {
    if profile0.bin_width_ns() != profile1.bin_width_ns() {
        return Err(Error::Shape("profiles have different bin widths".into()));
    }
    sweep_values(
        &profile0.expected_counts(repetitions),
        &profile1.expected_counts(repetitions),
        start_bin,
        repetitions,
        profile0.bin_width_ns(),
    )
}
