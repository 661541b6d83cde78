//! Rabi oscillation datasets: sinusoid fitting, regression targets and residuals.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::gate::{gate_sum, sweep_gate, GateCalibration, GateWindow};
use crate::regression::TrainingExample;
use crate::stats;
use crate::trace::{mix_profile, simulate_batch, EmissionProfile, TimeTrace};

/// Minimum number of points accepted by [`fit_rabi`].
pub const MIN_FIT_POINTS: usize = 8;
const GRID_SIZE: usize = 400;
const REFINED_STARTS: usize = 5;
/// Fitted amplitude must exceed this many of its standard errors.
pub const DETECTION_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RabiPoint {
    pub duration_ns: f64,
    pub trace: TimeTrace,
}

/// Traces ordered by microwave pulse duration, optionally with a fitted
/// sinusoid and per-point regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RabiDataset {
    points: Vec<RabiPoint>,
    pub fit: Option<SinusoidFit>,
    pub targets: Option<Vec<f64>>,
}

impl RabiDataset {
    pub fn new(points: Vec<RabiPoint>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::Shape("Rabi dataset has no points".into()))?;
        for pair in points.windows(2) {
            if !(pair[1].duration_ns > pair[0].duration_ns) {
                return Err(Error::Domain(format!(
                    "durations must increase strictly: {} then {}",
                    pair[0].duration_ns, pair[1].duration_ns
                )));
            }
        }
        for p in &points {
            first.trace.check_compatible(&p.trace)?;
            if p.trace.repetitions() != first.trace.repetitions() {
                return Err(Error::Shape(format!(
                    "point at {} ns has {} repetitions, expected {}",
                    p.duration_ns,
                    p.trace.repetitions(),
                    first.trace.repetitions()
                )));
            }
        }
        Ok(Self {
            points,
            fit: None,
            targets: None,
        })
    }

    pub fn points(&self) -> &[RabiPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.duration_ns).collect()
    }

    pub fn repetitions(&self) -> u64 {
        self.points[0].trace.repetitions()
    }

    pub fn bins(&self) -> usize {
        self.points[0].trace.len()
    }

    pub fn bin_width_ns(&self) -> f64 {
        self.points[0].trace.bin_width_ns()
    }

    /// `(duration, gated count sum)` for every point.
    pub fn gated_signal(&self, window: GateWindow) -> Result<Vec<(f64, f64)>> {
        self.points
            .iter()
            .map(|p| Ok((p.duration_ns, gate_sum(&p.trace, window)?)))
            .collect()
    }

    /// Fits the gated signal, stores the fit and the assigned targets, and
    /// returns the gate calibrated on the fitted extrema.
    ///
    /// The gate is the minimum-total-variance window between the points nearest
    /// the fitted peak and trough of the full-trace signal.
    pub fn fit_and_assign(&mut self) -> Result<GateCalibration> {
        let full = GateWindow::new(0, self.bins())?;
        let coarse = fit_rabi(&self.gated_signal(full)?)?;
        let values: Vec<f64> = self
            .points
            .iter()
            .map(|p| coarse.eval(p.duration_ns))
            .collect();
        let peak = argmax(&values);
        let trough = argmax(&values.iter().map(|v| -v).collect::<Vec<_>>());
        let window = sweep_gate(&self.points[peak].trace, &self.points[trough].trace, 0)?
            .min_variance()
            .map(|m| m.window)
            .unwrap_or(full);

        let fit = fit_rabi(&self.gated_signal(window)?)?;
        let cal = GateCalibration::new(
            window,
            fit.offset + fit.amplitude,
            fit.offset - fit.amplitude,
            self.repetitions() as f64,
        )?;
        self.targets = Some(target_values(&self.durations(), &fit)?);
        self.fit = Some(fit);
        Ok(cal)
    }

    /// Examples pairing each trace with its assigned target.
    pub fn training_examples(&self) -> Result<Vec<TrainingExample>> {
        if self.fit.is_none() {
            return Err(Error::State(
                "Rabi dataset has no sinusoid fit; run fit_rabi / fit_and_assign first".into(),
            ));
        }
        let targets = self.targets.as_ref().ok_or_else(|| {
            Error::State("Rabi dataset has no assigned targets; run assign_targets first".into())
        })?;
        self.points
            .iter()
            .zip(targets)
            .map(|(p, &q)| TrainingExample::new(p.trace.clone(), q))
            .collect()
    }
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > xs[best] { i } else { best })
}

/// `offset + amplitude * cos(2 pi frequency t + phase)`, `t` in ns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidFit {
    pub offset: f64,
    pub amplitude: f64,
    /// Cycles per ns.
    pub frequency: f64,
    /// Radians in `[0, 2 pi)`.
    pub phase: f64,
    pub residual_rms: f64,
}

impl SinusoidFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (TAU * self.frequency * t + self.phase).cos()
    }

    /// Fitted curve rescaled so its maximum maps to 1 and its minimum to 0.
    pub fn normalized(&self, t: f64) -> f64 {
        0.5 + 0.5 * (TAU * self.frequency * t + self.phase).cos()
    }

    pub fn period_ns(&self) -> f64 {
        1.0 / self.frequency
    }

    /// Fitted maximum minus fitted minimum.
    pub fn peak_to_peak(&self) -> f64 {
        2.0 * self.amplitude
    }

    /// `(peak - trough) / (peak - zero)`: the modulation fraction of a linear
    /// signal whose zero-photon reading is `zero`. NaN when the peak is not above it.
    pub fn signal_contrast(&self, zero: f64) -> f64 {
        let a = self.amplitude.abs();
        let above = self.offset + a - zero;
        if above > 0.0 {
            2.0 * a / above
        } else {
            f64::NAN
        }
    }
}

/// Least-squares fit of a four-parameter sinusoid.
///
/// Candidate frequencies come from a log-spaced grid over `[0.25, 4]` times the
/// frequency implied by the mean crossings of the data (capped at the sampling
/// Nyquist frequency). At each grid frequency offset and quadratures are solved
/// linearly; the best grid minima are then refined jointly by Levenberg-Marquardt.
/// The lowest residual wins, ties going to the lower frequency.
pub fn fit_rabi(points: &[(f64, f64)]) -> Result<SinusoidFit> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::FitFailure(format!(
            "need at least {MIN_FIT_POINTS} points, got {}",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|(t, y)| !(t.is_finite() && y.is_finite()))
    {
        return Err(Error::FitFailure("non-finite input".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ts: Vec<f64> = sorted.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = sorted.iter().map(|p| p.1).collect();
    let span = ts[ts.len() - 1] - ts[0];
    if !(span > 0.0) {
        return Err(Error::FitFailure("all points share one duration".into()));
    }

    let mean = stats::mean(&ys);
    let scale = ys.iter().fold(0.0_f64, |a, y| a.max(y.abs()));
    let crossings = ys
        .windows(2)
        .filter(|w| (w[0] - mean) * (w[1] - mean) < 0.0)
        .count();
    if crossings == 0
        || ys
            .iter()
            .all(|y| (y - mean).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE))
    {
        return Err(Error::FitFailure("no oscillation detected".into()));
    }
    let f_ref = crossings as f64 / (2.0 * span);
    let mut spacings: Vec<f64> = ts
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .collect();
    spacings.sort_by(f64::total_cmp);
    let nyquist = 0.5 / spacings[spacings.len() / 2];
    let f_lo = (0.25 * f_ref).max(0.5 / span).min(nyquist);
    let f_hi = (4.0 * f_ref).min(nyquist).max(f_lo);

    let grid: Vec<(f64, f64)> = (0..GRID_SIZE)
        .map(|k| {
            let f = f_lo * (f_hi / f_lo).powf(k as f64 / (GRID_SIZE - 1) as f64);
            (
                f,
                linear_fit(&ts, &ys, f)
                    .map(|(_, sse)| sse)
                    .unwrap_or(f64::INFINITY),
            )
        })
        .collect();
    let mut minima: Vec<usize> = (0..grid.len())
        .filter(|&k| {
            let left = k == 0 || grid[k].1 <= grid[k - 1].1;
            let right = k + 1 == grid.len() || grid[k].1 <= grid[k + 1].1;
            left && right && grid[k].1.is_finite()
        })
        .collect();
    minima.sort_by(|&a, &b| grid[a].1.total_cmp(&grid[b].1).then(a.cmp(&b)));
    minima.truncate(REFINED_STARTS);

    let mut best: Option<(f64, [f64; 4])> = None;
    for &k in &minima {
        let Some(params) = refine(&ts, &ys, grid[k].0) else {
            continue;
        };
        let sse = sum_sq(&ts, &ys, &params);
        let better = match best {
            None => true,
            Some((best_sse, best_params)) => {
                let tol = 1e-12 * best_sse.max(f64::MIN_POSITIVE);
                sse < best_sse - tol
                    || ((sse - best_sse).abs() <= tol && params[3] < best_params[3])
            }
        };
        if better {
            best = Some((sse, params));
        }
    }
    let (sse, [offset, c, s, frequency]) =
        best.ok_or_else(|| Error::FitFailure("no grid start could be refined".into()))?;

    let amplitude = c.hypot(s);
    let phase = (-s).atan2(c).rem_euclid(TAU);
    let fit = SinusoidFit {
        offset,
        amplitude,
        frequency,
        phase: if phase >= TAU { 0.0 } else { phase },
        residual_rms: (sse / ts.len() as f64).sqrt(),
    };
    // Detection threshold on the amplitude's standard error, rms * sqrt(2 / n).
    let amplitude_se = fit.residual_rms * (2.0 / ts.len() as f64).sqrt();
    if !(fit.amplitude > DETECTION_SIGMAS * amplitude_se) || fit.amplitude <= 1e-12 * scale {
        return Err(Error::FitFailure(format!(
            "no oscillation detected: amplitude {} is not above {DETECTION_SIGMAS} standard errors ({})",
            fit.amplitude, amplitude_se
        )));
    }
    Ok(fit)
}

/// Offset and quadrature amplitudes at a fixed frequency, with the residual sum of squares.
fn linear_fit(ts: &[f64], ys: &[f64], f: f64) -> Option<([f64; 3], f64)> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (&t, &y) in ts.iter().zip(ys) {
        let (sn, cs) = (TAU * f * t).sin_cos();
        let row = Vector3::new(1.0, cs, sn);
        ata += row * row.transpose();
        aty += row * y;
    }
    let sol = ata.cholesky()?.solve(&aty);
    let params = [sol[0], sol[1], sol[2], f];
    Some(([sol[0], sol[1], sol[2]], sum_sq(ts, ys, &params)))
}

fn sum_sq(ts: &[f64], ys: &[f64], p: &[f64; 4]) -> f64 {
    ts.iter()
        .zip(ys)
        .map(|(&t, &y)| {
            let (sn, cs) = (TAU * p[3] * t).sin_cos();
            (p[0] + p[1] * cs + p[2] * sn - y).powi(2)
        })
        .sum()
}

/// Levenberg-Marquardt over `(offset, c, s, frequency)`, finished by an exact
/// linear solve at the refined frequency.
fn refine(ts: &[f64], ys: &[f64], f0: f64) -> Option<[f64; 4]> {
    let (lin, _) = linear_fit(ts, ys, f0)?;
    let mut p = [lin[0], lin[1], lin[2], f0];
    let mut sse = sum_sq(ts, ys, &p);
    let mut damping = 1e-3;
    for _ in 0..200 {
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&t, &y) in ts.iter().zip(ys) {
            let (sn, cs) = (TAU * p[3] * t).sin_cos();
            let r = p[0] + p[1] * cs + p[2] * sn - y;
            let row = Vector4::new(1.0, cs, sn, TAU * t * (p[2] * cs - p[1] * sn));
            jtj += row * row.transpose();
            jtr += row * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut lhs = jtj;
            for d in 0..4 {
                lhs[(d, d)] += damping * jtj[(d, d)].max(1e-300);
            }
            let Some(chol) = lhs.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-jtr));
            let trial = [
                p[0] + delta[0],
                p[1] + delta[1],
                p[2] + delta[2],
                p[3] + delta[3],
            ];
            let trial_sse = sum_sq(ts, ys, &trial);
            if trial[3] > 0.0 && trial_sse < sse {
                let gain = sse - trial_sse;
                p = trial;
                sse = trial_sse;
                damping = (damping / 3.0).max(1e-12);
                improved = gain > 1e-15 * sse.max(f64::MIN_POSITIVE);
                break;
            }
            damping *= 4.0;
        }
        if !improved {
            break;
        }
    }
    let (lin, _) = linear_fit(ts, ys, p[3])?;
    Some([lin[0], lin[1], lin[2], p[3]])
}

/// Regression targets from a fit: the fitted curve normalized to [0, 1], with
/// the point nearest each fitted peak set to exactly 1 and the point nearest
/// each fitted trough set to exactly 0.
pub fn target_values(durations: &[f64], fit: &SinusoidFit) -> Result<Vec<f64>> {
    if !(fit.amplitude > 0.0 && fit.frequency > 0.0) {
        return Err(Error::FitFailure(format!(
            "degenerate fit: amplitude {}, frequency {}",
            fit.amplitude, fit.frequency
        )));
    }
    let mut q: Vec<f64> = durations
        .iter()
        .map(|&t| fit.normalized(t).clamp(0.0, 1.0))
        .collect();
    if durations.is_empty() {
        return Ok(q);
    }
    let (t_min, t_max) = (durations[0], durations[durations.len() - 1]);
    let period = fit.period_ns();
    let mut spacings: Vec<f64> = durations.windows(2).map(|w| w[1] - w[0]).collect();
    spacings.sort_by(f64::total_cmp);
    let half_step = spacings.get(spacings.len() / 2).map_or(0.0, |s| 0.5 * s);
    // Extrema at 2 pi f t + phase = k pi; even k are peaks.
    let k_lo = ((TAU * fit.frequency * t_min + fit.phase) / PI).floor() as i64 - 1;
    let k_hi = ((TAU * fit.frequency * t_max + fit.phase) / PI).ceil() as i64 + 1;
    for k in k_lo..=k_hi {
        let t_ext = (k as f64 * PI - fit.phase) / (TAU * fit.frequency);
        let nearest = nearest_index(durations, t_ext);
        let t_near = durations[nearest];
        // Only extrema inside the sampled range count.
        if (t_near - t_ext).abs() < 0.25 * period
            && t_ext >= t_min - half_step
            && t_ext <= t_max + half_step
        {
            let own = nearest_extremum_time(t_near, fit);
            if (own - t_ext).abs() < 1e-9 * period.max(1.0) {
                q[nearest] = if k.rem_euclid(2) == 0 { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(q)
}

fn nearest_index(sorted: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (i, &x) in sorted.iter().enumerate() {
        if (x - t).abs() < (sorted[best] - t).abs() {
            best = i;
        }
    }
    best
}

fn nearest_extremum_time(t: f64, fit: &SinusoidFit) -> f64 {
    let k = ((TAU * fit.frequency * t + fit.phase) / PI).round();
    (k * PI - fit.phase) / (TAU * fit.frequency)
}

/// Pairs every trace of `dataset` with its target from `fit` (see [`target_values`]).
pub fn assign_targets(dataset: &RabiDataset, fit: &SinusoidFit) -> Result<Vec<TrainingExample>> {
    let q = target_values(&dataset.durations(), fit)?;
    dataset
        .points()
        .iter()
        .zip(q)
        .map(|(p, q)| TrainingExample::new(p.trace.clone(), q))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub values: Vec<f64>,
    pub mean_abs: f64,
    pub rms: f64,
}

/// `p_i - fit(t_i)` with summary statistics.
pub fn residuals(points: &[(f64, f64)], fit: &SinusoidFit) -> Residuals {
    let values: Vec<f64> = points.iter().map(|&(t, p)| p - fit.eval(t)).collect();
    let mean_abs = stats::mean(&values.iter().map(|r| r.abs()).collect::<Vec<_>>());
    Residuals {
        rms: stats::rms(&values),
        mean_abs,
        values,
    }
}

/// Ground-truth population curve used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiCurve {
    pub offset: f64,
    pub amplitude: f64,
    pub period_ns: f64,
    pub phase: f64,
}

impl Default for RabiCurve {
    /// Full-contrast oscillation starting in the bright state.
    fn default() -> Self {
        Self {
            offset: 0.5,
            amplitude: 0.5,
            period_ns: 200.0,
            phase: 0.0,
        }
    }
}

impl RabiCurve {
    pub fn population(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (TAU * t / self.period_ns + self.phase).cos()
    }
}

/// Evenly spaced pulse durations `start, start + step, ...`.
pub fn durations(count: usize, start_ns: f64, step_ns: f64) -> Vec<f64> {
    (0..count).map(|i| start_ns + i as f64 * step_ns).collect()
}

/// Simulates one trace per duration from the populations of `curve`; returns the
/// dataset and the true population of every point.
pub fn simulate_rabi(
    profile0: &EmissionProfile,
    profile1: &EmissionProfile,
    curve: &RabiCurve,
    durations: &[f64],
    repetitions: u64,
    seed: u64,
) -> Result<(RabiDataset, Vec<f64>)> {
    let truth: Vec<f64> = durations.iter().map(|&t| curve.population(t)).collect();
    let profiles = truth
        .iter()
        .map(|&p| mix_profile(p.clamp(0.0, 1.0), profile0, profile1))
        .collect::<Result<Vec<_>>>()?;
    let traces = simulate_batch(&profiles, repetitions, seed)?;
    let points = durations
        .iter()
        .zip(traces)
        .map(|(&duration_ns, trace)| RabiPoint { duration_ns, trace })
        .collect();
    Ok((RabiDataset::new(points)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{make_profiles, PhotodynamicsParams};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sample(f: impl Fn(f64) -> f64, n: usize, step: f64) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = i as f64 * step;
                (t, f(t))
            })
            .collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn phase_gap(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(TAU);
        d.min(TAU - d)
    }

    #[test]
    fn noiseless_round_trip() {
        let pts = sample(|t| 0.5 + 0.5 * (TAU * t / 200.0).cos(), 60, 10.0);
        let fit = fit_rabi(&pts).unwrap();
        assert!(rel(fit.offset, 0.5) < 1e-6);
        assert!(rel(fit.amplitude, 0.5) < 1e-6);
        assert!(rel(fit.frequency, 1.0 / 200.0) < 1e-6);
        assert!(phase_gap(fit.phase, 0.0) < 1e-6);
        let r = residuals(&pts, &fit);
        assert!(r.values.iter().all(|v| v.abs() < 1e-9));
        assert!(r.values.iter().sum::<f64>().abs() < 60.0 * 1e-9);
    }

    #[test]
    fn constant_points_fail() {
        let pts = sample(|_| 0.7, 30, 10.0);
        assert!(matches!(fit_rabi(&pts), Err(Error::FitFailure(_))));
        assert!(matches!(fit_rabi(&pts[..5]), Err(Error::FitFailure(_))));
    }

    #[test]
    fn noisy_frequency_within_one_percent() {
        let noise = Normal::new(0.0, 0.02).unwrap();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = sample(|t| 0.5 + 0.5 * (TAU * t / 200.0).cos(), 60, 10.0)
                .into_iter()
                .map(|(t, y)| (t, y + noise.sample(&mut rng)))
                .collect();
            let fit = fit_rabi(&pts).unwrap();
            assert!(
                rel(fit.frequency, 1.0 / 200.0) < 0.01,
                "seed {seed}: {fit:?}"
            );
        }
    }

    #[test]
    fn free_offset_residuals_sum_to_zero() {
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<(f64, f64)> = sample(|t| 0.4 + 0.3 * (TAU * t / 170.0 + 1.0).cos(), 60, 10.0)
            .into_iter()
            .map(|(t, y)| (t, y + noise.sample(&mut rng)))
            .collect();
        let fit = fit_rabi(&pts).unwrap();
        let r = residuals(&pts, &fit);
        assert!(r.values.iter().sum::<f64>().abs() < 60.0 * 1e-9);
    }

    #[test]
    fn targets_at_extrema_and_node() {
        let fit = SinusoidFit {
            offset: 100.0,
            amplitude: 20.0,
            frequency: 1.0 / 200.0,
            phase: 0.0,
            residual_rms: 0.0,
        };
        let ts = durations(60, 0.0, 10.0);
        let q = target_values(&ts, &fit).unwrap();
        assert_eq!(q[0], 1.0);
        assert_eq!(q[10], 0.0);
        assert_eq!(q[20], 1.0);
        assert!((q[5] - 0.5).abs() < 1e-12);
        assert!(q.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // One peak and one trough per period over 600 ns.
        assert_eq!(q.iter().filter(|&&v| v == 1.0).count(), 3);
        assert_eq!(q.iter().filter(|&&v| v == 0.0).count(), 3);
    }

    #[test]
    fn nearest_points_to_unsampled_extrema_get_exact_targets() {
        let fit = SinusoidFit {
            offset: 0.0,
            amplitude: 1.0,
            frequency: 1.0 / 200.0,
            phase: 0.3,
            residual_rms: 0.0,
        };
        let ts = durations(60, 0.0, 10.0);
        let q = target_values(&ts, &fit).unwrap();
        assert_eq!(q.iter().filter(|&&v| v == 1.0).count(), 3);
        assert_eq!(q.iter().filter(|&&v| v == 0.0).count(), 3);
    }

    #[test]
    fn degenerate_fit_is_rejected() {
        let fit = SinusoidFit {
            offset: 1.0,
            amplitude: 0.0,
            frequency: 0.01,
            phase: 0.0,
            residual_rms: 0.0,
        };
        assert!(matches!(
            target_values(&[0.0, 1.0], &fit),
            Err(Error::FitFailure(_))
        ));
    }

    #[test]
    fn dataset_requires_fit_before_training() {
        let (p0, p1) = make_profiles(&PhotodynamicsParams::paper_like()).unwrap();
        let (mut ds, _) = simulate_rabi(
            &p0,
            &p1,
            &RabiCurve::default(),
            &durations(60, 0.0, 10.0),
            100_000,
            1,
        )
        .unwrap();
        assert!(matches!(ds.training_examples(), Err(Error::State(_))));
        let cal = ds.fit_and_assign().unwrap();
        let examples = ds.training_examples().unwrap();
        assert_eq!(examples.len(), 60);
        assert!(examples.iter().all(|e| (0.0..=1.0).contains(&e.target)));
        let fit = ds.fit.unwrap();
        assert!(rel(fit.frequency, 1.0 / 200.0) < 0.02, "{fit:?}");
        assert!(cal.l0 > cal.l1);
    }

    #[test]
    fn dataset_validation() {
        let t = TimeTrace::new(vec![1, 2], 2.0, 10).unwrap();
        let other = TimeTrace::new(vec![1, 2], 2.0, 20).unwrap();
        let pt = |d: f64, trace: &TimeTrace| RabiPoint {
            duration_ns: d,
            trace: trace.clone(),
        };
        assert!(RabiDataset::new(vec![pt(0.0, &t), pt(0.0, &t)]).is_err());
        assert!(RabiDataset::new(vec![pt(0.0, &t), pt(1.0, &other)]).is_err());
        assert!(RabiDataset::new(vec![]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn fit_round_trip(offset in -5.0f64..5.0, amplitude in 0.1f64..3.0, period in 60.0f64..400.0, phase in 0.0f64..TAU) {
            let pts = sample(|t| offset + amplitude * (TAU * t / period + phase).cos(), 80, 10.0);
            let fit = fit_rabi(&pts).unwrap();
            prop_assert!((fit.offset - offset).abs() < 1e-6 * offset.abs().max(1.0));
            prop_assert!(rel(fit.amplitude, amplitude) < 1e-6);
            prop_assert!(rel(fit.frequency, 1.0 / period) < 1e-6);
            prop_assert!(phase_gap(fit.phase, phase) < 1e-6);
        }

        #[test]
        fn targets_stay_in_unit_interval(phase in 0.0f64..TAU, period in 50.0f64..500.0) {
            let fit = SinusoidFit { offset: 0.0, amplitude: 1.0, frequency: 1.0 / period, phase, residual_rms: 0.0 };
            let q = target_values(&durations(60, 0.0, 10.0), &fit).unwrap();
            prop_assert!(q.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn signal_contrast_is_scale_free() {
        let f = SinusoidFit {
            offset: 0.5,
            amplitude: 0.5,
            frequency: 0.01,
            phase: 0.0,
            residual_rms: 0.0,
        };
        let zero = -3.0;
        let c = f.signal_contrast(zero);
        assert!((c - 1.0 / 4.0).abs() < 1e-15);
        let g = SinusoidFit {
            offset: 2.0 * 0.5 + 1.0,
            amplitude: 2.0 * 0.5,
            ..f
        };
        assert!((g.signal_contrast(2.0 * zero + 1.0) - c).abs() < 1e-15);
        assert!(f.signal_contrast(2.0).is_nan());
    }
}
