//! Per-bin weighted linear readout with a variance-regularized training loss.
//!
//! A model maps a trace to `p = sum_i A_i * (counts_i / R) + b`, where `R` is the
//! trace's repetition count, so weights live in per-measurement rate space and a
//! model trained at one repetition count applies to traces taken at another.
//! Under Poisson statistics the estimate has variance `sum_i (A_i / R)^2 * counts_i`.
//!
//! Training minimizes
//!
//! ```text
//! J(A, b) = w * sum_j (h_j - q_j)^2 + sum_j sigma_j^2,     A_i >= 0
//! ```
//!
//! with a large weight factor `w` so that the fit to the targets `q_j` takes
//! priority and the variance term decides among the near-exact fits.

use crate::error::{Error, Result};
use crate::gate::{sweep_gate, GateCalibration};
use crate::rabi::RabiDataset;
use crate::trace::TimeTrace;

/// Iterations over which the relative loss decrease is measured for convergence.
pub const CONVERGENCE_WINDOW: usize = 100;
/// Relative slack tolerated on a non-accelerated step before declaring divergence.
const DESCENT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Unweighted sum of squared prediction errors.
    pub prediction_term: f64,
    /// Sum of the per-example Poisson variances of the estimate.
    pub variance_term: f64,
    pub weight_factor: f64,
    /// `weight_factor * prediction_term + variance_term`.
    pub total: f64,
}

impl LossBreakdown {
    fn new(prediction_term: f64, variance_term: f64, weight_factor: f64) -> Self {
        Self {
            prediction_term,
            variance_term,
            weight_factor,
            total: weight_factor * prediction_term + variance_term,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    weights: Vec<f64>,
    intercept: f64,
    bin_width_ns: f64,
    /// Global feature scale `1 / max_bin_rate` of the training set (1 when untrained).
    pub normalization: f64,
    pub trained_on: String,
    pub training_loss: Option<LossBreakdown>,
}

impl ReadoutModel {
    pub fn new(weights: Vec<f64>, intercept: f64, bin_width_ns: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Shape("model needs at least one weight".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::param(
                "weights",
                format!("weight {w} is not finite and nonnegative"),
            ));
        }
        if !intercept.is_finite() {
            return Err(Error::param("intercept", "must be finite"));
        }
        if !(bin_width_ns.is_finite() && bin_width_ns > 0.0) {
            return Err(Error::param("bin_width_ns", "must be positive"));
        }
        Ok(Self {
            weights,
            intercept,
            bin_width_ns,
            normalization: 1.0,
            trained_on: String::new(),
            training_loss: None,
        })
    }

    /// Model whose prediction equals the gated estimator of `cal` on every trace:
    /// `A_i = R_cal / (L0 - L1)` inside the gate, 0 elsewhere, `b = -L1 / (L0 - L1)`.
    pub fn gated_equivalent(cal: &GateCalibration, bins: usize, bin_width_ns: f64) -> Result<Self> {
        cal.window.check_fits(bins)?;
        let span = cal.l0 - cal.l1;
        let mut weights = vec![0.0; bins];
        for w in &mut weights[cal.window.range()] {
            *w = cal.repetitions / span;
        }
        let mut model = Self::new(weights, -cal.l1 / span, bin_width_ns)?;
        model.trained_on = format!(
            "gated-equivalent start_bin={} width_bins={}",
            cal.window.start_bin, cal.window.width_bins
        );
        Ok(model)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn bin_width_ns(&self) -> f64 {
        self.bin_width_ns
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    fn check_trace(&self, trace: &TimeTrace) -> Result<()> {
        if trace.len() != self.dimension() {
            return Err(Error::Shape(format!(
                "model has {} weights, trace has {} bins",
                self.dimension(),
                trace.len()
            )));
        }
        if trace.bin_width_ns() != self.bin_width_ns {
            return Err(Error::Shape(format!(
                "model expects {} ns bins, trace has {} ns",
                self.bin_width_ns,
                trace.bin_width_ns()
            )));
        }
        Ok(())
    }
}

/// `p = sum_i A_i * counts_i / R + b`, not clipped.
pub fn predict(model: &ReadoutModel, trace: &TimeTrace) -> Result<f64> {
    model.check_trace(trace)?;
    let r = trace.repetitions() as f64;
    let dot: f64 = model
        .weights
        .iter()
        .zip(trace.counts())
        .map(|(a, &c)| a * (c as f64 / r))
        .sum();
    Ok(dot + model.intercept)
}

/// Poisson variance of [`predict`]: `sum_i (A_i / R)^2 * counts_i`.
pub fn prediction_variance(model: &ReadoutModel, trace: &TimeTrace) -> Result<f64> {
    model.check_trace(trace)?;
    let r = trace.repetitions() as f64;
    Ok(model
        .weights
        .iter()
        .zip(trace.counts())
        .map(|(a, &c)| {
            let ar = a / r;
            ar * ar * c as f64
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub trace: TimeTrace,
    pub target: f64,
}

impl TrainingExample {
    pub fn new(trace: TimeTrace, target: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::Domain(format!("target {target} outside [0, 1]")));
        }
        Ok(Self { trace, target })
    }
}

fn check_examples(model: &ReadoutModel, examples: &[TrainingExample]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Domain("loss needs at least one example".into()));
    }
    examples
        .iter()
        .try_for_each(|e| model.check_trace(&e.trace))
}

pub fn loss(
    model: &ReadoutModel,
    examples: &[TrainingExample],
    weight_factor: f64,
) -> Result<LossBreakdown> {
    check_examples(model, examples)?;
    let mut prediction_term = 0.0;
    let mut variance_term = 0.0;
    for e in examples {
        let h = predict(model, &e.trace)?;
        prediction_term += (h - e.target).powi(2);
        variance_term += prediction_variance(model, &e.trace)?;
    }
    Ok(LossBreakdown::new(
        prediction_term,
        variance_term,
        weight_factor,
    ))
}

/// Gradient of the total loss with respect to the weights and the intercept:
///
/// `dJ/dA_k = sum_j [2 w (h_j - q_j) y_kj + 2 A_k y_kj / R_j]`, `dJ/db = sum_j 2 w (h_j - q_j)`,
/// with `y_kj = counts_kj / R_j`.
pub fn loss_gradient(
    model: &ReadoutModel,
    examples: &[TrainingExample],
    weight_factor: f64,
) -> Result<(Vec<f64>, f64)> {
    check_examples(model, examples)?;
    let mut grad = vec![0.0; model.dimension()];
    let mut grad_b = 0.0;
    for e in examples {
        let r = e.trace.repetitions() as f64;
        let residual = predict(model, &e.trace)? - e.target;
        let pull = 2.0 * weight_factor * residual;
        grad_b += pull;
        for ((g, a), &c) in grad.iter_mut().zip(&model.weights).zip(e.trace.counts()) {
            let y = c as f64 / r;
            *g += pull * y + 2.0 * a * y / r;
        }
    }
    Ok((grad, grad_b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Gated estimator at the minimum-total-variance width, calibrated on the
    /// highest- and lowest-target examples.
    GatedEqualWeights,
    Zeros,
}

impl InitStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitStrategy::GatedEqualWeights => "gated-equal-weights",
            InitStrategy::Zeros => "zeros",
        }
    }
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gated-equal-weights" | "gated" => Ok(InitStrategy::GatedEqualWeights),
            "zeros" => Ok(InitStrategy::Zeros),
            other => Err(Error::param("init", format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub weight_factor: f64,
    /// Step size on the normalized objective `J / (w m)` over features scaled by
    /// the training set's `1 / max_bin_rate`.
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub init: InitStrategy,
    /// Nesterov momentum on top of the projected steps. Plain steps make little
    /// progress on the variance term at the default step size.
    pub accelerate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weight_factor: 1e4,
            learning_rate: 1e-3,
            max_iterations: 200_000,
            relative_tolerance: 1e-9,
            init: InitStrategy::GatedEqualWeights,
            accelerate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_factor.is_finite() && self.weight_factor >= 1.0) {
            return Err(Error::param(
                "weight_factor",
                format!("must be >= 1, got {}", self.weight_factor),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if !(self.relative_tolerance.is_finite() && self.relative_tolerance > 0.0) {
            return Err(Error::param(
                "relative_tolerance",
                format!("must be positive, got {}", self.relative_tolerance),
            ));
        }
        Ok(())
    }
}

/// Diagnostics of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Total loss `J` after initialization and after every accepted step.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of momentum resets.
    pub restarts: usize,
}

pub fn train(examples: &[TrainingExample], config: &TrainConfig) -> Result<ReadoutModel> {
    train_with_history(examples, config).map(|(m, _)| m)
}

/// Projected gradient descent, optionally with Nesterov momentum.
///
/// After every step negative weights are clamped to zero; the intercept is free.
/// Momentum is reset whenever an accelerated step would raise the loss, and a
/// plain step that raises it beyond arithmetic slack aborts with
/// [`Error::Divergence`], so the recorded loss never increases. Iteration stops
/// once the loss falls by less than `relative_tolerance` (relative) over
/// [`CONVERGENCE_WINDOW`] iterations, or at `max_iterations`.
pub fn train_with_history(
    examples: &[TrainingExample],
    config: &TrainConfig,
) -> Result<(ReadoutModel, TrainHistory)> {
    config.validate()?;
    let problem = Problem::new(examples, config.weight_factor)?;
    let init = initial_model(examples, config.init, problem.n, problem.bin_width_ns)?;

    let s = problem.scale;
    let mut x: Vec<f64> = init.weights.iter().map(|a| a / s).collect();
    let mut bx = init.intercept;
    let mut zx = problem.project(&x);
    let mut f = problem.objective(&x, bx, &zx);
    if !f.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            reason: "initial loss is not finite".into(),
        });
    }
    let to_total = problem.weight_factor * problem.m as f64;
    let mut history = TrainHistory {
        losses: vec![f * to_total],
        iterations: 0,
        converged: false,
        restarts: 0,
    };

    let lr = config.learning_rate;
    let (mut y, mut by, mut zy) = (x.clone(), bx, zx.clone());
    let mut momentum = 1.0_f64;
    let mut grad = vec![0.0; problem.n];
    let mut xn = vec![0.0; problem.n];

    for it in 0..config.max_iterations {
        let gb = problem.gradient(&y, by, &zy, &mut grad);
        step(&y, &grad, lr, &mut xn);
        let mut bn = by - lr * gb;
        let mut zxn = problem.project(&xn);
        let mut fn_ = problem.objective(&xn, bn, &zxn);

        if !(fn_ <= f) {
            let accelerated = momentum > 1.0;
            if accelerated {
                history.restarts += 1;
                momentum = 1.0;
                let gb = problem.gradient(&x, bx, &zx, &mut grad);
                step(&x, &grad, lr, &mut xn);
                bn = bx - lr * gb;
                zxn = problem.project(&xn);
                fn_ = problem.objective(&xn, bn, &zxn);
            }
            if !fn_.is_finite() {
                return Err(Error::Divergence {
                    iteration: it,
                    reason: format!("loss became {fn_}"),
                });
            }
            if fn_ > f * (1.0 + DESCENT_SLACK) {
                return Err(Error::Divergence {
                    iteration: it,
                    reason: format!(
                        "gradient step raised the loss from {} to {}",
                        f * to_total,
                        fn_ * to_total
                    ),
                });
            }
            if fn_ >= f {
                // A plain step no longer makes progress.
                history.iterations = it;
                history.converged = true;
                break;
            }
        }

        let next = if config.accelerate {
            0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt())
        } else {
            1.0
        };
        let beta = (momentum - 1.0) / next;
        momentum = next;
        for k in 0..problem.n {
            y[k] = xn[k] + beta * (xn[k] - x[k]);
        }
        for j in 0..problem.m {
            zy[j] = zxn[j] + beta * (zxn[j] - zx[j]);
        }
        by = bn + beta * (bn - bx);
        std::mem::swap(&mut x, &mut xn);
        zx = zxn;
        bx = bn;
        f = fn_;
        history.losses.push(f * to_total);
        history.iterations = it + 1;

        if history.losses.len() > CONVERGENCE_WINDOW {
            let old = history.losses[history.losses.len() - 1 - CONVERGENCE_WINDOW];
            let now = f * to_total;
            if old - now <= config.relative_tolerance * old.abs() {
                history.converged = true;
                break;
            }
        }
    }

    let weights: Vec<f64> = x.iter().map(|b| b * s).collect();
    let mut model = ReadoutModel::new(weights, bx, problem.bin_width_ns)?;
    model.normalization = s;
    model.training_loss = Some(loss(&model, examples, config.weight_factor)?);
    model.trained_on = format!(
        "examples={} repetitions={} init={} iterations={} converged={} restarts={}",
        examples.len(),
        repetition_summary(examples),
        config.init.as_str(),
        history.iterations,
        history.converged,
        history.restarts
    );
    Ok((model, history))
}

fn step(x: &[f64], grad: &[f64], lr: f64, out: &mut [f64]) {
    for ((o, xi), g) in out.iter_mut().zip(x).zip(grad) {
        *o = (xi - lr * g).max(0.0);
    }
}

fn repetition_summary(examples: &[TrainingExample]) -> String {
    let min = examples
        .iter()
        .map(|e| e.trace.repetitions())
        .min()
        .unwrap_or(0);
    let max = examples
        .iter()
        .map(|e| e.trace.repetitions())
        .max()
        .unwrap_or(0);
    if min == max {
        min.to_string()
    } else {
        format!("{min}..{max}")
    }
}

/// Training objective in normalized coordinates.
///
/// Features are `z_jk = s * y_jk` with `s = 1 / max y` and weights `B_k = A_k / s`,
/// so `h_j = z_j . B + b`. The objective is `J / (w m)`:
/// `(1/m) sum_j (h_j - q_j)^2 + sum_k v_k B_k^2`, `v_k = s^2 sum_j (y_jk / R_j) / (w m)`.
struct Problem {
    m: usize,
    n: usize,
    bin_width_ns: f64,
    weight_factor: f64,
    scale: f64,
    /// Row-major `m x n`.
    z: Vec<f64>,
    targets: Vec<f64>,
    penalty: Vec<f64>,
}

impl Problem {
    fn new(examples: &[TrainingExample], weight_factor: f64) -> Result<Self> {
        if examples.len() < 2 {
            return Err(Error::DegenerateTraining(format!(
                "need at least 2 examples, got {}",
                examples.len()
            )));
        }
        let first = &examples[0].trace;
        for e in examples {
            first.check_compatible(&e.trace)?;
            if !(0.0..=1.0).contains(&e.target) {
                return Err(Error::Domain(format!("target {} outside [0, 1]", e.target)));
            }
        }
        let (lo, hi) = examples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                (lo.min(e.target), hi.max(e.target))
            });
        if !(hi > lo) {
            return Err(Error::DegenerateTraining(format!("all targets equal {lo}")));
        }

        let m = examples.len();
        let n = first.len();
        let rates: Vec<Vec<f64>> = examples.iter().map(|e| e.trace.rates()).collect();
        let max_rate = rates.iter().flatten().fold(0.0_f64, |a, &b| a.max(b));
        if !(max_rate > 0.0) {
            return Err(Error::DegenerateTraining(
                "training traces contain no photons".into(),
            ));
        }
        let scale = 1.0 / max_rate;
        let z: Vec<f64> = rates.iter().flatten().map(|y| y * scale).collect();
        let mut penalty = vec![0.0; n];
        for (e, y) in examples.iter().zip(&rates) {
            let r = e.trace.repetitions() as f64;
            for (p, yk) in penalty.iter_mut().zip(y) {
                *p += yk / r;
            }
        }
        let norm = scale * scale / (weight_factor * m as f64);
        penalty.iter_mut().for_each(|p| *p *= norm);

        Ok(Self {
            m,
            n,
            bin_width_ns: first.bin_width_ns(),
            weight_factor,
            scale,
            z,
            targets: examples.iter().map(|e| e.target).collect(),
            penalty,
        })
    }

    /// `Z B`.
    fn project(&self, b: &[f64]) -> Vec<f64> {
        self.z
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(b).map(|(z, x)| z * x).sum())
            .collect()
    }

    fn objective(&self, b: &[f64], intercept: f64, zb: &[f64]) -> f64 {
        let fit: f64 = zb
            .iter()
            .zip(&self.targets)
            .map(|(h, q)| (h + intercept - q).powi(2))
            .sum::<f64>()
            / self.m as f64;
        let var: f64 = self.penalty.iter().zip(b).map(|(v, x)| v * x * x).sum();
        fit + var
    }

    /// Writes the weight gradient into `grad` and returns the intercept gradient.
    fn gradient(&self, b: &[f64], intercept: f64, zb: &[f64], grad: &mut [f64]) -> f64 {
        for ((g, v), x) in grad.iter_mut().zip(&self.penalty).zip(b) {
            *g = 2.0 * v * x;
        }
        let mut grad_b = 0.0;
        let scale = 2.0 / self.m as f64;
        for (row, (h, q)) in self
            .z
            .chunks_exact(self.n)
            .zip(zb.iter().zip(&self.targets))
        {
            let r = scale * (h + intercept - q);
            grad_b += r;
            for (g, z) in grad.iter_mut().zip(row) {
                *g += r * z;
            }
        }
        grad_b
    }
}

fn initial_model(
    examples: &[TrainingExample],
    init: InitStrategy,
    bins: usize,
    bin_width_ns: f64,
) -> Result<ReadoutModel> {
    match init {
        InitStrategy::Zeros => ReadoutModel::new(vec![0.0; bins], 0.0, bin_width_ns),
        // Falls back to zeros when no gate separates the extreme-target examples
        // in the labelled direction (e.g. swapped labels).
        InitStrategy::GatedEqualWeights => match boundary_gate(examples) {
            Ok(cal) => ReadoutModel::gated_equivalent(&cal, bins, bin_width_ns),
            Err(Error::DegenerateTraining(_)) => {
                ReadoutModel::new(vec![0.0; bins], 0.0, bin_width_ns)
            }
            Err(e) => Err(e),
        },
    }
}

/// Minimum-total-variance gate calibrated on the first highest-target and the
/// first lowest-target example.
pub fn boundary_gate(examples: &[TrainingExample]) -> Result<GateCalibration> {
    let bright = examples
        .iter()
        .reduce(|a, b| if b.target > a.target { b } else { a })
        .ok_or_else(|| Error::DegenerateTraining("no examples".into()))?;
    let dark = examples
        .iter()
        .reduce(|a, b| if b.target < a.target { b } else { a })
        .ok_or_else(|| Error::DegenerateTraining("no examples".into()))?;
    let sweep = sweep_gate(&bright.trace, &dark.trace, 0)?;
    sweep.min_variance_calibration().map_err(|_| {
        Error::DegenerateTraining(
            "boundary examples are indistinguishable: no gate width separates them".into(),
        )
    })
}

/// Trains on two boundary traces with targets 1 (bright) and 0 (dark).
pub fn train_boundary(
    trace0: &TimeTrace,
    trace1: &TimeTrace,
    config: &TrainConfig,
) -> Result<ReadoutModel> {
    trace0.check_compatible(trace1)?;
    if trace0.rates() == trace1.rates() {
        return Err(Error::DegenerateTraining(
            "boundary traces are identical".into(),
        ));
    }
    let examples = [
        TrainingExample::new(trace0.clone(), 1.0)?,
        TrainingExample::new(trace1.clone(), 0.0)?,
    ];
    let mut model = train(&examples, config)?;
    model.trained_on = format!("boundary {}", model.trained_on);
    Ok(model)
}

/// Trains on every point of a Rabi dataset against its assigned targets.
pub fn train_rabi(dataset: &RabiDataset, config: &TrainConfig) -> Result<ReadoutModel> {
    let examples = dataset.training_examples()?;
    let mut model = train(&examples, config)?;
    model.trained_on = format!("rabi {}", model.trained_on);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::GateWindow;
    use crate::stats::pearson;
    use crate::trace::{make_profiles, simulate_trace, PhotodynamicsParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boundary_traces(reps: u64, seed: u64) -> (TimeTrace, TimeTrace) {
        let (p0, p1) = make_profiles(&PhotodynamicsParams::paper_like()).unwrap();
        (
            simulate_trace(&p0, reps, seed).unwrap(),
            simulate_trace(&p1, reps, seed + 1).unwrap(),
        )
    }

    /// Second, index-based implementation of the loss used as an oracle.
    fn loss_oracle(weights: &[f64], b: f64, examples: &[TrainingExample], w: f64) -> f64 {
        let mut total = 0.0;
        for e in examples {
            let r = e.trace.repetitions() as f64;
            let c = e.trace.counts();
            let mut h = b;
            let mut var = 0.0;
            for i in 0..weights.len() {
                h += weights[i] * c[i] as f64 / r;
                var += weights[i] * weights[i] * c[i] as f64 / (r * r);
            }
            total += w * (h - e.target) * (h - e.target) + var;
        }
        total
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (ReadoutModel, Vec<TrainingExample>, f64) {
        let n = rng.random_range(3..40);
        let m = rng.random_range(2..7);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let model = ReadoutModel::new(weights, rng.random_range(-2.0..2.0), 2.0).unwrap();
        let examples = (0..m)
            .map(|_| {
                let reps = rng.random_range(5..500);
                let counts = (0..n).map(|_| rng.random_range(0..60)).collect();
                let trace = TimeTrace::new(counts, 2.0, reps).unwrap();
                TrainingExample::new(trace, rng.random_range(0.0..=1.0)).unwrap()
            })
            .collect();
        (model, examples, rng.random_range(1.0..1e4))
    }

    #[test]
    fn zero_weights_predict_intercept() {
        let model = ReadoutModel::new(vec![0.0; 4], 0.25, 2.0).unwrap();
        let t = TimeTrace::new(vec![5, 1, 9, 3], 2.0, 7).unwrap();
        assert_eq!(predict(&model, &t).unwrap(), 0.25);
        assert_eq!(prediction_variance(&model, &t).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let model = ReadoutModel::new(vec![1.0; 4], 0.0, 2.0).unwrap();
        let t = TimeTrace::new(vec![5, 1, 9], 2.0, 7).unwrap();
        assert!(matches!(predict(&model, &t), Err(Error::Shape(_))));
        assert!(matches!(
            prediction_variance(&model, &t),
            Err(Error::Shape(_))
        ));
        assert!(matches!(loss(&model, &[], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_negative_weights() {
        assert!(ReadoutModel::new(vec![1.0, -1e-9], 0.0, 2.0).is_err());
    }

    #[test]
    fn gated_equivalent_matches_gate_estimator() {
        let (t0, t1) = boundary_traces(1_000_000, 3);
        let cal = crate::gate::sweep_gate(&t0, &t1, 0)
            .unwrap()
            .min_variance_calibration()
            .unwrap();
        let model = ReadoutModel::gated_equivalent(&cal, t0.len(), 2.0).unwrap();
        let (p0, p1) = make_profiles(&PhotodynamicsParams::paper_like()).unwrap();
        let mixed = crate::trace::mix_profile(0.3, &p0, &p1).unwrap();
        for seed in 0..20 {
            let t = simulate_trace(&mixed, 100_000, 100 + seed).unwrap();
            let (p, v) = cal.population(&t).unwrap();
            assert!((predict(&model, &t).unwrap() - p).abs() < 1e-12);
            assert!((prediction_variance(&model, &t).unwrap() - v).abs() < 1e-12 * v);
        }
        let examples = [
            TrainingExample::new(t0, 1.0).unwrap(),
            TrainingExample::new(t1, 0.0).unwrap(),
        ];
        assert!(loss(&model, &examples, 1e4).unwrap().prediction_term < 1e-24);
    }

    #[test]
    fn variance_scales_inversely_with_repetitions() {
        let model = ReadoutModel::new(vec![1.0, 2.0, 0.5], 0.0, 2.0).unwrap();
        let t = TimeTrace::new(vec![10, 20, 30], 2.0, 100).unwrap();
        let t10 = TimeTrace::new(vec![100, 200, 300], 2.0, 1000).unwrap();
        let ratio =
            prediction_variance(&model, &t).unwrap() / prediction_variance(&model, &t10).unwrap();
        assert!((ratio - 10.0).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_oracle_and_breakdown_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (model, examples, w) = random_instance(&mut rng);
            let l = loss(&model, &examples, w).unwrap();
            assert_eq!(l.total, w * l.prediction_term + l.variance_term);
            let oracle = loss_oracle(model.weights(), model.intercept(), &examples, w);
            assert!((l.total - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn perfect_intercept_model_has_zero_loss() {
        let model = ReadoutModel::new(vec![0.0; 3], 0.4, 2.0).unwrap();
        let examples: Vec<_> = (0..3)
            .map(|i| {
                TrainingExample::new(TimeTrace::new(vec![i, 2 * i, 1], 2.0, 10).unwrap(), 0.4)
                    .unwrap()
            })
            .collect();
        let l = loss(&model, &examples, 1e4).unwrap();
        assert_eq!(
            (l.prediction_term, l.variance_term, l.total),
            (0.0, 0.0, 0.0)
        );
        let (g, gb) = loss_gradient(&model, &examples, 1e4).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        assert_eq!(gb, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn gradient_matches_central_differences(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (model, examples, w) = random_instance(&mut rng);
            let (grad, grad_b) = loss_gradient(&model, &examples, w).unwrap();
            let scale = grad.iter().fold(grad_b.abs(), |a, g| a.max(g.abs()));
            let f = |weights: &[f64], b: f64| loss_oracle(weights, b, &examples, w);
            for k in 0..model.dimension() {
                let x = model.weights()[k];
                let h = 1e-6 * x.abs().max(1.0);
                let mut plus = model.weights().to_vec();
                let mut minus = plus.clone();
                plus[k] += h;
                minus[k] -= h;
                let fd = (f(&plus, model.intercept()) - f(&minus, model.intercept())) / (2.0 * h);
                let denom = grad[k].abs().max(1e-6 * scale);
                prop_assert!((fd - grad[k]).abs() / denom < 1e-5, "k={} fd={} g={}", k, fd, grad[k]);
            }
            let b = model.intercept();
            let h = 1e-6 * b.abs().max(1.0);
            let fd = (f(model.weights(), b + h) - f(model.weights(), b - h)) / (2.0 * h);
            prop_assert!((fd - grad_b).abs() / grad_b.abs().max(1e-6 * scale) < 1e-5);
        }
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let (t0, t1) = boundary_traces(1_000_000, 5);
        let config = TrainConfig {
            max_iterations: 0,
            ..TrainConfig::default()
        };
        let model = train_boundary(&t0, &t1, &config).unwrap();
        let cal = crate::gate::sweep_gate(&t0, &t1, 0)
            .unwrap()
            .min_variance_calibration()
            .unwrap();
        let gated = ReadoutModel::gated_equivalent(&cal, t0.len(), 2.0).unwrap();
        assert_eq!(model.weights(), gated.weights());
        assert_eq!(model.intercept(), gated.intercept());

        let zeros = TrainConfig {
            init: InitStrategy::Zeros,
            ..config
        };
        let model = train_boundary(&t0, &t1, &zeros).unwrap();
        assert!(model.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn degenerate_training_sets_are_rejected() {
        let (t0, _) = boundary_traces(100_000, 7);
        let config = TrainConfig::default();
        assert!(matches!(
            train_boundary(&t0, &t0, &config),
            Err(Error::DegenerateTraining(_))
        ));
        let same = [
            TrainingExample::new(t0.clone(), 0.5).unwrap(),
            TrainingExample::new(t0.clone(), 0.5).unwrap(),
        ];
        assert!(matches!(
            train(&same, &config),
            Err(Error::DegenerateTraining(_))
        ));
        assert!(matches!(
            train(&same[..1], &config),
            Err(Error::DegenerateTraining(_))
        ));
    }

    #[test]
    fn oversized_learning_rate_diverges() {
        let (t0, t1) = boundary_traces(1_000_000, 9);
        let config = TrainConfig {
            learning_rate: 10.0,
            max_iterations: 1000,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_boundary(&t0, &t1, &config),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn boundary_training_on_noiseless_profiles() {
        let (p0, p1) = make_profiles(&PhotodynamicsParams::paper_like()).unwrap();
        // Expected counts at 1e9 repetitions, rounded: relative rounding error < 1e-5.
        let reps = 1_000_000_000u64;
        let round = |p: &crate::trace::EmissionProfile| {
            TimeTrace::new(
                p.expected_counts(reps as f64)
                    .iter()
                    .map(|c| c.round() as u64)
                    .collect(),
                2.0,
                reps,
            )
            .unwrap()
        };
        let (t0, t1) = (round(&p0), round(&p1));
        let (model, history) = train_with_history(
            &[
                TrainingExample::new(t0.clone(), 1.0).unwrap(),
                TrainingExample::new(t1.clone(), 0.0).unwrap(),
            ],
            &TrainConfig::default(),
        )
        .unwrap();
        assert!((predict(&model, &t0).unwrap() - 1.0).abs() < 1e-3);
        assert!(predict(&model, &t1).unwrap().abs() < 1e-3);
        assert!(model.weights().iter().all(|&w| w >= 0.0));
        for pair in history.losses.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12));
        }

        // The min-V gated model is a feasible point of the same problem.
        let cal = crate::gate::sweep_gate(&t0, &t1, 0)
            .unwrap()
            .min_variance_calibration()
            .unwrap();
        let gated = ReadoutModel::gated_equivalent(&cal, t0.len(), 2.0).unwrap();
        let examples = [
            TrainingExample::new(t0.clone(), 1.0).unwrap(),
            TrainingExample::new(t1.clone(), 0.0).unwrap(),
        ];
        let trained_loss = loss(&model, &examples, 1e4).unwrap();
        let gated_loss = loss(&gated, &examples, 1e4).unwrap();
        assert!(trained_loss.variance_term <= gated_loss.variance_term);
        assert!(trained_loss.total <= gated_loss.total);

        let diff: Vec<f64> = p0
            .rates()
            .iter()
            .zip(p1.rates())
            .map(|(a, b)| a - b)
            .collect();
        assert!(pearson(model.weights(), &diff) > 0.5);
    }

    #[test]
    fn training_is_deterministic() {
        let (t0, t1) = boundary_traces(1_000_000, 21);
        let config = TrainConfig {
            max_iterations: 5000,
            ..TrainConfig::default()
        };
        let a = train_boundary(&t0, &t1, &config).unwrap();
        let b = train_boundary(&t0, &t1, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gated_window_model_is_feasible_start() {
        let cal = GateCalibration::new(GateWindow::new(0, 2).unwrap(), 20.0, 10.0, 10.0).unwrap();
        let m = ReadoutModel::gated_equivalent(&cal, 4, 2.0).unwrap();
        assert_eq!(m.weights(), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.intercept(), -1.0);
    }
}
