use proptest::prelude::*;
use spin_readout::gate::sweep_gate;
use spin_readout::rabi::{durations, simulate_rabi, RabiCurve};
use spin_readout::regression::{
    boundary_gate, loss, predict, train_boundary, train_rabi, train_with_history,
};
use spin_readout::trace::{make_profiles, simulate_trace};
use spin_readout::*;

const BINS: usize = 500;
const BIN_NS: f64 = 2.0;

fn boundary_examples(reps: u64, seed: u64) -> Vec<TrainingExample> {
    let (p0, p1) = make_profiles(&PhotodynamicsParams::paper_like()).unwrap();
    vec![
        TrainingExample::new(simulate_trace(&p0, reps, seed).unwrap(), 1.0).unwrap(),
        TrainingExample::new(simulate_trace(&p1, reps, seed + 1).unwrap(), 0.0).unwrap(),
    ]
}

/// Lowest loss over every gated-equivalent model the sweep between the
/// extreme-target examples admits.
fn best_gated_loss(examples: &[TrainingExample], w: f64) -> f64 {
    let hi = examples
        .iter()
        .max_by(|a, b| a.target.total_cmp(&b.target))
        .unwrap();
    let lo = examples
        .iter()
        .min_by(|a, b| a.target.total_cmp(&b.target))
        .unwrap();
    let sweep = sweep_gate(&hi.trace, &lo.trace, 0).unwrap();
    sweep
        .rows
        .iter()
        .filter(|r| !r.degenerate)
        .map(|r| {
            let cal = GateCalibration::from_metrics(r, sweep.repetitions).unwrap();
            let model = ReadoutModel::gated_equivalent(&cal, BINS, BIN_NS).unwrap();
            loss(&model, examples, w).unwrap().total
        })
        .fold(f64::INFINITY, f64::min)
}

fn check_history(losses: &[f64]) -> std::result::Result<(), TestCaseError> {
    for pair in losses.windows(2) {
        prop_assert!(
            pair[1] <= pair[0] * (1.0 + 1e-12),
            "{} -> {}",
            pair[0],
            pair[1]
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn boundary_training_properties(seed in 0u64..1_000_000, log_reps in 5.0f64..8.0) {
        let reps = 10f64.powf(log_reps).round() as u64;
        let examples = boundary_examples(reps, seed);
        let config = TrainConfig { max_iterations: 5_000, ..TrainConfig::default() };
        let (model, history) = train_with_history(&examples, &config).unwrap();

        check_history(&history.losses)?;
        prop_assert!(model.weights().iter().all(|&a| a >= 0.0));
        let trained = loss(&model, &examples, config.weight_factor).unwrap().total;
        prop_assert!(trained <= best_gated_loss(&examples, config.weight_factor) * (1.0 + 1e-12));
        let h0 = predict(&model, &examples[0].trace).unwrap();
        let h1 = predict(&model, &examples[1].trace).unwrap();
        prop_assert!((h0 - 1.0).abs() + h1.abs() < 5e-3, "h0 {} h1 {}", h0, h1);
    }
}

#[test]
fn rabi_training_properties() {
    let (p0, p1) = make_profiles(&PhotodynamicsParams::paper_like()).unwrap();
    let d = durations(60, 0.0, 10.0);
    let (mut ds, _) = simulate_rabi(&p0, &p1, &RabiCurve::default(), &d, 100_000, 31).unwrap();
    ds.fit_and_assign().unwrap();
    let examples = ds.training_examples().unwrap();
    let config = TrainConfig {
        max_iterations: 20_000,
        ..TrainConfig::default()
    };
    let (model, history) = train_with_history(&examples, &config).unwrap();

    check_history(&history.losses).unwrap();
    assert!(model.weights().iter().all(|&a| a >= 0.0));
    let trained = loss(&model, &examples, config.weight_factor).unwrap().total;
    assert!(trained <= best_gated_loss(&examples, config.weight_factor));
}

#[test]
fn two_point_rabi_set_matches_boundary_training() {
    let examples = boundary_examples(1_000_000, 41);
    let points = vec![
        RabiPoint {
            duration_ns: 0.0,
            trace: examples[0].trace.clone(),
        },
        RabiPoint {
            duration_ns: 100.0,
            trace: examples[1].trace.clone(),
        },
    ];
    let mut ds = RabiDataset::new(points).unwrap();
    ds.fit = Some(SinusoidFit {
        offset: 0.5,
        amplitude: 0.5,
        frequency: 0.005,
        phase: 0.0,
        residual_rms: 0.0,
    });
    ds.targets = Some(vec![1.0, 0.0]);
    let config = TrainConfig {
        max_iterations: 2_000,
        ..TrainConfig::default()
    };
    let a = train_rabi(&ds, &config).unwrap();
    let b = train_boundary(&examples[0].trace, &examples[1].trace, &config).unwrap();
    assert_eq!(a.weights(), b.weights());
    assert_eq!(a.intercept(), b.intercept());
}

#[test]
fn equal_targets_are_degenerate() {
    let examples = boundary_examples(1_000_000, 51);
    let points = vec![
        RabiPoint {
            duration_ns: 0.0,
            trace: examples[0].trace.clone(),
        },
        RabiPoint {
            duration_ns: 10.0,
            trace: examples[1].trace.clone(),
        },
    ];
    let mut ds = RabiDataset::new(points).unwrap();
    ds.fit = Some(SinusoidFit {
        offset: 0.5,
        amplitude: 0.0,
        frequency: 0.005,
        phase: 0.0,
        residual_rms: 0.0,
    });
    ds.targets = Some(vec![0.5, 0.5]);
    assert!(matches!(
        train_rabi(&ds, &TrainConfig::default()),
        Err(Error::DegenerateTraining(_))
    ));
}

#[test]
fn rabi_set_without_fit_is_a_state_error() {
    let (p0, p1) = make_profiles(&PhotodynamicsParams::paper_like()).unwrap();
    let (ds, _) = simulate_rabi(
        &p0,
        &p1,
        &RabiCurve::default(),
        &durations(10, 0.0, 10.0),
        1000,
        61,
    )
    .unwrap();
    assert!(matches!(
        train_rabi(&ds, &TrainConfig::default()),
        Err(Error::State(_))
    ));
}

#[test]
fn boundary_gate_uses_extreme_targets() {
    let examples = boundary_examples(1_000_000, 71);
    let cal = boundary_gate(&examples).unwrap();
    let direct = sweep_gate(&examples[0].trace, &examples[1].trace, 0)
        .unwrap()
        .min_variance_calibration()
        .unwrap();
    assert_eq!(cal, direct);
}
