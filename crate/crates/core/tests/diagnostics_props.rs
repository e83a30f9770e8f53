mod common;

use aggdiff::diagnostics::{
    bracket_constant, check_minmax, diagnose, make_test_functions, tv_envelope, w1_time_lipschitz,
    weak_residual, CosineBump, DiagnosticsOptions, TestFunction,
};
use aggdiff::integrator::{uniform_times, StepLog};
use aggdiff::{atomize, integrate, InitialDatum, ModelSpec, ParticleState, Trajectory};
use common::{confronto_datum, confronto_spec, MASS};
use proptest::prelude::*;

fn run(
    spec: &ModelSpec,
    datum: &InitialDatum,
    n: usize,
    t_final: f64,
    tolerance: f64,
) -> Trajectory {
    let mut cfg = common::config(t_final, 101);
    cfg.abs_tolerance = tolerance;
    integrate(&atomize(datum, spec, n).unwrap(), spec, &cfg).unwrap()
}

fn stationary(n: usize) -> (Trajectory, ModelSpec) {
    let spec = common::zero_spec(1.0, MASS);
    (run(&spec, &confronto_datum(), n, 1.0, 1e-8), spec)
}

#[test]
fn corrupted_gap_is_flagged() {
    let spec = confronto_spec(1.0);
    let mut traj = run(&spec, &confronto_datum(), 50, 1.0, 1e-8);
    let s = &traj.snapshots[5];
    let mut x = s.positions().to_vec();
    // lower bound is σ/(MN) = 0.014 with M = 1; a uniform gap is 0.02
    x[10] = x[9] + 0.5 * (x[10] - x[9]);
    traj.snapshots[5] = ParticleState::new(s.time, x, s.mass()).unwrap();
    let env = check_minmax(&traj, &spec, 0.7, 0.7);
    let failures: Vec<_> = env.failures().collect();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].time, traj.snapshots[5].time);
    assert_eq!(failures[0].min_gap_index, 9);
    assert!((failures[0].lower_bound - 0.014).abs() <= 1e-15);
}

#[test]
fn bracket_rate_clears_the_threshold() {
    let spec = confronto_spec(1.0);
    let threshold = 2.0 * 0.7 * 1.0 * spec.kernel.bound() * 1.0 / MASS;
    assert!(bracket_constant(&spec, 0.7) > threshold);
    assert!(bracket_constant(&common::zero_spec(1.0, MASS), 0.7) > 0.0);
}

#[test]
fn stationary_run_has_trivial_diagnostics() {
    let (traj, spec) = stationary(40);
    let report = diagnose(&traj, &spec, 0.7, 0.7, &DiagnosticsOptions::default()).unwrap();
    assert!(report.minmax.all_pass());
    assert_eq!(report.w1_lipschitz, 0.0);
    assert!(report.tv.values.iter().all(|v| (v - 1.4).abs() <= 1e-12));
    assert_eq!((report.tv.envelope.c1, report.tv.envelope.c2), (0.0, 0.0));
    assert!(report.tv.contained());
    for r in &report.weak_residuals {
        assert!(r.value.abs() <= 1e-10, "mode {}: {}", r.mode, r.value);
    }
}

#[test]
fn rigid_translation_moves_at_mass_times_speed() {
    let base: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let snapshots = uniform_times(1.0, 101)
        .into_iter()
        .map(|t| {
            let x = base.iter().map(|p| p + 0.01 * t).collect();
            ParticleState::new(t, x, MASS).unwrap()
        })
        .collect();
    let traj = Trajectory {
        snapshots,
        step_log: StepLog::default(),
    };
    let c = w1_time_lipschitz(&traj).unwrap();
    assert!((c - 0.01 * MASS).abs() <= 1e-12, "{c}");
}

#[test]
fn envelope_needs_three_snapshots() {
    let (mut traj, _) = stationary(10);
    traj.snapshots.truncate(2);
    assert!(tv_envelope(&traj, 0.5).is_err());
}

#[test]
fn quadrature_refinement_barely_moves_the_residual() {
    let spec = confronto_spec(1.0);
    let traj = run(&spec, &confronto_datum(), 100, 1.0, 1e-10);
    let test = CosineBump::new(2, 1.0, 1.0);
    let coarse = weak_residual(&traj, &spec, &test, 5).unwrap();
    let fine = weak_residual(&traj, &spec, &test, 10).unwrap();
    assert!(
        (coarse - fine).abs() <= 0.01 * coarse.abs(),
        "{coarse} vs {fine}"
    );
}

#[test]
fn residual_decays_on_an_asymmetric_datum() {
    let datum = InitialDatum::two_step(0.5, 0.7, 0.5, 1.0).unwrap();
    let base = confronto_spec(1.0);
    let spec = ModelSpec::new(
        base.diffusion.clone(),
        base.velocity.clone(),
        base.kernel.clone(),
        1.0,
        datum.total_mass(),
    )
    .unwrap();
    let tests = make_test_functions(1.0, 1.0, 3);
    let residuals: Vec<Vec<f64>> = [50, 100, 200]
        .iter()
        .map(|&n| {
            let traj = run(&spec, &datum, n, 1.0, 1e-10);
            tests
                .iter()
                .map(|t| weak_residual(&traj, &spec, t, 5).unwrap())
                .collect()
        })
        .collect();
    for k in 0..3 {
        for w in residuals.windows(2) {
            let ratio = w[0][k].abs() / w[1][k].abs();
            assert!(ratio >= 1.5, "mode {}: {residuals:?}", k + 1);
        }
    }
}

#[test]
fn diagnosis_is_repeatable() {
    let spec = confronto_spec(0.1);
    let traj = run(&spec, &confronto_datum(), 60, 0.5, 1e-8);
    let opts = DiagnosticsOptions::default();
    let a = diagnose(&traj, &spec, 0.7, 0.7, &opts).unwrap();
    let b = diagnose(&traj, &spec, 0.7, 0.7, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn second_mode_at_the_centre() {
    let test = CosineBump::new(2, 1.0, 1.0);
    assert!((test.value(0.5, 0.5) + (-1.0f64).exp()).abs() <= 1e-15);
}

proptest! {
    #[test]
    fn test_functions_are_admissible(
        k in 1usize..6,
        length in 0.5f64..3.0,
        t_final in 0.1f64..5.0,
        s in 0.0f64..1.0,
    ) {
        let test = CosineBump::new(k, length, t_final);
        let t = s * t_final;
        let scale = (k as f64 * std::f64::consts::PI / length).max(1.0);
        prop_assert!(test.dx(t, 0.0).abs() <= 1e-15 * scale);
        prop_assert!(test.dx(t, length).abs() <= 1e-12 * scale);
        let (a, b) = test.time_support();
        prop_assert!(a > 0.0 && b < t_final);
        prop_assert_eq!(test.value(0.0, 0.3 * length), 0.0);
        prop_assert_eq!(test.value(t_final, 0.3 * length), 0.0);
        if t <= a || t >= b {
            prop_assert_eq!(test.value(t, 0.7 * length), 0.0);
        }
    }
}
