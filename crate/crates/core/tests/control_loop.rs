mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{e1, reference_case, reference_result};
use rescon::attacks::random_setpoint_attack;
use rescon::control::{
    propagate_continuous, propagate_discrete, simulate_continuous, simulate_discrete,
    simulate_discrete_with, AgcController, AttackSignal, ContinuousOptions, ControllerParams,
    DisturbanceModel, DEFAULT_DWELL,
};

fn mild_controller(bounds: Vec<f64>) -> AgcController {
    let params = ControllerParams {
        frequency_bias: 1.0,
        kp: 0.05,
        ki: 0.05,
        ..ControllerParams::case_study()
    };
    AgcController::new(params, bounds).unwrap()
}

#[test]
fn closed_loops_agree_when_feedback_is_contractive() {
    let c = reference_case();
    let ctrl = mild_controller(c.bounds.gamma.clone());
    let dist = DisturbanceModel::new(0.2, DEFAULT_DWELL, 3).unwrap();
    let x0 = e1(7, 0.1);
    let steps = 60;
    let td = simulate_discrete(&c.disc, &ctrl, &dist, steps, &x0, None).unwrap();
    let opts = ContinuousOptions {
        tau: 2.0,
        t_end: steps as f64 * 2.0,
        dt: 1e-3,
        record_every: 2000,
    };
    let tc = simulate_continuous(&c.cont, &ctrl, &opts, &dist, &x0, None).unwrap();
    assert_eq!(td.states.len(), tc.states.len());
    for (k, (p, q)) in td.states.iter().zip(&tc.states).enumerate() {
        assert!((p - q).amax() < 1e-9, "step {k}: {:e}", (p - q).amax());
        assert!((tc.times[k] - td.times[k]).abs() < 1e-12);
    }
    for (a, b) in td.steps.iter().zip(&tc.steps) {
        assert!((&a.u - &b.u).amax() < 1e-9);
        assert_eq!(a.omega, b.omega);
    }
}

#[test]
fn rk4_converges_at_fourth_order() {
    let c = reference_case();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let steps = 10;
    let inputs: Vec<DVector<f64>> = (0..steps)
        .map(|_| DVector::from_fn(4, |i, _| c.bounds.gamma[i] * rng.random_range(-1.0..1.0)))
        .collect();
    let omega: Vec<f64> = (0..steps).map(|_| rng.random_range(-0.2..0.2)).collect();
    let x0 = e1(7, 0.1);
    let run = |dt| propagate_continuous(&c.cont, 2.0, dt, &inputs, &omega, &x0).unwrap();
    let (coarse, mid, fine) = (run(0.1), run(0.05), run(0.025));
    let change = |a: &[DVector<f64>], b: &[DVector<f64>]| {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p - q).amax())
            .fold(0.0, f64::max)
    };
    let first = change(&coarse, &mid);
    let second = change(&mid, &fine);
    assert!(first > 0.0);
    assert!(second <= first / 16.0, "ratio {}", second / first);
    // and the fine solution approaches the exact ZOH map
    let exact = propagate_discrete(&c.disc, &inputs, &omega, &x0);
    assert!(change(&fine, &exact) < second);
}

#[test]
fn quiescent_loop_stays_at_rest() {
    let c = reference_case();
    let ctrl = AgcController::new(ControllerParams::case_study(), c.bounds.gamma.clone()).unwrap();
    let dist = DisturbanceModel::new(0.0, 1, 0).unwrap();
    let x0 = DVector::zeros(7);
    let opts = ContinuousOptions {
        tau: 2.0,
        t_end: 20.0,
        dt: 0.01,
        record_every: 7,
    };
    let tc = simulate_continuous(&c.cont, &ctrl, &opts, &dist, &x0, None).unwrap();
    assert!(tc.states.iter().all(|x| x.amax() == 0.0));
    assert!(tc
        .steps
        .iter()
        .all(|s| s.u.amax() == 0.0 && !s.saturated.contains(&true)));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    /// Under certified bounds, no disturbance or setpoint replacement takes
    /// the state out of the ellipsoid or the frequency band.
    #[test]
    fn certified_bounds_keep_every_run_safe(seed in any::<u64>(), attacked in any::<bool>(), dwell in 1usize..30) {
        let c = reference_case();
        let r = reference_result();
        let ell = r.ellipsoid().unwrap();
        let ctrl = AgcController::new(ControllerParams::case_study(), r.gamma_hat.clone()).unwrap();
        let dist = DisturbanceModel::new(0.2, dwell, seed).unwrap();
        let steps = 300;
        let attack = attacked.then(|| {
            AttackSignal::SetpointReplacement(random_setpoint_attack(&r.gamma_hat, steps, seed ^ 0x5eed).unwrap())
        });
        let traj = simulate_discrete(&c.disc, &ctrl, &dist, steps, &DVector::zeros(7), attack.as_ref()).unwrap();
        for x in &traj.states {
            prop_assert!(x[0].abs() <= 0.2);
            prop_assert!(ell.level(x).unwrap() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn applied_setpoints_never_exceed_enforced_bounds(
        seed in any::<u64>(),
        scale in 0.01f64..1.0,
        df0 in -0.5f64..0.5,
    ) {
        let c = reference_case();
        let bounds: Vec<f64> = c.bounds.gamma.iter().map(|g| g * scale).collect();
        let ctrl = AgcController::new(ControllerParams::case_study(), bounds.clone()).unwrap();
        let dist = DisturbanceModel::new(0.2, 5, seed).unwrap();
        let traj = simulate_discrete(&c.disc, &ctrl, &dist, 100, &e1(7, df0), None).unwrap();
        for s in &traj.steps {
            for (i, b) in bounds.iter().enumerate() {
                prop_assert!(s.u[i].abs() <= *b);
                prop_assert_eq!(s.saturated[i], s.u_raw[i].abs() > *b);
            }
            prop_assert!(s.omega.abs() <= 0.2);
        }
    }

    #[test]
    fn sensor_injection_only_moves_the_measurement(delta in prop::collection::vec(-0.05f64..0.05, 1..20)) {
        // With huge bounds the loop is linear: replaying δ equals shifting
        // the measured frequency by δ at each step.
        let c = reference_case();
        let ctrl = mild_controller(vec![1e6; 4]);
        let omega = vec![0.0; delta.len()];
        let x0 = e1(7, 0.05);
        let tr = simulate_discrete_with(&c.disc, &ctrl, &omega, &x0, Some(&AttackSignal::SensorInjection(delta.clone()))).unwrap();
        let mut integral = 0.0;
        for (k, s) in tr.steps.iter().enumerate() {
            let ace = -(tr.states[k][0] + delta[k]);
            integral += ace;
            let agc = 0.05 * ace + 0.05 * integral;
            for i in 0..4 {
                prop_assert!((s.u[i] - ControllerParams::case_study().participation[i] * agc).abs() < 1e-12);
            }
            prop_assert_eq!(s.attack_signal, delta[k]);
        }
    }
}
