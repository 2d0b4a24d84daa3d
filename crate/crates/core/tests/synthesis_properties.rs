mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{reference_case, reference_result};
use rescon::linalg::min_sym_eigenvalue;
use rescon::model::DiscreteModel;
use rescon::reachability::{Bounds, UnsafeSet};
use rescon::synthesis::{
    assemble_lmi, parse_a_grid, solve_fixed_a, synthesize, verify_certificate, GridStatus,
    LmiWeighting, ResilientResult, SynthesisProblem, VerifyOptions,
};
use rescon::Error;

const SEPARATION: &str = "ellipsoid separated from unsafe set";
const LMI: &str = "invariance LMI positive semidefinite";
const LEVEL: &str = "Lyapunov level along sampled trajectories";

fn scalar(disturbance: f64) -> SynthesisProblem {
    let model = DiscreteModel::new(
        DMatrix::from_element(1, 1, 0.5),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        1.0,
    )
    .unwrap();
    SynthesisProblem::new(
        model,
        Bounds::new(vec![1.0], disturbance).unwrap(),
        UnsafeSet::frequency_limit(1, 3.0).unwrap(),
        parse_a_grid("0.05:0.05:0.95").unwrap(),
    )
    .unwrap()
}

fn check<'a>(
    report: &'a rescon::synthesis::CertificateReport,
    name: &str,
) -> &'a rescon::synthesis::CheckOutcome {
    report.checks.iter().find(|c| c.name == name).unwrap()
}

fn quick_verify() -> VerifyOptions {
    VerifyOptions {
        trials: 60,
        horizon: 200,
        seed: 4,
        ..VerifyOptions::default()
    }
}

#[test]
fn without_a_safety_limit_the_physical_bounds_survive() {
    let c = reference_case();
    let far = UnsafeSet::frequency_limit(7, 50.0).unwrap();
    let p = SynthesisProblem::new(
        c.disc,
        c.bounds.clone(),
        far,
        parse_a_grid("0.1:0.1:0.9").unwrap(),
    )
    .unwrap();
    let r = synthesize(&p).unwrap();
    for (ri, g) in r.r.iter().zip(&c.bounds.gamma) {
        assert!((ri - g * g).abs() <= 1e-6 * g * g, "r = {:?}", r.r);
    }
}

#[test]
fn scalar_disturbance_sweep_reaches_infeasibility() {
    // The disturbance alone drives |x| towards 2 γ_ω, so past γ_ω = 1.5 the
    // limit |x| < 3 cannot hold; find the first infeasible γ_ω on a sweep.
    let mut last_feasible = None;
    let mut first_infeasible = None;
    for k in 1..=20 {
        let gw = 0.1 * k as f64;
        match synthesize(&scalar(gw)) {
            Ok(r) => {
                assert!(first_infeasible.is_none(), "feasible again at {gw}");
                assert!(r.w[(0, 0)] <= 9.0 + 1e-9);
                last_feasible = Some(gw);
            }
            Err(Error::Infeasible { statuses }) => {
                assert_eq!(statuses.len(), 19);
                first_infeasible.get_or_insert(gw);
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
    let (ok, bad) = (last_feasible.unwrap(), first_infeasible.unwrap());
    assert!(
        ok < 1.5 && bad <= 1.5 + 1e-9,
        "feasible up to {ok}, infeasible from {bad}"
    );
    let message = synthesize(&scalar(2.0)).unwrap_err().to_string();
    assert!(message.contains("smaller disturbance bound"), "{message}");
}

#[test]
fn one_point_grid_equals_fixed_a_solve() {
    let mut p = scalar(0.2);
    p.a_grid = vec![0.4];
    let r = synthesize(&p).unwrap();
    let s = solve_fixed_a(&p, 0.4).unwrap();
    assert_eq!(r.r, s.r);
    assert_eq!(r.a, 0.4);
    match s.status {
        GridStatus::Optimal { objective } => assert_eq!(objective, r.objective),
        other => panic!("{other:?}"),
    }
}

#[test]
fn infeasible_grid_points_are_skipped() {
    let mut p = scalar(0.5);
    // a W ⪰ A W Aᵀ needs a > ρ(A)² = 0.25
    p.a_grid = vec![0.1, 0.6];
    let statuses: Vec<_> = p
        .a_grid
        .iter()
        .map(|a| solve_fixed_a(&p, *a).unwrap().status)
        .collect();
    assert!(
        matches!(statuses[0], GridStatus::Infeasible),
        "{statuses:?}"
    );
    assert!(
        matches!(statuses[1], GridStatus::Optimal { .. }),
        "{statuses:?}"
    );
    assert_eq!(synthesize(&p).unwrap().a, 0.6);
}

#[test]
fn default_grid_is_within_1e4_of_a_ten_times_finer_grid() {
    let c = reference_case();
    let fine = SynthesisProblem::new(
        c.disc,
        c.bounds,
        c.unsafe_set,
        parse_a_grid("0.002:0.002:0.998").unwrap(),
    )
    .unwrap();
    let best_fine = synthesize(&fine).unwrap();
    let coarse = reference_result();
    assert!(
        best_fine.objective - coarse.objective <= 1e-4,
        "coarse {} at a = {}, fine {} at a = {}",
        coarse.objective,
        coarse.a,
        best_fine.objective,
        best_fine.a
    );
}

/// `V(x⁺) ≤ a V(x) + ((1 − a)/k)(Σ u²/r + ω²/γ_ω²)` along random admissible steps.
#[test]
fn certificate_satisfies_the_dissipation_inequality() {
    let c = reference_case();
    let r = reference_result();
    let ell = r.ellipsoid().unwrap();
    let k = r.weighting.divisor(4, c.bounds.disturbance);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let mut x = DVector::<f64>::zeros(7);
        for _ in 0..100 {
            let u = DVector::from_fn(4, |i, _| {
                r.gamma_hat[i]
                    * if rng.random_bool(0.5) {
                        rng.random_range(-1.0..1.0)
                    } else {
                        1.0f64.copysign(rng.random_range(-1.0..1.0))
                    }
            });
            let w = 0.2 * rng.random_range(-1.0..1.0);
            let next = &c.disc.a * &x + &c.disc.b * &u + c.disc.h.column(0) * w;
            let supply: f64 = (0..4).map(|i| u[i] * u[i] / r.r[i]).sum::<f64>() + w * w / 0.04;
            let bound = r.a * ell.level(&x).unwrap() + (1.0 - r.a) / k * supply;
            worst = worst.max(ell.level(&next).unwrap() - bound);
            x = next;
        }
    }
    assert!(worst <= 1e-7, "dissipation violated by {worst:e}");
}

#[test]
fn smaller_disturbance_never_shrinks_the_bounds() {
    let c = reference_case();
    let grid = parse_a_grid("0.1:0.04:0.9").unwrap();
    let objective = |gw: f64| {
        let bounds = Bounds::new(c.bounds.gamma.clone(), gw).unwrap();
        synthesize(
            &SynthesisProblem::new(c.disc.clone(), bounds, c.unsafe_set.clone(), grid.clone())
                .unwrap(),
        )
        .unwrap()
        .objective
    };
    let sweep: Vec<f64> = [0.1, 0.2, 0.3].map(objective).to_vec();
    assert!(
        sweep[0] >= sweep[1] - 1e-6 && sweep[1] >= sweep[2] - 1e-6,
        "{sweep:?}"
    );
}

#[test]
fn injected_faults_are_caught_by_the_right_check() {
    let c = reference_case();
    let good = reference_result();

    let mut fat = good.clone();
    fat.w[(0, 0)] += 0.1;
    let rep = verify_certificate(&c.disc, &fat, &c.unsafe_set, &c.bounds, &quick_verify()).unwrap();
    let sep = check(&rep, SEPARATION);
    assert!(!sep.passed);
    let expected = good.w[(0, 0)] + 0.1 - 0.04;
    assert!(
        (sep.residual - expected).abs() < 1e-9,
        "{} vs {expected}",
        sep.residual
    );
    assert!(expected > 0.1 - 1e-6);

    let mut doubled: ResilientResult = good.clone();
    doubled.r.iter_mut().for_each(|r| *r *= 4.0);
    doubled.gamma_hat.iter_mut().for_each(|g| *g *= 2.0);
    let rep =
        verify_certificate(&c.disc, &doubled, &c.unsafe_set, &c.bounds, &quick_verify()).unwrap();
    assert!(!check(&rep, LMI).passed);
    assert!(!rep.passed());
}

#[test]
fn midpoint_of_two_certificates_is_a_certificate() {
    let c = reference_case();
    let a = 0.34;
    let solve = |limit: f64| {
        let set = UnsafeSet::frequency_limit(7, limit).unwrap();
        let p = SynthesisProblem::new(c.disc.clone(), c.bounds.clone(), set, vec![a]).unwrap();
        solve_fixed_a(&p, a).unwrap()
    };
    let (s1, s2) = (solve(0.2), solve(0.15));
    assert_ne!(s1.r, s2.r);
    let w = (&s1.w + &s2.w) * 0.5;
    let r: Vec<f64> = s1.r.iter().zip(&s2.r).map(|(x, y)| 0.5 * (x + y)).collect();
    let k = LmiWeighting::default().divisor(4, 0.2);
    let lmi = assemble_lmi(&c.disc, &w, &r, 0.2, a, k).unwrap();
    assert!(min_sym_eigenvalue(&lmi) >= -1e-7);
    assert!(w[(0, 0)] <= 0.04 + 1e-9);
    assert!(r
        .iter()
        .zip(&c.bounds.gamma)
        .all(|(ri, g)| *ri <= g * g + 1e-9));
}

/// The per-input split `(1 − a)/m` also charges the disturbance channel
/// `(1 − a)/m`, so the budget sums past `1 − a` and sampled trajectories
/// leave the unit level set. The channel split keeps them inside.
#[test]
fn per_input_weighting_is_not_invariant() {
    let c = reference_case();
    let p = SynthesisProblem::new(
        c.disc.clone(),
        c.bounds.clone(),
        c.unsafe_set.clone(),
        parse_a_grid("0.3:0.02:0.4").unwrap(),
    )
    .unwrap()
    .with_weighting(LmiWeighting::PerInput);
    let r = synthesize(&p).unwrap();
    let opts = VerifyOptions {
        trials: 1000,
        horizon: 500,
        seed: 1,
        ..VerifyOptions::default()
    };
    let rep = verify_certificate(&c.disc, &r, &c.unsafe_set, &c.bounds, &opts).unwrap();
    assert!(check(&rep, LMI).passed);
    assert!(!check(&rep, LEVEL).passed, "max V = {}", rep.max_level);
    assert!(rep.max_level > 1.05 && rep.max_level <= 5.0 / 4.0 + 1e-6);
}
