//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use rescon::linalg::spectral_radius;
use rescon::model::{build_discrete, ContinuousModel, DiscreteModel, ModelConfig};
use rescon::reachability::{Bounds, UnsafeSet};
use rescon::synthesis::{default_a_grid, synthesize, ResilientResult, SynthesisProblem};

pub struct Case {
    pub config: ModelConfig,
    pub cont: ContinuousModel,
    pub disc: DiscreteModel,
    pub bounds: Bounds,
    pub unsafe_set: UnsafeSet,
}

/// Two generators, two storage units, `τ = 2 s`, `|Δf| ≥ 0.2 Hz` unsafe.
pub fn reference_case() -> Case {
    let config = ModelConfig::case_study();
    let (cont, disc) = build_discrete(&config).unwrap();
    Case {
        bounds: config.params.physical_bounds(),
        unsafe_set: UnsafeSet::frequency_limit(disc.state_dim(), 0.2).unwrap(),
        config,
        cont,
        disc,
    }
}

pub fn reference_problem() -> SynthesisProblem {
    let c = reference_case();
    SynthesisProblem::new(c.disc, c.bounds, c.unsafe_set, default_a_grid()).unwrap()
}

/// Default-grid certificate for the reference case, solved once per test binary.
pub fn reference_result() -> &'static ResilientResult {
    static RESULT: OnceLock<ResilientResult> = OnceLock::new();
    RESULT.get_or_init(|| synthesize(&reference_problem()).unwrap())
}

pub fn e1(n: usize, value: f64) -> DVector<f64> {
    let mut x = DVector::zeros(n);
    x[0] = value;
    x
}

/// ZOH matrices from classical RK4 on the variational equations
/// `Φ' = A_c Φ`, `Γ' = A_c Γ + [B_c H_c]` over `[0, τ]`.
pub fn rk4_zoh(
    cont: &ContinuousModel,
    tau: f64,
    steps: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = cont.a.nrows();
    let m = cont.b.ncols();
    let mut forcing = DMatrix::zeros(n, n + m + 1);
    forcing.view_mut((0, n), (n, m)).copy_from(&cont.b);
    forcing.view_mut((0, n + m), (n, 1)).copy_from(&cont.h);
    let mut y = DMatrix::zeros(n, n + m + 1);
    y.view_mut((0, 0), (n, n)).fill_with_identity();
    let f = |y: &DMatrix<f64>| &cont.a * y + &forcing;
    let h = tau / steps as f64;
    for _ in 0..steps {
        let k1 = f(&y);
        let k2 = f(&(&y + &k1 * (h / 2.0)));
        let k3 = f(&(&y + &k2 * (h / 2.0)));
        let k4 = f(&(&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    (
        y.columns(0, n).into_owned(),
        y.columns(n, m).into_owned(),
        y.columns(n + m, 1).into_owned(),
    )
}

/// Extremal `x₁(N)` over box-bounded inputs, computed from the impulse
/// response `e₁ᵀ A^{N−1−k} B`: every input sits at the bound matching the
/// sign of its gain.
pub fn bang_bang_value(
    model: &DiscreteModel,
    bounds: &[f64],
    horizon: usize,
    x0: &DVector<f64>,
    omega: &[f64],
    maximize: bool,
) -> f64 {
    let n = model.state_dim();
    // row_k = e₁ᵀ A^{N−1−k}, built backwards
    let mut row = DMatrix::<f64>::zeros(1, n);
    row[(0, 0)] = 1.0;
    let sign = if maximize { 1.0 } else { -1.0 };
    let mut value = 0.0;
    for k in (0..horizon).rev() {
        let g = &row * &model.b;
        let gh = (&row * &model.h)[(0, 0)];
        value += omega[k] * gh;
        for (i, b) in bounds.iter().enumerate() {
            value += sign * b * g[(0, i)].abs();
        }
        row = &row * &model.a;
    }
    value + (&row * x0)[(0, 0)]
}

/// Random Schur-stable `(A, B, H)` with `n ≤ 6`, `m ≤ 3`.
pub fn stable_model() -> impl Strategy<Value = DiscreteModel> {
    (1usize..=6, 1usize..=3)
        .prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(-1.0f64..1.0, n * n),
                prop::collection::vec(-1.0f64..1.0, n * m),
                prop::collection::vec(-1.0f64..1.0, n),
                0.05f64..0.97,
                Just((n, m)),
            )
        })
        .prop_filter_map("degenerate A", |(a, b, h, rho, (n, m))| {
            let a = DMatrix::from_row_slice(n, n, &a);
            let r = spectral_radius(&a).ok()?;
            if r < 1e-6 {
                return None;
            }
            let a = a * (rho / r);
            DiscreteModel::new(
                a,
                DMatrix::from_row_slice(n, m, &b),
                DMatrix::from_row_slice(n, 1, &h),
                1.0,
            )
            .ok()
        })
}
