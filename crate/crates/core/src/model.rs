//! Single-area frequency dynamics: parameter types, the continuous-time
//! state-space assembly, and exact zero-order-hold discretization.
//!
//! States are ordered `[Δf, ΔP_G (n_G), ΔX_gov (n_G), ΔP_ES (n_ES)]` and
//! inputs `[U_G (n_G), U_ES (n_ES)]`. The scalar disturbance
//! `ω = ΔP_L − ΔP_RES` enters the frequency row with coefficient `−1/M`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::expm;
use crate::reachability::Bounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Turbine time constant `T_t` in seconds.
    #[serde(rename = "T_t")]
    pub turbine_time_constant: f64,
    /// Governor time constant `T_g` in seconds.
    #[serde(rename = "T_g")]
    pub governor_time_constant: f64,
    /// Speed regulation (droop) gain `R` in Hz/pu.
    #[serde(rename = "R")]
    pub droop: f64,
    /// Physical setpoint bound `γ` in pu.
    #[serde(rename = "gamma")]
    pub rate_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageParams {
    #[serde(rename = "T_ES")]
    pub time_constant: f64,
    #[serde(rename = "gamma")]
    pub rate_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSystemParams {
    /// Aggregated inertia `M` (pu·s/Hz).
    pub inertia: f64,
    /// Aggregated damping `D` (pu/Hz).
    pub damping: f64,
    #[serde(default)]
    pub generators: Vec<GeneratorParams>,
    #[serde(default)]
    pub storages: Vec<StorageParams>,
    /// Bound `γ_ω` on `|ΔP_L − ΔP_RES|` (pu).
    pub disturbance_bound: f64,
}

/// Default setpoint bound for generator 1, which the reference parameter
/// table leaves unlisted.
pub const DEFAULT_GAMMA_1: f64 = 0.5;

impl PowerSystemParams {
    /// Two generators and two storage units with the reference case-study
    /// values (`γ₁` defaults to [`DEFAULT_GAMMA_1`]).
    pub fn case_study() -> Self {
        Self {
            inertia: 5.0,
            damping: 3.0,
            generators: vec![
                GeneratorParams {
                    turbine_time_constant: 3.0,
                    governor_time_constant: 0.8,
                    droop: 1.5,
                    rate_bound: DEFAULT_GAMMA_1,
                },
                GeneratorParams {
                    turbine_time_constant: 0.5,
                    governor_time_constant: 0.12,
                    droop: 0.5,
                    rate_bound: 0.5,
                },
            ],
            storages: vec![
                StorageParams {
                    time_constant: 0.1,
                    rate_bound: 0.2,
                },
                StorageParams {
                    time_constant: 0.1,
                    rate_bound: 0.15,
                },
            ],
            disturbance_bound: 0.2,
        }
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn n_storages(&self) -> usize {
        self.storages.len()
    }

    pub fn state_dim(&self) -> usize {
        1 + 2 * self.generators.len() + self.storages.len()
    }

    pub fn input_dim(&self) -> usize {
        self.generators.len() + self.storages.len()
    }

    /// Physical setpoint bounds `γ` in input order, with `γ_ω`.
    pub fn physical_bounds(&self) -> Bounds {
        let gamma = self
            .generators
            .iter()
            .map(|g| g.rate_bound)
            .chain(self.storages.iter().map(|s| s.rate_bound))
            .collect();
        Bounds::new(gamma, self.disturbance_bound).expect("validated parameters give valid bounds")
    }

    pub fn validate(&self) -> Result<()> {
        positive("inertia", self.inertia)?;
        nonnegative("damping", self.damping)?;
        nonnegative("disturbance_bound", self.disturbance_bound)?;
        if self.generators.is_empty() && self.storages.is_empty() {
            return Err(Error::param(
                "generators",
                "at least one generator or storage unit is required",
            ));
        }
        for (j, g) in self.generators.iter().enumerate() {
            positive(&format!("generators[{j}].T_t"), g.turbine_time_constant)?;
            positive(&format!("generators[{j}].T_g"), g.governor_time_constant)?;
            positive(&format!("generators[{j}].R"), g.droop)?;
            positive(&format!("generators[{j}].gamma"), g.rate_bound)?;
        }
        for (i, s) in self.storages.iter().enumerate() {
            positive(&format!("storages[{i}].T_ES"), s.time_constant)?;
            positive(&format!("storages[{i}].gamma"), s.rate_bound)?;
        }
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(
            field,
            format!("must be finite and > 0, got {v}"),
        ))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(
            field,
            format!("must be finite and >= 0, got {v}"),
        ))
    }
}

/// Model file contents: the physical parameters plus the AGC sample time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub params: PowerSystemParams,
    pub tau: f64,
}

impl ModelConfig {
    pub fn case_study() -> Self {
        Self {
            params: PowerSystemParams::case_study(),
            tau: 2.0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.params.validate()?;
        positive("tau", cfg.tau)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub state_labels: Vec<String>,
}

impl ContinuousModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        check_triple("continuous model", &a, &b, &h)?;
        let state_labels = (1..=a.nrows()).map(|i| format!("x{i}")).collect();
        Ok(Self {
            a,
            b,
            h,
            state_labels,
        })
    }
}

/// Sampled-data model `x(k+1) = A x(k) + B u(k) + H ω(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub tau: f64,
}

impl DiscreteModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, h: DMatrix<f64>, tau: f64) -> Result<Self> {
        check_triple("discrete model", &a, &b, &h)?;
        positive("tau", tau)?;
        Ok(Self { a, b, h, tau })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

fn check_triple(
    context: &'static str,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> Result<()> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::DimensionMismatch {
            context,
            expected: format!("B with {n} rows"),
            got: format!("{} rows", b.nrows()),
        });
    }
    if h.nrows() != n || h.ncols() != 1 {
        return Err(Error::DimensionMismatch {
            context,
            expected: format!("H of shape {n}x1"),
            got: format!("{}x{}", h.nrows(), h.ncols()),
        });
    }
    Ok(())
}

pub fn build_continuous(params: &PowerSystemParams) -> Result<ContinuousModel> {
    params.validate()?;
    let ng = params.n_generators();
    let ne = params.n_storages();
    let n = params.state_dim();
    let m = params.input_dim();
    let inv_m = 1.0 / params.inertia;

    let pg = |j: usize| 1 + j;
    let xg = |j: usize| 1 + ng + j;
    let pe = |i: usize| 1 + 2 * ng + i;

    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut h = DMatrix::zeros(n, 1);

    a[(0, 0)] = -params.damping * inv_m;
    h[(0, 0)] = -inv_m;
    for (j, g) in params.generators.iter().enumerate() {
        a[(0, pg(j))] = inv_m;

        let tt = g.turbine_time_constant;
        a[(pg(j), pg(j))] = -1.0 / tt;
        a[(pg(j), xg(j))] = 1.0 / tt;

        let tg = g.governor_time_constant;
        a[(xg(j), 0)] = -1.0 / (tg * g.droop);
        a[(xg(j), xg(j))] = -1.0 / tg;
        b[(xg(j), j)] = 1.0 / tg;
    }
    for (i, s) in params.storages.iter().enumerate() {
        a[(0, pe(i))] = inv_m;
        a[(pe(i), pe(i))] = -1.0 / s.time_constant;
        b[(pe(i), ng + i)] = 1.0 / s.time_constant;
    }

    let mut state_labels = vec!["df".to_string()];
    state_labels.extend((1..=ng).map(|j| format!("dPG{j}")));
    state_labels.extend((1..=ng).map(|j| format!("dXgov{j}")));
    state_labels.extend((1..=ne).map(|i| format!("dPES{i}")));

    Ok(ContinuousModel {
        a,
        b,
        h,
        state_labels,
    })
}

/// Exact ZOH discretization via the exponential of the augmented matrix
/// `[[A_c, B_c, H_c], [0, 0, 0]]·τ`.
pub fn discretize(model: &ContinuousModel, tau: f64) -> Result<DiscreteModel> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::param(
            "tau",
            format!("must be finite and > 0, got {tau}"),
        ));
    }
    let n = model.state_dim();
    let m = model.input_dim();
    let size = n + m + 1;
    let mut aug = DMatrix::zeros(size, size);
    aug.view_mut((0, 0), (n, n)).copy_from(&model.a);
    aug.view_mut((0, n), (n, m)).copy_from(&model.b);
    aug.view_mut((0, n + m), (n, 1)).copy_from(&model.h);
    let e = expm(&(aug * tau))?;
    Ok(DiscreteModel {
        a: e.view((0, 0), (n, n)).into_owned(),
        b: e.view((0, n), (n, m)).into_owned(),
        h: e.view((0, n + m), (n, 1)).into_owned(),
        tau,
    })
}

/// Builds and discretizes in one call.
pub fn build_discrete(cfg: &ModelConfig) -> Result<(ContinuousModel, DiscreteModel)> {
    let cont = build_continuous(&cfg.params)?;
    let disc = discretize(&cont, cfg.tau)?;
    Ok((cont, disc))
}
