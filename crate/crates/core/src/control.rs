//! AGC proportional-integral control with participation factors and local
//! saturation, plus discrete and continuous closed-loop simulators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContinuousModel, DiscreteModel};

/// Controller gains as read from a controller file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    /// Frequency bias `𝔅` (pu/Hz).
    pub frequency_bias: f64,
    pub kp: f64,
    /// Integral gain, applied per controller step.
    pub ki: f64,
    /// Participation factors `β`, summing to one.
    pub participation: Vec<f64>,
}

impl ControllerParams {
    pub fn case_study() -> Self {
        Self {
            frequency_bias: 10.0,
            kp: 0.1,
            ki: 10.0,
            participation: vec![0.3, 0.4, 0.2, 0.1],
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.participation.len() != m {
            return Err(Error::DimensionMismatch {
                context: "participation factors",
                expected: format!("{m} factors"),
                got: format!("{}", self.participation.len()),
            });
        }
        if let Some(i) = self
            .participation
            .iter()
            .position(|b| !(b.is_finite() && *b >= 0.0))
        {
            return Err(Error::param(format!("participation[{i}]"), "must be >= 0"));
        }
        let sum: f64 = self.participation.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(
                "participation",
                format!("must sum to 1, got {sum}"),
            ));
        }
        for (name, v) in [
            ("frequency_bias", self.frequency_bias),
            ("kp", self.kp),
            ("ki", self.ki),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        Ok(())
    }
}

/// Setpoints produced by one controller update.
#[derive(Debug, Clone, PartialEq)]
pub struct AgcOutput {
    pub raw: DVector<f64>,
    pub applied: DVector<f64>,
    pub saturated: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgcController {
    params: ControllerParams,
    enforced_bounds: Vec<f64>,
    integral: f64,
}

impl AgcController {
    pub fn new(params: ControllerParams, enforced_bounds: Vec<f64>) -> Result<Self> {
        params.validate(enforced_bounds.len())?;
        if let Some(i) = enforced_bounds.iter().position(|b| b.is_nan() || *b <= 0.0) {
            return Err(Error::param(format!("enforced_bounds[{i}]"), "must be > 0"));
        }
        Ok(Self {
            params,
            enforced_bounds,
            integral: 0.0,
        })
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn enforced_bounds(&self) -> &[f64] {
        &self.enforced_bounds
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn set_integral(&mut self, value: f64) {
        self.integral = value;
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
    }

    /// `ACE = −𝔅 · Δf_measured`.
    pub fn ace(&self, measured_df: f64) -> f64 {
        -self.params.frequency_bias * measured_df
    }

    /// Clamps each channel to `±enforced_boundᵢ`.
    pub fn saturate(&self, raw: &DVector<f64>) -> (DVector<f64>, Vec<bool>) {
        let mut flags = Vec::with_capacity(raw.len());
        let applied = DVector::from_iterator(
            raw.len(),
            raw.iter().zip(&self.enforced_bounds).map(|(u, b)| {
                let c = u.clamp(-b, *b);
                flags.push(c != *u);
                c
            }),
        );
        (applied, flags)
    }

    /// One AGC update. The integral accumulates the unclamped ACE.
    pub fn step(&mut self, measured_df: f64) -> AgcOutput {
        let ace = self.ace(measured_df);
        self.integral += ace;
        let agc = self.params.kp * ace + self.params.ki * self.integral;
        let raw = DVector::from_iterator(
            self.params.participation.len(),
            self.params.participation.iter().map(|b| b * agc),
        );
        let (applied, saturated) = self.saturate(&raw);
        AgcOutput {
            raw,
            applied,
            saturated,
        }
    }
}

/// Piecewise-constant bounded disturbance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceModel {
    pub bound: f64,
    /// Steps per constant segment.
    pub dwell: usize,
    pub seed: u64,
}

/// 15 steps of 2 s each.
pub const DEFAULT_DWELL: usize = 15;

impl DisturbanceModel {
    pub fn new(bound: f64, dwell: usize, seed: u64) -> Result<Self> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::param("disturbance bound", "must be >= 0"));
        }
        if dwell == 0 {
            return Err(Error::param("dwell", "must be >= 1"));
        }
        Ok(Self { bound, dwell, seed })
    }

    pub fn generate(&self, steps: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // Separate from the trial streams used by the samplers.
        rng.set_stream(u64::MAX);
        let mut out = Vec::with_capacity(steps);
        let mut value = 0.0;
        for k in 0..steps {
            if k % self.dwell == 0 {
                value = if self.bound > 0.0 {
                    rng.random_range(-self.bound..=self.bound)
                } else {
                    0.0
                };
            }
            out.push(value);
        }
        out
    }
}

/// Adversarial signal injected into the loop.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackSignal {
    /// Replaces the AGC setpoints for the first `len` steps; local
    /// saturation still applies.
    SetpointReplacement(Vec<DVector<f64>>),
    /// Added to the measured frequency deviation before the AGC update.
    SensorInjection(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub t: f64,
    pub u_raw: DVector<f64>,
    pub u: DVector<f64>,
    pub omega: f64,
    /// `δ^a` for sensor attacks, 1 while a setpoint replacement is active,
    /// otherwise 0.
    pub attack_signal: f64,
    pub saturated: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tau: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub steps: Vec<ControlStep>,
}

impl Trajectory {
    pub fn frequency(&self) -> Vec<f64> {
        self.states.iter().map(|x| x[0]).collect()
    }

    pub fn max_abs_frequency(&self) -> f64 {
        self.states.iter().map(|x| x[0].abs()).fold(0.0, f64::max)
    }

    /// Number of (step, channel) pairs where clamping was active.
    pub fn saturation_events(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.saturated.iter().filter(|f| **f).count())
            .sum()
    }

    /// Index of the control step in force at time `t`.
    pub fn step_at(&self, t: f64) -> Option<usize> {
        let k = (t / self.tau + 1e-9).floor() as usize;
        (k < self.steps.len()).then_some(k)
    }

    /// First time after which `|Δf|` stays at or below `level`.
    pub fn settling_time(&self, level: f64) -> Option<f64> {
        let last_above = self.states.iter().rposition(|x| x[0].abs() > level);
        match last_above {
            None => self.times.first().copied(),
            Some(i) if i + 1 < self.times.len() => Some(self.times[i + 1]),
            Some(_) => None,
        }
    }
}

/// Setpoints for step `k`: the AGC law, or the attack when active.
fn control_update(
    ctrl: &mut AgcController,
    x: &DVector<f64>,
    k: usize,
    attack: Option<&AttackSignal>,
) -> (DVector<f64>, DVector<f64>, Vec<bool>, f64) {
    match attack {
        Some(AttackSignal::SetpointReplacement(seq)) if k < seq.len() => {
            let raw = seq[k].clone();
            let (u, sat) = ctrl.saturate(&raw);
            (raw, u, sat, 1.0)
        }
        Some(AttackSignal::SensorInjection(seq)) if k < seq.len() => {
            let out = ctrl.step(x[0] + seq[k]);
            (out.raw, out.applied, out.saturated, seq[k])
        }
        _ => {
            let out = ctrl.step(x[0]);
            (out.raw, out.applied, out.saturated, 0.0)
        }
    }
}

fn check_attack_dims(attack: Option<&AttackSignal>, m: usize) -> Result<()> {
    if let Some(AttackSignal::SetpointReplacement(seq)) = attack {
        if let Some(bad) = seq.iter().find(|u| u.len() != m) {
            return Err(Error::DimensionMismatch {
                context: "setpoint attack",
                expected: format!("{m} channels"),
                got: format!("{}", bad.len()),
            });
        }
    }
    Ok(())
}

fn check_loop_dims(n: usize, m: usize, ctrl: &AgcController, x0: &DVector<f64>) -> Result<()> {
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: format!("{n}-vector"),
            got: format!("{}-vector", x0.len()),
        });
    }
    if ctrl.enforced_bounds().len() != m {
        return Err(Error::DimensionMismatch {
            context: "controller",
            expected: format!("{m} channels"),
            got: format!("{}", ctrl.enforced_bounds().len()),
        });
    }
    Ok(())
}

/// Closed loop on the sampled-data model for `omega.len()` steps.
pub fn simulate_discrete_with(
    model: &DiscreteModel,
    ctrl: &AgcController,
    omega: &[f64],
    x0: &DVector<f64>,
    attack: Option<&AttackSignal>,
) -> Result<Trajectory> {
    check_loop_dims(model.state_dim(), model.input_dim(), ctrl, x0)?;
    check_attack_dims(attack, model.input_dim())?;
    let mut ctrl = ctrl.clone();
    let h = model.h.column(0);
    let mut x = x0.clone();
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut steps = Vec::with_capacity(omega.len());
    for (k, &w) in omega.iter().enumerate() {
        let t = k as f64 * model.tau;
        let (u_raw, u, saturated, attack_signal) = control_update(&mut ctrl, &x, k, attack);
        x = &model.a * &x + &model.b * &u + h * w;
        steps.push(ControlStep {
            t,
            u_raw,
            u,
            omega: w,
            attack_signal,
            saturated,
        });
        times.push((k + 1) as f64 * model.tau);
        states.push(x.clone());
    }
    Ok(Trajectory {
        tau: model.tau,
        times,
        states,
        steps,
    })
}

pub fn simulate_discrete(
    model: &DiscreteModel,
    ctrl: &AgcController,
    dist: &DisturbanceModel,
    steps: usize,
    x0: &DVector<f64>,
    attack: Option<&AttackSignal>,
) -> Result<Trajectory> {
    simulate_discrete_with(model, ctrl, &dist.generate(steps), x0, attack)
}

fn rk4_step(
    model: &ContinuousModel,
    x: &DVector<f64>,
    forcing: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    let f = |s: &DVector<f64>| &model.a * s + forcing;
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (dt / 2.0)));
    let k3 = f(&(x + &k2 * (dt / 2.0)));
    let k4 = f(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Integer number of RK4 steps per controller interval.
fn substeps(tau: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && tau > 0.0) {
        return Err(Error::param("dt", "time steps must be positive"));
    }
    if dt >= tau {
        return Err(Error::param(
            "dt",
            format!("integration step {dt} must be smaller than tau {tau}"),
        ));
    }
    if dt > tau / 10.0 + 1e-15 {
        return Err(Error::param(
            "dt",
            format!("integration step {dt} must be <= tau/10"),
        ));
    }
    let ratio = tau / dt;
    let count = ratio.round();
    if (ratio - count).abs() > 1e-6 * ratio {
        return Err(Error::param(
            "dt",
            format!("tau {tau} is not a multiple of dt {dt}"),
        ));
    }
    Ok(count as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousOptions {
    pub tau: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Record the state every this many RK4 steps (and at every controller
    /// instant).
    pub record_every: usize,
}

/// Closed loop on the continuous model with setpoints held between
/// controller updates every `tau` seconds; RK4 at step `dt`.
pub fn simulate_continuous(
    model: &ContinuousModel,
    ctrl: &AgcController,
    opts: &ContinuousOptions,
    dist: &DisturbanceModel,
    x0: &DVector<f64>,
    attack: Option<&AttackSignal>,
) -> Result<Trajectory> {
    let steps = (opts.t_end / opts.tau + 1e-9).floor() as usize;
    simulate_continuous_with(model, ctrl, opts, &dist.generate(steps), x0, attack)
}

pub fn simulate_continuous_with(
    model: &ContinuousModel,
    ctrl: &AgcController,
    opts: &ContinuousOptions,
    omega: &[f64],
    x0: &DVector<f64>,
    attack: Option<&AttackSignal>,
) -> Result<Trajectory> {
    let sub = substeps(opts.tau, opts.dt)?;
    check_loop_dims(model.state_dim(), model.input_dim(), ctrl, x0)?;
    check_attack_dims(attack, model.input_dim())?;
    let record_every = opts.record_every.max(1);
    let mut ctrl = ctrl.clone();
    let hcol: DVector<f64> = model.h.column(0).into_owned();
    let mut x = x0.clone();
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut steps = Vec::with_capacity(omega.len());
    for (k, &w) in omega.iter().enumerate() {
        let t0 = k as f64 * opts.tau;
        let (u_raw, u, saturated, attack_signal) = control_update(&mut ctrl, &x, k, attack);
        let forcing = &model.b * &u + &hcol * w;
        for j in 1..=sub {
            x = rk4_step(model, &x, &forcing, opts.dt);
            if j == sub || j % record_every == 0 {
                times.push(t0 + j as f64 * opts.dt);
                states.push(x.clone());
            }
        }
        steps.push(ControlStep {
            t: t0,
            u_raw,
            u,
            omega: w,
            attack_signal,
            saturated,
        });
    }
    Ok(Trajectory {
        tau: opts.tau,
        times,
        states,
        steps,
    })
}

/// Open-loop propagation `x(k+1) = A x + B u(k) + H ω(k)`; returns
/// `x(0..=K)`.
pub fn propagate_discrete(
    model: &DiscreteModel,
    inputs: &[DVector<f64>],
    omega: &[f64],
    x0: &DVector<f64>,
) -> Vec<DVector<f64>> {
    assert_eq!(
        inputs.len(),
        omega.len(),
        "input and disturbance lengths differ"
    );
    let h = model.h.column(0);
    let mut out = Vec::with_capacity(inputs.len() + 1);
    let mut x = x0.clone();
    out.push(x.clone());
    for (u, w) in inputs.iter().zip(omega) {
        x = &model.a * &x + &model.b * u + h * *w;
        out.push(x.clone());
    }
    out
}

/// Open-loop RK4 with held inputs; returns the states at `kτ`.
pub fn propagate_continuous(
    model: &ContinuousModel,
    tau: f64,
    dt: f64,
    inputs: &[DVector<f64>],
    omega: &[f64],
    x0: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    assert_eq!(
        inputs.len(),
        omega.len(),
        "input and disturbance lengths differ"
    );
    let sub = substeps(tau, dt)?;
    let hcol: DVector<f64> = model.h.column(0).into_owned();
    let mut out = Vec::with_capacity(inputs.len() + 1);
    let mut x = x0.clone();
    out.push(x.clone());
    for (u, w) in inputs.iter().zip(omega) {
        let forcing = &model.b * u + &hcol * *w;
        for _ in 0..sub {
            x = rk4_step(model, &x, &forcing, dt);
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Steady state `(I − A)⁻¹ H ω` of the open loop under constant `ω`.
pub fn open_loop_steady_state(model: &DiscreteModel, omega: f64) -> Option<DVector<f64>> {
    let n = model.state_dim();
    let lhs = DMatrix::identity(n, n) - &model.a;
    lhs.lu().solve(&(model.h.column(0) * omega))
}
