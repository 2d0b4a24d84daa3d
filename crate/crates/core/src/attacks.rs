//! Adversarial setpoint and sensor signals: random replacement, worst-case
//! setpoint replacement by linear programming (with a closed-form
//! bang-bang check), and worst-case frequency-measurement injection
//! through the closed AGC loop.

use std::fmt;
use std::str::FromStr;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{propagate_discrete, AgcController, AttackSignal};
use crate::error::{Error, Result};
use crate::linalg::spectral_radius;
use crate::model::DiscreteModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[serde(alias = "max")]
    Maximize,
    #[serde(alias = "min")]
    Minimize,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" | "maximize" => Ok(Direction::Maximize),
            "min" | "minimize" => Ok(Direction::Minimize),
            other => Err(Error::param(
                "direction",
                format!("expected max or min, got {other:?}"),
            )),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Maximize => "max",
            Direction::Minimize => "min",
        })
    }
}

/// Disturbance assumed while the attacker optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaPolicy {
    /// `ω ≡ 0`: the deviation is due to the attacker alone.
    #[default]
    Zero,
    /// Constant `ω = ±γ_ω`, sign chosen to help the attacker.
    WorstCaseConstant,
}

impl FromStr for OmegaPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(OmegaPolicy::Zero),
            "worst-case-constant" | "worst-case" => Ok(OmegaPolicy::WorstCaseConstant),
            other => Err(Error::param(
                "omega_policy",
                format!("expected zero or worst-case-constant, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOptions {
    pub horizon: usize,
    pub direction: Direction,
    pub omega_policy: OmegaPolicy,
    /// `γ_ω`, used by the worst-case policy.
    pub disturbance_bound: f64,
    /// Initial plant state; zero when absent.
    pub x0: Option<DVector<f64>>,
}

impl AttackOptions {
    pub fn new(horizon: usize, direction: Direction) -> Self {
        Self {
            horizon,
            direction,
            omega_policy: OmegaPolicy::Zero,
            disturbance_bound: 0.0,
            x0: None,
        }
    }

    pub fn with_x0(mut self, x0: DVector<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn with_omega(mut self, policy: OmegaPolicy, disturbance_bound: f64) -> Self {
        self.omega_policy = policy;
        self.disturbance_bound = disturbance_bound;
        self
    }

    fn initial_state(&self, n: usize) -> Result<DVector<f64>> {
        match &self.x0 {
            Some(x) if x.len() != n => Err(Error::DimensionMismatch {
                context: "attack initial state",
                expected: format!("{n}-vector"),
                got: format!("{}-vector", x.len()),
            }),
            Some(x) => Ok(x.clone()),
            None => Ok(DVector::zeros(n)),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be >= 1"));
        }
        if !(self.disturbance_bound.is_finite() && self.disturbance_bound >= 0.0) {
            return Err(Error::param("disturbance_bound", "must be >= 0"));
        }
        Ok(())
    }
}

fn check_bounds(bounds: &[f64], m: usize, strict: bool) -> Result<()> {
    if bounds.len() != m {
        return Err(Error::DimensionMismatch {
            context: "attack bounds",
            expected: format!("{m} bounds"),
            got: format!("{}", bounds.len()),
        });
    }
    for (i, b) in bounds.iter().enumerate() {
        let ok = b.is_finite() && if strict { *b > 0.0 } else { *b >= 0.0 };
        if !ok {
            let req = if strict { "> 0" } else { ">= 0" };
            return Err(Error::param(
                format!("bounds[{i}]"),
                format!("must be {req}"),
            ));
        }
    }
    Ok(())
}

/// Uniform setpoint replacement, independently per step and channel.
pub fn random_setpoint_attack(
    bounds: &[f64],
    steps: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if steps == 0 {
        return Err(Error::param("steps", "must be >= 1"));
    }
    check_bounds(bounds, bounds.len(), false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..steps)
        .map(|_| {
            DVector::from_iterator(
                bounds.len(),
                bounds.iter().map(|b| {
                    if *b > 0.0 {
                        rng.random_range(-b..=*b)
                    } else {
                        0.0
                    }
                }),
            )
        })
        .collect())
}

/// Rows `e₁ᵀ A^{N−1−k} B` for `k = 0..N`, i.e. the sensitivity of
/// `Δf(N)` to `u(k)`.
pub fn frequency_gains(model: &DiscreteModel, horizon: usize) -> DMatrix<f64> {
    let n = model.state_dim();
    let mut rows = DMatrix::zeros(horizon, model.input_dim());
    let mut v = RowDVector::zeros(n);
    v[0] = 1.0;
    for k in (0..horizon).rev() {
        rows.row_mut(k).copy_from(&(&v * &model.b));
        v = &v * &model.a;
    }
    rows
}

/// `Σₖ e₁ᵀ A^{N−1−k} H`: response of `Δf(N)` to a unit constant disturbance.
pub fn disturbance_gain(model: &DiscreteModel, horizon: usize) -> f64 {
    let mut v = RowDVector::zeros(model.state_dim());
    v[0] = 1.0;
    let mut total = 0.0;
    for _ in 0..horizon {
        total += (&v * &model.h)[(0, 0)];
        v = &v * &model.a;
    }
    total
}

fn warn_conditioning(model: &DiscreteModel, horizon: usize) {
    if let Ok(rho) = spectral_radius(&model.a) {
        let growth = rho.powi(horizon.min(i32::MAX as usize) as i32);
        if growth > CONDITION_LIMIT {
            log::warn!(
                "horizon {horizon} is poorly conditioned: rho(A)^N = {growth:.3e}; late states dwarf early inputs"
            );
        } else {
            log::debug!("horizon {horizon}: rho(A)^N = {growth:.3e}");
        }
    }
}

/// Largest coefficient magnitude tolerated in an attack program.
const CONDITION_LIMIT: f64 = 1e12;

fn omega_sequence(model: &DiscreteModel, opts: &AttackOptions) -> Vec<f64> {
    let w = match opts.omega_policy {
        OmegaPolicy::Zero => 0.0,
        OmegaPolicy::WorstCaseConstant => {
            let g = disturbance_gain(model, opts.horizon);
            let s = if g >= 0.0 { 1.0 } else { -1.0 };
            s * opts.direction.sign() * opts.disturbance_bound
        }
    };
    vec![w; opts.horizon]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetpointAttack {
    pub signal: Vec<DVector<f64>>,
    pub omega: Vec<f64>,
    pub direction: Direction,
    /// Optimal value of the program, `x₁(N)` as predicted.
    pub objective: f64,
    /// `x₁(N)` obtained by propagating the signal through the model.
    pub achieved: f64,
    /// Largest `|Δf(k)|` along that propagation.
    pub peak: f64,
}

fn finish_setpoint(
    model: &DiscreteModel,
    signal: Vec<DVector<f64>>,
    omega: Vec<f64>,
    x0: &DVector<f64>,
    direction: Direction,
    objective: f64,
) -> SetpointAttack {
    let states = propagate_discrete(model, &signal, &omega, x0);
    let achieved = states.last().map_or(0.0, |x| x[0]);
    let peak = states.iter().map(|x| x[0].abs()).fold(0.0, f64::max);
    SetpointAttack {
        signal,
        omega,
        direction,
        objective,
        achieved,
        peak,
    }
}

/// Open-loop part of `x₁(N)`: free response plus the disturbance.
fn affine_offset(model: &DiscreteModel, x0: &DVector<f64>, omega: &[f64]) -> f64 {
    let zeros = vec![DVector::zeros(model.input_dim()); omega.len()];
    propagate_discrete(model, &zeros, omega, x0)
        .last()
        .map_or(0.0, |x| x[0])
}

/// Closed-form optimum `uᵢ(k) = ±boundᵢ · sign([e₁ᵀA^{N−1−k}B]ᵢ)`.
pub fn bang_bang_setpoint_attack(
    model: &DiscreteModel,
    bounds: &[f64],
    opts: &AttackOptions,
) -> Result<SetpointAttack> {
    opts.validate()?;
    check_bounds(bounds, model.input_dim(), false)?;
    let x0 = opts.initial_state(model.state_dim())?;
    let gains = frequency_gains(model, opts.horizon);
    let s = opts.direction.sign();
    let signal: Vec<DVector<f64>> = (0..opts.horizon)
        .map(|k| {
            DVector::from_iterator(
                bounds.len(),
                bounds.iter().enumerate().map(|(i, b)| {
                    let g = gains[(k, i)];
                    if g == 0.0 {
                        0.0
                    } else {
                        s * b * g.signum()
                    }
                }),
            )
        })
        .collect();
    let omega = omega_sequence(model, opts);
    let value: f64 = (0..opts.horizon)
        .map(|k| (gains.row(k) * &signal[k])[(0, 0)])
        .sum();
    let objective = affine_offset(model, &x0, &omega) + value;
    Ok(finish_setpoint(
        model,
        signal,
        omega,
        &x0,
        opts.direction,
        objective,
    ))
}

fn lp_direction(d: Direction) -> OptimizationDirection {
    match d {
        Direction::Maximize => OptimizationDirection::Maximize,
        Direction::Minimize => OptimizationDirection::Minimize,
    }
}

fn lp_error(e: impl fmt::Display) -> Error {
    Error::Lp(e.to_string())
}

/// Worst-case setpoint replacement over `N` steps, solved as a box-
/// constrained linear program in the `N·m` setpoints.
pub fn optimal_setpoint_attack(
    model: &DiscreteModel,
    bounds: &[f64],
    opts: &AttackOptions,
) -> Result<SetpointAttack> {
    opts.validate()?;
    check_bounds(bounds, model.input_dim(), false)?;
    warn_conditioning(model, opts.horizon);
    let x0 = opts.initial_state(model.state_dim())?;
    let m = model.input_dim();
    let gains = frequency_gains(model, opts.horizon);
    let mut lp = Problem::new(lp_direction(opts.direction));
    let vars: Vec<Vec<_>> = (0..opts.horizon)
        .map(|k| {
            (0..m)
                .map(|i| lp.add_var(gains[(k, i)], (-bounds[i], bounds[i])))
                .collect()
        })
        .collect();
    let solution = lp
        .solve()
        .map_err(lp_error)?
        .into_solution()
        .map_err(|_| Error::Lp("solve interrupted".into()))?;
    let signal: Vec<DVector<f64>> = vars
        .iter()
        .map(|row| DVector::from_iterator(m, row.iter().map(|v| solution[*v])))
        .collect();
    let omega = omega_sequence(model, opts);
    let objective = affine_offset(model, &x0, &omega) + solution.objective();
    Ok(finish_setpoint(
        model,
        signal,
        omega,
        &x0,
        opts.direction,
        objective,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorAttack {
    /// Injected measurement offsets `δ(k)`.
    pub delta: Vec<f64>,
    /// Setpoints the controller produced under the attack.
    pub setpoints: Vec<DVector<f64>>,
    pub omega: Vec<f64>,
    pub direction: Direction,
    pub objective: f64,
    /// `x₁(N)` from a closed-loop simulation with the injected signal.
    pub achieved: f64,
    pub peak: f64,
}

/// Quantity affine in the attack sequence: `constant + coef · δ`.
#[derive(Debug, Clone)]
struct Affine {
    constant: f64,
    coef: RowDVector<f64>,
}

impl Affine {
    fn scale(&self, s: f64) -> Affine {
        Affine {
            constant: self.constant * s,
            coef: &self.coef * s,
        }
    }
    fn add(&self, other: &Affine) -> Affine {
        Affine {
            constant: self.constant + other.constant,
            coef: &self.coef + &other.coef,
        }
    }
}

struct SensorProgram {
    /// Scalar AGC command per step.
    agc: Vec<Affine>,
    final_df: Affine,
}

impl SensorProgram {
    fn commands(&self, delta: &[f64]) -> Vec<f64> {
        let d = RowDVector::from_row_slice(delta);
        self.agc
            .iter()
            .map(|a| a.constant + a.coef.dot(&d))
            .collect()
    }
}

/// Propagates plant state and ACE integral through the loop, keeping every
/// quantity affine in `δ`.
fn sensor_program(
    model: &DiscreteModel,
    ctrl: &AgcController,
    x0: &DVector<f64>,
    omega: &[f64],
) -> SensorProgram {
    let n = model.state_dim();
    let horizon = omega.len();
    let p = ctrl.params();
    let beta = DVector::from_column_slice(&p.participation);
    let b_beta = &model.b * &beta;
    let h = model.h.column(0).into_owned();

    let mut x_c = x0.clone();
    let mut x_coef = DMatrix::<f64>::zeros(n, horizon);
    let mut integral = Affine {
        constant: ctrl.integral(),
        coef: RowDVector::zeros(horizon),
    };
    let mut agc = Vec::with_capacity(horizon);
    for (k, w) in omega.iter().enumerate() {
        let mut measured = Affine {
            constant: x_c[0],
            coef: x_coef.row(0).into_owned(),
        };
        measured.coef[k] += 1.0;
        let ace = measured.scale(-p.frequency_bias);
        integral = integral.add(&ace);
        let cmd = ace.scale(p.kp).add(&integral.scale(p.ki));
        x_c = &model.a * &x_c + &b_beta * cmd.constant + &h * *w;
        x_coef = &model.a * &x_coef + &b_beta * &cmd.coef;
        agc.push(cmd);
    }
    SensorProgram {
        agc,
        final_df: Affine {
            constant: x_c[0],
            coef: x_coef.row(0).into_owned(),
        },
    }
}

fn solve_sensor_lp(
    program: &SensorProgram,
    participation: &[f64],
    bounds: &[f64],
    direction: Direction,
) -> Result<(Vec<f64>, f64)> {
    let horizon = program.agc.len();
    let scale = program
        .agc
        .iter()
        .flat_map(|a| a.coef.iter())
        .fold(0.0_f64, |m, c| m.max(c.abs()));
    if scale > CONDITION_LIMIT {
        log::warn!(
            "sensor attack over {horizon} steps is poorly conditioned: closed-loop gains reach {scale:.3e}"
        );
    }
    let mut lp = Problem::new(lp_direction(direction));
    let vars: Vec<_> = (0..horizon)
        .map(|k| lp.add_var(program.final_df.coef[k], (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for cmd in &program.agc {
        let terms: Vec<_> = vars
            .iter()
            .zip(cmd.coef.iter())
            .filter(|(_, c)| **c != 0.0)
            .map(|(v, c)| (*v, *c))
            .collect();
        for (beta, bound) in participation.iter().zip(bounds) {
            if *beta <= 0.0 {
                continue;
            }
            // |β_i (c + aᵀδ)| ≤ b_i
            let scaled: Vec<_> = terms.iter().map(|(v, c)| (*v, beta * c)).collect();
            lp.add_constraint(&scaled[..], ComparisonOp::Le, bound - beta * cmd.constant);
            lp.add_constraint(&scaled[..], ComparisonOp::Ge, -bound - beta * cmd.constant);
        }
    }
    let solution = lp
        .solve()
        .map_err(lp_error)?
        .into_solution()
        .map_err(|_| Error::Lp("solve interrupted".into()))?;
    let delta = vars.iter().map(|v| solution[*v]).collect();
    Ok((delta, program.final_df.constant + solution.objective()))
}

/// Worst-case commands when the attacker steers the AGC output directly:
/// `u(k) = β v(k)` with `|βᵢ v(k)| ≤ boundᵢ`.
fn solve_command_lp(
    model: &DiscreteModel,
    participation: &[f64],
    bounds: &[f64],
    x0: &DVector<f64>,
    omega: &[f64],
    direction: Direction,
) -> Result<(Vec<f64>, f64)> {
    let beta = DVector::from_column_slice(participation);
    let gains = frequency_gains(model, omega.len()) * &beta;
    let mut lp = Problem::new(lp_direction(direction));
    let vars: Vec<_> = gains
        .iter()
        .map(|g| lp.add_var(*g, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for v in &vars {
        for (b, bound) in participation.iter().zip(bounds) {
            if *b > 0.0 {
                lp.add_constraint(&[(*v, *b)][..], ComparisonOp::Le, *bound);
                lp.add_constraint(&[(*v, *b)][..], ComparisonOp::Ge, -bound);
            }
        }
    }
    let solution = lp
        .solve()
        .map_err(lp_error)?
        .into_solution()
        .map_err(|_| Error::Lp("solve interrupted".into()))?;
    let commands = vars.iter().map(|v| solution[*v]).collect();
    Ok((
        commands,
        affine_offset(model, x0, omega) + solution.objective(),
    ))
}

/// Measurement offsets that make the controller emit `commands`.
fn injection_for_commands(
    model: &DiscreteModel,
    ctrl: &AgcController,
    x0: &DVector<f64>,
    omega: &[f64],
    commands: &[f64],
) -> Vec<f64> {
    let p = ctrl.params();
    let gain = p.kp + p.ki;
    let beta = DVector::from_column_slice(&p.participation);
    let h = model.h.column(0);
    let mut integral = ctrl.integral();
    let mut x = x0.clone();
    let mut delta = Vec::with_capacity(commands.len());
    for (v, w) in commands.iter().zip(omega) {
        // v = K_P·ACE + K_I·(I + ACE)
        let ace = (v - p.ki * integral) / gain;
        let measured = -ace / p.frequency_bias;
        delta.push(measured - x[0]);
        integral += ace;
        x = &model.a * &x + &model.b * (&beta * *v) + h * *w;
    }
    delta
}

type SensorCandidate = (Vec<f64>, Vec<f64>, f64, Vec<f64>);

/// Worst-case injection into the frequency measurement. The controller's
/// induced setpoints are constrained to `bounds`, so clamping never acts
/// and the loop is linear in `δ`.
///
/// When `𝔅·(K_P + K_I) ≠ 0` each `δ(k)` sets the AGC command at step `k`
/// one-to-one, so the program is solved over the commands (well
/// conditioned even when the unclamped loop is unstable) and `δ` is
/// recovered afterwards. Otherwise the program is solved over `δ` through
/// the closed-loop propagation.
pub fn optimal_sensor_attack(
    model: &DiscreteModel,
    ctrl: &AgcController,
    bounds: &[f64],
    opts: &AttackOptions,
) -> Result<SensorAttack> {
    opts.validate()?;
    check_bounds(bounds, model.input_dim(), false)?;
    if ctrl.params().participation.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "controller participation",
            expected: format!("{} factors", model.input_dim()),
            got: format!("{}", ctrl.params().participation.len()),
        });
    }
    warn_conditioning(model, opts.horizon);
    let x0 = opts.initial_state(model.state_dim())?;
    let p = ctrl.params();
    let invertible = (p.frequency_bias * (p.kp + p.ki)).abs() > 1e-12;

    let candidates: Vec<Vec<f64>> = match opts.omega_policy {
        OmegaPolicy::Zero => vec![vec![0.0; opts.horizon]],
        OmegaPolicy::WorstCaseConstant => [1.0, -1.0]
            .iter()
            .map(|s| vec![s * opts.disturbance_bound; opts.horizon])
            .collect(),
    };
    // (δ, commands, value, ω)
    let mut best: Option<SensorCandidate> = None;
    for omega in candidates {
        let (delta, commands, value) = if invertible {
            let (commands, value) =
                solve_command_lp(model, &p.participation, bounds, &x0, &omega, opts.direction)?;
            (
                injection_for_commands(model, ctrl, &x0, &omega, &commands),
                commands,
                value,
            )
        } else {
            let program = sensor_program(model, ctrl, &x0, &omega);
            let (delta, value) =
                solve_sensor_lp(&program, &p.participation, bounds, opts.direction)?;
            (program.commands(&delta), delta, value)
        };
        let better = best
            .as_ref()
            .is_none_or(|(_, _, v, _)| opts.direction.sign() * (value - v) > 0.0);
        if better {
            best = Some((delta, commands, value, omega));
        }
    }
    let (delta, commands, objective, omega) = best.expect("at least one disturbance candidate");
    Ok(sensor_outcome(
        model,
        &p.participation,
        &x0,
        omega,
        delta,
        &commands,
        opts.direction,
        objective,
    ))
}

/// Same program solved over `δ` through the closed-loop propagation.
pub fn optimal_sensor_attack_direct(
    model: &DiscreteModel,
    ctrl: &AgcController,
    bounds: &[f64],
    opts: &AttackOptions,
) -> Result<SensorAttack> {
    opts.validate()?;
    check_bounds(bounds, model.input_dim(), false)?;
    let x0 = opts.initial_state(model.state_dim())?;
    let omega = vec![0.0; opts.horizon];
    let program = sensor_program(model, ctrl, &x0, &omega);
    let (delta, objective) = solve_sensor_lp(
        &program,
        &ctrl.params().participation,
        bounds,
        opts.direction,
    )?;
    let commands = program.commands(&delta);
    Ok(sensor_outcome(
        model,
        &ctrl.params().participation,
        &x0,
        omega,
        delta,
        &commands,
        opts.direction,
        objective,
    ))
}

/// Applies the induced setpoints `β v(k)` to the plant. In exact arithmetic
/// this equals a closed-loop replay of `δ`; the unclamped loop can be
/// unstable, which would amplify rounding in a literal replay.
#[allow(clippy::too_many_arguments)]
fn sensor_outcome(
    model: &DiscreteModel,
    participation: &[f64],
    x0: &DVector<f64>,
    omega: Vec<f64>,
    delta: Vec<f64>,
    commands: &[f64],
    direction: Direction,
    objective: f64,
) -> SensorAttack {
    let beta = DVector::from_column_slice(participation);
    let setpoints: Vec<DVector<f64>> = commands.iter().map(|v| &beta * *v).collect();
    let states = propagate_discrete(model, &setpoints, &omega, x0);
    SensorAttack {
        delta,
        setpoints,
        omega,
        direction,
        objective,
        achieved: states.last().map_or(0.0, |x| x[0]),
        peak: states.iter().map(|x| x[0].abs()).fold(0.0, f64::max),
    }
}

/// Attack description as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackFile {
    #[serde(rename = "type")]
    pub kind: String,
    pub horizon: usize,
    /// One row per step: `m` setpoints, or a single `δ`.
    pub signal: Vec<Vec<f64>>,
    pub achieved_deviation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_deviation: Option<f64>,
}

impl AttackFile {
    pub fn to_signal(&self) -> Result<AttackSignal> {
        match self.kind.as_str() {
            "optimal-sensor" => {
                let delta = self
                    .signal
                    .iter()
                    .map(|row| match row.as_slice() {
                        [d] => Ok(*d),
                        _ => Err(Error::Config(
                            "sensor attack rows must hold one value".into(),
                        )),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(AttackSignal::SensorInjection(delta))
            }
            "random" | "optimal-setpoint" => Ok(AttackSignal::SetpointReplacement(
                self.signal
                    .iter()
                    .map(|r| DVector::from_column_slice(r))
                    .collect(),
            )),
            other => Err(Error::Config(format!("unknown attack type {other:?}"))),
        }
    }

    pub fn from_setpoint(kind: &str, attack: &SetpointAttack) -> Self {
        Self {
            kind: kind.into(),
            horizon: attack.signal.len(),
            signal: attack
                .signal
                .iter()
                .map(|u| u.as_slice().to_vec())
                .collect(),
            achieved_deviation: attack.achieved,
            direction: Some(attack.direction),
            peak_deviation: Some(attack.peak),
        }
    }

    pub fn from_sensor(attack: &SensorAttack) -> Self {
        Self {
            kind: "optimal-sensor".into(),
            horizon: attack.delta.len(),
            signal: attack.delta.iter().map(|d| vec![*d]).collect(),
            achieved_deviation: attack.achieved,
            direction: Some(attack.direction),
            peak_deviation: Some(attack.peak),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControllerParams;
    use crate::model::{build_discrete, ModelConfig};
    use approx::assert_relative_eq;

    fn scalar(a: f64) -> DiscreteModel {
        DiscreteModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn scalar_two_step_example() {
        let model = scalar(0.5);
        let opts = AttackOptions::new(2, Direction::Maximize);
        let lp = optimal_setpoint_attack(&model, &[1.0], &opts).unwrap();
        assert_relative_eq!(lp.signal[0][0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(lp.signal[1][0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(lp.achieved, 1.5, epsilon = 1e-9);
        assert_relative_eq!(lp.objective, 1.5, epsilon = 1e-9);
        let bb = bang_bang_setpoint_attack(&model, &[1.0], &opts).unwrap();
        assert_relative_eq!(bb.achieved, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_bounds_zero_optimum() {
        let (_, d) = build_discrete(&ModelConfig::case_study()).unwrap();
        for dir in [Direction::Maximize, Direction::Minimize] {
            let opts = AttackOptions::new(10, dir);
            let lp = optimal_setpoint_attack(&d, &[0.0; 4], &opts).unwrap();
            assert_eq!(lp.achieved, 0.0);
            assert_eq!(lp.objective, 0.0);
        }
        let r = random_setpoint_attack(&[0.0; 4], 20, 3).unwrap();
        assert!(r.iter().all(|u| u.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn random_attack_within_bounds_and_seeded() {
        let b = [0.5, 0.5, 0.2, 0.15];
        let a = random_setpoint_attack(&b, 100, 9).unwrap();
        for u in &a {
            for (v, bi) in u.iter().zip(&b) {
                assert!(v.abs() <= *bi);
            }
        }
        assert_eq!(a, random_setpoint_attack(&b, 100, 9).unwrap());
        assert_ne!(a, random_setpoint_attack(&b, 100, 10).unwrap());
        assert!(random_setpoint_attack(&b, 0, 9).is_err());
    }

    #[test]
    fn gains_match_propagation() {
        let (_, d) = build_discrete(&ModelConfig::case_study()).unwrap();
        let n_steps = 6;
        let g = frequency_gains(&d, n_steps);
        for k in 0..n_steps {
            for i in 0..4 {
                let mut inputs = vec![DVector::zeros(4); n_steps];
                inputs[k][i] = 1.0;
                let xs = propagate_discrete(&d, &inputs, &vec![0.0; n_steps], &DVector::zeros(7));
                assert_relative_eq!(xs[n_steps][0], g[(k, i)], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn worst_case_disturbance_helps_attacker() {
        let (_, d) = build_discrete(&ModelConfig::case_study()).unwrap();
        let b = [0.5, 0.5, 0.2, 0.15];
        let base =
            optimal_setpoint_attack(&d, &b, &AttackOptions::new(50, Direction::Minimize)).unwrap();
        let opts = AttackOptions::new(50, Direction::Minimize)
            .with_omega(OmegaPolicy::WorstCaseConstant, 0.2);
        let worse = optimal_setpoint_attack(&d, &b, &opts).unwrap();
        assert!(worse.achieved < base.achieved);
        assert!(worse.omega.iter().all(|w| w.abs() == 0.2));
    }

    #[test]
    fn sensor_attack_respects_bounds() {
        let (_, d) = build_discrete(&ModelConfig::case_study()).unwrap();
        let b = vec![0.13, 0.2, 0.17, 0.15];
        let ctrl = AgcController::new(ControllerParams::case_study(), b.clone()).unwrap();
        let opts = AttackOptions::new(20, Direction::Maximize);
        let att = optimal_sensor_attack(&d, &ctrl, &b, &opts).unwrap();
        assert_relative_eq!(att.achieved, att.objective, epsilon = 1e-8);
        for u in &att.setpoints {
            for (v, bi) in u.iter().zip(&b) {
                assert!(v.abs() <= bi + 1e-9);
            }
        }
        // zero injection is admissible from rest, so the optimum is >= 0
        assert!(att.achieved >= -1e-12);
    }

    #[test]
    fn command_and_delta_programs_agree() {
        // Mild gains keep the unclamped loop stable, so the δ-space program
        // is well conditioned and serves as a cross-check.
        let (_, d) = build_discrete(&ModelConfig::case_study()).unwrap();
        let params = ControllerParams {
            frequency_bias: 1.0,
            kp: 0.05,
            ki: 0.05,
            participation: vec![0.3, 0.4, 0.2, 0.1],
        };
        let b = vec![0.13, 0.2, 0.17, 0.15];
        let ctrl = AgcController::new(params, b.clone()).unwrap();
        let x0 = DVector::from_fn(7, |i, _| if i == 0 { 0.05 } else { 0.0 });
        for dir in [Direction::Maximize, Direction::Minimize] {
            let opts = AttackOptions::new(12, dir).with_x0(x0.clone());
            let a = optimal_sensor_attack(&d, &ctrl, &b, &opts).unwrap();
            let c = optimal_sensor_attack_direct(&d, &ctrl, &b, &opts).unwrap();
            assert_relative_eq!(a.objective, c.objective, epsilon = 1e-8);
            assert_relative_eq!(a.achieved, a.objective, epsilon = 1e-8);
            assert_relative_eq!(c.achieved, c.objective, epsilon = 1e-8);
        }
    }

    #[test]
    fn short_sensor_attack_replays_through_loop() {
        let (_, d) = build_discrete(&ModelConfig::case_study()).unwrap();
        let b = vec![0.13, 0.2, 0.17, 0.15];
        let ctrl = AgcController::new(ControllerParams::case_study(), b.clone()).unwrap();
        let x0 = DVector::from_fn(7, |i, _| if i == 0 { 0.1 } else { 0.0 });
        let opts = AttackOptions::new(3, Direction::Minimize).with_x0(x0.clone());
        let att = optimal_sensor_attack(&d, &ctrl, &b, &opts).unwrap();
        let tr = crate::control::simulate_discrete_with(
            &d,
            &ctrl,
            &att.omega,
            &x0,
            Some(&AttackSignal::SensorInjection(att.delta.clone())),
        )
        .unwrap();
        assert!((tr.states[3][0] - att.achieved).abs() < 1e-9);
        for (s, u) in tr.steps.iter().zip(&att.setpoints) {
            assert!((&s.u_raw - u).abs().max() < 1e-9);
        }
    }

    #[test]
    fn parse_direction_and_policy() {
        assert_eq!("max".parse::<Direction>().unwrap(), Direction::Maximize);
        assert_eq!(
            "minimize".parse::<Direction>().unwrap(),
            Direction::Minimize
        );
        assert!("up".parse::<Direction>().is_err());
        assert_eq!("zero".parse::<OmegaPolicy>().unwrap(), OmegaPolicy::Zero);
        assert_eq!(
            "worst-case-constant".parse::<OmegaPolicy>().unwrap(),
            OmegaPolicy::WorstCaseConstant
        );
    }

    #[test]
    fn attack_file_round_trip() {
        let file = AttackFile {
            kind: "optimal-sensor".into(),
            horizon: 2,
            signal: vec![vec![0.1], vec![-0.2]],
            achieved_deviation: 0.05,
            direction: Some(Direction::Maximize),
            peak_deviation: None,
        };
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"type\":\"optimal-sensor\""));
        let back: AttackFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(
            back.to_signal().unwrap(),
            AttackSignal::SensorInjection(vec![0.1, -0.2])
        );
    }
}
