//! End-to-end pipeline: build, synthesize, verify, attack, simulate,
//! sample, plot. Every number in the run report is also written to a CSV.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    optimal_sensor_attack, optimal_setpoint_attack, random_setpoint_attack, AttackOptions,
    Direction, OmegaPolicy,
};
use crate::control::{
    simulate_continuous, simulate_discrete, simulate_discrete_with, AgcController, AttackSignal,
    ContinuousOptions, ControllerParams, DisturbanceModel, Trajectory, DEFAULT_DWELL,
};
use crate::error::{Error, Result};
use crate::model::{build_discrete, ContinuousModel, DiscreteModel, ModelConfig};
use crate::plot::{project_ellipse, project_unsafe, EllipsePlot, LinePlot, Series};
use crate::reachability::{Bounds, ReachSampler, UnsafeDecl, UnsafeSet};
use crate::synthesis::{
    parse_a_grid, synthesize, verify_certificate, CertificateReport, GridStatus, LmiWeighting,
    ResilientResult, SynthesisProblem, VerifyOptions,
};

/// Which setpoint bounds a run enforces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundsChoice {
    Physical,
    Resilient(PathBuf),
}

impl BoundsChoice {
    /// `physical` or `resilient:<result.json>`.
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "physical" => Ok(BoundsChoice::Physical),
            _ => match text.strip_prefix("resilient:") {
                Some(path) if !path.is_empty() => Ok(BoundsChoice::Resilient(path.into())),
                _ => Err(Error::Config(format!(
                    "bounds must be `physical` or `resilient:<result.json>`, got `{text}`"
                ))),
            },
        }
    }

    pub fn resolve(&self, model: &ModelConfig) -> Result<Vec<f64>> {
        match self {
            BoundsChoice::Physical => Ok(model.params.physical_bounds().gamma),
            BoundsChoice::Resilient(path) => {
                let result = ResilientResult::from_json(&read_text(path)?)?;
                if result.gamma_hat.len() != model.params.input_dim() {
                    return Err(Error::DimensionMismatch {
                        context: "resilient bounds",
                        expected: format!("{} bounds", model.params.input_dim()),
                        got: format!("{}", result.gamma_hat.len()),
                    });
                }
                Ok(result.gamma_hat)
            }
        }
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

/// Writes a trajectory with columns `t, x1..xn, u1..um, u_raw1..u_rawm,
/// omega, attack_signal, sat_flags`. Rows are state samples; input columns
/// hold the setpoints in force from that instant and are blank on the
/// final sample.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let n = traj.states.first().map_or(0, |x| x.len());
    let m = traj.steps.first().map_or(0, |s| s.u.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((1..=m).map(|i| format!("u_raw{i}")));
    header.extend(["omega", "attack_signal", "sat_flags"].map(String::from));
    w.write_record(&header)?;
    let last = traj.states.len().saturating_sub(1);
    for (row, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        let mut rec: Vec<String> = vec![t.to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        match traj.step_at(*t).filter(|_| row < last) {
            Some(k) => {
                let s = &traj.steps[k];
                rec.extend(s.u.iter().map(|v| v.to_string()));
                rec.extend(s.u_raw.iter().map(|v| v.to_string()));
                rec.push(s.omega.to_string());
                rec.push(s.attack_signal.to_string());
                rec.push(
                    s.saturated
                        .iter()
                        .map(|f| if *f { '1' } else { '0' })
                        .collect(),
                );
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 2 * m + 3)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(ModelConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    #[serde(default = "default_grid")]
    pub a_grid: String,
    #[serde(default)]
    pub weighting: LmiWeighting,
}

fn default_grid() -> String {
    "0.02:0.02:0.98".into()
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self {
            a_grid: default_grid(),
            weighting: LmiWeighting::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationSection {
    pub trials: usize,
    pub horizon: usize,
}

impl Default for VerificationSection {
    fn default() -> Self {
        Self {
            trials: 1000,
            horizon: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Random,
    OptimalSetpoint,
    OptimalSensor,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Random => "random",
            AttackKind::OptimalSetpoint => "optimal-setpoint",
            AttackKind::OptimalSensor => "optimal-sensor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub types: Vec<AttackKind>,
    #[serde(default = "default_attack_horizon")]
    pub horizon: usize,
    #[serde(default = "default_random_trials")]
    pub random_trials: usize,
    #[serde(default = "both_directions")]
    pub directions: Vec<Direction>,
    #[serde(default)]
    pub omega_policy: OmegaPolicy,
    /// `Δf(0)` for every attack run.
    #[serde(default = "default_initial_frequency")]
    pub initial_frequency: f64,
}

fn default_attack_horizon() -> usize {
    50
}
fn default_random_trials() -> usize {
    1000
}
fn both_directions() -> Vec<Direction> {
    vec![Direction::Minimize, Direction::Maximize]
}
fn default_initial_frequency() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulationMode {
    #[default]
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Simulated seconds.
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub mode: SimulationMode,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_initial_frequency")]
    pub initial_frequency: f64,
    #[serde(default = "default_dwell")]
    pub dwell: usize,
}

fn default_duration() -> f64 {
    900.0
}
fn default_dt() -> f64 {
    0.01
}
fn default_record_every() -> usize {
    10
}
fn default_dwell() -> usize {
    DEFAULT_DWELL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachabilitySection {
    pub trials: usize,
    pub horizon: usize,
    /// State pair for the 2-D projection.
    #[serde(default = "default_axes")]
    pub axes: [usize; 2],
}

fn default_axes() -> [usize; 2] {
    [0, 1]
}

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSource,
    #[serde(default = "ControllerParams::case_study")]
    pub controller: ControllerParams,
    #[serde(rename = "unsafe")]
    pub unsafe_set: UnsafeDecl,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub verification: VerificationSection,
    #[serde(default)]
    pub attacks: Option<AttackSection>,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub reachability: Option<ReachabilitySection>,
    /// Root of every random stream in the run.
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    "out".into()
}

/// A scenario with its model file loaded and paths resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: ModelConfig,
    pub out_dir: PathBuf,
}

impl Scenario {
    /// Reads a scenario file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let config: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_config(config, base)
    }

    pub fn from_config(config: ScenarioConfig, base: &Path) -> Result<Self> {
        let model = match &config.model {
            ModelSource::Path(p) => {
                let full = base.join(p);
                ModelConfig::from_json(&read_text(&full)?)
                    .map_err(|e| Error::Config(format!("{}: {e}", full.display())))?
            }
            ModelSource::Inline(m) => {
                m.params.validate()?;
                m.clone()
            }
        };
        config.controller.validate(model.params.input_dim())?;
        parse_a_grid(&config.synthesis.a_grid)?;
        if let Some(r) = &config.reachability {
            let n = model.params.state_dim();
            if r.axes[0] >= n || r.axes[1] >= n || r.axes[0] == r.axes[1] {
                return Err(Error::Config(format!(
                    "reachability axes must be distinct and below {n}"
                )));
            }
        }
        let out_dir = if config.out_dir.is_absolute() {
            config.out_dir.clone()
        } else {
            base.join(&config.out_dir)
        };
        Ok(Self {
            config,
            model,
            out_dir,
        })
    }

    pub fn with_out_dir(mut self, dir: PathBuf) -> Self {
        self.out_dir = dir;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.config.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageState {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub name: String,
    pub state: StageState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub kind: String,
    pub bounds: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    /// `Δf(N)` (worst over seeds for random attacks).
    pub achieved_deviation: f64,
    /// Largest `|Δf(k)|` along the attacked run(s).
    pub peak_deviation: f64,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub bounds: String,
    pub max_abs_frequency: f64,
    /// First time after which `|Δf| ≤ 0.05` Hz holds.
    pub settling_time: Option<f64>,
    pub saturation_events: usize,
    pub saturated_steps: usize,
    pub steps: usize,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachSummary {
    pub bounds: String,
    pub states: usize,
    /// Largest `xᵀW⁻¹x` among sampled states.
    pub max_level: f64,
    pub max_abs_frequency: f64,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub physical_gamma: Vec<f64>,
    pub spectral_radius: Option<f64>,
    pub gamma_hat: Option<Vec<f64>>,
    pub a: Option<f64>,
    pub objective: Option<f64>,
    pub infeasible: bool,
    pub certificate: Option<CertificateReport>,
    pub attacks: Vec<AttackOutcome>,
    pub simulations: Vec<SimulationSummary>,
    pub reachability: Vec<ReachSummary>,
    pub stages: Vec<StageStatus>,
    pub failed_stage: Option<String>,
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn certificate_passed(&self) -> bool {
        self.certificate.as_ref().is_some_and(|c| c.passed())
    }
}

/// Output directory plus the list of files written there.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<String> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(name.to_string())
    }

    fn trajectory(&mut self, name: &str, traj: &Trajectory) -> Result<String> {
        let mut buf = Vec::new();
        write_trajectory_csv(traj, &mut buf)?;
        self.write(name, &buf)
    }

    fn csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.write(name, &bytes)
    }
}

struct Context<'a> {
    scenario: &'a Scenario,
    cont: ContinuousModel,
    disc: DiscreteModel,
    bounds: Bounds,
    unsafe_set: UnsafeSet,
    result: Option<ResilientResult>,
}

impl Context<'_> {
    fn x0(&self, df: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.disc.state_dim());
        x[0] = df;
        x
    }

    /// `(label, bounds)` pairs: physical always, resilient when available.
    fn bound_sets(&self) -> Vec<(&'static str, Vec<f64>)> {
        let mut out = vec![("physical", self.bounds.gamma.clone())];
        if let Some(r) = &self.result {
            out.push(("resilient", r.gamma_hat.clone()));
        }
        out
    }
}

#[derive(Serialize)]
struct GridRow {
    a: f64,
    status: String,
    objective: Option<f64>,
    message: Option<String>,
}

#[derive(Serialize)]
struct CheckRow<'a> {
    check: &'a str,
    passed: bool,
    residual: f64,
    detail: &'a str,
}

#[derive(Serialize)]
struct RandomRow {
    seed: u64,
    final_deviation: f64,
    peak_deviation: f64,
}

#[derive(Serialize)]
struct ReachRow {
    trial: usize,
    step: usize,
    x_i: f64,
    x_j: f64,
    level: f64,
}

fn stage(report: &mut RunReport, name: &str, outcome: Result<()>) -> bool {
    match outcome {
        Ok(()) => {
            report.stages.push(StageStatus {
                name: name.into(),
                state: StageState::Ok,
                message: None,
            });
            true
        }
        Err(e) => {
            report.stages.push(StageStatus {
                name: name.into(),
                state: StageState::Failed,
                message: Some(e.to_string()),
            });
            if report.failed_stage.is_none() {
                report.failed_stage = Some(name.into());
            }
            false
        }
    }
}

fn skip(report: &mut RunReport, name: &str, why: &str) {
    report.stages.push(StageStatus {
        name: name.into(),
        state: StageState::Skipped,
        message: Some(why.into()),
    });
}

/// Runs the full pipeline. Stage failures are recorded in the report; only
/// failures to create the output directory or write the report are errors.
pub fn run_scenario(scenario: &Scenario) -> Result<RunReport> {
    fs::create_dir_all(&scenario.out_dir)?;
    let mut art = Artifacts {
        dir: scenario.out_dir.clone(),
        files: Vec::new(),
    };
    let cfg = &scenario.config;
    let mut report = RunReport {
        seed: cfg.seed,
        physical_gamma: scenario.model.params.physical_bounds().gamma,
        spectral_radius: None,
        gamma_hat: None,
        a: None,
        objective: None,
        infeasible: false,
        certificate: None,
        attacks: Vec::new(),
        simulations: Vec::new(),
        reachability: Vec::new(),
        stages: Vec::new(),
        failed_stage: None,
        artifacts: Vec::new(),
    };

    // build
    let built = (|| -> Result<Context<'_>> {
        let (cont, disc) = build_discrete(&scenario.model)?;
        let unsafe_set = cfg.unsafe_set.resolve(disc.state_dim())?;
        let rho = crate::linalg::spectral_radius(&disc.a)?;
        report.spectral_radius = Some(rho);
        art.write("model.json", model_json(&cont, &disc)?.as_bytes())?;
        Ok(Context {
            scenario,
            bounds: scenario.model.params.physical_bounds(),
            cont,
            disc,
            unsafe_set,
            result: None,
        })
    })();
    let mut ctx = match built {
        Ok(c) => {
            stage(&mut report, "build", Ok(()));
            c
        }
        Err(e) => {
            stage(&mut report, "build", Err(e));
            return finish(report, art);
        }
    };

    // synthesize
    let synth = (|| -> Result<ResilientResult> {
        let problem = SynthesisProblem::new(
            ctx.disc.clone(),
            ctx.bounds.clone(),
            ctx.unsafe_set.clone(),
            parse_a_grid(&cfg.synthesis.a_grid)?,
        )?
        .with_weighting(cfg.synthesis.weighting);
        synthesize(&problem)
    })();
    match synth {
        Ok(result) => {
            let mut buf = Vec::new();
            let outcome = write_grid_csv(&result, &mut buf)
                .and_then(|_| art.write("grid.csv", &buf))
                .and_then(|_| art.write("result.json", result.to_json()?.as_bytes()))
                .map(|_| ());
            report.gamma_hat = Some(result.gamma_hat.clone());
            report.a = Some(result.a);
            report.objective = Some(result.objective);
            ctx.result = Some(result);
            stage(&mut report, "synthesize", outcome);
        }
        Err(Error::Infeasible { statuses }) => {
            report.infeasible = true;
            let grid: Vec<GridRow> = statuses
                .iter()
                .map(|(a, s)| GridRow {
                    a: *a,
                    status: s.clone(),
                    objective: None,
                    message: None,
                })
                .collect();
            art.csv("grid.csv", &grid)?;
            stage(
                &mut report,
                "synthesize",
                Err(Error::Infeasible { statuses }),
            );
        }
        Err(e) => {
            stage(&mut report, "synthesize", Err(e));
        }
    }

    // verify
    if let Some(result) = &ctx.result {
        let opts = VerifyOptions {
            trials: cfg.verification.trials,
            horizon: cfg.verification.horizon,
            seed: cfg.seed,
            initial_state: cfg.simulation.as_ref().map(|s| ctx.x0(s.initial_frequency)),
            ..VerifyOptions::default()
        };
        let outcome = verify_certificate(&ctx.disc, result, &ctx.unsafe_set, &ctx.bounds, &opts)
            .and_then(|cert| {
                let mut buf = Vec::new();
                write_certificate_csv(&cert, &mut buf)?;
                art.write("certificate.csv", &buf)?;
                let passed = cert.passed();
                let failures: Vec<String> =
                    cert.failures().iter().map(|c| c.name.clone()).collect();
                report.certificate = Some(cert);
                if passed {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "certificate checks failed: {}",
                        failures.join(", ")
                    )))
                }
            });
        stage(&mut report, "verify", outcome);
    } else {
        skip(&mut report, "verify", "no synthesized bounds");
    }

    match &cfg.attacks {
        Some(section) if !section.types.is_empty() => {
            let outcome = run_attacks(&ctx, section, &mut art, &mut report.attacks);
            stage(&mut report, "attacks", outcome);
        }
        _ => skip(&mut report, "attacks", "no attacks configured"),
    }

    match &cfg.simulation {
        Some(section) => {
            let outcome = run_simulations(&ctx, section, &mut art, &mut report.simulations);
            stage(&mut report, "simulate", outcome);
        }
        None => skip(&mut report, "simulate", "no simulation configured"),
    }

    match &cfg.reachability {
        Some(section) => {
            let outcome = run_reachability(&ctx, section, &mut art, &mut report.reachability);
            stage(&mut report, "reachability", outcome);
        }
        None => skip(
            &mut report,
            "reachability",
            "no reachability sampling configured",
        ),
    }

    finish(report, art)
}

fn finish(mut report: RunReport, mut art: Artifacts) -> Result<RunReport> {
    report.artifacts = art.files.clone();
    report.artifacts.push("report.json".into());
    let text = serde_json::to_string_pretty(&report)?;
    art.write("report.json", text.as_bytes())?;
    Ok(report)
}

/// Discretized matrices (row-major) with labels and spectral radius.
pub fn model_json(cont: &ContinuousModel, disc: &DiscreteModel) -> Result<String> {
    let value = serde_json::json!({
        "tau": disc.tau,
        "spectral_radius": crate::linalg::spectral_radius(&disc.a)?,
        "A": rows(&disc.a),
        "B": rows(&disc.b),
        "H": rows(&disc.h),
        "state_labels": cont.state_labels,
    });
    Ok(serde_json::to_string_pretty(&value)?)
}

/// One row per certificate check.
pub fn write_certificate_csv<W: Write>(cert: &CertificateReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in &cert.checks {
        w.serialize(CheckRow {
            check: &c.name,
            passed: c.passed,
            residual: c.residual,
            detail: &c.detail,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Per-grid-point solver statuses.
pub fn write_grid_csv<W: Write>(result: &ResilientResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in &result.per_a_status {
        w.serialize(grid_row(p))?;
    }
    w.flush()?;
    Ok(())
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn grid_row(p: &crate::synthesis::GridPoint) -> GridRow {
    let (objective, message) = match &p.status {
        GridStatus::Optimal { objective } => (Some(*objective), None),
        GridStatus::Infeasible => (None, None),
        GridStatus::NumericalFailure { message } => (None, Some(message.clone())),
    };
    GridRow {
        a: p.a,
        status: p.status.label(),
        objective,
        message,
    }
}

fn run_attacks(
    ctx: &Context<'_>,
    section: &AttackSection,
    art: &mut Artifacts,
    out: &mut Vec<AttackOutcome>,
) -> Result<()> {
    let cfg = &ctx.scenario.config;
    let n_steps = section.horizon;
    let x0 = ctx.x0(section.initial_frequency);
    let zero_omega = vec![0.0; n_steps];
    let mut freq_series = Vec::new();
    for (label, gamma) in ctx.bound_sets() {
        let ctrl = AgcController::new(cfg.controller.clone(), gamma.clone())?;
        for kind in &section.types {
            match kind {
                AttackKind::Random => {
                    let mut rows = Vec::with_capacity(section.random_trials);
                    for i in 0..section.random_trials as u64 {
                        let seed = cfg.seed.wrapping_add(i);
                        let signal = random_setpoint_attack(&gamma, n_steps, seed)?;
                        let tr = simulate_discrete_with(
                            &ctx.disc,
                            &ctrl,
                            &zero_omega,
                            &x0,
                            Some(&AttackSignal::SetpointReplacement(signal)),
                        )?;
                        rows.push(RandomRow {
                            seed,
                            final_deviation: tr.states[n_steps][0],
                            peak_deviation: tr.max_abs_frequency(),
                        });
                    }
                    let worst = rows
                        .iter()
                        .map(|r| r.final_deviation)
                        .fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
                    let peak = rows.iter().map(|r| r.peak_deviation).fold(0.0, f64::max);
                    let csv = art.csv(&format!("attack_random_{label}.csv"), &rows)?;
                    out.push(AttackOutcome {
                        kind: kind.name().into(),
                        bounds: label.into(),
                        direction: None,
                        achieved_deviation: worst,
                        peak_deviation: peak,
                        csv,
                    });
                }
                AttackKind::OptimalSetpoint | AttackKind::OptimalSensor => {
                    for dir in &section.directions {
                        let opts = AttackOptions::new(n_steps, *dir)
                            .with_x0(x0.clone())
                            .with_omega(section.omega_policy, ctx.bounds.disturbance);
                        let (traj, achieved) = if *kind == AttackKind::OptimalSetpoint {
                            let att = optimal_setpoint_attack(&ctx.disc, &gamma, &opts)?;
                            let tr = simulate_discrete_with(
                                &ctx.disc,
                                &ctrl,
                                &att.omega,
                                &x0,
                                Some(&AttackSignal::SetpointReplacement(att.signal.clone())),
                            )?;
                            (tr, att.achieved)
                        } else {
                            let att = optimal_sensor_attack(&ctx.disc, &ctrl, &gamma, &opts)?;
                            // Induced setpoints applied directly; the δ column
                            // records the injection that produces them.
                            let mut tr = simulate_discrete_with(
                                &ctx.disc,
                                &ctrl,
                                &att.omega,
                                &x0,
                                Some(&AttackSignal::SetpointReplacement(att.setpoints.clone())),
                            )?;
                            for (s, d) in tr.steps.iter_mut().zip(&att.delta) {
                                s.attack_signal = *d;
                            }
                            (tr, att.achieved)
                        };
                        let name = format!("attack_{}_{}_{label}.csv", short(*kind), dir);
                        let csv = art.trajectory(&name, &traj)?;
                        freq_series.push(Series::new(
                            format!("{} {} ({label})", short(*kind), dir),
                            traj.times.clone(),
                            traj.frequency(),
                        ));
                        out.push(AttackOutcome {
                            kind: kind.name().into(),
                            bounds: label.into(),
                            direction: Some(*dir),
                            achieved_deviation: achieved,
                            peak_deviation: traj.max_abs_frequency(),
                            csv,
                        });
                    }
                }
            }
        }
    }
    if !freq_series.is_empty() {
        let plot = LinePlot {
            title: "Frequency deviation under optimal attacks".into(),
            x_label: "time (s)".into(),
            y_label: "Δf (Hz)".into(),
            series: freq_series,
            hlines: limit_lines(&ctx.unsafe_set),
        };
        art.write("attacks_frequency.svg", plot.to_svg()?.as_bytes())?;
    }
    Ok(())
}

fn short(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::Random => "random",
        AttackKind::OptimalSetpoint => "setpoint",
        AttackKind::OptimalSensor => "sensor",
    }
}

/// `±g` lines for unsafe half-spaces acting on `Δf` alone.
fn limit_lines(set: &UnsafeSet) -> Vec<(f64, String)> {
    set.halfspaces()
        .iter()
        .filter(|h| h.c.iter().skip(1).all(|v| *v == 0.0) && h.c[0] != 0.0)
        .map(|h| (h.g / h.c[0], "unsafe".to_string()))
        .collect()
}

fn run_simulations(
    ctx: &Context<'_>,
    section: &SimulationSection,
    art: &mut Artifacts,
    out: &mut Vec<SimulationSummary>,
) -> Result<()> {
    let cfg = &ctx.scenario.config;
    let tau = ctx.disc.tau;
    let steps = (section.duration / tau + 1e-9).floor() as usize;
    let dist = DisturbanceModel::new(ctx.bounds.disturbance, section.dwell, cfg.seed)?;
    let x0 = ctx.x0(section.initial_frequency);
    let mut freq = Vec::new();
    let mut setpoint_series = Vec::new();
    for (label, gamma) in ctx.bound_sets() {
        let ctrl = AgcController::new(cfg.controller.clone(), gamma)?;
        let traj = match section.mode {
            SimulationMode::Discrete => {
                simulate_discrete(&ctx.disc, &ctrl, &dist, steps, &x0, None)?
            }
            SimulationMode::Continuous => {
                let opts = ContinuousOptions {
                    tau,
                    t_end: steps as f64 * tau,
                    dt: section.dt,
                    record_every: section.record_every,
                };
                simulate_continuous(&ctx.cont, &ctrl, &opts, &dist, &x0, None)?
            }
        };
        let csv = art.trajectory(&format!("normal_{label}.csv"), &traj)?;
        freq.push(Series::new(label, traj.times.clone(), traj.frequency()));
        if label == "resilient" {
            let t: Vec<f64> = traj.steps.iter().map(|s| s.t).collect();
            for i in 0..ctx.disc.input_dim() {
                setpoint_series.push(Series::new(
                    format!("u{}", i + 1),
                    t.clone(),
                    traj.steps.iter().map(|s| s.u[i]).collect(),
                ));
            }
        }
        out.push(SimulationSummary {
            bounds: label.into(),
            max_abs_frequency: traj.max_abs_frequency(),
            settling_time: traj.settling_time(0.05),
            saturation_events: traj.saturation_events(),
            saturated_steps: traj
                .steps
                .iter()
                .filter(|s| s.saturated.iter().any(|f| *f))
                .count(),
            steps: traj.steps.len(),
            csv,
        });
    }
    let plot = LinePlot {
        title: "Frequency deviation, normal operation".into(),
        x_label: "time (s)".into(),
        y_label: "Δf (Hz)".into(),
        series: freq,
        hlines: limit_lines(&ctx.unsafe_set),
    };
    art.write("normal_frequency.svg", plot.to_svg()?.as_bytes())?;
    if !setpoint_series.is_empty() {
        let plot = LinePlot {
            title: "Setpoints under resilient bounds".into(),
            x_label: "time (s)".into(),
            y_label: "setpoint (pu)".into(),
            series: setpoint_series,
            hlines: Vec::new(),
        };
        art.write("normal_setpoints.svg", plot.to_svg()?.as_bytes())?;
    }
    Ok(())
}

fn run_reachability(
    ctx: &Context<'_>,
    section: &ReachabilitySection,
    art: &mut Artifacts,
    out: &mut Vec<ReachSummary>,
) -> Result<()> {
    let Some(result) = &ctx.result else {
        return Err(Error::Config(
            "reachability plots need synthesized bounds".into(),
        ));
    };
    let ell = result.ellipsoid()?;
    let [i, j] = section.axes;
    let labels = &ctx.cont.state_labels;
    let shape = project_ellipse(&result.w, i, j)?;
    for (label, gamma) in ctx.bound_sets() {
        let bounds = ctx.bounds.with_gamma(gamma)?;
        let sampler = ReachSampler::new(
            &ctx.disc,
            &bounds,
            section.horizon,
            section.trials,
            ctx.scenario.config.seed,
        );
        let mut rows = Vec::with_capacity(section.trials * section.horizon);
        for trial in 0..section.trials {
            let mut step = 0;
            sampler.run_trial(trial, |x| {
                step += 1;
                rows.push(ReachRow {
                    trial,
                    step,
                    x_i: x[i],
                    x_j: x[j],
                    level: ell.level(x).unwrap_or(f64::INFINITY),
                });
            });
        }
        let max_level = rows.iter().map(|r| r.level).fold(0.0, f64::max);
        let max_df = if i == 0 {
            rows.iter().map(|r| r.x_i.abs()).fold(0.0, f64::max)
        } else if j == 0 {
            rows.iter().map(|r| r.x_j.abs()).fold(0.0, f64::max)
        } else {
            f64::NAN
        };
        let points = rows.iter().map(|r| [r.x_i, r.x_j]).collect();
        let csv = art.csv(&format!("reach_{label}.csv"), &rows)?;
        let plot = EllipsePlot {
            title: format!("Invariant ellipsoid and reachable states ({label} bounds)"),
            x_label: labels.get(i).cloned().unwrap_or_default(),
            y_label: labels.get(j).cloned().unwrap_or_default(),
            ellipses: vec![("certified ellipsoid".into(), shape)],
            unsafe_regions: project_unsafe(&ctx.unsafe_set, i, j),
            points,
        };
        art.write(&format!("reach_{label}.svg"), plot.to_svg()?.as_bytes())?;
        out.push(ReachSummary {
            bounds: label.into(),
            states: rows.len(),
            max_level,
            max_abs_frequency: max_df,
            csv,
        });
    }
    Ok(())
}

/// Human-readable summary of a run report.
pub fn render_markdown(report: &RunReport) -> String {
    let mut s = String::new();
    let fmt_vec = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    s.push_str("# Resilient-bound run\n\n");
    s.push_str(&format!("seed: {}\n\n", report.seed));
    s.push_str(&format!(
        "physical bounds: [{}]\n\n",
        fmt_vec(&report.physical_gamma)
    ));
    if let Some(rho) = report.spectral_radius {
        s.push_str(&format!("spectral radius of A: {rho:.4}\n\n"));
    }
    match (&report.gamma_hat, report.a, report.objective) {
        (Some(g), Some(a), Some(obj)) => s.push_str(&format!(
            "resilient bounds: [{}] (sum {obj:.4}, a = {a})\n\n",
            fmt_vec(g)
        )),
        _ if report.infeasible => s.push_str("synthesis: infeasible on every grid point\n\n"),
        _ => s.push_str("synthesis: no result\n\n"),
    }
    if let Some(cert) = &report.certificate {
        s.push_str("## Certificate\n\n| check | passed | residual |\n|---|---|---|\n");
        for c in &cert.checks {
            s.push_str(&format!(
                "| {} | {} | {:.3e} |\n",
                c.name, c.passed, c.residual
            ));
        }
        if let Some(v0) = cert.initial_level {
            s.push_str(&format!(
                "\nV(x0) = {v0:.4}{}\n",
                if v0 > 1.0 { " (exceeds 1)" } else { "" }
            ));
        }
        s.push('\n');
    }
    if !report.attacks.is_empty() {
        s.push_str("## Attacks\n\n| attack | direction | bounds | Δf(N) | peak abs Δf |\n|---|---|---|---|---|\n");
        for a in &report.attacks {
            s.push_str(&format!(
                "| {} | {} | {} | {:.4} | {:.4} |\n",
                a.kind,
                a.direction.map_or("-".into(), |d| d.to_string()),
                a.bounds,
                a.achieved_deviation,
                a.peak_deviation
            ));
        }
        s.push('\n');
    }
    if !report.simulations.is_empty() {
        s.push_str("## Normal operation\n\n| bounds | max abs Δf | settles below 0.05 Hz at | saturation events | saturated steps |\n|---|---|---|---|---|\n");
        for r in &report.simulations {
            s.push_str(&format!(
                "| {} | {:.4} | {} | {} | {}/{} |\n",
                r.bounds,
                r.max_abs_frequency,
                r.settling_time.map_or("never".into(), |t| format!("{t} s")),
                r.saturation_events,
                r.saturated_steps,
                r.steps
            ));
        }
        s.push('\n');
    }
    if !report.reachability.is_empty() {
        s.push_str("## Sampled reachable states\n\n| bounds | states | max V | max abs Δf |\n|---|---|---|---|\n");
        for r in &report.reachability {
            s.push_str(&format!(
                "| {} | {} | {:.4} | {:.4} |\n",
                r.bounds, r.states, r.max_level, r.max_abs_frequency
            ));
        }
        s.push('\n');
    }
    s.push_str("## Stages\n\n");
    for st in &report.stages {
        let state = match st.state {
            StageState::Ok => "ok",
            StageState::Failed => "FAILED",
            StageState::Skipped => "skipped",
        };
        match &st.message {
            Some(m) => s.push_str(&format!("- {}: {state} ({m})\n", st.name)),
            None => s.push_str(&format!("- {}: {state}\n", st.name)),
        }
    }
    s
}
