use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use rescon::attacks::{
    optimal_sensor_attack, optimal_setpoint_attack, random_setpoint_attack, AttackFile,
    AttackOptions, Direction, OmegaPolicy,
};
use rescon::control::{
    simulate_continuous, simulate_discrete, simulate_discrete_with, AgcController,
    ContinuousOptions, ControllerParams, DisturbanceModel, DEFAULT_DWELL,
};
use rescon::model::{build_discrete, ModelConfig};
use rescon::reachability::UnsafeDecl;
use rescon::scenario::{
    model_json, read_text, render_markdown, run_scenario, write_certificate_csv, write_grid_csv,
    write_trajectory_csv, AttackKind, BoundsChoice, RunReport, Scenario,
};
use rescon::synthesis::{
    parse_a_grid, synthesize, verify_certificate, LmiWeighting, ResilientResult, SynthesisProblem,
    VerifyOptions,
};
use rescon::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const EXIT_CONFIG: u8 = 4;

/// Certified setpoint bounds for AGC-controlled generators and storage.
#[derive(Debug, Parser)]
#[command(name = "rescon", version)]
pub struct Cli {
    /// Scenario file supplying defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for outputs written without an explicit `--out`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discretize a model and write its matrices.
    Build(BuildArgs),
    /// Solve for resilient bounds over a grid of `a`.
    Synthesize(SynthArgs),
    /// Re-check a saved certificate without the solver.
    Verify(VerifyArgs),
    /// Compute a random or worst-case attack.
    Attack(AttackArgs),
    /// Simulate the closed AGC loop.
    Simulate(SimArgs),
    /// Render a run report as markdown.
    Report(ReportArgs),
    /// Run the whole pipeline from a scenario file.
    Run,
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Model file (JSON).
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Unsafe-set JSON file, or `frequency_limit:<Hz>`.
    #[arg(long = "unsafe")]
    unsafe_set: Option<String>,
    /// `start:step:end`.
    #[arg(long)]
    a_grid: Option<String>,
    #[arg(long, value_enum)]
    weighting: Option<Weighting>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Weighting {
    Channels,
    PerInput,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long = "unsafe")]
    unsafe_set: Option<String>,
    /// Synthesis output to check.
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Also report `V(x0)` for this initial frequency deviation.
    #[arg(long)]
    initial_frequency: Option<f64>,
    /// Check table (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long = "controller")]
    controller: Option<PathBuf>,
    #[arg(long = "type", value_enum)]
    kind: AttackType,
    /// `physical` or `resilient:<result.json>`.
    #[arg(long, default_value = "physical")]
    bounds: String,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value = "min")]
    direction: Direction,
    #[arg(long, default_value = "zero")]
    omega: OmegaPolicy,
    /// Frequency deviation at the start of the attack (Hz).
    #[arg(long, default_value_t = 0.1)]
    initial_frequency: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AttackType {
    Random,
    OptimalSetpoint,
    OptimalSensor,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Controller parameters (JSON).
    #[arg(long)]
    controller: Option<PathBuf>,
    #[arg(long, default_value = "physical")]
    bounds: String,
    /// Simulated seconds.
    #[arg(long, default_value_t = 900.0)]
    horizon: f64,
    #[arg(long, value_enum, default_value = "discrete")]
    mode: Mode,
    /// `none` or an attack file.
    #[arg(long, default_value = "none")]
    attack: String,
    #[arg(long, default_value_t = 1e-2)]
    dt: f64,
    #[arg(long, default_value_t = 0.1)]
    initial_frequency: f64,
    #[arg(long, default_value_t = DEFAULT_DWELL)]
    dwell: usize,
    /// Turns the random load disturbance off.
    #[arg(long)]
    no_disturbance: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Discrete,
    Continuous,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// `report.json` from `run`; defaults to the one in the output directory.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome of a subcommand that ran to completion.
enum Done {
    Ok,
    Infeasible,
    VerifyFailed,
    StageFailed,
}

pub fn run(cli: Cli) -> ExitCode {
    match dispatch(&cli) {
        Ok(Done::Ok) => ExitCode::SUCCESS,
        Ok(Done::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
        Ok(Done::VerifyFailed) => ExitCode::from(EXIT_VERIFY),
        Ok(Done::StageFailed) => ExitCode::from(EXIT_FAILURE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        Error::Config(_)
        | Error::InvalidParameter { .. }
        | Error::DimensionMismatch { .. }
        | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Global flags plus the optional scenario they refer to.
struct Globals {
    scenario: Option<Scenario>,
    seed: u64,
    out_dir: PathBuf,
}

impl Globals {
    fn load(cli: &Cli) -> rescon::Result<Self> {
        let scenario = cli.config.as_deref().map(Scenario::load).transpose()?;
        let seed = cli
            .seed
            .or(scenario.as_ref().map(|s| s.config.seed))
            .unwrap_or(0);
        let out_dir = cli
            .out_dir
            .clone()
            .or(scenario.as_ref().map(|s| s.out_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            scenario,
            seed,
            out_dir,
        })
    }

    fn model(&self, arg: &ModelArg) -> rescon::Result<ModelConfig> {
        match (&arg.model, &self.scenario) {
            (Some(path), _) => ModelConfig::from_json(&read_text(path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
            (None, Some(s)) => Ok(s.model.clone()),
            (None, None) => Err(Error::Config(
                "no model given; pass --model or --config".into(),
            )),
        }
    }

    fn unsafe_decl(&self, arg: &Option<String>) -> rescon::Result<UnsafeDecl> {
        match (arg, &self.scenario) {
            (Some(text), _) => {
                let path = Path::new(text);
                if path.is_file() {
                    UnsafeDecl::parse(&read_text(path)?)
                } else {
                    UnsafeDecl::parse(text)
                }
            }
            (None, Some(s)) => Ok(s.config.unsafe_set.clone()),
            (None, None) => Err(Error::Config(
                "no unsafe set given; pass --unsafe or --config".into(),
            )),
        }
    }

    fn controller(&self, arg: &Option<PathBuf>) -> rescon::Result<ControllerParams> {
        match (arg, &self.scenario) {
            (Some(path), _) => serde_json::from_str(&read_text(path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
            (None, Some(s)) => Ok(s.config.controller.clone()),
            (None, None) => Ok(ControllerParams::case_study()),
        }
    }

    fn out(&self, arg: &Option<PathBuf>, default_name: &str) -> rescon::Result<PathBuf> {
        match arg {
            Some(p) => Ok(p.clone()),
            None => {
                fs::create_dir_all(&self.out_dir)?;
                Ok(self.out_dir.join(default_name))
            }
        }
    }
}

fn dispatch(cli: &Cli) -> rescon::Result<Done> {
    let g = Globals::load(cli)?;
    match &cli.command {
        Command::Build(args) => build(&g, args),
        Command::Synthesize(args) => synth(&g, args),
        Command::Verify(args) => verify(&g, args),
        Command::Attack(args) => attack(&g, args),
        Command::Simulate(args) => simulate(&g, args),
        Command::Report(args) => report(&g, args),
        Command::Run => run_all(&g),
    }
}

fn build(g: &Globals, args: &BuildArgs) -> rescon::Result<Done> {
    let cfg = g.model(&args.model)?;
    let (cont, disc) = build_discrete(&cfg)?;
    let out = g.out(&args.out, "model.json")?;
    fs::write(&out, model_json(&cont, &disc)?)?;
    println!(
        "model: n = {}, m = {}, tau = {} s -> {}",
        disc.state_dim(),
        disc.input_dim(),
        disc.tau,
        out.display()
    );
    Ok(Done::Ok)
}

fn synth(g: &Globals, args: &SynthArgs) -> rescon::Result<Done> {
    let cfg = g.model(&args.model)?;
    let (_, disc) = build_discrete(&cfg)?;
    let unsafe_set = g.unsafe_decl(&args.unsafe_set)?.resolve(disc.state_dim())?;
    let grid_text = args
        .a_grid
        .clone()
        .or(g
            .scenario
            .as_ref()
            .map(|s| s.config.synthesis.a_grid.clone()))
        .unwrap_or_else(|| "0.02:0.02:0.98".into());
    let weighting = match args.weighting {
        Some(Weighting::Channels) => LmiWeighting::Channels,
        Some(Weighting::PerInput) => LmiWeighting::PerInput,
        None => g
            .scenario
            .as_ref()
            .map_or(LmiWeighting::default(), |s| s.config.synthesis.weighting),
    };
    let problem = SynthesisProblem::new(
        disc,
        cfg.params.physical_bounds(),
        unsafe_set,
        parse_a_grid(&grid_text)?,
    )?
    .with_weighting(weighting);
    let result = match synthesize(&problem) {
        Ok(r) => r,
        Err(e @ Error::Infeasible { .. }) => {
            eprintln!("error: {e}");
            return Ok(Done::Infeasible);
        }
        Err(e) => return Err(e),
    };
    let out = g.out(&args.out, "result.json")?;
    fs::write(&out, result.to_json()?)?;
    let mut grid = Vec::new();
    write_grid_csv(&result, &mut grid)?;
    fs::write(out.with_file_name("grid.csv"), grid)?;
    println!(
        "gamma_hat = {:?}, a = {}, objective = {:.6} -> {}",
        result.gamma_hat,
        result.a,
        result.objective,
        out.display()
    );
    Ok(Done::Ok)
}

fn load_result(path: &Path) -> rescon::Result<ResilientResult> {
    ResilientResult::from_json(&read_text(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn verify(g: &Globals, args: &VerifyArgs) -> rescon::Result<Done> {
    let cfg = g.model(&args.model)?;
    let (_, disc) = build_discrete(&cfg)?;
    let unsafe_set = g.unsafe_decl(&args.unsafe_set)?.resolve(disc.state_dim())?;
    let result = load_result(&args.result)?;
    let section = g
        .scenario
        .as_ref()
        .map(|s| s.config.verification.clone())
        .unwrap_or_default();
    let initial_state = args.initial_frequency.map(|df| {
        let mut x = DVector::zeros(disc.state_dim());
        x[0] = df;
        x
    });
    let opts = VerifyOptions {
        trials: args.trials.unwrap_or(section.trials),
        horizon: args.horizon.unwrap_or(section.horizon),
        seed: g.seed,
        initial_state,
        ..VerifyOptions::default()
    };
    let cert = verify_certificate(
        &disc,
        &result,
        &unsafe_set,
        &cfg.params.physical_bounds(),
        &opts,
    )?;
    let out = g.out(&args.out, "certificate.csv")?;
    let mut buf = Vec::new();
    write_certificate_csv(&cert, &mut buf)?;
    fs::write(&out, buf)?;
    for c in &cert.checks {
        println!(
            "{:<5} {} (residual {:.3e}) {}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.residual,
            c.detail
        );
    }
    if let Some(v0) = cert.initial_level {
        println!(
            "V(x0) = {v0:.6}{}",
            if v0 > 1.0 { " exceeds 1" } else { "" }
        );
    }
    Ok(if cert.passed() {
        Done::Ok
    } else {
        Done::VerifyFailed
    })
}

fn attack(g: &Globals, args: &AttackArgs) -> rescon::Result<Done> {
    let cfg = g.model(&args.model)?;
    let (_, disc) = build_discrete(&cfg)?;
    let gamma = BoundsChoice::parse(&args.bounds)?.resolve(&cfg)?;
    let mut x0 = DVector::zeros(disc.state_dim());
    x0[0] = args.initial_frequency;
    let ctrl = AgcController::new(g.controller(&args.controller)?, gamma.clone())?;
    let file = match args.kind {
        AttackType::Random => {
            let signal = random_setpoint_attack(&gamma, args.horizon, g.seed)?;
            let omega = vec![0.0; args.horizon];
            let attack = rescon::control::AttackSignal::SetpointReplacement(signal.clone());
            let tr = simulate_discrete_with(&disc, &ctrl, &omega, &x0, Some(&attack))?;
            AttackFile {
                kind: AttackKind::Random.name().into(),
                horizon: args.horizon,
                signal: signal.iter().map(|u| u.as_slice().to_vec()).collect(),
                achieved_deviation: tr.states[args.horizon][0],
                direction: None,
                peak_deviation: Some(tr.max_abs_frequency()),
            }
        }
        AttackType::OptimalSetpoint | AttackType::OptimalSensor => {
            let opts = AttackOptions::new(args.horizon, args.direction)
                .with_x0(x0)
                .with_omega(args.omega, cfg.params.disturbance_bound);
            if matches!(args.kind, AttackType::OptimalSetpoint) {
                let att = optimal_setpoint_attack(&disc, &gamma, &opts)?;
                AttackFile::from_setpoint(AttackKind::OptimalSetpoint.name(), &att)
            } else {
                AttackFile::from_sensor(&optimal_sensor_attack(&disc, &ctrl, &gamma, &opts)?)
            }
        }
    };
    let out = g.out(&args.out, "attack.json")?;
    fs::write(&out, serde_json::to_string_pretty(&file)?)?;
    println!(
        "{}: delta f({}) = {:.6} Hz -> {}",
        file.kind,
        file.horizon,
        file.achieved_deviation,
        out.display()
    );
    Ok(Done::Ok)
}

fn simulate(g: &Globals, args: &SimArgs) -> rescon::Result<Done> {
    let cfg = g.model(&args.model)?;
    let (cont, disc) = build_discrete(&cfg)?;
    let gamma = BoundsChoice::parse(&args.bounds)?.resolve(&cfg)?;
    let ctrl = AgcController::new(g.controller(&args.controller)?, gamma)?;
    let attack = match args.attack.as_str() {
        "none" => None,
        path => {
            let file: AttackFile = serde_json::from_str(&read_text(Path::new(path))?)
                .map_err(|e| Error::Config(format!("{path}: {e}")))?;
            Some(file.to_signal()?)
        }
    };
    let bound = if args.no_disturbance {
        0.0
    } else {
        cfg.params.disturbance_bound
    };
    let dist = DisturbanceModel::new(bound, args.dwell, g.seed)?;
    let steps = (args.horizon / disc.tau + 1e-9).floor() as usize;
    let mut x0 = DVector::zeros(disc.state_dim());
    x0[0] = args.initial_frequency;
    let traj = match args.mode {
        Mode::Discrete => simulate_discrete(&disc, &ctrl, &dist, steps, &x0, attack.as_ref())?,
        Mode::Continuous => {
            let opts = ContinuousOptions {
                tau: disc.tau,
                t_end: steps as f64 * disc.tau,
                dt: args.dt,
                record_every: 1,
            };
            simulate_continuous(&cont, &ctrl, &opts, &dist, &x0, attack.as_ref())?
        }
    };
    let out = g.out(&args.out, "traj.csv")?;
    write_trajectory_csv(&traj, fs::File::create(&out)?)?;
    println!(
        "max |delta f| = {:.6} Hz, saturation events = {} -> {}",
        traj.max_abs_frequency(),
        traj.saturation_events(),
        out.display()
    );
    Ok(Done::Ok)
}

fn report(g: &Globals, args: &ReportArgs) -> rescon::Result<Done> {
    let input = args
        .input
        .clone()
        .unwrap_or_else(|| g.out_dir.join("report.json"));
    let rep: RunReport = serde_json::from_str(&read_text(&input)?)
        .map_err(|e| Error::Config(format!("{}: {e}", input.display())))?;
    let text = render_markdown(&rep);
    match &args.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(Done::Ok)
}

fn run_all(g: &Globals) -> rescon::Result<Done> {
    let Some(scenario) = &g.scenario else {
        return Err(Error::Config("`run` needs --config <scenario.json>".into()));
    };
    let scenario = scenario
        .clone()
        .with_seed(g.seed)
        .with_out_dir(g.out_dir.clone());
    let rep = run_scenario(&scenario)?;
    print!("{}", render_markdown(&rep));
    println!("\nartifacts in {}", scenario.out_dir.display());
    if rep.infeasible {
        Ok(Done::Infeasible)
    } else if rep.certificate.is_some() && !rep.certificate_passed() {
        Ok(Done::VerifyFailed)
    } else if rep.failed_stage.is_some() {
        Ok(Done::StageFailed)
    } else {
        Ok(Done::Ok)
    }
}
