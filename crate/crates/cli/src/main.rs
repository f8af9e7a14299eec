//! `superpose` command-line tool.
//!
//! Results go to stdout as JSON; logs and the effective configuration go to
//! stderr. Exit codes: 0 success, 1 negative verdict, 2 usage error,
//! 3 runtime error.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use superpose::io::{self, Format, IoError, Label};
use superpose::learner::{self, LabeledSet, LearnError, LearnerConfig};
use superpose::optimizer::{self, FitnessSpec, FreeParam, OptError, SearchBox, SwarmConfig};
use superpose::quadtree::{Qts, QuadError};
use superpose::rdsim::{
    self, DatasetConfig, GridState, InitialCondition, ParamSampler, SimError, SteadyOutcome, SteadyStateConfig,
    SystemParams, PIGMENT_REACTION,
};
use superpose::session::{Decision, Session, SessionConfig, SessionError, SessionState};
use superpose::tssl::{self, soundness_audit, Formula, Verdict};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "superpose",
    version,
    about = "Spatial pattern detection and synthesis on reaction-diffusion grids"
)]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Primary output file or directory of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
enum Command {
    /// Simulate one system to steady state and write the observation.
    Simulate(SimulateArgs),
    /// Generate a labeled dataset of steady-state observations.
    GenData(GenDataArgs),
    /// Build the quad transition system of an observation.
    Qts(QtsArgs),
    /// Model-check a formula.
    Check(CheckArgs),
    /// Robustness value of a formula.
    Value(CheckArgs),
    /// Learn a rule list and formula from a training manifest.
    Learn(LearnArgs),
    /// Evaluate a formula as a classifier on a test manifest.
    Eval(EvalArgs),
    /// Search parameters maximizing a formula's value.
    Optimize(OptimizeArgs),
    /// Interactive design sessions.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum DynamicsArg {
    Pigment,
    Inert,
}

#[derive(Debug, Args, Serialize)]
struct SystemArgs {
    /// Grid side (a power of two).
    #[arg(long = "K", default_value_t = 32)]
    k: usize,
    /// Diffusion coefficients, comma separated.
    #[arg(long = "D", value_delimiter = ',', default_values_t = [5.6, 24.5])]
    d: Vec<f64>,
    /// Reaction coefficients, comma separated.
    #[arg(long = "R", value_delimiter = ',', default_values_t = PIGMENT_REACTION)]
    r: Vec<f64>,
    #[arg(long, value_enum, default_value_t = DynamicsArg::Pigment)]
    dynamics: DynamicsArg,
}

impl SystemArgs {
    fn params(&self) -> anyhow::Result<SystemParams> {
        let p = match self.dynamics {
            DynamicsArg::Pigment => SystemParams {
                diffusion: self.d.clone(),
                reaction: self.r.clone(),
                ..SystemParams::pigment(self.k, [0.0, 0.0])
            },
            DynamicsArg::Inert => SystemParams::inert(self.k, self.d.clone()),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Args, Serialize)]
struct SteadyArgs {
    #[arg(long, default_value_t = 0.02)]
    dt: f64,
    /// Absolute residual tolerance; defaults to 0.02 per cell and species.
    #[arg(long)]
    eps: Option<f64>,
    /// Averaging window.
    #[arg(long = "T", default_value_t = 10.0)]
    window: f64,
    #[arg(long, default_value_t = 60.0)]
    tmax: f64,
    /// Initial concentrations are uniform on [0, ic-max].
    #[arg(long, default_value_t = 8.0)]
    ic_max: f64,
}

impl SteadyArgs {
    fn config(&self) -> anyhow::Result<SteadyStateConfig> {
        let cfg = SteadyStateConfig {
            epsilon: self.eps,
            window: self.window,
            t_max: self.tmax,
            dt: self.dt,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn initial(&self) -> InitialCondition {
        InitialCondition {
            lo: 0.0,
            hi: self.ic_max,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    steady: SteadyArgs,
}

#[derive(Debug, Args, Serialize)]
struct LabelArgs {
    #[arg(long, required_unless_present = "negative", conflicts_with = "negative")]
    positive: bool,
    #[arg(long)]
    negative: bool,
}

#[derive(Debug, Args, Serialize)]
struct GenDataArgs {
    #[command(flatten)]
    label: LabelArgs,
    #[arg(long)]
    count: usize,
    /// Draw every diffusion coefficient uniformly from this range (`lo,hi`)
    /// instead of using --D.
    #[arg(long = "D-range", value_delimiter = ',', num_args = 1)]
    d_range: Option<Vec<f64>>,
    /// File name prefix of the observations.
    #[arg(long, default_value = "obs")]
    prefix: String,
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    steady: SteadyArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum QtsFormat {
    Text,
    Dot,
}

#[derive(Debug, Args, Serialize)]
struct QtsArgs {
    /// Observation files, one per channel (CSV or PGM).
    #[arg(long = "obs", required = true)]
    obs: Vec<PathBuf>,
    #[arg(long, default_value_t = 16)]
    levels: usize,
    #[arg(long, value_enum, default_value_t = QtsFormat::Text)]
    format: QtsFormat,
}

#[derive(Debug, Args, Serialize)]
struct CheckArgs {
    /// Transition system in text form.
    #[arg(long, required_unless_present = "obs", conflicts_with = "obs")]
    qts: Option<PathBuf>,
    /// Observation files (one per channel), abstracted on the fly.
    #[arg(long = "obs")]
    obs: Vec<PathBuf>,
    #[arg(long, default_value_t = 16)]
    levels: usize,
    /// Formula file.
    #[arg(long)]
    formula: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct LearnArgs {
    /// Training manifest.
    #[arg(long)]
    train: PathBuf,
    #[arg(long, default_value_t = 4)]
    dmax: usize,
    #[arg(long, default_value_t = 16)]
    levels: usize,
    #[arg(long)]
    out_rules: Option<PathBuf>,
    #[arg(long)]
    out_formula: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    formula: PathBuf,
    /// Test manifest.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 16)]
    levels: usize,
}

#[derive(Debug, Args, Serialize)]
struct OptimizeArgs {
    #[arg(long)]
    formula: PathBuf,
    /// Search box, `lo,hi;lo,hi;...`, one interval per free parameter.
    #[arg(long = "box", default_value = "0,30;0,30")]
    search_box: String,
    /// Free parameters, e.g. `D1,D2` or `R3`.
    #[arg(long, value_delimiter = ',', default_values_t = ["D1".to_string(), "D2".to_string()])]
    free: Vec<String>,
    #[arg(long, default_value_t = 4)]
    x0_seeds: usize,
    #[arg(long, default_value_t = 20)]
    swarm: usize,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 16)]
    levels: usize,
    /// Stop as soon as the best value is positive.
    #[arg(long)]
    stop_when_positive: bool,
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    steady: SteadyArgs,
}

#[derive(Debug, Subcommand, Serialize)]
enum SynthCommand {
    /// Start a session and run it until it needs a review.
    Start(SynthStartArgs),
    /// Print a session's state.
    Status(SynthIdArgs),
    /// Approve or reject the current candidates.
    Decide(SynthDecideArgs),
    /// Continue a session interrupted while learning or optimizing.
    Resume(SynthIdArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthRoot {
    /// Directory holding session directories.
    #[arg(long, default_value = "sessions")]
    root: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SynthStartArgs {
    #[arg(long)]
    pos: PathBuf,
    #[arg(long)]
    neg: PathBuf,
    /// Session configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Session id; derived from the seed when absent.
    #[arg(long)]
    id: Option<String>,
    #[command(flatten)]
    root: SynthRoot,
}

#[derive(Debug, Args, Serialize)]
struct SynthIdArgs {
    #[arg(long)]
    id: String,
    #[command(flatten)]
    root: SynthRoot,
}

#[derive(Debug, Args, Serialize)]
struct SynthDecideArgs {
    #[arg(long)]
    id: String,
    #[arg(long, required_unless_present = "reject", conflicts_with = "reject")]
    approve: bool,
    #[arg(long)]
    reject: bool,
    #[command(flatten)]
    root: SynthRoot,
}

#[derive(Debug, Args, Serialize)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value = "sessions")]
    data_root: PathBuf,
    /// Built review UI to serve at `/`.
    #[arg(long)]
    ui: Option<PathBuf>,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        if is_usage(&e) {
            Failure::Usage(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

/// Bad input (flags, formulas, malformed files) rather than a failure while
/// running.
fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|cause| {
        cause.is::<tssl::ParseError>()
            || cause.is::<learner::RuleParseError>()
            || cause.is::<tssl::EvalError>()
            || matches!(cause.downcast_ref::<LearnError>(), Some(LearnError::Usage(_)))
            || matches!(cause.downcast_ref::<SimError>(), Some(SimError::Usage(_)))
            || matches!(cause.downcast_ref::<OptError>(), Some(OptError::Usage(_)))
            || matches!(
                cause.downcast_ref::<QuadError>(),
                Some(QuadError::Usage(_) | QuadError::Parse { .. })
            )
            || matches!(cause.downcast_ref::<IoError>(), Some(IoError::Format { .. }))
            || matches!(
                cause.downcast_ref::<SessionError>(),
                Some(
                    SessionError::Start(_)
                        | SessionError::Usage(_)
                        | SessionError::NotFound(_)
                        | SessionError::WrongState { .. }
                        | SessionError::IterationCap(_)
                )
            )
    })
}

/// What a command reports: JSON for stdout and the exit code.
struct Report {
    json: String,
    code: u8,
}

impl Report {
    fn ok(value: impl Serialize) -> Result<Report, Failure> {
        Report::with_code(value, 0)
    }

    fn verdict(value: impl Serialize, negative: bool) -> Result<Report, Failure> {
        Report::with_code(value, u8::from(negative))
    }

    fn with_code(value: impl Serialize, code: u8) -> Result<Report, Failure> {
        Ok(Report {
            json: serde_json::to_string_pretty(&value).context("serializing result")?,
            code,
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    if let Ok(cfg) = serde_json::to_string(&cli) {
        eprintln!("effective config: {cfg}");
    }
    match run(&cli) {
        Ok(report) => {
            println!("{}", report.json);
            ExitCode::from(report.code)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> Result<Report, Failure> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::GenData(a) => gen_data(cli, a),
        Command::Qts(a) => qts(cli, a),
        Command::Check(a) => check(a),
        Command::Value(a) => value(a),
        Command::Learn(a) => learn(cli, a),
        Command::Eval(a) => eval(a),
        Command::Optimize(a) => optimize(cli, a),
        Command::Synth(c) => synth(cli, c),
        Command::Serve(a) => serve(a),
    }
}

fn required_out(cli: &Cli) -> Result<&Path, Failure> {
    cli.out
        .as_deref()
        .ok_or_else(|| Failure::Usage(anyhow!("--out is required for this command")))
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<Report, Failure> {
    let params = a.system.params()?;
    let steady = a.steady.config()?;
    let x0 = GridState::random(&params, a.steady.initial(), cli.seed);
    match rdsim::simulate_to_steady(&params, &x0, &steady, cli.seed)? {
        SteadyOutcome::Steady { observation, t_bar, .. } => {
            let files = match &cli.out {
                Some(out) => {
                    let format = Format::from_path(out).unwrap_or(Format::Csv);
                    io::write_observation(&out.with_extension(""), &observation, format)?
                }
                None => Vec::new(),
            };
            Report::ok(json!({
                "converged": true,
                "t_bar": t_bar,
                "side": observation.side(),
                "channels": observation.channels(),
                "mean": observation.mean(),
                "std_dev": observation.std_dev(),
                "files": files,
            }))
        }
        SteadyOutcome::NotConverged { t, residual } => {
            Report::verdict(json!({ "converged": false, "t": t, "residual": residual }), true)
        }
    }
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> Result<Report, Failure> {
    let dir = required_out(cli)?;
    let template = a.system.params()?;
    let sampler = match &a.d_range {
        None => ParamSampler::Fixed(template),
        Some(r) if r.len() == 2 && r[0] <= r[1] => ParamSampler::DiffusionBox {
            template,
            lo: r[0],
            hi: r[1],
        },
        Some(_) => return Err(Failure::Usage(anyhow!("--D-range needs 'lo,hi' with lo <= hi"))),
    };
    let label = if a.label.positive {
        Label::Positive
    } else {
        Label::Negative
    };
    let cfg = DatasetConfig {
        steady: a.steady.config()?,
        initial: a.steady.initial(),
        ..DatasetConfig::default()
    };
    let observations = rdsim::generate_dataset(&sampler, a.count, &cfg, cli.seed)?;
    let entries = io::write_dataset(dir, &a.prefix, &observations, label)?;
    let manifest = dir.join("manifest.json");
    io::write_json(&manifest, &entries)?;
    Report::ok(json!({ "manifest": manifest, "count": entries.len(), "label": label }))
}

fn qts(cli: &Cli, a: &QtsArgs) -> Result<Report, Failure> {
    let obs = io::read_observation(&a.obs)?;
    let q = Qts::from_observation(&obs, a.levels)?;
    let text = match a.format {
        QtsFormat::Text => q.to_text(),
        QtsFormat::Dot => q.to_dot(),
    };
    let mut summary = json!({
        "states": q.len(),
        "variables": q.variables(),
        "self_loop": q.has_self_loop(),
    });
    match &cli.out {
        Some(out) => {
            io::write_atomic(out, text.as_bytes())?;
            summary["out"] = json!(out);
        }
        None => summary["text"] = json!(text),
    }
    Report::ok(summary)
}

fn read_formula(path: &Path) -> Result<Formula, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(tssl::parse(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn load_system(a: &CheckArgs) -> Result<Qts, Failure> {
    match &a.qts {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(Qts::from_text(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => Ok(Qts::from_observation(&io::read_observation(&a.obs)?, a.levels)?),
    }
}

fn check(a: &CheckArgs) -> Result<Report, Failure> {
    let q = load_system(a)?;
    let phi = read_formula(&a.formula)?;
    let report = soundness_audit(&q, &phi)?;
    Report::verdict(
        json!({ "satisfied": report.satisfied, "value": report.value, "verdict": report.verdict }),
        !report.satisfied,
    )
}

/// Exits 0 for a positive value, 1 for a negative one and 2 for zero.
fn value(a: &CheckArgs) -> Result<Report, Failure> {
    let q = load_system(a)?;
    let phi = read_formula(&a.formula)?;
    let report = soundness_audit(&q, &phi)?;
    let verdict = serde_json::to_string(&report.verdict).context("serializing verdict")?;
    let json = format!(
        "{{\n  \"value\": {:.9},\n  \"satisfied\": {},\n  \"verdict\": {verdict}\n}}",
        report.value, report.satisfied
    );
    let code = match report.verdict {
        Verdict::Indeterminate => 2,
        _ if report.value < 0.0 => 1,
        _ => 0,
    };
    Ok(Report { json, code })
}

fn load_labeled(manifest: &Path, levels: usize, d_max: usize) -> Result<LabeledSet, Failure> {
    let data = io::load_dataset(manifest)?;
    if data.is_empty() {
        return Err(Failure::Usage(anyhow!("{} lists no observations", manifest.display())));
    }
    Ok(LabeledSet::from_observations(&data, levels, d_max)?)
}

fn learn(cli: &Cli, a: &LearnArgs) -> Result<Report, Failure> {
    let cfg = LearnerConfig {
        d_max: a.dmax,
        quant_levels: a.levels,
        seed: cli.seed,
        ..LearnerConfig::default()
    };
    let train = load_labeled(&a.train, a.levels, a.dmax)?;
    let classifier = learner::learn(&train, &cfg)?;
    let train_eval = learner::evaluate_classifier(&classifier.formula, &train)?;
    if let Some(path) = &a.out_rules {
        io::write_atomic(path, classifier.ruleset.to_string().as_bytes())?;
    }
    if let Some(path) = &a.out_formula {
        io::write_atomic(path, format!("{}\n", classifier.formula).as_bytes())?;
    }
    let mut metrics = train_eval.metrics;
    metrics.n_rules = classifier.ruleset.len();
    Report::ok(json!({
        "rules": classifier.ruleset.to_string(),
        "formula": classifier.formula.to_string(),
        "train": metrics,
    }))
}

fn eval(a: &EvalArgs) -> Result<Report, Failure> {
    let phi = read_formula(&a.formula)?;
    let test = load_labeled(&a.test, a.levels, 0)?;
    let e = learner::evaluate_classifier(&phi, &test)?;
    Report::ok(e)
}

fn optimize(cli: &Cli, a: &OptimizeArgs) -> Result<Report, Failure> {
    let formula = read_formula(&a.formula)?;
    let bx: SearchBox = a.search_box.parse()?;
    let free = a
        .free
        .iter()
        .map(|s| s.parse::<FreeParam>())
        .collect::<Result<Vec<_>, _>>()?;
    let mut spec = FitnessSpec::with_seeds(a.system.params()?, free, formula, a.x0_seeds, cli.seed);
    spec.steady = a.steady.config()?;
    spec.initial = a.steady.initial();
    spec.quant_levels = a.levels;
    let swarm = SwarmConfig {
        swarm_size: a.swarm,
        iterations: a.iters,
        seed: cli.seed,
        stop_when_positive: a.stop_when_positive,
        ..SwarmConfig::default()
    };
    let result = optimizer::synthesize(&spec, &bx, &swarm)?;
    if let Some(out) = &cli.out {
        io::write_json(out, &result)?;
    }
    let negative = result.gamma < 0.0;
    Report::verdict(result, negative)
}

fn session_report(s: &Session) -> Result<Report, Failure> {
    let current = s.current();
    let result = current.and_then(|r| r.result.as_ref());
    Report::verdict(
        json!({
            "id": s.id,
            "state": s.state,
            "iteration": s.iteration,
            "dir": s.dir(),
            "formula": current.map(|r| &r.formula),
            "gamma": result.map(|r| r.gamma),
            "p": result.map(|r| &r.p_star),
            "candidates": current.map(|r| &r.candidates),
            "diagnostic": s.diagnostic,
        }),
        s.state == SessionState::Failed,
    )
}

fn synth(cli: &Cli, c: &SynthCommand) -> Result<Report, Failure> {
    match c {
        SynthCommand::Start(a) => {
            let config: SessionConfig = match &a.config {
                Some(path) => io::read_json(path)?,
                None => SessionConfig {
                    seed: cli.seed,
                    ..SessionConfig::default()
                },
            };
            let id =
                a.id.clone()
                    .unwrap_or_else(|| format!("s{:x}", superpose::derive_seed(cli.seed, 0)));
            let mut s = Session::start(&a.root.root, &id, &a.pos, &a.neg, config)?;
            s.run_until_blocked()?;
            session_report(&s)
        }
        SynthCommand::Status(a) => session_report(&Session::load(&a.root.root, &a.id)?),
        SynthCommand::Decide(a) => {
            let mut s = Session::load(&a.root.root, &a.id)?;
            s.decide(if a.approve { Decision::Approve } else { Decision::Reject })?;
            s.run_until_blocked()?;
            session_report(&s)
        }
        SynthCommand::Resume(a) => {
            let mut s = Session::load(&a.root.root, &a.id)?;
            s.run_until_blocked()?;
            session_report(&s)
        }
    }
}

fn serve(a: &ServeArgs) -> Result<Report, Failure> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Failure::Usage(anyhow!("bad address: {e}")))?;
    fs::create_dir_all(&a.data_root).with_context(|| format!("creating {}", a.data_root.display()))?;
    let state = superpose_service::AppState::new(&a.data_root, a.ui.clone());
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime
        .block_on(superpose_service::serve(addr, state))
        .context("serving")?;
    Report::ok(json!({ "stopped": true }))
}
