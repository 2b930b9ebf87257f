//! Command-line front end.
//!
//! Every command writes deterministic output: JSON objects are emitted with
//! sorted keys and floats in `{:.16e}` form, so identical inputs give
//! identical bytes. Failures produce a single JSON error record on stderr.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::asymptotics::{self, AsymptoticsError, RateFunction, RateMode};
use crate::flow::{self, FlowError, Trajectory};
use crate::profiles::{self, BracketEvolution, PiecewiseLinear, ProfileError};
use crate::prox::{self, OracleOptions, ProxError};
use crate::sfde::{self, DeltaMeasure, FrontModel, MixedMeasure, SfdeError, SfdeMode};
use crate::stepfn::{Boundary, StepError, StepFunction};

#[derive(Debug, Parser, Serialize)]
#[command(name = "tvflow", version, about = "Total variation flow in one dimension")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Exact evolution of a step function.
    Evolve(EvolveArgs),
    /// One or more implicit steps with a dual certificate.
    Prox(ProxArgs),
    /// Sign fast diffusion of a sum of atoms.
    Sfde(SfdeArgs),
    /// Level cut and certified bracket for a piecewise-linear profile.
    ProfileEvolve(ProfileArgs),
    /// Relative error against the extinction profile near extinction.
    Asymptotics(AsymptoticsArgs),
    /// Rate-function constructions and their verdicts.
    Rates(RatesArgs),
    /// Long-format CSV series for plotting.
    Figure(FigureArgs),
    /// Randomised consistency checks (seed from TVFLOW_SEED).
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum BcArg {
    Cauchy,
    Neumann,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum SfdeModeArg {
    Cauchy,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum RateModeArg {
    NoRate,
    FastRate,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum FigureKind {
    Maxstep,
    Minmax,
    Norate,
    #[value(name = "sfde-example2")]
    #[serde(rename = "sfde-example2")]
    SfdeExample2,
}

#[derive(Debug, Args, Serialize)]
pub struct EvolveArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Checked against the input, or used with --domain to restrict Cauchy data.
    #[arg(long, value_enum)]
    pub bc: Option<BcArg>,
    #[arg(long, value_parser = parse_domain, allow_hyphen_values = true)]
    pub domain: Option<(f64, f64)>,
    /// Final time; runs until the last event when omitted.
    #[arg(long, value_parser = parse_time)]
    pub t_end: Option<f64>,
    #[arg(long, default_value_t = 11, value_parser = clap::value_parser!(u32).range(1..))]
    pub samples: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub emit_csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ProxArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_positive)]
    pub step: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub iters: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SfdeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = SfdeModeArg::Cauchy)]
    pub mode: SfdeModeArg,
    #[arg(long, value_parser = parse_domain, allow_hyphen_values = true)]
    pub domain: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_time)]
    pub t: f64,
    #[arg(long, default_value_t = 11, value_parser = clap::value_parser!(u32).range(1..))]
    pub samples: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ProfileArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_time)]
    pub t: f64,
    #[arg(long, default_value_t = 1e-3, value_parser = parse_positive)]
    pub eps: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AsymptoticsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Samples at `t = T(1 − 2^−j)`, `j = 1..=k`.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..=50))]
    pub samples: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RatesArgs {
    /// `sqrt`, `identity` or `pow:<p>`.
    #[arg(long, default_value = "sqrt")]
    pub xi: String,
    #[arg(long, value_enum, default_value_t = RateModeArg::NoRate)]
    pub mode: RateModeArg,
    /// Distances `T − t` to sample.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.1,0.01", value_parser = parse_positive)]
    pub taus: Vec<f64>,
    #[arg(long, default_value_t = 1e-4, value_parser = parse_positive)]
    pub eps: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FigureArgs {
    #[arg(long, value_enum)]
    pub kind: FigureKind,
    #[arg(long, default_value = "sqrt")]
    pub xi: String,
    #[arg(long, default_value_t = 41, value_parser = clap::value_parser!(u32).range(2..))]
    pub points: u32,
    #[arg(long, default_value_t = 1e-3, value_parser = parse_positive)]
    pub eps: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    pub count: u32,
    #[arg(long, default_value_t = 1e-8, value_parser = parse_positive)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn parse_time(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a nonnegative time, got {s:?}")),
    }
}

fn parse_domain(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if let [a, b] = parts[..] {
        if let (Ok(a), Ok(b)) = (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            if a.is_finite() && b.is_finite() && a < b {
                return Ok((a, b));
            }
        }
    }
    Err(format!("expected a,b with a < b, got {s:?}"))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{message}")]
    Domain { code: String, message: String },
}

impl CliError {
    pub fn code(&self) -> String {
        match self {
            CliError::Usage(_) => "cli.Usage".into(),
            CliError::Parse { .. } => "cli.ParseError".into(),
            CliError::Config(_) => "cli.ConfigError".into(),
            CliError::Io { .. } => "cli.IoError".into(),
            CliError::Domain { code, .. } => code.clone(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain { .. } => 1,
            _ => 2,
        }
    }

    pub fn record(&self) -> Value {
        json!({ "error": { "code": self.code(), "message": self.to_string(), "exit": self.exit_code() } })
    }
}

fn variant_name<E: std::fmt::Debug>(e: &E) -> String {
    format!("{e:?}").chars().take_while(|c| c.is_alphanumeric()).collect()
}

fn step_code(e: &StepError) -> String {
    format!("stepfn.{}", variant_name(e))
}

fn flow_code(e: &FlowError) -> String {
    match e {
        FlowError::Step(s) => step_code(s),
        _ => format!("flow.{}", variant_name(e)),
    }
}

fn prox_code(e: &ProxError) -> String {
    match e {
        ProxError::Step(s) => step_code(s),
        _ => format!("prox.{}", variant_name(e)),
    }
}

fn profile_code(e: &ProfileError) -> String {
    match e {
        ProfileError::Step(s) => step_code(s),
        ProfileError::Flow(f) => flow_code(f),
        _ => format!("profiles.{}", variant_name(e)),
    }
}

fn asymptotics_code(e: &AsymptoticsError) -> String {
    match e {
        AsymptoticsError::Step(s) => step_code(s),
        AsymptoticsError::Flow(f) => flow_code(f),
        AsymptoticsError::Profile(p) => profile_code(p),
        _ => format!("asymptotics.{}", variant_name(e)),
    }
}

fn sfde_code(e: &SfdeError) -> String {
    match e {
        SfdeError::Step(s) => step_code(s),
        SfdeError::Flow(f) => flow_code(f),
        SfdeError::Profile(p) => profile_code(p),
        _ => format!("sfde.{}", variant_name(e)),
    }
}

macro_rules! domain_error {
    ($ty:ty, $code:ident) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Domain { code: $code(&e), message: e.to_string() }
            }
        }
    };
}

domain_error!(StepError, step_code);
domain_error!(FlowError, flow_code);
domain_error!(ProxError, prox_code);
domain_error!(ProfileError, profile_code);
domain_error!(AsymptoticsError, asymptotics_code);
domain_error!(SfdeError, sfde_code);

/// JSON formatter writing every float with 17 significant digits.
#[derive(Clone, Copy, Default)]
pub struct FixedFloat;

impl serde_json::ser::Formatter for FixedFloat {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{}", fmt_f64(v))
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
}

/// Single-line JSON with sorted keys and fixed float formatting.
pub fn to_json<T: Serialize>(value: &T) -> String {
    // Round-trip through `Value` for sorted keys.
    let value = serde_json::to_value(value).expect("serialisable value");
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloat);
    value.serialize(&mut ser).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

fn fmt_f64(v: f64) -> String {
    // Adding zero maps −0 to +0.
    format!("{:.16e}", v + 0.0)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        }),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::Io {
            path: "<stdout>".into(),
            message: e.to_string(),
        }),
    }
}

fn tolerances() -> Value {
    json!({
        "simultaneity": flow::SIMULTANEITY_TOL,
        "oracle_gap": OracleOptions::default().gap_tol,
        "rate_profile_mass": asymptotics::RATE_PROFILE_MASS_TOL,
    })
}

fn header(config: &RunConfig) -> Value {
    json!({
        "record": "header",
        "tool": "tvflow",
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(config).expect("serialisable config"),
        "tolerances": tolerances(),
    })
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect()
}

/// Time range worth sampling: the horizon, or the last event when unbounded.
fn sampling_end(traj: &Trajectory) -> f64 {
    if traj.horizon.is_finite() {
        traj.horizon
    } else {
        traj.events.last().map_or(0.0, |e| e.time)
    }
}

/// Entry point for the binary; returns the process exit status.
pub fn main_from_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string().trim_end().to_string());
            let _ = writeln!(stderr, "{}", to_json(&err.record()));
            return err.exit_code();
        }
    };
    match run(&config, stdout) {
        Ok(()) => 0,
        Err(err) => {
            let _ = writeln!(stderr, "{}", to_json(&err.record()));
            err.exit_code()
        }
    }
}

pub fn run(config: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &config.command {
        Command::Evolve(a) => run_evolve(config, a, stdout),
        Command::Prox(a) => run_prox(config, a, stdout),
        Command::Sfde(a) => run_sfde(config, a, stdout),
        Command::ProfileEvolve(a) => run_profile(config, a, stdout),
        Command::Asymptotics(a) => run_asymptotics(config, a, stdout),
        Command::Rates(a) => run_rates(config, a, stdout),
        Command::Figure(a) => run_figure(a, stdout),
        Command::Selftest(a) => run_selftest(config, a, stdout),
    }
}

fn load_step(args: &EvolveArgs) -> Result<StepFunction, CliError> {
    let u0: StepFunction = read_json(&args.input)?;
    match (args.bc, args.domain, u0.boundary()) {
        (None, None, _) => Ok(u0),
        (Some(BcArg::Cauchy), None, Boundary::Cauchy) => Ok(u0),
        (Some(BcArg::Neumann), None, Boundary::Neumann { .. }) => Ok(u0),
        (Some(BcArg::Neumann) | None, Some((a, b)), Boundary::Cauchy) => {
            let restricted = StepFunction::new(
                Boundary::neumann(a, b)?,
                u0.breakpoints().to_vec(),
                u0.values().to_vec(),
            )?;
            Ok(restricted)
        }
        (Some(BcArg::Neumann) | None, Some((a, b)), Boundary::Neumann { a: ia, b: ib })
            if a == ia && b == ib =>
        {
            Ok(u0)
        }
        _ => Err(CliError::Config(
            "--bc/--domain do not match the boundary mode of the input".into(),
        )),
    }
}

fn run_evolve(config: &RunConfig, args: &EvolveArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let u0 = load_step(args)?;
    let traj = flow::evolve(&u0, args.t_end.unwrap_or(f64::INFINITY))?;
    let mut out = String::new();
    let mut line = |v: &Value| {
        out.push_str(&to_json(v));
        out.push('\n');
    };
    line(&header(config));
    for e in &traj.events {
        line(&json!({
            "record": "event",
            "t": e.time,
            "event": e.kind,
            "state": e.state_after,
        }));
    }
    let times = linspace(0.0, sampling_end(&traj), args.samples as usize);
    let mut samples = Vec::with_capacity(times.len());
    for &t in &times {
        let u = traj.sample(t)?;
        line(&json!({
            "record": "sample",
            "t": t,
            "mass": u.mass().ok(),
            "total_variation": u.total_variation(),
            "state": u,
        }));
        samples.push((t, u));
    }
    write_output(args.out.as_deref(), &out, stdout)?;
    if let Some(path) = &args.emit_csv {
        let mut csv = String::from("t,x,u\n");
        for (t, u) in &samples {
            let mut xs: Vec<f64> = Vec::new();
            if let Boundary::Neumann { a, .. } = u.boundary() {
                xs.push(a);
            }
            xs.extend(u.breakpoints());
            for x in xs {
                csv.push_str(&format!("{},{},{}\n", fmt_f64(*t), fmt_f64(x), fmt_f64(u.eval(x))));
            }
        }
        write_output(Some(path), &csv, stdout)?;
    }
    Ok(())
}

fn run_prox(config: &RunConfig, args: &ProxArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let u0: StepFunction = read_json(&args.input)?;
    let before = prox::discrete_flow(&u0, args.step, args.iters as usize - 1)?;
    let result = prox::tv_prox(&before, args.step)?;
    let residuals = prox::certificate_residuals(&before, &result.uh, &result.certificate);
    let total = args.step * args.iters as f64;
    let closed_form = prox::closed_form_interior(&u0, total).map(|expected| {
        let diff = expected
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let iv = u0.interval(j + 1);
                (result.uh.eval(0.5 * (iv.lo + iv.hi)) - v).abs()
            })
            .fold(0.0, f64::max);
        json!({ "interior": expected, "max_diff": diff })
    });
    let report = json!({
        "header": header(config),
        "uh": result.uh,
        "objective": result.objective,
        "certificate": result.certificate,
        "residuals": residuals,
        "small_step_bound": prox::small_step_bound(&u0),
        "closed_form_horizon": prox::closed_form_horizon(&u0),
        "closed_form": closed_form,
    });
    write_output(args.out.as_deref(), &(to_json(&report) + "\n"), stdout)
}

fn run_sfde(config: &RunConfig, args: &SfdeArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let v0: DeltaMeasure = read_json(&args.input)?;
    let (mode, u0) = match (args.mode, args.domain) {
        (SfdeModeArg::Cauchy, None) => (SfdeMode::Cauchy, sfde::integrate(&v0)),
        (SfdeModeArg::Dirichlet, Some((a, b))) => {
            (SfdeMode::dirichlet(a, b)?, sfde::integrate_on(&v0, a, b)?)
        }
        (SfdeModeArg::Cauchy, Some(_)) => {
            return Err(CliError::Config("--domain is only used with --mode dirichlet".into()))
        }
        (SfdeModeArg::Dirichlet, None) => {
            return Err(CliError::Config("--mode dirichlet requires --domain a,b".into()))
        }
    };
    let traj = flow::evolve(&u0, args.t)?;
    let mut out = String::new();
    let mut line = |v: &Value| {
        out.push_str(&to_json(v));
        out.push('\n');
    };
    let mut head = header(config);
    head["mode"] = serde_json::to_value(mode).expect("serialisable mode");
    head["total_mass"] = json!(sfde::total_mass(&v0));
    line(&head);
    for e in &traj.events {
        line(&json!({
            "record": "event",
            "t": e.time,
            "event": e.kind,
            "measure": sfde::differentiate(&e.state_after),
        }));
    }
    for t in linspace(0.0, args.t, args.samples as usize) {
        let v = sfde::differentiate(&traj.sample(t)?);
        let direct = sfde::evolve_deltas(&v0, t, mode)
            .ok()
            .map(|d| d.max_weight_difference(&v));
        line(&json!({ "record": "sample", "t": t, "measure": v, "direct_rule_diff": direct }));
    }
    write_output(args.out.as_deref(), &out, stdout)
}

fn run_profile(config: &RunConfig, args: &ProfileArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let u0: PiecewiseLinear = read_json(&args.input)?;
    let extinction = 0.5 * u0.mass();
    let level_cut = if u0.is_unimodal() && args.t <= extinction {
        Some(profiles::level_cut(&u0, args.t)?)
    } else {
        None
    };
    let bracket = profiles::evolve_continuous(&u0, args.t, args.eps)?;
    let report = json!({
        "header": header(config),
        "mass": u0.mass(),
        "extinction_time": extinction,
        "unimodal": u0.is_unimodal(),
        "level_cut": level_cut,
        "bracket": {
            "t": bracket.t,
            "gap": bracket.gap(),
            "lower": bracket.lower,
            "upper": bracket.upper,
        },
    });
    write_output(args.out.as_deref(), &(to_json(&report) + "\n"), stdout)
}

fn run_asymptotics(
    config: &RunConfig,
    args: &AsymptoticsArgs,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let u0: StepFunction = read_json(&args.input)?;
    let profile = asymptotics::extinction_profile(&u0)?;
    let traj = flow::evolve(&u0, f64::INFINITY)?;
    let target = profile.support;
    let mut samples = Vec::new();
    for j in 1..=args.samples {
        let t = profile.extinction_time * (1.0 - 0.5f64.powi(j as i32));
        let error = asymptotics::relative_error(&traj, t)?;
        let rescaled = asymptotics::rescale(&traj, t)?;
        let support = traj.sample(t)?.extended_support();
        samples.push(json!({
            "t": t,
            "s": rescaled.s,
            "error": error,
            "support_matches": support == Some(target),
        }));
    }
    let report = json!({
        "header": header(config),
        "profile": profile,
        "samples": samples,
    });
    write_output(args.out.as_deref(), &(to_json(&report) + "\n"), stdout)
}

fn rate_function(name: &str) -> Result<RateFunction, CliError> {
    RateFunction::parse(name).map_err(|e| CliError::Config(e.to_string()))
}

fn run_rates(config: &RunConfig, args: &RatesArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let xi = rate_function(&args.xi)?;
    let mode = match args.mode {
        RateModeArg::NoRate => RateMode::NoRate,
        RateModeArg::FastRate => RateMode::FastRate,
    };
    let report = asymptotics::verify_rate(&xi, mode, &args.taus, args.eps)?;
    let report = json!({ "header": header(config), "report": report });
    write_output(args.out.as_deref(), &(to_json(&report) + "\n"), stdout)
}

/// Rows of a long-format CSV `(series, t, x, value)`.
#[derive(Default)]
struct Series {
    rows: Vec<(String, f64, Option<f64>, f64)>,
}

impl Series {
    fn push(&mut self, series: &str, t: f64, x: Option<f64>, value: f64) {
        self.rows.push((series.to_string(), t, x, value));
    }

    fn render(&self) -> String {
        let mut out = String::from("series,t,x,value\n");
        for (s, t, x, v) in &self.rows {
            let x = x.map(fmt_f64).unwrap_or_default();
            out.push_str(&format!("{s},{},{x},{}\n", fmt_f64(*t), fmt_f64(*v)));
        }
        out
    }
}

/// Three intervals on `[0, 3]` with the maximum in the middle.
pub fn maxstep_datum() -> StepFunction {
    StepFunction::new(Boundary::neumann(0.0, 3.0).unwrap(), vec![1.0, 1.5], vec![1.0, 3.0, 2.0])
        .unwrap()
}

/// A continuous profile with two maxima and one interior minimum.
pub fn minmax_datum() -> PiecewiseLinear {
    PiecewiseLinear::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![0.0, 2.0, 1.0, 2.0, 0.0]).unwrap()
}

/// An atom at the left end of the zero set `[0, 1]` of a density that dips
/// below zero on `(1, 3)`.
pub fn example2_datum() -> MixedMeasure {
    MixedMeasure {
        atoms: DeltaMeasure::new(vec![(0.0, 0.2)]).unwrap(),
        density: PiecewiseLinear::new(
            vec![-1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            vec![1.0, 0.0, 0.0, -1.0, 0.0, 1.0, 1.0],
        )
        .unwrap(),
    }
}

pub fn figure_csv(args: &FigureArgs) -> Result<String, CliError> {
    let n = args.points as usize;
    let mut s = Series::default();
    match args.kind {
        FigureKind::Maxstep => {
            let u0 = maxstep_datum();
            let traj = flow::evolve(&u0, f64::INFINITY)?;
            let mids: Vec<f64> = (0..3)
                .map(|k| {
                    let iv = u0.interval(k);
                    0.5 * (iv.lo + iv.hi)
                })
                .collect();
            let first = traj.events.first().map_or(0.0, |e| e.time);
            let len = u0.lengths()[1];
            for t in linspace(0.0, sampling_end(&traj), n) {
                let u = traj.sample(t)?;
                for (k, &x) in mids.iter().enumerate() {
                    s.push(&format!("alpha_{}", k + 1), t, Some(x), u.eval(x));
                }
                if t <= first {
                    s.push("alpha_2_linear", t, Some(mids[1]), u0.values()[1] - 2.0 * t / len);
                }
            }
        }
        FigureKind::Minmax => {
            let u0 = minmax_datum();
            let mut evo = BracketEvolution::from_profile(&u0, args.eps)?;
            let (lo, hi) = u0.support();
            let xs = linspace(lo, hi, 4 * n);
            for t in [0.0, 0.1, 0.25, 0.5, 1.0, 2.0] {
                let b = evo.at(t)?;
                for &x in &xs {
                    s.push("lower", t, Some(x), b.lower.eval(x));
                    s.push("upper", t, Some(x), b.upper.eval(x));
                }
            }
        }
        FigureKind::Norate => {
            let xi = rate_function(&args.xi)?;
            let profile = asymptotics::build_rate_profile(&xi, RateMode::NoRate)?;
            let big = profile.extinction_time;
            let taus: Vec<f64> = linspace(0.0, 1.0, n)
                .into_iter()
                .map(|f| big * (1e-3f64).powf(f) * 0.999)
                .collect();
            let report = asymptotics::verify_no_rate(&xi, &taus, args.eps)?;
            for r in report.samples.iter().filter(|r| r.t >= 0.0) {
                s.push("error_lower", r.t, None, r.error_lower);
                s.push("error_upper", r.t, None, r.error_upper);
                s.push("bound", r.t, None, r.bound);
            }
            s.rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        }
        FigureKind::SfdeExample2 => {
            let data = example2_datum();
            let model = FrontModel::new(&data).expect("example datum has the front geometry");
            let end = model.merge_time().max(model.atom_extinction());
            for t in linspace(0.0, end, n) {
                let f = model.fronts(t.min(model.merge_time()));
                s.push("atom_mass", t, Some(model.atom), f.atom_mass.max(0.0));
                if t <= model.merge_time() {
                    s.push("z1", t, None, f.z1);
                    s.push("z2", t, None, f.z2);
                    s.push("z3", t, None, f.z3);
                }
            }
            let (lo, up) = data.primitive_bracket(args.eps)?;
            let mut evo = BracketEvolution::new(&lo, &up)?;
            for t in linspace(0.0, end, 11) {
                let (a, b) = sfde::jump_range(&evo.at(t)?, model.atom);
                s.push("atom_mass_lower", t, Some(model.atom), a);
                s.push("atom_mass_upper", t, Some(model.atom), b);
            }
        }
    }
    Ok(s.render())
}

fn run_figure(args: &FigureArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    write_output(args.out.as_deref(), &figure_csv(args)?, stdout)
}

fn random_step(rng: &mut ChaCha8Rng, nonnegative: bool) -> StepFunction {
    let n = rng.gen_range(1..=10);
    let mut edges = vec![rng.gen_range(-2.0..0.0)];
    for _ in 0..n {
        let last = *edges.last().unwrap();
        edges.push(last + rng.gen_range(0.1..1.0));
    }
    let heights: Vec<f64> = (0..n)
        .map(|_| if nonnegative { rng.gen_range(0.0..2.0) } else { rng.gen_range(-2.0..2.0) })
        .collect();
    StepFunction::from_cells(&edges, &heights).expect("sorted edges")
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    instances: usize,
    max_error: f64,
    tolerance: f64,
    pass: bool,
}

fn run_selftest(config: &RunConfig, args: &SelftestArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let seed = match std::env::var("TVFLOW_SEED") {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map_err(|_| CliError::Config(format!("TVFLOW_SEED must be an unsigned integer, got {s:?}")))?,
        Err(_) => 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = args.count as usize;
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let u0 = random_step(&mut rng, true);
        let traj = flow::evolve(&u0, f64::INFINITY)?;
        let predicted = flow::extinction_time(&u0)?;
        let got = traj.extinction().unwrap_or(0.0);
        worst = worst.max((got - predicted).abs());
    }
    checks.push(Check { name: "extinction_time", instances: count, max_error: worst, tolerance: 1e-10, pass: worst <= 1e-10 });

    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let u0 = random_step(&mut rng, false);
        let h = rng.gen_range(0.01..2.0);
        let fast = prox::tv_prox(&u0, h)?.uh;
        let slow = prox::brute_force_prox(&u0, h, OracleOptions::default())?.uh;
        worst = worst.max(fast.lp_distance(&slow, crate::stepfn::Norm::LInf)?);
    }
    checks.push(Check { name: "prox_oracle", instances: count, max_error: worst, tolerance: args.tol, pass: worst <= args.tol });

    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = rng.gen_range(1..=8);
        let mut x = 0.0;
        let atoms: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                x += rng.gen_range(0.1..1.0);
                (x, rng.gen_range(-2.0..2.0))
            })
            .collect();
        let v0 = DeltaMeasure::new(atoms)?;
        let t = rng.gen_range(0.0..1.0);
        let route = sfde::solve(&v0, t, SfdeMode::Cauchy)?;
        let direct = sfde::evolve_deltas(&v0, t, SfdeMode::Cauchy)?;
        worst = worst.max(route.max_weight_difference(&direct));
    }
    checks.push(Check { name: "sfde_commuting_square", instances: count, max_error: worst, tolerance: 1e-12, pass: worst <= 1e-12 });

    let all = checks.iter().all(|c| c.pass);
    let report = json!({ "header": header(config), "seed": seed, "checks": checks, "pass": all });
    write_output(args.out.as_deref(), &(to_json(&report) + "\n"), stdout)?;
    if all {
        Ok(())
    } else {
        Err(CliError::Domain { code: "cli.SelftestFailed".into(), message: "selftest found a failing check".into() })
    }
}
