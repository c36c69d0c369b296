//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use subdiff_core::coefficients::{
    builtin, rate_for_regime, theoretical_rate, GrowthInputs, RateGuarantee, RateRegime, RateScheme, TaylorOrder,
    BUILTIN_NAMES,
};
use subdiff_core::convergence::run_convergence;
use subdiff_core::diagnostics::{
    classify_exp_moment, classify_negative_moment, exit_probability_bracket, probe_exp_moment, MomentQuery,
    MomentVerdict, ProbeHint, SubordinatorClock, TestFunction,
};
use subdiff_core::noise::Channel;
use subdiff_core::schemes::{simulate_solution, MilsteinCompensator};
use subdiff_core::{DiscretizedTimeChange, NoiseStream, SchemeConfig, SubordinatorSpec};

use crate::config::ExperimentFile;
use crate::dump::{write_path_csv, write_time_change};
use crate::error::CliError;
use crate::parallel::RayonExecutor;
use crate::report::{render, ReportFormat};

pub const SEED_ENV: &str = "SUBDIFF_SEED";

#[derive(Debug, Parser)]
#[command(name = "subdiff", version, about = "Simulate SDEs driven by an inverse subordinator clock")]
pub struct Cli {
    /// Master seed. Falls back to the config file, then SUBDIFF_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for path-parallel work; 0 picks automatically.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one path and print a per-step CSV.
    Simulate(SimulateArgs),
    /// Run a strong-error experiment from a JSON config.
    Convergence(ConvergenceArgs),
    /// Classify and probe moments of the inverse subordinator.
    Moments(MomentsArgs),
    /// Look up a convergence-rate guarantee.
    Rate(RateArgs),
    /// Monte Carlo check of the one-sided exit bracket.
    ExitBracket(ExitBracketArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Stable,
    TemperedStable,
    Gamma,
}

#[derive(Debug, Args)]
pub struct SubordinatorArgs {
    #[arg(long, value_enum, default_value_t = Family::Stable)]
    pub family: Family,
    /// Stability index; ignored for gamma.
    #[arg(long, default_value_t = 0.8)]
    pub beta: f64,
    /// Tempering rate for tempered-stable.
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
}

impl SubordinatorArgs {
    fn spec(&self) -> Result<SubordinatorSpec, CliError> {
        Ok(match self.family {
            Family::Stable => SubordinatorSpec::stable(self.beta)?,
            Family::TemperedStable => SubordinatorSpec::tempered_stable(self.beta, self.kappa)?,
            Family::Gamma => SubordinatorSpec::gamma(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Em,
    Milstein,
    ItoTaylor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CompensatorArg {
    InnerClockDelta,
    OuterClockTau,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in coefficient set.
    #[arg(long, default_value = "ex1")]
    pub sde: String,
    #[command(flatten)]
    pub subordinator: SubordinatorArgs,
    #[arg(long, value_enum, default_value_t = SchemeArg::Em)]
    pub scheme: SchemeArg,
    /// Itô–Taylor order (0.5, 1 or 1.5).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, default_value_t = CompensatorArg::InnerClockDelta)]
    pub compensator: CompensatorArg,
    #[arg(long, default_value_t = 1.0 / 1024.0)]
    pub delta: f64,
    #[arg(long = "T", alias = "horizon", default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub x0: f64,
    /// Which path of the seed to simulate.
    #[arg(long, default_value_t = 0)]
    pub path: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the time change in the binary replay format.
    #[arg(long)]
    pub dump_time_change: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FunctionArg {
    /// f(s) = s^p inside e^{f(E_t)}.
    ExpOfPower,
    /// f(s) = λ s inside e^{f(E_t)}.
    Power,
    /// f(s) = s^p inside 1/f(E_t).
    InversePower,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub subordinator: SubordinatorArgs,
    #[arg(long, value_enum, default_value_t = FunctionArg::ExpOfPower)]
    pub function: FunctionArg,
    /// Regular-variation index of f.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    /// Scale for the power test function.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Probe sample count; 0 skips the probe.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1.0 / 4096.0)]
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RateSchemeArg {
    Em,
    EmAdditive,
    Milstein,
    ItoTaylor,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long, value_enum)]
    pub scheme: RateSchemeArg,
    #[arg(long)]
    pub beta: f64,
    /// Growth index of h; omit for a constant bound.
    #[arg(long)]
    pub q: Option<f64>,
    /// Growth index of k; omit for a constant bound.
    #[arg(long)]
    pub qtilde: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    /// Itô–Taylor order.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Read q, q̃ and θ from a built-in coefficient set instead.
    #[arg(long, conflicts_with_all = ["q", "qtilde", "theta"])]
    pub sde: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExitBracketArgs {
    #[command(flatten)]
    pub subordinator: SubordinatorArgs,
    #[arg(long = "T", alias = "horizon", default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1.0 / 4096.0)]
    pub delta: f64,
}

/// Parses `args` and runs the command, writing results to `stdout`.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not a 64-bit unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn write_out(out: &Option<PathBuf>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Usage(format!("stdout: {e}"))),
    }
}

fn scheme_config(scheme: SchemeArg, gamma: Option<f64>, comp: CompensatorArg) -> Result<SchemeConfig, CliError> {
    Ok(match scheme {
        SchemeArg::Em => SchemeConfig::euler_maruyama(),
        SchemeArg::Milstein => SchemeConfig::milstein(match comp {
            CompensatorArg::InnerClockDelta => MilsteinCompensator::InnerClockDelta,
            CompensatorArg::OuterClockTau => MilsteinCompensator::OuterClockTau,
        }),
        SchemeArg::ItoTaylor => {
            let g = gamma.ok_or_else(|| CliError::Usage("--scheme ito-taylor needs --gamma".into()))?;
            SchemeConfig::ito_taylor(g).map_err(|e| CliError::Usage(e.to_string()))?
        }
    })
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a, stdout),
        Command::Convergence(a) => convergence(cli, a, stdout, stderr),
        Command::Moments(a) => moments(cli, a, stdout),
        Command::Rate(a) => rate(a, stdout),
        Command::ExitBracket(a) => exit_bracket(cli, a, stdout),
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let seed = resolve_seed(cli.seed, None)?;
    let set = builtin(&a.sde).map_err(|_| {
        CliError::Usage(format!("unknown --sde {:?}; built-ins are {}", a.sde, BUILTIN_NAMES.join(", ")))
    })?;
    let spec = a.subordinator.spec()?;
    let config = scheme_config(a.scheme, a.gamma, a.compensator)?;
    let mut sub = NoiseStream::on_channel(seed, a.path, Channel::Subordinator);
    let tc = DiscretizedTimeChange::simulate(&spec, a.delta, a.horizon, &mut sub)?;
    if let Some(p) = &a.dump_time_change {
        write_time_change(&tc, p)?;
    }
    let mut brownian = NoiseStream::on_channel(seed, a.path, Channel::Brownian);
    let solution = simulate_solution(&set, config, &tc, &mut brownian, a.x0)?;
    let mut buf = Vec::new();
    write_path_csv(&solution, &mut buf)?;
    write_out(&a.out, &String::from_utf8(buf).expect("csv is utf-8"), stdout)?;
    Ok(0)
}

fn convergence(cli: &Cli, a: &ConvergenceArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let file = ExperimentFile::load(&a.config)?;
    let seed = resolve_seed(cli.seed, file.seed)?;
    let config = file.to_config(seed)?;
    let executor = RayonExecutor::new(cli.threads)?;
    let report = run_convergence(&config, &executor)?;
    write_out(&a.out, &render(&report, a.format), stdout)?;
    match &report.fit {
        Ok(f) => {
            let _ = writeln!(
                stderr,
                "slope {:.4}, intercept {:.4}, r_squared {:.4}",
                f.slope, f.intercept, f.r_squared
            );
            Ok(0)
        }
        Err(e) => Err(CliError::Numeric(format!("order fit: {e}"))),
    }
}

fn verdict_name(v: MomentVerdict) -> &'static str {
    match v {
        MomentVerdict::Finite => "FINITE",
        MomentVerdict::Infinite => "INFINITE",
        MomentVerdict::Boundary => "BOUNDARY",
    }
}

#[derive(Debug, Serialize)]
struct QueryJson {
    subordinator: String,
    index: f64,
    t: f64,
    test_function: &'static str,
    p: f64,
    lambda: Option<f64>,
    n_samples: usize,
    delta: f64,
}

#[derive(Debug, Serialize)]
struct MomentsJson {
    query: QueryJson,
    classifier_verdict: &'static str,
    probe_hint: Option<&'static str>,
    running_means: Vec<(usize, f64)>,
    max_term_share: Option<f64>,
    bracket: Option<BracketJson>,
}

fn moments(cli: &Cli, a: &MomentsArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let seed = resolve_seed(cli.seed, None)?;
    let spec = a.subordinator.spec()?;
    if !(a.p > 0.0) || !(a.t > 0.0) {
        return Err(CliError::Usage("--p and --t must be positive".into()));
    }
    let (function, verdict) = match a.function {
        FunctionArg::ExpOfPower => (TestFunction::ExpOfPower(a.p), classify_exp_moment(spec.index(), a.p)),
        FunctionArg::Power => (TestFunction::Power(a.lambda), classify_exp_moment(spec.index(), 1.0)),
        FunctionArg::InversePower => (
            TestFunction::InversePower(a.p),
            // s^p ≤ s near zero once p ≥ 1.
            classify_negative_moment(a.p, spec.levy_tail(a.t)?, a.p >= 1.0),
        ),
    };
    let query = MomentQuery {
        spec: spec.clone(),
        t: a.t,
        test_function: function,
        n_samples: a.samples,
    };
    let probe = if a.samples > 0 && !matches!(function, TestFunction::InversePower(_)) {
        Some(probe_exp_moment(&query, a.delta, seed, &RayonExecutor::new(cli.threads)?)?)
    } else {
        None
    };
    let doc = MomentsJson {
        query: QueryJson {
            subordinator: format!("{:?}", spec.family()),
            index: spec.index(),
            t: a.t,
            test_function: match function {
                TestFunction::Power(_) => "power",
                TestFunction::ExpOfPower(_) => "exp_of_power",
                TestFunction::InversePower(_) => "inverse_power",
            },
            p: function.index(),
            lambda: matches!(function, TestFunction::Power(_)).then_some(a.lambda),
            n_samples: a.samples,
            delta: a.delta,
        },
        classifier_verdict: verdict_name(verdict),
        probe_hint: probe.as_ref().map(|p| match p.hint {
            ProbeHint::StableMean => "STABLE_MEAN",
            ProbeHint::DivergingMean => "DIVERGING_MEAN",
        }),
        running_means: probe.as_ref().map(|p| p.running_means.clone()).unwrap_or_default(),
        max_term_share: probe.as_ref().map(|p| p.max_term_share),
        bracket: None,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("serializes");
    text.push('\n');
    write_out(&None, &text, stdout)?;
    Ok(0)
}

fn regime_name(r: RateRegime) -> String {
    match r {
        RateRegime::EulerMaruyama => "em".into(),
        RateRegime::EulerMaruyamaAdditive => "em-additive".into(),
        RateRegime::Milstein => "milstein".into(),
        RateRegime::ItoTaylor(g) => format!("ito-taylor({})", g.value()),
    }
}

fn rate(a: &RateArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let order = || -> Result<TaylorOrder, CliError> {
        let g = a
            .gamma
            .ok_or_else(|| CliError::Usage("--scheme ito-taylor needs --gamma".into()))?;
        TaylorOrder::from_f64(g).map_err(|e| CliError::Usage(e.to_string()))
    };
    let guarantee: RateGuarantee = match &a.sde {
        Some(name) => {
            let set = builtin(name)?;
            let scheme = match a.scheme {
                RateSchemeArg::Em | RateSchemeArg::EmAdditive => RateScheme::EulerMaruyama,
                RateSchemeArg::Milstein => RateScheme::Milstein,
                RateSchemeArg::ItoTaylor => RateScheme::ItoTaylor(order()?),
            };
            theoretical_rate(&set, scheme, a.beta)?
        }
        None => {
            let regime = match a.scheme {
                RateSchemeArg::Em => RateRegime::EulerMaruyama,
                RateSchemeArg::EmAdditive => RateRegime::EulerMaruyamaAdditive,
                RateSchemeArg::Milstein => RateRegime::Milstein,
                RateSchemeArg::ItoTaylor => RateRegime::ItoTaylor(order()?),
            };
            let growth = GrowthInputs {
                q: a.q,
                q_tilde: a.qtilde,
                theta: a.theta,
            };
            rate_for_regime(regime, growth, a.beta).map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    let (lo, hi) = guarantee.required_range;
    let text = format!(
        "regime {}, order {}, valid range ({}, {}), {}\n",
        regime_name(guarantee.regime),
        guarantee.order,
        lo,
        hi,
        if guarantee.beta_valid { "VALID" } else { "INVALID" }
    );
    write_out(&None, &text, stdout)?;
    Ok(if guarantee.beta_valid { 0 } else { 2 })
}

#[derive(Debug, Serialize)]
struct BracketJson {
    lower: f64,
    lower_std_error: f64,
    estimate: f64,
    estimate_std_error: f64,
    upper: f64,
    upper_std_error: f64,
    excluded: usize,
    holds_within_3_se: bool,
}

#[derive(Debug, Serialize)]
struct ExitJson {
    subordinator: String,
    index: f64,
    horizon: f64,
    n_samples: usize,
    delta: f64,
    bracket: BracketJson,
}

fn exit_bracket(cli: &Cli, a: &ExitBracketArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let seed = resolve_seed(cli.seed, None)?;
    let spec = a.subordinator.spec()?;
    let clock = SubordinatorClock::new(spec.clone(), a.delta, seed);
    let b = exit_probability_bracket(&clock, a.horizon, a.samples, seed, &RayonExecutor::new(cli.threads)?)?;
    let doc = ExitJson {
        subordinator: format!("{:?}", spec.family()),
        index: spec.index(),
        horizon: a.horizon,
        n_samples: a.samples,
        delta: a.delta,
        bracket: BracketJson {
            lower: b.lower.mean,
            lower_std_error: b.lower.std_error,
            estimate: b.estimate.mean,
            estimate_std_error: b.estimate.std_error,
            upper: b.upper.mean,
            upper_std_error: b.upper.std_error,
            excluded: b.excluded,
            holds_within_3_se: b.holds(3.0),
        },
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("serializes");
    text.push('\n');
    write_out(&None, &text, stdout)?;
    Ok(0)
}
