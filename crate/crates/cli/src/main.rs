//! `naive`: load a knowledge base, ingest timestamped observations, run
//! queries, check consistency and export densities.
//!
//! Exit codes: 0 ok, 1 diagnostics or contradictions or evaluation errors,
//! 2 usage, 3 I/O.

mod io;
mod output;
mod session;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use naive_core::engine::{EngineConfig, EvalContext};
use naive_core::timebase::{Duration, TimeInterval, TimePoint, TimeSeriesSpec, TimeSpec};

#[derive(Parser)]
#[command(name = "naive", version, about = "Probabilistic temporal inference engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a knowledge base.
    Validate { kb: PathBuf },
    /// Evaluate a variable at an instant, over an interval or for a series.
    Eval {
        kb: PathBuf,
        /// CSV observation file with header `datum,time,value`.
        #[arg(long)]
        obs: Option<PathBuf>,
        /// Variable to evaluate.
        #[arg(long)]
        var: String,
        /// Instant, ISO-8601.
        #[arg(long)]
        at: Option<String>,
        /// Interval as `<start>..<end>`, ISO-8601.
        #[arg(long)]
        over: Option<String>,
        /// Comma-separated list of instants.
        #[arg(long)]
        series: Option<String>,
        /// Full export instead of the summary line.
        #[arg(long, value_enum)]
        out: Option<OutFormat>,
        /// Print the evaluation trace before the result.
        #[arg(long)]
        explain: bool,
        /// Disable the density cache (results must not change).
        #[arg(long)]
        no_cache: bool,
    },
    /// Compare reported observations of a datum against a paired model.
    Check {
        kb: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        /// `datum=model` pair to test.
        #[arg(long)]
        pair: String,
        /// Report a contradiction when the model assigns p <= threshold.
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
    },
    /// Three-label trend of a cardinal variable about an instant.
    Trend {
        kb: PathBuf,
        #[arg(long)]
        obs: Option<PathBuf>,
        #[arg(long)]
        var: String,
        #[arg(long)]
        at: String,
        /// Half-width of the comparison interval.
        #[arg(long, default_value = "12h")]
        epsilon: String,
        /// Differences within the band count as stable.
        #[arg(long, default_value_t = 0.0)]
        band: f64,
    },
    /// Run a script of interleaved `observe` and `eval` lines.
    Session {
        kb: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        no_cache: bool,
    },
}

/// Error carrying its process exit code.
pub(crate) struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("{}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.cmd {
        Cmd::Validate { kb } => {
            let (kb, diags) = io::parse_kb(&kb)?;
            let mut clean = true;
            for d in &diags {
                eprintln!("{d}");
                clean &= d.severity != naive_core::kb::Severity::Error;
            }
            for d in kb.validate() {
                eprintln!("{d}");
                clean &= d.severity != naive_core::kb::Severity::Error;
            }
            Ok(if clean { 0 } else { 1 })
        }
        Cmd::Eval { kb, obs, var, at, over, series, out, explain, no_cache } => {
            let mut ctx = load_context(&kb, obs.as_deref(), no_cache)?;
            cmd_eval(&mut ctx, &var, at, over, series, out, explain)
        }
        Cmd::Check { kb, obs, pair, threshold } => {
            let (datum, model) = pair
                .split_once('=')
                .ok_or_else(|| Failure::usage("--pair expects <datum>=<model>"))?;
            let mut config = EngineConfig::<f64>::default();
            config.grid = io::grid_from_env()?;
            config.contradiction_threshold = threshold;
            let ctx = load_context_with(&kb, Some(&obs), config)?;
            cmd_check(&ctx, datum, model)
        }
        Cmd::Trend { kb, obs, var, at, epsilon, band } => {
            let ctx = load_context(&kb, obs.as_deref(), false)?;
            let t = parse_time(&at)?;
            let eps = Duration::parse(&epsilon)
                .map_err(|e| Failure::usage(format!("--epsilon: {e}")))?;
            let d = ctx
                .eval_trend(&var, t, eps, band)
                .map_err(|e| Failure::data(format!("trend failed: {e}")))?;
            println!("{}", output::pmf_line(&d));
            Ok(0)
        }
        Cmd::Session { kb, script, no_cache } => {
            let mut ctx = load_context(&kb, None, no_cache)?;
            let text = std::fs::read_to_string(&script)
                .map_err(|e| Failure::io(format!("cannot read {}: {e}", script.display())))?;
            session::run(&mut ctx, &text)
        }
    }
}

fn load_context(
    kb_path: &std::path::Path,
    obs_path: Option<&std::path::Path>,
    no_cache: bool,
) -> Result<EvalContext<f64>, Failure> {
    let mut config = EngineConfig::<f64>::default();
    config.grid = io::grid_from_env()?;
    config.cache_enabled = !no_cache;
    load_context_with(kb_path, obs_path, config)
}

fn load_context_with(
    kb_path: &std::path::Path,
    obs_path: Option<&std::path::Path>,
    config: EngineConfig<f64>,
) -> Result<EvalContext<f64>, Failure> {
    let kb = io::load_kb(kb_path)?;
    let mut ctx = EvalContext::with_config(kb, config);
    if let Some(path) = obs_path {
        let observations = io::load_observations(path, ctx.kb())?;
        for obs in observations {
            ctx.report_observation(obs)
                .map_err(|e| Failure::data(format!("observation rejected: {e}")))?;
        }
    }
    Ok(ctx)
}

fn cmd_eval(
    ctx: &mut EvalContext<f64>,
    var: &str,
    at: Option<String>,
    over: Option<String>,
    series: Option<String>,
    out: Option<OutFormat>,
    explain: bool,
) -> Result<u8, Failure> {
    let picked = [at.is_some(), over.is_some(), series.is_some()];
    if picked.iter().filter(|p| **p).count() != 1 {
        return Err(Failure::usage("pass exactly one of --at, --over or --series"));
    }
    if let Some(points) = series {
        let series = parse_series(&points)?;
        let ds = ctx
            .evaluate_series(var, &series)
            .map_err(|e| Failure::data(format!("evaluation failed: {e}")))?;
        let resolution = ctx.config().grid.resolution;
        for (point, d) in series.points().iter().zip(&ds) {
            output::print_density(d, out.map(Into::into), Some(&point.to_string()), resolution);
        }
        return Ok(0);
    }
    let t = if let Some(at) = at {
        TimeSpec::Instant(parse_time(&at)?)
    } else {
        TimeSpec::Interval(parse_interval(&over.unwrap())?)
    };
    let d = if explain {
        let (d, trace) =
            ctx.explain(var, &t).map_err(|e| Failure::data(format!("evaluation failed: {e}")))?;
        println!("{trace}");
        d
    } else {
        ctx.evaluate(var, &t).map_err(|e| Failure::data(format!("evaluation failed: {e}")))?
    };
    output::print_density(&d, out.map(Into::into), None, ctx.config().grid.resolution);
    Ok(0)
}

fn cmd_check(ctx: &EvalContext<f64>, datum: &str, model: &str) -> Result<u8, Failure> {
    let observations: Vec<_> = ctx.observations(datum).to_vec();
    if ctx.kb().get(datum).is_none() {
        return Err(Failure::data(format!("unknown datum `{datum}`")));
    }
    let mut found = 0usize;
    for obs in &observations {
        let verdict = ctx
            .check_consistency(obs, model)
            .map_err(|e| Failure::data(format!("consistency check failed: {e}")))?;
        if let Some(c) = verdict {
            println!("CONTRADICTION datum={} time={} p={:.9}", c.datum, c.time, c.probability);
            found += 1;
        }
    }
    if found == 0 {
        println!("consistent: no contradictions");
        Ok(0)
    } else {
        Ok(1)
    }
}

pub(crate) fn parse_time(s: &str) -> Result<TimePoint, Failure> {
    TimePoint::parse(s).map_err(|e| Failure::usage(e.to_string()))
}

pub(crate) fn parse_interval(s: &str) -> Result<TimeInterval, Failure> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| Failure::usage("interval must be <start>..<end>"))?;
    TimeInterval::new(parse_time(a)?, parse_time(b)?).map_err(|e| Failure::usage(e.to_string()))
}

fn parse_series(s: &str) -> Result<TimeSeriesSpec, Failure> {
    let points: Result<Vec<TimePoint>, Failure> = s.split(',').map(parse_time).collect();
    TimeSeriesSpec::new(points?).map_err(|e| Failure::usage(e.to_string()))
}

impl From<OutFormat> for output::Format {
    fn from(f: OutFormat) -> output::Format {
        match f {
            OutFormat::Csv => output::Format::Csv,
            OutFormat::Json => output::Format::Json,
        }
    }
}
