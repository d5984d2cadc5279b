//! Scripted sessions: interleaved `observe` and `eval` lines, so cache
//! invalidation is exercised without an interactive mode.
//!
//! ```text
//! observe ReportedWeight,2024-01-01T08:00:00Z,exact:70
//! eval CurrentWeight at 2024-01-01T10:00:00Z
//! eval Intake over 2024-01-01T00:00:00Z..2024-01-02T00:00:00Z
//! explain CurrentWeight at 2024-01-03T10:00:00Z
//! trend CurrentWeight at 2024-01-01T20:00:00Z epsilon=12h band=0.5
//! ```
//!
//! `observe` prints nothing, so transcripts are identical with and without
//! the cache.

use naive_core::engine::EvalContext;
use naive_core::timebase::{Duration, TimePoint, TimeSpec};

use crate::{io, output, Failure};

pub(crate) fn run(ctx: &mut EvalContext<f64>, script: &str) -> Result<u8, Failure> {
    for (idx, raw) in script.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        step(ctx, line).map_err(|f| Failure {
            code: f.code,
            message: format!("script line {line_no}: {}", f.message),
        })?;
    }
    Ok(0)
}

fn step(ctx: &mut EvalContext<f64>, line: &str) -> Result<(), Failure> {
    let (verb, rest) =
        line.split_once(char::is_whitespace).ok_or_else(|| Failure::usage("missing arguments"))?;
    let rest = rest.trim();
    match verb {
        "observe" => {
            let mut parts = rest.splitn(3, ',');
            let datum = parts.next().unwrap_or("").trim().to_string();
            let time = parts.next().ok_or_else(|| Failure::usage("observe needs datum,time,value"))?;
            let value = parts.next().ok_or_else(|| Failure::usage("observe needs datum,time,value"))?;
            let def = ctx
                .kb()
                .get(&datum)
                .ok_or_else(|| Failure::data(format!("unknown datum `{datum}`")))?;
            let density = io::decode_value(value.trim(), &def.range).map_err(Failure::data)?;
            let time = TimePoint::parse(time.trim()).map_err(|e| Failure::data(e.to_string()))?;
            ctx.report_observation(naive_core::engine::Observation { datum, time, density })
                .map_err(|e| Failure::data(format!("observation rejected: {e}")))?;
            Ok(())
        }
        "eval" | "explain" => {
            let (var, spec) = rest
                .split_once(char::is_whitespace)
                .ok_or_else(|| Failure::usage("eval needs `<var> at <time>` or `<var> over <a>..<b>`"))?;
            let spec = spec.trim();
            let t = if let Some(at) = spec.strip_prefix("at ") {
                TimeSpec::Instant(crate::parse_time(at.trim())?)
            } else if let Some(over) = spec.strip_prefix("over ") {
                TimeSpec::Interval(crate::parse_interval(over.trim())?)
            } else {
                return Err(Failure::usage("expected `at <time>` or `over <a>..<b>`"));
            };
            if verb == "explain" {
                let (d, trace) = ctx
                    .explain(var, &t)
                    .map_err(|e| Failure::data(format!("evaluation failed: {e}")))?;
                println!("{trace}");
                println!("{var} @ {t}: {}", output::summary_line(&d));
            } else {
                let d = ctx
                    .evaluate(var, &t)
                    .map_err(|e| Failure::data(format!("evaluation failed: {e}")))?;
                println!("{var} @ {t}: {}", output::summary_line(&d));
            }
            Ok(())
        }
        "trend" => {
            // trend <var> at <time> epsilon=<dur> band=<num>
            let mut words = rest.split_whitespace();
            let var = words.next().ok_or_else(|| Failure::usage("trend needs a variable"))?;
            if words.next() != Some("at") {
                return Err(Failure::usage("trend needs `at <time>`"));
            }
            let at = words.next().ok_or_else(|| Failure::usage("trend needs a time"))?;
            let mut epsilon = Duration::hours(12);
            let mut band = 0.0f64;
            for w in words {
                if let Some(e) = w.strip_prefix("epsilon=") {
                    epsilon = Duration::parse(e).map_err(|e| Failure::usage(e.to_string()))?;
                } else if let Some(b) = w.strip_prefix("band=") {
                    band = b.parse().map_err(|_| Failure::usage(format!("bad band `{b}`")))?;
                } else {
                    return Err(Failure::usage(format!("unknown trend argument `{w}`")));
                }
            }
            let t = crate::parse_time(at)?;
            let d = ctx
                .eval_trend(var, t, epsilon, band)
                .map_err(|e| Failure::data(format!("trend failed: {e}")))?;
            println!("{var} trend @ {t}: {}", output::pmf_line(&d));
            Ok(())
        }
        other => Err(Failure::usage(format!("unknown script verb `{other}`"))),
    }
}
