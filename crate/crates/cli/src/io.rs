//! File loading: knowledge bases and CSV observation files.

use std::path::Path;

use naive_core::density::{Density, GridPolicy, Range};
use naive_core::dsl::{parse_named, ParseDiagnostic};
use naive_core::engine::Observation;
use naive_core::kb::{KnowledgeBase, Severity};
use naive_core::timebase::TimePoint;

use crate::Failure;

pub(crate) fn parse_kb(
    path: &Path,
) -> Result<(KnowledgeBase<f64>, Vec<ParseDiagnostic>), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_named(&text, &path.display().to_string()))
}

/// Loads a knowledge base, insisting on a clean parse and validation.
pub(crate) fn load_kb(path: &Path) -> Result<KnowledgeBase<f64>, Failure> {
    let (kb, diags) = parse_kb(path)?;
    let mut messages = Vec::new();
    for d in &diags {
        if d.severity == Severity::Error {
            messages.push(d.to_string());
        }
    }
    if messages.is_empty() {
        for d in kb.validate() {
            if d.severity == Severity::Error {
                messages.push(d.to_string());
            }
        }
    }
    if messages.is_empty() {
        Ok(kb)
    } else {
        Err(Failure::data(messages.join("\n")))
    }
}

/// Grid resolution, overridable through `NAIVE_GRID`.
pub(crate) fn grid_from_env() -> Result<GridPolicy<f64>, Failure> {
    match std::env::var("NAIVE_GRID") {
        Err(_) => Ok(GridPolicy::default()),
        Ok(v) => {
            let n: usize = v
                .parse()
                .map_err(|_| Failure::usage(format!("NAIVE_GRID must be a cell count, got `{v}`")))?;
            Ok(GridPolicy::new(n))
        }
    }
}

/// Reads a `datum,time,value` CSV. Value forms: `exact:<x>`,
/// `range:<lo>,<hi>`, `pmf:{label:w,...}`. All malformed rows are reported
/// with their line numbers before giving up.
pub(crate) fn load_observations(
    path: &Path,
    kb: &KnowledgeBase<f64>,
) -> Result<Vec<Observation<f64>>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "datum,time,value" => {}
        Some((_, header)) => {
            return Err(Failure::data(format!(
                "{}: header must be `datum,time,value`, got `{header}`",
                path.display()
            )))
        }
        None => return Ok(Vec::new()),
    }
    let mut observations = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match decode_row(line, kb) {
            Ok(obs) => observations.push(obs),
            Err(msg) => errors.push(format!("{}:{line_no}: {msg}", path.display())),
        }
    }
    if errors.is_empty() {
        Ok(observations)
    } else {
        Err(Failure::data(errors.join("\n")))
    }
}

fn decode_row(line: &str, kb: &KnowledgeBase<f64>) -> Result<Observation<f64>, String> {
    let mut parts = line.splitn(3, ',');
    let datum = parts.next().unwrap_or("").trim();
    let time = parts.next().ok_or("missing time column")?.trim();
    let value = parts.next().ok_or("missing value column")?.trim();

    let def = kb.get(datum).ok_or_else(|| format!("unknown datum `{datum}`"))?;
    if !def.is_datum() {
        return Err(format!("`{datum}` is a {}, not a datum", def.kind_name()));
    }
    let time = TimePoint::parse(time).map_err(|e| e.to_string())?;
    let density = decode_value(value, &def.range)?;
    Ok(Observation { datum: datum.to_string(), time, density })
}

pub(crate) fn decode_value(value: &str, range: &Range<f64>) -> Result<Density<f64>, String> {
    if let Some(x) = value.strip_prefix("exact:") {
        let x: f64 = x.trim().parse().map_err(|_| format!("bad number `{x}`"))?;
        return Density::delta(x, range).map_err(|e| e.to_string());
    }
    if let Some(pair) = value.strip_prefix("range:") {
        let (lo, hi) =
            pair.split_once(',').ok_or_else(|| format!("range needs `<lo>,<hi>`, got `{pair}`"))?;
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad number `{lo}`"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad number `{hi}`"))?;
        return Density::uniform(lo, hi, range).map_err(|e| e.to_string());
    }
    if let Some(body) = value.strip_prefix("pmf:") {
        let body = body
            .trim()
            .strip_prefix('{')
            .and_then(|b| b.strip_suffix('}'))
            .ok_or("pmf needs `{label:weight,...}`")?;
        let mut weights = Vec::new();
        for entry in body.split(',') {
            let (label, w) =
                entry.split_once(':').ok_or_else(|| format!("bad pmf entry `{entry}`"))?;
            let w: f64 = w.trim().parse().map_err(|_| format!("bad weight `{w}`"))?;
            weights.push((label.trim().to_string(), w));
        }
        return Density::pmf(&weights, range).map_err(|e| e.to_string());
    }
    Err(format!("unknown value form `{value}` (use exact:, range: or pmf:)"))
}
