//! Canonical `.nkb` rendering. Serializing is a fixpoint: parsing the output
//! and serializing again reproduces the same bytes.

use std::fmt::Write;

use crate::density::{Density, Partition, Range};
use crate::kb::{KnowledgeBase, Procedure, ValidityCriterion, VariableBody};
use crate::scalar::Real;
use crate::timebase::Duration;

/// Renders a knowledge base as canonical `.nkb` text. Ranges not present in
/// the registry (possible for programmatically built KBs) get synthetic
/// names.
pub fn serialize<F: Real>(kb: &KnowledgeBase<F>) -> String {
    let mut named: Vec<(String, Range<F>)> =
        kb.ranges().map(|(n, r)| (n.to_string(), r.clone())).collect();
    for v in kb.variables() {
        if !named.iter().any(|(_, r)| r == &v.range) {
            let mut i = named.len() + 1;
            let name = loop {
                let candidate = format!("Range{i}");
                if !named.iter().any(|(n, _)| *n == candidate) {
                    break candidate;
                }
                i += 1;
            };
            named.push((name, v.range.clone()));
        }
    }
    let name_of = |range: &Range<F>| -> &str {
        named.iter().find(|(_, r)| r == range).map(|(n, _)| n.as_str()).unwrap_or("?")
    };

    let mut out = String::new();
    for (name, range) in &named {
        let _ = writeln!(out, "range {name} = {}", range_expr(range));
    }
    if !named.is_empty() && kb.variables().next().is_some() {
        out.push('\n');
    }
    for v in kb.variables() {
        let rname = name_of(&v.range);
        match &v.body {
            VariableBody::Datum => {
                let _ = writeln!(out, "datum {} : {rname}", v.name);
            }
            VariableBody::Constant(d) => {
                let _ = writeln!(out, "const {} : {rname} = {}", v.name, density_expr(d));
            }
            VariableBody::Inference(p) => {
                let _ = writeln!(out, "infer {} : {rname} = {}", v.name, proc_expr(p));
            }
        }
    }
    out
}

fn range_expr<F: Real>(range: &Range<F>) -> String {
    match range {
        Range::Cardinal { lower, upper, unit } => {
            format!("cardinal {lower}..{upper} unit \"{unit}\"")
        }
        Range::Ordinal { labels } => format!("ordinal {{{}}}", labels.join(" < ")),
        Range::Categorical { labels } => format!("categorical {{{}}}", labels.join(", ")),
    }
}

fn density_expr<F: Real>(d: &Density<F>) -> String {
    if d.is_discrete() {
        let body: Vec<String> =
            d.pmf_pairs().iter().map(|(label, p)| format!("{label}: {p}")).collect();
        return format!("pmf{{{}}}", body.join(", "));
    }
    let atoms = d.atoms();
    let pieces = d.pieces();
    if atoms.len() == 1 && pieces.is_empty() {
        return format!("delta({})", atoms[0].at);
    }
    if atoms.is_empty() && pieces.len() == 1 {
        return format!("uniform({}, {})", pieces[0].lo, pieces[0].hi);
    }
    let mut parts: Vec<String> = pieces
        .iter()
        .map(|c| format!("uniform({}, {}): {}", c.lo, c.hi, c.mass()))
        .collect();
    parts.extend(atoms.iter().map(|a| format!("delta({}): {}", a.at, a.mass)));
    format!("mix{{{}}}", parts.join(", "))
}

fn rate_expr<F: Real>(rate: F, unit: Duration) -> String {
    let bare = match unit.as_seconds() {
        1 => Some("s"),
        60 => Some("m"),
        3600 => Some("h"),
        86_400 => Some("d"),
        _ => None,
    };
    match bare {
        Some(u) => format!("{rate}/{u}"),
        None => format!("{rate}/{unit}"),
    }
}

fn partition_expr<F: Real>(p: &Partition<F>) -> String {
    let cells = p.cells();
    let body: Vec<String> = cells
        .iter()
        .enumerate()
        .map(|(i, (label, lo, hi))| {
            let close = if i + 1 == cells.len() { "]" } else { ")" };
            format!("{label}: [{lo}, {hi}{close}")
        })
        .collect();
    format!("{{{}}}", body.join(", "))
}

fn proc_expr<F: Real>(p: &Procedure<F>) -> String {
    match p {
        Procedure::Ref(name) => name.clone(),
        Procedure::Arith { op, left, right } => format!("{}({left}, {right})", op.name()),
        Procedure::Threshold { source, partition } => {
            format!("threshold({source}) {}", partition_expr(partition))
        }
        Procedure::NearestObs { datum, radius, fallback } => {
            format!("nearest_obs({datum}, radius={radius}, else={fallback})")
        }
        Procedure::LinearFit { datum, n, window, min_points, fallback } => {
            format!("linear_fit({datum}, n={n}, window={window}, min_points={min_points}, else={fallback})")
        }
        Procedure::CausalBalance { base, inflow, outflow, rate, rate_unit, fallback } => {
            format!(
                "causal_balance(base={base}, in={inflow}, out={outflow}, rate={}, else={fallback})",
                rate_expr(*rate, *rate_unit)
            )
        }
        Procedure::RankedChain { branches } => {
            let body: Vec<String> = branches
                .iter()
                .map(|b| {
                    if b.criterion == ValidityCriterion::Always {
                        proc_expr(&b.procedure)
                    } else {
                        format!("({} if {})", proc_expr(&b.procedure), b.criterion)
                    }
                })
                .collect();
            format!("chain[{}]", body.join(", "))
        }
        Procedure::BayesFusion { sources } => format!("fuse({})", sources.join(", ")),
        Procedure::Trend { source, epsilon, stable_band } => {
            format!("trend({source}, epsilon={epsilon}, band={stable_band})")
        }
    }
}
