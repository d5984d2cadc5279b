//! The knowledge-base graph: variable definitions (datum, inference,
//! constant), their ranges, and the procedure recipes that connect them.
//!
//! A knowledge base is immutable once validated and can be shared across
//! concurrent evaluations.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::density::{ArithOp, Density, Partition, Range, RangeKind};
use crate::scalar::Real;
use crate::timebase::Duration;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("duplicate range name `{0}`")]
    DuplicateRange(String),
    #[error("unknown range `{0}`")]
    UnknownRange(String),
    #[error("constant `{name}` density range differs from its declared range")]
    ConstantRangeMismatch { name: String },
}

/// How a variable gets its values.
#[derive(Debug, Clone, PartialEq)]
pub enum VariableBody<F> {
    /// Values reported from outside; a source node of the graph.
    Datum,
    /// A time-invariant stored density.
    Constant(Density<F>),
    /// Values derived by a procedure.
    Inference(Procedure<F>),
}

/// One node of the knowledge-base graph.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableDef<F> {
    pub name: String,
    pub range: Range<F>,
    pub body: VariableBody<F>,
}

impl<F> VariableDef<F> {
    pub fn kind_name(&self) -> &'static str {
        match self.body {
            VariableBody::Datum => "datum",
            VariableBody::Constant(_) => "constant",
            VariableBody::Inference(_) => "inference",
        }
    }

    pub fn is_datum(&self) -> bool {
        matches!(self.body, VariableBody::Datum)
    }

    pub fn procedure(&self) -> Option<&Procedure<F>> {
        match &self.body {
            VariableBody::Inference(p) => Some(p),
            _ => None,
        }
    }
}

/// A duration parameter: written literally, or naming a constant that pins
/// it (a delta density over a cardinal range with unit `s`, `m`, `h` or
/// `d`). Constant radii resolve once, at validation time semantics; fully
/// dynamic radii are not supported.
#[derive(Debug, Clone, PartialEq)]
pub enum DurationSpec {
    Literal(Duration),
    Constant(String),
}

impl fmt::Display for DurationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DurationSpec::Literal(d) => write!(f, "{d}"),
            DurationSpec::Constant(name) => write!(f, "{name}"),
        }
    }
}

/// Unit strings a duration-valued constant may carry.
pub fn duration_unit_seconds(unit: &str) -> Option<i64> {
    match unit {
        "s" => Some(1),
        "m" => Some(60),
        "h" => Some(3600),
        "d" => Some(86_400),
        _ => None,
    }
}

/// Evaluation recipe of an inference variable.
#[derive(Debug, Clone, PartialEq)]
pub enum Procedure<F> {
    /// Delegate to another variable's density.
    Ref(String),
    /// Arithmetic combination of two independent variables.
    Arith { op: ArithOp, left: String, right: String },
    /// Cardinal-to-label mapping through a partition.
    Threshold { source: String, partition: Partition<F> },
    /// Nearest observation of a datum within a radius, else a fallback.
    NearestObs { datum: String, radius: DurationSpec, fallback: String },
    /// Least-squares line through nearby observations, else a fallback.
    LinearFit { datum: String, n: usize, window: Duration, min_points: usize, fallback: String },
    /// Balance-equation extrapolation from an anchor datum:
    /// `base + rate * (inflow - outflow)` scaled by the elapsed time in
    /// units of `rate_unit`.
    CausalBalance {
        base: String,
        inflow: String,
        outflow: String,
        rate: F,
        rate_unit: Duration,
        fallback: String,
    },
    /// Ranked alternatives: the first branch whose criterion holds.
    RankedChain { branches: Vec<ChainBranch<F>> },
    /// Bayes product of conditionally independent sources.
    BayesFusion { sources: Vec<String> },
    /// Ordinal trend of a cardinal source over `t - epsilon .. t + epsilon`.
    Trend { source: String, epsilon: Duration, stable_band: F },
}

impl<F> Procedure<F> {
    pub fn variant_name(&self) -> &'static str {
        match self {
            Procedure::Ref(_) => "ref",
            Procedure::Arith { .. } => "arith",
            Procedure::Threshold { .. } => "threshold",
            Procedure::NearestObs { .. } => "nearest_obs",
            Procedure::LinearFit { .. } => "linear_fit",
            Procedure::CausalBalance { .. } => "causal_balance",
            Procedure::RankedChain { .. } => "chain",
            Procedure::BayesFusion { .. } => "fuse",
            Procedure::Trend { .. } => "trend",
        }
    }

    /// Every variable name this procedure reads, criteria included.
    pub fn references(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_references(&mut out);
        out
    }

    fn collect_references<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Procedure::Ref(name) => out.push(name),
            Procedure::Arith { left, right, .. } => {
                out.push(left);
                out.push(right);
            }
            Procedure::Threshold { source, .. } => out.push(source),
            Procedure::NearestObs { datum, radius, fallback } => {
                out.push(datum);
                if let DurationSpec::Constant(name) = radius {
                    out.push(name);
                }
                out.push(fallback);
            }
            Procedure::LinearFit { datum, fallback, .. } => {
                out.push(datum);
                out.push(fallback);
            }
            Procedure::CausalBalance { base, inflow, outflow, fallback, .. } => {
                out.push(base);
                out.push(inflow);
                out.push(outflow);
                out.push(fallback);
            }
            Procedure::RankedChain { branches } => {
                for b in branches {
                    b.procedure.collect_references(out);
                    b.criterion.collect_references(out);
                }
            }
            Procedure::BayesFusion { sources } => out.extend(sources.iter().map(String::as_str)),
            Procedure::Trend { source, .. } => out.push(source),
        }
    }
}

/// One ranked alternative of a [`Procedure::RankedChain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChainBranch<F> {
    pub procedure: Procedure<F>,
    pub criterion: ValidityCriterion,
}

/// A predicate over the observation store and the query time. Criteria are
/// decidable without evaluating any density, so branch selection can never
/// recurse into evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidityCriterion {
    Always,
    /// At least `min` observations of `datum` within `within` of the query.
    ObsWithin { datum: String, within: Duration, min: usize },
    /// At least one observation of `datum` at or before the query.
    ObsBefore { datum: String },
    /// Conjunction.
    All(Vec<ValidityCriterion>),
}

impl ValidityCriterion {
    fn collect_references<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ValidityCriterion::Always => {}
            ValidityCriterion::ObsWithin { datum, .. } => out.push(datum),
            ValidityCriterion::ObsBefore { datum } => out.push(datum),
            ValidityCriterion::All(cs) => {
                for c in cs {
                    c.collect_references(out);
                }
            }
        }
    }
}

impl fmt::Display for ValidityCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidityCriterion::Always => write!(f, "always"),
            ValidityCriterion::ObsWithin { datum, within, min } => {
                if *min == 1 {
                    write!(f, "obs({datum}, within={within})")
                } else {
                    write!(f, "obs({datum}, within={within}, min={min})")
                }
            }
            ValidityCriterion::ObsBefore { datum } => write!(f, "obs({datum}, before)"),
            ValidityCriterion::All(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " and ")?;
                    }
                    write!(f, "{c}")?;
                }
                Ok(())
            }
        }
    }
}

/// Severity of a validation diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// One defect (or lint) found by [`KnowledgeBase::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub variable: Option<String>,
    pub message: String,
}

impl Diagnostic {
    fn error(code: &'static str, variable: &str, message: String) -> Self {
        Diagnostic { severity: Severity::Error, code, variable: Some(variable.to_string()), message }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.variable {
            Some(v) => write!(f, "{sev}[{}] {v}: {}", self.code, self.message),
            None => write!(f, "{sev}[{}] {}", self.code, self.message),
        }
    }
}

/// The variable graph, with named ranges kept for serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase<F> {
    ranges: Vec<(String, Range<F>)>,
    variables: Vec<VariableDef<F>>,
    index: HashMap<String, usize>,
}

impl<F> Default for KnowledgeBase<F> {
    fn default() -> Self {
        KnowledgeBase { ranges: Vec::new(), variables: Vec::new(), index: HashMap::new() }
    }
}

impl<F: Real> KnowledgeBase<F> {
    pub fn builder() -> KnowledgeBaseBuilder<F> {
        KnowledgeBaseBuilder::default()
    }

    pub fn get(&self, name: &str) -> Option<&VariableDef<F>> {
        self.index.get(name).map(|&i| &self.variables[i])
    }

    pub fn variables(&self) -> impl Iterator<Item = &VariableDef<F>> {
        self.variables.iter()
    }

    pub fn ranges(&self) -> impl Iterator<Item = (&str, &Range<F>)> {
        self.ranges.iter().map(|(n, r)| (n.as_str(), r))
    }

    pub fn range_named(&self, name: &str) -> Option<&Range<F>> {
        self.ranges.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    /// Resolves a duration parameter. A constant must hold a single exact
    /// value over a cardinal range whose unit is a time unit.
    pub fn resolve_duration(&self, spec: &DurationSpec) -> Result<Duration, String> {
        match spec {
            DurationSpec::Literal(d) => Ok(*d),
            DurationSpec::Constant(name) => {
                let def =
                    self.get(name).ok_or_else(|| format!("undeclared variable `{name}`"))?;
                let VariableBody::Constant(d) = &def.body else {
                    return Err(format!("`{name}` is not a constant"));
                };
                if d.is_discrete() || d.atoms().len() != 1 || !d.pieces().is_empty() {
                    return Err(format!("`{name}` must hold a single exact value"));
                }
                let unit = def.range.unit();
                let secs_per = duration_unit_seconds(unit).ok_or_else(|| {
                    format!("`{name}` range unit `{unit}` is not a time unit (s, m, h or d)")
                })?;
                let value = d.atoms()[0].at.as_f64();
                if value < 0.0 {
                    return Err(format!("`{name}` holds a negative duration"));
                }
                Ok(Duration::seconds((value * secs_per as f64).round() as i64))
            }
        }
    }

    /// All variables `name` transitively reads.
    pub fn dependencies(&self, name: &str) -> Result<BTreeSet<String>, UnknownVariable> {
        self.closure(name, |v| self.direct_dependencies(v))
    }

    /// All variables that transitively read `name`; exactly the set whose
    /// cached densities a new observation of `name` invalidates.
    pub fn dependents(&self, name: &str) -> Result<BTreeSet<String>, UnknownVariable> {
        let reverse = self.reverse_edges();
        self.closure(name, |v| reverse.get(v).cloned().unwrap_or_default())
    }

    fn direct_dependencies(&self, name: &str) -> Vec<String> {
        self.get(name)
            .and_then(|v| v.procedure())
            .map(|p| p.references().into_iter().map(str::to_string).collect())
            .unwrap_or_default()
    }

    fn reverse_edges(&self) -> HashMap<String, Vec<String>> {
        let mut rev: HashMap<String, Vec<String>> = HashMap::new();
        for v in &self.variables {
            if let Some(p) = v.procedure() {
                for r in p.references() {
                    rev.entry(r.to_string()).or_default().push(v.name.clone());
                }
            }
        }
        rev
    }

    fn closure(
        &self,
        name: &str,
        neighbors: impl Fn(&str) -> Vec<String>,
    ) -> Result<BTreeSet<String>, UnknownVariable> {
        if self.get(name).is_none() {
            return Err(UnknownVariable(name.to_string()));
        }
        let mut seen = BTreeSet::new();
        let mut stack = neighbors(name);
        while let Some(n) = stack.pop() {
            if seen.insert(n.clone()) {
                stack.extend(neighbors(&n));
            }
        }
        seen.remove(name); // acyclic KBs never hit this; defensive for cyclic input
        Ok(seen)
    }

    /// Structural validation: reference closure, acyclicity and range
    /// consistency. An empty list means the KB is sound.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        for v in &self.variables {
            if let VariableBody::Constant(d) = &v.body {
                if d.range() != &v.range {
                    out.push(Diagnostic::error(
                        "const-range",
                        &v.name,
                        "constant density range differs from the declared range".into(),
                    ));
                }
            }
            if let Some(p) = v.procedure() {
                self.validate_procedure(&v.name, &v.range, p, &mut out);
            }
        }
        self.validate_acyclic(&mut out);
        // lint: declared ranges that no variable uses
        for (name, range) in &self.ranges {
            if !self.variables.iter().any(|v| &v.range == range) {
                out.push(Diagnostic {
                    severity: Severity::Warning,
                    code: "unused-range",
                    variable: None,
                    message: format!("range `{name}` is declared but never used"),
                });
            }
        }
        out
    }

    fn validate_procedure(
        &self,
        var: &str,
        out_range: &Range<F>,
        p: &Procedure<F>,
        out: &mut Vec<Diagnostic>,
    ) {
        let lookup = |name: &str, out: &mut Vec<Diagnostic>| -> Option<&VariableDef<F>> {
            let found = self.get(name);
            if found.is_none() {
                out.push(Diagnostic::error(
                    "unknown-ref",
                    var,
                    format!("references undeclared variable `{name}`"),
                ));
            }
            found
        };
        let expect_datum = |name: &str, role: &str, out: &mut Vec<Diagnostic>| {
            if let Some(d) = lookup(name, out) {
                if !d.is_datum() {
                    out.push(Diagnostic::error(
                        "datum-expected",
                        var,
                        format!("{role} `{name}` must be a datum, found {}", d.kind_name()),
                    ));
                }
            }
        };
        let expect_same_range = |name: &str, out: &mut Vec<Diagnostic>| {
            if let Some(d) = lookup(name, out) {
                if &d.range != out_range {
                    out.push(Diagnostic::error(
                        "range-mismatch",
                        var,
                        format!("`{name}` has a different range than `{var}`"),
                    ));
                }
            }
        };
        match p {
            Procedure::Ref(name) => expect_same_range(name, out),
            Procedure::Arith { left, right, .. } => {
                if !out_range.is_cardinal() {
                    out.push(Diagnostic::error(
                        "arith-range",
                        var,
                        "arithmetic needs a cardinal result range".into(),
                    ));
                }
                for name in [left, right] {
                    if let Some(d) = lookup(name, out) {
                        if !d.range.is_cardinal() {
                            out.push(Diagnostic::error(
                                "arith-range",
                                var,
                                format!("operand `{name}` must be cardinal"),
                            ));
                        }
                    }
                }
            }
            Procedure::Threshold { source, partition } => {
                if out_range.kind() == RangeKind::Cardinal {
                    out.push(Diagnostic::error(
                        "threshold-range",
                        var,
                        "threshold needs a categorical or ordinal result range".into(),
                    ));
                }
                for label in partition.labels() {
                    if out_range.label_index(label).is_none() {
                        out.push(Diagnostic::error(
                            "threshold-label",
                            var,
                            format!("partition label `{label}` is not in the result range"),
                        ));
                    }
                }
                if let Some(d) = lookup(source, out) {
                    match &d.range {
                        Range::Cardinal { lower, upper, .. } => {
                            let cells = partition.cells();
                            let tiles = cells.first().map(|c| c.1 == *lower).unwrap_or(false)
                                && cells.last().map(|c| c.2 == *upper).unwrap_or(false);
                            if !tiles {
                                out.push(Diagnostic::error(
                                    "threshold-coverage",
                                    var,
                                    format!("partition does not cover the range of `{source}`"),
                                ));
                            }
                        }
                        _ => out.push(Diagnostic::error(
                            "threshold-source",
                            var,
                            format!("threshold source `{source}` must be cardinal"),
                        )),
                    }
                }
            }
            Procedure::NearestObs { datum, radius, fallback } => {
                expect_datum(datum, "nearest_obs datum", out);
                if let Some(d) = self.get(datum) {
                    if &d.range != out_range {
                        out.push(Diagnostic::error(
                            "range-mismatch",
                            var,
                            format!("datum `{datum}` has a different range than `{var}`"),
                        ));
                    }
                }
                match self.resolve_duration(radius) {
                    Ok(d) if d.is_negative() => out.push(Diagnostic::error(
                        "bad-radius",
                        var,
                        "radius must be non-negative".into(),
                    )),
                    Ok(_) => {}
                    Err(msg) => out.push(Diagnostic::error("bad-radius", var, msg)),
                }
                expect_same_range(fallback, out);
            }
            Procedure::LinearFit { datum, n, window, min_points, fallback } => {
                expect_datum(datum, "linear_fit datum", out);
                if let Some(d) = self.get(datum) {
                    if &d.range != out_range {
                        out.push(Diagnostic::error(
                            "range-mismatch",
                            var,
                            format!("datum `{datum}` has a different range than `{var}`"),
                        ));
                    }
                    if !d.range.is_cardinal() {
                        out.push(Diagnostic::error(
                            "fit-source",
                            var,
                            format!("linear_fit datum `{datum}` must be cardinal"),
                        ));
                    }
                }
                if window.is_negative() {
                    out.push(Diagnostic::error("bad-radius", var, "window must be non-negative".into()));
                }
                if *min_points == 0 || n < min_points {
                    out.push(Diagnostic::error(
                        "fit-points",
                        var,
                        "need 1 <= min_points <= n".into(),
                    ));
                }
                expect_same_range(fallback, out);
            }
            Procedure::CausalBalance { base, inflow, outflow, rate_unit, fallback, .. } => {
                expect_datum(base, "causal_balance base", out);
                if let Some(d) = self.get(base) {
                    if &d.range != out_range {
                        out.push(Diagnostic::error(
                            "range-mismatch",
                            var,
                            format!("base `{base}` has a different range than `{var}`"),
                        ));
                    }
                }
                for name in [inflow, outflow] {
                    if let Some(d) = lookup(name, out) {
                        if !d.range.is_cardinal() {
                            out.push(Diagnostic::error(
                                "arith-range",
                                var,
                                format!("causal_balance input `{name}` must be cardinal"),
                            ));
                        }
                    }
                }
                if !rate_unit.is_positive() {
                    out.push(Diagnostic::error("bad-rate", var, "rate unit must be positive".into()));
                }
                expect_same_range(fallback, out);
            }
            Procedure::RankedChain { branches } => {
                if branches.is_empty() {
                    out.push(Diagnostic::error("empty-chain", var, "chain has no branches".into()));
                }
                for b in branches {
                    self.validate_procedure(var, out_range, &b.procedure, out);
                    self.validate_criterion(var, &b.criterion, out);
                }
                if let Some(last) = branches.last() {
                    if last.criterion != ValidityCriterion::Always {
                        out.push(Diagnostic {
                            severity: Severity::Warning,
                            code: "chain-no-terminal",
                            variable: Some(var.to_string()),
                            message: "last chain branch has a criterion; evaluation can fail with no branch applicable".into(),
                        });
                    }
                }
            }
            Procedure::BayesFusion { sources } => {
                if sources.len() < 2 {
                    out.push(Diagnostic::error(
                        "fuse-arity",
                        var,
                        "fuse needs at least two sources".into(),
                    ));
                }
                for s in sources {
                    expect_same_range(s, out);
                }
            }
            Procedure::Trend { source, epsilon, stable_band } => {
                let want = ["decreasing", "stable", "increasing"];
                if out_range.kind() != RangeKind::Ordinal
                    || out_range.labels() != want
                {
                    out.push(Diagnostic::error(
                        "trend-range",
                        var,
                        "trend result range must be ordinal {decreasing < stable < increasing}".into(),
                    ));
                }
                if let Some(d) = lookup(source, out) {
                    if !d.range.is_cardinal() {
                        out.push(Diagnostic::error(
                            "trend-source",
                            var,
                            format!("trend source `{source}` must be cardinal"),
                        ));
                    }
                }
                if !epsilon.is_positive() {
                    out.push(Diagnostic::error("bad-epsilon", var, "epsilon must be positive".into()));
                }
                if *stable_band < F::zero() {
                    out.push(Diagnostic::error("bad-band", var, "band must be non-negative".into()));
                }
            }
        }
    }

    fn validate_criterion(&self, var: &str, c: &ValidityCriterion, out: &mut Vec<Diagnostic>) {
        match c {
            ValidityCriterion::Always => {}
            ValidityCriterion::ObsWithin { datum, within, .. } => {
                if within.is_negative() {
                    out.push(Diagnostic::error("bad-radius", var, "criterion radius must be non-negative".into()));
                }
                self.criterion_datum(var, datum, out);
            }
            ValidityCriterion::ObsBefore { datum } => self.criterion_datum(var, datum, out),
            ValidityCriterion::All(cs) => {
                for c in cs {
                    self.validate_criterion(var, c, out);
                }
            }
        }
    }

    fn criterion_datum(&self, var: &str, datum: &str, out: &mut Vec<Diagnostic>) {
        match self.get(datum) {
            None => out.push(Diagnostic::error(
                "unknown-ref",
                var,
                format!("criterion references undeclared variable `{datum}`"),
            )),
            Some(d) if !d.is_datum() => out.push(Diagnostic::error(
                "datum-expected",
                var,
                format!("criterion watches `{datum}`, which is a {}", d.kind_name()),
            )),
            _ => {}
        }
    }

    fn validate_acyclic(&self, out: &mut Vec<Diagnostic>) {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let mut marks: HashMap<&str, Mark> =
            self.variables.iter().map(|v| (v.name.as_str(), Mark::White)).collect();

        fn visit<'a, F: Real>(
            kb: &'a KnowledgeBase<F>,
            name: &'a str,
            marks: &mut HashMap<&'a str, Mark>,
            path: &mut Vec<&'a str>,
            out: &mut Vec<Diagnostic>,
        ) {
            match marks.get(name) {
                Some(Mark::Black) | None => return,
                Some(Mark::Grey) => {
                    let start = path.iter().position(|n| *n == name).unwrap_or(0);
                    let mut cycle: Vec<&str> = path[start..].to_vec();
                    cycle.push(name);
                    out.push(Diagnostic::error(
                        "cycle",
                        name,
                        format!("dependency cycle: {}", cycle.join(" -> ")),
                    ));
                    return;
                }
                Some(Mark::White) => {}
            }
            marks.insert(name, Mark::Grey);
            path.push(name);
            if let Some(p) = kb.get(name).and_then(|v| v.procedure()) {
                for r in p.references() {
                    visit(kb, r, marks, path, out);
                }
            }
            path.pop();
            marks.insert(name, Mark::Black);
        }

        let names: Vec<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        let mut path = Vec::new();
        for name in names {
            visit(self, name, &mut marks, &mut path, out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unknown variable `{0}`")]
pub struct UnknownVariable(pub String);

/// Incremental constructor used by the parser and by programmatic callers.
#[derive(Debug, Clone)]
pub struct KnowledgeBaseBuilder<F> {
    kb: KnowledgeBase<F>,
}

impl<F> Default for KnowledgeBaseBuilder<F> {
    fn default() -> Self {
        KnowledgeBaseBuilder { kb: KnowledgeBase::default() }
    }
}

impl<F: Real> KnowledgeBaseBuilder<F> {
    pub fn range(&mut self, name: &str, range: Range<F>) -> Result<&mut Self, BuildError> {
        if self.kb.range_named(name).is_some() {
            return Err(BuildError::DuplicateRange(name.to_string()));
        }
        self.kb.ranges.push((name.to_string(), range));
        Ok(self)
    }

    pub fn datum(&mut self, name: &str, range_name: &str) -> Result<&mut Self, BuildError> {
        let range = self.named(range_name)?;
        self.push(VariableDef { name: name.to_string(), range, body: VariableBody::Datum })
    }

    pub fn constant(
        &mut self,
        name: &str,
        range_name: &str,
        density: Density<F>,
    ) -> Result<&mut Self, BuildError> {
        let range = self.named(range_name)?;
        if density.range() != &range {
            return Err(BuildError::ConstantRangeMismatch { name: name.to_string() });
        }
        self.push(VariableDef {
            name: name.to_string(),
            range,
            body: VariableBody::Constant(density),
        })
    }

    pub fn inference(
        &mut self,
        name: &str,
        range_name: &str,
        procedure: Procedure<F>,
    ) -> Result<&mut Self, BuildError> {
        let range = self.named(range_name)?;
        self.push(VariableDef {
            name: name.to_string(),
            range,
            body: VariableBody::Inference(procedure),
        })
    }

    pub fn build(self) -> KnowledgeBase<F> {
        self.kb
    }

    fn named(&self, range_name: &str) -> Result<Range<F>, BuildError> {
        self.kb
            .range_named(range_name)
            .cloned()
            .ok_or_else(|| BuildError::UnknownRange(range_name.to_string()))
    }

    fn push(&mut self, def: VariableDef<F>) -> Result<&mut Self, BuildError> {
        if self.kb.index.contains_key(&def.name) {
            return Err(BuildError::DuplicateName(def.name));
        }
        self.kb.index.insert(def.name.clone(), self.kb.variables.len());
        self.kb.variables.push(def);
        Ok(self)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// The weight KB: CurrentWeight falls back to EmpiricalWeightModel,
    /// which falls back to CausalWeightModel, which falls back to the
    /// UnknownWeight constant.
    pub(crate) fn weight_kb() -> KnowledgeBase<f64> {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("Weight", Range::cardinal(1.0, 300.0, "kg").unwrap()).unwrap();
        b.range("Fluid", Range::cardinal(0.0, 20.0, "L").unwrap()).unwrap();
        b.datum("ReportedWeight", "Weight").unwrap();
        b.datum("AdmissionWeight", "Weight").unwrap();
        b.datum("Intake", "Fluid").unwrap();
        b.datum("Output", "Fluid").unwrap();
        b.constant(
            "UnknownWeight",
            "Weight",
            Density::uniform(1.0, 300.0, &Range::cardinal(1.0, 300.0, "kg").unwrap()).unwrap(),
        )
        .unwrap();
        b.inference(
            "CausalWeightModel",
            "Weight",
            Procedure::CausalBalance {
                base: "AdmissionWeight".into(),
                inflow: "Intake".into(),
                outflow: "Output".into(),
                rate: 1.0,
                rate_unit: Duration::days(1),
                fallback: "UnknownWeight".into(),
            },
        )
        .unwrap();
        b.inference(
            "EmpiricalWeightModel",
            "Weight",
            Procedure::LinearFit {
                datum: "ReportedWeight".into(),
                n: 10,
                window: Duration::days(30),
                min_points: 3,
                fallback: "CausalWeightModel".into(),
            },
        )
        .unwrap();
        b.inference(
            "CurrentWeight",
            "Weight",
            Procedure::NearestObs {
                datum: "ReportedWeight".into(),
                radius: DurationSpec::Literal(Duration::hours(12)),
                fallback: "EmpiricalWeightModel".into(),
            },
        )
        .unwrap();
        b.build()
    }

    #[test]
    fn weight_kb_validates_clean() {
        let kb = weight_kb();
        let diags = kb.validate();
        assert!(diags.iter().all(|d| d.severity != Severity::Error), "{diags:?}");
    }

    #[test]
    fn dependents_of_reported_weight() {
        let kb = weight_kb();
        let deps = kb.dependents("ReportedWeight").unwrap();
        let expect: BTreeSet<String> =
            ["CurrentWeight", "EmpiricalWeightModel"].iter().map(|s| s.to_string()).collect();
        assert_eq!(deps, expect);
    }

    #[test]
    fn dependencies_terminate_at_sources() {
        let kb = weight_kb();
        assert!(kb.dependencies("UnknownWeight").unwrap().is_empty());
        assert!(kb.dependencies("ReportedWeight").unwrap().is_empty());
        let deps = kb.dependencies("CurrentWeight").unwrap();
        assert!(deps.contains("ReportedWeight"));
        assert!(deps.contains("UnknownWeight"));
        assert!(deps.contains("CausalWeightModel"));
        assert!(kb.dependencies("Nope").is_err());
    }

    #[test]
    fn closures_are_consistent() {
        let kb = weight_kb();
        for v in kb.variables() {
            let deps = kb.dependencies(&v.name).unwrap();
            assert!(!deps.contains(&v.name)); // acyclic
            for d in &deps {
                assert!(kb.dependents(d).unwrap().contains(&v.name));
            }
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("W", Range::cardinal(0.0, 1.0, "u").unwrap()).unwrap();
        b.inference(
            "A",
            "W",
            Procedure::Arith { op: ArithOp::Add, left: "A".into(), right: "B".into() },
        )
        .unwrap();
        b.datum("B", "W").unwrap();
        let kb = b.build();
        let diags = kb.validate();
        assert!(diags.iter().any(|d| d.code == "cycle"), "{diags:?}");
    }

    #[test]
    fn unknown_reference_is_reported() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("W", Range::cardinal(0.0, 1.0, "u").unwrap()).unwrap();
        b.inference("A", "W", Procedure::Ref("Missing".into())).unwrap();
        let kb = b.build();
        assert!(kb.validate().iter().any(|d| d.code == "unknown-ref"));
    }

    #[test]
    fn threshold_coverage_is_checked() {
        let mut b = KnowledgeBase::<f64>::builder();
        let serum = Range::cardinal(60.0, 140.0, "mg/dl").unwrap();
        b.range("Serum", serum.clone()).unwrap();
        b.range("Bands", Range::ordinal(["low", "high"]).unwrap()).unwrap();
        b.datum("S", "Serum").unwrap();
        // partition stops short of Serum's upper bound
        let part = Partition::new(vec![("low".into(), 60.0, 70.0), ("high".into(), 70.0, 130.0)])
            .unwrap();
        b.inference("B", "Bands", Procedure::Threshold { source: "S".into(), partition: part })
            .unwrap();
        let kb = b.build();
        assert!(kb.validate().iter().any(|d| d.code == "threshold-coverage"));
    }

    #[test]
    fn trend_range_must_have_three_labels() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("W", Range::cardinal(0.0, 1.0, "u").unwrap()).unwrap();
        b.range("T", Range::ordinal(["down", "up"]).unwrap()).unwrap();
        b.datum("X", "W").unwrap();
        b.inference(
            "Tr",
            "T",
            Procedure::Trend {
                source: "X".into(),
                epsilon: Duration::hours(12),
                stable_band: 0.5,
            },
        )
        .unwrap();
        let kb = b.build();
        assert!(kb.validate().iter().any(|d| d.code == "trend-range"));
    }

    #[test]
    fn constant_radii_resolve_and_misuse_is_flagged() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("W", Range::cardinal(1.0, 300.0, "kg").unwrap()).unwrap();
        b.range("Hours", Range::cardinal(0.0, 48.0, "h").unwrap()).unwrap();
        b.datum("D", "W").unwrap();
        b.constant("U", "W", Density::uniform(1.0, 300.0, &Range::cardinal(1.0, 300.0, "kg").unwrap()).unwrap())
            .unwrap();
        b.constant(
            "R",
            "Hours",
            Density::delta(14.0, &Range::cardinal(0.0, 48.0, "h").unwrap()).unwrap(),
        )
        .unwrap();
        b.inference(
            "X",
            "W",
            Procedure::NearestObs {
                datum: "D".into(),
                radius: DurationSpec::Constant("R".into()),
                fallback: "U".into(),
            },
        )
        .unwrap();
        let kb = b.build();
        assert!(kb.validate().iter().all(|d| d.severity != Severity::Error));
        assert_eq!(
            kb.resolve_duration(&DurationSpec::Constant("R".into())).unwrap(),
            Duration::hours(14)
        );
        assert!(kb.dependencies("X").unwrap().contains("R"));

        // a non-time unit is rejected
        assert!(kb.resolve_duration(&DurationSpec::Constant("U".into())).is_err());
        let mut b2 = KnowledgeBase::<f64>::builder();
        b2.range("W", Range::cardinal(1.0, 300.0, "kg").unwrap()).unwrap();
        b2.datum("D", "W").unwrap();
        b2.constant("U", "W", Density::uniform(1.0, 300.0, &Range::cardinal(1.0, 300.0, "kg").unwrap()).unwrap())
            .unwrap();
        b2.inference(
            "X",
            "W",
            Procedure::NearestObs {
                datum: "D".into(),
                radius: DurationSpec::Constant("U".into()),
                fallback: "U".into(),
            },
        )
        .unwrap();
        assert!(b2.build().validate().iter().any(|d| d.code == "bad-radius"));
    }

    #[test]
    fn builder_rejects_duplicates_and_unknown_ranges() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("W", Range::cardinal(0.0, 1.0, "u").unwrap()).unwrap();
        assert!(matches!(
            b.range("W", Range::cardinal(0.0, 2.0, "u").unwrap()),
            Err(BuildError::DuplicateRange(_))
        ));
        b.datum("A", "W").unwrap();
        assert!(matches!(b.datum("A", "W"), Err(BuildError::DuplicateName(_))));
        assert!(matches!(b.datum("B", "Nope"), Err(BuildError::UnknownRange(_))));
    }
}
