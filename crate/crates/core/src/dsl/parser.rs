//! Recursive-descent parser with statement-level recovery: a broken item is
//! reported and skipped, so one pass collects every syntax error.

use std::collections::HashMap;

use super::lexer::{lex, Tok, Token};
use super::{ParseDiagnostic, SourceSpan};
use crate::density::{ArithOp, Density, Partition, Range};
use crate::kb::{
    BuildError, ChainBranch, DurationSpec, KnowledgeBase, Procedure, Severity, ValidityCriterion,
};
use crate::scalar::Real;
use crate::timebase::Duration;

/// Parses `.nkb` text. Returns the knowledge base built from the items that
/// parsed cleanly plus all diagnostics; callers treat any error-severity
/// diagnostic as a failed parse. Semantic checks live in
/// [`KnowledgeBase::validate`].
pub fn parse<F: Real>(text: &str) -> (KnowledgeBase<F>, Vec<ParseDiagnostic>) {
    parse_named(text, "<input>")
}

/// [`parse`] with a file name for the diagnostic spans.
pub fn parse_named<F: Real>(text: &str, file: &str) -> (KnowledgeBase<F>, Vec<ParseDiagnostic>) {
    let (tokens, mut diags) = lex(text, file);
    let mut parser = Parser { tokens, pos: 0, diags: Vec::new(), file: file.to_string() };
    let items = parser.file();
    diags.extend(parser.diags);
    let kb = build(items, &mut diags);
    (kb, diags)
}

enum DensityExpr<F> {
    Uniform(F, F),
    Delta(F),
    Pmf(Vec<(String, F)>),
    Mix(Vec<(Component<F>, F)>),
}

enum Component<F> {
    Uniform(F, F),
    Delta(F),
}

enum Item<F> {
    Range(String, Range<F>, SourceSpan),
    Datum(String, String, SourceSpan),
    Const(String, String, DensityExpr<F>, SourceSpan),
    Infer(String, String, Procedure<F>, SourceSpan),
}

fn build<F: Real>(items: Vec<Item<F>>, diags: &mut Vec<ParseDiagnostic>) -> KnowledgeBase<F> {
    let mut builder = KnowledgeBase::builder();
    let mut ranges: HashMap<String, Range<F>> = HashMap::new();
    let err = |e: BuildError, span: &SourceSpan, diags: &mut Vec<ParseDiagnostic>| {
        let code = match e {
            BuildError::DuplicateName(_) => "duplicate-name",
            BuildError::DuplicateRange(_) => "duplicate-range",
            BuildError::UnknownRange(_) => "unknown-range",
            BuildError::ConstantRangeMismatch { .. } => "const-range",
        };
        diags.push(ParseDiagnostic {
            severity: Severity::Error,
            code,
            message: e.to_string(),
            span: span.clone(),
        });
    };
    // ranges first so declaration order of items is otherwise free
    for item in &items {
        if let Item::Range(name, range, span) = item {
            match builder.range(name, range.clone()) {
                Ok(_) => {
                    ranges.insert(name.clone(), range.clone());
                }
                Err(e) => err(e, span, diags),
            }
        }
    }
    for item in &items {
        match item {
            Item::Range(..) => {}
            Item::Datum(name, range_name, span) => {
                if let Err(e) = builder.datum(name, range_name) {
                    err(e, span, diags);
                }
            }
            Item::Infer(name, range_name, proc, span) => {
                if let Err(e) = builder.inference(name, range_name, proc.clone()) {
                    err(e, span, diags);
                }
            }
            Item::Const(name, range_name, expr, span) => {
                let Some(range) = ranges.get(range_name) else {
                    err(BuildError::UnknownRange(range_name.clone()), span, diags);
                    continue;
                };
                match make_density(expr, range) {
                    Ok(d) => {
                        if let Err(e) = builder.constant(name, range_name, d) {
                            err(e, span, diags);
                        }
                    }
                    Err((code, msg)) => diags.push(ParseDiagnostic {
                        severity: Severity::Error,
                        code,
                        message: msg,
                        span: span.clone(),
                    }),
                }
            }
        }
    }
    builder.build()
}

fn make_density<F: Real>(
    expr: &DensityExpr<F>,
    range: &Range<F>,
) -> Result<Density<F>, (&'static str, String)> {
    use crate::density::{Atom, Cell};
    match expr {
        DensityExpr::Uniform(lo, hi) => {
            Density::uniform(*lo, *hi, range).map_err(|e| ("bad-const", e.to_string()))
        }
        DensityExpr::Delta(x) => {
            Density::delta(*x, range).map_err(|e| ("bad-const", e.to_string()))
        }
        DensityExpr::Pmf(weights) => Density::pmf(weights, range).map_err(|e| {
            let code = match e {
                crate::density::DensityError::UnknownLabel(_) => "unknown-label",
                _ => "bad-const",
            };
            (code, e.to_string())
        }),
        DensityExpr::Mix(components) => {
            let mut atoms = Vec::new();
            let mut cells = Vec::new();
            for (c, w) in components {
                match c {
                    Component::Delta(x) => atoms.push(Atom { at: *x, mass: *w }),
                    Component::Uniform(lo, hi) => {
                        if *hi <= *lo {
                            return Err(("bad-const", format!("empty interval {lo}..{hi}")));
                        }
                        cells.push(Cell { lo: *lo, hi: *hi, height: *w / (*hi - *lo) });
                    }
                }
            }
            Density::from_parts(range, atoms, cells).map_err(|e| ("bad-const", e.to_string()))
        }
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    diags: Vec<ParseDiagnostic>,
    file: String,
}

type PResult<T> = Result<T, ()>;

impl Parser {
    fn file<F: Real>(&mut self) -> Vec<Item<F>> {
        let mut items = Vec::new();
        while self.pos < self.tokens.len() {
            let before = self.pos;
            match self.item() {
                Ok(item) => items.push(item),
                Err(()) => self.recover(before),
            }
        }
        items
    }

    // skip to the next top-level keyword so later items still parse
    fn recover(&mut self, before: usize) {
        if self.pos == before {
            self.pos += 1;
        }
        while let Some(t) = self.tokens.get(self.pos) {
            if let Tok::Ident(w) = &t.tok {
                if matches!(w.as_str(), "range" | "datum" | "const" | "infer") {
                    return;
                }
            }
            self.pos += 1;
        }
    }

    fn item<F: Real>(&mut self) -> PResult<Item<F>> {
        let (word, span) = self.ident("a declaration (range, datum, const or infer)")?;
        match word.as_str() {
            "range" => {
                let (name, _) = self.ident("a range name")?;
                self.expect(&Tok::Equals)?;
                let range = self.range_expr()?;
                Ok(Item::Range(name, range, span))
            }
            "datum" => {
                let (name, _) = self.ident("a variable name")?;
                self.expect(&Tok::Colon)?;
                let (rname, _) = self.ident("a range name")?;
                Ok(Item::Datum(name, rname, span))
            }
            "const" => {
                let (name, _) = self.ident("a variable name")?;
                self.expect(&Tok::Colon)?;
                let (rname, _) = self.ident("a range name")?;
                self.expect(&Tok::Equals)?;
                let expr = self.density_expr()?;
                Ok(Item::Const(name, rname, expr, span))
            }
            "infer" => {
                let (name, _) = self.ident("a variable name")?;
                self.expect(&Tok::Colon)?;
                let (rname, _) = self.ident("a range name")?;
                self.expect(&Tok::Equals)?;
                let proc = self.proc_expr()?;
                Ok(Item::Infer(name, rname, proc, span))
            }
            other => {
                self.error_at(
                    &span,
                    "syntax",
                    format!("expected a declaration keyword, found `{other}`"),
                );
                Err(())
            }
        }
    }

    fn range_expr<F: Real>(&mut self) -> PResult<Range<F>> {
        let (kind, span) = self.ident("a range kind (cardinal, ordinal or categorical)")?;
        let built = match kind.as_str() {
            "cardinal" => {
                let lo = self.number()?;
                self.expect(&Tok::DotDot)?;
                let hi = self.number()?;
                let (unit_kw, _) = self.ident("`unit`")?;
                if unit_kw != "unit" {
                    self.error_here("syntax", format!("expected `unit`, found `{unit_kw}`"));
                    return Err(());
                }
                let unit = self.string()?;
                Range::cardinal(F::of(lo), F::of(hi), &unit)
            }
            "ordinal" => {
                self.expect(&Tok::LBrace)?;
                let mut labels = vec![self.ident("a label")?.0];
                while self.eat(&Tok::Lt) {
                    labels.push(self.ident("a label")?.0);
                }
                self.expect(&Tok::RBrace)?;
                Range::ordinal(labels)
            }
            "categorical" => {
                self.expect(&Tok::LBrace)?;
                let mut labels = vec![self.ident("a label")?.0];
                while self.eat(&Tok::Comma) {
                    labels.push(self.ident("a label")?.0);
                }
                self.expect(&Tok::RBrace)?;
                Range::categorical(labels)
            }
            other => {
                self.error_at(&span, "syntax", format!("unknown range kind `{other}`"));
                return Err(());
            }
        };
        built.map_err(|e| {
            self.error_at(&span, "bad-range", e.to_string());
        })
    }

    fn density_expr<F: Real>(&mut self) -> PResult<DensityExpr<F>> {
        let (word, span) = self.ident("a density (uniform, delta, pmf or mix)")?;
        match word.as_str() {
            "uniform" => {
                self.expect(&Tok::LParen)?;
                let lo = self.number()?;
                self.expect(&Tok::Comma)?;
                let hi = self.number()?;
                self.expect(&Tok::RParen)?;
                Ok(DensityExpr::Uniform(F::of(lo), F::of(hi)))
            }
            "delta" => {
                self.expect(&Tok::LParen)?;
                let x = self.number()?;
                self.expect(&Tok::RParen)?;
                Ok(DensityExpr::Delta(F::of(x)))
            }
            "pmf" => {
                self.expect(&Tok::LBrace)?;
                let mut weights = Vec::new();
                loop {
                    let (label, _) = self.ident("a label")?;
                    self.expect(&Tok::Colon)?;
                    weights.push((label, F::of(self.number()?)));
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(&Tok::RBrace)?;
                Ok(DensityExpr::Pmf(weights))
            }
            "mix" => {
                self.expect(&Tok::LBrace)?;
                let mut parts = Vec::new();
                loop {
                    let (cw, cspan) = self.ident("`uniform` or `delta`")?;
                    let comp = match cw.as_str() {
                        "uniform" => {
                            self.expect(&Tok::LParen)?;
                            let lo = self.number()?;
                            self.expect(&Tok::Comma)?;
                            let hi = self.number()?;
                            self.expect(&Tok::RParen)?;
                            Component::Uniform(F::of(lo), F::of(hi))
                        }
                        "delta" => {
                            self.expect(&Tok::LParen)?;
                            let x = self.number()?;
                            self.expect(&Tok::RParen)?;
                            Component::Delta(F::of(x))
                        }
                        other => {
                            self.error_at(
                                &cspan,
                                "syntax",
                                format!("mix components are uniform or delta, found `{other}`"),
                            );
                            return Err(());
                        }
                    };
                    self.expect(&Tok::Colon)?;
                    parts.push((comp, F::of(self.number()?)));
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(&Tok::RBrace)?;
                Ok(DensityExpr::Mix(parts))
            }
            other => {
                self.error_at(&span, "syntax", format!("unknown density form `{other}`"));
                Err(())
            }
        }
    }

    fn proc_expr<F: Real>(&mut self) -> PResult<Procedure<F>> {
        let (word, span) = self.ident("a procedure")?;
        match word.as_str() {
            "add" | "sub" | "mul" | "div" => {
                let op = match word.as_str() {
                    "add" => ArithOp::Add,
                    "sub" => ArithOp::Sub,
                    "mul" => ArithOp::Mul,
                    _ => ArithOp::Div,
                };
                self.expect(&Tok::LParen)?;
                let (left, _) = self.ident("a variable")?;
                self.expect(&Tok::Comma)?;
                let (right, _) = self.ident("a variable")?;
                self.expect(&Tok::RParen)?;
                Ok(Procedure::Arith { op, left, right })
            }
            "threshold" => {
                self.expect(&Tok::LParen)?;
                let (source, _) = self.ident("a variable")?;
                self.expect(&Tok::RParen)?;
                let partition = self.partition(&span)?;
                Ok(Procedure::Threshold { source, partition })
            }
            "nearest_obs" => {
                self.expect(&Tok::LParen)?;
                let (datum, _) = self.ident("a datum")?;
                self.expect(&Tok::Comma)?;
                self.keyword("radius")?;
                self.expect(&Tok::Equals)?;
                let radius = self.duration_spec()?;
                self.expect(&Tok::Comma)?;
                self.keyword("else")?;
                self.expect(&Tok::Equals)?;
                let (fallback, _) = self.ident("a fallback variable")?;
                self.expect(&Tok::RParen)?;
                Ok(Procedure::NearestObs { datum, radius, fallback })
            }
            "linear_fit" => {
                self.expect(&Tok::LParen)?;
                let (datum, _) = self.ident("a datum")?;
                let mut n = 10usize;
                let mut window = None;
                let mut min_points = 3usize;
                let mut fallback = None;
                while self.eat(&Tok::Comma) {
                    let (key, kspan) = self.ident("a parameter")?;
                    self.expect(&Tok::Equals)?;
                    match key.as_str() {
                        "n" => n = self.count(&kspan)?,
                        "window" => window = Some(self.duration()?),
                        "min_points" => min_points = self.count(&kspan)?,
                        "else" => fallback = Some(self.ident("a fallback variable")?.0),
                        other => {
                            self.error_at(
                                &kspan,
                                "syntax",
                                format!("unknown linear_fit parameter `{other}`"),
                            );
                            return Err(());
                        }
                    }
                }
                self.expect(&Tok::RParen)?;
                let (Some(window), Some(fallback)) = (window, fallback) else {
                    self.error_at(&span, "bad-proc", "linear_fit needs window= and else=".into());
                    return Err(());
                };
                Ok(Procedure::LinearFit { datum, n, window, min_points, fallback })
            }
            "causal_balance" => {
                self.expect(&Tok::LParen)?;
                let mut base = None;
                let mut inflow = None;
                let mut outflow = None;
                let mut rate = None;
                let mut fallback = None;
                loop {
                    let (key, kspan) = self.ident("a parameter")?;
                    self.expect(&Tok::Equals)?;
                    match key.as_str() {
                        "base" => base = Some(self.ident("a datum")?.0),
                        "in" => inflow = Some(self.ident("a variable")?.0),
                        "out" => outflow = Some(self.ident("a variable")?.0),
                        "else" => fallback = Some(self.ident("a variable")?.0),
                        "rate" => {
                            let value = F::of(self.number()?);
                            self.expect(&Tok::Slash)?;
                            let unit = self.rate_unit()?;
                            rate = Some((value, unit));
                        }
                        other => {
                            self.error_at(
                                &kspan,
                                "syntax",
                                format!("unknown causal_balance parameter `{other}`"),
                            );
                            return Err(());
                        }
                    }
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(&Tok::RParen)?;
                let (Some(base), Some(inflow), Some(outflow), Some((rate, rate_unit)), Some(fallback)) =
                    (base, inflow, outflow, rate, fallback)
                else {
                    self.error_at(
                        &span,
                        "bad-proc",
                        "causal_balance needs base=, in=, out=, rate= and else=".into(),
                    );
                    return Err(());
                };
                Ok(Procedure::CausalBalance { base, inflow, outflow, rate, rate_unit, fallback })
            }
            "chain" => {
                self.expect(&Tok::LBracket)?;
                let mut branches = Vec::new();
                loop {
                    if self.eat(&Tok::LParen) {
                        let procedure = self.proc_expr()?;
                        self.keyword("if")?;
                        let criterion = self.criterion()?;
                        self.expect(&Tok::RParen)?;
                        branches.push(ChainBranch { procedure, criterion });
                    } else {
                        let procedure = self.proc_expr()?;
                        branches.push(ChainBranch { procedure, criterion: ValidityCriterion::Always });
                    }
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(&Tok::RBracket)?;
                Ok(Procedure::RankedChain { branches })
            }
            "fuse" => {
                self.expect(&Tok::LParen)?;
                let mut sources = vec![self.ident("a variable")?.0];
                while self.eat(&Tok::Comma) {
                    sources.push(self.ident("a variable")?.0);
                }
                self.expect(&Tok::RParen)?;
                Ok(Procedure::BayesFusion { sources })
            }
            "trend" => {
                self.expect(&Tok::LParen)?;
                let (source, _) = self.ident("a variable")?;
                self.expect(&Tok::Comma)?;
                self.keyword("epsilon")?;
                self.expect(&Tok::Equals)?;
                let epsilon = self.duration()?;
                self.expect(&Tok::Comma)?;
                self.keyword("band")?;
                self.expect(&Tok::Equals)?;
                let stable_band = F::of(self.number()?);
                self.expect(&Tok::RParen)?;
                Ok(Procedure::Trend { source, epsilon, stable_band })
            }
            name => {
                // a bare identifier delegates to that variable
                if matches!(self.peek(), Some(Tok::LParen)) {
                    self.error_at(&span, "syntax", format!("unknown procedure `{name}`"));
                    return Err(());
                }
                Ok(Procedure::Ref(name.to_string()))
            }
        }
    }

    /// `{ label: [a, b), ..., label: [a, b] }` with the final cell closed.
    fn partition<F: Real>(&mut self, proc_span: &SourceSpan) -> PResult<Partition<F>> {
        self.expect(&Tok::LBrace)?;
        let mut cells: Vec<(String, F, F, bool)> = Vec::new(); // closed-right flag
        loop {
            let (label, _) = self.ident("a label")?;
            self.expect(&Tok::Colon)?;
            self.expect(&Tok::LBracket)?;
            let lo = self.number()?;
            self.expect(&Tok::Comma)?;
            let hi = self.number()?;
            let closed = if self.eat(&Tok::RBracket) {
                true
            } else if self.eat(&Tok::RParen) {
                false
            } else {
                self.error_here("syntax", "expected `]` or `)` to close the cell".into());
                return Err(());
            };
            cells.push((label, F::of(lo), F::of(hi), closed));
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(&Tok::RBrace)?;
        for (i, (label, _, _, closed)) in cells.iter().enumerate() {
            let last = i + 1 == cells.len();
            if last != *closed {
                self.error_at(
                    proc_span,
                    "bad-partition",
                    format!(
                        "cell `{label}` must be {} (cells are half-open, the final cell closed)",
                        if last { "[lo, hi]" } else { "[lo, hi)" }
                    ),
                );
                return Err(());
            }
        }
        Partition::new(cells.into_iter().map(|(l, lo, hi, _)| (l, lo, hi)).collect()).map_err(|e| {
            self.error_at(proc_span, "bad-partition", e.to_string());
        })
    }

    fn criterion(&mut self) -> PResult<ValidityCriterion> {
        let mut atoms = vec![self.criterion_atom()?];
        while matches!(self.peek(), Some(Tok::Ident(w)) if w == "and") {
            self.pos += 1;
            atoms.push(self.criterion_atom()?);
        }
        Ok(if atoms.len() == 1 { atoms.pop().unwrap() } else { ValidityCriterion::All(atoms) })
    }

    fn criterion_atom(&mut self) -> PResult<ValidityCriterion> {
        let (word, span) = self.ident("a criterion (always or obs(...))")?;
        match word.as_str() {
            "always" => Ok(ValidityCriterion::Always),
            "obs" => {
                self.expect(&Tok::LParen)?;
                let (datum, _) = self.ident("a datum")?;
                let mut within = None;
                let mut min = 1usize;
                let mut before = false;
                while self.eat(&Tok::Comma) {
                    let (key, kspan) = self.ident("within, min or before")?;
                    match key.as_str() {
                        "within" => {
                            self.expect(&Tok::Equals)?;
                            within = Some(self.duration()?);
                        }
                        "min" => {
                            self.expect(&Tok::Equals)?;
                            min = self.count(&kspan)?;
                        }
                        "before" => before = true,
                        other => {
                            self.error_at(
                                &kspan,
                                "syntax",
                                format!("unknown criterion parameter `{other}`"),
                            );
                            return Err(());
                        }
                    }
                }
                self.expect(&Tok::RParen)?;
                match (before, within) {
                    (true, None) => Ok(ValidityCriterion::ObsBefore { datum }),
                    (false, Some(within)) => Ok(ValidityCriterion::ObsWithin { datum, within, min }),
                    _ => {
                        self.error_at(
                            &span,
                            "bad-criterion",
                            "obs(...) needs either within=<duration> or before".into(),
                        );
                        Err(())
                    }
                }
            }
            other => {
                self.error_at(&span, "syntax", format!("unknown criterion `{other}`"));
                Err(())
            }
        }
    }

    // token helpers

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok) -> PResult<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            let found = match self.tokens.get(self.pos) {
                Some(t) => t.tok.describe(),
                None => "end of input".into(),
            };
            self.error_here("syntax", format!("expected {}, found {found}", tok.describe()));
            Err(())
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, SourceSpan)> {
        match self.tokens.get(self.pos) {
            Some(Token { tok: Tok::Ident(w), span }) => {
                let out = (w.clone(), span.clone());
                self.pos += 1;
                Ok(out)
            }
            other => {
                let found = other.map(|t| t.tok.describe()).unwrap_or_else(|| "end of input".into());
                self.error_here("syntax", format!("expected {what}, found {found}"));
                Err(())
            }
        }
    }

    fn keyword(&mut self, word: &str) -> PResult<()> {
        let (w, span) = self.ident(&format!("`{word}`"))?;
        if w == word {
            Ok(())
        } else {
            self.error_at(&span, "syntax", format!("expected `{word}`, found `{w}`"));
            Err(())
        }
    }

    fn number(&mut self) -> PResult<f64> {
        match self.tokens.get(self.pos) {
            Some(Token { tok: Tok::Num(n), .. }) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            other => {
                let found = other.map(|t| t.tok.describe()).unwrap_or_else(|| "end of input".into());
                self.error_here("syntax", format!("expected a number, found {found}"));
                Err(())
            }
        }
    }

    fn count(&mut self, span: &SourceSpan) -> PResult<usize> {
        let n = self.number()?;
        if n.fract() != 0.0 || n < 0.0 || n > usize::MAX as f64 {
            self.error_at(span, "bad-proc", format!("expected a non-negative integer, got {n}"));
            return Err(());
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> PResult<String> {
        match self.tokens.get(self.pos) {
            Some(Token { tok: Tok::Str(s), .. }) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            other => {
                let found = other.map(|t| t.tok.describe()).unwrap_or_else(|| "end of input".into());
                self.error_here("syntax", format!("expected a quoted string, found {found}"));
                Err(())
            }
        }
    }

    /// A duration literal, or the name of a constant that pins one.
    fn duration_spec(&mut self) -> PResult<DurationSpec> {
        match self.tokens.get(self.pos) {
            Some(Token { tok: Tok::Dur(d), .. }) => {
                let d = *d;
                self.pos += 1;
                Ok(DurationSpec::Literal(d))
            }
            Some(Token { tok: Tok::Ident(name), .. }) => {
                let name = name.clone();
                self.pos += 1;
                Ok(DurationSpec::Constant(name))
            }
            other => {
                let found = other.map(|t| t.tok.describe()).unwrap_or_else(|| "end of input".into());
                self.error_here(
                    "syntax",
                    format!("expected a duration or a constant name, found {found}"),
                );
                Err(())
            }
        }
    }

    fn duration(&mut self) -> PResult<Duration> {
        match self.tokens.get(self.pos) {
            Some(Token { tok: Tok::Dur(d), .. }) => {
                let d = *d;
                self.pos += 1;
                Ok(d)
            }
            other => {
                let found = other.map(|t| t.tok.describe()).unwrap_or_else(|| "end of input".into());
                self.error_here(
                    "syntax",
                    format!("expected a duration like 12h or 30d, found {found}"),
                );
                Err(())
            }
        }
    }

    /// Denominator of a rate: a bare unit (`d`) means one of that unit, a
    /// full duration (`12h`) is taken as written.
    fn rate_unit(&mut self) -> PResult<Duration> {
        match self.tokens.get(self.pos) {
            Some(Token { tok: Tok::Dur(d), .. }) => {
                let d = *d;
                self.pos += 1;
                Ok(d)
            }
            Some(Token { tok: Tok::Ident(w), span }) => {
                let unit = match w.as_str() {
                    "s" => Duration::seconds(1),
                    "m" => Duration::minutes(1),
                    "h" => Duration::hours(1),
                    "d" => Duration::days(1),
                    other => {
                        let span = span.clone();
                        self.error_at(&span, "bad-duration", format!("unknown rate unit `{other}`"));
                        return Err(());
                    }
                };
                self.pos += 1;
                Ok(unit)
            }
            other => {
                let found = other.map(|t| t.tok.describe()).unwrap_or_else(|| "end of input".into());
                self.error_here("syntax", format!("expected a rate unit, found {found}"));
                Err(())
            }
        }
    }

    fn error_here(&mut self, code: &'static str, message: String) {
        let span = match self.tokens.get(self.pos) {
            Some(t) => t.span.clone(),
            None => match self.tokens.last() {
                Some(t) => t.span.clone(),
                None => SourceSpan { file: self.file.clone(), line: 1, col_start: 1, col_end: 1 },
            },
        };
        self.error_at(&span, code, message);
    }

    fn error_at(&mut self, span: &SourceSpan, code: &'static str, message: String) {
        self.diags.push(ParseDiagnostic {
            severity: Severity::Error,
            code,
            message,
            span: span.clone(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::serialize;

    fn ok(text: &str) -> KnowledgeBase<f64> {
        let (kb, diags) = parse::<f64>(text);
        let errors: Vec<_> = diags.iter().filter(|d| d.severity == Severity::Error).collect();
        assert!(errors.is_empty(), "{errors:?}");
        kb
    }

    #[test]
    fn declaration_order_is_free() {
        let kb = ok("datum X : W\nrange W = cardinal 1..2 unit \"u\"");
        assert!(kb.get("X").is_some());
    }

    #[test]
    fn linear_fit_defaults() {
        let kb = ok("range W = cardinal 1..300 unit \"kg\"\n\
                     datum D : W\n\
                     const U : W = uniform(1, 300)\n\
                     infer X : W = linear_fit(D, window=30d, else=U)");
        match kb.get("X").unwrap().procedure().unwrap() {
            Procedure::LinearFit { n, min_points, .. } => {
                assert_eq!(*n, 10);
                assert_eq!(*min_points, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn explicit_always_and_bare_terminal_agree() {
        let base = "range W = cardinal 1..300 unit \"kg\"\n\
                    const U : W = uniform(1, 300)\n";
        let a = ok(&format!("{base}infer X : W = chain[(U if always), U]"));
        let b = ok(&format!("{base}infer X : W = chain[U, U]"));
        assert_eq!(a, b);
    }

    #[test]
    fn rate_accepts_full_durations() {
        let kb = ok("range W = cardinal 1..300 unit \"kg\"\n\
                     range L = cardinal 0..20 unit \"L\"\n\
                     datum B : W\n\
                     datum I : L\n\
                     datum O : L\n\
                     const U : W = uniform(1, 300)\n\
                     infer X : W = causal_balance(base=B, in=I, out=O, rate=0.5/12h, else=U)");
        match kb.get("X").unwrap().procedure().unwrap() {
            Procedure::CausalBalance { rate, rate_unit, .. } => {
                assert_eq!(*rate, 0.5);
                assert_eq!(*rate_unit, Duration::hours(12));
            }
            other => panic!("{other:?}"),
        }
        // non-unit denominators serialize as full durations and round-trip
        let text = serialize(&kb);
        assert!(text.contains("rate=0.5/12h"), "{text}");
        let (kb2, _) = parse::<f64>(&text);
        assert_eq!(kb, kb2);
    }

    #[test]
    fn keyword_arguments_accept_any_order() {
        let a = ok("range W = cardinal 1..300 unit \"kg\"\n\
                    datum D : W\n\
                    const U : W = uniform(1, 300)\n\
                    infer X : W = linear_fit(D, else=U, min_points=2, window=10d, n=5)");
        match a.get("X").unwrap().procedure().unwrap() {
            Procedure::LinearFit { n, window, min_points, fallback, .. } => {
                assert_eq!((*n, *min_points), (5, 2));
                assert_eq!(*window, Duration::days(10));
                assert_eq!(fallback, "U");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pmf_constant_normalizes_at_parse() {
        let kb = ok("range T = ordinal {a < b < c}\nconst P : T = pmf{a: 1, b: 1, c: 2}");
        match &kb.get("P").unwrap().body {
            crate::kb::VariableBody::Constant(d) => {
                assert_eq!(d.probabilities(), &[0.25, 0.25, 0.5]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cyclic_definition_parses_then_validate_rejects() {
        let kb = ok("range W = cardinal 1..2 unit \"u\"\ndatum Y : W\ninfer X : W = add(X, Y)");
        assert!(kb.validate().iter().any(|d| d.code == "cycle"));
    }
}
