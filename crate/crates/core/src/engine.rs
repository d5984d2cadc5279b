//! Backward-chaining evaluation with density caching, forward-chained cache
//! invalidation and probability-zero contradiction detection.
//!
//! One [`EvalContext`] is a single-writer domain: `report_observation` needs
//! exclusive access, while any number of `evaluate`/`explain` calls may run
//! concurrently between writes. Returned densities are immutable snapshots
//! and results do not depend on interleaving.

use std::collections::HashMap;
use std::fmt;
use std::sync::RwLock;

use thiserror::Error;

use crate::density::{
    bayes_fuse, combine_arith, threshold_map, ArithOp, Density, DensityError, GridPolicy, Range,
};
use crate::kb::{KnowledgeBase, Procedure, ValidityCriterion, VariableBody};
use crate::scalar::{cmp_real, Real};
use crate::timebase::{
    k_nearest, nearest, within_radius, Duration, TimeError, TimeInterval, TimePoint,
    TimeSeriesSpec, TimeSpec,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("`{variable}` cannot be evaluated at {shape} time{hint}")]
    ShapeMismatch { variable: String, shape: &'static str, hint: &'static str },
    #[error("no observation of `{datum}` at {time}")]
    MissingDatum { datum: String, time: String },
    #[error("`{0}` is not a datum")]
    NotADatum(String),
    #[error("`{0}` is not an inference")]
    NotAnInference(String),
    #[error("observation density range differs from the declared range of `{0}`")]
    ObservationRange(String),
    #[error("`{variable}`: {message}")]
    BadParameter { variable: String, message: String },
    #[error("recursion depth {0} exceeded; is the knowledge base cyclic?")]
    DepthExceeded(usize),
    #[error("no chain branch applicable for `{0}`")]
    NoBranch(String),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Time(#[from] TimeError),
}

/// Imperative knowledge: one reported value of a datum. Exact readings are
/// deltas; inexact readings carry wider densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<F> {
    pub datum: String,
    pub time: TimePoint,
    pub density: Density<F>,
}

/// A reported event the paired model assigns (near-)zero probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Contradiction<F> {
    pub datum: String,
    pub time: TimePoint,
    pub observed: Density<F>,
    pub inferred: Density<F>,
    pub probability: F,
}

/// Tunables of one engine instance.
#[derive(Debug, Clone)]
pub struct EngineConfig<F> {
    pub grid: GridPolicy<F>,
    /// Backward-chaining depth guard; converts misconfiguration into an error.
    pub max_depth: usize,
    /// Report a contradiction when the model assigns probability <= this.
    pub contradiction_threshold: F,
    /// Disable to recompute every density (the caching must be invisible).
    pub cache_enabled: bool,
}

impl<F: Real> Default for EngineConfig<F> {
    fn default() -> Self {
        EngineConfig {
            grid: GridPolicy::default(),
            max_depth: 64,
            contradiction_threshold: F::zero(),
            cache_enabled: true,
        }
    }
}

/// Cache key: a variable and the exact query time. No tolerance matching.
pub type CacheKey = (String, TimeSpec);

/// One node of an evaluation trace: which procedure ran, which branch was
/// chosen, and whether the density came from the cache.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub variable: String,
    pub time: TimeSpec,
    pub outcome: String,
    pub cache_hit: bool,
    pub children: Vec<Trace>,
}

impl Trace {
    fn leaf(variable: &str, time: &TimeSpec, outcome: impl Into<String>) -> Self {
        Trace {
            variable: variable.to_string(),
            time: time.clone(),
            outcome: outcome.into(),
            cache_hit: false,
            children: Vec::new(),
        }
    }

    fn render(&self, indent: usize, out: &mut String) {
        for _ in 0..indent {
            out.push_str("  ");
        }
        out.push_str(&self.variable);
        out.push_str(" @ ");
        out.push_str(&self.time.to_string());
        out.push_str(": ");
        out.push_str(&self.outcome);
        if self.cache_hit {
            out.push_str(" [cache hit]");
        }
        out.push('\n');
        for c in &self.children {
            c.render(indent + 1, out);
        }
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.render(0, &mut s);
        f.write_str(s.trim_end())
    }
}

/// Observation store, density cache and configuration for one engine run.
#[derive(Debug)]
pub struct EvalContext<F> {
    kb: KnowledgeBase<F>,
    store: HashMap<String, Vec<Observation<F>>>,
    cache: RwLock<HashMap<CacheKey, Density<F>>>,
    config: EngineConfig<F>,
}

impl<F: Real> EvalContext<F> {
    pub fn new(kb: KnowledgeBase<F>) -> Self {
        EvalContext::with_config(kb, EngineConfig::default())
    }

    pub fn with_config(kb: KnowledgeBase<F>, config: EngineConfig<F>) -> Self {
        EvalContext { kb, store: HashMap::new(), cache: RwLock::new(HashMap::new()), config }
    }

    pub fn kb(&self) -> &KnowledgeBase<F> {
        &self.kb
    }

    pub fn config(&self) -> &EngineConfig<F> {
        &self.config
    }

    /// Time-ordered observations reported for a datum.
    pub fn observations(&self, datum: &str) -> &[Observation<F>] {
        self.store.get(datum).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Cache keys currently held, sorted for deterministic inspection.
    pub fn cached_keys(&self) -> Vec<CacheKey> {
        let mut keys: Vec<CacheKey> = self.cache.read().unwrap().keys().cloned().collect();
        keys.sort();
        keys
    }

    /// Records an observation and invalidates every cached density of a
    /// variable that transitively depends on the datum. Returns the removed
    /// keys, sorted.
    pub fn report_observation(
        &mut self,
        obs: Observation<F>,
    ) -> Result<Vec<CacheKey>, EngineError> {
        let def = self
            .kb
            .get(&obs.datum)
            .ok_or_else(|| EngineError::UnknownVariable(obs.datum.clone()))?;
        if !def.is_datum() {
            return Err(EngineError::NotADatum(obs.datum.clone()));
        }
        if obs.density.range() != &def.range {
            return Err(EngineError::ObservationRange(obs.datum.clone()));
        }
        let dependents =
            self.kb.dependents(&obs.datum).map_err(|e| EngineError::UnknownVariable(e.0))?;
        let list = self.store.entry(obs.datum.clone()).or_default();
        list.push(obs);
        // deterministic store: ingestion order never affects results
        list.sort_by(|a, b| a.time.cmp(&b.time).then_with(|| cmp_density(&a.density, &b.density)));

        let mut cache = self.cache.write().unwrap();
        let mut removed: Vec<CacheKey> =
            cache.keys().filter(|(name, _)| dependents.contains(name)).cloned().collect();
        for key in &removed {
            cache.remove(key);
        }
        removed.sort();
        Ok(removed)
    }

    /// Density of `name` at `t` by backward chaining. Series queries go
    /// through [`EvalContext::evaluate_series`].
    pub fn evaluate(&self, name: &str, t: &TimeSpec) -> Result<Density<F>, EngineError> {
        if matches!(t, TimeSpec::Series(_)) {
            return Err(EngineError::ShapeMismatch {
                variable: name.to_string(),
                shape: "series",
                hint: " (use evaluate_series)",
            });
        }
        Ok(self.evaluator(None).eval(name, t, 0)?.0)
    }

    /// One density per series point.
    pub fn evaluate_series(
        &self,
        name: &str,
        series: &TimeSeriesSpec,
    ) -> Result<Vec<Density<F>>, EngineError> {
        series
            .points()
            .iter()
            .map(|p| Ok(self.evaluator(None).eval(name, &TimeSpec::Instant(*p), 0)?.0))
            .collect()
    }

    /// Same evaluation as [`EvalContext::evaluate`], returning the trace.
    pub fn explain(&self, name: &str, t: &TimeSpec) -> Result<(Density<F>, Trace), EngineError> {
        if matches!(t, TimeSpec::Series(_)) {
            return Err(EngineError::ShapeMismatch {
                variable: name.to_string(),
                shape: "series",
                hint: " (use evaluate_series)",
            });
        }
        self.evaluator(None).eval(name, t, 0)
    }

    /// Observations of a datum recorded exactly at `t`, fused when repeated.
    /// Interpolation is the business of inference variables, not of data.
    pub fn resolve_datum(&self, name: &str, t: TimePoint) -> Result<Density<F>, EngineError> {
        self.evaluator(None).resolve_datum_at(name, t).map(|(d, _)| d)
    }

    /// Ad-hoc ordinal trend of a cardinal variable about an instant.
    pub fn eval_trend(
        &self,
        source: &str,
        t: TimePoint,
        epsilon: Duration,
        stable_band: F,
    ) -> Result<Density<F>, EngineError> {
        let out = Range::trend_labels();
        self.evaluator(None).trend(source, t, epsilon, stable_band, &out, 0).map(|(d, _)| d)
    }

    /// Evaluates `model` at the observation's time with the observation
    /// itself excluded from the store, and reports a contradiction when the
    /// model gives it probability at or below the configured threshold.
    pub fn check_consistency(
        &self,
        obs: &Observation<F>,
        model: &str,
    ) -> Result<Option<Contradiction<F>>, EngineError> {
        let datum_def = self
            .kb
            .get(&obs.datum)
            .ok_or_else(|| EngineError::UnknownVariable(obs.datum.clone()))?;
        let model_def =
            self.kb.get(model).ok_or_else(|| EngineError::UnknownVariable(model.to_string()))?;
        if model_def.procedure().is_none() {
            return Err(EngineError::NotAnInference(model.to_string()));
        }
        if model_def.range != datum_def.range {
            return Err(EngineError::ObservationRange(obs.datum.clone()));
        }
        let (inferred, _) =
            self.evaluator(Some(obs)).eval(model, &TimeSpec::Instant(obs.time), 0)?;
        let p = observation_probability(&obs.density, &inferred)?;
        if p <= self.config.contradiction_threshold {
            Ok(Some(Contradiction {
                datum: obs.datum.clone(),
                time: obs.time,
                observed: obs.density.clone(),
                inferred,
                probability: p,
            }))
        } else {
            Ok(None)
        }
    }

    fn evaluator<'a>(&'a self, exclude: Option<&'a Observation<F>>) -> Evaluator<'a, F> {
        Evaluator {
            kb: &self.kb,
            store: &self.store,
            cache: self.config.cache_enabled.then_some(&self.cache),
            config: &self.config,
            exclude,
        }
    }
}

/// Probability a model density assigns to an observation: mass over the
/// observation's support, or the model's density value for exact readings
/// (a point has zero mass under any continuous density, so the density
/// value is the meaningful membership weight there).
fn observation_probability<F: Real>(
    observed: &Density<F>,
    inferred: &Density<F>,
) -> Result<F, EngineError> {
    use crate::density::EventSet;
    if observed.is_discrete() {
        let labels: Vec<&str> = observed
            .pmf_pairs()
            .into_iter()
            .filter(|(_, p)| *p > F::zero())
            .map(|(l, _)| l)
            .collect();
        return Ok(inferred.prob_in(&EventSet::labels(labels))?);
    }
    if observed.pieces().is_empty() {
        let p = observed
            .atoms()
            .iter()
            .fold(F::zero(), |s, a| s + a.mass * inferred.point_weight(a.at));
        return Ok(p);
    }
    let mut ivs: Vec<(F, F)> = observed.pieces().iter().map(|c| (c.lo, c.hi)).collect();
    ivs.extend(observed.atoms().iter().map(|a| (a.at, a.at)));
    Ok(inferred.prob_in(&EventSet::intervals(ivs)?)?)
}

// Total order on densities, used only to keep same-time observations in a
// canonical order so ingestion order cannot influence fusion.
fn cmp_density<F: Real>(a: &Density<F>, b: &Density<F>) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    let lex = |xs: &[F], ys: &[F]| -> Ordering {
        for (x, y) in xs.iter().zip(ys) {
            let o = cmp_real(x, y);
            if o != Ordering::Equal {
                return o;
            }
        }
        xs.len().cmp(&ys.len())
    };
    let a_probs: Vec<F> = a.probabilities().to_vec();
    let b_probs: Vec<F> = b.probabilities().to_vec();
    let a_parts: Vec<F> = a
        .atoms()
        .iter()
        .flat_map(|x| [x.at, x.mass])
        .chain(a.pieces().iter().flat_map(|c| [c.lo, c.hi, c.height]))
        .collect();
    let b_parts: Vec<F> = b
        .atoms()
        .iter()
        .flat_map(|x| [x.at, x.mass])
        .chain(b.pieces().iter().flat_map(|c| [c.lo, c.hi, c.height]))
        .collect();
    lex(&a_probs, &b_probs).then(lex(&a_parts, &b_parts))
}

struct Evaluator<'a, F> {
    kb: &'a KnowledgeBase<F>,
    store: &'a HashMap<String, Vec<Observation<F>>>,
    cache: Option<&'a RwLock<HashMap<CacheKey, Density<F>>>>,
    config: &'a EngineConfig<F>,
    exclude: Option<&'a Observation<F>>,
}

impl<'a, F: Real> Evaluator<'a, F> {
    fn eval(&self, name: &str, t: &TimeSpec, depth: usize) -> Result<(Density<F>, Trace), EngineError> {
        if depth > self.config.max_depth {
            return Err(EngineError::DepthExceeded(self.config.max_depth));
        }
        let def =
            self.kb.get(name).ok_or_else(|| EngineError::UnknownVariable(name.to_string()))?;
        match &def.body {
            VariableBody::Constant(d) => Ok((d.clone(), Trace::leaf(name, t, "constant"))),
            VariableBody::Datum => match t {
                TimeSpec::Instant(tp) => {
                    let (d, n) = self.resolve_datum_at(name, *tp)?;
                    let outcome = if n == 1 {
                        "datum (1 observation)".to_string()
                    } else {
                        format!("datum ({n} observations fused)")
                    };
                    Ok((d, Trace::leaf(name, t, outcome)))
                }
                TimeSpec::Interval(iv) => {
                    let (d, n) = self.resolve_datum_interval(name, iv)?;
                    let outcome = if n == 1 {
                        "datum (1 observation in interval)".to_string()
                    } else {
                        format!("datum ({n} observations in interval fused)")
                    };
                    Ok((d, Trace::leaf(name, t, outcome)))
                }
                TimeSpec::Series(_) => Err(EngineError::ShapeMismatch {
                    variable: name.to_string(),
                    shape: "series",
                    hint: " (use evaluate_series)",
                }),
            },
            VariableBody::Inference(p) => {
                let key = (name.to_string(), t.clone());
                if let Some(cache) = self.cache {
                    if let Some(hit) = cache.read().unwrap().get(&key) {
                        let mut trace = Trace::leaf(name, t, p.variant_name());
                        trace.cache_hit = true;
                        return Ok((hit.clone(), trace));
                    }
                }
                let (density, trace) = self.eval_procedure(name, &def.range, p, t, depth)?;
                if let Some(cache) = self.cache {
                    cache.write().unwrap().insert(key, density.clone());
                }
                Ok((density, trace))
            }
        }
    }

    fn eval_procedure(
        &self,
        name: &str,
        out_range: &Range<F>,
        p: &Procedure<F>,
        t: &TimeSpec,
        depth: usize,
    ) -> Result<(Density<F>, Trace), EngineError> {
        match p {
            Procedure::Ref(target) => {
                let (d, sub) = self.eval(target, t, depth + 1)?;
                let mut trace = Trace::leaf(name, t, format!("ref -> {target}"));
                trace.children.push(sub);
                Ok((d, trace))
            }
            Procedure::Arith { op, left, right } => {
                let (l, tl) = self.eval(left, t, depth + 1)?;
                let (r, tr) = self.eval(right, t, depth + 1)?;
                let combined = combine_arith(*op, &l, &r, out_range, &self.config.grid)?;
                let mut outcome = op.name().to_string();
                if combined.clamped_mass > F::of(1e-12) {
                    outcome.push_str(&format!(" [clamped {:.3e}]", combined.clamped_mass.as_f64()));
                }
                let mut trace = Trace::leaf(name, t, outcome);
                trace.children.push(tl);
                trace.children.push(tr);
                Ok((combined.density, trace))
            }
            Procedure::Threshold { source, partition } => {
                let (src, ts) = self.eval(source, t, depth + 1)?;
                let d = threshold_map(&src, partition, out_range)?;
                let mut trace = Trace::leaf(name, t, "threshold");
                trace.children.push(ts);
                Ok((d, trace))
            }
            Procedure::BayesFusion { sources } => {
                let mut densities = Vec::with_capacity(sources.len());
                let mut children = Vec::with_capacity(sources.len());
                for s in sources {
                    let (d, tr) = self.eval(s, t, depth + 1)?;
                    densities.push(d);
                    children.push(tr);
                }
                let fused = bayes_fuse(&densities)?;
                let mut trace =
                    Trace::leaf(name, t, format!("fuse ({} sources)", sources.len()));
                trace.children = children;
                Ok((fused, trace))
            }
            Procedure::NearestObs { datum, radius, fallback } => {
                let tp = self.expect_instant(name, t)?;
                let radius = self
                    .kb
                    .resolve_duration(radius)
                    .map_err(|msg| EngineError::BadParameter { variable: name.to_string(), message: msg })?;
                let times = self.obs_times(datum);
                let hit = if times.is_empty() {
                    None
                } else {
                    let t_obs = nearest(&times, tp)?;
                    within_radius(tp, t_obs, radius)?.then_some(t_obs)
                };
                match hit {
                    Some(t_obs) => {
                        let (d, _) = self.resolve_datum_at(datum, t_obs)?;
                        let trace = Trace::leaf(
                            name,
                            t,
                            format!("nearest_obs (1) using {datum} at {t_obs}"),
                        );
                        Ok((d, trace))
                    }
                    None => {
                        let (d, sub) = self.eval(fallback, t, depth + 1)?;
                        let mut trace = Trace::leaf(
                            name,
                            t,
                            format!("nearest_obs (2) no obs within {radius}, fallback -> {fallback}"),
                        );
                        trace.children.push(sub);
                        Ok((d, trace))
                    }
                }
            }
            Procedure::LinearFit { datum, n, window, min_points, fallback } => {
                let tp = self.expect_instant(name, t)?;
                let in_window: Vec<TimePoint> = self
                    .obs_times(datum)
                    .into_iter()
                    .filter(|ti| ti.distance(tp) <= *window)
                    .collect();
                let selected = if in_window.is_empty() {
                    Vec::new()
                } else {
                    k_nearest(&in_window, tp, *n)?.points().to_vec()
                };
                if selected.len() < *min_points {
                    let (d, sub) = self.eval(fallback, t, depth + 1)?;
                    let mut trace = Trace::leaf(
                        name,
                        t,
                        format!(
                            "linear_fit (2) {} of {min_points} points in {window}, fallback -> {fallback}",
                            selected.len()
                        ),
                    );
                    trace.children.push(sub);
                    return Ok((d, trace));
                }
                let d = self.fit_predict(datum, &selected, tp, out_range)?;
                let trace =
                    Trace::leaf(name, t, format!("linear_fit (1) over {} points", selected.len()));
                Ok((d, trace))
            }
            Procedure::CausalBalance { base, inflow, outflow, rate, rate_unit, fallback } => {
                let tp = self.expect_instant(name, t)?;
                let anchor = self.obs_times(base).into_iter().filter(|ti| *ti <= tp).max();
                let anchor = match anchor {
                    Some(a) => a,
                    None => {
                        let (d, sub) = self.eval(fallback, t, depth + 1)?;
                        let mut trace = Trace::leaf(
                            name,
                            t,
                            format!("causal_balance (2) no {base} anchor, fallback -> {fallback}"),
                        );
                        trace.children.push(sub);
                        return Ok((d, trace));
                    }
                };
                match self.causal_estimate(base, anchor, inflow, outflow, *rate, *rate_unit, tp, out_range, depth) {
                    Ok((d, children, clamped)) => {
                        let mut outcome =
                            format!("causal_balance (1) anchored at {anchor}");
                        if clamped > F::of(1e-12) {
                            outcome.push_str(&format!(" [clamped {:.3e}]", clamped.as_f64()));
                        }
                        let mut trace = Trace::leaf(name, t, outcome);
                        trace.children = children;
                        Ok((d, trace))
                    }
                    Err(EngineError::MissingDatum { datum, .. }) => {
                        let (d, sub) = self.eval(fallback, t, depth + 1)?;
                        let mut trace = Trace::leaf(
                            name,
                            t,
                            format!("causal_balance (2) `{datum}` unavailable, fallback -> {fallback}"),
                        );
                        trace.children.push(sub);
                        Ok((d, trace))
                    }
                    Err(e) => Err(e),
                }
            }
            Procedure::RankedChain { branches } => {
                for (i, b) in branches.iter().enumerate() {
                    if self.criterion_holds(&b.criterion, t) {
                        let (d, sub) =
                            self.eval_procedure(name, out_range, &b.procedure, t, depth)?;
                        let mut trace = Trace::leaf(
                            name,
                            t,
                            format!("chain branch {} of {}", i + 1, branches.len()),
                        );
                        trace.children.push(sub);
                        return Ok((d, trace));
                    }
                }
                Err(EngineError::NoBranch(name.to_string()))
            }
            Procedure::Trend { source, epsilon, stable_band } => {
                let tp = self.expect_instant(name, t)?;
                let (d, children) =
                    self.trend(source, tp, *epsilon, *stable_band, out_range, depth)?;
                let mut trace = Trace::leaf(
                    name,
                    t,
                    format!("trend (epsilon={epsilon}, band={stable_band})"),
                );
                trace.children = children;
                Ok((d, trace))
            }
        }
    }

    /// `base(anchor) + rate * (inflow - outflow) * elapsed/rate_unit`, with
    /// inflow and outflow evaluated over the elapsed interval.
    #[allow(clippy::too_many_arguments)]
    fn causal_estimate(
        &self,
        base: &str,
        anchor: TimePoint,
        inflow: &str,
        outflow: &str,
        rate: F,
        rate_unit: Duration,
        tp: TimePoint,
        out_range: &Range<F>,
        depth: usize,
    ) -> Result<(Density<F>, Vec<Trace>, F), EngineError> {
        let (base_d, _) = self.resolve_datum_at(base, anchor)?;
        let iv = TimeSpec::Interval(TimeInterval::new(anchor, tp).expect("anchor <= query"));
        let (in_d, tr_in) = self.eval(inflow, &iv, depth + 1)?;
        let (out_d, tr_out) = self.eval(outflow, &iv, depth + 1)?;

        let (in_lo, in_hi) = in_d.range().bounds();
        let (out_lo, out_hi) = out_d.range().bounds();
        let unit = in_d.range().unit().to_string();
        let net_range = Range::cardinal(in_lo - out_hi, in_hi - out_lo, &unit)
            .expect("net balance range is non-degenerate");
        let net = combine_arith(ArithOp::Sub, &in_d, &out_d, &net_range, &self.config.grid)?.density;

        let elapsed = tp.since(anchor);
        let kappa =
            rate * F::of(elapsed.as_seconds() as f64) / F::of(rate_unit.as_seconds() as f64);
        let delta = if kappa == F::zero() {
            Density::delta(F::zero(), &Range::cardinal(-F::one(), F::one(), &unit).unwrap())
                .unwrap()
        } else {
            let (n_lo, n_hi) = net_range.bounds();
            let (s_lo, s_hi) = {
                let a = n_lo * kappa;
                let b = n_hi * kappa;
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            };
            let scale_range = Range::cardinal(s_lo, s_hi, &unit).expect("scaled range");
            let factor_range = Range::cardinal(
                kappa.min(F::zero()) - F::one(),
                kappa.max(F::zero()) + F::one(),
                &unit,
            )
            .unwrap();
            let factor = Density::delta(kappa, &factor_range).unwrap();
            combine_arith(ArithOp::Mul, &net, &factor, &scale_range, &self.config.grid)?.density
        };
        let combined = combine_arith(ArithOp::Add, &base_d, &delta, out_range, &self.config.grid)?;
        Ok((combined.density, vec![tr_in, tr_out], combined.clamped_mass))
    }

    /// Least-squares line through the selected observations' means;
    /// prediction at the query instant with spread from the residuals,
    /// floored by the mean observation width.
    fn fit_predict(
        &self,
        datum: &str,
        times: &[TimePoint],
        tp: TimePoint,
        out_range: &Range<F>,
    ) -> Result<Density<F>, EngineError> {
        let day = F::of(86_400.0);
        let k = F::from_usize(times.len()).unwrap();
        let mut xs = Vec::with_capacity(times.len());
        let mut ys = Vec::with_capacity(times.len());
        let mut width_floor = F::zero();
        for ti in times {
            let (d, _) = self.resolve_datum_at(datum, *ti)?;
            let (mean, var) = d.moments()?;
            xs.push(F::of(ti.since(tp).as_seconds() as f64) / day);
            ys.push(mean);
            width_floor = width_floor + var.sqrt();
        }
        width_floor = width_floor / k;

        let xbar = xs.iter().fold(F::zero(), |s, x| s + *x) / k;
        let ybar = ys.iter().fold(F::zero(), |s, y| s + *y) / k;
        let mut sxx = F::zero();
        let mut sxy = F::zero();
        for (x, y) in xs.iter().zip(&ys) {
            sxx = sxx + (*x - xbar) * (*x - xbar);
            sxy = sxy + (*x - xbar) * (*y - ybar);
        }
        let slope = if sxx > F::zero() { sxy / sxx } else { F::zero() };
        // prediction at the query instant, which is x = 0 by construction
        let predicted = ybar - slope * xbar;

        let mut ss = F::zero();
        for (x, y) in xs.iter().zip(&ys) {
            let r = *y - (ybar + slope * (*x - xbar));
            ss = ss + r * r;
        }
        let rms = (ss / k).sqrt();
        let spread = rms.max(width_floor);

        let (lower, upper) = out_range.bounds();
        if spread <= F::zero() {
            let x = predicted.max(lower).min(upper);
            return Ok(Density::delta(x, out_range)?);
        }
        let half = spread * F::of(3.0).sqrt(); // uniform with matching std
        let lo = (predicted - half).max(lower);
        let hi = (predicted + half).min(upper);
        if hi <= lo {
            let x = predicted.max(lower).min(upper);
            return Ok(Density::delta(x, out_range)?);
        }
        Ok(Density::uniform(lo, hi, out_range)?)
    }

    /// The three-label trend pmf from the difference of the source density
    /// at `t + epsilon` and `t - epsilon`, the endpoints taken independent.
    fn trend(
        &self,
        source: &str,
        tp: TimePoint,
        epsilon: Duration,
        band: F,
        out_range: &Range<F>,
        depth: usize,
    ) -> Result<(Density<F>, Vec<Trace>), EngineError> {
        let before = TimeSpec::Instant(tp - epsilon);
        let after = TimeSpec::Instant(tp + epsilon);
        let (f_minus, tr_minus) = self.eval(source, &before, depth + 1)?;
        let (f_plus, tr_plus) = self.eval(source, &after, depth + 1)?;

        let (lo, hi) = f_minus.range().bounds();
        let diff_range = Range::cardinal(lo - hi, hi - lo, f_minus.range().unit())
            .expect("difference range is non-degenerate");
        let diff =
            combine_arith(ArithOp::Sub, &f_plus, &f_minus, &diff_range, &self.config.grid)?.density;

        let p_dec = diff.prob_below(-band, true);
        let p_le_band = diff.prob_below(band, false);
        let p_stable = (p_le_band - p_dec).max(F::zero());
        let p_inc = (F::one() - p_le_band).max(F::zero());
        let d = Density::from_probabilities(out_range, vec![p_dec, p_stable, p_inc])?;
        Ok((d, vec![tr_minus, tr_plus]))
    }

    fn criterion_holds(&self, c: &ValidityCriterion, t: &TimeSpec) -> bool {
        match c {
            ValidityCriterion::Always => true,
            ValidityCriterion::ObsWithin { datum, within, min } => {
                let count = self
                    .obs_times(datum)
                    .into_iter()
                    .filter(|ti| match t {
                        TimeSpec::Instant(tp) => ti.distance(*tp) <= *within,
                        TimeSpec::Interval(iv) => {
                            *ti >= iv.start() - *within && *ti <= iv.end() + *within
                        }
                        TimeSpec::Series(s) => {
                            s.points().iter().any(|p| ti.distance(*p) <= *within)
                        }
                    })
                    .count();
                count >= *min
            }
            ValidityCriterion::ObsBefore { datum } => {
                let bound = match t {
                    TimeSpec::Instant(tp) => *tp,
                    TimeSpec::Interval(iv) => iv.end(),
                    TimeSpec::Series(s) => *s.points().last().unwrap(),
                };
                self.obs_times(datum).into_iter().any(|ti| ti <= bound)
            }
            ValidityCriterion::All(cs) => cs.iter().all(|c| self.criterion_holds(c, t)),
        }
    }

    fn expect_instant(&self, name: &str, t: &TimeSpec) -> Result<TimePoint, EngineError> {
        match t {
            TimeSpec::Instant(tp) => Ok(*tp),
            other => Err(EngineError::ShapeMismatch {
                variable: name.to_string(),
                shape: other.shape_name(),
                hint: "",
            }),
        }
    }

    fn obs_iter(&self, datum: &str) -> impl Iterator<Item = &Observation<F>> {
        let mut excluded_once = false;
        let exclude = self.exclude;
        self.store.get(datum).map(Vec::as_slice).unwrap_or(&[]).iter().filter(move |o| {
            if !excluded_once {
                if let Some(ex) = exclude {
                    if ex.datum == o.datum && ex.time == o.time && ex.density == o.density {
                        excluded_once = true;
                        return false;
                    }
                }
            }
            true
        })
    }

    fn obs_times(&self, datum: &str) -> Vec<TimePoint> {
        let mut times: Vec<TimePoint> = self.obs_iter(datum).map(|o| o.time).collect();
        times.dedup();
        times
    }

    fn resolve_datum_at(
        &self,
        name: &str,
        t: TimePoint,
    ) -> Result<(Density<F>, usize), EngineError> {
        let def =
            self.kb.get(name).ok_or_else(|| EngineError::UnknownVariable(name.to_string()))?;
        if !def.is_datum() {
            return Err(EngineError::NotADatum(name.to_string()));
        }
        let at: Vec<&Observation<F>> = self.obs_iter(name).filter(|o| o.time == t).collect();
        self.fuse_observations(name, at, t.to_string())
    }

    fn resolve_datum_interval(
        &self,
        name: &str,
        iv: &TimeInterval,
    ) -> Result<(Density<F>, usize), EngineError> {
        let within: Vec<&Observation<F>> =
            self.obs_iter(name).filter(|o| iv.contains(o.time)).collect();
        self.fuse_observations(name, within, iv.to_string())
    }

    fn fuse_observations(
        &self,
        name: &str,
        obs: Vec<&Observation<F>>,
        time: String,
    ) -> Result<(Density<F>, usize), EngineError> {
        match obs.len() {
            0 => Err(EngineError::MissingDatum { datum: name.to_string(), time }),
            1 => Ok((obs[0].density.clone(), 1)),
            n => {
                let densities: Vec<Density<F>> = obs.iter().map(|o| o.density.clone()).collect();
                Ok((bayes_fuse(&densities)?, n))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{ChainBranch, DurationSpec, KnowledgeBase};

    fn tp(s: &str) -> TimePoint {
        TimePoint::parse(s).unwrap()
    }

    fn at(s: &str) -> TimeSpec {
        TimeSpec::Instant(tp(s))
    }

    fn weight_range() -> Range<f64> {
        Range::cardinal(1.0, 300.0, "kg").unwrap()
    }

    fn fluid_range() -> Range<f64> {
        Range::cardinal(0.0, 20.0, "L").unwrap()
    }

    fn weight_kb() -> KnowledgeBase<f64> {
        crate::kb::tests::weight_kb()
    }

    fn obs_delta(datum: &str, time: &str, x: f64, range: &Range<f64>) -> Observation<f64> {
        Observation {
            datum: datum.into(),
            time: tp(time),
            density: Density::delta(x, range).unwrap(),
        }
    }

    fn obs_uniform(datum: &str, time: &str, lo: f64, hi: f64, range: &Range<f64>) -> Observation<f64> {
        Observation {
            datum: datum.into(),
            time: tp(time),
            density: Density::uniform(lo, hi, range).unwrap(),
        }
    }

    #[test]
    fn constant_and_unknown_variable() {
        let ctx = EvalContext::new(weight_kb());
        let d = ctx.evaluate("UnknownWeight", &at("2024-01-01T10:00")).unwrap();
        assert_eq!(d, Density::uniform(1.0, 300.0, &weight_range()).unwrap());
        assert!(matches!(
            ctx.evaluate("Nope", &at("2024-01-01T10:00")),
            Err(EngineError::UnknownVariable(_))
        ));
    }

    #[test]
    fn nearest_obs_within_radius_returns_delta() {
        let mut ctx = EvalContext::new(weight_kb());
        ctx.report_observation(obs_delta("ReportedWeight", "2024-01-01T08:00", 70.0, &weight_range()))
            .unwrap();
        let d = ctx.evaluate("CurrentWeight", &at("2024-01-01T10:00")).unwrap();
        assert_eq!(d, Density::delta(70.0, &weight_range()).unwrap());
    }

    #[test]
    fn empty_store_bottoms_out_at_unknown_weight() {
        let ctx = EvalContext::new(weight_kb());
        let (d, trace) = ctx.explain("CurrentWeight", &at("2024-01-01T10:00")).unwrap();
        // bit-equal to the stored constant
        assert_eq!(d, Density::uniform(1.0, 300.0, &weight_range()).unwrap());
        let rendered = trace.to_string();
        assert!(rendered.contains("nearest_obs (2)"), "{rendered}");
        assert!(rendered.contains("UnknownWeight"), "{rendered}");

        // second identical call is a cache hit at the root
        let (_, trace) = ctx.explain("CurrentWeight", &at("2024-01-01T10:00")).unwrap();
        assert!(trace.cache_hit && trace.children.is_empty());
    }

    #[test]
    fn resolve_datum_fuses_same_time_observations() {
        let mut ctx = EvalContext::new(weight_kb());
        ctx.report_observation(obs_uniform("ReportedWeight", "2024-01-01T08:00", 68.0, 72.0, &weight_range()))
            .unwrap();
        ctx.report_observation(obs_uniform("ReportedWeight", "2024-01-01T08:00", 69.0, 75.0, &weight_range()))
            .unwrap();
        let d = ctx.resolve_datum("ReportedWeight", tp("2024-01-01T08:00")).unwrap();
        assert_eq!(d, Density::uniform(69.0, 72.0, &weight_range()).unwrap());
        assert!(matches!(
            ctx.resolve_datum("ReportedWeight", tp("2024-01-01T09:00")),
            Err(EngineError::MissingDatum { .. })
        ));
    }

    #[test]
    fn arith_over_interval_uses_interval_observations() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("Volume", fluid_range()).unwrap();
        b.datum("Oral", "Volume").unwrap();
        b.datum("IV", "Volume").unwrap();
        b.inference(
            "Intake",
            "Volume",
            Procedure::Arith { op: ArithOp::Add, left: "Oral".into(), right: "IV".into() },
        )
        .unwrap();
        let mut ctx = EvalContext::new(b.build());
        ctx.report_observation(obs_delta("Oral", "2024-01-01T09:00", 1.0, &fluid_range())).unwrap();
        ctx.report_observation(obs_delta("IV", "2024-01-01T15:00", 0.8, &fluid_range())).unwrap();
        let iv = TimeSpec::Interval(
            TimeInterval::new(tp("2024-01-01T08:00"), tp("2024-01-01T20:00")).unwrap(),
        );
        let d = ctx.evaluate("Intake", &iv).unwrap();
        assert_eq!(d.atoms().len(), 1);
        assert!((d.atoms()[0].at - 1.8).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_recovers_a_line() {
        let mut ctx = EvalContext::new(weight_kb());
        // exactly on a line: 80 kg falling 0.5 kg/day
        for (i, day) in ["01", "03", "05", "07"].iter().enumerate() {
            ctx.report_observation(obs_delta(
                "ReportedWeight",
                &format!("2024-01-{day}T08:00"),
                80.0 - (2.0 * i as f64) * 0.5,
                &weight_range(),
            ))
            .unwrap();
        }
        // outside the 12h nearest-obs radius so the fit branch runs
        let (d, trace) = ctx.explain("CurrentWeight", &at("2024-01-09T08:00")).unwrap();
        let (mean, var) = d.moments().unwrap();
        assert!((mean - 76.0).abs() < 1e-6, "mean {mean}");
        assert!(var < 1e-12, "var {var}");
        assert!(trace.to_string().contains("linear_fit (1)"), "{trace}");
    }

    #[test]
    fn causal_balance_extrapolates_from_anchor() {
        let mut ctx = EvalContext::new(weight_kb());
        ctx.report_observation(obs_delta("AdmissionWeight", "2024-01-01T00:00", 80.0, &weight_range()))
            .unwrap();
        ctx.report_observation(obs_delta("Intake", "2024-01-01T12:00", 2.0, &fluid_range()))
            .unwrap();
        ctx.report_observation(obs_delta("Output", "2024-01-01T18:00", 1.5, &fluid_range()))
            .unwrap();
        // two days later: delta = 1.0/d * (2.0 - 1.5) * 2d = 1.0 kg
        let d = ctx.evaluate("CausalWeightModel", &at("2024-01-03T00:00")).unwrap();
        assert_eq!(d.atoms().len(), 1);
        assert!((d.atoms()[0].at - 81.0).abs() < 1e-9, "{:?}", d.atoms());

        // no intake/output observations -> fallback to the constant
        let d = ctx.evaluate("CausalWeightModel", &at("2023-12-31T00:00")).unwrap();
        assert_eq!(d, Density::uniform(1.0, 300.0, &weight_range()).unwrap());
    }

    #[test]
    fn figure_one_fallback_ladder() {
        let mut ctx = EvalContext::new(weight_kb());
        let query = at("2024-01-10T08:00");

        // nothing available -> UnknownWeight, bit-equal
        let d = ctx.evaluate("CurrentWeight", &query).unwrap();
        assert_eq!(d, Density::uniform(1.0, 300.0, &weight_range()).unwrap());

        // causal inputs only -> causal branch
        ctx.report_observation(obs_delta("AdmissionWeight", "2024-01-08T08:00", 80.0, &weight_range()))
            .unwrap();
        ctx.report_observation(obs_delta("Intake", "2024-01-09T08:00", 2.0, &fluid_range()))
            .unwrap();
        ctx.report_observation(obs_delta("Output", "2024-01-09T09:00", 1.0, &fluid_range()))
            .unwrap();
        let (_, trace) = ctx.explain("CurrentWeight", &query).unwrap();
        assert!(trace.to_string().contains("causal_balance (1)"), "{trace}");

        // three fit points -> empirical branch beats causal
        for day in ["02", "04", "06"] {
            ctx.report_observation(obs_delta(
                "ReportedWeight",
                &format!("2024-01-{day}T08:00"),
                79.0,
                &weight_range(),
            ))
            .unwrap();
        }
        let (_, trace) = ctx.explain("CurrentWeight", &query).unwrap();
        assert!(trace.to_string().contains("linear_fit (1)"), "{trace}");

        // an observation in radius wins outright
        ctx.report_observation(obs_delta("ReportedWeight", "2024-01-10T06:00", 78.0, &weight_range()))
            .unwrap();
        let (d, trace) = ctx.explain("CurrentWeight", &query).unwrap();
        assert!(trace.to_string().contains("nearest_obs (1)"), "{trace}");
        assert_eq!(d, Density::delta(78.0, &weight_range()).unwrap());
    }

    #[test]
    fn report_invalidates_exactly_the_dependents() {
        let mut ctx = EvalContext::new(weight_kb());
        let query = at("2024-01-02T08:00");
        for name in ["CurrentWeight", "EmpiricalWeightModel", "CausalWeightModel"] {
            ctx.evaluate(name, &query).unwrap();
        }
        assert_eq!(ctx.cached_keys().len(), 3);
        let removed = ctx
            .report_observation(obs_delta("ReportedWeight", "2024-01-02T07:00", 70.0, &weight_range()))
            .unwrap();
        let removed_vars: Vec<&str> = removed.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(removed_vars, ["CurrentWeight", "EmpiricalWeightModel"]);
        // CausalWeightModel does not depend on ReportedWeight
        assert_eq!(ctx.cached_keys().len(), 1);

        // an observation with no dependents invalidates nothing... every
        // datum here has dependents, so check a range error instead
        let bad = Observation {
            datum: "Intake".into(),
            time: tp("2024-01-02T08:00"),
            density: Density::delta(70.0, &weight_range()).unwrap(),
        };
        assert!(matches!(
            ctx.report_observation(bad),
            Err(EngineError::ObservationRange(_))
        ));
    }

    #[test]
    fn cache_hits_are_marked_and_transparent() {
        let mut ctx = EvalContext::new(weight_kb());
        ctx.report_observation(obs_delta("ReportedWeight", "2024-01-01T08:00", 70.0, &weight_range()))
            .unwrap();
        let query = at("2024-01-01T10:00");
        let d1 = ctx.evaluate("CurrentWeight", &query).unwrap();
        let (d2, trace) = ctx.explain("CurrentWeight", &query).unwrap();
        assert!(trace.cache_hit);
        assert!(trace.children.is_empty());
        assert_eq!(d1, d2);

        let uncached = EngineConfig { cache_enabled: false, ..EngineConfig::default() };
        let mut ctx2 = EvalContext::with_config(weight_kb(), uncached);
        ctx2.report_observation(obs_delta("ReportedWeight", "2024-01-01T08:00", 70.0, &weight_range()))
            .unwrap();
        let d3 = ctx2.evaluate("CurrentWeight", &query).unwrap();
        assert_eq!(d1, d3);
        assert!(ctx2.cached_keys().is_empty());
    }

    #[test]
    fn trend_labels_deterministic_cases() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("Weight", weight_range()).unwrap();
        b.range("Trend3", Range::ordinal(["decreasing", "stable", "increasing"]).unwrap())
            .unwrap();
        b.datum("W", "Weight").unwrap();
        b.inference(
            "NearW",
            "Weight",
            Procedure::NearestObs {
                datum: "W".into(),
                radius: DurationSpec::Literal(Duration::hours(13)),
                fallback: "NearW_missing".into(),
            },
        )
        .unwrap();
        b.constant(
            "NearW_missing",
            "Weight",
            Density::uniform_over(&weight_range()).unwrap(),
        )
        .unwrap();
        b.inference(
            "WTrend",
            "Trend3",
            Procedure::Trend {
                source: "NearW".into(),
                epsilon: Duration::hours(12),
                stable_band: 0.5,
            },
        )
        .unwrap();
        let kb = b.build();
        assert!(kb.validate().iter().all(|d| d.code != "cycle"));

        let mut ctx = EvalContext::new(kb);
        ctx.report_observation(obs_delta("W", "2024-01-01T08:00", 70.0, &weight_range())).unwrap();
        ctx.report_observation(obs_delta("W", "2024-01-02T08:00", 69.0, &weight_range())).unwrap();
        let d = ctx.evaluate("WTrend", &at("2024-01-01T20:00")).unwrap();
        assert_eq!(d.probabilities(), &[1.0, 0.0, 0.0]); // deterministic drop

        let mut ctx = EvalContext::new(ctx.kb().clone());
        ctx.report_observation(obs_delta("W", "2024-01-01T08:00", 70.0, &weight_range())).unwrap();
        ctx.report_observation(obs_delta("W", "2024-01-02T08:00", 70.0, &weight_range())).unwrap();
        let d = ctx.evaluate("WTrend", &at("2024-01-01T20:00")).unwrap();
        assert_eq!(d.probabilities(), &[0.0, 1.0, 0.0]); // flat
    }

    #[test]
    fn ad_hoc_trend_of_iid_uniform_is_symmetric() {
        let mut ctx = EvalContext::new(weight_kb());
        ctx.report_observation(obs_uniform("ReportedWeight", "2024-01-01T08:00", 69.0, 71.0, &weight_range()))
            .unwrap();
        ctx.report_observation(obs_uniform("ReportedWeight", "2024-01-02T08:00", 69.0, 71.0, &weight_range()))
            .unwrap();
        let d = ctx
            .eval_trend("CurrentWeight", tp("2024-01-01T20:00"), Duration::hours(12), 0.0)
            .unwrap();
        let p = d.probabilities();
        assert!((p[0] - 0.5).abs() < 0.02, "{p:?}");
        assert!(p[1] < 0.02);
        assert!((p[2] - 0.5).abs() < 0.02);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ranked_chain_picks_first_valid_branch() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("Weight", weight_range()).unwrap();
        b.constant("Prior", "Weight", Density::uniform_over(&weight_range()).unwrap()).unwrap();
        b.datum("A", "Weight").unwrap();
        b.datum("B", "Weight").unwrap();
        b.inference(
            "Best",
            "Weight",
            Procedure::RankedChain {
                branches: vec![
                    ChainBranch {
                        procedure: Procedure::NearestObs {
                            datum: "A".into(),
                            radius: DurationSpec::Literal(Duration::hours(12)),
                            fallback: "Prior".into(),
                        },
                        criterion: ValidityCriterion::ObsWithin {
                            datum: "A".into(),
                            within: Duration::hours(12),
                            min: 1,
                        },
                    },
                    ChainBranch {
                        procedure: Procedure::NearestObs {
                            datum: "B".into(),
                            radius: DurationSpec::Literal(Duration::hours(12)),
                            fallback: "Prior".into(),
                        },
                        criterion: ValidityCriterion::ObsWithin {
                            datum: "B".into(),
                            within: Duration::hours(12),
                            min: 1,
                        },
                    },
                    ChainBranch {
                        procedure: Procedure::Ref("Prior".into()),
                        criterion: ValidityCriterion::Always,
                    },
                ],
            },
        )
        .unwrap();
        let mut ctx = EvalContext::new(b.build());
        let query = at("2024-01-01T10:00");

        // all criteria false -> terminal, bit-equal to the constant
        let (d, trace) = ctx.explain("Best", &query).unwrap();
        assert_eq!(d, Density::uniform_over(&weight_range()).unwrap());
        assert!(trace.to_string().contains("chain branch 3 of 3"), "{trace}");

        ctx.report_observation(obs_delta("B", "2024-01-01T09:00", 90.0, &weight_range())).unwrap();
        let (_, trace) = ctx.explain("Best", &query).unwrap();
        assert!(trace.to_string().contains("chain branch 2 of 3"), "{trace}");

        ctx.report_observation(obs_delta("A", "2024-01-01T09:30", 80.0, &weight_range())).unwrap();
        let (d, trace) = ctx.explain("Best", &query).unwrap();
        assert!(trace.to_string().contains("chain branch 1 of 3"), "{trace}");
        assert_eq!(d, Density::delta(80.0, &weight_range()).unwrap());
    }

    #[test]
    fn check_consistency_thresholds() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("Weight", weight_range()).unwrap();
        b.datum("W", "Weight").unwrap();
        b.constant(
            "Band",
            "Weight",
            Density::uniform(65.0, 75.0, &weight_range()).unwrap(),
        )
        .unwrap();
        b.inference("Model", "Weight", Procedure::Ref("Band".into())).unwrap();
        let kb = b.build();

        let ctx = EvalContext::new(kb.clone());
        let ok = obs_delta("W", "2024-01-01T08:00", 70.0, &weight_range());
        assert!(ctx.check_consistency(&ok, "Model").unwrap().is_none());

        let bad = obs_delta("W", "2024-01-01T08:00", 90.0, &weight_range());
        let c = ctx.check_consistency(&bad, "Model").unwrap().unwrap();
        assert_eq!(c.probability, 0.0);
        assert_eq!(c.datum, "W");

        // threshold epsilon: report at p <= epsilon
        let eps = EngineConfig { contradiction_threshold: 0.5, ..EngineConfig::default() };
        let ctx = EvalContext::with_config(kb, eps);
        let wide = Observation {
            datum: "W".into(),
            time: tp("2024-01-01T08:00"),
            density: Density::uniform(70.0, 80.0, &weight_range()).unwrap(),
        };
        // model mass over [70, 80] is 0.5 -> reported at threshold 0.5
        let c = ctx.check_consistency(&wide, "Model").unwrap().unwrap();
        assert!((c.probability - 0.5).abs() < 1e-12);
    }

    #[test]
    fn check_consistency_excludes_the_observation_itself() {
        let mut ctx = EvalContext::new(weight_kb());
        let obs = obs_delta("ReportedWeight", "2024-01-01T08:00", 70.0, &weight_range());
        ctx.report_observation(obs.clone()).unwrap();
        // EmpiricalWeightModel with the obs excluded falls back to the
        // uniform constant, which explains any in-range value
        let c = ctx.check_consistency(&obs, "EmpiricalWeightModel").unwrap();
        assert!(c.is_none());
    }

    #[test]
    fn fusion_contradiction_propagates() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("Weight", weight_range()).unwrap();
        b.constant("A", "Weight", Density::uniform(1.0, 10.0, &weight_range()).unwrap()).unwrap();
        b.constant("B", "Weight", Density::uniform(20.0, 30.0, &weight_range()).unwrap()).unwrap();
        b.inference(
            "Fused",
            "Weight",
            Procedure::BayesFusion { sources: vec!["A".into(), "B".into()] },
        )
        .unwrap();
        let ctx = EvalContext::new(b.build());
        assert!(matches!(
            ctx.evaluate("Fused", &at("2024-01-01T00:00")),
            Err(EngineError::Density(DensityError::Contradiction))
        ));
    }

    #[test]
    fn series_evaluation_maps_instants() {
        let mut ctx = EvalContext::new(weight_kb());
        ctx.report_observation(obs_delta("ReportedWeight", "2024-01-01T08:00", 70.0, &weight_range()))
            .unwrap();
        let series = TimeSeriesSpec::new(vec![tp("2024-01-01T08:00"), tp("2024-01-01T09:00")])
            .unwrap();
        let ds = ctx.evaluate_series("CurrentWeight", &series).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0], ds[1]); // both within radius of the same obs
        assert!(matches!(
            ctx.evaluate("CurrentWeight", &TimeSpec::Series(series)),
            Err(EngineError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn concurrent_evaluations_agree_with_serial() {
        let mut ctx = EvalContext::new(weight_kb());
        ctx.report_observation(obs_delta("ReportedWeight", "2024-01-01T08:00", 70.0, &weight_range()))
            .unwrap();
        let queries: Vec<TimeSpec> =
            (0..8).map(|i| at(&format!("2024-01-01T{:02}:00", 9 + i))).collect();
        let serial: Vec<Density<f64>> =
            queries.iter().map(|q| ctx.evaluate("CurrentWeight", q).unwrap()).collect();
        let parallel: Vec<Density<f64>> = std::thread::scope(|s| {
            let handles: Vec<_> = queries
                .iter()
                .map(|q| s.spawn(|| ctx.evaluate("CurrentWeight", q).unwrap()))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(serial, parallel);
    }

    #[test]
    fn depth_guard_reports_cleanly() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("W", weight_range()).unwrap();
        // self-referential; validate would flag it, the guard keeps eval safe
        b.inference("Loop", "W", Procedure::Ref("Loop".into())).unwrap();
        let ctx = EvalContext::new(b.build());
        assert!(matches!(
            ctx.evaluate("Loop", &at("2024-01-01T00:00")),
            Err(EngineError::DepthExceeded(64))
        ));
    }

    #[test]
    fn constant_radius_drives_nearest_obs() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("W", weight_range()).unwrap();
        b.range("Hours", Range::cardinal(0.0, 48.0, "h").unwrap()).unwrap();
        b.datum("D", "W").unwrap();
        b.constant("U", "W", Density::uniform_over(&weight_range()).unwrap()).unwrap();
        b.constant(
            "R",
            "Hours",
            Density::delta(3.0, &Range::cardinal(0.0, 48.0, "h").unwrap()).unwrap(),
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
        let mut ctx = EvalContext::new(b.build());
        ctx.report_observation(obs_delta("D", "2024-01-01T08:00", 70.0, &weight_range()))
            .unwrap();
        // 2h away: inside the 3h constant radius
        let d = ctx.evaluate("X", &at("2024-01-01T10:00")).unwrap();
        assert_eq!(d, Density::delta(70.0, &weight_range()).unwrap());
        // 4h away: outside
        let d = ctx.evaluate("X", &at("2024-01-01T12:00")).unwrap();
        assert_eq!(d, Density::uniform_over(&weight_range()).unwrap());
    }

    #[test]
    fn orphan_datum_invalidates_nothing() {
        let mut b = KnowledgeBase::<f64>::builder();
        b.range("W", weight_range()).unwrap();
        b.datum("Orphan", "W").unwrap();
        b.datum("D", "W").unwrap();
        b.constant("U", "W", Density::uniform_over(&weight_range()).unwrap()).unwrap();
        b.inference(
            "X",
            "W",
            Procedure::NearestObs {
                datum: "D".into(),
                radius: DurationSpec::Literal(Duration::hours(1)),
                fallback: "U".into(),
            },
        )
        .unwrap();
        let mut ctx = EvalContext::new(b.build());
        ctx.evaluate("X", &at("2024-01-01T10:00")).unwrap();
        let removed = ctx
            .report_observation(obs_delta("Orphan", "2024-01-01T08:00", 50.0, &weight_range()))
            .unwrap();
        assert!(removed.is_empty());
        assert_eq!(ctx.cached_keys().len(), 1);
    }

    #[test]
    fn observation_probability_uses_support() {
        let range = weight_range();
        let model = Density::uniform(65.0, 75.0, &range).unwrap();
        let exact = Density::delta(70.0, &range).unwrap();
        let p = observation_probability(&exact, &model).unwrap();
        assert!((p - 0.1).abs() < 1e-12); // density value at the point

        let inexact = Density::uniform(70.0, 80.0, &range).unwrap();
        let p = observation_probability(&inexact, &model).unwrap();
        assert!((p - 0.5).abs() < 1e-12);

        let disjoint = Density::uniform(80.0, 90.0, &range).unwrap();
        let p = observation_probability(&disjoint, &model).unwrap();
        assert_eq!(p, 0.0);
    }
}
