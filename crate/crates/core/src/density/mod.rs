//! A closed algebra of one-dimensional probability densities.
//!
//! Cardinal variables carry point masses (atoms) plus a piecewise-constant
//! numeric part; categorical and ordinal variables carry a pmf over their
//! labels. Uniform and Dirac densities are exact; products and convolutions
//! that leave the piecewise-constant family are re-projected onto a grid
//! controlled by [`GridPolicy`]. Every operation returns a normalized
//! density, so long chains of operations stay within tolerance.

mod arith;
mod fuse;
mod io;
mod repr;

pub use arith::{combine_arith, ArithOp, Combined};
pub use fuse::{bayes_fuse, mixture, threshold_map, Partition};
pub use repr::{Atom, Cell, Density, DensitySampler};

use thiserror::Error;

use crate::scalar::{cmp_real, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("value {value} outside range [{lower}, {upper}]")]
    OutOfRange { value: f64, lower: f64, upper: f64 },
    #[error("empty interval: lo must be strictly below hi (got {lo}, {hi})")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("operation needs a {expected} range, got {got}")]
    KindMismatch { expected: &'static str, got: &'static str },
    #[error("ranges differ between operands")]
    RangeMismatch,
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("weights must be non-negative with a positive sum")]
    BadWeights,
    #[error("mixture weights must be non-negative and sum to 1")]
    BadMixtureWeights,
    #[error("divisor support intersects the zero neighborhood (half-width {0})")]
    Singularity(f64),
    #[error("contradiction: evidence product has zero total mass")]
    Contradiction,
    #[error("result support does not intersect the output range")]
    EmptyOverlap,
    #[error("partition does not tile the range: {0}")]
    BadPartition(String),
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("density mass {0} differs from 1 beyond tolerance")]
    MassNotOne(f64),
    #[error("invalid range: {0}")]
    BadRange(String),
    #[error("invalid density encoding: {0}")]
    BadEncoding(String),
}

/// Classification of a range's elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeKind {
    Categorical,
    Ordinal,
    Cardinal,
}

impl RangeKind {
    pub fn name(self) -> &'static str {
        match self {
            RangeKind::Categorical => "categorical",
            RangeKind::Ordinal => "ordinal",
            RangeKind::Cardinal => "cardinal",
        }
    }
}

/// The collectively exhaustive, mutually exclusive value set of a variable.
///
/// Categorical labels are unordered; ordinal labels carry their declared
/// order; cardinal ranges are bounded real intervals with a unit string.
#[derive(Debug, Clone, PartialEq)]
pub enum Range<F> {
    Categorical { labels: Vec<String> },
    Ordinal { labels: Vec<String> },
    Cardinal { lower: F, upper: F, unit: String },
}

impl<F: Real> Range<F> {
    pub fn categorical<I, S>(labels: I) -> Result<Self, DensityError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels = collect_labels(labels)?;
        Ok(Range::Categorical { labels })
    }

    pub fn ordinal<I, S>(labels: I) -> Result<Self, DensityError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels = collect_labels(labels)?;
        Ok(Range::Ordinal { labels })
    }

    pub fn cardinal(lower: F, upper: F, unit: &str) -> Result<Self, DensityError> {
        if !lower.is_finite() || !upper.is_finite() || lower >= upper {
            return Err(DensityError::BadRange(format!(
                "cardinal bounds must be finite with lower < upper (got {lower}, {upper})"
            )));
        }
        Ok(Range::Cardinal { lower, upper, unit: unit.to_string() })
    }

    /// The ordinal range used by trend inferences.
    pub fn trend_labels() -> Self {
        Range::Ordinal {
            labels: vec!["decreasing".into(), "stable".into(), "increasing".into()],
        }
    }

    pub fn kind(&self) -> RangeKind {
        match self {
            Range::Categorical { .. } => RangeKind::Categorical,
            Range::Ordinal { .. } => RangeKind::Ordinal,
            Range::Cardinal { .. } => RangeKind::Cardinal,
        }
    }

    pub fn is_cardinal(&self) -> bool {
        matches!(self, Range::Cardinal { .. })
    }

    pub fn labels(&self) -> &[String] {
        match self {
            Range::Categorical { labels } | Range::Ordinal { labels } => labels,
            Range::Cardinal { .. } => &[],
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels().iter().position(|l| l == label)
    }

    /// Cardinal bounds; panics on label ranges (callers check `kind` first).
    pub fn bounds(&self) -> (F, F) {
        match self {
            Range::Cardinal { lower, upper, .. } => (*lower, *upper),
            _ => panic!("bounds() on a label range"),
        }
    }

    pub fn unit(&self) -> &str {
        match self {
            Range::Cardinal { unit, .. } => unit,
            _ => "",
        }
    }

    pub fn span(&self) -> F {
        let (lo, hi) = self.bounds();
        hi - lo
    }

    pub fn contains(&self, x: F) -> bool {
        match self {
            Range::Cardinal { lower, upper, .. } => *lower <= x && x <= *upper,
            _ => false,
        }
    }

}

fn collect_labels<I, S>(labels: I) -> Result<Vec<String>, DensityError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
    if labels.is_empty() {
        return Err(DensityError::BadRange("label set must be non-empty".into()));
    }
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(DensityError::BadRange(format!("duplicate label `{l}`")));
        }
    }
    Ok(labels)
}

/// An event: a label subset or a finite union of closed intervals.
///
/// Interval constructors canonicalize: intervals are sorted and overlapping
/// or touching intervals are merged, which leaves the represented set (and
/// hence every probability) unchanged.
#[derive(Debug, Clone, PartialEq)]
pub enum EventSet<F> {
    Labels(Vec<String>),
    Intervals(Vec<(F, F)>),
}

impl<F: Real> EventSet<F> {
    pub fn labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v: Vec<String> = labels.into_iter().map(Into::into).collect();
        v.sort();
        v.dedup();
        EventSet::Labels(v)
    }

    pub fn interval(lo: F, hi: F) -> Result<Self, DensityError> {
        EventSet::intervals(vec![(lo, hi)])
    }

    pub fn intervals(mut ivs: Vec<(F, F)>) -> Result<Self, DensityError> {
        for &(lo, hi) in &ivs {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(DensityError::EmptyInterval { lo: lo.as_f64(), hi: hi.as_f64() });
            }
        }
        ivs.sort_by(|a, b| cmp_real(&a.0, &b.0).then(cmp_real(&a.1, &b.1)));
        let mut merged: Vec<(F, F)> = Vec::with_capacity(ivs.len());
        for (lo, hi) in ivs {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => {
                    if hi > last.1 {
                        last.1 = hi;
                    }
                }
                _ => merged.push((lo, hi)),
            }
        }
        Ok(EventSet::Intervals(merged))
    }
}

/// Grid used when an exact result would leave the piecewise-constant family
/// (piece-piece convolutions, and atom/piece divisions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPolicy<F> {
    /// Output cell count for re-projected results.
    pub resolution: usize,
    /// Division guard: the divisor's support must avoid a zero neighborhood
    /// of half-width `range span * div_guard_fraction`.
    pub div_guard_fraction: F,
}

impl<F: Real> GridPolicy<F> {
    pub const MIN_RESOLUTION: usize = 8;
    pub const DEFAULT_RESOLUTION: usize = 512;

    pub fn new(resolution: usize) -> Self {
        GridPolicy {
            resolution: resolution.max(Self::MIN_RESOLUTION),
            div_guard_fraction: F::of(1e-6),
        }
    }
}

impl<F: Real> Default for GridPolicy<F> {
    fn default() -> Self {
        GridPolicy::new(Self::DEFAULT_RESOLUTION)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_constructors_enforce_invariants() {
        assert!(Range::<f64>::cardinal(0.0, 120.0, "years").is_ok());
        assert!(Range::<f64>::cardinal(5.0, 5.0, "x").is_err());
        assert!(Range::<f64>::cardinal(10.0, 5.0, "x").is_err());
        assert!(Range::<f64>::cardinal(0.0, f64::INFINITY, "x").is_err());
        assert!(Range::<f64>::categorical(["female", "male"]).is_ok());
        assert!(Range::<f64>::categorical(["a", "a"]).is_err());
        assert!(Range::<f64>::ordinal(Vec::<String>::new()).is_err());
    }

    #[test]
    fn event_set_canonicalizes() {
        let e = EventSet::intervals(vec![(2.0, 3.0), (0.0, 1.5), (1.0, 2.0)]).unwrap();
        assert_eq!(e, EventSet::Intervals(vec![(0.0, 3.0)]));
        let e = EventSet::intervals(vec![(5.0, 5.0), (1.0, 2.0)]).unwrap();
        assert_eq!(e, EventSet::Intervals(vec![(1.0, 2.0), (5.0, 5.0)]));
        assert!(EventSet::interval(3.0, 2.0).is_err());
    }

    #[test]
    fn grid_policy_floors_resolution() {
        assert_eq!(GridPolicy::<f64>::new(2).resolution, 8);
        assert_eq!(GridPolicy::<f64>::default().resolution, 512);
    }
}
