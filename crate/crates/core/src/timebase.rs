//! Time shapes: instants, intervals and series, plus the predicates the
//! interpolation procedures need (radius membership, nearest observation).
//!
//! Timestamps are UTC with second resolution; durations are signed whole
//! seconds written as `<int><unit>` with units `s`, `m`, `h`, `d`.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use chrono::{DateTime, NaiveDateTime, SecondsFormat, TimeZone, Utc};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("unparseable timestamp `{0}` (expected ISO-8601, e.g. 2024-01-01T08:00:00Z)")]
    BadTimestamp(String),
    #[error("unparseable duration `{0}` (expected <int><unit> with unit s, m, h or d)")]
    BadDuration(String),
    #[error("radius must be non-negative, got {0}")]
    NegativeRadius(Duration),
    #[error("interval end precedes start")]
    IntervalOrder,
    #[error("time series must be non-empty and strictly increasing")]
    BadSeries,
    #[error("no time points to search")]
    EmptySeries,
    #[error("k must be at least 1")]
    ZeroK,
}

/// An absolute instant, UTC, truncated to whole seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimePoint(DateTime<Utc>);

impl TimePoint {
    pub fn from_unix(secs: i64) -> Self {
        TimePoint(Utc.timestamp_opt(secs, 0).single().expect("timestamp in range"))
    }

    pub fn unix(&self) -> i64 {
        self.0.timestamp()
    }

    /// Parses ISO-8601. Accepts an explicit offset (`...Z`, `...+02:00`) or a
    /// naive timestamp, which is taken as UTC; seconds may be omitted.
    pub fn parse(s: &str) -> Result<Self, TimeError> {
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(TimePoint::from_unix(dt.timestamp()));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M"] {
            if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(TimePoint::from_unix(naive.and_utc().timestamp()));
            }
        }
        Err(TimeError::BadTimestamp(s.to_string()))
    }

    /// Signed distance `self - earlier`.
    pub fn since(&self, earlier: TimePoint) -> Duration {
        Duration::seconds(self.unix() - earlier.unix())
    }

    /// Unsigned distance between two instants.
    pub fn distance(&self, other: TimePoint) -> Duration {
        self.since(other).abs()
    }
}

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.to_rfc3339_opts(SecondsFormat::Secs, true))
    }
}

impl Add<Duration> for TimePoint {
    type Output = TimePoint;
    fn add(self, d: Duration) -> TimePoint {
        TimePoint::from_unix(self.unix() + d.secs)
    }
}

impl Sub<Duration> for TimePoint {
    type Output = TimePoint;
    fn sub(self, d: Duration) -> TimePoint {
        TimePoint::from_unix(self.unix() - d.secs)
    }
}

/// A signed length of time in whole seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Duration {
    secs: i64,
}

impl Duration {
    pub const fn seconds(secs: i64) -> Self {
        Duration { secs }
    }
    pub const fn minutes(m: i64) -> Self {
        Duration { secs: m * 60 }
    }
    pub const fn hours(h: i64) -> Self {
        Duration { secs: h * 3600 }
    }
    pub const fn days(d: i64) -> Self {
        Duration { secs: d * 86_400 }
    }

    pub fn as_seconds(&self) -> i64 {
        self.secs
    }

    pub fn is_negative(&self) -> bool {
        self.secs < 0
    }

    pub fn is_positive(&self) -> bool {
        self.secs > 0
    }

    pub fn abs(&self) -> Duration {
        Duration::seconds(self.secs.abs())
    }

    /// Parses `<int><unit>` with unit `s`, `m`, `h` or `d`.
    pub fn parse(s: &str) -> Result<Self, TimeError> {
        let err = || TimeError::BadDuration(s.to_string());
        let (digits, unit) = s.split_at(s.len().saturating_sub(1));
        let n: i64 = digits.parse().map_err(|_| err())?;
        match unit {
            "s" => Ok(Duration::seconds(n)),
            "m" => Ok(Duration::minutes(n)),
            "h" => Ok(Duration::hours(n)),
            "d" => Ok(Duration::days(n)),
            _ => Err(err()),
        }
    }
}

impl fmt::Display for Duration {
    /// Largest unit that divides evenly, so `Display` then `parse` round-trips.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.secs;
        if s % 86_400 == 0 && s != 0 {
            write!(f, "{}d", s / 86_400)
        } else if s % 3600 == 0 && s != 0 {
            write!(f, "{}h", s / 3600)
        } else if s % 60 == 0 && s != 0 {
            write!(f, "{}m", s / 60)
        } else {
            write!(f, "{}s", s)
        }
    }
}

impl Add for Duration {
    type Output = Duration;
    fn add(self, rhs: Duration) -> Duration {
        Duration::seconds(self.secs + rhs.secs)
    }
}

impl Sub for Duration {
    type Output = Duration;
    fn sub(self, rhs: Duration) -> Duration {
        Duration::seconds(self.secs - rhs.secs)
    }
}

impl Neg for Duration {
    type Output = Duration;
    fn neg(self) -> Duration {
        Duration::seconds(-self.secs)
    }
}

/// A closed span of time, `start <= end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeInterval {
    start: TimePoint,
    end: TimePoint,
}

impl TimeInterval {
    pub fn new(start: TimePoint, end: TimePoint) -> Result<Self, TimeError> {
        if start > end {
            return Err(TimeError::IntervalOrder);
        }
        Ok(TimeInterval { start, end })
    }

    pub fn start(&self) -> TimePoint {
        self.start
    }

    pub fn end(&self) -> TimePoint {
        self.end
    }

    pub fn length(&self) -> Duration {
        self.end.since(self.start)
    }

    pub fn contains(&self, t: TimePoint) -> bool {
        self.start <= t && t <= self.end
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// A strictly increasing, non-empty sequence of instants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeSeriesSpec {
    points: Vec<TimePoint>,
}

impl TimeSeriesSpec {
    pub fn new(points: Vec<TimePoint>) -> Result<Self, TimeError> {
        if points.is_empty() || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TimeError::BadSeries);
        }
        Ok(TimeSeriesSpec { points })
    }

    pub fn points(&self) -> &[TimePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // by invariant
    }
}

/// The three time shapes a query can take.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimeSpec {
    Instant(TimePoint),
    Interval(TimeInterval),
    Series(TimeSeriesSpec),
}

impl TimeSpec {
    pub fn shape_name(&self) -> &'static str {
        match self {
            TimeSpec::Instant(_) => "instant",
            TimeSpec::Interval(_) => "interval",
            TimeSpec::Series(_) => "series",
        }
    }
}

impl fmt::Display for TimeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeSpec::Instant(t) => write!(f, "{t}"),
            TimeSpec::Interval(iv) => write!(f, "{iv}"),
            TimeSpec::Series(s) => {
                let mut first = true;
                for p in s.points() {
                    if !first {
                        write!(f, ",")?;
                    }
                    write!(f, "{p}")?;
                    first = false;
                }
                Ok(())
            }
        }
    }
}

/// Is `obs` within `radius` of `t`? Symmetric in `|t - obs|`.
pub fn within_radius(t: TimePoint, obs: TimePoint, radius: Duration) -> Result<bool, TimeError> {
    if radius.is_negative() {
        return Err(TimeError::NegativeRadius(radius));
    }
    Ok(t.distance(obs) <= radius)
}

/// The point of `ts` closest to `t`; ties break toward the earlier point.
pub fn nearest(ts: &[TimePoint], t: TimePoint) -> Result<TimePoint, TimeError> {
    ts.iter()
        .copied()
        .min_by(|a, b| a.distance(t).cmp(&b.distance(t)).then(a.cmp(b)))
        .ok_or(TimeError::EmptySeries)
}

/// Up to `k` distinct points of `ts` closest to `t`, as a valid series.
/// Ties in distance break toward the earlier point.
pub fn k_nearest(ts: &[TimePoint], t: TimePoint, k: usize) -> Result<TimeSeriesSpec, TimeError> {
    if k == 0 {
        return Err(TimeError::ZeroK);
    }
    let mut distinct: Vec<TimePoint> = ts.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.is_empty() {
        return Err(TimeError::EmptySeries);
    }
    distinct.sort_by(|a, b| a.distance(t).cmp(&b.distance(t)).then(a.cmp(b)));
    distinct.truncate(k);
    distinct.sort_unstable();
    TimeSeriesSpec::new(distinct)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tp(s: &str) -> TimePoint {
        TimePoint::parse(s).unwrap()
    }

    #[test]
    fn parse_accepts_iso_variants() {
        assert_eq!(tp("2024-01-01T08:00:00Z"), tp("2024-01-01T08:00"));
        assert_eq!(tp("2024-01-01T10:00:00+02:00"), tp("2024-01-01T08:00:00Z"));
        assert!(TimePoint::parse("Day1T08:00").is_err());
    }

    #[test]
    fn display_roundtrips() {
        let t = tp("2024-03-05T23:59:59Z");
        assert_eq!(TimePoint::parse(&t.to_string()).unwrap(), t);
        for d in ["12h", "30d", "90s", "5m", "-3h"] {
            assert_eq!(Duration::parse(d).unwrap().to_string(), d);
        }
        assert_eq!(Duration::seconds(86_400).to_string(), "1d");
        assert_eq!(Duration::parse("bogus"), Err(TimeError::BadDuration("bogus".into())));
    }

    #[test]
    fn within_radius_cases() {
        let t = tp("2024-01-01T10:00:00Z");
        let obs = tp("2024-01-01T08:00:00Z");
        assert!(within_radius(t, obs, Duration::hours(12)).unwrap());
        assert!(within_radius(t, t, Duration::seconds(0)).unwrap());
        // day 3 vs day 1 at 24h radius
        let day3 = tp("2024-01-03T08:00:00Z");
        assert!(!within_radius(day3, obs, Duration::hours(24)).unwrap());
        assert!(within_radius(t, obs, Duration::seconds(-1)).is_err());
        // symmetry
        assert_eq!(
            within_radius(t, obs, Duration::hours(2)).unwrap(),
            within_radius(obs, t, Duration::hours(2)).unwrap()
        );
    }

    #[test]
    fn nearest_prefers_earlier_on_tie() {
        let ts = [tp("2024-01-01T07:00"), tp("2024-01-01T09:00")];
        assert_eq!(nearest(&ts, tp("2024-01-01T08:00")).unwrap(), ts[0]);

        let ts = [tp("2024-01-01T08:00"), tp("2024-01-01T08:30"), tp("2024-01-01T10:00")];
        assert_eq!(nearest(&ts, tp("2024-01-01T08:40")).unwrap(), ts[1]);
        assert!(nearest(&[], tp("2024-01-01T08:40")).is_err());
    }

    #[test]
    fn k_nearest_saturates_and_sorts() {
        let ts = [tp("2024-01-03T00:00"), tp("2024-01-01T00:00"), tp("2024-01-02T00:00")];
        let got = k_nearest(&ts, tp("2024-01-02T06:00"), 10).unwrap();
        assert_eq!(got.len(), 3);
        assert!(got.points().windows(2).all(|w| w[0] < w[1]));

        let two = k_nearest(&ts, tp("2024-01-02T06:00"), 2).unwrap();
        assert_eq!(two.points(), &[tp("2024-01-02T00:00"), tp("2024-01-03T00:00")]);
        assert!(k_nearest(&ts, tp("2024-01-01T00:00"), 0).is_err());
    }

    #[test]
    fn interval_and_series_invariants() {
        let a = tp("2024-01-01T00:00");
        let b = tp("2024-01-02T00:00");
        assert!(TimeInterval::new(b, a).is_err());
        let iv = TimeInterval::new(a, b).unwrap();
        assert_eq!(iv.length(), Duration::days(1));
        assert!(TimeSeriesSpec::new(vec![]).is_err());
        assert!(TimeSeriesSpec::new(vec![a, a]).is_err());
        assert!(TimeSeriesSpec::new(vec![a, b]).is_ok());
    }
}
