//! Density representation and point queries.

use rand::Rng;

use super::{DensityError, EventSet, Range};
use crate::scalar::{cmp_real, Real};

/// A point mass inside a cardinal range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom<F> {
    pub at: F,
    pub mass: F,
}

/// One constant-height cell of the numeric part, `lo < hi`, `height >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell<F> {
    pub lo: F,
    pub hi: F,
    pub height: F,
}

impl<F: Real> Cell<F> {
    pub fn mass(&self) -> F {
        self.height * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Body<F> {
    /// One probability per range label, in label order.
    Discrete(Vec<F>),
    /// Sorted atoms plus sorted, non-overlapping cells.
    Continuous { atoms: Vec<Atom<F>>, pieces: Vec<Cell<F>> },
}

/// A normalized probability density over a [`Range`].
///
/// Total mass is one; atoms and cells stay inside the range bounds; the
/// discrete and continuous representations are mutually exclusive by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Density<F> {
    range: Range<F>,
    body: Body<F>,
}

impl<F: Real> Density<F> {
    /// Uniform density on `[lo, hi]` within a cardinal range.
    pub fn uniform(lo: F, hi: F, range: &Range<F>) -> Result<Self, DensityError> {
        let (lower, upper) = cardinal_bounds(range)?;
        if lo >= hi {
            return Err(DensityError::EmptyInterval { lo: lo.as_f64(), hi: hi.as_f64() });
        }
        if lo < lower || hi > upper {
            return Err(out_of_range(if lo < lower { lo } else { hi }, lower, upper));
        }
        let height = F::one() / (hi - lo);
        Ok(Density {
            range: range.clone(),
            body: Body::Continuous { atoms: vec![], pieces: vec![Cell { lo, hi, height }] },
        })
    }

    /// Uniform density over the entire cardinal range (the "unknown" prior).
    pub fn uniform_over(range: &Range<F>) -> Result<Self, DensityError> {
        let (lower, upper) = cardinal_bounds(range)?;
        Density::uniform(lower, upper, range)
    }

    /// Dirac delta: all mass at `x`.
    pub fn delta(x: F, range: &Range<F>) -> Result<Self, DensityError> {
        let (lower, upper) = cardinal_bounds(range)?;
        if x < lower || x > upper || !x.is_finite() {
            return Err(out_of_range(x, lower, upper));
        }
        Ok(Density {
            range: range.clone(),
            body: Body::Continuous {
                atoms: vec![Atom { at: x, mass: F::one() }],
                pieces: vec![],
            },
        })
    }

    /// Normalized pmf from label weights; labels not mentioned get zero.
    pub fn pmf<S: AsRef<str>>(weights: &[(S, F)], range: &Range<F>) -> Result<Self, DensityError> {
        if range.is_cardinal() {
            return Err(DensityError::KindMismatch { expected: "categorical or ordinal", got: "cardinal" });
        }
        let mut probs = vec![F::zero(); range.labels().len()];
        for (label, w) in weights {
            let idx = range
                .label_index(label.as_ref())
                .ok_or_else(|| DensityError::UnknownLabel(label.as_ref().to_string()))?;
            if *w < F::zero() || !w.is_finite() {
                return Err(DensityError::BadWeights);
            }
            probs[idx] = probs[idx] + *w;
        }
        let total = sum(&probs);
        if total <= F::zero() {
            return Err(DensityError::BadWeights);
        }
        for p in &mut probs {
            *p = *p / total;
        }
        Ok(Density { range: range.clone(), body: Body::Discrete(probs) })
    }

    /// Builds a continuous density from raw parts, normalizing total mass.
    pub fn from_parts(
        range: &Range<F>,
        atoms: Vec<Atom<F>>,
        pieces: Vec<Cell<F>>,
    ) -> Result<Self, DensityError> {
        let (lower, upper) = cardinal_bounds(range)?;
        for a in &atoms {
            if a.at < lower || a.at > upper || !a.at.is_finite() {
                return Err(out_of_range(a.at, lower, upper));
            }
            if a.mass < F::zero() || !a.mass.is_finite() {
                return Err(DensityError::BadWeights);
            }
        }
        for c in &pieces {
            if c.lo >= c.hi {
                return Err(DensityError::EmptyInterval { lo: c.lo.as_f64(), hi: c.hi.as_f64() });
            }
            if c.lo < lower || c.hi > upper {
                return Err(out_of_range(if c.lo < lower { c.lo } else { c.hi }, lower, upper));
            }
            if c.height < F::zero() || !c.height.is_finite() {
                return Err(DensityError::BadWeights);
            }
        }
        let atoms = merge_atoms(atoms);
        let pieces = merge_cells(pieces);
        let mut d = Density { range: range.clone(), body: Body::Continuous { atoms, pieces } };
        let total = d.total_mass();
        if total <= F::zero() {
            return Err(DensityError::BadWeights);
        }
        d.scale(F::one() / total);
        Ok(d)
    }

    /// Builds a discrete density from per-label probabilities, normalizing.
    pub fn from_probabilities(range: &Range<F>, probs: Vec<F>) -> Result<Self, DensityError> {
        if range.is_cardinal() || probs.len() != range.labels().len() {
            return Err(DensityError::BadWeights);
        }
        if probs.iter().any(|p| *p < F::zero() || !p.is_finite()) {
            return Err(DensityError::BadWeights);
        }
        let total = sum(&probs);
        if total <= F::zero() {
            return Err(DensityError::BadWeights);
        }
        let probs = probs.into_iter().map(|p| p / total).collect();
        Ok(Density { range: range.clone(), body: Body::Discrete(probs) })
    }

    pub fn range(&self) -> &Range<F> {
        &self.range
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.body, Body::Discrete(_))
    }

    /// Point masses of a continuous density (empty for discrete).
    pub fn atoms(&self) -> &[Atom<F>] {
        match &self.body {
            Body::Continuous { atoms, .. } => atoms,
            Body::Discrete(_) => &[],
        }
    }

    /// Constant-height cells of a continuous density (empty for discrete).
    pub fn pieces(&self) -> &[Cell<F>] {
        match &self.body {
            Body::Continuous { pieces, .. } => pieces,
            Body::Discrete(_) => &[],
        }
    }

    /// Per-label probabilities of a discrete density, in label order.
    pub fn probabilities(&self) -> &[F] {
        match &self.body {
            Body::Discrete(p) => p,
            Body::Continuous { .. } => &[],
        }
    }

    /// `(label, probability)` pairs of a discrete density.
    pub fn pmf_pairs(&self) -> Vec<(&str, F)> {
        self.range
            .labels()
            .iter()
            .map(String::as_str)
            .zip(self.probabilities().iter().copied())
            .collect()
    }

    pub fn total_mass(&self) -> F {
        match &self.body {
            Body::Discrete(p) => sum(p),
            Body::Continuous { atoms, pieces } => {
                let a = atoms.iter().fold(F::zero(), |s, a| s + a.mass);
                pieces.iter().fold(a, |s, c| s + c.mass())
            }
        }
    }

    /// Checks every representation invariant; returns the violation if any.
    pub fn validate(&self) -> Result<(), DensityError> {
        let mass = self.total_mass();
        if (mass - F::one()).abs() > F::mass_tolerance() {
            return Err(DensityError::MassNotOne(mass.as_f64()));
        }
        match &self.body {
            Body::Discrete(p) => {
                if p.len() != self.range.labels().len() {
                    return Err(DensityError::BadWeights);
                }
                if p.iter().any(|x| *x < F::zero() || !x.is_finite()) {
                    return Err(DensityError::BadWeights);
                }
            }
            Body::Continuous { atoms, pieces } => {
                let (lower, upper) = cardinal_bounds(&self.range)?;
                for a in atoms {
                    if a.at < lower || a.at > upper {
                        return Err(out_of_range(a.at, lower, upper));
                    }
                    if a.mass < F::zero() || !a.mass.is_finite() {
                        return Err(DensityError::BadWeights);
                    }
                }
                for w in atoms.windows(2) {
                    if w[0].at >= w[1].at {
                        return Err(DensityError::BadEncoding("atoms not sorted".into()));
                    }
                }
                for c in pieces {
                    if c.lo >= c.hi || c.lo < lower || c.hi > upper {
                        return Err(out_of_range(c.lo, lower, upper));
                    }
                    if c.height < F::zero() || !c.height.is_finite() {
                        return Err(DensityError::BadWeights);
                    }
                }
                for w in pieces.windows(2) {
                    if w[0].hi > w[1].lo {
                        return Err(DensityError::BadEncoding("cells overlap".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Probability the density assigns to an event set.
    pub fn prob_in(&self, event: &EventSet<F>) -> Result<F, DensityError> {
        match (&self.body, event) {
            (Body::Discrete(probs), EventSet::Labels(labels)) => {
                let mut p = F::zero();
                for l in labels {
                    let idx = self
                        .range
                        .label_index(l)
                        .ok_or_else(|| DensityError::UnknownLabel(l.clone()))?;
                    p = p + probs[idx];
                }
                Ok(clamp_unit(p))
            }
            (Body::Continuous { atoms, pieces }, EventSet::Intervals(ivs)) => {
                let (lower, upper) = self.range.bounds();
                let mut p = F::zero();
                for &(lo, hi) in ivs {
                    if lo < lower || hi > upper {
                        return Err(out_of_range(if lo < lower { lo } else { hi }, lower, upper));
                    }
                    for a in atoms {
                        if lo <= a.at && a.at <= hi {
                            p = p + a.mass;
                        }
                    }
                    for c in pieces {
                        let ov_lo = if c.lo > lo { c.lo } else { lo };
                        let ov_hi = if c.hi < hi { c.hi } else { hi };
                        if ov_hi > ov_lo {
                            p = p + c.height * (ov_hi - ov_lo);
                        }
                    }
                }
                Ok(clamp_unit(p))
            }
            (Body::Discrete(_), _) => {
                Err(DensityError::KindMismatch { expected: "label event", got: "interval event" })
            }
            (Body::Continuous { .. }, _) => {
                Err(DensityError::KindMismatch { expected: "interval event", got: "label event" })
            }
        }
    }

    /// `P(X <= x)` (or `P(X < x)` when `strict`) for a continuous density.
    pub fn prob_below(&self, x: F, strict: bool) -> F {
        let mut p = F::zero();
        for a in self.atoms() {
            if a.at < x || (!strict && a.at == x) {
                p = p + a.mass;
            }
        }
        for c in self.pieces() {
            if c.hi <= x {
                p = p + c.mass();
            } else if c.lo < x {
                p = p + c.height * (x - c.lo);
            }
        }
        clamp_unit(p)
    }

    /// Cumulative distribution `P(X <= x)`.
    pub fn cdf(&self, x: F) -> F {
        self.prob_below(x, false)
    }

    /// Piece height at `x`. Cells are read as `[lo, hi)` so a shared edge
    /// belongs to the right cell; the final cell includes its upper edge.
    pub fn height_at(&self, x: F) -> F {
        let pieces = self.pieces();
        for (i, c) in pieces.iter().enumerate() {
            if c.lo <= x && (x < c.hi || (x == c.hi && i + 1 == pieces.len())) {
                return c.height;
            }
        }
        F::zero()
    }

    /// Atom mass exactly at `x`.
    pub fn atom_mass_at(&self, x: F) -> F {
        self.atoms()
            .iter()
            .find(|a| a.at == x)
            .map(|a| a.mass)
            .unwrap_or_else(F::zero)
    }

    /// Support-membership weight at a point: atom mass plus piece height.
    /// Positive exactly where the density can explain an exact observation.
    pub fn point_weight(&self, x: F) -> F {
        self.atom_mass_at(x) + self.height_at(x)
    }

    /// Exact mean and variance of a continuous density.
    pub fn moments(&self) -> Result<(F, F), DensityError> {
        if self.is_discrete() {
            return Err(DensityError::KindMismatch { expected: "cardinal", got: self.range.kind().name() });
        }
        let two = F::of(2.0);
        let three = F::of(3.0);
        let mut m1 = F::zero();
        let mut m2 = F::zero();
        for a in self.atoms() {
            m1 = m1 + a.mass * a.at;
            m2 = m2 + a.mass * a.at * a.at;
        }
        for c in self.pieces() {
            m1 = m1 + c.height * (c.hi * c.hi - c.lo * c.lo) / two;
            m2 = m2 + c.height * (c.hi * c.hi * c.hi - c.lo * c.lo * c.lo) / three;
        }
        let var = (m2 - m1 * m1).max(F::zero());
        Ok((m1, var))
    }

    /// Left-continuous inverse CDF: the smallest `x` with `cdf(x) >= p`.
    ///
    /// Works on the critical points (atom locations and cell edges): between
    /// two consecutive critical points the CDF rises linearly, so the target
    /// is either a flat-or-jump point itself or a linear inversion inside
    /// the preceding stretch. Atoms inside a cell's span are handled by the
    /// exact `cdf` evaluations at the critical points.
    pub fn quantile(&self, p: F) -> Result<F, DensityError> {
        if self.is_discrete() {
            return Err(DensityError::KindMismatch { expected: "cardinal", got: self.range.kind().name() });
        }
        if !(F::zero()..=F::one()).contains(&p) || p.is_nan() {
            return Err(DensityError::BadProbability(p.as_f64()));
        }
        let mut points: Vec<F> = self.atoms().iter().map(|a| a.at).collect();
        for c in self.pieces() {
            points.push(c.lo);
            points.push(c.hi);
        }
        points.sort_by(cmp_real);
        points.dedup_by(|a, b| a == b);
        if points.is_empty() {
            return Ok(self.range.bounds().0);
        }
        let half = F::of(0.5);
        let mut prev: Option<(F, F)> = None; // (x, cdf(x))
        for &x in &points {
            let fx = self.cdf(x);
            if fx >= p {
                let (px, fp) = match prev {
                    Some(v) => v,
                    None => return Ok(x), // all mass at or after the first point
                };
                // constant height on the open stretch (px, x)
                let h = self.height_at((px + x) * half);
                if h > F::zero() {
                    let candidate = px + (p - fp) / h;
                    if candidate < x {
                        return Ok(candidate);
                    }
                }
                return Ok(x);
            }
            prev = Some((x, fx));
        }
        Ok(points[points.len() - 1])
    }

    /// Smallest and largest support coordinates of a continuous density.
    pub fn support_bounds(&self) -> Option<(F, F)> {
        let mut lo: Option<F> = None;
        let mut hi: Option<F> = None;
        let mut push = |a: F, b: F| {
            lo = Some(match lo {
                Some(v) if v <= a => v,
                _ => a,
            });
            hi = Some(match hi {
                Some(v) if v >= b => v,
                _ => b,
            });
        };
        for a in self.atoms() {
            push(a.at, a.at);
        }
        for c in self.pieces() {
            push(c.lo, c.hi);
        }
        lo.zip(hi)
    }

    /// Structural comparison with per-component tolerance.
    pub fn approx_eq(&self, other: &Self, tol: F) -> bool {
        if self.range != other.range {
            return false;
        }
        match (&self.body, &other.body) {
            (Body::Discrete(a), Body::Discrete(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (*x - *y).abs() <= tol)
            }
            (
                Body::Continuous { atoms: a1, pieces: p1 },
                Body::Continuous { atoms: a2, pieces: p2 },
            ) => {
                a1.len() == a2.len()
                    && p1.len() == p2.len()
                    && a1.iter().zip(a2).all(|(x, y)| {
                        (x.at - y.at).abs() <= tol && (x.mass - y.mass).abs() <= tol
                    })
                    && p1.iter().zip(p2).all(|(x, y)| {
                        (x.lo - y.lo).abs() <= tol
                            && (x.hi - y.hi).abs() <= tol
                            && (x.height - y.height).abs() <= tol
                    })
            }
            _ => false,
        }
    }

    pub(super) fn new_continuous(range: Range<F>, atoms: Vec<Atom<F>>, pieces: Vec<Cell<F>>) -> Self {
        Density { range, body: Body::Continuous { atoms, pieces } }
    }

    pub(super) fn new_discrete(range: Range<F>, probs: Vec<F>) -> Self {
        Density { range, body: Body::Discrete(probs) }
    }

    /// Multiplies every mass and height; used to renormalize.
    pub(super) fn scale(&mut self, factor: F) {
        match &mut self.body {
            Body::Discrete(p) => {
                for x in p {
                    *x = *x * factor;
                }
            }
            Body::Continuous { atoms, pieces } => {
                for a in atoms {
                    a.mass = a.mass * factor;
                }
                for c in pieces {
                    c.height = c.height * factor;
                }
            }
        }
    }

    /// Splits the piece part into roughly equal-mass point masses, at most
    /// `n` plus one per cell. Exact atoms are not included.
    pub(super) fn equal_mass_points(&self, n: usize) -> Vec<(F, F)> {
        let pieces = self.pieces();
        let piece_mass = pieces.iter().fold(F::zero(), |s, c| s + c.mass());
        if piece_mass <= F::zero() {
            return vec![];
        }
        let target = piece_mass / F::from_usize(n.max(1)).unwrap();
        let mut out = Vec::with_capacity(n + pieces.len());
        let half = F::of(0.5);
        for c in pieces {
            let mass = c.mass();
            if mass <= F::zero() {
                continue;
            }
            // rounding keeps the total near n; ceil would double it when
            // every cell sits at the target mass already
            let k = (mass / target).round().to_usize().unwrap_or(1).max(1);
            let kf = F::from_usize(k).unwrap();
            let width = (c.hi - c.lo) / kf;
            let m = mass / kf;
            for j in 0..k {
                let x = c.lo + width * (F::from_usize(j).unwrap() + half);
                out.push((x, m));
            }
        }
        out
    }

    fn ordered_segments(&self) -> Vec<Segment<F>> {
        let mut segs: Vec<Segment<F>> = Vec::with_capacity(self.atoms().len() + self.pieces().len());
        for a in self.atoms() {
            segs.push(Segment::Atom(a.at, a.mass));
        }
        for c in self.pieces() {
            segs.push(Segment::Cell(c.lo, c.hi, c.height));
        }
        segs.sort_by(|a, b| cmp_real(&a.start(), &b.start()).then(a.order_class().cmp(&b.order_class())));
        segs
    }
}

#[derive(Debug, Clone, Copy)]
enum Segment<F> {
    Atom(F, F),
    Cell(F, F, F),
}

impl<F: Real> Segment<F> {
    fn start(&self) -> F {
        match *self {
            Segment::Atom(at, _) => at,
            Segment::Cell(lo, _, _) => lo,
        }
    }

    // atoms before cells at the same coordinate: the jump happens at x
    fn order_class(&self) -> u8 {
        match self {
            Segment::Atom(..) => 0,
            Segment::Cell(..) => 1,
        }
    }
}

/// Draws values from a continuous density by inverse-CDF over a precomputed
/// cumulative table; used by Monte-Carlo verification.
pub struct DensitySampler<F> {
    segments: Vec<(F, Segment<F>)>, // (cumulative mass before segment, segment)
    total: F,
}

impl<F: Real> DensitySampler<F> {
    pub fn new(density: &Density<F>) -> Result<Self, DensityError> {
        if density.is_discrete() {
            return Err(DensityError::KindMismatch {
                expected: "cardinal",
                got: density.range().kind().name(),
            });
        }
        let mut cum = F::zero();
        let mut segments = Vec::new();
        for seg in density.ordered_segments() {
            segments.push((cum, seg));
            cum = cum + match seg {
                Segment::Atom(_, m) => m,
                Segment::Cell(lo, hi, h) => h * (hi - lo),
            };
        }
        Ok(DensitySampler { segments, total: cum })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        let u = F::of(rng.random::<f64>()) * self.total;
        let idx = self.segments.partition_point(|(c, _)| *c <= u).saturating_sub(1);
        match self.segments[idx] {
            (_, Segment::Atom(at, _)) => at,
            (c, Segment::Cell(lo, hi, h)) => {
                if h <= F::zero() {
                    return lo;
                }
                let x = lo + (u - c) / h;
                if x > hi {
                    hi
                } else {
                    x
                }
            }
        }
    }
}

/// Sums atoms at identical locations and sorts; drops zero-mass atoms.
pub(super) fn merge_atoms<F: Real>(mut atoms: Vec<Atom<F>>) -> Vec<Atom<F>> {
    atoms.retain(|a| a.mass > F::zero());
    atoms.sort_by(|a, b| cmp_real(&a.at, &b.at));
    let mut out: Vec<Atom<F>> = Vec::with_capacity(atoms.len());
    for a in atoms {
        match out.last_mut() {
            Some(last) if last.at == a.at => last.mass = last.mass + a.mass,
            _ => out.push(a),
        }
    }
    out
}

/// Rebuilds a sorted, non-overlapping cell list from arbitrary (possibly
/// overlapping) cells by summing heights over the edge refinement. Adjacent
/// cells with identical heights coalesce.
pub(super) fn merge_cells<F: Real>(cells: Vec<Cell<F>>) -> Vec<Cell<F>> {
    if cells.len() <= 1 {
        let mut cells = cells;
        cells.retain(|c| c.height > F::zero());
        return cells;
    }
    let mut events: Vec<(F, F)> = Vec::with_capacity(cells.len() * 2);
    for c in &cells {
        if c.height > F::zero() {
            events.push((c.lo, c.height));
            events.push((c.hi, -c.height));
        }
    }
    events.sort_by(|a, b| cmp_real(&a.0, &b.0));
    let mut out: Vec<Cell<F>> = Vec::new();
    let mut height = F::zero();
    let mut prev: Option<F> = None;
    let mut i = 0;
    while i < events.len() {
        let coord = events[i].0;
        if let Some(pc) = prev {
            if coord > pc && height > F::zero() {
                match out.last_mut() {
                    Some(last) if last.hi == pc && last.height == height => last.hi = coord,
                    _ => out.push(Cell { lo: pc, hi: coord, height }),
                }
            }
        }
        while i < events.len() && events[i].0 == coord {
            height = height + events[i].1;
            i += 1;
        }
        if height < F::zero() {
            height = F::zero();
        }
        prev = Some(coord);
    }
    out
}

fn cardinal_bounds<F: Real>(range: &Range<F>) -> Result<(F, F), DensityError> {
    match range {
        Range::Cardinal { lower, upper, .. } => Ok((*lower, *upper)),
        other => Err(DensityError::KindMismatch { expected: "cardinal", got: other.kind().name() }),
    }
}

fn out_of_range<F: Real>(value: F, lower: F, upper: F) -> DensityError {
    DensityError::OutOfRange { value: value.as_f64(), lower: lower.as_f64(), upper: upper.as_f64() }
}

fn clamp_unit<F: Real>(p: F) -> F {
    p.max(F::zero()).min(F::one())
}

fn sum<F: Real>(xs: &[F]) -> F {
    xs.iter().fold(F::zero(), |s, x| s + *x)
}
