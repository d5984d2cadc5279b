//! Evidence fusion, mixtures and cardinal-to-label threshold mapping.

use super::repr::{merge_atoms, merge_cells, Atom, Cell};
use super::{Density, DensityError, Range};
use crate::scalar::{cmp_real, Real};

/// Pointwise product of conditionally independent evidence, renormalized.
///
/// Pieces multiply over the common edge refinement, which stays exact. An
/// atom survives only where every other density has a coinciding atom or
/// strictly positive piece height; its weight is the product of those atom
/// masses and heights. A zero normalizer is a contradiction.
pub fn bayes_fuse<F: Real>(fs: &[Density<F>]) -> Result<Density<F>, DensityError> {
    let first = fs.first().ok_or(DensityError::RangeMismatch)?;
    if fs.len() < 2 {
        return Err(DensityError::RangeMismatch);
    }
    if fs.iter().any(|f| f.range() != first.range()) {
        return Err(DensityError::RangeMismatch);
    }

    if first.is_discrete() {
        let n = first.probabilities().len();
        let mut probs = vec![F::one(); n];
        for f in fs {
            for (p, q) in probs.iter_mut().zip(f.probabilities()) {
                *p = *p * *q;
            }
        }
        let total = probs.iter().fold(F::zero(), |s, p| s + *p);
        if total <= F::zero() {
            return Err(DensityError::Contradiction);
        }
        for p in &mut probs {
            *p = *p / total;
        }
        return Ok(Density::new_discrete(first.range().clone(), probs));
    }

    // piece part: product heights over the union refinement
    let mut edges: Vec<F> = Vec::new();
    for f in fs {
        for c in f.pieces() {
            edges.push(c.lo);
            edges.push(c.hi);
        }
    }
    edges.sort_by(cmp_real);
    edges.dedup_by(|a, b| a == b);
    let mut pieces: Vec<Cell<F>> = Vec::new();
    let half = F::of(0.5);
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = (lo + hi) * half;
        let mut h = F::one();
        for f in fs {
            h = h * f.height_at(mid);
            if h == F::zero() {
                break;
            }
        }
        if h > F::zero() {
            pieces.push(Cell { lo, hi, height: h });
        }
    }

    // atom part: union of atom locations, surviving under positive co-density
    let mut locs: Vec<F> = fs.iter().flat_map(|f| f.atoms().iter().map(|a| a.at)).collect();
    locs.sort_by(cmp_real);
    locs.dedup_by(|a, b| a == b);
    let mut atoms: Vec<Atom<F>> = Vec::new();
    'locs: for &x in &locs {
        let mut weight = F::one();
        for f in fs {
            let m = f.atom_mass_at(x);
            let factor = if m > F::zero() { m } else { f.height_at(x) };
            if factor <= F::zero() {
                continue 'locs;
            }
            weight = weight * factor;
        }
        atoms.push(Atom { at: x, mass: weight });
    }

    let piece_mass = pieces.iter().fold(F::zero(), |s, c| s + c.mass());
    let atom_mass = atoms.iter().fold(F::zero(), |s, a| s + a.mass);
    let total = piece_mass + atom_mass;
    if total <= F::zero() {
        return Err(DensityError::Contradiction);
    }
    let mut d =
        Density::new_continuous(first.range().clone(), merge_atoms(atoms), merge_cells(pieces));
    d.scale(F::one() / total);
    debug_assert!(d.validate().is_ok());
    Ok(d)
}

/// Convex combination of densities over the same range.
pub fn mixture<F: Real>(ws: &[F], fs: &[Density<F>]) -> Result<Density<F>, DensityError> {
    if ws.len() != fs.len() || fs.is_empty() {
        return Err(DensityError::BadMixtureWeights);
    }
    if ws.iter().any(|w| *w < F::zero() || !w.is_finite()) {
        return Err(DensityError::BadMixtureWeights);
    }
    let total_w = ws.iter().fold(F::zero(), |s, w| s + *w);
    if (total_w - F::one()).abs() > F::mass_tolerance() {
        return Err(DensityError::BadMixtureWeights);
    }
    let first = &fs[0];
    if fs.iter().any(|f| f.range() != first.range()) {
        return Err(DensityError::RangeMismatch);
    }

    if first.is_discrete() {
        let n = first.probabilities().len();
        let mut probs = vec![F::zero(); n];
        for (w, f) in ws.iter().zip(fs) {
            for (p, q) in probs.iter_mut().zip(f.probabilities()) {
                *p = *p + *w * *q;
            }
        }
        let total = probs.iter().fold(F::zero(), |s, p| s + *p);
        let mut d = Density::new_discrete(first.range().clone(), probs);
        d.scale(F::one() / total);
        return Ok(d);
    }

    let mut atoms: Vec<Atom<F>> = Vec::new();
    let mut cells: Vec<Cell<F>> = Vec::new();
    for (w, f) in ws.iter().zip(fs) {
        if *w == F::zero() {
            continue;
        }
        for a in f.atoms() {
            atoms.push(Atom { at: a.at, mass: a.mass * *w });
        }
        for c in f.pieces() {
            cells.push(Cell { lo: c.lo, hi: c.hi, height: c.height * *w });
        }
    }
    let mut d =
        Density::new_continuous(first.range().clone(), merge_atoms(atoms), merge_cells(cells));
    let total = d.total_mass();
    if total <= F::zero() {
        return Err(DensityError::BadMixtureWeights);
    }
    d.scale(F::one() / total);
    debug_assert!(d.validate().is_ok());
    Ok(d)
}

/// An ordered tiling of a cardinal range into labelled cells.
///
/// Cells are read as `[lo, hi)` with the final cell closed, so an atom on a
/// shared boundary belongs to the cell on its right. A label may appear in
/// several cells; its probabilities add.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition<F> {
    cells: Vec<(String, F, F)>,
}

impl<F: Real> Partition<F> {
    /// Builds a partition from `(label, lo, hi)` cells. The cells must tile
    /// an interval: no gaps, no overlaps. Whether that interval matches a
    /// particular range is checked where the partition is applied.
    pub fn new(mut cells: Vec<(String, F, F)>) -> Result<Self, DensityError> {
        if cells.is_empty() {
            return Err(DensityError::BadPartition("no cells".into()));
        }
        cells.sort_by(|a, b| cmp_real(&a.1, &b.1).then(cmp_real(&a.2, &b.2)));
        for (label, lo, hi) in &cells {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(DensityError::BadPartition(format!("empty cell for `{label}`")));
            }
        }
        for w in cells.windows(2) {
            if w[0].2 < w[1].1 {
                return Err(DensityError::BadPartition(format!(
                    "gap between {} and {}",
                    w[0].2, w[1].1
                )));
            }
            if w[0].2 > w[1].1 {
                return Err(DensityError::BadPartition(format!(
                    "cells overlap between {} and {}",
                    w[1].1, w[0].2
                )));
            }
        }
        Ok(Partition { cells })
    }

    /// Bounds of the tiled interval.
    pub fn bounds(&self) -> (F, F) {
        (self.cells[0].1, self.cells[self.cells.len() - 1].2)
    }

    pub fn cells(&self) -> &[(String, F, F)] {
        &self.cells
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.cells.iter().map(|(l, _, _)| l.as_str())
    }
}

/// Maps a cardinal density onto a label range: each label's probability is
/// the mass its partition cells capture.
pub fn threshold_map<F: Real>(
    f: &Density<F>,
    partition: &Partition<F>,
    out_range: &Range<F>,
) -> Result<Density<F>, DensityError> {
    if f.is_discrete() {
        return Err(DensityError::KindMismatch { expected: "cardinal", got: f.range().kind().name() });
    }
    if out_range.is_cardinal() {
        return Err(DensityError::KindMismatch { expected: "categorical or ordinal", got: "cardinal" });
    }
    // the partition must tile f's own range
    let (lower, upper) = f.range().bounds();
    let cells = partition.cells();
    if cells[0].1 != lower || cells[cells.len() - 1].2 != upper {
        return Err(DensityError::BadPartition(
            "partition bounds do not match the source range".into(),
        ));
    }

    let mut probs = vec![F::zero(); out_range.labels().len()];
    for (i, (label, lo, hi)) in cells.iter().enumerate() {
        let idx = out_range
            .label_index(label)
            .ok_or_else(|| DensityError::UnknownLabel(label.clone()))?;
        let last = i + 1 == cells.len();
        let mut p = F::zero();
        for a in f.atoms() {
            if (*lo <= a.at && a.at < *hi) || (last && a.at == *hi) {
                p = p + a.mass;
            }
        }
        for c in f.pieces() {
            let ov_lo = if c.lo > *lo { c.lo } else { *lo };
            let ov_hi = if c.hi < *hi { c.hi } else { *hi };
            if ov_hi > ov_lo {
                p = p + c.height * (ov_hi - ov_lo);
            }
        }
        probs[idx] = probs[idx] + p;
    }
    let total = probs.iter().fold(F::zero(), |s, p| s + *p);
    if total <= F::zero() {
        return Err(DensityError::BadWeights);
    }
    for p in &mut probs {
        *p = *p / total;
    }
    Ok(Density::new_discrete(out_range.clone(), probs))
}
