//! Arithmetic combination of independent variables.
//!
//! Atom-atom products and one-sided shifts/scales (atom against piece) stay
//! exact. Anything that leaves the piecewise-constant family (piece-piece
//! convolutions, division by a piece) is re-projected onto the output grid
//! by splitting each operand into equal-mass points. Mass landing outside
//! the output range is clamped onto boundary atoms and reported.

use super::repr::{merge_atoms, merge_cells, Atom, Cell};
use super::{Density, DensityError, GridPolicy, Range};
use crate::scalar::{cmp_real, Real};

/// The four basic arithmetic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn name(self) -> &'static str {
        match self {
            ArithOp::Add => "add",
            ArithOp::Sub => "sub",
            ArithOp::Mul => "mul",
            ArithOp::Div => "div",
        }
    }

    fn apply<F: Real>(self, x: F, y: F) -> F {
        match self {
            ArithOp::Add => x + y,
            ArithOp::Sub => x - y,
            ArithOp::Mul => x * y,
            ArithOp::Div => x / y,
        }
    }
}

/// Result of [`combine_arith`]: the density plus the mass that fell outside
/// the output range and was moved to its nearest boundary.
#[derive(Debug, Clone)]
pub struct Combined<F> {
    pub density: Density<F>,
    pub clamped_mass: F,
}

// Intermediate cell carrying mass instead of height; heights are
// reconstructed at assembly so clamping stays simple.
#[derive(Debug, Clone, Copy)]
struct MassCell<F> {
    lo: F,
    hi: F,
    mass: F,
}

/// Density of `f op g` for stochastically independent `f` and `g`.
pub fn combine_arith<F: Real>(
    op: ArithOp,
    f: &Density<F>,
    g: &Density<F>,
    out_range: &Range<F>,
    grid: &GridPolicy<F>,
) -> Result<Combined<F>, DensityError> {
    for d in [f, g] {
        if d.is_discrete() {
            return Err(DensityError::KindMismatch {
                expected: "cardinal",
                got: d.range().kind().name(),
            });
        }
    }
    let (out_lo, out_hi) = match out_range {
        Range::Cardinal { lower, upper, .. } => (*lower, *upper),
        other => {
            return Err(DensityError::KindMismatch { expected: "cardinal", got: other.kind().name() })
        }
    };

    if op == ArithOp::Div {
        check_divisor(g, grid)?;
    }

    let mut atoms: Vec<Atom<F>> = Vec::new();
    let mut cells: Vec<MassCell<F>> = Vec::new();

    // exact part: atom x atom
    for a in f.atoms() {
        for b in g.atoms() {
            atoms.push(Atom { at: op.apply(a.at, b.at), mass: a.mass * b.mass });
        }
    }

    // exact part: one-sided shifts and scales
    match op {
        ArithOp::Add | ArithOp::Sub => {
            for a in f.atoms() {
                for c in g.pieces() {
                    let (lo, hi) = match op {
                        ArithOp::Add => (a.at + c.lo, a.at + c.hi),
                        _ => (a.at - c.hi, a.at - c.lo),
                    };
                    push_cell(&mut cells, &mut atoms, lo, hi, a.mass * c.mass());
                }
            }
            for c in f.pieces() {
                for b in g.atoms() {
                    let (lo, hi) = match op {
                        ArithOp::Add => (c.lo + b.at, c.hi + b.at),
                        _ => (c.lo - b.at, c.hi - b.at),
                    };
                    push_cell(&mut cells, &mut atoms, lo, hi, c.mass() * b.mass);
                }
            }
        }
        ArithOp::Mul => {
            for a in f.atoms() {
                for c in g.pieces() {
                    push_scaled(&mut cells, &mut atoms, c, a.at, a.mass);
                }
            }
            for c in f.pieces() {
                for b in g.atoms() {
                    push_scaled(&mut cells, &mut atoms, c, b.at, b.mass);
                }
            }
        }
        ArithOp::Div => {
            // pieces / atom is an exact scale; atom / pieces goes to the grid
            for c in f.pieces() {
                for b in g.atoms() {
                    let (x0, x1) = (c.lo / b.at, c.hi / b.at);
                    let (lo, hi) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
                    push_cell(&mut cells, &mut atoms, lo, hi, c.mass() * b.mass);
                }
            }
        }
    }

    // grid part: equal-mass point products, binned without materializing
    let g_points = g.equal_mass_points(grid.resolution);
    let f_points = if g_points.is_empty() {
        Vec::new()
    } else {
        let mut pts = f.equal_mass_points(grid.resolution);
        if op == ArithOp::Div {
            pts.extend(f.atoms().iter().map(|a| (a.at, a.mass)));
        }
        pts
    };
    let product_span = if f_points.is_empty() || g_points.is_empty() {
        None
    } else {
        Some(point_product_span(op, &f_points, &g_points))
    };

    // support of the raw result, for the empty-overlap check
    let mut sup_lo = F::infinity();
    let mut sup_hi = F::neg_infinity();
    for a in &atoms {
        sup_lo = sup_lo.min(a.at);
        sup_hi = sup_hi.max(a.at);
    }
    for c in &cells {
        sup_lo = sup_lo.min(c.lo);
        sup_hi = sup_hi.max(c.hi);
    }
    if let Some((p_lo, p_hi)) = product_span {
        sup_lo = sup_lo.min(p_lo);
        sup_hi = sup_hi.max(p_hi);
    }
    if sup_lo > out_hi || sup_hi < out_lo {
        return Err(DensityError::EmptyOverlap);
    }

    let mut clamped = F::zero();
    let mut low_atom = F::zero();
    let mut high_atom = F::zero();

    // clamp exact atoms
    let mut kept_atoms: Vec<Atom<F>> = Vec::with_capacity(atoms.len());
    for a in atoms {
        if a.at < out_lo {
            low_atom = low_atom + a.mass;
            clamped = clamped + a.mass;
        } else if a.at > out_hi {
            high_atom = high_atom + a.mass;
            clamped = clamped + a.mass;
        } else {
            kept_atoms.push(a);
        }
    }

    // clamp exact cells
    let mut kept_cells: Vec<Cell<F>> = Vec::with_capacity(cells.len());
    for c in cells {
        let width = c.hi - c.lo;
        let in_lo = c.lo.max(out_lo);
        let in_hi = c.hi.min(out_hi);
        if in_hi <= in_lo {
            // entirely outside
            if c.hi <= out_lo {
                low_atom = low_atom + c.mass;
            } else {
                high_atom = high_atom + c.mass;
            }
            clamped = clamped + c.mass;
            continue;
        }
        let inside = c.mass * ((in_hi - in_lo) / width);
        if c.lo < out_lo {
            let below = c.mass * ((out_lo - c.lo) / width);
            low_atom = low_atom + below;
            clamped = clamped + below;
        }
        if c.hi > out_hi {
            let above = c.mass * ((c.hi - out_hi) / width);
            high_atom = high_atom + above;
            clamped = clamped + above;
        }
        kept_cells.push(Cell { lo: in_lo, hi: in_hi, height: inside / (in_hi - in_lo) });
    }

    // bin the grid products
    if let Some((p_lo, p_hi)) = product_span {
        let bin_lo = p_lo.max(out_lo);
        let bin_hi = p_hi.min(out_hi);
        if bin_hi > bin_lo {
            let m = grid.resolution;
            let mf = F::from_usize(m).unwrap();
            let width = (bin_hi - bin_lo) / mf;
            let half = F::of(0.5);
            let mut masses = vec![F::zero(); m];
            for &(x, mx) in &f_points {
                for &(y, my) in &g_points {
                    let z = op.apply(x, y);
                    let mass = mx * my;
                    if z < out_lo {
                        low_atom = low_atom + mass;
                        clamped = clamped + mass;
                    } else if z > out_hi {
                        high_atom = high_atom + mass;
                        clamped = clamped + mass;
                    } else {
                        // area-weighted split across the two nearest bin
                        // centers, which keeps the first moment exact
                        let pos = (z - bin_lo) / width - half;
                        if pos <= F::zero() {
                            masses[0] = masses[0] + mass;
                        } else {
                            let i0 = pos.floor().to_usize().unwrap_or(0).min(m - 1);
                            if i0 + 1 >= m {
                                masses[m - 1] = masses[m - 1] + mass;
                            } else {
                                let frac = pos - F::from_usize(i0).unwrap();
                                masses[i0] = masses[i0] + mass * (F::one() - frac);
                                masses[i0 + 1] = masses[i0 + 1] + mass * frac;
                            }
                        }
                    }
                }
            }
            for (i, mass) in masses.into_iter().enumerate() {
                if mass > F::zero() {
                    let lo = bin_lo + width * F::from_usize(i).unwrap();
                    let hi = if i + 1 == m { bin_hi } else { bin_lo + width * F::from_usize(i + 1).unwrap() };
                    kept_cells.push(Cell { lo, hi, height: mass / (hi - lo) });
                }
            }
        } else {
            // grid support collapses to (at most) a point inside the range
            for &(x, mx) in &f_points {
                for &(y, my) in &g_points {
                    let z = op.apply(x, y);
                    let mass = mx * my;
                    if z < out_lo {
                        low_atom = low_atom + mass;
                        clamped = clamped + mass;
                    } else if z > out_hi {
                        high_atom = high_atom + mass;
                        clamped = clamped + mass;
                    } else {
                        kept_atoms.push(Atom { at: z, mass });
                    }
                }
            }
        }
    }

    if low_atom > F::zero() {
        kept_atoms.push(Atom { at: out_lo, mass: low_atom });
    }
    if high_atom > F::zero() {
        kept_atoms.push(Atom { at: out_hi, mass: high_atom });
    }

    let atoms = merge_atoms(kept_atoms);
    let pieces = merge_cells(kept_cells);
    let mut density = Density::new_continuous(out_range.clone(), atoms, pieces);
    let total = density.total_mass();
    if total <= F::zero() {
        return Err(DensityError::EmptyOverlap);
    }
    density.scale(F::one() / total);
    debug_assert!(density.validate().is_ok());
    Ok(Combined { density, clamped_mass: clamped })
}

fn push_cell<F: Real>(
    cells: &mut Vec<MassCell<F>>,
    atoms: &mut Vec<Atom<F>>,
    lo: F,
    hi: F,
    mass: F,
) {
    if mass <= F::zero() {
        return;
    }
    if hi > lo {
        cells.push(MassCell { lo, hi, mass });
    } else {
        // width collapsed (extreme scales); keep the mass as a point
        atoms.push(Atom { at: lo, mass });
    }
}

// cell scaled by an atom factor, for `mul`
fn push_scaled<F: Real>(
    cells: &mut Vec<MassCell<F>>,
    atoms: &mut Vec<Atom<F>>,
    c: &Cell<F>,
    factor: F,
    factor_mass: F,
) {
    let mass = c.mass() * factor_mass;
    if factor == F::zero() {
        atoms.push(Atom { at: F::zero(), mass });
        return;
    }
    let (x0, x1) = (c.lo * factor, c.hi * factor);
    let (lo, hi) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
    push_cell(cells, atoms, lo, hi, mass);
}

// Exact span of `{x op y}` over the two point sets. Each op is monotone in
// each coordinate over a fixed-sign rectangle, so extremes sit at corners;
// division splits the divisor points by sign (the guard already rejects
// anything near zero).
fn point_product_span<F: Real>(op: ArithOp, xs: &[(F, F)], ys: &[(F, F)]) -> (F, F) {
    let extent = |pts: &[(F, F)]| {
        let mut lo = F::infinity();
        let mut hi = F::neg_infinity();
        for &(v, _) in pts {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    };
    let (x_lo, x_hi) = extent(xs);
    let mut span_lo = F::infinity();
    let mut span_hi = F::neg_infinity();
    let mut corners = |y_lo: F, y_hi: F| {
        for x in [x_lo, x_hi] {
            for y in [y_lo, y_hi] {
                let z = op.apply(x, y);
                span_lo = span_lo.min(z);
                span_hi = span_hi.max(z);
            }
        }
    };
    if op == ArithOp::Div {
        let mut neg = (F::infinity(), F::neg_infinity());
        let mut pos = (F::infinity(), F::neg_infinity());
        for &(y, _) in ys {
            if y < F::zero() {
                neg = (neg.0.min(y), neg.1.max(y));
            } else {
                pos = (pos.0.min(y), pos.1.max(y));
            }
        }
        if neg.0 <= neg.1 {
            corners(neg.0, neg.1);
        }
        if pos.0 <= pos.1 {
            corners(pos.0, pos.1);
        }
    } else {
        let (y_lo, y_hi) = extent(ys);
        corners(y_lo, y_hi);
    }
    (span_lo, span_hi)
}

fn check_divisor<F: Real>(g: &Density<F>, grid: &GridPolicy<F>) -> Result<(), DensityError> {
    let guard = g.range().span() * grid.div_guard_fraction;
    let bad = g.atoms().iter().any(|a| a.at.abs() <= guard)
        || g.pieces().iter().any(|c| c.lo < guard && c.hi > -guard);
    if bad {
        return Err(DensityError::Singularity(guard.as_f64()));
    }
    Ok(())
}

impl<F: Real> Density<F> {
    /// Equal-mass point view of the whole density (atoms kept exact), used
    /// by the Monte-Carlo-facing tests. Total mass is preserved.
    pub fn point_masses(&self, n: usize) -> Vec<(F, F)> {
        let mut pts = self.equal_mass_points(n);
        pts.extend(self.atoms().iter().map(|a| (a.at, a.mass)));
        pts.sort_by(|a, b| cmp_real(&a.0, &b.0));
        pts
    }
}
