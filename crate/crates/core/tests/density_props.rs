//! Property tests for the density algebra: closure under every operation,
//! normalization, fusion symmetry, additivity of events and the arithmetic
//! identity elements.

use naive_core::density::{
    bayes_fuse, combine_arith, mixture, threshold_map, ArithOp, Atom, Cell, Density, EventSet,
    GridPolicy, Partition, Range,
};
use proptest::prelude::*;

type D = Density<f64>;

fn range10() -> Range<f64> {
    Range::cardinal(0.0, 10.0, "u").unwrap()
}

fn grid() -> GridPolicy<f64> {
    GridPolicy::default()
}

prop_compose! {
    fn arb_density()(
        atoms in prop::collection::vec((0.0f64..10.0, 0.05f64..1.0), 0..3),
        edges in prop::collection::vec(0.01f64..9.99, 0..6),
        heights in prop::collection::vec(0.05f64..1.0, 3),
    ) -> D {
        let range = range10();
        let atom_parts: Vec<Atom<f64>> =
            atoms.iter().map(|(x, w)| Atom { at: *x, mass: *w }).collect();
        let mut sorted = edges.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        let mut cells = Vec::new();
        for (i, pair) in sorted.chunks(2).enumerate() {
            if let [lo, hi] = pair {
                if hi > lo {
                    cells.push(Cell { lo: *lo, hi: *hi, height: heights[i % heights.len()] });
                }
            }
        }
        if atom_parts.is_empty() && cells.is_empty() {
            return Density::uniform_over(&range).unwrap();
        }
        Density::from_parts(&range, atom_parts, cells).unwrap()
    }
}

proptest! {
    #[test]
    fn construction_is_normalized(f in arb_density()) {
        f.validate().unwrap();
        prop_assert!((f.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn combine_arith_is_closed(f in arb_density(), g in arb_density(), op_idx in 0usize..3) {
        let op = [ArithOp::Add, ArithOp::Sub, ArithOp::Mul][op_idx];
        let out_range = Range::cardinal(-100.0, 100.0, "u").unwrap();
        let combined = combine_arith(op, &f, &g, &out_range, &grid()).unwrap();
        combined.density.validate().unwrap();
        prop_assert!((combined.density.total_mass() - 1.0).abs() < 1e-6);
        prop_assert!(combined.clamped_mass.abs() < 1e-12); // wide output range
    }

    #[test]
    fn division_is_closed_away_from_zero(f in arb_density(), shift in 1.0f64..5.0) {
        // divisor over [1, 16], safely away from zero
        let div_range = Range::cardinal(1.0, 16.0, "u").unwrap();
        let g = {
            let atoms: Vec<Atom<f64>> =
                f.atoms().iter().map(|a| Atom { at: a.at + shift, mass: a.mass }).collect();
            let cells: Vec<Cell<f64>> = f
                .pieces()
                .iter()
                .map(|c| Cell { lo: c.lo + shift, hi: c.hi + shift, height: c.height })
                .collect();
            if atoms.is_empty() && cells.is_empty() {
                Density::uniform_over(&div_range).unwrap()
            } else {
                Density::from_parts(&div_range, atoms, cells).unwrap()
            }
        };
        let out_range = Range::cardinal(0.0, 20.0, "u").unwrap();
        let combined = combine_arith(ArithOp::Div, &f, &g, &out_range, &grid()).unwrap();
        combined.density.validate().unwrap();
        prop_assert!((combined.density.total_mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fuse_is_commutative(f in arb_density(), g in arb_density()) {
        match (bayes_fuse(&[f.clone(), g.clone()]), bayes_fuse(&[g, f])) {
            (Ok(a), Ok(b)) => prop_assert!(a.approx_eq(&b, 1e-9)),
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert!(false, "fusion symmetry broken: {:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn fuse_flat_prior_is_identity(f in arb_density()) {
        let flat = Density::uniform_over(&range10()).unwrap();
        let fused = bayes_fuse(&[f.clone(), flat]).unwrap();
        prop_assert!(fused.approx_eq(&f, 1e-9));
    }

    #[test]
    fn prob_in_full_range_is_one(f in arb_density()) {
        let p = f.prob_in(&EventSet::interval(0.0, 10.0).unwrap()).unwrap();
        prop_assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prob_in_is_additive(f in arb_density(), cut in 0.5f64..9.5) {
        let left = f.prob_in(&EventSet::interval(0.0, cut).unwrap()).unwrap();
        // open the left endpoint by nudging one ulp so the sets are disjoint
        let right = f.prob_in(&EventSet::interval(cut.next_up(), 10.0).unwrap()).unwrap();
        let both = f
            .prob_in(&EventSet::intervals(vec![(0.0, cut), (cut.next_up(), 10.0)]).unwrap())
            .unwrap();
        prop_assert!((left + right - both).abs() < 1e-12);
        prop_assert!((both - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_elements_hold(f in arb_density()) {
        let zero = Density::delta(0.0, &Range::cardinal(-1.0, 1.0, "u").unwrap()).unwrap();
        let one = Density::delta(1.0, &Range::cardinal(0.5, 2.0, "u").unwrap()).unwrap();
        let shifted = combine_arith(ArithOp::Add, &f, &zero, &range10(), &grid()).unwrap();
        prop_assert!(shifted.density.approx_eq(&f, 1e-12));
        let scaled = combine_arith(ArithOp::Mul, &f, &one, &range10(), &grid()).unwrap();
        prop_assert!(scaled.density.approx_eq(&f, 1e-12));
    }

    #[test]
    fn threshold_probabilities_match_prob_in(f in arb_density(), cut1 in 1.0f64..5.0, cut2 in 5.5f64..9.0) {
        let part = Partition::new(vec![
            ("low".into(), 0.0, cut1),
            ("mid".into(), cut1, cut2),
            ("high".into(), cut2, 10.0),
        ])
        .unwrap();
        let bands = Range::ordinal(["low", "mid", "high"]).unwrap();
        let mapped = threshold_map(&f, &part, &bands).unwrap();
        let probs = mapped.probabilities();
        let sum: f64 = probs.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        // random cuts never coincide with atoms, so closed prob_in agrees
        let p_mid = f.prob_in(&EventSet::interval(cut1, cut2).unwrap()).unwrap();
        prop_assert!((probs[1] - p_mid).abs() < 1e-9);
    }

    #[test]
    fn mixture_is_convex(f in arb_density(), g in arb_density(), w in 0.0f64..1.0) {
        let m = mixture(&[w, 1.0 - w], &[f.clone(), g.clone()]).unwrap();
        m.validate().unwrap();
        // mixture CDF is the convex combination of the component CDFs
        for x in [0.5, 2.5, 5.0, 7.5, 9.5] {
            let expect = w * f.cdf(x) + (1.0 - w) * g.cdf(x);
            prop_assert!((m.cdf(x) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn quantile_inverts_cdf(f in arb_density(), p in 0.0f64..1.0) {
        let x = f.quantile(p).unwrap();
        prop_assert!((0.0..=10.0).contains(&x));
        prop_assert!(f.cdf(x) >= p - 1e-9);
    }

    #[test]
    fn operation_chains_stay_normalized(
        f in arb_density(),
        g in arb_density(),
        h in arb_density(),
        ops in prop::collection::vec(0usize..3, 1..4),
    ) {
        // wide enough that three multiplications of values in [0, 10] fit
        let out_range = Range::cardinal(-1e5, 1e5, "u").unwrap();
        let mut acc = f;
        for (i, op_idx) in ops.iter().enumerate() {
            let op = [ArithOp::Add, ArithOp::Sub, ArithOp::Mul][*op_idx];
            let rhs = if i % 2 == 0 { &g } else { &h };
            acc = combine_arith(op, &acc, rhs, &out_range, &grid()).unwrap().density;
            acc.validate().unwrap();
            prop_assert!((acc.total_mass() - 1.0).abs() < 1e-6);
        }
    }
}
