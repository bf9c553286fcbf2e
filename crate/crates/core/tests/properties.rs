use proptest::prelude::*;

use aess::classical::build_classical_generator;
use aess::format::sci;
use aess::sat::{count_solutions, generate_planted, parse_dimacs, serialize_dimacs, HidingScheme, PlantedParams};
use aess::sparse::GenMatrix;

fn params(n: usize, p0: f64, symmetric: bool) -> PlantedParams {
    PlantedParams {
        n_vars: n,
        ratio: 4.267,
        p0,
        scheme: if symmetric {
            HidingScheme::Symmetric
        } else {
            HidingScheme::Balanced
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dimacs_roundtrip(n in 3usize..16, seed in any::<u64>(), p0 in 0.0f64..0.16, symmetric in any::<bool>()) {
        let inst = generate_planted(&params(n, p0, symmetric), seed).unwrap();
        let text = serialize_dimacs(&inst);
        let back = parse_dimacs(&text).unwrap();
        prop_assert_eq!(&back, &inst);
        prop_assert_eq!(serialize_dimacs(&back), text);
    }

    #[test]
    fn planted_assignment_satisfies(n in 3usize..12, seed in any::<u64>()) {
        let inst = generate_planted(&PlantedParams::new(n), seed).unwrap();
        let p = inst.planted().unwrap();
        prop_assert!(inst.clauses().iter().all(|c| p.satisfies(c)));
        prop_assert!(count_solutions(&inst, u64::MAX).unwrap().count >= 1);
    }

    #[test]
    fn classical_columns_sum_to_zero_at_unit_w(n in 3usize..11, seed in any::<u64>()) {
        let inst = generate_planted(&PlantedParams::new(n), seed).unwrap();
        let g = build_classical_generator(&inst, 1.0).unwrap();
        let GenMatrix::Real(m) = &g.matrix else { unreachable!() };
        prop_assert!(m.column_sums().iter().all(|s| s.abs() <= 1e-12));
        // Off-diagonal rates are non-negative.
        prop_assert!(m.triplets().all(|(r, c, v)| r == c || v >= 0.0));
    }

    #[test]
    fn sci_parses_back(x in prop::num::f64::NORMAL) {
        let s = sci(x);
        let back: f64 = s.parse().unwrap();
        prop_assert!((back - x).abs() <= 1e-12 * x.abs());
        let (mantissa, exp) = s.split_once('e').unwrap();
        prop_assert_eq!(mantissa.split('.').nth(1).unwrap().len(), 12);
        prop_assert!(exp.starts_with('+') || exp.starts_with('-'));
        prop_assert!(exp.len() >= 3);
    }
}
