mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use superpose::quadtree::{DirSet, Qts};
use superpose::tssl::{check, parse, value, CompiledFormula, Formula, Quantifier, Relation};

use common::{naive_check, naive_value, random_formula, random_qts};

fn system_and_formula(seed: u64, max_states: usize, height: usize) -> (Qts, Formula) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 1 + (seed as usize % max_states);
    let qts = random_qts(&mut rng, n, 2);
    let phi = random_formula(&mut rng, height, 2, 3);
    (qts, phi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn printed_formulas_reparse_identically(seed in any::<u64>()) {
        let (_, phi) = system_and_formula(seed, 4, 4);
        let text = phi.to_string();
        prop_assert_eq!(parse(&text).unwrap(), phi, "{}", text);
    }

    #[test]
    fn negation_is_antisymmetric(seed in any::<u64>()) {
        let (qts, phi) = system_and_formula(seed, 16, 4);
        let neg = Formula::not(phi.clone());
        prop_assert_eq!(value(&qts, &neg).unwrap(), -value(&qts, &phi).unwrap());
        prop_assert_eq!(check(&qts, &neg).unwrap(), !check(&qts, &phi).unwrap());
    }

    #[test]
    fn values_stay_within_the_bound(seed in any::<u64>()) {
        let (qts, phi) = system_and_formula(seed, 32, 4);
        let v = value(&qts, &phi).unwrap();
        prop_assert!(v.abs() <= qts.bound(), "{}", v);
    }

    #[test]
    fn signs_agree_with_satisfaction(seed in any::<u64>()) {
        let (qts, phi) = system_and_formula(seed, 64, 4);
        let (v, c) = (value(&qts, &phi).unwrap(), check(&qts, &phi).unwrap());
        prop_assert!(!(v > 0.0 && !c) && !(v < 0.0 && c), "value {} check {}", v, c);
    }

    #[test]
    fn agrees_with_path_enumeration(seed in any::<u64>()) {
        let (qts, phi) = system_and_formula(seed, 8, 3);
        let compiled = CompiledFormula::new(&phi);
        let (checks, values) = (compiled.check_all(&qts).unwrap(), compiled.value_all(&qts).unwrap());
        for s in 0..qts.len() {
            prop_assert_eq!(checks[s], naive_check(&qts, s, &phi));
            prop_assert_eq!(values[s], naive_value(&qts, s, &phi));
        }
        prop_assert_eq!(check(&qts, &phi).unwrap(), checks[0]);
    }

    #[test]
    fn globally_is_dual_of_eventually(seed in any::<u64>(), k in 1u32..4, bits in 1u8..16) {
        let (qts, phi) = system_and_formula(seed, 16, 2);
        let dirs = DirSet::from_bits(bits).unwrap();
        for q in [Quantifier::Exists, Quantifier::Forall] {
            let g = Formula::globally(q, dirs, k, phi.clone());
            let dual = Formula::not(Formula::eventually(q.dual(), dirs, k, Formula::not(phi.clone())));
            prop_assert_eq!(&g, &dual);
            prop_assert_eq!(check(&qts, &g).unwrap(), check(&qts, &dual).unwrap());
        }
    }

    #[test]
    fn nested_next_discounts(seed in any::<u64>(), depth in 0usize..6, d in 0.0f64..=1.0) {
        let (qts, _) = system_and_formula(seed, 16, 0);
        let mut phi = Formula::atom(0, Relation::Ge, d);
        for n in 0..depth {
            let q = if n % 2 == 0 { Quantifier::Exists } else { Quantifier::Forall };
            phi = Formula::next(q, DirSet::ALL, phi);
        }
        let v = value(&qts, &phi).unwrap();
        prop_assert!(v.abs() <= qts.bound() / 4f64.powi(depth as i32));
    }

    #[test]
    fn raising_a_lower_bound_never_raises_value(seed in any::<u64>(), d1 in 0.0f64..=1.0, d2 in 0.0f64..=1.0) {
        let (qts, _) = system_and_formula(seed, 16, 0);
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let at = |d| value(&qts, &Formula::next(Quantifier::Exists, DirSet::ALL, Formula::atom(0, Relation::Ge, d))).unwrap();
        prop_assert!(at(hi) <= at(lo));
    }
}

#[test]
fn top_is_maximal_everywhere() {
    for seed in 0..50 {
        let (qts, _) = system_and_formula(seed, 64, 0);
        assert!(check(&qts, &Formula::True).unwrap());
        assert_eq!(value(&qts, &Formula::True).unwrap(), qts.bound());
    }
}

#[test]
fn unknown_variables_are_rejected() {
    let (qts, _) = system_and_formula(3, 4, 0);
    let phi = parse("m3 >= 0.5").unwrap();
    assert!(check(&qts, &phi).is_err());
    assert!(value(&qts, &phi).is_err());
}
