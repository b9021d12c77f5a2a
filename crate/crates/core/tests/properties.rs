//! Property tests for the exact-arithmetic invariants shared across modules.

use coinflip_lab::boolfn::{BooleanFunction, CoordSet, Restriction};
use coinflip_lab::dyadic::Dyadic;
use coinflip_lab::protocol::{
    exact_adversary_value, exact_honest_value, one_round_fn, OutcomeTarget,
};
use proptest::prelude::*;

fn arb_function() -> impl Strategy<Value = BooleanFunction> {
    (2u32..=8, any::<u64>(), 0.1f64..0.9)
        .prop_map(|(arity, seed, density)| BooleanFunction::random(arity, density, seed).unwrap())
}

fn arb_subset(arity: u32) -> impl Strategy<Value = CoordSet> {
    prop::collection::vec(any::<bool>(), arity as usize).prop_map(|picks| {
        let members: Vec<u32> = picks
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i as u32 + 1)
            .collect();
        CoordSet::from_sorted(members).unwrap()
    })
}

fn optimal_prob(f: &BooleanFunction, s: &CoordSet, o: bool) -> Dyadic {
    if s.is_empty() {
        f.prob(o)
    } else if s.len() as u32 >= f.arity() {
        if f.prob(o) > Dyadic::ZERO {
            Dyadic::ONE
        } else {
            Dyadic::ZERO
        }
    } else {
        f.restrict_optimal(s, o).unwrap().prob(o)
    }
}

proptest! {
    #[test]
    fn gain_identity_per_coordinate(f in arb_function(), o in any::<bool>()) {
        for i in 1..=f.arity() {
            let gained = optimal_prob(&f, &CoordSet::singleton(i), o);
            let expected = f.prob(o).add(&f.influence(i).unwrap().half());
            prop_assert_eq!(gained, expected);
        }
    }

    #[test]
    fn fixing_averages_to_the_parent_probability(f in arb_function()) {
        for i in 1..=f.arity() {
            let p0 = match f.restrict_fix(i, false).unwrap() {
                Restriction::Constant(v) => if v { Dyadic::ONE } else { Dyadic::ZERO },
                Restriction::Function(g) => g.prob(true),
            };
            let p1 = match f.restrict_fix(i, true).unwrap() {
                Restriction::Constant(v) => if v { Dyadic::ONE } else { Dyadic::ZERO },
                Restriction::Function(g) => g.prob(true),
            };
            prop_assert_eq!(p0.half().add(&p1.half()), f.prob(true));
        }
    }

    #[test]
    fn biasing_toward_zero_is_dual_to_negation(
        (f, s) in arb_function().prop_flat_map(|f| {
            let arity = f.arity();
            (Just(f), arb_subset(arity))
        })
    ) {
        prop_assert_eq!(
            optimal_prob(&f, &s, false),
            optimal_prob(&f.negated(), &s, true)
        );
    }

    #[test]
    fn influences_sum_consistently(f in arb_function()) {
        let total = f.influences().iter().fold(Dyadic::ZERO, |a, d| a.add(d));
        let by_coord = (1..=f.arity())
            .map(|i| f.influence(i).unwrap())
            .fold(Dyadic::ZERO, |a, d| a.add(&d));
        prop_assert_eq!(total, by_coord);
    }

    #[test]
    fn coalition_growth_never_hurts(
        (f, s) in arb_function().prop_flat_map(|f| {
            let arity = f.arity();
            (Just(f), arb_subset(arity))
        }),
        extra in 1u32..=8
    ) {
        let o = true;
        let base = optimal_prob(&f, &s, o);
        let extra = (extra - 1) % f.arity() + 1;
        let mut bigger = s.clone();
        if !bigger.contains(extra) {
            bigger.insert(extra);
        }
        prop_assert!(optimal_prob(&f, &bigger, o) >= base);
    }

    #[test]
    fn empty_coalition_is_the_honest_value(f in arb_function()) {
        let p = one_round_fn(f.clone()).unwrap();
        let target = OutcomeTarget::Coin(true);
        let adv = exact_adversary_value(&p, &CoordSet::empty(), &target).unwrap();
        prop_assert_eq!(adv, exact_honest_value(&p, &target).unwrap());
        prop_assert_eq!(exact_honest_value(&p, &target).unwrap(), f.prob(true));
    }

    #[test]
    fn one_round_protocol_matches_restriction_oracle(
        (f, s) in arb_function().prop_flat_map(|f| {
            let arity = f.arity();
            (Just(f), arb_subset(arity))
        }),
        o in any::<bool>()
    ) {
        let p = one_round_fn(f.clone()).unwrap();
        let adv = exact_adversary_value(&p, &s, &OutcomeTarget::Coin(o)).unwrap();
        prop_assert_eq!(adv, optimal_prob(&f, &s, o));
    }
}
