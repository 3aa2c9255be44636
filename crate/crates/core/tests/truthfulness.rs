use proptest::prelude::*;
use spectrum_market::market::Money;
use spectrum_market::truthfulness::{enumerate, focal_payoff, verdicts, Region};

proptest! {
    // Closed form for two bidders who cannot both be served.
    #[test]
    fn payoff_matches_closed_form(v in 1i64..2_000, own_frac in 0.0f64..1.0, rival in 1i64..4_000, penalty in 0i64..200) {
        let v = Money::from_units(v);
        let own = v.scale(own_frac);
        let rival = Money::from_units(rival);
        prop_assume!(own != rival);
        let penalty = Money::from_units(penalty);
        let expected = if own > rival { v - own } else { -penalty };
        prop_assert_eq!(focal_payoff(v, own, rival, penalty).unwrap(), expected);
    }

    #[test]
    fn truthful_never_loses_to_underbid_outside_the_gap(v in 10i64..1_000, rival in 1i64..2_000, under in 1i64..1_000, penalty in 0i64..200) {
        let (v, rival, under, penalty) = (Money::from_units(v), Money::from_units(rival), Money::from_units(under), Money::from_units(penalty));
        prop_assume!(under < v && rival != v && rival != under);
        let truthful = focal_payoff(v, v, rival, penalty).unwrap();
        let shaded = focal_payoff(v, under, rival, penalty).unwrap();
        if rival < under {
            prop_assert!(shaded > truthful);
        } else {
            prop_assert!(truthful >= shaded);
        }
    }
}

#[test]
fn every_region_is_realised() {
    let inst = enumerate(Money::from_units(400), Money::from_units(75), Money::from_units(20)).unwrap();
    let verdicts = verdicts(&inst);
    assert_eq!(verdicts.len(), Region::ALL.len());
    for v in verdicts {
        assert!(v.instances > 0, "{:?} never realised", v.region);
        assert!(v.holds, "{:?} fails", v.region);
    }
}

#[test]
fn underbid_wins_only_in_its_region() {
    let inst = enumerate(Money::from_units(300), Money::from_units(75), Money::from_units(10)).unwrap();
    for i in &inst {
        if i.underbid_payoff > i.truthful_payoff {
            assert!(i.regions.contains(&Region::UnderbidWins), "{i:?}");
        }
    }
}

#[test]
fn penalty_only_widens_the_truthful_advantage() {
    let v = Money::from_units(200);
    let rival = Money::from_units(150);
    let low = Money::from_units(100);
    let gap = |p: i64| focal_payoff(v, v, rival, Money::from_units(p)).unwrap() - focal_payoff(v, low, rival, Money::from_units(p)).unwrap();
    assert_eq!(gap(0), Money::ZERO);
    assert_eq!(gap(75), Money::from_units(75));
}
