use std::collections::BTreeMap;

use cake_core::cake::{pieces_partition, AgentId, Piece, Rat};
use cake_core::core_protocol::core;
use cake_core::oracle::{Oracle, Valuation};
use cake_core::significance::{classify, ceil_ln_pow, Constants, SignificanceClass};
use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};
use proptest::prelude::*;

const DEN: i64 = 64;

fn q(n: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(DEN))
}

fn piece() -> impl Strategy<Value = Piece> {
    prop::collection::vec((0..=DEN, 0..=DEN), 0..5).prop_map(|pairs| {
        let raw = pairs.into_iter().map(|(a, b)| (q(a.min(b)), q(a.max(b)))).collect();
        Piece::normalize(raw).unwrap()
    })
}

fn valuation() -> impl Strategy<Value = Valuation> {
    (prop::collection::btree_set(1..DEN, 0..6), prop::collection::vec(0i64..6, 7)).prop_map(|(cuts, dens)| {
        let mut breaks = vec![Rat::zero()];
        breaks.extend(cuts.iter().map(|&c| q(c)));
        breaks.push(Rat::one());
        let mut d: Vec<Rat> = dens.iter().take(breaks.len() - 1).map(|&x| Rat::from_integer(x.into())).collect();
        if d.iter().all(Zero::is_zero) {
            d[0] = Rat::one();
        }
        Valuation::from_steps(&breaks, &d).unwrap()
    })
}

/// Membership of the midpoint of every elementary cell of the 1/DEN grid, doubled for the
/// finer grid that intersections and differences of grid pieces still respect.
fn cells(p: &Piece) -> Vec<bool> {
    (0..2 * DEN)
        .map(|c| {
            let mid = Rat::new(BigInt::from(2 * c + 1), BigInt::from(4 * DEN));
            p.intervals().iter().any(|iv| iv.lo < mid && mid < iv.hi)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn union_is_pointwise_or(a in piece(), b in piece()) {
        let u = a.union(&b);
        let want: Vec<bool> = cells(&a).iter().zip(cells(&b)).map(|(x, y)| *x || y).collect();
        prop_assert_eq!(cells(&u), want);
        prop_assert_eq!(u.clone(), b.union(&a));
    }

    #[test]
    fn intersect_and_subtract_split_a_piece(a in piece(), b in piece()) {
        let i = a.intersect(&b);
        let d = a.subtract(&b);
        prop_assert_eq!(i.length() + d.length(), a.length());
        prop_assert!(i.interior_disjoint(&d));
        prop_assert_eq!(i.union(&d), a.clone());
        let want: Vec<bool> = cells(&a).iter().zip(cells(&b)).map(|(x, y)| *x && !y).collect();
        prop_assert_eq!(cells(&d), want);
    }

    #[test]
    fn canonical_form_is_sorted_and_gapped(a in piece(), b in piece()) {
        let u = a.union(&b);
        for w in u.intervals().windows(2) {
            prop_assert!(w[0].hi < w[1].lo);
        }
        for iv in u.intervals() {
            prop_assert!(iv.lo < iv.hi);
        }
    }

    #[test]
    fn clip_pieces_partition(a in piece(), t in 0..=DEN) {
        let left = a.clip(&Rat::zero(), &q(t));
        let right = a.clip(&q(t), &Rat::one());
        prop_assert!(pieces_partition(&[&left, &right], &a));
    }

    #[test]
    fn valuation_is_additive(v in valuation(), a in piece(), b in piece()) {
        let d = b.subtract(&a);
        prop_assert_eq!(v.value(&a.union(&b)), v.value(&a) + v.value(&d));
        prop_assert!(v.value(&a) >= Rat::zero());
    }

    #[test]
    fn cut_from_right_hits_the_target(v in valuation(), a in piece(), num in 0i64..=16) {
        let total = v.value(&a);
        let r = &total * Rat::new(num.into(), 16.into());
        let mut o = Oracle::new(BTreeMap::from([(1, v.clone())]), true);
        let (mark, right) = o.cut_from_right(1, &a, &r).unwrap();
        prop_assert_eq!(v.value(&right), r.clone());
        prop_assert_eq!(right, a.clip(&mark, &Rat::one()));
        prop_assert_eq!(o.cut_count(), 1);
    }

    #[test]
    fn cut_beyond_the_value_is_refused(v in valuation(), a in piece()) {
        let r = v.value(&a) + Rat::one();
        let mut o = Oracle::new(BTreeMap::from([(1, v)]), true);
        prop_assert!(o.cut_from_right(1, &a, &r).is_err());
    }

    #[test]
    fn cut_equal_gives_equal_parts(v in valuation(), n in 2usize..6) {
        let mut o = Oracle::new(BTreeMap::from([(1, v.clone())]), true);
        let parts = o.cut_equal(1, &Piece::whole(), n).unwrap();
        let share = v.value(&Piece::whole()) / Rat::from_integer(n.into());
        for p in &parts {
            prop_assert_eq!(v.value(p), share.clone());
        }
        prop_assert!(pieces_partition(&parts.iter().collect::<Vec<_>>(), &Piece::whole()));
        prop_assert_eq!(o.cut_count(), n as u64 - 1);
    }

    #[test]
    fn core_snapshot_is_envy_free(vals in prop::collection::vec(valuation(), 3..6), cutter_pick in 0usize..6) {
        let n = vals.len();
        let vals: BTreeMap<AgentId, Valuation> = vals.into_iter().enumerate().map(|(i, v)| (i as AgentId + 1, v)).collect();
        let agents: Vec<AgentId> = vals.keys().copied().collect();
        let cutter = agents[cutter_pick % n];
        let mut o = Oracle::new(vals.clone(), true);
        let res = core(&mut o, &Piece::whole(), &agents, cutter).unwrap();
        for (a, pa) in &res.shares {
            for pb in res.shares.values() {
                prop_assert!(vals[a].value(pb) <= vals[a].value(pa));
            }
        }
        let vr = vals[&cutter].value(&Piece::whole());
        let nr = Rat::from_integer(n.into());
        prop_assert!(vals[&cutter].value(&res.residue) * &nr <= vr * (nr - Rat::from_integer(2.into())));
        let mut parts: Vec<&Piece> = res.shares.values().collect();
        parts.push(&res.residue);
        prop_assert!(pieces_partition(&parts, &Piece::whole()));
    }

    #[test]
    fn classes_are_ordered_by_size(x in 0i64..10_000, y in 0i64..10_000, v in 1i64..10_000) {
        let k = Constants::custom(4, BigUint::from(3u32), BigUint::from(7u32), None).unwrap();
        let (lo, hi) = (x.min(y), x.max(y));
        let rank = |c: SignificanceClass| c as u8;
        let v = Rat::from_integer(v.into());
        let a = classify(&Rat::new(lo.into(), 100.into()), &v, &k);
        let b = classify(&Rat::new(hi.into(), 100.into()), &v, &k);
        prop_assert!(rank(a) <= rank(b));
    }

    #[test]
    fn ceil_ln_pow_brackets_the_power(x in 1u32..6, n in 2usize..9) {
        let m = ceil_ln_pow(x, n);
        let target = (n as f64).powi(x as i32).ln();
        prop_assert!((m as f64) >= target - 1e-9);
        prop_assert!((m as f64) < target + 1.0);
    }
}
