mod common;

use std::collections::{BTreeMap, BTreeSet};

use cake_core::cake::Piece;
use cake_core::significance::Snapshot;
use rand::Rng;

fn factorial(n: u64) -> u64 {
    (1..=n).product()
}

#[test]
fn key_equality_matches_the_definition() {
    for n in [3usize, 4] {
        for narrow in [false, true] {
            let mut g = common::rng(n as u64 * 10 + narrow as u64);
            let snaps: Vec<Snapshot> = (0..1000).map(|id| common::synthetic_snapshot(&mut g, id, n, narrow)).collect();
            let keys: Vec<_> = snaps.iter().map(|s| s.iso_key().unwrap()).collect();
            let mut agree = 0;
            for _ in 0..20_000 {
                let a = g.gen_range(0..snaps.len());
                let b = g.gen_range(0..snaps.len());
                assert_eq!(keys[a] == keys[b], common::isomorphic(&snaps[a], &snaps[b]), "n={n} {a} vs {b}");
                agree += (keys[a] == keys[b]) as usize;
            }
            if narrow {
                assert!(agree > 0, "the narrow menu should produce isomorphic pairs");
            }
        }
    }
}

#[test]
fn class_count_stays_below_the_permutation_bound() {
    for n in [3usize, 4] {
        let mut g = common::rng(700 + n as u64);
        let classes: BTreeSet<_> = (0..5000).map(|id| common::synthetic_snapshot(&mut g, id, n, false).iso_key().unwrap()).collect();
        let bound = factorial(n as u64).pow(n as u32) as usize;
        assert!(classes.len() <= bound, "n={n}: {} classes", classes.len());
    }
}

#[test]
fn keys_ignore_ids_and_piece_contents() {
    let mut g = common::rng(5);
    let s = common::synthetic_snapshot(&mut g, 3, 4, false);
    let mut t = s.clone();
    t.id = 99;
    for list in t.extractions.as_mut().unwrap().values_mut() {
        for (p, _) in list.iter_mut() {
            *p = Piece::whole();
        }
    }
    assert_eq!(s.iso_key().unwrap(), t.iso_key().unwrap());
}

#[test]
fn order_of_extractors_matters() {
    let mut g = common::rng(6);
    let mut s = common::synthetic_snapshot(&mut g, 0, 3, false);
    let ex = s.extractions.as_mut().unwrap();
    ex.insert(1, vec![(Piece::empty(), 2), (Piece::empty(), 3)]);
    let mut t = s.clone();
    t.extractions.as_mut().unwrap().insert(1, vec![(Piece::empty(), 3), (Piece::empty(), 2)]);
    assert_ne!(s.iso_key().unwrap(), t.iso_key().unwrap());
    assert!(!common::isomorphic(&s, &t));
}

#[test]
fn key_before_extraction_is_a_state_error() {
    let s = Snapshot::new(0, BTreeMap::new());
    assert!(matches!(s.iso_key(), Err(cake_core::error::CakeError::State(_))));
}
