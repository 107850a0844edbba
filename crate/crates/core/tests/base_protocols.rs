mod common;

use std::collections::BTreeMap;

use cake_core::cake::{AgentId, Piece};
use cake_core::main_protocol::{Engine, Options};
use cake_core::oracle::{Oracle, Valuation};
use cake_core::verify::{check_complete, check_envy_free, check_proportional};

fn divide(vals: &BTreeMap<AgentId, Valuation>, full_info: bool) -> (cake_core::cake::PartialAllocation, u64, u64) {
    let mut eng = Engine::new(Oracle::new(vals.clone(), full_info), Options::default());
    let alloc = eng.run().expect("base protocols always finish");
    let l = eng.oracle.ledger();
    (alloc, l.cut_count, l.eval_count)
}

fn sweep(n: usize, count: u64, sparse: bool) {
    for seed in 0..count {
        let mut g = common::rng(seed * 7 + n as u64);
        let segs = 1 + (seed as usize % 9);
        let vals = if sparse { common::random_sparse_instance(&mut g, n, segs) } else { common::random_instance(&mut g, n, segs) };
        let (alloc, cuts, evals) = divide(&vals, true);
        assert!(check_envy_free(&alloc, &vals).is_empty(), "n={n} seed={seed}: envy");
        assert!(check_complete(&alloc, &Piece::whole()), "n={n} seed={seed}: incomplete");
        assert!(check_proportional(&alloc, &vals).is_empty(), "n={n} seed={seed}: not proportional");
        assert!(evals <= (n as u64 - 1) * cuts + n as u64, "n={n} seed={seed}: {evals} evals for {cuts} cuts");
    }
}

#[test]
fn single_agent_takes_everything() {
    sweep(1, 200, false);
}

#[test]
fn cut_and_choose_is_envy_free() {
    sweep(2, 200, false);
    sweep(2, 100, true);
}

#[test]
fn selfridge_conway_is_envy_free() {
    sweep(3, 200, false);
    sweep(3, 100, true);
}

#[test]
fn selfridge_conway_cut_count_is_bounded() {
    // two cuts for the thirds, at most one trim, two more to split the trimming
    for seed in 0..100u64 {
        let mut g = common::rng(40_000 + seed);
        let vals = common::random_instance(&mut g, 3, 6);
        let (_, cuts, _) = divide(&vals, true);
        assert!(cuts <= 5, "seed={seed}: {cuts} cuts");
    }
}

#[test]
fn identical_uniform_thirds() {
    let vals = common::identical_uniform(3);
    let (alloc, _, _) = divide(&vals, true);
    for p in alloc.shares.values() {
        assert_eq!(p.length(), cake_core::cake::rat(1, 3));
    }
}

#[test]
fn charged_evals_still_give_the_same_division() {
    for seed in 0..30u64 {
        let mut g = common::rng(50_000 + seed);
        let vals = common::random_instance(&mut g, 3, 5);
        let (a, _, _) = divide(&vals, true);
        let (b, _, _) = divide(&vals, false);
        assert_eq!(a, b, "seed={seed}");
    }
}
