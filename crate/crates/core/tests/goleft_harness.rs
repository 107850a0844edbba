//! Drives PrepareGoLeft and GoLeft with snapshots taken on disjoint copies of one pattern,
//! so the residue keeps real value while the exchange machinery runs.

mod common;

use cake_core::cake::{PartialAllocation, Piece};
use cake_core::error::CakeError;
use cake_core::main_protocol::Engine;
use cake_core::oracle::Oracle;
use cake_core::verify::{check_complete, check_envy_free};

#[test]
fn exchanges_keep_both_invariants() {
    let mut completed = 0;
    let mut exchanges = 0;
    for seed in 0..10u64 {
        let vals = common::periodic_instance(seed, 64, 1000);
        let (eng, out) = common::run_on_slices(&vals, 64, common::custom(64, 64, true), 1);
        let st = &eng.stats;
        assert_eq!(st.goleft_runs, 1, "seed {seed}");
        assert!(st.attaches >= 1, "seed {seed}");
        // each exchange follows a cycle found in the envy graph
        assert!(eng.trace.count("cycle_found") as u64 >= st.exchanges, "seed {seed}");
        exchanges += st.exchanges;
        match out {
            Ok(shares) => {
                completed += 1;
                let alloc = PartialAllocation { shares, residue: Piece::empty(), cake: Piece::whole() };
                assert!(check_envy_free(&alloc, &vals).is_empty(), "seed {seed}");
                assert!(check_complete(&alloc, &Piece::whole()), "seed {seed}");
                assert_eq!(eng.trace.count("exit_split"), 1, "seed {seed}");
                assert_eq!(eng.trace.count("domination"), 1, "seed {seed}");
            }
            Err(CakeError::ActiveSetExhausted(_)) => {}
            Err(e) => panic!("seed {seed}: {e}"),
        }
    }
    assert!(completed >= 5, "{completed} runs completed");
    assert!(exchanges >= 5, "{exchanges} exchanges");
}

#[test]
fn smaller_active_sets_run_out() {
    let vals = common::periodic_instance(1, 16, 1000);
    let (_, out) = common::run_on_slices(&vals, 16, common::custom(16, 16, true), 1);
    assert!(matches!(out, Err(CakeError::ActiveSetExhausted(_))), "{out:?}");
}

#[test]
fn larger_active_set_completes() {
    let vals = common::periodic_instance(0, 256, 1000);
    let (eng, out) = common::run_on_slices(&vals, 256, common::custom(256, 256, true), 1);
    assert!(out.is_ok(), "{:?}", out.err());
    assert!(eng.stats.exchanges >= 1);
}

#[test]
fn invariant_checks_do_not_change_the_outcome() {
    for seed in [0u64, 2, 4] {
        let vals = common::periodic_instance(seed, 64, 1000);
        let (_, a) = common::run_on_slices(&vals, 64, common::custom(64, 64, true), 1);
        let (_, b) = common::run_on_slices(&vals, 64, common::custom(64, 64, false), 1);
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn snapshot_input_must_cover_the_cake() {
    let vals = common::periodic_instance(0, 4, 1000);
    let mut eng = Engine::new(Oracle::new(vals, true), common::custom(4, 4, true));
    let out = eng.main_with_snapshots(&Piece::whole(), &[1, 2, 3, 4], Piece::empty(), Vec::new());
    assert!(matches!(out, Err(CakeError::Protocol(_))), "{out:?}");
}
