#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cake_core::cake::{AgentId, Piece, Rat};
use cake_core::core_protocol::core;
use cake_core::main_protocol::{ConstPolicy, Engine, Options, Shares};
use cake_core::oracle::{Oracle, Valuation};
use cake_core::significance::Snapshot;
use num_bigint::{BigInt, BigUint};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn r(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Piecewise-constant density with `segs` random rational breakpoints over `den` and
/// integer densities in `0..=max_density`, with at least one positive segment.
pub fn random_valuation(rng: &mut StdRng, segs: usize, den: i64, max_density: i64, zero_prob: f64) -> Valuation {
    let mut cuts: Vec<i64> = (0..segs.saturating_sub(1)).map(|_| rng.gen_range(1..den)).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut breaks = vec![r(0, 1)];
    breaks.extend(cuts.iter().map(|&c| r(c, den)));
    breaks.push(r(1, 1));
    let mut dens: Vec<Rat> = (0..breaks.len() - 1)
        .map(|_| if rng.gen_bool(zero_prob) { r(0, 1) } else { r(rng.gen_range(1..=max_density), 1) })
        .collect();
    if dens.iter().all(|d| *d == r(0, 1)) {
        let k = rng.gen_range(0..dens.len());
        dens[k] = r(1, 1);
    }
    Valuation::from_steps(&breaks, &dens).expect("valid steps")
}

pub fn random_instance(rng: &mut StdRng, n: usize, segs: usize) -> BTreeMap<AgentId, Valuation> {
    (1..=n as AgentId).map(|a| (a, random_valuation(rng, segs, 997, 9, 0.0))).collect()
}

/// Instances with zero-density stretches, which exercise the degenerate paths.
pub fn random_sparse_instance(rng: &mut StdRng, n: usize, segs: usize) -> BTreeMap<AgentId, Valuation> {
    (1..=n as AgentId).map(|a| (a, random_valuation(rng, segs, 997, 9, 0.3))).collect()
}

pub fn identical_uniform(n: usize) -> BTreeMap<AgentId, Valuation> {
    (1..=n as AgentId).map(|a| (a, Valuation::uniform())).collect()
}

/// `slices` equal copies of a random four-step pattern on `[0, 1/2]`. On `[1/2, 1]` agents 1
/// and 2 have density `heavy`; agents 3 and 4 have density 1/1000 on `[1/2, 51/100]` and
/// nothing after it. Snapshots taken on the copies keep every bonus far from the residue
/// thresholds, so PrepareGoLeft reaches GoLeft while the residue still has value.
pub fn periodic_instance(seed: u64, slices: usize, heavy: i64) -> BTreeMap<AgentId, Valuation> {
    let mut g = rng(seed);
    let steps = 4;
    let pattern: Vec<Vec<i64>> = (0..4).map(|_| (0..steps).map(|_| g.gen_range(1..=9)).collect()).collect();
    let cell = r(1, 2 * (slices * steps) as i64);
    let mut breaks = vec![r(0, 1)];
    for t in 1..=slices * steps {
        breaks.push(&cell * Rat::from_integer(BigInt::from(t)));
    }
    let mut vals = BTreeMap::new();
    for a in 0..4usize {
        let mut b = breaks.clone();
        let mut d: Vec<Rat> = (0..slices * steps).map(|t| r(pattern[a][t % steps], 1)).collect();
        if a < 2 {
            b.push(r(1, 1));
            d.push(r(heavy, 1));
        } else {
            b.push(r(51, 100));
            b.push(r(1, 1));
            d.push(r(1, 1000));
            d.push(r(0, 1));
        }
        vals.insert(a as AgentId + 1, Valuation::from_steps(&b, &d).expect("valid steps"));
    }
    vals
}

/// Main on the whole cake with line 1 replaced by one Core run per slice of `[0, 1/2]`.
pub fn run_on_slices(
    vals: &BTreeMap<AgentId, Valuation>,
    slices: usize,
    opts: Options,
    cutter: AgentId,
) -> (Engine, cake_core::error::Result<Shares>) {
    let mut eng = Engine::new(Oracle::new(vals.clone(), true), opts);
    let agents: Vec<AgentId> = vals.keys().copied().collect();
    let w = r(1, 2 * slices as i64);
    let mut snaps = Vec::new();
    let mut residue = Piece::span(r(1, 2), r(1, 1));
    for t in 0..slices {
        let lo = &w * Rat::from_integer(BigInt::from(t));
        let slice = Piece::span(lo.clone(), lo + &w);
        let res = core(&mut eng.oracle, &slice, &agents, cutter).expect("Core on a fresh slice");
        residue = residue.union(&res.residue);
        snaps.push(Snapshot::new(t, res.shares));
    }
    let out = eng.main_with_snapshots(&Piece::whole(), &agents, residue, snaps);
    (eng, out)
}

pub fn custom(c: u32, cp: u32, check: bool) -> Options {
    Options {
        constants: ConstPolicy::Custom { c: BigUint::from(c), cp: BigUint::from(cp), b: None },
        check_invariants: check,
        fast_degenerate: false,
        trace: true,
    }
}

/// Snapshot on agents `1..=n` whose family `k` has a random ordered extractor list drawn from
/// the other agents. With `narrow`, lists come from a small menu so equal keys are common.
pub fn synthetic_snapshot(g: &mut StdRng, id: usize, n: usize, narrow: bool) -> Snapshot {
    let agents: Vec<AgentId> = (1..=n as AgentId).collect();
    let c: BTreeMap<AgentId, Piece> = agents.iter().map(|&a| (a, Piece::empty())).collect();
    let mut ex = BTreeMap::new();
    for &k in &agents {
        let mut others: Vec<AgentId> = agents.iter().copied().filter(|&a| a != k).collect();
        if narrow {
            if g.gen_bool(0.5) {
                others.reverse();
            }
            others.truncate(g.gen_range(0..2) * (n - 1));
        } else {
            others.shuffle(g);
            let m = g.gen_range(0..=others.len());
            others.truncate(m);
        }
        ex.insert(k, others.into_iter().map(|a| (Piece::empty(), a)).collect());
    }
    let mut s = Snapshot::new(id, c);
    s.extractions = Some(ex);
    s
}

/// The defining condition: every family has the same extractors in the same order.
pub fn isomorphic(a: &Snapshot, b: &Snapshot) -> bool {
    let ka: BTreeSet<AgentId> = a.c.keys().copied().collect();
    let kb: BTreeSet<AgentId> = b.c.keys().copied().collect();
    if ka != kb {
        return false;
    }
    ka.iter().all(|k| {
        let ea = a.e_pieces(*k);
        let eb = b.e_pieces(*k);
        ea.len() == eb.len() && ea.iter().zip(eb).all(|(x, y)| x.1 == y.1)
    })
}
