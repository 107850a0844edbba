use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_traits::Zero;
use serde_json::json;

use crate::cake::{AgentId, Piece, Rat};
use crate::core_protocol::core_cut_bound;
use crate::error::{CakeError, Result};
use crate::main_protocol::{fold, Engine, Level, PrepareAccount};
use crate::significance::{ceil_ln_pow, classify, is_significant, semi_invariant, Constants, SignificanceClass, Snapshot};

pub enum Prepared {
    Finished,
    Ready(Vec<Snapshot>),
}

struct Discrepancy {
    j: usize,
    k: AgentId,
    a: Piece,
    b: AgentId,
    i: AgentId,
}

enum AfterDiscrepancy {
    Finished,
    Restart,
}

/// Cut bound of PrepareGoLeft outside its recursive Main calls. Line 18 may fire once per agent,
/// each firing rounded up on its own, hence `n * ceil(n ln n)` for that term.
pub fn prepare_cut_bound(consts: &Constants) -> BigUint {
    let n = consts.n;
    let tc = BigUint::from(core_cut_bound(n));
    let n2cp = BigUint::from(n * n) * &consts.cp;
    let ln = BigUint::from(ceil_ln_pow(n as u32, n));
    let line18 = BigUint::from(n) * &ln;
    &consts.cp * &tc + &n2cp * &ln * &tc + &n2cp * (&n2cp + &consts.b * &tc + line18 * &tc)
}

struct Prep {
    snaps: Vec<Snapshot>,
    start_cuts: u64,
    si: Vec<usize>,
}

impl Prep {
    fn c_pieces(&self) -> Vec<&Piece> {
        self.snaps.iter().flat_map(|s| s.c.values()).collect()
    }

    fn e_pieces(&self) -> Vec<&Piece> {
        self.snaps.iter().flat_map(|s| s.all_e_pieces()).collect()
    }

    /// Physical residue plus every extracted piece not yet given away.
    fn effective(&self, residue: &Piece) -> Piece {
        residue.union(&Piece::union_all(self.e_pieces()))
    }

    fn return_extractions(&mut self, lvl: &mut Level) {
        let back = Piece::union_all(self.e_pieces());
        lvl.residue = lvl.residue.union(&back);
        for s in &mut self.snaps {
            s.extractions = None;
        }
    }

    fn fold_snapshots(&mut self, lvl: &mut Level) {
        for s in self.snaps.drain(..) {
            fold(&mut lvl.sr, &s.c);
        }
    }
}

fn conserve(eng: &mut Engine, lvl: &Level, st: &Prep, extra: &[&Piece], at: &str) -> Result<()> {
    let mut parts = st.c_pieces();
    parts.extend(st.e_pieces());
    parts.extend_from_slice(extra);
    eng.conserve(lvl, &parts, at)
}

fn values(eng: &mut Engine, agents: &[AgentId], p: &Piece) -> Result<BTreeMap<AgentId, Rat>> {
    agents.iter().map(|&a| Ok((a, eng.val(a, p)?))).collect()
}

fn bonus(eng: &mut Engine, s: &Snapshot, i: AgentId, k: AgentId) -> Result<Rat> {
    Ok(eng.val(i, &s.c[&i])? - eng.val(i, &s.c[&k])?)
}

/// Records the semi-invariant and fails if it went down.
fn track_semi_invariant(eng: &mut Engine, lvl: &Level, st: &mut Prep) -> Result<usize> {
    let eff = st.effective(&lvl.residue);
    let vals = values(eng, &lvl.agents, &eff)?;
    let oracle = &mut eng.oracle;
    let count = semi_invariant(&st.snaps, |a, p| oracle.eval(a, p).expect("known agent"), &vals, &lvl.consts);
    if let Some(&last) = st.si.last() {
        if count < last {
            return Err(CakeError::Protocol(format!("semi-invariant decreased from {last} to {count}")));
        }
    }
    st.si.push(count);
    Ok(count)
}

fn account(eng: &mut Engine, lvl: &Level, st: &Prep) -> Result<()> {
    let cuts = eng.oracle.cut_count() - st.start_cuts;
    let bound = prepare_cut_bound(&lvl.consts);
    eng.stats.prepare_accounting.push(PrepareAccount { n: lvl.n(), cuts, bound: bound.to_string() });
    eng.stats.semi_invariant.push(st.si.clone());
    if BigUint::from(cuts) > bound {
        return Err(CakeError::Protocol(format!("PrepareGoLeft made {cuts} cuts, above its bound {bound}")));
    }
    Ok(())
}

/// Leaves through the zero-value exit when some agent values the effective residue at zero.
fn zero_exit(eng: &mut Engine, lvl: &mut Level, st: &mut Prep) -> Result<bool> {
    let eff = st.effective(&lvl.residue);
    let zero = eng.zero_agents(&lvl.agents.clone(), &eff)?;
    if zero.is_empty() {
        return Ok(false);
    }
    st.return_extractions(lvl);
    st.fold_snapshots(lvl);
    account(eng, lvl, st)?;
    eng.finish_without(lvl, &zero)?;
    Ok(true)
}

pub fn prepare_goleft(eng: &mut Engine, lvl: &mut Level) -> Result<Prepared> {
    let n = lvl.n();
    let cp = lvl.consts.cp_count()?;
    let mut st = Prep { snaps: Vec::new(), start_cuts: eng.oracle.cut_count(), si: Vec::new() };

    // line 1
    for j in 0..cp as usize {
        let cutter = lvl.agents[j % n];
        let res = eng.core(lvl, cutter)?;
        st.snaps.push(Snapshot::new(j, res.shares));
        eng.trace.emit(lvl.depth, "snapshot_created", json!({ "j": j, "cutter": cutter, "zero": res.zero_residue }));
    }
    after_line1(eng, lvl, st)
}

/// Lines 2-34 on snapshots produced elsewhere. Their pieces and the level's residue and
/// `S_R` must together make up the level's input.
pub fn prepare_from_snapshots(eng: &mut Engine, lvl: &mut Level, snaps: Vec<Snapshot>) -> Result<Prepared> {
    let st = Prep { snaps, start_cuts: eng.oracle.cut_count(), si: Vec::new() };
    after_line1(eng, lvl, st)
}

fn after_line1(eng: &mut Engine, lvl: &mut Level, mut st: Prep) -> Result<Prepared> {
    let n = lvl.n();
    let c = lvl.consts.c_count()? as usize;
    let budget = (n * n) as u64 * lvl.consts.cp_count()?;
    conserve(eng, lvl, &st, &[], "snapshots")?;
    if zero_exit(eng, lvl, &mut st)? {
        return Ok(Prepared::Finished);
    }
    track_semi_invariant(eng, lvl, &mut st)?;

    let mut firings = 0u64;
    let mut restarts = 0u64;
    let mut si_at_restart = *st.si.last().expect("tracked above");
    loop {
        if polarize(eng, lvl, &mut st, &mut firings, budget)? {
            return Ok(Prepared::Finished);
        }
        match extract(eng, lvl, &mut st)? {
            None => break,
            Some(d) => match handle_discrepancy(eng, lvl, &mut st, d)? {
                AfterDiscrepancy::Finished => return Ok(Prepared::Finished),
                AfterDiscrepancy::Restart => {
                    restarts += 1;
                    eng.stats.restarts += 1;
                    if restarts > budget - 1 {
                        return Err(CakeError::IterationBudgetExceeded(format!(
                            "{restarts} restarts exceed n^2 C' - 1 = {}",
                            budget - 1
                        )));
                    }
                    if zero_exit(eng, lvl, &mut st)? {
                        return Ok(Prepared::Finished);
                    }
                    let now = track_semi_invariant(eng, lvl, &mut st)?;
                    if now <= si_at_restart {
                        return Err(CakeError::Protocol(format!(
                            "semi-invariant did not grow between restarts ({si_at_restart} -> {now})"
                        )));
                    }
                    si_at_restart = now;
                    eng.trace.emit(lvl.depth, "restart", json!({ "count": restarts, "semi_invariant": now }));
                }
            },
        }
    }
    let chosen = select_isomorphic(eng, lvl, &mut st, c)?;
    conserve(eng, lvl, &st, &[], "iso_selected")?;
    account(eng, lvl, &st)?;
    Ok(Prepared::Ready(chosen))
}

fn first_intermediate(eng: &mut Engine, lvl: &Level, st: &Prep) -> Result<Option<(usize, AgentId, AgentId)>> {
    let vals = values(eng, &lvl.agents, &st.effective(&lvl.residue))?;
    for s in &st.snaps {
        for &i in &lvl.agents {
            for &k in &lvl.agents {
                if i == k {
                    continue;
                }
                let x = bonus(eng, s, i, k)?;
                if classify(&x, &vals[&i], &lvl.consts) == SignificanceClass::Intermediate {
                    return Ok(Some((s.id, i, k)));
                }
            }
        }
    }
    Ok(None)
}

/// Lines 3-5. Returns true when the zero-value exit finished the level.
fn polarize(eng: &mut Engine, lvl: &mut Level, st: &mut Prep, firings: &mut u64, budget: u64) -> Result<bool> {
    let reps = ceil_ln_pow(lvl.n() as u32, lvl.n());
    while let Some((j, i, k)) = first_intermediate(eng, lvl, st)? {
        *firings += 1;
        eng.stats.polarize_firings += 1;
        if *firings > budget {
            return Err(CakeError::IterationBudgetExceeded(format!("polarize fired more than n^2 C' = {budget} times")));
        }
        let before = *st.si.last().expect("tracked before polarize");
        eng.cores_into_sr(lvl, i, reps)?;
        conserve(eng, lvl, st, &[], "polarize")?;
        eng.trace.emit(lvl.depth, "polarize_fired", json!({ "j": j, "i": i, "k": k, "runs": reps }));
        if zero_exit(eng, lvl, st)? {
            return Ok(true);
        }
        let after = track_semi_invariant(eng, lvl, st)?;
        if after <= before {
            return Err(CakeError::Protocol(format!("polarize left the semi-invariant at {after}")));
        }
    }
    Ok(false)
}

/// Lines 6-13 over all `(j, k)`; stops at the first discrepancy.
fn extract(eng: &mut Engine, lvl: &mut Level, st: &mut Prep) -> Result<Option<Discrepancy>> {
    let eff = st.effective(&lvl.residue);
    let eff_vals = values(eng, &lvl.agents, &eff)?;
    for s in &mut st.snaps {
        s.extractions = Some(BTreeMap::new());
    }
    for j in 0..st.snaps.len() {
        for &k in &lvl.agents.clone() {
            let mut marks: Vec<(Rat, AgentId)> = Vec::new();
            for &i in &lvl.agents.clone() {
                if i == k {
                    continue;
                }
                let x = bonus(eng, &st.snaps[j], i, k)?;
                if classify(&x, &eff_vals[&i], &lvl.consts) != SignificanceClass::Insignificant {
                    continue;
                }
                let (t, _) = eng.oracle.cut_from_right(i, &lvl.residue, &x).map_err(|e| {
                    CakeError::Protocol(format!("agent {i} cannot cut its bonus from the residue: {e}"))
                })?;
                marks.push((t, i));
            }
            marks.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut list = Vec::with_capacity(marks.len());
            let mut right = Rat::from_integer(1.into());
            for (t, i) in &marks {
                list.push((lvl.residue.clip(t, &right), *i));
                right = t.clone();
            }
            let a = match marks.last() {
                Some((t, _)) => lvl.residue.clip(t, &Rat::from_integer(1.into())),
                None => Piece::empty(),
            };
            lvl.residue = lvl.residue.subtract(&a);
            let m = list.len();
            st.snaps[j].extractions.as_mut().expect("initialised above").insert(k, list);
            conserve(eng, lvl, st, &[], "extract")?;
            eng.trace.emit(lvl.depth, "extract_done", json!({ "j": st.snaps[j].id, "k": k, "m": m }));
            for &i in &lvl.agents.clone() {
                let va = eng.val(i, &a)?;
                if va > Rat::zero() && is_significant(&va, &eff_vals[&i], &lvl.consts) {
                    let b = marks.last().expect("a nonempty piece comes from a mark").1;
                    return Ok(Some(Discrepancy { j, k, a, b, i }));
                }
            }
        }
    }
    Ok(None)
}

/// Lines 14-29.
fn handle_discrepancy(eng: &mut Engine, lvl: &mut Level, st: &mut Prep, d: Discrepancy) -> Result<AfterDiscrepancy> {
    eng.stats.discrepancies += 1;
    let n = lvl.n();
    let nr = Rat::from_integer(n.into());
    eng.trace.emit(
        lvl.depth,
        "discrepancy",
        json!({ "j": st.snaps[d.j].id, "k": d.k, "b": d.b, "i": d.i, "piece": d.a.to_pairs() }),
    );
    // the current extraction is A itself; everything extracted before goes back
    if let Some(ex) = st.snaps[d.j].extractions.as_mut() {
        ex.remove(&d.k);
    }
    st.return_extractions(lvl);
    let a = d.a;
    conserve(eng, lvl, st, &[&a], "discrepancy")?;

    eng.cores_into_sr(lvl, d.i, lvl.consts.b_count()?)?;
    let reps = ceil_ln_pow(n as u32, n);
    let mut fired: BTreeSet<AgentId> = BTreeSet::new();
    loop {
        let mut hit = None;
        for &r in &lvl.agents {
            let va = eng.val(r, &a)?;
            let vr = eng.val(r, &lvl.residue.clone())?;
            if va.is_zero() && vr.is_zero() {
                continue;
            }
            if &va / &nr <= vr && vr <= &nr * &va {
                hit = Some(r);
                break;
            }
        }
        let Some(r) = hit else { break };
        if !fired.insert(r) {
            return Err(CakeError::Protocol(format!("line 18 fired twice for agent {r} in one discrepancy")));
        }
        eng.stats.line18_firings += 1;
        eng.cores_into_sr(lvl, r, reps)?;
        eng.trace.emit(lvl.depth, "line18_fired", json!({ "r": r, "runs": reps }));
    }
    conserve(eng, lvl, st, &[&a], "discrepancy_cores")?;

    let vb_r = eng.val(d.b, &lvl.residue.clone())?;
    let vb_a = eng.val(d.b, &a)?;
    if vb_r >= vb_a {
        let mut n1 = Vec::new();
        let mut n2 = Vec::new();
        for &r in &lvl.agents {
            let va = eng.val(r, &a)?;
            let vr = eng.val(r, &lvl.residue.clone())?;
            if va > Rat::zero() && va >= &nr * &vr {
                n1.push(r);
            } else {
                n2.push(r);
            }
        }
        if n1.is_empty() || n2.is_empty() {
            return Err(CakeError::Protocol(format!("discrepancy split is one-sided (N1 = {n1:?}, N2 = {n2:?})")));
        }
        eng.stats.discrepancy_splits += 1;
        eng.trace.emit(lvl.depth, "discrepancy_split", json!({ "n1": n1, "n2": n2 }));
        st.fold_snapshots(lvl);
        account(eng, lvl, st)?;
        let rest = std::mem::take(&mut lvl.residue);
        let s1 = eng.main(&a, &n1, lvl.depth + 1)?;
        let s2 = eng.main(&rest, &n2, lvl.depth + 1)?;
        fold(&mut lvl.sr, &s1);
        fold(&mut lvl.sr, &s2);
        return Ok(AfterDiscrepancy::Finished);
    }
    lvl.residue = lvl.residue.union(&a);
    Ok(AfterDiscrepancy::Restart)
}

/// Line 32: the largest class of isomorphic snapshots, cut down to `c`.
fn select_isomorphic(eng: &mut Engine, lvl: &mut Level, st: &mut Prep, c: usize) -> Result<Vec<Snapshot>> {
    let mut classes: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (pos, s) in st.snaps.iter().enumerate() {
        classes.entry(s.iso_key()?).or_default().push(pos);
    }
    let best = classes
        .values()
        .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
        .cloned()
        .unwrap_or_default();
    if best.len() < c {
        return Err(CakeError::PigeonholeFailure { found: best.len(), needed: c });
    }
    let keep: BTreeSet<usize> = best.into_iter().take(c).collect();
    let mut chosen = Vec::with_capacity(c);
    for (pos, s) in std::mem::take(&mut st.snaps).into_iter().enumerate() {
        if keep.contains(&pos) {
            chosen.push(s);
        } else {
            let back = Piece::union_all(s.all_e_pieces());
            lvl.residue = lvl.residue.union(&back);
            fold(&mut lvl.sr, &s.c);
        }
    }
    eng.trace.emit(
        lvl.depth,
        "iso_selected",
        json!({ "classes": classes.len(), "chosen": chosen.iter().map(|s| s.id).collect::<Vec<_>>() }),
    );
    st.snaps = chosen;
    Ok(st.snaps.clone())
}
