use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_traits::Zero;
use serde_json::json;

use crate::cake::{AgentId, Piece, Rat};
use crate::error::{CakeError, Result};
use crate::main_protocol::{fold, Engine, Level, Shares};
use crate::significance::{is_significant, ConstSource, Snapshot};

/// Families are named by the agent who held them in the snapshots; `owner[k]` holds family `k` now.
#[derive(Clone, Debug)]
pub struct GoLeftState {
    pub snaps: Vec<Snapshot>,
    pub active: Vec<usize>,
    pub owner: BTreeMap<AgentId, AgentId>,
    pub d: BTreeMap<AgentId, BTreeSet<AgentId>>,
    pub g: BTreeMap<AgentId, usize>,
    pub m: BTreeMap<AgentId, usize>,
    /// Extractors of family `k`, right to left; the same in every snapshot.
    pub extractors: BTreeMap<AgentId, Vec<AgentId>>,
    /// `b[pos][a] = v_a(c_{pos,a})` at the start.
    pub b: Vec<BTreeMap<AgentId, Rat>>,
    pub sb: Shares,
    pub r0: BTreeMap<AgentId, Rat>,
}

impl GoLeftState {
    pub fn new(snaps: Vec<Snapshot>, agents: &[AgentId], r0: BTreeMap<AgentId, Rat>, b: Vec<BTreeMap<AgentId, Rat>>) -> Result<Self> {
        let first = snaps.first().ok_or_else(|| CakeError::State("GoLeft needs at least one snapshot".into()))?;
        let key = first.iso_key()?;
        for s in &snaps {
            if s.iso_key()? != key {
                return Err(CakeError::State(format!("snapshot {} is not isomorphic to snapshot {}", s.id, first.id)));
            }
        }
        let extractors: BTreeMap<AgentId, Vec<AgentId>> = key.into_iter().collect();
        Ok(GoLeftState {
            active: (0..snaps.len()).collect(),
            owner: agents.iter().map(|&a| (a, a)).collect(),
            d: agents.iter().map(|&a| (a, BTreeSet::from([a]))).collect(),
            g: agents.iter().map(|&a| (a, 0)).collect(),
            m: extractors.iter().map(|(k, l)| (*k, l.len())).collect(),
            extractors,
            b,
            snaps,
            sb: agents.iter().map(|&a| (a, Piece::empty())).collect(),
            r0,
        })
    }

    /// `c_{jk}` with the first `g_k` extracted pieces attached.
    pub fn held(&self, pos: usize, k: AgentId) -> Piece {
        let s = &self.snaps[pos];
        let attached: Vec<&Piece> = s.e_pieces(k)[..self.g[&k]].iter().map(|(p, _)| p).collect();
        s.c[&k].union(&Piece::union_all(attached))
    }

    fn unattached(&self, pos: usize) -> Vec<&Piece> {
        let s = &self.snaps[pos];
        self.g.iter().flat_map(|(k, g)| s.e_pieces(*k)[*g..].iter().map(|(p, _)| p)).collect()
    }

    pub fn in_t(&self, k: AgentId) -> bool {
        self.g[&k] < self.owner.len() - 1
    }

    /// Current division of the active snapshots.
    pub fn s_a(&self) -> Shares {
        let mut out: Shares = self.owner.values().map(|&a| (a, Piece::empty())).collect();
        for &pos in &self.active {
            for (k, holder) in &self.owner {
                let s = out.get_mut(holder).expect("every holder is an agent");
                *s = s.union(&self.held(pos, *k));
            }
        }
        out
    }

    /// Single in-edge source of each `T` vertex: the family held by its next extractor.
    pub fn wish_preds(&self) -> Result<BTreeMap<AgentId, AgentId>> {
        let family_of: BTreeMap<AgentId, AgentId> = self.owner.iter().map(|(k, a)| (*a, *k)).collect();
        let mut pred = BTreeMap::new();
        for (&k, &g) in &self.g {
            if !self.in_t(k) {
                continue;
            }
            let x = *self.extractors[&k]
                .get(g)
                .ok_or_else(|| CakeError::State(format!("family {k} has no piece left to attach")))?;
            pred.insert(k, family_of[&x]);
        }
        Ok(pred)
    }

    /// Walks back from the smallest `T` vertex until a vertex repeats or a `T'` vertex is reached.
    pub fn find_cycle(&self, pred: &BTreeMap<AgentId, AgentId>) -> Result<Vec<AgentId>> {
        let start = *pred.keys().next().ok_or_else(|| CakeError::State("no family left in T".into()))?;
        let mut walk = vec![start];
        loop {
            let u = *walk.last().expect("nonempty");
            let Some(&p) = pred.get(&u) else {
                // u is in T', which has an edge from every vertex
                let mut cyc = vec![walk[0]];
                cyc.extend(walk[1..].iter().rev());
                return Ok(cyc);
            };
            if let Some(q) = walk.iter().position(|&w| w == p) {
                let mut cyc = vec![walk[q]];
                cyc.extend(walk[q + 1..].iter().rev());
                return Ok(cyc);
            }
            walk.push(p);
        }
    }
}

fn conserve(eng: &mut Engine, lvl: &Level, st: &GoLeftState, at: &str) -> Result<()> {
    let mut parts: Vec<&Piece> = st.sb.values().collect();
    for &pos in &st.active {
        parts.extend(st.snaps[pos].c.values());
        parts.extend(st.snaps[pos].all_e_pieces());
    }
    eng.conserve(lvl, &parts, at)
}

/// Moves a snapshot out of the active set: holders keep what they hold in `S_B`, the rest of
/// its extracted pieces goes back to the residue except `keep_out`.
fn cull(st: &mut GoLeftState, lvl: &mut Level, pos: usize, keep_out: Option<AgentId>) -> Piece {
    let mut taken = Piece::empty();
    for (k, holder) in st.owner.clone() {
        let h = st.held(pos, k);
        let s = st.sb.get_mut(&holder).expect("holder is an agent");
        *s = s.union(&h);
    }
    for (k, g) in st.g.clone() {
        for (t, (p, _)) in st.snaps[pos].e_pieces(k).iter().enumerate().skip(g) {
            if keep_out == Some(k) && t == g {
                taken = p.clone();
            } else {
                lvl.residue = lvl.residue.union(p);
            }
        }
    }
    st.active.retain(|&x| x != pos);
    taken
}

/// Picks up to `count` active snapshots maximising `score`, ties by ascending id.
fn pick(st: &GoLeftState, count: usize, taken: &BTreeSet<usize>, mut score: impl FnMut(usize) -> Result<Rat>) -> Result<Vec<usize>> {
    let mut cands = Vec::new();
    for &pos in &st.active {
        if !taken.contains(&pos) {
            cands.push((score(pos)?, pos));
        }
    }
    cands.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(cands.into_iter().take(count).map(|(_, p)| p).collect())
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Lines 9-26 for family `k`.
fn attach(eng: &mut Engine, lvl: &mut Level, st: &mut GoLeftState, k: AgentId) -> Result<()> {
    let n = lvl.n();
    let l = st.g[&k];
    let members: Vec<AgentId> = st.d[&k].iter().copied().collect();
    let m = members.len();
    let outsiders: Vec<AgentId> = lvl.agents.iter().copied().filter(|a| !st.d[&k].contains(a)).collect();
    let a_start = st.active.len();

    let per_outsider = ceil_div(a_start, n - m + 1);
    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    for &i in &outsiders {
        let picks = pick(st, per_outsider, &chosen, |pos| {
            let b = st.b[pos][&i].clone();
            Ok(b - eng.val(i, &st.held(pos, k))?)
        })?;
        chosen.extend(picks);
    }
    let culled_out = chosen.len();
    for &pos in &chosen {
        cull(st, lvl, pos, None);
    }
    if st.active.is_empty() {
        return Err(CakeError::ActiveSetExhausted(format!("attaching to family {k} culled every snapshot")));
    }

    let a_mid = st.active.len();
    let per_member = ceil_div(m * a_mid, m * m + 1);
    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    for &i in &members {
        let picks = pick(st, per_member, &chosen, |pos| eng.val(i, &st.snaps[pos].e_pieces(k)[l].0))?;
        chosen.extend(picks);
    }
    let culled_in = chosen.len();
    let mut p = Piece::empty();
    for &pos in &chosen {
        p = p.union(&cull(st, lvl, pos, Some(k)));
    }
    if st.active.is_empty() {
        return Err(CakeError::ActiveSetExhausted(format!("attaching to family {k} culled every snapshot")));
    }
    if !p.is_empty() {
        let sub = eng.main(&p, &members, lvl.depth + 1)?;
        fold(&mut st.sb, &sub);
    }
    *st.g.get_mut(&k).expect("family") += 1;
    eng.stats.attaches += 1;
    let left = st.active.len();
    if lvl.consts.source == ConstSource::Paper && a_start > n.pow(4) && a_start > 2 * n.pow(3) * left {
        return Err(CakeError::Protocol(format!("active set shrank from {a_start} to {left} in one attach")));
    }
    eng.trace.emit(
        lvl.depth,
        "attach",
        json!({ "k": k, "culled_outsiders": culled_out, "culled_members": culled_in, "active": left }),
    );
    Ok(())
}

pub fn goleft(eng: &mut Engine, lvl: &mut Level, snaps: Vec<Snapshot>) -> Result<(Vec<AgentId>, Vec<AgentId>)> {
    eng.stats.goleft_runs += 1;
    let mut eff = lvl.residue.clone();
    for s in &snaps {
        eff = eff.union(&Piece::union_all(s.all_e_pieces()));
    }
    let agents = lvl.agents.clone();
    let mut r0 = BTreeMap::new();
    for &a in &agents {
        r0.insert(a, eng.val(a, &eff)?);
    }
    let mut b = Vec::new();
    for s in &snaps {
        let mut row = BTreeMap::new();
        for &a in &agents {
            row.insert(a, eng.val(a, &s.c[&a])?);
        }
        b.push(row);
    }
    let mut st = GoLeftState::new(snaps, &agents, r0, b)?;
    conserve(eng, lvl, &st, "goleft_start")?;
    if eng.opts.check_invariants {
        check_all(eng, lvl, &st)?;
    }

    let terminal = loop {
        if let Some(k) = agents.iter().copied().find(|&k| st.in_t(k) && st.g[&k] == st.m[&k]) {
            break k;
        }
        let pred = st.wish_preds()?;
        let cycle = st.find_cycle(&pred)?;
        let t_before: BTreeSet<AgentId> = pred.keys().copied().collect();
        eng.trace.emit(
            lvl.depth,
            "graph_built",
            json!({ "edges": pred.iter().map(|(k, u)| [*u, *k]).collect::<Vec<_>>(), "t_prime": agents.iter().filter(|k| !t_before.contains(k)).collect::<Vec<_>>() }),
        );
        eng.trace.emit(lvl.depth, "cycle_found", json!({ "cycle": cycle }));
        if !cycle.iter().any(|u| t_before.contains(u)) {
            return Err(CakeError::Protocol("wish-graph cycle has no T vertex".into()));
        }
        let mut in_t: Vec<AgentId> = cycle.iter().copied().filter(|u| t_before.contains(u)).collect();
        in_t.sort_unstable();
        for &k in &in_t {
            attach(eng, lvl, &mut st, k)?;
        }
        let old = st.owner.clone();
        let len = cycle.len();
        for idx in 0..len {
            let giver = cycle[idx];
            let target = cycle[(idx + 1) % len];
            st.owner.insert(target, old[&giver]);
        }
        for &k in &in_t {
            let receiver = st.owner[&k];
            st.d.get_mut(&k).expect("family").insert(receiver);
        }
        eng.stats.exchanges += 1;
        eng.trace.emit(lvl.depth, "exchange", json!({ "cycle": cycle, "owner": st.owner }));
        conserve(eng, lvl, &st, "exchange")?;
        if eng.opts.check_invariants {
            check_all(eng, lvl, &st)?;
        }
    };

    let a2: Vec<AgentId> = st.d[&terminal].iter().copied().collect();
    let a1: Vec<AgentId> = agents.iter().copied().filter(|a| !st.d[&terminal].contains(a)).collect();
    if a1.is_empty() {
        return Err(CakeError::Protocol(format!("family {terminal} passed through every agent")));
    }
    if eng.opts.check_invariants {
        check_exit_advantage(eng, lvl, &st, &a1, &a2)?;
    }
    let sa = st.s_a();
    fold(&mut lvl.sr, &st.sb);
    fold(&mut lvl.sr, &sa);
    for pos in st.active.clone() {
        let back = Piece::union_all(st.unattached(pos));
        lvl.residue = lvl.residue.union(&back);
    }
    eng.conserve(lvl, &[], "goleft_exit")?;
    eng.trace.emit(lvl.depth, "exit_split", json!({ "k": terminal, "a1": a1, "a2": a2 }));
    Ok((a1, a2))
}

fn check_all(eng: &mut Engine, lvl: &Level, st: &GoLeftState) -> Result<()> {
    eng.stats.invariant_checks += 1;
    if let Some(why) = invariant1_violation(eng, st) {
        return Err(CakeError::Protocol(format!("GoLeft invariant 1: {why}")));
    }
    if let Some(why) = invariant2_violation(eng, lvl, st) {
        return Err(CakeError::Protocol(format!("GoLeft invariant 2: {why}")));
    }
    Ok(())
}

/// Every holder gets at least its starting value in every active snapshot.
pub fn invariant1_violation(eng: &Engine, st: &GoLeftState) -> Option<String> {
    for &pos in &st.active {
        for (k, holder) in &st.owner {
            if eng.peek(*holder, &st.held(pos, *k)) < st.b[pos][holder] {
                return Some(format!("agent {holder} holds family {k} below its start value in snapshot {}", st.snaps[pos].id));
            }
        }
    }
    None
}

/// Position of `a` among the extractors of family `k`, counting `k` itself as position 0.
fn position(st: &GoLeftState, a: AgentId, k: AgentId) -> Option<usize> {
    if a == k {
        return Some(0);
    }
    st.extractors[&k].iter().position(|&x| x == a).map(|p| p + 1)
}

/// Checks the lower bound on `S_B` bonuses for every ordered pair.
pub fn invariant2_violation(eng: &Engine, lvl: &Level, st: &GoLeftState) -> Option<String> {
    let ncp = Rat::from_integer(BigInt::from(lvl.n())) * Rat::from_integer(BigInt::from(lvl.consts.cp.clone()));
    for &i in &lvl.agents {
        for &i2 in &lvl.agents {
            if i == i2 {
                continue;
            }
            let bv = eng.peek(i, &st.sb[&i]) - eng.peek(i, &st.sb[&i2]);
            let mut rhs = Rat::zero();
            for (&k, &g) in &st.g {
                let l = position(st, i, k);
                let l2 = position(st, i2, k);
                let range = match (l, l2) {
                    (Some(l), Some(l2)) if l2 < g && g < l => Some((g, l, false)),
                    (Some(l), l2) if l < g && l2.map_or(true, |l2| g <= l2) => Some((l, g, false)),
                    (None, Some(l2)) if l2 < g => Some((g, st.m[&k], true)),
                    _ => None,
                };
                let Some((from, to, plus)) = range else { continue };
                for &pos in &st.active {
                    for (p, _) in &st.snaps[pos].e_pieces(k)[from..to] {
                        rhs += eng.peek(i, p);
                    }
                    if plus {
                        rhs += &st.r0[&i] / &ncp;
                    }
                }
            }
            if bv < rhs {
                return Some(format!("bonus of {i} over {i2} in S_B is below the required bound"));
            }
        }
    }
    None
}

/// Every `A1` agent has a significant advantage over every `A2` agent in `S_A` plus `S_B`.
fn check_exit_advantage(eng: &mut Engine, lvl: &Level, st: &GoLeftState, a1: &[AgentId], a2: &[AgentId]) -> Result<()> {
    let mut both = st.s_a();
    fold(&mut both, &st.sb);
    for &i in a1 {
        let own = eng.peek(i, &both[&i]);
        for &j in a2 {
            let x = &own - eng.peek(i, &both[&j]);
            if x < Rat::zero() || !is_significant(&x, &st.r0[&i], &lvl.consts) {
                return Err(CakeError::Protocol(format!("agent {i} lacks a significant advantage over {j} at GoLeft exit")));
            }
        }
    }
    Ok(())
}
