use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::cake::{AgentId, Piece, Rat};
use crate::error::{CakeError, Result};
use crate::oracle::Oracle;

/// Cut-query bound of SubCore on `n_sub` agents:
/// `T'(1) = 0`, `T'(n) = 2 T'(n-1) + n(n-1) + sum_{i=1}^{n-2} T'(i)`.
pub fn query_bound_q(n_sub: usize) -> u64 {
    assert!(n_sub >= 1, "SubCore needs at least one agent");
    let mut t = vec![0u64; n_sub + 1];
    for n in 2..=n_sub {
        let tail: u64 = t[1..n - 1].iter().sum();
        t[n] = 2 * t[n - 1] + (n * (n - 1)) as u64 + tail;
    }
    t[n_sub]
}

/// Same recurrence in big integers, for agent counts where `u64` overflows.
pub fn query_bound_q_big(n_sub: usize) -> BigUint {
    let mut t = vec![BigUint::zero(); n_sub + 1];
    for n in 2..=n_sub {
        let tail = t[1..n - 1].iter().fold(BigUint::zero(), |a, b| a + b);
        t[n] = &t[n - 1] * 2u32 + BigUint::from(n * (n - 1)) + tail;
    }
    t[n_sub].clone()
}

/// Cuts one contest may spend when the `m`-th agent is inserted: its marks plus one
/// recursive call of every smaller size.
fn contest_allotment(m: usize) -> u64 {
    (m * (m - 1)) as u64 + (1..m).map(query_bound_q).sum::<u64>()
}

/// Cut bound of a Core run on `n` agents.
pub fn core_cut_bound(n: usize) -> u64 {
    (n as u64 - 1) + query_bound_q(n - 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubcoreResult {
    /// agent -> (index of the input piece, the part of it the agent holds)
    pub assign: BTreeMap<AgentId, (usize, Piece)>,
    pub trimmings: Piece,
    pub cuts: u64,
}

type Assign = BTreeMap<AgentId, (usize, Piece)>;

enum Halt {
    Budget,
    Fail(CakeError),
}

impl From<CakeError> for Halt {
    fn from(e: CakeError) -> Self {
        Halt::Fail(e)
    }
}

struct Budget {
    cap: u64,
    used: u64,
}

impl Budget {
    fn left(&self) -> u64 {
        self.cap - self.used
    }
}

/// Envy-free allocation of `pieces` to `agents` (inserted in the given order) where
/// every allocated piece is an input piece trimmed from the left.
pub fn subcore(o: &mut Oracle, pieces: &[Piece], agents: &[AgentId]) -> Result<SubcoreResult> {
    if pieces.len() <= agents.len() {
        return Err(CakeError::Protocol(format!(
            "SubCore needs more pieces than agents ({} pieces, {} agents)",
            pieces.len(),
            agents.len()
        )));
    }
    if agents.is_empty() {
        return Ok(SubcoreResult { assign: BTreeMap::new(), trimmings: Piece::empty(), cuts: 0 });
    }
    let cap = query_bound_q(agents.len());
    let mut budget = Budget { cap, used: 0 };
    let assign = match run(o, pieces, agents, &mut budget) {
        Ok(a) => a,
        Err(Halt::Fail(e)) => return Err(e),
        Err(Halt::Budget) => {
            return Err(CakeError::Protocol(format!(
                "SubCore on {} agents found no envy-free contest outcome within {cap} cuts",
                agents.len()
            )))
        }
    };
    let trimmings = Piece::union_all(
        assign.values().map(|(i, p)| pieces[*i].subtract(p)).collect::<Vec<_>>().iter(),
    );
    let res = SubcoreResult { assign, trimmings, cuts: budget.used };
    if let Some(why) = contract_violation(o, pieces, agents, &res) {
        return Err(CakeError::Protocol(format!("SubCore contract: {why}")));
    }
    Ok(res)
}

/// Checks the SubCore contract with direct valuations; `None` when it holds.
pub fn contract_violation(o: &Oracle, pieces: &[Piece], agents: &[AgentId], res: &SubcoreResult) -> Option<String> {
    let vals = o.valuations();
    let used: BTreeSet<usize> = res.assign.values().map(|(i, _)| *i).collect();
    if used.len() != res.assign.len() || res.assign.len() != agents.len() {
        return Some("agents do not hold distinct pieces".into());
    }
    for (a, (i, p)) in &res.assign {
        let whole = &pieces[*i];
        let left_trim = match p.left_end() {
            None => true,
            Some(t) => whole.clip(t, &Rat::one()) == *p,
        };
        if !left_trim {
            return Some(format!("agent {a} holds a piece not trimmed from the left"));
        }
        let v = &vals[a];
        let own = v.value(p);
        for (b, (_, q)) in &res.assign {
            if b != a && v.value(q) > own {
                return Some(format!("agent {a} envies agent {b}"));
            }
        }
        for (j, q) in pieces.iter().enumerate() {
            if !used.contains(&j) && v.value(q) > own {
                return Some(format!("agent {a} prefers unallocated piece {j}"));
            }
        }
    }
    if !res.assign.values().any(|(i, p)| *p == pieces[*i]) {
        return Some("no agent holds an untrimmed piece".into());
    }
    if res.cuts > query_bound_q(agents.len()) {
        return Some(format!("{} cuts exceed the bound {}", res.cuts, query_bound_q(agents.len())));
    }
    None
}

fn charge(budget: &mut Budget) -> std::result::Result<(), Halt> {
    if budget.used >= budget.cap {
        return Err(Halt::Budget);
    }
    budget.used += 1;
    Ok(())
}

fn run(o: &mut Oracle, pieces: &[Piece], agents: &[AgentId], budget: &mut Budget) -> std::result::Result<Assign, Halt> {
    let mut alloc: Assign = BTreeMap::new();
    for pos in 0..agents.len() {
        let m = agents[pos];
        let members = &agents[..=pos];
        let taken: BTreeMap<usize, AgentId> = alloc.iter().map(|(a, (i, _))| (*i, *a)).collect();
        let mut best = Rat::zero();
        let mut vals = Vec::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            let cur = match taken.get(&i) {
                Some(a) => &alloc[a].1,
                None => p,
            };
            let v = o.eval(m, cur)?;
            if v > best {
                best = v.clone();
            }
            vals.push(v);
        }
        if let Some(i) = (0..pieces.len()).find(|i| !taken.contains_key(i) && vals[*i] == best) {
            alloc.insert(m, (i, pieces[i].clone()));
            continue;
        }
        let mut contest_budget = Budget { cap: contest_allotment(members.len()).min(budget.left()), used: 0 };
        let out = contest(o, pieces, members, &taken, &mut contest_budget);
        budget.used += contest_budget.used;
        alloc = out?;
    }
    Ok(alloc)
}

struct Contest<'a> {
    pieces: &'a [Piece],
    members: &'a [AgentId],
    taken: Vec<usize>,
    free: Vec<usize>,
    beta: BTreeMap<AgentId, Rat>,
    marks: BTreeMap<(AgentId, usize), Rat>,
}

struct Attempt {
    others: Vec<AgentId>,
    free_after: Vec<usize>,
    current: BTreeMap<usize, Piece>,
    required: Vec<usize>,
}

fn contest(
    o: &mut Oracle,
    pieces: &[Piece],
    members: &[AgentId],
    taken: &BTreeMap<usize, AgentId>,
    budget: &mut Budget,
) -> std::result::Result<Assign, Halt> {
    let tk: Vec<usize> = taken.keys().copied().collect();
    let free: Vec<usize> = (0..pieces.len()).filter(|i| !taken.contains_key(i)).collect();
    let mut beta = BTreeMap::new();
    for &a in members {
        let mut b = Rat::zero();
        for &u in &free {
            let v = o.eval(a, &pieces[u])?;
            if v > b {
                b = v;
            }
        }
        beta.insert(a, b);
    }
    let mut marks = BTreeMap::new();
    for &a in members {
        for &q in &tk {
            if o.eval(a, &pieces[q])? > beta[&a] {
                charge(budget)?;
                let (mark, _) = o.cut_from_right(a, &pieces[q], &beta[&a])?;
                marks.insert((a, q), mark);
            }
        }
    }
    let cx = Contest { pieces, members, taken: tk, free, beta, marks };

    let mut tried: BTreeSet<Vec<AgentId>> = BTreeSet::new();
    let mut winners: Vec<AgentId> = Vec::new();
    loop {
        tried.insert(winners.clone());
        match attempt(o, &cx, &winners, budget)? {
            Ok(a) => return Ok(a),
            Err(info) => {
                if info.others.len() == 1 {
                    break;
                }
                let p = promote(o, &cx, &info)?;
                winners.push(p);
                winners.sort_unstable();
            }
        }
    }
    // the promotion path failed: try the remaining winner sets while cuts allow
    for size in 1..members.len() {
        for w in combinations(members, size) {
            if tried.contains(&w) {
                continue;
            }
            if let Ok(a) = attempt(o, &cx, &w, budget)? {
                return Ok(a);
            }
        }
    }
    Err(Halt::Budget)
}

fn combinations(items: &[AgentId], k: usize) -> Vec<Vec<AgentId>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > items.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + items.len() - k {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// The agent outside the winner set that trims the most still-free pieces at its own mark.
fn promote(o: &mut Oracle, cx: &Contest, info: &Attempt) -> std::result::Result<AgentId, Halt> {
    let mut best: Option<(usize, AgentId)> = None;
    for &a in &info.others {
        let mut cnt = 0;
        for q in &info.required {
            if info.free_after.contains(q) && o.eval(a, &info.current[q])? == cx.beta[&a] {
                cnt += 1;
            }
        }
        if cnt > 0 && best.map_or(true, |(c, _)| cnt > c) {
            best = Some((cnt, a));
        }
    }
    Ok(best.map(|(_, a)| a).unwrap_or(info.others[0]))
}

/// One round with a fixed winner set: winners split the pieces trimmed to the
/// losers' highest marks recursively, then each loser needs a free piece worth
/// exactly its benchmark while every trimmed free piece finds a loser.
fn attempt(
    o: &mut Oracle,
    cx: &Contest,
    winners: &[AgentId],
    budget: &mut Budget,
) -> std::result::Result<std::result::Result<Assign, Attempt>, Halt> {
    let others: Vec<AgentId> = cx.members.iter().copied().filter(|a| !winners.contains(a)).collect();
    let mut current: BTreeMap<usize, Piece> = BTreeMap::new();
    let mut required = Vec::new();
    for &q in &cx.taken {
        let top = others.iter().filter_map(|a| cx.marks.get(&(*a, q))).max();
        match top {
            Some(t) => {
                current.insert(q, cx.pieces[q].clip(t, &Rat::one()));
                required.push(q);
            }
            None => {
                current.insert(q, cx.pieces[q].clone());
            }
        }
    }
    for &u in &cx.free {
        current.insert(u, cx.pieces[u].clone());
    }
    // trimmed pieces go last so that ties inside the recursive call favour complete ones
    let mut order: Vec<usize> = cx.taken.iter().copied().filter(|q| !required.contains(q)).collect();
    order.extend(cx.free.iter().copied());
    order.extend(required.iter().copied());
    let list: Vec<Piece> = order.iter().map(|i| current[i].clone()).collect();

    let mut sub: Assign = BTreeMap::new();
    if !winners.is_empty() {
        let mut inner = Budget { cap: query_bound_q(winners.len()).min(budget.left()), used: 0 };
        let r = run(o, &list, winners, &mut inner);
        budget.used += inner.used;
        for (a, (i, p)) in r? {
            sub.insert(a, (order[i], p));
        }
    }
    let used: BTreeSet<usize> = sub.values().map(|(i, _)| *i).collect();
    let free_after: Vec<usize> = order.iter().copied().filter(|i| !used.contains(i)).collect();
    let winners_untrimmed = sub.values().any(|(i, p)| *p == cx.pieces[*i]);
    let need: Vec<usize> = required.iter().copied().filter(|q| free_after.contains(q)).collect();

    let mut options: Vec<Vec<usize>> = Vec::with_capacity(others.len());
    for &a in &others {
        let mut opts = Vec::new();
        for &f in &free_after {
            if o.eval(a, &current[&f])? == cx.beta[&a] {
                opts.push(f);
            }
        }
        options.push(opts);
    }
    let mut chosen = Vec::with_capacity(others.len());
    if match_losers(&options, &need, cx.pieces, &current, winners_untrimmed, &mut chosen) {
        let mut out = sub;
        for (a, f) in others.iter().zip(chosen) {
            out.insert(*a, (f, current[&f].clone()));
        }
        return Ok(Ok(out));
    }
    Ok(Err(Attempt { others, free_after, current, required }))
}

fn match_losers(
    options: &[Vec<usize>],
    need: &[usize],
    pieces: &[Piece],
    current: &BTreeMap<usize, Piece>,
    have_untrimmed: bool,
    chosen: &mut Vec<usize>,
) -> bool {
    let k = chosen.len();
    if k == options.len() {
        return have_untrimmed && need.iter().all(|q| chosen.contains(q));
    }
    for &f in &options[k] {
        if chosen.contains(&f) {
            continue;
        }
        chosen.push(f);
        let untrimmed = have_untrimmed || current[&f] == pieces[f];
        if match_losers(options, need, pieces, current, untrimmed, chosen) {
            return true;
        }
        chosen.pop();
    }
    false
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoreResult {
    pub shares: BTreeMap<AgentId, Piece>,
    pub residue: Piece,
    pub cutter: AgentId,
    /// Set when the cutter values the input at zero; nothing was divided.
    pub zero_residue: bool,
    pub cuts: u64,
}

/// The cutter splits `r` into `|agents|` equal parts, the others run SubCore on them and
/// the cutter takes a remaining untrimmed part; trimmings form the residue.
pub fn core(o: &mut Oracle, r: &Piece, agents: &[AgentId], cutter: AgentId) -> Result<CoreResult> {
    if !agents.contains(&cutter) {
        return Err(CakeError::Protocol(format!("cutter {cutter} is not among the agents")));
    }
    if agents.len() < 2 {
        return Err(CakeError::Protocol("Core needs at least two agents".into()));
    }
    let before = o.cut_count();
    let empty = || agents.iter().map(|&a| (a, Piece::empty())).collect::<BTreeMap<_, _>>();
    if o.eval(cutter, r)?.is_zero() {
        return Ok(CoreResult { shares: empty(), residue: r.clone(), cutter, zero_residue: true, cuts: 0 });
    }
    let n = agents.len();
    let parts = o.cut_equal(cutter, r, n)?;
    let mut others: Vec<AgentId> = agents.iter().copied().filter(|&a| a != cutter).collect();
    others.sort_unstable();
    let sc = subcore(o, &parts, &others)?;
    let used: BTreeSet<usize> = sc.assign.values().map(|(i, _)| *i).collect();
    let mine = (0..n).find(|i| !used.contains(i)).expect("SubCore leaves a piece");
    let mut shares = empty();
    shares.insert(cutter, parts[mine].clone());
    for (a, (_, p)) in &sc.assign {
        shares.insert(*a, p.clone());
    }
    Ok(CoreResult { shares, residue: sc.trimmings, cutter, zero_residue: false, cuts: o.cut_count() - before })
}
