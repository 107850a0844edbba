use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::Zero;
use serde::Serialize;
use serde_json::json;

use crate::base;
use crate::cake::{pieces_partition, AgentId, PartialAllocation, Piece, Rat};
use crate::core_protocol::{self, CoreResult};
use crate::error::{CakeError, Result};
use crate::goleft;
use crate::oracle::Oracle;
use crate::prepare::{self, Prepared};
use crate::significance::{Constants, Snapshot};
use crate::trace::Trace;

pub type Shares = BTreeMap<AgentId, Piece>;

pub fn fold(into: &mut Shares, from: &Shares) {
    for (a, p) in from {
        let s = into.entry(*a).or_default();
        *s = s.union(p);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConstPolicy {
    Paper,
    /// Same `C` and `C'` at every level; `B` from the formula for each level's `n` unless fixed.
    Custom { c: BigUint, cp: BigUint, b: Option<BigUint> },
}

impl ConstPolicy {
    pub fn for_n(&self, n: usize) -> Result<Constants> {
        match self {
            ConstPolicy::Paper => Constants::paper(n),
            ConstPolicy::Custom { c, cp, b } => Constants::custom(n, c.clone(), cp.clone(), b.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub constants: ConstPolicy,
    pub check_invariants: bool,
    /// Skip repeated Core runs whose cutter already values the residue at zero.
    pub fast_degenerate: bool,
    pub trace: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { constants: ConstPolicy::Paper, check_invariants: false, fast_degenerate: false, trace: false }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PrepareAccount {
    pub n: usize,
    pub cuts: u64,
    pub bound: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Stats {
    pub main_calls: u64,
    pub max_depth: usize,
    pub core_runs: u64,
    pub polarize_firings: u64,
    pub restarts: u64,
    pub discrepancies: u64,
    pub discrepancy_splits: u64,
    pub line18_firings: u64,
    pub zero_exits: u64,
    pub attaches: u64,
    pub exchanges: u64,
    pub goleft_runs: u64,
    pub conservation_checks: u64,
    pub invariant_checks: u64,
    /// One sequence per PrepareGoLeft call.
    pub semi_invariant: Vec<Vec<usize>>,
    pub prepare_accounting: Vec<PrepareAccount>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RecNode {
    pub agents: Vec<AgentId>,
    pub via: String,
    pub cuts: u64,
    pub children: Vec<RecNode>,
}

/// State of one Main level shared by PrepareGoLeft and GoLeft.
pub struct Level {
    pub r_in: Piece,
    pub agents: Vec<AgentId>,
    pub sr: Shares,
    pub residue: Piece,
    pub consts: Constants,
    pub depth: usize,
}

impl Level {
    pub fn n(&self) -> usize {
        self.agents.len()
    }
}

pub struct Engine {
    pub oracle: Oracle,
    pub opts: Options,
    pub trace: Trace,
    pub stats: Stats,
    tree: Vec<RecNode>,
    root: Option<RecNode>,
}

impl Engine {
    pub fn new(mut oracle: Oracle, opts: Options) -> Self {
        oracle.set_keep_log(false);
        let trace = Trace::new(opts.trace);
        Engine { oracle, opts, trace, stats: Stats::default(), tree: Vec::new(), root: None }
    }

    pub fn recursion_tree(&self) -> Option<&RecNode> {
        self.root.as_ref()
    }

    pub fn val(&mut self, a: AgentId, p: &Piece) -> Result<Rat> {
        self.oracle.eval(a, p)
    }

    /// Exact value through the valuations themselves, for checks that are not protocol steps.
    pub fn peek(&self, a: AgentId, p: &Piece) -> Rat {
        self.oracle.valuations()[&a].value(p)
    }

    /// Complete envy-free division of the whole cake among all agents of the oracle.
    pub fn run(&mut self) -> Result<PartialAllocation> {
        let agents = self.oracle.agents();
        let shares = self.main(&Piece::whole(), &agents, 0)?;
        let mut alloc = PartialAllocation::new(Piece::whole(), &agents);
        alloc.absorb_shares(&shares);
        alloc.residue = Piece::empty();
        if !alloc.is_partition() {
            return Err(CakeError::Protocol("final shares do not partition the cake".into()));
        }
        Ok(alloc)
    }

    pub fn main(&mut self, r: &Piece, agents: &[AgentId], depth: usize) -> Result<Shares> {
        let mut agents = agents.to_vec();
        agents.sort_unstable();
        self.stats.main_calls += 1;
        self.stats.max_depth = self.stats.max_depth.max(depth);
        self.tree.push(RecNode { agents: agents.clone(), via: String::new(), cuts: self.oracle.cut_count(), children: Vec::new() });
        self.trace.emit(depth, "main_enter", json!({ "agents": agents, "residue": r.to_pairs() }));
        let out = self.main_inner(r, &agents, depth);
        let mut node = self.tree.pop().expect("pushed above");
        node.cuts = self.oracle.cut_count() - node.cuts;
        match self.tree.last_mut() {
            Some(parent) => parent.children.push(node),
            None => self.root = Some(node),
        }
        let shares = out?;
        let parts: Vec<&Piece> = shares.values().collect();
        if !pieces_partition(&parts, r) {
            return Err(CakeError::Protocol(format!("Main on {agents:?} did not partition its input")));
        }
        self.trace.emit(depth, "main_exit", json!({ "agents": agents }));
        Ok(shares)
    }

    fn set_via(&mut self, via: &str) {
        if let Some(node) = self.tree.last_mut() {
            node.via = via.to_string();
        }
    }

    fn main_inner(&mut self, r: &Piece, agents: &[AgentId], depth: usize) -> Result<Shares> {
        let n = agents.len();
        match n {
            0 => return Err(CakeError::Protocol("Main called without agents".into())),
            1 => {
                self.set_via("trivial");
                return Ok(base::divide_trivial(r, agents[0]).shares);
            }
            2 => {
                self.set_via("cut_and_choose");
                return Ok(base::cut_and_choose(&mut self.oracle, r, agents[0], agents[1])?.shares);
            }
            3 => {
                self.set_via("selfridge_conway");
                return Ok(base::selfridge_conway(&mut self.oracle, r, [agents[0], agents[1], agents[2]])?.shares);
            }
            _ => {}
        }
        let consts = self.opts.constants.for_n(n)?;
        let mut lvl = Level {
            r_in: r.clone(),
            agents: agents.to_vec(),
            sr: agents.iter().map(|&a| (a, Piece::empty())).collect(),
            residue: r.clone(),
            consts,
            depth,
        };
        let zero = self.zero_agents(agents, r)?;
        if !zero.is_empty() {
            self.set_via("zero_value");
            self.finish_without(&mut lvl, &zero)?;
            return Ok(lvl.sr);
        }
        let prepared = prepare::prepare_goleft(self, &mut lvl)?;
        self.finish_level(lvl, prepared)
    }

    fn finish_level(&mut self, mut lvl: Level, prepared: Prepared) -> Result<Shares> {
        match prepared {
            Prepared::Finished => {
                self.set_via("prepare_finished");
                Ok(lvl.sr)
            }
            Prepared::Ready(snaps) => {
                self.set_via("goleft");
                let (a1, a2) = goleft::goleft(self, &mut lvl, snaps)?;
                self.convert_to_domination(&mut lvl, &a1, &a2)?;
                let rest = std::mem::take(&mut lvl.residue);
                let sub = self.main(&rest, &a2, lvl.depth + 1)?;
                fold(&mut lvl.sr, &sub);
                Ok(lvl.sr)
            }
        }
    }

    /// Main on `r` for four or more agents, with the snapshots of line 1 supplied by the caller
    /// instead of Core runs on `r`. The snapshots must be envy-free divisions that together
    /// with `residue` make up `r`.
    pub fn main_with_snapshots(&mut self, r: &Piece, agents: &[AgentId], residue: Piece, snaps: Vec<Snapshot>) -> Result<Shares> {
        let mut agents = agents.to_vec();
        agents.sort_unstable();
        if agents.len() < 4 {
            return Err(CakeError::Domain("snapshot input needs at least four agents".into()));
        }
        let consts = self.opts.constants.for_n(agents.len())?;
        let lvl = Level {
            r_in: r.clone(),
            sr: agents.iter().map(|&a| (a, Piece::empty())).collect(),
            agents: agents.clone(),
            residue,
            consts,
            depth: 0,
        };
        self.stats.main_calls += 1;
        self.tree.push(RecNode { agents: agents.clone(), via: String::new(), cuts: self.oracle.cut_count(), children: Vec::new() });
        let out = self.snapshot_level(lvl, snaps);
        let mut node = self.tree.pop().expect("pushed above");
        node.cuts = self.oracle.cut_count() - node.cuts;
        self.root = Some(node);
        let shares = out?;
        if !pieces_partition(&shares.values().collect::<Vec<_>>(), r) {
            return Err(CakeError::Protocol(format!("Main on {agents:?} did not partition its input")));
        }
        Ok(shares)
    }

    fn snapshot_level(&mut self, mut lvl: Level, snaps: Vec<Snapshot>) -> Result<Shares> {
        let prepared = prepare::prepare_from_snapshots(self, &mut lvl, snaps)?;
        self.finish_level(lvl, prepared)
    }

    pub fn zero_agents(&mut self, agents: &[AgentId], p: &Piece) -> Result<Vec<AgentId>> {
        let mut z = Vec::new();
        for &a in agents {
            if self.val(a, p)?.is_zero() {
                z.push(a);
            }
        }
        Ok(z)
    }

    /// Agents in `zero` value the residue at nothing; the others divide it among themselves.
    pub fn finish_without(&mut self, lvl: &mut Level, zero: &[AgentId]) -> Result<()> {
        self.stats.zero_exits += 1;
        let keep: Vec<AgentId> = lvl.agents.iter().copied().filter(|a| !zero.contains(a)).collect();
        self.trace.emit(lvl.depth, "zero_value_exit", json!({ "zero": zero, "rest": keep }));
        let rest = std::mem::take(&mut lvl.residue);
        if keep.is_empty() {
            let first = lvl.agents[0];
            let s = lvl.sr.entry(first).or_default();
            *s = s.union(&rest);
        } else {
            let sub = self.main(&rest, &keep, lvl.depth + 1)?;
            fold(&mut lvl.sr, &sub);
        }
        Ok(())
    }

    /// One Core run on the level's residue; the residue shrinks to the trimmings.
    pub fn core(&mut self, lvl: &mut Level, cutter: AgentId) -> Result<CoreResult> {
        let r = lvl.residue.clone();
        let res = core_protocol::core(&mut self.oracle, &r, &lvl.agents, cutter)?;
        self.stats.core_runs += 1;
        if self.opts.check_invariants && !res.zero_residue {
            self.check_core(&r, &res)?;
        }
        lvl.residue = res.residue.clone();
        Ok(res)
    }

    /// `times` Core runs with the same cutter, each division added to `S_R`.
    pub fn cores_into_sr(&mut self, lvl: &mut Level, cutter: AgentId, times: u64) -> Result<()> {
        for _ in 0..times {
            if self.opts.fast_degenerate && self.val(cutter, &lvl.residue.clone())?.is_zero() {
                break;
            }
            let res = self.core(lvl, cutter)?;
            fold(&mut lvl.sr, &res.shares);
        }
        Ok(())
    }

    fn check_core(&mut self, r: &Piece, res: &CoreResult) -> Result<()> {
        self.stats.invariant_checks += 1;
        let n = res.shares.len();
        let c = res.cutter;
        let third = self.peek(c, r) / Rat::from_integer(n.into());
        if self.peek(c, &res.shares[&c]) != third {
            return Err(CakeError::Protocol("Core: cutter's share is not exactly 1/n".into()));
        }
        if !res.shares.iter().any(|(a, p)| *a != c && self.peek(c, p) == third) {
            return Err(CakeError::Protocol("Core: no other share is worth exactly 1/n to the cutter".into()));
        }
        let nr = Rat::from_integer(n.into());
        if self.peek(c, &res.residue) * &nr > self.peek(c, r) * (nr - Rat::from_integer(2.into())) {
            return Err(CakeError::Protocol("Core: residue did not shrink by (n-2)/n for the cutter".into()));
        }
        for (a, pa) in &res.shares {
            let own = self.peek(*a, pa);
            for (b, pb) in &res.shares {
                if a != b && self.peek(*a, pb) > own {
                    return Err(CakeError::Protocol(format!("Core: agent {a} envies agent {b}")));
                }
            }
        }
        Ok(())
    }

    /// Every tracked piece of the level together equals its input exactly.
    pub fn conserve(&mut self, lvl: &Level, extra: &[&Piece], at: &str) -> Result<()> {
        self.stats.conservation_checks += 1;
        let mut parts: Vec<&Piece> = lvl.sr.values().collect();
        parts.extend_from_slice(extra);
        parts.push(&lvl.residue);
        if !pieces_partition(&parts, &lvl.r_in) {
            return Err(CakeError::Protocol(format!("conservation broken at {at}")));
        }
        Ok(())
    }

    fn convert_to_domination(&mut self, lvl: &mut Level, a1: &[AgentId], a2: &[AgentId]) -> Result<()> {
        let times = lvl.consts.b_count()?;
        for &i in a1 {
            self.cores_into_sr(lvl, i, times)?;
        }
        self.conserve(lvl, &[], "domination")?;
        for &i in a1 {
            for &j in a2 {
                let own = self.peek(i, &lvl.sr[&i]);
                let other = self.peek(i, &lvl.sr[&j]) + self.peek(i, &lvl.residue);
                if own < other {
                    return Err(CakeError::Protocol(format!(
                        "agent {i} does not dominate agent {j} after {times} Core runs"
                    )));
                }
            }
        }
        self.trace.emit(lvl.depth, "domination", json!({ "a1": a1, "a2": a2, "runs_per_agent": times }));
        Ok(())
    }
}
