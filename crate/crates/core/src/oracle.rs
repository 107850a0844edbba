use std::collections::BTreeMap;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::cake::{fmt_rat, parse_rat, AgentId, Piece, Rat};
use crate::error::{CakeError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub lo: Rat,
    pub hi: Rat,
    pub density: Rat,
}

/// Piecewise-constant density on [0,1].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Valuation {
    segs: Vec<Segment>,
}

impl Valuation {
    pub fn new(mut segs: Vec<Segment>) -> Result<Self> {
        segs.sort_by(|a, b| a.lo.cmp(&b.lo));
        segs.retain(|s| s.lo != s.hi);
        let mut at = Rat::zero();
        for s in &segs {
            if s.lo != at {
                return Err(CakeError::Domain(format!(
                    "density segments leave a gap or overlap at {}",
                    fmt_rat(&at)
                )));
            }
            if s.hi < s.lo {
                return Err(CakeError::Domain("density segment with from > to".into()));
            }
            if s.density < Rat::zero() {
                return Err(CakeError::Domain("negative density".into()));
            }
            at = s.hi.clone();
        }
        if at != Rat::one() {
            return Err(CakeError::Domain("density segments do not cover [0,1]".into()));
        }
        let v = Valuation { segs };
        if v.value(&Piece::whole()).is_zero() {
            return Err(CakeError::Domain("valuation has zero total value".into()));
        }
        Ok(v)
    }

    pub fn uniform() -> Self {
        Valuation {
            segs: vec![Segment { lo: Rat::zero(), hi: Rat::one(), density: Rat::one() }],
        }
    }

    /// Breakpoints `0 = b0 < b1 < ... < bk = 1` with one density per gap.
    pub fn from_steps(breaks: &[Rat], densities: &[Rat]) -> Result<Self> {
        if breaks.len() != densities.len() + 1 {
            return Err(CakeError::Domain("breaks and densities disagree in length".into()));
        }
        let segs = densities
            .iter()
            .enumerate()
            .map(|(i, d)| Segment { lo: breaks[i].clone(), hi: breaks[i + 1].clone(), density: d.clone() })
            .collect();
        Valuation::new(segs)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segs
    }

    pub fn value_interval(&self, lo: &Rat, hi: &Rat) -> Rat {
        let mut t = Rat::zero();
        let first = self.segs.partition_point(|s| s.hi <= *lo);
        for s in &self.segs[first..] {
            if s.lo >= *hi {
                break;
            }
            let a = if s.lo > *lo { &s.lo } else { lo };
            let b = if s.hi < *hi { &s.hi } else { hi };
            if !s.density.is_zero() {
                t += &s.density * (b - a);
            }
        }
        t
    }

    pub fn value(&self, p: &Piece) -> Rat {
        p.intervals().iter().fold(Rat::zero(), |acc, iv| acc + self.value_interval(&iv.lo, &iv.hi))
    }

    /// (lo, hi, density) pieces of `p` in left-to-right order.
    fn parts<'a>(&'a self, p: &'a Piece) -> impl Iterator<Item = (Rat, Rat, &'a Rat)> + 'a {
        p.intervals().iter().flat_map(move |iv| {
            let first = self.segs.partition_point(|s| s.hi <= iv.lo);
            self.segs[first..].iter().take_while(move |s| s.lo < iv.hi).filter_map(move |s| {
                let a = if s.lo > iv.lo { &s.lo } else { &iv.lo };
                let b = if s.hi < iv.hi { &s.hi } else { &iv.hi };
                (a < b).then(|| (a.clone(), b.clone(), &s.density))
            })
        })
    }

    /// Minimal `t` with `v(p ∩ [0,t]) = target`; `None` if `target > v(p)`.
    pub fn cut_in_piece(&self, p: &Piece, target: &Rat) -> Option<Rat> {
        let start = p.left_end().cloned().unwrap_or_else(Rat::zero);
        if target.is_zero() {
            return Some(start);
        }
        let mut acc = Rat::zero();
        for (a, b, d) in self.parts(p) {
            if d.is_zero() {
                continue;
            }
            let w = d * (&b - &a);
            if &acc + &w >= *target {
                return Some(a + (target - &acc) / d);
            }
            acc += w;
        }
        None
    }

    /// Maximal `t` with `v(p ∩ [t,1]) = r`; `r = 0` gives `t = 1`.
    pub fn mark_from_right(&self, p: &Piece, r: &Rat) -> Option<Rat> {
        if r.is_zero() {
            return Some(Rat::one());
        }
        let parts: Vec<_> = self.parts(p).collect();
        let mut acc = Rat::zero();
        for (a, b, d) in parts.into_iter().rev() {
            if d.is_zero() {
                continue;
            }
            let w = d * (&b - &a);
            if &acc + &w >= *r {
                return Some(b - (r - &acc) / d);
            }
            acc += w;
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Cut,
    Eval,
}

#[derive(Clone, Debug)]
pub struct QueryRecord {
    pub kind: QueryKind,
    pub agent: AgentId,
    pub args: Vec<Rat>,
    pub result: Rat,
}

#[derive(Clone, Debug, Default)]
pub struct QueryLedger {
    pub cut_count: u64,
    pub eval_count: u64,
    /// Values the protocol read without a charged query because full information made them known.
    pub derived_evals: u64,
    log: Vec<QueryRecord>,
    keep_log: bool,
}

impl QueryLedger {
    fn record(&mut self, rec: QueryRecord) {
        match rec.kind {
            QueryKind::Cut => self.cut_count += 1,
            QueryKind::Eval => self.eval_count += 1,
        }
        if self.keep_log {
            self.log.push(rec);
        }
    }

    pub fn log(&self) -> &[QueryRecord] {
        &self.log
    }
}

/// Answers cut and eval queries for a fixed set of agents and books every query.
#[derive(Clone, Debug)]
pub struct Oracle {
    vals: BTreeMap<AgentId, Valuation>,
    ledger: QueryLedger,
    full_info: bool,
}

impl Oracle {
    pub fn new(vals: BTreeMap<AgentId, Valuation>, full_info: bool) -> Self {
        let mut o = Oracle { vals, ledger: QueryLedger { keep_log: true, ..Default::default() }, full_info };
        if full_info {
            // every agent values the whole cake once
            let agents: Vec<AgentId> = o.vals.keys().copied().collect();
            for a in agents {
                let v = o.vals[&a].value(&Piece::whole());
                o.ledger.record(QueryRecord { kind: QueryKind::Eval, agent: a, args: vec![Rat::zero(), Rat::one()], result: v });
            }
        }
        o
    }

    pub fn set_keep_log(&mut self, keep: bool) {
        self.ledger.keep_log = keep;
        if !keep {
            self.ledger.log.clear();
        }
    }

    pub fn full_information(&self) -> bool {
        self.full_info
    }

    pub fn agents(&self) -> Vec<AgentId> {
        self.vals.keys().copied().collect()
    }

    pub fn n(&self) -> usize {
        self.vals.len()
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    pub fn cut_count(&self) -> u64 {
        self.ledger.cut_count
    }

    /// Direct valuation access for the verifier; protocol code goes through queries.
    pub fn valuations(&self) -> &BTreeMap<AgentId, Valuation> {
        &self.vals
    }

    fn val(&self, a: AgentId) -> Result<&Valuation> {
        self.vals.get(&a).ok_or_else(|| CakeError::State(format!("unknown agent {a}")))
    }

    pub fn eval(&mut self, a: AgentId, p: &Piece) -> Result<Rat> {
        let v = self.val(a)?.value(p);
        if self.full_info {
            self.ledger.derived_evals += 1;
        } else {
            for iv in p.intervals() {
                let r = self.vals[&a].value_interval(&iv.lo, &iv.hi);
                self.ledger.record(QueryRecord {
                    kind: QueryKind::Eval,
                    agent: a,
                    args: vec![iv.lo.clone(), iv.hi.clone()],
                    result: r,
                });
            }
        }
        Ok(v)
    }

    /// After a cut produces `piece`, the other agents measure it.
    fn broadcast(&mut self, cutter: AgentId, piece: &Piece) {
        if !self.full_info {
            return;
        }
        let others: Vec<AgentId> = self.vals.keys().copied().filter(|&b| b != cutter).collect();
        let args: Vec<Rat> = piece.intervals().iter().flat_map(|iv| [iv.lo.clone(), iv.hi.clone()]).collect();
        for b in others {
            let r = self.vals[&b].value(piece);
            self.ledger.record(QueryRecord { kind: QueryKind::Eval, agent: b, args: args.clone(), result: r });
        }
    }

    /// Minimal `y` with `v_a([x, y]) = r`.
    pub fn cut(&mut self, a: AgentId, x: &Rat, r: &Rat) -> Result<Rat> {
        let v = self.val(a)?;
        let y = v
            .cut_in_piece(&Piece::span(x.clone(), Rat::one()), r)
            .ok_or_else(|| CakeError::QueryPrecondition(format!("agent {a}: r = {} exceeds v([x,1])", fmt_rat(r))))?;
        let y = if r.is_zero() { x.clone() } else { y };
        self.ledger.record(QueryRecord { kind: QueryKind::Cut, agent: a, args: vec![x.clone(), r.clone()], result: y.clone() });
        self.broadcast(a, &Piece::span(x.clone(), y.clone()));
        Ok(y)
    }

    /// Maximal mark with `v_a(p ∩ [mark,1]) = r`, together with that right part.
    pub fn cut_from_right(&mut self, a: AgentId, p: &Piece, r: &Rat) -> Result<(Rat, Piece)> {
        let v = self.val(a)?;
        if v.value(p) < *r {
            return Err(CakeError::QueryPrecondition(format!(
                "agent {a}: r = {} exceeds the value of the piece",
                fmt_rat(r)
            )));
        }
        let mark = v.mark_from_right(p, r).expect("value checked above");
        let right = p.clip(&mark, &Rat::one());
        let mut args: Vec<Rat> = p.intervals().iter().flat_map(|iv| [iv.lo.clone(), iv.hi.clone()]).collect();
        args.push(r.clone());
        self.ledger.record(QueryRecord { kind: QueryKind::Cut, agent: a, args, result: mark.clone() });
        self.broadcast(a, &right);
        Ok((mark, right))
    }

    /// Splits `p` into `n` parts of equal value to `a` with `n - 1` cuts, left to right.
    pub fn cut_equal(&mut self, a: AgentId, p: &Piece, n: usize) -> Result<Vec<Piece>> {
        let total = self.val(a)?.value(p);
        if total.is_zero() {
            return Err(CakeError::ZeroValueResidue(a));
        }
        let share = &total / Rat::from_integer(n.into());
        let mut out = Vec::with_capacity(n);
        let mut left = Rat::zero();
        for k in 1..n {
            let target = &share * Rat::from_integer(k.into());
            let t = self.vals[&a].cut_in_piece(p, &target).expect("target below total");
            let part = p.clip(&left, &t);
            let mut args: Vec<Rat> = p.intervals().iter().flat_map(|iv| [iv.lo.clone(), iv.hi.clone()]).collect();
            args.push(target);
            self.ledger.record(QueryRecord { kind: QueryKind::Cut, agent: a, args, result: t.clone() });
            self.broadcast(a, &part);
            out.push(part);
            left = t;
        }
        out.push(p.clip(&left, &Rat::one()));
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentJson {
    pub from: String,
    pub to: String,
    pub value: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentJson {
    pub id: AgentId,
    pub density: Vec<SegmentJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceJson {
    pub agents: Vec<AgentJson>,
}

pub fn parse_instance(text: &str) -> Result<BTreeMap<AgentId, Valuation>> {
    let inst: InstanceJson = serde_json::from_str(text).map_err(|e| CakeError::Parse(e.to_string()))?;
    instance_from_json(&inst)
}

pub fn instance_from_json(inst: &InstanceJson) -> Result<BTreeMap<AgentId, Valuation>> {
    if inst.agents.is_empty() {
        return Err(CakeError::Domain("instance has no agents".into()));
    }
    let mut out = BTreeMap::new();
    for a in &inst.agents {
        let mut segs = Vec::with_capacity(a.density.len());
        for s in &a.density {
            segs.push(Segment { lo: parse_rat(&s.from)?, hi: parse_rat(&s.to)?, density: parse_rat(&s.value)? });
        }
        let v = Valuation::new(segs).map_err(|e| match e {
            CakeError::Domain(m) => CakeError::Domain(format!("agent {}: {m}", a.id)),
            other => other,
        })?;
        if out.insert(a.id, v).is_some() {
            return Err(CakeError::Domain(format!("duplicate agent id {}", a.id)));
        }
    }
    Ok(out)
}

pub fn instance_to_json(vals: &BTreeMap<AgentId, Valuation>) -> InstanceJson {
    InstanceJson {
        agents: vals
            .iter()
            .map(|(&id, v)| AgentJson {
                id,
                density: v
                    .segments()
                    .iter()
                    .map(|s| SegmentJson { from: fmt_rat(&s.lo), to: fmt_rat(&s.hi), value: fmt_rat(&s.density) })
                    .collect(),
            })
            .collect(),
    }
}
