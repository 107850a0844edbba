use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::CakeError;

pub type Rat = BigRational;
pub type AgentId = u32;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Parses `"p/q"` or `"p"`; surrounding whitespace is ignored.
pub fn parse_rat(s: &str) -> Result<Rat, CakeError> {
    let s = s.trim();
    let bad = || CakeError::Parse(format!("not a rational: {s:?}"));
    match s.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.trim().parse().map_err(|_| bad())?;
            let q: BigInt = q.trim().parse().map_err(|_| bad())?;
            if q.is_zero() {
                return Err(bad());
            }
            Ok(Rat::new(p, q))
        }
        None => Ok(Rat::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

pub fn fmt_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Interval {
    pub lo: Rat,
    pub hi: Rat,
}

impl Interval {
    pub fn len(&self) -> Rat {
        &self.hi - &self.lo
    }
}

/// A finite union of closed intervals of [0,1], kept sorted, merged and free
/// of zero-length parts so that equality of sets is equality of values.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Piece {
    ivs: Vec<Interval>,
}

impl Piece {
    pub fn empty() -> Self {
        Piece { ivs: Vec::new() }
    }

    pub fn whole() -> Self {
        Piece::span(Rat::zero(), Rat::one())
    }

    /// `[lo, hi]` without domain checks; an inverted or empty range gives the empty piece.
    pub fn span(lo: Rat, hi: Rat) -> Self {
        if lo < hi {
            Piece { ivs: vec![Interval { lo, hi }] }
        } else {
            Piece::empty()
        }
    }

    pub fn normalize(raw: Vec<(Rat, Rat)>) -> Result<Self, CakeError> {
        let zero = Rat::zero();
        let one = Rat::one();
        let mut ivs = Vec::with_capacity(raw.len());
        for (lo, hi) in raw {
            for x in [&lo, &hi] {
                if *x < zero || *x > one {
                    return Err(CakeError::Domain(format!("endpoint {} outside [0,1]", fmt_rat(x))));
                }
            }
            if lo > hi {
                return Err(CakeError::Domain(format!(
                    "interval [{}, {}] has lo > hi",
                    fmt_rat(&lo),
                    fmt_rat(&hi)
                )));
            }
            if lo < hi {
                ivs.push(Interval { lo, hi });
            }
        }
        Ok(Piece::from_unsorted(ivs))
    }

    fn from_unsorted(mut ivs: Vec<Interval>) -> Self {
        ivs.sort_by(|a, b| a.lo.cmp(&b.lo));
        let mut out: Vec<Interval> = Vec::with_capacity(ivs.len());
        for iv in ivs {
            match out.last_mut() {
                Some(last) if iv.lo <= last.hi => {
                    if iv.hi > last.hi {
                        last.hi = iv.hi;
                    }
                }
                _ => out.push(iv),
            }
        }
        Piece { ivs: out }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.ivs
    }

    pub fn is_empty(&self) -> bool {
        self.ivs.is_empty()
    }

    pub fn length(&self) -> Rat {
        self.ivs.iter().fold(Rat::zero(), |acc, iv| acc + iv.len())
    }

    pub fn union(&self, other: &Piece) -> Piece {
        if other.is_empty() {
            return self.clone();
        }
        if self.is_empty() {
            return other.clone();
        }
        let mut all = self.ivs.clone();
        all.extend(other.ivs.iter().cloned());
        Piece::from_unsorted(all)
    }

    pub fn union_all<'a, I: IntoIterator<Item = &'a Piece>>(pieces: I) -> Piece {
        let all: Vec<Interval> = pieces.into_iter().flat_map(|p| p.ivs.iter().cloned()).collect();
        Piece::from_unsorted(all)
    }

    /// Closure of `self` minus the interior of `other`.
    pub fn subtract(&self, other: &Piece) -> Piece {
        if other.is_empty() || self.is_empty() {
            return self.clone();
        }
        let mut out = Vec::new();
        let mut k = 0;
        for iv in &self.ivs {
            let mut lo = iv.lo.clone();
            while k < other.ivs.len() && other.ivs[k].hi <= lo {
                k += 1;
            }
            let mut t = k;
            while t < other.ivs.len() && other.ivs[t].lo < iv.hi {
                let cut = &other.ivs[t];
                if cut.lo > lo {
                    out.push(Interval { lo: lo.clone(), hi: cut.lo.clone() });
                }
                if cut.hi > lo {
                    lo = cut.hi.clone();
                }
                if lo >= iv.hi {
                    break;
                }
                t += 1;
            }
            if lo < iv.hi {
                out.push(Interval { lo, hi: iv.hi.clone() });
            }
        }
        Piece::from_unsorted(out)
    }

    pub fn intersect(&self, other: &Piece) -> Piece {
        let mut out = Vec::new();
        let (mut a, mut b) = (0, 0);
        while a < self.ivs.len() && b < other.ivs.len() {
            let x = &self.ivs[a];
            let y = &other.ivs[b];
            let lo = if x.lo > y.lo { &x.lo } else { &y.lo };
            let hi = if x.hi < y.hi { &x.hi } else { &y.hi };
            if lo < hi {
                out.push(Interval { lo: lo.clone(), hi: hi.clone() });
            }
            if x.hi < y.hi {
                a += 1;
            } else {
                b += 1;
            }
        }
        Piece { ivs: out }
    }

    /// `self ∩ [lo, hi]`.
    pub fn clip(&self, lo: &Rat, hi: &Rat) -> Piece {
        let mut out = Vec::new();
        for iv in &self.ivs {
            let l = if iv.lo > *lo { &iv.lo } else { lo };
            let h = if iv.hi < *hi { &iv.hi } else { hi };
            if l < h {
                out.push(Interval { lo: l.clone(), hi: h.clone() });
            }
        }
        Piece { ivs: out }
    }

    /// True when the two pieces share at most finitely many points.
    pub fn interior_disjoint(&self, other: &Piece) -> bool {
        self.intersect(other).is_empty()
    }

    pub fn contains_piece(&self, other: &Piece) -> bool {
        other.subtract(self).is_empty()
    }

    pub fn left_end(&self) -> Option<&Rat> {
        self.ivs.first().map(|iv| &iv.lo)
    }

    pub fn right_end(&self) -> Option<&Rat> {
        self.ivs.last().map(|iv| &iv.hi)
    }

    pub fn to_pairs(&self) -> Vec<[String; 2]> {
        self.ivs.iter().map(|iv| [fmt_rat(&iv.lo), fmt_rat(&iv.hi)]).collect()
    }

    pub fn from_pairs(pairs: &[[String; 2]]) -> Result<Self, CakeError> {
        let mut raw = Vec::with_capacity(pairs.len());
        for [lo, hi] in pairs {
            raw.push((parse_rat(lo)?, parse_rat(hi)?));
        }
        Piece::normalize(raw)
    }
}

impl fmt::Display for Piece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, iv) in self.ivs.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "[{},{}]", fmt_rat(&iv.lo), fmt_rat(&iv.hi))?;
        }
        write!(f, "]")
    }
}

/// Shares plus the undivided rest of `cake`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartialAllocation {
    pub shares: BTreeMap<AgentId, Piece>,
    pub residue: Piece,
    pub cake: Piece,
}

impl PartialAllocation {
    pub fn new(cake: Piece, agents: &[AgentId]) -> Self {
        PartialAllocation {
            shares: agents.iter().map(|&a| (a, Piece::empty())).collect(),
            residue: cake.clone(),
            cake,
        }
    }

    pub fn share(&self, a: AgentId) -> &Piece {
        static EMPTY: Piece = Piece { ivs: Vec::new() };
        self.shares.get(&a).unwrap_or(&EMPTY)
    }

    pub fn give(&mut self, a: AgentId, p: &Piece) {
        let s = self.shares.entry(a).or_default();
        *s = s.union(p);
    }

    /// Adds every share of `other` to the matching share here.
    pub fn absorb_shares(&mut self, other: &BTreeMap<AgentId, Piece>) {
        for (a, p) in other {
            self.give(*a, p);
        }
    }

    /// Shares and residue are pairwise interior-disjoint and cover the cake exactly.
    pub fn is_partition(&self) -> bool {
        let mut parts: Vec<&Piece> = self.shares.values().collect();
        parts.push(&self.residue);
        pieces_partition(&parts, &self.cake)
    }
}

/// Exact check that `parts` are pairwise interior-disjoint with union `whole`.
pub fn pieces_partition(parts: &[&Piece], whole: &Piece) -> bool {
    let mut ivs: Vec<&Interval> = parts.iter().flat_map(|p| p.ivs.iter()).collect();
    ivs.sort_by(|a, b| a.lo.cmp(&b.lo));
    let mut merged: Vec<Interval> = Vec::with_capacity(whole.ivs.len());
    for iv in ivs {
        match merged.last_mut() {
            Some(last) if iv.lo < last.hi => return false,
            Some(last) if iv.lo == last.hi => last.hi = iv.hi.clone(),
            _ => merged.push(iv.clone()),
        }
    }
    merged == whole.ivs
}
