use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, ToPrimitive, Zero};

use crate::cake::{AgentId, Piece, Rat};
use crate::error::{CakeError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstSource {
    Paper,
    Override,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constants {
    pub n: usize,
    pub c: BigUint,
    pub cp: BigUint,
    pub b: BigUint,
    pub source: ConstSource,
}

fn factorial(n: usize) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * BigUint::from(k))
}

/// Smallest `b` with `n^b >= target * (n-2)^b`, i.e. `(n/(n-2))^b >= target`.
pub fn minimal_b(n: usize, target: &BigUint) -> BigUint {
    assert!(n >= 3);
    let num = BigUint::from(n);
    let den = BigUint::from(n - 2);
    let mut lhs = BigUint::one();
    let mut rhs = target.clone();
    let mut b = 0u64;
    while lhs < rhs {
        lhs *= &num;
        rhs *= &den;
        b += 1;
    }
    BigUint::from(b)
}

impl Constants {
    pub fn paper(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(CakeError::Domain(format!("paper constants need n >= 3, got {n}")));
        }
        let nn = BigUint::from(n);
        let sq = (n * n) as u32;
        let c = nn.pow(4) * BigUint::from(2u32).pow(sq) * nn.pow(3 * sq);
        let cp = &c * factorial(n).pow(n as u32);
        let b = minimal_b(n, &(&nn * &cp));
        Ok(Constants { n, c, cp, b, source: ConstSource::Paper })
    }

    /// Override constants; `b = None` takes the minimal value the formula allows.
    pub fn custom(n: usize, c: BigUint, cp: BigUint, b: Option<BigUint>) -> Result<Self> {
        if n < 3 {
            return Err(CakeError::Domain(format!("constants need n >= 3, got {n}")));
        }
        if c.is_zero() || cp < c {
            return Err(CakeError::Domain(format!("need 1 <= C <= C' (C={c}, C'={cp})")));
        }
        let b = b.unwrap_or_else(|| minimal_b(n, &(BigUint::from(n) * &cp)));
        if b.is_zero() {
            return Err(CakeError::Domain("B must be at least 1".into()));
        }
        Ok(Constants { n, c, cp, b, source: ConstSource::Override })
    }

    fn cp_rat(&self) -> Rat {
        Rat::from_integer(BigInt::from(self.cp.clone()))
    }

    /// Converts a repeat count to `u64`; paper constants for n >= 4 are far beyond this.
    pub fn as_count(x: &BigUint, what: &str) -> Result<u64> {
        x.to_u64().ok_or_else(|| {
            CakeError::Domain(format!("{what} = {x} is too large to execute; use override constants"))
        })
    }

    pub fn c_count(&self) -> Result<u64> {
        Self::as_count(&self.c, "C")
    }

    pub fn cp_count(&self) -> Result<u64> {
        Self::as_count(&self.cp, "C'")
    }

    pub fn b_count(&self) -> Result<u64> {
        Self::as_count(&self.b, "B")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SignificanceClass {
    Insignificant,
    Intermediate,
    VerySignificant,
}

pub fn classify(x: &Rat, v: &Rat, consts: &Constants) -> SignificanceClass {
    if v.is_zero() {
        return if x.is_zero() { SignificanceClass::Insignificant } else { SignificanceClass::VerySignificant };
    }
    let n2 = Rat::from_integer(BigInt::from(consts.n * consts.n));
    let cp = consts.cp_rat();
    if *x <= v / (n2 * &cp) {
        SignificanceClass::Insignificant
    } else if *x >= v / cp {
        SignificanceClass::VerySignificant
    } else {
        SignificanceClass::Intermediate
    }
}

pub fn is_significant(x: &Rat, v: &Rat, consts: &Constants) -> bool {
    let n = Rat::from_integer(BigInt::from(consts.n));
    *x >= v / (n * consts.cp_rat())
}

/// `v_i(S_i) - v_i(S_j)` with `value` standing in for `v_i`.
pub fn bonus(value: impl Fn(&Piece) -> Rat, own: &Piece, other: &Piece) -> Rat {
    value(own) - value(other)
}

/// `v_i(S_i) >= v_i(S_j) + v_i(R)`.
pub fn dominates(value: impl Fn(&Piece) -> Rat, own: &Piece, other: &Piece, residue: &Piece) -> bool {
    value(own) >= value(other) + value(residue)
}

/// One Core run frozen as `c[k]`, plus the pieces extracted for each `k`, right to left,
/// with the agent whose mark produced each one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub id: usize,
    pub c: BTreeMap<AgentId, Piece>,
    pub extractions: Option<BTreeMap<AgentId, Vec<(Piece, AgentId)>>>,
}

pub type IsoKey = Vec<(AgentId, Vec<AgentId>)>;

impl Snapshot {
    pub fn new(id: usize, c: BTreeMap<AgentId, Piece>) -> Self {
        Snapshot { id, c, extractions: None }
    }

    pub fn e_pieces(&self, k: AgentId) -> &[(Piece, AgentId)] {
        self.extractions.as_ref().and_then(|m| m.get(&k)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_e_pieces(&self) -> Vec<&Piece> {
        self.extractions.iter().flat_map(|m| m.values()).flatten().map(|(p, _)| p).collect()
    }

    pub fn iso_key(&self) -> Result<IsoKey> {
        let ex = self
            .extractions
            .as_ref()
            .ok_or_else(|| CakeError::State(format!("snapshot {} has no extraction yet", self.id)))?;
        Ok(self.c.keys().map(|k| (*k, ex.get(k).map(|l| l.iter().map(|(_, a)| *a).collect()).unwrap_or_default())).collect())
    }
}

/// Number of triples `(j, i, k)`, `i != k`, where `i`'s bonus over `k` in snapshot `j` is very significant.
pub fn semi_invariant(
    snaps: &[Snapshot],
    mut value: impl FnMut(AgentId, &Piece) -> Rat,
    residue_values: &BTreeMap<AgentId, Rat>,
    consts: &Constants,
) -> usize {
    let mut count = 0;
    for s in snaps {
        for (i, ci) in &s.c {
            let own = value(*i, ci);
            for (k, ck) in &s.c {
                if k == i {
                    continue;
                }
                let x = &own - value(*i, ck);
                if classify(&x, &residue_values[i], consts) == SignificanceClass::VerySignificant {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Certified rational bounds `lo < e < hi` from the series with `terms` terms.
fn e_bounds(terms: u32) -> (Rat, Rat) {
    let mut sum = Rat::zero();
    let mut fact = BigInt::one();
    for k in 0..terms {
        if k > 0 {
            fact *= k;
        }
        sum += Rat::new(BigInt::one(), fact.clone());
    }
    // tail after the last term is below 1/((terms-1)! (terms-1))
    let tail = Rat::new(BigInt::one(), fact * BigInt::from(terms - 1));
    (sum.clone(), sum + tail)
}

/// `ceil(x ln n)` as the smallest `m` with `e^m >= n^x`, decided without floating point.
pub fn ceil_ln_pow(x: u32, n: usize) -> u64 {
    if n <= 1 || x == 0 {
        return 0;
    }
    let target = Rat::from_integer(BigInt::from(n).pow(x));
    let mut m = 0u64;
    let mut terms = 20u32;
    loop {
        let (lo, hi) = e_bounds(terms);
        let lo_m = num_traits::pow(lo, m as usize);
        let hi_m = num_traits::pow(hi, m as usize);
        if lo_m >= target {
            return m;
        }
        if hi_m < target {
            m += 1;
            continue;
        }
        // e^m is too close to n^x for the current bounds
        terms *= 2;
    }
}
