use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cake::{fmt_rat, pieces_partition, AgentId, PartialAllocation, Piece, Rat};
use crate::error::{CakeError, Result};
use crate::oracle::Valuation;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envy {
    pub agent: AgentId,
    pub envies: AgentId,
    pub deficit: Rat,
}

/// Every ordered pair where the first agent values the second's share above its own.
pub fn check_envy_free(alloc: &PartialAllocation, vals: &BTreeMap<AgentId, Valuation>) -> Vec<Envy> {
    let mut out = Vec::new();
    for (&a, pa) in &alloc.shares {
        let Some(v) = vals.get(&a) else { continue };
        let own = v.value(pa);
        for (&b, pb) in &alloc.shares {
            let other = v.value(pb);
            if a != b && other > own {
                out.push(Envy { agent: a, envies: b, deficit: other - &own });
            }
        }
    }
    out
}

pub fn check_complete(alloc: &PartialAllocation, cake: &Piece) -> bool {
    alloc.residue.is_empty() && pieces_partition(&alloc.shares.values().collect::<Vec<_>>(), cake)
}

/// Agents whose share is below `1/n` of their value of the whole cake, with the shortfall.
pub fn check_proportional(alloc: &PartialAllocation, vals: &BTreeMap<AgentId, Valuation>) -> Vec<(AgentId, Rat)> {
    let n = Rat::from_integer(alloc.shares.len().into());
    let mut out = Vec::new();
    for (&a, p) in &alloc.shares {
        if let Some(v) = vals.get(&a) {
            let need = v.value(&Piece::whole()) / &n;
            let got = v.value(p);
            if got < need {
                out.push((a, need - got));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShareJson {
    pub agent: AgentId,
    pub piece: Vec<[String; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AllocationJson {
    pub shares: Vec<ShareJson>,
    #[serde(default)]
    pub residue: Vec<[String; 2]>,
}

pub fn allocation_to_json(alloc: &PartialAllocation) -> AllocationJson {
    AllocationJson {
        shares: alloc.shares.iter().map(|(a, p)| ShareJson { agent: *a, piece: p.to_pairs() }).collect(),
        residue: alloc.residue.to_pairs(),
    }
}

pub fn allocation_from_json(j: &AllocationJson) -> Result<PartialAllocation> {
    let mut shares = BTreeMap::new();
    for s in &j.shares {
        if shares.insert(s.agent, Piece::from_pairs(&s.piece)?).is_some() {
            return Err(CakeError::Domain(format!("agent {} appears twice", s.agent)));
        }
    }
    Ok(PartialAllocation { shares, residue: Piece::from_pairs(&j.residue)?, cake: Piece::whole() })
}

pub fn parse_allocation(text: &str) -> Result<PartialAllocation> {
    let j: AllocationJson = serde_json::from_str(text).map_err(|e| CakeError::Parse(e.to_string()))?;
    allocation_from_json(&j)
}

pub fn envy_report(envy: &[Envy]) -> String {
    envy.iter()
        .map(|e| format!("agent {} envies agent {} (deficit {})", e.agent, e.envies, fmt_rat(&e.deficit)))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cake::{int, rat};

    fn uniform(n: u32) -> BTreeMap<AgentId, Valuation> {
        (1..=n).map(|a| (a, Valuation::uniform())).collect()
    }

    fn alloc(parts: &[(AgentId, Piece)]) -> PartialAllocation {
        PartialAllocation { shares: parts.iter().cloned().collect(), residue: Piece::empty(), cake: Piece::whole() }
    }

    #[test]
    fn halves_are_fair() {
        let a = alloc(&[(1, Piece::span(int(0), rat(1, 2))), (2, Piece::span(rat(1, 2), int(1)))]);
        assert!(check_envy_free(&a, &uniform(2)).is_empty());
        assert!(check_complete(&a, &Piece::whole()));
        assert!(check_proportional(&a, &uniform(2)).is_empty());
    }

    #[test]
    fn quarter_envies_the_rest() {
        let a = alloc(&[(1, Piece::span(int(0), rat(1, 4))), (2, Piece::span(rat(1, 4), int(1)))]);
        let r = check_envy_free(&a, &uniform(2));
        assert_eq!(r, vec![Envy { agent: 1, envies: 2, deficit: rat(1, 2) }]);
        assert_eq!(check_proportional(&a, &uniform(2)), vec![(1, rat(1, 4))]);
    }

    #[test]
    fn overlap_and_gaps_are_incomplete() {
        let over = alloc(&[(1, Piece::span(int(0), rat(2, 3))), (2, Piece::span(rat(1, 2), int(1)))]);
        assert!(!check_complete(&over, &Piece::whole()));
        let gap = alloc(&[(1, Piece::span(int(0), rat(1, 2))), (2, Piece::span(rat(5, 8), int(1)))]);
        assert!(!check_complete(&gap, &Piece::whole()));
    }

    #[test]
    fn thirds_are_proportional() {
        let a = alloc(&[
            (1, Piece::span(int(0), rat(1, 3))),
            (2, Piece::span(rat(1, 3), rat(2, 3))),
            (3, Piece::span(rat(2, 3), int(1))),
        ]);
        assert!(check_proportional(&a, &uniform(3)).is_empty());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let a = alloc(&[(1, Piece::span(int(0), rat(1, 3))), (2, Piece::span(rat(1, 3), int(1)))]);
        let text = serde_json::to_string(&allocation_to_json(&a)).unwrap();
        assert!(text.contains("\"1/3\""));
        assert_eq!(parse_allocation(&text).unwrap(), a);
    }
}
