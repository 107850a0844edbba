use num_traits::Zero;

use crate::cake::{AgentId, PartialAllocation, Piece, Rat};
use crate::error::{CakeError, Result};
use crate::oracle::Oracle;

pub fn divide_trivial(r: &Piece, agent: AgentId) -> PartialAllocation {
    let mut out = PartialAllocation::new(r.clone(), &[agent]);
    out.give(agent, r);
    out.residue = Piece::empty();
    out
}

/// `i` halves `r`, `j` picks (ties go to the left half).
pub fn cut_and_choose(o: &mut Oracle, r: &Piece, i: AgentId, j: AgentId) -> Result<PartialAllocation> {
    let mut out = PartialAllocation::new(r.clone(), &[i, j]);
    out.residue = Piece::empty();
    if r.is_empty() {
        return Ok(out);
    }
    if o.eval(i, r)?.is_zero() {
        out.give(j, r);
        return Ok(out);
    }
    let halves = o.cut_equal(i, r, 2)?;
    let left = o.eval(j, &halves[0])?;
    let right = o.eval(j, &halves[1])?;
    let (mine, theirs) = if left >= right { (1, 0) } else { (0, 1) };
    out.give(j, &halves[theirs]);
    out.give(i, &halves[mine]);
    Ok(out)
}

/// Index of the first maximum of `vals`.
fn argmax_first(vals: &[Rat]) -> usize {
    let mut best = 0;
    for (k, v) in vals.iter().enumerate().skip(1) {
        if *v > vals[best] {
            best = k;
        }
    }
    best
}

/// Selfridge-Conway with roles `i < j < k`.
pub fn selfridge_conway(o: &mut Oracle, r: &Piece, agents: [AgentId; 3]) -> Result<PartialAllocation> {
    let mut ids = agents;
    ids.sort_unstable();
    let [i, j, k] = ids;
    let mut out = PartialAllocation::new(r.clone(), &ids);
    out.residue = Piece::empty();
    if r.is_empty() {
        return Ok(out);
    }
    if o.eval(i, r)?.is_zero() {
        // the divider is indifferent to every part, so the other two share it
        let cc = cut_and_choose(o, r, j, k)?;
        out.absorb_shares(&cc.shares);
        return Ok(out);
    }
    let thirds = o.cut_equal(i, r, 3)?;
    let jv: Vec<Rat> = thirds.iter().map(|p| o.eval(j, p)).collect::<Result<_>>()?;
    let top = argmax_first(&jv);
    let second = {
        let rest: Vec<Rat> = jv.iter().enumerate().filter(|&(t, _)| t != top).map(|(_, v)| v.clone()).collect();
        rest.into_iter().max().expect("two remaining pieces")
    };
    let mut pieces = thirds.clone();
    let mut trimming = Piece::empty();
    let trimmed_idx = if jv[top] > second {
        let (_, kept) = o.cut_from_right(j, &thirds[top], &second)?;
        trimming = thirds[top].subtract(&kept);
        pieces[top] = kept;
        Some(top)
    } else {
        None
    };

    // k picks first, j next (must take the trimmed piece if still there), i takes an untrimmed one
    let kv: Vec<Rat> = pieces.iter().map(|p| o.eval(k, p)).collect::<Result<_>>()?;
    let k_pick = argmax_first(&kv);
    let remaining: Vec<usize> = (0..3).filter(|&t| t != k_pick).collect();
    let j_pick = match trimmed_idx {
        Some(t) if t != k_pick => t,
        _ => {
            let a = remaining[0];
            let b = remaining[1];
            if o.eval(j, &pieces[b])? > o.eval(j, &pieces[a])? {
                b
            } else {
                a
            }
        }
    };
    let i_pick = (0..3).find(|&t| t != k_pick && t != j_pick).expect("three pieces");
    if Some(i_pick) == trimmed_idx {
        return Err(CakeError::Protocol("Selfridge-Conway left the trimmed piece to the divider".into()));
    }
    out.give(k, &pieces[k_pick]);
    out.give(j, &pieces[j_pick]);
    out.give(i, &pieces[i_pick]);

    if trimming.is_empty() {
        return Ok(out);
    }
    // whoever holds the trimmed piece chooses first from the trimming, the other one divides it
    let (x, y) = if trimmed_idx == Some(k_pick) { (k, j) } else { (j, k) };
    if o.eval(y, &trimming)?.is_zero() {
        out.give(x, &trimming);
        return Ok(out);
    }
    let parts = o.cut_equal(y, &trimming, 3)?;
    let xv: Vec<Rat> = parts.iter().map(|p| o.eval(x, p)).collect::<Result<_>>()?;
    let x_pick = argmax_first(&xv);
    let left: Vec<usize> = (0..3).filter(|&t| t != x_pick).collect();
    let iv0 = o.eval(i, &parts[left[0]])?;
    let iv1 = o.eval(i, &parts[left[1]])?;
    let (i_part, y_part) = if iv1 > iv0 { (left[1], left[0]) } else { (left[0], left[1]) };
    out.give(x, &parts[x_pick]);
    out.give(i, &parts[i_part]);
    out.give(y, &parts[y_part]);
    Ok(out)
}
