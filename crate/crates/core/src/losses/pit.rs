use alloc::format;
use alloc::vec::Vec;

use super::{Permutation, PitCriterion};
use crate::autodiff::{Tape, Var};
use crate::dsp::Matrix;
use crate::error::{shape_err, Error, Result};

/// Largest source count scanned exhaustively.
pub const MAX_SOURCES: usize = 8;

fn total(costs: &Matrix, perm: &Permutation) -> f64 {
    (0..perm.len()).map(|c| costs.get(c, perm.get(c))).sum()
}

/// Chooses the assignment over all `C!` permutations; ties keep the
/// lexicographically smallest. Returns the permutation and the combined
/// mask + phase total under it.
pub fn pit_assign(mask: &Matrix, phase: Option<&Matrix>, criterion: PitCriterion) -> Result<(Permutation, f64)> {
    let c = mask.rows();
    if mask.cols() != c {
        return Err(shape_err("pit_assign", format!("mask costs {:?} not square", mask.shape())));
    }
    if let Some(p) = phase {
        if p.shape() != mask.shape() {
            return Err(shape_err("pit_assign", format!("phase costs {:?} vs {:?}", p.shape(), mask.shape())));
        }
    }
    if c > MAX_SOURCES {
        return Err(Error::BruteForceLimit(c));
    }
    let score = |p: &Permutation| -> f64 {
        let m = total(mask, p);
        match (criterion, phase) {
            (PitCriterion::MaskPhase, Some(ph)) => m + total(ph, p),
            _ => m,
        }
    };
    let mut best: Option<(Permutation, f64)> = None;
    for p in Permutation::all(c) {
        let s = score(&p);
        if best.as_ref().map_or(true, |(_, b)| s < *b) {
            best = Some((p, s));
        }
    }
    let (perm, _) = best.expect("at least one permutation");
    let loss = total(mask, &perm) + phase.map_or(0.0, |p| total(p, &perm));
    Ok((perm, loss))
}

/// Chosen assignment with its differentiable totals.
#[derive(Debug, Clone)]
pub struct PitChoice {
    pub perm: Permutation,
    pub mask: Var,
    pub phase: Option<Var>,
}

fn values(tape: &Tape, costs: &[Vec<Var>]) -> Matrix {
    let c = costs.len();
    Matrix::from_vec(c, c, costs.iter().flat_map(|row| row.iter().map(|&v| tape.scalar(v))).collect())
}

fn sum_under(tape: &mut Tape, costs: &[Vec<Var>], perm: &Permutation) -> Result<Var> {
    let mut acc = costs[0][perm.get(0)];
    for c in 1..perm.len() {
        acc = tape.add(acc, costs[c][perm.get(c)])?;
    }
    Ok(acc)
}

/// Tape form of [`pit_assign`] over pairing-cost matrices of scalar nodes.
pub fn pit_choose(tape: &mut Tape, mask: &[Vec<Var>], phase: Option<&[Vec<Var>]>, criterion: PitCriterion) -> Result<PitChoice> {
    let c = mask.len();
    if c == 0 || mask.iter().any(|r| r.len() != c) || phase.is_some_and(|p| p.len() != c || p.iter().any(|r| r.len() != c)) {
        return Err(shape_err("pit_assign", format!("pairing costs for {c} sources are not square")));
    }
    let mv = values(tape, mask);
    let pv = phase.map(|p| values(tape, p));
    let (perm, _) = pit_assign(&mv, pv.as_ref(), criterion)?;
    let mask_total = sum_under(tape, mask, &perm)?;
    let phase_total = match phase {
        Some(p) => Some(sum_under(tape, p, &perm)?),
        None => None,
    };
    Ok(PitChoice { perm, mask: mask_total, phase: phase_total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn m2(v: [f64; 4]) -> Matrix {
        Matrix::from_vec(2, 2, v.to_vec())
    }

    #[test]
    fn diagonal_costs_pick_identity() {
        let (p, l) = pit_assign(&m2([1.0, 4.0, 4.0, 1.0]), None, PitCriterion::MaskDependent).unwrap();
        assert_eq!(p, Permutation::identity(2));
        assert_eq!(l, 2.0);
    }

    #[test]
    fn ties_pick_lexicographically_smallest() {
        for crit in [PitCriterion::MaskDependent, PitCriterion::MaskPhase] {
            let (p, _) = pit_assign(&m2([1.0; 4]), Some(&m2([0.0; 4])), crit).unwrap();
            assert_eq!(p, Permutation::identity(2));
        }
        let (p, _) = pit_assign(&Matrix::filled(4, 4, 2.0), None, PitCriterion::MaskPhase).unwrap();
        assert_eq!(p, Permutation::identity(4));
    }

    #[test]
    fn criteria_disagree_on_constructed_case() {
        let mask = m2([0.0, 1.0, 1.0, 0.0]);
        let phase = m2([5.0, 0.0, 0.0, 5.0]);
        let (md, md_loss) = pit_assign(&mask, Some(&phase), PitCriterion::MaskDependent).unwrap();
        let (mp, mp_loss) = pit_assign(&mask, Some(&phase), PitCriterion::MaskPhase).unwrap();
        assert_eq!(md.as_slice(), &[0, 1]);
        assert_eq!(mp.as_slice(), &[1, 0]);
        assert_eq!(md_loss, 10.0);
        assert_eq!(mp_loss, 2.0);
    }

    #[test]
    fn brute_force_limit() {
        use alloc::string::ToString;
        let err = pit_assign(&Matrix::zeros(9, 9), None, PitCriterion::MaskPhase).unwrap_err();
        assert!(err.to_string().contains("brute-force limit"));
        assert!(pit_assign(&Matrix::zeros(8, 8), None, PitCriterion::MaskPhase).is_ok());
    }

    /// Independent scan over the six 3-permutations written out by hand.
    #[test]
    fn three_sources_match_exhaustive_scan() {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut rng = crate::rng::seeded(7);
        for _ in 0..200 {
            let mask = Matrix::from_vec(3, 3, (0..9).map(|_| rng.gen_range(0.0..1.0)).collect());
            let phase = Matrix::from_vec(3, 3, (0..9).map(|_| rng.gen_range(-1.0..0.0)).collect());
            for crit in [PitCriterion::MaskDependent, PitCriterion::MaskPhase] {
                let mut best = (f64::INFINITY, 0);
                for (k, p) in perms.iter().enumerate() {
                    let m: f64 = (0..3).map(|c| mask.get(c, p[c])).sum();
                    let ph: f64 = (0..3).map(|c| phase.get(c, p[c])).sum();
                    let s = if crit == PitCriterion::MaskPhase { m + ph } else { m };
                    if s < best.0 {
                        best = (s, k);
                    }
                }
                let (got, _) = pit_assign(&mask, Some(&phase), crit).unwrap();
                assert_eq!(got.as_slice(), &perms[best.1]);
            }
        }
    }

    #[test]
    fn criterion_invariants() {
        let mut rng = crate::rng::seeded(8);
        for _ in 0..200 {
            let c = rng.gen_range(2..5);
            let mask = Matrix::from_vec(c, c, (0..c * c).map(|_| rng.gen_range(0.0..1.0)).collect());
            let phase = Matrix::from_vec(c, c, (0..c * c).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let (md, md_total) = pit_assign(&mask, Some(&phase), PitCriterion::MaskDependent).unwrap();
            let (mp, mp_total) = pit_assign(&mask, Some(&phase), PitCriterion::MaskPhase).unwrap();
            assert!(total(&mask, &md) <= total(&mask, &mp));
            assert!(mp_total <= md_total);
            // md ignores any monotone rescaling of phase
            let warped = phase.map(|x| (3.0 * x).exp());
            assert_eq!(pit_assign(&mask, Some(&warped), PitCriterion::MaskDependent).unwrap().0, md);
            // mp ignores a constant shift of every pairing
            let shifted = phase.map(|x| x + 0.75);
            assert_eq!(pit_assign(&mask, Some(&shifted), PitCriterion::MaskPhase).unwrap().0, mp);
        }
    }
}
