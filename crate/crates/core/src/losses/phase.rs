use alloc::format;
use alloc::vec::Vec;

use super::{Permutation, PhaseWeighting, WeightScheme};
use crate::autodiff::{Tape, Var};
use crate::dsp::{Matrix, PhaseField};
use crate::error::{shape_err, Error, Result};

/// Tolerance on `|p_hat|` before a phase estimate is rejected as non-unit.
pub const UNIT_TOLERANCE: f64 = 1e-3;

/// `(cos, sin)` pairs per bin, row-major over `(t, f)`: a flat `[T*F*2]` buffer.
pub fn interleave(p: &PhaseField) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * p.cos.data().len());
    for (&c, &s) in p.cos.data().iter().zip(p.sin.data()) {
        out.push(c);
        out.push(s);
    }
    out
}

/// Per-reference bin weights. `mags[j]` is the (normalized) magnitude of reference `j`;
/// the returned `w[j]` weights the inner product against reference `j`.
pub fn phase_weights(mags: &[Matrix], scheme: &WeightScheme) -> Result<Vec<Matrix>> {
    let Some(first) = mags.first() else { return Ok(Vec::new()) };
    let shape = first.shape();
    if let Some(m) = mags.iter().find(|m| m.shape() != shape) {
        return Err(shape_err("phase_weights", format!("{:?} vs {:?}", m.shape(), shape)));
    }
    let total = mags.iter().skip(1).fold(first.clone(), |a, b| a.zip_map(b, |x, y| x + y));
    let g = scheme.gamma;
    Ok(mags
        .iter()
        .map(|m| match scheme.weighting {
            PhaseWeighting::Plain => Matrix::filled(shape.0, shape.1, 1.0),
            PhaseWeighting::Magnitude => m.map(|v| g + v),
            PhaseWeighting::InverseMagnitude => total.zip_map(m, |t, v| g + (t - v)),
            PhaseWeighting::Joint => total.clone(),
        })
        .collect())
}

/// `costs[c][j] = -sum w_j <p_hat_c, p_j> / (C T F)` with `p_hat_c` of shape `[T*F, 2]`.
pub fn phase_pairing_costs(tape: &mut Tape, phat: &[Var], ptrue: &[PhaseField], weights: &[Matrix]) -> Result<Vec<Vec<Var>>> {
    let c = phat.len();
    if ptrue.len() != c || weights.len() != c {
        return Err(shape_err("phase_loss", format!("{} estimates, {} references, {} weights", c, ptrue.len(), weights.len())));
    }
    let (t, f) = ptrue[0].shape();
    let n = t * f;
    for &p in phat {
        if tape.shape(p) != [n, 2] {
            return Err(shape_err("phase_loss", format!("estimate {:?} vs [{n}, 2]", tape.shape(p))));
        }
    }
    let mut refs = Vec::with_capacity(c);
    for (p, w) in ptrue.iter().zip(weights) {
        if p.shape() != (t, f) || w.shape() != (t, f) {
            return Err(shape_err("phase_loss", format!("reference {:?} / weight {:?} vs ({t}, {f})", p.shape(), w.shape())));
        }
        let mut data = interleave(p);
        for (pair, &wi) in data.chunks_mut(2).zip(w.data()) {
            pair[0] *= wi;
            pair[1] *= wi;
        }
        refs.push(tape.constant(alloc::vec![n, 2], data)?);
    }
    let norm = -1.0 / (c * n) as f64;
    let mut costs = Vec::with_capacity(c);
    for &p in phat {
        let mut row = Vec::with_capacity(c);
        for &r in &refs {
            let prod = tape.mul(p, r)?;
            let s = tape.sum(prod);
            row.push(tape.scale(s, norm));
        }
        costs.push(row);
    }
    Ok(costs)
}

pub(crate) fn check_unit(p: &PhaseField) -> Result<()> {
    for (bin, (&c, &s)) in p.cos.data().iter().zip(p.sin.data()).enumerate() {
        let norm = libm::sqrt(c * c + s * s);
        if !((norm - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::NonUnitPhase { bin, norm });
        }
    }
    Ok(())
}

/// Weighted phase inner-product loss under `perm`. `source_mags` are the
/// reference magnitudes already scaled by the utterance normalizer.
pub fn phase_loss(
    phat: &[PhaseField],
    ptrue: &[PhaseField],
    scheme: &WeightScheme,
    source_mags: &[Matrix],
    perm: &Permutation,
) -> Result<f64> {
    if perm.len() != phat.len() {
        return Err(shape_err("phase_loss", format!("permutation of {} for {} estimates", perm.len(), phat.len())));
    }
    phat.iter().try_for_each(check_unit)?;
    let weights = phase_weights(source_mags, scheme)?;
    let mut tape = Tape::new();
    let vars = phat
        .iter()
        .map(|p| tape.constant(alloc::vec![p.cos.data().len(), 2], interleave(p)))
        .collect::<Result<Vec<_>>>()?;
    let costs = phase_pairing_costs(&mut tape, &vars, ptrue, &weights)?;
    Ok((0..phat.len()).map(|c| tape.scalar(costs[c][perm.get(c)])).sum())
}
