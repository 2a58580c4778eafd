use alloc::format;
use alloc::vec::Vec;

use super::{MiVariant, Permutation};
use crate::autodiff::{Tape, Var};
use crate::dsp::{magnitude, ComplexSpectrogram, Matrix};
use crate::error::{shape_err, Result};

/// Per-reference approximation targets, each `T x F`.
///
/// `Msa` uses `|S_j|`; `Tpsa` uses `|S_j| cos(theta_X - theta_j)` clamped to `[0, |X|]`,
/// computed as `Re(S_j conj(X)) / |X|` (zero where `|X| = 0`).
pub fn mi_targets(mixture: &ComplexSpectrogram, sources: &[ComplexSpectrogram], variant: MiVariant) -> Result<Vec<Matrix>> {
    let shape = mixture.re.shape();
    for (j, s) in sources.iter().enumerate() {
        if s.re.shape() != shape {
            return Err(shape_err("mi_targets", format!("source {j} {:?} vs mixture {:?}", s.re.shape(), shape)));
        }
    }
    let mix_mag = magnitude(mixture);
    Ok(sources
        .iter()
        .map(|s| match variant {
            MiVariant::Msa => magnitude(s),
            MiVariant::Tpsa => {
                let mut t = Matrix::zeros(shape.0, shape.1);
                for (i, out) in t.data_mut().iter_mut().enumerate() {
                    let m = mix_mag.data()[i];
                    if m > 0.0 {
                        let proj = (s.re.data()[i] * mixture.re.data()[i] + s.im.data()[i] * mixture.im.data()[i]) / m;
                        *out = proj.clamp(0.0, m);
                    }
                }
                t
            }
        })
        .collect())
}

/// `costs[c][j] = sum |M_c * |X| - target_j| / (C T F)`.
pub fn mi_pairing_costs(tape: &mut Tape, masks: &[Var], mix_mag: &Matrix, targets: &[Matrix]) -> Result<Vec<Vec<Var>>> {
    let c = masks.len();
    if targets.len() != c {
        return Err(shape_err("mi_loss", format!("{} masks vs {} targets", c, targets.len())));
    }
    let n = mix_mag.rows() * mix_mag.cols();
    let norm = 1.0 / (c * n) as f64;
    let mut est = Vec::with_capacity(c);
    for &m in masks {
        let shape = tape.shape(m).to_vec();
        if shape.iter().product::<usize>() != n {
            return Err(shape_err("mi_loss", format!("mask {:?} vs magnitude {:?}", shape, mix_mag.shape())));
        }
        let xm = tape.constant(shape, mix_mag.data().to_vec())?;
        est.push(tape.mul(m, xm)?);
    }
    let mut tgt = Vec::with_capacity(c);
    for (j, t) in targets.iter().enumerate() {
        if t.shape() != mix_mag.shape() {
            return Err(shape_err("mi_loss", format!("target {j} {:?} vs {:?}", t.shape(), mix_mag.shape())));
        }
        let shape = tape.shape(est[0]).to_vec();
        tgt.push(tape.constant(shape, t.data().to_vec())?);
    }
    let mut costs = Vec::with_capacity(c);
    for &e in &est {
        let mut row = Vec::with_capacity(c);
        for &t in &tgt {
            let d = tape.sub(e, t)?;
            let d = tape.abs(d);
            let s = tape.sum(d);
            row.push(tape.scale(s, norm));
        }
        costs.push(row);
    }
    Ok(costs)
}

/// Mask-inference loss under a fixed assignment `perm`.
pub fn mi_loss(
    masks: &[Matrix],
    mixture: &ComplexSpectrogram,
    sources: &[ComplexSpectrogram],
    variant: MiVariant,
    perm: &Permutation,
) -> Result<f64> {
    if perm.len() != masks.len() {
        return Err(shape_err("mi_loss", format!("permutation of {} for {} masks", perm.len(), masks.len())));
    }
    let targets = mi_targets(mixture, sources, variant)?;
    let mut tape = Tape::new();
    let vars = masks
        .iter()
        .map(|m| tape.constant(alloc::vec![m.rows(), m.cols()], m.data().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let costs = mi_pairing_costs(&mut tape, &vars, &magnitude(mixture), &targets)?;
    Ok((0..masks.len()).map(|c| tape.scalar(costs[c][perm.get(c)])).sum())
}
