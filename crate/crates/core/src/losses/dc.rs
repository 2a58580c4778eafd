use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{gemm, Tape, Var};
use crate::dsp::Matrix;
use crate::error::{shape_err, Result};
use crate::targets::{LabelMatrix, VaWeights};

/// Deep-clustering affinity loss `||W^1/2 (V V^T - Y Y^T) W^1/2||_F^2 / (sum w)^2`,
/// evaluated through `D x D`, `D x C` and `C x C` Gram matrices so the
/// `(TF)^2` affinity matrix is never formed. `weights = None` means all ones.
pub fn dc_loss_var(tape: &mut Tape, v: Var, labels: &LabelMatrix, weights: Option<&[f64]>) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let n = labels.values.rows();
    if shape.len() != 2 || shape[0] != n {
        return Err(shape_err("dc_loss", format!("embeddings {:?} vs {} labelled bins", shape, n)));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(shape_err("dc_loss", format!("{} weights for {} bins", w.len(), n)));
        }
    }
    let c = labels.sources();
    let sqrt_w: Vec<f64> = match weights {
        Some(w) => w.iter().map(|&x| libm::sqrt(x.max(0.0))).collect(),
        None => alloc::vec![1.0; n],
    };
    let total_w: f64 = match weights {
        Some(w) => w.iter().sum(),
        None => n as f64,
    };
    if total_w <= 0.0 {
        return Ok(tape.constant_scalar(0.0));
    }
    let mut yw = labels.values.data().to_vec();
    for (row, &s) in yw.chunks_mut(c).zip(&sqrt_w) {
        row.iter_mut().for_each(|y| *y *= s);
    }
    let mut yy = alloc::vec![0.0; c * c];
    gemm(c, n, c, &yw, true, &yw, false, &mut yy, false);
    let yy_sq: f64 = yy.iter().map(|x| x * x).sum();

    let vw = if weights.is_some() {
        let s = tape.constant(alloc::vec![n], sqrt_w)?;
        tape.mul_col(v, s)?
    } else {
        v
    };
    let vt = tape.transpose(vw)?;
    let vv = tape.matmul(vt, vw)?;
    let yconst = tape.constant(alloc::vec![n, c], yw)?;
    let vy = tape.matmul(vt, yconst)?;
    let vv_sq = tape.square(vv);
    let vv_sq = tape.sum(vv_sq);
    let vy_sq = tape.square(vy);
    let vy_sq = tape.sum(vy_sq);
    let vy_sq = tape.scale(vy_sq, -2.0);
    let s = tape.add(vv_sq, vy_sq)?;
    let s = tape.add_scalar(s, yy_sq);
    Ok(tape.scale(s, 1.0 / (total_w * total_w)))
}

/// Value form of [`dc_loss_var`] for `V` given as a `(T*F) x D` matrix.
pub fn dc_loss(v: &Matrix, labels: &LabelMatrix, weights: Option<&VaWeights>) -> Result<f64> {
    let mut tape = Tape::new();
    let var = tape.constant(alloc::vec![v.rows(), v.cols()], v.data().to_vec())?;
    let l = dc_loss_var(&mut tape, var, labels, weights.map(|w| w.values.data()))?;
    Ok(tape.scalar(l))
}
