//! Fused single-direction LSTM with backpropagation through time.
//!
//! Gate layout along the `4H` axis is `[input, forget, cell, output]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm::gemm;
use super::tape::{sigmoid_scalar, Tape, Var};
use crate::error::{shape_err, Result};

/// Tape handles for one direction's parameters: `w_ih [in, 4H]`, `w_hh [H, 4H]`, `bias [4H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

pub(super) struct LstmSaved {
    pub x: Var,
    pub weights: LstmWeights,
    pub reverse: bool,
    pub hidden: usize,
    pub input: usize,
    /// Post-activation gates, `[T, 4H]`.
    pub gates: Vec<f64>,
    pub cells: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

pub(super) struct LstmForward {
    pub h: Vec<f64>,
    pub gates: Vec<f64>,
    pub cells: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

pub(super) struct LstmBackward {
    pub dx: Vec<f64>,
    pub dw_ih: Vec<f64>,
    pub dw_hh: Vec<f64>,
    pub db: Vec<f64>,
}

/// Returns the hidden size implied by the weights.
pub(super) fn check_shapes(tape: &Tape, w: LstmWeights, input: usize) -> Result<usize> {
    let (sih, shh, sb) = (tape.shape(w.w_ih), tape.shape(w.w_hh), tape.shape(w.bias));
    let ok = sih.len() == 2
        && shh.len() == 2
        && sih[0] == input
        && sih[1] % 4 == 0
        && shh[0] * 4 == sih[1]
        && shh[1] == sih[1]
        && sb.iter().product::<usize>() == sih[1];
    if !ok {
        return Err(shape_err(
            "lstm",
            format!("input width {input}, w_ih {:?}, w_hh {:?}, bias {:?}", sih, shh, sb),
        ));
    }
    Ok(shh[0])
}

fn order(t: usize, reverse: bool) -> impl Iterator<Item = usize> {
    let steps = 0..t;
    steps.map(move |s| if reverse { t - 1 - s } else { s })
}

#[allow(clippy::too_many_arguments)]
pub(super) fn forward(
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    bias: &[f64],
    t: usize,
    input: usize,
    hidden: usize,
    reverse: bool,
) -> LstmForward {
    let g4 = 4 * hidden;
    let mut z = vec![0.0; t * g4];
    for row in z.chunks_mut(g4) {
        row.copy_from_slice(bias);
    }
    gemm(t, input, g4, x, false, w_ih, false, &mut z, true);
    let mut h = vec![0.0; t * hidden];
    let mut cells = vec![0.0; t * hidden];
    let mut tanh_c = vec![0.0; t * hidden];
    let mut h_prev = vec![0.0; hidden];
    let mut c_prev = vec![0.0; hidden];
    for step in order(t, reverse) {
        let zr = &mut z[step * g4..(step + 1) * g4];
        for (k, &hk) in h_prev.iter().enumerate() {
            if hk != 0.0 {
                let w = &w_hh[k * g4..(k + 1) * g4];
                zr.iter_mut().zip(w).for_each(|(a, b)| *a += hk * b);
            }
        }
        for j in 0..hidden {
            let i = sigmoid_scalar(zr[j]);
            let f = sigmoid_scalar(zr[hidden + j]);
            let g = libm::tanh(zr[2 * hidden + j]);
            let o = sigmoid_scalar(zr[3 * hidden + j]);
            zr[j] = i;
            zr[hidden + j] = f;
            zr[2 * hidden + j] = g;
            zr[3 * hidden + j] = o;
            let c = f * c_prev[j] + i * g;
            let tc = libm::tanh(c);
            cells[step * hidden + j] = c;
            tanh_c[step * hidden + j] = tc;
            h[step * hidden + j] = o * tc;
        }
        h_prev.copy_from_slice(&h[step * hidden..(step + 1) * hidden]);
        c_prev.copy_from_slice(&cells[step * hidden..(step + 1) * hidden]);
    }
    LstmForward { h, gates: z, cells, tanh_c }
}

pub(super) fn backward(
    saved: &LstmSaved,
    grad_h: &[f64],
    h: &[f64],
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
) -> LstmBackward {
    let hd = saved.hidden;
    let g4 = 4 * hd;
    let t = grad_h.len() / hd.max(1);
    let mut dz = vec![0.0; t * g4];
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    // h_prev for each step, zero for the first step in processing order.
    let mut h_prev_all = vec![0.0; t * hd];
    let steps: Vec<usize> = order(t, saved.reverse).collect();
    for w in steps.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        h_prev_all[cur * hd..(cur + 1) * hd].copy_from_slice(&h[prev * hd..(prev + 1) * hd]);
    }
    for (pos, &step) in steps.iter().enumerate().rev() {
        let gates = &saved.gates[step * g4..(step + 1) * g4];
        let prev = if pos > 0 { Some(steps[pos - 1]) } else { None };
        let dzr = &mut dz[step * g4..(step + 1) * g4];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            let tc = saved.tanh_c[step * hd + j];
            let dh = grad_h[step * hd + j] + dh_next[j];
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            let c_prev = prev.map_or(0.0, |p| saved.cells[p * hd + j]);
            dzr[j] = dc * g * i * (1.0 - i);
            dzr[hd + j] = dc * c_prev * f * (1.0 - f);
            dzr[2 * hd + j] = dc * i * (1.0 - g * g);
            dzr[3 * hd + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        for (k, d) in dh_next.iter_mut().enumerate() {
            let w = &w_hh[k * g4..(k + 1) * g4];
            *d = w.iter().zip(dzr.iter()).map(|(a, b)| a * b).sum();
        }
    }
    let input = saved.input;
    let mut dw_hh = vec![0.0; hd * g4];
    gemm(hd, t, g4, &h_prev_all, true, &dz, false, &mut dw_hh, false);
    let mut dw_ih = vec![0.0; input * g4];
    gemm(input, t, g4, x, true, &dz, false, &mut dw_ih, false);
    let mut dx = vec![0.0; t * input];
    gemm(t, g4, input, &dz, false, w_ih, true, &mut dx, false);
    let mut db = vec![0.0; g4];
    for row in dz.chunks(g4) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    LstmBackward { dx, dw_ih, dw_hh, db }
}
