//! Scale-invariant SDR and permutation-matched separation scoring.

use alloc::format;
use alloc::vec::Vec;

use crate::dsp::Waveform;
use crate::error::{shape_err, Error, Result};
use crate::losses::Permutation;

/// Score reported when the projection error is negligible.
pub const SI_SDR_CAP_DB: f64 = 100.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `10 log10(|a s|^2 / |a s - s_hat|^2)` with `a = <s_hat, s> / |s|^2`.
pub fn si_sdr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    let (e, s) = (estimate.samples(), reference.samples());
    if e.len() != s.len() {
        return Err(shape_err("si_sdr", format!("estimate {} vs reference {} samples", e.len(), s.len())));
    }
    let ss = dot(s, s);
    if ss == 0.0 {
        return Err(Error::InvalidArgument("si_sdr: reference is all zeros".into()));
    }
    let a = dot(e, s) / ss;
    let signal = a * a * ss;
    let noise: f64 = e.iter().zip(s).map(|(x, y)| (a * y - x) * (a * y - x)).sum();
    if noise < 1e-20 * signal {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * libm::log10(signal / noise)).min(SI_SDR_CAP_DB))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Indexed by reference.
    pub per_source_si_sdr: Vec<f64>,
    pub mean_si_sdr: f64,
    pub si_sdr_improvement: f64,
    /// Estimate `c` is matched to reference `chosen_perm.get(c)`.
    pub chosen_perm: Permutation,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scores `estimates` against `references` under the assignment that maximizes
/// mean SI-SDR (ties keep the lexicographically smallest), relative to using
/// the mixture as every estimate.
pub fn eval_separation(estimates: &[Waveform], references: &[Waveform], mixture: &Waveform) -> Result<EvalResult> {
    let c = references.len();
    if estimates.len() != c || c == 0 {
        return Err(shape_err("eval_separation", format!("{} estimates for {} references", estimates.len(), c)));
    }
    if c > crate::losses::MAX_SOURCES {
        return Err(Error::BruteForceLimit(c));
    }
    let mut table = alloc::vec![0.0; c * c];
    for (i, e) in estimates.iter().enumerate() {
        for (j, r) in references.iter().enumerate() {
            table[i * c + j] = si_sdr(e, r)?;
        }
    }
    let mut best: Option<(f64, Permutation)> = None;
    for p in Permutation::all(c) {
        let s: f64 = (0..c).map(|i| table[i * c + p.get(i)]).sum();
        if best.as_ref().map_or(true, |(b, _)| s > *b) {
            best = Some((s, p));
        }
    }
    let (_, perm) = best.expect("at least one permutation");
    let mut per_source = alloc::vec![0.0; c];
    for i in 0..c {
        per_source[perm.get(i)] = table[i * c + perm.get(i)];
    }
    let baseline = references.iter().map(|r| si_sdr(mixture, r)).collect::<Result<Vec<_>>>()?;
    let mean_si_sdr = mean(&per_source);
    Ok(EvalResult { si_sdr_improvement: mean_si_sdr - mean(&baseline), mean_si_sdr, per_source_si_sdr: per_source, chosen_perm: perm })
}
