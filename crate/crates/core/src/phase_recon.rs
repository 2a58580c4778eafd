//! Multiple-input spectrogram inversion: joint phase retrieval for all sources
//! from magnitude estimates and the mixture waveform.

use alloc::format;
use alloc::vec::Vec;

use crate::dsp::{istft, phase_field, stft, ComplexSpectrogram, Matrix, PhaseField, StftConfig, Waveform};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisiConfig {
    pub iterations: usize,
    pub stft: StftConfig,
}

/// Reconstructed sources plus the mixture-consistency error
/// `||x - sum_c istft(|S_c| e^{j phi_c})||` before each phase update and after
/// the last (`iterations + 1` values).
#[derive(Debug, Clone)]
pub struct MisiOutput {
    pub sources: Vec<Waveform>,
    pub consistency: Vec<f64>,
}

/// Runs MISI from the mixture phase.
pub fn misi(mags: &[Matrix], mixture: &Waveform, cfg: &MisiConfig) -> Result<Vec<Waveform>> {
    Ok(misi_traced(mags, mixture, cfg, None)?.sources)
}

/// MISI with optional initial phases (default: the mixture phase for every source).
pub fn misi_traced(mags: &[Matrix], mixture: &Waveform, cfg: &MisiConfig, init: Option<&[PhaseField]>) -> Result<MisiOutput> {
    let c = mags.len();
    if c == 0 {
        return Err(Error::InvalidArgument("misi needs at least one magnitude".into()));
    }
    let x = stft(mixture, &cfg.stft)?;
    let shape = x.re.shape();
    if let Some(m) = mags.iter().find(|m| m.shape() != shape) {
        return Err(shape_err("misi", format!("magnitude {:?} vs mixture {:?}", m.shape(), shape)));
    }
    let mut phases: Vec<PhaseField> = match init {
        Some(p) if p.len() != c || p.iter().any(|q| q.shape() != shape) => {
            return Err(shape_err("misi", format!("{} initial phases for {} sources", p.len(), c)));
        }
        Some(p) => p.to_vec(),
        None => alloc::vec![phase_field(&x, None); c],
    };
    let len = mixture.len();
    let sr = mixture.sample_rate_hz();
    let mut consistency = Vec::with_capacity(cfg.iterations + 1);
    let step = |phases: &[PhaseField], consistency: &mut Vec<f64>| -> Result<Vec<Vec<f64>>> {
        let mut est = phases
            .iter()
            .zip(mags)
            .map(|(p, m)| Ok(istft(&ComplexSpectrogram::from_polar(m, p, cfg.stft, sr)?, &cfg.stft, len)?.into_samples()))
            .collect::<Result<Vec<_>>>()?;
        let mut err = mixture.samples().to_vec();
        for s in &est {
            err.iter_mut().zip(s).for_each(|(e, v)| *e -= v);
        }
        consistency.push(libm::sqrt(err.iter().map(|e| e * e).sum()));
        let share = 1.0 / c as f64;
        for s in &mut est {
            s.iter_mut().zip(&err).for_each(|(v, e)| *v += e * share);
        }
        Ok(est)
    };
    for _ in 0..cfg.iterations {
        let est = step(&phases, &mut consistency)?;
        for (p, s) in phases.iter_mut().zip(est) {
            let spec = stft(&Waveform::new(s, sr)?, &cfg.stft)?;
            *p = phase_field(&spec, Some(p));
        }
    }
    let est = step(&phases, &mut consistency)?;
    let sources = est.into_iter().map(|s| Waveform::new(s, sr)).collect::<Result<Vec<_>>>()?;
    Ok(MisiOutput { sources, consistency })
}
